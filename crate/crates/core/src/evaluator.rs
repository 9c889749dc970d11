//! Ranking metrics per scenario slice, category-proportion deltas and
//! distance distributions of top-1 predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{rank_of, top_k, ScenarioTables};
use crate::ingest::{Catalog, Trajectory};
use crate::model::{GraphSet, Model};
use crate::scenario::{haversine_km, ScenarioLabel, Slice, UserType};

pub const CUTOFFS: [usize; 4] = [1, 5, 10, 20];
/// Upper edges of the finite distance bins in km; the last bin is open.
pub const DISTANCE_EDGES_KM: [f64; 6] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0];

/// Outcome of ranking all candidates for one test trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub trajectory_id: usize,
    pub label: ScenarioLabel,
    pub target: usize,
    /// 1-based rank of the target among all POIs.
    pub rank: usize,
    pub top1: usize,
    /// Last input check-in, the origin for distance statistics.
    pub origin: (f64, f64),
}

/// Ranks every candidate POI for each trajectory with its own scenario's tables.
pub fn predict(
    tables: &[ScenarioTables],
    trajectories: &[Trajectory],
    labels: &[ScenarioLabel],
) -> Result<Vec<Prediction>> {
    if trajectories.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} trajectories but {} labels",
            trajectories.len(),
            labels.len()
        )));
    }
    trajectories
        .iter()
        .zip(labels)
        .map(|(t, l)| {
            let tab = &tables[l.composite().id()];
            let scores = tab.score_candidates(t)?;
            let last = t.last_input();
            Ok(Prediction {
                trajectory_id: t.id,
                label: *l,
                target: t.target().poi_id,
                rank: rank_of(scores.view(), t.target().poi_id),
                top1: top_k(scores.view(), 1)[0],
                origin: (last.lat, last.lon),
            })
        })
        .collect()
}

pub fn predict_model(
    model: &Model,
    graphs: &GraphSet,
    trajectories: &[Trajectory],
    labels: &[ScenarioLabel],
) -> Result<Vec<Prediction>> {
    let tables = model.all_scenario_tables(graphs)?;
    predict(&tables, trajectories, labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub acc20: f64,
    pub mrr: f64,
    pub count: usize,
}

impl Metrics {
    pub fn acc(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.acc1),
            5 => Some(self.acc5),
            10 => Some(self.acc10),
            20 => Some(self.acc20),
            _ => None,
        }
    }
}

/// Acc@{1,5,10,20} and MRR from 1-based target ranks; `None` when empty.
pub fn acc_mrr(ranks: &[usize]) -> Option<Metrics> {
    if ranks.is_empty() {
        return None;
    }
    let n = ranks.len() as f64;
    let hit = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let m = Metrics {
        acc1: hit(1),
        acc5: hit(5),
        acc10: hit(10),
        acc20: hit(20),
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        count: ranks.len(),
    };
    debug_assert!(m.acc1 <= m.acc5 && m.acc5 <= m.acc10 && m.acc10 <= m.acc20);
    Some(m)
}

/// Metrics keyed by slice name, in [`Slice::all`] order; empty slices are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub slices: Vec<(String, Option<Metrics>)>,
}

impl MetricsReport {
    pub fn get(&self, slice: &str) -> Option<&Metrics> {
        self.slices
            .iter()
            .find(|(name, _)| name == slice)
            .and_then(|(_, m)| m.as_ref())
    }

    pub fn overall(&self) -> Option<&Metrics> {
        self.get("overall")
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, &Option<Metrics>> =
            self.slices.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let mut s = serde_json::to_string_pretty(&map).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,count,acc@1,acc@5,acc@10,acc@20,mrr\n");
        for (name, m) in &self.slices {
            match m {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{name},{},{},{},{},{},{}",
                        m.count, m.acc1, m.acc5, m.acc10, m.acc20, m.mrr
                    );
                }
                None => {
                    let _ = writeln!(out, "{name},0,,,,,");
                }
            }
        }
        out
    }
}

pub fn slice_report(predictions: &[Prediction]) -> MetricsReport {
    let slices = Slice::all()
        .into_iter()
        .map(|slice| {
            let ranks: Vec<usize> = predictions
                .iter()
                .filter(|p| slice.contains(&p.label))
                .map(|p| p.rank)
                .collect();
            (slice.name(), acc_mrr(&ranks))
        })
        .collect();
    MetricsReport { slices }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: String,
    pub predicted: f64,
    pub truth: f64,
    pub delta: f64,
}

/// Predicted minus true category proportions of top-1 predictions, per
/// user-type slice. Slices without trajectories are omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryDelta {
    pub slices: Vec<(String, Vec<CategoryShare>)>,
}

impl CategoryDelta {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,category,predicted,truth,delta\n");
        for (slice, shares) in &self.slices {
            for s in shares {
                let _ = writeln!(
                    out,
                    "{slice},{},{},{},{}",
                    csv_field(&s.category),
                    s.predicted,
                    s.truth,
                    s.delta
                );
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `None` when the catalog carries no categories.
pub fn category_delta(predictions: &[Prediction], catalog: &Catalog) -> Option<CategoryDelta> {
    if !catalog.has_categories() {
        return None;
    }
    let mut slices = Vec::new();
    for (name, ut) in [("local", UserType::Local), ("tourist", UserType::Tourist)] {
        let subset: Vec<&Prediction> = predictions.iter().filter(|p| p.label.user_type == ut).collect();
        if subset.is_empty() {
            continue;
        }
        let n = subset.len() as f64;
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for p in &subset {
            counts.entry(&catalog.pois[p.top1].category).or_default().0 += 1;
            counts.entry(&catalog.pois[p.target].category).or_default().1 += 1;
        }
        let shares = counts
            .into_iter()
            .map(|(c, (pred, truth))| {
                let predicted = pred as f64 / n;
                let truth = truth as f64 / n;
                CategoryShare {
                    category: c.to_string(),
                    predicted,
                    truth,
                    delta: predicted - truth,
                }
            })
            .collect();
        slices.push((name.to_string(), shares));
    }
    Some(CategoryDelta { slices })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSeries {
    pub slice: String,
    pub count: usize,
    pub predicted: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Distance from the last input check-in to the top-1 prediction and to the
/// true next POI, binned by [`DISTANCE_EDGES_KM`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub edges_km: Vec<f64>,
    pub series: Vec<HistogramSeries>,
}

impl DistanceHistogram {
    pub fn bin_labels(&self) -> Vec<String> {
        let e = &self.edges_km;
        let mut labels: Vec<String> = e.windows(2).map(|w| format!("{}-{}", w[0], w[1])).collect();
        labels.push(format!("{}+", e[e.len() - 1]));
        labels
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,bin_km,predicted,truth\n");
        let labels = self.bin_labels();
        for s in &self.series {
            for (b, label) in labels.iter().enumerate() {
                let _ = writeln!(out, "{},{label},{},{}", s.slice, s.predicted[b], s.truth[b]);
            }
        }
        out
    }
}

pub fn distance_bin(km: f64, edges: &[f64]) -> usize {
    edges.iter().rposition(|&e| km >= e).unwrap_or(0)
}

pub fn distance_hist(predictions: &[Prediction], catalog: &Catalog) -> DistanceHistogram {
    let edges = DISTANCE_EDGES_KM.to_vec();
    let bins = edges.len();
    let slices = [Slice::Overall]
        .into_iter()
        .chain(Slice::all().into_iter().filter(|s| matches!(s, Slice::UserType(_) | Slice::Spatial(_) | Slice::Temporal(_))));
    let mut series = Vec::new();
    for slice in slices {
        let subset: Vec<&Prediction> = predictions.iter().filter(|p| slice.contains(&p.label)).collect();
        if subset.is_empty() {
            continue;
        }
        let mut predicted = vec![0.0; bins];
        let mut truth = vec![0.0; bins];
        let w = 1.0 / subset.len() as f64;
        for p in &subset {
            let at = |poi: usize| (catalog.pois[poi].lat, catalog.pois[poi].lon);
            predicted[distance_bin(haversine_km(p.origin, at(p.top1)), &edges)] += w;
            truth[distance_bin(haversine_km(p.origin, at(p.target)), &edges)] += w;
        }
        series.push(HistogramSeries {
            slice: slice.name(),
            count: subset.len(),
            predicted,
            truth,
        });
    }
    DistanceHistogram {
        edges_km: edges,
        series,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PoiRecord;
    use crate::scenario::CompositeScenario;

    fn pred(rank: usize, scenario: usize) -> Prediction {
        Prediction {
            trajectory_id: 0,
            label: CompositeScenario::new(scenario).unwrap().label(),
            target: 0,
            rank,
            top1: 0,
            origin: (0.0, 0.0),
        }
    }

    #[test]
    fn rank_three_example() {
        let m = acc_mrr(&[3]).unwrap();
        assert_eq!((m.acc1, m.acc5, m.acc10, m.acc20), (0.0, 1.0, 1.0, 1.0));
        assert!((m.mrr - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking() {
        let m = acc_mrr(&[1, 1, 1]).unwrap();
        assert_eq!((m.acc1, m.acc20, m.mrr), (1.0, 1.0, 1.0));
        assert!(acc_mrr(&[]).is_none());
    }

    #[test]
    fn empty_slice_is_absent() {
        let report = slice_report(&[pred(1, 0), pred(4, 1)]);
        assert!(report.get("tourist").is_none());
        assert_eq!(report.get("local").unwrap().count, 2);
        assert_eq!(report.overall().unwrap().acc1, 0.5);
        assert!(report.to_csv().contains("tourist,0,,,,,"));
    }

    #[test]
    fn weighted_slices_recover_overall() {
        let preds = vec![pred(1, 0), pred(2, 0), pred(30, 4)];
        let r = slice_report(&preds);
        let (l, t) = (r.get("local").unwrap(), r.get("tourist").unwrap());
        let combined = (l.acc1 * l.count as f64 + t.acc1 * t.count as f64) / 3.0;
        assert!((combined - r.overall().unwrap().acc1).abs() < 1e-15);
    }

    fn catalog() -> Catalog {
        let poi = |cat: &str, lat: f64| PoiRecord {
            external_id: cat.into(),
            lat,
            lon: 0.0,
            category: cat.into(),
        };
        Catalog {
            users: vec![],
            pois: vec![poi("cafe", 0.0), poi("bar", 0.1), poi("park", 0.3)],
            time_slots: 48,
        }
    }

    #[test]
    fn identical_predictions_have_zero_delta() {
        let mut preds = vec![pred(1, 0), pred(1, 4)];
        preds[1].target = 2;
        preds[1].top1 = 2;
        let d = category_delta(&preds, &catalog()).unwrap();
        assert!(d.slices.iter().flat_map(|(_, s)| s).all(|s| s.delta == 0.0));
        let h = distance_hist(&preds, &catalog());
        assert!(h.series.iter().all(|s| s.predicted == s.truth));
    }

    #[test]
    fn single_category_prediction() {
        let mut preds: Vec<Prediction> = (0..4).map(|_| pred(2, 0)).collect();
        for (i, p) in preds.iter_mut().enumerate() {
            p.target = i % 3;
            p.top1 = 1;
        }
        let d = category_delta(&preds, &catalog()).unwrap();
        let (_, shares) = &d.slices[0];
        let bar = shares.iter().find(|s| s.category == "bar").unwrap();
        assert!((bar.delta - (1.0 - bar.truth)).abs() < 1e-15);
        assert!(shares.iter().map(|s| s.delta).sum::<f64>().abs() < 1e-12);
        assert!((shares.iter().map(|s| s.predicted).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_categories_skips_delta() {
        let mut c = catalog();
        for p in &mut c.pois {
            p.category.clear();
        }
        assert!(category_delta(&[pred(1, 0)], &c).is_none());
    }

    #[test]
    fn distance_bins() {
        let e = DISTANCE_EDGES_KM;
        assert_eq!(distance_bin(0.0, &e), 0);
        assert_eq!(distance_bin(4.99, &e), 0);
        assert_eq!(distance_bin(5.0, &e), 1);
        assert_eq!(distance_bin(300.0, &e), 5);
        // 0.3 degrees of latitude is about 33 km
        let mut p = pred(1, 0);
        p.top1 = 2;
        let h = distance_hist(&[p], &catalog());
        assert_eq!(h.series[0].predicted[5], 1.0);
        assert_eq!(h.series[0].truth[0], 1.0);
        assert_eq!(h.bin_labels()[5], "25+");
    }
}
