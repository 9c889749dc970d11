//! Synthetic check-in corpora with known structure, rendered in the raw
//! Foursquare/Gowalla text formats so they exercise the real ingest path.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use chrono::DateTime;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::PreparedData;
use crate::error::{Error, Result};
use crate::ingest::{parse_checkins_from_reader, Catalog, CheckIn, DatasetFormat, IngestOptions};
use crate::model::{GraphSet, Model};
use crate::scenario::{CityCenter, CityCenterSet};

/// Monday 2012-04-02 00:00 UTC.
pub const EPOCH_MONDAY: i64 = 1_333_324_800;
pub const CENTER: (f64, f64) = (40.7128, -74.0060);
/// Local time offset of every synthetic check-in (UTC−4).
pub const TZ_OFFSET_MIN: i32 = -240;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPoi {
    pub venue: String,
    pub category: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCheckin {
    pub user: String,
    pub poi: usize,
    /// UTC seconds.
    pub timestamp: i64,
}

/// A generated log; `checkins` are in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub pois: Vec<SyntheticPoi>,
    pub checkins: Vec<SyntheticCheckin>,
}

impl SyntheticCorpus {
    pub fn centers() -> CityCenterSet {
        CityCenterSet::new(vec![CityCenter {
            name: "center".into(),
            lat: CENTER.0,
            lon: CENTER.1,
        }])
        .expect("valid center")
    }

    pub fn to_foursquare_tsv(&self) -> String {
        let mut out = String::new();
        for c in &self.checkins {
            let p = &self.pois[c.poi];
            let t = DateTime::from_timestamp(c.timestamp, 0).expect("timestamp in range");
            let _ = writeln!(
                out,
                "{}\t{}\tcat-{}\t{}\t{}\t{}\t{}\t{}",
                c.user,
                p.venue,
                p.category.to_lowercase(),
                p.category,
                p.lat,
                p.lon,
                TZ_OFFSET_MIN,
                t.format("%a %b %d %H:%M:%S +0000 %Y")
            );
        }
        out
    }

    pub fn to_gowalla_tsv(&self) -> String {
        let mut out = String::new();
        for c in &self.checkins {
            let p = &self.pois[c.poi];
            let t = DateTime::from_timestamp(c.timestamp, 0).expect("timestamp in range");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                c.user,
                t.format("%Y-%m-%dT%H:%M:%SZ"),
                p.lat,
                p.lon,
                p.venue
            );
        }
        out
    }

    pub fn write_foursquare(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_foursquare_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the corpus through the Foursquare reader.
    pub fn parse(&self) -> Result<(Vec<CheckIn>, Catalog)> {
        let text = self.to_foursquare_tsv();
        parse_checkins_from_reader(
            Cursor::new(text),
            Path::new("<synthetic>"),
            &IngestOptions::new(DatasetFormat::Foursquare),
        )
    }

    pub fn prepare(&self, cfg: &TrainConfig) -> Result<PreparedData> {
        let (checkins, catalog) = self.parse()?;
        PreparedData::from_checkins(&checkins, catalog, &Self::centers(), cfg)
    }

    /// Catalog index of every generated POI that was visited.
    pub fn catalog_index(&self, catalog: &Catalog, poi: usize) -> Option<usize> {
        catalog
            .pois
            .iter()
            .position(|p| p.external_id == self.pois[poi].venue)
    }
}

/// UTC seconds of local hour `hour` on day `day` after [`EPOCH_MONDAY`].
pub fn local_time(day: i64, hour: i64) -> i64 {
    EPOCH_MONDAY + day * 86_400 + hour * 3_600 - i64::from(TZ_OFFSET_MIN) * 60
}

fn is_weekend(day: i64) -> bool {
    day.rem_euclid(7) >= 5
}

/// First day at or after `from` of the requested kind.
fn next_day(from: i64, weekend: bool) -> i64 {
    (from..).find(|&d| is_weekend(d) == weekend).expect("some day matches")
}

const CATEGORIES: [&str; 6] = ["Cafe", "Office", "Park", "Bar", "Gym", "Museum"];

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioCorpusParams {
    pub users: usize,
    pub pois: usize,
    pub trajectories_per_user: usize,
    pub hotels: usize,
    /// Candidate successors per (user type, day type, last POI).
    pub successors: usize,
    /// Probability that a target ignores the planted pattern.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ScenarioCorpusParams {
    fn default() -> Self {
        ScenarioCorpusParams {
            users: 500,
            pois: 300,
            trajectories_per_user: 20,
            hotels: 10,
            successors: 2,
            noise: 0.1,
            seed: 7,
        }
    }
}

fn place(rng: &mut ChaCha8Rng, downtown: bool) -> (f64, f64) {
    if downtown {
        // within roughly 5 km of the center
        (
            CENTER.0 + rng.gen_range(-0.03..0.03),
            CENTER.1 + rng.gen_range(-0.04..0.04),
        )
    } else {
        // a ring roughly 20–40 km out
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        (
            CENTER.0 + sign * rng.gen_range(0.2..0.35),
            CENTER.1 + rng.gen_range(-0.3..0.3),
        )
    }
}

/// Corpus covering all eight scenarios. Half of the users are tourists who
/// start half their days at a hotel; half the POIs are downtown. The target
/// of each three-check-in day is one of a few successors of the last input
/// POI, drawn from a table that depends on the user type and on whether the
/// day is a weekend.
pub fn scenario_corpus(params: &ScenarioCorpusParams) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.pois;
    let stride = (n / params.hotels.max(1)).max(1);
    let pois: Vec<SyntheticPoi> = (0..n)
        .map(|p| {
            let (lat, lon) = place(&mut rng, p < n / 2);
            let hotel = params.hotels > 0 && p % stride == 0 && p / stride < params.hotels;
            SyntheticPoi {
                venue: format!("v{p:04}"),
                category: if hotel { "Hotel".into() } else { CATEGORIES[p % CATEGORIES.len()].into() },
                lat,
                lon,
            }
        })
        .collect();
    let hotels: Vec<usize> = (0..n).filter(|&p| pois[p].category == "Hotel").collect();
    let regular: Vec<usize> = (0..n).filter(|&p| pois[p].category != "Hotel").collect();

    // successor[user_type][weekend][poi]
    let successors: Vec<Vec<Vec<Vec<usize>>>> = (0..2)
        .map(|_| {
            (0..2)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            regular
                                .choose_multiple(&mut rng, params.successors)
                                .copied()
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut checkins = Vec::new();
    for u in 0..params.users {
        let tourist = u >= params.users / 2;
        let user = format!("u{u:04}");
        let mut day = rng.gen_range(0..3);
        for _ in 0..params.trajectories_per_user {
            let weekend = rng.gen_bool(0.5);
            day = next_day(day, weekend);
            let first = if tourist && !hotels.is_empty() && rng.gen_bool(0.5) {
                *hotels.choose(&mut rng).expect("hotels")
            } else {
                *regular.choose(&mut rng).expect("regular POIs")
            };
            let last = *regular.choose(&mut rng).expect("regular POIs");
            let target = if rng.gen_bool(params.noise) {
                *regular.choose(&mut rng).expect("regular POIs")
            } else {
                *successors[usize::from(tourist)][usize::from(weekend)][last]
                    .choose(&mut rng)
                    .expect("successors")
            };
            for (hour, poi) in [(10, first), (13, last), (16, target)] {
                checkins.push(SyntheticCheckin {
                    user: user.clone(),
                    poi,
                    timestamp: local_time(day, hour),
                });
            }
            day += 1;
        }
    }
    SyntheticCorpus { pois, checkins }
}

/// Users visiting uniformly random POIs; no learnable structure.
pub fn random_corpus(users: usize, pois: usize, days_per_user: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pois: Vec<SyntheticPoi> = (0..pois)
        .map(|p| {
            let (lat, lon) = place(&mut rng, p % 2 == 0);
            SyntheticPoi {
                venue: format!("r{p:05}"),
                category: CATEGORIES[p % CATEGORIES.len()].into(),
                lat,
                lon,
            }
        })
        .collect();
    let mut checkins = Vec::new();
    for u in 0..users {
        for d in 0..days_per_user as i64 {
            for hour in [9, 12, 15] {
                checkins.push(SyntheticCheckin {
                    user: format!("u{u:04}"),
                    poi: rng.gen_range(0..pois.len()),
                    timestamp: local_time(d, hour),
                });
            }
        }
    }
    SyntheticCorpus { pois, checkins }
}

/// One local user and two downtown POIs `x`, `y`. On Mondays and Tuesdays
/// the user goes `x → x`; on weekends `x → y`. The two composite scenarios
/// (workday and weekend, both local/downtown) therefore ask for opposite
/// rankings of the same two candidates.
pub fn opposing_corpus(weeks: usize) -> SyntheticCorpus {
    let pois = vec![
        SyntheticPoi {
            venue: "x".into(),
            category: "Cafe".into(),
            lat: CENTER.0,
            lon: CENTER.1,
        },
        SyntheticPoi {
            venue: "y".into(),
            category: "Bar".into(),
            lat: CENTER.0 + 0.001,
            lon: CENTER.1,
        },
    ];
    let mut checkins = Vec::new();
    for w in 0..weeks as i64 {
        for (dow, target) in [(0, 0), (1, 0), (5, 1), (6, 1)] {
            let day = 7 * w + dow;
            for (hour, poi) in [(10, 0), (12, target)] {
                checkins.push(SyntheticCheckin {
                    user: "solo".into(),
                    poi,
                    timestamp: local_time(day, hour),
                });
            }
        }
    }
    SyntheticCorpus { pois, checkins }
}

/// Configuration used with [`opposing_corpus`]: tiny model, no validation
/// holdout, a short warmup and an immediate similarity checkpoint.
pub fn opposing_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        layers: 1,
        lr: 0.05,
        weight_decay: 0.0,
        batch_size: 4,
        epochs: 60,
        patience: 1000,
        warmup_epochs: 6,
        sim_window: 4,
        split_ratio: 1.0,
        val_ratio: 0.0,
        ..TrainConfig::default()
    }
}

/// Length of `y`'s collaborative row in [`opposing_model`]; with every gate
/// at one half this leaves the two scenarios roughly balanced, so the shared
/// gate sits near its compromise before the split.
const OPPOSING_Y_NORM: f64 = 2.0;

/// Model for the opposing fixture: every table except the collaborative one
/// is zero, the gate vectors start at zero, and only the gates train. The
/// three gates whose views are zero receive exactly zero gradient, so only
/// the collaborative gate can conflict. The collaborative rows of `x` and
/// `y` are orthogonal with `y` longer, so opening the gate moves the ranking
/// from `x` towards `y`.
pub fn opposing_model(graphs: &GraphSet, cfg: &TrainConfig) -> Result<Model> {
    let mut model = Model::init(graphs, cfg);
    let names: Vec<String> = model
        .registry
        .ids()
        .map(|id| model.registry.name(id).to_string())
        .collect();
    for name in &names {
        if name.starts_with("emb.collab") {
            let id = model.registry.id(name)?;
            let table = model.registry.copy_mut(id, 0);
            table.fill(0.0);
            for (p, mut row) in table.rows_mut().into_iter().enumerate() {
                row[p.min(1)] = if p == 0 { 1.0 } else { OPPOSING_Y_NORM };
            }
        } else if name.starts_with("emb.") || name.starts_with("gate.") {
            let id = model.registry.id(name)?;
            model.registry.copy_mut(id, 0).fill(0.0);
        }
    }
    let gates: Vec<&str> = names.iter().map(String::as_str).filter(|n| n.starts_with("gate.")).collect();
    model.freeze_all_except(&gates)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Temporal, UserType};

    #[test]
    fn local_time_is_monday_morning() {
        let c = CheckIn {
            user_id: 0,
            poi_id: 0,
            timestamp: local_time(0, 10),
            tz_offset_min: TZ_OFFSET_MIN,
            lat: 0.0,
            lon: 0.0,
            category: String::new(),
        };
        assert_eq!(c.time_slot(), 20);
        assert_eq!(crate::scenario::weekday_of(c.local_seconds()), chrono::Weekday::Mon);
    }

    #[test]
    fn opposing_corpus_labels() {
        let cfg = opposing_config();
        let data = opposing_corpus(4).prepare(&cfg).unwrap();
        assert_eq!(data.num_pois(), 2);
        assert_eq!(data.train.len(), 16);
        let mut ids: Vec<usize> = data.train_labels.iter().map(|l| l.composite().id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids, vec![0, 2]);
        for (t, l) in data.train.iter().zip(&data.train_labels) {
            let y = t.target().poi_id != t.checkins[0].poi_id;
            assert_eq!(y, l.temporal == Temporal::Weekend);
        }
    }

    #[test]
    fn scenario_corpus_covers_all_scenarios() {
        let params = ScenarioCorpusParams {
            users: 40,
            pois: 60,
            trajectories_per_user: 10,
            ..Default::default()
        };
        let corpus = scenario_corpus(&params);
        let data = corpus.prepare(&TrainConfig::default()).unwrap();
        let mut seen = [0usize; 8];
        for l in data.train_labels.iter().chain(&data.test_labels) {
            seen[l.composite().id()] += 1;
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
        let tourists = data.user_types.iter().filter(|&&u| u == UserType::Tourist).count();
        assert_eq!(tourists, 20);
        assert_eq!(data.train.len() + data.test.len(), 400);
    }

    #[test]
    fn renders_both_formats() {
        let corpus = opposing_corpus(1);
        let fsq = corpus.to_foursquare_tsv();
        assert_eq!(fsq.lines().next().unwrap().split('\t').count(), 8);
        let gw = corpus.to_gowalla_tsv();
        assert_eq!(gw.lines().next().unwrap().split('\t').count(), 5);
    }
}
