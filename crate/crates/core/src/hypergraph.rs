//! Sparse hypergraph structures and the builders for the collaborative,
//! temporal, geographical and transitional views.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Catalog, Trajectory, TIME_SLOTS};
use crate::scenario::{haversine_km, ScenarioLabel, Spatial};

/// Undirected hypergraph with both incidence orientations materialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    node_count: usize,
    edges: Vec<Vec<usize>>,
    node_edges: Vec<Vec<usize>>,
}

impl Hypergraph {
    /// Members of each edge are sorted and deduplicated.
    pub fn new(node_count: usize, edges: Vec<Vec<usize>>) -> Result<Self> {
        let mut node_edges = vec![Vec::new(); node_count];
        let mut clean = Vec::with_capacity(edges.len());
        for (e, mut members) in edges.into_iter().enumerate() {
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Err(Error::Shape(format!("hyperedge {e} is empty")));
            }
            if let Some(&bad) = members.iter().find(|&&v| v >= node_count) {
                return Err(Error::Shape(format!(
                    "hyperedge {e} references node {bad} >= node_count {node_count}"
                )));
            }
            for &v in &members {
                node_edges[v].push(e);
            }
            clean.push(members);
        }
        Ok(Hypergraph {
            node_count,
            edges: clean,
            node_edges,
        })
    }

    pub fn empty(node_count: usize) -> Self {
        Hypergraph {
            node_count,
            edges: Vec::new(),
            node_edges: vec![Vec::new(); node_count],
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    /// Hyperedges incident to each node.
    pub fn node_edges(&self) -> &[Vec<usize>] {
        &self.node_edges
    }

    pub fn nnz(&self) -> usize {
        self.node_edges.iter().map(Vec::len).sum()
    }

    /// Nodes that belong to at least one hyperedge.
    pub fn covered(&self) -> Vec<bool> {
        self.node_edges.iter().map(|e| !e.is_empty()).collect()
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, e) in self.edges.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}", join(e));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn join(nodes: &[usize]) -> String {
    nodes
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedHypergraph {
    node_count: usize,
    edges: Vec<DirectedEdge>,
    /// For each node, the edges whose target set contains it.
    incoming: Vec<Vec<usize>>,
}

impl DirectedHypergraph {
    pub fn new(node_count: usize, edges: Vec<DirectedEdge>) -> Result<Self> {
        let mut incoming = vec![Vec::new(); node_count];
        let mut clean = Vec::with_capacity(edges.len());
        for (e, mut edge) in edges.into_iter().enumerate() {
            for set in [&mut edge.sources, &mut edge.targets] {
                set.sort_unstable();
                set.dedup();
            }
            if edge.sources.is_empty() || edge.targets.is_empty() {
                return Err(Error::Shape(format!(
                    "directed hyperedge {e} has an empty source or target set"
                )));
            }
            if let Some(&bad) = edge
                .sources
                .iter()
                .chain(&edge.targets)
                .find(|&&v| v >= node_count)
            {
                return Err(Error::Shape(format!(
                    "directed hyperedge {e} references node {bad} >= node_count {node_count}"
                )));
            }
            for &t in &edge.targets {
                incoming[t].push(e);
            }
            clean.push(edge);
        }
        Ok(DirectedHypergraph {
            node_count,
            edges: clean,
            incoming,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[DirectedEdge] {
        &self.edges
    }

    pub fn incoming(&self) -> &[Vec<usize>] {
        &self.incoming
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, e) in self.edges.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}|{}", join(&e.sources), join(&e.targets));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    Collaborative,
    TemporalUser,
    TemporalPoi,
    Geographical,
    Transitional,
}

impl View {
    pub const ALL: [View; 5] = [
        View::Collaborative,
        View::TemporalUser,
        View::TemporalPoi,
        View::Geographical,
        View::Transitional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            View::Collaborative => "collaborative",
            View::TemporalUser => "temporal_user",
            View::TemporalPoi => "temporal_poi",
            View::Geographical => "geographical",
            View::Transitional => "transitional",
        }
    }

    /// Name of the slice value `slice` along this view's splitting dimension.
    pub fn slice_name(self, slice: usize) -> &'static str {
        match (self, slice) {
            (View::Collaborative, 0) => "local",
            (View::Collaborative, _) => "tourist",
            (View::TemporalUser | View::TemporalPoi, 0) => "workday",
            (View::TemporalUser | View::TemporalPoi, _) => "weekend",
            (View::Geographical, 0) => "downtown",
            (View::Geographical, _) => "suburban",
            (View::Transitional, _) => "shared",
        }
    }

    /// Slice index selected by a scenario label.
    pub fn slice_of(self, label: &ScenarioLabel) -> Option<usize> {
        match self {
            View::Collaborative => Some(label.user_type.index()),
            View::TemporalUser | View::TemporalPoi => Some(label.temporal.index()),
            View::Geographical => Some(label.spatial.index()),
            View::Transitional => None,
        }
    }
}

/// A view plus the slice of its splitting dimension; the transitional view has none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewKind {
    pub view: View,
    pub scenario_slice: Option<usize>,
}

impl ViewKind {
    pub fn new(view: View, scenario_slice: Option<usize>) -> Result<Self> {
        let ok = match view {
            View::Transitional => scenario_slice.is_none(),
            _ => matches!(scenario_slice, Some(0 | 1)),
        };
        if ok {
            Ok(ViewKind {
                view,
                scenario_slice,
            })
        } else {
            Err(Error::Config(format!(
                "view {} cannot carry slice {scenario_slice:?}",
                view.name()
            )))
        }
    }

    pub fn file_stem(&self) -> String {
        match self.scenario_slice {
            Some(s) => format!("{}_{}", self.view.name(), self.view.slice_name(s)),
            None => self.view.name().to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    User,
    Poi,
}

/// One hyperedge per trajectory (its distinct POIs), routed by `route`.
pub fn collaborative_graphs(
    train: &[Trajectory],
    num_pois: usize,
    slices: usize,
    route: impl Fn(usize) -> usize,
) -> Result<Vec<Hypergraph>> {
    let mut edges = vec![Vec::new(); slices];
    for (i, t) in train.iter().enumerate() {
        edges[route(i)].push(t.checkins.iter().map(|c| c.poi_id).collect::<Vec<_>>());
    }
    edges
        .into_iter()
        .map(|e| Hypergraph::new(num_pois, e))
        .collect()
}

/// Local and tourist collaborative sub-hypergraphs. `labels` is aligned with `train`.
pub fn build_collaborative(
    train: &[Trajectory],
    labels: &[ScenarioLabel],
    num_pois: usize,
) -> Result<[Hypergraph; 2]> {
    let mut g = collaborative_graphs(train, num_pois, 2, |i| labels[i].user_type.index())?;
    let tourist = g.pop().expect("two slices");
    let local = g.pop().expect("two slices");
    Ok([local, tourist])
}

/// 48 half-hour slot hyperedges (empty slots dropped) per slice.
pub fn temporal_graphs(
    train: &[Trajectory],
    node_kind: NodeKind,
    num_nodes: usize,
    slices: usize,
    route: impl Fn(usize) -> usize,
) -> Result<Vec<Hypergraph>> {
    let mut members = vec![vec![Vec::new(); TIME_SLOTS]; slices];
    for (i, t) in train.iter().enumerate() {
        let s = route(i);
        for c in &t.checkins {
            let node = match node_kind {
                NodeKind::User => c.user_id,
                NodeKind::Poi => c.poi_id,
            };
            members[s][c.time_slot()].push(node);
        }
    }
    members
        .into_iter()
        .map(|slots| {
            let edges = slots.into_iter().filter(|m| !m.is_empty()).collect();
            Hypergraph::new(num_nodes, edges)
        })
        .collect()
}

pub fn build_temporal(
    train: &[Trajectory],
    labels: &[ScenarioLabel],
    node_kind: NodeKind,
    num_nodes: usize,
) -> Result<[Hypergraph; 2]> {
    let mut g = temporal_graphs(train, node_kind, num_nodes, 2, |i| labels[i].temporal.index())?;
    let weekend = g.pop().expect("two slices");
    let workday = g.pop().expect("two slices");
    Ok([workday, weekend])
}

/// For each POI in `members`, the ball of POIs in `members` within `threshold_km`.
pub fn neighborhood_graph(
    catalog: &Catalog,
    members: &[usize],
    threshold_km: f64,
) -> Result<Hypergraph> {
    // Sweep over latitude: points further apart in latitude than the
    // threshold cannot be within it.
    let lat_window = (threshold_km / crate::scenario::EARTH_RADIUS_KM).to_degrees() * (1.0 + 1e-9);
    let mut order: Vec<usize> = members.to_vec();
    order.sort_by(|&a, &b| {
        catalog.pois[a]
            .lat
            .total_cmp(&catalog.pois[b].lat)
            .then(a.cmp(&b))
    });
    let lats: Vec<f64> = order.iter().map(|&p| catalog.pois[p].lat).collect();
    let mut balls: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &p) in order.iter().enumerate() {
        let here = (catalog.pois[p].lat, catalog.pois[p].lon);
        let lo = lats.partition_point(|&l| l < lats[i] - lat_window);
        let mut ball = vec![p];
        for &q in order[lo..].iter() {
            if catalog.pois[q].lat > lats[i] + lat_window {
                break;
            }
            if q != p && haversine_km(here, (catalog.pois[q].lat, catalog.pois[q].lon)) <= threshold_km {
                ball.push(q);
            }
        }
        balls.insert(p, ball);
    }
    Hypergraph::new(catalog.num_pois(), balls.into_values().collect())
}

/// Downtown and suburban neighborhood sub-hypergraphs over the full POI index
/// space; a POI appears only in the graph of its own region.
pub fn build_geographical(
    catalog: &Catalog,
    poi_regions: &[Spatial],
    threshold_km: f64,
) -> Result<[Hypergraph; 2]> {
    let region = |s: Spatial| -> Vec<usize> {
        (0..catalog.num_pois()).filter(|&p| poi_regions[p] == s).collect()
    };
    Ok([
        neighborhood_graph(catalog, &region(Spatial::Downtown), threshold_km)?,
        neighborhood_graph(catalog, &region(Spatial::Suburban), threshold_km)?,
    ])
}

/// One hyperedge per distinct consecutive transition, ordered by (source, target).
pub fn build_transitional(train: &[Trajectory], num_pois: usize) -> Result<DirectedHypergraph> {
    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in train {
        for w in t.checkins.windows(2) {
            *pairs.entry((w[0].poi_id, w[1].poi_id)).or_default() += 1;
        }
    }
    let edges = pairs
        .into_iter()
        .map(|((s, t), multiplicity)| DirectedEdge {
            sources: vec![s],
            targets: vec![t],
            multiplicity,
        })
        .collect();
    DirectedHypergraph::new(num_pois, edges)
}

/// Distinct POIs each user visited within the trajectories routed to each
/// collaborative slice; the row-normalized transposed incidence used to lift
/// POI embeddings to users.
pub fn user_poi_sets(
    train: &[Trajectory],
    num_users: usize,
    slices: usize,
    route: impl Fn(usize) -> usize,
) -> Vec<Vec<Vec<usize>>> {
    let mut sets = vec![vec![Vec::new(); num_users]; slices];
    for (i, t) in train.iter().enumerate() {
        let s = route(i);
        sets[s][t.user_id].extend(t.checkins.iter().map(|c| c.poi_id));
    }
    for slice in &mut sets {
        for pois in slice.iter_mut() {
            pois.sort_unstable();
            pois.dedup();
        }
    }
    sets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CheckIn, PoiRecord, TIME_SLOTS};
    use crate::scenario::{Temporal, UserType};

    fn traj(user: usize, pois: &[usize], start: i64) -> Trajectory {
        Trajectory {
            id: 0,
            user_id: user,
            window_start: start,
            checkins: pois
                .iter()
                .enumerate()
                .map(|(i, &p)| CheckIn {
                    user_id: user,
                    poi_id: p,
                    timestamp: start + 600 * i as i64,
                    tz_offset_min: 0,
                    lat: 0.0,
                    lon: 0.0,
                    category: String::new(),
                })
                .collect(),
        }
    }

    fn label(ut: UserType, tm: Temporal) -> ScenarioLabel {
        ScenarioLabel {
            user_type: ut,
            temporal: tm,
            spatial: Spatial::Downtown,
        }
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Hypergraph::new(3, vec![vec![]]).is_err());
        assert!(Hypergraph::new(3, vec![vec![3]]).is_err());
        let d = DirectedHypergraph::new(
            2,
            vec![DirectedEdge {
                sources: vec![0],
                targets: vec![],
                multiplicity: 1,
            }],
        );
        assert!(d.is_err());
    }

    #[test]
    fn collaborative_dedups_within_edge() {
        let t = vec![traj(0, &[3, 5, 3], 0)];
        let l = vec![label(UserType::Local, Temporal::Workday)];
        let [local, tourist] = build_collaborative(&t, &l, 6).unwrap();
        assert_eq!(local.edges(), &[vec![3, 5]]);
        assert_eq!(tourist.edge_count(), 0);
        assert_eq!(tourist.node_count(), 6);
    }

    #[test]
    fn temporal_slot_arithmetic() {
        let mut t = traj(0, &[1, 2], 0);
        t.checkins[0].timestamp = 12 * 3600 + 30 * 60;
        t.checkins[1].timestamp = 24 * 3600;
        assert_eq!(t.checkins[0].time_slot(), 25);
        assert_eq!(t.checkins[1].time_slot(), 0);
        let l = vec![label(UserType::Local, Temporal::Weekend)];
        let [workday, weekend] = build_temporal(&[t], &l, NodeKind::Poi, 3).unwrap();
        assert_eq!(workday.edge_count(), 0);
        assert_eq!(weekend.edges(), &[vec![2], vec![1]]);
        assert!(weekend.edge_count() <= TIME_SLOTS);
    }

    #[test]
    fn transitional_pairs() {
        let g = build_transitional(&[traj(0, &[2, 7, 2], 0), traj(0, &[4], 0)], 8).unwrap();
        let pairs: Vec<_> = g
            .edges()
            .iter()
            .map(|e| (e.sources.clone(), e.targets.clone()))
            .collect();
        assert_eq!(pairs, vec![(vec![2], vec![7]), (vec![7], vec![2])]);
        assert_eq!(g.incoming()[2], vec![1]);
    }

    #[test]
    fn geographical_balls() {
        let poi = |lat: f64, lon: f64| PoiRecord {
            external_id: String::new(),
            lat,
            lon,
            category: String::new(),
        };
        let one_km_deg = (1.0 / crate::scenario::EARTH_RADIUS_KM).to_degrees();
        let catalog = Catalog {
            users: vec![],
            pois: vec![poi(0.0, 0.0), poi(one_km_deg, 0.0), poi(1.0, 1.0)],
            time_slots: TIME_SLOTS,
        };
        let regions = vec![Spatial::Downtown, Spatial::Downtown, Spatial::Suburban];
        let [down, sub] = build_geographical(&catalog, &regions, 2.5).unwrap();
        assert_eq!(down.edges(), &[vec![0, 1], vec![0, 1]]);
        assert_eq!(sub.edges(), &[vec![2]]);
        assert_eq!(down.covered(), vec![true, true, false]);
    }

    #[test]
    fn nnz_matches_edge_sizes() {
        let g = Hypergraph::new(5, vec![vec![0, 1], vec![1, 2, 3], vec![4]]).unwrap();
        assert_eq!(g.nnz(), 6);
        assert_eq!(g.edges().iter().map(Vec::len).sum::<usize>(), g.nnz());
    }

    #[test]
    fn view_kind_slices() {
        assert!(ViewKind::new(View::Transitional, Some(0)).is_err());
        assert!(ViewKind::new(View::Geographical, None).is_err());
        let k = ViewKind::new(View::TemporalPoi, Some(1)).unwrap();
        assert_eq!(k.file_stem(), "temporal_poi_weekend");
    }
}
