//! Lifting POI-view embeddings to users, gated user fusion, summed POI
//! fusion and candidate scoring.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::hypergraph::View;
use crate::ingest::Trajectory;
use crate::scenario::ScenarioLabel;
use crate::sparse::{EmptyRow, RowMean};

/// User views in gate order.
pub const USER_VIEWS: [UserView; 4] = [
    UserView::Temporal,
    UserView::Collaborative,
    UserView::Transitional,
    UserView::Geographical,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UserView {
    Temporal,
    Collaborative,
    Transitional,
    Geographical,
}

impl UserView {
    pub fn name(self) -> &'static str {
        match self {
            UserView::Temporal => "tem",
            UserView::Collaborative => "collab",
            UserView::Transitional => "trans",
            UserView::Geographical => "geo",
        }
    }
}

/// One gate vector per user view, indexed in [`USER_VIEWS`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub weights: [Array1<f64>; 4],
}

impl GateParams {
    pub fn zeros(dim: usize) -> Self {
        GateParams {
            weights: std::array::from_fn(|_| Array1::zeros(dim)),
        }
    }
}

/// Sub-hypergraph slice chosen for each view by a scenario label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ViewSelection {
    pub collaborative: usize,
    pub temporal: usize,
    pub geographical: usize,
}

impl ViewSelection {
    /// With `merged`, every view has a single graph (slice 0).
    pub fn for_label(label: &ScenarioLabel, merged: bool) -> Self {
        if merged {
            return ViewSelection {
                collaborative: 0,
                temporal: 0,
                geographical: 0,
            };
        }
        ViewSelection {
            collaborative: View::Collaborative.slice_of(label).expect("sliced view"),
            temporal: View::TemporalPoi.slice_of(label).expect("sliced view"),
            geographical: View::Geographical.slice_of(label).expect("sliced view"),
        }
    }

    pub fn slice(&self, view: View) -> Option<usize> {
        match view {
            View::Collaborative => Some(self.collaborative),
            View::TemporalUser | View::TemporalPoi => Some(self.temporal),
            View::Geographical => Some(self.geographical),
            View::Transitional => None,
        }
    }
}

/// Row-normalized transposed collaborative incidence: user `u`'s row is the
/// mean of the POI rows in `user_pois[u]`; users with none get a zero row.
pub fn lifting_operator(num_pois: usize, user_pois: &[Vec<usize>]) -> RowMean {
    RowMean::new(num_pois, user_pois.to_vec(), EmptyRow::Zero)
}

pub fn lift_user_embeddings(poi_embeddings: ArrayView2<f64>, lifting: &RowMean) -> Array2<f64> {
    lifting.forward(poi_embeddings, None)
}

/// Per-user scalar gates `σ(<E_X[u], W_X>)` for each view, as a `users × 4` matrix.
pub fn gate_values(views: &[ArrayView2<f64>; 4], gates: &GateParams) -> Array2<f64> {
    let users = views[0].nrows();
    let mut out = Array2::zeros((users, 4));
    for (x, (v, w)) in views.iter().zip(&gates.weights).enumerate() {
        let logits = v.dot(w);
        out.column_mut(x).assign(&logits.mapv(sigmoid));
    }
    out
}

/// `Σ_X σ(<E_X[u], W_X>) · E_X[u]`, views in [`USER_VIEWS`] order.
pub fn gate_fuse_user(views: &[ArrayView2<f64>; 4], gates: &GateParams) -> Result<Array2<f64>> {
    let dim = views[0].dim();
    if views.iter().any(|v| v.dim() != dim) {
        return Err(Error::Shape("user views differ in shape".into()));
    }
    let lambdas = gate_values(views, gates);
    let mut fused = Array2::zeros(dim);
    for (x, v) in views.iter().enumerate() {
        let col = lambdas.column(x).insert_axis(Axis(1));
        fused += &(v * &col);
    }
    Ok(fused)
}

pub fn sum_fuse_poi(views: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let first = views
        .first()
        .ok_or_else(|| Error::Shape("no POI views to fuse".into()))?;
    let mut out = first.to_owned();
    for v in &views[1..] {
        if v.dim() != out.dim() {
            return Err(Error::Shape("POI views differ in shape".into()));
        }
        out += v;
    }
    Ok(out)
}

/// Fused user and POI tables resolved for one composite scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTables {
    pub fused_users: Array2<f64>,
    pub fused_pois: Array2<f64>,
}

impl ScenarioTables {
    pub fn num_pois(&self) -> usize {
        self.fused_pois.nrows()
    }

    /// Fused user row plus the mean fused POI row over the input check-ins.
    pub fn trajectory_repr(&self, user: usize, input_pois: &[usize]) -> Result<Array1<f64>> {
        if user >= self.fused_users.nrows() {
            return Err(Error::Catalog(format!("unknown user {user}")));
        }
        if input_pois.is_empty() {
            return Err(Error::Shape("trajectory has no input check-in".into()));
        }
        let mut repr = self.fused_users.row(user).to_owned();
        let w = 1.0 / input_pois.len() as f64;
        for &p in input_pois {
            if p >= self.num_pois() {
                return Err(Error::Catalog(format!("unknown POI {p}")));
            }
            repr.scaled_add(w, &self.fused_pois.row(p));
        }
        Ok(repr)
    }

    pub fn score_repr(&self, repr: ArrayView1<f64>) -> Array1<f64> {
        self.fused_pois.dot(&repr)
    }

    pub fn score_candidates(&self, trajectory: &Trajectory) -> Result<Array1<f64>> {
        let target = trajectory.target().poi_id;
        if target >= self.num_pois() {
            return Err(Error::Catalog(format!("unknown POI {target}")));
        }
        let repr = self.trajectory_repr(trajectory.user_id, &trajectory.input_pois())?;
        Ok(self.score_repr(repr.view()))
    }
}

/// Descending score, ties broken by ascending POI index.
pub fn ranking_order(scores: ArrayView1<f64>, a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

pub fn top_k(scores: ArrayView1<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    idx.select_nth_unstable_by(k - 1, |&a, &b| ranking_order(scores, a, b));
    idx.truncate(k);
    idx.sort_by(|&a, &b| ranking_order(scores, a, b));
    idx
}

/// 1-based rank of `target` under [`ranking_order`].
pub fn rank_of(scores: ArrayView1<f64>, target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(p, &s)| s > t || (s == t && p < target))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CompositeScenario, Spatial};
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn lift_single_member_and_constant_field() {
        let poi = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let lift = lifting_operator(3, &[vec![1], vec![], vec![0, 2]]);
        let u = lift_user_embeddings(poi.view(), &lift);
        assert_eq!(u, array![[3.0, 4.0], [0.0, 0.0], [3.0, 4.0]]);

        let constant = Array2::from_elem((3, 2), 0.7);
        let u = lift_user_embeddings(constant.view(), &lift);
        assert_eq!(u.row(0).to_vec(), vec![0.7, 0.7]);
        assert_eq!(u.row(2).to_vec(), vec![0.7, 0.7]);
    }

    #[test]
    fn lift_matches_per_user_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poi = random(12, 4, &mut rng);
        let sets: Vec<Vec<usize>> = (0..6)
            .map(|u| (0..12).filter(|p| (p + u) % 3 == 0 || p % 5 == u).collect())
            .collect();
        let lifted = lift_user_embeddings(poi.view(), &lifting_operator(12, &sets));
        for (u, set) in sets.iter().enumerate() {
            for j in 0..4 {
                let mean: f64 = set.iter().map(|&p| poi[[p, j]]).sum::<f64>() / set.len() as f64;
                assert!((lifted[[u, j]] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gates_halve_the_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<Array2<f64>> = (0..4).map(|_| random(3, 5, &mut rng)).collect();
        let views = [v[0].view(), v[1].view(), v[2].view(), v[3].view()];
        let fused = gate_fuse_user(&views, &GateParams::zeros(5)).unwrap();
        let expected = (&v[0] + &v[1] + &v[2] + &v[3]) * 0.5;
        assert!((fused - expected).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn zero_view_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(2, 3, &mut rng);
        let z = Array2::zeros((2, 3));
        let mut gates = GateParams::zeros(3);
        gates.weights[2] = array![5.0, -1.0, 2.0];
        let with_zero = gate_fuse_user(&[a.view(), z.view(), z.view(), z.view()], &gates).unwrap();
        assert_eq!(with_zero, &a * 0.5);
    }

    #[test]
    fn gate_fuse_matches_loop_and_gates_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<Array2<f64>> = (0..4).map(|_| random(4, 6, &mut rng)).collect();
        let gates = GateParams {
            weights: std::array::from_fn(|_| Array::from_shape_simple_fn(6, || rng.gen_range(-2.0..2.0))),
        };
        let views = [v[0].view(), v[1].view(), v[2].view(), v[3].view()];
        let fused = gate_fuse_user(&views, &gates).unwrap();
        let lambdas = gate_values(&views, &gates);
        assert!(lambdas.iter().all(|&l| l > 0.0 && l < 1.0));
        for u in 0..4 {
            for j in 0..6 {
                let mut acc = 0.0;
                for (view, w) in v.iter().zip(&gates.weights) {
                    let logit: f64 = (0..6).map(|k| view[[u, k]] * w[k]).sum();
                    acc += view[[u, j]] / (1.0 + (-logit).exp());
                }
                assert!((fused[[u, j]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poi_sum_fusion() {
        let v = array![[1.0, -2.0]];
        let z = Array2::zeros((1, 2));
        assert_eq!(sum_fuse_poi(&[z.view(), v.view(), z.view(), z.view()]).unwrap(), v);
        let neg = -&v;
        assert_eq!(
            sum_fuse_poi(&[v.view(), neg.view(), z.view(), z.view()]).unwrap(),
            Array2::<f64>::zeros((1, 2))
        );
        let bad = Array2::zeros((2, 2));
        assert!(sum_fuse_poi(&[v.view(), bad.view()]).is_err());
    }

    #[test]
    fn ranking_ties_and_topk() {
        let zeros = Array1::zeros(5);
        assert_eq!(top_k(zeros.view(), 3), vec![0, 1, 2]);
        assert_eq!(rank_of(zeros.view(), 3), 4);

        let s = array![0.1, 0.9, 0.5, 0.9, -1.0];
        assert_eq!(top_k(s.view(), 5), vec![1, 3, 2, 0, 4]);
        assert_eq!(rank_of(s.view(), 3), 2);
        assert_eq!(rank_of(s.view(), 4), 5);
    }

    #[test]
    fn one_hot_pois_recover_repr() {
        let tables = ScenarioTables {
            fused_users: array![[0.0, 0.0, 3.0, 0.0]],
            fused_pois: Array2::eye(4),
        };
        let t = Trajectory {
            id: 0,
            user_id: 0,
            window_start: 0,
            checkins: vec![
                crate::ingest::CheckIn {
                    user_id: 0,
                    poi_id: 1,
                    timestamp: 0,
                    tz_offset_min: 0,
                    lat: 0.0,
                    lon: 0.0,
                    category: String::new(),
                };
                2
            ],
        };
        let scores = tables.score_candidates(&t).unwrap();
        assert_eq!(scores.to_vec(), vec![0.0, 1.0, 3.0, 0.0]);
        assert_eq!(top_k(scores.view(), 1), vec![2]);

        let mut bad = t.clone();
        bad.checkins[0].poi_id = 9;
        assert!(matches!(tables.score_candidates(&bad), Err(Error::Catalog(_))));
    }

    #[test]
    fn spatial_change_only_moves_geographical_slice() {
        for k in CompositeScenario::all() {
            let l = k.label();
            let mut flipped = l;
            flipped.spatial = match l.spatial {
                Spatial::Downtown => Spatial::Suburban,
                Spatial::Suburban => Spatial::Downtown,
            };
            let a = ViewSelection::for_label(&l, false);
            let b = ViewSelection::for_label(&flipped, false);
            assert_eq!(a.collaborative, b.collaborative);
            assert_eq!(a.temporal, b.temporal);
            assert_ne!(a.geographical, b.geographical);
        }
    }
}
