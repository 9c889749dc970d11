//! Cross-view InfoNCE, softmax recommendation loss and their weighted
//! combination. Each loss has a value-only form and a value-plus-gradient form
//! used by the tape.

use std::sync::Once;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm floor for cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

static ZERO_NORM_WARNING: Once = Once::new();

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = row.mapv(|v| (v - m).exp());
    let s = e.sum();
    e /= s;
    e
}

/// Rows scaled to unit length; rows with norm below the floor become zero,
/// so their cosine with anything is 0.
fn normalize_rows(x: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = x.to_owned();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n < COSINE_EPS {
            ZERO_NORM_WARNING.call_once(|| {
                log::warn!("zero-norm embedding row in contrastive loss; cosine taken as 0")
            });
            row.fill(0.0);
        } else {
            row /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Cosine similarity matrix between the rows of `a` and `b`.
pub fn cosine_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (an, _) = normalize_rows(a);
    let (bn, _) = normalize_rows(b);
    an.dot(&bn.t())
}

/// Pairwise InfoNCE between two views of the same batch of entities; row `u`
/// of `a` and row `u` of `b` are the positive pair.
pub fn info_nce_pair(a: ArrayView2<f64>, b: ArrayView2<f64>, tau: f64) -> f64 {
    info_nce_pair_grad(a, b, tau).0
}

/// Loss together with its gradients with respect to `a` and `b`.
pub fn info_nce_pair_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    tau: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    assert_eq!(a.dim(), b.dim(), "contrastive views must align");
    assert!(tau > 0.0, "temperature must be positive");
    let n = a.nrows();
    assert!(n >= 1, "contrastive batch is empty");
    let (an, a_norm) = normalize_rows(a);
    let (bn, b_norm) = normalize_rows(b);
    let logits = an.dot(&bn.t()) / tau;

    let mut loss = 0.0;
    let mut g_sim = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[i];
        let mut p = softmax(row);
        p[i] -= 1.0;
        g_sim.row_mut(i).assign(&(p / (tau * n as f64)));
    }
    loss /= n as f64;

    let g_an = g_sim.dot(&bn);
    let g_bn = g_sim.t().dot(&an);
    (
        loss,
        normalize_backward(&an, &a_norm, g_an),
        normalize_backward(&bn, &b_norm, g_bn),
    )
}

/// Backward through `x / |x|`; zero rows have zero gradient.
fn normalize_backward(unit: &Array2<f64>, norms: &[f64], mut g: Array2<f64>) -> Array2<f64> {
    for ((mut gr, ur), &n) in g.axis_iter_mut(Axis(0)).zip(unit.axis_iter(Axis(0))).zip(norms) {
        if n < COSINE_EPS {
            gr.fill(0.0);
            continue;
        }
        let proj = gr.dot(&ur);
        gr.scaled_add(-proj, &ur);
        gr /= n;
    }
    g
}

/// Sum of pairwise InfoNCE over the six unordered pairs of four views.
pub fn contrastive_sum(views: &[ArrayView2<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..views.len() {
        for j in i + 1..views.len() {
            total += info_nce_pair(views[i], views[j], tau);
        }
    }
    total
}

/// Mean softmax cross-entropy of `targets` under each row of `scores`.
pub fn rec_loss(scores: ArrayView2<f64>, targets: &[usize]) -> Result<f64> {
    rec_loss_grad(scores, targets).map(|(l, _)| l)
}

pub fn rec_loss_grad(scores: ArrayView2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    assert_eq!(scores.nrows(), targets.len(), "one target per score row");
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score {bad} in recommendation loss")));
    }
    let b = scores.nrows();
    let n = scores.ncols();
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(scores.dim());
    for (i, &t) in targets.iter().enumerate() {
        if t >= n {
            return Err(Error::Catalog(format!("target POI {t} >= {n}")));
        }
        let row = scores.row(i);
        loss += log_sum_exp(row) - row[t];
        let mut p = softmax(row);
        p[t] -= 1.0;
        grad.row_mut(i).assign(&(p / b as f64));
    }
    Ok((loss / b as f64, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_con_user: f64,
    pub l_con_poi: f64,
    pub l_rec: f64,
    pub l_final: f64,
    pub scenario_id: usize,
}

pub fn final_loss(
    l_con_user: f64,
    l_con_poi: f64,
    l_rec: f64,
    lambda: f64,
    scenario_id: usize,
) -> Result<LossBreakdown> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(LossBreakdown {
        l_con_user,
        l_con_poi,
        l_rec,
        l_final: lambda * (l_con_user + l_con_poi) + (1.0 - lambda) * l_rec,
        scenario_id,
    })
}
