//! Adam with bias correction and coupled L2 weight decay.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::splitter::ParamId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    states: BTreeMap<(ParamId, usize), AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn states(&self) -> &BTreeMap<(ParamId, usize), AdamState> {
        &self.states
    }

    pub fn insert_state(&mut self, id: ParamId, copy: usize, state: AdamState) {
        self.states.insert((id, copy), state);
    }

    /// One update of copy `copy` of parameter `id`; decay is folded into the gradient.
    pub fn step(&mut self, id: ParamId, copy: usize, param: &mut Array2<f64>, grad: &Array2<f64>) {
        let c = self.config;
        let st = self.states.entry((id, copy)).or_insert_with(|| AdamState {
            m: Array2::zeros(param.dim()),
            v: Array2::zeros(param.dim()),
            step: 0,
        });
        st.step += 1;
        let bc1 = 1.0 - c.beta1.powi(st.step as i32);
        let bc2 = 1.0 - c.beta2.powi(st.step as i32);
        Zip::from(param)
            .and(grad)
            .and(&mut st.m)
            .and(&mut st.v)
            .for_each(|p, &g, m, v| {
                let g = g + c.weight_decay * *p;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            });
    }

    /// The duplicate of a split parameter inherits the original's moments.
    pub fn on_split(&mut self, id: ParamId) {
        if let Some(st) = self.states.get(&(id, 0)).cloned() {
            self.states.insert((id, 1), st);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        // Bias correction makes the first step exactly lr * sign(g) (up to eps).
        let mut opt = Adam::new(AdamConfig::new(0.01, 0.0));
        let mut p = array![[1.0, -1.0]];
        opt.step(ParamId(0), 0, &mut p, &array![[3.0, -0.5]]);
        assert!((p[[0, 0]] - 0.99).abs() < 1e-9);
        assert!((p[[0, 1]] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(AdamConfig::new(0.05, 0.0));
        let mut p = array![[3.0, -2.0]];
        for _ in 0..2000 {
            let g = p.clone();
            opt.step(ParamId(0), 0, &mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn weight_decay_is_coupled() {
        let mut opt = Adam::new(AdamConfig::new(0.01, 0.5));
        let mut p = array![[2.0]];
        opt.step(ParamId(0), 0, &mut p, &array![[0.0]]);
        // gradient is purely the decay term 0.5 * 2 > 0
        assert!(p[[0, 0]] < 2.0);
        assert!((opt.states()[&(ParamId(0), 0)].m[[0, 0]] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn split_clones_moments() {
        let mut opt = Adam::new(AdamConfig::new(0.01, 0.0));
        let mut p = array![[1.0]];
        opt.step(ParamId(2), 0, &mut p, &array![[1.0]]);
        opt.on_split(ParamId(2));
        assert_eq!(opt.states()[&(ParamId(2), 0)], opt.states()[&(ParamId(2), 1)]);
    }
}
