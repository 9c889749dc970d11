//! Minimal reverse-mode tape over dense matrices. Operations are coarse
//! (sparse row means, fused losses) so a forward pass of the model is a few
//! dozen nodes.

use std::sync::Arc;

use ndarray::{Array2, Axis};

use crate::error::Result;
use crate::objective::{info_nce_pair_grad, rec_loss_grad};
use crate::sparse::RowMean;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Mean {
        map: Arc<RowMean>,
        x: Var,
        fallback: Option<Var>,
    },
    Lin(Vec<(f64, Var)>),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    /// Row `r` from `a` where `keep[r]`, else from `b`.
    Select {
        keep: Arc<Vec<bool>>,
        a: Var,
        b: Var,
    },
    /// `x · w` for a `1 × d` row `w`; yields a column.
    RowDot {
        x: Var,
        w: Var,
    },
    Sigmoid(Var),
    /// Each row of `x` times the matching entry of the column `s`.
    RowScale {
        x: Var,
        s: Var,
    },
    /// `a · bᵀ`.
    MatMulT {
        a: Var,
        b: Var,
    },
    /// Scalar loss with its input gradients precomputed in the forward pass.
    Fused(Vec<(Var, Array2<f64>)>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn mean(&mut self, map: &Arc<RowMean>, x: Var, fallback: Option<Var>) -> Var {
        let value = map.forward(
            self.value(x).view(),
            fallback.map(|f| self.nodes[f.0].value.view()),
        );
        self.push(
            value,
            Op::Mean {
                map: Arc::clone(map),
                x,
                fallback,
            },
        )
    }

    pub fn lin(&mut self, terms: Vec<(f64, Var)>) -> Var {
        assert!(!terms.is_empty());
        let mut value = Array2::zeros(self.value(terms[0].1).dim());
        for &(c, v) in &terms {
            value.scaled_add(c, self.value(v));
        }
        self.push(value, Op::Lin(terms))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.lin(vec![(1.0, a), (1.0, b)])
    }

    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let value = self.value(x).select(Axis(0), &idx);
        self.push(value, Op::Gather { x, idx })
    }

    pub fn select(&mut self, keep: &Arc<Vec<bool>>, a: Var, b: Var) -> Var {
        let mut value = self.value(b).clone();
        for (r, &k) in keep.iter().enumerate() {
            if k {
                value.row_mut(r).assign(&self.value(a).row(r));
            }
        }
        self.push(
            value,
            Op::Select {
                keep: Arc::clone(keep),
                a,
                b,
            },
        )
    }

    pub fn row_dot(&mut self, x: Var, w: Var) -> Var {
        let wv = self.value(w).row(0).to_owned();
        let col = self.value(x).dot(&wv);
        let n = col.len();
        let value = col.into_shape_with_order((n, 1)).expect("column shape");
        self.push(value, Op::RowDot { x, w })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn row_scale(&mut self, x: Var, s: Var) -> Var {
        let value = self.value(x) * self.value(s);
        self.push(value, Op::RowScale { x, s })
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT { a, b })
    }

    pub fn info_nce(&mut self, a: Var, b: Var, tau: f64) -> Var {
        let (loss, ga, gb) = info_nce_pair_grad(self.value(a).view(), self.value(b).view(), tau);
        self.push(Array2::from_elem((1, 1), loss), Op::Fused(vec![(a, ga), (b, gb)]))
    }

    pub fn softmax_ce(&mut self, scores: Var, targets: &[usize]) -> Result<Var> {
        let (loss, g) = rec_loss_grad(self.value(scores).view(), targets)?;
        Ok(self.push(Array2::from_elem((1, 1), loss), Op::Fused(vec![(scores, g)])))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.value(root).dim()));

        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Mean { map, x, fallback } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    let mut gf = fallback.map(|f| Array2::zeros(self.value(f).dim()));
                    map.backward(g.view(), &mut gx, gf.as_mut());
                    accumulate(&mut grads, *x, gx);
                    if let (Some(f), Some(gf)) = (fallback, gf) {
                        accumulate(&mut grads, *f, gf);
                    }
                }
                Op::Lin(terms) => {
                    for &(c, v) in terms {
                        accumulate(&mut grads, v, &g * c);
                    }
                }
                Op::Gather { x, idx } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = gx.row_mut(src);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Select { keep, a, b } => {
                    let mut ga = Array2::zeros(g.dim());
                    let mut gb = g;
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            ga.row_mut(r).assign(&gb.row(r));
                            gb.row_mut(r).fill(0.0);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::RowDot { x, w } => {
                    let gcol = g.column(0);
                    let wv = self.value(*w).row(0);
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (mut row, &gi) in gx.axis_iter_mut(Axis(0)).zip(gcol.iter()) {
                        row.scaled_add(gi, &wv);
                    }
                    let gw = gcol.dot(self.value(*x));
                    let d = gw.len();
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw.into_shape_with_order((1, d)).expect("row"));
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[i].value;
                    let gx = &g * &y.mapv(|s| s * (1.0 - s));
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowScale { x, s } => {
                    let gx = &g * self.value(*s);
                    let gs = (&g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *s, gs);
                }
                Op::MatMulT { a, b } => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Fused(inputs) => {
                    let scale = g[[0, 0]];
                    for (v, local) in inputs {
                        accumulate(&mut grads, *v, local * scale);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}
