//! Row-averaging sparse operator: output row `r` is the mean of the input
//! rows listed in `rows[r]`. Hypergraph aggregation, propagation, user
//! lifting and trajectory pooling are all instances.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// What an output row with no sources becomes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmptyRow {
    Zero,
    /// Copy the same row of a fallback matrix.
    Carry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMean {
    n_in: usize,
    rows: Vec<Vec<usize>>,
    empty: EmptyRow,
}

impl RowMean {
    /// Sources may repeat; a repeated source is weighted by its multiplicity.
    pub fn new(n_in: usize, rows: Vec<Vec<usize>>, empty: EmptyRow) -> Self {
        debug_assert!(rows.iter().flatten().all(|&c| c < n_in));
        RowMean { n_in, rows, empty }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn empty_rule(&self) -> EmptyRow {
        self.empty
    }

    pub fn forward(&self, x: ArrayView2<f64>, fallback: Option<ArrayView2<f64>>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n_in, "RowMean input rows");
        let d = x.ncols();
        let mut out = Array2::<f64>::zeros((self.rows.len(), d));
        for (r, (srcs, mut row)) in self.rows.iter().zip(out.axis_iter_mut(Axis(0))).enumerate() {
            if srcs.is_empty() {
                if self.empty == EmptyRow::Carry {
                    let fb = fallback.expect("carry rule needs a fallback matrix");
                    row.assign(&fb.row(r));
                }
                continue;
            }
            for &c in srcs {
                row += &x.row(c);
            }
            row /= srcs.len() as f64;
        }
        out
    }

    /// Accumulates the adjoint into `gx` (and `gfallback` for carried rows).
    pub fn backward(
        &self,
        gy: ArrayView2<f64>,
        gx: &mut Array2<f64>,
        mut gfallback: Option<&mut Array2<f64>>,
    ) {
        for (r, srcs) in self.rows.iter().enumerate() {
            let g = gy.row(r);
            if srcs.is_empty() {
                if self.empty == EmptyRow::Carry {
                    if let Some(gf) = gfallback.as_deref_mut() {
                        let mut dst = gf.row_mut(r);
                        dst += &g;
                    }
                }
                continue;
            }
            let w = 1.0 / srcs.len() as f64;
            for &c in srcs {
                gx.row_mut(c).scaled_add(w, &g);
            }
        }
    }

    /// Dense equivalent, for tests and small oracles.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.rows.len(), self.n_in));
        for (r, srcs) in self.rows.iter().enumerate() {
            for &c in srcs {
                m[[r, c]] += 1.0 / srcs.len() as f64;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_with_repeats_and_carry() {
        let op = RowMean::new(3, vec![vec![0, 0, 2], vec![]], EmptyRow::Carry);
        let x = array![[1.0, 0.0], [5.0, 5.0], [4.0, 3.0]];
        let fb = array![[0.0, 0.0], [9.0, 8.0]];
        let y = op.forward(x.view(), Some(fb.view()));
        assert_eq!(y, array![[2.0, 1.0], [9.0, 8.0]]);

        let gy = array![[3.0, 3.0], [1.0, 2.0]];
        let mut gx = Array2::zeros((3, 2));
        let mut gf = Array2::zeros((2, 2));
        op.backward(gy.view(), &mut gx, Some(&mut gf));
        assert_eq!(gx, array![[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(gf, array![[0.0, 0.0], [1.0, 2.0]]);
    }

    #[test]
    fn dense_matches_forward() {
        let op = RowMean::new(3, vec![vec![1, 2], vec![0]], EmptyRow::Zero);
        let x = array![[1.0], [2.0], [4.0]];
        assert_eq!(op.forward(x.view(), None), op.to_dense().dot(&x));
    }
}
