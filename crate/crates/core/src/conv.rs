//! Two-step node → hyperedge → node convolution with mean pooling and the
//! layer-averaged residual readout, for undirected and directed hypergraphs.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hypergraph::{DirectedHypergraph, Hypergraph};
use crate::sparse::{EmptyRow, RowMean};

/// The aggregation and propagation maps of one hypergraph.
#[derive(Clone, Debug)]
pub struct ConvOperator {
    aggregate: Arc<RowMean>,
    propagate: Arc<RowMean>,
}

impl ConvOperator {
    pub fn undirected(graph: &Hypergraph) -> Self {
        ConvOperator {
            aggregate: Arc::new(RowMean::new(
                graph.node_count(),
                graph.edges().to_vec(),
                EmptyRow::Zero,
            )),
            propagate: Arc::new(RowMean::new(
                graph.edge_count(),
                graph.node_edges().to_vec(),
                EmptyRow::Carry,
            )),
        }
    }

    /// Messages pool source nodes only and are delivered to target nodes only.
    pub fn directed(graph: &DirectedHypergraph) -> Self {
        ConvOperator {
            aggregate: Arc::new(RowMean::new(
                graph.node_count(),
                graph.edges().iter().map(|e| e.sources.clone()).collect(),
                EmptyRow::Zero,
            )),
            propagate: Arc::new(RowMean::new(
                graph.edge_count(),
                graph.incoming().to_vec(),
                EmptyRow::Carry,
            )),
        }
    }

    pub fn node_count(&self) -> usize {
        self.aggregate.n_in()
    }

    pub fn aggregate(&self, nodes: ArrayView2<f64>) -> Array2<f64> {
        self.aggregate.forward(nodes, None)
    }

    /// Nodes with no incoming hyperedge keep their row of `previous`.
    pub fn propagate(&self, messages: ArrayView2<f64>, previous: ArrayView2<f64>) -> Array2<f64> {
        self.propagate.forward(messages, Some(previous))
    }

    pub fn layer(&self, nodes: ArrayView2<f64>) -> Array2<f64> {
        let m = self.aggregate(nodes);
        self.propagate(m.view(), nodes)
    }

    /// Runs `layers` convolutions and returns every layer's node matrix and messages.
    pub fn run(&self, init: ArrayView2<f64>, layers: usize) -> Result<LayerState> {
        check_layers(layers)?;
        if init.nrows() != self.node_count() {
            return Err(Error::Shape(format!(
                "embedding table has {} rows, graph has {} nodes",
                init.nrows(),
                self.node_count()
            )));
        }
        let mut nodes = vec![init.to_owned()];
        let mut messages = Vec::with_capacity(layers);
        for _ in 0..layers {
            let prev = nodes.last().expect("layer 0 present");
            let m = self.aggregate(prev.view());
            let next = self.propagate(m.view(), prev.view());
            messages.push(m);
            nodes.push(next);
        }
        Ok(LayerState { nodes, messages })
    }

    pub fn forward(&self, init: ArrayView2<f64>, layers: usize) -> Result<Array2<f64>> {
        Ok(self.run(init, layers)?.readout())
    }

    /// Same computation recorded on a tape.
    pub fn forward_tape(&self, tape: &mut Tape, init: Var, layers: usize) -> Var {
        assert!(layers >= 1);
        let mut nodes = vec![init];
        for _ in 0..layers {
            let prev = *nodes.last().expect("layer 0 present");
            let m = tape.mean(&self.aggregate, prev, None);
            nodes.push(tape.mean(&self.propagate, m, Some(prev)));
        }
        let weights = readout_weights(layers);
        tape.lin(weights.into_iter().zip(nodes).collect())
    }
}

fn check_layers(layers: usize) -> Result<()> {
    if layers == 0 {
        Err(Error::Config("convolution needs at least one layer".into()))
    } else {
        Ok(())
    }
}

/// Coefficient of each layer in `1/(L+1) Σ_{l=0..L} (v_l + v_{l-1})` with
/// `v_{-1} = 0`: every layer but the last appears twice.
pub fn readout_weights(layers: usize) -> Vec<f64> {
    let norm = 1.0 / (layers as f64 + 1.0);
    (0..=layers)
        .map(|l| if l == layers { norm } else { 2.0 * norm })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    /// `v^(0) .. v^(L)`.
    pub nodes: Vec<Array2<f64>>,
    /// Hyperedge messages of layers `1 .. L`.
    pub messages: Vec<Array2<f64>>,
}

impl LayerState {
    pub fn layers(&self) -> usize {
        self.messages.len()
    }

    pub fn readout(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.nodes[0].dim());
        for (w, v) in readout_weights(self.layers()).into_iter().zip(&self.nodes) {
            out.scaled_add(w, v);
        }
        out
    }
}

/// Mean of the member rows of each hyperedge.
pub fn aggregate(graph: &Hypergraph, nodes: ArrayView2<f64>) -> Array2<f64> {
    ConvOperator::undirected(graph).aggregate(nodes)
}

/// Mean of incident hyperedge messages; isolated nodes keep `previous`.
pub fn propagate(
    graph: &Hypergraph,
    messages: ArrayView2<f64>,
    previous: ArrayView2<f64>,
) -> Array2<f64> {
    ConvOperator::undirected(graph).propagate(messages, previous)
}

pub fn residual_stack(graph: &Hypergraph, init: ArrayView2<f64>, layers: usize) -> Result<Array2<f64>> {
    ConvOperator::undirected(graph).forward(init, layers)
}

pub fn directed_conv(
    graph: &DirectedHypergraph,
    init: ArrayView2<f64>,
    layers: usize,
) -> Result<Array2<f64>> {
    ConvOperator::directed(graph).forward(init, layers)
}

/// Entries i.i.d. uniform on `[-1/√d, 1/√d]`.
pub fn init_embedding<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (dim as f64).sqrt();
    Array2::from_shape_simple_fn((rows, dim), || rng.gen_range(-bound..=bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::DirectedEdge;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn aggregate_mean_and_singleton() {
        let g = Hypergraph::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let v = array![[1.0, 2.0], [3.0, 4.0], [7.0, -1.0]];
        let m = aggregate(&g, v.view());
        assert_eq!(m, array![[2.0, 3.0], [7.0, -1.0]]);
    }

    #[test]
    fn propagate_cases() {
        let g = Hypergraph::new(3, vec![vec![0, 1], vec![1]]).unwrap();
        let msgs = array![[1.0, -2.0], [-1.0, 2.0]];
        let prev = array![[9.0, 9.0], [9.0, 9.0], [5.0, 6.0]];
        let out = propagate(&g, msgs.view(), prev.view());
        // node 0: single edge; node 1: m and -m; node 2: isolated.
        assert_eq!(out, array![[1.0, -2.0], [0.0, 0.0], [5.0, 6.0]]);
    }

    #[test]
    fn one_layer_readout() {
        let g = Hypergraph::new(2, vec![vec![0, 1]]).unwrap();
        let v = array![[1.0], [3.0]];
        let out = residual_stack(&g, v.view(), 1).unwrap();
        // v1 = [2, 2]; (2 v0 + v1) / 2
        assert_eq!(out, array![[2.0], [4.0]]);
    }

    #[test]
    fn singleton_edges_are_fixed_points() {
        let g = Hypergraph::new(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        let v = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let out = residual_stack(&g, v.view(), 1).unwrap();
        assert_eq!(out, &v * 1.5);
        let out3 = residual_stack(&g, v.view(), 3).unwrap();
        let expected = &v * (7.0 / 4.0);
        assert!((out3 - expected).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn directed_single_hop_and_swap() {
        let edge = |s: usize, t: usize| DirectedEdge {
            sources: vec![s],
            targets: vec![t],
            multiplicity: 1,
        };
        let g = DirectedHypergraph::new(2, vec![edge(0, 1)]).unwrap();
        let op = ConvOperator::directed(&g);
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        let st = op.run(v.view(), 1).unwrap();
        assert_eq!(st.nodes[1], array![[1.0, 0.0], [1.0, 0.0]]);

        let cyc = DirectedHypergraph::new(2, vec![edge(0, 1), edge(1, 0)]).unwrap();
        let st = ConvOperator::directed(&cyc).run(v.view(), 1).unwrap();
        assert_eq!(st.nodes[1], array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn zero_layers_rejected() {
        let g = Hypergraph::new(1, vec![vec![0]]).unwrap();
        assert!(residual_stack(&g, array![[1.0]].view(), 0).is_err());
    }

    #[test]
    fn tape_matches_plain_forward() {
        let g = Hypergraph::new(4, vec![vec![0, 1, 2], vec![2, 3]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = init_embedding(4, 5, &mut rng);
        let op = ConvOperator::undirected(&g);
        let plain = op.forward(init.view(), 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(init.clone());
        let y = op.forward_tape(&mut tape, x, 3);
        assert!((tape.value(y) - &plain).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn init_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = init_embedding(50, 16, &mut rng);
        assert!(e.iter().all(|&x| x.abs() <= 0.25));
        assert!(e.iter().any(|&x| x.abs() > 0.2));
    }
}
