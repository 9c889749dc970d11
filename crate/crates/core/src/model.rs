//! The full model: the nine graphs, routed embedding tables and gates, the
//! differentiable per-batch forward pass and the plain inference path.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::conv::{init_embedding, ConvOperator};
use crate::dataset::PreparedData;
use crate::error::{Error, Result};
use crate::fusion::{
    gate_fuse_user, lift_user_embeddings, lifting_operator, sum_fuse_poi, GateParams,
    ScenarioTables, ViewSelection, USER_VIEWS,
};
use crate::hypergraph::{
    build_transitional, collaborative_graphs, neighborhood_graph, temporal_graphs, user_poi_sets,
    DirectedHypergraph, Hypergraph, NodeKind, View, ViewKind,
};
use crate::ingest::Trajectory;
use crate::objective::{final_loss, LossBreakdown};
use crate::scenario::{CompositeScenario, Spatial};
use crate::sparse::{EmptyRow, RowMean};
use crate::splitter::{ParamId, ParamRegistry};

/// All hypergraphs of one training corpus plus their convolution operators.
/// With `merged` every sliced view collapses to a single graph.
#[derive(Clone, Debug)]
pub struct GraphSet {
    pub merged: bool,
    pub num_users: usize,
    pub num_pois: usize,
    graphs: BTreeMap<ViewKind, Hypergraph>,
    transitional: DirectedHypergraph,
    ops: BTreeMap<ViewKind, ConvOperator>,
    trans_op: ConvOperator,
    /// POIs inside each geographical slice.
    geo_covered: Vec<Arc<Vec<bool>>>,
    /// Per collaborative slice, the user ← POI lifting map.
    lifting: Vec<Arc<RowMean>>,
}

impl GraphSet {
    pub fn build(data: &PreparedData, cfg: &TrainConfig) -> Result<Self> {
        Self::build_with(data, cfg.geo_threshold_km, cfg.no_subgraph)
    }

    pub fn build_with(data: &PreparedData, geo_threshold_km: f64, merged: bool) -> Result<Self> {
        let train = &data.train;
        let labels = &data.train_labels;
        let (m, n) = (data.num_users(), data.num_pois());
        let slices = if merged { 1 } else { 2 };
        let ut = |i: usize| if merged { 0 } else { labels[i].user_type.index() };
        let tm = |i: usize| if merged { 0 } else { labels[i].temporal.index() };

        let mut graphs = BTreeMap::new();
        let kind = |view: View, s: usize| ViewKind {
            view,
            scenario_slice: Some(s),
        };
        for (s, g) in collaborative_graphs(train, n, slices, ut)?.into_iter().enumerate() {
            graphs.insert(kind(View::Collaborative, s), g);
        }
        for (s, g) in temporal_graphs(train, NodeKind::User, m, slices, tm)?.into_iter().enumerate() {
            graphs.insert(kind(View::TemporalUser, s), g);
        }
        for (s, g) in temporal_graphs(train, NodeKind::Poi, n, slices, tm)?.into_iter().enumerate() {
            graphs.insert(kind(View::TemporalPoi, s), g);
        }
        let mut geo_covered = Vec::new();
        if merged {
            let all: Vec<usize> = (0..n).collect();
            graphs.insert(
                kind(View::Geographical, 0),
                neighborhood_graph(&data.catalog, &all, geo_threshold_km)?,
            );
            geo_covered.push(Arc::new(vec![true; n]));
        } else {
            for region in [Spatial::Downtown, Spatial::Suburban] {
                let members: Vec<usize> =
                    (0..n).filter(|&p| data.poi_regions[p] == region).collect();
                let g = neighborhood_graph(&data.catalog, &members, geo_threshold_km)?;
                geo_covered.push(Arc::new(g.covered()));
                graphs.insert(kind(View::Geographical, region.index()), g);
            }
        }
        let transitional = build_transitional(train, n)?;
        let ops = graphs
            .iter()
            .map(|(k, g)| (*k, ConvOperator::undirected(g)))
            .collect();
        let trans_op = ConvOperator::directed(&transitional);
        let lifting = user_poi_sets(train, m, slices, ut)
            .into_iter()
            .map(|sets| Arc::new(lifting_operator(n, &sets)))
            .collect();
        Ok(GraphSet {
            merged,
            num_users: m,
            num_pois: n,
            graphs,
            transitional,
            ops,
            trans_op,
            geo_covered,
            lifting,
        })
    }

    pub fn slices(&self) -> usize {
        if self.merged {
            1
        } else {
            2
        }
    }

    pub fn graph(&self, view: View, slice: usize) -> &Hypergraph {
        &self.graphs[&ViewKind {
            view,
            scenario_slice: Some(slice),
        }]
    }

    pub fn transitional(&self) -> &DirectedHypergraph {
        &self.transitional
    }

    fn op(&self, view: View, slice: usize) -> &ConvOperator {
        &self.ops[&ViewKind {
            view,
            scenario_slice: Some(slice),
        }]
    }

    pub fn lifting(&self, slice: usize) -> &Arc<RowMean> {
        &self.lifting[slice]
    }

    pub fn geo_covered(&self, slice: usize) -> &Arc<Vec<bool>> {
        &self.geo_covered[slice]
    }

    /// Writes one file per graph (`<view>_<slice>.tsv`, `transitional.tsv`).
    pub fn export(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::new();
        for (k, g) in &self.graphs {
            let name = if self.merged {
                format!("{}.tsv", k.view.name())
            } else {
                format!("{}.tsv", k.file_stem())
            };
            g.write_tsv(&dir.join(&name))?;
            names.push(name);
        }
        self.transitional.write_tsv(&dir.join("transitional.tsv"))?;
        names.push("transitional.tsv".into());
        Ok(names)
    }
}

/// Parameter handles: one embedding table per (sliced) graph plus four gates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamIds {
    pub collaborative: Vec<ParamId>,
    pub temporal_user: Vec<ParamId>,
    pub temporal_poi: Vec<ParamId>,
    pub geographical: Vec<ParamId>,
    pub transitional: ParamId,
    /// In [`USER_VIEWS`] order.
    pub gates: [ParamId; 4],
}

pub fn table_name(view: View, slice: Option<usize>, merged: bool) -> String {
    match (slice, merged) {
        (Some(s), false) => format!("emb.{}.{}", view.name(), view.slice_name(s)),
        _ => format!("emb.{}", view.name()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub registry: ParamRegistry,
    pub ids: ParamIds,
    pub dim: usize,
    pub layers: usize,
    pub merged: bool,
}

/// Everything recorded for one scenario batch.
pub struct ForwardPass {
    pub tape: Tape,
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub scores: Var,
    leaves: Vec<(ParamId, usize, Var)>,
}

impl ForwardPass {
    /// Gradients of the batch loss per (parameter, copy) reached by the pass.
    pub fn gradients(&self) -> Vec<(ParamId, usize, Array2<f64>)> {
        let grads = self.tape.backward(self.loss);
        self.leaves
            .iter()
            .filter_map(|&(id, copy, v)| grads.get(v).map(|g| (id, copy, g.clone())))
            .collect()
    }
}

impl Model {
    pub fn init(graphs: &GraphSet, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let (m, n) = (graphs.num_users, graphs.num_pois);
        let merged = graphs.merged;
        let mut registry = ParamRegistry::new();
        let mut tables = |view: View, rows: usize, rng: &mut ChaCha8Rng| -> Vec<ParamId> {
            (0..graphs.slices())
                .map(|s| {
                    registry.register(&table_name(view, Some(s), merged), init_embedding(rows, d, rng))
                })
                .collect()
        };
        let collaborative = tables(View::Collaborative, n, &mut rng);
        let temporal_user = tables(View::TemporalUser, m, &mut rng);
        let temporal_poi = tables(View::TemporalPoi, n, &mut rng);
        let geographical = tables(View::Geographical, n, &mut rng);
        let transitional =
            registry.register(&table_name(View::Transitional, None, merged), init_embedding(n, d, &mut rng));
        let gates = USER_VIEWS.map(|v| registry.register(&format!("gate.{}", v.name()), init_embedding(1, d, &mut rng)));
        Model {
            registry,
            ids: ParamIds {
                collaborative,
                temporal_user,
                temporal_poi,
                geographical,
                transitional,
                gates,
            },
            dim: d,
            layers: cfg.layers,
            merged,
        }
    }

    fn selection(&self, scenario: CompositeScenario) -> ViewSelection {
        ViewSelection::for_label(&scenario.label(), self.merged)
    }

    /// Differentiable forward pass of one single-scenario batch.
    pub fn forward_batch(
        &self,
        graphs: &GraphSet,
        scenario: CompositeScenario,
        batch: &[&Trajectory],
        lambda: f64,
        tau: f64,
    ) -> Result<ForwardPass> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let s = scenario.id();
        let sel = self.selection(scenario);
        let n = graphs.num_pois;
        let mut tape = Tape::new();
        let mut leaves = Vec::new();
        let mut leaf = |tape: &mut Tape, id: ParamId| {
            let copy = self.registry.copy_index(id, s);
            let v = tape.leaf(self.registry.route_id(id, s).clone());
            leaves.push((id, copy, v));
            v
        };

        let collab_t = leaf(&mut tape, self.ids.collaborative[sel.collaborative]);
        let tu_t = leaf(&mut tape, self.ids.temporal_user[sel.temporal]);
        let tp_t = leaf(&mut tape, self.ids.temporal_poi[sel.temporal]);
        let geo_t = leaf(&mut tape, self.ids.geographical[sel.geographical]);
        let trans_t = leaf(&mut tape, self.ids.transitional);
        let gates: Vec<Var> = self.ids.gates.iter().map(|&g| leaf(&mut tape, g)).collect();

        let l = self.layers;
        let collab = graphs.op(View::Collaborative, sel.collaborative).forward_tape(&mut tape, collab_t, l);
        let tem_user = graphs.op(View::TemporalUser, sel.temporal).forward_tape(&mut tape, tu_t, l);
        let tem_poi = graphs.op(View::TemporalPoi, sel.temporal).forward_tape(&mut tape, tp_t, l);
        let geo_conv = graphs.op(View::Geographical, sel.geographical).forward_tape(&mut tape, geo_t, l);
        let geo = if graphs.merged {
            geo_conv
        } else {
            tape.select(graphs.geo_covered(sel.geographical), geo_conv, geo_t)
        };
        let trans = graphs.trans_op.forward_tape(&mut tape, trans_t, l);

        // Batch users and their lifted views.
        let mut users: Vec<usize> = batch.iter().map(|t| t.user_id).collect();
        users.sort_unstable();
        users.dedup();
        let lifting = graphs.lifting(sel.collaborative);
        let batch_lift = Arc::new(RowMean::new(
            n,
            users.iter().map(|&u| lifting.rows()[u].clone()).collect(),
            EmptyRow::Zero,
        ));
        let e_tem = tape.gather(tem_user, users.clone());
        let e_c = tape.mean(&batch_lift, collab, None);
        let e_t = tape.mean(&batch_lift, trans, None);
        let e_g = tape.mean(&batch_lift, geo, None);
        let user_views = [e_tem, e_c, e_t, e_g];

        let mut gated = Vec::with_capacity(4);
        for (x, &e) in user_views.iter().enumerate() {
            let logit = tape.row_dot(e, gates[x]);
            let lam = tape.sigmoid(logit);
            gated.push((1.0, tape.row_scale(e, lam)));
        }
        let fused_users = tape.lin(gated);
        let fused_pois = tape.lin(vec![(1.0, collab), (1.0, trans), (1.0, geo), (1.0, tem_poi)]);

        let pooling = Arc::new(RowMean::new(
            n,
            batch.iter().map(|t| t.input_pois()).collect(),
            EmptyRow::Zero,
        ));
        let input_mean = tape.mean(&pooling, fused_pois, None);
        let pos: Vec<usize> = batch
            .iter()
            .map(|t| users.binary_search(&t.user_id).expect("user present"))
            .collect();
        let user_rows = tape.gather(fused_users, pos);
        let repr = tape.add(user_rows, input_mean);
        let scores = tape.matmul_t(repr, fused_pois);
        let targets: Vec<usize> = batch.iter().map(|t| t.target().poi_id).collect();
        let rec = tape.softmax_ce(scores, &targets)?;

        // Contrastive pairs over {Tem, C, G, T} for users and the analogous
        // four POI views over the batch's input POIs.
        let con_user_views = [e_tem, e_c, e_g, e_t];
        let mut pois: Vec<usize> = batch.iter().flat_map(|t| t.input_pois()).collect();
        pois.sort_unstable();
        pois.dedup();
        let con_poi_views = [
            tape.gather(tem_poi, pois.clone()),
            tape.gather(collab, pois.clone()),
            tape.gather(geo, pois.clone()),
            tape.gather(trans, pois),
        ];
        let con_user = contrastive_on_tape(&mut tape, &con_user_views, tau);
        let con_poi = contrastive_on_tape(&mut tape, &con_poi_views, tau);
        let loss = tape.lin(vec![(lambda, con_user), (lambda, con_poi), (1.0 - lambda, rec)]);
        let breakdown = final_loss(tape.scalar(con_user), tape.scalar(con_poi), tape.scalar(rec), lambda, s)?;
        if !breakdown.l_final.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {} in scenario {s}",
                breakdown.l_final
            )));
        }
        Ok(ForwardPass {
            tape,
            loss,
            breakdown,
            scores,
            leaves,
        })
    }

    /// Fused user and POI tables as seen by `scenario`, without a tape.
    pub fn scenario_tables(&self, graphs: &GraphSet, scenario: CompositeScenario) -> Result<ScenarioTables> {
        let s = scenario.id();
        let sel = self.selection(scenario);
        let l = self.layers;
        let table = |id: ParamId| self.registry.route_id(id, s);

        let collab = graphs
            .op(View::Collaborative, sel.collaborative)
            .forward(table(self.ids.collaborative[sel.collaborative]).view(), l)?;
        let tem_user = graphs
            .op(View::TemporalUser, sel.temporal)
            .forward(table(self.ids.temporal_user[sel.temporal]).view(), l)?;
        let tem_poi = graphs
            .op(View::TemporalPoi, sel.temporal)
            .forward(table(self.ids.temporal_poi[sel.temporal]).view(), l)?;
        let geo_init = table(self.ids.geographical[sel.geographical]);
        let mut geo = graphs
            .op(View::Geographical, sel.geographical)
            .forward(geo_init.view(), l)?;
        if !graphs.merged {
            for (p, &inside) in graphs.geo_covered(sel.geographical).iter().enumerate() {
                if !inside {
                    geo.row_mut(p).assign(&geo_init.row(p));
                }
            }
        }
        let trans = graphs.trans_op.forward(table(self.ids.transitional).view(), l)?;

        let lifting = graphs.lifting(sel.collaborative);
        let e_c = lift_user_embeddings(collab.view(), lifting);
        let e_t = lift_user_embeddings(trans.view(), lifting);
        let e_g = lift_user_embeddings(geo.view(), lifting);
        let gates = GateParams {
            weights: self.ids.gates.map(|g| table(g).index_axis(Axis(0), 0).to_owned()),
        };
        let fused_users = gate_fuse_user(&[tem_user.view(), e_c.view(), e_t.view(), e_g.view()], &gates)?;
        let fused_pois = sum_fuse_poi(&[collab.view(), trans.view(), geo.view(), tem_poi.view()])?;
        Ok(ScenarioTables {
            fused_users,
            fused_pois,
        })
    }

    /// Tables for all eight scenarios, indexed by composite id.
    pub fn all_scenario_tables(&self, graphs: &GraphSet) -> Result<Vec<ScenarioTables>> {
        CompositeScenario::all()
            .map(|s| self.scenario_tables(graphs, s))
            .collect()
    }

    /// Mark every parameter except those named as frozen.
    pub fn freeze_all_except(&mut self, trainable: &[&str]) -> Result<()> {
        for name in trainable {
            self.registry.id(name)?;
        }
        let ids: Vec<ParamId> = self.registry.ids().collect();
        for id in ids {
            let keep = trainable.contains(&self.registry.name(id));
            self.registry.set_trainable(id, keep);
        }
        Ok(())
    }
}

fn contrastive_on_tape(tape: &mut Tape, views: &[Var; 4], tau: f64) -> Var {
    let mut terms = Vec::with_capacity(6);
    for i in 0..4 {
        for j in i + 1..4 {
            terms.push((1.0, tape.info_nce(views[i], views[j], tau)));
        }
    }
    tape.lin(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{scenario_corpus, ScenarioCorpusParams};

    fn small() -> (PreparedData, TrainConfig) {
        let cfg = TrainConfig {
            dim: 6,
            layers: 2,
            ..TrainConfig::default()
        };
        let params = ScenarioCorpusParams {
            users: 12,
            pois: 20,
            trajectories_per_user: 6,
            hotels: 2,
            ..Default::default()
        };
        (scenario_corpus(&params).prepare(&cfg).unwrap(), cfg)
    }

    fn batch_of(data: &PreparedData, s: usize) -> Vec<&Trajectory> {
        data.train
            .iter()
            .zip(&data.train_labels)
            .filter(|(_, l)| l.composite().id() == s)
            .map(|(t, _)| t)
            .take(5)
            .collect()
    }

    #[test]
    fn tape_scores_match_inference_tables() {
        let (data, cfg) = small();
        for merged in [false, true] {
            let graphs = GraphSet::build_with(&data, cfg.geo_threshold_km, merged).unwrap();
            let model = Model::init(&graphs, &cfg);
            for s in CompositeScenario::all() {
                let batch = batch_of(&data, s.id());
                if batch.is_empty() {
                    continue;
                }
                let pass = model.forward_batch(&graphs, s, &batch, 0.1, 0.1).unwrap();
                let tables = model.scenario_tables(&graphs, s).unwrap();
                let scores = pass.tape.value(pass.scores);
                for (r, t) in batch.iter().enumerate() {
                    let plain = tables.score_candidates(t).unwrap();
                    for (a, b) in scores.row(r).iter().zip(plain.iter()) {
                        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn graph_set_has_nine_graphs() {
        let (data, cfg) = small();
        let graphs = GraphSet::build(&data, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let names = graphs.export(dir.path()).unwrap();
        assert_eq!(names.len(), 9);
        let merged = GraphSet::build_with(&data, 2.5, true).unwrap();
        assert_eq!(merged.export(dir.path().join("m").as_path()).unwrap().len(), 5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (data, cfg) = small();
        let graphs = GraphSet::build(&data, &cfg).unwrap();
        let mut model = Model::init(&graphs, &cfg);
        let s = data.train_labels[0].composite();
        let batch = batch_of(&data, s.id());
        let pass = model.forward_batch(&graphs, s, &batch, 0.3, 0.5).unwrap();
        let grads = pass.gradients();
        let h = 1e-5;
        for (id, copy, g) in grads {
            for &(r, c) in &[(0usize, 0usize), (1, 3)] {
                if r >= g.nrows() {
                    continue;
                }
                let orig = model.registry.copy_mut(id, copy)[[r, c]];
                let mut eval = |v: f64| {
                    model.registry.copy_mut(id, copy)[[r, c]] = v;
                    let p = model.forward_batch(&graphs, s, &batch, 0.3, 0.5).unwrap();
                    p.breakdown.l_final
                };
                let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
                model.registry.copy_mut(id, copy)[[r, c]] = orig;
                let ana = g[[r, c]];
                let err = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
                assert!(err < 1e-4, "{} [{r},{c}]: {ana} vs {num}", model.registry.name(id));
            }
        }
    }
}
