//! Training loop: single-scenario batches interleaved round-robin, Adam
//! updates of routed parameters, windowed split checkpoints and early
//! stopping on validation Acc@5.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::dataset::PreparedData;
use crate::error::{Error, Result};
use crate::evaluator::{predict_model, slice_report};
use crate::ingest::Trajectory;
use crate::model::{GraphSet, Model};
use crate::objective::LossBreakdown;
use crate::optim::Adam;
use crate::scenario::{CompositeScenario, ScenarioLabel, NUM_SCENARIOS};
use crate::splitter::{detect_and_split, ScenarioGradientBuffer, SplitRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss per composite scenario; `None` for scenarios without batches.
    pub scenario_loss: Vec<Option<f64>>,
    /// Mean loss over every batch of the epoch.
    pub combined_loss: f64,
    pub val_acc5: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub splits: Vec<SplitRecord>,
    /// Global step at which each split checkpoint ran.
    pub checkpoints: Vec<usize>,
    /// Epoch (1-based) of the retained model; `None` without validation data.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,combined_loss,val_acc5");
        for s in 0..NUM_SCENARIOS {
            let _ = write!(out, ",loss_s{s}");
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let _ = write!(out, "{},{},{}", e.epoch, e.combined_loss, opt(e.val_acc5));
            for l in &e.scenario_loss {
                let _ = write!(out, ",{}", opt(*l));
            }
            out.push('\n');
        }
        out
    }

    pub fn steps_csv(&self) -> String {
        let mut out = String::from("epoch,step,scenario,l_con_user,l_con_poi,l_rec,l_final\n");
        for s in &self.steps {
            let l = &s.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.epoch, s.step, l.scenario_id, l.l_con_user, l.l_con_poi, l.l_rec, l.l_final
            );
        }
        out
    }

    pub fn splits_tsv(&self) -> String {
        self.splits.iter().map(|r| r.to_log_line() + "\n").collect()
    }

    /// Per-epoch loss trace of one scenario.
    pub fn scenario_trace(&self, scenario: usize) -> Vec<Option<f64>> {
        self.epochs.iter().map(|e| e.scenario_loss[scenario]).collect()
    }
}

/// Earliest `len - floor(val_ratio * len)` training windows of every user
/// train; the rest validate.
pub fn validation_split(train: &[Trajectory], val_ratio: f64) -> (Vec<usize>, Vec<usize>) {
    let mut per_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in train.iter().enumerate() {
        per_user.entry(t.user_id).or_default().push(i);
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (_, mut idx) in per_user {
        idx.sort_by_key(|&i| (train[i].window_start, train[i].id));
        let n_val = (val_ratio * idx.len() as f64 + 1e-9).floor() as usize;
        let cut = idx.len() - n_val.min(idx.len());
        fit.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

/// One epoch's batch schedule: each scenario's trajectories shuffled and
/// chunked, then interleaved round-robin by scenario id.
pub fn epoch_batches(
    groups: &[Vec<usize>],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, Vec<usize>)> {
    let chunked: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.shuffle(rng);
            g.chunks(batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect();
    let rounds = chunked.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for (s, batches) in chunked.iter().enumerate() {
            if let Some(b) = batches.get(r) {
                out.push((s, b.clone()));
            }
        }
    }
    out
}

pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Adam,
    pub history: History,
}

pub struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub data: &'a PreparedData,
    pub graphs: &'a GraphSet,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, data: &'a PreparedData, graphs: &'a GraphSet) -> Self {
        Trainer { cfg, data, graphs }
    }

    pub fn train(&self, model: Model) -> Result<TrainOutcome> {
        self.cfg.validate()?;
        let cfg = self.cfg;
        let mut model = model;
        let mut optimizer = Adam::new(cfg.adam());
        let mut history = History::default();
        if cfg.epochs == 0 {
            return Ok(TrainOutcome {
                model,
                optimizer,
                history,
            });
        }

        let train = &self.data.train;
        let (fit, val) = validation_split(train, cfg.val_ratio);
        let mut groups = vec![Vec::new(); NUM_SCENARIOS];
        for &i in &fit {
            groups[self.data.train_labels[i].composite().id()].push(i);
        }
        for (s, g) in groups.iter().enumerate() {
            if g.is_empty() {
                log::warn!(
                    "scenario {} has no training trajectories; skipped",
                    CompositeScenario::new(s)?
                );
            }
        }
        let val_trajs: Vec<Trajectory> = val.iter().map(|&i| train[i].clone()).collect();
        let val_labels: Vec<ScenarioLabel> = val.iter().map(|&i| self.data.train_labels[i]).collect();

        let mut buffer = ScenarioGradientBuffer::new();
        let mut since_checkpoint = 0usize;
        let mut step = 0usize;
        let mut best: Option<(f64, Model, Adam)> = None;
        let mut stale = 0usize;

        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let schedule = epoch_batches(&groups, cfg.batch_size, &mut rng);
            let mut sums = [(0.0, 0usize); NUM_SCENARIOS];
            let mut total = 0.0;
            let recording = !cfg.no_split && epoch >= cfg.warmup_epochs;

            for (s, idx) in &schedule {
                let scenario = CompositeScenario::new(*s)?;
                let batch: Vec<&Trajectory> = idx.iter().map(|&i| &train[i]).collect();
                let pass = model
                    .forward_batch(self.graphs, scenario, &batch, cfg.lambda, cfg.tau)
                    .map_err(|e| match e {
                        Error::NonFinite(m) => {
                            Error::NonFinite(format!("{m} at epoch {} step {step}", epoch + 1))
                        }
                        other => other,
                    })?;
                let grads = pass.gradients();
                for (id, copy, g) in &grads {
                    if g.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!(
                            "gradient of {} at epoch {} step {step}",
                            model.registry.name(*id),
                            epoch + 1
                        )));
                    }
                    if !model.registry.slot(*id).trainable {
                        continue;
                    }
                    if recording && model.registry.is_shared(*id) {
                        buffer.record(*id, *s, g)?;
                    }
                    optimizer.step(*id, *copy, model.registry.copy_mut(*id, *copy), g);
                }
                let l = pass.breakdown;
                sums[*s].0 += l.l_final;
                sums[*s].1 += 1;
                total += l.l_final;
                history.steps.push(StepRecord {
                    epoch: epoch + 1,
                    step,
                    loss: l,
                });
                step += 1;

                if recording {
                    since_checkpoint += 1;
                    if since_checkpoint == cfg.sim_window {
                        history.checkpoints.push(step);
                        let records = detect_and_split(
                            &mut model.registry,
                            &buffer,
                            cfg.split_threshold,
                            epoch + 1,
                            step,
                        )?;
                        for r in &records {
                            optimizer.on_split(model.registry.id(&r.param)?);
                        }
                        history.splits.extend(records);
                        buffer.reset();
                        since_checkpoint = 0;
                    }
                }
            }

            let val_acc5 = if val_trajs.is_empty() {
                None
            } else {
                let preds = predict_model(&model, self.graphs, &val_trajs, &val_labels)?;
                slice_report(&preds).overall().map(|m| m.acc5)
            };
            let record = EpochRecord {
                epoch: epoch + 1,
                scenario_loss: sums
                    .iter()
                    .map(|&(sum, n)| (n > 0).then(|| sum / n as f64))
                    .collect(),
                combined_loss: if schedule.is_empty() {
                    0.0
                } else {
                    total / schedule.len() as f64
                },
                val_acc5,
            };
            log::info!(
                "epoch {}: loss {:.5}, val acc@5 {}",
                record.epoch,
                record.combined_loss,
                val_acc5.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
            );
            history.epochs.push(record);

            if let Some(acc) = val_acc5 {
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, model.clone(), optimizer.clone()));
                    history.best_epoch = Some(epoch + 1);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        log::info!("early stop after epoch {}", epoch + 1);
                        break;
                    }
                }
            }
        }

        if let Some((_, m, o)) = best {
            model = m;
            optimizer = o;
        }
        Ok(TrainOutcome {
            model,
            optimizer,
            history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CheckIn;

    fn traj(id: usize, user: usize, start: i64) -> Trajectory {
        let c = |ts| CheckIn {
            user_id: user,
            poi_id: 0,
            timestamp: ts,
            tz_offset_min: 0,
            lat: 0.0,
            lon: 0.0,
            category: String::new(),
        };
        Trajectory {
            id,
            user_id: user,
            checkins: vec![c(start), c(start + 60)],
            window_start: start,
        }
    }

    #[test]
    fn validation_takes_latest_tenth_per_user() {
        let mut t: Vec<Trajectory> = (0..10).map(|i| traj(i, 0, 1000 - i as i64)).collect();
        t.extend((10..15).map(|i| traj(i, 1, i as i64)));
        let (fit, val) = validation_split(&t, 0.1);
        // user 0: earliest window is id 9 ... latest is id 0
        assert_eq!(val, vec![0]);
        assert_eq!(fit.len(), 14);
        let (fit, val) = validation_split(&t, 0.0);
        assert!(val.is_empty());
        assert_eq!(fit.len(), 15);
    }

    #[test]
    fn batches_are_pure_and_interleaved() {
        let groups = vec![(0..5).collect(), vec![], (10..13).collect()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = epoch_batches(&groups, 2, &mut rng);
        let order: Vec<usize> = b.iter().map(|(s, _)| *s).collect();
        assert_eq!(order, vec![0, 2, 0, 2, 0]);
        for (s, idx) in &b {
            assert!(idx.iter().all(|i| groups[*s].contains(i)));
            assert!(idx.len() <= 2);
        }
        let mut all: Vec<usize> = b.into_iter().flat_map(|(_, i)| i).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4, 10, 11, 12]);
    }
}
