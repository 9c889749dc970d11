//! Adaptive parameter splitting.
//!
//! Every trainable tensor starts shared by all scenarios. Per-scenario
//! gradients are buffered over a window of batches; at a checkpoint the
//! buffered means are normalized and compared pairwise. A still-shared tensor
//! whose most conflicting pair falls below the threshold is duplicated once:
//! scenarios are clustered around that pair and one cluster is routed to the
//! copy from then on, in both the forward and backward pass.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::NUM_SCENARIOS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitState {
    Shared,
    /// Copy used by each scenario: 0 is the original tensor, 1 the duplicate.
    Split { copy_map: [usize; NUM_SCENARIOS] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub copies: Vec<Array2<f64>>,
    pub state: SplitState,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamRegistry {
    slots: Vec<ParamSlot>,
    index: BTreeMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.slots.push(ParamSlot {
            name: name.to_string(),
            copies: vec![value],
            state: SplitState::Shared,
            trainable: true,
        });
        self.index.insert(name.to_string(), self.slots.len() - 1);
        ParamId(self.slots.len() - 1)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn slot(&self, id: ParamId) -> &ParamSlot {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut ParamSlot {
        &mut self.slots[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn is_shared(&self, id: ParamId) -> bool {
        self.slots[id.0].state == SplitState::Shared
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.slots[id.0].trainable = trainable;
    }

    /// Copy index a scenario reads and writes.
    pub fn copy_index(&self, id: ParamId, scenario: usize) -> usize {
        match &self.slots[id.0].state {
            SplitState::Shared => 0,
            SplitState::Split { copy_map } => copy_map[scenario],
        }
    }

    pub fn route(&self, name: &str, scenario: usize) -> Result<&Array2<f64>> {
        let id = self.id(name)?;
        Ok(self.route_id(id, scenario))
    }

    pub fn route_id(&self, id: ParamId, scenario: usize) -> &Array2<f64> {
        &self.slots[id.0].copies[self.copy_index(id, scenario)]
    }

    pub fn copy_mut(&mut self, id: ParamId, copy: usize) -> &mut Array2<f64> {
        &mut self.slots[id.0].copies[copy]
    }

    /// Scalar count over original tensors.
    pub fn base_count(&self) -> usize {
        self.slots.iter().map(|s| s.copies[0].len()).sum()
    }

    /// Scalar count over all copies.
    pub fn total_count(&self) -> usize {
        self.slots
            .iter()
            .map(|s| s.copies.iter().map(Array2::len).sum::<usize>())
            .sum()
    }

    /// Duplicates a shared tensor; scenarios with `copy_map[s] == 1` move to the copy.
    pub fn split(&mut self, id: ParamId, copy_map: [usize; NUM_SCENARIOS]) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if slot.state != SplitState::Shared {
            return Err(Error::Config(format!("parameter {} already split", slot.name)));
        }
        let dup = slot.copies[0].clone();
        slot.copies.push(dup);
        slot.state = SplitState::Split { copy_map };
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub param: String,
    pub epoch: usize,
    pub step: usize,
    pub min_similarity: f64,
    /// Scenarios that keep the original tensor.
    pub group_a: Vec<usize>,
    /// Scenarios routed to the duplicate.
    pub group_b: Vec<usize>,
}

impl SplitRecord {
    pub fn to_log_line(&self) -> String {
        let join = |g: &[usize]| g.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.param,
            self.min_similarity,
            join(&self.group_a),
            join(&self.group_b)
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Accumulator {
    sum: Option<Array2<f64>>,
    count: usize,
}

/// Windowed per-(parameter, scenario) gradient sums.
#[derive(Clone, Debug, Default)]
pub struct ScenarioGradientBuffer {
    acc: BTreeMap<(ParamId, usize), Accumulator>,
}

impl ScenarioGradientBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, id: ParamId, scenario: usize, gradient: &Array2<f64>) -> Result<()> {
        let a = self.acc.entry((id, scenario)).or_default();
        match &mut a.sum {
            Some(sum) if sum.dim() != gradient.dim() => {
                return Err(Error::Shape(format!(
                    "gradient {:?} does not match buffered {:?}",
                    gradient.dim(),
                    sum.dim()
                )))
            }
            Some(sum) => *sum += gradient,
            None => a.sum = Some(gradient.clone()),
        }
        a.count += 1;
        Ok(())
    }

    pub fn count(&self, id: ParamId, scenario: usize) -> usize {
        self.acc.get(&(id, scenario)).map_or(0, |a| a.count)
    }

    pub fn mean(&self, id: ParamId, scenario: usize) -> Option<Array2<f64>> {
        let a = self.acc.get(&(id, scenario))?;
        a.sum.as_ref().map(|s| s / a.count as f64)
    }

    pub fn means(&self, id: ParamId) -> Vec<Option<Array2<f64>>> {
        (0..NUM_SCENARIOS).map(|s| self.mean(id, s)).collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.acc.keys().map(|&(id, _)| id).collect();
        ids.dedup();
        ids
    }

    pub fn reset(&mut self) {
        self.acc.clear();
    }
}

/// Symmetric similarity matrix; `None` marks scenarios without a usable gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    values: Vec<Vec<Option<f64>>>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.values[i][i].is_some()
    }

    /// Most conflicting active pair, ties going to the smallest `(i, j)`.
    pub fn min_pair(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.size() {
            for j in i + 1..self.size() {
                if let Some(s) = self.values[i][j] {
                    if best.is_none_or(|(_, _, b)| s < b) {
                        best = Some((i, j, s));
                    }
                }
            }
        }
        best
    }
}

/// Cosine similarity of the flattened mean gradients. Missing or zero-norm
/// gradients exclude their scenario.
pub fn pairwise_similarity(means: &[Option<Array2<f64>>]) -> SimilarityMatrix {
    let units: Vec<Option<Vec<f64>>> = means
        .iter()
        .map(|m| {
            let m = m.as_ref()?;
            let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0 && norm.is_finite()).then(|| m.iter().map(|v| v / norm).collect())
        })
        .collect();
    let n = means.len();
    let mut values = vec![vec![None; n]; n];
    for i in 0..n {
        let Some(a) = &units[i] else { continue };
        values[i][i] = Some(1.0);
        for j in i + 1..n {
            let Some(b) = &units[j] else { continue };
            let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            values[i][j] = Some(s);
            values[j][i] = Some(s);
        }
    }
    SimilarityMatrix { values }
}

/// Result of clustering one conflicting parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Bipartition {
    pub seeds: (usize, usize),
    pub min_similarity: f64,
    /// `true` for scenarios routed to the duplicate.
    pub to_copy: Vec<bool>,
}

/// Seeds are the most conflicting pair; every other active scenario joins
/// the seed it is more similar to (ties to the first seed), inactive ones
/// stay with the first seed. `None` when no pair is below `threshold`.
pub fn bipartition(sim: &SimilarityMatrix, threshold: f64) -> Option<Bipartition> {
    let (i, j, s) = sim.min_pair()?;
    if s >= threshold {
        return None;
    }
    let to_copy = (0..sim.size())
        .map(|k| {
            if k == j {
                true
            } else if k == i || !sim.is_active(k) {
                false
            } else {
                let si = sim.get(k, i).expect("active pair");
                let sj = sim.get(k, j).expect("active pair");
                sj > si
            }
        })
        .collect();
    Some(Bipartition {
        seeds: (i, j),
        min_similarity: s,
        to_copy,
    })
}

/// Splits every still-shared parameter whose buffered gradients conflict.
pub fn detect_and_split(
    registry: &mut ParamRegistry,
    buffers: &ScenarioGradientBuffer,
    threshold: f64,
    epoch: usize,
    step: usize,
) -> Result<Vec<SplitRecord>> {
    let mut records = Vec::new();
    for id in buffers.params() {
        if !registry.is_shared(id) || !registry.slot(id).trainable {
            continue;
        }
        let sim = pairwise_similarity(&buffers.means(id));
        let Some(part) = bipartition(&sim, threshold) else {
            continue;
        };
        let mut copy_map = [0usize; NUM_SCENARIOS];
        for (s, &c) in part.to_copy.iter().enumerate().take(NUM_SCENARIOS) {
            copy_map[s] = usize::from(c);
        }
        registry.split(id, copy_map)?;
        let (group_b, group_a): (Vec<usize>, Vec<usize>) =
            (0..NUM_SCENARIOS).partition(|&s| copy_map[s] == 1);
        log::info!(
            "split {} at epoch {epoch} step {step}: min similarity {:.4}, groups {:?} / {:?}",
            registry.name(id),
            part.min_similarity,
            group_a,
            group_b
        );
        records.push(SplitRecord {
            param: registry.name(id).to_string(),
            epoch,
            step,
            min_similarity: part.min_similarity,
            group_a,
            group_b,
        });
    }
    Ok(records)
}
