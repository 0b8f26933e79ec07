//! Observability masks, topology-change variants and variant splits.

use crate::grid_model::{BranchKind, GridTopology};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("degradation level {level} exceeds mask fraction {fraction}")]
    LevelAboveMask { level: f64, fraction: f64 },
    #[error("need at least 2 variants to split, got {0}")]
    TooFewVariants(usize),
    #[error("split ratio {0} outside (0, 1)")]
    BadRatio(f64),
}

/// `round(x)` with halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Which nodes carry a voltage measurement.
///
/// `fraction` applies to the non-anchor nodes. The anchor (the slack node,
/// when set) is always observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityMask {
    pub observed: Vec<bool>,
    pub fraction: f64,
    pub anchor: Option<usize>,
}

impl ObservabilityMask {
    pub fn full(node_count: usize) -> Self {
        Self {
            observed: vec![true; node_count],
            fraction: 1.0,
            anchor: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(i, _)| i)
    }

    pub fn is_empty(&self) -> bool {
        !self.observed.iter().any(|&o| o)
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.observed.len() == other.observed.len()
            && self
                .observed
                .iter()
                .zip(&other.observed)
                .all(|(&a, &b)| !a || b)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut observed = vec![false; self.observed.len()];
        for (i, &o) in self.observed.iter().enumerate() {
            observed[perm[i]] = o;
        }
        Self {
            observed,
            fraction: self.fraction,
            anchor: self.anchor.map(|a| perm[a]),
        }
    }
}

/// Uniformly random subset of `round(fraction × node_count)` nodes.
pub fn sample_observability_mask(
    node_count: usize,
    fraction: f64,
    seed: u64,
) -> Result<ObservabilityMask, ScenarioError> {
    sample_anchored_mask(node_count, fraction, None, seed)
}

/// Like [`sample_observability_mask`] but with `anchor` always observed and
/// `round(fraction × (node_count − 1))` further nodes drawn from the rest.
pub fn sample_anchored_mask(
    node_count: usize,
    fraction: f64,
    anchor: Option<usize>,
    seed: u64,
) -> Result<ObservabilityMask, ScenarioError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(ScenarioError::BadFraction(fraction));
    }
    let mut candidates: Vec<usize> = (0..node_count).filter(|&i| Some(i) != anchor).collect();
    let take = round_half_up(fraction * candidates.len() as f64).min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut observed = vec![false; node_count];
    for &i in &candidates[..take] {
        observed[i] = true;
    }
    if let Some(a) = anchor {
        observed[a] = true;
    }
    Ok(ObservabilityMask {
        observed,
        fraction,
        anchor,
    })
}

/// Drops observed nodes uniformly at random until `level` remains.
///
/// The removal order is a seeded permutation of the observed nodes and the
/// kept set is its prefix, so for one seed lower levels always give subsets
/// of higher levels.
pub fn degrade_observability(
    mask: &ObservabilityMask,
    level: f64,
    seed: u64,
) -> Result<ObservabilityMask, ScenarioError> {
    if !(0.0..=1.0).contains(&level) {
        return Err(ScenarioError::BadFraction(level));
    }
    if level > mask.fraction + 1e-12 {
        return Err(ScenarioError::LevelAboveMask {
            level,
            fraction: mask.fraction,
        });
    }
    let pool = mask.node_count() - usize::from(mask.anchor.is_some());
    let mut observed: Vec<usize> = mask
        .observed_nodes()
        .filter(|&i| Some(i) != mask.anchor)
        .collect();
    let keep = round_half_up(level * pool as f64).min(observed.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    observed.shuffle(&mut rng);
    let mut degraded = vec![false; mask.node_count()];
    for &i in &observed[..keep] {
        degraded[i] = true;
    }
    if let Some(a) = mask.anchor {
        degraded[a] = true;
    }
    Ok(ObservabilityMask {
        observed: degraded,
        fraction: level,
        anchor: mask.anchor,
    })
}

/// A base topology with one line taken out of service and one open loop
/// switch closed to resupply the cut-off part.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyVariant {
    pub variant_id: String,
    pub disabled_line_id: u32,
    pub closed_switch_id: u32,
    pub topology: GridTopology,
}

/// Entry of the variant manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantRecord {
    pub variant_id: String,
    pub disabled_line_id: u32,
    pub closed_switch_id: u32,
}

impl From<&TopologyVariant> for VariantRecord {
    fn from(v: &TopologyVariant) -> Self {
        Self {
            variant_id: v.variant_id.clone(),
            disabled_line_id: v.disabled_line_id,
            closed_switch_id: v.closed_switch_id,
        }
    }
}

impl VariantRecord {
    /// Re-applies the recorded flips to `base`.
    pub fn apply(
        &self,
        base: &GridTopology,
    ) -> Result<TopologyVariant, crate::grid_model::GridError> {
        let mut topology = base.clone();
        for br in &mut topology.branches {
            if br.id == self.disabled_line_id {
                br.in_service = false;
            } else if br.id == self.closed_switch_id {
                br.closed = Some(true);
            }
        }
        topology.validate()?;
        Ok(TopologyVariant {
            variant_id: self.variant_id.clone(),
            disabled_line_id: self.disabled_line_id,
            closed_switch_id: self.closed_switch_id,
            topology,
        })
    }
}

/// Parent line (branch id, parent bus) of each bus on the BFS tree rooted
/// at the slack bus over conducting lines and transformers.
fn feeder_tree(topology: &GridTopology) -> HashMap<u32, (u32, u32)> {
    let mut adjacency: HashMap<u32, Vec<(u32, u32, BranchKind)>> = HashMap::new();
    for br in topology.branches.iter().filter(|b| b.conducts()) {
        adjacency
            .entry(br.from_bus)
            .or_default()
            .push((br.to_bus, br.id, br.kind));
        adjacency
            .entry(br.to_bus)
            .or_default()
            .push((br.from_bus, br.id, br.kind));
    }
    let mut parent = HashMap::new();
    let Some(slack) = topology.slack_bus() else {
        return parent;
    };
    let mut seen = std::collections::HashSet::from([slack.id]);
    let mut queue = VecDeque::from([slack.id]);
    while let Some(bus) = queue.pop_front() {
        let mut next = adjacency.get(&bus).cloned().unwrap_or_default();
        next.sort_by_key(|&(b, id, _)| (id, b));
        for (nb, branch, _) in next {
            if seen.insert(nb) {
                parent.insert(nb, (branch, bus));
                queue.push_back(nb);
            }
        }
    }
    parent
}

/// One variant per open loop switch.
///
/// The switch's deeper endpoint (more hops from the slack; ties go to the
/// from-bus) marks the branch being resupplied. The line disabled is the
/// in-service line on that endpoint's feeder path that lies farthest from
/// the slack; closing the switch reconnects everything it cut off. Switches
/// whose variant would be disconnected are skipped with a warning.
pub fn make_topology_variants(topology: &GridTopology) -> Vec<TopologyVariant> {
    let hops = topology.hops_from_slack();
    let parent = feeder_tree(topology);
    let kinds: BTreeMap<u32, BranchKind> =
        topology.branches.iter().map(|b| (b.id, b.kind)).collect();
    let mut variants = Vec::new();
    let switches: Vec<_> = topology.open_switches().cloned().collect();
    for switch in switches {
        let depth = |b: u32| hops.get(&b).copied().unwrap_or(0);
        let endpoint = if depth(switch.to_bus) > depth(switch.from_bus) {
            switch.to_bus
        } else {
            switch.from_bus
        };
        let mut cursor = endpoint;
        let mut line = None;
        while let Some(&(branch, up)) = parent.get(&cursor) {
            if kinds[&branch] == BranchKind::Line {
                line = Some(branch);
                break;
            }
            cursor = up;
        }
        let Some(line) = line else {
            log::warn!(
                "switch {} has no line on its feeder path; skipped",
                switch.id
            );
            continue;
        };
        let record = VariantRecord {
            variant_id: format!("sw{}-l{}", switch.id, line),
            disabled_line_id: line,
            closed_switch_id: switch.id,
        };
        match record.apply(topology) {
            Ok(v) => variants.push(v),
            Err(e) => log::warn!(
                "closing switch {} cannot restore supply: {e}; skipped",
                switch.id
            ),
        }
    }
    variants
}

/// Seeded disjoint split; the train side gets `round(ratio × n)` items,
/// clamped so both sides are non-empty.
pub fn split_variants<T: Clone>(
    variants: &[T],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), ScenarioError> {
    if variants.len() < 2 {
        return Err(ScenarioError::TooFewVariants(variants.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ScenarioError::BadRatio(ratio));
    }
    let n = variants.len();
    let n_train = round_half_up(ratio * n as f64).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = order.split_at(n_train);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        train.into_iter().map(|i| variants[i].clone()).collect(),
        test.into_iter().map(|i| variants[i].clone()).collect(),
    ))
}
