use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{divergence_with_delta, Criterion, UpliftForestSpec};
use crate::dataset::{ExperimentFrame, OutcomeKind};
use crate::error::{Error, Result};
use crate::learners::{choose_features, midpoint, subsample_count};
use crate::rng;

/// Per-group unit and positive-outcome counts at a node; group 0 is control.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeStats {
    pub n: Vec<u64>,
    pub pos: Vec<u64>,
}

impl NodeStats {
    pub fn empty(groups: usize) -> Self {
        Self {
            n: vec![0; groups],
            pos: vec![0; groups],
        }
    }

    pub fn from_rows(frame: &ExperimentFrame, rows: &[usize]) -> Self {
        let mut s = Self::empty(frame.n_arms() + 1);
        for &i in rows {
            s.add(frame.treatment()[i], frame.outcome()[i]);
        }
        s
    }

    #[inline]
    pub fn add(&mut self, group: usize, y: f64) {
        self.n[group] += 1;
        if y == 1.0 {
            self.pos[group] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.n.iter().sum()
    }

    pub fn rate(&self, group: usize) -> f64 {
        if self.n[group] == 0 {
            0.0
        } else {
            self.pos[group] as f64 / self.n[group] as f64
        }
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            n: self.n.iter().zip(&other.n).map(|(a, b)| a - b).collect(),
            pos: self
                .pos
                .iter()
                .zip(&other.pos)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Arms (indices ≥ 1) with at least one unit.
    fn present_arms(&self) -> Vec<usize> {
        (1..self.n.len()).filter(|&k| self.n[k] > 0).collect()
    }

    /// Σ over `arms` of D(p̂_k, p̂_0).
    fn divergence_sum(&self, arms: &[usize], kind: Criterion, delta: f64) -> f64 {
        let q = self.rate(0);
        arms.iter()
            .map(|&k| divergence_with_delta(self.rate(k), q, kind, delta))
            .sum()
    }
}

/// Gain of splitting `parent` into `left` and `right`:
/// `Σ_c (n_c/n)·D_c − D_parent`, with `D` summed over the arms present at
/// the parent. Computed as `Σ_c (n_c/n)·(D_c − D_parent)` so children that
/// reproduce the parent's rates give exactly zero.
fn gain(
    parent: &NodeStats,
    left: &NodeStats,
    right: &NodeStats,
    arms: &[usize],
    kind: Criterion,
    delta: f64,
) -> f64 {
    let n = parent.total() as f64;
    let d_parent = parent.divergence_sum(arms, kind, delta);
    [left, right]
        .iter()
        .map(|c| c.total() as f64 / n * (c.divergence_sum(arms, kind, delta) - d_parent))
        .sum()
}

fn feasible(left: &NodeStats, right: &NodeStats, arms: &[usize], min_leaf: u64) -> bool {
    [left, right]
        .iter()
        .all(|c| c.n[0] >= min_leaf && arms.iter().all(|&k| c.n[k] >= min_leaf))
}

/// Gain of the split `x[feature] <= threshold` over `rows`, or `None` when
/// a child would violate the per-group minimum (not a candidate).
pub fn split_gain(
    frame: &ExperimentFrame,
    rows: &[usize],
    feature: usize,
    threshold: f64,
    spec: &UpliftForestSpec,
) -> Option<f64> {
    let parent = NodeStats::from_rows(frame, rows);
    let (l, r): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&i| frame.features().get(i, feature) <= threshold);
    let left = NodeStats::from_rows(frame, &l);
    let right = NodeStats::from_rows(frame, &r);
    let arms = parent.present_arms();
    feasible(&left, &right, &arms, spec.min_leaf_per_group as u64)
        .then(|| gain(&parent, &left, &right, &arms, spec.criterion, spec.delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafStats {
    pub n: Vec<u64>,
    pub pos: Vec<u64>,
    /// `p̂_k − p̂_0` for every arm k.
    pub uplift: Vec<f64>,
}

impl LeafStats {
    fn from_stats(s: NodeStats) -> Self {
        let q = s.rate(0);
        let uplift = (1..s.n.len()).map(|k| s.rate(k) - q).collect();
        Self {
            n: s.n,
            pos: s.pos,
            uplift,
        }
    }
}

/// Tree node in the interchange layout:
/// `{"f", "t", "l", "r"}` for splits, `{"leaf": {"n", "pos", "uplift"}}` for leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UpliftTreeNode {
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: Box<UpliftTreeNode>,
        #[serde(rename = "r")]
        right: Box<UpliftTreeNode>,
    },
    Leaf {
        leaf: LeafStats,
    },
}

impl UpliftTreeNode {
    /// Leaf reached by `x`.
    pub fn route(&self, x: &[f64]) -> &LeafStats {
        let mut node = self;
        loop {
            match node {
                UpliftTreeNode::Leaf { leaf } => return leaf,
                UpliftTreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn leaves(&self) -> Vec<&LeafStats> {
        match self {
            UpliftTreeNode::Leaf { leaf } => vec![leaf],
            UpliftTreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftTree {
    pub root: UpliftTreeNode,
    pub n_features: usize,
    pub n_arms: usize,
}

impl UpliftTree {
    pub fn predict_row(&self, x: &[f64]) -> &[f64] {
        &self.root.route(x).uplift
    }
}

pub(super) fn check_frame(frame: &ExperimentFrame, spec: &UpliftForestSpec) -> Result<()> {
    if frame.outcome_kind() != OutcomeKind::Binary {
        return Err(Error::UnsupportedOutcome(
            "uplift trees need a binary outcome; use a meta-learner for continuous outcomes".into(),
        ));
    }
    let need = 2 * spec.min_leaf_per_group;
    for (g, &c) in frame.arm_counts().iter().enumerate() {
        if c < need {
            return Err(Error::Fit(format!(
                "group `{}` has {c} units; uplift trees need at least {need} (2 x min_leaf_per_group)",
                frame.arm_labels()[g]
            )));
        }
    }
    Ok(())
}

/// Resamples each group with replacement, keeping group sizes.
pub(super) fn stratified_bootstrap(groups: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut sample = Vec::with_capacity(groups.iter().map(Vec::len).sum());
    for g in groups {
        for _ in 0..g.len() {
            sample.push(g[rng.random_range(0..g.len())]);
        }
    }
    sample
}

/// Greedy uplift tree on all rows of `frame`. Feature subsampling draws
/// from the seed stream `(seed, 0)`, the same stream tree 0 of a forest uses.
pub fn fit_uplift_tree(
    frame: &ExperimentFrame,
    spec: &UpliftForestSpec,
    seed: u64,
) -> Result<UpliftTree> {
    spec.validate()?;
    check_frame(frame, spec)?;
    fit_tree_with_rng(frame, spec, &mut rng::stream(seed, 0))
}

pub(crate) fn fit_tree_with_rng(
    frame: &ExperimentFrame,
    spec: &UpliftForestSpec,
    rng: &mut ChaCha8Rng,
) -> Result<UpliftTree> {
    check_frame(frame, spec)?;
    let d = frame.d();
    let builder = Builder {
        frame,
        spec,
        n_sub: subsample_count(d, spec.subsample_fraction(d)),
    };
    let rows: Vec<usize> = (0..frame.n()).collect();
    Ok(UpliftTree {
        root: builder.build(rows, 0, rng),
        n_features: d,
        n_arms: frame.n_arms(),
    })
}

struct Builder<'a> {
    frame: &'a ExperimentFrame,
    spec: &'a UpliftForestSpec,
    n_sub: usize,
}

impl Builder<'_> {
    fn build(&self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> UpliftTreeNode {
        let parent = NodeStats::from_rows(self.frame, &rows);
        if depth >= self.spec.max_depth {
            return UpliftTreeNode::Leaf {
                leaf: LeafStats::from_stats(parent),
            };
        }
        match self.best_split(&rows, &parent, rng) {
            Some((feature, threshold, g)) if g > 0.0 => {
                let x = self.frame.features();
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| x.get(i, feature) <= threshold);
                UpliftTreeNode::Split {
                    feature,
                    threshold,
                    left: Box::new(self.build(l, depth + 1, rng)),
                    right: Box::new(self.build(r, depth + 1, rng)),
                }
            }
            _ => UpliftTreeNode::Leaf {
                leaf: LeafStats::from_stats(parent),
            },
        }
    }

    /// Highest-gain feasible split; ties go to the lowest feature index, then
    /// the lowest threshold.
    fn best_split(
        &self,
        rows: &[usize],
        parent: &NodeStats,
        rng: &mut ChaCha8Rng,
    ) -> Option<(usize, f64, f64)> {
        let x = self.frame.features();
        let w = self.frame.treatment();
        let y = self.frame.outcome();
        let arms = parent.present_arms();
        let min_leaf = self.spec.min_leaf_per_group as u64;
        let features = choose_features(self.frame.d(), self.n_sub, rng);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = rows.to_vec();
        for &f in &features {
            sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            let mut left = NodeStats::empty(parent.n.len());
            for p in 0..sorted.len().saturating_sub(1) {
                let i = sorted[p];
                left.add(w[i], y[i]);
                let lo = x.get(i, f);
                let hi = x.get(sorted[p + 1], f);
                if lo == hi {
                    continue;
                }
                let right = parent.minus(&left);
                if !feasible(&left, &right, &arms, min_leaf) {
                    continue;
                }
                let g = gain(
                    parent,
                    &left,
                    &right,
                    &arms,
                    self.spec.criterion,
                    self.spec.delta,
                );
                if best.is_none_or(|(_, _, b)| g > b) {
                    best = Some((f, midpoint(lo, hi), g));
                }
            }
        }
        best
    }
}
