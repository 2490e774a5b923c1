//! Oblivious decision trees.
//!
//! Every level of an oblivious tree applies the same split, so a depth-`l`
//! structure is just a set of `l` splits and a row's leaf is the `l`-bit word
//! of split outcomes: bit `b` is set iff the row goes right on split `b`.
//!
//! Structures are sampled greedily with Gumbel-perturbed scores
//! ([`TreeSampler::sample`]); the exact law of the sampler is available in
//! closed form ([`TreeSampler::probability`]) for small depths.

use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bin, BinnedDataset, BinnedRows};
use crate::error::{Error, Result};
use crate::rng::open_unit;

/// Default cap on the number of enumerated structures.
pub const DEFAULT_MAX_STRUCTURES: u128 = 1_000_000;
/// Default cap on the depth of a structure whose permutations are summed (6! = 720).
pub const DEFAULT_MAX_PERMUTATION_DEPTH: usize = 6;

/// A split `(feature, bin)`: a row goes right iff its bin on `feature` exceeds `bin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub bin: Bin,
}

impl SplitCandidate {
    pub fn new(feature: usize, bin: Bin) -> Self {
        SplitCandidate { feature, bin }
    }

    #[inline]
    pub fn goes_right(&self, row: &[Bin]) -> bool {
        row[self.feature] > self.bin
    }
}

/// An oblivious tree structure: distinct splits in the order they were chosen.
///
/// Equality and hashing ignore the order, since permuting the splits of an
/// oblivious tree yields the same partition.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<SplitCandidate>", into = "Vec<SplitCandidate>")]
pub struct TreeStructure {
    splits: Vec<SplitCandidate>,
}

impl TreeStructure {
    pub fn new(splits: Vec<SplitCandidate>) -> Result<Self> {
        let unique: HashSet<_> = splits.iter().collect();
        if unique.len() != splits.len() {
            return Err(Error::Contract(
                "tree structure contains a duplicate split".into(),
            ));
        }
        if splits.len() >= usize::BITS as usize {
            return Err(Error::Contract(format!(
                "tree depth {} is too large",
                splits.len()
            )));
        }
        Ok(TreeStructure { splits })
    }

    /// The root-only tree.
    pub fn root() -> Self {
        TreeStructure::default()
    }

    pub fn splits(&self) -> &[SplitCandidate] {
        &self.splits
    }

    pub fn depth(&self) -> usize {
        self.splits.len()
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.splits.len()
    }

    /// Splits sorted by `(feature, bin)`.
    pub fn canonical(&self) -> Vec<SplitCandidate> {
        let mut s = self.splits.clone();
        s.sort_unstable();
        s
    }

    pub fn contains(&self, split: &SplitCandidate) -> bool {
        self.splits.contains(split)
    }

    #[inline]
    pub fn leaf_index(&self, row: &[Bin]) -> usize {
        self.splits.iter().enumerate().fold(0, |leaf, (b, s)| {
            leaf | (usize::from(s.goes_right(row)) << b)
        })
    }

    pub fn assign(&self, rows: &BinnedRows) -> LeafAssignment {
        let mut counts = vec![0; self.n_leaves()];
        let leaf_of = rows
            .iter()
            .map(|row| {
                let leaf = self.leaf_index(row);
                counts[leaf] += 1;
                leaf
            })
            .collect();
        LeafAssignment { leaf_of, counts }
    }
}

impl PartialEq for TreeStructure {
    fn eq(&self, other: &Self) -> bool {
        self.splits.len() == other.splits.len() && self.canonical() == other.canonical()
    }
}

impl Eq for TreeStructure {}

impl Hash for TreeStructure {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.canonical().hash(state);
    }
}

impl TryFrom<Vec<SplitCandidate>> for TreeStructure {
    type Error = Error;

    fn try_from(splits: Vec<SplitCandidate>) -> Result<Self> {
        TreeStructure::new(splits)
    }
}

impl From<TreeStructure> for Vec<SplitCandidate> {
    fn from(t: TreeStructure) -> Self {
        t.splits
    }
}

/// Leaf of every training row plus per-leaf counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafAssignment {
    pub leaf_of: Vec<usize>,
    pub counts: Vec<usize>,
}

impl LeafAssignment {
    pub fn n_rows(&self) -> usize {
        self.leaf_of.len()
    }

    /// Per-leaf residual sums.
    pub fn leaf_sums(&self, residuals: &[f64]) -> Vec<f64> {
        assert_eq!(residuals.len(), self.leaf_of.len(), "residual length");
        let mut sums = vec![0.0; self.counts.len()];
        for (&leaf, &r) in self.leaf_of.iter().zip(residuals) {
            sums[leaf] += r;
        }
        sums
    }
}

/// Split score `D = (1/N) sum_j (sum_{i in leaf j} r_i)^2 / N_j`; empty leaves add 0.
pub fn score(assignment: &LeafAssignment, residuals: &[f64]) -> f64 {
    let sums = assignment.leaf_sums(residuals);
    let total: f64 = sums
        .iter()
        .zip(&assignment.counts)
        .filter(|&(_, &c)| c > 0)
        .map(|(s, &c)| s * s / c as f64)
        .sum();
    total / assignment.n_rows() as f64
}

/// A tree structure with leaf values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FittedTreeRepr", into = "FittedTreeRepr")]
pub struct FittedTree {
    structure: TreeStructure,
    leaf_values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FittedTreeRepr {
    splits: TreeStructure,
    leaf_values: Vec<f64>,
}

impl TryFrom<FittedTreeRepr> for FittedTree {
    type Error = Error;

    fn try_from(r: FittedTreeRepr) -> Result<Self> {
        FittedTree::new(r.splits, r.leaf_values)
    }
}

impl From<FittedTree> for FittedTreeRepr {
    fn from(t: FittedTree) -> Self {
        FittedTreeRepr {
            splits: t.structure,
            leaf_values: t.leaf_values,
        }
    }
}

impl FittedTree {
    pub fn new(structure: TreeStructure, leaf_values: Vec<f64>) -> Result<Self> {
        if leaf_values.len() != structure.n_leaves() {
            return Err(Error::shape(
                format!("{} leaf values", structure.n_leaves()),
                leaf_values.len(),
            ));
        }
        if leaf_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("leaf values must be finite".into()));
        }
        Ok(FittedTree {
            structure,
            leaf_values,
        })
    }

    pub fn structure(&self) -> &TreeStructure {
        &self.structure
    }

    pub fn leaf_values(&self) -> &[f64] {
        &self.leaf_values
    }

    #[inline]
    pub fn predict_row(&self, row: &[Bin]) -> f64 {
        self.leaf_values[self.structure.leaf_index(row)]
    }
}

/// Leaf values as per-leaf residual means (0 for empty leaves).
pub fn fit_leaf_values(
    structure: &TreeStructure,
    residuals: &[f64],
    assignment: &LeafAssignment,
) -> FittedTree {
    let sums = assignment.leaf_sums(residuals);
    let values = sums
        .iter()
        .zip(&assignment.counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    FittedTree {
        structure: structure.clone(),
        leaf_values: values,
    }
}

/// `n choose k`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All structures with `min(depth, |candidates|)` splits, each in canonical
/// order, listed lexicographically.
pub fn enumerate_structures(
    candidates: &[SplitCandidate],
    depth: usize,
    cap: u128,
) -> Result<Vec<TreeStructure>> {
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let k = depth.min(pool.len());
    let count = binomial(pool.len(), k);
    if count > cap {
        return Err(Error::CapacityExceeded {
            what: format!("C({}, {k}) tree structures", pool.len()),
            count,
            cap,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(TreeStructure {
            splits: idx.iter().map(|&i| pool[i]).collect(),
        });
        // advance to the next k-combination
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + pool.len() - k) else {
            break;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
    Ok(out)
}

/// Scores every candidate split against a partially built tree using
/// per-leaf bin histograms, `O(N d + |S| L)` per level.
struct SplitScorer<'a> {
    rows: &'a BinnedRows,
    n_bins: Vec<usize>,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl<'a> SplitScorer<'a> {
    fn new(data: &'a BinnedDataset) -> Self {
        let n_bins = data
            .quantizer()
            .n_per_feature()
            .iter()
            .map(|c| c + 1)
            .collect();
        SplitScorer {
            rows: data.rows(),
            n_bins,
            sums: Vec::new(),
            counts: Vec::new(),
        }
    }

    /// `out[c] = D((current, pool[c]), residuals)`; `pool` must be sorted by feature.
    fn scores(
        &mut self,
        residuals: &[f64],
        leaf_of: &[usize],
        n_leaves: usize,
        pool: &[SplitCandidate],
        out: &mut Vec<f64>,
    ) {
        out.clear();
        let n = residuals.len() as f64;
        let mut start = 0;
        while start < pool.len() {
            let feature = pool[start].feature;
            let end = start
                + pool[start..]
                    .iter()
                    .take_while(|c| c.feature == feature)
                    .count();
            let nb = self.n_bins[feature];
            self.sums.clear();
            self.sums.resize(n_leaves * nb, 0.0);
            self.counts.clear();
            self.counts.resize(n_leaves * nb, 0);
            for (i, row) in self.rows.iter().enumerate() {
                let cell = leaf_of[i] * nb + row[feature] as usize;
                self.sums[cell] += residuals[i];
                self.counts[cell] += 1;
            }
            // cumulative over bins within each leaf
            for leaf in 0..n_leaves {
                let base = leaf * nb;
                for b in 1..nb {
                    self.sums[base + b] += self.sums[base + b - 1];
                    self.counts[base + b] += self.counts[base + b - 1];
                }
            }
            for cand in &pool[start..end] {
                let k = cand.bin as usize;
                let mut total = 0.0;
                for leaf in 0..n_leaves {
                    let base = leaf * nb;
                    let (all_s, all_c) = (self.sums[base + nb - 1], self.counts[base + nb - 1]);
                    let (left_s, left_c) = (self.sums[base + k], self.counts[base + k]);
                    let (right_s, right_c) = (all_s - left_s, all_c - left_c);
                    if left_c > 0 {
                        total += left_s * left_s / left_c as f64;
                    }
                    if right_c > 0 {
                        total += right_s * right_s / right_c as f64;
                    }
                }
                out.push(total / n);
            }
            start = end;
        }
    }
}

/// Randomized greedy construction of oblivious trees over a fixed split universe.
pub struct TreeSampler<'a> {
    scorer: SplitScorer<'a>,
    candidates: Vec<SplitCandidate>,
    scores: Vec<f64>,
    max_permutation_depth: usize,
}

impl<'a> TreeSampler<'a> {
    /// Sampler over all candidate splits of `data`.
    pub fn new(data: &'a BinnedDataset) -> Self {
        Self::with_candidates(data, &data.candidates())
    }

    pub fn with_candidates(data: &'a BinnedDataset, candidates: &[SplitCandidate]) -> Self {
        let mut candidates = candidates.to_vec();
        candidates.sort_unstable();
        candidates.dedup();
        TreeSampler {
            scorer: SplitScorer::new(data),
            candidates,
            scores: Vec::new(),
            max_permutation_depth: DEFAULT_MAX_PERMUTATION_DEPTH,
        }
    }

    pub fn max_permutation_depth(mut self, depth: usize) -> Self {
        self.max_permutation_depth = depth;
        self
    }

    pub fn candidates(&self) -> &[SplitCandidate] {
        &self.candidates
    }

    /// Grow a tree of up to `depth` splits.
    ///
    /// Each level picks `argmax_s D((tree, s), r) - beta * ln(-ln u_s)` with a
    /// fresh `u_s ~ U(0, 1)` per remaining candidate, drawn in `(feature, bin)`
    /// order. With `beta == 0` no randomness is consumed and ties go to the
    /// lowest `(feature, bin)`.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        residuals: &[f64],
        depth: usize,
        beta: f64,
        rng: &mut R,
    ) -> TreeStructure {
        assert_eq!(
            residuals.len(),
            self.scorer.rows.n_rows(),
            "residual length"
        );
        let mut pool = self.candidates.clone();
        let mut leaf_of = vec![0usize; residuals.len()];
        let mut chosen = Vec::with_capacity(depth.min(pool.len()));
        for level in 0..depth {
            if pool.is_empty() {
                break;
            }
            self.scorer
                .scores(residuals, &leaf_of, 1 << level, &pool, &mut self.scores);
            let mut best = 0;
            let mut best_key = f64::NEG_INFINITY;
            for (c, &d) in self.scores.iter().enumerate() {
                let key = if beta > 0.0 {
                    d - beta * (-open_unit(rng).ln()).ln()
                } else {
                    d
                };
                if key > best_key {
                    best_key = key;
                    best = c;
                }
            }
            let split = pool.remove(best);
            for (leaf, row) in leaf_of.iter_mut().zip(self.scorer.rows.iter()) {
                *leaf |= usize::from(split.goes_right(row)) << level;
            }
            chosen.push(split);
        }
        TreeStructure { splits: chosen }
    }

    /// Exact probability that [`sample`](Self::sample) returns `structure`
    /// (as an unordered set) for the given residuals and `beta > 0`.
    ///
    /// Sums, over every order in which the splits could have been chosen, the
    /// product of per-level softmax probabilities with temperature `beta`.
    pub fn probability(
        &mut self,
        structure: &TreeStructure,
        residuals: &[f64],
        beta: f64,
    ) -> Result<f64> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tree probability needs a positive random strength, got {beta}"
            )));
        }
        let m = structure.depth();
        if m > self.max_permutation_depth {
            return Err(Error::CapacityExceeded {
                what: format!("permutations of a depth-{m} tree"),
                count: (1..=m as u128).product(),
                cap: (1..=self.max_permutation_depth as u128).product(),
            });
        }
        if let Some(s) = structure
            .splits()
            .iter()
            .find(|s| self.candidates.binary_search(s).is_err())
        {
            return Err(Error::Contract(format!("split {s:?} is not a candidate")));
        }
        let mut total = 0.0;
        for order in permutations(m) {
            let mut pool = self.candidates.clone();
            let mut leaf_of = vec![0usize; residuals.len()];
            let mut log_p = 0.0;
            for (level, &which) in order.iter().enumerate() {
                let split = structure.splits[which];
                self.scorer
                    .scores(residuals, &leaf_of, 1 << level, &pool, &mut self.scores);
                let pos = pool.binary_search(&split).expect("split is in the pool");
                let max = self
                    .scores
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                let norm: f64 = self.scores.iter().map(|d| ((d - max) / beta).exp()).sum();
                log_p += (self.scores[pos] - max) / beta - norm.ln();
                pool.remove(pos);
                for (leaf, row) in leaf_of.iter_mut().zip(self.scorer.rows.iter()) {
                    *leaf |= usize::from(split.goes_right(row)) << level;
                }
            }
            total += log_p.exp();
        }
        Ok(total)
    }
}

/// Sample one structure; see [`TreeSampler::sample`].
pub fn sample_tree<R: Rng + ?Sized>(
    data: &BinnedDataset,
    residuals: &[f64],
    candidates: &[SplitCandidate],
    depth: usize,
    beta: f64,
    rng: &mut R,
) -> TreeStructure {
    TreeSampler::with_candidates(data, candidates).sample(residuals, depth, beta, rng)
}

/// Exact sampling probability; see [`TreeSampler::probability`].
pub fn tree_probability(
    data: &BinnedDataset,
    structure: &TreeStructure,
    residuals: &[f64],
    beta: f64,
    candidates: &[SplitCandidate],
) -> Result<f64> {
    TreeSampler::with_candidates(data, candidates).probability(structure, residuals, beta)
}

/// All permutations of `0..m` (Heap's algorithm).
fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..m).collect();
    let mut out = vec![perm.clone()];
    let mut c = vec![0; m];
    let mut i = 1;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            out.push(perm.clone());
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureQuantizer, RawDataset};
    use crate::rng::stream;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn split(feature: usize, bin: Bin) -> SplitCandidate {
        SplitCandidate::new(feature, bin)
    }

    /// 4 distinct values per feature, 2 thresholds each: |S| = 4.
    fn grid_data(targets: Vec<f64>) -> BinnedDataset {
        let rows: Vec<Vec<f64>> = (0..targets.len())
            .map(|i| vec![(i % 4) as f64, ((i / 4) % 4) as f64 + 0.5 * (i % 3) as f64])
            .collect();
        let raw = RawDataset::from_rows(&rows, targets).unwrap();
        FeatureQuantizer::fit(&raw, 2)
            .unwrap()
            .quantize(&raw)
            .unwrap()
    }

    #[test]
    fn leaf_index_bits() {
        assert_eq!(TreeStructure::root().leaf_index(&[5, 5]), 0);
        let one = TreeStructure::new(vec![split(0, 1)]).unwrap();
        assert_eq!(one.leaf_index(&[2, 0]), 1);
        assert_eq!(one.leaf_index(&[1, 0]), 0);
        let two = TreeStructure::new(vec![split(0, 1), split(1, 0)]).unwrap();
        assert_eq!(two.leaf_index(&[0, 0]), 0b00);
        assert_eq!(two.leaf_index(&[0, 1]), 0b10);
        assert_eq!(two.leaf_index(&[3, 1]), 0b11);
    }

    #[test]
    fn duplicate_splits_rejected() {
        assert!(TreeStructure::new(vec![split(0, 1), split(0, 1)]).is_err());
    }

    #[test]
    fn structure_equality_ignores_order() {
        let a = TreeStructure::new(vec![split(0, 1), split(1, 0)]).unwrap();
        let b = TreeStructure::new(vec![split(1, 0), split(0, 1)]).unwrap();
        assert_eq!(a, b);
        let set: HashSet<_> = [a, b].into_iter().collect();
        assert_eq!(set.len(), 1);
    }

    fn two_leaf_assignment() -> LeafAssignment {
        LeafAssignment {
            leaf_of: vec![0, 0, 1, 1],
            counts: vec![2, 2],
        }
    }

    #[test]
    fn score_hand_values() {
        let r = [1.0, 1.0, -1.0, -1.0];
        assert!((score(&two_leaf_assignment(), &r) - 1.0).abs() < 1e-15);
        let root = LeafAssignment {
            leaf_of: vec![0; 4],
            counts: vec![4],
        };
        assert_eq!(score(&root, &r), 0.0);
        assert_eq!(score(&two_leaf_assignment(), &[0.0; 4]), 0.0);
    }

    #[test]
    fn leaf_values_are_means() {
        let root = TreeStructure::root();
        let a = LeafAssignment {
            leaf_of: vec![0, 0],
            counts: vec![2],
        };
        assert_eq!(
            fit_leaf_values(&root, &[1.0, 3.0], &a).leaf_values(),
            &[2.0]
        );

        let s = TreeStructure::new(vec![split(0, 0)]).unwrap();
        let t = fit_leaf_values(&s, &[1.0, 1.0, -1.0, -1.0], &two_leaf_assignment());
        assert_eq!(t.leaf_values(), &[1.0, -1.0]);

        let empty = LeafAssignment {
            leaf_of: vec![0, 0],
            counts: vec![2, 0],
        };
        assert_eq!(
            fit_leaf_values(&s, &[1.0, 2.0], &empty).leaf_values(),
            &[1.5, 0.0]
        );
    }

    #[test]
    fn fitted_tree_json_shape() {
        let s = TreeStructure::new(vec![split(1, 3)]).unwrap();
        let t = FittedTree::new(s, vec![0.5, -0.5]).unwrap();
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"splits": [{"feature": 1, "bin": 3}], "leaf_values": [0.5, -0.5]})
        );
        let back: FittedTree = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
        let bad = serde_json::json!({"splits": [{"feature": 1, "bin": 3}], "leaf_values": [0.5]});
        assert!(serde_json::from_value::<FittedTree>(bad).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let s4: Vec<_> = (0..4).map(|i| split(i / 2, (i % 2) as Bin)).collect();
        assert_eq!(
            enumerate_structures(&s4, 2, DEFAULT_MAX_STRUCTURES)
                .unwrap()
                .len(),
            6
        );
        let root = enumerate_structures(&s4, 0, DEFAULT_MAX_STRUCTURES).unwrap();
        assert_eq!(root, vec![TreeStructure::root()]);
        let s6: Vec<_> = (0..6).map(|i| split(i / 3, (i % 3) as Bin)).collect();
        let all = enumerate_structures(&s6, 3, DEFAULT_MAX_STRUCTURES).unwrap();
        assert_eq!(all.len(), 20);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 20);
        match enumerate_structures(&s6, 3, 10) {
            Err(Error::CapacityExceeded { count, .. }) => assert_eq!(count, 20),
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(128, 4), 10_668_000);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn permutations_are_complete() {
        for m in 0..6 {
            let p = permutations(m);
            assert_eq!(p.len(), (1..=m).product::<usize>().max(1));
            assert_eq!(p.iter().collect::<HashSet<_>>().len(), p.len());
        }
    }

    #[test]
    fn histogram_scores_match_direct_evaluation() {
        let y: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let data = grid_data(y.clone());
        let mut sampler = TreeSampler::new(&data);
        let cands = sampler.candidates().to_vec();
        let base = TreeStructure::new(vec![cands[1]]).unwrap();
        let leaf_of = base.assign(data.rows()).leaf_of;
        let pool: Vec<_> = cands.iter().copied().filter(|c| *c != cands[1]).collect();
        let mut out = Vec::new();
        sampler.scorer.scores(&y, &leaf_of, 2, &pool, &mut out);
        for (c, d) in pool.iter().zip(&out) {
            let s = TreeStructure::new(vec![cands[1], *c]).unwrap();
            let direct = score(&s.assign(data.rows()), &y);
            assert!((direct - d).abs() < 1e-12, "{direct} vs {d}");
        }
    }

    #[test]
    fn greedy_is_deterministic_argmax() {
        let y: Vec<f64> = (0..16)
            .map(|i| if i % 4 < 2 { 1.0 } else { -1.0 })
            .collect();
        let data = grid_data(y.clone());
        let mut sampler = TreeSampler::new(&data);
        let mut rng = stream(0, 0);
        let t = sampler.sample(&y, 1, 0.0, &mut rng);
        // feature 0 at its middle threshold separates the signs exactly
        let best = sampler
            .candidates()
            .iter()
            .map(|c| {
                let s = TreeStructure::new(vec![*c]).unwrap();
                (score(&s.assign(data.rows()), &y), *c)
            })
            .fold((f64::NEG_INFINITY, split(0, 0)), |a, b| {
                if b.0 > a.0 {
                    b
                } else {
                    a
                }
            });
        assert_eq!(t.splits(), &[best.1]);
        let again = sampler.sample(&y, 1, 0.0, &mut stream(99, 3));
        assert_eq!(t, again);
    }

    #[test]
    fn greedy_ties_pick_lowest_split() {
        let data = grid_data(vec![0.0; 16]);
        let mut sampler = TreeSampler::new(&data);
        let t = sampler.sample(&[0.0; 16], 2, 0.0, &mut stream(0, 0));
        assert_eq!(t.splits(), &sampler.candidates()[..2]);
    }

    #[test]
    fn exhausted_pool_returns_full_structure() {
        let data = grid_data((0..16).map(|i| i as f64).collect());
        let mut sampler = TreeSampler::new(&data);
        let all = TreeStructure::new(sampler.candidates().to_vec()).unwrap();
        let y: Vec<f64> = data.targets().to_vec();
        for seed in 0..20 {
            let t = sampler.sample(&y, 10, 1.0, &mut stream(seed, 0));
            assert_eq!(t, all);
        }
        let p = sampler.probability(&all, &y, 0.5).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_law_is_uniform() {
        let data = grid_data(vec![0.0; 16]);
        let mut sampler = TreeSampler::new(&data);
        let structures =
            enumerate_structures(sampler.candidates(), 2, DEFAULT_MAX_STRUCTURES).unwrap();
        for s in &structures {
            let p = sampler.probability(s, &[0.0; 16], 0.3).unwrap();
            assert!((p - 1.0 / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn depth_one_law_is_softmax() {
        let y: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let data = grid_data(y.clone());
        let mut sampler = TreeSampler::new(&data);
        let beta = 0.05;
        let cands = sampler.candidates().to_vec();
        let d: Vec<f64> = cands
            .iter()
            .map(|c| {
                score(
                    &TreeStructure::new(vec![*c]).unwrap().assign(data.rows()),
                    &y,
                )
            })
            .collect();
        let z: f64 = d.iter().map(|v| (v / beta).exp()).sum();
        for (c, dv) in cands.iter().zip(&d) {
            let p = sampler
                .probability(&TreeStructure::new(vec![*c]).unwrap(), &y, beta)
                .unwrap();
            assert!((p - (dv / beta).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_guards() {
        let data = grid_data(vec![1.0; 16]);
        let mut sampler = TreeSampler::new(&data).max_permutation_depth(1);
        let two = TreeStructure::new(sampler.candidates()[..2].to_vec()).unwrap();
        assert!(matches!(
            sampler.probability(&two, &[1.0; 16], 1.0),
            Err(Error::CapacityExceeded { .. })
        ));
        let one = TreeStructure::new(vec![sampler.candidates()[0]]).unwrap();
        assert!(sampler.probability(&one, &[1.0; 16], 0.0).is_err());
        let foreign = TreeStructure::new(vec![split(7, 7)]).unwrap();
        assert!(sampler.probability(&foreign, &[1.0; 16], 1.0).is_err());
    }

    #[test]
    fn probability_survives_huge_scores() {
        let y: Vec<f64> = (0..16).map(|i| 1e6 * (i as f64 - 7.5)).collect();
        let data = grid_data(y.clone());
        let mut sampler = TreeSampler::new(&data);
        let all = enumerate_structures(sampler.candidates(), 2, DEFAULT_MAX_STRUCTURES).unwrap();
        let total: f64 = all
            .iter()
            .map(|s| sampler.probability(s, &y, 1e-3).unwrap())
            .inspect(|p| assert!(p.is_finite()))
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gumbel_noise_mean_is_euler_gamma() {
        let mut rng = stream(11, 0);
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| -(-open_unit(&mut rng).ln()).ln()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let euler_gamma = 0.577_215_664_901_532_9;
        assert!(
            (mean - euler_gamma).abs() < 4.0 * se,
            "mean {mean}, se {se}"
        );
        // Gumbel(0,1) variance is pi^2/6
        assert!((var - std::f64::consts::PI.powi(2) / 6.0).abs() < 0.03);
    }

    #[test]
    fn small_instance_frequencies_match_law() {
        let y: Vec<f64> = (0..16).map(|i| ((i * 5) % 7) as f64 / 3.0 - 1.0).collect();
        let data = grid_data(y.clone());
        let mut sampler = TreeSampler::new(&data);
        let all = enumerate_structures(sampler.candidates(), 2, DEFAULT_MAX_STRUCTURES).unwrap();
        let beta = 0.2;
        let draws = 100_000;
        let mut rng = stream(5, 0);
        let mut freq: HashMap<TreeStructure, usize> = HashMap::new();
        for _ in 0..draws {
            *freq
                .entry(sampler.sample(&y, 2, beta, &mut rng))
                .or_default() += 1;
        }
        for s in &all {
            let p = sampler.probability(s, &y, beta).unwrap();
            let got = *freq.get(s).unwrap_or(&0) as f64 / draws as f64;
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((got - p).abs() <= 4.0 * sd + 1e-12, "{s:?}: {got} vs {p}");
        }
    }

    proptest! {
        #[test]
        fn score_is_bounded_and_monotone(
            y in prop::collection::vec(-5.0f64..5.0, 16),
            first in 0usize..4,
            second in 0usize..4,
        ) {
            let data = grid_data(y.clone());
            let cands = data.candidates();
            prop_assume!(cands.len() == 4 && first != second);
            let one = TreeStructure::new(vec![cands[first]]).unwrap();
            let two = TreeStructure::new(vec![cands[first], cands[second]]).unwrap();
            let d0 = score(&TreeStructure::root().assign(data.rows()), &y);
            let d1 = score(&one.assign(data.rows()), &y);
            let d2 = score(&two.assign(data.rows()), &y);
            let bound = y.iter().map(|v| v * v).sum::<f64>() / 16.0;
            prop_assert!(d0 <= d1 + 1e-12 && d1 <= d2 + 1e-12);
            prop_assert!(d2 <= bound + 1e-12);
        }

        #[test]
        fn split_order_does_not_change_predictions(
            y in prop::collection::vec(-5.0f64..5.0, 16),
            a in 0usize..4,
            b in 0usize..4,
        ) {
            prop_assume!(a != b);
            let data = grid_data(y.clone());
            let cands = data.candidates();
            let ab = TreeStructure::new(vec![cands[a], cands[b]]).unwrap();
            let ba = TreeStructure::new(vec![cands[b], cands[a]]).unwrap();
            let t_ab = fit_leaf_values(&ab, &y, &ab.assign(data.rows()));
            let t_ba = fit_leaf_values(&ba, &y, &ba.assign(data.rows()));
            for row in data.rows().iter() {
                prop_assert!((t_ab.predict_row(row) - t_ba.predict_row(row)).abs() < 1e-12);
            }
        }
    }
}
