//! Fraudulent provers that drop one subtree of the agreed cyclic tree, their
//! memory savings, and their chance of answering every challenge correctly.
//!
//! Three independent estimates of the success probability are provided: the
//! closed form, an exact oracle that sums over challenge sequences, and a
//! seeded Monte Carlo estimate.

use std::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::automata::{check_depth, depth_of, tree_size, AutomataError, Automaton, CyclicTree};

/// Largest depth accepted by [`exact_success`].
pub const EXACT_MAX_DEPTH: u32 = 3;
/// Largest challenge count accepted by [`exact_success`].
pub const EXACT_MAX_ROUNDS: usize = 8;
/// Largest `labels + challenges` bit count for the brute-force check.
pub const ENUMERATION_MAX_BITS: usize = 22;
/// Monte Carlo trials per RNG stream.
pub const MC_CHUNK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FraudError {
    #[error("cannot prune q{index} from a tree of depth {depth}")]
    InvalidPruneTarget { depth: u32, index: usize },
    #[error("{n} challenges is not a positive multiple of the depth {depth}")]
    NotMultipleOfDepth { n: usize, depth: u32 },
    #[error("exact computation for depth {depth} and {n} challenges exceeds the budget")]
    BudgetExceeded { depth: u32, n: usize },
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Automata(#[from] AutomataError),
}

/// Which subtree a fraudulent prover drops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PruneStrategy {
    depth: u32,
    index: usize,
}

impl PruneStrategy {
    /// `q_0` is never entered and `q_1`, `q_2` are the targets of the leaf
    /// wrap edges, so valid targets start at `q_3`.
    pub fn new(depth: u32, index: usize) -> Result<Self, FraudError> {
        check_depth(depth)?;
        if index < 3 || index >= tree_size(depth) {
            return Err(FraudError::InvalidPruneTarget { depth, index });
        }
        Ok(PruneStrategy { depth, index })
    }

    /// Leftmost state at the given tree depth.
    pub fn at_depth(depth: u32, target_depth: u32) -> Result<Self, FraudError> {
        if target_depth > depth || target_depth >= usize::BITS {
            return Err(FraudError::InvalidPruneTarget {
                depth,
                index: usize::MAX,
            });
        }
        PruneStrategy::new(depth, (1usize << target_depth) - 1)
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Tree depth of the dropped state.
    pub fn target_depth(&self) -> u32 {
        depth_of(self.index)
    }

    /// States of the subtree rooted at the target, `2^{d-d_i+1} - 1` of them.
    pub fn removed_states(&self) -> Vec<usize> {
        let n = tree_size(self.depth);
        let mut out = Vec::new();
        let mut level = vec![self.index];
        while !level.is_empty() {
            out.extend_from_slice(&level);
            level = level
                .iter()
                .flat_map(|&x| [2 * x + 1, 2 * x + 2])
                .filter(|&c| c < n)
                .collect();
        }
        out.sort_unstable();
        out
    }

    pub fn freed(&self) -> usize {
        (1usize << (self.depth - self.target_depth() + 1)) - 1
    }

    pub fn retained(&self) -> usize {
        tree_size(self.depth) - self.freed()
    }
}

/// Drops the subtree rooted at `q_i`; the edge that led into it now goes to
/// its sibling.
pub fn prune(tree: &CyclicTree, i: usize) -> Result<Automaton, FraudError> {
    let s = PruneStrategy::new(tree.depth(), i)?;
    let full = tree.to_automaton();
    let n = full.index_count();
    let mut next: Vec<[usize; 2]> = (0..n).map(|q| [full.step(q, false), full.step(q, true)]).collect();
    let mut removed = vec![false; n];
    for q in s.removed_states() {
        removed[q] = true;
    }
    let parent = (i - 1) / 2;
    let bit = (i - 1) % 2;
    next[parent][bit] = next[parent][1 - bit];
    Ok(Automaton::new(0, next, tree.labels().to_vec(), removed)?)
}

/// Fraction of the states a prover pruning `q_i` no longer stores.
pub fn space_saving(depth: u32, i: usize) -> Result<Rational64, FraudError> {
    let s = PruneStrategy::new(depth, i)?;
    Ok(Rational64::new(s.freed() as i64, tree_size(depth) as i64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Analytic,
    Exact,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Analytic => "analytic",
            Method::Exact => "exact",
            Method::MonteCarlo => "monte-carlo",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityResult {
    pub method: Method,
    pub value: f64,
    /// Present for the analytic and exact methods.
    pub exact: Option<BigRational>,
    /// Present for Monte Carlo estimates.
    pub trials: Option<u64>,
    pub stderr: Option<f64>,
}

impl ProbabilityResult {
    fn rational(method: Method, r: BigRational) -> Self {
        ProbabilityResult {
            method,
            value: ratio_to_f64(&r),
            exact: Some(r),
            trials: None,
            stderr: None,
        }
    }

    /// Estimate from `successes` out of `trials` Bernoulli draws.
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        let p = successes as f64 / trials as f64;
        ProbabilityResult {
            method: Method::MonteCarlo,
            value: p,
            exact: None,
            trials: Some(trials),
            stderr: Some((p * (1.0 - p) / trials as f64).sqrt()),
        }
    }
}

impl fmt::Display for ProbabilityResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.exact, self.stderr) {
            (Some(r), _) if self.method == Method::Exact => write!(f, "{r} ({:.6})", self.value),
            (_, Some(se)) => write!(f, "{:.6} ± {se:.6}", self.value),
            _ => write!(f, "{:.6}", self.value),
        }
    }
}

fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // scale both sides down to the top 64 bits
        let shift = r.denom().bits().saturating_sub(64);
        let n = (r.numer() >> shift).to_f64().unwrap_or(f64::NAN);
        let d = (r.denom() >> shift).to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

fn pow2(k: u64) -> BigInt {
    BigInt::one() << k
}

/// Closed form `(1 - 2^{-d_i} + 2^{-(n+1)})^{n/d}`.
pub fn analytic_success(depth: u32, i: usize, n: usize) -> Result<ProbabilityResult, FraudError> {
    let s = PruneStrategy::new(depth, i)?;
    let d = depth as usize;
    if n == 0 || !n.is_multiple_of(d) {
        return Err(FraudError::NotMultipleOfDepth { n, depth });
    }
    let x = (n / d) as u32;
    let e = n as u64 + 1;
    let base = pow2(e) - pow2(e - s.target_depth() as u64) + BigInt::one();
    let r = BigRational::new(base.pow(x), pow2(e).pow(x));
    Ok(ProbabilityResult::rational(Method::Analytic, r))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    /// True when `a` and `b` were in different classes.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
        ra != rb
    }
}

fn challenge_bits(seq: u64, n: usize) -> Vec<bool> {
    (0..n).map(|j| seq >> j & 1 == 1).collect()
}

/// Exact success probability over uniform labels and uniform challenges.
///
/// For each challenge sequence the honest and pruned runs are walked side by
/// side; the responses agree iff every pair of distinct states occupied in
/// the same round carries equal labels. With independent uniform labels that
/// happens with probability `2^{-(V-C)}`, where `V - C` is the number of
/// merges the pairs cause in a union-find over states.
pub fn exact_success(depth: u32, i: usize, n: usize) -> Result<ProbabilityResult, FraudError> {
    PruneStrategy::new(depth, i)?;
    if depth > EXACT_MAX_DEPTH || n > EXACT_MAX_ROUNDS {
        return Err(FraudError::BudgetExceeded { depth, n });
    }
    let tree = CyclicTree::new(depth, vec![false; tree_size(depth)])?;
    let pruned = prune(&tree, i)?;
    // sum of 2^{n - merges}; the final ratio divides by 2^n sequences and 2^n
    let mut total: u64 = 0;
    for seq in 0..1u64 << n {
        let c = challenge_bits(seq, n);
        let mut uf = UnionFind::new(tree.size());
        let mut merges = 0;
        for (a, b) in tree.path(&c).into_iter().zip(pruned.path(&c)) {
            if a != b && uf.union(a, b) {
                merges += 1;
            }
        }
        total += 1 << (n - merges);
    }
    let r = BigRational::new(BigInt::from(total), pow2(2 * n as u64));
    Ok(ProbabilityResult::rational(Method::Exact, r))
}

/// Brute force over every labelling (with `q_0` fixed) and every challenge
/// sequence; used to check [`exact_success`].
pub fn exact_success_by_enumeration(depth: u32, i: usize, n: usize) -> Result<BigRational, FraudError> {
    PruneStrategy::new(depth, i)?;
    let q = tree_size(depth);
    if q - 1 + n > ENUMERATION_MAX_BITS {
        return Err(FraudError::BudgetExceeded { depth, n });
    }
    let shape = CyclicTree::new(depth, vec![false; q])?;
    let shape_pruned = prune(&shape, i)?;
    let paths: Vec<(Vec<usize>, Vec<usize>)> = (0..1u64 << n)
        .map(|seq| {
            let c = challenge_bits(seq, n);
            (shape.path(&c), shape_pruned.path(&c))
        })
        .collect();
    let mut hits: u64 = 0;
    for mask in 0..1u64 << (q - 1) {
        let label = |s: usize| s > 0 && mask >> (s - 1) & 1 == 1;
        for (a, b) in &paths {
            if a.iter().zip(b).all(|(&x, &y)| label(x) == label(y)) {
                hits += 1;
            }
        }
    }
    Ok(BigRational::new(BigInt::from(hits), pow2((q - 1 + n) as u64)))
}

/// Monte Carlo estimate over fresh uniform labels and challenges per trial.
///
/// Trials are split into chunks of [`MC_CHUNK`]; chunk `k` draws from the
/// ChaCha stream `k` of `rng_seed`, so the result does not depend on the
/// number of worker threads.
pub fn mc_success(depth: u32, i: usize, n: usize, trials: u64, rng_seed: u64) -> Result<ProbabilityResult, FraudError> {
    PruneStrategy::new(depth, i)?;
    if trials == 0 {
        return Err(FraudError::NoTrials);
    }
    let tree = CyclicTree::new(depth, vec![false; tree_size(depth)])?;
    let pruned = prune(&tree, i)?;
    let chunks = trials.div_ceil(MC_CHUNK);
    let successes: u64 = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(k);
            let count = MC_CHUNK.min(trials - k * MC_CHUNK);
            // labels are drawn lazily, on first visit within a trial
            let mut stamp = vec![u64::MAX; tree.size()];
            let mut label = vec![false; tree.size()];
            let mut wins = 0;
            for t in 0..count {
                let mut get = |s: usize, rng: &mut ChaCha8Rng| {
                    if stamp[s] != t {
                        stamp[s] = t;
                        label[s] = rng.gen();
                    }
                    label[s]
                };
                let (mut a, mut b) = (0, 0);
                let mut ok = true;
                for _ in 0..n {
                    let c: bool = rng.gen();
                    a = tree.step(a, c);
                    b = pruned.step(b, c);
                    if a != b && get(a, &mut rng) != get(b, &mut rng) {
                        ok = false;
                        break;
                    }
                }
                wins += ok as u64;
            }
            wins
        })
        .sum();
    Ok(ProbabilityResult::from_counts(successes, trials))
}

/// One line of the trade-off table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub i: usize,
    pub d_i: u32,
    pub space_saving: f64,
    pub n: usize,
    pub method: Method,
    pub probability: f64,
    pub stderr: Option<f64>,
}

/// CSV column names, in serialization order.
pub const TRADEOFF_HEADER: [&str; 7] = ["i", "d_i", "space_saving", "n", "method", "probability", "stderr"];

/// Closed-form success probability for every prune target and challenge
/// count, grouped by target.
pub fn tradeoff_table(depth: u32, n_list: &[usize], i_list: &[usize]) -> Result<Vec<TradeoffRow>, FraudError> {
    let mut rows = Vec::with_capacity(n_list.len() * i_list.len());
    for &i in i_list {
        let s = PruneStrategy::new(depth, i)?;
        let saving = space_saving(depth, i)?;
        for &n in n_list {
            let p = analytic_success(depth, i, n)?;
            rows.push(TradeoffRow {
                i,
                d_i: s.target_depth(),
                space_saving: *saving.numer() as f64 / *saving.denom() as f64,
                n,
                method: Method::Analytic,
                probability: p.value,
                stderr: None,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: u64, d: u64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn prune_depth_two_leaf() {
        let t = CyclicTree::from_seed(2, b"p").unwrap();
        let a = prune(&t, 3).unwrap();
        assert_eq!(a.step(1, false), 4);
        assert_eq!(a.step(1, true), 4);
        assert_eq!(a.size(), 6);
        assert!(a.is_removed(3));
    }

    #[test]
    fn prune_depth_three_inner() {
        let s = PruneStrategy::new(3, 4).unwrap();
        assert_eq!(s.removed_states(), vec![4, 9, 10]);
        let t = CyclicTree::from_seed(3, b"p").unwrap();
        assert_eq!(prune(&t, 4).unwrap().size(), 12);
    }

    #[test]
    fn invalid_targets() {
        for i in [0, 1, 2, 7] {
            assert_eq!(
                PruneStrategy::new(2, i),
                Err(FraudError::InvalidPruneTarget { depth: 2, index: i })
            );
        }
    }

    #[test]
    fn space_savings() {
        assert_eq!(space_saving(12, 7).unwrap(), Rational64::new(1023, 8191));
        assert_eq!(space_saving(2, 3).unwrap(), Rational64::new(1, 7));
        assert_eq!(space_saving(5, 62).unwrap(), Rational64::new(1, 63));
    }

    #[test]
    fn analytic_small_case() {
        let r = analytic_success(2, 3, 2).unwrap();
        assert_eq!(r.exact.unwrap(), q(7, 8));
        assert_eq!(
            analytic_success(2, 3, 3),
            Err(FraudError::NotMultipleOfDepth { n: 3, depth: 2 })
        );
    }

    #[test]
    fn analytic_large_exponent_converts_to_float() {
        let r = analytic_success(12, 7, 768).unwrap();
        let direct = (1.0f64 - 0.125).powi(64);
        assert!((r.value - direct).abs() / direct < 1e-9);
    }

    #[test]
    fn exact_matches_enumeration_and_small_cases() {
        for i in 3..7 {
            let e = exact_success(2, i, 2).unwrap().exact.unwrap();
            assert_eq!(e, q(7, 8));
            assert_eq!(exact_success_by_enumeration(2, i, 2).unwrap(), e);
        }
        assert_eq!(exact_success(2, 3, 0).unwrap().exact.unwrap(), q(1, 1));
        assert!(matches!(exact_success(4, 3, 4), Err(FraudError::BudgetExceeded { .. })));
    }

    #[test]
    fn exact_depth_three_hand_value() {
        assert_eq!(exact_success(3, 3, 3).unwrap().exact.unwrap(), q(13, 16));
    }

    #[test]
    fn monte_carlo_single_trial_and_determinism() {
        let one = mc_success(2, 3, 2, 1, 9).unwrap();
        assert!(one.value == 0.0 || one.value == 1.0);
        assert_eq!(
            mc_success(3, 4, 6, 10_000, 5).unwrap(),
            mc_success(3, 4, 6, 10_000, 5).unwrap()
        );
        assert_eq!(mc_success(2, 3, 2, 0, 1), Err(FraudError::NoTrials));
    }

    #[test]
    fn tradeoff_rows() {
        assert!(tradeoff_table(12, &[48], &[]).unwrap().is_empty());
        let rows = tradeoff_table(12, &[48], &[4095]).unwrap();
        let expected = (1.0f64 - 1.0 / 4096.0).powi(4);
        assert!((rows[0].probability - expected).abs() < 1e-12);
        assert!((rows[0].probability - 0.99902).abs() < 1e-5);
    }
}
