//! State-labelled automata over the binary alphabet, with the cyclic tree
//! family and its pseudorandom construction.
//!
//! A cyclic tree of depth `d` has states `q_0 .. q_{2^{d+1}-2}`. Internal
//! states step to their children (`q_i --0--> q_{2i+1}`,
//! `q_i --1--> q_{2i+2}`); leaves wrap back to `q_1` on 0 and `q_2` on 1, so
//! every block of `d` challenges walks one root-to-leaf path.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Largest supported depth; keeps state indices and label vectors sane.
pub const MAX_DEPTH: u32 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutomataError {
    #[error("depth {depth} expects {expected} labels, got {got}")]
    LabelLengthMismatch { depth: u32, expected: usize, got: usize },
    #[error("depth must be between 1 and {MAX_DEPTH}, got {0}")]
    InvalidDepth(u32),
    #[error("transition from q{from} targets invalid state q{to}")]
    BadTransition { from: usize, to: usize },
    #[error("initial state q{0} is missing or removed")]
    BadInitial(usize),
    #[error("malformed serialization: {0}")]
    Malformed(String),
}

/// Explicit transition table. Removed states keep their index so that a
/// pruned automaton can be compared state by state with its original.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Automaton {
    initial: usize,
    next: Vec<[usize; 2]>,
    labels: Vec<bool>,
    removed: Vec<bool>,
}

impl Automaton {
    pub fn new(
        initial: usize,
        next: Vec<[usize; 2]>,
        labels: Vec<bool>,
        removed: Vec<bool>,
    ) -> Result<Self, AutomataError> {
        let n = next.len();
        if labels.len() != n || removed.len() != n {
            return Err(AutomataError::Malformed(
                "transition, label and removal tables differ in length".into(),
            ));
        }
        if initial >= n || removed[initial] {
            return Err(AutomataError::BadInitial(initial));
        }
        for (q, targets) in next.iter().enumerate() {
            if removed[q] {
                continue;
            }
            for &t in targets {
                if t >= n || removed[t] {
                    return Err(AutomataError::BadTransition { from: q, to: t });
                }
            }
        }
        let (mut next, mut labels) = (next, labels);
        // removed states carry no data, so equal automata compare equal
        for q in (0..n).filter(|&q| removed[q]) {
            next[q] = [q, q];
            labels[q] = false;
        }
        Ok(Automaton {
            initial,
            next,
            labels,
            removed,
        })
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    /// Number of state indices, removed ones included.
    pub fn index_count(&self) -> usize {
        self.next.len()
    }

    /// Number of retained states.
    pub fn size(&self) -> usize {
        self.removed.iter().filter(|r| !**r).count()
    }

    pub fn is_removed(&self, q: usize) -> bool {
        self.removed[q]
    }

    pub fn step(&self, q: usize, c: bool) -> usize {
        self.next[q][c as usize]
    }

    pub fn label(&self, q: usize) -> bool {
        self.labels[q]
    }

    /// States visited after each challenge.
    pub fn path(&self, challenges: &[bool]) -> Vec<usize> {
        let mut q = self.initial;
        challenges
            .iter()
            .map(|&c| {
                q = self.step(q, c);
                q
            })
            .collect()
    }

    /// Labels of the states visited after each challenge.
    pub fn run(&self, challenges: &[bool]) -> Vec<bool> {
        self.path(challenges).into_iter().map(|q| self.label(q)).collect()
    }

    /// Parses the explicit listing produced by `Display`.
    pub fn parse(text: &str) -> Result<Self, AutomataError> {
        let bad = |m: &str| AutomataError::Malformed(m.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let mut parts = header.split_whitespace();
        let (Some("automaton"), Some(n), Some(init)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected 'automaton <states> <initial>'"));
        };
        let n: usize = n.parse().map_err(|_| bad("bad state count"))?;
        let initial: usize = init.parse().map_err(|_| bad("bad initial state"))?;
        let mut next = vec![[0, 0]; n];
        let mut labels = vec![false; n];
        let mut removed = vec![true; n];
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let [q, label, t0, t1] = f.as_slice() else {
                return Err(bad(line));
            };
            let q: usize = q.parse().map_err(|_| bad(line))?;
            if q >= n {
                return Err(bad(line));
            }
            labels[q] = match *label {
                "0" => false,
                "1" => true,
                _ => return Err(bad(line)),
            };
            next[q] = [t0.parse().map_err(|_| bad(line))?, t1.parse().map_err(|_| bad(line))?];
            removed[q] = false;
        }
        Automaton::new(initial, next, labels, removed)
    }
}

/// `automaton <indices> <initial>` followed by `q label next0 next1` for each
/// retained state.
impl fmt::Display for Automaton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "automaton {} {}", self.next.len(), self.initial)?;
        for q in 0..self.next.len() {
            if !self.removed[q] {
                let [a, b] = self.next[q];
                writeln!(f, "{q} {} {a} {b}", self.labels[q] as u8)?;
            }
        }
        Ok(())
    }
}

/// A labelled cyclic tree; transitions are implicit in the indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CyclicTree {
    depth: u32,
    labels: Vec<bool>,
}

/// `2^{d+1} - 1`.
pub fn tree_size(depth: u32) -> usize {
    (1usize << (depth + 1)) - 1
}

/// Depth of `q_i` in the tree: `floor(log2(i + 1))`.
pub fn depth_of(i: usize) -> u32 {
    usize::BITS - 1 - (i + 1).leading_zeros()
}

pub(crate) fn check_depth(depth: u32) -> Result<(), AutomataError> {
    if (1..=MAX_DEPTH).contains(&depth) {
        Ok(())
    } else {
        Err(AutomataError::InvalidDepth(depth))
    }
}

impl CyclicTree {
    /// The label of `q_0` is never emitted and is normalised to 0.
    pub fn new(depth: u32, mut labels: Vec<bool>) -> Result<Self, AutomataError> {
        check_depth(depth)?;
        let expected = tree_size(depth);
        if labels.len() != expected {
            return Err(AutomataError::LabelLengthMismatch {
                depth,
                expected,
                got: labels.len(),
            });
        }
        labels[0] = false;
        Ok(CyclicTree { depth, labels })
    }

    /// Labels from a counter-mode SHA-256 stream: block `j` is
    /// `SHA-256(seed || j)` with `j` as 8 big-endian bytes, and bits are read
    /// least significant first within each byte.
    pub fn from_seed(depth: u32, seed: &[u8]) -> Result<Self, AutomataError> {
        check_depth(depth)?;
        let n = tree_size(depth);
        let mut labels = Vec::with_capacity(n);
        let mut counter: u64 = 0;
        while labels.len() < n {
            let mut h = Sha256::new();
            h.update(seed);
            h.update(counter.to_be_bytes());
            let block = h.finalize();
            for byte in block.iter() {
                for bit in 0..8 {
                    if labels.len() < n {
                        labels.push(byte >> bit & 1 == 1);
                    }
                }
            }
            counter += 1;
        }
        CyclicTree::new(depth, labels)
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn label(&self, q: usize) -> bool {
        self.labels[q]
    }

    /// Index of the first leaf, `2^d - 1`.
    pub fn first_leaf(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn step(&self, q: usize, c: bool) -> usize {
        if q < self.first_leaf() {
            2 * q + 1 + c as usize
        } else {
            1 + c as usize
        }
    }

    pub fn path(&self, challenges: &[bool]) -> Vec<usize> {
        let mut q = 0;
        challenges
            .iter()
            .map(|&c| {
                q = self.step(q, c);
                q
            })
            .collect()
    }

    pub fn run(&self, challenges: &[bool]) -> Vec<bool> {
        self.path(challenges).into_iter().map(|q| self.label(q)).collect()
    }

    pub fn to_automaton(&self) -> Automaton {
        let n = self.size();
        let next = (0..n).map(|q| [self.step(q, false), self.step(q, true)]).collect();
        Automaton {
            initial: 0,
            next,
            labels: self.labels.clone(),
            removed: vec![false; n],
        }
    }

    /// Labels packed most significant bit first, as lowercase hex.
    pub fn labels_hex(&self) -> String {
        let mut out = String::with_capacity(self.size() / 4 + 2);
        for chunk in self.labels.chunks(8) {
            let mut byte = 0u8;
            for (j, &b) in chunk.iter().enumerate() {
                byte |= (b as u8) << (7 - j);
            }
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Inverse of [`Display`](fmt::Display): `<depth>:<hex labels>`.
    pub fn parse(text: &str) -> Result<Self, AutomataError> {
        let (d, hex) = text
            .trim()
            .split_once(':')
            .ok_or_else(|| AutomataError::Malformed("expected '<depth>:<hex>'".into()))?;
        let depth: u32 = d
            .parse()
            .map_err(|_| AutomataError::Malformed(format!("bad depth '{d}'")))?;
        check_depth(depth)?;
        let n = tree_size(depth);
        if hex.len() != n.div_ceil(8) * 2 {
            return Err(AutomataError::Malformed(format!(
                "depth {depth} needs {} hex digits",
                n.div_ceil(8) * 2
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for k in (0..hex.len()).step_by(2) {
            let byte = u8::from_str_radix(&hex[k..k + 2], 16)
                .map_err(|_| AutomataError::Malformed(format!("bad hex at {k}")))?;
            for j in 0..8 {
                if labels.len() < n {
                    labels.push(byte >> (7 - j) & 1 == 1);
                }
            }
        }
        CyclicTree::new(depth, labels)
    }
}

impl fmt::Display for CyclicTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.depth, self.labels_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn depth_two_transitions() {
        let t = CyclicTree::new(2, vec![false; 7]).unwrap();
        assert_eq!(t.step(0, true), 2);
        assert_eq!(t.step(5, true), 2);
        assert_eq!(t.step(3, false), 1);
        assert_eq!(t.path(&bits("011")), vec![1, 4, 2]);
    }

    #[test]
    fn depth_one_leaves_wrap_to_themselves() {
        let t = CyclicTree::new(1, vec![false; 3]).unwrap();
        assert_eq!(t.step(1, false), 1);
        assert_eq!(t.step(1, true), 2);
        assert_eq!(t.step(2, false), 1);
    }

    #[test]
    fn label_count_is_checked() {
        assert_eq!(
            CyclicTree::new(2, vec![false; 6]),
            Err(AutomataError::LabelLengthMismatch {
                depth: 2,
                expected: 7,
                got: 6
            })
        );
        assert!(CyclicTree::new(0, vec![false]).is_err());
    }

    #[test]
    fn empty_run_is_empty() {
        let t = CyclicTree::from_seed(3, b"x").unwrap();
        assert!(t.run(&[]).is_empty());
    }

    #[test]
    fn explicit_table_agrees_with_implicit_steps() {
        let t = CyclicTree::from_seed(3, b"seed").unwrap();
        let a = t.to_automaton();
        let c = bits("0110100111010");
        assert_eq!(a.run(&c), t.run(&c));
        assert_eq!(a.size(), 15);
    }

    #[test]
    fn prefix_index_is_binary_counter() {
        let t = CyclicTree::new(4, vec![false; 31]).unwrap();
        for p in ["0", "1", "01", "110", "1011"] {
            let q = *t.path(&bits(p)).last().unwrap();
            let idx = usize::from_str_radix(&format!("1{p}"), 2).unwrap() - 1;
            assert_eq!(q, idx, "prefix {p}");
        }
    }

    #[test]
    fn depth_of_matches_levels() {
        assert_eq!(depth_of(0), 0);
        assert_eq!(depth_of(2), 1);
        assert_eq!(depth_of(3), 2);
        assert_eq!(depth_of(6), 2);
        assert_eq!(depth_of(7), 3);
    }

    #[test]
    fn serialisations_round_trip() {
        let t = CyclicTree::from_seed(5, b"round trip").unwrap();
        assert_eq!(CyclicTree::parse(&t.to_string()).unwrap(), t);
        let a = t.to_automaton();
        assert_eq!(Automaton::parse(&a.to_string()).unwrap(), a);
    }

    #[test]
    fn seeded_construction_is_deterministic() {
        assert_eq!(
            CyclicTree::from_seed(6, b"abc").unwrap(),
            CyclicTree::from_seed(6, b"abc").unwrap()
        );
        assert_ne!(
            CyclicTree::from_seed(6, b"abc").unwrap(),
            CyclicTree::from_seed(6, b"abd").unwrap()
        );
    }
}
