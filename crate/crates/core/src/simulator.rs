//! Timed simulation of the lookup-based erasure protocol.
//!
//! A session runs an initial phase that agrees on a cyclic tree, a fast
//! phase of `n` one-bit challenges answered by automaton lookups, and a final
//! phase in which the verifier checks every round-trip time against the time
//! bound and every response against its own copy of the automaton.
//!
//! Messages travel at the minimum network latency `2d/c`, so a responder at
//! distance `d` from the verifier produces round-trip times of `4d/c` plus
//! the configured processing delay.

use std::fmt;

use num_traits::{Signed, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::automata::{tree_size, Automaton, CyclicTree, MAX_DEPTH};
use crate::fraud::{prune, FraudError, ProbabilityResult, PruneStrategy};
use crate::semantics::Time;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid session configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Fraud(#[from] FraudError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "prune")]
pub enum ProverMode {
    Honest,
    /// Answers from the tree with the subtree at `q_i` removed.
    Fraudulent(usize),
}

/// A third party that answers the fast phase in the prover's place.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attacker {
    pub position: Time,
    /// Whether the attacker holds the key shared by verifier and prover.
    pub has_key: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub depth: u32,
    pub rounds: usize,
    pub time_bound: Time,
    pub speed: Time,
    pub verifier_position: Time,
    pub prover_position: Time,
    pub attacker: Option<Attacker>,
    pub prover: ProverMode,
    pub processing_delay: Time,
    pub rng_seed: u64,
}

impl SessionConfig {
    /// Honest prover next to the verifier, no attacker, zero processing delay.
    pub fn new(depth: u32, rounds: usize, time_bound: Time, speed: Time) -> Self {
        SessionConfig {
            depth,
            rounds,
            time_bound,
            speed,
            verifier_position: Time::zero(),
            prover_position: Time::zero(),
            attacker: None,
            prover: ProverMode::Honest,
            processing_delay: Time::zero(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return bad(format!("depth must be between 1 and {MAX_DEPTH}"));
        }
        if self.rounds == 0 {
            return bad("at least one round is required".into());
        }
        if !self.time_bound.is_positive() {
            return bad("time bound must be positive".into());
        }
        if !self.speed.is_positive() {
            return bad("speed must be positive".into());
        }
        if self.processing_delay.is_negative() {
            return bad("processing delay must be nonnegative".into());
        }
        if let ProverMode::Fraudulent(i) = self.prover {
            PruneStrategy::new(self.depth, i)?;
        }
        Ok(())
    }

    /// Round-trip time of one fast-phase round for a responder at `position`.
    pub fn round_trip(&self, position: Time) -> Time {
        let d = (position - self.verifier_position).abs();
        Time::from_integer(4) * d / self.speed + self.processing_delay
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "round")]
pub enum RejectReason {
    RttExceeded(usize),
    WrongResponse(usize),
    AuthFailed,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::RttExceeded(r) => write!(f, "rtt_exceeded({r})"),
            RejectReason::WrongResponse(r) => write!(f, "wrong_response({r})"),
            RejectReason::AuthFailed => f.write_str("auth_failed"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionOutcome {
    pub accepted: bool,
    pub reject_reason: Option<RejectReason>,
    #[serde(serialize_with = "times_as_strings")]
    pub rtts: Vec<Time>,
    /// `(challenge, response)` per round.
    pub transcript: Vec<(bool, bool)>,
    pub prover_resident_states: usize,
}

fn times_as_strings<S: Serializer>(ts: &[Time], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(ts.iter().map(|t| t.to_string()))
}

impl fmt::Display for SessionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, ((c, r), rtt)) in self.transcript.iter().zip(&self.rtts).enumerate() {
            writeln!(f, "round {j}: challenge {} response {} rtt {rtt}", *c as u8, *r as u8)?;
        }
        writeln!(f, "prover resident states: {}", self.prover_resident_states)?;
        match self.reject_reason {
            None => writeln!(f, "ACCEPTED"),
            Some(r) => writeln!(f, "REJECTED {r}"),
        }
    }
}

/// Runs one session drawing from ChaCha stream 0 of the configured seed.
pub fn simulate_session(config: &SessionConfig) -> Result<SessionOutcome, SimError> {
    config.validate()?;
    Ok(run_session(config, 0))
}

fn run_session(config: &SessionConfig, stream: u64) -> SessionOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(stream);

    // initial phase: key and both nonces seed the shared automaton
    let mut seed = [0u8; 48];
    rng.fill_bytes(&mut seed);
    let verifier = CyclicTree::from_seed(config.depth, &seed).expect("validated depth");
    let held: Automaton = match config.prover {
        ProverMode::Honest => verifier.to_automaton(),
        ProverMode::Fraudulent(i) => {
            let own = CyclicTree::from_seed(config.depth, &seed).expect("validated depth");
            prune(&own, i).expect("validated prune target")
        }
    };
    let resident = held.size();

    let (responder, position) = match &config.attacker {
        Some(a) if !a.has_key => {
            return SessionOutcome {
                accepted: false,
                reject_reason: Some(RejectReason::AuthFailed),
                rtts: Vec::new(),
                transcript: Vec::new(),
                prover_resident_states: resident,
            }
        }
        // a keyed attacker rebuilds the full automaton itself
        Some(a) => (verifier.to_automaton(), a.position),
        None => (held, config.prover_position),
    };

    let rtt = config.round_trip(position);
    let mut rtts = Vec::with_capacity(config.rounds);
    let mut transcript = Vec::with_capacity(config.rounds);
    let (mut qv, mut qp) = (0, responder.initial());
    let mut late = None;
    let mut wrong = None;
    for j in 0..config.rounds {
        let c: bool = rng.gen();
        qv = verifier.step(qv, c);
        qp = responder.step(qp, c);
        let r = responder.label(qp);
        if rtt > config.time_bound && late.is_none() {
            late = Some(j);
        }
        if r != verifier.label(qv) && wrong.is_none() {
            wrong = Some(j);
        }
        rtts.push(rtt);
        transcript.push((c, r));
    }

    let reject_reason = late
        .map(RejectReason::RttExceeded)
        .or(wrong.map(RejectReason::WrongResponse));
    SessionOutcome {
        accepted: reject_reason.is_none(),
        reject_reason,
        rtts,
        transcript,
        prover_resident_states: resident,
    }
}

/// Fraction of `sessions` accepted; session `k` uses ChaCha stream `k`.
pub fn acceptance_rate(config: &SessionConfig, sessions: u64) -> Result<ProbabilityResult, SimError> {
    config.validate()?;
    if sessions == 0 {
        return Err(SimError::ConfigInvalid("at least one session is required".into()));
    }
    let accepted: u64 = (0..sessions)
        .into_par_iter()
        .map(|k| run_session(config, k).accepted as u64)
        .sum();
    Ok(ProbabilityResult::from_counts(accepted, sessions))
}

/// States held by a prover in the given mode.
pub fn resident_states(depth: u32, mode: ProverMode) -> Result<usize, SimError> {
    Ok(match mode {
        ProverMode::Honest => tree_size(depth),
        ProverMode::Fraudulent(i) => PruneStrategy::new(depth, i)?.retained(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: i64) -> Time {
        Time::from_integer(n)
    }

    #[test]
    fn honest_feasible_session_accepts() {
        let mut cfg = SessionConfig::new(4, 20, t(4), t(2));
        cfg.prover_position = t(2);
        let out = simulate_session(&cfg).unwrap();
        assert!(out.accepted);
        assert_eq!(out.rtts, vec![t(4); 20]);
        assert_eq!(out.prover_resident_states, 31);
    }

    #[test]
    fn distant_prover_is_late_from_round_zero() {
        let mut cfg = SessionConfig::new(4, 5, t(4), t(2));
        cfg.prover_position = Time::new(5, 2);
        let out = simulate_session(&cfg).unwrap();
        assert_eq!(out.reject_reason, Some(RejectReason::RttExceeded(0)));
    }

    #[test]
    fn keyless_attacker_fails_authentication() {
        let mut cfg = SessionConfig::new(3, 5, t(4), t(2));
        cfg.attacker = Some(Attacker {
            position: t(1),
            has_key: false,
        });
        let out = simulate_session(&cfg).unwrap();
        assert_eq!(out.reject_reason, Some(RejectReason::AuthFailed));
        assert!(out.transcript.is_empty());
    }

    #[test]
    fn keyed_attacker_is_timed_by_its_own_distance() {
        let mut cfg = SessionConfig::new(3, 5, t(4), t(2));
        cfg.prover_position = t(100);
        cfg.attacker = Some(Attacker {
            position: t(2),
            has_key: true,
        });
        assert!(simulate_session(&cfg).unwrap().accepted);
        cfg.attacker.as_mut().unwrap().position = t(3);
        assert_eq!(
            simulate_session(&cfg).unwrap().reject_reason,
            Some(RejectReason::RttExceeded(0))
        );
    }

    #[test]
    fn fraudulent_resident_states() {
        let mut cfg = SessionConfig::new(3, 3, t(4), t(2));
        cfg.prover = ProverMode::Fraudulent(4);
        assert_eq!(simulate_session(&cfg).unwrap().prover_resident_states, 12);
        assert_eq!(resident_states(3, ProverMode::Fraudulent(4)).unwrap(), 12);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SessionConfig::new(3, 0, t(4), t(2));
        assert!(simulate_session(&cfg).is_err());
        cfg.rounds = 2;
        cfg.time_bound = t(0);
        assert!(simulate_session(&cfg).is_err());
        cfg.time_bound = t(1);
        cfg.prover = ProverMode::Fraudulent(1);
        assert!(simulate_session(&cfg).is_err());
    }
}
