//! Trace predicates: the distant-attacker guard, erasure-claim verdicts and
//! the causality pattern behind the timing argument.

use std::fmt;

use super::{Event, Time, TimedTrace, Topology, ERASURE};
use crate::terms::{Agent, Term};

/// Every actor of `trace` other than `b` is honest or at distance at least
/// `delta` from `a`. Agents unknown to the topology fail the guard.
pub fn dist_sep(trace: &TimedTrace, a: &Agent, b: &Agent, delta: Time, topo: &Topology) -> bool {
    trace
        .actors()
        .iter()
        .filter(|c| *c != b)
        .all(|c| topo.is_honest(c) || topo.distance(a, c).is_ok_and(|d| d >= delta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClaimStatus {
    Satisfied,
    Violated,
    /// Dishonest claimer, or the distance guard does not hold.
    NotApplicable,
}

impl fmt::Display for ClaimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClaimStatus::Satisfied => "satisfied",
            ClaimStatus::Violated => "VIOLATED",
            ClaimStatus::NotApplicable => "not-applicable",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClaimVerdict {
    pub index: usize,
    pub time: Time,
    pub verifier: Agent,
    pub prover: Agent,
    pub msg: Term,
    pub status: ClaimStatus,
}

/// One verdict per erasure claim: correct iff the prover sent or received the
/// claimed message strictly before the claim.
pub fn check_erasure_claims(trace: &TimedTrace, delta: Time, topo: &Topology) -> Vec<ClaimVerdict> {
    let mut out = Vec::new();
    for (index, (t, e)) in trace.iter().enumerate() {
        let Event::Claim {
            actor,
            property,
            peer,
            msg,
        } = e
        else {
            continue;
        };
        if &**property != ERASURE {
            continue;
        }
        let status = if !topo.is_honest(actor) || !dist_sep(trace, actor, peer, delta, topo) {
            ClaimStatus::NotApplicable
        } else if trace.iter().any(|(t2, e2)| {
            t2 < t
                && matches!(e2, Event::Send { actor: b, msg: m } | Event::Recv { actor: b, msg: m }
                    if b == peer && m == msg)
        }) {
            ClaimStatus::Satisfied
        } else {
            ClaimStatus::Violated
        };
        out.push(ClaimVerdict {
            index,
            time: *t,
            verifier: actor.clone(),
            prover: peer.clone(),
            msg: msg.clone(),
            status,
        });
    }
    out
}

/// For every erasure claim of an honest agent `a` on `r = h(k(a,b), n, m, c)`
/// there are entries `i < k < j` with `send_a(c)`, `send_b'(r)` and
/// `recv_a(r)` before the claim, where `b' = b` or both are dishonest.
pub fn check_causality(trace: &TimedTrace, topo: &Topology) -> bool {
    let entries = trace.entries();
    entries.iter().enumerate().all(|(claim, (_, e))| {
        let Event::Claim {
            actor: a,
            property,
            peer: b,
            msg: r,
        } = e
        else {
            return true;
        };
        if &**property != ERASURE || !topo.is_honest(a) {
            return true;
        }
        let Term::Hash(args) = r else {
            return true;
        };
        let [Term::SharedKey(ka, kb), _, _, c] = args.as_slice() else {
            return true;
        };
        if ka != a || kb != b {
            return true;
        }
        let sends_c: Vec<usize> = positions(
            entries,
            |e| matches!(e, Event::Send { actor, msg } if actor == a && msg == c),
        );
        let sends_r: Vec<usize> = positions(entries, |e| match e {
            Event::Send { actor: b2, msg } if msg == r => b2 == b || (topo.is_dishonest(b) && topo.is_dishonest(b2)),
            _ => false,
        });
        let recvs_r: Vec<usize> = positions(
            entries,
            |e| matches!(e, Event::Recv { actor, msg } if actor == a && msg == r),
        );
        sends_c.iter().any(|&i| {
            sends_r
                .iter()
                .any(|&k| i < k && recvs_r.iter().any(|&j| k < j && j < claim))
        })
    })
}

fn positions(entries: &[(Time, Event)], pred: impl Fn(&Event) -> bool) -> Vec<usize> {
    entries
        .iter()
        .enumerate()
        .filter(|(_, (_, e))| pred(e))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terms::Honesty;

    fn topo() -> Topology {
        Topology::new(Time::from_integer(2))
            .unwrap()
            .agent("a", Honesty::Honest, 0)
            .agent("b", Honesty::Dishonest, 1)
            .agent("e", Honesty::Dishonest, 1)
    }

    fn trace(text: &str) -> TimedTrace {
        TimedTrace::parse(text).unwrap()
    }

    #[test]
    fn prover_action_must_strictly_precede_the_claim() {
        let tr = trace("(1, recv(b, const(m)))\n(1, claim(a, erasure, b, const(m)))");
        let v = check_erasure_claims(&tr, Time::from_integer(0), &topo());
        assert_eq!(v[0].status, ClaimStatus::Violated);
    }

    #[test]
    fn dishonest_claimers_are_not_judged() {
        let tr = trace("(0, claim(e, erasure, b, const(m)))");
        let v = check_erasure_claims(&tr, Time::from_integer(0), &topo());
        assert_eq!(v[0].status, ClaimStatus::NotApplicable);
    }

    #[test]
    fn causality_needs_a_response_send() {
        let r = "h(k(a,b), nonce(b,0), nonce(a,0), nonce(a,1))";
        let base = format!("(0, send(a, nonce(a,1)))\n(2, recv(a, {r}))\n(2, claim(a, erasure, b, {r}))");
        assert!(!check_causality(&trace(&base), &topo()));
        let by_b = base.replace("(2, recv", &format!("(1, send(b, {r}))\n(2, recv"));
        assert!(check_causality(&trace(&by_b), &topo()));
        // a dishonest accomplice may stand in for a dishonest prover
        let by_e = base.replace("(2, recv", &format!("(1, send(e, {r}))\n(2, recv"));
        assert!(check_causality(&trace(&by_e), &topo()));
        assert!(check_causality(&TimedTrace::new(), &topo()));
    }
}
