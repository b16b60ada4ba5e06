//! Concrete rule sets and attack constructions: the challenge-echo protocol,
//! a keyed SPEED variant with its key-sharing attack, the time-bounded
//! erasure protocol, and the clone transformation for zero-distance
//! attackers.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::semantics::{
    apply_adv, apply_net, apply_protocol_rule, Binding, Event, NamedProtocol, Pattern, RuleBuilder, SemanticsError,
    Time, TimedTrace, Topology, Value, ERASURE,
};
use crate::terms::{Agent, Honesty, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unknown protocol '{0}' (expected perito-tsudik, erasure or speed)")]
    UnknownProtocol(String),
    #[error("invalid topology: {0}")]
    TopologyInvalid(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// Looks a protocol up by its scenario-file name.
pub fn by_name(name: &str, time_bound: Time, n_bits: Option<usize>) -> Result<NamedProtocol, ProtocolError> {
    match name {
        "perito-tsudik" => Ok(perito_tsudik()),
        "erasure" => erasure_protocol(time_bound),
        "speed" | "speed-attack" => speed(n_bits.unwrap_or(4)),
        other => Err(ProtocolError::UnknownProtocol(other.to_string())),
    }
}

fn v(name: &str) -> Pattern {
    Pattern::var(name)
}

/// The verifier sends a fresh nonce, the prover echoes it back, and the
/// verifier claims erasure once the echo arrives.
pub fn perito_tsudik() -> NamedProtocol {
    let rules = vec![
        RuleBuilder::new("V1", "V")
            .nonce("NV", "V")
            .fresh("NV")
            .then_send(v("NV")),
        RuleBuilder::new("P1", "P")
            .msg("N")
            .received("r", v("N"))
            .then_send(v("N")),
        RuleBuilder::new("V2", "V")
            .agent("P")
            .nonce("NV", "V")
            .sent("s", v("NV"))
            .received("r", v("NV"))
            .before("s", "r")
            .then_claim(ERASURE, "P", v("NV")),
    ];
    let rules = rules
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .expect("challenge-echo rules are well formed");
    NamedProtocol::new("perito-tsudik", rules).expect("challenge-echo rules are well formed")
}

fn v3_response() -> Pattern {
    Pattern::hash(vec![Pattern::key("V", "P"), v("NP"), v("NV"), v("C")])
}

fn v1_message() -> Pattern {
    Pattern::pair(v("NV"), Pattern::mac(Pattern::key("V", "P"), vec![v("NP"), v("NV")]))
}

/// Mutual authentication followed by one timed challenge: the verifier
/// claims erasure when `h(k(V,P), NP, NV, C)` returns within `time_bound` of
/// sending `C`.
pub fn erasure_protocol(time_bound: Time) -> Result<NamedProtocol, ProtocolError> {
    if time_bound <= Time::from_integer(0) {
        return Err(ProtocolError::PreconditionFailed(format!(
            "time bound must be positive, got {time_bound}"
        )));
    }
    let rules = vec![
        RuleBuilder::new("P1", "P")
            .nonce("NP", "P")
            .fresh("NP")
            .then_send(v("NP"))?,
        RuleBuilder::new("V1", "V")
            .agent("P")
            .msg("NP")
            .nonce("NV", "V")
            .received("r", v("NP"))
            .fresh("NV")
            .then_send(v1_message())?,
        RuleBuilder::new("P2", "P")
            .agent("V")
            .nonce("NP", "P")
            .msg("NV")
            .msg("C")
            .sent("s", v("NP"))
            .received("m", v1_message())
            .received("c", v("C"))
            .before("s", "m")
            .before("m", "c")
            .then_send(v3_response())?,
        RuleBuilder::new("V2", "V")
            .agent("P")
            .msg("NP")
            .nonce("NV", "V")
            .nonce("C", "V")
            .sent("s", v1_message())
            .fresh("C")
            .then_send(v("C"))?,
        RuleBuilder::new("V3", "V")
            .agent("P")
            .msg("NP")
            .nonce("NV", "V")
            .nonce("C", "V")
            .sent("s", v1_message())
            .sent("c", v("C"))
            .received("r", v3_response())
            .before("s", "c")
            .before("c", "r")
            .within("c", "r", time_bound)
            .then_claim(ERASURE, "P", v3_response())?,
    ];
    Ok(NamedProtocol::new("erasure", rules)?)
}

fn mem_value() -> Term {
    Term::constant("MeM")
}

fn zero() -> Term {
    Term::constant("0")
}

fn m_var(i: usize) -> String {
    format!("M{i}")
}

fn speed_transcript_mac(key: Pattern, ms: &[Pattern]) -> Pattern {
    let transcript = ms
        .iter()
        .map(|m| Pattern::pair(Pattern::constant("0"), m.clone()))
        .collect();
    Pattern::mac(
        key.clone(),
        vec![Pattern::mac(key, transcript), Pattern::constant("MeM")],
    )
}

/// Verifier side of SPEED with a shared MAC key and `n_bits` fast-phase
/// rounds. Only all-zero challenges are modelled: the response to challenge
/// `0` in round `i` is `M_i` itself.
pub fn speed(n_bits: usize) -> Result<NamedProtocol, ProtocolError> {
    if n_bits == 0 {
        return Err(ProtocolError::PreconditionFailed(
            "at least one fast-phase round is needed".into(),
        ));
    }
    let names: Vec<String> = (1..=n_bits).map(m_var).collect();
    let ms: Vec<Pattern> = names.iter().map(|n| v(n)).collect();
    let commitment = Pattern::hash(ms.clone());

    let mut v1 = RuleBuilder::new("V1", "V");
    for n in &names {
        v1 = v1.nonce(n, "V").fresh(n);
    }
    let mut rules = vec![v1.then_send(commitment.clone())?];

    for i in 1..=n_bits {
        let mut r = RuleBuilder::new(&format!("V2.{i}"), "V");
        for n in &names {
            r = r.nonce(n, "V");
        }
        r = r.sent("h", commitment.clone());
        if i > 1 {
            r = r.sent("prev", ms[i - 2].clone()).before("h", "prev");
        }
        r = r.received("a", Pattern::constant("0")).before("h", "a");
        if i > 1 {
            r = r.before("prev", "a");
        }
        rules.push(r.then_send(ms[i - 1].clone())?);
    }

    let mut v3 = RuleBuilder::new("V3", "V").agent("P");
    for n in &names {
        v3 = v3.nonce(n, "V");
    }
    let v3 = v3
        .sent("h", commitment)
        .sent("last", ms[n_bits - 1].clone())
        .received("r", speed_transcript_mac(Pattern::key("V", "P"), &ms))
        .before("h", "last")
        .before("last", "r")
        .then_claim(ERASURE, "P", speed_transcript_mac(Pattern::key("V", "P"), &ms))?;
    rules.push(v3);
    Ok(NamedProtocol::new("speed", rules)?)
}

/// Line topology used for the SPEED attack: `c = 2`, V at 0, the attacker
/// at 5 and the prover at 20. The matching distance threshold is 5.
pub fn speed_default_topology() -> Topology {
    Topology::new(Time::from_integer(2))
        .expect("positive speed")
        .agent("V", Honesty::Honest, 0)
        .agent("A", Honesty::Dishonest, 5)
        .agent("P", Honesty::Dishonest, 20)
}

fn bind(pairs: &[(&str, Value)]) -> Binding {
    pairs
        .iter()
        .map(|(k, val)| (std::sync::Arc::from(*k), val.clone()))
        .collect()
}

/// Builds the key-sharing attack on SPEED: the prover hands its keys to the
/// attacker `A`, who runs the fast phase with zero challenges and answers
/// with the expected MAC while the prover stays silent.
pub fn speed_attack_trace(topo: &Topology, delta: Time, n_bits: usize) -> Result<TimedTrace, ProtocolError> {
    let (va, pa, aa) = (Agent::new("V"), Agent::new("P"), Agent::new("A"));
    for a in [&va, &pa, &aa] {
        if !topo.contains(a) {
            return Err(SemanticsError::UnknownAgent(a.clone()).into());
        }
    }
    if !topo.is_honest(&va) {
        return Err(ProtocolError::TopologyInvalid("verifier V must be honest".into()));
    }
    let d = topo.distance(&va, &aa)?;
    if d < delta {
        return Err(ProtocolError::TopologyInvalid(format!(
            "attacker is at distance {d} from the verifier, inside the threshold {delta}"
        )));
    }
    let protocol = speed(n_bits)?;

    let mut tr = TimedTrace::new();
    let reveal = Term::pair(Term::key(&va, &pa), Term::key(&pa, &va));
    tr = apply_adv(&tr, &pa, reveal, Time::from_integer(0), topo)?;
    tr = deliver(&tr, tr.len() - 1, &aa, topo)?;

    let ms: Vec<Term> = (0..n_bits).map(|i| Term::nonce(&va, i as u32)).collect();
    let mut binding = bind(&[("V", Value::Agent(va.clone()))]);
    for (i, m) in ms.iter().enumerate() {
        binding.insert(m_var(i + 1).as_str().into(), Value::Term(m.clone()));
    }
    let now = tr.max_time();
    tr = apply_protocol_rule(&tr, rule(&protocol, "V1"), &binding, now, topo)?;
    tr = deliver(&tr, tr.len() - 1, &aa, topo)?;

    for i in 1..=n_bits {
        let now = tr.max_time();
        tr = apply_adv(&tr, &aa, zero(), now, topo)?;
        tr = deliver(&tr, tr.len() - 1, &va, topo)?;
        let now = tr.max_time();
        tr = apply_protocol_rule(&tr, rule(&protocol, &format!("V2.{i}")), &binding, now, topo)?;
        tr = deliver(&tr, tr.len() - 1, &aa, topo)?;
    }

    let key = Term::key(&va, &pa);
    let transcript = ms.iter().map(|m| Term::pair(zero(), m.clone())).collect();
    let response = Term::mac(key.clone(), vec![Term::mac(key, transcript), mem_value()]);
    let now = tr.max_time();
    tr = apply_adv(&tr, &aa, response, now, topo)?;
    tr = deliver(&tr, tr.len() - 1, &va, topo)?;
    binding.insert("P".into(), Value::Agent(pa.clone()));
    let now = tr.max_time();
    tr = apply_protocol_rule(&tr, rule(&protocol, "V3"), &binding, now, topo)?;
    Ok(tr)
}

fn rule<'p>(protocol: &'p NamedProtocol, name: &str) -> &'p crate::semantics::ProtocolRule {
    protocol.rule(name).expect("rule exists")
}

/// Receives the send at `index` as early as the topology allows.
fn deliver(tr: &TimedTrace, index: usize, to: &Agent, topo: &Topology) -> Result<TimedTrace, SemanticsError> {
    let (sent, e) = tr.get(index).ok_or(SemanticsError::NotASend(index))?;
    let at = (*sent + topo.latency(e.actor(), to)?).max(tr.max_time());
    apply_net(tr, index, to, at, topo)
}

/// Moves every send and receive of the dishonest prover `b` to the
/// co-located dishonest agent `c`, after `b` reveals to `c` the keys and
/// nonces its messages depend on. The claims about `b` stay in place.
pub fn clone_transform(trace: &TimedTrace, b: &Agent, c: &Agent, topo: &Topology) -> Result<TimedTrace, ProtocolError> {
    let fail = |m: String| Err(ProtocolError::PreconditionFailed(m));
    for x in [b, c] {
        if !topo.is_dishonest(x) {
            return fail(format!("{x} must be dishonest"));
        }
    }
    if topo.distance(b, c)? != Time::from_integer(0) {
        return fail(format!("{b} and {c} must be co-located"));
    }
    if trace.actors().contains(c) {
        return fail(format!("{c} already acts in the trace"));
    }
    let claimers: Vec<Agent> = trace
        .iter()
        .filter_map(|(_, e)| match e {
            Event::Claim {
                actor, property, peer, ..
            } if &**property == ERASURE && peer == b => Some(actor.clone()),
            _ => None,
        })
        .collect();
    let Some(first) = claimers.first() else {
        return fail(format!("no erasure claim about {b}"));
    };

    // the claimer's keys first, then whatever else of b's the trace mentions
    let mut secrets = vec![Term::key(first, b), Term::key(b, first)];
    let mut rest: BTreeSet<Term> = BTreeSet::new();
    for a in &claimers {
        rest.insert(Term::key(a, b));
        rest.insert(Term::key(b, a));
    }
    for (_, e) in trace.iter() {
        for s in e.message().subterms() {
            match &s {
                Term::Nonce(owner, _) if owner == b => {
                    rest.insert(s.clone());
                }
                Term::SharedKey(x, y) if x == b || y == b => {
                    rest.insert(s.clone());
                }
                _ => {}
            }
        }
    }
    for s in rest {
        if !secrets.contains(&s) {
            secrets.push(s);
        }
    }
    let payload = secrets
        .into_iter()
        .rev()
        .reduce(|acc, s| Term::pair(s, acc))
        .expect("at least two secrets");

    let t0 = trace.iter().map(|(t, _)| *t).min().unwrap_or_default();
    let mut out = TimedTrace::new();
    out.push(t0, Event::send(b, payload.clone()))?;
    out.push(t0, Event::recv(c, payload))?;
    for (t, e) in trace.iter() {
        out.push(*t, e.relabel_actor(b, c))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{check_erasure_claims, replay, ClaimStatus};

    fn t(n: i64) -> Time {
        Time::from_integer(n)
    }

    #[test]
    fn all_protocols_validate() {
        perito_tsudik();
        erasure_protocol(t(4)).unwrap();
        speed(3).unwrap();
        assert!(erasure_protocol(t(0)).is_err());
        assert!(speed(0).is_err());
    }

    #[test]
    fn speed_attack_is_violated_and_replays() {
        let topo = speed_default_topology();
        let tr = speed_attack_trace(&topo, t(5), 3).unwrap();
        replay(&tr, &speed(3).unwrap(), &topo).unwrap();
        let verdicts = check_erasure_claims(&tr, t(5), &topo);
        assert_eq!(verdicts.len(), 1);
        assert_eq!(verdicts[0].status, ClaimStatus::Violated);
        let far = check_erasure_claims(&tr, t(6), &topo);
        assert_eq!(far[0].status, ClaimStatus::NotApplicable);
    }

    #[test]
    fn speed_attack_needs_dishonest_prover_and_distant_attacker() {
        let honest = Topology::new(t(2))
            .unwrap()
            .agent("V", Honesty::Honest, 0)
            .agent("A", Honesty::Dishonest, 5)
            .agent("P", Honesty::Honest, 20);
        assert!(matches!(
            speed_attack_trace(&honest, t(5), 2),
            Err(ProtocolError::Semantics(SemanticsError::NotDishonest(_)))
        ));
        assert!(matches!(
            speed_attack_trace(&speed_default_topology(), t(6), 2),
            Err(ProtocolError::TopologyInvalid(_))
        ));
    }
}
