//! Single-step application of `Net`, `Adv` and protocol rules, and replay of
//! whole traces through them.

use thiserror::Error;

use super::rule::{Binding, NamedProtocol, ProtocolRule};
use super::{Event, SemanticsError, Time, TimedTrace, Topology};
use crate::inference::derives;
use crate::terms::{Agent, Term};

fn check_order(trace: &TimedTrace, t: Time) -> Result<(), SemanticsError> {
    let max = trace.max_time();
    if t < max || t < Time::from_integer(0) {
        return Err(SemanticsError::OrderViolation { t, max });
    }
    Ok(())
}

fn check_known(topo: &Topology, a: &Agent) -> Result<(), SemanticsError> {
    if topo.contains(a) {
        Ok(())
    } else {
        Err(SemanticsError::UnknownAgent(a.clone()))
    }
}

/// `Net`: `receiver` gets the message of the send at `send_index` at time `t`.
pub fn apply_net(
    trace: &TimedTrace,
    send_index: usize,
    receiver: &Agent,
    t: Time,
    topo: &Topology,
) -> Result<TimedTrace, SemanticsError> {
    let Some((sent, Event::Send { actor, msg })) = trace.get(send_index) else {
        return Err(SemanticsError::NotASend(send_index));
    };
    check_known(topo, receiver)?;
    check_order(trace, t)?;
    if !topo.reaches(actor, receiver, *sent, t)? {
        return Err(SemanticsError::TimingViolation {
            receiver: receiver.clone(),
            t,
            sent: *sent,
            distance: topo.distance(actor, receiver)?,
        });
    }
    let mut next = trace.clone();
    next.push_unchecked(t, Event::recv(receiver, msg.clone()));
    Ok(next)
}

/// `Adv`: a dishonest agent sends anything it can derive.
pub fn apply_adv(
    trace: &TimedTrace,
    actor: &Agent,
    msg: Term,
    t: Time,
    topo: &Topology,
) -> Result<TimedTrace, SemanticsError> {
    check_known(topo, actor)?;
    if !topo.is_dishonest(actor) {
        return Err(SemanticsError::NotDishonest(actor.clone()));
    }
    check_order(trace, t)?;
    if !derives(actor, trace, &msg) {
        return Err(SemanticsError::Underivable {
            agent: actor.clone(),
            msg,
        });
    }
    let mut next = trace.clone();
    next.push_unchecked(t, Event::send(actor, msg));
    Ok(next)
}

/// Appends the conclusion of `rule` under `binding` at time `t`.
pub fn apply_protocol_rule(
    trace: &TimedTrace,
    rule: &ProtocolRule,
    binding: &Binding,
    t: Time,
    topo: &Topology,
) -> Result<TimedTrace, SemanticsError> {
    check_order(trace, t)?;
    let e = rule.conclude(trace, binding, topo)?;
    check_known(topo, e.actor())?;
    let mut next = trace.clone();
    next.push_unchecked(t, e);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("entry {index}: {reason}")]
pub struct ReplayError {
    pub index: usize,
    pub reason: SemanticsError,
}

/// Re-derives every entry of `trace` from its prefix: receives through
/// `Net`, dishonest sends through `Adv`, honest sends and claims through some
/// rule of `protocol`.
pub fn replay(trace: &TimedTrace, protocol: &NamedProtocol, topo: &Topology) -> Result<(), ReplayError> {
    for (index, (t, e)) in trace.iter().enumerate() {
        let prefix = trace.prefix(index);
        replay_step(&prefix, *t, e, protocol, topo).map_err(|reason| ReplayError { index, reason })?;
    }
    Ok(())
}

fn replay_step(
    prefix: &TimedTrace,
    t: Time,
    e: &Event,
    protocol: &NamedProtocol,
    topo: &Topology,
) -> Result<(), SemanticsError> {
    check_order(prefix, t)?;
    let actor = e.actor();
    check_known(topo, actor)?;
    match e {
        Event::Recv { msg, .. } => {
            let mut last = SemanticsError::UnsentMessage {
                receiver: actor.clone(),
                msg: msg.clone(),
            };
            for (i, (_, s)) in prefix.iter().enumerate() {
                if matches!(s, Event::Send { msg: m, .. } if m == msg) {
                    match apply_net(prefix, i, actor, t, topo) {
                        Ok(_) => return Ok(()),
                        Err(err) => last = err,
                    }
                }
            }
            Err(last)
        }
        Event::Send { msg, .. } if topo.is_dishonest(actor) => {
            apply_adv(prefix, actor, msg.clone(), t, topo).map(|_| ())
        }
        _ if topo.is_dishonest(actor) => Err(SemanticsError::NotHonest(actor.clone())),
        _ => {
            let mut last = SemanticsError::PremiseUnmatched {
                rule: protocol.name.clone(),
            };
            for rule in &protocol.rules {
                match rule.justify(prefix, e, topo) {
                    Ok(_) => return Ok(()),
                    Err(SemanticsError::PremiseUnmatched { .. }) => {}
                    Err(err) => last = err,
                }
            }
            Err(last)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::perito_tsudik;
    use crate::terms::Honesty;

    fn topo() -> Topology {
        Topology::new(Time::from_integer(2))
            .unwrap()
            .agent("a", Honesty::Honest, 0)
            .agent("b", Honesty::Dishonest, 1)
    }

    #[test]
    fn net_needs_a_send_and_monotone_time() {
        let (a, b) = (Agent::new("a"), Agent::new("b"));
        let tr = TimedTrace::new()
            .with(Time::from_integer(3), Event::send(&a, Term::constant("x")))
            .unwrap();
        assert!(matches!(
            apply_net(&tr, 0, &b, Time::from_integer(2), &topo()),
            Err(SemanticsError::OrderViolation { .. })
        ));
        let tr = apply_net(&tr, 0, &b, Time::from_integer(4), &topo()).unwrap();
        assert!(matches!(
            apply_net(&tr, 1, &a, Time::from_integer(5), &topo()),
            Err(SemanticsError::NotASend(1))
        ));
    }

    #[test]
    fn replay_rejects_dishonest_claims_and_unsent_receives() {
        let p = perito_tsudik();
        let claim = TimedTrace::parse("(0, claim(b, erasure, a, const(x)))").unwrap();
        assert!(matches!(
            replay(&claim, &p, &topo()).unwrap_err().reason,
            SemanticsError::NotHonest(_)
        ));
        let recv = TimedTrace::parse("(0, recv(a, const(x)))").unwrap();
        assert!(matches!(
            replay(&recv, &p, &topo()).unwrap_err().reason,
            SemanticsError::UnsentMessage { .. }
        ));
    }
}
