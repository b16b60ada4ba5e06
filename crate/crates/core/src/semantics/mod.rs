//! Timed traces and the execution rules that build them.
//!
//! A trace grows by three generic rules (`Start`, `Net`, `Adv`) and by the
//! rules of a concrete protocol. Time is exact: timestamps, distances and the
//! propagation speed are all rationals.

mod apply;
mod checks;
mod explore;
mod rule;
mod scenario;
mod topology;

use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;
use thiserror::Error;

use crate::terms::{Agent, ParseError, Parser, Term};

pub use apply::{apply_adv, apply_net, apply_protocol_rule, replay, ReplayError};
pub use checks::{check_causality, check_erasure_claims, dist_sep, ClaimStatus, ClaimVerdict};
pub use explore::{explore, explore_with, Bounds, ExploreStats, TimeMode};
pub use rule::{Binding, EventPattern, NamedProtocol, Pattern, Premise, ProtocolRule, RuleBuilder, Sort, Value, Var};
pub use scenario::{Scenario, ScenarioError};
pub use topology::Topology;

/// Exact timestamps.
pub type Time = Rational64;

/// Property name used by memory-erasure claims.
pub const ERASURE: &str = "erasure";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error("timestamp {t} is earlier than the last timestamp {max} of the trace")]
    OrderViolation { t: Time, max: Time },
    #[error("{receiver} cannot receive at {t}: distance {distance} exceeds what the signal covers since {sent}")]
    TimingViolation {
        receiver: Agent,
        t: Time,
        sent: Time,
        distance: Rational64,
    },
    #[error("entry {0} is not a send event")]
    NotASend(usize),
    #[error("{receiver} receives {msg}, which no earlier entry sends")]
    UnsentMessage { receiver: Agent, msg: Term },
    #[error("agent {0} is not dishonest")]
    NotDishonest(Agent),
    #[error("agent {0} is not honest")]
    NotHonest(Agent),
    #[error("unknown agent {0}")]
    UnknownAgent(Agent),
    #[error("{agent} cannot derive {msg}")]
    Underivable { agent: Agent, msg: Term },
    #[error("rule {rule}: premises not matched by the trace")]
    PremiseUnmatched { rule: String },
    #[error("rule {rule}: {nonce} is not a fresh nonce of the actor")]
    FreshnessViolation { rule: String, nonce: Term },
    #[error("rule {rule}: timing side condition failed")]
    TimingSideConditionFailed { rule: String },
    #[error("rule {rule}: {reason}")]
    BadBinding { rule: String, reason: String },
    #[error("invalid rule {rule}: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("exploration exceeded its budget of {0} states")]
    BoundsTooLarge(usize),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Event {
    Send {
        actor: Agent,
        msg: Term,
    },
    Recv {
        actor: Agent,
        msg: Term,
    },
    Claim {
        actor: Agent,
        property: Arc<str>,
        peer: Agent,
        msg: Term,
    },
}

impl Event {
    pub fn send(actor: &Agent, msg: Term) -> Event {
        Event::Send {
            actor: actor.clone(),
            msg,
        }
    }

    pub fn recv(actor: &Agent, msg: Term) -> Event {
        Event::Recv {
            actor: actor.clone(),
            msg,
        }
    }

    pub fn claim(actor: &Agent, property: &str, peer: &Agent, msg: Term) -> Event {
        Event::Claim {
            actor: actor.clone(),
            property: Arc::from(property),
            peer: peer.clone(),
            msg,
        }
    }

    pub fn actor(&self) -> &Agent {
        match self {
            Event::Send { actor, .. } | Event::Recv { actor, .. } | Event::Claim { actor, .. } => actor,
        }
    }

    pub fn message(&self) -> &Term {
        match self {
            Event::Send { msg, .. } | Event::Recv { msg, .. } | Event::Claim { msg, .. } => msg,
        }
    }

    pub fn is_send(&self) -> bool {
        matches!(self, Event::Send { .. })
    }

    /// Same event with `from` replaced by `to` as actor of sends and receives.
    pub(crate) fn relabel_actor(&self, from: &Agent, to: &Agent) -> Event {
        match self {
            Event::Send { actor, msg } if actor == from => Event::send(to, msg.clone()),
            Event::Recv { actor, msg } if actor == from => Event::recv(to, msg.clone()),
            other => other.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Event, ParseError> {
        let mut p = Parser::new(text);
        let e = parse_event(&mut p)?;
        p.expect_end()?;
        Ok(e)
    }
}

fn parse_event(p: &mut Parser<'_>) -> Result<Event, ParseError> {
    let kind = p.ident()?;
    p.expect('(')?;
    let actor = Agent::new(p.ident()?);
    p.expect(',')?;
    let e = match kind {
        "send" => Event::Send { actor, msg: p.term()? },
        "recv" => Event::Recv { actor, msg: p.term()? },
        "claim" => {
            let property = Arc::from(p.ident()?);
            p.expect(',')?;
            let peer = Agent::new(p.ident()?);
            p.expect(',')?;
            Event::Claim {
                actor,
                property,
                peer,
                msg: p.term()?,
            }
        }
        other => return p.error(format!("unknown event kind '{other}'")),
    };
    p.expect(')')?;
    Ok(e)
}

pub(crate) fn parse_time(s: &str) -> Option<Time> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().ok()?;
        let d: i64 = d.trim().parse().ok()?;
        (d != 0).then(|| Rational64::new(n, d))
    } else {
        s.parse::<i64>().ok().map(Rational64::from_integer)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Send { actor, msg } => write!(f, "send({actor}, {msg})"),
            Event::Recv { actor, msg } => write!(f, "recv({actor}, {msg})"),
            Event::Claim {
                actor,
                property,
                peer,
                msg,
            } => write!(f, "claim({actor}, {property}, {peer}, {msg})"),
        }
    }
}

impl fmt::Debug for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A finite sequence of time-stamped events with nondecreasing timestamps.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct TimedTrace {
    entries: Vec<(Time, Event)>,
}

impl TimedTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Largest timestamp; zero for the empty trace.
    pub fn max_time(&self) -> Time {
        self.entries
            .last()
            .map(|(t, _)| *t)
            .unwrap_or_else(|| Time::from_integer(0))
    }

    pub fn push(&mut self, t: Time, e: Event) -> Result<(), SemanticsError> {
        let max = self.max_time();
        if t < max || t < Time::from_integer(0) {
            return Err(SemanticsError::OrderViolation { t, max });
        }
        self.entries.push((t, e));
        Ok(())
    }

    pub(crate) fn push_unchecked(&mut self, t: Time, e: Event) {
        self.entries.push((t, e));
    }

    pub(crate) fn pop(&mut self) {
        self.entries.pop();
    }

    pub fn with(&self, t: Time, e: Event) -> Result<TimedTrace, SemanticsError> {
        let mut next = self.clone();
        next.push(t, e)?;
        Ok(next)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&(Time, Event)> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Time, Event)> {
        self.entries.iter()
    }

    pub fn entries(&self) -> &[(Time, Event)] {
        &self.entries
    }

    /// The first `n` entries.
    pub fn prefix(&self, n: usize) -> TimedTrace {
        TimedTrace {
            entries: self.entries[..n.min(self.entries.len())].to_vec(),
        }
    }

    pub fn contains_event(&self, e: &Event) -> bool {
        self.entries.iter().any(|(_, x)| x == e)
    }

    pub fn actors(&self) -> std::collections::BTreeSet<Agent> {
        self.entries.iter().map(|(_, e)| e.actor().clone()).collect()
    }

    pub fn received_by<'a>(&'a self, agent: &'a Agent) -> impl Iterator<Item = &'a Term> + 'a {
        self.entries.iter().filter_map(move |(_, e)| match e {
            Event::Recv { actor, msg } if actor == agent => Some(msg),
            _ => None,
        })
    }

    /// True when `t` occurs as a subterm of some message of the trace.
    pub fn mentions(&self, t: &Term) -> bool {
        self.entries.iter().any(|(_, e)| e.message().contains(t))
    }

    /// Reads the dump format: one `(t, event)` per line; blank lines and `#`
    /// comments are skipped. Errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<TimedTrace, (usize, ParseError)> {
        let mut trace = TimedTrace::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (t, e) = parse_entry(line).map_err(|e| (lineno + 1, e))?;
            trace.push(t, e).map_err(|err| {
                (
                    lineno + 1,
                    ParseError {
                        position: 0,
                        message: err.to_string(),
                    },
                )
            })?;
        }
        Ok(trace)
    }
}

pub(crate) fn parse_entry(line: &str) -> Result<(Time, Event), ParseError> {
    let mut p = Parser::new(line);
    p.expect('(')?;
    let raw = p.ident()?;
    let t = match parse_time(raw) {
        Some(t) => t,
        None => return p.error(format!("bad timestamp '{raw}'")),
    };
    p.expect(',')?;
    let e = parse_event(&mut p)?;
    p.expect(')')?;
    p.expect_end()?;
    Ok((t, e))
}

impl fmt::Display for TimedTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, e) in &self.entries {
            writeln!(f, "({t}, {e})")?;
        }
        Ok(())
    }
}

impl fmt::Debug for TimedTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter()).finish()
    }
}
