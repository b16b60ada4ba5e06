//! Scenario files: agents, topology, thresholds, protocol and search bounds.
//!
//! ```toml
//! protocol = "erasure"
//! speed = 2
//! delta = 4
//! time_bound = 4
//! setup = ["(0, send(P, pair(k(V,P), k(P,V))))"]
//!
//! [[agents]]
//! name = "V"
//! honesty = "honest"
//! position = 0
//!
//! [bounds]
//! max_len = 10
//! time_mode = "earliest"
//! ```
//!
//! Rational quantities are written as integers or as `"p/q"` strings.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use super::explore::{Bounds, TimeMode};
use super::rule::{NamedProtocol, Var};
use super::{parse_entry, parse_time, SemanticsError, Time, TimedTrace, Topology};
use crate::protocols;
use crate::terms::{Agent, Honesty, Term};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Everything `explore` and the claim checker need about one setting.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub protocol: NamedProtocol,
    pub topology: Topology,
    /// Distance threshold of the distant-attacker guard.
    pub delta: Time,
    /// Time bound of the verifier's round-trip check.
    pub time_bound: Time,
    /// Agents each rule variable may stand for; unlisted variables range over
    /// every agent.
    pub roles: BTreeMap<Var, Vec<Agent>>,
    /// Extra terms the adversary may send.
    pub pool: Vec<Term>,
    /// Nonce indices below this bound seed the adversary's message pool.
    pub nonce_limit: u32,
    /// Prefix every explored trace starts with; not counted by `max_len`.
    pub setup: TimedTrace,
    pub bounds: Bounds,
}

impl Scenario {
    pub fn new(protocol: NamedProtocol, topology: Topology, delta: Time, time_bound: Time) -> Self {
        Scenario {
            protocol,
            topology,
            delta,
            time_bound,
            roles: BTreeMap::new(),
            pool: Vec::new(),
            nonce_limit: 1,
            setup: TimedTrace::new(),
            bounds: Bounds::default(),
        }
    }

    pub fn with_role(mut self, var: &str, agents: &[&str]) -> Self {
        self.roles
            .insert(Arc::from(var), agents.iter().map(|a| Agent::new(a)).collect());
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: shown.clone(),
            source,
        })?;
        Scenario::from_toml(&text, &shown)
    }

    /// Parses a scenario; `origin` names the source in error messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let err = |span: Option<std::ops::Range<usize>>, message: String| ScenarioError::Parse {
            path: origin.to_string(),
            line: span.map_or(1, |s| line_of(text, s.start)),
            message,
        };
        let raw: RawScenario = toml::from_str(text).map_err(|e| err(e.span(), e.message().to_string()))?;

        let num = |n: &Spanned<Num>| -> Result<Time, ScenarioError> {
            n.get_ref()
                .value()
                .ok_or_else(|| err(Some(n.span()), format!("bad rational {:?}", n.get_ref())))
        };

        let speed = num(&raw.speed)?;
        let mut topology = Topology::new(speed).map_err(|e| err(Some(raw.speed.span()), e.to_string()))?;
        if let Some(f) = &raw.net_factor {
            topology = topology
                .with_net_factor(num(f)?)
                .map_err(|e| err(Some(f.span()), e.to_string()))?;
        }
        for a in &raw.agents {
            let position = num(&a.position)?;
            topology.add(&a.name, a.honesty, position);
        }
        for d in &raw.distances {
            let value = num(&d.distance)?;
            topology
                .set_distance(&Agent::new(&d.a), &Agent::new(&d.b), value)
                .map_err(|e| err(Some(d.distance.span()), e.to_string()))?;
        }

        let delta = num(&raw.delta)?;
        let time_bound = num(&raw.time_bound)?;
        if delta < Time::from_integer(0) {
            return Err(err(Some(raw.delta.span()), "delta must be nonnegative".into()));
        }
        if time_bound <= Time::from_integer(0) {
            return Err(err(Some(raw.time_bound.span()), "time_bound must be positive".into()));
        }

        let protocol = protocols::by_name(raw.protocol.get_ref(), time_bound, raw.n_bits)
            .map_err(|e| err(Some(raw.protocol.span()), e.to_string()))?;

        let mut roles = BTreeMap::new();
        for (var, agents) in &raw.roles {
            let mut list = Vec::new();
            for a in agents {
                let agent = Agent::new(a.get_ref());
                if !topology.contains(&agent) {
                    return Err(err(Some(a.span()), format!("unknown agent {agent}")));
                }
                list.push(agent);
            }
            roles.insert(Arc::from(var.as_str()), list);
        }

        let mut pool = Vec::new();
        for s in &raw.pool {
            let t = Term::parse(s.get_ref()).map_err(|e| err(Some(s.span()), e.to_string()))?;
            pool.push(t);
        }

        let mut setup = TimedTrace::new();
        for s in &raw.setup {
            let (t, e) = parse_entry(s.get_ref()).map_err(|e| err(Some(s.span()), e.to_string()))?;
            for a in [e.actor()] {
                if !topology.contains(a) {
                    return Err(err(Some(s.span()), SemanticsError::UnknownAgent(a.clone()).to_string()));
                }
            }
            setup.push(t, e).map_err(|e| err(Some(s.span()), e.to_string()))?;
        }

        let rb = raw.bounds;
        let defaults = Bounds::default();
        let grid_step = match &rb.grid_step {
            Some(n) => num(n)?,
            None => time_bound / Time::from_integer(4),
        };
        if grid_step <= Time::from_integer(0) {
            return Err(err(None, "grid_step must be positive".into()));
        }
        let bounds = Bounds {
            max_len: rb.max_len.unwrap_or(defaults.max_len),
            grid_step,
            grid_points: rb.grid_points.unwrap_or(defaults.grid_points),
            time_mode: rb.time_mode.unwrap_or_default(),
            max_states: rb.max_states.unwrap_or(defaults.max_states),
        };

        Ok(Scenario {
            protocol,
            topology,
            delta,
            time_bound,
            roles,
            pool,
            nonce_limit: raw.nonce_limit.unwrap_or(1),
            setup,
            bounds,
        })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Num {
    Int(i64),
    Text(String),
}

impl Num {
    fn value(&self) -> Option<Time> {
        match self {
            Num::Int(n) => Some(Time::from_integer(*n)),
            Num::Text(s) => parse_time(s),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    protocol: Spanned<String>,
    speed: Spanned<Num>,
    #[serde(default)]
    net_factor: Option<Spanned<Num>>,
    delta: Spanned<Num>,
    time_bound: Spanned<Num>,
    #[serde(default)]
    n_bits: Option<usize>,
    #[serde(default)]
    nonce_limit: Option<u32>,
    agents: Vec<RawAgent>,
    #[serde(default)]
    distances: Vec<RawDistance>,
    #[serde(default)]
    roles: BTreeMap<String, Vec<Spanned<String>>>,
    #[serde(default)]
    pool: Vec<Spanned<String>>,
    #[serde(default)]
    setup: Vec<Spanned<String>>,
    #[serde(default)]
    bounds: RawBounds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    name: String,
    honesty: Honesty,
    position: Spanned<Num>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistance {
    a: String,
    b: String,
    distance: Spanned<Num>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    max_len: Option<usize>,
    grid_step: Option<Spanned<Num>>,
    grid_points: Option<usize>,
    time_mode: Option<TimeMode>,
    max_states: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
protocol = "perito-tsudik"
speed = 2
delta = 0
time_bound = 4

[[agents]]
name = "a"
honesty = "honest"
position = 0

[[agents]]
name = "b"
honesty = "dishonest"
position = "1/2"

[bounds]
max_len = 3
"#;

    #[test]
    fn parses_rationals_and_defaults() {
        let s = Scenario::from_toml(BASIC, "basic.toml").unwrap();
        assert_eq!(s.topology.position(&Agent::new("b")), Some(Time::new(1, 2)));
        assert_eq!(s.bounds.max_len, 3);
        assert_eq!(s.bounds.grid_step, Time::from_integer(1));
        assert_eq!(s.protocol.name, "perito-tsudik");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = BASIC.replace("position = \"1/2\"", "position = \"1/0\"");
        match Scenario::from_toml(&bad, "x.toml") {
            Err(ScenarioError::Parse { line, path, .. }) => {
                assert_eq!(path, "x.toml");
                assert_eq!(line, 15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_protocol_is_rejected() {
        let bad = BASIC.replace("perito-tsudik", "kerberos");
        assert!(Scenario::from_toml(&bad, "x.toml").is_err());
    }
}
