use std::collections::BTreeMap;

use num_rational::Rational64;
use num_traits::{Signed, Zero};

use super::{SemanticsError, Time};
use crate::terms::{Agent, AgentId, Honesty};

#[derive(Clone, Debug, PartialEq)]
struct Placement {
    honesty: Honesty,
    position: Rational64,
}

/// Static agent placement, the honest/dishonest partition, and the
/// propagation speed of the channel.
///
/// Agents sit on a line; `set_distance` overrides the line metric for a
/// specific pair. A message sent by `a` at `t` may be received by `b` at
/// `t'` iff `d(a, b) <= net_factor * speed * (t' - t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    agents: BTreeMap<Agent, Placement>,
    overrides: BTreeMap<(Agent, Agent), Rational64>,
    speed: Rational64,
    net_factor: Rational64,
}

impl Topology {
    /// The factor in front of `c` in the reception inequality.
    pub fn default_net_factor() -> Rational64 {
        Rational64::new(1, 2)
    }

    pub fn new(speed: Rational64) -> Result<Self, SemanticsError> {
        if speed <= Rational64::zero() {
            return Err(SemanticsError::InvalidTopology(format!(
                "speed must be positive, got {speed}"
            )));
        }
        Ok(Topology {
            agents: BTreeMap::new(),
            overrides: BTreeMap::new(),
            speed,
            net_factor: Self::default_net_factor(),
        })
    }

    pub fn with_net_factor(mut self, factor: Rational64) -> Result<Self, SemanticsError> {
        if factor <= Rational64::zero() {
            return Err(SemanticsError::InvalidTopology("net factor must be positive".into()));
        }
        self.net_factor = factor;
        Ok(self)
    }

    pub fn add(&mut self, name: &str, honesty: Honesty, position: Rational64) -> Agent {
        let agent = Agent::new(name);
        self.agents.insert(agent.clone(), Placement { honesty, position });
        agent
    }

    /// Builder-style [`add`](Topology::add).
    pub fn agent(mut self, name: &str, honesty: Honesty, position: i64) -> Self {
        self.add(name, honesty, Rational64::from_integer(position));
        self
    }

    pub fn set_distance(&mut self, a: &Agent, b: &Agent, d: Rational64) -> Result<(), SemanticsError> {
        for x in [a, b] {
            if !self.agents.contains_key(x) {
                return Err(SemanticsError::UnknownAgent(x.clone()));
            }
        }
        if d.is_negative() || (a == b && !d.is_zero()) {
            return Err(SemanticsError::InvalidTopology(format!(
                "bad distance {d} between {a} and {b}"
            )));
        }
        self.overrides.insert(ordered(a, b), d);
        Ok(())
    }

    pub fn speed(&self) -> Rational64 {
        self.speed
    }

    pub fn net_factor(&self) -> Rational64 {
        self.net_factor
    }

    pub fn contains(&self, a: &Agent) -> bool {
        self.agents.contains_key(a)
    }

    pub fn agents(&self) -> impl Iterator<Item = &Agent> {
        self.agents.keys()
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.agents.iter().map(|(name, p)| AgentId {
            name: name.clone(),
            honesty: p.honesty,
        })
    }

    pub fn honest_agents(&self) -> impl Iterator<Item = &Agent> {
        self.agents
            .iter()
            .filter(|(_, p)| p.honesty == Honesty::Honest)
            .map(|(a, _)| a)
    }

    pub fn dishonest_agents(&self) -> impl Iterator<Item = &Agent> {
        self.agents
            .iter()
            .filter(|(_, p)| p.honesty == Honesty::Dishonest)
            .map(|(a, _)| a)
    }

    pub fn honesty(&self, a: &Agent) -> Option<Honesty> {
        self.agents.get(a).map(|p| p.honesty)
    }

    pub fn is_honest(&self, a: &Agent) -> bool {
        self.honesty(a) == Some(Honesty::Honest)
    }

    pub fn is_dishonest(&self, a: &Agent) -> bool {
        self.honesty(a) == Some(Honesty::Dishonest)
    }

    pub fn position(&self, a: &Agent) -> Option<Rational64> {
        self.agents.get(a).map(|p| p.position)
    }

    pub fn distance(&self, a: &Agent, b: &Agent) -> Result<Rational64, SemanticsError> {
        let pa = self
            .position(a)
            .ok_or_else(|| SemanticsError::UnknownAgent(a.clone()))?;
        let pb = self
            .position(b)
            .ok_or_else(|| SemanticsError::UnknownAgent(b.clone()))?;
        if a == b {
            return Ok(Rational64::zero());
        }
        Ok(self
            .overrides
            .get(&ordered(a, b))
            .copied()
            .unwrap_or_else(|| (pa - pb).abs()))
    }

    /// Shortest admissible delay between a send by `a` and a receive by `b`.
    pub fn latency(&self, a: &Agent, b: &Agent) -> Result<Time, SemanticsError> {
        Ok(self.distance(a, b)? / (self.net_factor * self.speed))
    }

    /// The reception inequality of the `Net` rule.
    pub fn reaches(&self, from: &Agent, to: &Agent, sent: Time, received: Time) -> Result<bool, SemanticsError> {
        Ok(self.distance(from, to)? <= self.net_factor * self.speed * (received - sent))
    }
}

fn ordered(a: &Agent, b: &Agent) -> (Agent, Agent) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> Rational64 {
        Rational64::from_integer(n)
    }

    #[test]
    fn line_metric_is_symmetric_and_zero_on_diagonal() {
        let topo = Topology::new(r(2))
            .unwrap()
            .agent("V", Honesty::Honest, 0)
            .agent("P", Honesty::Dishonest, 3);
        let (v, p) = (Agent::new("V"), Agent::new("P"));
        assert_eq!(topo.distance(&v, &p).unwrap(), r(3));
        assert_eq!(topo.distance(&p, &v).unwrap(), r(3));
        assert_eq!(topo.distance(&v, &v).unwrap(), r(0));
        assert_eq!(topo.latency(&v, &p).unwrap(), r(3));
    }

    #[test]
    fn overrides_apply_both_ways() {
        let mut topo = Topology::new(r(1))
            .unwrap()
            .agent("a", Honesty::Honest, 0)
            .agent("b", Honesty::Honest, 10);
        let (a, b) = (Agent::new("a"), Agent::new("b"));
        topo.set_distance(&b, &a, r(4)).unwrap();
        assert_eq!(topo.distance(&a, &b).unwrap(), r(4));
        assert!(topo.set_distance(&a, &b, r(-1)).is_err());
        assert!(topo.set_distance(&a, &a, r(1)).is_err());
    }

    #[test]
    fn speed_must_be_positive() {
        assert!(Topology::new(r(0)).is_err());
    }
}
