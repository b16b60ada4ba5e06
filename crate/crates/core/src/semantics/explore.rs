//! Bounded depth-first enumeration of the traces of a scenario.
//!
//! Restrictions that keep the search finite: timestamps lie on a grid;
//! adversary sends are drawn from the messages honest agents wait for,
//! instantiated over the atoms seen so far, plus the scenario pool; a send
//! is only made if some other agent can still use it within the grid; no
//! event occurs twice; honest agents only receive messages some rule waits
//! for (message variables binding atoms); dishonest agents only receive what
//! they cannot already derive. Events appended at the same timestamp are
//! explored in one canonical order (sleep sets).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::ControlFlow;

use serde::Deserialize;

use super::rule::NamedProtocol;
use super::{replay, Event, Scenario, SemanticsError, Time, TimedTrace, Topology};
use crate::inference::KnowledgeBase;
use crate::terms::{Agent, Term, TermPool};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    /// Every grid point not before the last timestamp.
    #[default]
    Grid,
    /// Only the first grid point at which the event is possible.
    Earliest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    /// Events added beyond the scenario's setup prefix.
    pub max_len: usize,
    pub grid_step: Time,
    pub grid_points: usize,
    pub time_mode: TimeMode,
    /// Visited traces before giving up with `BoundsTooLarge`.
    pub max_states: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_len: 6,
            grid_step: Time::from_integer(1),
            grid_points: 8,
            time_mode: TimeMode::Grid,
            max_states: 10_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExploreStats {
    pub traces: usize,
    pub longest: usize,
    /// The visitor ended the search early.
    pub stopped: bool,
}

/// Every trace of the scenario within its bounds, setup prefix included.
pub fn explore(scenario: &Scenario) -> Result<Vec<TimedTrace>, SemanticsError> {
    let mut out = Vec::new();
    explore_with(scenario, |t| {
        out.push(t.clone());
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

/// Calls `visit` on every trace of the scenario within its bounds, stopping
/// early when it breaks.
pub fn explore_with(
    scenario: &Scenario,
    mut visit: impl FnMut(&TimedTrace) -> ControlFlow<()>,
) -> Result<ExploreStats, SemanticsError> {
    replay(&scenario.setup, &scenario.protocol, &scenario.topology).map_err(|e| e.reason)?;
    let mut ex = Explorer::new(scenario);
    let mut trace = scenario.setup.clone();
    let _ = ex.dfs(&mut trace, 0, &BTreeSet::new(), &mut visit)?;
    Ok(ex.stats)
}

type Candidate = (Time, Event);

struct Explorer<'s> {
    protocol: &'s NamedProtocol,
    topo: &'s Topology,
    scenario: &'s Scenario,
    bounds: &'s Bounds,
    dishonest: Vec<Agent>,
    agents: Vec<Agent>,
    awaited: HashMap<(Agent, Term), bool>,
    receivable: HashMap<Vec<Term>, Vec<Term>>,
    stats: ExploreStats,
}

impl<'s> Explorer<'s> {
    fn new(scenario: &'s Scenario) -> Self {
        let topo = &scenario.topology;
        Explorer {
            protocol: &scenario.protocol,
            topo,
            scenario,
            bounds: &scenario.bounds,
            dishonest: topo.dishonest_agents().cloned().collect(),
            agents: topo.agents().cloned().collect(),
            awaited: HashMap::new(),
            receivable: HashMap::new(),
            stats: ExploreStats::default(),
        }
    }

    fn dfs(
        &mut self,
        trace: &mut TimedTrace,
        depth: usize,
        sleep: &BTreeSet<Candidate>,
        visit: &mut impl FnMut(&TimedTrace) -> ControlFlow<()>,
    ) -> Result<ControlFlow<()>, SemanticsError> {
        self.stats.traces += 1;
        if self.stats.traces > self.bounds.max_states {
            return Err(SemanticsError::BoundsTooLarge(self.bounds.max_states));
        }
        self.stats.longest = self.stats.longest.max(depth);
        if visit(trace).is_break() {
            self.stats.stopped = true;
            return Ok(ControlFlow::Break(()));
        }
        if depth == self.bounds.max_len {
            return Ok(ControlFlow::Continue(()));
        }
        let candidates = self.candidates(trace)?;
        let mut done: BTreeSet<Candidate> = BTreeSet::new();
        for c in candidates {
            if sleep.contains(&c) {
                continue;
            }
            // same-time siblings explored earlier stay asleep below this one
            let child_sleep: BTreeSet<Candidate> = sleep
                .iter()
                .chain(done.iter())
                .filter(|(t, _)| *t == c.0)
                .cloned()
                .collect();
            trace.push_unchecked(c.0, c.1.clone());
            let r = self.dfs(trace, depth + 1, &child_sleep, visit);
            trace.pop();
            if r?.is_break() {
                return Ok(ControlFlow::Break(()));
            }
            done.insert(c);
        }
        Ok(ControlFlow::Continue(()))
    }

    fn grid(&self) -> impl Iterator<Item = Time> + '_ {
        (0..self.bounds.grid_points).map(|k| self.bounds.grid_step * Time::from_integer(k as i64))
    }

    /// Grid times not before `min`, all of them or only the first.
    fn times_from(&self, min: Time) -> Vec<Time> {
        let it = self.grid().filter(move |t| *t >= min);
        match self.bounds.time_mode {
            TimeMode::Grid => it.collect(),
            TimeMode::Earliest => it.take(1).collect(),
        }
    }

    fn awaits(&mut self, agent: &Agent, msg: &Term) -> bool {
        let key = (agent.clone(), msg.clone());
        if let Some(&v) = self.awaited.get(&key) {
            return v;
        }
        let v = self.protocol.awaits(agent, msg, self.topo, &self.scenario.roles);
        self.awaited.insert(key, v);
        v
    }

    fn candidates(&mut self, trace: &TimedTrace) -> Result<Vec<Candidate>, SemanticsError> {
        let now = trace.max_time();
        let mut out: BTreeSet<Candidate> = BTreeSet::new();
        for rule in &self.protocol.rules {
            for e in rule.instances(trace, self.topo, &self.scenario.roles) {
                if !trace.contains_event(&e) {
                    for t in self.times_from(now) {
                        out.insert((t, e.clone()));
                    }
                }
            }
        }

        let adv_pool = self.adversary_terms(trace);
        let mut pool = TermPool::from_terms(adv_pool.iter());
        for (_, e) in trace.iter() {
            pool.insert(e.message());
        }
        let knowledge: Vec<KnowledgeBase<'_>> = self
            .dishonest
            .iter()
            .map(|a| KnowledgeBase::from_trace(a, trace, &pool))
            .collect();

        // earliest arrival per receive event over all matching sends
        let mut arrivals: BTreeMap<Event, Time> = BTreeMap::new();
        let agents = self.agents.clone();
        for (sent, e) in trace.iter() {
            let Event::Send { actor: sender, msg } = e else {
                continue;
            };
            for r in &agents {
                let recv = Event::recv(r, msg.clone());
                if trace.contains_event(&recv) {
                    continue;
                }
                let useful = if self.topo.is_honest(r) {
                    self.awaits(r, msg)
                } else {
                    let i = self.dishonest.iter().position(|d| d == r).expect("dishonest agent");
                    !knowledge[i].knows(msg)
                };
                if !useful {
                    continue;
                }
                let earliest = (*sent + self.topo.latency(sender, r)?).max(now);
                arrivals
                    .entry(recv)
                    .and_modify(|t| *t = (*t).min(earliest))
                    .or_insert(earliest);
            }
        }
        for (recv, earliest) in arrivals {
            for t in self.times_from(earliest) {
                out.insert((t, recv.clone()));
            }
        }

        let horizon = self.grid().last().unwrap_or(now);
        let dishonest = self.dishonest.clone();
        for (ai, (a, kb)) in dishonest.iter().zip(&knowledge).enumerate() {
            for m in &adv_pool {
                if !kb.knows(m) {
                    continue;
                }
                let e = Event::send(a, m.clone());
                if trace.contains_event(&e) {
                    continue;
                }
                // a send matters only if someone can make use of it in time
                let mut useful = false;
                for r in &agents {
                    if r == a || now + self.topo.latency(a, r)? > horizon {
                        continue;
                    }
                    useful = if self.topo.is_honest(r) {
                        self.awaits(r, m)
                    } else {
                        let di = dishonest.iter().position(|d| d == r).expect("dishonest agent");
                        di != ai && !knowledge[di].knows(m)
                    };
                    if useful {
                        break;
                    }
                }
                if useful {
                    for t in self.times_from(now) {
                        out.insert((t, e.clone()));
                    }
                }
            }
        }
        Ok(out.into_iter().collect())
    }
}

impl Explorer<'_> {
    /// Receivable protocol messages over the atoms of `trace` and the
    /// adversary's own nonces, plus the scenario pool.
    fn adversary_terms(&mut self, trace: &TimedTrace) -> Vec<Term> {
        let mut atoms: BTreeSet<Term> = BTreeSet::new();
        for (_, e) in trace.iter() {
            for s in e.message().subterms() {
                if matches!(s, Term::Nonce(..) | Term::Const(_)) {
                    atoms.insert(s);
                }
            }
        }
        for d in &self.dishonest {
            for i in 0..self.scenario.nonce_limit {
                atoms.insert(Term::nonce(d, i));
            }
        }
        let atoms: Vec<Term> = atoms.into_iter().collect();
        if let Some(terms) = self.receivable.get(&atoms) {
            return terms.clone();
        }
        let mut terms = self
            .protocol
            .receivable_terms(self.topo, &self.scenario.roles, &atoms, 100_000);
        terms.extend(self.scenario.pool.iter().cloned());
        let terms: Vec<Term> = terms.into_iter().collect();
        self.receivable.insert(atoms, terms.clone());
        terms
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::perito_tsudik;
    use crate::terms::Honesty;

    fn scenario(mode: TimeMode) -> Scenario {
        let topo = Topology::new(Time::from_integer(2))
            .unwrap()
            .agent("a", Honesty::Honest, 0)
            .agent("b", Honesty::Honest, 1);
        let mut s = Scenario::new(perito_tsudik(), topo, Time::from_integer(0), Time::from_integer(4))
            .with_role("V", &["a"])
            .with_role("P", &["b"]);
        s.bounds.max_len = 5;
        s.bounds.grid_points = 6;
        s.bounds.time_mode = mode;
        s
    }

    /// Entries sorted within each timestamp: traces equal up to reordering
    /// of simultaneous events share this form.
    fn canonical(t: &TimedTrace) -> Vec<(Time, String)> {
        let mut v: Vec<(Time, String)> = t.iter().map(|(t, e)| (*t, e.to_string())).collect();
        v.sort();
        v
    }

    #[test]
    fn earliest_mode_is_a_subset_of_grid_mode() {
        let grid: BTreeSet<_> = explore(&scenario(TimeMode::Grid))
            .unwrap()
            .iter()
            .map(canonical)
            .collect();
        let early = explore(&scenario(TimeMode::Earliest)).unwrap();
        assert!(early.len() < grid.len());
        assert!(early.iter().all(|t| grid.contains(&canonical(t))));
    }

    #[test]
    fn honest_echo_completes_on_the_grid() {
        let traces = explore(&scenario(TimeMode::Grid)).unwrap();
        let expected = TimedTrace::parse(
            "(0, send(a, nonce(a,0)))\n(1, recv(b, nonce(a,0)))\n(1, send(b, nonce(a,0)))\n\
             (2, recv(a, nonce(a,0)))\n(2, claim(a, erasure, b, nonce(a,0)))",
        )
        .unwrap();
        assert!(traces.contains(&expected));
        assert!(traces.iter().all(|t| t.len() <= 5));
    }

    #[test]
    fn earliest_receive_may_be_the_verifiers_own_send() {
        // at distance 0 the verifier hears its own challenge before the echo
        let traces = explore(&scenario(TimeMode::Earliest)).unwrap();
        let reflected = TimedTrace::parse(
            "(0, send(a, nonce(a,0)))\n(1, recv(b, nonce(a,0)))\n(1, send(b, nonce(a,0)))\n\
             (1, recv(a, nonce(a,0)))\n(1, claim(a, erasure, b, nonce(a,0)))",
        )
        .unwrap();
        assert!(traces.contains(&reflected));
    }

    #[test]
    fn setup_prefix_is_kept_and_not_counted() {
        let mut s = scenario(TimeMode::Earliest);
        s.setup = TimedTrace::parse("(0, send(a, nonce(a,0)))").unwrap();
        s.bounds.max_len = 1;
        let traces = explore(&s).unwrap();
        assert!(traces.iter().all(|t| t.entries()[0] == s.setup.entries()[0]));
        assert!(traces.iter().any(|t| t.len() == 2));
    }
}
