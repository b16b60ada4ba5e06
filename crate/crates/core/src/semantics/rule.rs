//! Protocol rules as data: typed variables, message patterns, premises over
//! the trace, and one concluding event.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{Event, SemanticsError, Time, TimedTrace, Topology};
use crate::inference::derives;
use crate::terms::{Agent, Term};

pub type Var = Arc<str>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sort {
    Agent,
    /// A nonce owned by the agent bound to the given variable.
    Nonce(Var),
    /// Any message.
    Msg,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pattern {
    Var(Var),
    Const(Arc<str>),
    /// The name constant of the agent bound to the variable.
    AgentName(Var),
    Key(Var, Var),
    Pair(Box<Pattern>, Box<Pattern>),
    Enc(Box<Pattern>, Box<Pattern>),
    Hash(Vec<Pattern>),
    Mac(Box<Pattern>, Vec<Pattern>),
}

impl Pattern {
    pub fn var(name: &str) -> Pattern {
        Pattern::Var(Arc::from(name))
    }

    pub fn constant(name: &str) -> Pattern {
        Pattern::Const(Arc::from(name))
    }

    pub fn key(a: &str, b: &str) -> Pattern {
        Pattern::Key(Arc::from(a), Arc::from(b))
    }

    pub fn pair(l: Pattern, r: Pattern) -> Pattern {
        Pattern::Pair(Box::new(l), Box::new(r))
    }

    pub fn enc(body: Pattern, key: Pattern) -> Pattern {
        Pattern::Enc(Box::new(body), Box::new(key))
    }

    pub fn hash(args: Vec<Pattern>) -> Pattern {
        Pattern::Hash(args)
    }

    pub fn mac(key: Pattern, args: Vec<Pattern>) -> Pattern {
        Pattern::Mac(Box::new(key), args)
    }

    fn vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Pattern::Var(v) | Pattern::AgentName(v) => {
                out.insert(v.clone());
            }
            Pattern::Const(_) => {}
            Pattern::Key(a, b) => {
                out.insert(a.clone());
                out.insert(b.clone());
            }
            Pattern::Pair(l, r) | Pattern::Enc(l, r) => {
                l.vars(out);
                r.vars(out);
            }
            Pattern::Hash(args) => args.iter().for_each(|a| a.vars(out)),
            Pattern::Mac(k, args) => {
                k.vars(out);
                args.iter().for_each(|a| a.vars(out));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventPattern {
    Send {
        actor: Var,
        msg: Pattern,
    },
    Recv {
        actor: Var,
        msg: Pattern,
    },
    Claim {
        actor: Var,
        property: Arc<str>,
        peer: Var,
        msg: Pattern,
    },
}

impl EventPattern {
    pub fn actor(&self) -> &Var {
        match self {
            EventPattern::Send { actor, .. } | EventPattern::Recv { actor, .. } | EventPattern::Claim { actor, .. } => {
                actor
            }
        }
    }

    pub fn message(&self) -> &Pattern {
        match self {
            EventPattern::Send { msg, .. } | EventPattern::Recv { msg, .. } | EventPattern::Claim { msg, .. } => msg,
        }
    }

    fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        out.insert(self.actor().clone());
        if let EventPattern::Claim { peer, .. } = self {
            out.insert(peer.clone());
        }
        self.message().vars(&mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Premise {
    /// Some entry of the trace matches; `label` names that entry.
    Event { label: Var, event: EventPattern },
    /// The nonce variable is bound to a nonce of the actor that does not
    /// occur anywhere in the trace.
    Fresh(Var),
    /// The first labelled entry comes strictly before the second.
    Before(Var, Var),
    /// `time(end) - time(start) <= bound`.
    Within { start: Var, end: Var, bound: Time },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Agent(Agent),
    Term(Term),
}

pub type Binding = BTreeMap<Var, Value>;

type Labels = BTreeMap<Var, usize>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolRule {
    pub name: String,
    pub actor: Var,
    pub vars: BTreeMap<Var, Sort>,
    pub premises: Vec<Premise>,
    pub conclusion: EventPattern,
}

/// Incremental construction of a [`ProtocolRule`]; every event premise and
/// the conclusion are executed by the rule's actor.
#[derive(Clone, Debug)]
pub struct RuleBuilder {
    name: String,
    actor: Var,
    vars: BTreeMap<Var, Sort>,
    premises: Vec<Premise>,
}

impl RuleBuilder {
    pub fn new(name: &str, actor: &str) -> Self {
        let actor: Var = Arc::from(actor);
        let mut vars = BTreeMap::new();
        vars.insert(actor.clone(), Sort::Agent);
        RuleBuilder {
            name: name.to_string(),
            actor,
            vars,
            premises: Vec::new(),
        }
    }

    pub fn agent(mut self, v: &str) -> Self {
        self.vars.insert(Arc::from(v), Sort::Agent);
        self
    }

    pub fn nonce(mut self, v: &str, owner: &str) -> Self {
        self.vars.insert(Arc::from(v), Sort::Nonce(Arc::from(owner)));
        self
    }

    pub fn msg(mut self, v: &str) -> Self {
        self.vars.insert(Arc::from(v), Sort::Msg);
        self
    }

    pub fn fresh(mut self, v: &str) -> Self {
        self.premises.push(Premise::Fresh(Arc::from(v)));
        self
    }

    pub fn sent(mut self, label: &str, msg: Pattern) -> Self {
        let event = EventPattern::Send {
            actor: self.actor.clone(),
            msg,
        };
        self.premises.push(Premise::Event {
            label: Arc::from(label),
            event,
        });
        self
    }

    pub fn received(mut self, label: &str, msg: Pattern) -> Self {
        let event = EventPattern::Recv {
            actor: self.actor.clone(),
            msg,
        };
        self.premises.push(Premise::Event {
            label: Arc::from(label),
            event,
        });
        self
    }

    pub fn before(mut self, first: &str, second: &str) -> Self {
        self.premises.push(Premise::Before(Arc::from(first), Arc::from(second)));
        self
    }

    pub fn within(mut self, start: &str, end: &str, bound: Time) -> Self {
        self.premises.push(Premise::Within {
            start: Arc::from(start),
            end: Arc::from(end),
            bound,
        });
        self
    }

    pub fn then_send(self, msg: Pattern) -> Result<ProtocolRule, SemanticsError> {
        let conclusion = EventPattern::Send {
            actor: self.actor.clone(),
            msg,
        };
        self.finish(conclusion)
    }

    pub fn then_claim(self, property: &str, peer: &str, msg: Pattern) -> Result<ProtocolRule, SemanticsError> {
        let conclusion = EventPattern::Claim {
            actor: self.actor.clone(),
            property: Arc::from(property),
            peer: Arc::from(peer),
            msg,
        };
        self.finish(conclusion)
    }

    fn finish(self, conclusion: EventPattern) -> Result<ProtocolRule, SemanticsError> {
        let rule = ProtocolRule {
            name: self.name,
            actor: self.actor,
            vars: self.vars,
            premises: self.premises,
            conclusion,
        };
        rule.validate()?;
        Ok(rule)
    }
}

fn bind(b: &mut Binding, v: &Var, val: Value) -> bool {
    match b.get(v) {
        Some(existing) => *existing == val,
        None => {
            b.insert(v.clone(), val);
            true
        }
    }
}

impl ProtocolRule {
    fn invalid(&self, reason: impl Into<String>) -> SemanticsError {
        SemanticsError::InvalidRule {
            rule: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn bad_binding(&self, reason: impl Into<String>) -> SemanticsError {
        SemanticsError::BadBinding {
            rule: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn sort(&self, v: &Var) -> Option<&Sort> {
        self.vars.get(v)
    }

    fn fresh_vars(&self) -> Vec<&Var> {
        self.premises
            .iter()
            .filter_map(|p| match p {
                Premise::Fresh(v) => Some(v),
                _ => None,
            })
            .collect()
    }

    /// Checks the structural constraints on protocol rules: a single actor
    /// for every event, well-sorted variables, and a conclusion whose message
    /// the actor can derive from what the premises give it.
    pub fn validate(&self) -> Result<(), SemanticsError> {
        if self.sort(&self.actor) != Some(&Sort::Agent) {
            return Err(self.invalid("actor must be an agent variable"));
        }
        let mut events: Vec<&EventPattern> = Vec::new();
        let mut labels: BTreeSet<&Var> = BTreeSet::new();
        for p in &self.premises {
            match p {
                Premise::Event { label, event } => {
                    if !labels.insert(label) {
                        return Err(self.invalid(format!("label {label} used twice")));
                    }
                    events.push(event);
                }
                Premise::Fresh(v) => match self.sort(v) {
                    Some(Sort::Nonce(owner)) if *owner == self.actor => {}
                    _ => return Err(self.invalid(format!("{v} must be a nonce of the actor"))),
                },
                Premise::Before(a, b) | Premise::Within { start: a, end: b, .. } => {
                    if !labels.contains(a) || !labels.contains(b) {
                        return Err(self.invalid("ordering refers to an undefined label"));
                    }
                }
            }
        }
        events.push(&self.conclusion);
        for e in &events {
            if *e.actor() != self.actor {
                return Err(self.invalid("all events must be executed by the rule's actor"));
            }
            for v in e.vars() {
                let Some(sort) = self.sort(&v) else {
                    return Err(self.invalid(format!("undeclared variable {v}")));
                };
                if let Sort::Nonce(owner) = sort {
                    if self.sort(owner) != Some(&Sort::Agent) {
                        return Err(self.invalid(format!("owner of {v} is not an agent")));
                    }
                }
            }
            if let EventPattern::Claim { peer, .. } = e {
                if self.sort(peer) != Some(&Sort::Agent) {
                    return Err(self.invalid("claim peer must be an agent variable"));
                }
            }
            check_agent_positions(self, e.message())?;
        }
        if matches!(self.conclusion, EventPattern::Recv { .. }) {
            return Err(self.invalid("a rule cannot conclude a receive event"));
        }

        let mut bound: BTreeSet<Var> = BTreeSet::new();
        for e in &events[..events.len() - 1] {
            bound.extend(e.vars());
        }
        let conclusion_vars = self.conclusion.vars();
        for v in self.fresh_vars() {
            if !conclusion_vars.contains(v) {
                return Err(self.invalid(format!("fresh {v} is not used by the conclusion")));
            }
            bound.insert(v.clone());
        }
        for v in &conclusion_vars {
            if self.sort(v) != Some(&Sort::Agent) && !bound.contains(v) {
                return Err(self.invalid(format!("{v} is not bound by any premise")));
            }
        }

        // Derivability: premises become received knowledge of a skolemised actor.
        let skolem = self.skolem_binding();
        let actor = match &skolem[&self.actor] {
            Value::Agent(a) => a.clone(),
            Value::Term(_) => unreachable!(),
        };
        let mut known = TimedTrace::new();
        for e in &events[..events.len() - 1] {
            let m = instantiate(e.message(), &skolem).map_err(|r| self.invalid(r))?;
            known.push_unchecked(Time::from_integer(0), Event::recv(&actor, m));
        }
        let goal = instantiate(self.conclusion.message(), &skolem).map_err(|r| self.invalid(r))?;
        if !derives(&actor, &known, &goal) {
            return Err(self.invalid(format!("conclusion {goal} is not derivable from the premises")));
        }
        Ok(())
    }

    fn skolem_binding(&self) -> Binding {
        let outsider = Agent::new("?");
        let mut b = Binding::new();
        for (v, s) in &self.vars {
            if *s == Sort::Agent {
                b.insert(v.clone(), Value::Agent(Agent::new(&format!("?{v}"))));
            }
        }
        for (i, (v, s)) in self.vars.iter().enumerate() {
            let i = i as u32;
            match s {
                Sort::Agent => {}
                Sort::Msg => {
                    b.insert(v.clone(), Value::Term(Term::nonce(&outsider, i)));
                }
                Sort::Nonce(owner) => {
                    let owner = match &b[owner] {
                        Value::Agent(a) => a.clone(),
                        Value::Term(_) => unreachable!(),
                    };
                    b.insert(v.clone(), Value::Term(Term::nonce(&owner, i)));
                }
            }
        }
        b
    }

    /// Agents a variable may range over when it is not bound by matching.
    pub(crate) fn domain(&self, v: &Var, topo: &Topology, roles: &BTreeMap<Var, Vec<Agent>>) -> Vec<Agent> {
        let base: Vec<Agent> = match roles.get(v) {
            Some(list) => list.clone(),
            None => topo.agents().cloned().collect(),
        };
        if *v == self.actor {
            base.into_iter().filter(|a| topo.is_honest(a)).collect()
        } else {
            base
        }
    }

    /// All (binding, label assignment) pairs matching the event and ordering
    /// premises; `Within` is enforced only when `timing` is set.
    fn solve(&self, trace: &TimedTrace, start: Binding, timing: bool) -> Vec<(Binding, Labels)> {
        let mut out = Vec::new();
        self.solve_from(0, trace, start, Labels::new(), timing, &mut out);
        out
    }

    fn solve_from(
        &self,
        k: usize,
        trace: &TimedTrace,
        b: Binding,
        labels: Labels,
        timing: bool,
        out: &mut Vec<(Binding, Labels)>,
    ) {
        let Some(p) = self.premises.get(k) else {
            out.push((b, labels));
            return;
        };
        match p {
            Premise::Event { label, event } => {
                for (i, (_, e)) in trace.iter().enumerate() {
                    if let Some(b2) = match_event(self, event, e, &b) {
                        let mut l2 = labels.clone();
                        l2.insert(label.clone(), i);
                        self.solve_from(k + 1, trace, b2, l2, timing, out);
                    }
                }
            }
            Premise::Fresh(_) => self.solve_from(k + 1, trace, b, labels, timing, out),
            Premise::Before(x, y) => {
                if labels[x] < labels[y] {
                    self.solve_from(k + 1, trace, b, labels, timing, out);
                }
            }
            Premise::Within { start, end, bound } => {
                let ok = !timing || {
                    let ts = trace.entries()[labels[start]].0;
                    let te = trace.entries()[labels[end]].0;
                    te - ts <= *bound
                };
                if ok {
                    self.solve_from(k + 1, trace, b, labels, timing, out);
                }
            }
        }
    }

    /// Every event this rule can append to `trace`, with canonical fresh
    /// nonces (lowest unused indices of the actor).
    pub(crate) fn instances(
        &self,
        trace: &TimedTrace,
        topo: &Topology,
        roles: &BTreeMap<Var, Vec<Agent>>,
    ) -> BTreeSet<Event> {
        let mut events = BTreeSet::new();
        for actor in self.domain(&self.actor, topo, roles) {
            let mut start = Binding::new();
            start.insert(self.actor.clone(), Value::Agent(actor.clone()));
            for (b, _) in self.solve(trace, start, true) {
                let free: Vec<&Var> = self
                    .vars
                    .iter()
                    .filter(|(v, s)| **s == Sort::Agent && !b.contains_key(*v))
                    .map(|(v, _)| v)
                    .collect();
                for mut full in self.agent_assignments(&free, b, topo, roles) {
                    self.assign_fresh(trace, &actor, &mut full);
                    if let Ok(m) = instantiate_event(&self.conclusion, &full) {
                        events.insert(m);
                    }
                }
            }
        }
        events
    }

    fn agent_assignments(
        &self,
        free: &[&Var],
        b: Binding,
        topo: &Topology,
        roles: &BTreeMap<Var, Vec<Agent>>,
    ) -> Vec<Binding> {
        let mut acc = vec![b];
        for v in free {
            let dom = self.domain(v, topo, roles);
            acc = acc
                .into_iter()
                .flat_map(|b| {
                    dom.iter().map(move |a| {
                        let mut b2 = b.clone();
                        b2.insert((*v).clone(), Value::Agent(a.clone()));
                        b2
                    })
                })
                .collect();
        }
        acc
    }

    fn assign_fresh(&self, trace: &TimedTrace, actor: &Agent, b: &mut Binding) {
        let mut used: BTreeSet<u32> = BTreeSet::new();
        for (_, e) in trace.iter() {
            for s in e.message().subterms() {
                if let Term::Nonce(owner, i) = s {
                    if owner == *actor {
                        used.insert(i);
                    }
                }
            }
        }
        let mut next = 0u32;
        for v in self.fresh_vars() {
            while used.contains(&next) {
                next += 1;
            }
            b.insert(v.clone(), Value::Term(Term::nonce(actor, next)));
            used.insert(next);
        }
    }

    /// Checks every premise against `trace` under a complete binding and
    /// returns the concluded event.
    pub fn conclude(&self, trace: &TimedTrace, binding: &Binding, topo: &Topology) -> Result<Event, SemanticsError> {
        for (v, s) in &self.vars {
            match (s, binding.get(v)) {
                (Sort::Agent, Some(Value::Agent(_))) | (Sort::Msg, Some(Value::Term(_))) => {}
                (Sort::Nonce(owner), Some(Value::Term(Term::Nonce(o, _)))) => {
                    if binding.get(owner) != Some(&Value::Agent(o.clone())) {
                        return Err(self.bad_binding(format!("{v} is not a nonce of {owner}")));
                    }
                }
                (_, None) => return Err(self.bad_binding(format!("{v} is unbound"))),
                _ => return Err(self.bad_binding(format!("{v} has the wrong sort"))),
            }
        }
        let Some(Value::Agent(actor)) = binding.get(&self.actor) else {
            unreachable!("sorts checked above");
        };
        if !topo.is_honest(actor) {
            return Err(SemanticsError::NotHonest(actor.clone()));
        }
        let mut seen = BTreeSet::new();
        for v in self.fresh_vars() {
            let Some(Value::Term(n)) = binding.get(v) else {
                unreachable!("sorts checked above");
            };
            if trace.mentions(n) || !seen.insert(n.clone()) {
                return Err(SemanticsError::FreshnessViolation {
                    rule: self.name.clone(),
                    nonce: n.clone(),
                });
            }
        }
        if self.solve(trace, binding.clone(), false).is_empty() {
            return Err(SemanticsError::PremiseUnmatched {
                rule: self.name.clone(),
            });
        }
        if self.solve(trace, binding.clone(), true).is_empty() {
            return Err(SemanticsError::TimingSideConditionFailed {
                rule: self.name.clone(),
            });
        }
        instantiate_event(&self.conclusion, binding).map_err(|r| self.bad_binding(r))
    }

    /// Finds a binding under which this rule appends `event` to `trace`.
    /// Agent variables the event leaves open range over the topology.
    pub(crate) fn justify(
        &self,
        trace: &TimedTrace,
        event: &Event,
        topo: &Topology,
    ) -> Result<Binding, SemanticsError> {
        let Some(b) = match_event(self, &self.conclusion, event, &Binding::new()) else {
            return Err(SemanticsError::PremiseUnmatched {
                rule: self.name.clone(),
            });
        };
        let free: Vec<&Var> = self
            .vars
            .iter()
            .filter(|(v, s)| **s == Sort::Agent && !b.contains_key(*v))
            .map(|(v, _)| v)
            .collect();
        let all = BTreeMap::new();
        let mut last = SemanticsError::PremiseUnmatched {
            rule: self.name.clone(),
        };
        for start in self.agent_assignments(&free, b, topo, &all) {
            let mut candidates = self.solve(trace, start.clone(), true);
            if candidates.is_empty() {
                candidates = self.solve(trace, start, false);
            }
            let candidates: Vec<Binding> = candidates.into_iter().map(|(b, _)| b).collect();
            for full in candidates {
                match self.conclude(trace, &full, topo) {
                    Ok(e) if e == *event => return Ok(full),
                    Ok(_) => {}
                    Err(err) => last = err,
                }
            }
        }
        Err(last)
    }

    /// Message patterns occurring anywhere in the rule.
    pub fn message_patterns(&self) -> Vec<&Pattern> {
        let mut out: Vec<&Pattern> = self
            .premises
            .iter()
            .filter_map(|p| match p {
                Premise::Event { event, .. } => Some(event.message()),
                _ => None,
            })
            .collect();
        out.push(self.conclusion.message());
        out
    }
}

fn check_agent_positions(rule: &ProtocolRule, p: &Pattern) -> Result<(), SemanticsError> {
    match p {
        Pattern::Key(a, b) => {
            for v in [a, b] {
                if rule.sort(v) != Some(&Sort::Agent) {
                    return Err(rule.invalid(format!("{v} in a key must be an agent variable")));
                }
            }
            Ok(())
        }
        Pattern::AgentName(v) if rule.sort(v) != Some(&Sort::Agent) => {
            Err(rule.invalid(format!("{v} is not an agent variable")))
        }
        Pattern::Pair(l, r) | Pattern::Enc(l, r) => {
            check_agent_positions(rule, l)?;
            check_agent_positions(rule, r)
        }
        Pattern::Hash(args) => args.iter().try_for_each(|a| check_agent_positions(rule, a)),
        Pattern::Mac(k, args) => {
            check_agent_positions(rule, k)?;
            args.iter().try_for_each(|a| check_agent_positions(rule, a))
        }
        _ => Ok(()),
    }
}

fn agent_of(b: &Binding, v: &Var) -> Result<Agent, String> {
    match b.get(v) {
        Some(Value::Agent(a)) => Ok(a.clone()),
        Some(Value::Term(_)) => Err(format!("{v} is bound to a message, not an agent")),
        None => Err(format!("{v} is unbound")),
    }
}

pub(crate) fn instantiate(p: &Pattern, b: &Binding) -> Result<Term, String> {
    Ok(match p {
        Pattern::Var(v) => match b.get(v) {
            Some(Value::Term(t)) => t.clone(),
            Some(Value::Agent(a)) => Term::constant(a.name()),
            None => return Err(format!("{v} is unbound")),
        },
        Pattern::Const(c) => Term::Const(c.clone()),
        Pattern::AgentName(v) => Term::constant(agent_of(b, v)?.name()),
        Pattern::Key(x, y) => Term::SharedKey(agent_of(b, x)?, agent_of(b, y)?),
        Pattern::Pair(l, r) => Term::pair(instantiate(l, b)?, instantiate(r, b)?),
        Pattern::Enc(l, r) => Term::enc(instantiate(l, b)?, instantiate(r, b)?),
        Pattern::Hash(args) => Term::Hash(args.iter().map(|a| instantiate(a, b)).collect::<Result<_, _>>()?),
        Pattern::Mac(k, args) => Term::mac(
            instantiate(k, b)?,
            args.iter().map(|a| instantiate(a, b)).collect::<Result<_, _>>()?,
        ),
    })
}

pub(crate) fn instantiate_event(e: &EventPattern, b: &Binding) -> Result<Event, String> {
    Ok(match e {
        EventPattern::Send { actor, msg } => Event::send(&agent_of(b, actor)?, instantiate(msg, b)?),
        EventPattern::Recv { actor, msg } => Event::recv(&agent_of(b, actor)?, instantiate(msg, b)?),
        EventPattern::Claim {
            actor,
            property,
            peer,
            msg,
        } => Event::claim(
            &agent_of(b, actor)?,
            property,
            &agent_of(b, peer)?,
            instantiate(msg, b)?,
        ),
    })
}

fn match_term(rule: &ProtocolRule, p: &Pattern, t: &Term, b: &mut Binding) -> bool {
    match p {
        Pattern::Var(v) => match rule.sort(v) {
            Some(Sort::Msg) => bind(b, v, Value::Term(t.clone())),
            Some(Sort::Nonce(owner)) => match t {
                Term::Nonce(o, _) => bind(b, owner, Value::Agent(o.clone())) && bind(b, v, Value::Term(t.clone())),
                _ => false,
            },
            Some(Sort::Agent) => match t {
                Term::Const(name) => bind(b, v, Value::Agent(Agent::new(name))),
                _ => false,
            },
            None => false,
        },
        Pattern::AgentName(v) => match t {
            Term::Const(name) => bind(b, v, Value::Agent(Agent::new(name))),
            _ => false,
        },
        Pattern::Const(c) => matches!(t, Term::Const(x) if x == c),
        Pattern::Key(x, y) => match t {
            Term::SharedKey(a, c) => bind(b, x, Value::Agent(a.clone())) && bind(b, y, Value::Agent(c.clone())),
            _ => false,
        },
        Pattern::Pair(pl, pr) => match t {
            Term::Pair(l, r) => match_term(rule, pl, l, b) && match_term(rule, pr, r, b),
            _ => false,
        },
        Pattern::Enc(pl, pr) => match t {
            Term::Enc(l, r) => match_term(rule, pl, l, b) && match_term(rule, pr, r, b),
            _ => false,
        },
        Pattern::Hash(ps) => match t {
            Term::Hash(ts) => ps.len() == ts.len() && ps.iter().zip(ts).all(|(p, t)| match_term(rule, p, t, b)),
            _ => false,
        },
        Pattern::Mac(pk, ps) => match t {
            Term::Mac(k, ts) => {
                ps.len() == ts.len()
                    && match_term(rule, pk, k, b)
                    && ps.iter().zip(ts).all(|(p, t)| match_term(rule, p, t, b))
            }
            _ => false,
        },
    }
}

pub(crate) fn match_event(rule: &ProtocolRule, p: &EventPattern, e: &Event, b: &Binding) -> Option<Binding> {
    let mut b = b.clone();
    let ok = match (p, e) {
        (EventPattern::Send { actor: pa, msg: pm }, Event::Send { actor, msg })
        | (EventPattern::Recv { actor: pa, msg: pm }, Event::Recv { actor, msg }) => {
            bind(&mut b, pa, Value::Agent(actor.clone())) && match_term(rule, pm, msg, &mut b)
        }
        (
            EventPattern::Claim {
                actor: pa,
                property: pp,
                peer: ppeer,
                msg: pm,
            },
            Event::Claim {
                actor,
                property,
                peer,
                msg,
            },
        ) => {
            pp == property
                && bind(&mut b, pa, Value::Agent(actor.clone()))
                && bind(&mut b, ppeer, Value::Agent(peer.clone()))
                && match_term(rule, pm, msg, &mut b)
        }
        _ => false,
    };
    ok.then_some(b)
}

/// A protocol: its name and honest-agent rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedProtocol {
    pub name: String,
    pub rules: Vec<ProtocolRule>,
    /// Property named by the protocol's claim events.
    pub claim_property: String,
}

impl NamedProtocol {
    pub fn new(name: &str, rules: Vec<ProtocolRule>) -> Result<Self, SemanticsError> {
        let mut names = BTreeSet::new();
        for r in &rules {
            r.validate()?;
            if !names.insert(r.name.clone()) {
                return Err(SemanticsError::InvalidRule {
                    rule: r.name.clone(),
                    reason: "duplicate rule name".into(),
                });
            }
        }
        Ok(NamedProtocol {
            name: name.to_string(),
            rules,
            claim_property: super::ERASURE.to_string(),
        })
    }

    pub fn rule(&self, name: &str) -> Option<&ProtocolRule> {
        self.rules.iter().find(|r| r.name == name)
    }

    /// Ground instances of every message pattern of the protocol, with agent
    /// variables ranging over their role domains and nonce/message variables
    /// over `atoms`. Patterns whose instance count exceeds `cap` are skipped.
    pub fn template_terms(
        &self,
        topo: &Topology,
        roles: &BTreeMap<Var, Vec<Agent>>,
        atoms: &[Term],
        cap: usize,
    ) -> BTreeSet<Term> {
        let mut out = BTreeSet::new();
        for rule in &self.rules {
            for p in rule.message_patterns() {
                ground_instances(rule, p, topo, roles, atoms, cap, &mut out);
            }
        }
        out
    }

    /// Like [`template_terms`](NamedProtocol::template_terms), restricted to
    /// the patterns some honest agent waits to receive.
    pub fn receivable_terms(
        &self,
        topo: &Topology,
        roles: &BTreeMap<Var, Vec<Agent>>,
        atoms: &[Term],
        cap: usize,
    ) -> BTreeSet<Term> {
        let mut out = BTreeSet::new();
        for rule in &self.rules {
            if rule.domain(&rule.actor, topo, roles).is_empty() {
                continue;
            }
            for p in &rule.premises {
                if let Premise::Event {
                    event: EventPattern::Recv { msg, .. },
                    ..
                } = p
                {
                    ground_instances(rule, msg, topo, roles, atoms, cap, &mut out);
                }
            }
        }
        out
    }

    /// Whether some rule of the honest `agent` waits for `msg`, with message
    /// variables matching atoms only.
    pub fn awaits(&self, agent: &Agent, msg: &Term, topo: &Topology, roles: &BTreeMap<Var, Vec<Agent>>) -> bool {
        let event = Event::recv(agent, msg.clone());
        self.rules.iter().any(|rule| {
            rule.domain(&rule.actor, topo, roles).contains(agent)
                && rule.premises.iter().any(|p| match p {
                    Premise::Event {
                        event: pat @ EventPattern::Recv { .. },
                        ..
                    } => match_event(rule, pat, &event, &Binding::new()).is_some_and(|b| {
                        b.iter().all(|(v, val)| {
                            rule.sort(v) != Some(&Sort::Msg) || matches!(val, Value::Term(t) if t.is_atom())
                        })
                    }),
                    _ => false,
                })
        })
    }
}

fn ground_instances(
    rule: &ProtocolRule,
    p: &Pattern,
    topo: &Topology,
    roles: &BTreeMap<Var, Vec<Agent>>,
    atoms: &[Term],
    cap: usize,
    out: &mut BTreeSet<Term>,
) {
    let mut vars = BTreeSet::new();
    p.vars(&mut vars);
    // owners first so nonce variables can see them
    let mut order: Vec<Var> = Vec::new();
    for v in &vars {
        if let Some(Sort::Nonce(owner)) = rule.sort(v) {
            if !order.contains(owner) {
                order.push(owner.clone());
            }
        }
    }
    for v in &vars {
        if !order.contains(v) {
            order.push(v.clone());
        }
    }
    let mut acc: Vec<Binding> = vec![Binding::new()];
    for v in &order {
        let mut next = Vec::new();
        for b in &acc {
            let choices: Vec<Value> = match rule.sort(v) {
                Some(Sort::Agent) => rule.domain(v, topo, roles).into_iter().map(Value::Agent).collect(),
                Some(Sort::Nonce(owner)) => match b.get(owner) {
                    Some(Value::Agent(o)) => atoms
                        .iter()
                        .filter(|t| matches!(t, Term::Nonce(x, _) if x == o))
                        .cloned()
                        .map(Value::Term)
                        .collect(),
                    _ => Vec::new(),
                },
                Some(Sort::Msg) => atoms.iter().cloned().map(Value::Term).collect(),
                None => Vec::new(),
            };
            for c in choices {
                let mut b2 = b.clone();
                b2.insert(v.clone(), c);
                next.push(b2);
            }
        }
        acc = next;
        if acc.len() > cap {
            return;
        }
    }
    for b in &acc {
        if let Ok(t) = instantiate(p, b) {
            out.insert(t);
        }
    }
}
