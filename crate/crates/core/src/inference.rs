//! Derivability `a ⊢_τ m` by saturation over a finite candidate pool.
//!
//! Rules: constants and own nonces (I1), shared keys with any peer (I2),
//! construction by any constructor except `k` (I3), received messages (I4),
//! unpairing (I5) and decryption under a derivable key (I6). Construction only
//! fires for terms already present in the pool, which keeps the closure
//! finite; the pool is subterm-closed so analysis never leaves it.

use std::collections::BTreeSet;

use crate::semantics::TimedTrace;
use crate::terms::{shape_children, Agent, Shape, Term, TermPool};

/// Saturated knowledge of one agent relative to a pool.
#[derive(Clone, Debug)]
pub struct KnowledgeBase<'p> {
    agent: Agent,
    pool: &'p TermPool,
    derived: Vec<bool>,
    frontier: Vec<usize>,
}

impl<'p> KnowledgeBase<'p> {
    /// Knowledge before any message is received: I1 and I2 seeds, saturated.
    pub fn new(agent: &Agent, pool: &'p TermPool) -> Self {
        let mut kb = KnowledgeBase {
            agent: agent.clone(),
            pool,
            derived: vec![false; pool.len()],
            frontier: Vec::new(),
        };
        for id in 0..pool.len() {
            let seed = match pool.shape(id) {
                Shape::Const => true,
                Shape::Nonce(owner) => owner == agent,
                Shape::Key(a, b) => a == agent || b == agent,
                _ => false,
            };
            if seed {
                kb.mark(id);
            }
        }
        kb.saturate();
        kb
    }

    /// Knowledge from every `Recv` of `agent` in `trace`.
    pub fn from_trace(agent: &Agent, trace: &TimedTrace, pool: &'p TermPool) -> Self {
        let mut kb = KnowledgeBase::new(agent, pool);
        for m in trace.received_by(agent) {
            kb.learn(m);
        }
        kb.saturate();
        kb
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    /// Rule I4. Terms outside the pool are ignored; call [`saturate`] after.
    ///
    /// [`saturate`]: KnowledgeBase::saturate
    pub fn learn(&mut self, m: &Term) {
        if let Some(id) = self.pool.id(m) {
            self.mark(id);
        }
    }

    pub fn learn_id(&mut self, id: usize) {
        self.mark(id);
    }

    fn mark(&mut self, id: usize) {
        if !self.derived[id] {
            self.derived[id] = true;
            self.frontier.push(id);
        }
    }

    fn constructible(&self, id: usize) -> bool {
        match self.pool.shape(id) {
            Shape::Const | Shape::Nonce(_) | Shape::Key(..) => false,
            shape => shape_children(shape).iter().all(|&c| self.derived[c]),
        }
    }

    /// Runs the worklist to a fixpoint.
    pub fn saturate(&mut self) {
        while let Some(id) = self.frontier.pop() {
            match *self.pool.shape(id) {
                Shape::Pair(l, r) => {
                    self.mark(l);
                    self.mark(r);
                }
                Shape::Enc(body, key) if self.derived[key] => self.mark(body),
                _ => {}
            }
            // a newly known key opens every ciphertext under it
            for &e in self.pool.encs_with_key(id) {
                if self.derived[e] {
                    if let Shape::Enc(body, _) = *self.pool.shape(e) {
                        self.mark(body);
                    }
                }
            }
            for &p in self.pool.parents(id) {
                if !self.derived[p] && self.constructible(p) {
                    self.mark(p);
                }
            }
        }
    }

    pub fn knows(&self, m: &Term) -> bool {
        self.pool.id(m).is_some_and(|id| self.derived[id])
    }

    pub fn knows_id(&self, id: usize) -> bool {
        self.derived[id]
    }

    pub fn derived(&self) -> impl Iterator<Item = &Term> + '_ {
        (0..self.derived.len())
            .filter(|&i| self.derived[i])
            .map(|i| self.pool.term(i))
    }
}

/// Every term of `pool` that `agent` can derive from `trace`.
pub fn knowledge_closure(agent: &Agent, trace: &TimedTrace, pool: &TermPool) -> BTreeSet<Term> {
    KnowledgeBase::from_trace(agent, trace, pool)
        .derived()
        .cloned()
        .collect()
}

/// `agent ⊢_trace goal`, deciding over the subterm closure of the goal and
/// every message in the trace.
pub fn derives(agent: &Agent, trace: &TimedTrace, goal: &Term) -> bool {
    let mut pool = TermPool::new();
    pool.insert(goal);
    for (_, e) in trace.iter() {
        pool.insert(e.message());
    }
    KnowledgeBase::from_trace(agent, trace, &pool).knows(goal)
}
