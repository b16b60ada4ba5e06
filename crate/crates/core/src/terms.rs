//! Ground message terms over a free term algebra.
//!
//! Agents, nonces and constants are atoms. Nonces are partitioned by owner,
//! shared keys are atoms that only the inference rule for key knowledge can
//! produce, and pair/enc/h/mac are free constructors without equations.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Name of a protocol participant.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Agent(Arc<str>);

impl Agent {
    pub fn new(name: &str) -> Self {
        Agent(Arc::from(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Agent {
    fn from(s: &str) -> Self {
        Agent::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Honesty {
    Honest,
    Dishonest,
}

/// An agent together with its side of the honest/dishonest partition.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AgentId {
    pub name: Agent,
    pub honesty: Honesty,
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(Arc<str>),
    Nonce(Agent, u32),
    SharedKey(Agent, Agent),
    Pair(Arc<Term>, Arc<Term>),
    Enc(Arc<Term>, Arc<Term>),
    Hash(Vec<Term>),
    Mac(Arc<Term>, Vec<Term>),
}

impl Term {
    pub fn constant(name: &str) -> Term {
        Term::Const(Arc::from(name))
    }

    pub fn nonce(owner: &Agent, index: u32) -> Term {
        Term::Nonce(owner.clone(), index)
    }

    pub fn key(a: &Agent, b: &Agent) -> Term {
        Term::SharedKey(a.clone(), b.clone())
    }

    pub fn pair(left: Term, right: Term) -> Term {
        Term::Pair(Arc::new(left), Arc::new(right))
    }

    pub fn enc(body: Term, key: Term) -> Term {
        Term::Enc(Arc::new(body), Arc::new(key))
    }

    pub fn hash(args: Vec<Term>) -> Term {
        Term::Hash(args)
    }

    pub fn mac(key: Term, args: Vec<Term>) -> Term {
        Term::Mac(Arc::new(key), args)
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Term::Const(_) | Term::Nonce(..) | Term::SharedKey(..))
    }

    /// Immediate constituents, in argument order.
    pub fn children(&self) -> Vec<&Term> {
        match self {
            Term::Const(_) | Term::Nonce(..) | Term::SharedKey(..) => Vec::new(),
            Term::Pair(l, r) => vec![l.as_ref(), r.as_ref()],
            Term::Enc(b, k) => vec![b.as_ref(), k.as_ref()],
            Term::Hash(args) => args.iter().collect(),
            Term::Mac(k, args) => std::iter::once(k.as_ref()).chain(args.iter()).collect(),
        }
    }

    /// `self` and all of its transitive constituents.
    pub fn subterms(&self) -> BTreeSet<Term> {
        let mut out = BTreeSet::new();
        self.collect_subterms(&mut out);
        out
    }

    fn collect_subterms(&self, out: &mut BTreeSet<Term>) {
        if out.insert(self.clone()) {
            for c in self.children() {
                c.collect_subterms(out);
            }
        }
    }

    /// True when `needle` occurs anywhere inside `self` (including `self`).
    pub fn contains(&self, needle: &Term) -> bool {
        self == needle || self.children().into_iter().any(|c| c.contains(needle))
    }

    /// Rewrites every agent name occurring in the term.
    pub fn map_agents(&self, f: &impl Fn(&Agent) -> Agent) -> Term {
        match self {
            Term::Const(_) => self.clone(),
            Term::Nonce(a, i) => Term::Nonce(f(a), *i),
            Term::SharedKey(a, b) => Term::SharedKey(f(a), f(b)),
            Term::Pair(l, r) => Term::pair(l.map_agents(f), r.map_agents(f)),
            Term::Enc(b, k) => Term::enc(b.map_agents(f), k.map_agents(f)),
            Term::Hash(args) => Term::Hash(args.iter().map(|a| a.map_agents(f)).collect()),
            Term::Mac(k, args) => Term::mac(k.map_agents(f), args.iter().map(|a| a.map_agents(f)).collect()),
        }
    }

    pub fn parse(text: &str) -> Result<Term, ParseError> {
        let mut p = Parser::new(text);
        let t = p.term()?;
        p.expect_end()?;
        Ok(t)
    }
}

fn join(f: &mut fmt::Formatter<'_>, items: &[Term]) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(c) => write!(f, "const({c})"),
            Term::Nonce(a, i) => write!(f, "nonce({a},{i})"),
            Term::SharedKey(a, b) => write!(f, "k({a},{b})"),
            Term::Pair(l, r) => write!(f, "pair({l}, {r})"),
            Term::Enc(b, k) => write!(f, "enc({b}, {k})"),
            Term::Hash(args) => {
                f.write_str("h(")?;
                join(f, args)?;
                f.write_str(")")
            }
            Term::Mac(k, args) => {
                write!(f, "mac({k}; ")?;
                join(f, args)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

/// Recursive-descent reader for the textual term grammar. Shared with the
/// trace-dump reader in `semantics`.
pub(crate) struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    pub(crate) fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            position: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    pub(crate) fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    pub(crate) fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            match self.peek() {
                Some(found) => self.error(format!("expected '{c}', found '{found}'")),
                None => self.error(format!("expected '{c}', found end of input")),
            }
        }
    }

    pub(crate) fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.error(format!("unexpected trailing '{c}'")),
        }
    }

    pub(crate) fn ident(&mut self) -> Result<&'a str, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let len = rest
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || matches!(c, '_' | '-' | '\'' | '.' | '/')))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if len == 0 {
            return self.error("expected identifier");
        }
        self.pos += len;
        Ok(&self.src[start..start + len])
    }

    fn agent(&mut self) -> Result<Agent, ParseError> {
        Ok(Agent::new(self.ident()?))
    }

    fn index(&mut self) -> Result<u32, ParseError> {
        let at = self.pos;
        let s = self.ident()?;
        s.parse().map_err(|_| ParseError {
            position: at,
            message: format!("expected nonce index, found '{s}'"),
        })
    }

    fn list(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut args = vec![self.term()?];
        while self.eat(',') {
            args.push(self.term()?);
        }
        Ok(args)
    }

    pub(crate) fn term(&mut self) -> Result<Term, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let head = self.ident()?;
        if self.peek() != Some('(') {
            return Ok(Term::constant(head));
        }
        self.expect('(')?;
        let t = match head {
            "const" => Term::constant(self.ident()?),
            "nonce" => {
                let a = self.agent()?;
                self.expect(',')?;
                Term::Nonce(a, self.index()?)
            }
            "k" => {
                let a = self.agent()?;
                self.expect(',')?;
                Term::SharedKey(a, self.agent()?)
            }
            "pair" => {
                let l = self.term()?;
                self.expect(',')?;
                Term::pair(l, self.term()?)
            }
            "enc" => {
                let b = self.term()?;
                self.expect(',')?;
                Term::enc(b, self.term()?)
            }
            "h" => Term::Hash(self.list()?),
            "mac" => {
                let k = self.term()?;
                self.expect(';')?;
                Term::mac(k, self.list()?)
            }
            other => {
                self.pos = start;
                return self.error(format!("unknown constructor '{other}'"));
            }
        };
        self.expect(')')?;
        Ok(t)
    }
}

/// Shape of a pool entry in terms of the indices of its children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Shape {
    Const,
    Nonce(Agent),
    Key(Agent, Agent),
    Pair(usize, usize),
    Enc(usize, usize),
    Hash(Vec<usize>),
    Mac(usize, Vec<usize>),
}

/// A finite, subterm-closed set of terms with dense indices.
///
/// Children are always inserted before their parents, so index order is a
/// topological order of the subterm relation.
#[derive(Clone, Debug, Default)]
pub struct TermPool {
    terms: Vec<Term>,
    shapes: Vec<Shape>,
    index: HashMap<Term, usize>,
    parents: Vec<Vec<usize>>,
    encs_by_key: HashMap<usize, Vec<usize>>,
}

impl TermPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms<'t>(terms: impl IntoIterator<Item = &'t Term>) -> Self {
        let mut pool = TermPool::new();
        for t in terms {
            pool.insert(t);
        }
        pool
    }

    /// Inserts `t` and all its subterms; returns the index of `t`.
    pub fn insert(&mut self, t: &Term) -> usize {
        if let Some(&i) = self.index.get(t) {
            return i;
        }
        let shape = match t {
            Term::Const(_) => Shape::Const,
            Term::Nonce(a, _) => Shape::Nonce(a.clone()),
            Term::SharedKey(a, b) => Shape::Key(a.clone(), b.clone()),
            Term::Pair(l, r) => Shape::Pair(self.insert(l), self.insert(r)),
            Term::Enc(b, k) => Shape::Enc(self.insert(b), self.insert(k)),
            Term::Hash(args) => Shape::Hash(args.iter().map(|a| self.insert(a)).collect()),
            Term::Mac(k, args) => {
                let k = self.insert(k);
                Shape::Mac(k, args.iter().map(|a| self.insert(a)).collect())
            }
        };
        let id = self.terms.len();
        for c in shape_children(&shape) {
            if !self.parents[c].contains(&id) {
                self.parents[c].push(id);
            }
        }
        if let Shape::Enc(_, k) = shape {
            self.encs_by_key.entry(k).or_default().push(id);
        }
        self.terms.push(t.clone());
        self.shapes.push(shape);
        self.parents.push(Vec::new());
        self.index.insert(t.clone(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.index.contains_key(t)
    }

    pub fn id(&self, t: &Term) -> Option<usize> {
        self.index.get(t).copied()
    }

    pub fn term(&self, id: usize) -> &Term {
        &self.terms[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter()
    }

    pub(crate) fn shape(&self, id: usize) -> &Shape {
        &self.shapes[id]
    }

    pub(crate) fn parents(&self, id: usize) -> &[usize] {
        &self.parents[id]
    }

    pub(crate) fn encs_with_key(&self, key: usize) -> &[usize] {
        self.encs_by_key.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub(crate) fn shape_children(shape: &Shape) -> Vec<usize> {
    match shape {
        Shape::Const | Shape::Nonce(_) | Shape::Key(..) => Vec::new(),
        Shape::Pair(a, b) | Shape::Enc(a, b) => vec![*a, *b],
        Shape::Hash(args) => args.clone(),
        Shape::Mac(k, args) => std::iter::once(*k).chain(args.iter().copied()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(s: &str) -> Agent {
        Agent::new(s)
    }

    #[test]
    fn subterms_of_atom_is_singleton() {
        let t = Term::constant("a");
        assert_eq!(t.subterms(), BTreeSet::from([t.clone()]));
    }

    #[test]
    fn subterms_one_level() {
        let n = Term::nonce(&a("P"), 0);
        let k = Term::key(&a("A"), &a("B"));
        let p = Term::pair(n.clone(), k.clone());
        assert_eq!(p.subterms(), BTreeSet::from([p.clone(), n, k]));
    }

    #[test]
    fn subterms_of_encrypted_pair() {
        let x = Term::constant("x");
        let y = Term::constant("y");
        let k = Term::key(&a("A"), &a("B"));
        let inner = Term::pair(x.clone(), y.clone());
        let e = Term::enc(inner.clone(), k.clone());
        let expected = BTreeSet::from([e.clone(), inner, x, y, k]);
        assert_eq!(e.subterms(), expected);
    }

    #[test]
    fn renders_canonical_pair() {
        let t = Term::pair(Term::nonce(&a("P"), 0), Term::nonce(&a("V"), 0));
        assert_eq!(t.to_string(), "pair(nonce(P,0), nonce(V,0))");
    }

    #[test]
    fn parses_key_keyword() {
        assert_eq!(Term::parse("k(A,B)").unwrap(), Term::key(&a("A"), &a("B")));
        assert_ne!(Term::parse("k(A,B)").unwrap(), Term::parse("k(B,A)").unwrap());
    }

    #[test]
    fn parses_response_hash() {
        let t = Term::parse("h(k(A,B), nonce(P,0), nonce(V,0), c)").unwrap();
        let expected = Term::hash(vec![
            Term::key(&a("A"), &a("B")),
            Term::nonce(&a("P"), 0),
            Term::nonce(&a("V"), 0),
            Term::constant("c"),
        ]);
        assert_eq!(t, expected);
    }

    #[test]
    fn parses_mac_with_semicolon() {
        let t = Term::parse("mac(k(V,P); nonce(P,0), nonce(V,1))").unwrap();
        assert_eq!(
            t,
            Term::mac(
                Term::key(&a("V"), &a("P")),
                vec![Term::nonce(&a("P"), 0), Term::nonce(&a("V"), 1)]
            )
        );
        assert_eq!(t.to_string(), "mac(k(V,P); nonce(P,0), nonce(V,1))");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Term::parse("pair(nonce(P,0) nonce(V,0))").unwrap_err();
        assert_eq!(err.position, 16);
        let err = Term::parse("frob(x)").unwrap_err();
        assert_eq!(err.position, 0);
        assert!(Term::parse("nonce(P,x)").is_err());
        assert!(Term::parse("h()").is_err());
        assert!(Term::parse("pair(a, b) extra").is_err());
    }

    #[test]
    fn nonce_identity_includes_owner() {
        assert_eq!(Term::nonce(&a("A"), 1), Term::nonce(&a("A"), 1));
        assert_ne!(Term::nonce(&a("A"), 1), Term::nonce(&a("B"), 1));
        assert_ne!(Term::nonce(&a("A"), 1), Term::nonce(&a("A"), 2));
    }

    #[test]
    fn pool_is_subterm_closed_and_topological() {
        let t = Term::parse("enc(pair(x, nonce(A,0)), k(A,B))").unwrap();
        let pool = TermPool::from_terms([&t]);
        assert_eq!(pool.len(), 5);
        for id in 0..pool.len() {
            for c in shape_children(pool.shape(id)) {
                assert!(c < id);
            }
        }
        for s in t.subterms() {
            assert!(pool.contains(&s));
        }
    }
}
