use std::ops::ControlFlow;

use memerase::protocols::{clone_transform, erasure_protocol, perito_tsudik, ProtocolError};
use memerase::semantics::{
    apply_adv, apply_net, apply_protocol_rule, check_causality, check_erasure_claims, dist_sep, explore, explore_with,
    replay, Binding, ClaimStatus, Event, NamedProtocol, Scenario, SemanticsError, Time, TimeMode, TimedTrace, Topology,
    Value,
};
use memerase::terms::{Agent, Honesty, Term};

fn t(n: i64) -> Time {
    Time::from_integer(n)
}

fn echo_topology() -> Topology {
    Topology::new(t(2))
        .unwrap()
        .agent("a", Honesty::Honest, 0)
        .agent("b", Honesty::Dishonest, 1)
}

const ECHO_RUN: &str = "
(0, send(a, nonce(a,0)))
(1, recv(b, nonce(a,0)))
(2, send(b, nonce(a,0)))
(3, recv(a, nonce(a,0)))
(4, claim(a, erasure, b, nonce(a,0)))
";

fn echo_run() -> TimedTrace {
    TimedTrace::parse(ECHO_RUN).unwrap()
}

fn binding(pairs: &[(&str, Value)]) -> Binding {
    pairs
        .iter()
        .map(|(k, v)| (std::sync::Arc::from(*k), v.clone()))
        .collect()
}

#[test]
fn net_rule_boundary_and_violation() {
    let topo = echo_topology();
    let (a, b) = (Agent::new("a"), Agent::new("b"));
    let sent = TimedTrace::new()
        .with(t(0), Event::send(&a, Term::constant("x")))
        .unwrap();
    assert!(apply_net(&sent, 0, &b, t(1), &topo).is_ok());
    assert!(matches!(
        apply_net(&sent, 0, &b, Time::new(1, 2), &topo),
        Err(SemanticsError::TimingViolation { .. })
    ));
    // zero distance: the sender may receive its own message at once
    assert!(apply_net(&sent, 0, &a, t(0), &topo).is_ok());
}

#[test]
fn adversary_rule() {
    let mut topo = echo_topology();
    topo.add("c", Honesty::Dishonest, t(3));
    let (a, b, c) = (Agent::new("a"), Agent::new("b"), Agent::new("c"));
    let empty = TimedTrace::new();
    assert!(apply_adv(&empty, &c, Term::constant("x"), t(0), &topo).is_ok());
    assert!(matches!(
        apply_adv(&empty, &c, Term::nonce(&b, 0), t(0), &topo),
        Err(SemanticsError::Underivable { .. })
    ));
    let reveal = Term::pair(Term::key(&a, &b), Term::key(&b, &a));
    assert!(apply_adv(&empty, &b, reveal, t(0), &topo).is_ok());
    assert!(matches!(
        apply_adv(&empty, &a, Term::constant("x"), t(0), &topo),
        Err(SemanticsError::NotDishonest(_))
    ));
}

#[test]
fn protocol_rules_of_the_echo_protocol() {
    let mut topo = echo_topology();
    topo.add("h", Honesty::Honest, t(1));
    let p = perito_tsudik();
    let (a, h) = (Agent::new("a"), Agent::new("h"));
    let n = Term::nonce(&a, 0);
    let v1 = binding(&[("V", Value::Agent(a.clone())), ("NV", Value::Term(n.clone()))]);
    let tr = apply_protocol_rule(&TimedTrace::new(), p.rule("V1").unwrap(), &v1, t(0), &topo).unwrap();
    assert_eq!(tr.entries().last().unwrap().1, Event::send(&a, n.clone()));
    assert!(matches!(
        apply_protocol_rule(&tr, p.rule("V1").unwrap(), &v1, t(0), &topo),
        Err(SemanticsError::FreshnessViolation { .. })
    ));

    let tr = apply_net(&tr, 0, &h, t(1), &topo).unwrap();
    let p1 = binding(&[("P", Value::Agent(h.clone())), ("N", Value::Term(n.clone()))]);
    let tr = apply_protocol_rule(&tr, p.rule("P1").unwrap(), &p1, t(2), &topo).unwrap();
    assert_eq!(tr.entries().last().unwrap(), &(t(2), Event::send(&h, n.clone())));

    // the verifier cannot claim before the echo arrives
    let v2 = binding(&[
        ("V", Value::Agent(a.clone())),
        ("P", Value::Agent(h.clone())),
        ("NV", Value::Term(n)),
    ]);
    assert!(matches!(
        apply_protocol_rule(&tr, p.rule("V2").unwrap(), &v2, t(3), &topo),
        Err(SemanticsError::PremiseUnmatched { .. })
    ));
}

#[test]
fn worked_example_replays_and_is_satisfied() {
    let topo = echo_topology();
    let tr = echo_run();
    replay(&tr, &perito_tsudik(), &topo).unwrap();
    let v = check_erasure_claims(&tr, t(0), &topo);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].status, ClaimStatus::Satisfied);
    assert_eq!(TimedTrace::parse(&tr.to_string()).unwrap(), tr);
}

#[test]
fn replay_reports_the_first_bad_entry() {
    let topo = echo_topology();
    let bad = ECHO_RUN.replace("(1, recv", "(1/2, recv");
    let tr = TimedTrace::parse(&bad).unwrap();
    let err = replay(&tr, &perito_tsudik(), &topo).unwrap_err();
    assert_eq!(err.index, 1);
}

#[test]
fn distant_attacker_guard() {
    let mut topo = echo_topology();
    topo.add("c", Honesty::Dishonest, t(3));
    let (a, b, c) = (Agent::new("a"), Agent::new("b"), Agent::new("c"));
    let honest_only = TimedTrace::new()
        .with(t(0), Event::send(&a, Term::constant("x")))
        .unwrap();
    assert!(dist_sep(&honest_only, &a, &b, t(100), &topo));
    let with_c = honest_only.with(t(0), Event::send(&c, Term::constant("y"))).unwrap();
    assert!(!dist_sep(&with_c, &a, &b, t(5), &topo));
    assert!(dist_sep(&with_c, &a, &b, t(3), &topo));
    assert!(dist_sep(&with_c, &a, &b, t(0), &topo));
    // an actor the topology does not know never passes the guard
    let stranger = honest_only
        .with(t(0), Event::send(&Agent::new("z"), Term::constant("y")))
        .unwrap();
    assert!(!dist_sep(&stranger, &a, &b, t(1), &topo));
}

#[test]
fn nearby_accomplice_makes_claims_not_applicable() {
    let mut topo = echo_topology();
    topo.add("c", Honesty::Dishonest, t(1));
    let tr = echo_run();
    let cloned = clone_transform(&tr, &Agent::new("b"), &Agent::new("c"), &topo).unwrap();
    assert_eq!(
        check_erasure_claims(&cloned, t(2), &topo)[0].status,
        ClaimStatus::NotApplicable
    );
}

#[test]
fn clone_transform_of_the_worked_example() {
    let mut topo = echo_topology();
    topo.add("c", Honesty::Dishonest, t(1));
    let (b, c) = (Agent::new("b"), Agent::new("c"));
    let tr = echo_run();
    let cloned = clone_transform(&tr, &b, &c, &topo).unwrap();
    assert_eq!(cloned.len(), 7);
    replay(&cloned, &perito_tsudik(), &topo).unwrap();
    assert!(cloned.contains_event(&Event::send(&c, Term::nonce(&Agent::new("a"), 0))));
    assert!(!cloned.iter().any(|(_, e)| e.actor() == &b
        && !matches!(e, Event::Send { msg, .. } if msg.contains(&Term::key(&Agent::new("a"), &b)))));
    assert_eq!(
        check_erasure_claims(&cloned, t(0), &topo)[0].status,
        ClaimStatus::Violated
    );

    assert!(matches!(
        clone_transform(&cloned, &b, &c, &topo),
        Err(ProtocolError::PreconditionFailed(_))
    ));
}

#[test]
fn clone_transform_when_b_only_appears_in_the_claim() {
    let mut topo = echo_topology();
    topo.add("c", Honesty::Dishonest, t(1));
    let a = Agent::new("a");
    let tr = TimedTrace::parse("(0, claim(a, erasure, b, nonce(a,0)))").unwrap();
    let cloned = clone_transform(&tr, &Agent::new("b"), &Agent::new("c"), &topo).unwrap();
    assert_eq!(cloned.len(), 3);
    assert_eq!(cloned.entries()[2], tr.entries()[0]);
    assert!(cloned.entries()[0]
        .1
        .message()
        .contains(&Term::key(&a, &Agent::new("b"))));
}

fn echo_scenario(max_len: usize) -> Scenario {
    let mut s = Scenario::new(perito_tsudik(), echo_topology(), t(0), t(4))
        .with_role("V", &["a"])
        .with_role("P", &["b"]);
    s.bounds.max_len = max_len;
    s.bounds.grid_points = 6;
    s
}

#[test]
fn explore_length_zero_is_the_empty_trace() {
    assert_eq!(explore(&echo_scenario(0)).unwrap(), vec![TimedTrace::new()]);
}

#[test]
fn explore_finds_the_worked_example() {
    let traces = explore(&echo_scenario(5)).unwrap();
    assert!(traces.contains(&echo_run()));
    for tr in &traces {
        replay(tr, &perito_tsudik(), &echo_topology()).unwrap();
    }
    let unique: std::collections::BTreeSet<_> = traces.iter().map(|t| t.to_string()).collect();
    assert_eq!(unique.len(), traces.len());
}

#[test]
fn explore_without_rules_or_adversary() {
    let topo = Topology::new(t(2)).unwrap().agent("a", Honesty::Honest, 0);
    let mut s = Scenario::new(NamedProtocol::new("none", vec![]).unwrap(), topo, t(0), t(4));
    s.bounds.max_len = 4;
    assert_eq!(explore(&s).unwrap(), vec![TimedTrace::new()]);
}

#[test]
fn explore_budget_is_enforced() {
    let mut s = echo_scenario(6);
    s.bounds.max_states = 50;
    assert!(matches!(explore(&s), Err(SemanticsError::BoundsTooLarge(50))));
}

#[test]
fn visitor_can_stop_early() {
    let mut seen = 0;
    let stats = explore_with(&echo_scenario(6), |_| {
        seen += 1;
        if seen == 10 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert!(stats.stopped);
    assert_eq!(stats.traces, 10);
}

fn honest_erasure(prover_at: i64) -> Scenario {
    let topo = Topology::new(t(2))
        .unwrap()
        .agent("V", Honesty::Honest, 0)
        .agent("P", Honesty::Honest, prover_at);
    let mut s = Scenario::new(erasure_protocol(t(4)).unwrap(), topo, t(4), t(4))
        .with_role("V", &["V"])
        .with_role("P", &["P"]);
    s.bounds.max_len = 9;
    s.bounds.grid_step = t(1);
    s.bounds.grid_points = 40;
    s.bounds.time_mode = TimeMode::Earliest;
    s
}

#[test]
fn honest_erasure_run_claims_once_and_is_causal() {
    let s = honest_erasure(1);
    let mut complete = 0;
    explore_with(&s, |tr| {
        let claims: Vec<_> = check_erasure_claims(tr, s.delta, &s.topology);
        assert!(claims.len() <= 1);
        if let Some(v) = claims.first() {
            complete += 1;
            assert_eq!(v.status, ClaimStatus::Satisfied);
            assert!(check_causality(tr, &s.topology));
            // removing the prover's response leaves no causal witness
            let stripped: TimedTrace = {
                let mut out = TimedTrace::new();
                for (time, e) in tr.iter() {
                    if !(e.is_send() && e.message() == &v.msg) {
                        out.push(*time, e.clone()).unwrap();
                    }
                }
                out
            };
            assert!(!check_causality(&stripped, &s.topology));
        }
        ControlFlow::Continue(())
    })
    .unwrap();
    assert!(complete > 0);
    assert!(check_causality(&TimedTrace::new(), &s.topology));
}

#[test]
fn distant_honest_prover_never_gets_a_claim() {
    // round trip 4 * 3 / 2 = 6 exceeds the bound of 4
    let s = honest_erasure(3);
    let claims: usize = explore(&s)
        .unwrap()
        .iter()
        .map(|tr| check_erasure_claims(tr, s.delta, &s.topology).len())
        .sum();
    assert_eq!(claims, 0);
}

#[test]
fn bundled_scenarios_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        Scenario::load(&path).unwrap_or_else(|e| panic!("{e}"));
        n += 1;
    }
    assert!(n >= 4);
}
