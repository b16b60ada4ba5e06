//! Text and JSON renderings of traces with their claim verdicts.

use std::fmt::Write as _;
use std::io::Write;

use memerase::semantics::{check_erasure_claims, ClaimStatus, Time, TimedTrace, Topology};
use serde_json::{json, Value};

use crate::{emit, Outcome};

pub fn trace_text(trace: &TimedTrace, delta: Time, topo: &Topology) -> String {
    let mut s = String::new();
    for (i, (t, e)) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i:>3}  ({t}, {e})");
    }
    for v in check_erasure_claims(trace, delta, topo) {
        let _ = writeln!(
            s,
            "claim at entry {} by {} about {}: {}",
            v.index, v.verifier, v.prover, v.status
        );
    }
    s
}

pub fn trace_json(trace: &TimedTrace, delta: Time, topo: &Topology) -> Value {
    let entries: Vec<Value> = trace
        .iter()
        .map(|(t, e)| json!({ "time": t.to_string(), "event": e.to_string() }))
        .collect();
    let verdicts: Vec<Value> = check_erasure_claims(trace, delta, topo)
        .iter()
        .map(|v| {
            json!({
                "index": v.index,
                "verifier": v.verifier.to_string(),
                "prover": v.prover.to_string(),
                "message": v.msg.to_string(),
                "status": v.status.to_string(),
            })
        })
        .collect();
    json!({ "entries": entries, "claims": verdicts })
}

/// Prints the trace and an overall verdict line.
pub fn print_attack(out: &mut impl Write, trace: &TimedTrace, delta: Time, topo: &Topology, json: bool) -> Outcome {
    let verdicts = check_erasure_claims(trace, delta, topo);
    let overall = if verdicts.iter().any(|v| v.status == ClaimStatus::Violated) {
        "CLAIM VIOLATED"
    } else if verdicts.iter().all(|v| v.status == ClaimStatus::NotApplicable) {
        "CLAIM NOT APPLICABLE"
    } else {
        "CLAIM SATISFIED"
    };
    if json {
        let mut v = trace_json(trace, delta, topo);
        v["delta"] = json!(delta.to_string());
        v["verdict"] = json!(overall);
        emit(out, format_args!("{v:#}\n"))
    } else {
        emit(out, format_args!("delta {delta}\n"))?;
        emit(out, trace_text(trace, delta, topo))?;
        emit(out, format_args!("{overall}\n"))
    }
}
