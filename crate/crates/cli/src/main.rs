//! `memerase`: explore scenarios, replay attacks, simulate sessions and
//! tabulate the pruning trade-off.
//!
//! Exit status is 0 on success, 1 when a security check fails and 2 on bad
//! usage or unreadable input.

mod report;

use std::io::Write;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memerase::automata::tree_size;
use memerase::fraud::{self, PruneStrategy, TradeoffRow};
use memerase::protocols;
use memerase::semantics::{
    check_erasure_claims, explore_with, replay, ClaimStatus, Event, Scenario, Time, TimeMode, TimedTrace, ERASURE,
};
use memerase::simulator::{acceptance_rate, simulate_session, Attacker, ProverMode, SessionConfig};
use memerase::terms::{Agent, Honesty};
use thiserror::Error;

#[derive(Debug, Error)]
enum Failure {
    /// A security expectation did not hold.
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Input(String),
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "memerase", version, about = "Analyse memory-erasure protocols")]
struct Cli {
    /// Print structured JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate the traces of a scenario and check its erasure claims.
    Explore(ExploreArgs),
    /// Build and check a known attack.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Simulate sessions of the lookup-based protocol.
    Simulate(SimulateArgs),
    /// Success probability of subtree pruning for several depths and rounds.
    Tradeoff(TradeoffArgs),
    /// Compare closed-form, exact and Monte Carlo success probabilities.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ExploreArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Override the distance threshold used when checking claims.
    #[arg(long, value_parser = parse_time)]
    delta: Option<Time>,
    /// Maximum number of events per trace.
    #[arg(long)]
    max_len: Option<usize>,
    /// Number of points on the time grid.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Spacing of the time grid.
    #[arg(long, value_parser = parse_time)]
    grid_step: Option<Time>,
    /// Deliver each message at its earliest possible time instead of at every grid point.
    #[arg(long)]
    earliest: bool,
    /// Exit with status 1 if any claim is violated.
    #[arg(long)]
    expect_secure: bool,
    /// Violating traces to print.
    #[arg(long, default_value_t = 1)]
    show: usize,
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Key-sharing attack on SPEED by a distant attacker.
    Speed {
        /// Distance threshold for the claim check.
        #[arg(long, value_parser = parse_time, default_value = "5")]
        delta: Time,
        /// Bits of the memory checksum challenge.
        #[arg(long, default_value_t = 4)]
        bits: usize,
        #[arg(long, value_parser = parse_time, default_value = "5")]
        attacker_position: Time,
        #[arg(long, value_parser = parse_time, default_value = "20")]
        prover_position: Time,
    },
    /// Moves a dishonest prover's actions to a co-located accomplice.
    Clone {
        scenario: PathBuf,
        /// Trace to transform; by default the first explored trace with an
        /// erasure claim about the prover.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Dishonest prover named in the erasure claims.
        #[arg(long)]
        prover: String,
        /// Accomplice name; added next to the prover if the scenario lacks it.
        #[arg(long = "clone", default_value = "clone")]
        accomplice: String,
        #[arg(long, value_parser = parse_time, default_value = "0")]
        delta: Time,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Depth of the cyclic tree automaton.
    #[arg(long)]
    depth: u32,
    /// Number of fast-phase rounds.
    #[arg(long)]
    rounds: usize,
    /// Largest accepted round-trip time.
    #[arg(long, value_parser = parse_time)]
    time_bound: Time,
    /// Signal speed.
    #[arg(long, value_parser = parse_time, default_value = "2")]
    speed: Time,
    /// Distance of the prover from the verifier.
    #[arg(long, value_parser = parse_time, default_value = "0")]
    prover_position: Time,
    /// Prune target of a fraudulent prover.
    #[arg(long)]
    prune: Option<usize>,
    #[arg(long, value_parser = parse_time)]
    attacker_position: Option<Time>,
    /// The attacker holds the shared key.
    #[arg(long, requires = "attacker_position")]
    attacker_key: bool,
    /// Time the responder spends on each round.
    #[arg(long, value_parser = parse_time, default_value = "0")]
    processing_delay: Time,
    /// Run this many sessions and report the acceptance rate.
    #[arg(long, default_value_t = 1)]
    sessions: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TradeoffArgs {
    /// Depth of the cyclic tree automaton.
    #[arg(long)]
    depth: u32,
    /// Comma-separated round counts, each a multiple of the depth.
    #[arg(long, value_delimiter = ',', required = true)]
    rounds: Vec<usize>,
    /// Depths of the pruned state, e.g. `2..12` or `3,5`.
    #[arg(long, value_parser = parse_range)]
    prune_depths: Option<Depths>,
    /// Explicit prune targets.
    #[arg(long, value_delimiter = ',')]
    prune: Vec<usize>,
    /// Add Monte Carlo rows with this many trials.
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Depth of the cyclic tree automaton.
    #[arg(long)]
    depth: u32,
    /// Index of the pruned state.
    #[arg(long)]
    prune: usize,
    /// Number of fast-phase rounds.
    #[arg(long)]
    rounds: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_time(s: &str) -> Result<Time, String> {
    s.trim()
        .parse::<Time>()
        .map_err(|_| format!("'{s}' is not an integer or p/q rational"))
}

/// A list of tree depths given as a range or comma list.
#[derive(Clone, Debug)]
struct Depths(Vec<u32>);

fn parse_range(s: &str) -> Result<Depths, String> {
    let num = |x: &str| x.trim().parse::<u32>().map_err(|_| format!("bad depth '{x}'"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty range {s}"));
        }
        Ok(Depths((a..=b).collect()))
    } else {
        s.split(',').map(num).collect::<Result<_, _>>().map(Depths)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::Explore(a) => explore(a, cli.json, &mut out),
        Command::Attack(AttackCommand::Speed {
            delta,
            bits,
            attacker_position,
            prover_position,
        }) => attack_speed(delta, bits, attacker_position, prover_position, cli.json, &mut out),
        Command::Attack(AttackCommand::Clone {
            scenario,
            trace,
            prover,
            accomplice,
            delta,
        }) => attack_clone(
            &scenario,
            trace.as_deref(),
            &prover,
            &accomplice,
            delta,
            cli.json,
            &mut out,
        ),
        Command::Simulate(a) => simulate(a, cli.json, &mut out),
        Command::Tradeoff(a) => tradeoff(a, &mut out),
        Command::Verify(a) => verify(a, cli.json, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn emit(out: &mut impl Write, text: impl std::fmt::Display) -> Outcome {
    write!(out, "{text}").map_err(Failure::input)
}

fn explore(a: ExploreArgs, json: bool, out: &mut impl Write) -> Outcome {
    let mut scenario = Scenario::load(&a.scenario).map_err(Failure::input)?;
    if let Some(n) = a.max_len {
        scenario.bounds.max_len = n;
    }
    if let Some(n) = a.grid_points {
        scenario.bounds.grid_points = n;
    }
    if let Some(s) = a.grid_step {
        scenario.bounds.grid_step = s;
    }
    if a.earliest {
        scenario.bounds.time_mode = TimeMode::Earliest;
    }
    let delta = a.delta.unwrap_or(scenario.delta);

    let mut claims = 0usize;
    let mut violating: Vec<TimedTrace> = Vec::new();
    let mut violations = 0usize;
    let stats = explore_with(&scenario, |trace| {
        // each claim is judged once, on the trace it ends
        if let Some((_, Event::Claim { property, .. })) = trace.entries().last() {
            if &**property == ERASURE {
                claims += 1;
                let last = trace.len() - 1;
                let bad = check_erasure_claims(trace, delta, &scenario.topology)
                    .iter()
                    .any(|v| v.index == last && v.status == ClaimStatus::Violated);
                if bad {
                    violations += 1;
                    if violating.len() < a.show {
                        violating.push(trace.clone());
                    }
                }
            }
        }
        ControlFlow::Continue(())
    })
    .map_err(Failure::input)?;

    for t in &violating {
        replay(t, &scenario.protocol, &scenario.topology).map_err(Failure::input)?;
    }
    if json {
        let v = serde_json::json!({
            "protocol": scenario.protocol.name,
            "delta": delta.to_string(),
            "traces": stats.traces,
            "claims": claims,
            "violations": violations,
            "violating_traces": violating
                .iter()
                .map(|t| report::trace_json(t, delta, &scenario.topology))
                .collect::<Vec<_>>(),
        });
        emit(out, format_args!("{v:#}\n"))?;
    } else {
        emit(
            out,
            format_args!(
                "protocol {} delta {delta}: {} traces, {claims} erasure claims, {violations} violated\n",
                scenario.protocol.name, stats.traces
            ),
        )?;
        for t in &violating {
            emit(out, "\nviolating trace:\n")?;
            emit(out, report::trace_text(t, delta, &scenario.topology))?;
        }
    }
    if a.expect_secure && violations > 0 {
        return Err(Failure::Check(format!("FAIL: {violations} violated erasure claims")));
    }
    Ok(())
}

fn attack_speed(
    delta: Time,
    bits: usize,
    attacker_position: Time,
    prover_position: Time,
    json: bool,
    out: &mut impl Write,
) -> Outcome {
    let topo = memerase::semantics::Topology::new(Time::from_integer(2))
        .map_err(Failure::input)?
        .agent("V", Honesty::Honest, 0);
    let mut topo = topo;
    topo.add("A", Honesty::Dishonest, attacker_position);
    topo.add("P", Honesty::Dishonest, prover_position);
    let d = topo
        .distance(&Agent::new("V"), &Agent::new("A"))
        .map_err(Failure::input)?;
    // the trace itself does not depend on delta beyond the attacker's placement
    let trace = protocols::speed_attack_trace(&topo, delta.min(d), bits).map_err(Failure::input)?;
    let protocol = protocols::speed(bits).map_err(Failure::input)?;
    replay(&trace, &protocol, &topo).map_err(Failure::input)?;
    report::print_attack(out, &trace, delta, &topo, json)
}

fn attack_clone(
    scenario_path: &std::path::Path,
    trace_path: Option<&std::path::Path>,
    prover: &str,
    accomplice: &str,
    delta: Time,
    json: bool,
    out: &mut impl Write,
) -> Outcome {
    let scenario = Scenario::load(scenario_path).map_err(Failure::input)?;
    let b = Agent::new(prover);
    let c = Agent::new(accomplice);
    let mut topo = scenario.topology.clone();
    if !topo.contains(&b) {
        return Err(Failure::Input(format!("unknown agent {b}")));
    }
    if !topo.contains(&c) {
        let pos = topo
            .position(&b)
            .ok_or_else(|| Failure::Input(format!("{b} has no position")))?;
        topo.add(accomplice, Honesty::Dishonest, pos);
    }

    let original = match trace_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            TimedTrace::parse(&text).map_err(|(line, e)| Failure::Input(format!("{}:{line}: {e}", p.display())))?
        }
        None => {
            let mut found = None;
            explore_with(&scenario, |t| {
                let claims_about_b = t.iter().any(
                    |(_, e)| matches!(e, Event::Claim { property, peer, .. } if &**property == ERASURE && *peer == b),
                );
                if claims_about_b {
                    found = Some(t.clone());
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })
            .map_err(Failure::input)?;
            found.ok_or_else(|| Failure::Input(format!("no explored trace has an erasure claim about {b}")))?
        }
    };
    replay(&original, &scenario.protocol, &scenario.topology)
        .map_err(|e| Failure::Input(format!("input trace does not replay: {e}")))?;
    let cloned = protocols::clone_transform(&original, &b, &c, &topo).map_err(Failure::input)?;
    replay(&cloned, &scenario.protocol, &topo).map_err(Failure::input)?;
    report::print_attack(out, &cloned, delta, &topo, json)
}

fn simulate(a: SimulateArgs, json: bool, out: &mut impl Write) -> Outcome {
    let mut cfg = SessionConfig::new(a.depth, a.rounds, a.time_bound, a.speed);
    cfg.prover_position = a.prover_position;
    cfg.prover = a.prune.map_or(ProverMode::Honest, ProverMode::Fraudulent);
    cfg.attacker = a.attacker_position.map(|position| Attacker {
        position,
        has_key: a.attacker_key,
    });
    cfg.processing_delay = a.processing_delay;
    cfg.rng_seed = a.seed;
    if a.sessions == 1 {
        let outcome = simulate_session(&cfg).map_err(Failure::input)?;
        if json {
            let v = serde_json::to_value(&outcome).map_err(Failure::input)?;
            emit(out, format_args!("{v:#}\n"))
        } else {
            emit(out, outcome)
        }
    } else {
        let r = acceptance_rate(&cfg, a.sessions).map_err(Failure::input)?;
        if json {
            let v = serde_json::json!({
                "sessions": a.sessions,
                "accepted_fraction": r.value,
                "stderr": r.stderr,
            });
            emit(out, format_args!("{v:#}\n"))
        } else {
            emit(out, format_args!("acceptance rate over {} sessions: {r}\n", a.sessions))
        }
    }
}

fn tradeoff(a: TradeoffArgs, out: &mut impl Write) -> Outcome {
    let mut targets = a.prune.clone();
    for d_i in a.prune_depths.map(|d| d.0).unwrap_or_default() {
        match PruneStrategy::at_depth(a.depth, d_i) {
            Ok(s) => targets.push(s.index()),
            Err(_) => eprintln!("warning: skipping prune depth {d_i} (no prunable state at that depth)"),
        }
    }
    let mut rows = fraud::tradeoff_table(a.depth, &a.rounds, &targets).map_err(Failure::input)?;
    if let Some(trials) = a.trials {
        let mut mc = Vec::new();
        for row in &rows {
            let r = fraud::mc_success(a.depth, row.i, row.n, trials, a.seed).map_err(Failure::input)?;
            mc.push(TradeoffRow {
                method: r.method,
                probability: r.value,
                stderr: r.stderr,
                ..row.clone()
            });
        }
        rows.extend(mc);
    }
    let sink: Box<dyn Write + '_> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?),
        None => Box::new(&mut *out),
    };
    let mut w = csv::Writer::from_writer(sink);
    for row in &rows {
        w.serialize(row).map_err(Failure::input)?;
    }
    w.flush().map_err(Failure::input)?;
    drop(w);
    if let Some(p) = &a.out {
        emit(out, format_args!("wrote {} rows to {}\n", rows.len(), p.display()))?;
    }
    Ok(())
}

fn verify(a: VerifyArgs, json: bool, out: &mut impl Write) -> Outcome {
    let strategy = PruneStrategy::new(a.depth, a.prune).map_err(Failure::input)?;
    let analytic = fraud::analytic_success(a.depth, a.prune, a.rounds).ok();
    let exact = fraud::exact_success(a.depth, a.prune, a.rounds).ok();
    let mc = fraud::mc_success(a.depth, a.prune, a.rounds, a.trials, a.seed).map_err(Failure::input)?;
    let reference = exact.as_ref().or(analytic.as_ref()).map(|r| r.value);
    let se = mc.stderr.unwrap_or(0.0).max(1.0 / a.trials as f64);
    let pass = reference.map(|p| (mc.value - p).abs() <= 3.0 * se);

    if json {
        let v = serde_json::json!({
            "depth": a.depth,
            "prune": a.prune,
            "d_i": strategy.target_depth(),
            "rounds": a.rounds,
            "states": tree_size(a.depth),
            "analytic": analytic.as_ref().map(|r| r.value),
            "exact": exact.as_ref().and_then(|r| r.exact.as_ref()).map(|r| r.to_string()),
            "monte_carlo": mc.value,
            "stderr": mc.stderr,
            "trials": a.trials,
            "pass": pass,
        });
        emit(out, format_args!("{v:#}\n"))?;
    } else {
        emit(
            out,
            format_args!(
                "depth {} prune q{} (d_i = {}) rounds {}\n",
                a.depth,
                a.prune,
                strategy.target_depth(),
                a.rounds
            ),
        )?;
        match &analytic {
            Some(r) => emit(out, format_args!("analytic     {}\n", r.value))?,
            None => emit(out, "analytic     n/a (rounds not a multiple of depth)\n")?,
        }
        match exact.as_ref().and_then(|r| r.exact.as_ref()) {
            Some(r) => emit(out, format_args!("exact        {r}\n"))?,
            None => emit(out, "exact        n/a (outside budget)\n")?,
        }
        emit(out, format_args!("monte-carlo  {mc} ({} trials)\n", a.trials))?;
        match pass {
            Some(true) => emit(out, "PASS\n")?,
            Some(false) => emit(out, "FAIL\n")?,
            None => emit(out, "no reference value\n")?,
        }
    }
    match pass {
        Some(false) => Err(Failure::Check(
            "FAIL: Monte Carlo estimate outside 3 standard errors".into(),
        )),
        _ => Ok(()),
    }
}
