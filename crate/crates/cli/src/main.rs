use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use multilane::diagnostics::{
    check_comparable, convergence_study, default_entropy_levels, l1_distance, time_continuity_check,
    BvChecker, EntropyChecker, FictiveChecker, RunSummary,
};
use multilane::io::{load_scenario, write_run, IoError};
use multilane::solver::{project_initial, run_simulation, Simulation, StepObserver};
use multilane::{run_with, Error, RunOptions, RunResult, Scenario};

#[derive(Parser)]
#[command(name = "multilane", version, about = "Multi-lane traffic across a change of lanes and speed limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one or more scenarios and write snapshots plus a manifest.
    Run(RunArgs),
    /// Run a scenario and check it against the a-priori estimates.
    Verify(VerifyArgs),
    /// L1 distances between successive grid refinements.
    Convergence(ConvergenceArgs),
    /// L1 distance between two runs that differ only in their initial data.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Cell width.
    #[arg(long)]
    dx: Option<f64>,
    /// Fraction of the largest stable time step.
    #[arg(long)]
    cfl: Option<f64>,
    /// Final time.
    #[arg(long)]
    tend: Option<f64>,
}

impl Overrides {
    fn apply(&self, s: &mut Scenario) -> Result<(), Failure> {
        if let Some(dx) = self.dx {
            s.numerics.dx = dx;
        }
        if let Some(c) = self.cfl {
            s.numerics.cfl_fraction = c;
        }
        if let Some(t) = self.tend {
            s.numerics.t_end = t;
            s.numerics.snapshot_times.retain(|&x| x <= t);
        }
        s.validate().map_err(Failure::from)?;
        s.lambda().map_err(Failure::from)?;
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file or bundled name; repeat to run several in parallel.
    #[arg(long, required = true)]
    scenario: Vec<String>,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of equally spaced snapshots after t = 0.
    #[arg(long, conflicts_with = "times")]
    snapshots: Option<usize>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Evaluate the discrete entropy inequality at every step.
    #[arg(long)]
    with_entropy: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated list of bounds, conservation, entropy,
    /// time-continuity, bv, fictive, or all.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    checks: Vec<String>,
    /// BV window `a:b`; repeatable.
    #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
    interval: Vec<(f64, f64)>,
    /// Distance kept from the junction by the BV window.
    #[arg(long, default_value_t = 0.2)]
    s: f64,
    /// Overwrite one initial cell, `lane:x:value` with 1-based lane.
    #[arg(long, value_parser = parse_injection, allow_hyphen_values = true)]
    inject: Option<(usize, f64, f64)>,
    /// Where to write the JSON report (also printed to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..=10))]
    levels: u32,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario_a: String,
    #[arg(long)]
    scenario_b: String,
    #[command(flatten)]
    overrides: Overrides,
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected a:b")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((a, b))
}

fn parse_injection(s: &str) -> Result<(usize, f64, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lane, x, value] = parts[..] else {
        return Err("expected lane:x:value".into());
    };
    let lane: usize = lane.parse().map_err(|e| format!("{lane}: {e}"))?;
    if lane == 0 {
        return Err("lanes are numbered from 1".into());
    }
    let x = x.parse().map_err(|e| format!("{x}: {e}"))?;
    let value = value.parse().map_err(|e| format!("{value}: {e}"))?;
    Ok((lane, x, value))
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::BoundViolation { .. } => Failure::Check(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn load(name: &str, overrides: &Overrides) -> Result<Scenario, Failure> {
    let mut s = load_scenario(name)?;
    overrides.apply(&mut s).map_err(|f| match f {
        Failure::Usage(m) => Failure::Usage(format!("{name}: {m}")),
        other => other,
    })?;
    Ok(s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Convergence(a) => cmd_convergence(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Check(m)) => {
            eprintln!("failed: {m}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut scenarios = Vec::new();
    for name in &args.scenario {
        let mut s = load(name, &args.overrides)?;
        let t_end = s.numerics.t_end;
        if let Some(n) = args.snapshots {
            s.numerics.snapshot_times = (1..=n).map(|k| t_end * k as f64 / n as f64).collect();
        }
        if let Some(times) = &args.times {
            s.numerics.snapshot_times = times.clone();
        }
        s.validate()?;
        scenarios.push(s);
    }
    let options = RunOptions {
        entropy_levels: args.with_entropy.then(default_entropy_levels),
    };

    let results: Vec<Result<RunResult, Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(|| run_with(s, &options, &mut [])))
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });

    let mut problems = Vec::new();
    for (s, result) in scenarios.iter().zip(results) {
        let r = result?;
        let dir = if scenarios.len() == 1 {
            args.out.clone()
        } else {
            args.out.join(&s.name)
        };
        let manifest = write_run(&dir, s, &r)?;
        let summary = &manifest.summary;
        let entropy_ok = summary.entropy_max.map_or(true, |m| m <= EntropyChecker::TOLERANCE);
        println!(
            "{}: {} steps, {} snapshots in {}; range [{:.3e}, {:.3e}], conservation error {:.2e}{}",
            s.name,
            summary.steps,
            manifest.snapshots.len(),
            dir.display(),
            summary.min_before_clamp,
            summary.max_before_clamp,
            summary.max_conservation_error,
            summary
                .entropy_max
                .map(|m| format!(", entropy residual {m:.2e}"))
                .unwrap_or_default(),
        );
        for w in &summary.boundary_warnings {
            println!("  warning: {w}");
        }
        if !summary.bounds_ok() || !summary.conservation_ok() || !entropy_ok {
            problems.push(s.name.clone());
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("diagnostics failed for {}", problems.join(", "))))
    }
}

const CHECKS: [&str; 6] = ["bounds", "conservation", "entropy", "time-continuity", "bv", "fictive"];

fn selected_checks(requested: &[String]) -> Result<Vec<&'static str>, Failure> {
    let mut out = Vec::new();
    for r in requested {
        if r == "all" {
            return Ok(CHECKS.to_vec());
        }
        match CHECKS.iter().find(|c| **c == r) {
            Some(c) if !out.contains(c) => out.push(*c),
            Some(_) => {}
            None => return Err(Failure::Usage(format!("unknown check `{r}`; expected one of {}", CHECKS.join(", ")))),
        }
    }
    Ok(out)
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario, &args.overrides)?;
    let checks = selected_checks(&args.checks)?;
    let grid = scenario.grid()?;

    let mut state = project_initial(&scenario, &grid)?;
    if let Some((lane, x, value)) = args.inject {
        if lane > state.lanes() || !(x >= grid.x_min && x < grid.x_max) {
            return Err(Failure::Usage(format!("injection point lane {lane}, x = {x} is outside the scenario")));
        }
        let cell = (((x - grid.x_min) / grid.dx).floor() as usize).min(grid.cells - 1);
        state.set(lane - 1, cell, value);
    }

    let explicit_bv = checks.contains(&"bv") && !args.checks.iter().any(|c| c == "all");
    let intervals = if args.interval.is_empty() {
        vec![(-1.5, -0.5), (0.5, 1.5)]
    } else {
        args.interval.clone()
    };
    let mut bv = Vec::new();
    let mut skipped = Vec::new();
    if checks.contains(&"bv") {
        for &(a, b) in &intervals {
            match BvChecker::new(&scenario, a, b, args.s) {
                Ok(c) => bv.push(c),
                Err(e) if explicit_bv || !args.interval.is_empty() => return Err(e.into()),
                Err(e) => skipped.push(json!({ "check": "bv", "interval": [a, b], "skipped": e.to_string() })),
            }
        }
    }
    let mut entropy = checks.contains(&"entropy").then(|| EntropyChecker::new(default_entropy_levels()));
    let mut fictive = checks.contains(&"fictive").then(FictiveChecker::default);

    let outcome = {
        let mut observers: Vec<&mut dyn StepObserver> = Vec::new();
        for c in bv.iter_mut() {
            observers.push(c);
        }
        if let Some(c) = entropy.as_mut() {
            observers.push(c);
        }
        if let Some(c) = fictive.as_mut() {
            observers.push(c);
        }
        let sim = Simulation::from_state(&scenario, grid, state);
        run_simulation(sim, &RunOptions::default(), &mut observers)
    };

    let mut results: Vec<Value> = Vec::new();
    let mut all_passed = true;
    let mut push = |name: &str, passed: bool, detail: Value| {
        all_passed &= passed;
        results.push(json!({ "check": name, "passed": passed, "report": detail }));
    };
    match outcome {
        Err(e @ (Error::NonFinite { .. } | Error::BoundViolation { .. })) => {
            // the run stopped; nothing else can be judged
            push("bounds", false, json!({ "error": e.to_string() }));
        }
        Err(e) => return Err(e.into()),
        Ok(run) => {
            let summary = RunSummary::new(&run);
            for check in &checks {
                match *check {
                    "bounds" => push(
                        "bounds",
                        summary.bounds_ok(),
                        json!({ "min_before_clamp": summary.min_before_clamp, "max_before_clamp": summary.max_before_clamp }),
                    ),
                    "conservation" => push(
                        "conservation",
                        summary.conservation_ok() && summary.boundary_warnings.is_empty(),
                        json!({
                            "max_error": summary.max_conservation_error,
                            "tolerance": summary.conservation_tolerance,
                            "boundary_warnings": summary.boundary_warnings,
                        }),
                    ),
                    "time-continuity" => {
                        let r = time_continuity_check(&scenario, &run);
                        push("time-continuity", r.passed, serde_json::to_value(&r).expect("report serializes"));
                    }
                    _ => {}
                }
            }
            for c in bv.drain(..) {
                let r = c.into_report();
                push("bv", r.passed, serde_json::to_value(&r).expect("report serializes"));
            }
            if let Some(c) = entropy.take() {
                let r = c.into_report();
                push("entropy", r.passed(), serde_json::to_value(&r).expect("report serializes"));
            }
            if let Some(c) = fictive.take() {
                let r = c.into_report();
                push("fictive", r.passed(), serde_json::to_value(&r).expect("report serializes"));
            }
        }
    }
    results.extend(skipped);

    let report = json!({
        "scenario": scenario.name,
        "dx": grid.dx,
        "lambda": grid.lambda,
        "t_end": scenario.numerics.t_end,
        "injected": args.inject.map(|(lane, x, value)| json!({ "lane": lane, "x": x, "value": value })),
        "passed": all_passed,
        "checks": results,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(path) = &args.report {
        write_text(path, &text)?;
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure::Check(format!("{}: verification failed", scenario.name)))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Usage(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_convergence(args: ConvergenceArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario, &args.overrides)?;
    let levels = convergence_study(&scenario, args.levels as usize)?;
    println!("{:>12} {:>14} {:>8}", "dx", "L1 to finer", "order");
    for l in &levels {
        let d = l.distance_to_finer.map(|d| format!("{d:.6e}")).unwrap_or_else(|| "-".into());
        let p = l.observed_order.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into());
        println!("{:>12} {d:>14} {p:>8}", format!("{:.6e}", l.dx));
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let a = load(&args.scenario_a, &args.overrides)?;
    let b = load(&args.scenario_b, &args.overrides)?;
    check_comparable(&a, &b).map_err(|e| Failure::Usage(format!("scenarios are not comparable: {e}")))?;
    let (ra, rb) = std::thread::scope(|scope| {
        let ha = scope.spawn(|| run_with(&a, &RunOptions::default(), &mut []));
        let hb = scope.spawn(|| run_with(&b, &RunOptions::default(), &mut []));
        (ha.join().expect("solver thread panicked"), hb.join().expect("solver thread panicked"))
    });
    let (ra, rb) = (ra?, rb?);
    let r = l1_distance(&ra, &rb, a.numerics.t_end)?;
    println!("initial L1 distance: {:.6e}", r.initial_distance);
    println!("final L1 distance:   {:.6e} at t = {}", r.distance, r.time);
    println!("allowed:             {:.6e}", r.initial_distance + r.slack);
    println!("{}", if r.passed { "pass" } else { "FAIL" });
    if r.passed {
        Ok(())
    } else {
        Err(Failure::Check("L1 distance grew beyond the allowed slack".into()))
    }
}
