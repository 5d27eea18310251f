//! Acceptance suite. Run with `--nocapture` to see one PASS/FAIL line per
//! criterion.

use multilane::diagnostics::{
    bv_check, convergence_study, default_entropy_levels, l1_distance, time_continuity_check,
    BvChecker, EntropyChecker, FictiveChecker, FictiveReport, RunSummary,
};
use multilane::io::{bundled, bundled_names, snapshot_csv, write_run};
use multilane::numerics::{godunov_flux, InterfaceKind};
use multilane::*;
use rand::{rngs::StdRng, Rng, SeedableRng};

fn report(id: u32, name: &str, passed: bool, detail: String) {
    println!("[{}] criterion {id:>2} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {id} ({name}) failed: {detail}");
}

fn scenario(name: &str) -> Scenario {
    bundled(name).expect("bundled scenario").expect("bundled scenario parses")
}

/// Runs every bundled scenario in parallel, each watched for fictive drift.
fn bundled_runs() -> Vec<(String, Scenario, RunResult, FictiveReport)> {
    let scenarios: Vec<(String, Scenario)> =
        bundled_names().map(|n| (n.to_string(), scenario(n))).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .into_iter()
            .map(|(name, s)| {
                scope.spawn(move || {
                    let mut watch = FictiveChecker::default();
                    let r = run_with(&s, &RunOptions::default(), &mut [&mut watch]).unwrap();
                    (name, s, r, watch.into_report())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

#[test]
fn c01_bounds_and_c02_conservation_and_c08_fictive() {
    let runs = bundled_runs();

    let mut ok = true;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (name, _, r, _) in &runs {
        let s = RunSummary::new(r);
        lo = lo.min(s.min_before_clamp);
        hi = hi.max(s.max_before_clamp);
        if !s.bounds_ok() {
            ok = false;
            println!("  {name}: range [{:e}, {:e}]", s.min_before_clamp, s.max_before_clamp);
        }
    }
    report(1, "invariant region", ok, format!("{} scenarios, pre-clamp range [{lo:e}, {hi}]", runs.len()));

    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (name, _, r, _) in &runs {
        let s = RunSummary::new(r);
        worst = worst.max(s.max_conservation_error / s.conservation_tolerance);
        if !s.conservation_ok() || !s.boundary_warnings.is_empty() {
            ok = false;
            println!("  {name}: error {:e}, warnings {:?}", s.max_conservation_error, s.boundary_warnings);
        }
    }
    report(2, "conservation", ok, format!("worst error / tolerance = {worst:.2e}, no edge warnings"));

    let mut ok = true;
    let mut steps = 0;
    for (name, _, _, watch) in runs.iter().filter(|(n, ..)| {
        n.starts_with("s31_2to3.") || n.starts_with("s32_3to2.") || n.starts_with("s34_4to2.")
    }) {
        steps += watch.checked;
        if let Some(v) = watch.first_violation {
            ok = false;
            println!("  {name}: (step, lane, cell, value) = {v:?}");
        }
    }
    report(8, "fictive lanes frozen", ok && steps > 0, format!("{steps} steps checked with exact equality"));
}

#[test]
fn c03_discrete_entropy_inequality() {
    let results: Vec<_> = ["s31", "s32"]
        .into_iter()
        .map(|name| {
            let mut s = scenario(name);
            s.numerics.dx = 0.01;
            s.numerics.t_end = 0.5;
            let mut checker = EntropyChecker::new(default_entropy_levels());
            run_with(&s, &RunOptions::default(), &mut [&mut checker]).unwrap();
            (name, checker.into_report())
        })
        .collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, rep) in &results {
        let ends = rep.max_abs_per_level[0].max(*rep.max_abs_per_level.last().unwrap());
        ok &= rep.passed() && rep.max_residual <= 1e-12 && ends <= 1e-14 && rep.evaluated > 0;
        detail.push(format!("{name}: max {:.2e}, |c=0,1| {:.2e}", rep.max_residual, ends));
    }
    report(3, "entropy inequality", ok, detail.join("; "));
}

/// Godunov flux by sampling the flux on the interval between the states.
fn sampled_godunov(v: f64, u: f64, w: f64, samples: usize) -> f64 {
    let f = |x: f64| x * v * (1.0 - x);
    let (a, b) = (u.min(w), u.max(w));
    let values = (0..=samples).map(|k| f(a + (b - a) * k as f64 / samples as f64));
    if u <= w {
        values.fold(f64::INFINITY, f64::min)
    } else {
        values.fold(f64::NEG_INFINITY, f64::max)
    }
}

#[test]
fn c04_godunov_flux_oracle() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (u, w, v) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen_range(0.1..5.0));
        let profiles = SideProfiles::uniform_linear(1, v, v).unwrap();
        let got = godunov_flux(InterfaceKind::Interior(Side::Left), 0, u, w, &profiles).unwrap();
        worst = worst.max((got - sampled_godunov(v, u, w, 100_000)).abs());
    }
    report(4, "Godunov flux oracle", worst <= 1e-9, format!("max deviation {worst:.2e} over 10^4 triples"));
}

#[test]
fn c05_time_continuity() {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["s31", "s32"] {
        let s = scenario(name);
        let r = run(&s).unwrap();
        let rep = time_continuity_check(&s, &r);
        ok &= rep.passed && rep.checked == r.diagnostics.len();
        let largest = r.diagnostics.iter().map(|d| d.increment).fold(0.0, f64::max);
        detail.push(format!("{name}: largest increment {largest:.2e}, tightest bound {:.2e}", rep.bound));
    }
    report(5, "time continuity", ok, detail.join("; "));
}

#[test]
fn c06_local_bv() {
    let s = scenario("s31");
    let mut left = BvChecker::new(&s, -1.5, -0.5, 0.2).unwrap();
    let mut right = BvChecker::new(&s, 0.5, 1.5, 0.2).unwrap();
    let r = run_with(&s, &RunOptions::default(), &mut [&mut left, &mut right]).unwrap();
    let reps = [left.into_report(), right.into_report()];
    // the snapshot replay agrees with the streamed check
    let replay = bv_check(&s, &r, -1.5, -0.5, 0.2).unwrap();
    let ok = reps.iter().all(|b| b.passed && b.checked == r.diagnostics.len()) && replay.passed;
    let detail = reps
        .iter()
        .map(|b| format!("TV {:.3} <= {:.3e}", b.measured, b.bound))
        .collect::<Vec<_>>()
        .join("; ");
    report(6, "local BV", ok, detail);
}

#[test]
fn c07_l1_stability() {
    let a = scenario("s31");
    let mut b = a.clone();
    b.initial[0] = vec![
        Piece::constant(None, Some(0.0), 0.75),
        Piece::constant(Some(0.0), None, 0.7),
    ];
    let (ra, rb, ra2) = std::thread::scope(|scope| {
        let ha = scope.spawn(|| run(&a).unwrap());
        let hb = scope.spawn(|| run(&b).unwrap());
        let ha2 = scope.spawn(|| run(&a).unwrap());
        (ha.join().unwrap(), hb.join().unwrap(), ha2.join().unwrap())
    });
    let rep = l1_distance(&ra, &rb, 1.0).unwrap();
    let same = l1_distance(&ra, &ra2, 1.0).unwrap();
    let ok = rep.passed && same.distance == 0.0 && (rep.initial_distance - 0.1).abs() < 1e-12;
    report(
        7,
        "L1 stability",
        ok,
        format!(
            "distance {:.4} <= {:.4} + {:.4}; identical runs {}",
            rep.distance, rep.initial_distance, rep.slack, same.distance
        ),
    );
}

fn smooth_scenario() -> Scenario {
    Scenario::new(
        "smooth",
        LaneTopology::full(1).unwrap(),
        SideProfiles::uniform_linear(1, 1.0, 1.0).unwrap(),
        vec![vec![
            Piece::constant(None, Some(-1.0), 0.8),
            Piece {
                from: Some(-1.0),
                to: Some(1.0),
                value: PieceValue::Linear(0.8, 0.2),
            },
            Piece::constant(Some(1.0), None, 0.2),
        ]],
        Numerics {
            dx: 0.01,
            t_end: 0.5,
            ..Numerics::default()
        },
    )
    .unwrap()
}

#[test]
fn c09_self_convergence() {
    let mut s = scenario("s32");
    s.numerics.dx = 0.01;
    let levels = convergence_study(&s, 4).unwrap();
    let d: Vec<f64> = levels.iter().filter_map(|l| l.distance_to_finer).collect();
    let ratios: Vec<f64> = d.windows(2).map(|p| p[0] / p[1]).collect();
    let junction_ok = d.len() == 3 && ratios.iter().all(|&r| r >= 1.3);

    let smooth = convergence_study(&smooth_scenario(), 4).unwrap();
    let orders: Vec<f64> = smooth.iter().filter_map(|l| l.observed_order).collect();
    let smooth_ok = orders.len() == 2 && orders.iter().all(|&p| p >= 0.8);

    report(
        9,
        "self-convergence",
        junction_ok && smooth_ok,
        format!("s32 distances [{}], ratios {ratios:.2?}; smooth orders {orders:.3?}", d.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")),
    );
}

#[test]
fn c10_queue_grows_when_downstream_is_slower() {
    let left_mass = |name: &str| {
        let s = scenario(name);
        let r = run(&s).unwrap();
        let g = r.grid;
        let state = r.snapshot_near(1.0).state.clone();
        s.topology
            .active(Side::Left)
            .iter()
            .map(|&j| state.lane(j)[g.side_cells(Side::Left)].iter().sum::<f64>())
            .sum::<f64>()
            * g.dx
    };
    let (slow, fast) = (left_mass("s32_3to2.json"), left_mass("s32_3to2_vr2.json"));
    report(
        10,
        "queue length",
        slow - fast >= 0.01 * slow,
        format!("mass in x<0: V_r=1 {slow:.4}, V_r=2 {fast:.4} ({:.1}%)", 100.0 * (slow - fast) / slow),
    );
}

#[test]
fn c11_determinism() {
    let s = scenario("s34");
    let (a, b) = (run(&s).unwrap(), run(&s).unwrap());
    let csv_a: Vec<String> = a.snapshots.iter().map(|p| snapshot_csv(&a.grid, p)).collect();
    let csv_b: Vec<String> = b.snapshots.iter().map(|p| snapshot_csv(&b.grid, p)).collect();

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    write_run(dirs[0].path(), &s, &a).unwrap();
    write_run(dirs[1].path(), &s, &b).unwrap();
    let files_equal = (0..a.snapshots.len()).all(|i| {
        let name = format!("snapshot_{i}.csv");
        std::fs::read(dirs[0].path().join(&name)).unwrap()
            == std::fs::read(dirs[1].path().join(&name)).unwrap()
    });
    report(
        11,
        "determinism",
        csv_a == csv_b && files_equal,
        format!("{} snapshot files byte-identical", a.snapshots.len()),
    );
}
