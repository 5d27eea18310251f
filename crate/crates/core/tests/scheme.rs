use multilane::diagnostics::{fictive_violation, order_violation, state_distance};
use multilane::io::bundled;
use multilane::solver::{project_initial, step, Simulation};
use multilane::*;

fn scenario(name: &str) -> Scenario {
    bundled(name).unwrap().unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-14
}

// One step of the 2-to-3 setup worked by hand at the two cells touching x = 0.
#[test]
fn first_step_next_to_the_junction() {
    let mut s = scenario("s31");
    s.numerics.dx = 0.01;
    let grid = s.grid().unwrap();
    let lam = 1.0 / 6.0;
    let dt = lam * 0.01;
    assert!(close(grid.lambda, lam));

    let fl = |u: f64| 1.5 * u * (1.0 - u);
    let fr = |u: f64| u * (1.0 - u);

    // transport: left cell sees f_l(0.7) coming in and min(f_l(0.5), f_r(0.7)) leaving
    let l1 = 0.7 - lam * (fl(0.5).min(fr(0.7)) - fl(0.7));
    let l2 = 0.6 - lam * (fl(0.5).min(fr(0.6)) - fl(0.6));
    // right cell: lanes 1, 2 pass through unchanged, lane 3 gets nothing from its fictive left half
    let (r1, r2) = (0.7, 0.6);
    let r3 = 0.5 - lam * fr(0.5);

    // source, left: only lanes 1 and 2 are coupled
    let gap = 1.5 * (1.0 - l2) - 1.5 * (1.0 - l1);
    assert!(gap > 0.0);
    let s0 = gap * l1;
    let left = [l1 - dt * s0, l2 + dt * s0, 0.0];

    // source, right: both pairs coupled, both gaps positive
    let s0 = ((1.0 - r2) - (1.0 - r1)) * r1;
    let s1 = ((1.0 - r3) - (1.0 - r2)) * r2;
    let right = [r1 - dt * s0, r2 + dt * (s0 - s1), r3 + dt * s1];

    let state = project_initial(&s, &grid).unwrap();
    let next = step(&state, &grid, &s).unwrap();
    let (k_left, k_right) = (grid.junction - 1, grid.junction);
    for j in 0..3 {
        assert!(close(next.get(j, k_left), left[j]), "lane {j} left: {} vs {}", next.get(j, k_left), left[j]);
        assert!(close(next.get(j, k_right), right[j]), "lane {j} right: {} vs {}", next.get(j, k_right), right[j]);
    }
    assert_eq!(next.get(2, k_left), 0.0);
    // far from the junction the uniform data is a fixed point of transport and
    // only lane exchange acts
    assert!(close(next.get(0, 0), 0.7 - dt * (1.5 * 0.1) * 0.7));
}

#[test]
fn fictive_lanes_stay_frozen_with_cuts_on_both_sides() {
    for name in ["s33", "s33_3to2_cut_vr2.json", "s34_4to2_vr1.5.json"] {
        let mut s = scenario(name);
        s.numerics.dx = 0.01;
        let mut sim = Simulation::new(&s).unwrap();
        let dt = sim.grid().dt;
        for _ in 0..200 {
            sim.advance(dt, &mut [], None).unwrap();
            assert_eq!(fictive_violation(sim.state(), sim.grid(), &s.topology), None, "{name}");
        }
    }
}

#[test]
fn halving_the_time_step_moves_the_solution_by_order_dx() {
    for name in ["s31", "s32", "s34"] {
        let mut s = scenario(name);
        s.numerics.dx = 0.01;
        let full = run(&s).unwrap();
        s.numerics.cfl_fraction = 0.5;
        let half = run(&s).unwrap();
        let scale = full.snapshots[0].state.max();
        let d = state_distance(full.final_state(), half.final_state(), full.grid.dx).unwrap();
        assert!(d <= 5.0 * full.grid.dx * scale, "{name}: {d}");
    }
}

#[test]
fn ordered_data_stay_ordered() {
    let upper = scenario("s31");
    let mut lower = upper.clone();
    for pieces in lower.initial.iter_mut() {
        for p in pieces.iter_mut() {
            if let PieceValue::Constant(v) = &mut p.value {
                *v *= 0.9;
            }
        }
    }
    lower.numerics.dx = 0.01;
    let mut upper = upper;
    upper.numerics.dx = 0.01;

    let mut a = Simulation::new(&lower).unwrap();
    let mut b = Simulation::new(&upper).unwrap();
    let dt = a.grid().dt;
    let mut worst: f64 = 0.0;
    while a.time() < 1.0 - 1e-12 {
        a.advance(dt, &mut [], None).unwrap();
        b.advance(dt, &mut [], None).unwrap();
        if let Some((_, _, excess)) = order_violation(a.state(), b.state()) {
            worst = worst.max(excess);
        }
    }
    assert!(worst <= 1e-12, "ordering broken by {worst:e}");
}

#[test]
fn empty_road_stays_empty() {
    let s = Scenario::new(
        "empty",
        LaneTopology::full(2).unwrap(),
        SideProfiles::uniform_linear(2, 1.5, 1.0).unwrap(),
        vec![vec![Piece::everywhere(0.0)]; 2],
        Numerics { dx: 0.05, ..Numerics::default() },
    )
    .unwrap();
    let r = run(&s).unwrap();
    assert!(r.final_state().values().iter().all(|&v| v == 0.0));
}
