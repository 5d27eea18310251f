//! Discrete quantities and inequalities satisfied by the scheme: active-lane
//! norm, total variation, the cell entropy inequality, time-continuity and
//! local BV bounds, and L1 comparison of paired runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{LaneTopology, Side, DENSITY_TOL};
use crate::numerics::{flux_unchecked, interface_kind, source_unchecked, StateField};
use crate::solver::{run, RunResult, Scenario, StepObserver, StepView};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Vehicles on active lanes: left cells of left-active lanes plus right
/// cells of right-active lanes.
pub fn active_l1_norm(state: &StateField, grid: &Grid, topology: &LaneTopology) -> f64 {
    let mut total = CompensatedSum::default();
    for side in Side::BOTH {
        for &j in topology.active(side) {
            let row = state.lane(j);
            for i in grid.side_cells(side) {
                total.add(row[i].abs());
            }
        }
    }
    grid.dx * total.value()
}

pub fn total_variation(row: &[f64]) -> f64 {
    row.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Left-hand side of the discrete entropy inequality for constant `c` on
/// one lane, cell by cell. `grid.dt` must be the step that produced `after`
/// from `before` via `half`. The scheme guarantees every entry is `<= 0`.
pub fn entropy_residual(
    grid: &Grid,
    scenario: &Scenario,
    before: &StateField,
    half: &StateField,
    after: &StateField,
    c: f64,
    lane: usize,
) -> Result<Vec<f64>> {
    if !(before.same_shape(half) && before.same_shape(after)) || before.cells() != grid.cells {
        return Err(Error::Shape("time levels of one step differ in shape".into()));
    }
    if lane >= before.lanes() {
        return Err(Error::Shape(format!("lane {lane} out of range")));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Domain { value: c });
    }
    let mut out = vec![0.0; grid.cells];
    lane_entropy_residual(grid, scenario, before, half, after, c, lane, |i, r| out[i] = r);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn lane_entropy_residual(
    grid: &Grid,
    scenario: &Scenario,
    before: &StateField,
    half: &StateField,
    after: &StateField,
    c: f64,
    lane: usize,
    mut emit: impl FnMut(usize, f64),
) {
    let profiles = &scenario.profiles;
    let topo = &scenario.topology;
    let k = grid.cells;
    let row = before.lane(lane);
    // entropy flux and constant-state flux at interface i
    let interface = |i: usize| {
        let kind = interface_kind(grid, i);
        let u = row[i.saturating_sub(1)];
        let w = row[i.min(k - 1)];
        let entropy = flux_unchecked(kind, lane, u.max(c), w.max(c), profiles)
            - flux_unchecked(kind, lane, u.min(c), w.min(c), profiles);
        (entropy, flux_unchecked(kind, lane, c, c, profiles))
    };
    let mut left = interface(0);
    for i in 0..k {
        let right = interface(i + 1);
        let side = grid.cell_side(i);
        let gain = if lane > 0 {
            source_unchecked(side, lane - 1, half.get(lane - 1, i), half.get(lane, i), topo, profiles)
        } else {
            0.0
        };
        let loss = if lane + 1 < before.lanes() {
            source_unchecked(side, lane, half.get(lane, i), half.get(lane + 1, i), topo, profiles)
        } else {
            0.0
        };
        let new = after.get(lane, i);
        let residual = (new - c).abs() - (row[i] - c).abs()
            + grid.lambda * (right.0 - left.0)
            - grid.lambda * (right.1 - left.1).abs()
            - grid.dt * sgn(new - c) * (gain - loss);
        emit(i, residual);
        left = right;
    }
}

/// Largest entropy residual over all lanes, cells and the given constants.
pub fn entropy_residual_max(
    grid: &Grid,
    scenario: &Scenario,
    before: &StateField,
    half: &StateField,
    after: &StateField,
    levels: &[f64],
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for &c in levels {
        for j in 0..before.lanes() {
            lane_entropy_residual(grid, scenario, before, half, after, c, j, |_, r| {
                worst = worst.max(r)
            });
        }
    }
    worst
}

/// The default sweep `c = 0, 0.1, ..., 1`.
pub fn default_entropy_levels() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyLocation {
    pub step: usize,
    pub lane: usize,
    pub cell: usize,
    pub c: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub levels: Vec<f64>,
    pub tolerance: f64,
    pub max_residual: f64,
    pub worst: Option<EntropyLocation>,
    /// Largest `|residual|` for each level, indexed like `levels`.
    pub max_abs_per_level: Vec<f64>,
    pub violations: usize,
    pub evaluated: usize,
}

impl EntropyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Sweeps the entropy inequality over every step of a run.
pub struct EntropyChecker {
    report: EntropyReport,
}

impl EntropyChecker {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(levels: Vec<f64>) -> Self {
        let n = levels.len();
        EntropyChecker {
            report: EntropyReport {
                levels,
                tolerance: Self::TOLERANCE,
                max_residual: f64::NEG_INFINITY,
                worst: None,
                max_abs_per_level: vec![0.0; n],
                violations: 0,
                evaluated: 0,
            },
        }
    }

    pub fn report(&self) -> &EntropyReport {
        &self.report
    }

    pub fn into_report(self) -> EntropyReport {
        self.report
    }
}

impl StepObserver for EntropyChecker {
    fn observe(&mut self, view: &StepView<'_>) {
        let report = &mut self.report;
        for (ci, &c) in report.levels.clone().iter().enumerate() {
            for j in 0..view.before.lanes() {
                lane_entropy_residual(
                    view.grid,
                    view.scenario,
                    view.before,
                    view.half,
                    view.after,
                    c,
                    j,
                    |i, r| {
                        report.evaluated += 1;
                        report.max_abs_per_level[ci] = report.max_abs_per_level[ci].max(r.abs());
                        if r > report.tolerance {
                            report.violations += 1;
                        }
                        if r > report.max_residual {
                            report.max_residual = r;
                            report.worst = Some(EntropyLocation {
                                step: view.after.step,
                                lane: j,
                                cell: i,
                                c,
                                residual: r,
                            });
                        }
                    },
                );
            }
        }
    }
}

/// A measured quantity against an explicit a-priori bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub quantity: String,
    /// Measured value at the step with the smallest margin.
    pub measured: f64,
    pub bound: f64,
    /// Smallest `bound - measured` over all checked steps.
    pub margin: f64,
    pub worst_step: Option<usize>,
    pub checked: usize,
    pub passed: bool,
}

impl BoundReport {
    fn new(quantity: impl Into<String>) -> Self {
        BoundReport {
            quantity: quantity.into(),
            measured: 0.0,
            bound: f64::INFINITY,
            margin: f64::INFINITY,
            worst_step: None,
            checked: 0,
            passed: true,
        }
    }

    fn record(&mut self, step: usize, measured: f64, bound: f64) {
        self.checked += 1;
        let margin = bound - measured;
        if margin < self.margin {
            self.margin = margin;
            self.measured = measured;
            self.bound = bound;
            self.worst_step = Some(step);
        }
        if !(measured <= bound) {
            self.passed = false;
        }
    }
}

/// Constants entering the time-continuity and BV estimates, computed from
/// the projected initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateConstants {
    pub v_max: f64,
    pub c1_norm: f64,
    pub lanes: usize,
    pub horizon: f64,
    /// Sum over lanes of the total variation of the projected initial data.
    pub initial_tv: f64,
    pub initial_norm: f64,
}

impl EstimateConstants {
    pub fn new(scenario: &Scenario, initial: &StateField, initial_norm: f64) -> Self {
        let vc = scenario.velocity_constants();
        EstimateConstants {
            v_max: vc.v_max,
            c1_norm: vc.c1_norm,
            lanes: scenario.topology.lanes(),
            horizon: scenario.numerics.t_end,
            initial_tv: (0..initial.lanes()).map(|j| total_variation(initial.lane(j))).sum(),
            initial_norm,
        }
    }

    pub fn from_run(scenario: &Scenario, run: &RunResult) -> Self {
        Self::new(scenario, &run.snapshots[0].state, run.initial_norm)
    }

    fn growth(&self) -> f64 {
        (4.0 * self.c1_norm * self.horizon).exp()
    }

    fn bracket(&self) -> f64 {
        self.c1_norm * self.initial_tv
            + self.lanes as f64 * self.v_max
            + 2.0 * self.v_max * self.initial_norm
    }

    /// Right-hand side of the L1 time-continuity estimate for a step `dt`.
    pub fn time_continuity_bound(&self, dt: f64) -> f64 {
        2.0 * self.growth() * dt * self.bracket()
    }

    /// Bound on the accumulated L1 time variation over `[0, T]`.
    pub fn accumulated_variation(&self) -> f64 {
        2.0 * self.horizon * self.growth() * self.bracket()
    }

    /// Right-hand side of the local BV estimate with buffer width `s`.
    pub fn bv_bound(&self, s: f64) -> f64 {
        let c = self.accumulated_variation();
        self.growth()
            * (self.initial_tv + 8.0 * self.lanes as f64 * self.v_max * self.horizon + 2.0 * c / s)
    }
}

/// Compares each step's L1 increment on active lanes with its bound.
pub fn time_continuity_check(scenario: &Scenario, run: &RunResult) -> BoundReport {
    let k = EstimateConstants::from_run(scenario, run);
    let mut report = BoundReport::new("dx * sum |rho^{n+1} - rho^n| (active lanes)");
    for d in &run.diagnostics {
        report.record(d.step, d.increment, k.time_continuity_bound(d.dt));
    }
    report
}

/// Cells with centre in `[a, b]`, after checking the interval stays clear of
/// the junction by more than `2 s` and `s > dx`.
pub fn bv_cells(grid: &Grid, a: f64, b: f64, s: f64) -> Result<Vec<usize>> {
    if !(a < b) {
        return Err(Error::Precondition(format!("empty interval [{a}, {b}]")));
    }
    if a <= 0.0 && 0.0 <= b {
        return Err(Error::Precondition(format!("interval [{a}, {b}] contains x = 0")));
    }
    if !(s > grid.dx) {
        return Err(Error::Precondition(format!("s = {s} must exceed dx = {}", grid.dx)));
    }
    if !(2.0 * s < a.abs().min(b.abs())) {
        return Err(Error::Precondition(format!(
            "2 s = {} must be below the distance from [{a}, {b}] to x = 0",
            2.0 * s
        )));
    }
    let cells: Vec<usize> = (0..grid.cells)
        .filter(|&i| {
            let x = grid.center(i);
            a <= x && x <= b
        })
        .collect();
    if cells.is_empty() || *cells.last().unwrap() + 1 >= grid.cells {
        return Err(Error::Precondition(format!(
            "interval [{a}, {b}] must lie strictly inside the window"
        )));
    }
    Ok(cells)
}

pub fn local_variation(state: &StateField, cells: &[usize]) -> f64 {
    (0..state.lanes())
        .map(|j| {
            let row = state.lane(j);
            cells.iter().map(|&i| (row[i + 1] - row[i]).abs()).sum::<f64>()
        })
        .sum()
}

/// Local BV check evaluated on every step of a run as it happens.
pub struct BvChecker {
    cells: Vec<usize>,
    bound: f64,
    report: BoundReport,
}

impl BvChecker {
    pub fn new(scenario: &Scenario, a: f64, b: f64, s: f64) -> Result<Self> {
        let grid = scenario.grid()?;
        let cells = bv_cells(&grid, a, b, s)?;
        let initial = crate::solver::project_initial(scenario, &grid)?;
        let norm = active_l1_norm(&initial, &grid, &scenario.topology);
        let bound = EstimateConstants::new(scenario, &initial, norm).bv_bound(s);
        Ok(BvChecker {
            cells,
            bound,
            report: BoundReport::new(format!("local total variation on [{a}, {b}], s = {s}")),
        })
    }

    pub fn into_report(self) -> BoundReport {
        self.report
    }
}

impl StepObserver for BvChecker {
    fn observe(&mut self, view: &StepView<'_>) {
        let tv = local_variation(view.after, &self.cells);
        self.report.record(view.after.step, tv, self.bound);
    }
}

/// Local BV check on the recorded snapshots of a finished run (`n >= 1`).
pub fn bv_check(scenario: &Scenario, run: &RunResult, a: f64, b: f64, s: f64) -> Result<BoundReport> {
    let cells = bv_cells(&run.grid, a, b, s)?;
    let bound = EstimateConstants::from_run(scenario, run).bv_bound(s);
    let mut report = BoundReport::new(format!("local total variation on [{a}, {b}], s = {s}"));
    for snap in run.snapshots.iter().filter(|s| s.state.step >= 1) {
        report.record(snap.state.step, local_variation(&snap.state, &cells), bound);
    }
    Ok(report)
}

/// `dx * sum |a - b|` over all lanes and cells.
pub fn state_distance(a: &StateField, b: &StateField, dx: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("states differ in shape".into()));
    }
    let sum: CompensatedSum = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).collect();
    Ok(dx * sum.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub time: f64,
    pub initial_distance: f64,
    pub distance: f64,
    pub slack: f64,
    pub passed: bool,
}

/// L1 distance between two runs at the snapshot nearest `t`, judged against
/// the initial distance plus `10 dx`.
pub fn l1_distance(a: &RunResult, b: &RunResult, t: f64) -> Result<StabilityReport> {
    if a.grid != b.grid {
        return Err(Error::Shape("runs use different grids".into()));
    }
    let dx = a.grid.dx;
    let initial_distance = state_distance(&a.snapshots[0].state, &b.snapshots[0].state, dx)?;
    let (sa, sb) = (a.snapshot_near(t), b.snapshot_near(t));
    if sa.time != sb.time {
        return Err(Error::Shape(format!(
            "no common snapshot near t = {t} ({} vs {})",
            sa.time, sb.time
        )));
    }
    let distance = state_distance(&sa.state, &sb.state, dx)?;
    let slack = 10.0 * dx;
    Ok(StabilityReport {
        time: sa.time,
        initial_distance,
        distance,
        slack,
        passed: distance <= initial_distance + slack,
    })
}

/// Checks that two scenarios differ at most in their initial data.
pub fn check_comparable(a: &Scenario, b: &Scenario) -> Result<()> {
    if a.topology != b.topology {
        return Err(Error::InvalidScenario("lane topologies differ".into()));
    }
    if a.profiles != b.profiles {
        return Err(Error::InvalidScenario("speed laws differ".into()));
    }
    if a.numerics != b.numerics {
        return Err(Error::InvalidScenario("numerical parameters differ".into()));
    }
    Ok(())
}

/// First cell where `lower <= upper` fails by more than the clamp tolerance.
pub fn order_violation(lower: &StateField, upper: &StateField) -> Option<(usize, usize, f64)> {
    for j in 0..lower.lanes() {
        for (i, (a, b)) in lower.lane(j).iter().zip(upper.lane(j)).enumerate() {
            if a - b > DENSITY_TOL {
                return Some((j, i, a - b));
            }
        }
    }
    None
}

/// First fictive entry that is not exactly 0 (left) or 1 (right).
pub fn fictive_violation(
    state: &StateField,
    grid: &Grid,
    topology: &LaneTopology,
) -> Option<(usize, usize, f64)> {
    for side in Side::BOTH {
        let frozen = side.fictive_density();
        for j in (0..topology.lanes()).filter(|&j| !topology.is_active(side, j)) {
            let row = state.lane(j);
            if let Some(i) = grid.side_cells(side).find(|&i| row[i] != frozen) {
                return Some((j, i, row[i]));
            }
        }
    }
    None
}

/// Watches every half and full step for fictive entries that moved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FictiveReport {
    pub checked: usize,
    /// `(step, lane, cell, value)` of the first violation.
    pub first_violation: Option<(usize, usize, usize, f64)>,
}

impl FictiveReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

#[derive(Debug, Default)]
pub struct FictiveChecker {
    report: FictiveReport,
}

impl FictiveChecker {
    pub fn into_report(self) -> FictiveReport {
        self.report
    }
}

impl StepObserver for FictiveChecker {
    fn observe(&mut self, view: &StepView<'_>) {
        self.report.checked += 1;
        if self.report.first_violation.is_some() {
            return;
        }
        for state in [view.half, view.after] {
            if let Some((j, i, v)) = fictive_violation(state, view.grid, &view.scenario.topology) {
                self.report.first_violation = Some((view.after.step, j, i, v));
                return;
            }
        }
    }
}

/// Conservation and bound checks replayed from a run's per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub initial_norm: f64,
    pub min_before_clamp: f64,
    pub max_before_clamp: f64,
    pub max_conservation_error: f64,
    pub conservation_tolerance: f64,
    pub entropy_max: Option<f64>,
    pub boundary_warnings: Vec<String>,
}

impl RunSummary {
    pub fn new(run: &RunResult) -> Self {
        let d = &run.diagnostics;
        let snap_min = run.snapshots.iter().map(|s| s.state.min()).fold(f64::INFINITY, f64::min);
        let snap_max = run.snapshots.iter().map(|s| s.state.max()).fold(f64::NEG_INFINITY, f64::max);
        RunSummary {
            steps: d.len(),
            initial_norm: run.initial_norm,
            min_before_clamp: d.iter().map(|s| s.min_before_clamp).fold(snap_min, f64::min),
            max_before_clamp: d.iter().map(|s| s.max_before_clamp).fold(snap_max, f64::max),
            max_conservation_error: d.iter().map(|s| s.conservation_error.abs()).fold(0.0, f64::max),
            conservation_tolerance: 1e-10 * (1.0 + run.initial_norm),
            entropy_max: d
                .iter()
                .filter_map(|s| s.entropy_max)
                .reduce(f64::max),
            boundary_warnings: run.boundary_warnings.clone(),
        }
    }

    pub fn bounds_ok(&self) -> bool {
        self.min_before_clamp >= -DENSITY_TOL && self.max_before_clamp <= 1.0 + DENSITY_TOL
    }

    pub fn conservation_ok(&self) -> bool {
        self.max_conservation_error <= self.conservation_tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub dx: f64,
    /// L1 distance to the next finer level, restricted to this grid.
    pub distance_to_finer: Option<f64>,
    /// `log2` of the ratio of this distance to the next one.
    pub observed_order: Option<f64>,
}

/// Averages pairs of fine cells onto the grid with twice the spacing.
pub fn restrict(fine: &StateField) -> Result<StateField> {
    if fine.cells() % 2 != 0 {
        return Err(Error::Shape("fine grid has an odd cell count".into()));
    }
    let rows = (0..fine.lanes())
        .map(|j| fine.lane(j).chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect())
        .collect();
    StateField::from_rows(rows)
}

/// Runs the scenario at `levels` resolutions, halving `dx` each time, and
/// measures the L1 distance between consecutive levels at the final time.
pub fn convergence_study(scenario: &Scenario, levels: usize) -> Result<Vec<ConvergenceLevel>> {
    if levels < 2 {
        return Err(Error::Precondition("a convergence study needs at least 2 levels".into()));
    }
    let scenarios: Vec<Scenario> = (0..levels)
        .map(|l| {
            let mut s = scenario.clone();
            s.numerics.dx = scenario.numerics.dx / f64::powi(2.0, l as i32);
            s.numerics.snapshot_times.clear();
            s.validate().map(|_| s)
        })
        .collect::<Result<_>>()?;
    let finals: Vec<Result<(Grid, StateField)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || run(s).map(|r| (r.grid, r.final_state().clone()))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let finals: Vec<(Grid, StateField)> = finals.into_iter().collect::<Result<_>>()?;

    let mut distances = Vec::with_capacity(levels - 1);
    for pair in finals.windows(2) {
        let (coarse_grid, coarse) = (&pair[0].0, &pair[0].1);
        let restricted = restrict(&pair[1].1)?;
        distances.push(state_distance(coarse, &restricted, coarse_grid.dx)?);
    }
    Ok(finals
        .iter()
        .enumerate()
        .map(|(l, (grid, _))| ConvergenceLevel {
            dx: grid.dx,
            distance_to_finer: distances.get(l).copied(),
            observed_order: match (distances.get(l), distances.get(l + 1)) {
                (Some(a), Some(b)) => Some((a / b).log2()),
                _ => None,
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SideProfiles;
    use crate::solver::{project_initial, step_detailed, Numerics, Piece};

    fn grid4() -> Grid {
        Grid::new(-2.0, 2.0, 0.5, 0.1).unwrap()
    }

    #[test]
    fn norm_examples() {
        let g = grid4();
        let topo = LaneTopology::full(2).unwrap();
        assert_eq!(active_l1_norm(&StateField::zeros(2, g.cells), &g, &topo), 0.0);
        let half = StateField::from_rows(vec![vec![0.5; g.cells]; 2]).unwrap();
        assert!((active_l1_norm(&half, &g, &topo) - 4.0).abs() < 1e-14);

        // lane 1 fictive on the right, holding ones there
        let topo = LaneTopology::new(2, [0, 1], [0], [], [0]).unwrap();
        let mut s = StateField::from_rows(vec![vec![0.5; g.cells]; 2]).unwrap();
        for i in g.side_cells(Side::Right) {
            s.set(1, i, 1.0);
        }
        // 0.5 * 4 on lane 0, 0.5 * 2 on the left of lane 1
        assert!((active_l1_norm(&s, &g, &topo) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&[0.3; 8]), 0.0);
        assert_eq!(total_variation(&[0.25, 0.25, 0.75, 0.75]), 0.5);
        let stairs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        assert!((total_variation(&stairs) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        assert!((s.value() - (1.0 + 1e-15)).abs() < 1e-18);
    }

    #[test]
    fn bv_interval_preconditions() {
        let g = Grid::new(-2.0, 2.0, 0.01, 0.1).unwrap();
        assert!(bv_cells(&g, -0.5, 0.5, 0.2).is_err());
        assert!(bv_cells(&g, 0.3, 1.5, 0.2).is_err());
        assert!(bv_cells(&g, 0.5, 1.5, 0.005).is_err());
        let cells = bv_cells(&g, 0.5, 1.5, 0.2).unwrap();
        assert_eq!(cells.len(), 100);
    }

    fn two_lane_scenario() -> Scenario {
        Scenario::new(
            "two",
            LaneTopology::full(2).unwrap(),
            SideProfiles::uniform_linear(2, 1.5, 1.0).unwrap(),
            vec![
                vec![Piece::constant(None, Some(-0.3), 0.2), Piece::constant(Some(-0.3), None, 0.9)],
                vec![Piece::everywhere(0.4)],
            ],
            Numerics {
                x_min: -1.0,
                x_max: 1.0,
                dx: 0.05,
                cfl_fraction: 1.0,
                t_end: 0.2,
                snapshot_times: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn entropy_residual_extreme_levels_vanish() {
        let s = two_lane_scenario();
        let g = s.grid().unwrap();
        let st = project_initial(&s, &g).unwrap();
        let out = step_detailed(&st, &g, &s).unwrap();
        for c in [0.0, 1.0] {
            for j in 0..2 {
                let r = entropy_residual(&g, &s, &st, &out.half, &out.next, c, j).unwrap();
                assert!(r.iter().all(|x| x.abs() < 1e-14), "c = {c}: {r:?}");
            }
        }
        for c in [0.1, 0.4, 0.55, 0.9] {
            let r = entropy_residual(&g, &s, &st, &out.half, &out.next, c, 0).unwrap();
            assert!(r.iter().all(|&x| x <= 1e-12));
        }
    }

    #[test]
    fn entropy_residual_shape_errors() {
        let s = two_lane_scenario();
        let g = s.grid().unwrap();
        let st = project_initial(&s, &g).unwrap();
        let small = StateField::zeros(2, 3);
        assert!(entropy_residual(&g, &s, &st, &small, &st, 0.5, 0).is_err());
        assert!(entropy_residual(&g, &s, &st, &st, &st, 0.5, 7).is_err());
    }

    #[test]
    fn restriction_averages_pairs() {
        let fine = StateField::from_rows(vec![vec![0.0, 1.0, 0.5, 0.5]]).unwrap();
        assert_eq!(restrict(&fine).unwrap().lane(0), &[0.5, 0.5]);
        let odd = StateField::from_rows(vec![vec![0.0, 1.0, 0.5]]).unwrap();
        assert!(restrict(&odd).is_err());
    }

    #[test]
    fn convergence_needs_two_levels() {
        assert!(convergence_study(&two_lane_scenario(), 1).is_err());
    }

    #[test]
    fn fictive_and_order_helpers() {
        let g = grid4();
        let topo = LaneTopology::new(2, [0], [0, 1], [0], []).unwrap();
        let mut s = StateField::from_rows(vec![vec![0.5; g.cells], vec![0.0; g.cells]]).unwrap();
        assert!(fictive_violation(&s, &g, &topo).is_none());
        s.set(1, 0, 1e-300);
        assert_eq!(fictive_violation(&s, &g, &topo), Some((1, 0, 1e-300)));

        let a = StateField::from_rows(vec![vec![0.2, 0.3]]).unwrap();
        let b = StateField::from_rows(vec![vec![0.2, 0.4]]).unwrap();
        assert!(order_violation(&a, &b).is_none());
        assert_eq!(order_violation(&b, &a).map(|v| v.1), Some(1));
    }
}
