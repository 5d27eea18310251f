//! Scenario setup, initial-data projection and the time loop.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{active_l1_norm, entropy_residual_max, total_variation, CompensatedSum};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{LaneTopology, Side, SideProfiles, VelocityConstants};
use crate::numerics::{boundary_fluxes, source_step, transport_step, StateField};

/// Cells inspected at each window edge by the non-interference check.
pub const EDGE_CELLS: usize = 5;
const EDGE_TV_TOL: f64 = 1e-8;

/// Density on one piece of the initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PieceValue {
    Constant(f64),
    /// Linear ramp from the first value at `from` to the second at `to`.
    Linear(f64, f64),
}

/// Initial density on `[from, to]`; a missing bound extends to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub to: Option<f64>,
    pub value: PieceValue,
}

impl Piece {
    pub fn constant(from: Option<f64>, to: Option<f64>, value: f64) -> Self {
        Piece {
            from,
            to,
            value: PieceValue::Constant(value),
        }
    }

    pub fn everywhere(value: f64) -> Self {
        Self::constant(None, None, value)
    }

    fn lo(&self) -> f64 {
        self.from.unwrap_or(f64::NEG_INFINITY)
    }

    fn hi(&self) -> f64 {
        self.to.unwrap_or(f64::INFINITY)
    }

    /// Mean density over `[a, b]`, assumed inside the piece.
    fn mean_over(&self, a: f64, b: f64) -> f64 {
        match self.value {
            PieceValue::Constant(v) => v,
            PieceValue::Linear(l, r) => {
                let (from, to) = (self.lo(), self.hi());
                let mid = 0.5 * (a + b);
                l + (r - l) * (mid - from) / (to - from)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub cfl_fraction: f64,
    pub t_end: f64,
    /// Extra output times in `(0, t_end)`; `0` and `t_end` are always recorded.
    pub snapshot_times: Vec<f64>,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            x_min: -2.0,
            x_max: 2.0,
            dx: 1.0 / 400.0,
            cfl_fraction: 1.0,
            t_end: 1.0,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub topology: LaneTopology,
    pub profiles: SideProfiles,
    /// Pieces per lane; only the active part of each lane needs covering.
    pub initial: Vec<Vec<Piece>>,
    pub numerics: Numerics,
}

pub fn velocity_constants(profiles: &SideProfiles) -> VelocityConstants {
    profiles.velocity_constants()
}

/// Largest `lambda = dt / dx` allowed by `lambda * V <= 1/2`.
pub fn max_lambda(profiles: &SideProfiles) -> f64 {
    1.0 / (2.0 * profiles.velocity_constants().c1_norm)
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        topology: LaneTopology,
        profiles: SideProfiles,
        initial: Vec<Vec<Piece>>,
        numerics: Numerics,
    ) -> Result<Self> {
        let scenario = Scenario {
            name: name.into(),
            topology,
            profiles,
            initial,
            numerics,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.topology.lanes();
        if self.profiles.lanes() != m {
            return Err(Error::InvalidScenario(format!(
                "{} speed laws per side for {m} lanes",
                self.profiles.lanes()
            )));
        }
        self.validate_numerics()?;
        self.validate_initial()
    }

    pub(crate) fn validate_numerics(&self) -> Result<()> {
        let n = &self.numerics;
        if !(n.t_end >= 0.0 && n.t_end.is_finite()) {
            return Err(Error::InvalidScenario(format!("t_end must be >= 0, got {}", n.t_end)));
        }
        if let Some(t) = n.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= n.t_end)) {
            return Err(Error::InvalidScenario(format!(
                "snapshot time {t} outside [0, {}]",
                n.t_end
            )));
        }
        self.grid().map(|_| ())
    }

    pub(crate) fn validate_initial(&self) -> Result<()> {
        let m = self.topology.lanes();
        if self.initial.len() != m {
            return Err(Error::InvalidScenario(format!(
                "initial data given for {} lanes, expected {m}",
                self.initial.len()
            )));
        }
        for (j, pieces) in self.initial.iter().enumerate() {
            self.validate_lane(j, pieces)?;
        }
        Ok(())
    }

    fn validate_lane(&self, j: usize, pieces: &[Piece]) -> Result<()> {
        let lane = j + 1;
        for p in pieces {
            let (a, b) = (p.lo(), p.hi());
            if !(a < b) || a.is_nan() || b.is_nan() {
                return Err(Error::InvalidScenario(format!(
                    "lane {lane}: empty or reversed piece [{a}, {b}]"
                )));
            }
            let values = match p.value {
                PieceValue::Constant(v) => [v, v],
                PieceValue::Linear(l, r) => {
                    if !(a.is_finite() && b.is_finite()) {
                        return Err(Error::InvalidScenario(format!(
                            "lane {lane}: a linear piece needs finite bounds"
                        )));
                    }
                    [l, r]
                }
            };
            if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
                return Err(Error::InvalidScenario(format!(
                    "lane {lane}: density {v} outside [0, 1]"
                )));
            }
        }
        let mut sorted: Vec<&Piece> = pieces.iter().collect();
        sorted.sort_by(|p, q| p.lo().total_cmp(&q.lo()));
        for w in sorted.windows(2) {
            if w[0].hi() > w[1].lo() {
                return Err(Error::InvalidScenario(format!(
                    "lane {lane}: pieces overlap on [{}, {}]",
                    w[1].lo(),
                    w[0].hi()
                )));
            }
        }
        let n = &self.numerics;
        for side in Side::BOTH {
            let (lo, hi) = match side {
                Side::Left => (n.x_min, 0.0),
                Side::Right => (0.0, n.x_max),
            };
            if self.topology.is_active(side, j) {
                let mut reached = lo;
                for p in &sorted {
                    if p.hi() <= reached || p.lo() >= hi {
                        continue;
                    }
                    if p.lo() > reached {
                        break;
                    }
                    reached = p.hi();
                }
                if reached < hi {
                    return Err(Error::InvalidScenario(format!(
                        "lane {lane}: initial data leave a gap starting at x = {reached}"
                    )));
                }
            } else {
                let frozen = side.fictive_density();
                for p in &sorted {
                    let overlaps = p.hi() > lo && p.lo() < hi;
                    if overlaps && p.value != PieceValue::Constant(frozen) {
                        return Err(Error::InvalidScenario(format!(
                            "lane {lane} is fictive on the {side:?} side; its density there is fixed to {frozen}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn velocity_constants(&self) -> VelocityConstants {
        self.profiles.velocity_constants()
    }

    pub fn lambda(&self) -> Result<f64> {
        let frac = self.numerics.cfl_fraction;
        let c1 = self.profiles.velocity_constants().c1_norm;
        if !(frac > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "cfl_fraction must be positive, got {frac}"
            )));
        }
        let lambda = frac * max_lambda(&self.profiles);
        if frac > 1.0 {
            return Err(Error::Cfl {
                lambda,
                c1_norm: c1,
                product: lambda * c1,
            });
        }
        Ok(lambda)
    }

    pub fn grid(&self) -> Result<Grid> {
        let n = &self.numerics;
        Grid::new(n.x_min, n.x_max, n.dx, self.lambda()?)
    }

    /// Sorted output times, always starting at 0 and ending at `t_end`.
    pub fn output_times(&self) -> Vec<f64> {
        let mut times = vec![0.0, self.numerics.t_end];
        times.extend(self.numerics.snapshot_times.iter().copied());
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

/// Exact cell averages of the piecewise data, with fictive parts frozen.
pub fn project_initial(scenario: &Scenario, grid: &Grid) -> Result<StateField> {
    let m = scenario.topology.lanes();
    let mut state = StateField::zeros(m, grid.cells);
    for j in 0..m {
        let pieces = &scenario.initial[j];
        for i in 0..grid.cells {
            let side = grid.cell_side(i);
            if !scenario.topology.is_active(side, j) {
                state.set(j, i, side.fictive_density());
                continue;
            }
            let (a, b) = (grid.interface(i), grid.interface(i + 1));
            let covering: Vec<(f64, f64)> = pieces
                .iter()
                .filter_map(|p| {
                    let (c, d) = (a.max(p.lo()), b.min(p.hi()));
                    (d > c).then(|| (d - c, p.mean_over(c, d)))
                })
                .collect();
            let value = match covering.as_slice() {
                [] => {
                    return Err(Error::InvalidScenario(format!(
                        "lane {}: no initial data on cell [{a}, {b}]",
                        j + 1
                    )))
                }
                [(_, v)] => *v,
                many => {
                    let len: f64 = many.iter().map(|(l, _)| l).sum();
                    many.iter().map(|(l, v)| l * v).sum::<f64>() / len
                }
            };
            state.set(j, i, value);
        }
    }
    Ok(state)
}

/// One full time step: transport, then lane exchange, then clamping.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub half: StateField,
    pub next: StateField,
    pub min_before_clamp: f64,
    pub max_before_clamp: f64,
}

pub fn step_detailed(state: &StateField, grid: &Grid, scenario: &Scenario) -> Result<StepOutcome> {
    let mut half = transport_step(state, grid, &scenario.profiles)?;
    half.step = state.step;
    let mut next = source_step(&half, grid, &scenario.topology, &scenario.profiles, grid.dt)?;
    let min_before_clamp = half.min().min(next.min());
    let max_before_clamp = half.max().max(next.max());
    next.clamp_to_unit(grid)?;
    Ok(StepOutcome {
        half,
        next,
        min_before_clamp,
        max_before_clamp,
    })
}

pub fn step(state: &StateField, grid: &Grid, scenario: &Scenario) -> Result<StateField> {
    step_detailed(state, grid, scenario).map(|o| o.next)
}

/// Everything an observer sees about one completed step. `grid.dt` is the
/// step actually taken, which may be shorter than the nominal one.
pub struct StepView<'a> {
    pub scenario: &'a Scenario,
    pub grid: &'a Grid,
    pub time: f64,
    pub before: &'a StateField,
    pub half: &'a StateField,
    pub after: &'a StateField,
}

pub trait StepObserver {
    fn observe(&mut self, view: &StepView<'_>);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub active_norm: f64,
    /// Net vehicles that entered the window through its two edges so far.
    pub boundary_inflow: f64,
    /// `active_norm - (initial norm + boundary_inflow)`.
    pub conservation_error: f64,
    pub min_before_clamp: f64,
    pub max_before_clamp: f64,
    /// `dx * sum |rho^{n+1} - rho^n|` over active lanes.
    pub increment: f64,
    pub entropy_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub state: StateField,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub grid: Grid,
    pub constants: VelocityConstants,
    pub initial_norm: f64,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Edges whose total variation moved during the run.
    pub boundary_warnings: Vec<String>,
}

impl RunResult {
    pub fn final_state(&self) -> &StateField {
        &self.snapshots.last().expect("a run records at least one snapshot").state
    }

    /// Snapshot whose time is closest to `t`.
    pub fn snapshot_near(&self, t: f64) -> &Snapshot {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("a run records at least one snapshot")
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Constants `c` at which to evaluate the discrete entropy inequality
    /// every step; `None` skips the check.
    pub entropy_levels: Option<Vec<f64>>,
}

/// Steps a scenario forward, tracking the vehicle budget through the window
/// edges.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    grid: Grid,
    state: StateField,
    time: f64,
    initial_norm: f64,
    inflow: CompensatedSum,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        let grid = scenario.grid()?;
        let state = project_initial(scenario, &grid)?;
        Ok(Self::from_state(scenario, grid, state))
    }

    /// Starts from an arbitrary state; the state is only checked when the
    /// first step runs.
    pub fn from_state(scenario: &'a Scenario, grid: Grid, state: StateField) -> Self {
        let initial_norm = active_l1_norm(&state, &grid, &scenario.topology);
        Simulation {
            scenario,
            grid,
            state,
            time: 0.0,
            initial_norm,
            inflow: CompensatedSum::default(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn state(&self) -> &StateField {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn initial_norm(&self) -> f64 {
        self.initial_norm
    }

    /// Advances by `dt` (at most the nominal step), reporting to observers.
    pub fn advance(
        &mut self,
        dt: f64,
        observers: &mut [&mut dyn StepObserver],
        entropy_levels: Option<&[f64]>,
    ) -> Result<StepDiagnostics> {
        let grid = if dt == self.grid.dt {
            self.grid
        } else {
            self.grid.with_dt(dt)
        };
        let topo = &self.scenario.topology;
        let outcome = step_detailed(&self.state, &grid, self.scenario)?;

        let edges = boundary_fluxes(&self.state, &self.scenario.profiles);
        for (j, (inflow, outflow)) in edges.into_iter().enumerate() {
            if topo.is_active(Side::Left, j) {
                self.inflow.add(dt * inflow);
            }
            if topo.is_active(Side::Right, j) {
                self.inflow.add(-dt * outflow);
            }
        }
        let time = self.time + dt;

        let mut increment = CompensatedSum::default();
        for side in Side::BOTH {
            for &j in topo.active(side) {
                let (old, new) = (self.state.lane(j), outcome.next.lane(j));
                for i in grid.side_cells(side) {
                    increment.add((new[i] - old[i]).abs());
                }
            }
        }
        let entropy_max = entropy_levels.map(|levels| {
            entropy_residual_max(&grid, self.scenario, &self.state, &outcome.half, &outcome.next, levels)
        });

        let view = StepView {
            scenario: self.scenario,
            grid: &grid,
            time,
            before: &self.state,
            half: &outcome.half,
            after: &outcome.next,
        };
        for obs in observers.iter_mut() {
            obs.observe(&view);
        }

        let active_norm = active_l1_norm(&outcome.next, &grid, topo);
        let boundary_inflow = self.inflow.value();
        let record = StepDiagnostics {
            step: outcome.next.step,
            time,
            dt,
            active_norm,
            boundary_inflow,
            conservation_error: active_norm - (self.initial_norm + boundary_inflow),
            min_before_clamp: outcome.min_before_clamp,
            max_before_clamp: outcome.max_before_clamp,
            increment: grid.dx * increment.value(),
            entropy_max,
        };
        self.state = outcome.next;
        self.time = time;
        Ok(record)
    }

    /// Runs to `target`, shortening the final step to land on it exactly.
    pub fn advance_to(
        &mut self,
        target: f64,
        observers: &mut [&mut dyn StepObserver],
        entropy_levels: Option<&[f64]>,
        log: &mut Vec<StepDiagnostics>,
    ) -> Result<()> {
        while self.time < target {
            let remaining = target - self.time;
            // accumulated rounding in `time` must not leave a sliver step
            let landing = remaining <= self.grid.dt * (1.0 + 1e-9);
            let dt = remaining.min(self.grid.dt);
            let record = self.advance(dt, observers, entropy_levels)?;
            if landing {
                self.time = target;
            }
            log.push(StepDiagnostics {
                time: self.time,
                ..record
            });
        }
        Ok(())
    }
}

fn edge_variation(state: &StateField) -> Vec<(usize, f64, f64)> {
    let k = state.cells();
    let n = EDGE_CELLS.min(k);
    (0..state.lanes())
        .map(|j| {
            let row = state.lane(j);
            (j, total_variation(&row[..n]), total_variation(&row[k - n..]))
        })
        .collect()
}

pub fn run(scenario: &Scenario) -> Result<RunResult> {
    run_with(scenario, &RunOptions::default(), &mut [])
}

pub fn run_with(
    scenario: &Scenario,
    options: &RunOptions,
    observers: &mut [&mut dyn StepObserver],
) -> Result<RunResult> {
    let sim = Simulation::new(scenario)?;
    run_simulation(sim, options, observers)
}

/// Drives an already initialised simulation through the scenario's output
/// times.
pub fn run_simulation(
    mut sim: Simulation<'_>,
    options: &RunOptions,
    observers: &mut [&mut dyn StepObserver],
) -> Result<RunResult> {
    let scenario = sim.scenario;
    let start_edges = edge_variation(sim.state());
    let mut snapshots = vec![Snapshot {
        time: 0.0,
        state: sim.state().clone(),
    }];
    let mut diagnostics = Vec::new();
    let levels = options.entropy_levels.as_deref();
    for target in scenario.output_times().into_iter().filter(|&t| t > 0.0) {
        sim.advance_to(target, observers, levels, &mut diagnostics)?;
        snapshots.push(Snapshot {
            time: target,
            state: sim.state().clone(),
        });
    }

    let mut boundary_warnings = Vec::new();
    for ((j, l0, r0), (_, l1, r1)) in start_edges.into_iter().zip(edge_variation(sim.state())) {
        for (edge, before, after) in [("left", l0, l1), ("right", r0, r1)] {
            if (after - before).abs() >= EDGE_TV_TOL {
                boundary_warnings.push(format!(
                    "lane {}: total variation at the {edge} window edge changed from {before:.3e} to {after:.3e}",
                    j + 1
                ));
            }
        }
    }

    Ok(RunResult {
        grid: sim.grid,
        constants: scenario.velocity_constants(),
        initial_norm: sim.initial_norm,
        snapshots,
        diagnostics,
        boundary_warnings,
    })
}
