//! Godunov transport with a junction interface, lane-change sources, and
//! the two half-steps of the splitting scheme.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{LaneTopology, Side, SideProfiles, DENSITY_TOL};

/// Densities of all lanes at one time level, stored lane by lane.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    lanes: usize,
    cells: usize,
    rho: Vec<f64>,
    /// Number of completed time steps.
    pub step: usize,
}

impl StateField {
    pub fn zeros(lanes: usize, cells: usize) -> Self {
        StateField {
            lanes,
            cells,
            rho: vec![0.0; lanes * cells],
            step: 0,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cells = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cells) {
            return Err(Error::Shape("lanes have different cell counts".into()));
        }
        Ok(StateField {
            lanes: rows.len(),
            cells,
            rho: rows.concat(),
            step: 0,
        })
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn lane(&self, j: usize) -> &[f64] {
        &self.rho[j * self.cells..(j + 1) * self.cells]
    }

    #[inline]
    pub fn lane_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.rho[j * self.cells..(j + 1) * self.cells]
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.rho[j * self.cells + i]
    }

    #[inline]
    pub fn set(&mut self, j: usize, i: usize, value: f64) {
        self.rho[j * self.cells + i] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn min(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.rho.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, other: &StateField) -> bool {
        self.lanes == other.lanes && self.cells == other.cells
    }

    /// Clamps values within rounding slack of `[0, 1]`; anything further out
    /// is reported.
    pub fn clamp_to_unit(&mut self, grid: &Grid) -> Result<()> {
        self.check_bounds(grid)?;
        for r in &mut self.rho {
            *r = r.clamp(0.0, 1.0);
        }
        Ok(())
    }

    pub(crate) fn check_bounds(&self, grid: &Grid) -> Result<()> {
        for j in 0..self.lanes {
            for (i, &r) in self.lane(j).iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::NonFinite {
                        step: self.step,
                        lane: j,
                        cell: i,
                    });
                }
                if r < -DENSITY_TOL || r > 1.0 + DENSITY_TOL {
                    return Err(Error::BoundViolation {
                        step: self.step,
                        lane: j,
                        cell: i,
                        side: grid.cell_side(i),
                        value: r,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Interfaces away from `x = 0` use one side's flux; the junction mixes both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterfaceKind {
    Interior(Side),
    Junction,
}

/// Kind of interface `i`, the left edge of cell `i` (`i = cells` is the
/// right boundary).
#[inline]
pub fn interface_kind(grid: &Grid, i: usize) -> InterfaceKind {
    use std::cmp::Ordering::*;
    match i.cmp(&grid.junction) {
        Less => InterfaceKind::Interior(Side::Left),
        Equal => InterfaceKind::Junction,
        Greater => InterfaceKind::Interior(Side::Right),
    }
}

#[inline]
pub(crate) fn flux_unchecked(
    kind: InterfaceKind,
    lane: usize,
    u: f64,
    w: f64,
    profiles: &SideProfiles,
) -> f64 {
    let (upstream, downstream) = match kind {
        InterfaceKind::Interior(side) => {
            let p = profiles.get(side, lane);
            (p, p)
        }
        InterfaceKind::Junction => (
            profiles.get(Side::Left, lane),
            profiles.get(Side::Right, lane),
        ),
    };
    let demand = upstream.flux(u.min(upstream.theta()));
    let supply = downstream.flux(w.max(downstream.theta()));
    demand.min(supply)
}

fn check_pair(u: f64, w: f64) -> Result<(f64, f64)> {
    for v in [u, w] {
        if !(v >= -DENSITY_TOL && v <= 1.0 + DENSITY_TOL) {
            return Err(Error::Domain { value: v });
        }
    }
    Ok((u.clamp(0.0, 1.0), w.clamp(0.0, 1.0)))
}

/// Godunov flux between a left state `u` and a right state `w` on lane `lane`.
pub fn godunov_flux(
    kind: InterfaceKind,
    lane: usize,
    u: f64,
    w: f64,
    profiles: &SideProfiles,
) -> Result<f64> {
    let (u, w) = check_pair(u, w)?;
    Ok(flux_unchecked(kind, lane, u, w, profiles))
}

#[inline]
pub(crate) fn source_unchecked(
    side: Side,
    pair: usize,
    u: f64,
    w: f64,
    topology: &LaneTopology,
    profiles: &SideProfiles,
) -> f64 {
    if pair + 1 >= topology.lanes() || topology.is_cut(side, pair) {
        return 0.0;
    }
    let gap = profiles.get(side, pair + 1).speed(w) - profiles.get(side, pair).speed(u);
    if gap >= 0.0 {
        gap * u
    } else {
        gap * w
    }
}

/// Net rate of vehicles moving from lane `pair` (density `u`) to lane
/// `pair + 1` (density `w`) on one side. Pairs past the last lane and cut
/// pairs exchange nothing.
pub fn source_rate(
    side: Side,
    pair: usize,
    u: f64,
    w: f64,
    topology: &LaneTopology,
    profiles: &SideProfiles,
) -> Result<f64> {
    let (u, w) = check_pair(u, w)?;
    Ok(source_unchecked(side, pair, u, w, topology, profiles))
}

pub(crate) fn check_cfl(grid: &Grid, profiles: &SideProfiles) -> Result<()> {
    let c1 = profiles.velocity_constants().c1_norm;
    let product = grid.lambda * c1;
    if product > 0.5 * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            lambda: grid.lambda,
            c1_norm: c1,
            product,
        });
    }
    Ok(())
}

/// Interface fluxes of one lane, `cells + 1` values; the outer ghost cells
/// copy the outermost cell.
pub(crate) fn lane_fluxes(
    grid: &Grid,
    lane: usize,
    rho: &[f64],
    profiles: &SideProfiles,
    out: &mut Vec<f64>,
) {
    let k = rho.len();
    out.clear();
    out.reserve(k + 1);
    for i in 0..=k {
        let u = rho[i.saturating_sub(1)];
        let w = rho[i.min(k - 1)];
        out.push(flux_unchecked(interface_kind(grid, i), lane, u, w, profiles));
    }
}

/// Fluxes through the left and right window edges of every lane.
pub fn boundary_fluxes(state: &StateField, profiles: &SideProfiles) -> Vec<(f64, f64)> {
    (0..state.lanes())
        .map(|j| {
            let row = state.lane(j);
            let first = row[0];
            let last = row[row.len() - 1];
            (
                flux_unchecked(InterfaceKind::Interior(Side::Left), j, first, first, profiles),
                flux_unchecked(InterfaceKind::Interior(Side::Right), j, last, last, profiles),
            )
        })
        .collect()
}

/// Conservative Godunov update of every lane over one time step.
pub fn transport_step(
    state: &StateField,
    grid: &Grid,
    profiles: &SideProfiles,
) -> Result<StateField> {
    if state.cells() != grid.cells || state.lanes() != profiles.lanes() {
        return Err(Error::Shape(format!(
            "state is {}x{}, expected {}x{}",
            state.lanes(),
            state.cells(),
            profiles.lanes(),
            grid.cells
        )));
    }
    check_cfl(grid, profiles)?;
    state.check_bounds(grid)?;

    let mut next = state.clone();
    let mut fluxes = Vec::new();
    for j in 0..state.lanes() {
        lane_fluxes(grid, j, state.lane(j), profiles, &mut fluxes);
        for (i, r) in next.lane_mut(j).iter_mut().enumerate() {
            *r -= grid.lambda * (fluxes[i + 1] - fluxes[i]);
        }
    }
    Ok(next)
}

/// Lane-change exchange within every cell, evaluated on the transported
/// state. Returns unclamped values and increments the step counter.
pub fn source_step(
    half: &StateField,
    grid: &Grid,
    topology: &LaneTopology,
    profiles: &SideProfiles,
    dt: f64,
) -> Result<StateField> {
    if half.cells() != grid.cells || half.lanes() != topology.lanes() {
        return Err(Error::Shape("state does not match grid and topology".into()));
    }
    let lanes = half.lanes();
    let mut next = half.clone();
    next.step += 1;
    if lanes > 1 {
        for i in 0..grid.cells {
            let side = grid.cell_side(i);
            let mut inflow = 0.0;
            for j in 0..lanes {
                let outflow = if j + 1 < lanes {
                    source_unchecked(side, j, half.get(j, i), half.get(j + 1, i), topology, profiles)
                } else {
                    0.0
                };
                next.set(j, i, half.get(j, i) + dt * inflow - dt * outflow);
                inflow = outflow;
            }
        }
    }
    next.check_bounds(grid)?;
    Ok(next)
}
