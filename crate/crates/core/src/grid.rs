use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{side_of_cell, Side};

/// Uniform mesh on `[x_min, x_max]` with `x = 0` on a cell interface.
///
/// Cells are stored left to right with index `i = 0..cells`. The junction
/// interface sits between cells `junction - 1` and `junction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub lambda: f64,
    pub dt: f64,
    pub cells: usize,
    pub junction: usize,
}

fn cell_count(length: f64, dx: f64, what: &str) -> Result<usize> {
    let ratio = length / dx;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-12 * ratio.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{what} = {length} is not an integer multiple of dx = {dx}"
        )));
    }
    Ok(n as usize)
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, dx: f64, lambda: f64) -> Result<Self> {
        if !(dx > 0.0 && dx < 1.0) {
            return Err(Error::InvalidGrid(format!("dx must lie in (0, 1), got {dx}")));
        }
        if !(x_min < 0.0 && x_max > 0.0) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "window [{x_min}, {x_max}] must contain x = 0 in its interior"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidGrid(format!("lambda must be positive, got {lambda}")));
        }
        let left = cell_count(-x_min, dx, "|x_min|")?;
        let right = cell_count(x_max, dx, "x_max")?;
        Ok(Grid {
            x_min,
            x_max,
            dx,
            lambda,
            dt: lambda * dx,
            cells: left + right,
            junction: left,
        })
    }

    /// Same mesh with a different time step.
    pub fn with_dt(&self, dt: f64) -> Grid {
        Grid {
            dt,
            lambda: dt / self.dx,
            ..*self
        }
    }

    /// Index relative to the junction: negative on the left.
    #[inline]
    pub fn centred_index(&self, i: usize) -> i64 {
        i as i64 - self.junction as i64
    }

    #[inline]
    pub fn cell_side(&self, i: usize) -> Side {
        side_of_cell(self.centred_index(i))
    }

    pub fn center(&self, i: usize) -> f64 {
        (self.centred_index(i) as f64 + 0.5) * self.dx
    }

    /// Position of interface `i`, the left edge of cell `i`.
    pub fn interface(&self, i: usize) -> f64 {
        self.centred_index(i) as f64 * self.dx
    }

    /// Cell range on one side of the junction.
    pub fn side_cells(&self, side: Side) -> std::ops::Range<usize> {
        match side {
            Side::Left => 0..self.junction,
            Side::Right => self.junction..self.cells,
        }
    }

    pub fn left_cells(&self) -> usize {
        self.junction
    }

    pub fn right_cells(&self) -> usize {
        self.cells - self.junction
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window_pins_junction() {
        let g = Grid::new(-2.0, 2.0, 1.0 / 400.0, 0.125).unwrap();
        assert_eq!(g.cells, 1600);
        assert_eq!(g.junction, 800);
        assert_eq!(g.interface(800), 0.0);
        assert_eq!(g.cell_side(799), Side::Left);
        assert_eq!(g.cell_side(800), Side::Right);
        assert!((g.center(799) + 0.5 / 400.0).abs() < 1e-15);
        assert_eq!(g.dt, 0.125 * (1.0 / 400.0));
    }

    #[test]
    fn rejects_misaligned_window() {
        assert!(Grid::new(-1.0, 1.0, 0.3, 0.1).is_err());
        assert!(Grid::new(0.5, 1.0, 0.1, 0.1).is_err());
        assert!(Grid::new(-2.0, 2.0, 1.0, 0.1).is_err());
        assert!(Grid::new(-2.0, 2.0, 0.01, -0.1).is_err());
    }

    #[test]
    fn asymmetric_window() {
        let g = Grid::new(-1.0, 3.0, 0.5, 0.1).unwrap();
        assert_eq!((g.cells, g.junction), (8, 2));
        assert_eq!(g.side_cells(Side::Right), 2..8);
    }
}
