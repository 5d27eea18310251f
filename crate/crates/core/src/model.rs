//! Speed laws, flux profiles and lane topology.
//!
//! Lanes and lane pairs are indexed from zero. Pair `p` couples lane `p`
//! with lane `p + 1`; a cut pair carries no lane-change flow.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on densities before they count as leaving `[0, 1]`.
pub const DENSITY_TOL: f64 = 1e-12;

/// Number of sample intervals used to validate non-analytic laws.
pub const VALIDATION_SAMPLES: usize = 10_000;

const GOLDEN_TOL: f64 = 1e-12;

/// Side of the junction at `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// Density frozen on fictive lanes of this side: empty road on the left,
    /// fully jammed road on the right.
    pub fn fictive_density(self) -> f64 {
        match self {
            Side::Left => 0.0,
            Side::Right => 1.0,
        }
    }
}

/// Side of a cell given its index in the junction-centred numbering, where
/// cell `k` spans `[k dx, (k + 1) dx]` and `x = 0` is the left interface of
/// cell 0.
pub fn side_of_cell(k: i64) -> Side {
    if k <= -1 {
        Side::Left
    } else {
        Side::Right
    }
}

fn check_density(u: f64) -> Result<f64> {
    if !(u >= -DENSITY_TOL && u <= 1.0 + DENSITY_TOL) {
        return Err(Error::Domain { value: u });
    }
    Ok(u.clamp(0.0, 1.0))
}

/// User supplied speed law together with a bound on `|v'|`.
#[derive(Clone)]
pub struct CustomLaw {
    speed: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative_bound: f64,
}

impl fmt::Debug for CustomLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLaw")
            .field("derivative_bound", &self.derivative_bound)
            .finish_non_exhaustive()
    }
}

/// Velocity as a function of the own-lane density.
#[derive(Debug, Clone)]
pub enum SpeedLaw {
    /// `v(u) = v_max (1 - u)`.
    Linear { v_max: f64 },
    /// Piecewise-linear interpolation through `(u, v)` nodes spanning `[0, 1]`.
    Tabulated { points: Vec<(f64, f64)> },
    Custom(CustomLaw),
}

impl PartialEq for SpeedLaw {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (SpeedLaw::Linear { v_max: a }, SpeedLaw::Linear { v_max: b }) => a == b,
            (SpeedLaw::Tabulated { points: a }, SpeedLaw::Tabulated { points: b }) => a == b,
            (SpeedLaw::Custom(a), SpeedLaw::Custom(b)) => {
                Arc::ptr_eq(&a.speed, &b.speed) && a.derivative_bound == b.derivative_bound
            }
            _ => false,
        }
    }
}

impl SpeedLaw {
    pub fn linear(v_max: f64) -> Result<Self> {
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(Error::InvalidLaw(format!(
                "free-flow speed must be positive and finite, got {v_max}"
            )));
        }
        Ok(SpeedLaw::Linear { v_max })
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidLaw("table needs at least two nodes".into()));
        }
        let (u0, v0) = points[0];
        let (u1, v1) = points[points.len() - 1];
        if u0 != 0.0 || u1 != 1.0 {
            return Err(Error::InvalidLaw("table must span u = 0 to u = 1".into()));
        }
        if !(v0 > 0.0) || v1 != 0.0 {
            return Err(Error::InvalidLaw("table needs v(0) > 0 and v(1) = 0".into()));
        }
        for w in points.windows(2) {
            let ((ua, va), (ub, vb)) = (w[0], w[1]);
            if !(ub > ua) {
                return Err(Error::InvalidLaw("table densities must increase".into()));
            }
            if !(vb < va) || !va.is_finite() || !vb.is_finite() {
                return Err(Error::InvalidLaw("table speeds must strictly decrease".into()));
            }
        }
        Ok(SpeedLaw::Tabulated { points })
    }

    /// Wraps an arbitrary map; it is sampled on a fine grid to check
    /// monotonicity, `v(1) = 0`, `v(0) > 0` and the stated derivative bound.
    pub fn custom<F>(speed: F, derivative_bound: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(derivative_bound.is_finite() && derivative_bound >= 0.0) {
            return Err(Error::InvalidLaw(
                "derivative bound must be nonnegative and finite".into(),
            ));
        }
        let h = 1.0 / VALIDATION_SAMPLES as f64;
        let mut prev = speed(0.0);
        if !(prev.is_finite() && prev > 0.0) {
            return Err(Error::InvalidLaw(format!("v(0) must be positive, got {prev}")));
        }
        for i in 1..=VALIDATION_SAMPLES {
            let u = if i == VALIDATION_SAMPLES { 1.0 } else { i as f64 * h };
            let v = speed(u);
            if !v.is_finite() {
                return Err(Error::InvalidLaw(format!("v({u}) is not finite")));
            }
            if !(v < prev) {
                return Err(Error::InvalidLaw(format!(
                    "speed law is not strictly decreasing near u = {u}"
                )));
            }
            let slope = (prev - v) / h;
            if slope > derivative_bound * (1.0 + 1e-9) + 1e-9 {
                return Err(Error::InvalidLaw(format!(
                    "sampled |v'| = {slope} exceeds the stated bound {derivative_bound}"
                )));
            }
            prev = v;
        }
        if prev.abs() > DENSITY_TOL {
            return Err(Error::InvalidLaw(format!("v(1) must vanish, got {prev}")));
        }
        Ok(SpeedLaw::Custom(CustomLaw {
            speed: Arc::new(speed),
            derivative_bound,
        }))
    }

    /// Evaluates `v(u)` without range checks.
    #[inline]
    pub fn speed(&self, u: f64) -> f64 {
        match self {
            SpeedLaw::Linear { v_max } => v_max * (1.0 - u),
            SpeedLaw::Tabulated { points } => interpolate(points, u),
            SpeedLaw::Custom(c) => {
                if u >= 1.0 {
                    0.0
                } else {
                    (c.speed)(u)
                }
            }
        }
    }

    /// `sup |v|` on `[0, 1]`, attained at `u = 0` for a decreasing law.
    pub fn sup_speed(&self) -> f64 {
        self.speed(0.0)
    }

    /// `sup |v'|` on `[0, 1]`.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            SpeedLaw::Linear { v_max } => *v_max,
            SpeedLaw::Tabulated { points } => points
                .windows(2)
                .map(|w| (w[0].1 - w[1].1) / (w[1].0 - w[0].0))
                .fold(0.0, f64::max),
            SpeedLaw::Custom(c) => c.derivative_bound,
        }
    }
}

fn interpolate(points: &[(f64, f64)], u: f64) -> f64 {
    if u <= 0.0 {
        return points[0].1;
    }
    if u >= 1.0 {
        return points[points.len() - 1].1;
    }
    let idx = points.partition_point(|p| p.0 <= u);
    let (ua, va) = points[idx - 1];
    let (ub, vb) = points[idx];
    va + (vb - va) * (u - ua) / (ub - ua)
}

/// Checked speed evaluation.
pub fn eval_speed(law: &SpeedLaw, u: f64) -> Result<f64> {
    Ok(law.speed(check_density(u)?))
}

/// Flux `f(u) = u v(u)` with its critical density and peak value.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxProfile {
    law: SpeedLaw,
    theta: f64,
    f_max: f64,
}

impl FluxProfile {
    pub fn new(law: SpeedLaw) -> Result<Self> {
        let theta = match law {
            SpeedLaw::Linear { .. } => 0.5,
            _ => locate_peak(&law)?,
        };
        let f_max = theta * law.speed(theta);
        Ok(FluxProfile { law, theta, f_max })
    }

    pub fn linear(v_max: f64) -> Result<Self> {
        Self::new(SpeedLaw::linear(v_max)?)
    }

    pub fn law(&self) -> &SpeedLaw {
        &self.law
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    #[inline]
    pub fn speed(&self, u: f64) -> f64 {
        self.law.speed(u)
    }

    /// Evaluates `u v(u)` without range checks.
    #[inline]
    pub fn flux(&self, u: f64) -> f64 {
        u * self.law.speed(u)
    }
}

pub fn eval_flux(profile: &FluxProfile, u: f64) -> Result<f64> {
    Ok(profile.flux(check_density(u)?))
}

pub fn critical_density(profile: &FluxProfile) -> f64 {
    profile.theta
}

/// Samples the flux, checks it rises then falls, and refines the sampled
/// peak by golden-section search.
fn locate_peak(law: &SpeedLaw) -> Result<f64> {
    let n = VALIDATION_SAMPLES;
    let flux = |u: f64| u * law.speed(u);
    let samples: Vec<f64> = (0..=n).map(|i| flux(i as f64 / n as f64)).collect();
    let (peak, f_peak) = samples
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, f)| if f > best.1 { (i, f) } else { best });
    let slack = 1e-14 * f_peak.abs().max(1.0);
    for i in 0..n {
        let (a, b) = (samples[i], samples[i + 1]);
        let bad = if i < peak { b < a - slack } else { b > a + slack };
        if bad {
            return Err(Error::NotUnimodal(format!(
                "flux changes monotonicity away from its maximum near u = {}",
                i as f64 / n as f64
            )));
        }
    }
    let mut lo = peak.saturating_sub(1) as f64 / n as f64;
    let mut hi = (peak + 1).min(n) as f64 / n as f64;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (flux(c), flux(d));
    while hi - lo > GOLDEN_TOL {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = flux(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = flux(d);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One flux profile per lane on each side of the junction.
#[derive(Debug, Clone, PartialEq)]
pub struct SideProfiles {
    left: Vec<FluxProfile>,
    right: Vec<FluxProfile>,
}

/// `V_max = max sup |v|` and the C1 norm `max sup |v| + max sup |v'|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityConstants {
    pub v_max: f64,
    pub c1_norm: f64,
}

impl SideProfiles {
    pub fn new(left: Vec<FluxProfile>, right: Vec<FluxProfile>) -> Result<Self> {
        if left.is_empty() || left.len() != right.len() {
            return Err(Error::InvalidScenario(format!(
                "need the same positive number of profiles on both sides, got {} and {}",
                left.len(),
                right.len()
            )));
        }
        Ok(SideProfiles { left, right })
    }

    /// Same linear law on every lane of a side.
    pub fn uniform_linear(lanes: usize, v_left: f64, v_right: f64) -> Result<Self> {
        let left = FluxProfile::linear(v_left)?;
        let right = FluxProfile::linear(v_right)?;
        Self::new(vec![left; lanes], vec![right; lanes])
    }

    pub fn lanes(&self) -> usize {
        self.left.len()
    }

    #[inline]
    pub fn get(&self, side: Side, lane: usize) -> &FluxProfile {
        match side {
            Side::Left => &self.left[lane],
            Side::Right => &self.right[lane],
        }
    }

    pub fn side(&self, side: Side) -> &[FluxProfile] {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn velocity_constants(&self) -> VelocityConstants {
        let all = self.left.iter().chain(&self.right);
        let v_max = all.clone().map(|p| p.law.sup_speed()).fold(0.0, f64::max);
        let dv = all.map(|p| p.law.derivative_bound()).fold(0.0, f64::max);
        VelocityConstants {
            v_max,
            c1_norm: v_max + dv,
        }
    }
}

/// Lane count, active lanes on each side, and cut lane pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneTopology {
    lanes: usize,
    active_left: BTreeSet<usize>,
    active_right: BTreeSet<usize>,
    cut_left: BTreeSet<usize>,
    cut_right: BTreeSet<usize>,
}

impl LaneTopology {
    pub fn new(
        lanes: usize,
        active_left: impl IntoIterator<Item = usize>,
        active_right: impl IntoIterator<Item = usize>,
        cut_left: impl IntoIterator<Item = usize>,
        cut_right: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let topo = LaneTopology {
            lanes,
            active_left: active_left.into_iter().collect(),
            active_right: active_right.into_iter().collect(),
            cut_left: cut_left.into_iter().collect(),
            cut_right: cut_right.into_iter().collect(),
        };
        topo.validate()?;
        Ok(topo)
    }

    /// All lanes active on both sides, no cuts.
    pub fn full(lanes: usize) -> Result<Self> {
        Self::new(lanes, 0..lanes, 0..lanes, [], [])
    }

    fn validate(&self) -> Result<()> {
        if self.lanes == 0 {
            return Err(Error::InvalidTopology("lane count must be at least 1".into()));
        }
        for side in Side::BOTH {
            let active = self.active(side);
            if active.is_empty() {
                return Err(Error::InvalidTopology(format!(
                    "no active lane on the {side:?} side"
                )));
            }
            if let Some(&j) = active.iter().find(|&&j| j >= self.lanes) {
                return Err(Error::InvalidTopology(format!(
                    "active lane {j} on the {side:?} side exceeds lane count {}",
                    self.lanes
                )));
            }
            if let Some(&p) = self.cuts(side).iter().find(|&&p| p + 1 >= self.lanes) {
                return Err(Error::InvalidTopology(format!(
                    "cut pair {p} on the {side:?} side does not couple two lanes"
                )));
            }
            // Walk runs of lanes joined by uncut pairs; each run must be
            // entirely active or entirely fictive.
            let mut start = 0;
            for j in 0..self.lanes {
                let run_ends = j + 1 == self.lanes || self.is_cut(side, j);
                if run_ends {
                    let run = start..=j;
                    let n_active = run.clone().filter(|l| active.contains(l)).count();
                    if n_active != 0 && n_active != run.clone().count() {
                        return Err(Error::InvalidTopology(format!(
                            "on the {side:?} side lanes {start}..={j} exchange vehicles but mix active and fictive lanes"
                        )));
                    }
                    start = j + 1;
                }
            }
        }
        Ok(())
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn active(&self, side: Side) -> &BTreeSet<usize> {
        match side {
            Side::Left => &self.active_left,
            Side::Right => &self.active_right,
        }
    }

    pub fn cuts(&self, side: Side) -> &BTreeSet<usize> {
        match side {
            Side::Left => &self.cut_left,
            Side::Right => &self.cut_right,
        }
    }

    #[inline]
    pub fn is_active(&self, side: Side, lane: usize) -> bool {
        self.active(side).contains(&lane)
    }

    #[inline]
    pub fn is_cut(&self, side: Side, pair: usize) -> bool {
        self.cuts(side).contains(&pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_speed_values() {
        let law = SpeedLaw::linear(1.5).unwrap();
        assert_eq!(eval_speed(&law, 1.0).unwrap(), 0.0);
        assert!((eval_speed(&law, 0.7).unwrap() - 0.45).abs() < 1e-15);
        assert_eq!(eval_speed(&SpeedLaw::linear(2.0).unwrap(), 0.0).unwrap(), 2.0);
    }

    #[test]
    fn speed_rejects_out_of_range_density() {
        let law = SpeedLaw::linear(1.0).unwrap();
        assert!(eval_speed(&law, 1.0 + 1e-13).is_ok());
        assert!(eval_speed(&law, -1e-13).is_ok());
        assert!(matches!(eval_speed(&law, 1.0 + 1e-9), Err(Error::Domain { .. })));
        assert!(matches!(eval_speed(&law, -0.1), Err(Error::Domain { .. })));
        assert!(eval_speed(&law, f64::NAN).is_err());
    }

    #[test]
    fn linear_flux_values() {
        let p = FluxProfile::linear(1.5).unwrap();
        assert_eq!(eval_flux(&p, 0.0).unwrap(), 0.0);
        assert!((eval_flux(&p, 0.5).unwrap() - 0.375).abs() < 1e-15);
        let q = FluxProfile::linear(1.0).unwrap();
        assert!((eval_flux(&q, 0.6).unwrap() - 0.24).abs() < 1e-15);
        assert_eq!(eval_flux(&q, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_critical_density_is_exact() {
        for v in [0.3, 1.0, 1.5, 2.0, 7.25] {
            let p = FluxProfile::linear(v).unwrap();
            assert_eq!(critical_density(&p), 0.5);
        }
        assert_eq!(FluxProfile::linear(2.0).unwrap().f_max(), 0.5);
    }

    #[test]
    fn custom_critical_density_matches_analytic_peak() {
        // u (1 - u)^2 peaks where (1 - u)(1 - 3u) = 0.
        let law = SpeedLaw::custom(|u| (1.0 - u) * (1.0 - u), 2.0).unwrap();
        let p = FluxProfile::new(law).unwrap();
        // Golden section cannot resolve a smooth maximum much below sqrt(eps).
        assert!((p.theta() - 1.0 / 3.0).abs() < 1e-7, "theta = {}", p.theta());
        assert!((p.f_max() - 4.0 / 27.0).abs() < 1e-14);
    }

    #[test]
    fn custom_law_validation() {
        assert!(SpeedLaw::custom(|u| 1.0 - u * u, 2.0).is_ok());
        // increasing
        assert!(SpeedLaw::custom(|u| u, 1.0).is_err());
        // v(1) != 0
        assert!(SpeedLaw::custom(|u| 2.0 - u, 1.0).is_err());
        // derivative bound too small
        assert!(SpeedLaw::custom(|u| 3.0 * (1.0 - u), 1.0).is_err());
        assert!(SpeedLaw::linear(0.0).is_err());
    }

    #[test]
    fn non_unimodal_flux_is_rejected() {
        // Flux u v(u) with two humps: a steep drop mid-way.
        let law = SpeedLaw::tabulated(vec![
            (0.0, 1.0),
            (0.2, 0.95),
            (0.3, 0.2),
            (0.7, 0.19),
            (1.0, 0.0),
        ])
        .unwrap();
        assert!(matches!(FluxProfile::new(law), Err(Error::NotUnimodal(_))));
    }

    #[test]
    fn tabulated_law_matches_linear() {
        let table = SpeedLaw::tabulated(vec![(0.0, 1.5), (1.0, 0.0)]).unwrap();
        let p = FluxProfile::new(table).unwrap();
        assert!((p.theta() - 0.5).abs() < 1e-7);
        assert_eq!(p.law().derivative_bound(), 1.5);
        for i in 0..=20 {
            let u = i as f64 / 20.0;
            assert!((p.speed(u) - 1.5 * (1.0 - u)).abs() < 1e-15);
        }
    }

    #[test]
    fn flux_has_local_max_at_theta() {
        let laws = [
            SpeedLaw::linear(1.5).unwrap(),
            SpeedLaw::custom(|u| (1.0 - u).powi(2), 2.0).unwrap(),
            SpeedLaw::custom(|u| 1.0 - u * u, 2.0).unwrap(),
        ];
        for law in laws {
            let p = FluxProfile::new(law).unwrap();
            for h in [1e-3, -1e-3, 1e-2, -1e-2] {
                assert!(p.flux(p.theta() + h) <= p.flux(p.theta()));
            }
            for i in 0..=100 {
                let u = i as f64 / 100.0;
                assert_eq!(p.flux(u), u * p.speed(u));
            }
        }
    }

    #[test]
    fn cell_sides() {
        assert_eq!(side_of_cell(-1), Side::Left);
        assert_eq!(side_of_cell(0), Side::Right);
        assert_eq!(side_of_cell(-100), Side::Left);
    }

    #[test]
    fn velocity_constants_of_linear_profiles() {
        let p = SideProfiles::uniform_linear(3, 1.5, 2.0).unwrap();
        let c = p.velocity_constants();
        assert_eq!((c.v_max, c.c1_norm), (2.0, 4.0));
        let p = SideProfiles::uniform_linear(1, 1.5, 1.5).unwrap();
        let c = p.velocity_constants();
        assert_eq!((c.v_max, c.c1_norm), (1.5, 3.0));
    }

    #[test]
    fn topology_validation() {
        // 2 -> 3 lanes with the fictive third lane cut off on the left.
        assert!(LaneTopology::new(3, [0, 1], [0, 1, 2], [1], []).is_ok());
        // same, but without the cut
        assert!(LaneTopology::new(3, [0, 1], [0, 1, 2], [], []).is_err());
        // 4 -> 2 lanes
        assert!(LaneTopology::new(4, 0..4, [1, 2], [1], [0, 2]).is_ok());
        assert!(LaneTopology::new(4, 0..4, [1, 2], [1], [0]).is_err());
        assert!(LaneTopology::new(2, [], [0, 1], [], []).is_err());
        assert!(LaneTopology::new(2, [0, 2], [0, 1], [], []).is_err());
        assert!(LaneTopology::new(2, [0, 1], [0, 1], [1], []).is_err());
        assert!(LaneTopology::new(0, [], [], [], []).is_err());
    }
}
