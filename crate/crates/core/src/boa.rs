//! Basin of attraction of the post-clearing frozen PLL system.
//!
//! Membership is decided by forward simulation. The stable manifold of the
//! saddle is traced by backward integration and serves plotting and a
//! secondary point-location test.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;

use crate::cct::CctSearch;
use crate::error::ModelError;
use crate::gse::{gse_from_stage, gse_step, pll_advance, pll_step, GseParams, GseState};
use crate::model::sep_stage1;
use crate::report::{write_table, CctValue};
use crate::sim::{fault_onset_currents, Scenario, DEFAULT_DT};

/// Offset of the manifold seeds from the saddle along the stable direction.
pub const SEED_OFFSET: f64 = 1e-5;
/// Width of the band around the boundary where the two membership tests
/// may disagree.
pub const BOUNDARY_BAND: f64 = 1e-3;

/// Linearization of the swing equation at its saddle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UepEigen {
    pub phi_u: f64,
    pub lambda_unstable: f64,
    pub lambda_stable: f64,
    /// Unit eigenvectors in `(phi, phi_dot)`.
    pub v_unstable: [f64; 2],
    pub v_stable: [f64; 2],
}

fn unit_eigvec(lambda: f64) -> [f64; 2] {
    let n = (1.0 + lambda * lambda).sqrt();
    [1.0 / n, lambda / n]
}

pub fn uep_eigenstructure(g: &GseParams) -> Result<UepEigen, ModelError> {
    let (_, phi_u) = g.equilibria().require()?;
    let j = g.jacobian(&GseState { phi: phi_u, phi_dot: 0.0 });
    // Companion form: lambda^2 - tr*lambda - j21 = 0.
    let tr = j[1][1];
    let det = -j[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let lambda_unstable = 0.5 * (tr + disc);
    let lambda_stable = 0.5 * (tr - disc);
    let scale = tr.abs() + disc.abs() + 1.0;
    for lambda in [lambda_unstable, lambda_stable] {
        if !lambda.is_finite() || lambda.abs() <= 1e-9 * scale {
            return Err(ModelError::DegenerateEquilibrium { eigenvalue: lambda });
        }
    }
    if !(lambda_unstable > 0.0 && lambda_stable < 0.0) {
        return Err(ModelError::DegenerateEquilibrium { eigenvalue: lambda_stable.max(-lambda_unstable) });
    }
    Ok(UepEigen {
        phi_u,
        lambda_unstable,
        lambda_stable,
        v_unstable: unit_eigvec(lambda_unstable),
        v_stable: unit_eigvec(lambda_stable),
    })
}

/// Rectangle in `(phi, x_pll)` bounding the manifold trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateWindow {
    pub phi: (f64, f64),
    pub x: (f64, f64),
}

impl StateWindow {
    /// One full period below the saddle plus a margin, and `x` within 10%.
    pub fn around(phi_u: f64) -> Self {
        Self {
            phi: (phi_u - TAU - 0.5, phi_u + 0.5),
            x: (0.9, 1.1),
        }
    }

    pub fn contains(&self, phi: f64, x: f64) -> bool {
        (self.phi.0..=self.phi.1).contains(&phi) && (self.x.0..=self.x.1).contains(&x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldBranch {
    /// `(phi, x_pll)` points, starting next to the saddle.
    pub points: Vec<(f64, f64)>,
    /// Left the state window.
    pub truncated: bool,
    /// Stopped by the arc-length budget while still inside the window.
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoaBoundary {
    /// Branch reaching the saddle from lower angles with positive rate.
    pub upper: ManifoldBranch,
    /// Branch reaching the saddle from higher angles with negative rate.
    pub lower: ManifoldBranch,
    pub gse: GseParams,
    pub phi_s: f64,
    pub phi_u: f64,
    pub window: StateWindow,
}

impl BoaBoundary {
    /// Whole manifold as one polyline through the saddle.
    pub fn polyline(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<_> = self.upper.points.iter().rev().copied().collect();
        pts.push((self.phi_u, 1.0));
        pts.extend(self.lower.points.iter().copied());
        pts
    }

    /// Basin edges over one period: the upper branch and the lower branch
    /// shifted down by a full turn.
    pub fn basin_edges(&self) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let mut top: Vec<_> = self.upper.points.iter().rev().copied().collect();
        top.push((self.phi_u, 1.0));
        let mut bottom = vec![(self.phi_u - TAU, 1.0)];
        bottom.extend(self.lower.points.iter().map(|&(phi, x)| (phi - TAU, x)));
        (top, bottom)
    }

    pub fn to_csv(&self) -> String {
        write_table("phi_pll,x_pll", self.polyline().into_iter().map(|(p, x)| vec![p, x]))
    }

    /// Shortest `(phi, x)` distance from a point to the basin edges.
    pub fn distance(&self, phi: f64, x: f64) -> f64 {
        let (top, bottom) = self.basin_edges();
        polyline_distance(&top, phi, x).min(polyline_distance(&bottom, phi, x))
    }

    /// Point location against the basin edges within
    /// `(phi_u - 2pi, phi_u)`; `None` outside that strip or where a branch
    /// doubles back.
    pub fn side(&self, phi: f64, x: f64) -> Option<bool> {
        if !(phi > self.phi_u - TAU && phi < self.phi_u) {
            return None;
        }
        let g = &self.gse;
        let rate = GseState::from_pll(x, phi, g).phi_dot;
        let (top, bottom) = self.basin_edges();
        let to_rate = |pts: &[(f64, f64)]| -> Vec<(f64, f64)> {
            pts.iter()
                .map(|&(p, x)| (p, GseState::from_pll(x, p, g).phi_dot))
                .collect()
        };
        let upper = interpolate_monotone(&to_rate(&top), phi)?.unwrap_or(f64::INFINITY);
        let lower = interpolate_monotone(&to_rate(&bottom), phi)?.unwrap_or(f64::NEG_INFINITY);
        Some(rate < upper && rate > lower)
    }
}

/// Linear interpolation on a polyline with strictly increasing first
/// coordinate. `Some(None)` when `x` is outside its span; `None` when the
/// polyline is not monotone.
fn interpolate_monotone(pts: &[(f64, f64)], x: f64) -> Option<Option<f64>> {
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return None;
    }
    let (first, last) = (pts.first()?, pts.last()?);
    if x < first.0 || x > last.0 {
        return Some(None);
    }
    let i = pts.partition_point(|p| p.0 < x).clamp(1, pts.len() - 1);
    let (a, b) = (pts[i - 1], pts[i]);
    let s = (x - a.0) / (b.0 - a.0);
    Some(Some(a.1 + s * (b.1 - a.1)))
}

fn polyline_distance(pts: &[(f64, f64)], phi: f64, x: f64) -> f64 {
    pts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let s = if len2 > 0.0 {
                (((phi - a.0) * dx + (x - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            ((phi - a.0 - s * dx).powi(2) + (x - a.1 - s * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Traces both stable-manifold branches of the saddle by integrating the
/// swing equation backward in time.
pub fn boundary_manifold(
    g: &GseParams,
    arc_length_budget: f64,
    window: Option<StateWindow>,
) -> Result<BoaBoundary, ModelError> {
    let eig = uep_eigenstructure(g)?;
    let (phi_s, phi_u) = g.equilibria().require()?;
    let window = window.unwrap_or_else(|| StateWindow::around(phi_u));
    let v = eig.v_stable;
    // v_stable points right and down; its negative points left and up.
    let upper = trace_branch(g, [phi_u - SEED_OFFSET * v[0], -SEED_OFFSET * v[1]], arc_length_budget, &window);
    let lower = trace_branch(g, [phi_u + SEED_OFFSET * v[0], SEED_OFFSET * v[1]], arc_length_budget, &window);
    Ok(BoaBoundary {
        upper,
        lower,
        gse: *g,
        phi_s,
        phi_u,
        window,
    })
}

fn trace_branch(g: &GseParams, seed: [f64; 2], budget: f64, window: &StateWindow) -> ManifoldBranch {
    const H: f64 = -2e-5;
    const MAX_STEPS: usize = 2_000_000;
    let mut s = GseState { phi: seed[0], phi_dot: seed[1] };
    let mut points = vec![s.to_pll(g)].into_iter().map(|(x, p)| (p, x)).collect::<Vec<_>>();
    let mut arc = 0.0;
    let mut last = points[0];
    for _ in 0..MAX_STEPS {
        s = gse_step(&s, g, H);
        let (x, phi) = s.to_pll(g);
        if !(phi.is_finite() && x.is_finite()) || !window.contains(phi, x) {
            return ManifoldBranch { points, truncated: true, budget_exhausted: false };
        }
        arc += ((phi - last.0).powi(2) + (x - last.1).powi(2)).sqrt();
        // Thin the polyline to roughly 1e-3 spacing.
        if ((phi - last.0).powi(2) + (x - last.1).powi(2)).sqrt() >= 1e-3 || points.len() == 1 {
            points.push((phi, x));
            last = (phi, x);
        }
        if arc >= budget {
            return ManifoldBranch { points, truncated: false, budget_exhausted: true };
        }
    }
    ManifoldBranch { points, truncated: false, budget_exhausted: true }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipMethod {
    ForwardSim,
    ManifoldSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Inside,
    Outside,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MembershipResult {
    pub verdict: Membership,
    pub method: MembershipMethod,
    /// Time to settle (inside) or to escape (outside), s.
    pub time: Option<f64>,
    /// Angle at which escape was declared.
    pub escape_angle: Option<f64>,
}

impl MembershipResult {
    pub fn inside(&self) -> bool {
        self.verdict == Membership::Inside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoaOptions {
    pub horizon: f64,
    pub dt: f64,
    /// Angle radius around an equilibrium that counts as converged.
    pub radius: f64,
    /// Angle rate below which a point inside the radius counts as settled.
    pub settle_rate: f64,
}

impl Default for BoaOptions {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            dt: DEFAULT_DT,
            radius: 0.05,
            settle_rate: 0.5,
        }
    }
}

/// Forward-simulation membership of `(phi, x_pll)` in the basin of the SEP
/// of `g`. Settling at another copy of the SEP (a slipped pole) is outside.
pub fn is_in_boa(phi: f64, x_pll: f64, g: &GseParams, opts: &BoaOptions) -> Result<MembershipResult, ModelError> {
    let (phi_s, phi_u) = g.equilibria().require()?;
    let result = |verdict, time, escape_angle| MembershipResult {
        verdict,
        method: MembershipMethod::ForwardSim,
        time,
        escape_angle,
    };
    let n = crate::integrate::substeps(opts.horizon, opts.dt);
    let h = opts.horizon / n as f64;
    let mut y = [x_pll, phi];
    for i in 0..=n {
        let t = i as f64 * h;
        let (x, phi) = (y[0], y[1]);
        if !(x.is_finite() && phi.is_finite()) {
            return Ok(result(Membership::Outside, Some(t), None));
        }
        if phi > phi_u + TAU || phi < phi_u - 2.0 * TAU {
            return Ok(result(Membership::Outside, Some(t), Some(phi)));
        }
        let turns = ((phi - phi_s) / TAU).round();
        let offset = phi - phi_s - turns * TAU;
        if offset.abs() < opts.radius && GseState::from_pll(x, phi, g).phi_dot.abs() < opts.settle_rate {
            return Ok(if turns == 0.0 {
                result(Membership::Inside, Some(t), None)
            } else {
                result(Membership::Outside, Some(t), Some(phi))
            });
        }
        if i < n {
            y = pll_step(y, g, h);
        }
    }
    Ok(result(Membership::Indeterminate, None, None))
}

/// Point location against a traced boundary.
pub fn is_in_boa_by_manifold(phi: f64, x_pll: f64, boundary: &BoaBoundary) -> MembershipResult {
    let verdict = match boundary.side(phi, x_pll) {
        Some(true) => Membership::Inside,
        Some(false) => Membership::Outside,
        None => Membership::Indeterminate,
    };
    MembershipResult {
        verdict,
        method: MembershipMethod::ManifoldSide,
        time: None,
        escape_angle: None,
    }
}

/// Frozen systems on either side of clearing, both with coefficients at the
/// pre-fault rotor speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClearingSystems {
    pub fault: GseParams,
    pub recovered: GseParams,
    /// Pre-fault `[x_pll, phi]`.
    pub start: [f64; 2],
}

impl ClearingSystems {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, ModelError> {
        scenario.validate()?;
        let p = &scenario.params;
        let sep = sep_stage1(p)?;
        let lvrt = fault_onset_currents(scenario)?;
        Ok(Self {
            fault: gse_from_stage(p, scenario.ug2, lvrt.i_rd2, sep.omega_r)?,
            recovered: gse_from_stage(p, p.ug_nominal, lvrt.i_rd2, sep.omega_r)?,
            start: [1.0, sep.phi_pll],
        })
    }

    /// PLL state at the start of the recovery stage for a fault lasting
    /// `duration`.
    pub fn clearing_state(&self, duration: f64, dt: f64) -> [f64; 2] {
        pll_advance(self.start, &self.fault, duration, dt)
    }
}

/// Longest fault for which the clearing state lies in the basin of the
/// recovered frozen system.
pub fn cct_boa(scenario: &Scenario, search: &CctSearch, opts: &BoaOptions) -> Result<CctValue, ModelError> {
    let sys = ClearingSystems::from_scenario(scenario)?;
    if let Err(e) = sys.recovered.equilibria().require() {
        return Ok(CctValue::NotApplicable { reason: e.to_string() });
    }
    search.run(|duration| {
        let [x, phi] = sys.clearing_state(duration, opts.dt);
        Ok(is_in_boa(phi, x, &sys.recovered, opts)?.inside())
    })
}

/// Regular membership grid `(phi, x, inside)`; indeterminate points are
/// written as `nan`.
pub fn membership_grid_csv(
    g: &GseParams,
    phi_range: (f64, f64),
    x_range: (f64, f64),
    n_phi: usize,
    n_x: usize,
    opts: &BoaOptions,
) -> Result<String, ModelError> {
    g.equilibria().require()?;
    let lerp = |(a, b): (f64, f64), i: usize, n: usize| if n <= 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 };
    let rows: Vec<Vec<f64>> = (0..n_phi * n_x)
        .into_par_iter()
        .map(|k| {
            let (phi, x) = (lerp(phi_range, k / n_x, n_phi), lerp(x_range, k % n_x, n_x));
            let m = is_in_boa(phi, x, g, opts).expect("equilibrium checked");
            let flag = match m.verdict {
                Membership::Inside => 1.0,
                Membership::Outside => 0.0,
                Membership::Indeterminate => f64::NAN,
            };
            vec![phi, x, flag]
        })
        .collect();
    Ok(write_table("phi,x,inside", rows))
}

/// Unwrapped angle range used for basin plots around a saddle.
pub fn plot_phi_range(phi_u: f64) -> (f64, f64) {
    (phi_u - TAU, phi_u + 0.25 * PI)
}
