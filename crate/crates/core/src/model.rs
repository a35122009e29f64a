//! Network and machine algebra shared by every stage, plus closed-form
//! equilibria of the pre-fault system and of the frozen PLL subsystems.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::error::ModelError;
use crate::params::SystemParams;

/// Reactance ratios that scale the network equations once the stator current
/// is eliminated in favour of rotor currents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffSet {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

pub fn correction_coefficients(p: &SystemParams, omega_r: f64) -> Result<CoeffSet, ModelError> {
    if !(omega_r.is_finite() && omega_r > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "omega_r",
            reason: format!("rotor speed must be finite and > 0, got {omega_r}"),
        });
    }
    let base = p.xs + p.xg;
    let speed = p.xs + omega_r * p.xg;
    if !(base.is_finite() && base > 0.0 && speed.is_finite() && speed > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "xs",
            reason: format!("non-positive coefficient denominator ({base}, {speed})"),
        });
    }
    Ok(CoeffSet {
        a: p.xs / base,
        b: p.xm / base,
        c: p.xs / speed,
        d: omega_r * p.xm / speed,
    })
}

/// Terminal voltage in the PLL frame from grid voltage, PLL angle and rotor
/// currents.
pub fn terminal_voltage_dq(
    k: &CoeffSet,
    ug: f64,
    phi_pll: f64,
    i_rd: f64,
    i_rq: f64,
    p: &SystemParams,
) -> (f64, f64) {
    let (s, c) = phi_pll.sin_cos();
    let u_td = k.a * ug * c - k.b * p.xg * i_rq;
    let u_tq = -k.c * ug * s + k.d * p.xg * i_rd;
    (u_td, u_tq)
}

/// Source of the q-axis rotor current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReactiveCurrent {
    /// Held at a commanded value (LVRT injection).
    Fixed(f64),
    /// Terminal voltage PI in transformed coordinates: `i_rq = z + kpV * U_t`.
    /// Makes the network equations implicit in `U_t`.
    Tvc { z: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgebraicOutputs {
    pub u_td: f64,
    pub u_tq: f64,
    pub ut: f64,
    pub i_td: f64,
    pub i_tq: f64,
    pub pt: f64,
    pub i_rd: f64,
    pub i_rq: f64,
}

pub const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_DAMPING: f64 = 0.5;
const FIXED_POINT_MAX_ITER: usize = 100;
const NEWTON_MAX_ITER: usize = 50;

/// Solves the algebraic block at one state: terminal voltage, output currents
/// and electrical power.
///
/// With a TVC-driven q current, `U_t` enters `i_rq` and is found by a damped
/// scalar fixed point with a Newton fallback. `ut_guess` seeds the iteration.
pub fn solve_algebraic(
    p: &SystemParams,
    omega_r: f64,
    ug: f64,
    phi_pll: f64,
    i_rd: f64,
    i_rq: ReactiveCurrent,
    ut_guess: Option<f64>,
) -> Result<AlgebraicOutputs, ModelError> {
    let k = correction_coefficients(p, omega_r)?;
    let (s, c) = phi_pll.sin_cos();
    let u_tq = -k.c * ug * s + k.d * p.xg * i_rd;
    let i_rq = match i_rq {
        ReactiveCurrent::Fixed(v) => v,
        ReactiveCurrent::Tvc { z } => {
            // u_td = base - slope * U_t
            let base = k.a * ug * c - k.b * p.xg * z;
            let slope = k.b * p.xg * p.kpv;
            let ut = solve_ut(base, slope, u_tq, ut_guess)?;
            z + p.kpv * ut
        }
    };
    let u_td = k.a * ug * c - k.b * p.xg * i_rq;
    let ut = u_td.hypot(u_tq);
    let i_td = omega_r * (p.xm * i_rd - u_tq) / p.xs;
    let i_tq = (p.xm * i_rq + u_td) / p.xs;
    let out = AlgebraicOutputs {
        u_td,
        u_tq,
        ut,
        i_td,
        i_tq,
        pt: u_td * i_td + u_tq * i_tq,
        i_rd,
        i_rq,
    };
    if [out.u_td, out.u_tq, out.i_td, out.i_tq].iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(ModelError::AlgebraicDivergence { residual: f64::NAN })
    }
}

/// Root of `U = hypot(base - slope * U, q)` on `U >= 0`.
fn solve_ut(base: f64, slope: f64, q: f64, guess: Option<f64>) -> Result<f64, ModelError> {
    let map = |u: f64| (base - slope * u).hypot(q);
    let mut u = guess
        .filter(|g| g.is_finite() && *g >= 0.0)
        .unwrap_or_else(|| map(0.0));
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let g = map(u);
        residual = g - u;
        if residual.abs() < FIXED_POINT_TOL {
            return Ok(g);
        }
        u += FIXED_POINT_DAMPING * residual;
    }

    // Newton on h(U) = hypot(base - slope U, q) - U.
    for _ in 0..NEWTON_MAX_ITER {
        let g = map(u);
        residual = g - u;
        if residual.abs() < FIXED_POINT_TOL {
            return Ok(g);
        }
        let dg = if g > 0.0 { -slope * (base - slope * u) / g } else { 0.0 };
        let dh = dg - 1.0;
        if dh == 0.0 || !dh.is_finite() {
            break;
        }
        u = (u - residual / dh).max(0.0);
    }
    Err(ModelError::AlgebraicDivergence { residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquilibriumKind {
    Sep,
    Uep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub omega_r: f64,
    pub i_rd: f64,
    pub i_rq: f64,
    pub x_pll: f64,
    pub phi_pll: f64,
    pub kind: EquilibriumKind,
    /// SEP and UEP coincide at pi/2.
    pub degenerate: bool,
}

/// Sine argument at which the frozen equilibria collide.
const GRAZING_TOL: f64 = 1e-12;

fn stage1_angle(p: &SystemParams) -> Result<(f64, bool), ModelError> {
    let ratio = p.pin * p.xg / (p.ug_nominal * p.ut_ref);
    if !ratio.is_finite() || ratio.abs() > 1.0 + GRAZING_TOL {
        return Err(ModelError::NoEquilibrium { ratio });
    }
    if (ratio.abs() - 1.0).abs() <= GRAZING_TOL {
        return Ok((FRAC_PI_2.copysign(ratio), true));
    }
    Ok((ratio.asin(), false))
}

fn stage1_point(
    p: &SystemParams,
    phi: f64,
    kind: EquilibriumKind,
    degenerate: bool,
) -> EquilibriumPoint {
    let k = correction_coefficients(p, p.omega_r_ref).expect("validated parameters");
    // u_td = Ut_ref with u_tq = 0.
    let i_rq = (k.a * p.ug_nominal * phi.cos() - p.ut_ref) / (k.b * p.xg);
    EquilibriumPoint {
        omega_r: p.omega_r_ref,
        i_rd: p.xs * p.pin / (p.xm * p.omega_r_ref),
        i_rq,
        x_pll: 1.0,
        phi_pll: phi,
        kind,
        degenerate,
    }
}

/// Pre-fault stable operating point.
pub fn sep_stage1(p: &SystemParams) -> Result<EquilibriumPoint, ModelError> {
    p.validate()?;
    let (phi, degenerate) = stage1_angle(p)?;
    Ok(stage1_point(p, phi, EquilibriumKind::Sep, degenerate))
}

/// Pre-fault saddle, mirror of the SEP angle about pi/2.
pub fn uep_stage1(p: &SystemParams) -> Result<EquilibriumPoint, ModelError> {
    p.validate()?;
    let (phi, degenerate) = stage1_angle(p)?;
    Ok(stage1_point(p, PI - phi, EquilibriumKind::Uep, degenerate))
}

/// Equilibrium angles of a frozen PLL subsystem (fixed grid voltage and
/// active current).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FrozenEquilibria {
    Pair {
        phi_s: f64,
        phi_u: f64,
        degenerate: bool,
    },
    /// No angle zeroes `u_tq`; the PLL cannot lock.
    Lost { ratio: f64 },
}

impl FrozenEquilibria {
    pub fn pair(&self) -> Option<(f64, f64)> {
        match *self {
            FrozenEquilibria::Pair { phi_s, phi_u, .. } => Some((phi_s, phi_u)),
            FrozenEquilibria::Lost { .. } => None,
        }
    }

    pub fn require(&self) -> Result<(f64, f64), ModelError> {
        match *self {
            FrozenEquilibria::Pair { phi_s, phi_u, .. } => Ok((phi_s, phi_u)),
            FrozenEquilibria::Lost { ratio } => Err(ModelError::EquilibriumLost { ratio }),
        }
    }
}

pub fn frozen_equilibria(k: &CoeffSet, ug: f64, i_rd: f64, p: &SystemParams) -> FrozenEquilibria {
    let ratio = k.d * p.xg * i_rd / (k.c * ug);
    if !ratio.is_finite() || ratio.abs() > 1.0 + GRAZING_TOL {
        return FrozenEquilibria::Lost { ratio };
    }
    if (ratio.abs() - 1.0).abs() <= GRAZING_TOL {
        let phi = FRAC_PI_2.copysign(ratio);
        return FrozenEquilibria::Pair {
            phi_s: phi,
            phi_u: PI - phi,
            degenerate: true,
        };
    }
    let phi_s = ratio.asin();
    FrozenEquilibria::Pair {
        phi_s,
        phi_u: PI - phi_s,
        degenerate: false,
    }
}
