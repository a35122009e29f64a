//! Equal-area assessment: permanent-fault first-swing test, the critical
//! clearing angle of a fault followed by voltage recovery, and the clearing
//! time obtained by timing the damped fault-on trajectory to that angle.

use std::f64::consts::PI;

use serde::Serialize;

use crate::cct::CctSearch;
use crate::error::ModelError;
use crate::gse::{gse_from_stage, pll_step, GseParams};
use crate::integrate::{locate_crossing, substeps};
use crate::model::{correction_coefficients, frozen_equilibria, sep_stage1};
use crate::params::SystemParams;
use crate::report::CctValue;
use crate::sim::{fault_onset_currents, Scenario};

/// Absolute tolerance for every area integral.
pub const QUAD_TOL: f64 = 1e-10;
/// Bracket width at which angle roots are accepted, rad.
pub const ROOT_TOL: f64 = 1e-10;
/// Time resolution of the angle crossing, s.
pub const CROSSING_TOL: f64 = 1e-9;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// Accelerating and decelerating areas of a sustained fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EacAreas {
    pub s_plus: f64,
    pub s_minus: f64,
    /// Pre-fault angle where acceleration starts.
    pub phi_start: f64,
    /// Fault-on saddle angle bounding the deceleration.
    pub phi_end: f64,
    /// Fault-on stable angle splitting the two areas.
    pub phi_split: f64,
}

/// Areas under the fault-on power-angle curve, starting from `phi_s1`.
///
/// `s_plus` is signed: it is negative when the pre-fault angle already lies
/// beyond the fault-on SEP.
pub fn areas_permanent_fault(g2: &GseParams, phi_s1: f64) -> Result<EacAreas, ModelError> {
    let (phi_s2, phi_u2) = g2.equilibria().require()?;
    let accel = |phi: f64| g2.pm - g2.pe_amp * phi.sin();
    let s_plus = adaptive_simpson(&accel, phi_s1, phi_s2, QUAD_TOL);
    let s_minus = adaptive_simpson(&|phi| -accel(phi), phi_s2, phi_u2, QUAD_TOL);
    Ok(EacAreas {
        s_plus,
        s_minus,
        phi_start: phi_s1,
        phi_end: phi_u2,
        phi_split: phi_s2,
    })
}

/// First-swing verdict for a fault that is never cleared.
pub fn permanent_fault_stable(g2: &GseParams, phi_s1: f64) -> bool {
    match areas_permanent_fault(g2, phi_s1) {
        Ok(a) => phi_s1 < a.phi_end && a.s_plus <= a.s_minus,
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "phi", rename_all = "snake_case")]
pub enum ClearingAngle {
    Angle(f64),
    /// Recovery succeeds wherever the fault is cleared.
    AlwaysStable,
    /// Even immediate clearing cannot recover synchronism.
    AlwaysUnstable,
}

impl ClearingAngle {
    pub fn angle(&self) -> Option<f64> {
        match *self {
            ClearingAngle::Angle(phi) => Some(phi),
            _ => None,
        }
    }
}

/// Angles and powers that define the clearing problem with the damping
/// term dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClearingGeometry {
    pub pm: f64,
    /// `c * Ug` before and after clearing.
    pub pe2: f64,
    pub pe3: f64,
    pub phi_s1: f64,
    pub phi_u3: f64,
}

impl ClearingGeometry {
    pub fn new(
        p: &SystemParams,
        ug2: f64,
        ug3: f64,
        i_rd2: f64,
        omega_r_frozen: f64,
    ) -> Result<Self, ModelError> {
        if !(ug3 > ug2) {
            return Err(ModelError::NoVoltageRecovery { ug2, ug3 });
        }
        let k = correction_coefficients(p, omega_r_frozen)?;
        let (_, phi_u3) = frozen_equilibria(&k, ug3, i_rd2, p).require()?;
        Ok(Self {
            pm: k.d * p.xg * i_rd2,
            pe2: k.c * ug2,
            pe3: k.c * ug3,
            phi_s1: sep_stage1(p)?.phi_pll,
            phi_u3,
        })
    }

    /// Net accelerating area up to clearing at `phi` minus the decelerating
    /// area left after it, both by quadrature.
    pub fn area_balance(&self, phi: f64) -> f64 {
        let s_plus = adaptive_simpson(&|x: f64| self.pm - self.pe2 * x.sin(), self.phi_s1, phi, QUAD_TOL);
        let s_minus = adaptive_simpson(&|x: f64| self.pe3 * x.sin() - self.pm, phi, self.phi_u3, QUAD_TOL);
        s_plus - s_minus
    }

    /// Cosine of the clearing angle that balances the two areas.
    pub fn cos_argument(&self) -> f64 {
        (self.pm * (self.phi_u3 - self.phi_s1) + self.pe3 * self.phi_u3.cos() - self.pe2 * self.phi_s1.cos())
            / (self.pe3 - self.pe2)
    }

    /// Closed-form clearing angle.
    pub fn closed_form(&self) -> ClearingAngle {
        let arg = self.cos_argument();
        if arg < -1.0 {
            ClearingAngle::AlwaysStable
        } else if arg > 1.0 {
            ClearingAngle::AlwaysUnstable
        } else {
            self.restrict(arg.acos())
        }
    }

    /// Clearing angle from the area balance by bisection on `[0, pi]`,
    /// where the balance is strictly increasing.
    pub fn by_quadrature(&self) -> ClearingAngle {
        let (mut lo, mut hi) = (0.0, PI);
        if self.area_balance(lo) > 0.0 {
            return ClearingAngle::AlwaysUnstable;
        }
        if self.area_balance(hi) < 0.0 {
            return ClearingAngle::AlwaysStable;
        }
        while hi - lo > ROOT_TOL {
            let mid = 0.5 * (lo + hi);
            if self.area_balance(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        self.restrict(0.5 * (lo + hi))
    }

    fn restrict(&self, phi: f64) -> ClearingAngle {
        if phi <= self.phi_s1 {
            ClearingAngle::AlwaysUnstable
        } else {
            ClearingAngle::Angle(phi)
        }
    }
}

/// Closed-form critical clearing angle with the damping term dropped.
pub fn critical_clearing_angle(
    p: &SystemParams,
    ug2: f64,
    ug3: f64,
    i_rd2: f64,
    omega_r_frozen: f64,
) -> Result<ClearingAngle, ModelError> {
    Ok(ClearingGeometry::new(p, ug2, ug3, i_rd2, omega_r_frozen)?.closed_form())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EacResult {
    pub angle: ClearingAngle,
    pub geometry: ClearingGeometry,
    pub cct: CctValue,
}

/// Time for the damped fault-on trajectory from the pre-fault SEP to reach
/// the critical clearing angle. Coefficients are frozen at rated speed and
/// the grid is assumed to recover to its nominal voltage.
pub fn cct_eac(scenario: &Scenario, search: &CctSearch) -> Result<EacResult, ModelError> {
    scenario.validate()?;
    let p = &scenario.params;
    let sep = sep_stage1(p)?;
    let lvrt = fault_onset_currents(scenario)?;
    let geometry = ClearingGeometry::new(p, scenario.ug2, p.ug_nominal, lvrt.i_rd2, sep.omega_r)?;
    let angle = geometry.closed_form();
    let cct = match angle {
        ClearingAngle::AlwaysStable => CctValue::AlwaysStable,
        ClearingAngle::AlwaysUnstable => CctValue::AlwaysUnstable,
        ClearingAngle::Angle(phi_cr) => {
            let g2 = gse_from_stage(p, scenario.ug2, lvrt.i_rd2, sep.omega_r)?;
            time_to_angle(&g2, [1.0, sep.phi_pll], phi_cr, search.hi, scenario.dt)
        }
    };
    Ok(EacResult { angle, geometry, cct })
}

/// First time the PLL angle of `g` reaches `phi_target`, starting from
/// `y0 = [x_pll, phi]`.
pub fn time_to_angle(g: &GseParams, y0: [f64; 2], phi_target: f64, t_max: f64, dt: f64) -> CctValue {
    if y0[1] >= phi_target {
        return CctValue::AlwaysUnstable;
    }
    let n = substeps(t_max, dt);
    let h = t_max / n as f64;
    let mut y = y0;
    for i in 0..n {
        let next = pll_step(y, g, h);
        if next[1] >= phi_target {
            let mut f = |_t: f64, y: &[f64; 2]| {
                let (dx, dphi) = crate::gse::pll_derivatives(y[0], y[1], g);
                Ok::<_, std::convert::Infallible>([dx, dphi])
            };
            let mut trig = |_t: f64, y: &[f64; 2]| Ok::<_, std::convert::Infallible>(y[1] >= phi_target);
            let t0 = i as f64 * h;
            let (tau, _) = locate_crossing(&mut f, t0, &y, h, CROSSING_TOL, &mut trig).expect("infallible");
            let t = t0 + tau;
            return CctValue::Finite {
                cct: t,
                bracket: (t - CROSSING_TOL, t),
            };
        }
        y = next;
    }
    CctValue::AlwaysStable
}

/// Power-angle curves `(phi, Pe2, Pe3, Pm)` on `n` points over `[0, pi]`.
pub fn power_angle_curves(geo: &ClearingGeometry, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let phi = PI * i as f64 / (n.max(2) - 1) as f64;
            vec![phi, geo.pe2 * phi.sin(), geo.pe3 * phi.sin(), geo.pm]
        })
        .collect()
}
