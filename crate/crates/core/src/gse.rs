//! Second-order swing-equation form of a frozen PLL subsystem.
//!
//! With the grid voltage and the active current held, the PLL pair
//! `(x_pll, phi_pll)` is equivalent to
//! `Meq * phi'' = Pm - Pe_amp * sin(phi) - Deq_coeff * cos(phi) * phi'`.

use std::convert::Infallible;

use serde::Serialize;

use crate::error::ModelError;
use crate::integrate::{rk4_step, substeps};
use crate::model::{correction_coefficients, frozen_equilibria, sep_stage1, FrozenEquilibria};
use crate::params::SystemParams;
use crate::report::write_table;
use crate::sim::{derivatives, fault_onset_currents, FullState, Mode, Scenario, StageId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GseParams {
    /// Equivalent mechanical power `d * Xg * i_rd`.
    pub pm: f64,
    /// Electromagnetic amplitude `c * Ug`.
    pub pe_amp: f64,
    /// Equivalent inertia `1 / kipll`.
    pub meq: f64,
    /// Damping coefficient multiplying `cos(phi)`.
    pub deq_coeff: f64,
    /// PLL proportional gain and frame speed, for the `(x_pll, phi)` map.
    pub kppll: f64,
    pub omega0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GseState {
    pub phi: f64,
    pub phi_dot: f64,
}

pub fn gse_from_stage(
    p: &SystemParams,
    ug: f64,
    i_rd: f64,
    omega_r_frozen: f64,
) -> Result<GseParams, ModelError> {
    let k = correction_coefficients(p, omega_r_frozen)?;
    Ok(GseParams {
        pm: k.d * p.xg * i_rd,
        pe_amp: k.c * ug,
        meq: 1.0 / p.kipll,
        deq_coeff: k.c * (p.kppll / p.kipll) * ug,
        kppll: p.kppll,
        omega0: p.omega0(),
    })
}

impl GseParams {
    /// Same power balance with the damping term removed.
    pub fn undamped(self) -> Self {
        Self {
            deq_coeff: 0.0,
            ..self
        }
    }

    /// Quadrature terminal voltage, which equals the net accelerating power.
    pub fn u_tq(&self, phi: f64) -> f64 {
        self.pm - self.pe_amp * phi.sin()
    }

    pub fn equilibria(&self) -> FrozenEquilibria {
        let ratio = self.pm / self.pe_amp;
        if !ratio.is_finite() || ratio.abs() > 1.0 {
            return FrozenEquilibria::Lost { ratio };
        }
        let phi_s = ratio.asin();
        FrozenEquilibria::Pair {
            phi_s,
            phi_u: std::f64::consts::PI - phi_s,
            degenerate: ratio.abs() == 1.0,
        }
    }

    /// Undamped energy `0.5 Meq phi'^2 - Pm phi - Pe_amp cos(phi)`.
    pub fn energy(&self, s: &GseState) -> f64 {
        0.5 * self.meq * s.phi_dot * s.phi_dot - self.pm * s.phi - self.pe_amp * s.phi.cos()
    }

    /// Jacobian of `(phi, phi')` dynamics.
    pub fn jacobian(&self, s: &GseState) -> [[f64; 2]; 2] {
        let (sn, cs) = s.phi.sin_cos();
        [
            [0.0, 1.0],
            [
                (-self.pe_amp * cs + self.deq_coeff * sn * s.phi_dot) / self.meq,
                -self.deq_coeff * cs / self.meq,
            ],
        ]
    }
}

impl GseState {
    /// Angle rate implied by the PLL states.
    pub fn from_pll(x_pll: f64, phi: f64, g: &GseParams) -> Self {
        Self {
            phi,
            phi_dot: g.kppll * g.u_tq(phi) + g.omega0 * (x_pll - 1.0),
        }
    }

    /// Inverse of [`GseState::from_pll`]: returns `(x_pll, phi)`.
    pub fn to_pll(&self, g: &GseParams) -> (f64, f64) {
        let x = 1.0 + (self.phi_dot - g.kppll * g.u_tq(self.phi)) / g.omega0;
        (x, self.phi)
    }
}

pub fn gse_derivatives(s: &GseState, g: &GseParams) -> GseState {
    let (sn, cs) = s.phi.sin_cos();
    GseState {
        phi: s.phi_dot,
        phi_dot: (g.pm - g.pe_amp * sn - g.deq_coeff * cs * s.phi_dot) / g.meq,
    }
}

/// The same dynamics written on the PLL states, returning `(x', phi')`.
pub fn pll_derivatives(x_pll: f64, phi: f64, g: &GseParams) -> (f64, f64) {
    let u_tq = g.u_tq(phi);
    (u_tq / (g.meq * g.omega0), g.kppll * u_tq + g.omega0 * (x_pll - 1.0))
}

pub fn gse_step(s: &GseState, g: &GseParams, h: f64) -> GseState {
    let mut f = |_t: f64, y: &[f64; 2]| {
        let d = gse_derivatives(&GseState { phi: y[0], phi_dot: y[1] }, g);
        Ok::<_, Infallible>([d.phi, d.phi_dot])
    };
    let [phi, phi_dot] = rk4_step(&mut f, 0.0, &[s.phi, s.phi_dot], h).expect("infallible");
    GseState { phi, phi_dot }
}

/// RK4 on the PLL-state form; `y = [x_pll, phi]`.
pub fn pll_step(y: [f64; 2], g: &GseParams, h: f64) -> [f64; 2] {
    let mut f = |_t: f64, y: &[f64; 2]| {
        let (dx, dphi) = pll_derivatives(y[0], y[1], g);
        Ok::<_, Infallible>([dx, dphi])
    };
    rk4_step(&mut f, 0.0, &y, h).expect("infallible")
}

/// Integrates the PLL-state form for `duration` with steps no longer than `dt`.
pub fn pll_advance(y: [f64; 2], g: &GseParams, duration: f64, dt: f64) -> [f64; 2] {
    if duration <= 0.0 {
        return y;
    }
    let n = substeps(duration, dt);
    let h = duration / n as f64;
    (0..n).fold(y, |y, _| pll_step(y, g, h))
}

/// Maximum angle gap between the during-fault DAE and its swing-equation
/// reduction, both started at the pre-fault SEP with the rotor held.
pub fn gse_vs_dae_residual(scenario: &Scenario, duration: f64) -> Result<f64, ModelError> {
    let mut sc = scenario.clone();
    sc.freeze_rotor_during_fault = true;
    let p = sc.params;
    let sep = sep_stage1(&p)?;
    let x0 = FullState::from_equilibrium(&sep, &p);

    let lvrt = fault_onset_currents(&sc)?;
    let mode = Mode {
        stage: StageId::DuringFault,
        ug: sc.ug2,
        lvrt,
        t_clear: f64::INFINITY,
    };
    let g = gse_from_stage(&p, sc.ug2, lvrt.i_rd2, sep.omega_r)?;

    let n = substeps(duration, sc.dt);
    let h = duration / n as f64;
    let mut dae = x0.to_array();
    let mut swing = GseState::from_pll(x0.x_pll, x0.phi_pll, &g);
    let mut f = |t: f64, y: &[f64; 5]| derivatives(&FullState::from_array(*y), t, &mode, &sc).map(FullState::to_array);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        dae = rk4_step(&mut f, i as f64 * h, &dae, h)?;
        swing = gse_step(&swing, &g, h);
        worst = worst.max((dae[4] - swing.phi).abs());
    }
    Ok(worst)
}

/// Plot grid of `(phi, phi_dot, phi_ddot)` over the given window.
pub fn phase_portrait_csv(
    g: &GseParams,
    phi_range: (f64, f64),
    phi_dot_range: (f64, f64),
    n_phi: usize,
    n_phi_dot: usize,
) -> String {
    let lerp = |(a, b): (f64, f64), i: usize, n: usize| {
        if n <= 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let rows = (0..n_phi).flat_map(|i| {
        (0..n_phi_dot).map(move |j| {
            let s = GseState {
                phi: lerp(phi_range, i, n_phi),
                phi_dot: lerp(phi_dot_range, j, n_phi_dot),
            };
            vec![s.phi, s.phi_dot, gse_derivatives(&s, g).phi_dot]
        })
    });
    write_table("phi,phi_dot,phi_ddot", rows)
}

/// Frozen equilibria of a swing-equation snapshot, computed through the
/// network coefficients rather than the power ratio.
pub fn stage_equilibria(p: &SystemParams, ug: f64, i_rd: f64, omega_r: f64) -> Result<FrozenEquilibria, ModelError> {
    let k = correction_coefficients(p, omega_r)?;
    Ok(frozen_equilibria(&k, ug, i_rd, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ReactiveMode;

    fn base() -> SystemParams {
        SystemParams::reference()
    }

    #[test]
    fn coefficients_of_deep_sag() {
        let g = gse_from_stage(&base(), 0.2, 0.34, 1.2).unwrap();
        assert!((g.pm - 0.170_327_552_986_512_5).abs() < 1e-12);
        assert!((g.pe_amp - 0.174_309_569_685_292_3).abs() < 1e-12);
        assert_eq!(g.meq, 1.0 / 1400.0);
        assert!((g.deq_coeff - 0.007_470_410_129_369_668).abs() < 1e-12);
    }

    #[test]
    fn zero_voltage_zero_current_is_pure_drift() {
        let g = gse_from_stage(&base(), 0.0, 0.0, 1.2).unwrap();
        assert_eq!((g.pm, g.pe_amp), (0.0, 0.0));
        let d = gse_derivatives(&GseState { phi: 1.0, phi_dot: 3.0 }, &g);
        assert_eq!(d.phi_dot, 0.0);
        assert_eq!(d.phi, 3.0);
    }

    #[test]
    fn prefault_ratio_matches_sep_angle() {
        let g = gse_from_stage(&base(), 1.0, 0.695_897_435_897_436, 1.2).unwrap();
        assert!((g.pm / g.pe_amp - 0.411_516_846_067_488_06f64.sin()).abs() < 1e-6);
    }

    #[test]
    fn equilibria_are_rest_points() {
        let g = gse_from_stage(&base(), 0.3, 0.2, 1.2).unwrap();
        let (s, u) = g.equilibria().pair().unwrap();
        for phi in [s, u] {
            let d = gse_derivatives(&GseState { phi, phi_dot: 0.0 }, &g);
            assert!(d.phi == 0.0 && d.phi_dot.abs() < 1e-12);
        }
        let (s2, u2) = stage_equilibria(&base(), 0.3, 0.2, 1.2).unwrap().pair().unwrap();
        assert!((s - s2).abs() < 1e-12 && (u - u2).abs() < 1e-12);
    }

    #[test]
    fn fault_onset_accelerates() {
        let g = gse_from_stage(&base(), 0.2, 0.34, 1.2).unwrap();
        let d = gse_derivatives(&GseState { phi: 0.4115, phi_dot: 0.0 }, &g);
        assert!(d.phi_dot > 0.0);
    }

    #[test]
    fn pll_map_round_trip() {
        let g = gse_from_stage(&base(), 0.2, 0.34, 1.2).unwrap();
        let s = GseState::from_pll(1.003, 1.7, &g);
        let (x, phi) = s.to_pll(&g);
        assert!((x - 1.003).abs() < 1e-14 && phi == 1.7);
    }

    #[test]
    fn reduction_exact_at_sep_start() {
        // i_rd2 chosen so the fault-on SEP equals the pre-fault angle.
        let p = base();
        let k = correction_coefficients(&p, 1.2).unwrap();
        let ird = 0.4 * k.c * 0.5 / (k.d * p.xg);
        let sc = Scenario::new(p, 0.5, 0.0, None, ird, ReactiveMode::Explicit(-0.6));
        let dev = gse_vs_dae_residual(&sc, 0.2).unwrap();
        assert!(dev < 1e-12, "{dev}");
    }

    #[test]
    fn portrait_has_grid_rows() {
        let g = gse_from_stage(&base(), 1.0, 0.34, 1.2).unwrap();
        let csv = phase_portrait_csv(&g, (-1.0, 4.0), (-50.0, 50.0), 5, 3);
        assert_eq!(csv.lines().count(), 1 + 15);
        assert!(csv.starts_with("phi,phi_dot,phi_ddot\n"));
    }
}
