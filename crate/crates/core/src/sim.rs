//! Four-stage LVRT simulation: pre-fault, during-fault (LVRT current
//! injection), early post-fault (active current ramp) and late post-fault.
//!
//! The PI controllers whose outputs feed back through their own derivative
//! (rotor speed and terminal voltage loops) are integrated in transformed
//! coordinates `w = i_rd - kpw * omega_r` and `z = i_rq - kpV * U_t`, which are
//! exactly the (shifted) PI integrator states. A frozen controller simply holds
//! its integrator, so the five continuous states never jump at a stage switch;
//! only the current readout and the vector field change.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::integrate::{locate_crossing, rk4_step, substeps};
use crate::model::{
    correction_coefficients, frozen_equilibria, sep_stage1, solve_algebraic, AlgebraicOutputs,
    EquilibriumPoint, ReactiveCurrent,
};
use crate::params::SystemParams;
use crate::report::fmt_sig;

/// Terminal voltage below which the LVRT control takes over.
pub const LVRT_ENTRY_VOLTAGE: f64 = 0.8;
/// Voltage knee of the reactive current injection law.
pub const LVRT_KNEE_VOLTAGE: f64 = 0.9;
/// Width of the time bracket left by event localization.
pub const EVENT_TOL: f64 = 1e-6;
pub const DEFAULT_DT: f64 = 50e-6;
pub const DEFAULT_SAMPLE_INTERVAL: f64 = 1e-3;
/// Settling time appended after the ramp when a horizon is derived.
pub const DEFAULT_SETTLE: f64 = 2.0;

/// Convergence window and tolerances used by [`classify_outcome`].
pub const CLASSIFY_WINDOW: f64 = 0.5;
pub const CLASSIFY_PHI_TOL: f64 = 0.05;
pub const CLASSIFY_X_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum StageId {
    PreFault = 1,
    DuringFault = 2,
    EarlyPostFault = 3,
    LatePostFault = 4,
}

impl StageId {
    pub fn number(self) -> u8 {
        self as u8
    }

    fn next(self) -> Option<StageId> {
        match self {
            StageId::PreFault => Some(StageId::DuringFault),
            StageId::DuringFault => Some(StageId::EarlyPostFault),
            StageId::EarlyPostFault => Some(StageId::LatePostFault),
            StageId::LatePostFault => None,
        }
    }
}

impl From<StageId> for u8 {
    fn from(s: StageId) -> u8 {
        s.number()
    }
}

impl TryFrom<u8> for StageId {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(StageId::PreFault),
            2 => Ok(StageId::DuringFault),
            3 => Ok(StageId::EarlyPostFault),
            4 => Ok(StageId::LatePostFault),
            other => Err(format!("unknown stage {other}")),
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Continuous states of the mechanism model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullState {
    pub omega_r: f64,
    /// Rotor speed PI integrator, `i_rd - kpw * omega_r` under normal control.
    pub w_rsc: f64,
    /// Terminal voltage PI integrator, `i_rq - kpV * U_t` under normal control.
    pub z_tvc: f64,
    pub x_pll: f64,
    pub phi_pll: f64,
}

impl FullState {
    pub fn from_equilibrium(eq: &EquilibriumPoint, p: &SystemParams) -> Self {
        Self {
            omega_r: eq.omega_r,
            w_rsc: eq.i_rd - p.kpw * eq.omega_r,
            z_tvc: eq.i_rq - p.kpv * p.ut_ref,
            x_pll: eq.x_pll,
            phi_pll: eq.phi_pll,
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.omega_r, self.w_rsc, self.z_tvc, self.x_pll, self.phi_pll]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            omega_r: a[0],
            w_rsc: a[1],
            z_tvc: a[2],
            x_pll: a[3],
            phi_pll: a[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Active current the rotor speed PI would command.
    pub fn rsc_command(&self, p: &SystemParams) -> f64 {
        self.w_rsc + p.kpw * self.omega_r
    }
}

/// Rotor currents imposed by the LVRT control during the fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LvrtCurrents {
    pub i_rd2: f64,
    pub i_rq2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReactiveMode {
    /// Use the given i_rq2 directly.
    Explicit(f64),
    /// Reactive injection law evaluated on U_t at stage-2 entry.
    LvrtLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: SystemParams,
    /// Grid voltage while the fault is applied.
    pub ug2: f64,
    pub t_f: f64,
    /// Clearing time; `None` for a permanent fault.
    pub t_c: Option<f64>,
    /// Requested during-fault active current (capped by converter capacity).
    pub i_rd2: f64,
    pub i_rq2_mode: ReactiveMode,
    /// Lets a capacity-exhausted fault proceed with i_rd2 = 0.
    pub allow_zero_active_current: bool,
    pub horizon: f64,
    pub dt: f64,
    pub sample_interval: f64,
    /// Holds omega_r during stages 2 and 3.
    pub freeze_rotor_during_fault: bool,
}

impl Scenario {
    pub fn new(
        params: SystemParams,
        ug2: f64,
        t_f: f64,
        t_c: Option<f64>,
        i_rd2: f64,
        i_rq2_mode: ReactiveMode,
    ) -> Self {
        let mut s = Self {
            params,
            ug2,
            t_f,
            t_c,
            i_rd2,
            i_rq2_mode,
            allow_zero_active_current: false,
            horizon: 0.0,
            dt: DEFAULT_DT,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
            freeze_rotor_during_fault: false,
        };
        s.horizon = s.auto_horizon();
        s
    }

    /// Fault clearing followed by the worst-case ramp and a settling margin.
    pub fn auto_horizon(&self) -> f64 {
        let p = &self.params;
        match self.t_c {
            Some(t_c) => {
                let i_rd1 = p.xs * p.pin / (p.xm * p.omega_r_ref);
                let ramp = ((i_rd1 - self.i_rd2).max(0.0) / p.kramp).min(30.0);
                t_c + ramp + DEFAULT_SETTLE
            }
            None => self.t_f + 3.0,
        }
    }

    /// Same scenario cleared `duration` seconds after fault onset, with the
    /// horizon re-derived.
    pub fn with_fault_duration(&self, duration: f64) -> Self {
        let mut s = self.clone();
        s.t_c = Some(self.t_f + duration);
        s.horizon = s.auto_horizon();
        s
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.params.validate()?;
        let bad = |name: &'static str, reason: String| Err(ModelError::InvalidParameter { name, reason });
        if !(self.ug2.is_finite() && self.ug2 >= 0.0) {
            return bad("ug2", format!("must be finite and >= 0, got {}", self.ug2));
        }
        if !(self.t_f.is_finite() && self.t_f >= 0.0) {
            return bad("t_f", format!("must be finite and >= 0, got {}", self.t_f));
        }
        if let Some(t_c) = self.t_c {
            if !(t_c.is_finite() && t_c >= self.t_f) {
                return bad("t_c", format!("must be finite and >= t_f, got {t_c}"));
            }
        }
        if !(self.i_rd2.is_finite() && self.i_rd2 >= 0.0) {
            return bad("i_rd2", format!("must be finite and >= 0, got {}", self.i_rd2));
        }
        if let ReactiveMode::Explicit(v) = self.i_rq2_mode {
            if !v.is_finite() {
                return bad("i_rq2", format!("must be finite, got {v}"));
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", format!("must be finite and > 0, got {}", self.dt));
        }
        if !(self.sample_interval.is_finite() && self.sample_interval >= self.dt) {
            return bad("sample_interval", format!("must be >= dt, got {}", self.sample_interval));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon", format!("must be finite and > 0, got {}", self.horizon));
        }
        Ok(())
    }
}

/// Reactive and active currents applied when the LVRT control engages.
///
/// The q current grows in magnitude with the voltage deficit (negative,
/// capacitive injection); the d current is whatever capacity remains.
pub fn lvrt_currents(
    scenario: &Scenario,
    ut_at_onset: f64,
    i_rq1_s: f64,
) -> Result<LvrtCurrents, ModelError> {
    let p = &scenario.params;
    let i_rq2 = match scenario.i_rq2_mode {
        ReactiveMode::Explicit(v) => v,
        ReactiveMode::LvrtLaw => {
            if !(0.0..=1.2).contains(&ut_at_onset) {
                return Err(ModelError::InvalidParameter {
                    name: "ut_at_onset",
                    reason: format!("terminal voltage {ut_at_onset} outside [0, 1.2]"),
                });
            }
            i_rq1_s - p.ke * (LVRT_KNEE_VOLTAGE - ut_at_onset)
        }
    };
    let headroom = p.imax * p.imax - i_rq2 * i_rq2;
    if headroom < 0.0 {
        if scenario.allow_zero_active_current {
            return Ok(LvrtCurrents { i_rd2: 0.0, i_rq2 });
        }
        return Err(ModelError::CapacityExhausted { i_rq2: i_rq2.abs(), imax: p.imax });
    }
    Ok(LvrtCurrents {
        i_rd2: scenario.i_rd2.min(headroom.sqrt()).max(0.0),
        i_rq2,
    })
}

/// LVRT currents that apply when a fault hits the pre-fault SEP, with the
/// reactive law (if used) evaluated on the terminal voltage right after the
/// grid voltage drops.
pub fn fault_onset_currents(scenario: &Scenario) -> Result<LvrtCurrents, ModelError> {
    let p = &scenario.params;
    let sep = sep_stage1(p)?;
    let x0 = FullState::from_equilibrium(&sep, p);
    let mut mode = Mode::pre_fault(p);
    mode.ug = scenario.ug2;
    let onset = solve_stage_algebraic(&x0, scenario.t_f, &mode, p)?;
    lvrt_currents(scenario, onset.ut, sep.i_rq)
}

/// Discrete part of the hybrid state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub stage: StageId,
    pub ug: f64,
    pub lvrt: LvrtCurrents,
    /// Start of the active current ramp.
    pub t_clear: f64,
}

impl Mode {
    pub fn pre_fault(p: &SystemParams) -> Self {
        Self {
            stage: StageId::PreFault,
            ug: p.ug_nominal,
            lvrt: LvrtCurrents { i_rd2: 0.0, i_rq2: 0.0 },
            t_clear: f64::INFINITY,
        }
    }

    /// Rotor current readout for this stage.
    pub fn rotor_currents(&self, x: &FullState, t: f64, p: &SystemParams) -> (f64, ReactiveCurrent) {
        match self.stage {
            StageId::PreFault | StageId::LatePostFault => {
                (x.rsc_command(p), ReactiveCurrent::Tvc { z: x.z_tvc })
            }
            StageId::DuringFault => (self.lvrt.i_rd2, ReactiveCurrent::Fixed(self.lvrt.i_rq2)),
            StageId::EarlyPostFault => (self.ramp_current(t, p), ReactiveCurrent::Tvc { z: x.z_tvc }),
        }
    }

    pub fn ramp_current(&self, t: f64, p: &SystemParams) -> f64 {
        self.lvrt.i_rd2 + p.kramp * (t - self.t_clear)
    }
}

pub fn solve_stage_algebraic(
    x: &FullState,
    t: f64,
    mode: &Mode,
    p: &SystemParams,
) -> Result<AlgebraicOutputs, ModelError> {
    let (i_rd, i_rq) = mode.rotor_currents(x, t, p);
    solve_algebraic(p, x.omega_r, mode.ug, x.phi_pll, i_rd, i_rq, None)
}

/// Time derivative of the continuous state in the given stage.
pub fn derivatives(
    x: &FullState,
    t: f64,
    mode: &Mode,
    scenario: &Scenario,
) -> Result<FullState, ModelError> {
    let p = &scenario.params;
    let out = solve_stage_algebraic(x, t, mode, p)?;
    let w0 = p.omega0();
    let d_x_pll = p.kipll * out.u_tq / w0;
    let d_phi = p.kppll * out.u_tq + w0 * (x.x_pll - 1.0);
    let rotor_frozen = scenario.freeze_rotor_during_fault
        && matches!(mode.stage, StageId::DuringFault | StageId::EarlyPostFault);
    let d_omega = if rotor_frozen {
        0.0
    } else {
        (p.pin - out.pt) / (2.0 * p.h * x.omega_r)
    };
    let (d_w, d_z) = match mode.stage {
        StageId::PreFault | StageId::LatePostFault => (
            p.kiw * (x.omega_r - p.omega_r_ref),
            p.kiv * (out.ut - p.ut_ref),
        ),
        StageId::DuringFault => (0.0, 0.0),
        StageId::EarlyPostFault => (0.0, p.kiv * (out.ut - p.ut_ref)),
    };
    Ok(FullState {
        omega_r: d_omega,
        w_rsc: d_w,
        z_tvc: d_z,
        x_pll: d_x_pll,
        phi_pll: d_phi,
    })
}

/// Switching condition crossed inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub to: StageId,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: FullState,
    /// Time reached; earlier than `t + dt` when an event truncated the step.
    pub t: f64,
    pub event: Option<SwitchEvent>,
}

/// Whether the state-dependent switching condition out of `mode` holds.
///
/// `fault_active` gates the LVRT entry: the terminal voltage can only sag
/// below the entry level while the grid voltage is depressed.
pub fn switch_condition(
    x: &FullState,
    t: f64,
    mode: &Mode,
    fault_active: bool,
    p: &SystemParams,
) -> Result<Option<StageId>, ModelError> {
    match mode.stage {
        StageId::PreFault if fault_active => {
            let out = solve_stage_algebraic(x, t, mode, p)?;
            Ok((out.ut < LVRT_ENTRY_VOLTAGE).then_some(StageId::DuringFault))
        }
        StageId::EarlyPostFault => {
            // Hand over when the ramp meets what the speed loop commands; with
            // a held rotor this is the pre-fault operating current.
            Ok((mode.ramp_current(t, p) >= x.rsc_command(p)).then_some(StageId::LatePostFault))
        }
        _ => Ok(None),
    }
}

/// Advances one RK4 step and reports any switching condition crossed within
/// `(t, t + dt]`, localized to [`EVENT_TOL`].
pub fn step(
    x: &FullState,
    t: f64,
    dt: f64,
    mode: &Mode,
    fault_active: bool,
    scenario: &Scenario,
) -> Result<StepResult, ModelError> {
    if !(dt > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "dt",
            reason: format!("step must be > 0, got {dt}"),
        });
    }
    let p = &scenario.params;
    let mut f = |tt: f64, y: &[f64; 5]| {
        derivatives(&FullState::from_array(*y), tt, mode, scenario).map(FullState::to_array)
    };
    let y0 = x.to_array();
    let y1 = rk4_step(&mut f, t, &y0, dt)?;
    let next = FullState::from_array(y1);
    if !next.is_finite() {
        return Err(ModelError::Blowup { t: t + dt });
    }
    let Some(to) = switch_condition(&next, t + dt, mode, fault_active, p)? else {
        return Ok(StepResult { state: next, t: t + dt, event: None });
    };
    let mut trigger = |tt: f64, y: &[f64; 5]| {
        switch_condition(&FullState::from_array(*y), tt, mode, fault_active, p)
            .map(|s| s.is_some())
    };
    let (tau, y) = locate_crossing(&mut f, t, &y0, dt, EVENT_TOL, &mut trigger)?;
    Ok(StepResult {
        state: FullState::from_array(y),
        t: t + tau,
        event: Some(SwitchEvent { to, t: t + tau }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub state: FullState,
    pub out: AlgebraicOutputs,
    pub stage: StageId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub from: StageId,
    pub to: StageId,
    pub t: f64,
    /// Continuous state at the switch (identical on both sides).
    #[serde(skip)]
    pub state: FullState,
    /// Active current readout just before and just after the switch.
    #[serde(skip)]
    pub i_rd_before: f64,
    #[serde(skip)]
    pub i_rd_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Termination {
    Horizon,
    /// Non-finite state or failed algebraic solve.
    Blowup { t: f64 },
    /// PLL angle passed a full cycle beyond the terminal stage's saddle.
    AngleRunaway { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub transitions: Vec<Transition>,
    pub termination: Termination,
    pub t_f: f64,
    pub t_c: Option<f64>,
    pub ug2: f64,
    pub horizon: f64,
    pub lvrt: Option<LvrtCurrents>,
    pub sep: EquilibriumPoint,
    /// Angle threshold in force when the run ended.
    pub runaway_threshold: f64,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,omega_r,i_rd,i_rq,x_pll,phi_pll,u_td,u_tq,U_t,P_t,stage";

impl Trajectory {
    pub fn final_stage(&self) -> StageId {
        self.transitions
            .last()
            .map(|tr| tr.to)
            .unwrap_or(StageId::PreFault)
    }

    pub fn entered(&self, stage: StageId) -> Option<&Transition> {
        self.transitions.iter().find(|tr| tr.to == stage)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * 120);
        s.push_str(TRAJECTORY_CSV_HEADER);
        s.push('\n');
        for smp in &self.samples {
            let v = [
                smp.t,
                smp.state.omega_r,
                smp.out.i_rd,
                smp.out.i_rq,
                smp.state.x_pll,
                smp.state.phi_pll,
                smp.out.u_td,
                smp.out.u_tq,
                smp.out.ut,
                smp.out.pt,
            ];
            for x in v {
                s.push_str(&fmt_sig(x));
                s.push(',');
            }
            s.push_str(&smp.stage.to_string());
            s.push('\n');
        }
        s
    }

    /// Transition log as a JSON array of `{from, to, t}`.
    pub fn transitions_json(&self) -> String {
        serde_json::to_string_pretty(&self.transitions).expect("plain data serializes")
    }
}

struct Runner<'a> {
    sc: &'a Scenario,
    mode: Mode,
    fault_active: bool,
    i_rq1_s: f64,
    permanent: bool,
    threshold: f64,
    transitions: Vec<Transition>,
    lvrt: Option<LvrtCurrents>,
}

enum Halt {
    Blowup(f64),
    Runaway(f64),
}

impl Runner<'_> {
    fn switch(&mut self, to: StageId, t: f64, x: &FullState) -> Result<(), ModelError> {
        let p = &self.sc.params;
        let from = self.mode.stage;
        debug_assert_eq!(from.next(), Some(to));
        let i_rd_before = self.mode.rotor_currents(x, t, p).0;
        match to {
            StageId::DuringFault => {
                let out = solve_stage_algebraic(x, t, &self.mode, p)?;
                let lvrt = lvrt_currents(self.sc, out.ut, self.i_rq1_s)?;
                self.mode.lvrt = lvrt;
                self.lvrt = Some(lvrt);
            }
            StageId::EarlyPostFault => self.mode.t_clear = t,
            _ => {}
        }
        self.mode.stage = to;
        let i_rd_after = self.mode.rotor_currents(x, t, p).0;
        self.transitions.push(Transition {
            from,
            to,
            t,
            state: *x,
            i_rd_before,
            i_rd_after,
        });
        self.threshold = self.runaway_threshold(x);
        Ok(())
    }

    fn runaway_threshold(&self, x: &FullState) -> f64 {
        let p = &self.sc.params;
        let phi_u = match self.mode.stage {
            StageId::PreFault | StageId::LatePostFault => Some(std::f64::consts::PI - self.sep_phi()),
            StageId::DuringFault | StageId::EarlyPostFault => correction_coefficients(p, x.omega_r)
                .ok()
                .and_then(|k| frozen_equilibria(&k, self.mode.ug, self.mode.lvrt.i_rd2, p).pair())
                .map(|(_, u)| u),
        };
        phi_u.unwrap_or(std::f64::consts::PI) + 2.0 * std::f64::consts::PI
    }

    fn sep_phi(&self) -> f64 {
        let p = &self.sc.params;
        (p.pin * p.xg / (p.ug_nominal * p.ut_ref)).clamp(-1.0, 1.0).asin()
    }

    /// Stages in which an angle runaway can no longer be undone by a switch.
    fn runaway_is_final(&self) -> bool {
        match self.mode.stage {
            StageId::EarlyPostFault | StageId::LatePostFault => true,
            StageId::DuringFault => self.permanent,
            StageId::PreFault => !self.fault_active || self.permanent,
        }
    }

    fn apply_schedule(&mut self, t: f64, x: &FullState) -> Result<(), ModelError> {
        let p = self.sc.params;
        if t == self.sc.t_f && !self.fault_active && self.mode.stage == StageId::PreFault {
            self.fault_active = true;
            self.mode.ug = self.sc.ug2;
        }
        if Some(t) == self.sc.t_c && self.fault_active {
            self.fault_active = false;
            self.mode.ug = p.ug_nominal;
            if self.mode.stage == StageId::DuringFault {
                self.switch(StageId::EarlyPostFault, t, x)?;
            }
        }
        self.check_immediate(t, x)
    }

    fn check_immediate(&mut self, t: f64, x: &FullState) -> Result<(), ModelError> {
        while let Some(to) =
            switch_condition(x, t, &self.mode, self.fault_active, &self.sc.params)?
        {
            self.switch(to, t, x)?;
        }
        Ok(())
    }

    /// Integrates from `t` to `t_end` (no scheduled times strictly inside).
    fn advance(&mut self, t: &mut f64, x: &mut FullState, t_end: f64) -> Result<(), Halt> {
        while *t < t_end {
            let n = substeps(t_end - *t, self.sc.dt);
            let h = (t_end - *t) / n as f64;
            let res = step(x, *t, h, &self.mode, self.fault_active, self.sc)
                .map_err(|_| Halt::Blowup(*t + h))?;
            *x = res.state;
            *t = if res.event.is_none() && n == 1 { t_end } else { res.t };
            if let Some(ev) = res.event {
                self.switch(ev.to, ev.t, x).map_err(|_| Halt::Blowup(ev.t))?;
                self.check_immediate(ev.t, x).map_err(|_| Halt::Blowup(ev.t))?;
            }
            if self.runaway_is_final() && x.phi_pll > self.threshold {
                return Err(Halt::Runaway(*t));
            }
        }
        Ok(())
    }
}

/// Runs the staged model from the pre-fault SEP to the horizon.
///
/// Numerical blowup and angle runaway end the run early and are reported in
/// [`Trajectory::termination`]; only invalid scenarios are errors.
pub fn simulate(scenario: &Scenario) -> Result<Trajectory, ModelError> {
    scenario.validate()?;
    let p = scenario.params;
    let sep = sep_stage1(&p)?;
    if let ReactiveMode::Explicit(_) = scenario.i_rq2_mode {
        // Surface capacity problems before integrating.
        lvrt_currents(scenario, 0.0, sep.i_rq)?;
    }
    let mut runner = Runner {
        sc: scenario,
        mode: Mode::pre_fault(&p),
        fault_active: false,
        i_rq1_s: sep.i_rq,
        permanent: scenario.t_c.is_none(),
        threshold: 0.0,
        transitions: Vec::new(),
        lvrt: None,
    };
    let mut x = FullState::from_equilibrium(&sep, &p);
    runner.threshold = runner.runaway_threshold(&x);
    let mut t = 0.0;

    let mut breakpoints: Vec<f64> = vec![scenario.t_f];
    breakpoints.extend(scenario.t_c);
    breakpoints.retain(|&b| b < scenario.horizon);

    let n_samples = (scenario.horizon / scenario.sample_interval + 1e-9).floor() as usize;
    let mut samples = Vec::with_capacity(n_samples + 2);
    let sample = |t: f64, x: &FullState, mode: &Mode| -> Option<Sample> {
        solve_stage_algebraic(x, t, mode, &p).ok().map(|out| Sample {
            t,
            state: *x,
            out,
            stage: mode.stage,
        })
    };

    let mut termination = Termination::Horizon;
    if scenario.t_f == 0.0 {
        if let Err(_) = runner.apply_schedule(0.0, &x) {
            termination = Termination::Blowup { t: 0.0 };
        }
    }
    samples.extend(sample(0.0, &x, &runner.mode));

    'outer: for k in 1..=n_samples {
        if termination != Termination::Horizon {
            break;
        }
        let t_sample = (k as f64 * scenario.sample_interval).min(scenario.horizon);
        loop {
            let next_bp = breakpoints.iter().copied().find(|&b| b > t && b <= t_sample);
            let target = next_bp.unwrap_or(t_sample);
            match runner.advance(&mut t, &mut x, target) {
                Ok(()) => {}
                Err(Halt::Blowup(tb)) => {
                    termination = Termination::Blowup { t: tb };
                    break 'outer;
                }
                Err(Halt::Runaway(tr)) => {
                    termination = Termination::AngleRunaway { t: tr };
                    samples.extend(sample(t, &x, &runner.mode));
                    break 'outer;
                }
            }
            if let Some(bp) = next_bp {
                t = bp;
                if runner.apply_schedule(bp, &x).is_err() {
                    termination = Termination::Blowup { t: bp };
                    break 'outer;
                }
            }
            if t >= t_sample {
                break;
            }
        }
        t = t_sample;
        match sample(t, &x, &runner.mode) {
            Some(s) => samples.push(s),
            None => {
                termination = Termination::Blowup { t };
                break;
            }
        }
    }

    Ok(Trajectory {
        samples,
        transitions: runner.transitions,
        termination,
        t_f: scenario.t_f,
        t_c: scenario.t_c,
        ug2: scenario.ug2,
        horizon: scenario.horizon,
        lvrt: runner.lvrt,
        sep,
        runaway_threshold: runner.threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Stable,
    Unstable,
    Indeterminate,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Outcome::Stable => "stable",
            Outcome::Unstable => "unstable",
            Outcome::Indeterminate => "indeterminate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub reason: String,
}

/// Final-stage stability of a simulated run.
///
/// Stable when every sample in the last [`CLASSIFY_WINDOW`] seconds sits
/// within the angle and PLL-integrator tolerances of the terminal stage's
/// SEP, evaluated at the sample's rotor speed and active current.
/// Runs that end before the terminal stage has lasted that long are
/// Indeterminate.
pub fn classify_outcome(traj: &Trajectory, p: &SystemParams) -> Verdict {
    let verdict = |outcome, reason: String| Verdict { outcome, reason };
    match traj.termination {
        Termination::Blowup { t } => {
            return verdict(Outcome::Unstable, format!("non-finite state at t = {t:.6} s"))
        }
        Termination::AngleRunaway { t } => {
            return verdict(Outcome::Unstable, format!("phi_pll passed the saddle by a full cycle at t = {t:.6} s"))
        }
        Termination::Horizon => {}
    }
    let entered_fault = traj.entered(StageId::DuringFault).is_some();
    let terminal = match (entered_fault, traj.t_c) {
        (false, _) => StageId::PreFault,
        (true, None) => StageId::DuringFault,
        (true, Some(_)) => StageId::LatePostFault,
    };
    let last = traj.samples.last().expect("simulate records t = 0");
    if traj.final_stage() != terminal {
        return verdict(
            Outcome::Indeterminate,
            format!("run ended in stage {} before reaching stage {terminal}", traj.final_stage()),
        );
    }
    let disturbed_from = if traj.horizon <= traj.t_f { 0.0 } else { traj.t_c.unwrap_or(traj.t_f) };
    let settled_from = traj.transitions.last().map(|tr| tr.t).unwrap_or(0.0).max(disturbed_from);
    let window_start = last.t - CLASSIFY_WINDOW;
    if window_start < settled_from - 1e-12 {
        return verdict(
            Outcome::Indeterminate,
            format!("horizon leaves less than {CLASSIFY_WINDOW} s in the terminal stage"),
        );
    }
    // Lock angle of the frozen PLL at each sample: slow rotor and RSC states
    // are treated as parameters, so a slow mechanical swing is not mistaken
    // for loss of synchronism.
    let lock_angle = |s: &Sample| -> Option<f64> {
        let (ug, i_rd) = match terminal {
            StageId::DuringFault => (traj.ug2, traj.lvrt.expect("fault entered").i_rd2),
            _ => (p.ug_nominal, s.out.i_rd),
        };
        let k = correction_coefficients(p, s.state.omega_r).ok()?;
        frozen_equilibria(&k, ug, i_rd, p).pair().map(|(phi_s, _)| phi_s)
    };
    let window = traj.samples.iter().filter(|s| s.t >= window_start - 1e-12);
    for s in window {
        let Some(phi_ref) = lock_angle(s) else {
            return verdict(
                Outcome::Unstable,
                format!("stage {terminal} has no equilibrium at t = {:.4} s", s.t),
            );
        };
        let dphi = (s.state.phi_pll - phi_ref).abs();
        let dx = (s.state.x_pll - 1.0).abs();
        if !(dphi < CLASSIFY_PHI_TOL && dx < CLASSIFY_X_TOL) {
            return verdict(
                Outcome::Unstable,
                format!("no convergence: |dphi| = {dphi:.4} rad, |x-1| = {dx:.4} at t = {:.4} s", s.t),
            );
        }
    }
    verdict(Outcome::Stable, format!("settled at phi_pll = {:.4} rad", last.state.phi_pll))
}

/// Integration replay of both sides of one stage switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchCheck {
    pub from: StageId,
    pub to: StageId,
    pub t: f64,
    /// Max-norm gap between the old stage's state at the switch and the
    /// recorded switch state.
    pub jump_in: Option<f64>,
    /// Max-norm gap between the next sample and the new stage integrated
    /// from the recorded switch state.
    pub jump_out: Option<f64>,
}

fn replay(
    mut x: FullState,
    mut t: f64,
    t_end: f64,
    mode: &Mode,
    fault_active: bool,
    sc: &Scenario,
) -> Result<(FullState, f64, Option<SwitchEvent>), ModelError> {
    while t < t_end {
        let n = substeps(t_end - t, sc.dt);
        let h = (t_end - t) / n as f64;
        let res = step(&x, t, h, mode, fault_active, sc)?;
        x = res.state;
        t = if res.event.is_none() && n == 1 { t_end } else { res.t };
        if res.event.is_some() {
            return Ok((x, t, res.event));
        }
    }
    Ok((x, t, None))
}

fn max_gap(a: &FullState, b: &FullState) -> f64 {
    a.to_array().iter().zip(b.to_array()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Replays the integration around every switch of `traj`. Sides that cannot
/// be replayed from a neighbouring sample (two switches within one sample
/// interval) are `None`.
pub fn switch_continuity(sc: &Scenario, traj: &Trajectory) -> Result<Vec<SwitchCheck>, ModelError> {
    let p = &sc.params;
    let si = sc.sample_interval;
    let fault_on = |t: f64| t >= sc.t_f && sc.t_c.map_or(true, |c| t < c);
    let mode = |stage: StageId, t: f64| Mode {
        stage,
        ug: if fault_on(t) { sc.ug2 } else { p.ug_nominal },
        lvrt: traj.lvrt.unwrap_or(LvrtCurrents { i_rd2: 0.0, i_rq2: 0.0 }),
        t_clear: sc.t_c.unwrap_or(f64::INFINITY),
    };
    let scheduled = |t: f64| t == sc.t_f || Some(t) == sc.t_c;
    let mut out = Vec::with_capacity(traj.transitions.len());
    for (i, tr) in traj.transitions.iter().enumerate() {
        let prev_switch = if i > 0 { traj.transitions[i - 1].t } else { f64::NEG_INFINITY };
        let next_switch = traj.transitions.get(i + 1).map_or(f64::INFINITY, |n| n.t);

        let jump_in = match traj.samples.iter().rev().find(|s| s.t < tr.t) {
            Some(prev) if prev.stage == tr.from && prev.t > prev_switch => {
                let k = (prev.t / si).round() + 1.0;
                let target = if scheduled(tr.t) { tr.t } else { (k * si).min(sc.horizon) };
                let (x, t, ev) = replay(prev.state, prev.t, target, &mode(tr.from, prev.t), fault_on(prev.t), sc)?;
                let at_switch = if scheduled(tr.t) { ev.is_none() && t == tr.t } else { ev.map(|e| e.t) == Some(tr.t) };
                Some(if at_switch { max_gap(&x, &tr.state) } else { f64::INFINITY })
            }
            _ => None,
        };

        let jump_out = match traj.samples.iter().find(|s| s.t > tr.t) {
            Some(next) if next.t < next_switch && !traj.samples.iter().any(|s| s.t == tr.t && s.stage != tr.to) => {
                let (x, t, ev) = replay(tr.state, tr.t, next.t, &mode(tr.to, tr.t), fault_on(tr.t), sc)?;
                Some(if ev.is_none() && t == next.t { max_gap(&x, &next.state) } else { f64::INFINITY })
            }
            _ => None,
        };
        out.push(SwitchCheck { from: tr.from, to: tr.to, t: tr.t, jump_in, jump_out });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_row(t_c: f64) -> Scenario {
        Scenario::new(SystemParams::reference(), 0.2, 0.5, Some(t_c), 0.34, ReactiveMode::Explicit(-0.93))
    }

    #[test]
    fn undisturbed_run_holds_the_sep() {
        let mut sc = table_row(0.7);
        sc.t_f = 5.0;
        sc.t_c = Some(5.1);
        sc.horizon = 2.0;
        let traj = simulate(&sc).unwrap();
        assert!(traj.transitions.is_empty());
        let x0 = FullState::from_equilibrium(&traj.sep, &sc.params);
        for s in &traj.samples {
            assert!(max_gap(&s.state, &x0) < 1e-9, "drift at t = {}", s.t);
        }
        assert_eq!(classify_outcome(&traj, &sc.params).outcome, Outcome::Stable);
    }

    #[test]
    fn nominal_voltage_fault_changes_nothing() {
        let mut sc = table_row(0.7);
        sc.ug2 = sc.params.ug_nominal;
        let traj = simulate(&sc).unwrap();
        assert!(traj.transitions.is_empty());
        let x0 = FullState::from_equilibrium(&traj.sep, &sc.params);
        assert!(traj.samples.iter().all(|s| max_gap(&s.state, &x0) < 1e-6));
        assert_eq!(classify_outcome(&traj, &sc.params).outcome, Outcome::Stable);
    }

    #[test]
    fn visits_all_stages_in_order() {
        let traj = simulate(&table_row(0.7)).unwrap();
        let seq: Vec<u8> = traj.transitions.iter().map(|t| t.to.number()).collect();
        assert_eq!(seq, vec![2, 3, 4]);
        assert_eq!(traj.transitions[0].t, 0.5);
        assert!((traj.transitions[1].t - 0.7).abs() < 1e-12);
        let ramp_end = 0.7 + (traj.sep.i_rd - 0.34) / 0.8;
        assert!((traj.transitions[2].t - ramp_end).abs() < 0.05, "{}", traj.transitions[2].t);
    }

    #[test]
    fn state_is_continuous_across_switches() {
        for sc in [table_row(0.7), table_row(0.9)] {
            let traj = simulate(&sc).unwrap();
            let checks = switch_continuity(&sc, &traj).unwrap();
            assert_eq!(checks.len(), 3);
            for c in checks {
                let jin = c.jump_in.expect("replayable");
                let jout = c.jump_out.expect("replayable");
                assert!(jin <= 1e-12 && jout <= 1e-12, "{c:?}");
            }
        }
    }

    #[test]
    fn late_post_fault_entry_is_bumpless() {
        let traj = simulate(&table_row(0.7)).unwrap();
        let tr = traj.entered(StageId::LatePostFault).unwrap();
        let p = SystemParams::reference();
        assert!((tr.i_rd_after - tr.i_rd_before).abs() <= p.kramp * EVENT_TOL * 2.0, "{tr:?}");
    }

    #[test]
    fn fault_currents_follow_the_stage() {
        let sc = table_row(0.7);
        let traj = simulate(&sc).unwrap();
        for s in traj.samples.iter().filter(|s| s.stage == StageId::DuringFault) {
            assert_eq!(s.out.i_rd, 0.34);
            assert_eq!(s.out.i_rq, -0.93);
        }
        let s3: Vec<_> = traj.samples.iter().filter(|s| s.stage == StageId::EarlyPostFault).collect();
        assert!(s3.windows(2).all(|w| w[1].out.i_rd > w[0].out.i_rd));
    }

    #[test]
    fn step_halving_converges() {
        let mut sc = table_row(0.7);
        let coarse = simulate(&sc).unwrap();
        sc.dt /= 2.0;
        let fine = simulate(&sc).unwrap();
        let (a, b) = (coarse.samples.last().unwrap(), fine.samples.last().unwrap());
        assert_eq!(a.t, b.t);
        assert!((a.state.phi_pll - b.state.phi_pll).abs() < 1e-4);
    }

    #[test]
    fn permanent_fault_stays_in_stage_two() {
        let mut sc = table_row(0.7);
        sc.t_c = None;
        sc.horizon = sc.auto_horizon();
        let traj = simulate(&sc).unwrap();
        assert_eq!(traj.final_stage(), StageId::DuringFault);
        assert!(matches!(traj.termination, Termination::AngleRunaway { .. }));
        assert_eq!(classify_outcome(&traj, &sc.params).outcome, Outcome::Unstable);
    }

    #[test]
    fn capacity_is_checked_before_integration() {
        let mut sc = table_row(0.7);
        sc.i_rq2_mode = ReactiveMode::Explicit(-1.2);
        assert!(matches!(simulate(&sc), Err(ModelError::CapacityExhausted { .. })));
        sc.allow_zero_active_current = true;
        let traj = simulate(&sc).unwrap();
        assert_eq!(traj.lvrt.unwrap().i_rd2, 0.0);
    }

    #[test]
    fn lvrt_law_uses_onset_voltage() {
        let mut sc = table_row(0.7);
        sc.i_rq2_mode = ReactiveMode::LvrtLaw;
        let c = fault_onset_currents(&sc).unwrap();
        assert!(c.i_rq2 < sc.params.imax && c.i_rq2 < 0.0);
        let l = simulate(&sc).unwrap().lvrt.unwrap();
        assert_eq!(l.i_rd2, c.i_rd2);
        assert!((l.i_rq2 - c.i_rq2).abs() < 1e-9);
    }

    #[test]
    fn stage_ids_round_trip() {
        for n in 1..=4u8 {
            assert_eq!(StageId::try_from(n).unwrap().number(), n);
        }
        assert!(StageId::try_from(5).is_err());
    }
}
