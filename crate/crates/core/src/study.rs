//! Scenario assessment across methods, the reference CCT tables, and the
//! plot-data bundles.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::boa::{boundary_manifold, cct_boa, is_in_boa, BoaOptions, ClearingSystems};
use crate::cct::{cct_sim, CctSearch};
use crate::config::Method;
use crate::eac::{areas_permanent_fault, cct_eac, permanent_fault_stable, power_angle_curves, ClearingAngle, ClearingGeometry};
use crate::error::ModelError;
use crate::gse::gse_from_stage;
use crate::model::sep_stage1;
use crate::params::SystemParams;
use crate::report::{fmt_sig, write_table, CctReport, CctValue};
use crate::sim::{classify_outcome, fault_onset_currents, simulate, ReactiveMode, Scenario, StageId, Trajectory, Verdict};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssessOptions {
    pub search: CctSearch,
    pub boa: BoaOptions,
}

impl AssessOptions {
    /// Defaults with the integration step of `sc`.
    pub fn for_scenario(sc: &Scenario, search: CctSearch) -> Self {
        Self {
            search,
            boa: BoaOptions { dt: sc.dt, ..BoaOptions::default() },
        }
    }
}

/// Everything one scenario produced.
#[derive(Debug, Clone)]
pub struct Assessment {
    pub report: CctReport,
    pub trajectory: Option<Trajectory>,
    pub verdict: Option<Verdict>,
    /// Errors that are not a legitimate stability outcome.
    pub failures: Vec<(Method, ModelError)>,
}

/// Errors that describe the physics of the scenario rather than a failure
/// of the toolkit.
pub fn is_scientific_outcome(e: &ModelError) -> bool {
    matches!(
        e,
        ModelError::EquilibriumLost { .. } | ModelError::DegenerateEquilibrium { .. } | ModelError::NoVoltageRecovery { .. }
    )
}

/// Checks that must pass before any method runs.
pub fn preflight(sc: &Scenario) -> Result<(), ModelError> {
    sc.validate()?;
    sep_stage1(&sc.params)?;
    fault_onset_currents(sc)?;
    Ok(())
}

pub fn assess(label: &str, sc: &Scenario, methods: &[Method], opts: &AssessOptions) -> Assessment {
    let onset = fault_onset_currents(sc);
    let (i_rd2, i_rq2) = match (&onset, sc.i_rq2_mode) {
        (Ok(c), _) => (c.i_rd2, c.i_rq2),
        (Err(_), ReactiveMode::Explicit(v)) => (sc.i_rd2, v),
        (Err(_), ReactiveMode::LvrtLaw) => (sc.i_rd2, f64::NAN),
    };
    let mut report = CctReport::new(label, sc.ug2, i_rq2, i_rd2, sc.params.kramp);
    if let Ok(c) = &onset {
        if c.i_rd2 < sc.i_rd2 {
            report
                .diagnostics
                .push(format!("i_rd2 capped from {} to {} by converter capacity", fmt_sig(sc.i_rd2), fmt_sig(c.i_rd2)));
        }
    }
    let mut out = Assessment {
        report,
        trajectory: None,
        verdict: None,
        failures: Vec::new(),
    };
    let record = |out: &mut Assessment, m: Method, e: ModelError| -> CctValue {
        out.report.diagnostics.push(format!("{}: {e}", m.name()));
        if !is_scientific_outcome(&e) {
            out.failures.push((m, e.clone()));
        }
        CctValue::NotApplicable { reason: e.to_string() }
    };
    for &m in methods {
        match m {
            Method::Simulate => match simulate(sc) {
                Ok(traj) => {
                    let v = classify_outcome(&traj, &sc.params);
                    out.report.diagnostics.push(format!("simulate: {} ({})", v.outcome, v.reason));
                    out.verdict = Some(v);
                    out.trajectory = Some(traj);
                }
                Err(e) => {
                    record(&mut out, m, e);
                }
            },
            Method::Cct => {
                out.report.cct_sim = Some(cct_sim(sc, &opts.search).unwrap_or_else(|e| record(&mut out, m, e)));
            }
            Method::Eac => {
                if sc.t_c.is_none() {
                    permanent_fault_diagnostic(sc, &mut out.report);
                }
                match cct_eac(sc, &opts.search) {
                    Ok(r) => {
                        out.report.phi_cr = r.angle.angle();
                        out.report.cct_eac = Some(r.cct);
                    }
                    Err(e) => out.report.cct_eac = Some(record(&mut out, m, e)),
                }
            }
            Method::Boa => {
                out.report.cct_boa = Some(cct_boa(sc, &opts.search, &opts.boa).unwrap_or_else(|e| record(&mut out, m, e)));
            }
        }
    }
    out
}

fn permanent_fault_diagnostic(sc: &Scenario, report: &mut CctReport) {
    let Ok(sys) = ClearingSystems::from_scenario(sc) else { return };
    let phi_s1 = sys.start[1];
    let msg = match areas_permanent_fault(&sys.fault, phi_s1) {
        Ok(a) => format!(
            "permanent fault: S+ = {}, S- = {}, first swing {}",
            fmt_sig(a.s_plus),
            fmt_sig(a.s_minus),
            if permanent_fault_stable(&sys.fault, phi_s1) { "stable" } else { "unstable" }
        ),
        Err(e) => format!("permanent fault: {e}; first swing unstable"),
    };
    report.diagnostics.push(msg);
}

/// Fault depth, reactive current and active current of each reference row.
pub const TABLE1_ROWS: [(f64, f64, f64); 6] = [
    (0.1, -1.0, 0.3),
    (0.1, -1.0, 0.4),
    (0.2, -0.93, 0.34),
    (0.2, -0.93, 0.5),
    (0.3, -0.86, 0.5),
    (0.3, -0.86, 0.6),
];
/// Reference CCTs for [`TABLE1_ROWS`], s.
pub const TABLE1_REF_SIM: [f64; 6] = [0.157, 0.114, 0.282, 0.124, 0.252, 0.140];
pub const TABLE1_REF_BOA: [f64; 6] = [0.158, 0.115, 0.283, 0.125, 0.253, 0.141];
pub const TABLE1_REF_EAC: [f64; 6] = [0.143, 0.099, 0.270, 0.109, 0.239, 0.125];

/// Ramp rates covering the ends of each reference band.
pub const TABLE2_KRAMP: [f64; 12] = [0.2, 1.2, 1.3, 2.9, 3.0, 4.5, 4.6, 6.1, 6.2, 7.8, 7.9, 9.6];
pub const TABLE2_ROW: (f64, f64, f64) = (0.2, -0.93, 0.34);

pub const DEFAULT_T_F: f64 = 0.5;

pub fn table_scenarios(table: u8, p: &SystemParams, dt: f64) -> Vec<(String, Scenario)> {
    let make = |p: SystemParams, (ug2, i_rq2, i_rd2): (f64, f64, f64)| {
        let mut sc = Scenario::new(p, ug2, DEFAULT_T_F, None, i_rd2, ReactiveMode::Explicit(i_rq2));
        sc.dt = dt;
        sc
    };
    match table {
        1 => TABLE1_ROWS
            .iter()
            .enumerate()
            .map(|(i, &row)| (format!("t1r{}", i + 1), make(*p, row)))
            .collect(),
        2 => TABLE2_KRAMP
            .iter()
            .map(|&k| {
                let q = SystemParams { kramp: k, ..*p };
                (format!("kramp{}", fmt_sig(k)), make(q, TABLE2_ROW))
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// All three CCT routes for every row, in row order.
pub fn reproduce_table(table: u8, p: &SystemParams, dt: f64, search: CctSearch) -> Vec<Assessment> {
    let methods = [Method::Cct, Method::Boa, Method::Eac];
    table_scenarios(table, p, dt)
        .into_par_iter()
        .map(|(label, sc)| assess(&label, &sc, &methods, &AssessOptions::for_scenario(&sc, search)))
        .collect()
}

/// Named CSV payloads of one figure.
pub type Bundle = Vec<(String, String)>;

pub const FIGURES: [&str; 5] = ["fig4", "fig5", "fig6", "fig8", "fig9"];

fn markers_csv(rows: &[(&str, f64)]) -> String {
    let mut s = String::from("name,value\n");
    for (n, v) in rows {
        s.push_str(&format!("{n},{}\n", fmt_sig(*v)));
    }
    s
}

fn timeseries_csv(traj: &Trajectory, ug_nominal: f64) -> String {
    let rows = traj.samples.iter().map(|s| {
        let ug = match (traj.t_c, s.t >= traj.t_f) {
            (_, false) => ug_nominal,
            (Some(t_c), true) if s.t >= t_c => ug_nominal,
            _ => traj.ug2,
        };
        vec![
            s.t,
            ug,
            s.out.ut,
            s.out.i_rd,
            s.out.i_rq,
            s.state.phi_pll,
            s.state.omega_r,
            s.stage.number() as f64,
        ]
    });
    write_table("t,Ug,U_t,i_rd,i_rq,phi_pll,omega_r,stage", rows)
}

/// Plot data for a figure id; `no_fault` turns the time-series figure into
/// an undisturbed run.
pub fn export_figure(id: &str, p: &SystemParams, dt: f64, no_fault: bool) -> Result<Bundle, ModelError> {
    match id {
        "fig4" => fig4(p, dt, no_fault),
        "fig5" => fig5(p, dt),
        "fig6" => fig6(p),
        "fig8" => fig8(p, dt),
        "fig9" => fig9(p),
        other => Err(ModelError::InvalidParameter {
            name: "figure",
            reason: format!("unknown figure `{other}` (expected one of {})", FIGURES.join(", ")),
        }),
    }
}

fn fig4(p: &SystemParams, dt: f64, no_fault: bool) -> Result<Bundle, ModelError> {
    let ug2 = if no_fault { p.ug_nominal } else { 0.4 };
    let mut sc = Scenario::new(*p, ug2, 1.5, Some(2.1), 0.34, ReactiveMode::LvrtLaw);
    sc.dt = dt;
    sc.horizon = sc.horizon.max(6.0);
    let traj = simulate(&sc)?;
    Ok(vec![
        ("fig4_timeseries.csv".into(), timeseries_csv(&traj, p.ug_nominal)),
        ("fig4_transitions.json".into(), traj.transitions_json()),
    ])
}

fn fig5(p: &SystemParams, dt: f64) -> Result<Bundle, ModelError> {
    let (ug2, i_rq2, i_rd2) = (0.2, -0.93, 0.28);
    let sep = sep_stage1(p)?;
    let g1 = gse_from_stage(p, p.ug_nominal, sep.i_rd, sep.omega_r)?;
    let g2 = gse_from_stage(p, ug2, i_rd2, sep.omega_r)?;
    let curves = (0..=360).map(|i| {
        let phi = PI * i as f64 / 360.0;
        vec![phi, g1.pe_amp * phi.sin(), g2.pe_amp * phi.sin(), g1.pm, g2.pm]
    });
    let mut markers = vec![("phi_s1", sep.phi_pll)];
    match areas_permanent_fault(&g2, sep.phi_pll) {
        Ok(a) => markers.extend([
            ("phi_s2", a.phi_split),
            ("phi_u2", a.phi_end),
            ("s_plus", a.s_plus),
            ("s_minus", a.s_minus),
            ("stable", if permanent_fault_stable(&g2, sep.phi_pll) { 1.0 } else { 0.0 }),
        ]),
        Err(_) => markers.push(("stable", 0.0)),
    }
    let mut sc = Scenario::new(*p, ug2, DEFAULT_T_F, None, i_rd2, ReactiveMode::Explicit(i_rq2));
    sc.dt = dt;
    let traj = simulate(&sc)?;
    Ok(vec![
        ("fig5_power_angle.csv".into(), write_table("phi,Pe1,Pe2,Pm1,Pm2", curves)),
        ("fig5_markers.csv".into(), markers_csv(&markers)),
        ("fig5_timeseries.csv".into(), timeseries_csv(&traj, p.ug_nominal)),
    ])
}

fn fig6(p: &SystemParams) -> Result<Bundle, ModelError> {
    let sep = sep_stage1(p)?;
    let mut bundle = Vec::new();
    let mut markers = String::from("i_rd3,phi_s,phi_u\n");
    for i_rd3 in [0.34, sep.i_rd] {
        let g = gse_from_stage(p, p.ug_nominal, i_rd3, sep.omega_r)?;
        let b = boundary_manifold(&g, 60.0, None)?;
        markers.push_str(&format!("{},{},{}\n", fmt_sig(i_rd3), fmt_sig(b.phi_s), fmt_sig(b.phi_u)));
        bundle.push((format!("fig6_boundary_{}.csv", fmt_sig((i_rd3 * 100.0).round() / 100.0)), b.to_csv()));
    }
    bundle.push(("fig6_markers.csv".into(), markers));
    Ok(bundle)
}

/// Ride-through cases: `(i_rd2, t_c)` with a 0.2 p.u. sag from 0.5 s.
pub const CASES: [(f64, f64); 3] = [(0.3, 1.1), (0.4, 0.782), (0.4, 0.783)];

pub fn case_scenario(p: &SystemParams, case: usize, dt: f64) -> Scenario {
    let (i_rd2, t_c) = CASES[case];
    let mut sc = Scenario::new(*p, 0.2, DEFAULT_T_F, Some(t_c), i_rd2, ReactiveMode::Explicit(-0.93));
    sc.dt = dt;
    sc
}

fn fig8(p: &SystemParams, dt: f64) -> Result<Bundle, ModelError> {
    let mut bundle = Vec::new();
    let mut markers = String::from("case,phi,x,inside_boa3o,outcome\n");
    for case in 0..CASES.len() {
        let sc = case_scenario(p, case, dt);
        let sys = ClearingSystems::from_scenario(&sc)?;
        let b = boundary_manifold(&sys.recovered, 60.0, None)?;
        let traj = simulate(&sc)?;
        let verdict = classify_outcome(&traj, p);
        let rows = traj
            .samples
            .iter()
            .filter(|s| s.stage != StageId::PreFault)
            .map(|s| vec![s.t, s.state.phi_pll, s.state.x_pll, s.stage.number() as f64]);
        let n = case + 1;
        bundle.push((format!("fig8_case{n}_boundary.csv"), b.to_csv()));
        bundle.push((format!("fig8_case{n}_trajectory.csv"), write_table("t,phi_pll,x_pll,stage", rows)));
        if let Some(tr) = traj.entered(StageId::EarlyPostFault) {
            let (phi, x) = (tr.state.phi_pll, tr.state.x_pll);
            let opts = BoaOptions { dt, ..BoaOptions::default() };
            let inside = is_in_boa(phi, x, &sys.recovered, &opts)?.inside();
            markers.push_str(&format!(
                "{n},{},{},{},{}\n",
                fmt_sig(phi),
                fmt_sig(x),
                u8::from(inside),
                verdict.outcome
            ));
        }
    }
    bundle.push(("fig8_markers.csv".into(), markers));
    Ok(bundle)
}

fn fig9(p: &SystemParams) -> Result<Bundle, ModelError> {
    let sep = sep_stage1(p)?;
    let geo = ClearingGeometry::new(p, 0.2, p.ug_nominal, 0.34, sep.omega_r)?;
    let mut markers = vec![("phi_s1", geo.phi_s1), ("phi_u3", geo.phi_u3)];
    match geo.closed_form() {
        ClearingAngle::Angle(phi) => markers.push(("phi_cr", phi)),
        ClearingAngle::AlwaysStable => markers.push(("phi_cr", f64::INFINITY)),
        ClearingAngle::AlwaysUnstable => markers.push(("phi_cr", f64::NEG_INFINITY)),
    }
    Ok(vec![
        ("fig9_power_angle.csv".into(), write_table("phi,Pe2,Pe3,Pm", power_angle_curves(&geo, 361))),
        ("fig9_markers.csv".into(), markers_csv(&markers)),
    ])
}
