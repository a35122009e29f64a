//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string. The `*_json`
//! functions hold the logic and run natively in tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tsslab::boa::{boundary_manifold, cct_boa, is_in_boa, BoaOptions, ClearingSystems};
use tsslab::cct::CctSearch;
use tsslab::eac::{cct_eac, power_angle_curves};
use tsslab::report::CctValue;
use tsslab::sim::{classify_outcome, simulate, ReactiveMode, Scenario};
use tsslab::SystemParams;

/// Coarser than the batch default; keeps the page responsive.
const WEB_DT: f64 = 1e-4;
const T_F: f64 = 0.5;
const I_RQ2: f64 = -0.93;

fn scenario(ug2: f64, i_rd2: f64, fault_duration: f64, kramp: f64) -> Result<Scenario, String> {
    let mut p = SystemParams::reference();
    p.kramp = kramp;
    let mut sc = Scenario::new(p, ug2, T_F, Some(T_F + fault_duration), i_rd2, ReactiveMode::Explicit(I_RQ2));
    sc.dt = WEB_DT;
    sc.sample_interval = 2e-3;
    sc.validate().map_err(|e| e.to_string())?;
    Ok(sc)
}

fn seconds(v: &CctValue) -> Option<f64> {
    v.seconds()
}

#[derive(Serialize)]
struct Series {
    t: Vec<f64>,
    phi_pll: Vec<f64>,
    ut: Vec<f64>,
    i_rd: Vec<f64>,
    omega_r: Vec<f64>,
    stage: Vec<u8>,
    transitions: Vec<(u8, f64)>,
    outcome: String,
    reason: String,
}

pub fn simulate_json(ug2: f64, i_rd2: f64, fault_duration: f64, kramp: f64) -> Result<String, String> {
    let sc = scenario(ug2, i_rd2, fault_duration, kramp)?;
    let traj = simulate(&sc).map_err(|e| e.to_string())?;
    let v = classify_outcome(&traj, &sc.params);
    let s = &traj.samples;
    let out = Series {
        t: s.iter().map(|x| x.t).collect(),
        phi_pll: s.iter().map(|x| x.state.phi_pll).collect(),
        ut: s.iter().map(|x| x.out.ut).collect(),
        i_rd: s.iter().map(|x| x.out.i_rd).collect(),
        omega_r: s.iter().map(|x| x.state.omega_r).collect(),
        stage: s.iter().map(|x| x.stage.number()).collect(),
        transitions: traj.transitions.iter().map(|tr| (tr.to.number(), tr.t)).collect(),
        outcome: v.outcome.to_string(),
        reason: v.reason,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Portrait {
    boundary: Vec<(f64, f64)>,
    phi_s: f64,
    phi_u: f64,
    fault_path: Vec<(f64, f64)>,
    clearing: (f64, f64),
    inside: bool,
    cct_boa: Option<f64>,
}

pub fn boa_json(ug2: f64, i_rd2: f64, fault_duration: f64) -> Result<String, String> {
    let sc = scenario(ug2, i_rd2, fault_duration, SystemParams::reference().kramp)?;
    let sys = ClearingSystems::from_scenario(&sc).map_err(|e| e.to_string())?;
    let b = boundary_manifold(&sys.recovered, 40.0, None).map_err(|e| e.to_string())?;
    let opts = BoaOptions { dt: WEB_DT, ..BoaOptions::default() };
    let n = 100;
    let fault_path = (0..=n)
        .map(|i| {
            let y = sys.clearing_state(fault_duration * i as f64 / n as f64, WEB_DT);
            (y[1], y[0])
        })
        .collect();
    let y = sys.clearing_state(fault_duration, WEB_DT);
    let inside = is_in_boa(y[1], y[0], &sys.recovered, &opts).map_err(|e| e.to_string())?.inside();
    let cct = cct_boa(&sc, &CctSearch::default(), &opts).map_err(|e| e.to_string())?;
    let out = Portrait {
        boundary: b.polyline(),
        phi_s: b.phi_s,
        phi_u: b.phi_u,
        fault_path,
        clearing: (y[1], y[0]),
        inside,
        cct_boa: seconds(&cct),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curves {
    phi: Vec<f64>,
    pe2: Vec<f64>,
    pe3: Vec<f64>,
    pm: f64,
    phi_s1: f64,
    phi_u3: f64,
    phi_cr: Option<f64>,
    cct_eac: Option<f64>,
    verdict: String,
}

pub fn eac_json(ug2: f64, i_rd2: f64) -> Result<String, String> {
    let sc = scenario(ug2, i_rd2, 0.1, SystemParams::reference().kramp)?;
    let r = cct_eac(&sc, &CctSearch::default()).map_err(|e| e.to_string())?;
    let rows = power_angle_curves(&r.geometry, 181);
    let out = Curves {
        phi: rows.iter().map(|r| r[0]).collect(),
        pe2: rows.iter().map(|r| r[1]).collect(),
        pe3: rows.iter().map(|r| r[2]).collect(),
        pm: r.geometry.pm,
        phi_s1: r.geometry.phi_s1,
        phi_u3: r.geometry.phi_u3,
        phi_cr: r.angle.angle(),
        cct_eac: seconds(&r.cct),
        verdict: r.cct.cell(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Time series of one fault-and-recovery run.
#[wasm_bindgen]
pub fn run_simulation(ug2: f64, i_rd2: f64, fault_duration: f64, kramp: f64) -> Result<String, JsError> {
    js(simulate_json(ug2, i_rd2, fault_duration, kramp))
}

/// Basin boundary of the recovered system with the fault-on PLL path.
#[wasm_bindgen]
pub fn basin_portrait(ug2: f64, i_rd2: f64, fault_duration: f64) -> Result<String, JsError> {
    js(boa_json(ug2, i_rd2, fault_duration))
}

/// Power-angle curves, critical clearing angle and time.
#[wasm_bindgen]
pub fn equal_area(ug2: f64, i_rd2: f64) -> Result<String, JsError> {
    js(eac_json(ug2, i_rd2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn simulation_series_are_aligned() {
        let v: Value = serde_json::from_str(&simulate_json(0.2, 0.34, 0.2, 0.8).unwrap()).unwrap();
        let n = v["t"].as_array().unwrap().len();
        assert!(n > 100);
        assert_eq!(v["phi_pll"].as_array().unwrap().len(), n);
        assert_eq!(v["outcome"], "stable");
    }

    #[test]
    fn portrait_flags_late_clearing() {
        let early: Value = serde_json::from_str(&boa_json(0.2, 0.34, 0.2).unwrap()).unwrap();
        let late: Value = serde_json::from_str(&boa_json(0.2, 0.34, 0.35).unwrap()).unwrap();
        assert_eq!(early["inside"], true);
        assert_eq!(late["inside"], false);
        let cct = early["cct_boa"].as_f64().unwrap();
        assert!((cct - 0.283).abs() < 0.005, "{cct}");
    }

    #[test]
    fn equal_area_angle_in_range() {
        let v: Value = serde_json::from_str(&eac_json(0.2, 0.34).unwrap()).unwrap();
        let phi_cr = v["phi_cr"].as_f64().unwrap();
        assert!(phi_cr > v["phi_s1"].as_f64().unwrap() && phi_cr < v["phi_u3"].as_f64().unwrap());
        assert_eq!(v["phi"].as_array().unwrap().len(), 181);
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(simulate_json(-0.1, 0.34, 0.2, 0.8).is_err());
    }
}
