//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits non-zero when the set of failing criteria differs from
//! `KNOWN_FAILURES`, so an unexpected regression and an unexpected fix are
//! both reported.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsslab::boa::{boundary_manifold, is_in_boa, is_in_boa_by_manifold, uep_eigenstructure, BoaOptions, ClearingSystems, Membership, BOUNDARY_BAND};
use tsslab::cct::CctSearch;
use tsslab::config::Method;
use tsslab::eac::{ClearingAngle, ClearingGeometry};
use tsslab::gse::{gse_from_stage, gse_step, gse_vs_dae_residual, GseParams, GseState};
use tsslab::model::{correction_coefficients, sep_stage1, uep_stage1};
use tsslab::report::CctValue;
use tsslab::sim::{classify_outcome, simulate, switch_continuity, Outcome, ReactiveMode, Scenario, StageId, DEFAULT_DT, EVENT_TOL};
use tsslab::study::{assess, case_scenario, reproduce_table, AssessOptions, Assessment, TABLE1_REF_BOA, TABLE1_REF_EAC, TABLE1_REF_SIM, TABLE1_ROWS};
use tsslab::SystemParams;

/// Criteria that fail with the reference parameters; see README.
const KNOWN_FAILURES: &[u8] = &[7];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn p() -> SystemParams {
    SystemParams::reference()
}

fn secs(v: &Option<CctValue>) -> f64 {
    v.as_ref().and_then(CctValue::seconds).unwrap_or(f64::NAN)
}

fn c1() -> Verdict {
    let p = p();
    let sep = sep_stage1(&p).unwrap();
    let k = correction_coefficients(&p, sep.omega_r).unwrap();
    let got = [k.a, k.b, k.c, k.d];
    let want = [0.89, 0.85, 0.87, 1.00];
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.005);
    verdict(ok, format!("(a, b, c, d) = ({:.4}, {:.4}, {:.4}, {:.4})", k.a, k.b, k.c, k.d))
}

fn c2() -> Verdict {
    let p = p();
    let s = sep_stage1(&p).unwrap();
    let u = uep_stage1(&p).unwrap();
    let as_vec = |e: &tsslab::model::EquilibriumPoint| [e.omega_r, e.i_rd, e.i_rq, e.x_pll, e.phi_pll];
    let close = |g: [f64; 5], w: [f64; 5]| g.iter().zip(w).all(|(a, b)| (a - b).abs() <= 0.01);
    let (gs, gu) = (as_vec(&s), as_vec(&u));
    let ok = close(gs, [1.2, 0.7, -0.43, 1.0, 0.41]) && close(gu, [1.2, 0.7, -4.25, 1.0, 2.73]);
    verdict(ok, format!("SEP {gs:.4?}, UEP {gu:.4?}"))
}

fn c3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let ug2 = rng.gen_range(0.05..0.7);
        let i_rd2 = rng.gen_range(0.05..0.6);
        let i_rq2 = rng.gen_range(-0.9..-0.1);
        let sc = Scenario::new(p(), ug2, 0.5, None, i_rd2, ReactiveMode::Explicit(i_rq2));
        match gse_vs_dae_residual(&sc, 1.0) {
            Ok(r) => worst = worst.max(r),
            Err(e) => return verdict(false, format!("({ug2:.3}, {i_rd2:.3}, {i_rq2:.3}): {e}")),
        }
    }
    verdict(worst < 1e-8, format!("max |phi_DAE - phi_GSE| over 1 s, 10 scenarios = {worst:.2e} rad"))
}

fn c4() -> Verdict {
    let p = p();
    let omega = sep_stage1(&p).unwrap().omega_r;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    'grid: for i in 0..40 {
        for j in 0..40 {
            let ug2 = 0.02 + 0.6 * i as f64 / 39.0;
            let i_rd2 = 0.05 + 0.65 * j as f64 / 39.0;
            let Ok(g) = ClearingGeometry::new(&p, ug2, p.ug_nominal, i_rd2, omega) else { continue };
            let (ClearingAngle::Angle(a), ClearingAngle::Angle(b)) = (g.closed_form(), g.by_quadrature()) else {
                continue;
            };
            worst = worst.max((a - b).abs());
            n += 1;
            if n == 100 {
                break 'grid;
            }
        }
    }
    verdict(n == 100 && worst < 1e-9, format!("{n} valid points, max |closed form - quadrature root| = {worst:.2e} rad"))
}

fn c5(rows: &[Assessment]) -> Verdict {
    let mut ok = true;
    let mut lines = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        let r = &a.report;
        let (e, b, s) = (secs(&r.cct_eac), secs(&r.cct_boa), secs(&r.cct_sim));
        let row_ok = (e - TABLE1_REF_EAC[i]).abs() <= 0.005
            && (b - TABLE1_REF_BOA[i]).abs() <= 0.005
            && ((s - TABLE1_REF_SIM[i]) / TABLE1_REF_SIM[i]).abs() <= 0.15;
        ok &= row_ok;
        lines.push(format!("row {}: eac {e:.4} boa {b:.4} sim {s:.4}{}", i + 1, if row_ok { "" } else { " <-" }));
    }
    verdict(ok, lines.join("; "))
}

fn c6(rows: &[Assessment]) -> Verdict {
    let eac: Vec<f64> = rows.iter().map(|a| secs(&a.report.cct_eac)).collect();
    let boa: Vec<f64> = rows.iter().map(|a| secs(&a.report.cct_boa)).collect();
    let sim: Vec<f64> = rows.iter().map(|a| secs(&a.report.cct_sim)).collect();
    let constant = |v: &[f64]| v.iter().all(|x| (x - v[0]).abs() < 1e-12 && x.is_finite());
    let monotone = sim.windows(2).all(|w| w[1] <= w[0]);
    let drop = sim[0] - sim[sim.len() - 1];
    let ok = constant(&eac) && constant(&boa) && monotone && drop <= 0.010 && drop >= 0.0;
    verdict(
        ok,
        format!(
            "eac {:.4} const={}, boa {:.4} const={}, sim {:.4} -> {:.4} monotone={monotone} drop {:.1} ms",
            eac[0],
            constant(&eac),
            boa[0],
            constant(&boa),
            sim[0],
            sim[sim.len() - 1],
            drop * 1e3
        ),
    )
}

fn c7() -> Verdict {
    let p = p();
    let want = [Outcome::Stable, Outcome::Stable, Outcome::Unstable];
    let mut ok = true;
    let mut lines = Vec::new();
    for (case, w) in want.iter().enumerate() {
        let sc = case_scenario(&p, case, DEFAULT_DT);
        let traj = simulate(&sc).unwrap();
        let v = classify_outcome(&traj, &p);
        let during: Vec<f64> =
            traj.samples.iter().filter(|s| s.stage == StageId::DuringFault).map(|s| s.state.phi_pll).collect();
        let rises = during.windows(2).all(|w| w[1] >= w[0] - 1e-9) && during.last() > during.first();
        let mut case_ok = v.outcome == *w;
        if case == 1 {
            case_ok &= rises;
        }
        ok &= case_ok;
        lines.push(format!(
            "case {}: {} (want {}), phi_pll {:.3} -> {:.3} during fault",
            case + 1,
            v.outcome,
            w,
            during.first().copied().unwrap_or(f64::NAN),
            during.last().copied().unwrap_or(f64::NAN)
        ));
    }
    verdict(ok, lines.join("; "))
}

fn saddle_ok(g: &GseParams) -> Result<(), String> {
    let e = uep_eigenstructure(g).map_err(|e| e.to_string())?;
    if !(e.lambda_unstable > 0.0 && e.lambda_stable < 0.0) {
        return Err(format!("eigenvalues {} {}", e.lambda_unstable, e.lambda_stable));
    }
    let j = g.jacobian(&GseState { phi: e.phi_u, phi_dot: 0.0 });
    for (l, v) in [(e.lambda_unstable, e.v_unstable), (e.lambda_stable, e.v_stable)] {
        let r0 = j[0][0] * v[0] + j[0][1] * v[1] - l * v[0];
        let r1 = j[1][0] * v[0] + j[1][1] * v[1] - l * v[1];
        if r0.abs().max(r1.abs()) > 1e-9 * l.abs().max(1.0) {
            return Err(format!("eigenvector residual {r0:e} {r1:e}"));
        }
    }
    Ok(())
}

fn c8(table1: &[Assessment]) -> Verdict {
    let p = p();
    let sep = sep_stage1(&p).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, pass: bool, detail: String| {
        ok &= pass;
        notes.push(format!("{name} {}{detail}", if pass { "ok" } else { "FAIL " }));
    };

    // Continuity and bumpless entry on every table-1 row cleared early.
    let mut worst_jump: f64 = 0.0;
    let mut worst_bump: f64 = 0.0;
    let mut replayed = 0;
    for &(ug2, i_rq2, i_rd2) in &TABLE1_ROWS {
        let sc = Scenario::new(p, ug2, 0.5, Some(0.58), i_rd2, ReactiveMode::Explicit(i_rq2));
        let traj = simulate(&sc).unwrap();
        for c in switch_continuity(&sc, &traj).unwrap() {
            for j in [c.jump_in, c.jump_out].into_iter().flatten() {
                worst_jump = worst_jump.max(j);
                replayed += 1;
            }
        }
        if let Some(tr) = traj.entered(StageId::LatePostFault) {
            worst_bump = worst_bump.max((tr.i_rd_after - tr.i_rd_before).abs());
        }
    }
    check("continuity", worst_jump <= 1e-12 && replayed >= 30, format!(" ({replayed} replays, max {worst_jump:.1e})"));
    check("bumpless", worst_bump <= 2.0 * p.kramp * EVENT_TOL, format!(" (max |di_rd| {worst_bump:.1e})"));

    // Undamped swing equation conserves energy.
    let g = gse_from_stage(&p, 0.2, 0.34, sep.omega_r).unwrap().undamped();
    let mut s = GseState { phi: sep.phi_pll, phi_dot: 0.0 };
    let e0 = g.energy(&s);
    let n = (1.0 / DEFAULT_DT).round() as usize;
    let mut drift: f64 = 0.0;
    for _ in 0..n {
        s = gse_step(&s, &g, DEFAULT_DT);
        drift = drift.max((g.energy(&s) - e0).abs());
    }
    check("energy", drift < 1e-6, format!(" (drift {drift:.1e})"));

    // Saddle structure at every frozen UEP.
    let mut saddles = 0;
    let mut saddle_err = None;
    let mut systems = vec![gse_from_stage(&p, p.ug_nominal, sep.i_rd, sep.omega_r).unwrap()];
    for &(ug2, i_rq2, i_rd2) in &TABLE1_ROWS {
        let sc = Scenario::new(p, ug2, 0.5, Some(0.6), i_rd2, ReactiveMode::Explicit(i_rq2));
        let sys = ClearingSystems::from_scenario(&sc).unwrap();
        systems.extend([sys.fault, sys.recovered]);
    }
    for g in systems.iter().filter(|g| g.equilibria().pair().is_some()) {
        saddles += 1;
        if let Err(e) = saddle_ok(g) {
            saddle_err.get_or_insert(e);
        }
    }
    check("saddles", saddle_err.is_none() && saddles >= 7, format!(" ({saddles} UEPs{})", saddle_err.map(|e| format!(": {e}")).unwrap_or_default()));

    // Forward simulation and manifold side agree away from the boundary.
    let sc = Scenario::new(p, 0.2, 0.5, Some(0.8), 0.34, ReactiveMode::Explicit(-0.93));
    let g = ClearingSystems::from_scenario(&sc).unwrap().recovered;
    let b = boundary_manifold(&g, 60.0, None).unwrap();
    let opts = BoaOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut compared, mut disagree, mut banded) = (0, 0, 0);
    for _ in 0..1000 {
        let phi = rng.gen_range(b.phi_u - TAU..b.phi_u);
        let x = rng.gen_range(0.97..1.03);
        if b.distance(phi, x) < BOUNDARY_BAND {
            banded += 1;
            continue;
        }
        let sim = is_in_boa(phi, x, &g, &opts).unwrap().verdict;
        let man = is_in_boa_by_manifold(phi, x, &b).verdict;
        if sim == Membership::Indeterminate || man == Membership::Indeterminate {
            continue;
        }
        compared += 1;
        disagree += (sim != man) as usize;
    }
    check("boa-agreement", disagree == 0 && compared >= 900, format!(" ({compared} compared, {disagree} disagree, {banded} in band)"));

    // Equal areas never exceed the basin estimate.
    let order = table1.iter().all(|a| secs(&a.report.cct_eac) <= secs(&a.report.cct_boa));
    check("eac<=boa", order, String::new());

    // Byte-identical reruns.
    let sc = case_scenario(&p, 0, DEFAULT_DT);
    let opts = AssessOptions::for_scenario(&sc, CctSearch::default());
    let run = || {
        let a = assess("det", &sc, &[Method::Simulate, Method::Eac, Method::Boa], &opts);
        (a.trajectory.unwrap().to_csv(), a.report.csv_row())
    };
    check("determinism", run() == run(), String::new());

    verdict(ok, notes.join(", "))
}

fn c9() -> Verdict {
    let p = p();
    let mut sc = case_scenario(&p, 0, 50e-6);
    let a = simulate(&sc).unwrap();
    sc.dt = 25e-6;
    let b = simulate(&sc).unwrap();
    let (x, y) = (a.samples.last().unwrap(), b.samples.last().unwrap());
    let d = (x.state.phi_pll - y.state.phi_pll).abs();
    verdict(x.t == y.t && d < 1e-4, format!("terminal phi_pll {:.8} vs {:.8}, change {d:.2e} rad", x.state.phi_pll, y.state.phi_pll))
}

fn main() {
    let p = p();
    let started = Instant::now();
    let table1 = reproduce_table(1, &p, DEFAULT_DT, CctSearch::default());
    let table2 = reproduce_table(2, &p, DEFAULT_DT, CctSearch::default());
    let results: Vec<(u8, &str, Verdict)> = vec![
        (1, "correction coefficients at the stage-1 SEP", c1()),
        (2, "stage-1 SEP and UEP", c2()),
        (3, "swing-equation reduction is exact", c3()),
        (4, "closed-form clearing angle vs quadrature", c4()),
        (5, "CCT table 1", c5(&table1)),
        (6, "CCT table 2, ramp-rate sweep", c6(&table2)),
        (7, "cases I/II/III classification", c7()),
        (8, "property suite", c8(&table1)),
        (9, "step-halving convergence", c9()),
    ];
    let mut failed = BTreeSet::new();
    for (n, name, v) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let known = if !v.pass && KNOWN_FAILURES.contains(n) { " [known]" } else { "" };
        println!("{tag} criterion {n}: {name}{known} | {}", v.detail);
        if !v.pass {
            failed.insert(*n);
        }
    }
    let expected: BTreeSet<u8> = KNOWN_FAILURES.iter().copied().collect();
    println!(
        "acceptance: {} of {} pass in {:.1} s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed != expected {
        println!("unexpected change in failing criteria: got {failed:?}, expected {expected:?}");
        std::process::exit(1);
    }
}
