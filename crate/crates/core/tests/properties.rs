use std::f64::consts::PI;

use proptest::prelude::*;

use tsslab::boa::{cct_boa, BoaOptions};
use tsslab::cct::CctSearch;
use tsslab::config::ScenarioConfig;
use tsslab::eac::{cct_eac, ClearingAngle, ClearingGeometry};
use tsslab::gse::{gse_from_stage, GseState};
use tsslab::model::correction_coefficients;
use tsslab::report::{fmt_sig, CctValue};
use tsslab::sim::{lvrt_currents, ReactiveMode, Scenario};
use tsslab::SystemParams;

fn p() -> SystemParams {
    SystemParams::reference()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn coefficients_collapse_at_unit_speed(omega in 0.5f64..1.5) {
        let p = p();
        let k = correction_coefficients(&p, omega).unwrap();
        let one = correction_coefficients(&p, 1.0).unwrap();
        prop_assert!((one.a - one.c).abs() < 1e-15 && (one.b - one.d).abs() < 1e-15);
        prop_assert!(k.a > 0.0 && k.b > 0.0 && k.c > 0.0 && k.d > 0.0);
        prop_assert_eq!(omega > 1.0, k.c < k.a);
    }

    #[test]
    fn frozen_equilibria_are_rest_points(ug in 0.05f64..1.0, i_rd in 0.0f64..0.8) {
        let p = p();
        let g = gse_from_stage(&p, ug, i_rd, 1.2).unwrap();
        if let Some((s, u)) = g.equilibria().pair() {
            prop_assert!(g.u_tq(s).abs() < 1e-12 && g.u_tq(u).abs() < 1e-12);
            prop_assert!(s <= PI / 2.0 + 1e-12 && (s + u - PI).abs() < 1e-12);
            let j = g.jacobian(&GseState { phi: s, phi_dot: 0.0 });
            prop_assert!(j[1][0] <= 0.0);
        } else {
            prop_assert!(g.pm > g.pe_amp);
        }
    }

    #[test]
    fn clearing_angle_balances_areas(ug2 in 0.0f64..0.7, i_rd2 in 0.05f64..0.7) {
        let p = p();
        let Ok(geo) = ClearingGeometry::new(&p, ug2, 1.0, i_rd2, 1.2) else { return Ok(()) };
        match geo.closed_form() {
            ClearingAngle::Angle(phi) => {
                prop_assert!(phi > geo.phi_s1 && phi < geo.phi_u3);
                prop_assert!(geo.area_balance(phi).abs() < 1e-8);
                prop_assert!((geo.by_quadrature().angle().unwrap() - phi).abs() < 1e-9);
            }
            other => prop_assert_eq!(other, geo.by_quadrature()),
        }
    }

    #[test]
    fn lvrt_currents_respect_capacity(ut in 0.0f64..1.2, ke in 0.0f64..3.0, i_rd2 in 0.0f64..1.5) {
        let mut p = p();
        p.ke = ke;
        let mut sc = Scenario::new(p, 0.2, 0.5, Some(0.7), i_rd2, ReactiveMode::LvrtLaw);
        sc.allow_zero_active_current = true;
        let c = lvrt_currents(&sc, ut, -0.43).unwrap();
        prop_assert!(c.i_rd2 >= 0.0 && c.i_rd2 <= i_rd2);
        if c.i_rd2 > 0.0 {
            prop_assert!(c.i_rd2.hypot(c.i_rq2) <= p.imax + 1e-12);
        }
        prop_assert!(c.i_rq2 <= -0.43 + 1e-12 || ut >= 0.9);
    }

    #[test]
    fn fmt_sig_round_trips(v in prop::num::f64::NORMAL) {
        let back: f64 = fmt_sig(v).parse().unwrap();
        prop_assert!(((back - v) / v).abs() < 1e-8, "{} -> {}", v, fmt_sig(v));
    }

    #[test]
    fn bisection_brackets_a_threshold(threshold in 0.001f64..1.49) {
        let s = CctSearch::default();
        let r = s.run(|d| Ok(d <= threshold)).unwrap();
        let CctValue::Finite { cct, bracket } = r else { panic!("{r:?}") };
        prop_assert!(bracket.0 <= threshold && threshold < bracket.1 && bracket.1 - bracket.0 <= s.tol);
        prop_assert_eq!(cct, bracket.0);
    }

    #[test]
    fn config_round_trips(ug2 in 0.0f64..0.9, i_rd2 in 0.0f64..0.8, kp in 1.0f64..100.0, t_c in 0.5f64..2.0) {
        let mut cfg = ScenarioConfig::template();
        cfg.fault.ug2 = ug2;
        cfg.fault.i_rd2 = i_rd2;
        cfg.fault.t_c = Some(t_c);
        cfg.pll.kp = Some(kp);
        let text = cfg.to_toml();
        let back = ScenarioConfig::parse_toml(&text, "x.toml".as_ref()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn equal_areas_are_conservative(ug2 in 0.0f64..0.5, i_rd2 in 0.2f64..0.5) {
        let p = p();
        let sc = Scenario::new(p, ug2, 0.5, None, i_rd2, ReactiveMode::Explicit(-0.93));
        let search = CctSearch::default();
        let (Ok(e), Ok(b)) = (cct_eac(&sc, &search), cct_boa(&sc, &search, &BoaOptions::default())) else {
            return Ok(());
        };
        if let (Some(e), Some(b)) = (e.cct.seconds(), b.seconds()) {
            prop_assert!(e <= b, "eac {} > boa {}", e, b);
        }
    }
}
