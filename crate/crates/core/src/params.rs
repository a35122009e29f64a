//! Per-unit system constants for the DFIG grid-tied system.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, ModelError};

/// Name of the built-in preset holding the canonical parameter set.
pub const REFERENCE_PRESET: &str = "paper-appendix";

/// Grid, machine and controller constants, all in per unit unless noted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Fundamental frequency in Hz.
    pub f0: f64,
    /// Line reactance between terminal and grid.
    pub xg: f64,
    /// Stator reactance (leakage + mutual).
    pub xs: f64,
    /// Mutual reactance.
    pub xm: f64,
    /// Inertia time constant in s.
    pub h: f64,
    /// Mechanical input power.
    pub pin: f64,
    pub ug_nominal: f64,
    pub ut_ref: f64,
    pub omega_r_ref: f64,
    /// Rotor speed control PI gains.
    pub kpw: f64,
    pub kiw: f64,
    /// Terminal voltage control PI gains.
    pub kpv: f64,
    pub kiv: f64,
    /// PLL PI gains.
    pub kppll: f64,
    pub kipll: f64,
    /// Reactive current ratio of the LVRT law.
    pub ke: f64,
    /// Converter current limit.
    pub imax: f64,
    /// Active current ramp rate in p.u./s.
    pub kramp: f64,
}

impl SystemParams {
    /// Base grid, 2 MW / 690 V machine with its controller tuning.
    pub fn reference() -> Self {
        Self {
            f0: 50.0,
            xg: 0.5,
            xs: 0.171 + 3.9,
            xm: 3.9,
            h: 4.0,
            pin: 0.8,
            ug_nominal: 1.0,
            ut_ref: 1.0,
            omega_r_ref: 1.2,
            kpw: 1.0,
            kiw: 5.0,
            kpv: 1.0,
            kiv: 10.0,
            kppll: 60.0,
            kipll: 1400.0,
            ke: 1.5,
            imax: 1.1,
            kramp: 0.8,
        }
    }

    /// Angular frequency of the common reference frame, rad/s.
    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.f0
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("f0", self.f0),
            ("xg", self.xg),
            ("xs", self.xs),
            ("xm", self.xm),
            ("h", self.h),
            ("ug_nominal", self.ug_nominal),
            ("ut_ref", self.ut_ref),
            ("omega_r_ref", self.omega_r_ref),
            ("kpw", self.kpw),
            ("kiw", self.kiw),
            ("kpv", self.kpv),
            ("kiv", self.kiv),
            ("kppll", self.kppll),
            ("kipll", self.kipll),
            ("ke", self.ke),
            ("imax", self.imax),
            ("kramp", self.kramp),
        ];
        for (name, value) in positive {
            check_positive(name, value)?;
        }
        if !(self.pin.is_finite() && self.pin >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "pin",
                reason: format!("must be finite and >= 0, got {}", self.pin),
            });
        }
        let ratio = self.pin * self.xg / (self.ug_nominal * self.ut_ref);
        if ratio > 1.0 {
            return Err(ModelError::NoEquilibrium { ratio });
        }
        Ok(())
    }

    pub fn to_file(&self) -> ParamsFile {
        ParamsFile {
            grid: GridSection {
                f0: Some(self.f0),
                xg: Some(self.xg),
                ug_nominal: Some(self.ug_nominal),
            },
            machine: MachineSection {
                xs: Some(self.xs),
                xm: Some(self.xm),
                h: Some(self.h),
                pin: Some(self.pin),
                omega_r_ref: Some(self.omega_r_ref),
            },
            rsc: PiSection {
                kp: Some(self.kpw),
                ki: Some(self.kiw),
            },
            tvc: TvcSection {
                kp: Some(self.kpv),
                ki: Some(self.kiv),
                ut_ref: Some(self.ut_ref),
            },
            pll: PiSection {
                kp: Some(self.kppll),
                ki: Some(self.kipll),
            },
            lvrt: LvrtSection {
                ke: Some(self.ke),
                imax: Some(self.imax),
            },
            ramp: RampSection {
                kramp: Some(self.kramp),
            },
        }
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Sectioned, partially specified parameter overrides as they appear in a
/// config file (`pll.kp = 60`, `grid.xg = 0.5`, ...).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub machine: MachineSection,
    #[serde(default)]
    pub rsc: PiSection,
    #[serde(default)]
    pub tvc: TvcSection,
    #[serde(default)]
    pub pll: PiSection,
    #[serde(default)]
    pub lvrt: LvrtSection,
    #[serde(default)]
    pub ramp: RampSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub f0: Option<f64>,
    pub xg: Option<f64>,
    pub ug_nominal: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSection {
    pub xs: Option<f64>,
    pub xm: Option<f64>,
    pub h: Option<f64>,
    pub pin: Option<f64>,
    pub omega_r_ref: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiSection {
    pub kp: Option<f64>,
    pub ki: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvcSection {
    pub kp: Option<f64>,
    pub ki: Option<f64>,
    pub ut_ref: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvrtSection {
    pub ke: Option<f64>,
    pub imax: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSection {
    pub kramp: Option<f64>,
}

impl ParamsFile {
    /// Applies every value present in `self` on top of `base`.
    pub fn apply(&self, base: &SystemParams) -> SystemParams {
        let mut p = *base;
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut p.f0, self.grid.f0);
        set(&mut p.xg, self.grid.xg);
        set(&mut p.ug_nominal, self.grid.ug_nominal);
        set(&mut p.xs, self.machine.xs);
        set(&mut p.xm, self.machine.xm);
        set(&mut p.h, self.machine.h);
        set(&mut p.pin, self.machine.pin);
        set(&mut p.omega_r_ref, self.machine.omega_r_ref);
        set(&mut p.kpw, self.rsc.kp);
        set(&mut p.kiw, self.rsc.ki);
        set(&mut p.kpv, self.tvc.kp);
        set(&mut p.kiv, self.tvc.ki);
        set(&mut p.ut_ref, self.tvc.ut_ref);
        set(&mut p.kppll, self.pll.kp);
        set(&mut p.kipll, self.pll.ki);
        set(&mut p.ke, self.lvrt.ke);
        set(&mut p.imax, self.lvrt.imax);
        set(&mut p.kramp, self.ramp.kramp);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_valid() {
        let p = SystemParams::reference();
        p.validate().unwrap();
        assert!((p.xs - 4.071).abs() < 1e-12);
        assert!((p.omega0() - 314.159_265_358_979_3).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_positive_gain() {
        let p = SystemParams {
            kipll: 0.0,
            ..SystemParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(ModelError::InvalidParameter { name: "kipll", .. })
        ));
    }

    #[test]
    fn rejects_power_beyond_transfer_limit() {
        let p = SystemParams {
            pin: 2.5,
            ..SystemParams::default()
        };
        assert!(matches!(p.validate(), Err(ModelError::NoEquilibrium { .. })));
    }

    #[test]
    fn file_round_trip_is_identity() {
        let p = SystemParams::reference();
        let file = p.to_file();
        assert_eq!(file.apply(&SystemParams { f0: 60.0, ..p }), p);
    }
}
