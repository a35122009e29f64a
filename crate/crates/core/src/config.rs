//! Scenario configuration files, parameter presets, sweep specifications
//! and run manifests.
//!
//! Configs are TOML (sections plus dotted keys such as `pll.kp = 60`); a
//! file ending in `.json` is read as JSON with the same structure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cct::CctSearch;
use crate::params::{
    GridSection, LvrtSection, MachineSection, ParamsFile, PiSection, RampSection, SystemParams, TvcSection,
    REFERENCE_PRESET,
};
use crate::sim::{ReactiveMode, Scenario, DEFAULT_DT, DEFAULT_SAMPLE_INTERVAL};

pub const PRESET_DIR_ENV: &str = "TSSLAB_PRESET_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset `{name}` (built-in: {REFERENCE_PRESET}; searched {searched})")]
    UnknownPreset { name: String, searched: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One run of the staged model with the configured clearing time.
    Simulate,
    /// Full-model critical clearing time by bisection.
    Cct,
    Eac,
    Boa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Simulate => "simulate",
            Method::Cct => "cct",
            Method::Eac => "eac",
            Method::Boa => "boa",
        }
    }
}

/// Reactive current during the fault: a number, or `"lvrt-law"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReactiveSpec {
    Value(f64),
    Law(LawTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LawTag {
    #[serde(rename = "lvrt-law")]
    LvrtLaw,
}

impl From<ReactiveSpec> for ReactiveMode {
    fn from(r: ReactiveSpec) -> Self {
        match r {
            ReactiveSpec::Value(v) => ReactiveMode::Explicit(v),
            ReactiveSpec::Law(_) => ReactiveMode::LvrtLaw,
        }
    }
}

impl From<ReactiveMode> for ReactiveSpec {
    fn from(m: ReactiveMode) -> Self {
        match m {
            ReactiveMode::Explicit(v) => ReactiveSpec::Value(v),
            ReactiveMode::LvrtLaw => ReactiveSpec::Law(LawTag::LvrtLaw),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub ug2: f64,
    #[serde(default = "default_t_f")]
    pub t_f: f64,
    /// Omitted for a permanent fault.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_c: Option<f64>,
    pub i_rd2: f64,
    pub i_rq2: ReactiveSpec,
    #[serde(default)]
    pub allow_zero_active_current: bool,
}

fn default_t_f() -> f64 {
    0.5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Defaults to clearing + ramp + settling time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    #[serde(default)]
    pub freeze_rotor_during_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CctSection {
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_hi() -> f64 {
    CctSearch::default().hi
}

fn default_tol() -> f64 {
    CctSearch::default().tol
}

impl Default for CctSection {
    fn default() -> Self {
        let s = CctSearch::default();
        Self { lo: s.lo, hi: s.hi, tol: s.tol }
    }
}

impl From<&CctSection> for CctSearch {
    fn from(c: &CctSection) -> Self {
        CctSearch { lo: c.lo, hi: c.hi, tol: c.tol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    Ug2,
    IRd2,
    IRq2,
    Ke,
    Kramp,
    TC,
}

impl AxisName {
    pub fn column(self) -> &'static str {
        match self {
            AxisName::Ug2 => "ug2",
            AxisName::IRd2 => "i_rd2",
            AxisName::IRq2 => "i_rq2",
            AxisName::Ke => "ke",
            AxisName::Kramp => "kramp",
            AxisName::TC => "t_c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub axis: Vec<Axis>,
}

/// One scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub fault: FaultSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub cct: CctSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub grid: GridSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub machine: MachineSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub rsc: PiSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub tvc: TvcSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub pll: PiSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub lvrt: LvrtSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub ramp: RampSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

fn default_name() -> String {
    "scenario".into()
}

fn default_preset() -> String {
    REFERENCE_PRESET.into()
}

fn default_methods() -> Vec<Method> {
    vec![Method::Simulate]
}

impl ScenarioConfig {
    /// Case with a cleared fault that rides through, used by `init`.
    pub fn template() -> Self {
        Self {
            name: "case1".into(),
            preset: REFERENCE_PRESET.into(),
            methods: vec![Method::Simulate, Method::Eac, Method::Boa],
            fault: FaultSection {
                ug2: 0.2,
                t_f: 0.5,
                t_c: Some(1.1),
                i_rd2: 0.3,
                i_rq2: ReactiveSpec::Value(-0.93),
                allow_zero_active_current: false,
            },
            sim: SimSection {
                dt: Some(DEFAULT_DT),
                horizon: None,
                sample_interval: Some(DEFAULT_SAMPLE_INTERVAL),
                freeze_rotor_during_fault: false,
            },
            cct: CctSection::default(),
            grid: Default::default(),
            machine: Default::default(),
            rsc: Default::default(),
            tvc: Default::default(),
            pll: Default::default(),
            lvrt: Default::default(),
            ramp: Default::default(),
            sweep: None,
        }
    }

    pub fn overrides(&self) -> ParamsFile {
        ParamsFile {
            grid: self.grid.clone(),
            machine: self.machine.clone(),
            rsc: self.rsc.clone(),
            tvc: self.tvc.clone(),
            pll: self.pll.clone(),
            lvrt: self.lvrt.clone(),
            ramp: self.ramp.clone(),
        }
    }

    pub fn parse_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn parse_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads a config, choosing the encoding by extension. Returns the raw
    /// text too, for hashing.
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            Self::parse_json(&text, path)?
        } else {
            Self::parse_toml(&text, path)?
        };
        Ok((cfg, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Structural checks that do not need parameters.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.methods.is_empty() {
            return Err(ConfigError::Invalid("`methods` must list at least one of simulate, cct, eac, boa".into()));
        }
        if let Some(sweep) = &self.sweep {
            for axis in &sweep.axis {
                if axis.values.is_empty() {
                    return Err(ConfigError::Invalid(format!("sweep axis `{}` has no values", axis.name.column())));
                }
            }
        }
        Ok(())
    }

    /// Builds the scenario on top of `base` parameters (the resolved preset).
    pub fn scenario(&self, base: &SystemParams) -> Scenario {
        let params = self.overrides().apply(base);
        let f = &self.fault;
        let mut sc = Scenario::new(params, f.ug2, f.t_f, f.t_c, f.i_rd2, f.i_rq2.into());
        sc.allow_zero_active_current = f.allow_zero_active_current;
        sc.freeze_rotor_during_fault = self.sim.freeze_rotor_during_fault;
        if let Some(dt) = self.sim.dt {
            sc.dt = dt;
        }
        if let Some(si) = self.sim.sample_interval {
            sc.sample_interval = si;
        }
        sc.horizon = self.sim.horizon.unwrap_or_else(|| sc.auto_horizon());
        sc
    }

    /// Config carrying the values of `sc`, with every parameter written out.
    pub fn from_scenario(name: &str, preset: &str, sc: &Scenario) -> Self {
        let file = sc.params.to_file();
        let mut cfg = Self::template();
        cfg.name = name.into();
        cfg.preset = preset.into();
        cfg.fault = FaultSection {
            ug2: sc.ug2,
            t_f: sc.t_f,
            t_c: sc.t_c,
            i_rd2: sc.i_rd2,
            i_rq2: sc.i_rq2_mode.into(),
            allow_zero_active_current: sc.allow_zero_active_current,
        };
        cfg.sim = SimSection {
            dt: Some(sc.dt),
            horizon: Some(sc.horizon),
            sample_interval: Some(sc.sample_interval),
            freeze_rotor_during_fault: sc.freeze_rotor_during_fault,
        };
        cfg.grid = file.grid;
        cfg.machine = file.machine;
        cfg.rsc = file.rsc;
        cfg.tvc = file.tvc;
        cfg.pll = file.pll;
        cfg.lvrt = file.lvrt;
        cfg.ramp = file.ramp;
        cfg
    }
}

/// Parameters for a preset name: the built-in set, or
/// `$TSSLAB_PRESET_DIR/<name>.toml` holding overrides of it.
pub fn resolve_preset(name: &str) -> Result<SystemParams, ConfigError> {
    if name == REFERENCE_PRESET {
        return Ok(SystemParams::reference());
    }
    let dir = std::env::var_os(PRESET_DIR_ENV);
    let searched = dir
        .as_ref()
        .map(|d| Path::new(d).display().to_string())
        .unwrap_or_else(|| format!("${PRESET_DIR_ENV} unset"));
    let Some(dir) = dir else {
        return Err(ConfigError::UnknownPreset { name: name.into(), searched });
    };
    let path = Path::new(&dir).join(format!("{name}.toml"));
    if !path.is_file() {
        return Err(ConfigError::UnknownPreset { name: name.into(), searched });
    }
    let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
    let file: ParamsFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok(file.apply(&SystemParams::reference()))
}

/// One point of a sweep: axis values by column name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub values: BTreeMap<&'static str, f64>,
    #[serde(skip)]
    pub scenario: Scenario,
}

/// Base scenario and the grid of axis values to run it over.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    pub axes: Vec<Axis>,
    pub methods: Vec<Method>,
    pub search: CctSearch,
    /// Fixed horizon; derived per point when absent.
    pub horizon: Option<f64>,
}

impl SweepSpec {
    pub fn from_config(cfg: &ScenarioConfig, base_params: &SystemParams) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let axes = cfg.sweep.as_ref().map(|s| s.axis.clone()).unwrap_or_default();
        let mut seen = std::collections::BTreeSet::new();
        for a in &axes {
            if !seen.insert(a.name) {
                return Err(ConfigError::Invalid(format!("sweep axis `{}` listed twice", a.name.column())));
            }
        }
        Ok(Self {
            base: cfg.scenario(base_params),
            axes,
            methods: cfg.methods.clone(),
            search: (&cfg.cct).into(),
            horizon: cfg.sim.horizon,
        })
    }

    /// Cartesian product of the axes, first axis outermost.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = vec![(BTreeMap::new(), self.base.clone())];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|(vals, sc)| {
                    axis.values.iter().map(move |&v| {
                        let mut vals = vals.clone();
                        vals.insert(axis.name.column(), v);
                        (vals, apply_axis(&sc, axis.name, v))
                    })
                })
                .collect();
        }
        out.into_iter()
            .enumerate()
            .map(|(index, (values, mut scenario))| {
                scenario.horizon = self.horizon.unwrap_or_else(|| scenario.auto_horizon());
                SweepPoint { index, values, scenario }
            })
            .collect()
    }
}

fn apply_axis(sc: &Scenario, name: AxisName, v: f64) -> Scenario {
    let mut s = sc.clone();
    match name {
        AxisName::Ug2 => s.ug2 = v,
        AxisName::IRd2 => s.i_rd2 = v,
        AxisName::IRq2 => s.i_rq2_mode = ReactiveMode::Explicit(v),
        AxisName::Ke => s.params.ke = v,
        AxisName::Kramp => s.params.kramp = v,
        AxisName::TC => s.t_c = Some(v),
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowStatus {
    pub index: usize,
    pub label: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Provenance record written next to every batch of outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub toolkit_version: String,
    pub preset: String,
    pub command: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
    pub rows: Vec<RowStatus>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str, preset: &str, config_text: &str) -> Self {
        Self {
            config_sha256: sha256_hex(config_text.as_bytes()),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            preset: preset.into(),
            command: command.into(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix = unix_now();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_round_trips_through_toml() {
        let cfg = ScenarioConfig::template();
        let text = cfg.to_toml();
        let back = ScenarioConfig::parse_toml(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
        let p = SystemParams::reference();
        assert_eq!(back.scenario(&p), cfg.scenario(&p));
    }

    #[test]
    fn dotted_keys_override_parameters() {
        let text = r#"
name = "x"
methods = ["eac"]
pll.kp = 30
ramp.kramp = 2.5
[fault]
ug2 = 0.2
i_rd2 = 0.34
i_rq2 = "lvrt-law"
"#;
        let cfg = ScenarioConfig::parse_toml(text, Path::new("x")).unwrap();
        let sc = cfg.scenario(&SystemParams::reference());
        assert_eq!(sc.params.kppll, 30.0);
        assert_eq!(sc.params.kramp, 2.5);
        assert_eq!(sc.i_rq2_mode, ReactiveMode::LvrtLaw);
        assert_eq!(sc.t_c, None);
        assert_eq!(sc.t_f, 0.5);
    }

    #[test]
    fn json_is_accepted() {
        let text = r#"{"fault": {"ug2": 0.2, "t_c": 0.7, "i_rd2": 0.34, "i_rq2": -0.93}, "pll": {"ki": 1000}}"#;
        let cfg = ScenarioConfig::parse_json(text, Path::new("x.json")).unwrap();
        let sc = cfg.scenario(&SystemParams::reference());
        assert_eq!(sc.params.kipll, 1000.0);
        assert_eq!(sc.i_rq2_mode, ReactiveMode::Explicit(-0.93));
        assert_eq!(cfg.methods, vec![Method::Simulate]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[fault]\nug2 = 0.2\ni_rd2 = 0.3\ni_rq2 = -0.9\nbogus = 1\n";
        assert!(ScenarioConfig::parse_toml(text, Path::new("x")).is_err());
        assert!(ScenarioConfig::parse_toml("pll.kq = 1\n[fault]\nug2=0.2\ni_rd2=0.3\ni_rq2=-0.9", Path::new("x")).is_err());
    }

    #[test]
    fn empty_methods_are_invalid() {
        let mut cfg = ScenarioConfig::template();
        cfg.methods.clear();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn sweep_points_are_a_cartesian_product() {
        let mut cfg = ScenarioConfig::template();
        cfg.sweep = Some(SweepSection {
            axis: vec![
                Axis { name: AxisName::Ug2, values: vec![0.1, 0.2] },
                Axis { name: AxisName::Kramp, values: vec![0.5, 1.0, 2.0] },
            ],
        });
        let spec = SweepSpec::from_config(&cfg, &SystemParams::reference()).unwrap();
        let pts = spec.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0].values["ug2"], 0.1);
        assert_eq!(pts[2].values["kramp"], 2.0);
        assert_eq!(pts[3].scenario.ug2, 0.2);
        assert_eq!(pts[5].scenario.params.kramp, 2.0);
    }

    #[test]
    fn unknown_preset_is_reported() {
        assert!(matches!(resolve_preset("nope"), Err(ConfigError::UnknownPreset { .. })));
        assert_eq!(resolve_preset(REFERENCE_PRESET).unwrap(), SystemParams::reference());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
