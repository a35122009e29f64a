//! Result records and the plain-text formats they are written in.

use serde::Serialize;

/// Prints `v` with 9 significant digits, `%g` style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

/// Outcome of a critical-clearing-time search.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CctValue {
    /// Supremum of stable fault durations, s.
    Finite { cct: f64, bracket: (f64, f64) },
    /// Stable for every duration in the search bracket.
    AlwaysStable,
    /// Unstable even for an instantly cleared fault.
    AlwaysUnstable,
    /// The method does not apply to this scenario.
    NotApplicable { reason: String },
}

impl CctValue {
    pub fn seconds(&self) -> Option<f64> {
        match self {
            CctValue::Finite { cct, .. } => Some(*cct),
            _ => None,
        }
    }

    /// CSV cell: seconds, `inf`, `0` or empty.
    pub fn cell(&self) -> String {
        match self {
            CctValue::Finite { cct, .. } => fmt_sig(*cct),
            CctValue::AlwaysStable => "inf".into(),
            CctValue::AlwaysUnstable => "0".into(),
            CctValue::NotApplicable { .. } => String::new(),
        }
    }
}

/// Per-scenario comparison of the three CCT routes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CctReport {
    pub scenario: String,
    pub ug2: f64,
    pub i_rq2: f64,
    pub i_rd2: f64,
    pub kramp: f64,
    /// Critical clearing angle, rad, when it exists.
    pub phi_cr: Option<f64>,
    pub cct_eac: Option<CctValue>,
    pub cct_boa: Option<CctValue>,
    pub cct_sim: Option<CctValue>,
    pub diagnostics: Vec<String>,
}

pub const CCT_CSV_HEADER: &str =
    "scenario,Ug2,i_rq2,i_rd2,Kramp,phi_cr,cct_sim,cct_boa,cct_eac,err_boa_pct,err_eac_pct,diagnostics";

impl CctReport {
    pub fn new(scenario: impl Into<String>, ug2: f64, i_rq2: f64, i_rd2: f64, kramp: f64) -> Self {
        Self {
            scenario: scenario.into(),
            ug2,
            i_rq2,
            i_rd2,
            kramp,
            phi_cr: None,
            cct_eac: None,
            cct_boa: None,
            cct_sim: None,
            diagnostics: Vec::new(),
        }
    }

    /// Relative error of a method against the simulated CCT, percent.
    pub fn error_pct(&self, method: Option<&CctValue>) -> Option<f64> {
        let sim = self.cct_sim.as_ref()?.seconds()?;
        let m = method?.seconds()?;
        (sim > 0.0).then(|| 100.0 * (m - sim) / sim)
    }

    pub fn csv_row(&self) -> String {
        let cell = |v: &Option<CctValue>| v.as_ref().map(CctValue::cell).unwrap_or_default();
        let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
        let diag = self.diagnostics.join("; ").replace([',', '\n'], " ");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            fmt_sig(self.ug2),
            fmt_sig(self.i_rq2),
            fmt_sig(self.i_rd2),
            fmt_sig(self.kramp),
            opt(self.phi_cr),
            cell(&self.cct_sim),
            cell(&self.cct_boa),
            cell(&self.cct_eac),
            opt(self.error_pct(self.cct_boa.as_ref())),
            opt(self.error_pct(self.cct_eac.as_ref())),
            diag
        )
    }
}

pub fn reports_csv(rows: &[CctReport]) -> String {
    let mut s = String::from(CCT_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Writes rows of floats under `header` with the shared number format.
pub fn write_table(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_sig).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.1), "0.1");
        assert_eq!(fmt_sig(std::f64::consts::PI), "3.14159265");
        assert_eq!(fmt_sig(-0.000123456789123), "-0.000123456789");
        assert_eq!(fmt_sig(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig(123456789.0), "123456789");
        assert_eq!(fmt_sig(1.0e12), "1e12");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
    }

    #[test]
    fn error_percent_against_simulation() {
        let mut r = CctReport::new("x", 0.2, -0.93, 0.34, 0.8);
        r.cct_sim = Some(CctValue::Finite { cct: 0.2, bracket: (0.2, 0.2001) });
        r.cct_boa = Some(CctValue::Finite { cct: 0.21, bracket: (0.21, 0.2101) });
        r.cct_eac = Some(CctValue::AlwaysStable);
        assert!((r.error_pct(r.cct_boa.as_ref()).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(r.error_pct(r.cct_eac.as_ref()), None);
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), CCT_CSV_HEADER.split(',').count());
        assert!(row.contains(",inf,"));
    }
}
