//! Bisection on the fault duration shared by the simulation and basin
//! routes, so their errors are attributable to the method alone.

use crate::error::ModelError;
use crate::report::CctValue;
use crate::sim::{classify_outcome, simulate, Outcome, Scenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CctSearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

impl Default for CctSearch {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.5,
            tol: 1e-4,
        }
    }
}

impl CctSearch {
    /// Finds the largest duration in `[lo, hi]` for which `stable` holds,
    /// assuming a single stable-to-unstable switch.
    pub fn run(
        &self,
        mut stable: impl FnMut(f64) -> Result<bool, ModelError>,
    ) -> Result<CctValue, ModelError> {
        if !stable(self.lo)? {
            return Ok(CctValue::AlwaysUnstable);
        }
        if stable(self.hi)? {
            return Ok(CctValue::AlwaysStable);
        }
        let (mut lo, mut hi) = (self.lo, self.hi);
        while hi - lo > self.tol {
            let mid = 0.5 * (lo + hi);
            if stable(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(CctValue::Finite {
            cct: lo,
            bracket: (lo, hi),
        })
    }
}

/// Full mechanism-model CCT: simulate and classify for each candidate
/// duration. Indeterminate runs count as not stable.
pub fn cct_sim(scenario: &Scenario, search: &CctSearch) -> Result<CctValue, ModelError> {
    search.run(|duration| {
        let sc = scenario.with_fault_duration(duration);
        let traj = simulate(&sc)?;
        Ok(classify_outcome(&traj, &sc.params).outcome == Outcome::Stable)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_brackets_threshold() {
        let v = CctSearch::default().run(|d| Ok(d <= 0.3137)).unwrap();
        match v {
            CctValue::Finite { cct, bracket } => {
                assert!(cct <= 0.3137 && 0.3137 - cct < 1e-4);
                assert!(bracket.1 > 0.3137);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bisection_edge_verdicts() {
        assert_eq!(CctSearch::default().run(|_| Ok(true)).unwrap(), CctValue::AlwaysStable);
        assert_eq!(CctSearch::default().run(|_| Ok(false)).unwrap(), CctValue::AlwaysUnstable);
    }
}
