use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no stage-1 equilibrium: Pin*Xg/(Ug*Ut_ref) = {ratio:.6} exceeds 1")]
    NoEquilibrium { ratio: f64 },

    #[error("algebraic fixed point for U_t did not converge (last residual {residual:e})")]
    AlgebraicDivergence { residual: f64 },

    #[error("non-finite state at t = {t:.6} s")]
    Blowup { t: f64 },

    #[error("converter capacity exhausted: |i_rq2| = {i_rq2:.4} > Imax = {imax:.4}")]
    CapacityExhausted { i_rq2: f64, imax: f64 },

    #[error("degenerate equilibrium: eigenvalue {eigenvalue:e} is numerically zero")]
    DegenerateEquilibrium { eigenvalue: f64 },

    #[error("frozen system has no equilibrium (sin argument {ratio:.6})")]
    EquilibriumLost { ratio: f64 },

    #[error("voltage recovery required: Ug3 = {ug3} must exceed Ug2 = {ug2}")]
    NoVoltageRecovery { ug2: f64, ug3: f64 },
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}
