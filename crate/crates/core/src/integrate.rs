//! Fixed-step classical Runge-Kutta with bisection-localized crossings.

/// One explicit fourth-order step of `y' = f(t, y)`.
pub fn rk4_step<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t: f64,
    y: &[f64; N],
    h: f64,
) -> Result<[f64; N], E> {
    let axpy = |a: &[f64; N], k: &[f64; N], s: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &axpy(y, &k1, 0.5 * h))?;
    let k3 = f(t + 0.5 * h, &axpy(y, &k2, 0.5 * h))?;
    let k4 = f(t + h, &axpy(y, &k3, h))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Locates the first sub-step `tau` in `(0, h]` at which `trigger` becomes
/// true, given it is false at the step start and true at the step end.
///
/// The returned `tau` is the right end of a bracket narrower than `tol`, so
/// the trigger is guaranteed to hold at `t + tau`.
pub fn locate_crossing<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t: f64,
    y: &[f64; N],
    h: f64,
    tol: f64,
    trigger: &mut impl FnMut(f64, &[f64; N]) -> Result<bool, E>,
) -> Result<(f64, [f64; N]), E> {
    let mut lo = 0.0;
    let mut hi = h;
    let mut y_hi = rk4_step(f, t, y, h)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let y_mid = rk4_step(f, t, y, mid)?;
        if trigger(t + mid, &y_mid)? {
            hi = mid;
            y_hi = y_mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, y_hi))
}

/// Number of equal steps no longer than `dt` covering `span`.
pub fn substeps(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn exponential_decay_order() {
        let mut f = |_t: f64, y: &[f64; 1]| Ok::<_, Infallible>([-y[0]]);
        let run = |h: f64, f: &mut dyn FnMut(f64, &[f64; 1]) -> Result<[f64; 1], Infallible>| {
            let mut y = [1.0];
            let n = (1.0 / h).round() as usize;
            let mut g = |t: f64, y: &[f64; 1]| f(t, y);
            for i in 0..n {
                y = rk4_step(&mut g, i as f64 * h, &y, h).unwrap();
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let e1 = run(0.1, &mut f);
        let e2 = run(0.05, &mut f);
        let ratio = e1 / e2;
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn crossing_is_localized() {
        // y' = 1, crossing y = 0.3 inside a unit step.
        let mut f = |_t: f64, _y: &[f64; 1]| Ok::<_, Infallible>([1.0]);
        let mut trig = |_t: f64, y: &[f64; 1]| Ok::<_, Infallible>(y[0] >= 0.3);
        let (tau, y) = locate_crossing(&mut f, 0.0, &[0.0], 1.0, 1e-6, &mut trig).unwrap();
        assert!(tau >= 0.3 && tau - 0.3 < 1e-6);
        assert!(y[0] >= 0.3);
    }

    #[test]
    fn substep_count() {
        assert_eq!(substeps(1e-3, 5e-5), 20);
        assert_eq!(substeps(1e-3 + 1e-15, 5e-5), 20);
        assert_eq!(substeps(1.01e-3, 5e-5), 21);
        assert_eq!(substeps(1e-7, 5e-5), 1);
    }
}
