//! Central finite-difference gradient checks.

/// Outcome of comparing an analytic gradient to central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose probes crossed a non-differentiable point.
    pub skipped: usize,
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is (near) zero are compared absolutely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares `analytic` to `(f(θ+h e_i) - f(θ-h e_i)) / 2h` for every
/// coordinate. `eval` returns the loss and a kink signature (for example the
/// rectifier mask); probes whose signature differs from the base point's are
/// skipped because the function is not smooth between them.
pub fn check_gradient<F>(theta: &[f64], analytic: &[f64], h: f64, mut eval: F) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<bool>),
{
    assert_eq!(theta.len(), analytic.len(), "gradient length");
    let (_, base_sig) = eval(theta);
    let mut probe = theta.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let (fp, sp) = eval(&probe);
        probe[i] = theta[i] - h;
        let (fm, sm) = eval(&probe);
        probe[i] = theta[i];
        if sp != base_sig || sm != base_sig {
            out.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        out.max_rel_error = out.max_rel_error.max(rel_error(analytic[i], numeric));
        out.checked += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_function_passes() {
        let f = |t: &[f64]| (t[0].sin() * t[1] + t[1].powi(3), vec![]);
        let theta = [0.3, -1.2];
        let g = [0.3f64.cos() * -1.2, 0.3f64.sin() + 3.0 * 1.44];
        let r = check_gradient(&theta, &g, 1e-3, f);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |t: &[f64]| (t[0] * t[0], vec![]);
        let r = check_gradient(&[2.0], &[3.0], 1e-3, f);
        assert!(r.max_rel_error > 0.2);
    }

    #[test]
    fn kinks_are_skipped() {
        let f = |t: &[f64]| (t[0].abs(), vec![t[0] > 0.0]);
        let r = check_gradient(&[1e-4], &[1.0], 1e-3, f);
        assert_eq!((r.checked, r.skipped), (0, 1));
    }
}
