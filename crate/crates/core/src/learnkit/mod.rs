//! Small differentiable-function toolkit: dense networks with exact
//! reverse-mode gradients, an adaptive-moment optimizer and weight files.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
mod weights;

pub use adam::AdamState;
pub use gradcheck::{check_gradient, rel_error, GradCheck};
pub use matrix::{dot, Factored, Input, Matrix, Real};
pub use mlp::{relu, Cache, Grads, Layer, Mlp, ParamSet};
pub use weights::{Entries, WeightFile, WeightKind};

/// Numerically stable `log(sum(exp(v)))`.
pub fn logsumexp<T: Real>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = v.iter().map(|&x| (x - max).as_f64().exp()).sum();
    max + T::of(s.ln())
}

/// Softmax with max-shift, evaluated in f64.
pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
    let e: Vec<f64> = v.iter().map(|&x| (x.as_f64() - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| T::of(x / s)).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_of_equal_values() {
        let v = vec![2.5f64; 27];
        assert!((logsumexp(&v) - (2.5 + 27f64.ln())).abs() < 1e-12);
        let big = vec![1000.0f64, 1000.0];
        assert!((logsumexp(&big) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0f32; 27]), 0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f64, 2.0, -3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1] > p[0] && p[0] > p[2]);
    }
}
