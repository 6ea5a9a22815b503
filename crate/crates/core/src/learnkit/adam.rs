//! Bias-corrected adaptive-moment optimizer. Moments accumulate in f64.

use super::matrix::Real;
use super::mlp::ParamSet;
use crate::error::{Error, Result};

/// Moments below this are flushed to zero. A parameter whose gradient stops
/// (a dead unit, say) otherwise decays into subnormal range within a few
/// thousand steps, and subnormal arithmetic is many times slower.
const FLUSH_BELOW: f64 = 1e-150;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T, P: ParamSet<T>>(lr: f64, params: &P) -> Self {
        let shapes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step<T: Real, P: ParamSet<T>, G: ParamSet<T>>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<()> {
        let gs = grads.slices();
        let mut ps = params.slices_mut();
        if ps.len() != self.m.len()
            || gs.len() != self.m.len()
            || ps
                .iter()
                .zip(&gs)
                .zip(&self.m)
                .any(|((p, g), m)| p.len() != m.len() || g.len() != m.len())
        {
            return Err(Error::Dimension(
                "parameter, gradient and moment shapes differ".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step_size = self.lr / c1;
        let inv_c2 = 1.0 / c2;
        for (((p, g), m), v) in ps
            .iter_mut()
            .zip(&gs)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pi, gi), mi), vi) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi.as_f64();
                let m_new = b1 * *mi + (1.0 - b1) * gi;
                let v_new = b2 * *vi + (1.0 - b2) * gi * gi;
                *mi = if m_new.abs() < FLUSH_BELOW { 0.0 } else { m_new };
                *vi = if v_new < FLUSH_BELOW { 0.0 } else { v_new };
                let update = step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
                *pi = T::of(pi.as_f64() - update);
            }
        }
        Ok(())
    }
}
