//! Fully connected networks: rectifier hidden layers, linear output.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{dot, Factored, Input, Matrix, Real};
use crate::error::{Error, Result};

const FORWARD_BLOCK: usize = 16;

/// One affine map `y = W x + b` with `W: out x in` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![T::zero(); fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows
    }
}

/// Anything made of flat parameter slices: networks, gradients, optimizer moments.
pub trait ParamSet<T> {
    fn slices(&self) -> Vec<&[T]>;
    fn slices_mut(&mut self) -> Vec<&mut [T]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer parameter gradients, shaped like the network.
pub type Grads<T> = Mlp<T>;

enum LayerInput<T> {
    Dense(Matrix<T>),
    Factored(Factored<T>),
}

/// Values saved by [`Mlp::forward`] for the backward pass.
pub struct Cache<T> {
    inputs: Vec<LayerInput<T>>,
    pre: Vec<Matrix<T>>,
}

impl<T: Real> Cache<T> {
    /// Pre-activations of layer `i`, `batch x fan_out`.
    pub fn pre_activation(&self, i: usize) -> &Matrix<T> {
        &self.pre[i]
    }

    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }

    /// Which hidden units were active; a finite-difference probe whose mask
    /// differs from the base point crossed a rectifier kink.
    pub fn relu_mask(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|m| m.data.iter().map(|v| *v > T::zero()))
            .collect()
    }
}

impl<T: Real> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "network dims must list at least two positive sizes, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-scale, scale).expect("valid range");
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(dist.sample(&mut rng)))
                    .collect();
                Layer {
                    weight: Matrix {
                        rows: fan_out,
                        cols: fan_in,
                        data,
                    },
                    bias: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].fan_out(),
                    i + 1,
                    w[1].fan_in()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Dimension(format!(
                    "layer {i} bias has {} entries for {} outputs",
                    l.bias.len(),
                    l.fan_out()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].fan_in()];
        d.extend(self.layers.iter().map(Layer::fan_out));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|b| U::of(b.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects input of length {}, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass, keeping what backward needs.
    pub fn forward(&self, x: Input<'_, T>) -> Result<(Matrix<T>, Cache<T>)> {
        self.check_input(x.cols())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut z = first_affine(&self.layers[0], x);
        inputs.push(match x {
            Input::Dense(m) => LayerInput::Dense(m.clone()),
            Input::Factored(f) => LayerInput::Factored(f.clone()),
        });
        for layer in &self.layers[1..] {
            let act = relu(&z);
            pre.push(z);
            z = dense_affine(layer, &act);
            inputs.push(LayerInput::Dense(act));
        }
        pre.push(z.clone());
        Ok((z, Cache { inputs, pre }))
    }

    /// Batched forward pass without a cache.
    pub fn predict(&self, x: Input<'_, T>) -> Result<Matrix<T>> {
        self.check_input(x.cols())?;
        let mut z = first_affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            z = dense_affine(layer, &relu(&z));
        }
        Ok(z)
    }

    /// Single-sample forward pass through dot products; independent of batch
    /// composition, so repeated calls on one input always agree bit-for-bit.
    pub fn forward_one(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x.len())?;
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out: Vec<T> = (0..layer.fan_out())
                .map(|o| dot(layer.weight.row(o), &h) + layer.bias[o])
                .collect();
            if i < last {
                for v in &mut out {
                    *v = v.max(T::zero());
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// [`Mlp::forward_one`] for many inputs, bit-identical per input. Each
    /// weight row is applied to every input before moving on, which keeps the
    /// row in cache.
    pub fn forward_many(&self, xs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        for x in xs {
            self.check_input(x.len())?;
        }
        let mut hs: Vec<Vec<T>> = xs.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut outs = vec![vec![T::zero(); layer.fan_out()]; hs.len()];
            // Blocks of inputs stay cache-resident while the weights stream past.
            for (hb, ob) in hs.chunks(FORWARD_BLOCK).zip(outs.chunks_mut(FORWARD_BLOCK)) {
                for o in 0..layer.fan_out() {
                    let row = layer.weight.row(o);
                    for (h, out) in hb.iter().zip(ob.iter_mut()) {
                        out[o] = dot(row, h) + layer.bias[o];
                    }
                }
            }
            if i < last {
                for v in outs.iter_mut().flatten() {
                    *v = v.max(T::zero());
                }
            }
            hs = outs;
        }
        Ok(hs)
    }

    /// All parameters in [`ParamSet`] order.
    pub fn to_flat(&self) -> Vec<T> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "flat vector has {} entries, network has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut rest = flat;
        for s in self.slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Reverse-mode pass. Returns parameter gradients and, when requested,
    /// the gradient with respect to the network input.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        dy: &Matrix<T>,
        want_input_grad: bool,
    ) -> Result<(Grads<T>, Option<Matrix<T>>)> {
        let n = self.layers.len();
        if cache.pre.len() != n {
            return Err(Error::Dimension(format!(
                "cache holds {} layers, network has {n}",
                cache.pre.len()
            )));
        }
        let out = &cache.pre[n - 1];
        if dy.rows != out.rows || dy.cols != out.cols {
            return Err(Error::Dimension(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                dy.rows, dy.cols, out.rows, out.cols
            )));
        }
        let mut grads = self.zeros_like();
        let mut delta = dy.clone();
        let mut input_grad = None;
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            g.bias = delta.col_sums();
            match &cache.inputs[i] {
                LayerInput::Dense(x) => {
                    let cols = g.weight.cols;
                    delta.t_mul_into(x, &mut g.weight.data, cols, 1);
                }
                LayerInput::Factored(f) => factored_weight_grad(&delta, f, &mut g.weight),
            }
            if i > 0 || want_input_grad {
                let mut dx = delta.mul(&layer.weight);
                if i > 0 {
                    let pre = &cache.pre[i - 1];
                    for (d, p) in dx.data.iter_mut().zip(&pre.data) {
                        if *p <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    delta = dx;
                } else {
                    input_grad = Some(dx);
                }
            }
        }
        Ok((grads, input_grad))
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update(&mut self, online: &Mlp<T>, tau: f64) -> Result<()> {
        if self.dims() != online.dims() {
            return Err(Error::Dimension(format!(
                "target dims {:?} differ from online dims {:?}",
                self.dims(),
                online.dims()
            )));
        }
        if tau == 1.0 {
            self.layers.clone_from(&online.layers);
            return Ok(());
        }
        let keep = 1.0 - tau;
        for (t, o) in self.slices_mut().into_iter().zip(online.slices()) {
            for (a, b) in t.iter_mut().zip(o) {
                *a = T::of(tau * b.as_f64() + keep * a.as_f64());
            }
        }
        Ok(())
    }

    /// Adds `scale * other` into `self` (same shapes).
    pub fn add_scaled(&mut self, other: &Mlp<T>, scale: T) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + scale * *y;
            }
        }
    }
}

impl<T> ParamSet<T> for Mlp<T> {
    fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

pub fn relu<T: Real>(z: &Matrix<T>) -> Matrix<T> {
    Matrix {
        rows: z.rows,
        cols: z.cols,
        data: z.data.iter().map(|v| v.max(T::zero())).collect(),
    }
}

fn dense_affine<T: Real>(layer: &Layer<T>, x: &Matrix<T>) -> Matrix<T> {
    let mut z = x.mul_t(&layer.weight);
    for i in 0..z.rows {
        for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
            *v = *v + *b;
        }
    }
    z
}

fn first_affine<T: Real>(layer: &Layer<T>, x: Input<'_, T>) -> Matrix<T> {
    match x {
        Input::Dense(m) => dense_affine(layer, m),
        Input::Factored(f) => {
            // Shared columns collapse into one extra bias per output unit.
            let w = &layer.weight;
            let bias: Vec<T> = (0..w.rows)
                .map(|o| {
                    let row = w.row(o);
                    let shared: T = f
                        .shared_idx
                        .iter()
                        .zip(&f.shared_val)
                        .map(|(&j, &v)| row[j] * v)
                        .sum();
                    layer.bias[o] + shared
                })
                .collect();
            let mut w_var = Matrix::zeros(w.rows, f.var_idx.len());
            for o in 0..w.rows {
                let row = w.row(o);
                for (dst, &j) in w_var.row_mut(o).iter_mut().zip(&f.var_idx) {
                    *dst = row[j];
                }
            }
            let mut z = f.var.mul_t(&w_var);
            for i in 0..z.rows {
                for (v, b) in z.row_mut(i).iter_mut().zip(&bias) {
                    *v = *v + *b;
                }
            }
            z
        }
    }
}

fn factored_weight_grad<T: Real>(delta: &Matrix<T>, f: &Factored<T>, out: &mut Matrix<T>) {
    let sums = delta.col_sums();
    let var_grad = delta.t_mul(&f.var);
    for o in 0..out.rows {
        let row = out.row_mut(o);
        for (&j, &v) in f.shared_idx.iter().zip(&f.shared_val) {
            row[j] = sums[o] * v;
        }
        for (&j, &g) in f.var_idx.iter().zip(var_grad.row(o)) {
            row[j] = g;
        }
    }
}
