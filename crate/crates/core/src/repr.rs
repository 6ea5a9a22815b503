//! Observation compressors: principal components, a plain autoencoder and a
//! variational autoencoder, plus encoding of whole datasets.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetReader, DatasetWriter, Transition, TransitionTable};
use crate::error::{Error, Result};
use crate::learnkit::{AdamState, Factored, Grads, Input, Matrix, Mlp, Real, WeightFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Pca,
    Ae,
    Vae,
}

impl CodecKind {
    pub fn name(self) -> &'static str {
        match self {
            CodecKind::Pca => "pca",
            CodecKind::Ae => "ae",
            CodecKind::Vae => "vae",
        }
    }
}

impl FromStr for CodecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(CodecKind::Pca),
            "ae" => Ok(CodecKind::Ae),
            "vae" => Ok(CodecKind::Vae),
            other => Err(Error::Config(format!(
                "unknown codec kind `{other}` (pca, ae, vae)"
            ))),
        }
    }
}

/// Codec training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprConfig {
    pub kind: CodecKind,
    pub latent_dim: usize,
    pub beta_kl: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
}

impl Default for ReprConfig {
    fn default() -> Self {
        ReprConfig {
            kind: CodecKind::Vae,
            latent_dim: 64,
            beta_kl: 1e-3,
            epochs: 20,
            lr: 1e-3,
            batch_size: 256,
            hidden: vec![512, 128],
        }
    }
}

impl ReprConfig {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim >= input_dim {
            return Err(Error::Config(format!(
                "latent dim {} must be in 1..{input_dim}",
                self.latent_dim
            )));
        }
        if !(self.beta_kl.is_finite() && self.beta_kl >= 0.0) {
            return Err(Error::Config(format!(
                "beta_kl must be >= 0, got {}",
                self.beta_kl
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("lr and batch_size must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn encoder_dims(&self, input_dim: usize, out: usize) -> Vec<usize> {
        let mut d = vec![input_dim];
        d.extend(&self.hidden);
        d.push(out);
        d
    }

    fn decoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(self.hidden.iter().rev());
        d.push(input_dim);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaCodec {
    pub mean: Vec<f32>,
    /// `d_z x d_o`, orthonormal rows.
    pub components: Matrix<f32>,
    pub explained_variance: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeCodec {
    pub encoder: Mlp<f32>,
    pub decoder: Mlp<f32>,
}

/// The encoder's output holds the mean in its first `d_z` units and the
/// log-variance in the last `d_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeCodec {
    pub encoder: Mlp<f32>,
    pub decoder: Mlp<f32>,
    pub beta_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Codec {
    Pca(PcaCodec),
    Ae(AeCodec),
    Vae(VaeCodec),
}

fn pca_encode(pca: &PcaCodec, o: &[f32]) -> Vec<f32> {
    (0..pca.components.rows)
        .map(|k| {
            let row = pca.components.row(k);
            let s: f64 = row
                .iter()
                .zip(o.iter().zip(&pca.mean))
                .map(|(&c, (&x, &m))| c as f64 * (x as f64 - m as f64))
                .sum();
            s as f32
        })
        .collect()
}

impl Codec {
    pub fn kind(&self) -> CodecKind {
        match self {
            Codec::Pca(_) => CodecKind::Pca,
            Codec::Ae(_) => CodecKind::Ae,
            Codec::Vae(_) => CodecKind::Vae,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Codec::Pca(p) => p.mean.len(),
            Codec::Ae(a) => a.encoder.input_dim(),
            Codec::Vae(v) => v.encoder.input_dim(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Codec::Pca(p) => p.components.rows,
            Codec::Ae(a) => a.encoder.output_dim(),
            Codec::Vae(v) => v.encoder.output_dim() / 2,
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Dimension(format!(
                "codec expects observations of length {}, got {len}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic latent code; the VAE uses its mean.
    pub fn encode(&self, o: &[f32]) -> Result<Vec<f32>> {
        self.check(o.len())?;
        Ok(match self {
            Codec::Pca(p) => pca_encode(p, o),
            Codec::Ae(a) => a.encoder.forward_one(o)?,
            Codec::Vae(v) => {
                let mut out = v.encoder.forward_one(o)?;
                out.truncate(self.latent_dim());
                out
            }
        })
    }

    /// [`Codec::encode`] over many observations, bit-identical per input.
    pub fn encode_many(&self, os: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        for o in os {
            self.check(o.len())?;
        }
        match self {
            Codec::Pca(p) => Ok(os.iter().map(|o| pca_encode(p, o)).collect()),
            Codec::Ae(a) => a.encoder.forward_many(os),
            Codec::Vae(v) => {
                let d = self.latent_dim();
                let mut out = v.encoder.forward_many(os)?;
                out.iter_mut().for_each(|z| z.truncate(d));
                Ok(out)
            }
        }
    }

    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.latent_dim() {
            return Err(Error::Dimension(format!(
                "codec expects latents of length {}, got {}",
                self.latent_dim(),
                z.len()
            )));
        }
        match self {
            Codec::Pca(p) => Ok((0..p.mean.len())
                .map(|j| {
                    let s: f64 = (0..z.len())
                        .map(|k| p.components.get(k, j) as f64 * z[k] as f64)
                        .sum();
                    (p.mean[j] as f64 + s) as f32
                })
                .collect()),
            Codec::Ae(a) => a.decoder.forward_one(z),
            Codec::Vae(v) => v.decoder.forward_one(z),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = match self {
            Codec::Pca(p) => WeightFile::blocks(vec![
                (
                    "mean".into(),
                    Matrix::from_vec(1, p.mean.len(), p.mean.clone())?,
                ),
                ("components".into(), p.components.clone()),
                (
                    "explained_variance".into(),
                    Matrix::from_vec(1, p.explained_variance.len(), p.explained_variance.clone())?,
                ),
            ]),
            Codec::Ae(a) => WeightFile::mlps(vec![
                ("encoder".into(), a.encoder.clone()),
                ("decoder".into(), a.decoder.clone()),
            ]),
            Codec::Vae(v) => WeightFile::mlps(vec![
                ("encoder".into(), v.encoder.clone()),
                ("decoder".into(), v.decoder.clone()),
            ])
            .with_meta("beta_kl", v.beta_kl.to_string()),
        };
        file.with_meta("kind", self.kind().name())
            .with_meta("d_o", self.input_dim().to_string())
            .with_meta("d_z", self.latent_dim().to_string())
            .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = WeightFile::load(path)?;
        let kind: CodecKind = file.meta("kind")?.parse()?;
        let parse = |key: &str| -> Result<usize> {
            let v = file.meta(key)?;
            v.parse().map_err(|_| {
                Error::format(path, 0, format!("metadata `{key}` = `{v}` is not a count"))
            })
        };
        let (d_o, d_z) = (parse("d_o")?, parse("d_z")?);
        let codec = match kind {
            CodecKind::Pca => {
                let mean = file.block("mean")?;
                let components = file.block("components")?;
                let ev = file.block("explained_variance")?;
                if mean.data.len() != d_o
                    || components.rows != d_z
                    || components.cols != d_o
                    || ev.data.len() != d_z
                {
                    return Err(Error::Dimension(format!(
                        "PCA blocks (mean {}, components {}x{}, variance {}) disagree with d_o={d_o}, d_z={d_z}",
                        mean.data.len(),
                        components.rows,
                        components.cols,
                        ev.data.len()
                    )));
                }
                Codec::Pca(PcaCodec {
                    mean: mean.data.clone(),
                    components: components.clone(),
                    explained_variance: ev.data.clone(),
                })
            }
            CodecKind::Ae | CodecKind::Vae => {
                let heads = if kind == CodecKind::Vae { 2 * d_z } else { d_z };
                let enc = file
                    .mlp("encoder")
                    .ok_or_else(|| Error::Missing("network `encoder` in codec file".into()))?;
                let dec = file
                    .mlp("decoder")
                    .ok_or_else(|| Error::Missing("network `decoder` in codec file".into()))?;
                if enc.input_dim() != d_o
                    || enc.output_dim() != heads
                    || dec.input_dim() != d_z
                    || dec.output_dim() != d_o
                {
                    return Err(Error::Dimension(format!(
                        "codec networks {:?} / {:?} disagree with d_o={d_o}, d_z={d_z}",
                        enc.dims(),
                        dec.dims()
                    )));
                }
                if kind == CodecKind::Vae {
                    let beta = file.meta("beta_kl")?;
                    let beta_kl = beta.parse().map_err(|_| {
                        Error::format(path, 0, format!("beta_kl `{beta}` is not a number"))
                    })?;
                    Codec::Vae(VaeCodec {
                        encoder: enc.clone(),
                        decoder: dec.clone(),
                        beta_kl,
                    })
                } else {
                    Codec::Ae(AeCodec {
                        encoder: enc.clone(),
                        decoder: dec.clone(),
                    })
                }
            }
        };
        Ok(codec)
    }
}

/// `0.5 * sum(mu^2 + exp(logvar) - logvar - 1)`, the divergence of a diagonal
/// Gaussian from the standard normal.
pub fn kl_gauss(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

fn to_f64(f: &Factored<f32>) -> Factored<f64> {
    Factored {
        cols: f.cols,
        shared_idx: f.shared_idx.clone(),
        shared_val: f.shared_val.iter().map(|&v| v as f64).collect(),
        var_idx: f.var_idx.clone(),
        var: f.var.cast(),
    }
}

/// Principal components of a factored sample. Columns shared by every row
/// have zero variance and get zero loadings; if fewer than `d_z` directions
/// carry variance, the remaining rows are completed to an orthonormal set by
/// Gram-Schmidt over the standard basis.
pub fn fit_pca_factored(x: &Factored<f32>, d_z: usize) -> Result<PcaCodec> {
    let n = x.rows();
    let d = x.cols;
    if d_z == 0 || d_z > d {
        return Err(Error::Config(format!(
            "PCA latent dim {d_z} must be in 1..={d}"
        )));
    }
    if n < d_z + 1 {
        return Err(Error::Domain(format!(
            "PCA with d_z={d_z} needs at least {} samples, got {n}",
            d_z + 1
        )));
    }
    let x = to_f64(x);
    let v = x.var_idx.len();
    let mut mean = vec![0.0f64; d];
    for (&j, &val) in x.shared_idx.iter().zip(&x.shared_val) {
        mean[j] = val;
    }
    let mut var_mean = vec![0.0f64; v];
    for i in 0..n {
        for (m, &val) in var_mean.iter_mut().zip(x.var.row(i)) {
            *m += val;
        }
    }
    var_mean.iter_mut().for_each(|m| *m /= n as f64);
    for (&j, &m) in x.var_idx.iter().zip(&var_mean) {
        mean[j] = m;
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut variances: Vec<f64> = Vec::new();
    if v > 0 {
        let centered = nalgebra::DMatrix::from_fn(n, v, |i, k| x.var.get(i, k) - var_mean[k]);
        let svd = centered.svd(false, true);
        let vt = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        for &k in order.iter().take(d_z) {
            let mut row = vec![0.0f64; d];
            for (c, &j) in x.var_idx.iter().enumerate() {
                row[j] = vt[(k, c)];
            }
            let s = svd.singular_values[k];
            variances.push(s * s / (n as f64 - 1.0));
            rows.push(row);
        }
    }
    complete_basis(&mut rows, d_z, d);
    variances.resize(d_z, 0.0);
    for row in &mut rows {
        sign_normalize(row);
    }
    let components = Matrix::from_vec(d_z, d, rows.iter().flatten().map(|&c| c as f32).collect())?;
    Ok(PcaCodec {
        mean: mean.iter().map(|&m| m as f32).collect(),
        components,
        explained_variance: variances.iter().map(|&e| e as f32).collect(),
    })
}

pub fn fit_pca(table: &TransitionTable, d_z: usize) -> Result<PcaCodec> {
    let rows: Vec<usize> = (0..table.len()).collect();
    fit_pca_factored(&table.states(&rows), d_z)
}

/// Appends standard basis vectors, orthogonalized against the existing rows,
/// until there are `want` rows.
fn complete_basis(rows: &mut Vec<Vec<f64>>, want: usize, d: usize) {
    let mut j = 0;
    while rows.len() < want && j < d {
        let mut e = vec![0.0f64; d];
        e[j] = 1.0;
        j += 1;
        for _ in 0..2 {
            for r in rows.iter() {
                let p: f64 = r.iter().zip(&e).map(|(a, b)| a * b).sum();
                e.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            e.iter_mut().for_each(|x| *x /= norm);
            rows.push(e);
        }
    }
}

/// Flips a row so its largest-magnitude entry (first on ties) is positive.
fn sign_normalize(row: &mut [f64]) {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        row.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Loss value, its parts and parameter gradients for one minibatch.
#[derive(Debug, Clone)]
pub struct LossOut<T> {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub encoder_grads: Grads<T>,
    pub decoder_grads: Grads<T>,
    /// Rectifier activity of both networks, for finite-difference probes.
    pub mask: Vec<bool>,
}

/// Squared-error sum per sample, averaged over the batch, and its gradient.
fn recon_term<T: Real>(out: &Matrix<T>, target: &Matrix<T>) -> (f64, Matrix<T>) {
    let b = out.rows as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(out.rows, out.cols);
    let scale = 2.0 / b;
    for ((g, &y), &t) in grad.data.iter_mut().zip(&out.data).zip(&target.data) {
        let diff = y.as_f64() - t.as_f64();
        loss += diff * diff;
        *g = T::of(scale * diff);
    }
    (loss / b, grad)
}

fn check_target<T: Real>(x: Input<'_, T>, target: &Matrix<T>) -> Result<()> {
    if target.rows != x.rows() || target.cols != x.cols() {
        return Err(Error::Dimension(format!(
            "target is {}x{}, input is {}x{}",
            target.rows,
            target.cols,
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Reparameterized VAE objective `recon + beta * kl` with `z = mu + exp(logvar/2) * eps`.
/// `eps` holds one standard-normal draw per latent unit per sample.
pub fn vae_loss<T: Real>(
    encoder: &Mlp<T>,
    decoder: &Mlp<T>,
    x: Input<'_, T>,
    target: &Matrix<T>,
    eps: &Matrix<T>,
    beta: f64,
) -> Result<LossOut<T>> {
    check_target(x, target)?;
    let dz = decoder.input_dim();
    if encoder.output_dim() != 2 * dz || eps.rows != x.rows() || eps.cols != dz {
        return Err(Error::Dimension(format!(
            "encoder output {} / noise {}x{} inconsistent with latent dim {dz}",
            encoder.output_dim(),
            eps.rows,
            eps.cols
        )));
    }
    let b = x.rows();
    let (h, enc_cache) = encoder.forward(x)?;
    let mut z = Matrix::zeros(b, dz);
    let mut kl = 0.0;
    for i in 0..b {
        let row = h.row(i);
        let (mu, lv) = row.split_at(dz);
        for k in 0..dz {
            let sigma = (0.5 * lv[k].as_f64()).exp();
            z.set(i, k, T::of(mu[k].as_f64() + sigma * eps.get(i, k).as_f64()));
            let (m, l) = (mu[k].as_f64(), lv[k].as_f64());
            kl += 0.5 * (m * m + l.exp() - l - 1.0);
        }
    }
    kl /= b as f64;
    let (out, dec_cache) = decoder.forward(Input::Dense(&z))?;
    let (recon, d_out) = recon_term(&out, target);
    let (decoder_grads, dz_grad) = decoder.backward(&dec_cache, &d_out, true)?;
    let dz_grad = dz_grad.expect("input gradient requested");
    let kscale = beta / b as f64;
    let mut dh = Matrix::zeros(b, 2 * dz);
    for i in 0..b {
        for k in 0..dz {
            let mu = h.get(i, k).as_f64();
            let lv = h.get(i, dz + k).as_f64();
            let g = dz_grad.get(i, k).as_f64();
            let sigma = (0.5 * lv).exp();
            dh.set(i, k, T::of(g + kscale * mu));
            dh.set(
                i,
                dz + k,
                T::of(g * eps.get(i, k).as_f64() * 0.5 * sigma + kscale * 0.5 * (lv.exp() - 1.0)),
            );
        }
    }
    let (encoder_grads, _) = encoder.backward(&enc_cache, &dh, false)?;
    let mut mask = enc_cache.relu_mask();
    mask.extend(dec_cache.relu_mask());
    Ok(LossOut {
        total: recon + beta * kl,
        recon,
        kl,
        encoder_grads,
        decoder_grads,
        mask,
    })
}

/// Plain reconstruction objective of the autoencoder.
pub fn ae_loss<T: Real>(
    encoder: &Mlp<T>,
    decoder: &Mlp<T>,
    x: Input<'_, T>,
    target: &Matrix<T>,
) -> Result<LossOut<T>> {
    check_target(x, target)?;
    let (z, enc_cache) = encoder.forward(x)?;
    let (out, dec_cache) = decoder.forward(Input::Dense(&z))?;
    let (recon, d_out) = recon_term(&out, target);
    let (decoder_grads, dz) = decoder.backward(&dec_cache, &d_out, true)?;
    let (encoder_grads, _) =
        encoder.backward(&enc_cache, &dz.expect("input gradient requested"), false)?;
    let mut mask = enc_cache.relu_mask();
    mask.extend(dec_cache.relu_mask());
    Ok(LossOut {
        total: recon,
        recon,
        kl: 0.0,
        encoder_grads,
        decoder_grads,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
}

pub fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut text = String::from("epoch,recon,kl\n");
    for e in log {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.recon, e.kl));
    }
    crate::fsutil::write_atomic(path, text.as_bytes())
}

fn net_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

/// Minibatch training of an autoencoder-style codec on the table's states.
fn train_autoencoder(
    table: &TransitionTable,
    cfg: &ReprConfig,
    seed: u64,
    variational: bool,
) -> Result<(Mlp<f32>, Mlp<f32>, Vec<EpochLog>)> {
    let d_o = table.dim();
    cfg.validate(d_o)?;
    if table.is_empty() {
        return Err(Error::Domain(
            "cannot train a codec on an empty dataset".into(),
        ));
    }
    let heads = if variational {
        2 * cfg.latent_dim
    } else {
        cfg.latent_dim
    };
    let mut encoder = Mlp::<f32>::new(&cfg.encoder_dims(d_o, heads), net_seed(seed, 1))?;
    let mut decoder = Mlp::<f32>::new(&cfg.decoder_dims(d_o), net_seed(seed, 2))?;
    let mut enc_opt = AdamState::new(cfg.lr, &encoder);
    let mut dec_opt = AdamState::new(cfg.lr, &decoder);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..table.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        for rows in order.chunks(cfg.batch_size) {
            let x = table.states(rows);
            let target = x.to_dense();
            let out = if variational {
                let eps = Matrix::from_vec(
                    rows.len(),
                    cfg.latent_dim,
                    (0..rows.len() * cfg.latent_dim)
                        .map(|_| rng.sample::<f32, _>(StandardNormal))
                        .collect(),
                )?;
                vae_loss(
                    &encoder,
                    &decoder,
                    Input::Factored(&x),
                    &target,
                    &eps,
                    cfg.beta_kl,
                )?
            } else {
                ae_loss(&encoder, &decoder, Input::Factored(&x), &target)?
            };
            if !out.total.is_finite() {
                return Err(Error::Domain(format!(
                    "codec loss diverged in epoch {epoch}"
                )));
            }
            recon_sum += out.recon * rows.len() as f64;
            kl_sum += out.kl * rows.len() as f64;
            enc_opt.step(&mut encoder, &out.encoder_grads)?;
            dec_opt.step(&mut decoder, &out.decoder_grads)?;
        }
        let n = table.len() as f64;
        log.push(EpochLog {
            epoch,
            recon: recon_sum / n,
            kl: kl_sum / n,
        });
    }
    Ok((encoder, decoder, log))
}

pub fn train_vae(
    table: &TransitionTable,
    cfg: &ReprConfig,
    seed: u64,
) -> Result<(VaeCodec, Vec<EpochLog>)> {
    let (encoder, decoder, log) = train_autoencoder(table, cfg, seed, true)?;
    Ok((
        VaeCodec {
            encoder,
            decoder,
            beta_kl: cfg.beta_kl,
        },
        log,
    ))
}

pub fn train_ae(
    table: &TransitionTable,
    cfg: &ReprConfig,
    seed: u64,
) -> Result<(AeCodec, Vec<EpochLog>)> {
    let (encoder, decoder, log) = train_autoencoder(table, cfg, seed, false)?;
    Ok((AeCodec { encoder, decoder }, log))
}

/// Fits the codec named by `cfg.kind`. PCA produces no epoch log.
pub fn train_codec(
    table: &TransitionTable,
    cfg: &ReprConfig,
    seed: u64,
) -> Result<(Codec, Vec<EpochLog>)> {
    match cfg.kind {
        CodecKind::Pca => {
            cfg.validate(table.dim())?;
            Ok((Codec::Pca(fit_pca(table, cfg.latent_dim)?), Vec::new()))
        }
        CodecKind::Ae => train_ae(table, cfg, seed).map(|(c, l)| (Codec::Ae(c), l)),
        CodecKind::Vae => train_vae(table, cfg, seed).map(|(c, l)| (Codec::Vae(c), l)),
    }
}

const ENCODE_CHUNK: usize = 256;

/// Rewrites a dataset with encoded states; actions, rewards and done flags
/// are copied unchanged. Returns the record count.
pub fn encode_dataset(codec: &Codec, input: &Path, output: &Path) -> Result<usize> {
    let mut reader = DatasetReader::open(input, None)?;
    if reader.dim() != codec.input_dim() {
        return Err(Error::Dimension(format!(
            "dataset state_dim {} does not match codec input dim {}",
            reader.dim(),
            codec.input_dim()
        )));
    }
    let count = reader.record_count();
    let mut writer = DatasetWriter::create(output, count, codec.latent_dim())?;
    let mut chunk: Vec<Transition> = Vec::with_capacity(ENCODE_CHUNK);
    let mut remaining = count;
    while remaining > 0 {
        chunk.clear();
        for _ in 0..remaining.min(ENCODE_CHUNK) {
            match reader.next() {
                Some(t) => chunk.push(t?),
                None => break,
            }
        }
        remaining -= chunk.len();
        let states: Vec<Vec<f32>> = chunk.iter().map(|t| t.state.clone()).collect();
        let nexts: Vec<Vec<f32>> = chunk.iter().map(|t| t.next_state.clone()).collect();
        let zs = codec.encode_many(&states)?;
        let zn = codec.encode_many(&nexts)?;
        for ((t, state), next_state) in chunk.iter().zip(zs).zip(zn) {
            writer.push(&Transition {
                state,
                action: t.action,
                reward: t.reward,
                next_state,
                done: t.done,
            })?;
        }
    }
    writer.finish()?;
    Ok(count)
}
