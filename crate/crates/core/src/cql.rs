//! Offline discrete-action Conservative Q-Learning with a target network and
//! an optional softmax actor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionTable;
use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::learnkit::{
    argmax, logsumexp, softmax, AdamState, Grads, Input, Matrix, Mlp, Real, WeightFile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqlConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub train_steps: usize,
    pub q_lr: f64,
    pub actor_lr: f64,
    pub alpha: f64,
    pub tau: f64,
    pub use_actor: bool,
    pub entropy_weight: f64,
    pub hidden: Vec<usize>,
    pub log_every: usize,
}

impl Default for CqlConfig {
    fn default() -> Self {
        CqlConfig {
            batch_size: 128,
            gamma: 0.99,
            train_steps: 100_000,
            q_lr: 3e-5,
            actor_lr: 5e-5,
            alpha: 0.5,
            tau: 0.005,
            use_actor: true,
            entropy_weight: 0.01,
            hidden: vec![256, 256],
            log_every: 1000,
        }
    }
}

impl CqlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.q_lr > 0.0
            && self.actor_lr > 0.0
            && self.q_lr.is_finite()
            && self.actor_lr.is_finite())
        {
            return bad("learning rates must be positive".into());
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return bad(format!(
                "entropy_weight must be >= 0, got {}",
                self.entropy_weight
            ));
        }
        if self.batch_size == 0 || self.log_every == 0 || self.hidden.contains(&0) {
            return bad("batch_size, log_every and hidden widths must be positive".into());
        }
        Ok(())
    }

    fn net_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut d = vec![input_dim];
        d.extend(&self.hidden);
        d.push(NUM_ACTIONS);
        d
    }
}

/// `y_i = r_i + gamma * (1 - done_i) * max_a targetQ(s'_i, a)`.
pub fn td_target<T: Real>(
    rewards: &[f32],
    dones: &[bool],
    next_q: &Matrix<T>,
    gamma: f64,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|i| {
            let r = rewards[i] as f64;
            if dones[i] {
                r
            } else {
                let max = next_q
                    .row(i)
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
                r + gamma * max
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CqlLoss<T> {
    pub total: f64,
    pub bellman_mse: f64,
    pub conservative: f64,
    /// Mean `Q(s_i, a_i)` over the batch.
    pub mean_data_q: f64,
    /// Gradient with respect to the network's Q outputs.
    pub dq: Matrix<T>,
}

/// `mean (Q(s,a) - y)^2 + alpha * mean [logsumexp_a' Q(s,a') - Q(s,a)]` and
/// its gradient with respect to `q`.
pub fn cql_loss<T: Real>(
    q: &Matrix<T>,
    actions: &[usize],
    y: &[f64],
    alpha: f64,
) -> Result<CqlLoss<T>> {
    let b = q.rows;
    if actions.len() != b || y.len() != b {
        return Err(Error::Dimension(format!(
            "Q batch has {b} rows, got {} actions and {} targets",
            actions.len(),
            y.len()
        )));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= q.cols) {
        return Err(Error::Domain(format!("action {a} outside 0..{}", q.cols)));
    }
    let bf = b as f64;
    let mut dq = Matrix::zeros(b, q.cols);
    let (mut bellman, mut cons, mut data_q) = (0.0, 0.0, 0.0);
    for i in 0..b {
        let row = q.row(i);
        let a = actions[i];
        let qa = row[a].as_f64();
        let diff = qa - y[i];
        bellman += diff * diff;
        cons += logsumexp(row).as_f64() - qa;
        data_q += qa;
        let p = softmax(row);
        let out = dq.row_mut(i);
        for j in 0..row.len() {
            let ind = if j == a { 1.0 } else { 0.0 };
            let mut g = alpha / bf * (p[j].as_f64() - ind);
            if j == a {
                g += 2.0 / bf * diff;
            }
            out[j] = T::of(g);
        }
    }
    let (bellman, cons) = (bellman / bf, cons / bf);
    Ok(CqlLoss {
        total: bellman + alpha * cons,
        bellman_mse: bellman,
        conservative: cons,
        mean_data_q: data_q / bf,
        dq,
    })
}

/// `-mean sum_a pi(a) Q(a) - w * mean H(pi)` with `pi = softmax(logits)` and
/// `Q` held constant. Returns the loss and its gradient with respect to the logits.
pub fn actor_loss<T: Real>(
    logits: &Matrix<T>,
    q: &Matrix<T>,
    entropy_weight: f64,
) -> Result<(f64, Matrix<T>)> {
    if logits.rows != q.rows || logits.cols != q.cols {
        return Err(Error::Dimension(format!(
            "logits {}x{} and Q {}x{} differ",
            logits.rows, logits.cols, q.rows, q.cols
        )));
    }
    let bf = logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for i in 0..logits.rows {
        let row = logits.row(i);
        let lse = logsumexp(row).as_f64();
        let logp: Vec<f64> = row.iter().map(|l| l.as_f64() - lse).collect();
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let qs: Vec<f64> = q.row(i).iter().map(|v| v.as_f64()).collect();
        let expected: f64 = p.iter().zip(&qs).map(|(a, b)| a * b).sum();
        let entropy: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
        loss += -expected - entropy_weight * entropy;
        let out = grad.row_mut(i);
        for j in 0..row.len() {
            let g = -p[j] * (qs[j] - expected) + entropy_weight * p[j] * (logp[j] + entropy);
            out[j] = T::of(g / bf);
        }
    }
    Ok((loss / bf, grad))
}

/// Trained networks plus the provenance needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub q: Mlp<f32>,
    pub target_q: Mlp<f32>,
    pub actor: Option<Mlp<f32>>,
    /// `raw` or the content hash of the codec whose latents the bundle consumes.
    pub codec_id: String,
    pub config: CqlConfig,
    pub seed: u64,
}

fn net_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

impl PolicyBundle {
    /// Freshly initialized networks; the target starts as a copy of `q`.
    pub fn init(input_dim: usize, cfg: &CqlConfig, seed: u64, codec_id: &str) -> Result<Self> {
        cfg.validate()?;
        let q = Mlp::new(&cfg.net_dims(input_dim), net_seed(seed, 11))?;
        let actor = if cfg.use_actor {
            Some(Mlp::new(&cfg.net_dims(input_dim), net_seed(seed, 12))?)
        } else {
            None
        };
        Ok(PolicyBundle {
            target_q: q.clone(),
            q,
            actor,
            codec_id: codec_id.to_string(),
            config: cfg.clone(),
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.q.input_dim()
    }

    /// Greedy action: actor logits when present, else Q; ties go to the lowest index.
    pub fn act(&self, x: &[f32]) -> Result<usize> {
        let net = self.actor.as_ref().unwrap_or(&self.q);
        Ok(argmax(&net.forward_one(x)?))
    }

    pub fn q_values(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.q.forward_one(x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut nets = vec![
            ("q".to_string(), self.q.clone()),
            ("target_q".to_string(), self.target_q.clone()),
        ];
        if let Some(a) = &self.actor {
            nets.push(("actor".to_string(), a.clone()));
        }
        let config = toml::to_string(&self.config)
            .map_err(|e| Error::Config(format!("cannot serialize CQL config: {e}")))?;
        WeightFile::mlps(nets)
            .with_meta("kind", "policy")
            .with_meta("d", self.input_dim().to_string())
            .with_meta("codec_id", self.codec_id.clone())
            .with_meta("seed", self.seed.to_string())
            .with_meta("config", config)
            .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = WeightFile::load(path)?;
        let kind = file.meta("kind")?;
        if kind != "policy" {
            return Err(Error::format(
                path,
                0,
                format!("weight file kind `{kind}` is not a policy"),
            ));
        }
        let d: usize = file
            .meta("d")?
            .parse()
            .map_err(|_| Error::format(path, 0, "metadata `d` is not a count"))?;
        let seed: u64 = file
            .meta("seed")?
            .parse()
            .map_err(|_| Error::format(path, 0, "metadata `seed` is not an integer"))?;
        let config: CqlConfig = toml::from_str(file.meta("config")?)
            .map_err(|e| Error::format(path, 0, format!("embedded config: {e}")))?;
        let dims = config.net_dims(d);
        let q = file.mlp_with_dims("q", &dims)?;
        let target_q = file.mlp_with_dims("target_q", &dims)?;
        let actor = match file.mlp("actor") {
            Some(_) => Some(file.mlp_with_dims("actor", &dims)?),
            None if config.use_actor => {
                return Err(Error::Missing(format!(
                    "network `actor` in {}",
                    path.display()
                )))
            }
            None => None,
        };
        Ok(PolicyBundle {
            q,
            target_q,
            actor,
            codec_id: file.meta("codec_id")?.to_string(),
            config,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub bellman_mse: f64,
    pub conservative: f64,
    pub mean_q: f64,
}

pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut text = String::from("step,bellman_mse,conservative,mean_q\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.step, r.bellman_mse, r.conservative, r.mean_q
        ));
    }
    crate::fsutil::write_atomic(path, text.as_bytes())
}

/// Parameter gradients of the critic loss for one batch input.
pub fn cql_grads<T: Real>(
    q_net: &Mlp<T>,
    x: Input<'_, T>,
    actions: &[usize],
    y: &[f64],
    alpha: f64,
) -> Result<(CqlLoss<T>, Grads<T>, Vec<bool>)> {
    let (q, cache) = q_net.forward(x)?;
    let loss = cql_loss(&q, actions, y, alpha)?;
    let (grads, _) = q_net.backward(&cache, &loss.dq, false)?;
    Ok((loss, grads, cache.relu_mask()))
}

/// Parameter gradients of the actor loss against fixed Q values.
pub fn actor_grads<T: Real>(
    actor: &Mlp<T>,
    x: Input<'_, T>,
    q: &Matrix<T>,
    entropy_weight: f64,
) -> Result<(f64, Grads<T>, Vec<bool>)> {
    let (logits, cache) = actor.forward(x)?;
    let (loss, dl) = actor_loss(&logits, q, entropy_weight)?;
    let (grads, _) = actor.backward(&cache, &dl, false)?;
    Ok((loss, grads, cache.relu_mask()))
}

/// Trains from the table alone; the simulator is never consulted.
pub fn train(
    table: &TransitionTable,
    cfg: &CqlConfig,
    seed: u64,
    codec_id: &str,
) -> Result<(PolicyBundle, Vec<TrainLogRow>)> {
    cfg.validate()?;
    if table.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    let mut bundle = PolicyBundle::init(table.dim(), cfg, seed, codec_id)?;
    let mut q_opt = AdamState::new(cfg.q_lr, &bundle.q);
    let mut actor_opt = bundle
        .actor
        .as_ref()
        .map(|a| AdamState::new(cfg.actor_lr, a));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut log = Vec::new();
    let (mut acc_b, mut acc_c, mut acc_q, mut acc_n) = (0.0, 0.0, 0.0, 0usize);
    for step in 0..cfg.train_steps {
        let rows: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..table.len()))
            .collect();
        let batch = table.batch(&rows);
        let next_q = bundle
            .target_q
            .predict(Input::Factored(&batch.next_states))?;
        let y = td_target(&batch.rewards, &batch.dones, &next_q, cfg.gamma);
        let (q, cache) = bundle.q.forward(Input::Factored(&batch.states))?;
        let loss = cql_loss(&q, &batch.actions, &y, cfg.alpha)?;
        if !loss.total.is_finite() {
            return Err(Error::Domain(format!(
                "critic loss diverged at step {step}"
            )));
        }
        let (grads, _) = bundle.q.backward(&cache, &loss.dq, false)?;
        if let (Some(actor), Some(opt)) = (bundle.actor.as_mut(), actor_opt.as_mut()) {
            let (_, agrads, _) = actor_grads(
                actor,
                Input::Factored(&batch.states),
                &q,
                cfg.entropy_weight,
            )?;
            opt.step(actor, &agrads)?;
        }
        q_opt.step(&mut bundle.q, &grads)?;
        bundle.target_q.soft_update(&bundle.q, cfg.tau)?;

        acc_b += loss.bellman_mse;
        acc_c += loss.conservative;
        acc_q += loss.mean_data_q;
        acc_n += 1;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.train_steps {
            let n = acc_n as f64;
            log.push(TrainLogRow {
                step: step + 1,
                bellman_mse: acc_b / n,
                conservative: acc_c / n,
                mean_q: acc_q / n,
            });
            (acc_b, acc_c, acc_q, acc_n) = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok((bundle, log))
}
