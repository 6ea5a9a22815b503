//! Behavior policies, offline dataset generation and the `UVDS` transition
//! container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "UVDS" | u32 version=1 | u64 count | u32 state_dim |
//! count x (f32[d] state | u16 action | f32 reward | f32[d] next_state | u8 done)
//! ```

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{u32_of, ByteReader, ByteWriter};
use crate::env::{decode_action, encode_action, RelayEnv, WorldState, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::learnkit::{Factored, Matrix};
use crate::par;
use crate::radio::Point3;

const MAGIC: &[u8; 4] = b"UVDS";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;

/// Target height of the centroid-tracking policy.
pub const CENTROID_TRACK_ALT_M: f64 = 120.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: u16,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub done: bool,
}

fn record_len(dim: usize) -> u64 {
    8 * dim as u64 + 7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorPolicy {
    Random,
    Centroid,
    Coverage,
    Oracle,
}

impl BehaviorPolicy {
    pub const ALL: [BehaviorPolicy; 4] = [
        BehaviorPolicy::Random,
        BehaviorPolicy::Centroid,
        BehaviorPolicy::Coverage,
        BehaviorPolicy::Oracle,
    ];
}

/// Probabilities of driving an episode with each behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyMix {
    pub random: f64,
    pub centroid: f64,
    pub coverage: f64,
    pub oracle: f64,
}

impl Default for PolicyMix {
    fn default() -> Self {
        PolicyMix {
            random: 0.3,
            centroid: 0.3,
            coverage: 0.3,
            oracle: 0.1,
        }
    }
}

impl PolicyMix {
    pub fn only(policy: BehaviorPolicy) -> Self {
        let mut m = PolicyMix {
            random: 0.0,
            centroid: 0.0,
            coverage: 0.0,
            oracle: 0.0,
        };
        match policy {
            BehaviorPolicy::Random => m.random = 1.0,
            BehaviorPolicy::Centroid => m.centroid = 1.0,
            BehaviorPolicy::Coverage => m.coverage = 1.0,
            BehaviorPolicy::Oracle => m.oracle = 1.0,
        }
        m
    }

    fn weights(&self) -> [f64; 4] {
        [self.random, self.centroid, self.coverage, self.oracle]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config(format!(
                "policy weights must be >= 0, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "policy weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

pub fn policy_random(rng: &mut impl Rng) -> usize {
    rng.random_range(0..NUM_ACTIONS)
}

/// Unit step toward `target` per axis, holding an axis when within half a step.
fn step_toward(env: &RelayEnv, from: &Point3, target: &Point3) -> usize {
    let cfg = env.config();
    let axis = |delta: f64, band: f64| {
        if delta > band {
            1
        } else if delta < -band {
            -1
        } else {
            0
        }
    };
    let d = [
        axis(target.x - from.x, cfg.uav_step_xy_m / 2.0),
        axis(target.y - from.y, cfg.uav_step_xy_m / 2.0),
        axis(target.z - from.z, cfg.uav_step_z_m / 2.0),
    ];
    encode_action(d).expect("unit displacement")
}

pub fn policy_centroid(env: &RelayEnv, world: &WorldState) -> usize {
    let (cx, cy) = world.user_centroid_xy();
    step_toward(env, &world.uav, &Point3::new(cx, cy, CENTROID_TRACK_ALT_M))
}

/// One-step lookahead on served users with users held fixed; ties go to the
/// lower action index.
pub fn policy_coverage(env: &RelayEnv, world: &WorldState) -> Result<usize> {
    let mut best = (0, 0);
    for a in 0..NUM_ACTIONS {
        let d = decode_action(a)?;
        let p = env.displaced(&world.uav, d);
        let n = env.n_served_at(world, &p)?;
        if a == 0 || n > best.1 {
            best = (a, n);
        }
    }
    Ok(best.0)
}

/// Greedy step toward the current CS-FUB placement.
pub fn policy_oracle(env: &RelayEnv, world: &WorldState) -> Result<usize> {
    let record = env.feasibility(world)?;
    Ok(step_toward(env, &world.uav, &record.best_placement))
}

pub fn behavior_action(
    policy: BehaviorPolicy,
    env: &RelayEnv,
    world: &WorldState,
    rng: &mut impl Rng,
) -> Result<usize> {
    match policy {
        BehaviorPolicy::Random => Ok(policy_random(rng)),
        BehaviorPolicy::Centroid => Ok(policy_centroid(env, world)),
        BehaviorPolicy::Coverage => policy_coverage(env, world),
        BehaviorPolicy::Oracle => policy_oracle(env, world),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub episodes: usize,
    pub transitions: usize,
    pub mean_reward: f64,
    /// Episodes driven by each policy, in `BehaviorPolicy::ALL` order.
    pub policy_episodes: [usize; 4],
}

/// Policy and RNG for episode `index`: the environment is reset with
/// `seed + index`, and an independent stream of the same seed drives the
/// policy draw and random actions.
fn episode_rng(seed: u64, index: usize) -> (u64, ChaCha8Rng) {
    let ep_seed = seed.wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
    rng.set_stream(1);
    (ep_seed, rng)
}

fn roll_episode(
    env: &RelayEnv,
    mix: &PolicyMix,
    seed: u64,
    index: usize,
    limit: usize,
) -> Result<(BehaviorPolicy, Vec<Transition>)> {
    let (ep_seed, mut rng) = episode_rng(seed, index);
    let dist =
        WeightedIndex::new(mix.weights()).map_err(|e| Error::Config(format!("policy mix: {e}")))?;
    let policy = BehaviorPolicy::ALL[dist.sample(&mut rng)];
    let (mut world, mut obs) = env.reset(ep_seed)?;
    let steps = limit.min(env.config().episode_len);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let action = behavior_action(policy, env, &world, &mut rng)?;
        let r = env.step(&mut world, action)?;
        out.push(Transition {
            state: obs,
            action: action as u16,
            reward: r.reward as f32,
            next_state: r.next_obs.clone(),
            done: r.done,
        });
        obs = r.next_obs;
    }
    Ok((policy, out))
}

/// Rolls whole episodes until `n` transitions exist and writes exactly `n`.
pub fn generate_dataset(
    env: &RelayEnv,
    mix: &PolicyMix,
    n: usize,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<DatasetSummary> {
    mix.validate()?;
    if n == 0 {
        return Err(Error::Config("n_transitions must be >= 1".into()));
    }
    let t = env.config().episode_len;
    let episodes = n.div_ceil(t);
    let mut writer = DatasetWriter::create(out, n, env.obs_dim())?;
    let mut summary = DatasetSummary {
        episodes,
        transitions: n,
        mean_reward: 0.0,
        policy_episodes: [0; 4],
    };
    let mut reward_sum = 0.0;
    // Episodes are produced in waves of `threads` so memory stays bounded.
    let wave = threads.max(1);
    let mut first = 0;
    while first < episodes {
        let count = wave.min(episodes - first);
        let results = par::map_indexed(count, threads, |k| {
            let index = first + k;
            let limit = n - index * t;
            roll_episode(env, mix, seed, index, limit)
        });
        for res in results {
            let (policy, transitions) = res?;
            let slot = BehaviorPolicy::ALL
                .iter()
                .position(|p| *p == policy)
                .unwrap();
            summary.policy_episodes[slot] += 1;
            for tr in &transitions {
                reward_sum += tr.reward as f64;
                writer.push(tr)?;
            }
        }
        first += count;
    }
    writer.finish()?;
    summary.mean_reward = reward_sum / n as f64;
    Ok(summary)
}

/// Streaming writer; the record count is fixed up front and checked on finish.
pub struct DatasetWriter {
    inner: ByteWriter,
    expected: usize,
    written: usize,
    dim: usize,
}

impl DatasetWriter {
    pub fn create(path: &Path, count: usize, dim: usize) -> Result<Self> {
        let mut inner = ByteWriter::create(path)?;
        inner.bytes(MAGIC)?;
        inner.u32(VERSION)?;
        inner.u64(count as u64)?;
        inner.u32(u32_of(dim, "state_dim")?)?;
        Ok(DatasetWriter {
            inner,
            expected: count,
            written: 0,
            dim,
        })
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.dim || t.next_state.len() != self.dim {
            return Err(Error::Dimension(format!(
                "transition has state lengths {}/{}, dataset state_dim is {}",
                t.state.len(),
                t.next_state.len(),
                self.dim
            )));
        }
        if t.action as usize >= NUM_ACTIONS {
            return Err(Error::Domain(format!("action {} outside 0..27", t.action)));
        }
        if self.written == self.expected {
            return Err(Error::State(format!(
                "dataset already holds {} records",
                self.expected
            )));
        }
        self.inner.f32s(&t.state)?;
        self.inner.u16(t.action)?;
        self.inner.f32(t.reward)?;
        self.inner.f32s(&t.next_state)?;
        self.inner.u8(t.done as u8)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::State(format!(
                "dataset header promises {} records, {} written",
                self.expected, self.written
            )));
        }
        self.inner.finish()
    }
}

pub fn write_dataset(path: &Path, transitions: &[Transition]) -> Result<()> {
    let dim = transitions.first().map_or(0, |t| t.state.len());
    let mut w = DatasetWriter::create(path, transitions.len(), dim)?;
    for t in transitions {
        w.push(t)?;
    }
    w.finish()
}

/// Streaming reader that validates the header against the file size before
/// yielding records.
pub struct DatasetReader {
    inner: ByteReader<BufReader<File>>,
    count: u64,
    dim: usize,
    read: u64,
}

impl DatasetReader {
    /// Opens a dataset; `expected_dim` (when given) must match the header.
    pub fn open(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let size = std::fs::metadata(path)
            .map_err(|e| Error::io(path, e))?
            .len();
        let mut inner = ByteReader::open(path)?;
        inner.magic(MAGIC)?;
        let version = inner.u32("version")?;
        if version != VERSION {
            return Err(inner.fail(format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = inner.u64("record count")?;
        let dim = inner.u32("state_dim")? as usize;
        if dim == 0 {
            return Err(inner.fail("state_dim is 0"));
        }
        let body = size.saturating_sub(HEADER_LEN);
        let expected = count.checked_mul(record_len(dim));
        if expected != Some(body) {
            return Err(inner.fail(format!(
                "header declares {count} records of state_dim {dim} ({} bytes each) but {body} body bytes follow",
                record_len(dim)
            )));
        }
        if let Some(want) = expected_dim {
            if want != dim {
                return Err(Error::Dimension(format!(
                    "dataset {} has state_dim {dim}, expected {want}",
                    path.display()
                )));
            }
        }
        Ok(DatasetReader {
            inner,
            count,
            dim,
            read: 0,
        })
    }

    pub fn record_count(&self) -> usize {
        self.count as usize
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Reads the next record into `out`, reusing its buffers.
    pub fn next_into(&mut self, out: &mut Transition) -> Result<bool> {
        if self.read == self.count {
            return Ok(false);
        }
        out.state.resize(self.dim, 0.0);
        out.next_state.resize(self.dim, 0.0);
        self.inner.f32s(&mut out.state, "state")?;
        let action = self.inner.u16("action")?;
        if action as usize >= NUM_ACTIONS {
            return Err(self.inner.fail(format!("action {action} outside 0..27")));
        }
        out.action = action;
        out.reward = self.inner.f32("reward")?;
        self.inner.f32s(&mut out.next_state, "next_state")?;
        out.done = match self.inner.u8("done flag")? {
            0 => false,
            1 => true,
            v => return Err(self.inner.fail(format!("done flag {v} is not 0 or 1"))),
        };
        self.read += 1;
        if self.read == self.count {
            self.inner.expect_eof()?;
        }
        Ok(true)
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Transition>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut t = Transition {
            state: Vec::new(),
            action: 0,
            reward: 0.0,
            next_state: Vec::new(),
            done: false,
        };
        match self.next_into(&mut t) {
            Ok(true) => Some(Ok(t)),
            Ok(false) => None,
            Err(e) => {
                self.read = self.count;
                Some(Err(e))
            }
        }
    }
}

pub fn read_dataset(path: &Path, expected_dim: Option<usize>) -> Result<Vec<Transition>> {
    DatasetReader::open(path, expected_dim)?.collect()
}

/// In-memory transition store. Columns holding the same value in every state
/// and next state are kept once; the rest are stored column-major so a column
/// can be promoted to varying cheaply while loading.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    dim: usize,
    /// `Some(v)` while column is constant, `None` once it varies.
    constant: Vec<Option<f32>>,
    /// Column index -> slot in `states`/`next_states`.
    slot: Vec<usize>,
    states: Vec<Vec<f32>>,
    next_states: Vec<Vec<f32>>,
    pub actions: Vec<u16>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
}

/// One minibatch with factored state matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Factored<f32>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    pub next_states: Factored<f32>,
    pub dones: Vec<bool>,
}

impl TransitionTable {
    pub fn new(dim: usize) -> Self {
        TransitionTable {
            dim,
            constant: Vec::new(),
            slot: vec![usize::MAX; dim],
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let mut reader = DatasetReader::open(path, expected_dim)?;
        let mut table = TransitionTable::new(reader.dim());
        let mut t = Transition {
            state: Vec::new(),
            action: 0,
            reward: 0.0,
            next_state: Vec::new(),
            done: false,
        };
        while reader.next_into(&mut t)? {
            table.push(&t)?;
        }
        Ok(table)
    }

    pub fn from_transitions(dim: usize, transitions: &[Transition]) -> Result<Self> {
        let mut table = TransitionTable::new(dim);
        for t in transitions {
            table.push(t)?;
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of columns that vary somewhere in the table.
    pub fn varying_columns(&self) -> usize {
        self.states.len()
    }

    fn promote(&mut self, col: usize, value: f32) {
        let n = self.len();
        self.slot[col] = self.states.len();
        self.states.push(vec![value; n]);
        self.next_states.push(vec![value; n]);
        self.constant[col] = None;
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.dim || t.next_state.len() != self.dim {
            return Err(Error::Dimension(format!(
                "transition state lengths {}/{}, table dim {}",
                t.state.len(),
                t.next_state.len(),
                self.dim
            )));
        }
        if self.is_empty() {
            self.constant = t.state.iter().map(|&v| Some(v)).collect();
        }
        for c in 0..self.dim {
            if let Some(v) = self.constant[c] {
                let same = |x: f32| x.to_bits() == v.to_bits();
                if !(same(t.state[c]) && same(t.next_state[c])) {
                    self.promote(c, v);
                }
            }
        }
        for c in 0..self.dim {
            if self.constant[c].is_none() {
                let s = self.slot[c];
                self.states[s].push(t.state[c]);
                self.next_states[s].push(t.next_state[c]);
            }
        }
        self.actions.push(t.action);
        self.rewards.push(t.reward);
        self.dones.push(t.done);
        Ok(())
    }

    fn gather(&self, cols: &[Vec<f32>], rows: &[usize]) -> Factored<f32> {
        let mut shared_idx = Vec::new();
        let mut shared_val = Vec::new();
        let mut var_idx = Vec::new();
        for c in 0..self.dim {
            match self.constant.get(c).copied().flatten() {
                Some(v) => {
                    shared_idx.push(c);
                    shared_val.push(v);
                }
                None => var_idx.push(c),
            }
        }
        let mut var = Matrix::zeros(rows.len(), var_idx.len());
        for (j, &c) in var_idx.iter().enumerate() {
            let col = &cols[self.slot[c]];
            for (i, &r) in rows.iter().enumerate() {
                var.data[i * var_idx.len() + j] = col[r];
            }
        }
        Factored {
            cols: self.dim,
            shared_idx,
            shared_val,
            var_idx,
            var,
        }
    }

    pub fn states(&self, rows: &[usize]) -> Factored<f32> {
        self.gather(&self.states, rows)
    }

    pub fn next_states(&self, rows: &[usize]) -> Factored<f32> {
        self.gather(&self.next_states, rows)
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            states: self.states(rows),
            actions: rows.iter().map(|&r| self.actions[r] as usize).collect(),
            rewards: rows.iter().map(|&r| self.rewards[r]).collect(),
            next_states: self.next_states(rows),
            dones: rows.iter().map(|&r| self.dones[r]).collect(),
        }
    }

    /// Dense copy of one state.
    pub fn state(&self, row: usize) -> Vec<f32> {
        self.states(&[row]).row_dense(0)
    }

    pub fn transition(&self, row: usize) -> Transition {
        Transition {
            state: self.states(&[row]).row_dense(0),
            action: self.actions[row],
            reward: self.rewards[row],
            next_state: self.next_states(&[row]).row_dense(0),
            done: self.dones[row],
        }
    }
}

/// Entropy in nats of the empirical action marginal.
pub fn action_entropy(actions: &[u16]) -> f64 {
    let mut counts = [0usize; NUM_ACTIONS];
    for &a in actions {
        counts[a as usize] += 1;
    }
    let n = actions.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, User, HOLD_ACTION};
    use crate::feasibility::CandidateConfig;
    use crate::radio::{LinkParams, ThresholdSet};
    use crate::terrain::{LandCover, TerrainMap};
    use std::sync::Arc;

    fn flat_env(episode_len: usize) -> RelayEnv {
        let map = Arc::new(TerrainMap::uniform(64, 40, 400.0, 0.0, LandCover::Open).unwrap());
        RelayEnv::new(
            map,
            EnvConfig {
                episode_len,
                ..EnvConfig::default()
            },
            LinkParams::default(),
            ThresholdSet::default(),
            CandidateConfig::default(),
        )
        .unwrap()
    }

    fn world_at(uav: Point3, users: &[(f64, f64)]) -> WorldState {
        let users = users
            .iter()
            .map(|&(x, y)| User {
                pos: Point3::new(x, y, 1.5),
                waypoint: [x, y],
            })
            .collect();
        WorldState::from_parts(0, uav, users, 0)
    }

    #[test]
    fn random_policy_is_uniform_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; NUM_ACTIONS];
        for _ in 0..27_000 {
            counts[policy_random(&mut rng)] += 1;
        }
        assert!(
            counts.iter().all(|&c| (800..=1200).contains(&c)),
            "{counts:?}"
        );
        let a: Vec<usize> = (0..10)
            .map(|_| policy_random(&mut ChaCha8Rng::seed_from_u64(1)))
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn centroid_policy_cases() {
        let env = flat_env(600);
        let (cx, cy) = (8000.0, 12800.0);
        let w = world_at(Point3::new(cx, cy, 120.0), &[(cx, cy)]);
        assert_eq!(policy_centroid(&env, &w), HOLD_ACTION);
        let w = world_at(Point3::new(cx - 1000.0, cy, 120.0), &[(cx, cy)]);
        assert_eq!(policy_centroid(&env, &w), 22);
        let w = world_at(Point3::new(cx - 30.0, cy, 120.0), &[(cx, cy)]);
        assert_eq!(policy_centroid(&env, &w), HOLD_ACTION);
    }

    #[test]
    fn oracle_policy_steps_toward_best() {
        let env = flat_env(600);
        let w = world_at(Point3::new(8000.0, 12800.0, 165.0), &[(8000.0, 12800.0)]);
        let best = env.feasibility(&w).unwrap().best_placement;
        let a = policy_oracle(&env, &w).unwrap();
        assert_eq!(a, step_toward(&env, &w.uav, &best));
        assert_eq!(a, policy_oracle(&env, &w).unwrap());
        let at_best = world_at(best, &[(8000.0, 12800.0)]);
        assert_eq!(policy_oracle(&env, &at_best).unwrap(), HOLD_ACTION);
        let from = Point3::new(0.0, 0.0, 120.0);
        let to = Point3::new(0.0, 500.0, 60.0);
        assert_eq!(step_toward(&env, &from, &to), 15);
    }

    #[test]
    fn coverage_policy_matches_exhaustive_search() {
        let env = flat_env(600);
        let w = world_at(
            Point3::new(8000.0, 12800.0, 120.0),
            &[(4100.0, 8900.0), (11000.0, 16000.0)],
        );
        let served: Vec<usize> = (0..NUM_ACTIONS)
            .map(|a| {
                env.n_served_at(&w, &env.displaced(&w.uav, decode_action(a).unwrap()))
                    .unwrap()
            })
            .collect();
        let max = *served.iter().max().unwrap();
        let expect = served.iter().position(|&n| n == max).unwrap();
        assert_eq!(policy_coverage(&env, &w).unwrap(), expect);

        let deaf = RelayEnv::new(
            Arc::new(env.map().clone()),
            env.config().clone(),
            LinkParams::default(),
            ThresholdSet {
                tau_a_dbm: 0.0,
                tau_b_dbm: -90.0,
            },
            CandidateConfig::default(),
        )
        .unwrap();
        assert_eq!(policy_coverage(&deaf, &w).unwrap(), 0);
    }

    #[test]
    fn generation_is_exact_and_deterministic() {
        let env = flat_env(30);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.uvds");
        let b = dir.path().join("b.uvds");
        let s = generate_dataset(&env, &PolicyMix::default(), 70, 5, 1, &a).unwrap();
        assert_eq!((s.episodes, s.transitions), (3, 70));
        generate_dataset(&env, &PolicyMix::default(), 70, 5, 3, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let records = read_dataset(&a, Some(5136)).unwrap();
        assert_eq!(records.len(), 70);
        assert!(records[29].done && !records[30].done && !records[69].done);
        assert!(records.iter().all(|t| (0.0..=1.0).contains(&t.reward)));
    }

    #[test]
    fn format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.uvds");
        let t = Transition {
            state: vec![0.5, 1.0, 0.0],
            action: 26,
            reward: 0.25,
            next_state: vec![0.0, 1.0, 0.5],
            done: true,
        };
        write_dataset(&p, &[t.clone(), t.clone()]).unwrap();
        assert_eq!(read_dataset(&p, None).unwrap(), vec![t.clone(), t.clone()]);
        let err = read_dataset(&p, Some(4)).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('4'), "{err}");

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[16] = 4;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_dataset(&p, None), Err(Error::Format { .. })));
    }

    #[test]
    fn table_factors_constant_columns() {
        let mk = |s: [f32; 3], n: [f32; 3], a| Transition {
            state: s.to_vec(),
            action: a,
            reward: 0.5,
            next_state: n.to_vec(),
            done: false,
        };
        let rows = vec![
            mk([1.0, 2.0, 3.0], [1.0, 2.0, 4.0], 1),
            mk([1.0, 2.0, 5.0], [1.0, 2.0, 6.0], 2),
            mk([1.0, 7.0, 5.0], [1.0, 2.0, 6.0], 3),
        ];
        let table = TransitionTable::from_transitions(3, &rows).unwrap();
        assert_eq!(table.varying_columns(), 2);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(&table.transition(i), r);
        }
        let b = table.batch(&[2, 0]);
        assert_eq!(b.states.shared_idx, vec![0]);
        assert_eq!(b.states.to_dense().data, vec![1.0, 7.0, 5.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.actions, vec![3, 1]);
    }
}
