//! The relay decision process: one UAV, one base station and `U` users
//! following waypoint mobility over a terrain map.
//!
//! Stored heights are above ground level (AGL). Radio calls receive absolute
//! heights via [`RelayEnv::absolute`].

use std::cell::Cell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{self, CandidateConfig, CandidateSet, FeasibilityRecord};
use crate::radio::{self, LinkParams, Point3, ThresholdSet};
use crate::terrain::{self, TerrainMap};

pub const NUM_ACTIONS: usize = 27;
pub const HOLD_ACTION: usize = 13;

thread_local! {
    static ENV_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `reset`/`step` calls made on the current thread. Lets tests
/// prove that offline trainers never touch the simulator.
pub fn env_calls_on_this_thread() -> u64 {
    ENV_CALLS.with(Cell::get)
}

fn count_call() {
    ENV_CALLS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub num_users: usize,
    pub episode_len: usize,
    pub dt_s: f64,
    pub user_speed_mps: f64,
    pub user_height_m: f64,
    pub bs_height_m: f64,
    /// Base-station ground position; the map center when absent.
    pub bs_xy: Option<[f64; 2]>,
    pub uav_step_xy_m: f64,
    pub uav_step_z_m: f64,
    pub uav_alt_min_m: f64,
    pub uav_alt_max_m: f64,
    /// Half-width of the square user region centered on the base station.
    pub user_region_radius_m: f64,
    pub obs_map_h: usize,
    pub obs_map_w: usize,
    pub state_dim: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            num_users: 3,
            episode_len: 600,
            dt_s: 10.0,
            user_speed_mps: 10.0,
            user_height_m: 1.5,
            bs_height_m: 20.0,
            bs_xy: None,
            uav_step_xy_m: 100.0,
            uav_step_z_m: 10.0,
            uav_alt_min_m: 30.0,
            uav_alt_max_m: 300.0,
            user_region_radius_m: 4000.0,
            obs_map_h: 64,
            obs_map_w: 40,
            state_dim: 5136,
            seed: 0,
        }
    }
}

impl EnvConfig {
    /// Observation length implied by the map channels and `U`.
    pub fn obs_dim(&self) -> usize {
        2 * self.obs_map_h * self.obs_map_w + 4 + 4 * self.num_users
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_s", self.dt_s),
            ("user_speed_mps", self.user_speed_mps),
            ("uav_step_xy_m", self.uav_step_xy_m),
            ("uav_step_z_m", self.uav_step_z_m),
            ("user_region_radius_m", self.user_region_radius_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "env.{name} must be positive, got {v}"
                )));
            }
        }
        if self.episode_len == 0 || self.num_users == 0 {
            return Err(Error::Config(
                "episode_len and num_users must be >= 1".into(),
            ));
        }
        if self.obs_map_h == 0 || self.obs_map_w == 0 {
            return Err(Error::Config("observation map dims must be >= 1".into()));
        }
        if !(self.uav_alt_min_m < self.uav_alt_max_m && self.uav_alt_min_m >= 0.0) {
            return Err(Error::Config(format!(
                "need 0 <= uav_alt_min_m < uav_alt_max_m, got {} and {}",
                self.uav_alt_min_m, self.uav_alt_max_m
            )));
        }
        if !(self.user_height_m.is_finite() && self.bs_height_m.is_finite()) {
            return Err(Error::Config("heights must be finite".into()));
        }
        if self.obs_dim() != self.state_dim {
            return Err(Error::Config(format!(
                "2*{}*{} + 4 + 4*{} = {} does not match state_dim {}",
                self.obs_map_h,
                self.obs_map_w,
                self.num_users,
                self.obs_dim(),
                self.state_dim
            )));
        }
        Ok(())
    }
}

/// Axis-aligned square the users roam and the UAV is confined to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x.clamp(self.x_min, self.x_max),
            y.clamp(self.y_min, self.y_max),
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        [
            rng.random_range(self.x_min..=self.x_max),
            rng.random_range(self.y_min..=self.y_max),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    /// `z` is the fixed terminal height above ground.
    pub pos: Point3,
    pub waypoint: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub t: usize,
    pub uav: Point3,
    pub users: Vec<User>,
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn user_centroid_xy(&self) -> (f64, f64) {
        let n = self.users.len() as f64;
        let (sx, sy) = self
            .users
            .iter()
            .fold((0.0, 0.0), |(a, b), u| (a + u.pos.x, b + u.pos.y));
        (sx / n, sy / n)
    }

    /// Builds a world directly, for tests and hand-made scenarios.
    pub fn from_parts(t: usize, uav: Point3, users: Vec<User>, seed: u64) -> Self {
        WorldState {
            t,
            uav,
            users,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Observation vector: `[elevation | cover | uav xyz | users xyz | access rssi | backhaul rssi]`,
/// every entry in `[0, 1]`.
pub type Observation = Vec<f32>;

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub n_served: usize,
    pub n_star: usize,
    pub best_placement: Point3,
    pub uav_pos: Point3,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// `index = (dx+1)*9 + (dy+1)*3 + (dz+1)`.
pub fn decode_action(index: usize) -> Result<[i32; 3]> {
    if index >= NUM_ACTIONS {
        return Err(Error::Domain(format!("action index {index} outside 0..27")));
    }
    let i = index as i32;
    Ok([i / 9 - 1, (i / 3) % 3 - 1, i % 3 - 1])
}

pub fn encode_action(d: [i32; 3]) -> Result<usize> {
    if d.iter().any(|v| !(-1..=1).contains(v)) {
        return Err(Error::Domain(format!(
            "displacement {d:?} outside {{-1,0,1}}^3"
        )));
    }
    Ok(((d[0] + 1) * 9 + (d[1] + 1) * 3 + (d[2] + 1)) as usize)
}

/// Per-axis thresholding of a continuous action at +-1/3 (boundary maps to 0).
pub fn quantize_action(a: [f64; 3]) -> Result<usize> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite action {a:?}")));
    }
    let third = 1.0 / 3.0;
    let q = a.map(|v| {
        if v < -third {
            -1
        } else if v > third {
            1
        } else {
            0
        }
    });
    encode_action(q)
}

/// Clamp `x` to `[0, 1]` mapping NaN to 0.
fn unit(x: f64) -> f32 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0) as f32
    }
}

pub fn normalize_rssi(rssi_dbm: f64) -> f32 {
    unit((rssi_dbm + 120.0) / 50.0)
}

/// Static scenario: map, radio model, candidate settings and the precomputed
/// map channels of the observation.
#[derive(Debug, Clone)]
pub struct RelayEnv {
    map: Arc<TerrainMap>,
    cfg: EnvConfig,
    link: LinkParams,
    thresholds: ThresholdSet,
    candidates: CandidateConfig,
    region: Region,
    bs: Point3,
    map_channels: Vec<f32>,
}

impl RelayEnv {
    pub fn new(
        map: Arc<TerrainMap>,
        cfg: EnvConfig,
        link: LinkParams,
        thresholds: ThresholdSet,
        candidates: CandidateConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        link.validate()?;
        thresholds.validate()?;
        candidates.validate(&cfg)?;
        let [bx, by] = cfg
            .bs_xy
            .unwrap_or([map.extent_x() / 2.0, map.extent_y() / 2.0]);
        let r = cfg.user_region_radius_m;
        let region = Region {
            x_min: bx - r,
            x_max: bx + r,
            y_min: by - r,
            y_max: by + r,
        };
        if region.x_min < 0.0
            || region.y_min < 0.0
            || region.x_max > map.extent_x()
            || region.y_max > map.extent_y()
        {
            return Err(Error::Config(format!(
                "user region [{}, {}] x [{}, {}] extends outside map [0, {}] x [0, {}]",
                region.x_min,
                region.x_max,
                region.y_min,
                region.y_max,
                map.extent_x(),
                map.extent_y()
            )));
        }
        let (elev, cover) = terrain::resample(&map, cfg.obs_map_h, cfg.obs_map_w)?;
        let (lo, hi) = elev
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &e| {
                (a.min(e), b.max(e))
            });
        let span = (hi - lo) as f64;
        let mut map_channels = Vec::with_capacity(2 * elev.len());
        map_channels.extend(elev.iter().map(|&e| {
            if span > 1e-6 {
                unit((e - lo) as f64 / span)
            } else {
                0.0
            }
        }));
        map_channels.extend(cover.iter().map(|c| c.code() as f32 / 3.0));
        Ok(RelayEnv {
            map,
            cfg,
            link,
            thresholds,
            candidates,
            region,
            bs: Point3::new(bx, by, 0.0),
            map_channels,
        })
    }

    pub fn map(&self) -> &TerrainMap {
        &self.map
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn link(&self) -> &LinkParams {
        &self.link
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn candidate_config(&self) -> &CandidateConfig {
        &self.candidates
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    /// Base-station position with absolute height.
    pub fn bs_absolute(&self) -> Point3 {
        self.absolute(&Point3::new(self.bs.x, self.bs.y, self.cfg.bs_height_m))
    }

    /// Converts an above-ground point to absolute height.
    pub fn absolute(&self, p: &Point3) -> Point3 {
        Point3::new(p.x, p.y, self.map.elevation_unchecked(p.x, p.y) + p.z)
    }

    pub fn reset(&self, episode_seed: u64) -> Result<(WorldState, Observation)> {
        count_call();
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let users = (0..self.cfg.num_users)
            .map(|_| {
                let [x, y] = self.region.sample(&mut rng);
                let waypoint = self.region.sample(&mut rng);
                User {
                    pos: Point3::new(x, y, self.cfg.user_height_m),
                    waypoint,
                }
            })
            .collect();
        let mid = 0.5 * (self.cfg.uav_alt_min_m + self.cfg.uav_alt_max_m);
        let world = WorldState {
            t: 0,
            uav: Point3::new(self.bs.x, self.bs.y, mid),
            users,
            rng,
        };
        let obs = self.observe(&world)?;
        Ok((world, obs))
    }

    /// UAV position after applying a displacement, with region and altitude clamps.
    pub fn displaced(&self, from: &Point3, d: [i32; 3]) -> Point3 {
        let (x, y) = self.region.clamp(
            from.x + d[0] as f64 * self.cfg.uav_step_xy_m,
            from.y + d[1] as f64 * self.cfg.uav_step_xy_m,
        );
        let z = (from.z + d[2] as f64 * self.cfg.uav_step_z_m)
            .clamp(self.cfg.uav_alt_min_m, self.cfg.uav_alt_max_m);
        Point3::new(x, y, z)
    }

    /// Moves every user toward its waypoint; arrivals draw a fresh waypoint
    /// from the episode generator. Never reads the UAV state.
    pub fn advance_users(&self, world: &mut WorldState) {
        let reach = self.cfg.user_speed_mps * self.cfg.dt_s;
        for user in &mut world.users {
            let (dx, dy) = (user.waypoint[0] - user.pos.x, user.waypoint[1] - user.pos.y);
            let dist = dx.hypot(dy);
            if dist <= reach {
                user.pos.x = user.waypoint[0];
                user.pos.y = user.waypoint[1];
                user.waypoint = self.region.sample(&mut world.rng);
            } else {
                user.pos.x += dx / dist * reach;
                user.pos.y += dy / dist * reach;
            }
        }
    }

    pub fn step(&self, world: &mut WorldState, action: usize) -> Result<StepResult> {
        count_call();
        if world.t >= self.cfg.episode_len {
            return Err(Error::State(format!(
                "step called at t={} after episode end (T={})",
                world.t, self.cfg.episode_len
            )));
        }
        let d = decode_action(action)?;
        world.uav = self.displaced(&world.uav, d);
        self.advance_users(world);
        world.t += 1;
        let record = self.feasibility(world)?;
        let reward = if record.n_star > 0 {
            record.n_served_actual as f64 / record.n_star as f64
        } else {
            0.0
        };
        let next_obs = self.observe(world)?;
        Ok(StepResult {
            next_obs,
            reward,
            done: world.t == self.cfg.episode_len,
            info: StepInfo {
                n_served: record.n_served_actual,
                n_star: record.n_star,
                best_placement: record.best_placement,
                uav_pos: world.uav,
            },
        })
    }

    /// Candidate set for the current world under this scenario's settings.
    pub fn candidates(&self, world: &WorldState) -> CandidateSet {
        feasibility::build_candidates(&self.candidates, &self.region, world)
    }

    pub fn users_absolute(&self, world: &WorldState) -> Vec<Point3> {
        world.users.iter().map(|u| self.absolute(&u.pos)).collect()
    }

    /// Users served from an above-ground placement, with the world's users.
    pub fn n_served_at(&self, world: &WorldState, placement: &Point3) -> Result<usize> {
        feasibility::n_served(
            &self.map,
            &self.link,
            &self.thresholds,
            &self.absolute(placement),
            &self.users_absolute(world),
            &self.bs_absolute(),
        )
    }

    /// CS-FUB and realized service for the current world.
    pub fn feasibility(&self, world: &WorldState) -> Result<FeasibilityRecord> {
        let cands = self.candidates(world);
        let abs: Vec<Point3> = cands.placements.iter().map(|p| self.absolute(p)).collect();
        let users = self.users_absolute(world);
        let bs = self.bs_absolute();
        let (n_star, best) =
            feasibility::cs_fub_index(&self.map, &self.link, &self.thresholds, &abs, &users, &bs)?;
        let n_served_actual = feasibility::n_served(
            &self.map,
            &self.link,
            &self.thresholds,
            &self.absolute(&world.uav),
            &users,
            &bs,
        )?;
        Ok(FeasibilityRecord {
            t: world.t,
            n_star,
            best_placement: cands.placements[best],
            n_served_actual,
        })
    }

    pub fn observe(&self, world: &WorldState) -> Result<Observation> {
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend_from_slice(&self.map_channels);
        let r = &self.region;
        let zmax = self.cfg.uav_alt_max_m;
        let push_pos = |obs: &mut Vec<f32>, p: &Point3| {
            obs.push(unit((p.x - r.x_min) / (r.x_max - r.x_min)));
            obs.push(unit((p.y - r.y_min) / (r.y_max - r.y_min)));
            obs.push(unit(p.z / zmax));
        };
        push_pos(&mut obs, &world.uav);
        for u in &world.users {
            push_pos(&mut obs, &u.pos);
        }
        let uav = self.absolute(&world.uav);
        for u in &world.users {
            let rssi = radio::access_rssi(&self.map, &self.link, &uav, &self.absolute(&u.pos))?;
            obs.push(normalize_rssi(rssi));
        }
        let bh = radio::backhaul_rssi(&self.map, &self.link, &self.bs_absolute(), &uav)?;
        obs.push(normalize_rssi(bh));
        debug_assert_eq!(obs.len(), self.obs_dim());
        Ok(obs)
    }
}
