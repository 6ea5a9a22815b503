//! Deterministic link budget: free-space pathloss, terrain line-of-sight,
//! terminal land-cover clutter and the access/backhaul predicates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::{LandCover, TerrainMap};

/// A point in meters. Radio functions take absolute heights (terrain
/// elevation plus height above ground).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn distance_xy(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub freq_mhz: f64,
    pub uav_tx_dbm: f64,
    pub bs_tx_dbm: f64,
    pub nlos_penalty_db: f64,
    /// Indexed by land-cover code: water, open, sparse, dense.
    pub cover_offset_db: [f64; 4],
    pub los_sample_step_cells: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            freq_mhz: 2400.0,
            uav_tx_dbm: 30.0,
            bs_tx_dbm: 40.0,
            nlos_penalty_db: 20.0,
            cover_offset_db: [0.0, 0.0, 6.0, 15.0],
            los_sample_step_cells: 0.5,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq_mhz.is_finite() && self.freq_mhz > 0.0) {
            return Err(Error::Config("freq_mhz must be positive".into()));
        }
        if !(self.uav_tx_dbm.is_finite() && self.bs_tx_dbm.is_finite()) {
            return Err(Error::Config("transmit powers must be finite".into()));
        }
        if !(self.nlos_penalty_db >= 0.0 && self.nlos_penalty_db.is_finite()) {
            return Err(Error::Config("nlos_penalty_db must be >= 0".into()));
        }
        if self
            .cover_offset_db
            .iter()
            .any(|o| !(o.is_finite() && *o >= 0.0))
        {
            return Err(Error::Config("cover offsets must be >= 0".into()));
        }
        if !(self.los_sample_step_cells > 0.0 && self.los_sample_step_cells <= 1.0) {
            return Err(Error::Config(
                "los_sample_step_cells must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn cover_offset(&self, cover: LandCover) -> f64 {
        self.cover_offset_db[cover.code() as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSet {
    pub tau_a_dbm: f64,
    pub tau_b_dbm: f64,
}

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet {
            tau_a_dbm: -90.0,
            tau_b_dbm: -90.0,
        }
    }
}

impl ThresholdSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_a_dbm.is_finite() && self.tau_b_dbm.is_finite()) {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// Free-space pathloss in dB; distances under 1 m are treated as 1 m.
pub fn fspl_db(distance_m: f64, freq_mhz: f64) -> Result<f64> {
    if !distance_m.is_finite() || !freq_mhz.is_finite() || freq_mhz <= 0.0 {
        return Err(Error::Domain(format!(
            "fspl needs finite distance and positive frequency, got {distance_m} m, {freq_mhz} MHz"
        )));
    }
    let d_km = distance_m.max(1.0) / 1000.0;
    Ok(20.0 * d_km.log10() + 20.0 * freq_mhz.log10() + 32.44)
}

fn check_inside(map: &TerrainMap, p: &Point3) -> Result<()> {
    if !p.is_finite() || !map.contains(p.x, p.y) {
        return Err(Error::Domain(format!(
            "point ({}, {}, {}) outside map extent [0, {}] x [0, {}]",
            p.x,
            p.y,
            p.z,
            map.extent_x(),
            map.extent_y()
        )));
    }
    Ok(())
}

/// Terrain line-of-sight between two absolute-height points.
///
/// Interior samples sit at fractions `k/n` of the segment, with `n` chosen so
/// that spacing does not exceed `step_cells` cells. Endpoints are ordered
/// before sampling, so the answer is symmetric in its arguments.
pub fn los_clear(map: &TerrainMap, p1: &Point3, p2: &Point3, step_cells: f64) -> Result<bool> {
    check_inside(map, p1)?;
    check_inside(map, p2)?;
    if !(step_cells > 0.0) {
        return Err(Error::Domain(format!(
            "sample step must be positive, got {step_cells}"
        )));
    }
    let (a, b) = if (p1.x, p1.y, p1.z) <= (p2.x, p2.y, p2.z) {
        (p1, p2)
    } else {
        (p2, p1)
    };
    let spacing = step_cells * map.cell_size_m() as f64;
    let n = (a.distance_xy(b) / spacing).ceil() as usize;
    for k in 1..n {
        let f = k as f64 / n as f64;
        let x = a.x + (b.x - a.x) * f;
        let y = a.y + (b.y - a.y) * f;
        let z = a.z + (b.z - a.z) * f;
        if map.elevation_unchecked(x, y) > z {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Received power in dBm for a link whose ground end sits at `ground_terminal`.
pub fn rssi_dbm(
    map: &TerrainMap,
    params: &LinkParams,
    tx: &Point3,
    rx: &Point3,
    tx_power_dbm: f64,
    ground_terminal: &Point3,
) -> Result<f64> {
    check_inside(map, ground_terminal)?;
    let los = los_clear(map, tx, rx, params.los_sample_step_cells)?;
    let loss = fspl_db(tx.distance(rx), params.freq_mhz)?;
    let nlos = if los { 0.0 } else { params.nlos_penalty_db };
    let clutter = params.cover_offset(map.cover_unchecked(ground_terminal.x, ground_terminal.y));
    Ok(tx_power_dbm - loss - nlos - clutter)
}

/// Access link quality, UAV transmitting to a user.
pub fn access_rssi(
    map: &TerrainMap,
    params: &LinkParams,
    uav: &Point3,
    user: &Point3,
) -> Result<f64> {
    rssi_dbm(map, params, uav, user, params.uav_tx_dbm, user)
}

/// Backhaul link quality, base station transmitting to the UAV.
pub fn backhaul_rssi(
    map: &TerrainMap,
    params: &LinkParams,
    bs: &Point3,
    uav: &Point3,
) -> Result<f64> {
    rssi_dbm(map, params, bs, uav, params.bs_tx_dbm, bs)
}

pub fn access_ok(
    map: &TerrainMap,
    params: &LinkParams,
    thresholds: &ThresholdSet,
    uav: &Point3,
    user: &Point3,
) -> Result<bool> {
    Ok(access_rssi(map, params, uav, user)? >= thresholds.tau_a_dbm)
}

pub fn backhaul_ok(
    map: &TerrainMap,
    params: &LinkParams,
    thresholds: &ThresholdSet,
    bs: &Point3,
    uav: &Point3,
) -> Result<bool> {
    Ok(backhaul_rssi(map, params, bs, uav)? >= thresholds.tau_b_dbm)
}
