//! Elevation and land-cover grids: procedural generation, point queries,
//! area-weighted resampling and the `TMAP` file format.
//!
//! Cell `(r, c)` covers `x in [c*cell, (c+1)*cell]`, `y in [r*cell, (r+1)*cell]`;
//! row 0 is the `y = 0` edge. Elevation samples sit at cell centers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{u32_of, ByteWriter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum LandCover {
    Water = 0,
    Open = 1,
    SparseVegetation = 2,
    DenseVegetation = 3,
}

impl LandCover {
    pub const ALL: [LandCover; 4] = [
        LandCover::Water,
        LandCover::Open,
        LandCover::SparseVegetation,
        LandCover::DenseVegetation,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        LandCover::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainMap {
    height: usize,
    width: usize,
    cell_size_m: f32,
    elevation: Vec<f32>,
    cover: Vec<LandCover>,
}

impl TerrainMap {
    pub fn new(
        height: usize,
        width: usize,
        cell_size_m: f32,
        elevation: Vec<f32>,
        cover: Vec<LandCover>,
    ) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Config(format!(
                "map must be at least 2x2 cells, got {height}x{width}"
            )));
        }
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::Config(format!(
                "cell size must be positive, got {cell_size_m}"
            )));
        }
        let n = height * width;
        if elevation.len() != n || cover.len() != n {
            return Err(Error::Dimension(format!(
                "{height}x{width} map needs {n} cells, got {} elevations and {} cover codes",
                elevation.len(),
                cover.len()
            )));
        }
        if let Some(i) = elevation.iter().position(|e| !e.is_finite()) {
            return Err(Error::Domain(format!(
                "elevation at cell {i} is not finite"
            )));
        }
        Ok(TerrainMap {
            height,
            width,
            cell_size_m,
            elevation,
            cover,
        })
    }

    /// A map where every cell has the same elevation and class.
    pub fn uniform(
        height: usize,
        width: usize,
        cell_size_m: f32,
        elevation_m: f32,
        cover: LandCover,
    ) -> Result<Self> {
        let n = height * width;
        TerrainMap::new(
            height,
            width,
            cell_size_m,
            vec![elevation_m; n],
            vec![cover; n],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell_size_m(&self) -> f32 {
        self.cell_size_m
    }

    pub fn extent_x(&self) -> f64 {
        self.width as f64 * self.cell_size_m as f64
    }

    pub fn extent_y(&self) -> f64 {
        self.height as f64 * self.cell_size_m as f64
    }

    pub fn elevation_grid(&self) -> &[f32] {
        &self.elevation
    }

    pub fn cover_grid(&self) -> &[LandCover] {
        &self.cover
    }

    pub fn cell_elevation(&self, row: usize, col: usize) -> f32 {
        self.elevation[row * self.width + col]
    }

    pub fn cell_cover(&self, row: usize, col: usize) -> LandCover {
        self.cover[row * self.width + col]
    }

    pub fn set_cell(&mut self, row: usize, col: usize, elevation_m: f32, cover: LandCover) {
        let i = row * self.width + col;
        self.elevation[i] = elevation_m;
        self.cover[i] = cover;
    }

    /// Center of cell `(row, col)` in meters.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let cs = self.cell_size_m as f64;
        ((col as f64 + 0.5) * cs, (row as f64 + 0.5) * cs)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.extent_x() && y <= self.extent_y()
    }

    fn check_extent(&self, x: f64, y: f64) -> Result<()> {
        if !self.contains(x, y) {
            return Err(Error::Domain(format!(
                "point ({x}, {y}) outside map extent [0, {}] x [0, {}]",
                self.extent_x(),
                self.extent_y()
            )));
        }
        Ok(())
    }

    /// Bilinear interpolation between cell-center samples, held flat over the
    /// outer half cell.
    pub fn elevation_at(&self, x: f64, y: f64) -> Result<f64> {
        self.check_extent(x, y)?;
        Ok(self.elevation_unchecked(x, y))
    }

    pub(crate) fn elevation_unchecked(&self, x: f64, y: f64) -> f64 {
        let cs = self.cell_size_m as f64;
        let (c0, tx) = interp_coord(x / cs - 0.5, self.width);
        let (r0, ty) = interp_coord(y / cs - 0.5, self.height);
        let e = |r: usize, c: usize| self.elevation[r * self.width + c] as f64;
        let top = (1.0 - tx) * e(r0, c0) + tx * e(r0, c0 + 1);
        let bottom = (1.0 - tx) * e(r0 + 1, c0) + tx * e(r0 + 1, c0 + 1);
        (1.0 - ty) * top + ty * bottom
    }

    /// Class of the cell containing the point; on a shared edge the cell with
    /// the lower index wins.
    pub fn cover_at(&self, x: f64, y: f64) -> Result<LandCover> {
        self.check_extent(x, y)?;
        Ok(self.cover_unchecked(x, y))
    }

    pub(crate) fn cover_unchecked(&self, x: f64, y: f64) -> LandCover {
        let cs = self.cell_size_m as f64;
        let c = nearest_index(x / cs, self.width);
        let r = nearest_index(y / cs, self.height);
        self.cover[r * self.width + c]
    }

    pub fn min_max_elevation(&self) -> (f32, f32) {
        self.elevation
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &e| {
                (lo.min(e), hi.max(e))
            })
    }

    pub fn mean_elevation(&self) -> f64 {
        self.elevation.iter().map(|&e| e as f64).sum::<f64>() / self.elevation.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::create(path)?;
        w.bytes(MAP_MAGIC)?;
        w.u32(MAP_VERSION)?;
        w.u32(u32_of(self.height, "height")?)?;
        w.u32(u32_of(self.width, "width")?)?;
        w.f32(self.cell_size_m)?;
        w.f32s(&self.elevation)?;
        let codes: Vec<u8> = self.cover.iter().map(|c| c.code()).collect();
        w.bytes(&codes)?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |offset: usize, detail: String| Error::format(path, offset as u64, detail);
        if bytes.len() < MAP_HEADER {
            return Err(fail(
                bytes.len(),
                format!(
                    "truncated header: expected {MAP_HEADER} bytes, got {}",
                    bytes.len()
                ),
            ));
        }
        if &bytes[0..4] != MAP_MAGIC {
            return Err(fail(
                0,
                format!(
                    "bad magic {:?}, expected \"TMAP\"",
                    String::from_utf8_lossy(&bytes[0..4])
                ),
            ));
        }
        let word = |at: usize| {
            u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
        };
        let version = word(4);
        if version != MAP_VERSION {
            return Err(fail(
                4,
                format!("unsupported version {version}, expected {MAP_VERSION}"),
            ));
        }
        let height = word(8) as usize;
        let width = word(12) as usize;
        if height < 2 || width < 2 {
            return Err(fail(
                8,
                format!("map must be at least 2x2, header says {height}x{width}"),
            ));
        }
        let cell_size_m = f32::from_bits(word(16));
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(fail(
                16,
                format!("cell size must be positive, got {cell_size_m}"),
            ));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| fail(8, "cell count overflows".into()))?;
        let expected = MAP_HEADER + n * 5;
        if bytes.len() != expected {
            let what = if bytes.len() < expected {
                "truncated"
            } else {
                "oversized"
            };
            return Err(fail(
                bytes.len().min(expected),
                format!(
                    "{what} grid: expected {expected} bytes for {height}x{width}, got {}",
                    bytes.len()
                ),
            ));
        }
        let mut elevation = Vec::with_capacity(n);
        for i in 0..n {
            let at = MAP_HEADER + i * 4;
            let e = f32::from_bits(word(at));
            if !e.is_finite() {
                return Err(fail(at, format!("non-finite elevation at cell {i}")));
            }
            elevation.push(e);
        }
        let base = MAP_HEADER + n * 4;
        let mut cover = Vec::with_capacity(n);
        for i in 0..n {
            let code = bytes[base + i];
            cover.push(
                LandCover::from_code(code)
                    .ok_or_else(|| fail(base + i, format!("invalid cover code {code}")))?,
            );
        }
        TerrainMap::new(height, width, cell_size_m, elevation, cover)
    }
}

const MAP_MAGIC: &[u8; 4] = b"TMAP";
const MAP_VERSION: u32 = 1;
const MAP_HEADER: usize = 20;

fn interp_coord(f: f64, n: usize) -> (usize, f64) {
    let f = f.clamp(0.0, (n - 1) as f64);
    let i = (f.floor() as usize).min(n - 2);
    (i, f - i as f64)
}

fn nearest_index(f: f64, n: usize) -> usize {
    // ceil - 1 puts an exact boundary into the lower cell.
    let i = f.ceil() as i64 - 1;
    i.clamp(0, n as i64 - 1) as usize
}

/// Area-weighted resampling to `out_h x out_w`: mean elevation and
/// plurality cover (ties to the lowest class code) per output cell.
pub fn resample(
    map: &TerrainMap,
    out_h: usize,
    out_w: usize,
) -> Result<(Vec<f32>, Vec<LandCover>)> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!(
            "resample target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    let (h, w) = (map.height, map.width);
    if out_h == h && out_w == w {
        return Ok((map.elevation.clone(), map.cover.clone()));
    }
    let rows = overlaps(h, out_h);
    let cols = overlaps(w, out_w);
    let mut elev = Vec::with_capacity(out_h * out_w);
    let mut cover = Vec::with_capacity(out_h * out_w);
    for row_span in &rows {
        for col_span in &cols {
            let mut votes = [0u64; 4];
            let mut sum = 0.0f64;
            let mut total = 0u64;
            for &(r, wr) in row_span {
                for &(c, wc) in col_span {
                    let wgt = wr * wc;
                    let i = r * w + c;
                    sum += wgt as f64 * map.elevation[i] as f64;
                    total += wgt;
                    votes[map.cover[i].code() as usize] += wgt;
                }
            }
            elev.push((sum / total as f64) as f32);
            let mut best = 0;
            for k in 1..4 {
                if votes[k] > votes[best] {
                    best = k;
                }
            }
            cover.push(LandCover::ALL[best]);
        }
    }
    Ok((elev, cover))
}

/// For each output cell along one axis, the input cells it overlaps with
/// integer overlap lengths (axis measured in units of `1/(n_in*n_out)`).
fn overlaps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, u64)>> {
    (0..n_out)
        .map(|j| {
            let (lo, hi) = ((j * n_in) as u64, ((j + 1) * n_in) as u64);
            let first = (lo / n_out as u64) as usize;
            let mut spans = Vec::new();
            let mut i = first;
            while i < n_in {
                let (a, b) = ((i * n_out) as u64, ((i + 1) * n_out) as u64);
                if a >= hi {
                    break;
                }
                let ov = b.min(hi).saturating_sub(a.max(lo));
                if ov > 0 {
                    spans.push((i, ov));
                }
                i += 1;
            }
            spans
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapGenConfig {
    pub height: usize,
    pub width: usize,
    pub cell_size_m: f32,
    pub elevation_amplitude_m: f32,
    pub noise_octaves: u32,
    pub water_fraction: f64,
    pub dense_fraction: f64,
    pub seed: u64,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        MapGenConfig {
            height: 64,
            width: 40,
            cell_size_m: 400.0,
            elevation_amplitude_m: 400.0,
            noise_octaves: 4,
            water_fraction: 0.1,
            dense_fraction: 0.2,
            seed: 7,
        }
    }
}

impl MapGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config(format!(
                "map must be at least 2x2 cells, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::Config("cell_size_m must be positive".into()));
        }
        if !(self.elevation_amplitude_m.is_finite() && self.elevation_amplitude_m >= 0.0) {
            return Err(Error::Config("elevation_amplitude_m must be >= 0".into()));
        }
        if self.noise_octaves == 0 || self.noise_octaves > 16 {
            return Err(Error::Config("noise_octaves must be in 1..=16".into()));
        }
        for (name, f) in [
            ("water_fraction", self.water_fraction),
            ("dense_fraction", self.dense_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        if self.water_fraction + self.dense_fraction > 1.0 {
            return Err(Error::Config("class fractions sum above 1".into()));
        }
        Ok(())
    }
}

/// Octave value noise for elevation, rank thresholds for cover.
///
/// Water takes the lowest-lying cells. Among the rest, a second noise field
/// ranks vegetation: the top `dense_fraction` of all cells become dense and
/// an equally sized band below them sparse; everything else is open land.
pub fn generate_map(cfg: &MapGenConfig) -> Result<TerrainMap> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let n = h * w;
    let relief = noise_field(cfg, 0);
    let elevation: Vec<f32> = if cfg.elevation_amplitude_m == 0.0 {
        vec![0.0; n]
    } else {
        let (lo, hi) = relief
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let span = hi - lo;
        relief
            .iter()
            .map(|&v| {
                let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
                (t * cfg.elevation_amplitude_m as f64) as f32
            })
            .collect()
    };

    let mut cover = vec![LandCover::Open; n];
    let n_water = (cfg.water_fraction * n as f64).round() as usize;
    let mut by_height: Vec<usize> = (0..n).collect();
    by_height.sort_by(|&a, &b| elevation[a].total_cmp(&elevation[b]).then(a.cmp(&b)));
    for &i in by_height.iter().take(n_water) {
        cover[i] = LandCover::Water;
    }

    let vegetation = noise_field(cfg, 1);
    let mut by_veg: Vec<usize> = (0..n).filter(|&i| cover[i] != LandCover::Water).collect();
    by_veg.sort_by(|&a, &b| vegetation[b].total_cmp(&vegetation[a]).then(a.cmp(&b)));
    let n_dense = ((cfg.dense_fraction * n as f64).round() as usize).min(by_veg.len());
    let n_sparse = n_dense.min(by_veg.len() - n_dense);
    for (k, &i) in by_veg.iter().enumerate() {
        if k < n_dense {
            cover[i] = LandCover::DenseVegetation;
        } else if k < n_dense + n_sparse {
            cover[i] = LandCover::SparseVegetation;
        }
    }
    TerrainMap::new(h, w, cfg.cell_size_m, elevation, cover)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice_value(seed: u64, field: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let mut k = splitmix64(seed ^ field.wrapping_mul(0xA24B_AED4_963E_E407));
    k = splitmix64(k ^ octave as u64);
    k = splitmix64(k ^ ix as u64);
    k = splitmix64(k ^ (iy as u64).rotate_left(32));
    (k >> 11) as f64 / (1u64 << 53) as f64
}

fn noise_field(cfg: &MapGenConfig, field: u64) -> Vec<f64> {
    let (h, w) = (cfg.height, cfg.width);
    let base_period = (h.max(w) as f64 / 3.0).max(2.0);
    let mut out = vec![0.0f64; h * w];
    let mut amp = 1.0;
    let mut period = base_period;
    for octave in 0..cfg.noise_octaves {
        for r in 0..h {
            for c in 0..w {
                let fx = (c as f64 + 0.5) / period;
                let fy = (r as f64 + 0.5) / period;
                let (ix, iy) = (fx.floor() as i64, fy.floor() as i64);
                let sx = smoothstep(fx - ix as f64);
                let sy = smoothstep(fy - iy as f64);
                let v = |dx: i64, dy: i64| lattice_value(cfg.seed, field, octave, ix + dx, iy + dy);
                let top = v(0, 0) + sx * (v(1, 0) - v(0, 0));
                let bottom = v(0, 1) + sx * (v(1, 1) - v(0, 1));
                out[r * w + c] += amp * (top + sy * (bottom - top));
            }
        }
        amp *= 0.5;
        period = (period / 2.0).max(1.0);
    }
    out
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
