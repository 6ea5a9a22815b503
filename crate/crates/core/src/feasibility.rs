//! Candidate placements, served-user counting and the candidate-set
//! feasibility upper bound (CS-FUB): the best service any candidate achieves.

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Region, WorldState};
use crate::error::{Error, Result};
use crate::radio::{self, LinkParams, Point3, ThresholdSet};
use crate::terrain::TerrainMap;

/// Candidates closer than this are merged (first occurrence kept).
pub const DEDUP_RADIUS_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub grid_x: usize,
    pub grid_y: usize,
    pub altitudes_m: Vec<f64>,
    pub include_above_users: bool,
    pub include_centroid: bool,
    pub include_current_uav: bool,
    /// Height of the above-user and centroid candidates.
    pub anchor_altitude_m: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            grid_x: 8,
            grid_y: 5,
            altitudes_m: vec![60.0, 120.0, 240.0],
            include_above_users: true,
            include_centroid: true,
            include_current_uav: true,
            anchor_altitude_m: 120.0,
        }
    }
}

impl CandidateConfig {
    fn has_grid(&self) -> bool {
        self.grid_x > 0 && self.grid_y > 0 && !self.altitudes_m.is_empty()
    }

    pub fn validate(&self, env: &EnvConfig) -> Result<()> {
        if !(self.has_grid()
            || self.include_above_users
            || self.include_centroid
            || self.include_current_uav)
        {
            return Err(Error::Config("every candidate source is disabled".into()));
        }
        let band = env.uav_alt_min_m..=env.uav_alt_max_m;
        let mut heights = self.altitudes_m.clone();
        if self.include_above_users || self.include_centroid {
            heights.push(self.anchor_altitude_m);
        }
        if let Some(h) = heights.iter().find(|h| !band.contains(h)) {
            return Err(Error::Config(format!(
                "candidate altitude {h} outside [{}, {}]",
                env.uav_alt_min_m, env.uav_alt_max_m
            )));
        }
        Ok(())
    }
}

/// Above-ground placements in construction order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub placements: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityRecord {
    pub t: usize,
    pub n_star: usize,
    /// Above-ground coordinates.
    pub best_placement: Point3,
    pub n_served_actual: usize,
}

/// Grid points, above-user points, the centroid point and the current UAV,
/// in that order, with near-duplicates removed. The UAV position is only
/// dropped when an earlier candidate is exactly equal to it, so the realized
/// service can never exceed the bound.
pub fn build_candidates(
    cfg: &CandidateConfig,
    region: &Region,
    world: &WorldState,
) -> CandidateSet {
    let mut raw = Vec::new();
    if cfg.has_grid() {
        let cw = (region.x_max - region.x_min) / cfg.grid_x as f64;
        let ch = (region.y_max - region.y_min) / cfg.grid_y as f64;
        for &z in &cfg.altitudes_m {
            for j in 0..cfg.grid_y {
                for i in 0..cfg.grid_x {
                    raw.push(Point3::new(
                        region.x_min + (i as f64 + 0.5) * cw,
                        region.y_min + (j as f64 + 0.5) * ch,
                        z,
                    ));
                }
            }
        }
    }
    if cfg.include_above_users {
        for u in &world.users {
            raw.push(Point3::new(u.pos.x, u.pos.y, cfg.anchor_altitude_m));
        }
    }
    if cfg.include_centroid && !world.users.is_empty() {
        let (cx, cy) = world.user_centroid_xy();
        raw.push(Point3::new(cx, cy, cfg.anchor_altitude_m));
    }
    let mut placements: Vec<Point3> = Vec::with_capacity(raw.len() + 1);
    for p in raw {
        if placements.iter().all(|q| q.distance(&p) >= DEDUP_RADIUS_M) {
            placements.push(p);
        }
    }
    if cfg.include_current_uav && !placements.contains(&world.uav) {
        placements.push(world.uav);
    }
    CandidateSet { placements }
}

/// Users served from `placement`; all points carry absolute heights.
pub fn n_served(
    map: &TerrainMap,
    link: &LinkParams,
    thresholds: &ThresholdSet,
    placement: &Point3,
    users: &[Point3],
    bs: &Point3,
) -> Result<usize> {
    if !radio::backhaul_ok(map, link, thresholds, bs, placement)? {
        return Ok(0);
    }
    let mut n = 0;
    for u in users {
        if radio::access_ok(map, link, thresholds, placement, u)? {
            n += 1;
        }
    }
    Ok(n)
}

/// Index of the best candidate and its count. Every candidate is scored
/// first, then the winner is selected: highest count, then nearest to the
/// user centroid, then earliest.
pub fn cs_fub_index(
    map: &TerrainMap,
    link: &LinkParams,
    thresholds: &ThresholdSet,
    candidates: &[Point3],
    users: &[Point3],
    bs: &Point3,
) -> Result<(usize, usize)> {
    if candidates.is_empty() {
        return Err(Error::Domain("CS-FUB over an empty candidate set".into()));
    }
    let scores = candidates
        .iter()
        .map(|p| n_served(map, link, thresholds, p, users, bs))
        .collect::<Result<Vec<_>>>()?;
    let centroid = centroid(users);
    let mut best = 0;
    let mut best_dist = candidates[0].distance(&centroid);
    for (i, p) in candidates.iter().enumerate().skip(1) {
        let d = p.distance(&centroid);
        if scores[i] > scores[best] || (scores[i] == scores[best] && d < best_dist) {
            best = i;
            best_dist = d;
        }
    }
    Ok((scores[best], best))
}

/// The bound and the placement attaining it.
pub fn cs_fub(
    map: &TerrainMap,
    link: &LinkParams,
    thresholds: &ThresholdSet,
    candidates: &[Point3],
    users: &[Point3],
    bs: &Point3,
) -> Result<(usize, Point3)> {
    let (n, i) = cs_fub_index(map, link, thresholds, candidates, users, bs)?;
    Ok((n, candidates[i]))
}

fn centroid(points: &[Point3]) -> Point3 {
    if points.is_empty() {
        return Point3::new(0.0, 0.0, 0.0);
    }
    let n = points.len() as f64;
    let s = points
        .iter()
        .fold([0.0; 3], |a, p| [a[0] + p.x, a[1] + p.y, a[2] + p.z]);
    Point3::new(s[0] / n, s[1] / n, s[2] / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::User;
    use crate::terrain::LandCover;

    fn world(uav: Point3, users: &[(f64, f64)]) -> WorldState {
        let users = users
            .iter()
            .map(|&(x, y)| User {
                pos: Point3::new(x, y, 1.5),
                waypoint: [x, y],
            })
            .collect();
        WorldState::from_parts(0, uav, users, 0)
    }

    fn region() -> Region {
        Region {
            x_min: 0.0,
            x_max: 8000.0,
            y_min: 0.0,
            y_max: 8000.0,
        }
    }

    #[test]
    fn default_candidate_count() {
        let w = world(
            Point3::new(10.0, 10.0, 165.0),
            &[(100.0, 100.0), (3000.0, 200.0), (500.0, 7000.0)],
        );
        let c = build_candidates(&CandidateConfig::default(), &region(), &w);
        assert_eq!(c.placements.len(), 125);
        assert_eq!(c.placements[0], Point3::new(500.0, 800.0, 60.0));
        assert_eq!(*c.placements.last().unwrap(), w.uav);
    }

    #[test]
    fn only_uav_source() {
        let cfg = CandidateConfig {
            grid_x: 0,
            include_above_users: false,
            include_centroid: false,
            ..CandidateConfig::default()
        };
        let w = world(Point3::new(10.0, 10.0, 165.0), &[(100.0, 100.0)]);
        let c = build_candidates(&cfg, &region(), &w);
        assert_eq!(c.placements, vec![w.uav]);
    }

    #[test]
    fn uav_above_centroid_is_deduplicated() {
        let w = world(
            Point3::new(1000.0, 1000.0, 120.0),
            &[(900.0, 1000.0), (1100.0, 1000.0), (1000.0, 1000.0)],
        );
        // The third user sits at the centroid, so its point already covers it.
        let c = build_candidates(&CandidateConfig::default(), &region(), &w);
        assert_eq!(c.placements.len(), 123);
        let mut w = world(
            Point3::new(0.0, 0.0, 120.0),
            &[(900.0, 1000.0), (1100.0, 1000.0), (1000.0, 2000.0)],
        );
        let (cx, cy) = w.user_centroid_xy();
        w.uav = Point3::new(cx, cy, 120.0);
        let c = build_candidates(&CandidateConfig::default(), &region(), &w);
        assert_eq!(c.placements.len(), 124);
    }

    #[test]
    fn near_uav_is_kept() {
        let w = world(Point3::new(1000.3, 1000.0, 120.0), &[(1000.0, 1000.0)]);
        let c = build_candidates(&CandidateConfig::default(), &region(), &w);
        // grid 120 + user + centroid (merged with user) + uav
        assert_eq!(c.placements.len(), 122);
    }

    #[test]
    fn disabled_sources_rejected() {
        let cfg = CandidateConfig {
            altitudes_m: vec![],
            include_above_users: false,
            include_centroid: false,
            include_current_uav: false,
            ..CandidateConfig::default()
        };
        assert!(matches!(
            cfg.validate(&EnvConfig::default()),
            Err(Error::Config(_))
        ));
        let high = CandidateConfig {
            altitudes_m: vec![400.0],
            ..CandidateConfig::default()
        };
        assert!(high.validate(&EnvConfig::default()).is_err());
    }

    fn flat() -> TerrainMap {
        TerrainMap::uniform(40, 40, 100.0, 0.0, LandCover::Open).unwrap()
    }

    #[test]
    fn lone_user_below_placement() {
        let map = flat();
        let bs = Point3::new(2000.0, 2000.0, 20.0);
        let p = Point3::new(2100.0, 2000.0, 60.0);
        let u = Point3::new(2100.0, 2000.0, 1.5);
        let n = n_served(
            &map,
            &LinkParams::default(),
            &ThresholdSet::default(),
            &p,
            &[u],
            &bs,
        )
        .unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn blocked_backhaul_serves_nobody() {
        let mut map = flat();
        for r in 0..40 {
            map.set_cell(r, 25, 3000.0, LandCover::Open);
        }
        let bs = Point3::new(200.0, 2000.0, 20.0);
        let p = Point3::new(3900.0, 2000.0, 60.0);
        let users = [Point3::new(3900.0, 2000.0, 1.5)];
        let lp = LinkParams::default();
        let th = ThresholdSet::default();
        assert_eq!(n_served(&map, &lp, &th, &p, &users, &bs).unwrap(), 0);
        let (n, best) = cs_fub(
            &map,
            &lp,
            &th,
            &[p, Point3::new(3800.0, 2000.0, 60.0)],
            &users,
            &bs,
        )
        .unwrap();
        assert_eq!(n, 0);
        assert_eq!(best, p);
    }

    #[test]
    fn empty_candidates_rejected() {
        let map = flat();
        let r = cs_fub(
            &map,
            &LinkParams::default(),
            &ThresholdSet::default(),
            &[],
            &[],
            &Point3::new(0.0, 0.0, 0.0),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn tie_broken_by_centroid_distance_then_order() {
        let map = flat();
        let bs = Point3::new(2000.0, 2000.0, 20.0);
        let users = [Point3::new(2000.0, 2000.0, 1.5)];
        let lp = LinkParams::default();
        let th = ThresholdSet::default();
        let far = Point3::new(2200.0, 2000.0, 60.0);
        let near = Point3::new(2100.0, 2000.0, 60.0);
        let mirror = Point3::new(1900.0, 2000.0, 60.0);
        let (_, best) = cs_fub(&map, &lp, &th, &[far, near, mirror], &users, &bs).unwrap();
        assert_eq!(best, near);
        let (_, best) = cs_fub(&map, &lp, &th, &[far, mirror, near], &users, &bs).unwrap();
        assert_eq!(best, mirror);
    }
}
