//! Fixed-timestep world: the pest population crawling on the crop plane, the
//! background clutter the detector can mistake for pests, and the laser
//! platform moving back and forth along its three-waypoint rail.
//!
//! World frame: `x` along the rail, `y` across it, `z` from the platform down to
//! the crop plane. The camera sits at the platform position looking along `+z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::time::SimTime;

/// Distance between consecutive rail waypoints.
pub const RAIL_SPACING_M: f64 = 0.300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("time step must be positive, got {0} s")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    CabbageCaterpillar,
    Aphid,
    Grasshopper,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::CabbageCaterpillar, Species::Aphid, Species::Grasshopper];

    pub fn name(self) -> &'static str {
        match self {
            Species::CabbageCaterpillar => "cabbage_caterpillar",
            Species::Aphid => "aphid",
            Species::Grasshopper => "grasshopper",
        }
    }
}

/// Per-species body, motion and detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesParams {
    pub mass_g: f64,
    pub speed_mm_s: f64,
    pub detect_latency_ms: f64,
    pub p_detect_ref: f64,
    /// Clutter objects mistaken for this species, per 100 real pests.
    pub fp_per_100: f64,
    pub dwell_ms: f64,
    pub body_diameter_mm: f64,
    pub jump_mm: f64,
    pub jump_rate_per_s: f64,
}

impl SpeciesParams {
    pub fn validate(&self, name: &str) -> Result<(), String> {
        let finite = [
            self.mass_g,
            self.speed_mm_s,
            self.detect_latency_ms,
            self.p_detect_ref,
            self.fp_per_100,
            self.dwell_ms,
            self.body_diameter_mm,
            self.jump_mm,
            self.jump_rate_per_s,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(format!("species.{name}: all parameters must be finite"));
        }
        if self.mass_g <= 0.0 {
            return Err(format!("species.{name}.mass_g must be > 0"));
        }
        if self.speed_mm_s < 0.0 {
            return Err(format!("species.{name}.speed_mm_s must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.p_detect_ref) {
            return Err(format!("species.{name}.p_detect_ref must be in [0, 1]"));
        }
        if self.detect_latency_ms < 0.0 || self.fp_per_100 < 0.0 || self.jump_mm < 0.0 || self.jump_rate_per_s < 0.0 {
            return Err(format!("species.{name}: latency, fp_per_100 and jump parameters must be >= 0"));
        }
        if self.dwell_ms <= 0.0 || self.body_diameter_mm <= 0.0 {
            return Err(format!("species.{name}: dwell_ms and body_diameter_mm must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeciesTable {
    pub cabbage_caterpillar: SpeciesParams,
    pub aphid: SpeciesParams,
    pub grasshopper: SpeciesParams,
}

impl SpeciesTable {
    pub fn get(&self, s: Species) -> &SpeciesParams {
        match s {
            Species::CabbageCaterpillar => &self.cabbage_caterpillar,
            Species::Aphid => &self.aphid,
            Species::Grasshopper => &self.grasshopper,
        }
    }

    pub fn get_mut(&mut self, s: Species) -> &mut SpeciesParams {
        match s {
            Species::CabbageCaterpillar => &mut self.cabbage_caterpillar,
            Species::Aphid => &mut self.aphid,
            Species::Grasshopper => &mut self.grasshopper,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        Species::ALL.iter().try_for_each(|&s| self.get(s).validate(s.name()))
    }
}

impl Default for SpeciesTable {
    fn default() -> Self {
        Self {
            cabbage_caterpillar: SpeciesParams {
                mass_g: 2.0,
                speed_mm_s: 3.0,
                detect_latency_ms: 300.0,
                p_detect_ref: 0.80,
                fp_per_100: 10.0,
                dwell_ms: 50.0,
                body_diameter_mm: 4.0,
                jump_mm: 0.0,
                jump_rate_per_s: 0.0,
            },
            aphid: SpeciesParams {
                mass_g: 0.005,
                speed_mm_s: 1.0,
                detect_latency_ms: 350.0,
                p_detect_ref: 45.0 / 120.0,
                fp_per_100: 40.0 / 1.2,
                dwell_ms: 50.0,
                body_diameter_mm: 4.0,
                jump_mm: 0.0,
                jump_rate_per_s: 0.0,
            },
            grasshopper: SpeciesParams {
                mass_g: 1.5,
                speed_mm_s: 10.0,
                detect_latency_ms: 250.0,
                p_detect_ref: 0.25,
                fp_per_100: 0.0,
                dwell_ms: 60.0,
                body_diameter_mm: 4.0,
                jump_mm: 50.0,
                jump_rate_per_s: 0.2,
            },
        }
    }
}

/// Rectangular crop patch, in the crop plane, that pests are confined to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Arena {
    pub width_m: f64,
    pub height_m: f64,
    pub center_x_m: f64,
    pub center_y_m: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Self { width_m: 0.3, height_m: 0.3, center_x_m: 0.0, center_y_m: 0.0 }
    }
}

impl Arena {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.width_m.is_finite() && self.width_m > 0.0 && self.height_m.is_finite() && self.height_m > 0.0) {
            return Err("arena dimensions must be > 0".into());
        }
        if !(self.center_x_m.is_finite() && self.center_y_m.is_finite()) {
            return Err("arena center must be finite".into());
        }
        Ok(())
    }

    pub fn x_bounds(&self) -> (f64, f64) {
        (self.center_x_m - 0.5 * self.width_m, self.center_x_m + 0.5 * self.width_m)
    }

    pub fn y_bounds(&self) -> (f64, f64) {
        (self.center_y_m - 0.5 * self.height_m, self.center_y_m + 0.5 * self.height_m)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let (x0, x1) = self.x_bounds();
        let (y0, y1) = self.y_bounds();
        (x0..=x1).contains(&p.x) && (y0..=y1).contains(&p.y)
    }
}

/// Three waypoints `A`, `B`, `C` spaced [`RAIL_SPACING_M`] apart along `x`;
/// the platform ping-pongs between `A` and `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformRail {
    pub origin_x_m: f64,
    pub speed_mm_s: f64,
}

impl Default for PlatformRail {
    fn default() -> Self {
        Self { origin_x_m: 0.0, speed_mm_s: 0.0 }
    }
}

impl PlatformRail {
    pub fn validate(&self) -> Result<(), String> {
        if !self.origin_x_m.is_finite() {
            return Err("rail.origin_x_m must be finite".into());
        }
        if !(self.speed_mm_s.is_finite() && self.speed_mm_s >= 0.0) {
            return Err("rail.speed_mm_s must be >= 0".into());
        }
        Ok(())
    }

    pub fn waypoints(&self) -> [Point3; 3] {
        [0.0, 1.0, 2.0].map(|k| Point3::new(self.origin_x_m + k * RAIL_SPACING_M, 0.0, 0.0))
    }

    pub fn length_m(&self) -> f64 {
        2.0 * RAIL_SPACING_M
    }
}

/// Closed-form ping-pong position of the platform at `t_s` seconds.
pub fn platform_position(t_s: f64, rail: &PlatformRail) -> Point3 {
    let len = rail.length_m();
    let s = (rail.speed_mm_s * 1e-3 * t_s.max(0.0)).rem_euclid(2.0 * len);
    let along = if s <= len { s } else { 2.0 * len - s };
    Point3::new(rail.origin_x_m + along, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PestId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Pest {
    pub id: PestId,
    pub species: Species,
    pub position: Point3,
    /// Unit heading in the crop plane.
    pub heading: [f64; 2],
    pub alive: bool,
    pub absorbed_energy_j: f64,
    /// Latent detection quantile in `[0, 1)`: the pest is seen whenever the
    /// detection probability at its range exceeds this value.
    pub conspicuity: f64,
    pub neutralized_at: Option<SimTime>,
    velocity: [f64; 2],
    next_jump: Option<SimTime>,
}

/// A background feature (leaf spot, shadow) the detector reports as a pest.
#[derive(Debug, Clone, PartialEq)]
pub struct Clutter {
    pub id: u32,
    pub label: Species,
    pub position: Point3,
    pub conspicuity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PestCounts {
    pub cabbage_caterpillar: u32,
    pub aphid: u32,
    pub grasshopper: u32,
}

impl Default for PestCounts {
    fn default() -> Self {
        Self { cabbage_caterpillar: 100, aphid: 0, grasshopper: 0 }
    }
}

impl PestCounts {
    pub fn get(&self, s: Species) -> u32 {
        match s {
            Species::CabbageCaterpillar => self.cabbage_caterpillar,
            Species::Aphid => self.aphid,
            Species::Grasshopper => self.grasshopper,
        }
    }

    pub fn total(&self) -> u32 {
        self.cabbage_caterpillar + self.aphid + self.grasshopper
    }
}

/// Everything needed to lay out one trial's arena.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub arena: Arena,
    pub counts: PestCounts,
    pub species: SpeciesTable,
    pub rail: PlatformRail,
    pub distance_m: f64,
    pub heading_interval_s: f64,
}

/// Independent random streams derived from one trial seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Spawn = 0,
    Motion = 1,
    Perception = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub clock: SimTime,
    pub pests: Vec<Pest>,
    pub clutter: Vec<Clutter>,
    pub platform_pos: Point3,
    pub rail: PlatformRail,
    pub arena: Arena,
    pub species: SpeciesTable,
    pub distance_m: f64,
    rng: ChaCha8Rng,
    platform_along: f64,
    platform_dir: f64,
    heading_interval: SimTime,
    next_heading_resample: SimTime,
}

fn random_heading(rng: &mut impl Rng) -> [f64; 2] {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    [a.cos(), a.sin()]
}

fn next_jump_time(rng: &mut impl Rng, now: SimTime, rate: f64) -> Option<SimTime> {
    if rate <= 0.0 {
        return None;
    }
    let wait: f64 = Exp::new(rate).expect("positive rate").sample(rng);
    Some(now + SimTime::from_secs_f64(wait))
}

/// Lays pests and clutter uniformly at random over the arena at the configured range.
pub fn spawn_scenario(config: &ScenarioConfig, seed: u64) -> Result<WorldState, WorldError> {
    config.arena.validate().map_err(WorldError::InvalidConfig)?;
    config.rail.validate().map_err(WorldError::InvalidConfig)?;
    config.species.validate().map_err(WorldError::InvalidConfig)?;
    if !(config.distance_m.is_finite() && config.distance_m > 0.0) {
        return Err(WorldError::InvalidConfig("camera-crop distance must be > 0".into()));
    }
    if !(config.heading_interval_s.is_finite() && config.heading_interval_s > 0.0) {
        return Err(WorldError::InvalidConfig("heading interval must be > 0".into()));
    }

    let mut rng = stream_rng(seed, Stream::Spawn);
    let (x0, x1) = config.arena.x_bounds();
    let (y0, y1) = config.arena.y_bounds();
    let z = config.distance_m;

    let mut pests = Vec::with_capacity(config.counts.total() as usize);
    for species in Species::ALL {
        let params = config.species.get(species);
        for _ in 0..config.counts.get(species) {
            let position = Point3::new(rng.random_range(x0..x1), rng.random_range(y0..y1), z);
            let heading = random_heading(&mut rng);
            let conspicuity = rng.random::<f64>();
            let next_jump = next_jump_time(&mut rng, SimTime::ZERO, params.jump_rate_per_s);
            let v = params.speed_mm_s * 1e-3;
            pests.push(Pest {
                id: PestId(pests.len() as u32),
                species,
                position,
                heading,
                alive: true,
                absorbed_energy_j: 0.0,
                conspicuity,
                neutralized_at: None,
                velocity: [heading[0] * v, heading[1] * v],
                next_jump,
            });
        }
    }

    let mut clutter = Vec::new();
    for species in Species::ALL {
        let mean = f64::from(config.counts.get(species)) * config.species.get(species).fp_per_100 / 100.0;
        let n = if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(&mut rng) as u32 } else { 0 };
        for _ in 0..n {
            clutter.push(Clutter {
                id: clutter.len() as u32,
                label: species,
                position: Point3::new(rng.random_range(x0..x1), rng.random_range(y0..y1), z),
                conspicuity: rng.random::<f64>(),
            });
        }
    }

    let heading_interval = SimTime::from_secs_f64(config.heading_interval_s);
    Ok(WorldState {
        clock: SimTime::ZERO,
        pests,
        clutter,
        platform_pos: platform_position(0.0, &config.rail),
        rail: config.rail,
        arena: config.arena,
        species: config.species.clone(),
        distance_m: z,
        rng: stream_rng(seed, Stream::Motion),
        platform_along: 0.0,
        platform_dir: 1.0,
        heading_interval,
        next_heading_resample: heading_interval,
    })
}

fn reflect_into(pos: &mut f64, vel: &mut f64, heading: &mut f64, lo: f64, hi: f64) {
    if *pos < lo {
        *pos = (2.0 * lo - *pos).min(hi);
    } else if *pos > hi {
        *pos = (2.0 * hi - *pos).max(lo);
    } else {
        return;
    }
    *vel = -*vel;
    *heading = -*heading;
}

impl WorldState {
    pub fn clock_s(&self) -> f64 {
        self.clock.as_secs_f64()
    }

    pub fn alive_count(&self) -> usize {
        self.pests.iter().filter(|p| p.alive).count()
    }

    pub fn neutralized_count(&self) -> usize {
        self.pests.iter().filter(|p| p.neutralized_at.is_some()).count()
    }

    pub fn pest(&self, id: PestId) -> Option<&Pest> {
        self.pests.get(id.0 as usize)
    }

    /// Marks a pest dead; dead pests stop moving and are never sensed again.
    pub fn neutralize(&mut self, id: PestId, t: SimTime) {
        if let Some(p) = self.pests.get_mut(id.0 as usize) {
            if p.alive {
                p.alive = false;
                p.neutralized_at = Some(t);
            }
        }
    }

    pub fn deposit_energy(&mut self, id: PestId, joules: f64) {
        if let Some(p) = self.pests.get_mut(id.0 as usize) {
            p.absorbed_energy_j += joules;
        }
    }

    /// Platform position predicted for any time from the rail's closed form.
    pub fn platform_at(&self, t: SimTime) -> Point3 {
        platform_position(t.as_secs_f64(), &self.rail)
    }

    pub fn step(&mut self, dt_s: f64) -> Result<(), WorldError> {
        if !(dt_s.is_finite() && dt_s > 0.0) || SimTime::from_secs_f64(dt_s) == SimTime::ZERO {
            return Err(WorldError::InvalidStep(dt_s));
        }
        self.step_exact(SimTime::from_secs_f64(dt_s));
        Ok(())
    }

    /// Advances the world by exactly `dt`.
    pub fn step_exact(&mut self, dt: SimTime) {
        let now = self.clock;
        let dt_s = dt.as_secs_f64();

        if now >= self.next_heading_resample {
            for p in self.pests.iter_mut().filter(|p| p.alive) {
                p.heading = random_heading(&mut self.rng);
                let v = self.species.get(p.species).speed_mm_s * 1e-3;
                p.velocity = [p.heading[0] * v, p.heading[1] * v];
            }
            while self.next_heading_resample <= now {
                self.next_heading_resample = self.next_heading_resample + self.heading_interval;
            }
        }

        let (x0, x1) = self.arena.x_bounds();
        let (y0, y1) = self.arena.y_bounds();
        for p in self.pests.iter_mut() {
            if !p.alive {
                continue;
            }
            if let Some(tj) = p.next_jump {
                if tj <= now {
                    let params = self.species.get(p.species);
                    let dir = random_heading(&mut self.rng);
                    p.position.x += dir[0] * params.jump_mm * 1e-3;
                    p.position.y += dir[1] * params.jump_mm * 1e-3;
                    p.next_jump = next_jump_time(&mut self.rng, now, params.jump_rate_per_s);
                }
            }
            p.position.x += p.velocity[0] * dt_s;
            p.position.y += p.velocity[1] * dt_s;
            reflect_into(&mut p.position.x, &mut p.velocity[0], &mut p.heading[0], x0, x1);
            reflect_into(&mut p.position.y, &mut p.velocity[1], &mut p.heading[1], y0, y1);
        }

        let len = self.rail.length_m();
        let v = self.rail.speed_mm_s * 1e-3;
        if v > 0.0 {
            let mut s = self.platform_along + self.platform_dir * v * dt_s;
            // a single step never spans more than one reversal at realistic speeds
            while !(0.0..=len).contains(&s) {
                if s > len {
                    s = 2.0 * len - s;
                    self.platform_dir = -1.0;
                } else {
                    s = -s;
                    self.platform_dir = 1.0;
                }
            }
            self.platform_along = s;
            self.platform_pos = Point3::new(self.rail.origin_x_m + s, 0.0, 0.0);
        }

        self.clock = now + dt;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(caterpillars: u32) -> ScenarioConfig {
        ScenarioConfig {
            arena: Arena::default(),
            counts: PestCounts { cabbage_caterpillar: caterpillars, ..Default::default() },
            species: SpeciesTable::default(),
            rail: PlatformRail::default(),
            distance_m: 1.0,
            heading_interval_s: 5.0,
        }
    }

    #[test]
    fn spawn_is_deterministic_and_in_bounds() {
        let a = spawn_scenario(&scenario(100), 42).unwrap();
        let b = spawn_scenario(&scenario(100), 42).unwrap();
        assert_eq!(a.pests, b.pests);
        assert_eq!(a.clutter, b.clutter);
        assert_eq!(a.alive_count(), 100);
        assert!(a.pests.iter().all(|p| a.arena.contains(&p.position) && p.position.z == 1.0));
        let c = spawn_scenario(&scenario(100), 43).unwrap();
        assert_ne!(a.pests, c.pests);
    }

    #[test]
    fn spawn_rejects_empty_arena() {
        let mut cfg = scenario(10);
        cfg.arena.width_m = 0.0;
        assert!(matches!(spawn_scenario(&cfg, 1), Err(WorldError::InvalidConfig(_))));
    }

    #[test]
    fn caterpillar_crawls_three_mm_per_second() {
        let mut cfg = scenario(1);
        cfg.arena.width_m = 10.0;
        cfg.arena.height_m = 10.0;
        let mut w = spawn_scenario(&cfg, 7).unwrap();
        let start = w.pests[0].position;
        for _ in 0..1000 {
            w.step(0.001).unwrap();
        }
        assert_eq!(w.clock, SimTime::from_secs_f64(1.0));
        let moved = (w.pests[0].position - start).norm();
        assert!((moved - 0.003).abs() < 1e-12, "moved {moved}");
    }

    #[test]
    fn dead_pests_are_frozen() {
        let mut w = spawn_scenario(&scenario(3), 9).unwrap();
        w.neutralize(PestId(1), SimTime::ZERO);
        let frozen = w.pests[1].position;
        for _ in 0..10_000 {
            w.step_exact(SimTime::from_millis(1));
        }
        assert_eq!(w.pests[1].position, frozen);
        assert_eq!(w.alive_count() + w.neutralized_count(), 3);
    }

    #[test]
    fn step_rejects_non_positive_dt() {
        let mut w = spawn_scenario(&scenario(1), 1).unwrap();
        assert_eq!(w.step(0.0), Err(WorldError::InvalidStep(0.0)));
        assert_eq!(w.step(-1.0), Err(WorldError::InvalidStep(-1.0)));
    }

    #[test]
    fn platform_ping_pongs() {
        let rail = PlatformRail { origin_x_m: 0.0, speed_mm_s: 100.0 };
        let [a, b, c] = rail.waypoints();
        assert_eq!(platform_position(0.0, &rail), a);
        assert!((platform_position(3.0, &rail) - b).norm() < 1e-12);
        assert!((platform_position(6.0, &rail) - c).norm() < 1e-12);
        assert!((platform_position(9.0, &rail) - b).norm() < 1e-12);
        assert!((platform_position(12.0, &rail) - a).norm() < 1e-12);

        let mut cfg = scenario(0);
        cfg.rail = rail;
        let mut w = spawn_scenario(&cfg, 1).unwrap();
        let mut max_err: f64 = 0.0;
        for k in 1..=20_000u64 {
            w.step_exact(SimTime::from_millis(1));
            let expect = platform_position(k as f64 * 1e-3, &rail);
            max_err = max_err.max((w.platform_pos - expect).norm());
            assert!(w.platform_pos.x >= a.x && w.platform_pos.x <= c.x);
        }
        assert!(max_err < 1e-9, "{max_err}");
    }

    #[test]
    fn grasshoppers_jump() {
        let mut cfg = scenario(0);
        cfg.counts.grasshopper = 20;
        cfg.arena.width_m = 100.0;
        cfg.arena.height_m = 100.0;
        cfg.species.grasshopper.speed_mm_s = 0.0;
        let mut w = spawn_scenario(&cfg, 5).unwrap();
        let start: Vec<_> = w.pests.iter().map(|p| p.position).collect();
        for _ in 0..20_000 {
            w.step_exact(SimTime::from_millis(1));
        }
        // 20 pests at 0.2 jumps/s over 20 s: about 80 jumps of 50 mm
        let total: f64 = w.pests.iter().zip(&start).map(|(p, s)| (p.position - s).norm()).sum();
        assert!(total > 0.5, "total displacement {total}");
    }
}
