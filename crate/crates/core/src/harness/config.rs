//! Simulation configuration: a sectioned TOML file whose every key has a default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engage::{EngageConfig, LaserSpec};
use crate::galvo::GalvoConfig;
use crate::geometry::StereoRig;
use crate::perception::PerceptionParams;
use crate::time::SimTime;
use crate::world::{Arena, PestCounts, PlatformRail, ScenarioConfig, SpeciesTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSection {
    pub seed: u64,
    pub duration_s: f64,
    pub dt_s: f64,
    /// Camera to crop-plane distance for single trials.
    pub distance_m: f64,
    pub heading_interval_s: f64,
}

impl Default for TrialSection {
    fn default() -> Self {
        Self { seed: 42, duration_s: 60.0, dt_s: 0.001, distance_m: 1.0, heading_interval_s: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub distances_m: Vec<f64>,
    pub distance_trials: u32,
    pub speeds_mm_s: Vec<f64>,
    pub speed_trials: u32,
    pub speed_distance_m: f64,
    /// Caterpillars spawned per speed trial; enough to keep the laser busy.
    pub speed_pests: u32,
    /// The speed-sweep arena spans the whole rail plus the camera footprint.
    pub speed_arena_width_m: f64,
    pub speed_arena_height_m: f64,
    pub speed_arena_center_x_m: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            distances_m: vec![0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0],
            distance_trials: 25,
            speeds_mm_s: vec![0.0, 50.0, 100.0, 200.0, 400.0],
            speed_trials: 30,
            speed_distance_m: 1.0,
            speed_pests: 1500,
            speed_arena_width_m: 1.4,
            speed_arena_height_m: 0.8,
            speed_arena_center_x_m: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub trial: TrialSection,
    pub arena: Arena,
    pub pests: PestCounts,
    pub species: SpeciesTable,
    pub rig: StereoRig,
    pub galvo: GalvoConfig,
    pub laser: LaserSpec,
    pub perception: PerceptionParams,
    pub engage: EngageConfig,
    pub rail: PlatformRail,
    pub sweep: SweepSection,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(ConfigError::Validation)
    }

    fn check(&self) -> Result<(), String> {
        let t = &self.trial;
        if !(t.dt_s.is_finite() && t.dt_s > 0.0) || SimTime::from_secs_f64(t.dt_s) == SimTime::ZERO {
            return Err("trial.dt_s must be > 0".into());
        }
        if !(t.duration_s.is_finite() && t.duration_s >= t.dt_s) {
            return Err("trial.duration_s must be >= trial.dt_s".into());
        }
        if !(t.distance_m.is_finite() && t.distance_m > 0.0) {
            return Err("trial.distance_m must be > 0".into());
        }
        if !(t.heading_interval_s.is_finite() && t.heading_interval_s > 0.0) {
            return Err("trial.heading_interval_s must be > 0".into());
        }
        self.arena.validate()?;
        self.species.validate()?;
        self.rig.validate()?;
        self.galvo.validate()?;
        self.laser.validate()?;
        self.perception.validate()?;
        self.engage.validate()?;
        self.rail.validate()?;

        let s = &self.sweep;
        if s.distances_m.is_empty() || s.distances_m.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err("sweep.distances_m must be a nonempty list of positive distances".into());
        }
        if s.speeds_mm_s.is_empty() || s.speeds_mm_s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("sweep.speeds_mm_s must be a nonempty list of nonnegative speeds".into());
        }
        if s.distance_trials == 0 || s.speed_trials == 0 {
            return Err("sweep.distance_trials and sweep.speed_trials must be >= 1".into());
        }
        if !(s.speed_distance_m.is_finite() && s.speed_distance_m > 0.0) {
            return Err("sweep.speed_distance_m must be > 0".into());
        }
        self.speed_arena().validate().map_err(|e| format!("sweep speed arena: {e}"))?;
        Ok(())
    }

    pub fn speed_arena(&self) -> Arena {
        Arena {
            width_m: self.sweep.speed_arena_width_m,
            height_m: self.sweep.speed_arena_height_m,
            center_x_m: self.sweep.speed_arena_center_x_m,
            center_y_m: self.arena.center_y_m,
        }
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            arena: self.arena,
            counts: self.pests,
            species: self.species.clone(),
            rail: self.rail,
            distance_m: self.trial.distance_m,
            heading_interval_s: self.trial.heading_interval_s,
        }
    }

    /// Configuration of one distance-sweep point.
    pub fn at_distance(&self, distance_m: f64) -> SimConfig {
        let mut c = self.clone();
        c.trial.distance_m = distance_m;
        c
    }

    /// Configuration of one speed-sweep point: fixed range, large arena, dense population.
    pub fn at_speed(&self, speed_mm_s: f64) -> SimConfig {
        let mut c = self.clone();
        c.trial.distance_m = self.sweep.speed_distance_m;
        c.arena = self.speed_arena();
        c.pests = PestCounts { cabbage_caterpillar: self.sweep.speed_pests, aphid: 0, grasshopper: 0 };
        c.rail.speed_mm_s = speed_mm_s;
        c
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates a configuration. Missing keys take their defaults;
/// unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let cfg: SimConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Parse { line, column, message: e.message().trim().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn print_config(cfg: &SimConfig) -> String {
    let body = toml::to_string_pretty(cfg).expect("config serializes");
    format!(
        "# Units are in the key names: _m meters, _mm millimeters, _s seconds, _ms milliseconds,\n\
         # _W watts, _g grams, _rad radians. Every key may be omitted to take the value shown.\n\n{body}"
    )
}

pub fn print_default_config() -> String {
    print_config(&SimConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let text = print_default_config();
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert_eq!(print_config(&cfg), text);
    }

    #[test]
    fn crop_damage_power_is_rejected() {
        let err = parse_config("[laser]\npower_W = 15\n").unwrap_err();
        match err {
            ConfigError::Validation(msg) => assert!(msg.contains("max_safe_power_W") && msg.contains("crop"), "{msg}"),
            e => panic!("unexpected {e:?}"),
        }
        assert!(parse_config("[laser]\npower_W = 14.9\n").is_ok());
    }

    #[test]
    fn malformed_line_reports_location() {
        let err = parse_config("[trial]\nseed = 3\nfoo\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let err = parse_config("[trial]\nseed = 3\n\n[rig]\nfocal = 2\n").unwrap_err();
        match err {
            ConfigError::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("focal"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = parse_config("[trial]\nseed = 7\n").unwrap();
        assert_eq!(cfg.trial.seed, 7);
        assert_eq!(cfg.trial.duration_s, 60.0);
        assert_eq!(cfg.laser, LaserSpec::default());
    }

    #[test]
    fn empty_sweep_is_invalid() {
        assert!(matches!(parse_config("[sweep]\ndistances_m = []\n"), Err(ConfigError::Validation(_))));
    }
}
