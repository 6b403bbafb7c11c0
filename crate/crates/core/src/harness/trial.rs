use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{HarnessError, SimConfig};
use crate::engage::{engagement_loop, Device, EngagementLoop};
use crate::events::Event;
use crate::galvo::{GalvoGeometry, GalvoState};
use crate::perception::{Sensor, Tracker, TruthLink};
use crate::time::SimTime;
use crate::world::{spawn_scenario, stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Sweep coordinate: distance in m or platform speed in mm/s.
    pub point: f64,
    pub trial: u32,
    pub seed: u64,
    pub n_pests: u32,
    /// Distinct real pests detected at least once.
    pub n_detections_true: u32,
    /// Distinct clutter objects reported as pests.
    pub n_detections_false: u32,
    pub n_neutralized: u32,
    pub efficiency: f64,
    pub neutralized_per_s: f64,
    /// Not part of the deterministic output.
    pub wall_runtime_s: f64,
}

/// Detection and kill counts recomputed from an event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialScore {
    pub seed: u64,
    pub n_pests: u32,
    pub n_detections_true: u32,
    pub n_detections_false: u32,
    pub n_neutralized: u32,
    pub duration_s: f64,
}

impl TrialScore {
    pub fn efficiency(&self) -> f64 {
        f64::from(self.n_neutralized) / f64::from(self.n_pests)
    }

    pub fn neutralized_per_s(&self) -> f64 {
        f64::from(self.n_neutralized) / self.duration_s
    }
}

pub fn score_events(events: &[Event]) -> Result<TrialScore, HarnessError> {
    let Some(Event::TrialStart { seed, n_pests, duration, .. }) = events.first() else {
        return Err(HarnessError::BadLog("log does not begin with a trial_start record".into()));
    };
    if *n_pests == 0 {
        return Err(HarnessError::EmptyScenario);
    }
    let mut true_ids = BTreeSet::new();
    let mut false_ids = BTreeSet::new();
    let mut neutralized = BTreeSet::new();
    for e in events {
        match e {
            Event::Detection { truth: TruthLink::Pest(id), .. } => {
                true_ids.insert(*id);
            }
            Event::Detection { truth: TruthLink::Clutter(id), .. } => {
                false_ids.insert(*id);
            }
            Event::Neutralized { pest, .. } if !neutralized.insert(*pest) => {
                return Err(HarnessError::BadLog(format!("pest {} neutralized twice", pest.0)));
            }
            _ => {}
        }
    }
    Ok(TrialScore {
        seed: *seed,
        n_pests: *n_pests,
        n_detections_true: true_ids.len() as u32,
        n_detections_false: false_ids.len() as u32,
        n_neutralized: neutralized.len() as u32,
        duration_s: duration.as_secs_f64(),
    })
}

/// Runs one trial and returns its result together with the full event log.
pub fn run_trial_logged(config: &SimConfig, seed: u64) -> Result<(TrialResult, Vec<Event>), HarnessError> {
    let started = Instant::now();
    config.validate()?;
    if config.pests.total() == 0 {
        return Err(HarnessError::EmptyScenario);
    }
    let mut world = spawn_scenario(&config.scenario(), seed)?;
    let device = Device {
        rig: config.rig,
        geometry: GalvoGeometry::from_config(&config.galvo)?,
        laser: config.laser.clone(),
        config: config.engage.clone(),
    };
    let sensor = Sensor::new(config.perception.clone(), stream_rng(seed, Stream::Perception));
    let tracker = Tracker::new(&config.perception);
    let mut device_loop = EngagementLoop::new(device, GalvoState::new(&config.galvo), sensor, tracker);

    let duration = SimTime::from_secs_f64(config.trial.duration_s);
    let dt = SimTime::from_secs_f64(config.trial.dt_s);
    let mut events = vec![Event::TrialStart {
        seed,
        n_pests: world.pests.len() as u32,
        n_clutter: world.clutter.len() as u32,
        duration,
        distance_m: config.trial.distance_m,
        speed_mm_s: config.rail.speed_mm_s,
    }];
    events.extend(engagement_loop(&mut world, &mut device_loop, duration, dt));
    for p in &world.pests {
        events.push(Event::PestFinal {
            pest: p.id,
            species: p.species,
            alive: p.alive,
            absorbed_energy_j: p.absorbed_energy_j,
            kill_energy_j: config.laser.kill_energy_j(world.species.get(p.species).mass_g),
        });
    }
    events.push(Event::TrialEnd { t: world.clock });

    let score = score_events(&events)?;
    let result = TrialResult {
        point: config.trial.distance_m,
        trial: 0,
        seed,
        n_pests: score.n_pests,
        n_detections_true: score.n_detections_true,
        n_detections_false: score.n_detections_false,
        n_neutralized: score.n_neutralized,
        efficiency: score.efficiency(),
        neutralized_per_s: score.neutralized_per_s(),
        wall_runtime_s: started.elapsed().as_secs_f64(),
    };
    Ok((result, events))
}

pub fn run_trial(config: &SimConfig, seed: u64) -> Result<TrialResult, HarnessError> {
    run_trial_logged(config, seed).map(|(r, _)| r)
}
