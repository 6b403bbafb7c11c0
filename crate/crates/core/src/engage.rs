//! Laser engagement: target selection, aiming, the dwell/kill model and the
//! sequential device loop that ties sensing, tracking and firing together.
//!
//! Frames: the camera sits at the platform position, so `camera = world -
//! platform`; the scanner frame is the camera frame shifted by the mount offset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Event;
use crate::galvo::{GalvoError, GalvoGeometry, GalvoState, Ray};
use crate::geometry::{Point3, StereoRig};
use crate::perception::{Detection, Sensor, Track, TrackId, TrackState, Tracker, TruthLink};
use crate::time::SimTime;
use crate::world::{PestId, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngageError {
    #[error("laser power {power_w} W is at or above the {max_w} W crop-damage limit")]
    CropDamageRisk { power_w: f64, max_w: f64 },
    #[error("laser power must be positive, got {0} W")]
    InvalidPower(f64),
    #[error("pest mass must be positive, got {0} g")]
    InvalidMass(f64),
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaserSpec {
    pub power_W: f64,
    /// Informational only.
    pub wavelength_nm: f64,
    pub spot_diameter_mm: f64,
    pub kill_ref_mass_g: f64,
    pub kill_ref_time_ms: f64,
    pub kill_ref_power_W: f64,
    /// Exclusive upper bound on `power_W`.
    pub max_safe_power_W: f64,
}

impl Default for LaserSpec {
    fn default() -> Self {
        Self {
            power_W: 5.0,
            wavelength_nm: 450.0,
            spot_diameter_mm: 2.0,
            kill_ref_mass_g: 2.0,
            kill_ref_time_ms: 25.0,
            kill_ref_power_W: 5.0,
            max_safe_power_W: 15.0,
        }
    }
}

impl LaserSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_safe_power_W.is_finite() && self.max_safe_power_W > 0.0) {
            return Err("laser.max_safe_power_W must be > 0".into());
        }
        if !self.power_W.is_finite() || self.power_W <= 0.0 {
            return Err("laser.power_W must be > 0".into());
        }
        if self.power_W >= self.max_safe_power_W {
            return Err(format!(
                "laser.power_W must be < laser.max_safe_power_W ({} W, exclusive): at or above it the beam burns the crop as well as the pest",
                self.max_safe_power_W
            ));
        }
        for (name, v) in [
            ("laser.spot_diameter_mm", self.spot_diameter_mm),
            ("laser.kill_ref_mass_g", self.kill_ref_mass_g),
            ("laser.kill_ref_time_ms", self.kill_ref_time_ms),
            ("laser.kill_ref_power_W", self.kill_ref_power_W),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !self.wavelength_nm.is_finite() {
            return Err("laser.wavelength_nm must be finite".into());
        }
        Ok(())
    }

    pub fn spot_radius_m(&self) -> f64 {
        0.5e-3 * self.spot_diameter_mm
    }

    /// Energy needed to neutralize a pest, linear in mass through the reference point.
    pub fn kill_energy_j(&self, mass_g: f64) -> f64 {
        self.kill_ref_power_W * self.kill_ref_time_ms * 1e-3 * (mass_g / self.kill_ref_mass_g)
    }
}

/// Continuous exposure needed to neutralize a pest of `mass_g` at `power_w`.
pub fn kill_time_ms(mass_g: f64, power_w: f64, spec: &LaserSpec) -> Result<f64, EngageError> {
    if !(mass_g.is_finite() && mass_g > 0.0) {
        return Err(EngageError::InvalidMass(mass_g));
    }
    if power_w.is_nan() || power_w <= 0.0 {
        return Err(EngageError::InvalidPower(power_w));
    }
    if power_w >= spec.max_safe_power_W {
        return Err(EngageError::CropDamageRisk { power_w, max_w: spec.max_safe_power_W });
    }
    Ok(spec.kill_energy_j(mass_g) / power_w * 1e3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngageConfig {
    pub fire_latency_ms: f64,
    /// Pending tracks older than this preempt the nearest-slew choice.
    pub starvation_s: f64,
    /// Extrapolate the target with the track velocity when aiming.
    pub lead_prediction: bool,
}

impl Default for EngageConfig {
    fn default() -> Self {
        Self { fire_latency_ms: 30.0, starvation_s: 2.0, lead_prediction: false }
    }
}

impl EngageConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fire_latency_ms.is_finite() && self.fire_latency_ms >= 0.0) {
            return Err("engage.fire_latency_ms must be >= 0".into());
        }
        if !(self.starvation_s.is_finite() && self.starvation_s > 0.0) {
            return Err("engage.starvation_s must be > 0".into());
        }
        Ok(())
    }

    pub fn fire_latency(&self) -> SimTime {
        SimTime::from_secs_f64(self.fire_latency_ms * 1e-3)
    }
}

/// Fixed parts of the device: optics, laser and policy.
#[derive(Debug, Clone)]
pub struct Device {
    pub rig: StereoRig,
    pub geometry: GalvoGeometry,
    pub laser: LaserSpec,
    pub config: EngageConfig,
}

impl Device {
    pub fn world_to_scanner(&self, p: &Point3, platform: &Point3) -> Point3 {
        Point3::from(p.coords - platform.coords - self.geometry.mount_offset)
    }

    /// The outgoing beam for the given mirror angles, in the world frame.
    pub fn beam_in_world(&self, angles: [f64; 2], platform: &Point3) -> Result<Ray, GalvoError> {
        let r = self.geometry.trace_beam(angles)?;
        Ok(Ray { origin: r.origin + platform.coords + self.geometry.mount_offset, dir: r.dir })
    }

    /// Pest disc plus beam spot: centers closer than this overlap.
    pub fn hit_radius_m(&self, world: &WorldState, pest: PestId) -> f64 {
        let p = world.pest(pest).expect("pest id from the world");
        self.laser.spot_radius_m() + 0.5e-3 * world.species.get(p.species).body_diameter_mm
    }
}

/// Chooses the next pending track: the oldest starved one if any, otherwise
/// the one needing the smallest mirror slew. Ties go to the lower track id.
pub fn select_target<'a>(
    tracks: impl IntoIterator<Item = &'a Track>,
    device: &Device,
    galvo: &GalvoState,
    platform: &Point3,
    t: SimTime,
) -> Option<TrackId> {
    let starvation = SimTime::from_secs_f64(device.config.starvation_s);
    let pending: Vec<&Track> = tracks.into_iter().filter(|tr| tr.state == TrackState::Pending).collect();
    if let Some(tr) = pending
        .iter()
        .filter(|tr| tr.age(t) > starvation)
        .min_by_key(|tr| (tr.opened_at, tr.id))
    {
        return Some(tr.id);
    }
    pending
        .iter()
        .map(|tr| {
            let a = device.geometry.approx_angles(&device.world_to_scanner(&tr.position(), platform));
            let slew = (a[0] - galvo.angles[0]).abs().max((a[1] - galvo.angles[1]).abs());
            (slew, tr.id)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Neutralized,
    Survived,
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FireWindow {
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementRecord {
    pub track: TrackId,
    pub truth: TruthLink,
    pub t_selected: SimTime,
    /// When the mirrors settled on the aim; absent if aiming failed.
    pub t_aimed: Option<SimTime>,
    pub fire: Option<FireWindow>,
    pub aim_point: Point3,
    pub hit: bool,
    /// Part of the dwell with the target inside the spot.
    pub in_spot: SimTime,
    pub energy_j: f64,
    /// Beam energy that did not land on the target.
    pub wasted_j: f64,
    pub outcome: Outcome,
    pub failure: Option<String>,
}

/// A beam in flight: aimed, waiting out the fire latency or dwelling.
#[derive(Debug, Clone)]
pub struct ActiveEngagement {
    record: EngagementRecord,
    window: FireWindow,
    angles: [f64; 2],
}

impl ActiveEngagement {
    pub fn window(&self) -> FireWindow {
        self.window
    }

    pub fn fire_end(&self) -> SimTime {
        self.window.end
    }

    /// Accounts the slice `[t, t + dt)` of the dwell against the current world.
    pub fn expose(&mut self, device: &Device, world: &WorldState, t: SimTime, dt: SimTime) {
        let lo = t.max(self.window.start);
        let hi = (t + dt).min(self.window.end);
        if hi <= lo {
            return;
        }
        let TruthLink::Pest(id) = self.record.truth else { return };
        let pest = world.pest(id).expect("pest id from the world");
        let Ok(beam) = device.beam_in_world(self.angles, &world.platform_pos) else { return };
        let Some(spot) = beam.hit_z_plane(pest.position.z) else { return };
        let d = ((spot.x - pest.position.x).powi(2) + (spot.y - pest.position.y).powi(2)).sqrt();
        if d <= device.hit_radius_m(world, id) {
            self.record.in_spot = self.record.in_spot + (hi - lo);
        }
    }

    /// Deposits the dwell's energy, decides the kill and returns the final record.
    pub fn finish(mut self, device: &Device, world: &mut WorldState) -> EngagementRecord {
        let power = device.laser.power_W;
        let dwell = (self.window.end - self.window.start).as_secs_f64();
        self.record.energy_j = power * self.record.in_spot.as_secs_f64();
        self.record.wasted_j = power * dwell - self.record.energy_j;
        self.record.hit = self.record.in_spot > SimTime::ZERO;
        self.record.outcome = match self.record.truth {
            TruthLink::Pest(id) if self.record.hit => {
                world.deposit_energy(id, self.record.energy_j);
                let pest = world.pest(id).expect("pest id from the world");
                let needed = device.laser.kill_energy_j(world.species.get(pest.species).mass_g);
                if pest.absorbed_energy_j >= needed {
                    world.neutralize(id, self.window.end);
                    Outcome::Neutralized
                } else {
                    Outcome::Survived
                }
            }
            _ => Outcome::Missed,
        };
        self.record
    }
}

/// Aims at `track` and schedules the shot. On aim failure returns the final
/// (missed) record instead.
pub fn begin_engagement(
    track: &Track,
    device: &Device,
    world: &WorldState,
    galvo: &mut GalvoState,
    t: SimTime,
    commands: &mut Vec<Event>,
) -> Result<ActiveEngagement, Box<EngagementRecord>> {
    let det: &Detection = &track.last_detection;
    let dwell = SimTime::from_secs_f64(world.species.get(det.species_label).dwell_ms * 1e-3);
    let nominal_start = t + device.config.fire_latency();
    // the platform keeps moving: aim for where the target will be mid-dwell
    let t_mid = nominal_start + SimTime(dwell.as_nanos() / 2);
    let mut aim = det.est_world;
    if device.config.lead_prediction {
        if let Some(v) = track.velocity() {
            let ahead = t_mid.as_secs_f64() - det.t_captured.as_secs_f64();
            aim.x += v[0] * ahead;
            aim.y += v[1] * ahead;
        }
    }
    let platform_mid = world.platform_at(t_mid);
    let target = device.world_to_scanner(&aim, &platform_mid);

    let mut record = EngagementRecord {
        track: track.id,
        truth: det.truth,
        t_selected: t,
        t_aimed: None,
        fire: None,
        aim_point: aim,
        hit: false,
        in_spot: SimTime::ZERO,
        energy_j: 0.0,
        wasted_j: 0.0,
        outcome: Outcome::Missed,
        failure: None,
    };
    let angles = match device.geometry.solve_angles(&target, galvo.angles) {
        Ok(a) => a,
        Err(e) => {
            record.failure = Some(e.to_string());
            return Err(Box::new(record));
        }
    };
    let cmd = galvo.command_mirrors(angles, t);
    commands.push(Event::GalvoCommand(cmd));
    let start = nominal_start.max(cmd.t_effective);
    let window = FireWindow { start, end: start + dwell };
    record.t_aimed = Some(cmd.t_effective);
    record.fire = Some(window);
    Ok(ActiveEngagement { record, window, angles: galvo.angles })
}

/// One self-contained shot: aims at `track`, advances `world` through the
/// dwell in steps of `dt`, and returns the record.
pub fn fire(
    track: &Track,
    device: &Device,
    world: &mut WorldState,
    galvo: &mut GalvoState,
    t: SimTime,
    dt: SimTime,
) -> (EngagementRecord, Vec<Event>) {
    let mut events = Vec::new();
    let mut active = match begin_engagement(track, device, world, galvo, t, &mut events) {
        Ok(a) => a,
        Err(rec) => return (*rec, events),
    };
    while world.clock < active.fire_end() {
        let now = world.clock;
        active.expose(device, world, now, dt);
        world.step_exact(dt);
    }
    let rec = active.finish(device, world);
    (rec, events)
}

/// Everything the device owns while running one trial.
#[derive(Debug, Clone)]
pub struct EngagementLoop {
    pub device: Device,
    pub galvo: GalvoState,
    pub sensor: Sensor,
    pub tracker: Tracker,
    in_flight: Vec<Detection>,
    active: Option<ActiveEngagement>,
    sense_index: u64,
}

impl EngagementLoop {
    pub fn new(device: Device, galvo: GalvoState, sensor: Sensor, tracker: Tracker) -> Self {
        Self { device, galvo, sensor, tracker, in_flight: Vec::new(), active: None, sense_index: 0 }
    }

    fn next_sense_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.sense_index as f64 * self.sensor.params().revisit_period_s)
    }

    fn close_engagement(&mut self, world: &mut WorldState, events: &mut Vec<Event>) {
        let Some(active) = self.active.take() else { return };
        let rec = active.finish(&self.device, world);
        let t_end = rec.fire.map(|w| w.end).unwrap_or(rec.t_selected);
        self.record_outcome(rec, t_end, events);
    }

    fn record_outcome(&mut self, rec: EngagementRecord, t: SimTime, events: &mut Vec<Event>) {
        match (rec.outcome, rec.truth) {
            (Outcome::Neutralized, TruthLink::Pest(pest)) => {
                events.push(Event::Neutralized { t, pest, track: rec.track });
                self.tracker.confirm_neutralized(rec.track, pest, t);
            }
            _ => {
                self.tracker.mark_lost(rec.track, t);
            }
        }
        events.push(Event::Engagement(rec));
    }

    /// One fixed step of the device cycle at the world's current time.
    pub fn step(&mut self, world: &mut WorldState, dt: SimTime, events: &mut Vec<Event>) {
        let t = world.clock;

        if t >= self.next_sense_time() {
            let out = self.sensor.sense(world, &self.device.rig, t);
            if out.dropped > 0 {
                events.push(Event::DetectionsDropped { t, count: out.dropped });
            }
            for d in &out.detections {
                events.push(Event::Detection {
                    t_captured: d.t_captured,
                    t_available: d.t_available,
                    species: d.species_label,
                    truth: d.truth,
                });
            }
            self.in_flight.extend(out.detections);
            while t >= self.next_sense_time() {
                self.sense_index += 1;
            }
        }

        if self.in_flight.iter().any(|d| d.t_available <= t) {
            let (ready, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.in_flight).into_iter().partition(|d| d.t_available <= t);
            self.in_flight = later;
            self.tracker.update(&ready, t);
        }
        self.tracker.expire(t);

        if self.active.as_ref().is_some_and(|a| t >= a.fire_end()) {
            self.close_engagement(world, events);
        }
        if let Some(active) = self.active.as_mut() {
            active.expose(&self.device, world, t, dt);
        }

        while self.active.is_none() {
            let Some(id) = select_target(self.tracker.tracks(), &self.device, &self.galvo, &world.platform_pos, t) else { break };
            let track = self.tracker.get(id).expect("selected track exists").clone();
            match begin_engagement(&track, &self.device, world, &mut self.galvo, t, events) {
                Ok(mut active) => {
                    self.tracker.begin_engagement(id);
                    active.expose(&self.device, world, t, dt);
                    self.active = Some(active);
                }
                Err(rec) => {
                    self.tracker.begin_engagement(id);
                    self.record_outcome(*rec, t, events);
                }
            }
        }

        world.step_exact(dt);
    }

    /// Runs until `end`, then lets any shot already in progress complete.
    pub fn run(&mut self, world: &mut WorldState, end: SimTime, dt: SimTime) -> Vec<Event> {
        let mut events = Vec::new();
        while world.clock < end {
            self.step(world, dt, &mut events);
        }
        while let Some(active) = self.active.as_mut() {
            let t = world.clock;
            if t >= active.fire_end() {
                self.close_engagement(world, &mut events);
                break;
            }
            active.expose(&self.device, world, t, dt);
            world.step_exact(dt);
        }
        events
    }
}

/// Runs the full device cycle over `world` for `duration` and returns its event log.
pub fn engagement_loop(world: &mut WorldState, device_loop: &mut EngagementLoop, duration: SimTime, dt: SimTime) -> Vec<Event> {
    device_loop.run(world, world.clock + duration, dt)
}

/// Beam hit point on the plane `z` in the world frame, for diagnostics.
pub fn beam_spot(device: &Device, angles: [f64; 2], platform: &Point3, z: f64) -> Option<Point3> {
    device.beam_in_world(angles, platform).ok()?.hit_z_plane(z)
}
