//! Stochastic detector and track bookkeeping.
//!
//! The detector stands in for the neural network: every revisit tick it reports
//! each visible pest whose latent conspicuity falls under the range-dependent
//! detection probability, plus any background clutter it mistakes for pests.
//! Reports reach the tracker after the species' recognition latency and are
//! throttled to the detector's throughput.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{PixelObservation, Point3, StereoRig};
use crate::time::SimTime;
use crate::world::{PestId, Species, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    pub z_ref_m: f64,
    pub falloff_lambda_per_m: f64,
    pub throughput_cap_per_s: f64,
    pub revisit_period_s: f64,
    pub gate_radius_mm: f64,
    /// A pending track unseen for this many revisit periods is dropped.
    pub lost_after_periods: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            z_ref_m: 1.0,
            falloff_lambda_per_m: 0.25,
            throughput_cap_per_s: 10.0,
            revisit_period_s: 1.0 / 3.0,
            gate_radius_mm: 10.0,
            lost_after_periods: 3.0,
        }
    }
}

impl PerceptionParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("perception.z_ref_m", self.z_ref_m),
            ("perception.throughput_cap_per_s", self.throughput_cap_per_s),
            ("perception.revisit_period_s", self.revisit_period_s),
            ("perception.gate_radius_mm", self.gate_radius_mm),
            ("perception.lost_after_periods", self.lost_after_periods),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !(self.falloff_lambda_per_m.is_finite() && self.falloff_lambda_per_m >= 0.0) {
            return Err("perception.falloff_lambda_per_m must be >= 0".into());
        }
        if self.throughput_cap_per_s < 1.0 {
            return Err("perception.throughput_cap_per_s must allow at least one detection per second".into());
        }
        Ok(())
    }

    /// `p_ref · exp(-λ · max(0, z - z_ref))`.
    pub fn detection_probability(&self, p_ref: f64, z_m: f64) -> f64 {
        p_ref * (-self.falloff_lambda_per_m * (z_m - self.z_ref_m).max(0.0)).exp()
    }

    pub fn revisit_period(&self) -> SimTime {
        SimTime::from_secs_f64(self.revisit_period_s)
    }
}

/// What a detection actually corresponds to. Never visible to the device logic
/// except through the kill confirmation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLink {
    Pest(PestId),
    /// False positive produced by the clutter object with this id.
    Clutter(u32),
}

impl TruthLink {
    pub fn pest(self) -> Option<PestId> {
        match self {
            TruthLink::Pest(id) => Some(id),
            TruthLink::Clutter(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t_captured: SimTime,
    pub t_available: SimTime,
    pub obs: PixelObservation,
    pub species_label: Species,
    pub truth: TruthLink,
    /// Triangulated position in the camera frame at capture.
    pub est_position: Point3,
    /// The same position in the world frame (camera pose known from the rail).
    pub est_world: Point3,
}

#[derive(Debug, Default)]
pub struct SenseOutput {
    pub detections: Vec<Detection>,
    pub dropped: usize,
}

/// The detector: owns its random stream and its throughput history.
#[derive(Debug, Clone)]
pub struct Sensor {
    params: PerceptionParams,
    rng: ChaCha8Rng,
    emitted: VecDeque<SimTime>,
    /// Token bucket spreading the cap evenly over ticks; holds at most one
    /// revisit period's worth, rounded up.
    credit: f64,
    last_sense: Option<SimTime>,
}

impl Sensor {
    pub fn new(params: PerceptionParams, rng: ChaCha8Rng) -> Self {
        Self { params, rng, emitted: VecDeque::new(), credit: 0.0, last_sense: None }
    }

    pub fn params(&self) -> &PerceptionParams {
        &self.params
    }

    /// How many detections may be emitted at `t`: the token bucket, further
    /// bounded by the sliding one-second window.
    fn budget(&mut self, t: SimTime) -> usize {
        let cap = self.params.throughput_cap_per_s;
        // room for the fractional carry, so the long-run rate is exactly the cap
        let burst = (cap * self.params.revisit_period_s).ceil().max(1.0);
        let elapsed = match self.last_sense {
            Some(last) => t.saturating_sub(last).as_secs_f64(),
            None => self.params.revisit_period_s,
        };
        self.last_sense = Some(t);
        self.credit = (self.credit + cap * elapsed).min(burst);
        let tokens = (self.credit + 1e-9).floor() as usize;
        let window = SimTime::from_secs_f64(1.0);
        while let Some(&front) = self.emitted.front() {
            if front + window <= t {
                self.emitted.pop_front();
            } else {
                break;
            }
        }
        let window = (cap.floor() as usize).saturating_sub(self.emitted.len());
        tokens.min(window)
    }

    /// One detector pass over the world at time `t`.
    pub fn sense(&mut self, world: &WorldState, rig: &StereoRig, t: SimTime) -> SenseOutput {
        let cam = world.platform_pos;
        let mut candidates = Vec::new();

        let mut consider = |world_pos: Point3, p_ref: f64, conspicuity: f64, label: Species, truth: TruthLink| {
            let local = Point3::from(world_pos - cam);
            let Ok(obs) = rig.project(&local) else { return };
            if conspicuity >= self.params.detection_probability(p_ref, local.z) {
                return;
            }
            let Ok(est) = rig.triangulate(&obs) else { return };
            let latency = SimTime::from_secs_f64(world.species.get(label).detect_latency_ms * 1e-3);
            candidates.push(Detection {
                t_captured: t,
                t_available: t + latency,
                obs,
                species_label: label,
                truth,
                est_position: est,
                est_world: Point3::from(est.coords + cam.coords),
            });
        };

        for pest in world.pests.iter().filter(|p| p.alive) {
            let p_ref = world.species.get(pest.species).p_detect_ref;
            consider(pest.position, p_ref, pest.conspicuity, pest.species, TruthLink::Pest(pest.id));
        }
        for c in &world.clutter {
            consider(c.position, 1.0, c.conspicuity, c.label, TruthLink::Clutter(c.id));
        }

        // detector output order carries no meaning; the cap keeps a random subset
        candidates.shuffle(&mut self.rng);
        let budget = self.budget(t);
        let dropped = candidates.len().saturating_sub(budget);
        candidates.truncate(budget);
        self.credit = (self.credit - candidates.len() as f64).max(0.0);
        self.emitted.extend(std::iter::repeat_n(t, candidates.len()));
        SenseOutput { detections: candidates, dropped }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Pending,
    Engaged,
    Neutralized,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub state: TrackState,
    pub opened_at: SimTime,
    /// When the tracker last received a detection for this track.
    pub last_seen: SimTime,
    pub last_detection: Detection,
    pub previous_detection: Option<Detection>,
}

impl Track {
    pub fn age(&self, t: SimTime) -> SimTime {
        t.saturating_sub(self.opened_at)
    }

    pub fn position(&self) -> Point3 {
        self.last_detection.est_world
    }

    /// Crop-plane velocity from the last two detections, if there are two.
    pub fn velocity(&self) -> Option<[f64; 2]> {
        let prev = self.previous_detection.as_ref()?;
        let dt = (self.last_detection.t_captured.as_secs_f64()) - prev.t_captured.as_secs_f64();
        if dt <= 0.0 {
            return None;
        }
        let d = self.last_detection.est_world - prev.est_world;
        Some([d.x / dt, d.y / dt])
    }

    fn transition(&mut self, next: TrackState) {
        use TrackState::*;
        let ok = matches!((self.state, next), (Pending, Engaged) | (Pending, Lost) | (Engaged, Neutralized) | (Engaged, Lost));
        debug_assert!(ok, "illegal track transition {:?} -> {:?}", self.state, next);
        self.state = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackChange {
    Opened,
    Lost,
    Neutralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub t: SimTime,
    pub track: TrackId,
    pub change: TrackChange,
}

/// Nearest-neighbour gated tracker. Holds only open (pending or engaged) tracks.
#[derive(Debug, Clone)]
pub struct Tracker {
    tracks: Vec<Track>,
    next_id: u32,
    gate_radius_m: f64,
    lost_after: SimTime,
    confirmed_kills: BTreeSet<PestId>,
}

impl Tracker {
    pub fn new(params: &PerceptionParams) -> Self {
        Self {
            tracks: Vec::new(),
            next_id: 0,
            gate_radius_m: params.gate_radius_mm * 1e-3,
            lost_after: SimTime::from_secs_f64(params.lost_after_periods * params.revisit_period_s),
            confirmed_kills: BTreeSet::new(),
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn get(&self, id: TrackId) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn pending(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.state == TrackState::Pending)
    }

    /// Folds newly available detections into the track set at time `t`.
    pub fn update(&mut self, detections: &[Detection], t: SimTime) -> Vec<TrackEvent> {
        let mut events = Vec::new();
        for det in detections {
            if det.truth.pest().is_some_and(|id| self.confirmed_kills.contains(&id)) {
                continue;
            }
            let gate2 = self.gate_radius_m * self.gate_radius_m;
            let nearest = self
                .tracks
                .iter_mut()
                .map(|tr| ((tr.position() - det.est_world).norm_squared(), tr))
                .filter(|(d2, _)| *d2 <= gate2)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
            match nearest {
                Some((_, tr)) => {
                    if det.t_captured >= tr.last_detection.t_captured {
                        let prev = std::mem::replace(&mut tr.last_detection, det.clone());
                        tr.previous_detection = Some(prev);
                    }
                    tr.last_seen = t;
                }
                None => {
                    let id = TrackId(self.next_id);
                    self.next_id += 1;
                    self.tracks.push(Track {
                        id,
                        state: TrackState::Pending,
                        opened_at: t,
                        last_seen: t,
                        last_detection: det.clone(),
                        previous_detection: None,
                    });
                    events.push(TrackEvent { t, track: id, change: TrackChange::Opened });
                }
            }
        }
        events.extend(self.expire(t));
        events
    }

    /// Drops pending tracks that have gone unseen for too long.
    pub fn expire(&mut self, t: SimTime) -> Vec<TrackEvent> {
        let mut events = Vec::new();
        let lost_after = self.lost_after;
        self.tracks.retain_mut(|tr| {
            if tr.state == TrackState::Pending && t.saturating_sub(tr.last_seen) > lost_after {
                tr.transition(TrackState::Lost);
                events.push(TrackEvent { t, track: tr.id, change: TrackChange::Lost });
                false
            } else {
                true
            }
        });
        events
    }

    pub fn begin_engagement(&mut self, id: TrackId) {
        if let Some(tr) = self.tracks.iter_mut().find(|t| t.id == id) {
            tr.transition(TrackState::Engaged);
        }
    }

    /// Closes a track whose engagement ended without a confirmed kill.
    pub fn mark_lost(&mut self, id: TrackId, t: SimTime) -> Option<TrackEvent> {
        let idx = self.tracks.iter().position(|tr| tr.id == id)?;
        let mut tr = self.tracks.remove(idx);
        tr.transition(TrackState::Lost);
        Some(TrackEvent { t, track: id, change: TrackChange::Lost })
    }

    /// Records a visually confirmed kill: closes the engaged track and any other
    /// open track on the same pest; later reports of it are discarded.
    pub fn confirm_neutralized(&mut self, id: TrackId, pest: PestId, t: SimTime) -> Vec<TrackEvent> {
        self.confirmed_kills.insert(pest);
        let mut events = Vec::new();
        self.tracks.retain_mut(|tr| {
            if tr.id == id {
                tr.transition(TrackState::Neutralized);
                events.push(TrackEvent { t, track: tr.id, change: TrackChange::Neutralized });
                false
            } else if tr.last_detection.truth == TruthLink::Pest(pest) && tr.state == TrackState::Pending {
                tr.transition(TrackState::Lost);
                events.push(TrackEvent { t, track: tr.id, change: TrackChange::Lost });
                false
            } else {
                true
            }
        });
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{spawn_scenario, stream_rng, Arena, PestCounts, PlatformRail, ScenarioConfig, SpeciesTable, Stream};

    fn det(x: f64, y: f64, t: SimTime, truth: TruthLink) -> Detection {
        let p = Point3::new(x, y, 1.0);
        Detection {
            t_captured: t,
            t_available: t,
            obs: PixelObservation { u: 200.0, v: 200.0, disparity_px: 50.0 },
            species_label: Species::CabbageCaterpillar,
            truth,
            est_position: p,
            est_world: p,
        }
    }

    fn world(n: u32, distance: f64, seed: u64) -> WorldState {
        let cfg = ScenarioConfig {
            arena: Arena::default(),
            counts: PestCounts { cabbage_caterpillar: n, ..Default::default() },
            species: SpeciesTable { cabbage_caterpillar: crate::world::SpeciesParams { fp_per_100: 0.0, ..SpeciesTable::default().cabbage_caterpillar }, ..SpeciesTable::default() },
            rail: PlatformRail::default(),
            distance_m: distance,
            heading_interval_s: 5.0,
        };
        spawn_scenario(&cfg, seed).unwrap()
    }

    fn uncapped() -> PerceptionParams {
        PerceptionParams { throughput_cap_per_s: 1e6, ..Default::default() }
    }

    #[test]
    fn detection_probability_falls_off_beyond_reference_range() {
        let p = PerceptionParams { z_ref_m: 0.5, falloff_lambda_per_m: 0.25, ..Default::default() };
        assert_eq!(p.detection_probability(0.8, 0.3), 0.8);
        assert_eq!(p.detection_probability(0.8, 0.5), 0.8);
        let far = p.detection_probability(0.8, 10.0);
        assert!((far - 0.8 * (-2.375f64).exp()).abs() < 1e-15);
        assert!((far - 0.074).abs() < 5e-4);
    }

    #[test]
    fn sense_is_deterministic() {
        let w = world(100, 1.0, 3);
        let rig = StereoRig::default();
        let a = Sensor::new(uncapped(), stream_rng(3, Stream::Perception)).sense(&w, &rig, SimTime::ZERO);
        let b = Sensor::new(uncapped(), stream_rng(3, Stream::Perception)).sense(&w, &rig, SimTime::ZERO);
        assert_eq!(a.detections, b.detections);
    }

    #[test]
    fn caterpillar_detections_match_reference_rate() {
        let rig = StereoRig::default();
        let mut total = 0usize;
        for seed in 0..50 {
            let w = world(100, 1.0, seed);
            let out = Sensor::new(uncapped(), stream_rng(seed, Stream::Perception)).sense(&w, &rig, SimTime::ZERO);
            total += out.detections.len();
        }
        let mean = total as f64 / 50.0;
        assert!((75.0..=85.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn far_caterpillar_detections_follow_falloff() {
        let rig = StereoRig::default();
        let params = PerceptionParams { z_ref_m: 0.5, ..uncapped() };
        let mut total = 0usize;
        let n = 400;
        for seed in 0..n {
            let w = world(100, 10.0, seed);
            total += Sensor::new(params.clone(), stream_rng(seed, Stream::Perception)).sense(&w, &rig, SimTime::ZERO).detections.len();
        }
        let mean = total as f64 / n as f64;
        let expect = 100.0 * params.detection_probability(0.8, 10.0);
        assert!((mean - expect).abs() < 2.0, "mean {mean} vs {expect}");
    }

    #[test]
    fn detections_carry_latency_and_consistent_estimates() {
        let w = world(50, 1.0, 11);
        let rig = StereoRig::default();
        let out = Sensor::new(uncapped(), stream_rng(11, Stream::Perception)).sense(&w, &rig, SimTime::from_millis(100));
        assert!(!out.detections.is_empty());
        for d in &out.detections {
            assert_eq!(d.t_available - d.t_captured, SimTime::from_millis(300));
            let again = rig.back_project(&d.obs, rig.stereo_depth(d.obs.disparity_px).unwrap()).unwrap();
            assert_eq!(again, d.est_position);
            let truth = w.pest(d.truth.pest().unwrap()).unwrap().position;
            assert!((truth - d.est_world).norm() < 1e-9);
        }
    }

    #[test]
    fn throughput_cap_holds_over_sliding_window() {
        let w = world(100, 1.0, 5);
        let rig = StereoRig::default();
        let mut s = Sensor::new(PerceptionParams::default(), stream_rng(5, Stream::Perception));
        let mut emitted = Vec::new();
        for k in 0..30u64 {
            let t = SimTime::from_millis(k * 334);
            let out = s.sense(&w, &rig, t);
            assert!(out.dropped > 0);
            emitted.extend(out.detections.iter().map(|d| d.t_captured));
        }
        for &t in &emitted {
            let in_window = emitted.iter().filter(|&&e| e <= t && e + SimTime::from_secs_f64(1.0) > t).count();
            assert!(in_window <= 10);
        }
        assert!(emitted.len() >= 90);
    }

    #[test]
    fn empty_world_gives_no_detections() {
        let w = world(0, 1.0, 1);
        let out = Sensor::new(uncapped(), stream_rng(1, Stream::Perception)).sense(&w, &StereoRig::default(), SimTime::ZERO);
        assert!(out.detections.is_empty());
    }

    #[test]
    fn gating_refreshes_existing_track() {
        let mut tr = Tracker::new(&PerceptionParams::default());
        let t0 = SimTime::ZERO;
        tr.update(&[det(0.0, 0.0, t0, TruthLink::Pest(PestId(0)))], t0);
        let t1 = SimTime::from_millis(333);
        let ev = tr.update(&[det(0.005, 0.0, t1, TruthLink::Pest(PestId(0)))], t1);
        assert!(ev.is_empty());
        assert_eq!(tr.tracks().len(), 1);
        assert_eq!(tr.tracks()[0].last_seen, t1);
    }

    #[test]
    fn far_false_positive_opens_new_track() {
        let mut tr = Tracker::new(&PerceptionParams::default());
        tr.update(&[det(0.0, 0.0, SimTime::ZERO, TruthLink::Pest(PestId(0)))], SimTime::ZERO);
        tr.update(&[det(0.1, 0.1, SimTime::ZERO, TruthLink::Clutter(3))], SimTime::ZERO);
        assert_eq!(tr.tracks().len(), 2);
        assert_eq!(tr.tracks()[1].state, TrackState::Pending);
        assert_eq!(tr.tracks()[1].last_detection.truth.pest(), None);
    }

    #[test]
    fn unseen_track_is_lost_after_three_periods() {
        let mut tr = Tracker::new(&PerceptionParams::default());
        tr.update(&[det(0.0, 0.0, SimTime::ZERO, TruthLink::Pest(PestId(0)))], SimTime::ZERO);
        assert!(tr.expire(SimTime::from_millis(1000)).is_empty());
        let ev = tr.expire(SimTime::from_millis(1100));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].change, TrackChange::Lost);
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn confirmed_kill_closes_tracks_and_filters_stale_reports() {
        let mut tr = Tracker::new(&PerceptionParams::default());
        let pest = TruthLink::Pest(PestId(4));
        tr.update(&[det(0.0, 0.0, SimTime::ZERO, pest)], SimTime::ZERO);
        let id = tr.tracks()[0].id;
        tr.begin_engagement(id);
        let ev = tr.confirm_neutralized(id, PestId(4), SimTime::from_millis(400));
        assert_eq!(ev[0].change, TrackChange::Neutralized);
        tr.update(&[det(0.0, 0.0, SimTime::from_millis(350), pest)], SimTime::from_millis(650));
        assert!(tr.tracks().is_empty());
    }
}
