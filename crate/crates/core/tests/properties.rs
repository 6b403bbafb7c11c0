#![allow(clippy::field_reassign_with_default)]

use std::collections::BTreeMap;

use pestlaser::engage::Outcome;
use pestlaser::events::Event;
use pestlaser::galvo::{dac_decode, dac_encode, reflect, GalvoConfig, GalvoState};
use pestlaser::geometry::{PixelObservation, StereoRig, Vec3};
use pestlaser::harness::{parse_config, print_config, run_trial_logged, SimConfig};
use pestlaser::perception::TruthLink;
use pestlaser::time::SimTime;
use pestlaser::world::{spawn_scenario, PestCounts, PestId};
use proptest::prelude::*;

fn rig_strategy() -> impl Strategy<Value = StereoRig> {
    (100.0..2000.0f64, 0.01..0.5f64).prop_map(|(focal_px, baseline_m)| StereoRig { focal_px, baseline_m, ..StereoRig::default() })
}

fn unit_vector() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, 0.0..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    })
}

proptest! {
    #[test]
    fn stereo_depth_times_disparity_is_focal_times_baseline(rig in rig_strategy(), d in 0.01..500.0f64) {
        let z = rig.stereo_depth(d).unwrap();
        prop_assert!((z * d - rig.focal_px * rig.baseline_m).abs() <= 1e-12 * rig.focal_px * rig.baseline_m);
    }

    #[test]
    fn depth_decreases_with_disparity(rig in rig_strategy(), d in 0.01..500.0f64, extra in 0.001..100.0f64) {
        prop_assert!(rig.stereo_depth(d + extra).unwrap() < rig.stereo_depth(d).unwrap());
    }

    #[test]
    fn projection_and_triangulation_invert(u in 0.0..400.0f64, v in 0.0..400.0f64, z in 0.1..20.0f64) {
        let rig = StereoRig::default();
        let p = rig.back_project(&PixelObservation { u, v, disparity_px: 0.0 }, z).unwrap();
        let obs = rig.project(&p).unwrap();
        prop_assert!((obs.u - u).abs() < 1e-9 && (obs.v - v).abs() < 1e-9);
        let back = rig.triangulate(&obs).unwrap();
        prop_assert!((back - p).norm() <= 1e-12 * z.max(1.0));
    }

    #[test]
    fn reflection_keeps_norm_and_mirrors_the_angle(d in unit_vector(), n in unit_vector()) {
        let r = reflect(&d, &n).unwrap();
        prop_assert!((r.norm() - 1.0).abs() < 1e-12);
        prop_assert!((r.dot(&n) + d.dot(&n)).abs() < 1e-12);
        // tangential component unchanged
        let tangential = |v: &Vec3| v - n * v.dot(&n);
        prop_assert!((tangential(&r) - tangential(&d)).norm() < 1e-12);
        prop_assert!((reflect(&r, &n).unwrap() - d).norm() < 1e-12);
    }

    #[test]
    fn dac_codes_stay_in_range(angle in -1.0..1.0f64, theta_max in 0.05..0.7f64, bits in 8u32..=16) {
        let s = dac_encode(angle, theta_max, bits);
        prop_assert!(s.code < (1 << bits));
        prop_assert!((-5.0..=5.0).contains(&s.volts));
        prop_assert_eq!(s.clamped, angle.abs() > theta_max);
        if !s.clamped {
            let lsb = 2.0 * theta_max / f64::from((1u32 << bits) - 1);
            prop_assert!((dac_decode(s.code, theta_max, bits) - angle).abs() <= 0.5 * lsb + 1e-15);
        }
    }

    #[test]
    fn galvo_commands_respect_the_point_rate(gaps_us in prop::collection::vec(0u64..200, 1..200)) {
        let mut g = GalvoState::new(&GalvoConfig::default());
        let mut t = SimTime::ZERO;
        let mut last: Option<SimTime> = None;
        for gap in gaps_us {
            t = t + SimTime::from_micros(gap);
            let c = g.command_mirrors([0.01, -0.02], t);
            prop_assert!(c.t_effective >= c.t_request);
            if let Some(prev) = last {
                prop_assert!(c.t_effective - prev >= SimTime::from_micros(50));
            }
            last = Some(c.t_effective);
        }
    }

    #[test]
    fn pest_count_is_conserved(seed in any::<u64>(), n in 0u32..60, kills in prop::collection::vec(0u32..60, 0..20)) {
        let mut cfg = SimConfig::default();
        cfg.pests = PestCounts { cabbage_caterpillar: n, aphid: n / 3, grasshopper: n / 5 };
        let mut w = spawn_scenario(&cfg.scenario(), seed).unwrap();
        let total = w.pests.len();
        for (k, id) in kills.iter().enumerate() {
            for _ in 0..50 {
                w.step_exact(SimTime::from_millis(1));
                prop_assert_eq!(w.alive_count() + w.neutralized_count(), total);
            }
            w.neutralize(PestId(*id), SimTime::from_millis(50 * k as u64));
            prop_assert!(w.pests.iter().all(|p| w.arena.contains(&p.position)));
        }
        prop_assert_eq!(w.alive_count() + w.neutralized_count(), total);
    }

    #[test]
    fn config_print_parse_is_a_fixpoint(
        seed in any::<u64>(),
        duration in 0.01..1000.0f64,
        lambda in 0.0..2.0f64,
        power in 0.1..14.99f64,
        cap in 1.0..100.0f64,
        distances in prop::collection::vec(0.1..20.0f64, 1..8),
    ) {
        let mut cfg = SimConfig::default();
        cfg.trial.seed = seed;
        cfg.trial.duration_s = duration;
        cfg.perception.falloff_lambda_per_m = lambda;
        cfg.perception.throughput_cap_per_s = cap;
        cfg.laser.power_W = power;
        cfg.sweep.distances_m = distances;
        let text = print_config(&cfg);
        let parsed = parse_config(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(print_config(&parsed), text);
    }
}

fn trial_config(speed_mm_s: f64, pests: u32, cap: f64) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.trial.duration_s = 4.0;
    cfg.pests = PestCounts { cabbage_caterpillar: pests, aphid: pests / 4, grasshopper: pests / 4 };
    cfg.rail.speed_mm_s = speed_mm_s;
    cfg.perception.throughput_cap_per_s = cap;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn energy_is_conserved_per_pest(seed in any::<u64>(), speed in 0.0..400.0f64, pests in 1u32..300, cap in 5.0..30.0f64) {
        let (_, events) = run_trial_logged(&trial_config(speed, pests, cap), seed).unwrap();
        let mut from_engagements: BTreeMap<PestId, f64> = BTreeMap::new();
        for e in &events {
            if let Event::Engagement(r) = e {
                if let TruthLink::Pest(id) = r.truth {
                    let power = 5.0;
                    prop_assert_eq!(r.energy_j, power * r.in_spot.as_secs_f64());
                    *from_engagements.entry(id).or_insert(0.0) += r.energy_j;
                }
            }
        }
        let mut n_final = 0;
        for e in &events {
            if let Event::PestFinal { pest, alive, absorbed_energy_j, kill_energy_j, .. } = e {
                n_final += 1;
                prop_assert_eq!(*absorbed_energy_j, from_engagements.get(pest).copied().unwrap_or(0.0));
                prop_assert_eq!(!alive, absorbed_energy_j >= kill_energy_j);
            }
        }
        prop_assert_eq!(n_final, pests + 2 * (pests / 4));
    }

    #[test]
    fn beam_is_exclusive_and_timing_is_honored(seed in any::<u64>(), speed in 0.0..400.0f64, pests in 1u32..300, cap in 5.0..30.0f64) {
        let (_, events) = run_trial_logged(&trial_config(speed, pests, cap), seed).unwrap();
        let mut last_end = SimTime::ZERO;
        let mut dead: BTreeMap<PestId, SimTime> = BTreeMap::new();
        let mut emitted: Vec<SimTime> = Vec::new();
        let mut last_cmd: Option<SimTime> = None;
        for e in &events {
            match e {
                Event::Engagement(r) => {
                    if let TruthLink::Pest(id) = r.truth {
                        prop_assert!(dead.get(&id).is_none_or(|&t| r.t_selected < t), "re-engaged a neutralized pest");
                    }
                    if let Some(w) = r.fire {
                        let aimed = r.t_aimed.unwrap();
                        prop_assert!(r.t_selected <= aimed && aimed <= w.start && w.start < w.end);
                        prop_assert!(w.start - r.t_selected >= SimTime::from_millis(30));
                        prop_assert!(w.start >= last_end, "overlapping fire windows");
                        last_end = w.end;
                    } else {
                        prop_assert_eq!(r.outcome, Outcome::Missed);
                    }
                }
                Event::Neutralized { t, pest, .. } => {
                    prop_assert!(dead.insert(*pest, *t).is_none());
                }
                Event::Detection { t_captured, .. } => emitted.push(*t_captured),
                Event::GalvoCommand(c) => {
                    if let Some(prev) = last_cmd {
                        prop_assert!(c.t_effective - prev >= SimTime::from_micros(50));
                    }
                    last_cmd = Some(c.t_effective);
                }
                _ => {}
            }
        }
        for (i, &t) in emitted.iter().enumerate() {
            let in_window = emitted[..=i].iter().filter(|&&e| e + SimTime::from_secs_f64(1.0) > t).count();
            prop_assert!(in_window as f64 <= cap, "{} detections in the second ending at {}", in_window, t);
        }
    }
}

#[test]
fn single_static_pest_absorbs_exactly_one_dwell() {
    let mut cfg = trial_config(0.0, 1, 10.0);
    cfg.pests = PestCounts { cabbage_caterpillar: 1, aphid: 0, grasshopper: 0 };
    cfg.species.cabbage_caterpillar.speed_mm_s = 0.0;
    cfg.species.cabbage_caterpillar.p_detect_ref = 1.0;
    cfg.species.cabbage_caterpillar.fp_per_100 = 0.0;
    let (r, events) = run_trial_logged(&cfg, 5).unwrap();
    assert_eq!(r.n_neutralized, 1);
    let final_energy = events.iter().find_map(|e| match e {
        Event::PestFinal { absorbed_energy_j, .. } => Some(*absorbed_energy_j),
        _ => None,
    });
    assert_eq!(final_energy, Some(5.0 * 0.05));
}
