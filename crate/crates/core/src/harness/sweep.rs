use rayon::prelude::*;

use super::{run_trial, HarnessError, SimConfig, TrialResult};

/// Runs `trials` trials at each point on a pool of `jobs` workers. Trial `k`
/// uses seed `base + k` at every point, so points differ only in the swept
/// parameter. Output is sorted by (point, trial) whatever the completion order.
pub fn run_points(points: &[(f64, SimConfig)], trials: u32, base_seed: u64, jobs: usize) -> Result<Vec<TrialResult>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let work: Vec<(f64, &SimConfig, u32)> = points
        .iter()
        .flat_map(|(p, c)| (0..trials).map(move |k| (*p, c, k)))
        .collect();
    let mut results = pool.install(|| {
        work.par_iter()
            .map(|&(point, cfg, k)| {
                let mut r = run_trial(cfg, base_seed.wrapping_add(u64::from(k)))?;
                r.point = point;
                r.trial = k;
                Ok(r)
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    results.sort_by(|a, b| a.point.total_cmp(&b.point).then(a.trial.cmp(&b.trial)));
    Ok(results)
}

pub fn sweep_distance(config: &SimConfig, jobs: usize) -> Result<Vec<TrialResult>, HarnessError> {
    config.validate()?;
    let points: Vec<_> = config.sweep.distances_m.iter().map(|&d| (d, config.at_distance(d))).collect();
    run_points(&points, config.sweep.distance_trials, config.trial.seed, jobs)
}

pub fn sweep_speed(config: &SimConfig, jobs: usize) -> Result<Vec<TrialResult>, HarnessError> {
    config.validate()?;
    let points: Vec<_> = config.sweep.speeds_mm_s.iter().map(|&v| (v, config.at_speed(v))).collect();
    run_points(&points, config.sweep.speed_trials, config.trial.seed, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_single_trial_is_one_row() {
        let mut c = SimConfig::default();
        c.trial.duration_s = 2.0;
        c.sweep.distances_m = vec![1.0];
        c.sweep.distance_trials = 1;
        let rows = sweep_distance(&c, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].point, rows[0].trial, rows[0].seed), (1.0, 0, 42));
    }

    #[test]
    fn rows_are_sorted_by_point_then_trial() {
        let mut c = SimConfig::default();
        c.trial.duration_s = 1.0;
        c.sweep.distances_m = vec![2.0, 0.5];
        c.sweep.distance_trials = 3;
        let rows = sweep_distance(&c, 2).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.point, r.trial)).collect();
        assert_eq!(keys, vec![(0.5, 0), (0.5, 1), (0.5, 2), (2.0, 0), (2.0, 1), (2.0, 2)]);
    }
}
