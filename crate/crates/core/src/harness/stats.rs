use super::{HarnessError, TrialResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// Normal-approximation 95% interval for the mean.
    pub ci95: (f64, f64),
}

pub fn summarize_values(values: &[f64]) -> Result<Stats, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let half = 1.96 * sd / (n as f64).sqrt();
    Ok(Stats {
        n,
        mean,
        sd,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ci95: (mean - half, mean + half),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub point: f64,
    pub efficiency: Stats,
    pub neutralized_per_s: Stats,
    pub detections_true: Stats,
    pub detections_false: Stats,
    pub neutralized: Stats,
}

/// Per-point statistics, in ascending point order.
pub fn summarize(results: &[TrialResult]) -> Result<Vec<PointSummary>, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let mut points: Vec<f64> = results.iter().map(|r| r.point).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
        .into_iter()
        .map(|point| {
            let at: Vec<&TrialResult> = results.iter().filter(|r| r.point == point).collect();
            let col = |f: fn(&TrialResult) -> f64| summarize_values(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
            Ok(PointSummary {
                point,
                efficiency: col(|r| r.efficiency)?,
                neutralized_per_s: col(|r| r.neutralized_per_s)?,
                detections_true: col(|r| f64::from(r.n_detections_true))?,
                detections_false: col(|r| f64::from(r.n_detections_false))?,
                neutralized: col(|r| f64::from(r.n_neutralized))?,
            })
        })
        .collect()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// variable is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Standard error of a point mean using the variance pooled over all points.
pub fn pooled_standard_error(summaries: &[PointSummary], pick: fn(&PointSummary) -> Stats) -> f64 {
    let (mut ss, mut dof, mut n) = (0.0, 0usize, 0usize);
    for s in summaries {
        let st = pick(s);
        ss += st.sd.powi(2) * st.n.saturating_sub(1) as f64;
        dof += st.n.saturating_sub(1);
        n += st.n;
    }
    if dof == 0 {
        return 0.0;
    }
    let mean_n = n as f64 / summaries.len() as f64;
    (ss / dof as f64 / mean_n).sqrt()
}
