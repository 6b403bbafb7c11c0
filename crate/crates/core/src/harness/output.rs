use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{HarnessError, PointSummary, TrialResult};

pub const CSV_HEADER: &str = "point,trial,seed,n_pests,detected_true,detected_false,neutralized,efficiency,neutralized_per_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Distance,
    Speed,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Distance => "distance (m)",
            SweepAxis::Speed => "platform speed (mm/s)",
        }
    }
}

pub const EFFICIENCY_LABEL: &str = "efficiency (0–1)";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

/// Writes the result table; floats use their shortest round-trip form.
pub fn write_csv(results: &[TrialResult], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.point, r.trial, r.seed, r.n_pests, r.n_detections_true, r.n_detections_false, r.n_neutralized, r.efficiency, r.neutralized_per_s
        )?;
    }
    out.flush()
}

pub fn emit_csv(results: &[TrialResult], path: &Path) -> Result<(), HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let file = File::create(path).map_err(io_err(path))?;
    write_csv(results, BufWriter::new(file)).map_err(io_err(path))
}

/// Renders mean efficiency ± one standard deviation against the sweep point.
pub fn render_chart(summaries: &[PointSummary], axis: SweepAxis) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 60.0;
    let (mut x0, mut x1) = summaries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.point), hi.max(s.point)));
    if x1 - x0 <= 0.0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = 0.05 * (x1 - x0);
    let (x0, x1) = (x0 - pad, x1 + pad);
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| T + (1.0 - y.clamp(0.0, 1.0)) * (H - T - B);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(svg, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for k in 0..=5 {
        let y = f64::from(k) / 5.0;
        let py = sy(y);
        let _ = writeln!(svg, r##"<line x1="{}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#ddd"/>"##, L, W - R);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.1}</text>"#, L - 6.0, py + 4.0);
    }
    for s in summaries {
        let px = sx(s.point);
        let _ = writeln!(svg, r#"<line x1="{px:.1}" y1="{}" x2="{px:.1}" y2="{}" stroke="black"/>"#, H - B, H - B + 5.0);
        let _ = writeln!(svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, H - B + 18.0, s.point);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (L + W - R) / 2.0, H - 15.0, axis.label());
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{EFFICIENCY_LABEL}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );

    let line: Vec<String> = summaries.iter().map(|s| format!("{:.1},{:.1}", sx(s.point), sy(s.efficiency.mean))).collect();
    let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##, line.join(" "));
    for s in summaries {
        let (px, m, sd) = (sx(s.point), s.efficiency.mean, s.efficiency.sd);
        let _ = writeln!(svg, r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#1f5fa8"/>"##, sy(m - sd), sy(m + sd));
        let _ = writeln!(svg, r##"<circle cx="{px:.1}" cy="{:.1}" r="4" fill="#1f5fa8"><title>{}: {m:.3} ± {sd:.3} (n={})</title></circle>"##, sy(m), s.point, s.efficiency.n);
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_chart(summaries: &[PointSummary], axis: SweepAxis, path: &Path) -> Result<(), HarnessError> {
    if summaries.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    std::fs::write(path, render_chart(summaries, axis)).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::summarize;

    fn row(point: f64, trial: u32, n: u32) -> TrialResult {
        TrialResult {
            point,
            trial,
            seed: 42 + u64::from(trial),
            n_pests: 100,
            n_detections_true: 80,
            n_detections_false: 3,
            n_neutralized: n,
            efficiency: f64::from(n) / 100.0,
            neutralized_per_s: f64::from(n) / 60.0,
            wall_runtime_s: 1.0,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[row(0.5, 0, 77), row(0.5, 1, 80)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], format!("0.5,0,42,100,80,3,77,0.77,{}", 77.0 / 60.0));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn empty_results_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_csv(&[], &dir.path().join("x.csv")), Err(HarnessError::EmptyResults)));
        assert!(matches!(emit_chart(&[], SweepAxis::Speed, &dir.path().join("x.svg")), Err(HarnessError::EmptyResults)));
    }

    #[test]
    fn unwritable_destination_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("missing").join("x.csv");
        assert!(matches!(emit_csv(&[row(1.0, 0, 1)], &bad), Err(HarnessError::Io { .. })));
    }

    #[test]
    fn chart_has_labelled_axes() {
        let s = summarize(&[row(0.5, 0, 80), row(0.5, 1, 70), row(10.0, 0, 10)]).unwrap();
        let svg = render_chart(&s, SweepAxis::Distance);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("distance (m)") && svg.contains(EFFICIENCY_LABEL));
        assert!(render_chart(&s, SweepAxis::Speed).contains("platform speed (mm/s)"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
