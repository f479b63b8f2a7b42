use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ensure_parent;
use crate::surrogate::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    WithSsssl,
    WithoutSsssl,
    Other,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::WithSsssl => "with_ssssl",
            Condition::WithoutSsssl => "without_ssssl",
            Condition::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "with_ssssl" => Ok(Condition::WithSsssl),
            "without_ssssl" => Ok(Condition::WithoutSsssl),
            "other" => Ok(Condition::Other),
            _ => Err(Error::Parameter(format!("unknown condition {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: Split,
    pub condition: Condition,
    pub psnr_db: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Number of trailing evaluation steps forming the final window.
    pub final_window: usize,
    pub bootstrap_resamples: usize,
    /// Two-sided coverage of the bootstrap interval.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { final_window: 10, bootstrap_resamples: 2000, confidence: 0.9, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub points: usize,
    pub first_psnr: f64,
    pub final_window_mean: f64,
    pub best_psnr: f64,
    /// First step reaching 90% of the rise from the first point to the final-window mean.
    pub plateau_step: u64,
}

/// Paired comparison `a − b` over steps evaluated under both conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: Condition,
    pub b: Condition,
    pub paired_steps: usize,
    pub mean_gap: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

impl Comparison {
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveReport {
    /// Per-condition `(step, psnr_db)` series, ascending by step. Records
    /// sharing a step (e.g. several seeds) are averaged.
    pub series: BTreeMap<Condition, Vec<(u64, f64)>>,
    pub summaries: Vec<ConditionSummary>,
    pub comparison: Option<Comparison>,
}

#[derive(Deserialize)]
struct StreamLine {
    step: u64,
    test_psnr: Option<f64>,
    test_mse: Option<f64>,
}

/// Test-split records from a training run's `metrics.jsonl`; lines without
/// an evaluation are skipped and unrelated fields ignored.
pub fn read_metrics_stream(path: &Path, condition: Condition) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: StreamLine = serde_json::from_str(line)
            .map_err(|e| Error::Parameter(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if let (Some(psnr_db), Some(mse)) = (l.test_psnr, l.test_mse) {
            out.push(MetricRecord { step: l.step, split: Split::Test, condition, psnr_db, mse });
        }
    }
    Ok(out)
}

/// Builds per-condition learning curves from test-split records. When two
/// or more conditions are present, the first two in `with_ssssl`,
/// `without_ssssl`, `other` order are compared over the final window with a
/// paired bootstrap on per-step differences.
pub fn curve_report(records: &[MetricRecord], opts: &ReportOptions) -> Result<CurveReport> {
    if opts.final_window == 0 || !(opts.confidence > 0.0 && opts.confidence < 1.0) {
        return Err(Error::Parameter("final window must be >= 1 and confidence in (0, 1)".into()));
    }
    let test: Vec<&MetricRecord> = records.iter().filter(|r| r.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Parameter("no test-split metric records".into()));
    }
    let mut grouped: BTreeMap<Condition, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in test {
        let e = grouped.entry(r.condition).or_default().entry(r.step).or_insert((0.0, 0));
        e.0 += r.psnr_db;
        e.1 += 1;
    }
    let series: BTreeMap<Condition, Vec<(u64, f64)>> = grouped
        .into_iter()
        .map(|(c, steps)| (c, steps.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()))
        .collect();

    let summaries = series
        .iter()
        .map(|(&condition, pts)| summarize(condition, pts, opts.final_window))
        .collect();

    let conditions: Vec<Condition> = series.keys().copied().collect();
    let comparison = if conditions.len() >= 2 {
        Some(compare(&series[&conditions[0]], &series[&conditions[1]], conditions[0], conditions[1], opts)?)
    } else {
        None
    };
    Ok(CurveReport { series, summaries, comparison })
}

fn summarize(condition: Condition, pts: &[(u64, f64)], window: usize) -> ConditionSummary {
    let start = pts[0].1;
    let tail = &pts[pts.len().saturating_sub(window)..];
    let final_mean = tail.iter().map(|p| p.1).sum::<f64>() / tail.len() as f64;
    let target = start + 0.9 * (final_mean - start);
    let plateau_step = if final_mean > start {
        pts.iter().find(|p| p.1 >= target).map_or(pts[0].0, |p| p.0)
    } else {
        pts[0].0
    };
    ConditionSummary {
        condition,
        points: pts.len(),
        first_psnr: start,
        final_window_mean: final_mean,
        best_psnr: pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        plateau_step,
    }
}

fn compare(
    a: &[(u64, f64)],
    b: &[(u64, f64)],
    ca: Condition,
    cb: Condition,
    opts: &ReportOptions,
) -> Result<Comparison> {
    let b_map: BTreeMap<u64, f64> = b.iter().copied().collect();
    let paired: Vec<f64> = a
        .iter()
        .filter_map(|&(s, v)| b_map.get(&s).map(|&w| v - w))
        .collect();
    if paired.is_empty() {
        return Err(Error::Parameter(format!(
            "conditions {} and {} share no evaluation steps",
            ca.label(),
            cb.label()
        )));
    }
    let diffs = &paired[paired.len().saturating_sub(opts.final_window)..];
    let n = diffs.len();
    let mean_gap = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut means: Vec<f64> = (0..opts.bootstrap_resamples.max(1))
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - opts.confidence) / 2.0;
    let pick = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    Ok(Comparison {
        a: ca,
        b: cb,
        paired_steps: n,
        mean_gap,
        ci_low: pick(alpha),
        ci_high: pick(1.0 - alpha),
        confidence: opts.confidence,
    })
}

impl CurveReport {
    /// Plain-text summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>10} {:>12} {:>10} {:>13}",
            "condition", "points", "first_db", "final_mean", "best_db", "plateau_step"
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>10.3} {:>12.3} {:>10.3} {:>13}",
                s.condition.label(),
                s.points,
                s.first_psnr,
                s.final_window_mean,
                s.best_psnr,
                s.plateau_step
            );
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(
                out,
                "\ngap {} - {} over {} paired steps: {:.3} dB, {:.0}% bootstrap interval [{:.3}, {:.3}]{}",
                c.a.label(),
                c.b.label(),
                c.paired_steps,
                c.mean_gap,
                c.confidence * 100.0,
                c.ci_low,
                c.ci_high,
                if c.excludes_zero() { " (excludes 0)" } else { "" }
            );
        }
        out
    }

    /// PSNR-vs-step plot as SVG text.
    pub fn render_svg(&self) -> Result<String> {
        use plotters::prelude::*;

        let plot_err = |e: String| Error::Parameter(format!("plot rendering failed: {e}"));
        let (mut x_max, mut y_min, mut y_max) = (1u64, f64::INFINITY, f64::NEG_INFINITY);
        for pts in self.series.values() {
            for &(s, v) in pts {
                x_max = x_max.max(s);
                y_min = y_min.min(v);
                y_max = y_max.max(v);
            }
        }
        let pad = ((y_max - y_min) * 0.05).max(0.5);
        let mut svg = String::new();
        {
            let root = SVGBackend::with_string(&mut svg, (720, 440)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
            let mut chart = ChartBuilder::on(&root)
                .margin(16)
                .x_label_area_size(36)
                .y_label_area_size(48)
                .build_cartesian_2d(0u64..x_max, (y_min - pad)..(y_max + pad))
                .map_err(|e| plot_err(e.to_string()))?;
            chart
                .configure_mesh()
                .x_desc("step")
                .y_desc("test PSNR (dB)")
                .draw()
                .map_err(|e| plot_err(e.to_string()))?;
            let colors = [RGBColor(200, 60, 40), RGBColor(40, 90, 200), RGBColor(90, 90, 90)];
            for (i, (cond, pts)) in self.series.iter().enumerate() {
                let color = colors[i % colors.len()];
                chart
                    .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                    .map_err(|e| plot_err(e.to_string()))?
                    .label(cond.label())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| plot_err(e.to_string()))?;
            root.present().map_err(|e| plot_err(e.to_string()))?;
        }
        Ok(svg)
    }

    /// Writes `report.txt` and `curves.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let table = dir.join("report.txt");
        ensure_parent(&table)?;
        std::fs::write(&table, self.render_table()).map_err(|e| Error::io(&table, e))?;
        let plot = dir.join("curves.svg");
        std::fs::write(&plot, self.render_svg()?).map_err(|e| Error::io(&plot, e))
    }
}
