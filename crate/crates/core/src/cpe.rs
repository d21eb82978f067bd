//! Change-point location estimation, stopped-sample variance estimation and
//! binary segmentation.

use serde::{Deserialize, Serialize};

use crate::cusum::{self, smallest_argmax, CusumResult, QuantileSource, TestReport, WeightFunction};
use crate::error::{invalid, Result};
use crate::linproc::Series;
use crate::lrv::{self, default_lags, KernelKind, KernelSpec, LrvEstimate};
use crate::projections::ProjectionPair;

/// `τ̂`: smallest maximizer of the weighted CUSUM trajectory.
///
/// The `1/n` normalization of the estimator and the `1/√n` of the test
/// statistic differ by a positive constant, so both share the argmax.
pub fn estimate_tau(series: &Series, pair: &ProjectionPair, g: &WeightFunction) -> Result<usize> {
    Ok(cusum::cusum(series, pair, g, false)?.argmax_k)
}

/// Smallest 1-based maximizer of an arbitrary trajectory.
pub fn argmax_of(trajectory: &[f64]) -> Result<usize> {
    if trajectory.is_empty() {
        return invalid("empty trajectory");
    }
    Ok(smallest_argmax(trajectory).0)
}

/// `τ̃ = max(⌊n/4⌋, min(round(1.15 τ̂), n))`, rounding half up.
pub fn stopped_rule(tau_hat: usize, n: usize) -> usize {
    // 1.15 τ̂ = 115 τ̂ / 100 in exact integer arithmetic
    let inflated = (115 * tau_hat + 50) / 100;
    (n / 4).max(inflated.min(n))
}

/// How the long-run variance `α²` of the test statistic is estimated.
#[derive(Clone, Copy, Debug)]
pub enum LrvMode<'a> {
    /// From a separate change-free sample.
    Learning(&'a Series),
    /// From the whole tested sample (`u = 1`).
    Full,
    /// From observations `1..=τ̃` with `τ̃` from [`stopped_rule`].
    Stopped,
}

impl LrvMode<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            LrvMode::Learning(_) => "learning",
            LrvMode::Full => "full",
            LrvMode::Stopped => "stopped",
        }
    }
}

/// Lag truncation: fixed, or `⌈n^{1/3}⌉` of the sample it is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LagChoice {
    Fixed(usize),
    Auto,
}

impl LagChoice {
    pub fn lags(&self, n: usize) -> usize {
        match *self {
            LagChoice::Fixed(m) => m,
            LagChoice::Auto => default_lags(n),
        }
    }
}

/// `α̂²` under the given mode for a tested sample; also returns `τ̃` in stopped mode.
///
/// `kernel.lags` is used as is; callers choose `m` (commonly from the tested
/// sample size).
pub fn estimate_alpha2(
    series: &Series,
    pair: &ProjectionPair,
    g: &WeightFunction,
    mode: LrvMode<'_>,
    kernel: &KernelSpec,
) -> Result<(LrvEstimate, Option<usize>)> {
    match mode {
        LrvMode::Learning(sample) => Ok((lrv::alpha2_hat(sample, pair, 1.0, kernel)?, None)),
        LrvMode::Full => Ok((lrv::alpha2_hat(series, pair, 1.0, kernel)?, None)),
        LrvMode::Stopped => {
            let tau_hat = estimate_tau(series, pair, g)?;
            let tau_tilde = stopped_rule(tau_hat, series.len());
            Ok((lrv::stopped_alpha2(series, pair, tau_tilde, kernel)?, Some(tau_tilde)))
        }
    }
}

/// Settings of a complete single-pair test.
#[derive(Clone, Debug)]
pub struct TestSettings<'a> {
    pub weight: WeightFunction,
    pub centered: bool,
    pub level: f64,
    pub lrv_mode: LrvMode<'a>,
    pub kernel: KernelKind,
    pub lags: LagChoice,
    pub quantile: QuantileSource<'a>,
}

impl<'a> TestSettings<'a> {
    pub fn new(weight: WeightFunction, level: f64, lrv_mode: LrvMode<'a>, quantile: QuantileSource<'a>) -> Self {
        Self {
            weight,
            centered: false,
            level,
            lrv_mode,
            kernel: KernelKind::Bartlett,
            lags: LagChoice::Auto,
            quantile,
        }
    }
}

/// Estimates `α̂`, runs the test and records every tuning choice in the report.
pub fn change_point_test(series: &Series, pair: &ProjectionPair, settings: &TestSettings<'_>) -> Result<TestReport> {
    let res = cusum::cusum(series, pair, &settings.weight, settings.centered)?;
    let critical = settings.quantile.critical_value(&settings.weight, settings.level)?;
    test_with_cusum(series, pair, settings, &res, critical)
}

fn test_with_cusum(
    series: &Series,
    pair: &ProjectionPair,
    settings: &TestSettings<'_>,
    res: &CusumResult,
    critical: f64,
) -> Result<TestReport> {
    let m = settings.lags.lags(series.len());
    let kernel = KernelSpec::new(settings.kernel, m);
    let (est, tau_tilde) = estimate_alpha2(series, pair, &settings.weight, settings.lrv_mode, &kernel)?;
    let mut report = cusum::test_from_cusum(
        res,
        &settings.weight,
        settings.centered,
        est.sd(),
        settings.level,
        &QuantileSource::Fixed(critical),
    )?;
    report.tau_tilde = tau_tilde;
    report.lrv = Some(est);
    report.settings.insert("quantile_source".into(), settings.quantile.label());
    report.settings.insert("lrv_mode".into(), settings.lrv_mode.label().into());
    report.settings.insert("kernel".into(), format!("{:?}", settings.kernel).to_lowercase());
    report.settings.insert("lags".into(), m.to_string());
    if est.floor_applied {
        report
            .warnings
            .push("long-run variance estimate was floored; statistic is unreliable".into());
    }
    Ok(report)
}

/// Settings of [`binary_segmentation`].
#[derive(Clone, Debug)]
pub struct SegmentationSettings<'a> {
    pub test: TestSettings<'a>,
    /// Shortest segment that is tested; also the minimal distance of a
    /// recorded change point from its segment's ends.
    pub min_segment: usize,
    pub max_depth: usize,
}

/// One tested segment, rows `start..end` (0-based, end exclusive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start: usize,
    pub end: usize,
    pub depth: usize,
    pub report: Option<TestReport>,
    /// Global change point: the number of rows before the change.
    pub change_point: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub change_points: Vec<usize>,
    pub segments: Vec<SegmentReport>,
    pub depth_reached: usize,
}

/// Recursive binary segmentation.
///
/// A segment is tested with the long-run variance re-estimated on that
/// segment; on rejection the change point is placed at the trimmed argmax
/// `k ∈ [min_segment, len − min_segment]` and both halves are processed
/// recursively. The same critical value is used at every depth.
pub fn binary_segmentation(
    series: &Series,
    pair: &ProjectionPair,
    settings: &SegmentationSettings<'_>,
) -> Result<SegmentationResult> {
    if settings.max_depth < 1 {
        return invalid("max_depth must be at least 1");
    }
    let m = settings.test.lags.lags(settings.min_segment);
    if settings.min_segment < 2 * m + 2 {
        return invalid(format!(
            "min_segment {} too short for lag truncation m={m} (need ≥ {})",
            settings.min_segment,
            2 * m + 2
        ));
    }
    let critical = settings
        .test
        .quantile
        .critical_value(&settings.test.weight, settings.test.level)?;
    let mut out = SegmentationResult {
        change_points: Vec::new(),
        segments: Vec::new(),
        depth_reached: 0,
    };
    let mut stack = vec![(0usize, series.len(), 1usize)];
    while let Some((start, end, depth)) = stack.pop() {
        let len = end - start;
        if len < settings.min_segment {
            continue;
        }
        out.depth_reached = out.depth_reached.max(depth);
        let segment = series.slice(start, end)?;
        let mut seg = SegmentReport {
            start,
            end,
            depth,
            report: None,
            change_point: None,
            warnings: Vec::new(),
        };
        let res = cusum::cusum(&segment, pair, &settings.test.weight, settings.test.centered)?;
        let report = match test_with_cusum(&segment, pair, &settings.test, &res, critical) {
            Ok(r) => r,
            Err(e) => {
                seg.warnings.push(format!("segment skipped: {e}"));
                out.segments.push(seg);
                continue;
            }
        };
        if report.lrv.is_some_and(|l| l.floor_applied) {
            seg.warnings.push("segment skipped: degenerate long-run variance".into());
            seg.report = Some(report);
            out.segments.push(seg);
            continue;
        }
        let reject = report.decision;
        seg.report = Some(report);
        if reject {
            let lo = settings.min_segment;
            let hi = len - settings.min_segment;
            if lo > hi {
                seg.warnings
                    .push("change detected but segment too short to place it".into());
            } else {
                let k = lo + smallest_argmax(&res.trajectory[lo - 1..hi]).0 - 1;
                seg.change_point = Some(start + k);
                out.change_points.push(start + k);
                if depth < settings.max_depth {
                    stack.push((start + k, end, depth + 1));
                    stack.push((start, start + k, depth + 1));
                }
            }
        }
        out.segments.push(seg);
    }
    out.change_points.sort_unstable();
    out.segments.sort_by_key(|s| (s.start, s.depth));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linproc::{self, CoefficientArray, InnovationSpec};
    use crate::projections::uniform_projection;

    #[test]
    fn stopped_rule_cases() {
        assert_eq!(stopped_rule(60, 100), 69);
        assert_eq!(stopped_rule(10, 100), 25);
        assert_eq!(stopped_rule(95, 100), 100);
        // 1.15 · 30 = 34.5 rounds up
        assert_eq!(stopped_rule(30, 100), 35);
        for n in [4, 10, 99, 1000] {
            for t in 1..=n {
                let s = stopped_rule(t, n);
                assert!(s >= n / 4 && s <= n);
            }
        }
    }

    #[test]
    fn argmax_conventions() {
        let mut traj = vec![0.0; 60];
        traj[29] = 1.0;
        assert_eq!(argmax_of(&traj).unwrap(), 30);
        traj[29] = 0.0;
        traj[9] = 2.0;
        traj[39] = 2.0;
        assert_eq!(argmax_of(&traj).unwrap(), 10);
        assert!(argmax_of(&[]).is_err());
    }

    #[test]
    fn tau_invariant_under_scaling() {
        let model = linproc::table1_model(200, 5, 100).unwrap();
        let s = linproc::simulate_change_model(&model, &InnovationSpec::gaussian(9)).unwrap();
        let pair = ProjectionPair::symmetric(uniform_projection(5).unwrap()).unwrap();
        let g = WeightFunction::power(0.3).unwrap();
        let a = estimate_tau(&s, &pair, &g).unwrap();
        let b = estimate_tau(&s, &pair.scaled(3.0, 0.5).unwrap(), &g).unwrap();
        assert_eq!(a, b);
        let short = Series::from_column(vec![1.0]).unwrap();
        assert!(estimate_tau(&short, &ProjectionPair::new(vec![1.0], vec![1.0]).unwrap(), &g).is_err());
    }

    #[test]
    fn tau_hat_is_consistent_on_table1_model() {
        let (n, d, reps) = (100, 10, 500);
        let model = linproc::table1_model(n, d, 50).unwrap();
        let pair = ProjectionPair::symmetric(uniform_projection(d).unwrap()).unwrap();
        let hits = (0..reps)
            .filter(|&r| {
                let s = linproc::simulate_change_model(&model, &InnovationSpec::gaussian(500 + r)).unwrap();
                let k = cusum::cusum(&s, &pair, &WeightFunction::None, false).unwrap().argmax_k;
                (0.4..=0.6).contains(&(k as f64 / n as f64))
            })
            .count();
        assert!(hits as f64 >= 0.9 * reps as f64, "{hits}/{reps}");
    }

    fn white(d: usize, scale: f64) -> CoefficientArray {
        CoefficientArray::from_rows(vec![vec![scale]; d]).unwrap()
    }

    fn seg_settings<'a>() -> SegmentationSettings<'a> {
        SegmentationSettings {
            test: TestSettings::new(WeightFunction::None, 0.05, LrvMode::Full, QuantileSource::Kolmogorov),
            min_segment: 50,
            max_depth: 4,
        }
    }

    #[test]
    fn segmentation_rejects_bad_settings() {
        let s = linproc::simulate_linear(&white(2, 1.0), &InnovationSpec::gaussian(1), 100).unwrap();
        let pair = ProjectionPair::symmetric(uniform_projection(2).unwrap()).unwrap();
        let mut st = seg_settings();
        st.min_segment = 5;
        assert!(binary_segmentation(&s, &pair, &st).is_err());
        let mut st = seg_settings();
        st.max_depth = 0;
        assert!(binary_segmentation(&s, &pair, &st).is_err());
    }

    #[test]
    fn segmentation_under_no_change() {
        let d = 3;
        let pair = ProjectionPair::symmetric(uniform_projection(d).unwrap()).unwrap();
        let runs = 200;
        let empty = (0..runs)
            .filter(|&r| {
                let s = linproc::simulate_linear(&white(d, 1.0), &InnovationSpec::gaussian(7000 + r), 500).unwrap();
                binary_segmentation(&s, &pair, &seg_settings()).unwrap().change_points.is_empty()
            })
            .count();
        assert!(empty as f64 >= 0.9 * runs as f64, "{empty}/{runs}");
    }

    #[test]
    fn segmentation_finds_single_break() {
        let (n, d) = (1000, 3);
        let pair = ProjectionPair::symmetric(uniform_projection(d).unwrap()).unwrap();
        let (calm, wild) = (white(d, 1.0), white(d, 2.0));
        let runs = 100;
        let good = (0..runs)
            .filter(|&r| {
                let s = linproc::simulate_regimes(&[(&calm, 500), (&wild, n)], &InnovationSpec::gaussian(r)).unwrap();
                let cps = binary_segmentation(&s, &pair, &seg_settings()).unwrap().change_points;
                cps.len() == 1 && (cps[0] as f64 - 500.0).abs() <= 0.05 * n as f64
            })
            .count();
        assert!(good as f64 >= 0.85 * runs as f64, "{good}/{runs}");
    }

    #[test]
    fn segmentation_finds_two_breaks() {
        let (n, d) = (1500, 3);
        let pair = ProjectionPair::symmetric(uniform_projection(d).unwrap()).unwrap();
        let (calm, wild) = (white(d, 1.0), white(d, 2.0));
        let runs = 100;
        let good = (0..runs)
            .filter(|&r| {
                let s = linproc::simulate_regimes(
                    &[(&calm, 495), (&wild, 990), (&calm, n)],
                    &InnovationSpec::gaussian(300 + r),
                )
                .unwrap();
                let res = binary_segmentation(&s, &pair, &seg_settings()).unwrap();
                let cps = &res.change_points;
                cps.windows(2).all(|w| w[0] < w[1])
                    && cps.len() == 2
                    && (cps[0] as f64 - 495.0).abs() <= 0.05 * n as f64
                    && (cps[1] as f64 - 990.0).abs() <= 0.05 * n as f64
            })
            .count();
        assert!(good as f64 >= 0.7 * runs as f64, "{good}/{runs}");
    }

    #[test]
    fn segment_points_respect_spacing() {
        let (n, d) = (1500, 3);
        let pair = ProjectionPair::symmetric(uniform_projection(d).unwrap()).unwrap();
        let (calm, wild) = (white(d, 1.0), white(d, 3.0));
        let s = linproc::simulate_regimes(&[(&calm, 30), (&wild, 800), (&calm, n)], &InnovationSpec::gaussian(5)).unwrap();
        let st = seg_settings();
        let res = binary_segmentation(&s, &pair, &st).unwrap();
        for seg in &res.segments {
            if let Some(cp) = seg.change_point {
                assert!(cp - seg.start >= st.min_segment && seg.end - cp >= st.min_segment);
            }
        }
        assert!(res.change_points.windows(2).all(|w| w[0] < w[1]));
    }
}
