//! Accuracy and uncertainty scores over (truth, predictive mean, predictive
//! standard deviation) triples.
//!
//! Multi-output bundles are pooled: every output value counts as one
//! observation for the point metrics, Cv and calibration, while sharpness is
//! the magnitude of the per-output sharpness vector.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::bayes::PredictiveDistribution;
use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-12;
pub const MARPD_EPS: f64 = 1e-12;
pub const DEFAULT_LEVELS: usize = 99;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    n_outputs: usize,
    y: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl EvalBundle {
    /// Row-major `[point][output]` buffers of equal length.
    pub fn new(y: Vec<f64>, mean: Vec<f64>, std: Vec<f64>, n_outputs: usize) -> Result<Self> {
        if n_outputs == 0 || y.len() != mean.len() || y.len() != std.len() || y.len() % n_outputs != 0 {
            return Err(Error::Dimension(format!(
                "bundle buffers of lengths {}, {}, {} with {n_outputs} outputs",
                y.len(),
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Domain("predictive standard deviations must be finite and non-negative".into()));
        }
        if y.iter().chain(&mean).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(EvalBundle { n_outputs, y, mean, std })
    }

    pub fn from_predictive(pred: &PredictiveDistribution, y: &[f64]) -> Result<Self> {
        Self::new(y.to_vec(), pred.mean().to_vec(), pred.std(), pred.n_outputs())
    }

    /// Point predictions with no uncertainty attached.
    pub fn deterministic(y: Vec<f64>, mean: Vec<f64>, n_outputs: usize) -> Result<Self> {
        let std = vec![0.0; y.len()];
        Self::new(y, mean, std, n_outputs)
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_points(&self) -> usize {
        self.y.len() / self.n_outputs
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Bundle restricted to the given points.
    pub fn select(&self, idx: &[usize]) -> Self {
        let d = self.n_outputs;
        let pick = |v: &[f64]| idx.iter().flat_map(|&i| v[i * d..(i + 1) * d].iter().copied()).collect();
        EvalBundle {
            n_outputs: d,
            y: pick(&self.y),
            mean: pick(&self.mean),
            std: pick(&self.std),
        }
    }

    /// Single-output bundle for output `k`.
    pub fn output(&self, k: usize) -> Self {
        let d = self.n_outputs;
        let pick = |v: &[f64]| v.iter().skip(k).step_by(d).copied().collect();
        EvalBundle {
            n_outputs: 1,
            y: pick(&self.y),
            mean: pick(&self.mean),
            std: pick(&self.std),
        }
    }

    fn require_points(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::EmptySplit("evaluation bundle has no points".into()));
        }
        Ok(())
    }

    fn floored_std(&self) -> impl Iterator<Item = f64> + '_ {
        self.std.iter().map(|s| s.max(SIGMA_FLOOR))
    }

    fn n_floored(&self) -> usize {
        self.std.iter().filter(|s| **s < SIGMA_FLOOR).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mdae: f64,
    pub mae: f64,
    pub rmse: f64,
    pub marpd: f64,
    pub r2: f64,
    /// Values left out of MARPD because `|y| + |y_hat|` vanished.
    pub marpd_skipped: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// R^2 centres each output on its own mean before pooling the sums.
pub fn point_metrics(b: &EvalBundle) -> Result<PointMetrics> {
    b.require_points()?;
    let n = b.y.len() as f64;
    let mut abs: Vec<f64> = b.y.iter().zip(&b.mean).map(|(y, m)| (y - m).abs()).collect();
    let mae = abs.iter().sum::<f64>() / n;
    let sse: f64 = abs.iter().map(|e| e * e).sum();
    let rmse = (sse / n).sqrt();
    let (mut rel, mut counted) = (0.0, 0usize);
    for ((y, m), e) in b.y.iter().zip(&b.mean).zip(&abs) {
        let denom = y.abs() + m.abs();
        if denom >= MARPD_EPS {
            rel += e / denom;
            counted += 1;
        }
    }
    let marpd = if counted > 0 { 100.0 * rel / counted as f64 } else { 0.0 };
    let d = b.n_outputs;
    let n_pts = b.n_points() as f64;
    let mut sst = 0.0;
    for k in 0..d {
        let col = || b.y.iter().skip(k).step_by(d);
        let ybar = col().sum::<f64>() / n_pts;
        sst += col().map(|y| (y - ybar).powi(2)).sum::<f64>();
    }
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(PointMetrics {
        mdae: median(&mut abs),
        mae,
        rmse,
        marpd,
        r2,
        marpd_skipped: b.y.len() - counted,
    })
}

/// Which interval of the per-point Gaussian a level `p` refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// Symmetric interval holding probability `p`.
    #[default]
    Central,
    /// Lower tail up to the `p` quantile.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub expected: Vec<f64>,
    pub observed: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: IntervalKind,
    /// Standard deviations raised to the floor before standardizing.
    pub sigma_floored: usize,
}

impl CalibrationCurve {
    pub fn with_uniform_weights(expected: Vec<f64>, observed: Vec<f64>) -> Result<Self> {
        if expected.len() != observed.len() || expected.is_empty() {
            return Err(Error::Dimension("calibration levels and observations differ in length".into()));
        }
        let m = expected.len();
        Ok(CalibrationCurve {
            expected,
            observed,
            weights: vec![1.0 / m as f64; m],
            kind: IntervalKind::Central,
            sigma_floored: 0,
        })
    }
}

/// `j / (m + 1)` for `j = 1..=m`.
pub fn uniform_levels(m: usize) -> Vec<f64> {
    (1..=m).map(|j| j as f64 / (m + 1) as f64).collect()
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("calibration levels must increase strictly within (0, 1]".into()));
    }
    Ok(())
}

/// Observed coverage at each level, with weights equal to the share of
/// values whose own coverage level falls in the bin ending at that level.
pub fn calibration_curve(b: &EvalBundle, levels: &[f64], kind: IntervalKind) -> Result<CalibrationCurve> {
    b.require_points()?;
    check_levels(levels)?;
    let mut u: Vec<f64> = b
        .y
        .iter()
        .zip(&b.mean)
        .zip(b.floored_std())
        .map(|((y, m), s)| {
            let z = (y - m) / s;
            match kind {
                IntervalKind::Central => erf(z.abs() / std::f64::consts::SQRT_2),
                IntervalKind::Quantile => 0.5 * erfc(-z / std::f64::consts::SQRT_2),
            }
        })
        .collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let counts: Vec<usize> = levels.iter().map(|p| u.partition_point(|v| v <= p)).collect();
    let observed = counts.iter().map(|&c| c as f64 / n).collect();
    let mut weights: Vec<f64> = counts
        .iter()
        .scan(0usize, |prev, &c| {
            let w = (c - *prev) as f64;
            *prev = c;
            Some(w)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    } else {
        weights.fill(1.0 / levels.len() as f64);
    }
    Ok(CalibrationCurve {
        expected: levels.to_vec(),
        observed,
        weights,
        kind,
        sigma_floored: b.n_floored(),
    })
}

/// Trapezoidal area between the curve and the diagonal over `[0, 1]`,
/// anchored at `(0, 0)` and `(1, 1)`.
pub fn miscalibration_area(c: &CalibrationCurve) -> f64 {
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    pts.extend(c.expected.iter().copied().zip(c.observed.iter().copied()));
    if c.expected.last().is_some_and(|p| *p < 1.0) {
        pts.push((1.0, 1.0));
    }
    pts.windows(2)
        .map(|w| 0.5 * ((w[0].1 - w[0].0).abs() + (w[1].1 - w[1].0).abs()) * (w[1].0 - w[0].0))
        .sum()
}

pub fn calibration_error(c: &CalibrationCurve) -> Result<f64> {
    let total: f64 = c.weights.iter().sum();
    if c.weights.len() != c.expected.len() || (total - 1.0).abs() > 1e-9 || c.weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Config(format!("calibration weights must be non-negative and sum to 1, got {total}")));
    }
    Ok(c.weights
        .iter()
        .zip(c.expected.iter().zip(&c.observed))
        .map(|(w, (p, q))| w * (p - q).powi(2))
        .sum())
}

/// Root of the summed per-output mean variances.
pub fn sharpness(b: &EvalBundle) -> Result<f64> {
    b.require_points()?;
    let d = b.n_outputs;
    let n = b.n_points() as f64;
    let total: f64 = (0..d)
        .map(|k| b.std.iter().skip(k).step_by(d).map(|s| s * s).sum::<f64>() / n)
        .sum();
    Ok(total.sqrt())
}

pub fn coeff_variation(b: &EvalBundle) -> Result<f64> {
    b.require_points()?;
    let n = b.std.len();
    if n < 2 {
        return Err(Error::Degenerate("Cv needs at least two values".into()));
    }
    let mu = b.std.iter().sum::<f64>() / n as f64;
    if mu <= 1e-15 {
        return Err(Error::Degenerate(format!("mean predictive std {mu:e} is too small for Cv")));
    }
    let ss: f64 = b.std.iter().map(|s| (s - mu).powi(2)).sum();
    Ok((ss / (n - 1) as f64).sqrt() / mu)
}

/// Diagonal-Gaussian NLL summed over the points.
pub fn negative_log_likelihood(b: &EvalBundle) -> f64 {
    b.y.iter()
        .zip(&b.mean)
        .zip(b.floored_std())
        .map(|((y, m), s)| {
            let z = (y - m) / s;
            0.5 * (LN_2PI + 2.0 * s.ln() + z * z)
        })
        .sum()
}

/// Which slice of the evaluation grid a report row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    InRegion,
    HeldOut,
}

impl Subset {
    pub fn label(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::InRegion => "in_region",
            Subset::HeldOut => "held_out",
        }
    }
}

/// One metrics row. Uncertainty columns are empty for point predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub split: String,
    pub subset: Subset,
    /// `pooled` or the zero-based output index.
    pub output: String,
    pub n_points: usize,
    pub n_outputs: usize,
    pub mdae: f64,
    pub mae: f64,
    pub rmse: f64,
    pub marpd: f64,
    pub r2: f64,
    pub miscal: Option<f64>,
    pub ce: Option<f64>,
    pub sha: Option<f64>,
    pub cv: Option<f64>,
    pub nll: Option<f64>,
    pub calibration: Option<IntervalKind>,
    pub n_levels: usize,
    pub sigma_floored: usize,
    pub marpd_skipped: usize,
}

/// Fixed column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 20] = [
    "method",
    "split",
    "subset",
    "output",
    "n_points",
    "n_outputs",
    "mdae",
    "mae",
    "rmse",
    "marpd",
    "r2",
    "miscal",
    "ce",
    "sha",
    "cv",
    "nll",
    "calibration",
    "n_levels",
    "sigma_floored",
    "marpd_skipped",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSpec<'a> {
    pub method: &'a str,
    pub split: &'a str,
    pub subset: Subset,
    /// `None` scores point predictions only.
    pub calibration: Option<IntervalKind>,
    pub levels: &'a [f64],
}

/// Every metric for one bundle; `output` labels the row.
pub fn report_row(b: &EvalBundle, spec: &ReportSpec<'_>, output: &str) -> Result<MetricsReport> {
    let pm = point_metrics(b)?;
    let mut row = MetricsReport {
        method: spec.method.to_string(),
        split: spec.split.to_string(),
        subset: spec.subset,
        output: output.to_string(),
        n_points: b.n_points(),
        n_outputs: b.n_outputs,
        mdae: pm.mdae,
        mae: pm.mae,
        rmse: pm.rmse,
        marpd: pm.marpd,
        r2: pm.r2,
        miscal: None,
        ce: None,
        sha: None,
        cv: None,
        nll: None,
        calibration: spec.calibration,
        n_levels: 0,
        sigma_floored: 0,
        marpd_skipped: pm.marpd_skipped,
    };
    if let Some(kind) = spec.calibration {
        let curve = calibration_curve(b, spec.levels, kind)?;
        row.miscal = Some(miscalibration_area(&curve));
        row.ce = Some(calibration_error(&curve)?);
        row.sha = Some(sharpness(b)?);
        row.cv = match coeff_variation(b) {
            Ok(v) => Some(v),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        row.nll = Some(negative_log_likelihood(b));
        row.n_levels = spec.levels.len();
        row.sigma_floored = curve.sigma_floored;
    }
    Ok(row)
}

/// The pooled row followed by one row per output.
pub fn report(b: &EvalBundle, spec: &ReportSpec<'_>) -> Result<Vec<MetricsReport>> {
    let mut rows = vec![report_row(b, spec, "pooled")?];
    if b.n_outputs > 1 {
        for k in 0..b.n_outputs {
            rows.push(report_row(&b.output(k), spec, &k.to_string())?);
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv(rows: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    if rows.is_empty() {
        w.write_record(METRICS_COLUMNS).map_err(csv_error)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unexpected metrics columns {header:?}"),
        });
    }
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("metrics CSV: {other:?}")),
    }
}
