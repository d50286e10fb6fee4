//! Training, validation and test data for the closure surrogates.
//!
//! Inputs are drawn uniformly in log10 space and labelled with the closure.
//! Network-facing records are transformed: inputs take a natural log and are
//! then standardized, outputs are standardized directly. Standardization uses
//! the population (divide-by-N) standard deviation.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::arsm::{self, ClosurePoint, Region, SsgConstants};
use crate::container;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub const DATASET_KIND: &str = "closure-dataset";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Lower log10 bound, shared by both input axes.
    pub log10_min: f64,
    /// Upper log10 bound, shared by both input axes.
    pub log10_max: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// Points per axis of the evaluation grid.
    pub grid_resolution: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn desk() -> Self {
        SamplingConfig {
            log10_min: -1.0,
            log10_max: 2.0,
            n_train: 8_000,
            n_val: 4_000,
            grid_resolution: 200,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        SamplingConfig {
            n_train: 80_000,
            n_val: 40_000,
            grid_resolution: 700,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.log10_min.is_finite() && self.log10_max.is_finite()) || self.log10_min >= self.log10_max {
            return Err(Error::Config(format!(
                "log10 bounds must satisfy min < max, got [{}, {}]",
                self.log10_min, self.log10_max
            )));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("n_train and n_val must be positive".into()));
        }
        if self.grid_resolution < 2 {
            return Err(Error::Config("grid_resolution must be at least 2".into()));
        }
        Ok(())
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Which part of the input plane the training data is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitLabel {
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "D_GE_0")]
    DGe0,
    #[serde(rename = "D_LT_0")]
    DLt0,
}

impl SplitLabel {
    pub const ALL: [SplitLabel; 3] = [SplitLabel::Full, SplitLabel::DGe0, SplitLabel::DLt0];

    pub fn label(self) -> &'static str {
        match self {
            SplitLabel::Full => "FULL",
            SplitLabel::DGe0 => "D_GE_0",
            SplitLabel::DLt0 => "D_LT_0",
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> &'static str {
        match self {
            SplitLabel::Full => "full",
            SplitLabel::DGe0 => "d_ge_0",
            SplitLabel::DLt0 => "d_lt_0",
        }
    }

    /// The region the training data is restricted to, if any.
    pub fn region(self) -> Option<Region> {
        match self {
            SplitLabel::Full => None,
            SplitLabel::DGe0 => Some(Region::DGe0),
            SplitLabel::DLt0 => Some(Region::DLt0),
        }
    }
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SplitLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "FULL" => Ok(SplitLabel::Full),
            "D_GE_0" | "DGE0" => Ok(SplitLabel::DGe0),
            "D_LT_0" | "D_LE_0" | "DLT0" => Ok(SplitLabel::DLt0),
            _ => Err(Error::Config(format!(
                "unknown split {s:?}; expected one of FULL, D_GE_0, D_LT_0"
            ))),
        }
    }
}

/// A closure point together with its discriminant region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub point: ClosurePoint,
    pub region: Region,
}

pub fn label(eta1: f64, eta2: f64) -> Result<Labeled> {
    let k = SsgConstants::ssg();
    let c = arsm::compute_intermediates(eta1, eta2, &k)?;
    let point = arsm::closure_coefficients_with(eta1, eta2, &k)?;
    Ok(Labeled {
        point,
        region: arsm::region_of(&c),
    })
}

pub fn label_all(inputs: &[[f64; 2]]) -> Result<Vec<Labeled>> {
    inputs.iter().map(|&[e1, e2]| label(e1, e2)).collect()
}

/// `n` points whose log10 coordinates are uniform on `[log10_min, log10_max]`.
///
/// Only `min <= max` is required here, so a degenerate interval yields a
/// constant sample.
pub fn sample_log_uniform(cfg: &SamplingConfig, n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = seeded(seed);
    let width = cfg.log10_max - cfg.log10_min;
    (0..n)
        .map(|_| {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            [
                10f64.powf(cfg.log10_min + width * u1),
                10f64.powf(cfg.log10_min + width * u2),
            ]
        })
        .collect()
}

/// log10 coordinates of the evaluation grid along one axis.
pub fn grid_axis(cfg: &SamplingConfig) -> Vec<f64> {
    let n = cfg.grid_resolution;
    let step = (cfg.log10_max - cfg.log10_min) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { cfg.log10_max } else { cfg.log10_min + step * i as f64 })
        .collect()
}

/// Cartesian grid evenly spaced in log10, ordered with `eta1` outermost.
pub fn build_test_grid(cfg: &SamplingConfig) -> Vec<[f64; 2]> {
    let axis: Vec<f64> = grid_axis(cfg).into_iter().map(|u| 10f64.powf(u)).collect();
    let mut out = Vec::with_capacity(axis.len() * axis.len());
    for &e1 in &axis {
        for &e2 in &axis {
            out.push([e1, e2]);
        }
    }
    out
}

/// Standardization parameters fitted on a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub input_mean: [f64; 2],
    pub input_std: [f64; 2],
    pub output_mean: [f64; 3],
    pub output_std: [f64; 3],
}

impl TransformParams {
    pub fn transform_input(&self, eta: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|i| (eta[i].ln() - self.input_mean[i]) / self.input_std[i])
    }

    pub fn inverse_input(&self, x: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|i| (x[i] * self.input_std[i] + self.input_mean[i]).exp())
    }

    pub fn transform_output(&self, g: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| (g[i] - self.output_mean[i]) / self.output_std[i])
    }

    pub fn inverse_output(&self, y: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| y[i] * self.output_std[i] + self.output_mean[i])
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn fit_transform(train: &[ClosurePoint]) -> Result<TransformParams> {
    if train.is_empty() {
        return Err(Error::EmptySplit("cannot fit a transform on no points".into()));
    }
    if train.iter().any(|p| !(p.eta1 > 0.0 && p.eta2 > 0.0)) {
        return Err(Error::Domain("transform inputs must be positive".into()));
    }
    let mut t = TransformParams {
        input_mean: [0.0; 2],
        input_std: [0.0; 2],
        output_mean: [0.0; 3],
        output_std: [0.0; 3],
    };
    for i in 0..2 {
        let (m, s) = mean_std(train.iter().map(move |p| p.inputs()[i].ln()));
        t.input_mean[i] = m;
        t.input_std[i] = s;
    }
    for i in 0..3 {
        let (m, s) = mean_std(train.iter().map(move |p| p.outputs()[i]));
        t.output_mean[i] = m;
        t.output_std[i] = s;
    }
    for (name, s) in t
        .input_std
        .iter()
        .map(|s| ("input", *s))
        .chain(t.output_std.iter().map(|s| ("output", *s)))
    {
        if !(s >= MIN_STD) {
            return Err(Error::Degenerate(format!("{name} standard deviation {s:e} is below {MIN_STD:e}")));
        }
    }
    Ok(t)
}

/// A labelled point and its transformed network-facing view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub point: ClosurePoint,
    pub region: Region,
    pub x: [f64; 2],
    pub y: [f64; 3],
}

impl Record {
    fn new(l: &Labeled, t: &TransformParams) -> Self {
        Record {
            point: l.point,
            region: l.region,
            x: t.transform_input(l.point.inputs()),
            y: t.transform_output(l.point.outputs()),
        }
    }
}

/// Labelled, untransformed pools from which every split is cut.
#[derive(Debug, Clone)]
pub struct RawPools {
    pub config: SamplingConfig,
    pub train: Vec<Labeled>,
    pub val: Vec<Labeled>,
    pub test: Vec<Labeled>,
}

/// Samples and labels the train and validation pools (independently seeded)
/// and the test grid.
pub fn generate_pools(cfg: &SamplingConfig) -> Result<RawPools> {
    cfg.validate()?;
    let train = sample_log_uniform(cfg, cfg.n_train, derive_seed(cfg.seed, "datagen/train"));
    let val = sample_log_uniform(cfg, cfg.n_val, derive_seed(cfg.seed, "datagen/val"));
    let test = build_test_grid(cfg);
    Ok(RawPools {
        config: *cfg,
        train: label_all(&train)?,
        val: label_all(&val)?,
        test: label_all(&test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Standard-deviation convention used by the transform.
    pub std_convention: String,
    /// How train and validation points were drawn.
    pub train_val_sampling: String,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            std_convention: "population".into(),
            train_val_sampling: "independent".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: SplitLabel,
    pub config: SamplingConfig,
    pub transform: TransformParams,
    pub meta: DatasetMeta,
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    /// Always the full evaluation grid.
    pub test: Vec<Record>,
}

impl Dataset {
    pub fn train_xy(&self) -> (Vec<[f64; 2]>, Vec<[f64; 3]>) {
        (self.train.iter().map(|r| r.x).collect(), self.train.iter().map(|r| r.y).collect())
    }

    pub fn val_xy(&self) -> (Vec<[f64; 2]>, Vec<[f64; 3]>) {
        (self.val.iter().map(|r| r.x).collect(), self.val.iter().map(|r| r.y).collect())
    }

    pub fn test_xy(&self) -> (Vec<[f64; 2]>, Vec<[f64; 3]>) {
        (self.test.iter().map(|r| r.x).collect(), self.test.iter().map(|r| r.y).collect())
    }
}

/// Cuts a split from the pools. Region splits keep only the train and
/// validation points inside the region and refit the transform on what is
/// left; the test grid is kept whole.
pub fn make_split(pools: &RawPools, split: SplitLabel) -> Result<Dataset> {
    let keep = |l: &&Labeled| split.region().is_none_or(|r| l.region == r);
    let train: Vec<&Labeled> = pools.train.iter().filter(keep).collect();
    let val: Vec<&Labeled> = pools.val.iter().filter(keep).collect();
    if train.is_empty() {
        return Err(Error::EmptySplit(format!("no training points remain in split {split}")));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit(format!("no validation points remain in split {split}")));
    }
    let points: Vec<ClosurePoint> = train.iter().map(|l| l.point).collect();
    let transform = fit_transform(&points)?;
    Ok(Dataset {
        split,
        config: pools.config,
        transform,
        meta: DatasetMeta::default(),
        train: train.into_iter().map(|l| Record::new(l, &transform)).collect(),
        val: val.into_iter().map(|l| Record::new(l, &transform)).collect(),
        test: pools.test.iter().map(|l| Record::new(l, &transform)).collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    split: SplitLabel,
    config: SamplingConfig,
    transform: TransformParams,
    meta: DatasetMeta,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    columns: Vec<String>,
}

const COLUMNS: [&str; 11] = ["eta1", "eta2", "g1", "g2", "g3", "x0", "x1", "y0", "y1", "y2", "region"];

fn region_code(r: Region) -> f64 {
    match r {
        Region::DGe0 => 0.0,
        Region::DLt0 => 1.0,
    }
}

fn push_columns(records: &[Record], out: &mut Vec<f64>) {
    let cols: [fn(&Record) -> f64; 11] = [
        |r| r.point.eta1,
        |r| r.point.eta2,
        |r| r.point.g1,
        |r| r.point.g2,
        |r| r.point.g3,
        |r| r.x[0],
        |r| r.x[1],
        |r| r.y[0],
        |r| r.y[1],
        |r| r.y[2],
        |r| region_code(r.region),
    ];
    for col in cols {
        out.extend(records.iter().map(col));
    }
}

fn take_columns(payload: &[f64], n: usize) -> Result<Vec<Record>> {
    let col = |j: usize| &payload[j * n..(j + 1) * n];
    (0..n)
        .map(|i| {
            let region = match col(10)[i] {
                c if c == 0.0 => Region::DGe0,
                c if c == 1.0 => Region::DLt0,
                c => return Err(Error::Config(format!("bad region code {c}"))),
            };
            Ok(Record {
                point: ClosurePoint {
                    eta1: col(0)[i],
                    eta2: col(1)[i],
                    g1: col(2)[i],
                    g2: col(3)[i],
                    g3: col(4)[i],
                },
                region,
                x: [col(5)[i], col(6)[i]],
                y: [col(7)[i], col(8)[i], col(9)[i]],
            })
        })
        .collect()
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let header = DatasetHeader {
        split: d.split,
        config: d.config,
        transform: d.transform,
        meta: d.meta.clone(),
        n_train: d.train.len(),
        n_val: d.val.len(),
        n_test: d.test.len(),
        columns: COLUMNS.iter().map(|s| s.to_string()).collect(),
    };
    let mut payload = Vec::with_capacity((d.train.len() + d.val.len() + d.test.len()) * COLUMNS.len());
    push_columns(&d.train, &mut payload);
    push_columns(&d.val, &mut payload);
    push_columns(&d.test, &mut payload);
    container::write(path, DATASET_KIND, DATASET_SCHEMA_VERSION, &header, &payload)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (h, payload): (DatasetHeader, Vec<f64>) = container::read(path, DATASET_KIND, DATASET_SCHEMA_VERSION)?;
    let width = COLUMNS.len();
    let expected = (h.n_train + h.n_val + h.n_test) * width;
    if payload.len() != expected || h.columns.len() != width {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("payload has {} values, header implies {expected}", payload.len()),
        });
    }
    let (a, rest) = payload.split_at(h.n_train * width);
    let (b, c) = rest.split_at(h.n_val * width);
    Ok(Dataset {
        split: h.split,
        config: h.config,
        transform: h.transform,
        meta: h.meta,
        train: take_columns(a, h.n_train)?,
        val: take_columns(b, h.n_val)?,
        test: take_columns(c, h.n_test)?,
    })
}

/// Plain CSV export: `eta1,eta2,g1,g2,g3,region`.
pub fn write_points_csv(records: &[Record], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "eta1,eta2,g1,g2,g3,region")?;
    for r in records {
        let p = &r.point;
        writeln!(w, "{},{},{},{},{},{}", p.eta1, p.eta2, p.g1, p.g2, p.g3, r.region.label())?;
    }
    w.flush()?;
    Ok(())
}

/// Region mask over the evaluation grid: `log10_eta1,log10_eta2,big_d,d_ge_0`.
pub fn write_region_mask_csv(grid: &[[f64; 2]], path: &Path) -> Result<()> {
    let k = SsgConstants::ssg();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "log10_eta1,log10_eta2,big_d,d_ge_0")?;
    for &[e1, e2] in grid {
        let c = arsm::compute_intermediates(e1, e2, &k)?;
        let flag = u8::from(arsm::region_of(&c) == Region::DGe0);
        writeln!(w, "{},{},{},{}", e1.log10(), e2.log10(), c.big_d, flag)?;
    }
    w.flush()?;
    Ok(())
}
