use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::bayes::svi::{load_posterior, save_posterior, SviLog};
use crate::bayes::{
    ensemble_predict, mcd_predictive, svi_predictive, train_ensemble, train_svi, EnsembleModel, PredictiveDistribution,
    SurrogateNet, SviConfig,
};
use crate::datagen::{
    generate_pools, load_dataset, make_split, save_dataset, write_points_csv, write_region_mask_csv, Dataset,
    SamplingConfig, SplitLabel,
};
use crate::error::{Error, Result};
use crate::gp::{fit_multi_output, GpBackend, GpFitConfig, GpFitLog, KernelHyperparams, MultiOutputGp};
use crate::linalg::{cholesky, mvn_sample_with, CholeskyFactor, DenseMatrix};
use crate::metrics::{self, EvalBundle, MetricsReport, ReportSpec, Subset};
use crate::mlp::{self, load_params, save_params, MlpParams, TrainConfig, TrainLog, N_OUTPUTS};
use crate::rng::{derive_seed, seeded};

/// A run directory bound to its resolved configuration.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: ExperimentConfig,
}

impl Run {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Run { cfg }
    }

    pub fn dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn dataset_path(&self, split: SplitLabel) -> PathBuf {
        self.dir().join("data").join(format!("{}.bin", split.slug()))
    }

    pub fn model_dir(&self, split: SplitLabel, method: Method) -> PathBuf {
        self.dir().join("models").join(split.slug()).join(method.slug())
    }

    pub fn eval_dir(&self, split: SplitLabel, method: Method) -> PathBuf {
        self.dir().join("eval").join(split.slug()).join(method.slug())
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir().join("reports")
    }

    /// Seed of one stage of one split, derived from the global seed.
    pub fn seed(&self, split: SplitLabel, stage: &str) -> u64 {
        derive_seed(self.cfg.seed, &format!("{}/{stage}", split.slug()))
    }

    fn load_split(&self, split: SplitLabel) -> Result<Dataset> {
        let path = self.dataset_path(split);
        if !path.exists() {
            return Err(Error::Missing(format!(
                "dataset {} for split {split}; run gen-data first",
                path.display()
            )));
        }
        load_dataset(&path)
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(format!("{what} {}; run train first", path.display())))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn flat<const N: usize>(rows: &[[f64; N]]) -> Vec<f64> {
    rows.as_flattened().to_vec()
}

/// Samples the pools, cuts every configured split and writes the datasets,
/// training-point CSVs, the region mask and the resolved config.
pub fn gen_data(run: &Run) -> Result<()> {
    let sampling = SamplingConfig {
        seed: run.cfg.seed,
        ..run.cfg.sampling
    };
    let pools = generate_pools(&sampling)?;
    let data = run.dir().join("data");
    std::fs::create_dir_all(&data)?;
    for &split in &run.cfg.splits {
        let d = make_split(&pools, split)?;
        save_dataset(&d, &run.dataset_path(split))?;
        write_points_csv(&d.train, &data.join(format!("{}_train.csv", split.slug())))?;
    }
    let grid: Vec<[f64; 2]> = pools.test.iter().map(|l| l.point.inputs()).collect();
    write_region_mask_csv(&grid, &data.join("region_mask.csv"))?;
    write_json(&run.dir().join("config.json"), &run.cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EnsembleLog {
    seeds: Vec<u64>,
    logs: Vec<TrainLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GpLog {
    backend: GpBackend,
    n_subsample: usize,
    hyperparams: Vec<KernelHyperparams>,
    fits: Vec<GpFitLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SviRunLog {
    warm_start: bool,
    svi: SviLog,
}

fn train_mlp(run: &Run, split: SplitLabel, d: &Dataset) -> Result<(MlpParams, TrainLog)> {
    let cfg = TrainConfig {
        seed: run.seed(split, "mlp"),
        ..run.cfg.mlp.clone()
    };
    let (tx, ty) = d.train_xy();
    let (vx, vy) = d.val_xy();
    mlp::train(&tx, &ty, &vx, &vy, &cfg)
}

/// Seeded training subset shared by both GP methods on a split.
fn gp_subsample(run: &Run, split: SplitLabel, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = seeded(run.seed(split, "gp/subsample"));
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn meta(run: &Run, split: SplitLabel, method: Method, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "split": split.label(),
        "method": method.slug(),
        "seed": seed,
        "global_seed": run.cfg.seed,
    })
}

/// Trains one method on one split and writes its checkpoint and log.
pub fn train(run: &Run, method: Method, split: SplitLabel) -> Result<()> {
    let d = run.load_split(split)?;
    let dir = run.model_dir(split, method);
    std::fs::create_dir_all(&dir)?;
    let (tx, ty) = d.train_xy();
    let (vx, vy) = d.val_xy();
    match method {
        Method::Mlp => {
            let (params, log) = train_mlp(run, split, &d)?;
            save_params(&params, meta(run, split, method, run.seed(split, "mlp")), &dir.join("params.bin"))?;
            write_json(&dir.join("train_log.json"), &log)?;
        }
        Method::De => {
            let base = run.seed(split, "de");
            let s = &run.cfg.ensemble;
            let model = train_ensemble((&tx, &ty), (&vx, &vy), &s.train, s.n_members, base)?;
            for (i, (p, seed)) in model.members.iter().zip(&model.seeds).enumerate() {
                save_params(p, meta(run, split, method, *seed), &dir.join(format!("member_{i:02}.bin")))?;
            }
            let log = EnsembleLog {
                seeds: model.seeds,
                logs: model.logs,
            };
            write_json(&dir.join("train_log.json"), &log)?;
        }
        Method::Mcd => {
            let cfg = TrainConfig {
                seed: run.seed(split, "mcd"),
                ..run.cfg.mcd.train.clone()
            };
            let (params, log) = mlp::train(&tx, &ty, &vx, &vy, &cfg)?;
            save_params(&params, meta(run, split, method, cfg.seed), &dir.join("params.bin"))?;
            write_json(&dir.join("train_log.json"), &log)?;
        }
        Method::Svi => {
            let s = &run.cfg.svi;
            let cfg = SviConfig {
                seed: run.seed(split, "svi"),
                ..s.svi.clone()
            };
            let init = if s.warm_start {
                let mlp_path = run.model_dir(split, Method::Mlp).join("params.bin");
                if mlp_path.exists() {
                    load_params(&mlp_path)?.0
                } else {
                    train_mlp(run, split, &d)?.0
                }
            } else {
                MlpParams::init_he(derive_seed(cfg.seed, "svi/init"))
            };
            let (post, log) = train_svi(
                &SurrogateNet,
                init.into_vec(),
                (&flat(&tx), &flat(&ty)),
                (&flat(&vx), &flat(&vy)),
                &cfg,
            )?;
            save_posterior(&post, meta(run, split, method, cfg.seed), &dir.join("posterior.bin"))?;
            let log = SviRunLog {
                warm_start: s.warm_start,
                svi: log,
            };
            write_json(&dir.join("train_log.json"), &log)?;
        }
        Method::Egp | Method::Agp => {
            let s = if method == Method::Egp { &run.cfg.egp } else { &run.cfg.agp };
            let idx = gp_subsample(run, split, tx.len(), s.n_subsample);
            let x: Vec<f64> = idx.iter().flat_map(|&i| tx[i]).collect();
            let y: Vec<f64> = idx.iter().flat_map(|&i| ty[i]).collect();
            let backend = match method {
                Method::Egp => GpBackend::Exact,
                _ => GpBackend::Sparse {
                    n_inducing: s.n_inducing.min(idx.len()),
                },
            };
            let fit = GpFitConfig {
                seed: run.seed(split, method.slug()),
                ..s.fit.clone()
            };
            let (gp, fits) = fit_multi_output(&x, 2, &y, N_OUTPUTS, backend, s.init, &fit)?;
            gp.save(&dir, meta(run, split, method, fit.seed))?;
            let log = GpLog {
                backend,
                n_subsample: idx.len(),
                hyperparams: gp.outputs().iter().map(|m| *m.hyperparams()).collect(),
                fits,
            };
            write_json(&dir.join("train_log.json"), &log)?;
        }
    }
    Ok(())
}

/// Evenly strided grid indices for the posterior-sample export.
pub fn export_indices(n_grid: usize, n_export: usize) -> Vec<usize> {
    let k = n_export.min(n_grid);
    (0..k).map(|i| i * n_grid / k.max(1)).collect()
}

struct Prediction {
    bundle_mean: Vec<f64>,
    bundle_std: Option<Vec<f64>>,
    /// One row per posterior draw over the export points.
    export: Vec<Vec<f64>>,
}

fn from_predictive(p: &PredictiveDistribution, export: Vec<Vec<f64>>) -> Prediction {
    Prediction {
        bundle_mean: p.mean().to_vec(),
        bundle_std: Some(p.std()),
        export,
    }
}

fn retained_rows(p: &PredictiveDistribution) -> Vec<Vec<f64>> {
    (0..p.n_samples()).filter_map(|s| p.sample(s).map(<[f64]>::to_vec)).collect()
}

fn load_ensemble(dir: &Path) -> Result<EnsembleModel> {
    let log_path = dir.join("train_log.json");
    require(&log_path, "ensemble log")?;
    let log: EnsembleLog = read_json(&log_path)?;
    let mut members = Vec::with_capacity(log.seeds.len());
    for i in 0..log.seeds.len() {
        let path = dir.join(format!("member_{i:02}.bin"));
        require(&path, "ensemble member")?;
        members.push(load_params(&path)?.0);
    }
    Ok(EnsembleModel {
        members,
        logs: log.logs,
        seeds: log.seeds,
    })
}

fn predict(run: &Run, method: Method, split: SplitLabel, xs: &[[f64; 2]], export_xs: &[[f64; 2]]) -> Result<Prediction> {
    let dir = run.model_dir(split, method);
    let seed = run.seed(split, &format!("{}/eval", method.slug()));
    let n_export = run.cfg.eval.export_samples;
    match method {
        Method::Mlp => {
            let path = dir.join("params.bin");
            require(&path, "checkpoint")?;
            let params = load_params(&path)?.0;
            Ok(Prediction {
                bundle_mean: flat(&mlp::predict_batch(&params, xs, None)?),
                bundle_std: None,
                export: Vec::new(),
            })
        }
        Method::De => {
            let model = load_ensemble(&dir)?;
            let p = ensemble_predict(&model, xs, false)?;
            let export = model
                .members
                .iter()
                .map(|m| mlp::predict_batch(m, export_xs, None).map(|v| flat(&v)))
                .collect::<Result<_>>()?;
            Ok(from_predictive(&p, export))
        }
        Method::Mcd => {
            let path = dir.join("params.bin");
            require(&path, "checkpoint")?;
            let params = load_params(&path)?.0;
            let s = &run.cfg.mcd;
            let p = mcd_predictive(&params, xs, s.n_samples, s.train.dropout_p, seed, false)?;
            // Masks do not depend on the inputs, so the export replays the
            // first draws used above.
            let e = mcd_predictive(&params, export_xs, n_export, s.train.dropout_p, seed, true)?;
            Ok(from_predictive(&p, retained_rows(&e)))
        }
        Method::Svi => {
            let path = dir.join("posterior.bin");
            require(&path, "checkpoint")?;
            let post = load_posterior(&path)?.0;
            let n = run.cfg.svi.n_samples;
            let p = svi_predictive(&SurrogateNet, &post, &flat(xs), n, seed, false)?;
            let e = svi_predictive(&SurrogateNet, &post, &flat(export_xs), n_export, seed, true)?;
            Ok(from_predictive(&p, retained_rows(&e)))
        }
        Method::Egp | Method::Agp => {
            let backend = match method {
                Method::Egp => GpBackend::Exact,
                _ => GpBackend::Sparse {
                    n_inducing: run.cfg.agp.n_inducing,
                },
            };
            if !dir.join("output_0.bin").exists() {
                return Err(Error::Missing(format!("GP checkpoint in {}; run train first", dir.display())));
            }
            let gp = MultiOutputGp::load(&dir, backend, N_OUTPUTS)?;
            let p = gp.predict(&flat(xs))?;
            let ex = flat(export_xs);
            let mut rng = seeded(seed);
            let mut export = vec![vec![0.0; export_xs.len() * N_OUTPUTS]; n_export];
            for (k, m) in gp.outputs().iter().enumerate() {
                let (mean, cov) = m.predict_joint(&ex)?;
                let f = sampling_factor(cov, m.hyperparams().sigma1)?;
                for row in &mut export {
                    let draw = mvn_sample_with(&mean, &f, &mut rng)?;
                    for (i, v) in draw.into_iter().enumerate() {
                        row[i * N_OUTPUTS + k] = v;
                    }
                }
            }
            Ok(from_predictive(&p, export))
        }
    }
}

/// Cholesky factor for drawing from a posterior covariance. Noiseless
/// posteriors can shrink to the rounding level of the prior, so the retry
/// jitter is scaled by the prior variance rather than the matrix itself.
fn sampling_factor(cov: DenseMatrix, prior_var: f64) -> Result<CholeskyFactor> {
    let mut last = None;
    for rel in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut c = cov.clone();
        c.add_diag(rel * prior_var);
        match cholesky(&c) {
            Ok(f) => return Ok(f),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or(Error::NotPositiveDefinite { jitter: 0.0 }))
}

fn write_grid_csv(path: &Path, d: &Dataset, in_region: &[bool], mean: &[f64], std: Option<&[f64]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "log10_eta1,log10_eta2,region,in_training_region,y0,y1,y2,mean0,mean1,mean2,abs_err0,abs_err1,abs_err2,std0,std1,std2"
    )?;
    for (i, r) in d.test.iter().enumerate() {
        write!(
            w,
            "{:.6e},{:.6e},{},{}",
            r.point.eta1.log10(),
            r.point.eta2.log10(),
            r.region.label(),
            u8::from(in_region[i])
        )?;
        let m = &mean[i * 3..i * 3 + 3];
        for v in r.y.iter().chain(m) {
            write!(w, ",{v:.6e}")?;
        }
        for k in 0..3 {
            write!(w, ",{:.6e}", (r.y[k] - m[k]).abs())?;
        }
        for k in 0..3 {
            write!(w, ",{:.6e}", std.map_or(0.0, |s| s[i * 3 + k]))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn export_header(n_points: usize) -> String {
    let mut h = String::from("method,sample");
    for i in 0..n_points {
        for k in 0..N_OUTPUTS {
            h.push_str(&format!(",p{i}_y{k}"));
        }
    }
    h
}

fn write_samples_csv(path: &Path, method: Method, rows: &[Vec<f64>], n_points: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", export_header(n_points))?;
    for (s, row) in rows.iter().enumerate() {
        write!(w, "{},{s}", method.label())?;
        for v in row {
            write!(w, ",{v:.9e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_export_points(path: &Path, d: &Dataset, idx: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "point,grid_index,log10_eta1,log10_eta2,region")?;
    for (p, &i) in idx.iter().enumerate() {
        let r = &d.test[i];
        writeln!(w, "{p},{i},{},{},{}", r.point.eta1.log10(), r.point.eta2.log10(), r.region.label())?;
    }
    w.flush()?;
    Ok(())
}

fn write_calibration_csv(path: &Path, curves: &[(Subset, metrics::CalibrationCurve)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "subset,level,observed,weight")?;
    for (subset, c) in curves {
        for ((p, q), wt) in c.expected.iter().zip(&c.observed).zip(&c.weights) {
            writeln!(w, "{},{p},{q},{wt}", subset.label())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Scores one trained method on the split's full evaluation grid and writes
/// the metrics rows, per-point grid, calibration curve and sample export.
pub fn evaluate(run: &Run, method: Method, split: SplitLabel) -> Result<Vec<MetricsReport>> {
    let d = run.load_split(split)?;
    let (xs, ys) = d.test_xy();
    let export_idx = export_indices(xs.len(), run.cfg.eval.export_points);
    let export_xs: Vec<[f64; 2]> = export_idx.iter().map(|&i| xs[i]).collect();
    let pred = predict(run, method, split, &xs, &export_xs)?;

    let y = flat(&ys);
    let bundle = match &pred.bundle_std {
        Some(s) => EvalBundle::new(y, pred.bundle_mean.clone(), s.clone(), N_OUTPUTS)?,
        None => EvalBundle::deterministic(y, pred.bundle_mean.clone(), N_OUTPUTS)?,
    };
    let in_region: Vec<bool> = d.test.iter().map(|r| split.region().is_none_or(|g| r.region == g)).collect();
    let mut subsets = vec![(Subset::All, bundle.clone())];
    if split.region().is_some() {
        let (inside, outside): (Vec<usize>, Vec<usize>) = (0..in_region.len()).partition(|&i| in_region[i]);
        for (subset, idx) in [(Subset::InRegion, inside), (Subset::HeldOut, outside)] {
            if !idx.is_empty() {
                subsets.push((subset, bundle.select(&idx)));
            }
        }
    }

    let levels = metrics::uniform_levels(run.cfg.eval.n_levels);
    let calibration = method.is_probabilistic().then_some(run.cfg.eval.calibration);
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (subset, b) in &subsets {
        let spec = ReportSpec {
            method: method.label(),
            split: split.label(),
            subset: *subset,
            calibration,
            levels: &levels,
        };
        rows.extend(metrics::report(b, &spec)?);
        if let Some(kind) = calibration {
            curves.push((*subset, metrics::calibration_curve(b, &levels, kind)?));
        }
    }

    let out = run.eval_dir(split, method);
    std::fs::create_dir_all(&out)?;
    metrics::write_metrics_csv(&rows, &out.join("metrics.csv"))?;
    write_json(&out.join("metrics.json"), &rows)?;
    write_grid_csv(&out.join("grid.csv"), &d, &in_region, bundle.mean(), pred.bundle_std.as_deref())?;
    if !curves.is_empty() {
        write_calibration_csv(&out.join("calibration.csv"), &curves)?;
    }
    if !pred.export.is_empty() {
        write_samples_csv(&out.join("samples.csv"), method, &pred.export, export_idx.len())?;
        let points = run.dir().join("eval").join(split.slug()).join("export_points.csv");
        write_export_points(&points, &d, &export_idx)?;
    }
    Ok(rows)
}
