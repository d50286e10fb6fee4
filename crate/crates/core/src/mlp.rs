//! The fixed 2→20→20→20→3 surrogate network: ReLU hidden layers, linear
//! output, optional Bernoulli node masks after each hidden nonlinearity.
//!
//! Parameters live in one flat vector. Each affine layer stores its weight
//! matrix (`out x in`, row-major) followed by its bias.

use std::path::Path;

use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{derive_seed, seeded, Rng};

pub const LAYER_SIZES: [usize; 5] = [2, 20, 20, 20, 3];
pub const N_LAYERS: usize = 4;
pub const N_HIDDEN: usize = 3;
pub const N_INPUTS: usize = 2;
pub const N_OUTPUTS: usize = 3;
pub const N_PARAMS: usize = 963;

pub const PARAMS_KIND: &str = "mlp-params";
pub const PARAMS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

const fn layouts() -> [LayerLayout; N_LAYERS] {
    let mut out = [LayerLayout { w: 0, b: 0, n_in: 0, n_out: 0 }; N_LAYERS];
    let mut off = 0;
    let mut l = 0;
    while l < N_LAYERS {
        let (n_in, n_out) = (LAYER_SIZES[l], LAYER_SIZES[l + 1]);
        out[l] = LayerLayout {
            w: off,
            b: off + n_in * n_out,
            n_in,
            n_out,
        };
        off += n_in * n_out + n_out;
        l += 1;
    }
    out
}

const LAYOUT: [LayerLayout; N_LAYERS] = layouts();

const _: () = assert!(LAYOUT[N_LAYERS - 1].b + N_OUTPUTS == N_PARAMS);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros() -> Self {
        MlpParams {
            values: vec![0.0; N_PARAMS],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_PARAMS {
            return Err(Error::Dimension(format!(
                "network has {N_PARAMS} parameters, got {}",
                values.len()
            )));
        }
        Ok(MlpParams { values })
    }

    /// Fan-in scaled Gaussian weights (variance 2 / fan_in), zero biases.
    pub fn init_he(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut p = Self::zeros();
        for lay in LAYOUT {
            let normal = Normal::new(0.0, (2.0 / lay.n_in as f64).sqrt()).expect("positive std");
            for w in &mut p.values[lay.w..lay.b] {
                *w = normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Weight matrix of `layer`, row-major `out x in`.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = LAYOUT[layer];
        &self.values[l.w..l.b]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = LAYOUT[layer];
        &self.values[l.b..l.b + l.n_out]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = LAYOUT[layer];
        &mut self.values[l.b..l.b + l.n_out]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }
}

/// Binary keep-masks for the three hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub hidden: [Vec<f64>; N_HIDDEN],
}

impl DropoutMask {
    pub fn ones() -> Self {
        DropoutMask {
            hidden: [0, 1, 2].map(|l| vec![1.0; LAYER_SIZES[l + 1]]),
        }
    }

    pub fn zeros() -> Self {
        DropoutMask {
            hidden: [0, 1, 2].map(|l| vec![0.0; LAYER_SIZES[l + 1]]),
        }
    }

    /// Each unit is dropped independently with probability `p`.
    pub fn sample(p: f64, rng: &mut Rng) -> Self {
        DropoutMask {
            hidden: [0, 1, 2].map(|l| {
                (0..LAYER_SIZES[l + 1])
                    .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { 1.0 })
                    .collect()
            }),
        }
    }
}

/// Forward pass for one input. Errors if any parameter is non-finite.
pub fn forward(params: &MlpParams, x: [f64; 2], mask: Option<&DropoutMask>) -> Result<[f64; 3]> {
    if !params.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(forward_unchecked(params, x, mask))
}

pub(crate) fn forward_unchecked(params: &MlpParams, x: [f64; 2], mask: Option<&DropoutMask>) -> [f64; 3] {
    let mut a: Vec<f64> = x.to_vec();
    for (l, lay) in LAYOUT.iter().enumerate() {
        let w = &params.values[lay.w..lay.b];
        let b = &params.values[lay.b..lay.b + lay.n_out];
        let mut z: Vec<f64> = (0..lay.n_out)
            .map(|o| b[o] + dot(&w[o * lay.n_in..(o + 1) * lay.n_in], &a))
            .collect();
        if l < N_HIDDEN {
            for (i, v) in z.iter_mut().enumerate() {
                *v = v.max(0.0);
                if let Some(m) = mask {
                    *v *= m.hidden[l][i];
                }
            }
        }
        a = z;
    }
    [a[0], a[1], a[2]]
}

/// Hidden-layer pre-activations for one input (no masks).
pub fn pre_activations(params: &MlpParams, x: [f64; 2]) -> [Vec<f64>; N_HIDDEN] {
    let mut a: Vec<f64> = x.to_vec();
    let mut out: [Vec<f64>; N_HIDDEN] = Default::default();
    for (l, lay) in LAYOUT.iter().take(N_HIDDEN).enumerate() {
        let w = params.weights(l);
        let b = params.bias(l);
        let z: Vec<f64> = (0..lay.n_out)
            .map(|o| b[o] + dot(&w[o * lay.n_in..(o + 1) * lay.n_in], &a))
            .collect();
        a = z.iter().map(|v| v.max(0.0)).collect();
        out[l] = z;
    }
    out
}

/// Forward pass over many inputs sharing one mask.
pub fn predict_batch(params: &MlpParams, xs: &[[f64; 2]], mask: Option<&DropoutMask>) -> Result<Vec<[f64; 3]>> {
    if !params.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut out = Vec::with_capacity(xs.len());
    let mut ws = Workspace::default();
    for chunk in xs.chunks(256) {
        let masks = mask.map(|m| MaskSource::Shared(m)).unwrap_or(MaskSource::None);
        ws.forward(params, chunk, masks);
        let f = &ws.z[N_LAYERS - 1];
        let n = chunk.len();
        out.extend((0..n).map(|j| [f[j], f[n + j], f[2 * n + j]]));
    }
    Ok(out)
}

/// `n_samples` masked forward passes over `xs`, one mask per sample shared
/// by every input. Returns `samples[s][i]`.
pub fn mc_dropout_predict(
    params: &MlpParams,
    xs: &[[f64; 2]],
    n_samples: usize,
    p: f64,
    seed: u64,
) -> Result<Vec<Vec<[f64; 3]>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
    }
    let mut rng = seeded(seed);
    (0..n_samples)
        .map(|_| {
            let mask = DropoutMask::sample(p, &mut rng);
            predict_batch(params, xs, Some(&mask))
        })
        .collect()
}

/// How dropout masks are applied during a batched pass.
pub enum MaskSource<'a> {
    None,
    /// One mask for every example in the batch.
    Shared(&'a DropoutMask),
    /// A fresh Bernoulli mask per example and unit.
    PerExample { p: f64, rng: &'a mut Rng },
}

/// Feature-major activations for a batch: `z[l]` and `a[l]` are
/// `n_units x batch`, row-major, so every inner loop runs along the batch.
#[derive(Default)]
struct Workspace {
    a: [Vec<f64>; N_LAYERS],
    z: [Vec<f64>; N_LAYERS],
    m: [Vec<f64>; N_HIDDEN],
}

impl Workspace {
    fn forward(&mut self, params: &MlpParams, xs: &[[f64; 2]], mut masks: MaskSource<'_>) {
        let n = xs.len();
        let a0 = &mut self.a[0];
        a0.clear();
        a0.extend(xs.iter().map(|x| x[0]));
        a0.extend(xs.iter().map(|x| x[1]));
        for (l, lay) in LAYOUT.iter().enumerate() {
            let w = &params.values[lay.w..lay.b];
            let b = &params.values[lay.b..lay.b + lay.n_out];
            let mut z = std::mem::take(&mut self.z[l]);
            z.clear();
            z.resize(lay.n_out * n, 0.0);
            let a = &self.a[l];
            for o in 0..lay.n_out {
                let zo = &mut z[o * n..(o + 1) * n];
                zo.fill(b[o]);
                for i in 0..lay.n_in {
                    axpy(w[o * lay.n_in + i], &a[i * n..(i + 1) * n], zo);
                }
            }
            if l < N_HIDDEN {
                let m = &mut self.m[l];
                m.clear();
                match &mut masks {
                    MaskSource::None => m.resize(lay.n_out * n, 1.0),
                    MaskSource::Shared(mask) => {
                        for o in 0..lay.n_out {
                            m.extend(std::iter::repeat_n(mask.hidden[l][o], n));
                        }
                    }
                    MaskSource::PerExample { p, rng } => {
                        let p = *p;
                        m.extend(
                            (0..lay.n_out * n).map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { 1.0 }),
                        );
                    }
                }
                let next = &mut self.a[l + 1];
                next.clear();
                next.extend(z.iter().zip(m.iter()).map(|(v, k)| v.max(0.0) * k));
            }
            self.z[l] = z;
        }
    }
}

/// Sum of squared residuals over a batch and its gradient with respect to
/// the parameters, written into `grad` (overwritten).
pub fn sse_and_grad(
    params: &MlpParams,
    xs: &[[f64; 2]],
    ys: &[[f64; 3]],
    masks: MaskSource<'_>,
    grad: &mut [f64],
) -> f64 {
    debug_assert_eq!(grad.len(), N_PARAMS);
    let n = xs.len();
    let mut ws = Workspace::default();
    ws.forward(params, xs, masks);

    // delta = d(sse)/dz for the current layer, feature-major.
    let f = &ws.z[N_LAYERS - 1];
    let mut delta = vec![0.0; N_OUTPUTS * n];
    let mut sse = 0.0;
    for o in 0..N_OUTPUTS {
        for j in 0..n {
            let r = f[o * n + j] - ys[j][o];
            sse += r * r;
            delta[o * n + j] = 2.0 * r;
        }
    }

    for l in (0..N_LAYERS).rev() {
        let lay = LAYOUT[l];
        let a = &ws.a[l];
        for o in 0..lay.n_out {
            let d = &delta[o * n..(o + 1) * n];
            for i in 0..lay.n_in {
                grad[lay.w + o * lay.n_in + i] = dot(d, &a[i * n..(i + 1) * n]);
            }
            grad[lay.b + o] = d.iter().sum();
        }
        if l == 0 {
            break;
        }
        let w = &params.values[lay.w..lay.b];
        let mut back = vec![0.0; lay.n_in * n];
        for o in 0..lay.n_out {
            let d = &delta[o * n..(o + 1) * n];
            for i in 0..lay.n_in {
                axpy(w[o * lay.n_in + i], d, &mut back[i * n..(i + 1) * n]);
            }
        }
        // Through the mask and the ReLU of the layer below.
        let z = &ws.z[l - 1];
        let m = &ws.m[l - 1];
        for ((b, zv), mv) in back.iter_mut().zip(z).zip(m) {
            if !(*zv > 0.0) || *mv == 0.0 {
                *b = 0.0;
            } else {
                *b *= mv;
            }
        }
        delta = back;
    }
    sse
}

/// `sum ||y - f(x)||^2 + lambda ||theta||^2` over the batch and its gradient.
pub fn loss_and_grad(
    params: &MlpParams,
    xs: &[[f64; 2]],
    ys: &[[f64; 3]],
    lambda: f64,
    masks: MaskSource<'_>,
) -> (f64, MlpParams) {
    let mut grad = vec![0.0; N_PARAMS];
    let sse = sse_and_grad(params, xs, ys, masks, &mut grad);
    if lambda != 0.0 {
        axpy(2.0 * lambda, &params.values, &mut grad);
    }
    (sse + lambda * params.norm_sq(), MlpParams { values: grad })
}

/// Per-batch objective normalization used by [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Gradient of the batch sum.
    Sum,
    /// Gradient divided by the number of residuals (batch size x outputs).
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs without a validation improvement before the rate is halved.
    pub halving_patience: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Stop once the rate has been halved this many times.
    pub max_halvings: usize,
    pub dropout_p: f64,
    pub optimizer: OptimizerKind,
    pub reduction: LossReduction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr0: 1e-2,
            halving_patience: 25,
            weight_decay: 1e-7,
            max_epochs: 1000,
            max_halvings: 10,
            dropout_p: 0.0,
            optimizer: OptimizerKind::adam(),
            reduction: LossReduction::Mean,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub halvings: usize,
}

/// Pooled RMSE of the mask-free network over a labelled set.
pub fn rmse(params: &MlpParams, xs: &[[f64; 2]], ys: &[[f64; 3]]) -> Result<f64> {
    let pred = predict_batch(params, xs, None)?;
    let sse: f64 = pred
        .iter()
        .zip(ys)
        .map(|(p, y)| (0..3).map(|o| (p[o] - y[o]).powi(2)).sum::<f64>())
        .sum();
    Ok((sse / (3 * ys.len()).max(1) as f64).sqrt())
}

/// Mini-batch training with per-epoch reshuffling and plateau-triggered
/// learning-rate halving. Returns the parameters with the best validation
/// RMSE.
pub fn train(
    train_x: &[[f64; 2]],
    train_y: &[[f64; 3]],
    val_x: &[[f64; 2]],
    val_y: &[[f64; 3]],
    cfg: &TrainConfig,
) -> Result<(MlpParams, TrainLog)> {
    cfg.validate()?;
    if train_x.is_empty() || train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::Dimension("training inputs and targets must be non-empty and aligned".into()));
    }
    let mut params = MlpParams::init_he(derive_seed(cfg.seed, "mlp/init"));
    let mut shuffle_rng = seeded(derive_seed(cfg.seed, "mlp/shuffle"));
    let mut mask_rng = seeded(derive_seed(cfg.seed, "mlp/dropout"));
    let mut opt = Optimizer::new(cfg.optimizer, N_PARAMS);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut grad = vec![0.0; N_PARAMS];
    let (mut bx, mut by) = (Vec::with_capacity(cfg.batch_size), Vec::with_capacity(cfg.batch_size));

    let mut lr = cfg.lr0;
    let mut best = params.clone();
    let mut log = TrainLog {
        best_val_rmse: f64::INFINITY,
        ..Default::default()
    };
    let mut since_improvement = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sse = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(idx.iter().map(|&i| train_x[i]));
            by.extend(idx.iter().map(|&i| train_y[i]));
            let masks = if cfg.dropout_p > 0.0 {
                MaskSource::PerExample {
                    p: cfg.dropout_p,
                    rng: &mut mask_rng,
                }
            } else {
                MaskSource::None
            };
            let sse = sse_and_grad(&params, &bx, &by, masks, &mut grad);
            if !sse.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss in epoch {epoch}")));
            }
            epoch_sse += sse;
            if cfg.weight_decay != 0.0 {
                axpy(2.0 * cfg.weight_decay, params.as_slice(), &mut grad);
            }
            if cfg.reduction == LossReduction::Mean {
                let s = 1.0 / (N_OUTPUTS * idx.len()) as f64;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            opt.step(params.as_mut_slice(), &grad, lr);
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
        let train_rmse = (epoch_sse / (N_OUTPUTS * train_x.len()) as f64).sqrt();
        let val_rmse = rmse(&params, val_x, val_y)?;
        log.epochs.push(EpochLog {
            epoch,
            train_rmse,
            val_rmse,
            lr,
        });
        if val_rmse < log.best_val_rmse {
            log.best_val_rmse = val_rmse;
            log.best_epoch = epoch;
            best.as_mut_slice().copy_from_slice(params.as_slice());
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.halving_patience {
                since_improvement = 0;
                if log.halvings == cfg.max_halvings {
                    break;
                }
                lr /= 2.0;
                log.halvings += 1;
            }
        }
    }
    Ok((best, log))
}

#[derive(Serialize, Deserialize)]
pub struct ParamsHeader {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save_params(params: &MlpParams, meta: serde_json::Value, path: &Path) -> Result<()> {
    let header = ParamsHeader {
        layer_sizes: LAYER_SIZES.to_vec(),
        meta,
    };
    container::write(path, PARAMS_KIND, PARAMS_SCHEMA_VERSION, &header, params.as_slice())
}

pub fn load_params(path: &Path) -> Result<(MlpParams, serde_json::Value)> {
    let (h, values): (ParamsHeader, Vec<f64>) = container::read(path, PARAMS_KIND, PARAMS_SCHEMA_VERSION)?;
    if h.layer_sizes != LAYER_SIZES {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("layer sizes {:?} do not match {:?}", h.layer_sizes, LAYER_SIZES),
        });
    }
    Ok((MlpParams::from_vec(values)?, h.meta))
}
