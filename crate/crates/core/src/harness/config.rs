use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bayes::{ScaleKind, SviConfig};
use crate::datagen::{SamplingConfig, SplitLabel};
use crate::error::{Error, Result};
use crate::gp::{GpFitConfig, KernelHyperparams, KernelKind};
use crate::metrics::{IntervalKind, DEFAULT_LEVELS};
use crate::mlp::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Deterministic network, point metrics only.
    Mlp,
    De,
    Mcd,
    Svi,
    Egp,
    Agp,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Mlp, Method::De, Method::Mcd, Method::Svi, Method::Egp, Method::Agp];
    /// Rows of the summary tables, in order.
    pub const TABLE: [Method; 5] = [Method::De, Method::Mcd, Method::Svi, Method::Egp, Method::Agp];

    pub fn slug(self) -> &'static str {
        match self {
            Method::Mlp => "mlp",
            Method::De => "de",
            Method::Mcd => "mcd",
            Method::Svi => "svi",
            Method::Egp => "egp",
            Method::Agp => "agp",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Mlp => "MLP",
            Method::De => "DE",
            Method::Mcd => "MCD",
            Method::Svi => "SVI",
            Method::Egp => "EGP",
            Method::Agp => "AGP",
        }
    }

    pub fn is_probabilistic(self) -> bool {
        self != Method::Mlp
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let alias = match lower.as_str() {
            "ensemble" => "de",
            "dropout" => "mcd",
            "exact" => "egp",
            "sparse" => "agp",
            other => other,
        };
        Method::ALL.into_iter().find(|m| m.slug() == alias).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.slug()).collect();
            Error::Config(format!("unknown method {s:?}; valid methods: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSettings {
    pub n_members: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McdSettings {
    /// Training settings; `dropout_p` is also the inference drop rate.
    pub train: TrainConfig,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SviSettings {
    pub svi: SviConfig,
    pub n_samples: usize,
    /// Start the variational mean at the split's deterministic network.
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSettings {
    /// Training points drawn (seeded, shared by both GP methods).
    pub n_subsample: usize,
    /// Inducing points; ignored by the exact GP.
    #[serde(default)]
    pub n_inducing: usize,
    pub init: KernelHyperparams,
    pub fit: GpFitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub n_levels: usize,
    pub calibration: IntervalKind,
    /// Grid points in the posterior-sample export.
    pub export_points: usize,
    /// Posterior draws per method in the export (ensembles export members).
    pub export_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub seed: u64,
    /// Relative paths are taken from the config file's directory.
    pub output_dir: PathBuf,
    pub splits: Vec<SplitLabel>,
    pub methods: Vec<Method>,
    pub sampling: SamplingConfig,
    pub mlp: TrainConfig,
    pub ensemble: EnsembleSettings,
    pub mcd: McdSettings,
    pub svi: SviSettings,
    pub egp: GpSettings,
    pub agp: GpSettings,
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale) -> Self {
        let member = TrainConfig {
            halving_patience: 15,
            max_halvings: 8,
            max_epochs: 500,
            ..TrainConfig::default()
        };
        let sampling = match scale {
            Scale::Desk => SamplingConfig::desk(),
            Scale::Paper => SamplingConfig::paper(),
        };
        let (n_subsample, n_inducing) = match scale {
            Scale::Desk => (2_000, 200),
            Scale::Paper => (sampling.n_train, 1_000),
        };
        ExperimentConfig {
            scale,
            seed: 0,
            output_dir: PathBuf::from(format!("runs/{}", scale_name(scale))),
            splits: SplitLabel::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            sampling,
            mlp: TrainConfig::default(),
            ensemble: EnsembleSettings {
                n_members: 40,
                train: member.clone(),
            },
            mcd: McdSettings {
                train: TrainConfig {
                    batch_size: 256,
                    dropout_p: 0.001,
                    ..member
                },
                n_samples: 100,
            },
            svi: SviSettings {
                svi: SviConfig {
                    max_epochs: 300,
                    patience: 10,
                    scale_kind: ScaleKind::Full,
                    ..SviConfig::default()
                },
                n_samples: 100,
                warm_start: true,
            },
            egp: GpSettings {
                n_subsample,
                n_inducing: 0,
                init: KernelHyperparams {
                    sigma1: 1.0,
                    sigma2: 1.0,
                    sigma_n: 0.0,
                    kind: KernelKind::SquaredExponential,
                },
                fit: GpFitConfig::default(),
            },
            agp: GpSettings {
                n_subsample,
                n_inducing,
                init: KernelHyperparams {
                    sigma1: 1.0,
                    sigma2: 1.0,
                    sigma_n: 1e-2,
                    kind: KernelKind::Matern52,
                },
                fit: GpFitConfig {
                    learn_noise: true,
                    ..GpFitConfig::default()
                },
            },
            eval: EvalSettings {
                n_levels: DEFAULT_LEVELS,
                calibration: IntervalKind::Central,
                export_points: 50,
                export_samples: 100,
            },
        }
    }

    /// Resolves a config file: the preset named by `scale_override` (or the
    /// file's `scale`, default desk) overlaid with the file's values.
    pub fn load(path: &Path, scale_override: Option<Scale>, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let user: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::from_value(user, scale_override, seed_override)?;
        if cfg.output_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn from_value(user: Value, scale_override: Option<Scale>, seed_override: Option<u64>) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let file_scale = match user.get("scale") {
            Some(v) => Some(
                serde_json::from_value::<Scale>(v.clone())
                    .map_err(|e| Error::Config(format!("config field scale: {e}")))?,
            ),
            None => None,
        };
        let scale = scale_override.or(file_scale).unwrap_or(Scale::Desk);
        let mut merged = serde_json::to_value(Self::preset(scale))?;
        merge(&mut merged, user);
        merged["scale"] = serde_json::to_value(scale)?;
        if let Some(seed) = seed_override {
            merged["seed"] = Value::from(seed);
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        for t in [&self.mlp, &self.ensemble.train, &self.mcd.train] {
            t.validate()?;
        }
        self.svi.svi.validate()?;
        self.egp.init.validate()?;
        self.agp.init.validate()?;
        if self.splits.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("at least one split and one method must be selected".into()));
        }
        if self.ensemble.n_members < 2 {
            return Err(Error::Config("an ensemble needs at least two members for a variance".into()));
        }
        if self.mcd.n_samples < 2 || self.svi.n_samples < 2 || self.eval.export_samples < 2 {
            return Err(Error::Config("posterior sample counts must be at least 2".into()));
        }
        if self.egp.n_subsample == 0 || self.agp.n_subsample == 0 {
            return Err(Error::Config("GP subsample sizes must be positive".into()));
        }
        if self.agp.n_inducing == 0 || self.agp.n_inducing > self.agp.n_subsample {
            return Err(Error::Config(format!(
                "agp needs 1 <= n_inducing <= n_subsample, got {} and {}",
                self.agp.n_inducing, self.agp.n_subsample
            )));
        }
        if self.eval.n_levels < 2 {
            return Err(Error::Config("at least two calibration levels are needed".into()));
        }
        Ok(())
    }
}

pub fn scale_name(scale: Scale) -> &'static str {
    match scale {
        Scale::Desk => "desk",
        Scale::Paper => "paper",
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_file_gives_the_desk_preset() {
        let cfg = ExperimentConfig::from_value(json!({}), None, None).unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(Scale::Desk));
    }

    #[test]
    fn overrides_nest_and_flags_win() {
        let cfg = ExperimentConfig::from_value(
            json!({"scale": "desk", "seed": 3, "ensemble": {"n_members": 5}}),
            Some(Scale::Paper),
            Some(9),
        )
        .unwrap();
        assert_eq!(cfg.scale, Scale::Paper);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ensemble.n_members, 5);
        assert_eq!(cfg.ensemble.train, ExperimentConfig::preset(Scale::Paper).ensemble.train);
        assert_eq!(cfg.sampling.n_train, 80_000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_value(json!({"ensembel": {}}), None, None).is_err());
        assert!(ExperimentConfig::from_value(json!({"methods": ["de", "gbm"]}), None, None).is_err());
        assert!(ExperimentConfig::from_value(json!([1, 2]), None, None).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("ensemble".parse::<Method>().unwrap(), Method::De);
        assert_eq!("EGP".parse::<Method>().unwrap(), Method::Egp);
        let err = "forest".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("mlp, de, mcd, svi, egp, agp"));
    }
}
