use std::path::PathBuf;

use hrb_core::dynamics::{Method, SgdNoise, TrainConfig};
use hrb_core::phase::PhaseGridSpec;
use hrb_core::specgen::DatasetSpec;
use hrb_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Full run description, read from JSON. Unknown keys are rejected at every
/// level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub pca: PcaSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseGridSpec>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Gd,
    Sgd,
    WeightDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub method: MethodName,
    /// Step size; `1/λ₁` of the (shifted) spectrum when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_wd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<SgdNoise>,
    /// Run the pipeline once per horizon instead of once at `T`.
    #[serde(rename = "T_sweep", default, skip_serializing_if = "Option::is_none")]
    pub t_sweep: Option<Vec<usize>>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            method: MethodName::Gd,
            alpha: None,
            steps: 50,
            trajectories: 1000,
            batch_size: None,
            lambda_wd: None,
            noise: None,
            t_sweep: None,
        }
    }
}

impl TrainSection {
    pub fn method(&self) -> Result<Method> {
        let stray = |what: &str| {
            Err(Error::InvalidConfig(format!(
                "train.{what} does not apply to method {:?}",
                self.method
            )))
        };
        match self.method {
            MethodName::Gd => {
                if self.batch_size.is_some() {
                    return stray("batch_size");
                }
                if self.lambda_wd.is_some() {
                    return stray("lambda_wd");
                }
                if self.noise.is_some() {
                    return stray("noise");
                }
                Ok(Method::Gd)
            }
            MethodName::Sgd => {
                if self.lambda_wd.is_some() {
                    return stray("lambda_wd");
                }
                let batch_size = self
                    .batch_size
                    .ok_or_else(|| Error::InvalidConfig("train.batch_size is required for sgd".into()))?;
                Ok(Method::Sgd {
                    batch_size,
                    noise: self.noise.unwrap_or_default(),
                })
            }
            MethodName::WeightDecay => {
                if self.batch_size.is_some() {
                    return stray("batch_size");
                }
                if self.noise.is_some() {
                    return stray("noise");
                }
                let lambda_wd = self
                    .lambda_wd
                    .ok_or_else(|| Error::InvalidConfig("train.lambda_wd is required for weight_decay".into()))?;
                Ok(Method::WeightDecay { lambda_wd })
            }
        }
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.t_sweep.clone().unwrap_or_else(|| vec![self.steps])
    }

    /// Training configuration at horizon `steps`, given the top eigenvalue
    /// of the unshifted kernel.
    pub fn config(&self, steps: usize, lambda_1: f64) -> Result<TrainConfig> {
        let method = self.method()?;
        let alpha = self.alpha.unwrap_or(1.0 / (lambda_1 + method.spectral_shift()));
        let cfg = TrainConfig {
            alpha,
            steps,
            trajectories: self.trajectories,
            method,
        };
        cfg.check_step(lambda_1 + method.spectral_shift())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    Empirical,
    #[default]
    Analytic,
    Both,
}

impl PcaMode {
    pub fn empirical(self) -> bool {
        matches!(self, PcaMode::Empirical | PcaMode::Both)
    }

    pub fn analytic(self) -> bool {
        matches!(self, PcaMode::Analytic | PcaMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSection {
    #[serde(default)]
    pub mode: PcaMode,
    /// Explained-variance threshold for the reported hyper-ribbon dimension.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Also dump the trajectory ensemble (HRB1, plus CSV when enabled).
    #[serde(default)]
    pub dump_trajectories: bool,
}

fn default_threshold() -> f64 {
    0.95
}

impl Default for PcaSection {
    fn default() -> Self {
        PcaSection {
            mode: PcaMode::default(),
            threshold: default_threshold(),
            dump_trajectories: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            enabled: true,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub seed: u64,
    pub count: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { seed: 7, count: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            formats: default_formats(),
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Checks every section before any computation starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let method = self.train.method()?;
        let lambda_1 = 1.0;
        for &t in &self.train.horizons() {
            if t == 0 {
                return Err(Error::InvalidConfig("horizons must be at least 1".into()));
            }
            // The synthesized spectrum has λ₁ = 1.
            self.train.config(t, lambda_1)?.validate()?;
        }
        if let Some(sweep) = &self.train.t_sweep {
            if sweep.is_empty() {
                return Err(Error::InvalidConfig("train.T_sweep is empty".into()));
            }
        }
        if let Method::Sgd { noise: SgdNoise::InputCovariance, .. } = method {
            log::info!("input-covariance noise: closed-form PCA and SGD bounds are skipped");
        }
        if !(self.pca.threshold > 0.0 && self.pca.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pca.threshold must lie in (0, 1], got {}",
                self.pca.threshold
            )));
        }
        if let Some(phase) = &self.phase {
            phase.validate()?;
        }
        if let Some(sweep) = &self.bounds.sweep {
            if sweep.count == 0 {
                return Err(Error::InvalidConfig("bounds.sweep.count must be positive".into()));
            }
        }
        if self.output.formats.is_empty() {
            return Err(Error::InvalidConfig("output.formats is empty".into()));
        }
        Ok(())
    }

    /// Replaces every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        if let Some(p) = &mut self.phase {
            p.seed = seed;
        }
        if let Some(s) = &mut self.bounds.sweep {
            s.seed = seed;
        }
    }
}

pub const PRESETS: [&str; 8] = ["fig3", "fig4", "fig5", "fig6", "fig7", "fig7a", "fig7b", "fig7c"];

fn fig5_dataset() -> DatasetSpec {
    DatasetSpec {
        n: 50,
        d: 100,
        c: 0.2,
        sigma_star_sq: 2.0,
        sigma_w_sq: 0.1,
        seed: 7,
    }
}

/// Parameter sets of the reference figures.
pub fn preset(name: &str) -> Option<RunConfig> {
    let base = RunConfig {
        dataset: fig5_dataset(),
        train: TrainSection::default(),
        pca: PcaSection::default(),
        bounds: BoundsSection::default(),
        phase: None,
        output: OutputSection {
            dir: None,
            formats: vec![Format::Csv, Format::Json, Format::Svg],
        },
    };
    Some(match name {
        // Overview decomposition, checked against a sampled ensemble.
        "fig3" => RunConfig {
            pca: PcaSection {
                mode: PcaMode::Both,
                ..Default::default()
            },
            train: TrainSection {
                trajectories: 2000,
                ..Default::default()
            },
            ..base
        },
        // Initialization contribution at α = 1, c = 0.5 over three horizons.
        "fig4" => RunConfig {
            dataset: DatasetSpec {
                c: 0.5,
                sigma_w_sq: 1.0,
                sigma_star_sq: 1.0,
                ..fig5_dataset()
            },
            train: TrainSection {
                alpha: Some(1.0),
                t_sweep: Some(vec![10, 100, 1000]),
                ..Default::default()
            },
            ..base
        },
        "fig5" => base,
        "fig6" => RunConfig {
            dataset: DatasetSpec {
                c: 0.1,
                sigma_w_sq: 1.0,
                ..fig5_dataset()
            },
            train: TrainSection {
                trajectories: 5000,
                t_sweep: Some(vec![5, 50, 500, 5000]),
                ..Default::default()
            },
            pca: PcaSection {
                mode: PcaMode::Empirical,
                ..Default::default()
            },
            ..base
        },
        "fig7" | "fig7a" | "fig7b" | "fig7c" => RunConfig {
            phase: Some(PhaseGridSpec::preset(name)?),
            bounds: BoundsSection {
                enabled: false,
                sweep: None,
            },
            ..base
        },
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
        assert!(preset("fig9").is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(preset("fig5").unwrap()).unwrap();
        v["train"]["learning_rate"] = 0.1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        let mut v = serde_json::to_value(preset("fig5").unwrap()).unwrap();
        v["extra"] = 1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn method_fields_checked() {
        let mut t = TrainSection {
            method: MethodName::Sgd,
            ..Default::default()
        };
        assert!(t.method().is_err());
        t.batch_size = Some(4);
        assert!(t.method().is_ok());
        t.lambda_wd = Some(0.1);
        assert!(t.method().is_err());
    }
}
