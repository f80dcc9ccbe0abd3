//! Experiment configuration file (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pipeline {
    #[serde(rename = "radiomics-lasso")]
    RadiomicsLasso,
    #[serde(rename = "toy-ridl")]
    ToyRidl,
    #[serde(rename = "toy-baseline-concat")]
    ToyBaselineConcat,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::RadiomicsLasso => "radiomics-lasso",
            Pipeline::ToyRidl => "toy-ridl",
            Pipeline::ToyBaselineConcat => "toy-baseline-concat",
        })
    }
}

/// Synthetic dataset request: `count` phantoms, balanced across classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub count: usize,
    pub dims: [usize; 3],
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }
}

/// Either an on-disk manifest or a phantom generation spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantoms: Option<PhantomSpec>,
}

fn default_bin_width() -> f64 {
    crate::quantize::DEFAULT_BIN_WIDTH
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractSpec {
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    #[serde(default)]
    pub gldm_alpha: u32,
    /// Feature keys; empty means the default four-feature set.
    #[serde(default)]
    pub keys: Vec<String>,
}

impl Default for ExtractSpec {
    fn default() -> Self {
        ExtractSpec {
            bin_width: default_bin_width(),
            gldm_alpha: 0,
            keys: Vec::new(),
        }
    }
}

fn default_local_key() -> String {
    "glcm_Idn".into()
}

fn default_radii() -> Vec<usize> {
    vec![1, 2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalMapSpec {
    #[serde(default = "default_local_key")]
    pub key: String,
    #[serde(default = "default_radii")]
    pub radii: Vec<usize>,
}

impl Default for LocalMapSpec {
    fn default() -> Self {
        LocalMapSpec {
            key: default_local_key(),
            radii: default_radii(),
        }
    }
}

fn default_epochs() -> usize {
    12
}
fn default_lr() -> f64 {
    0.05
}
fn default_w_corr() -> f64 {
    2.0
}
fn default_bank_capacity() -> usize {
    25
}
fn default_bank_decay() -> f64 {
    0.9
}
fn default_warm_up_epochs() -> usize {
    1
}
fn default_deep_channels() -> usize {
    4
}
fn default_reduction() -> usize {
    2
}
fn default_classifier_hidden() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_w_corr")]
    pub w_corr: f64,
    #[serde(default = "default_bank_capacity")]
    pub bank_capacity: usize,
    #[serde(default = "default_bank_decay")]
    pub bank_decay: f64,
    #[serde(default = "default_warm_up_epochs")]
    pub warm_up_epochs: usize,
    #[serde(default = "default_deep_channels")]
    pub deep_channels: usize,
    #[serde(default = "default_reduction")]
    pub attention_reduction: usize,
    #[serde(default = "default_classifier_hidden")]
    pub classifier_hidden: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: default_epochs(),
            learning_rate: default_lr(),
            w_corr: default_w_corr(),
            bank_capacity: default_bank_capacity(),
            bank_decay: default_bank_decay(),
            warm_up_epochs: default_warm_up_epochs(),
            deep_channels: default_deep_channels(),
            attention_reduction: default_reduction(),
            classifier_hidden: default_classifier_hidden(),
        }
    }
}

fn default_grid_size() -> usize {
    50
}
fn default_min_ratio() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSpec {
    #[serde(default = "default_grid_size")]
    pub lambda_grid_size: usize,
    #[serde(default = "default_min_ratio")]
    pub lambda_min_ratio: f64,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        SelectionSpec {
            lambda_grid_size: default_grid_size(),
            lambda_min_ratio: default_min_ratio(),
        }
    }
}

fn default_n_folds() -> usize {
    5
}

fn default_sweep() -> Vec<f64> {
    vec![1.5, 2.0, 2.5, 3.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_folds")]
    pub n_folds: usize,
    #[serde(default)]
    pub stratified: bool,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub extract: ExtractSpec,
    #[serde(default)]
    pub local: LocalMapSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub selection: SelectionSpec,
    /// w_corr grid for the sweep command.
    #[serde(default = "default_sweep")]
    pub sweep_w_corr: Vec<f64>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.manifest.is_none() && self.dataset.phantoms.is_none() {
            return Err(Error::Config(
                "dataset needs either a manifest or a phantoms spec".into(),
            ));
        }
        if let Some(p) = &self.dataset.phantoms {
            if p.count < 2 {
                return Err(Error::Config("phantom count must be at least 2".into()));
            }
        }
        if self.n_folds < 2 {
            return Err(Error::Config("n_folds must be at least 2".into()));
        }
        if !(self.extract.bin_width > 0.0) {
            return Err(Error::Config("extract.bin_width must be positive".into()));
        }
        if self.local.radii.iter().any(|&r| r < 1) {
            return Err(Error::Config("local radii must be >= 1".into()));
        }
        if self.train.w_corr < 0.0 {
            return Err(Error::Config("train.w_corr must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
            pipeline = "radiomics-lasso"
            out_dir = "/tmp/run"
            [dataset.phantoms]
            count = 20
            dims = [16, 16, 16]
        "#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.pipeline, Pipeline::RadiomicsLasso);
        assert_eq!(c.n_folds, 5);
        assert_eq!(c.extract.bin_width, 25.0);
        assert_eq!(c.local.radii, vec![1, 2]);
        assert_eq!(c.sweep_w_corr, vec![1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn dataset_must_name_a_source() {
        let text = r#"
            pipeline = "toy-ridl"
            out_dir = "/tmp/run"
            [dataset]
        "#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(c.validate().is_err());
    }
}
