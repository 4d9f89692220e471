//! Run configuration shared by the command-line harness and the experiments.
//!
//! A [`RunConfig`] is one JSON document. Missing fields take their defaults.
//! The nested component configs carry their own seeds and sizes, but
//! [`RunConfig::effective`] overwrites those from the top-level fields so a
//! single master seed reproduces every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::{DEFAULT_BETA, DEFAULT_CONTROL_TAPS, DEFAULT_MU};
use crate::bank::{DatasetRanges, PretrainConfig, SplitSizes};
use crate::classifier::{ModelConfig, TrainConfig};
use crate::dsp::{design_bandpass, PathModel};
use crate::error::{invalid, Result};
use crate::hybrid::{ScenarioConfig, SimConfig};
use crate::noise::mix_seed;

/// Sub-seed streams derived from the master seed.
const PRETRAIN_STREAM: u64 = 1;
const DATASET_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const MODEL_INIT_STREAM: u64 = 4;
const SCENARIO_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub mu: f64,
    pub beta: f64,
    pub filter_taps: usize,
    /// Length of the band-pass primary and secondary paths.
    pub path_taps: usize,
    pub path_low_hz: f64,
    pub path_high_hz: f64,
    pub dataset: SplitSizes,
    pub dataset_ranges: DatasetRanges,
    /// Master seed.
    pub seed: u64,
    pub bank_path: PathBuf,
    pub dataset_path: PathBuf,
    pub model_path: PathBuf,
    pub out_dir: PathBuf,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fs = crate::DEFAULT_SAMPLE_RATE_HZ;
        RunConfig {
            sample_rate_hz: fs,
            frame_len: fs as usize,
            mu: DEFAULT_MU,
            beta: DEFAULT_BETA,
            filter_taps: DEFAULT_CONTROL_TAPS,
            path_taps: 255,
            path_low_hz: 20.0,
            path_high_hz: 7980.0,
            dataset: SplitSizes::default(),
            dataset_ranges: DatasetRanges::default(),
            seed: 2022,
            bank_path: PathBuf::from("artifacts/bank.ancb"),
            dataset_path: PathBuf::from("artifacts/dataset.ancd"),
            model_path: PathBuf::from("artifacts/model.ancm"),
            out_dir: PathBuf::from("out"),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with the nested configs synchronised to the top-level fields.
    pub fn effective(&self) -> RunConfig {
        let mut c = self.clone();
        c.pretrain.taps = c.filter_taps;
        c.pretrain.sample_rate_hz = c.sample_rate_hz;
        c.pretrain.seed = mix_seed(c.seed, PRETRAIN_STREAM);
        c.train.seed = mix_seed(c.seed, TRAIN_STREAM);
        c.scenario.sample_rate_hz = c.sample_rate_hz;
        c.model.input_len = c.frame_len;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || self.frame_len == 0 {
            return Err(invalid("sample rate and frame length must be positive"));
        }
        if self.filter_taps == 0 || self.path_taps == 0 {
            return Err(invalid("filter and path lengths must be positive"));
        }
        if !(self.mu > 0.0) || !(self.beta > 0.0) {
            return Err(invalid("mu and beta must be positive"));
        }
        if self.dataset.train == 0 || self.dataset.validation == 0 || self.dataset.test == 0 {
            return Err(invalid("every dataset split needs at least one entry"));
        }
        self.model.validate()
    }

    pub fn dataset_seed(&self) -> u64 {
        mix_seed(self.seed, DATASET_STREAM)
    }

    pub fn model_init_seed(&self) -> u64 {
        mix_seed(self.seed, MODEL_INIT_STREAM)
    }

    /// Seed of the scenario noise for experiment repetition `rep`.
    pub fn scenario_seed(&self, rep: u64) -> u64 {
        mix_seed(mix_seed(self.seed, SCENARIO_STREAM), rep)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            mu: self.mu,
            beta: self.beta,
            filter_taps: self.filter_taps,
            frame_len: self.frame_len,
        }
    }

    /// Band-pass primary and secondary paths with a perfect secondary estimate.
    pub fn paths(&self) -> Result<PathModel> {
        let p = design_bandpass(self.path_low_hz, self.path_high_hz, self.path_taps, self.sample_rate_hz)?;
        Ok(PathModel::new(p.clone(), p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_document_keeps_defaults() {
        let c = RunConfig::from_json(r#"{"mu": 0.001, "dataset": {"train": 10}}"#).unwrap();
        assert_eq!(c.mu, 0.001);
        assert_eq!(c.dataset.train, 10);
        assert_eq!(c.dataset.validation, 500);
        assert_eq!(c.filter_taps, 1024);
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(RunConfig::from_json(r#"{"mux": 1}"#).is_err());
    }

    #[test]
    fn effective_seeds_follow_master() {
        let mut a = RunConfig::default();
        a.pretrain.seed = 5;
        let b = RunConfig { seed: 9, ..a.clone() };
        assert_eq!(a.effective().pretrain.seed, RunConfig::default().effective().pretrain.seed);
        assert_ne!(a.effective().pretrain.seed, b.effective().pretrain.seed);
        assert_ne!(a.dataset_seed(), b.dataset_seed());
    }
}
