//! Persisted run results.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::config::ExperimentConfig;

/// One template's model within one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub template_id: u32,
    pub accuracy: Option<f64>,
    /// 1-based epoch of the retained checkpoint; absent without training.
    pub best_epoch: Option<usize>,
    pub validation_accuracy: Vec<f64>,
    pub label_words: usize,
    /// Why the member was excluded from the ensemble.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub train_size: usize,
    pub valid_size: usize,
    pub members: Vec<MemberReport>,
    /// Absent when every member failed.
    pub ensemble_accuracy: Option<f64>,
}

/// Results of one verbalizer variant across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub seeds: Vec<SeedReport>,
    pub mean: Option<f64>,
    /// Population standard deviation across seeds.
    pub std: Option<f64>,
}

impl VariantReport {
    pub fn new(name: impl Into<String>, seeds: Vec<SeedReport>) -> Self {
        let accs: Vec<f64> = seeds.iter().filter_map(|s| s.ensemble_accuracy).collect();
        let (mean, std) = match mean_std(&accs) {
            Some((m, s)) => (Some(m), Some(s)),
            None => (None, None),
        };
        Self {
            name: name.into(),
            seeds,
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub started_at: String,
    pub finished_at: String,
    pub stratified: bool,
    pub test_size: usize,
    pub variants: Vec<VariantReport>,
}

impl RunReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Mean and population standard deviation; `None` for an empty slice.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
