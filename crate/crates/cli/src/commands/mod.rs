mod evaluate;
mod generate;
mod montecarlo;
mod mpc;
mod reduce;
mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ssnno_core::benchmark::{meta_path, read_dataset, DatasetMeta};
use ssnno_core::experiment::{IdentificationSetup, Metrics};
use ssnno_core::training::{BaselineMode, TrainConfig};
use ssnno_core::Dataset;

use crate::manifest::Run;

pub use evaluate::EvaluateArgs;
pub use generate::GenerateArgs;
pub use montecarlo::McArgs;
pub use mpc::MpcArgs;
pub use reduce::ReduceArgs;
pub use train::TrainArgs;

#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct OutArgs {
    /// Directory for every file the command writes.
    #[arg(long, env = "SSNNO_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

/// Network size, loss weights and optimizer budget.
#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct ModelArgs {
    /// State dimension.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub state_hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub output_hidden: usize,
    /// Weight of the variance term.
    #[arg(long, default_value_t = 0.0025)]
    pub alpha: f64,
    /// Weight of the output-parameter penalty.
    #[arg(long, default_value_t = 0.25)]
    pub beta: f64,
    /// Strictly increasing variance weights, comma separated; defaults to 1..d.
    #[arg(long, value_delimiter = ',')]
    pub weights: Vec<f64>,
    #[arg(long, default_value_t = 3000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub gradient_tolerance: f64,
}

impl ModelArgs {
    pub fn setup(&self, mode: BaselineMode) -> IdentificationSetup {
        IdentificationSetup {
            state_dim: self.d,
            state_hidden: self.state_hidden,
            output_hidden: self.output_hidden,
            alpha: self.alpha,
            beta: self.beta,
            weights: self.weights.clone(),
            train: TrainConfig {
                max_iterations: self.max_iterations,
                gradient_tolerance: self.gradient_tolerance,
                mode,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Output error plus the variance and parameter terms.
    Ssnno,
    /// Output error only.
    Ssnn,
}

impl From<Mode> for BaselineMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Ssnno => BaselineMode::Ssnno,
            Mode::Ssnn => BaselineMode::SsnnSpeOnly,
        }
    }
}

/// Reads a record and registers it (and its metadata, if any) as input.
pub fn load_data(path: &Path, run: &mut Run) -> Result<(Dataset, Option<DatasetMeta>)> {
    let (data, meta) = read_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    run.input(path);
    if meta.is_some() {
        run.input(&meta_path(path));
    }
    Ok((data, meta))
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize, run: &mut Run) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    run.output(path);
    Ok(())
}

/// Column names of a metrics row for `d` states.
pub fn metric_columns(d: usize) -> Vec<String> {
    let mut cols: Vec<String> = (1..=d).map(|i| format!("V_x{i}")).collect();
    cols.push("MSE_tr".into());
    cols.push("MSE_ts".into());
    cols
}

/// Values in the order of [`metric_columns`], padded with blanks up to `d`.
pub fn metric_values(m: &Metrics, d: usize) -> Vec<String> {
    let mut vals: Vec<String> = (0..d)
        .map(|i| m.variances.get(i).map_or(String::new(), |v| v.to_string()))
        .collect();
    vals.push(m.mse_train.to_string());
    vals.push(m.mse_test.to_string());
    vals
}
