use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ssnno_core::document::{load_model, save_reduced};
use ssnno_core::reduction::{classify_states, reduce, DEFAULT_DELTA};

use super::{file_stem, load_data, OutArgs};
use crate::manifest::Run;
use crate::Job;

#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct ReduceArgs {
    /// Model written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Record whose training window defines the variances.
    #[arg(long)]
    pub data: PathBuf,
    /// States with variance at or below this are frozen at their mean.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// File stem of the reduced model; defaults to `<model>.reduced`.
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

impl Job for ReduceArgs {
    const NAME: &'static str = "reduce";

    fn out_dir(&self) -> &Path {
        &self.out.out_dir
    }

    fn stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}.reduced", file_stem(&self.model)))
    }

    fn execute(&self, run: &mut Run) -> Result<()> {
        let loaded = load_model(&self.model).with_context(|| format!("loading {}", self.model.display()))?;
        run.input(&self.model);
        let (data, _) = load_data(&self.data, run)?;
        let model = loaded.model();
        let report = classify_states(model, &data, self.delta)?;
        println!("delta {}: {} of {} states significant", self.delta, report.significant_count, model.state_dim());
        for (i, v) in report.variances.iter().enumerate() {
            if i < report.significant_count {
                println!("  x{}  V = {v:.6e}  significant", i + 1);
            } else {
                let mean = report.residual_mean[i - report.significant_count];
                println!("  x{}  V = {v:.6e}  frozen at {mean:.6}", i + 1);
            }
        }
        let rm = reduce(model, &report)?;
        let path = self.out.out_dir.join(format!("{}.json", self.stem()));
        save_reduced(&path, &rm)?;
        run.output(&path);
        run.phase("reduce");
        println!("wrote {} (order {})", path.display(), rm.order());
        Ok(())
    }
}
