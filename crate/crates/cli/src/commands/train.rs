use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ssnno_core::document::{save_model, write_history_csv, ReportDocument};
use ssnno_core::experiment::{evaluate_metrics, IdentificationSetup, Metrics};
use ssnno_core::model::is_variance_ordered;
use ssnno_core::reduction::ORDER_SLACK;

use super::{fmt_vec, load_data, write_json, Mode, ModelArgs, OutArgs};
use crate::manifest::Run;
use crate::{Job, NumericalFailure};

#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct TrainArgs {
    /// Record written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Mode::Ssnno)]
    pub mode: Mode,
    /// Permute and retrain until the state variances are ordered.
    #[arg(long)]
    pub repair: bool,
    /// Number of initializations; the lowest final training objective wins.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    /// File stem of the model, report and history.
    #[arg(long, default_value = "model")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, serde::Serialize)]
struct TrainOutput<'a> {
    status: &'a str,
    error: Option<String>,
    setup: &'a IdentificationSetup,
    seeds: &'a [u64],
    repair: bool,
    metrics: Option<Metrics>,
    report: Option<ReportDocument>,
}

impl TrainArgs {
    fn path(&self, suffix: &str) -> PathBuf {
        self.out.out_dir.join(format!("{}{suffix}", self.name))
    }
}

impl Job for TrainArgs {
    const NAME: &'static str = "train";

    fn out_dir(&self) -> &Path {
        &self.out.out_dir
    }

    fn stem(&self) -> String {
        self.name.clone()
    }

    fn execute(&self, run: &mut Run) -> Result<()> {
        let (data, _) = load_data(&self.data, run)?;
        let setup = self.model.setup(self.mode.into());
        setup.loss_weights()?;
        let seeds: Vec<u64> = (self.seed_base..self.seed_base + self.seeds).collect();
        run.seeds(seeds.iter().copied());
        run.phase("load");

        let result = setup.train(&data, &seeds, self.repair);
        run.phase("train");
        let report_path = self.path(".report.json");
        let failed = |error: String, report: Option<ReportDocument>, run: &mut Run| {
            let out = TrainOutput {
                status: "failed",
                error: Some(error),
                setup: &setup,
                seeds: &seeds,
                repair: self.repair,
                metrics: None,
                report,
            };
            write_json(&report_path, &out, run)
        };
        let report = match result {
            Ok(r) => r,
            Err(e) => {
                failed(e.to_string(), None, run)?;
                return Err(e).context("training failed");
            }
        };
        if self.repair && !is_variance_ordered(report.stats.variances.as_slice(), ORDER_SLACK) {
            let msg = format!("repair ended with unordered variances {}", fmt_vec(report.stats.variances.as_slice()));
            failed(msg.clone(), Some(ReportDocument::from_report(&report)), run)?;
            return Err(NumericalFailure(msg).into());
        }

        let model_path = self.path(".json");
        save_model(&model_path, &report.model)?;
        run.output(&model_path);
        let history = self.path(".history.csv");
        write_history_csv(&history, &report)?;
        run.output(&history);
        let metrics = evaluate_metrics(&report.model, &data)?;
        let out = TrainOutput {
            status: "ok",
            error: None,
            setup: &setup,
            seeds: &seeds,
            repair: self.repair,
            metrics: Some(metrics.clone()),
            report: Some(ReportDocument::from_report(&report)),
        };
        write_json(&report_path, &out, run)?;
        run.phase("write");

        println!(
            "trained {}: {} iterations, {:?}, {} repair rounds",
            model_path.display(),
            report.iterations,
            report.termination,
            report.repair.len()
        );
        println!("variances {}", fmt_vec(&metrics.variances));
        println!("MSE_tr {:.6}  MSE_ts {:.6}", metrics.mse_train, metrics.mse_test);
        Ok(())
    }
}
