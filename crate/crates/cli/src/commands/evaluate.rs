use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ssnno_core::document::load_model;
use ssnno_core::experiment::evaluate_metrics;

use super::{file_stem, load_data, metric_columns, metric_values, write_json, OutArgs};
use crate::manifest::Run;
use crate::Job;

/// Convention for the test window, stored next to the table.
const TEST_WINDOW: &str = "simulated on from the state reached at the end of the training window";

#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One or more model files; each becomes a column.
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
    /// Column labels, one per model; defaults to the file stems.
    #[arg(long, num_args = 1..)]
    pub label: Vec<String>,
    #[arg(long, default_value = "metrics")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(serde::Serialize)]
struct MetricsMeta<'a> {
    data: &'a Path,
    models: &'a [PathBuf],
    labels: &'a [String],
    mse: &'a str,
    test_window: &'a str,
}

impl Job for EvaluateArgs {
    const NAME: &'static str = "evaluate";

    fn out_dir(&self) -> &Path {
        &self.out.out_dir
    }

    fn stem(&self) -> String {
        self.name.clone()
    }

    fn execute(&self, run: &mut Run) -> Result<()> {
        let labels: Vec<String> = if self.label.is_empty() {
            self.model.iter().map(|p| file_stem(p)).collect()
        } else if self.label.len() == self.model.len() {
            self.label.clone()
        } else {
            bail!("{} labels given for {} models", self.label.len(), self.model.len());
        };
        let (data, _) = load_data(&self.data, run)?;
        let mut metrics = Vec::new();
        for path in &self.model {
            let loaded = load_model(path).with_context(|| format!("loading {}", path.display()))?;
            run.input(path);
            metrics.push(evaluate_metrics(loaded.model(), &data).with_context(|| format!("evaluating {}", path.display()))?);
        }
        run.phase("evaluate");

        let d = metrics.iter().map(|m| m.variances.len()).max().unwrap_or(0);
        let rows = metric_columns(d);
        let values: Vec<Vec<String>> = metrics.iter().map(|m| metric_values(m, d)).collect();
        let path = self.out.out_dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(std::iter::once("measure").chain(labels.iter().map(String::as_str)))?;
        for (i, row) in rows.iter().enumerate() {
            w.write_record(std::iter::once(row.as_str()).chain(values.iter().map(|v| v[i].as_str())))?;
        }
        w.flush()?;
        run.output(&path);
        let meta = MetricsMeta {
            data: &self.data,
            models: &self.model,
            labels: &labels,
            mse: "SPE / N per window",
            test_window: TEST_WINDOW,
        };
        write_json(&self.out.out_dir.join(format!("{}.meta.json", self.name)), &meta, run)?;

        println!("{:<8}{}", "measure", labels.iter().map(|l| format!("{l:>14}")).collect::<String>());
        for (i, row) in rows.iter().enumerate() {
            let cells: String = values
                .iter()
                .map(|v| match v[i].parse::<f64>() {
                    Ok(x) => format!("{x:>14.6}"),
                    Err(_) => format!("{:>14}", "-"),
                })
                .collect();
            println!("{row:<8}{cells}");
        }
        Ok(())
    }
}
