use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use ssnno_core::benchmark::monte_carlo_noise_levels;
use ssnno_core::experiment::{aggregate, monte_carlo_cell, Metrics};
use ssnno_core::training::BaselineMode;

use super::{metric_columns, metric_values, Mode, ModelArgs, OutArgs};
use crate::manifest::Run;
use crate::{Job, NumericalFailure};

#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct McArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Noise standard deviations, comma separated; defaults to 0.01..0.06.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
    /// Initializations per record.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    /// The record at level index `i` uses data seed `data_seed_base + i`.
    #[arg(long, default_value_t = 1000)]
    pub data_seed_base: u64,
    /// Two levels (lowest and highest) and two initializations.
    #[arg(long)]
    pub fast: bool,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "montecarlo")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

struct Cell {
    level: f64,
    data_seed: u64,
    mode: Mode,
    result: ssnno_core::Result<Metrics>,
}

impl McArgs {
    fn grid(&self) -> (Vec<f64>, Vec<u64>) {
        let mut levels = if self.levels.is_empty() { monte_carlo_noise_levels() } else { self.levels.clone() };
        let mut count = self.seeds;
        if self.fast {
            levels = vec![levels[0], levels[levels.len() - 1]];
            levels.dedup();
            count = count.min(2);
        }
        (levels, (self.seed_base..self.seed_base + count).collect())
    }
}

impl Job for McArgs {
    const NAME: &'static str = "montecarlo";

    fn out_dir(&self) -> &Path {
        &self.out.out_dir
    }

    fn stem(&self) -> String {
        self.name.clone()
    }

    fn execute(&self, run: &mut Run) -> Result<()> {
        let (levels, seeds) = self.grid();
        if levels.iter().any(|l| !(*l >= 0.0)) {
            bail!("noise levels must be non-negative");
        }
        self.model.setup(BaselineMode::Ssnno).loss_weights()?;
        run.seeds(seeds.iter().copied());
        run.seeds((0..levels.len() as u64).map(|i| self.data_seed_base + i));

        let jobs: Vec<(usize, Mode)> = (0..levels.len()).flat_map(|i| [(i, Mode::Ssnno), (i, Mode::Ssnn)]).collect();
        let work = || -> Vec<Cell> {
            jobs.par_iter()
                .map(|&(i, mode)| {
                    let data_seed = self.data_seed_base + i as u64;
                    let setup = self.model.setup(mode.into());
                    let result = monte_carlo_cell(&setup, levels[i], data_seed, &seeds, mode.into()).map(|c| c.metrics);
                    if let Err(e) = &result {
                        log::warn!("cell noise {} mode {mode:?} failed: {e}", levels[i]);
                    }
                    Cell {
                        level: levels[i],
                        data_seed,
                        mode,
                        result,
                    }
                })
                .collect()
        };
        let cells = match self.threads {
            Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work),
            None => work(),
        };
        run.phase("cells");

        let d = self.model.d;
        let cols = metric_columns(d);
        let cells_path = self.out.out_dir.join(format!("{}.cells.csv", self.name));
        let mut w = csv::Writer::from_path(&cells_path).with_context(|| format!("writing {}", cells_path.display()))?;
        let mut header = vec!["noise_std".to_string(), "data_seed".into(), "mode".into(), "status".into()];
        header.extend(cols.iter().cloned());
        header.push("error".into());
        w.write_record(&header)?;
        for c in &cells {
            let mut row = vec![c.level.to_string(), c.data_seed.to_string(), mode_name(c.mode).into()];
            match &c.result {
                Ok(m) => {
                    row.push("ok".into());
                    row.extend(metric_values(m, d));
                    row.push(String::new());
                }
                Err(e) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(String::new(), cols.len()));
                    row.push(e.to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        run.output(&cells_path);

        let agg_path = self.out.out_dir.join(format!("{}.aggregate.csv", self.name));
        let mut w = csv::Writer::from_path(&agg_path).with_context(|| format!("writing {}", agg_path.display()))?;
        let mut header = vec!["mode".to_string(), "statistic".into(), "count".into()];
        header.extend(cols.iter().cloned());
        w.write_record(&header)?;
        let mut summary = Vec::new();
        for mode in [Mode::Ssnno, Mode::Ssnn] {
            let ok: Vec<Metrics> = cells
                .iter()
                .filter(|c| c.mode == mode)
                .filter_map(|c| c.result.as_ref().ok().cloned())
                .collect();
            let Some(a) = aggregate(&ok) else {
                continue;
            };
            for (stat, m) in [("mean", &a.mean), ("variance", &a.variance)] {
                let mut row = vec![mode_name(mode).to_string(), stat.into(), a.count.to_string()];
                row.extend(metric_values(m, d));
                w.write_record(&row)?;
            }
            summary.push((mode, a));
        }
        w.flush()?;
        run.output(&agg_path);
        run.phase("aggregate");

        let failures = cells.iter().filter(|c| c.result.is_err()).count();
        println!("{} levels x {} initializations, {} of {} cells failed", levels.len(), seeds.len(), failures, cells.len());
        for (mode, a) in &summary {
            println!(
                "{:<6} mean V {}  MSE_tr {:.6}  MSE_ts {:.6}",
                mode_name(*mode),
                super::fmt_vec(&a.mean.variances),
                a.mean.mse_train,
                a.mean.mse_test
            );
        }
        if failures == cells.len() {
            return Err(NumericalFailure("every Monte Carlo cell failed".into()).into());
        }
        Ok(())
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Ssnno => "ssnno",
        Mode::Ssnn => "ssnn",
    }
}
