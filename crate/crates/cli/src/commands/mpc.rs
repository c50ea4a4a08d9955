use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use ssnno_core::control::{closed_loop_run, quarterly_targets, ClosedLoopConfig, EkfConfig, MpcConfig};
use ssnno_core::document::load_model;

use super::{load_data, OutArgs};
use crate::manifest::Run;
use crate::{Job, NumericalFailure};

#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct MpcArgs {
    /// Control model, usually the output of `reduce`.
    #[arg(long)]
    pub model: PathBuf,
    /// Full-order model whose open-loop prediction is logged alongside.
    #[arg(long)]
    pub full: Option<PathBuf>,
    /// Record whose metadata supplies the plant parameters; defaults apply
    /// without it.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Diagonal of the state weight, one value per model state.
    #[arg(long, value_delimiter = ',')]
    pub q: Vec<f64>,
    /// Input weight.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub u_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub u_max: Option<f64>,
    /// Loop length; the target drops once per quarter.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.7)]
    pub start: f64,
    #[arg(long, default_value_t = 0.1)]
    pub decrement: f64,
    /// Standard deviation of the noise on the measurement fed to the filter.
    #[arg(long, default_value_t = 0.0)]
    pub measurement_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long, default_value = "mpc")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

impl MpcArgs {
    fn mpc_config(&self, s: usize) -> Result<MpcConfig<f64>> {
        let mut cfg = MpcConfig::for_order(s, 1);
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if !self.q.is_empty() {
            if self.q.len() != s {
                bail!("--q needs {s} values for a model with {s} states, got {}", self.q.len());
            }
            cfg.q = DMatrix::from_diagonal(&DVector::from_vec(self.q.clone()));
        }
        if let Some(r) = self.r {
            cfg.r = DMatrix::from_element(1, 1, r);
        }
        if let Some(v) = self.u_min {
            cfg.u_min = DVector::from_element(1, v);
        }
        if let Some(v) = self.u_max {
            cfg.u_max = DVector::from_element(1, v);
        }
        cfg.validate(s, 1)?;
        Ok(cfg)
    }
}

impl Job for MpcArgs {
    const NAME: &'static str = "mpc";

    fn out_dir(&self) -> &Path {
        &self.out.out_dir
    }

    fn stem(&self) -> String {
        self.name.clone()
    }

    fn execute(&self, run: &mut Run) -> Result<()> {
        let control = load_model(&self.model).with_context(|| format!("loading {}", self.model.display()))?;
        run.input(&self.model);
        let full = match &self.full {
            Some(p) => {
                let m = load_model(p).with_context(|| format!("loading {}", p.display()))?;
                run.input(p);
                Some(m)
            }
            None => None,
        };
        let mut loop_cfg = ClosedLoopConfig {
            targets: quarterly_targets(self.steps, self.start, self.decrement),
            measurement_noise: self.measurement_noise,
            noise_seed: self.noise_seed,
            ..ClosedLoopConfig::default()
        };
        if let Some(p) = &self.dataset {
            let (_, meta) = load_data(p, run)?;
            let Some(meta) = meta else {
                bail!("{} has no metadata with plant parameters", p.display());
            };
            loop_cfg.params = meta.params;
            loop_cfg.sample_period = meta.sim.sample_period;
            loop_cfg.substeps = meta.sim.substeps;
        }
        run.seeds([self.noise_seed]);
        let model = control.model();
        let s = model.state_dim();
        let mpc = self.mpc_config(s)?;
        let ekf = EkfConfig::for_order(s, 1);
        run.phase("load");

        let log = closed_loop_run(&loop_cfg, model, full.as_ref().map(|m| m.model()), &ekf, &mpc)?;
        run.phase("loop");
        let path = self.out.out_dir.join(format!("{}.csv", self.name));
        log.write_csv(&path)?;
        run.output(&path);
        run.phase("write");

        println!("wrote {} ({} steps, order {s}, horizon {})", path.display(), log.records.len(), mpc.horizon);
        for (target, err) in log.segment_tail_errors(10) {
            println!("  target {target:.3}: worst |y - y_t| over the last 10 steps {err:.5}");
        }
        if let Some(e) = log.failure {
            return Err(NumericalFailure(format!("loop stopped after {} steps: {e}", log.records.len())).into());
        }
        Ok(())
    }
}
