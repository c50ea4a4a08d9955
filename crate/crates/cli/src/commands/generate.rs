use std::path::Path;

use anyhow::{bail, Result};
use ssnno_core::benchmark::{generate_dataset, generate_input, write_dataset, CstrParams, ExcitationConfig, SimConfig};

use super::OutArgs;
use crate::manifest::Run;
use crate::Job;

#[derive(Debug, Clone, clap::Args, serde::Serialize)]
pub struct GenerateArgs {
    /// Seed of both the input signal and the measurement noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 900)]
    pub n_samples: usize,
    /// First test sample.
    #[arg(long, default_value_t = 500)]
    pub split: usize,
    /// Input level changes within the training window.
    #[arg(long, default_value_t = 45)]
    pub input_steps: usize,
    /// File stem of the record.
    #[arg(long, default_value = "dataset")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

impl Job for GenerateArgs {
    const NAME: &'static str = "generate";

    fn out_dir(&self) -> &Path {
        &self.out.out_dir
    }

    fn stem(&self) -> String {
        self.name.clone()
    }

    fn execute(&self, run: &mut Run) -> Result<()> {
        let sim = SimConfig {
            samples: self.n_samples,
            split: self.split,
            noise_std: self.noise_std,
            seed: self.seed,
            ..SimConfig::default()
        };
        if self.split == 0 || self.split >= self.n_samples {
            bail!("--split must leave samples on both sides (got {} of {})", self.split, self.n_samples);
        }
        sim.validate()?;
        let excitation = ExcitationConfig {
            seed: self.seed,
            samples: self.n_samples,
            steps: self.input_steps,
            window: self.split,
            ..ExcitationConfig::default()
        };
        run.seeds([self.seed]);
        let u = generate_input(&excitation);
        let mut g = generate_dataset(&CstrParams::default(), &sim, &u)?;
        g.meta.excitation = Some(excitation);
        run.phase("simulate");
        let csv = self.out.out_dir.join(format!("{}.csv", self.name));
        let meta = write_dataset(&csv, &g)?;
        run.output(&csv);
        run.output(&meta);
        run.phase("write");
        println!(
            "wrote {} ({} samples, split {}, noise std {})",
            csv.display(),
            self.n_samples,
            self.split,
            self.noise_std
        );
        Ok(())
    }
}
