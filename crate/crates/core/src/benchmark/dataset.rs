//! Noisy identification records from the CSTR plant, with CSV storage.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cstr::{simulate_plant, CstrParams};
use super::excitation::ExcitationConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub sample_period: f64,
    pub samples: usize,
    pub x0: [f64; 2],
    pub noise_std: f64,
    /// Seed of the measurement noise. The noise uses its own ChaCha stream,
    /// so it never overlaps an input signal generated from the same seed.
    pub seed: u64,
    pub substeps: usize,
    /// First test sample; `0..split` is the training window.
    pub split: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_period: 1.0,
            samples: 900,
            x0: [0.0, 0.0],
            noise_std: 0.05,
            seed: 0,
            substeps: 16,
            split: 500,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(Error::Config("sample period must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise std must be finite and non-negative".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("plant integration needs at least one substep".into()));
        }
        if self.split > self.samples {
            return Err(Error::Config(format!(
                "split index {} exceeds sample count {}",
                self.split, self.samples
            )));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetMeta {
    pub params: CstrParams,
    pub sim: SimConfig,
    pub excitation: Option<ExcitationConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub dataset: Dataset<f64>,
    /// Noise-free plant states, 2×N.
    pub states: DMatrix<f64>,
    pub meta: DatasetMeta,
}

/// The noise levels of the Monte Carlo study, 0.01 to 0.06.
pub fn monte_carlo_noise_levels() -> Vec<f64> {
    (1..=6).map(|i| i as f64 / 100.0).collect()
}

/// Simulates the plant under `input` and measures `y = x2 + v`,
/// `v ~ N(0, noise_std²)`.
pub fn generate_dataset(params: &CstrParams, sim: &SimConfig, input: &[f64]) -> Result<GeneratedData> {
    sim.validate()?;
    if input.len() != sim.samples {
        return Err(Error::dim("input samples", sim.samples, input.len()));
    }
    let x0 = Vector2::new(sim.x0[0], sim.x0[1]);
    let traj = simulate_plant(&x0, input, params, sim.sample_period, sim.substeps)?;
    let n = sim.samples;
    let states = DMatrix::from_fn(2, n, |r, c| traj[c][r]);

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, sim.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let outputs = DMatrix::from_fn(1, n, |_, c| {
        let v = if sim.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        states[(1, c)] + v
    });
    let inputs = DMatrix::from_row_slice(1, n, input);
    Ok(GeneratedData {
        dataset: Dataset::new(inputs, outputs, sim.split)?,
        states,
        meta: DatasetMeta {
            params: *params,
            sim: *sim,
            excitation: None,
        },
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Row {
    k: usize,
    u: f64,
    y: f64,
    split: String,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Document(format!("{}: {e}", path.display()))
}

/// Writes a single-input single-output record as `k,u,y,split`.
pub fn write_dataset_csv(path: &Path, data: &Dataset<f64>) -> Result<()> {
    if data.input_dim() != 1 || data.output_dim() != 1 {
        return Err(Error::Document("CSV records hold one input and one output".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for k in 0..data.len() {
        w.serialize(Row {
            k,
            u: data.inputs[(0, k)],
            y: data.outputs[(0, k)],
            split: if k < data.split { "train" } else { "test" }.into(),
        })
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let (mut u, mut y) = (Vec::new(), Vec::new());
    let mut split = None;
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| io_err(path, e))?;
        if row.k != i {
            return Err(io_err(path, format!("row {i} has k = {}", row.k)));
        }
        match (row.split.as_str(), split) {
            ("train", None) => {}
            ("train", Some(_)) => return Err(io_err(path, "training rows must precede test rows")),
            ("test", None) => split = Some(i),
            ("test", Some(_)) => {}
            (other, _) => return Err(io_err(path, format!("unknown split label {other:?}"))),
        }
        u.push(row.u);
        y.push(row.y);
    }
    let n = u.len();
    Dataset::new(
        DMatrix::from_row_slice(1, n, &u),
        DMatrix::from_row_slice(1, n, &y),
        split.unwrap_or(n),
    )
}

/// Path of the JSON metadata written next to `csv_path`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes the CSV and its metadata sidecar.
pub fn write_dataset(csv_path: &Path, data: &GeneratedData) -> Result<PathBuf> {
    write_dataset_csv(csv_path, &data.dataset)?;
    let meta = meta_path(csv_path);
    let text = serde_json::to_string_pretty(&data.meta).map_err(|e| io_err(&meta, e))?;
    std::fs::write(&meta, text + "\n").map_err(|e| io_err(&meta, e))?;
    Ok(meta)
}

/// Reads a CSV record and, when present, its metadata sidecar.
pub fn read_dataset(csv_path: &Path) -> Result<(Dataset<f64>, Option<DatasetMeta>)> {
    let data = read_dataset_csv(csv_path)?;
    let meta = meta_path(csv_path);
    let meta = if meta.exists() {
        let text = std::fs::read_to_string(&meta).map_err(|e| io_err(&meta, e))?;
        Some(serde_json::from_str(&text).map_err(|e| io_err(&meta, e))?)
    } else {
        None
    };
    Ok((data, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::excitation::generate_input;

    fn record(seed: u64, noise_std: f64, substeps: usize) -> GeneratedData {
        let u = generate_input(&ExcitationConfig {
            seed,
            ..Default::default()
        });
        let sim = SimConfig {
            seed,
            noise_std,
            substeps,
            ..Default::default()
        };
        generate_dataset(&CstrParams::default(), &sim, &u).unwrap()
    }

    #[test]
    fn clean_record_is_the_temperature() {
        let g = record(3, 0.0, 16);
        for k in 0..900 {
            assert_eq!(g.dataset.outputs[(0, k)], g.states[(1, k)]);
        }
        assert_eq!(g.dataset.split, 500);
        assert_eq!(g.dataset.training().len(), 500);
        assert_eq!(g.dataset.testing().len(), 400);
    }

    #[test]
    fn noise_level_matches() {
        for seed in 0..5 {
            let g = record(seed, 0.05, 16);
            let e: Vec<f64> = (0..900).map(|k| g.dataset.outputs[(0, k)] - g.states[(1, k)]).collect();
            let mean = e.iter().sum::<f64>() / 900.0;
            let std = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 899.0).sqrt();
            assert!((std - 0.05).abs() <= 0.15 * 0.05, "seed {seed}: std {std}");
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(record(4, 0.05, 16), record(4, 0.05, 16));
        assert_ne!(record(4, 0.05, 16).dataset.outputs, record(5, 0.05, 16).dataset.outputs);
    }

    #[test]
    fn conversion_stays_physical() {
        for seed in 0..10 {
            let g = record(seed, 0.0, 16);
            assert!(g.states.row(0).iter().all(|&x| (0.0..=1.0).contains(&x)), "seed {seed}");
        }
    }

    #[test]
    fn grid_refinement() {
        let s32 = record(6, 0.0, 32).states;
        let s64 = record(6, 0.0, 64).states;
        let s128 = record(6, 0.0, 128).states;
        let coarse = (&s32 - &s64).abs().max();
        let fine = (&s64 - &s128).abs().max();
        assert!(fine < 1e-8, "{fine}");
        assert!(coarse / fine > 12.0, "{coarse} vs {fine}");
    }

    #[test]
    fn noise_levels_grid() {
        let l = monte_carlo_noise_levels();
        assert_eq!(l.len(), 6);
        assert!((l[0] - 0.01).abs() < 1e-15 && (l[5] - 0.06).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("ssnno-ds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        let g = record(7, 0.05, 16);
        let meta = write_dataset(&path, &g).unwrap();
        assert!(meta.ends_with("data.meta.json"));
        let (back, m) = read_dataset(&path).unwrap();
        assert_eq!(back, g.dataset);
        assert_eq!(m.unwrap(), g.meta);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_bad_config() {
        let u = vec![0.0; 10];
        let sim = SimConfig {
            samples: 10,
            split: 11,
            ..Default::default()
        };
        assert!(generate_dataset(&CstrParams::default(), &sim, &u).is_err());
        let sim = SimConfig {
            samples: 10,
            split: 5,
            ..Default::default()
        };
        assert!(generate_dataset(&CstrParams::default(), &sim, &u[..9]).is_err());
    }
}
