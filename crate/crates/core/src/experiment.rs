//! The CSTR identification experiments: data, metrics and Monte Carlo cells.

use crate::benchmark::{generate_dataset, generate_input, CstrParams, ExcitationConfig, GeneratedData, SimConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{variance_stats, Architecture, SsnnModel};
use crate::training::{train_best_of, BaselineMode, LossWeights, TrainConfig, TrainReport};

/// Record with input and noise both drawn from `seed`.
pub fn cstr_dataset(seed: u64, noise_std: f64) -> Result<GeneratedData> {
    let excitation = ExcitationConfig {
        seed,
        ..Default::default()
    };
    let sim = SimConfig {
        seed,
        noise_std,
        ..Default::default()
    };
    let u = generate_input(&excitation);
    let mut g = generate_dataset(&CstrParams::default(), &sim, &u)?;
    g.meta.excitation = Some(excitation);
    Ok(g)
}

/// Hyperparameters of the identification runs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IdentificationSetup {
    pub state_dim: usize,
    pub state_hidden: usize,
    pub output_hidden: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Diagonal of `W`; empty means `1, 2, …, d`.
    pub weights: Vec<f64>,
    pub train: TrainConfig,
}

impl Default for IdentificationSetup {
    fn default() -> Self {
        Self {
            state_dim: 3,
            state_hidden: 3,
            output_hidden: 3,
            alpha: 0.0025,
            beta: 0.25,
            weights: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

impl IdentificationSetup {
    pub fn architecture(&self, inputs: usize, outputs: usize) -> Result<Architecture> {
        Architecture::two_layer(self.state_dim, inputs, outputs, self.state_hidden, self.output_hidden)
    }

    pub fn loss_weights(&self) -> Result<LossWeights<f64>> {
        if self.weights.is_empty() {
            LossWeights::with_linear_ramp(self.alpha, self.beta, self.state_dim)
        } else if self.weights.len() != self.state_dim {
            Err(Error::dim("variance weights", self.state_dim, self.weights.len()))
        } else {
            LossWeights::new(self.alpha, self.beta, nalgebra::DVector::from_vec(self.weights.clone()))
        }
    }

    /// Best of `seeds` by final training objective.
    pub fn train(&self, data: &Dataset<f64>, seeds: &[u64], repair: bool) -> Result<TrainReport<f64>> {
        let arch = self.architecture(data.input_dim(), data.output_dim())?;
        train_best_of(data, &arch, &self.loss_weights()?, &self.train, seeds, repair)
    }
}

/// Measures reported per model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    /// State variances over the training window.
    pub variances: Vec<f64>,
    pub mse_train: f64,
    /// Test window simulated on from the state reached at the end of the
    /// training window.
    pub mse_test: f64,
}

/// `SPE / N` on both windows from one simulation of the whole record.
pub fn evaluate_metrics(model: &SsnnModel<f64>, data: &Dataset<f64>) -> Result<Metrics> {
    if model.input_dim() != data.input_dim() || model.output_dim() != data.output_dim() {
        return Err(Error::dim("model/data channels", data.input_dim(), model.input_dim()));
    }
    let traj = model.simulate(&data.inputs)?;
    let mse = |from: usize, to: usize| {
        if to <= from {
            return f64::NAN;
        }
        let e = traj.outputs.columns(from, to - from) - data.outputs.columns(from, to - from);
        e.norm_squared() / (to - from) as f64
    };
    let stats = variance_stats(&traj.states.columns(0, data.split).into_owned())?;
    Ok(Metrics {
        variances: stats.variances.iter().copied().collect(),
        mse_train: mse(0, data.split),
        mse_test: mse(data.split, data.len()),
    })
}

/// One Monte Carlo cell: a record at one noise level, trained from several
/// initializations, keeping the lowest training objective.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CellOutcome {
    pub noise_std: f64,
    pub data_seed: u64,
    pub mode: BaselineMode,
    pub metrics: Metrics,
}

pub fn monte_carlo_cell(
    setup: &IdentificationSetup,
    noise_std: f64,
    data_seed: u64,
    init_seeds: &[u64],
    mode: BaselineMode,
) -> Result<CellOutcome> {
    let g = cstr_dataset(data_seed, noise_std)?;
    let setup = IdentificationSetup {
        train: TrainConfig {
            mode,
            ..setup.train.clone()
        },
        ..setup.clone()
    };
    let repair = mode == BaselineMode::Ssnno;
    let report = setup.train(&g.dataset, init_seeds, repair)?;
    Ok(CellOutcome {
        noise_std,
        data_seed,
        mode,
        metrics: evaluate_metrics(&report.model, &g.dataset)?,
    })
}

/// Sample mean and variance (`1/(n-1)`, zero for a single value) per measure.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: Metrics,
    pub variance: Metrics,
}

pub fn aggregate(metrics: &[Metrics]) -> Option<Aggregate> {
    let n = metrics.len();
    let d = metrics.first()?.variances.len();
    if metrics.iter().any(|m| m.variances.len() != d) {
        return None;
    }
    let stat = |f: &dyn Fn(&Metrics) -> f64| {
        let mean = metrics.iter().map(f).sum::<f64>() / n as f64;
        let var = if n > 1 {
            metrics.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        (mean, var)
    };
    let vs: Vec<(f64, f64)> = (0..d).map(|i| stat(&|m: &Metrics| m.variances[i])).collect();
    let tr = stat(&|m: &Metrics| m.mse_train);
    let ts = stat(&|m: &Metrics| m.mse_test);
    Some(Aggregate {
        count: n,
        mean: Metrics {
            variances: vs.iter().map(|v| v.0).collect(),
            mse_train: tr.0,
            mse_test: ts.0,
        },
        variance: Metrics {
            variances: vs.iter().map(|v| v.1).collect(),
            mse_train: tr.1,
            mse_test: ts.1,
        },
    })
}
