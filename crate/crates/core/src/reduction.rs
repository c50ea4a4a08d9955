//! Order reduction by freezing low-variance states at their mean.
//!
//! States with variance above `δ` are significant. The remaining (residual)
//! states are replaced by their training-window mean, whose contribution is
//! folded into the biases of the first state layer and the first output
//! layer. The last state layer keeps only the rows of the significant states.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{variance_stats, Architecture, Layer, SsnnModel, Trajectory};
use crate::scalar::Real;

/// Default significance threshold.
pub const DEFAULT_DELTA: f64 = 0.0005;

/// Ordering slack accepted when checking the input model.
pub const ORDER_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport<T: Real> {
    pub delta: T,
    pub variances: DVector<T>,
    pub significant_count: usize,
    /// Mean of the residual states over the training window.
    pub residual_mean: DVector<T>,
}

/// Order-`s` network plus the data it was derived with.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel<T: Real> {
    pub model: SsnnModel<T>,
    pub delta: T,
    pub residual_mean: DVector<T>,
    /// State dimension of the source network.
    pub source_order: usize,
}

impl<T: Real> ReducedModel<T> {
    pub fn order(&self) -> usize {
        self.model.state_dim()
    }

    pub fn simulate(&self, inputs: &DMatrix<T>) -> Result<Trajectory<T>> {
        reduced_simulate(self, inputs)
    }
}

/// Splits states into significant (`V > δ`) and residual ones using the
/// training window of `data`.
pub fn classify_states<T: Real>(model: &SsnnModel<T>, data: &Dataset<T>, delta: T) -> Result<SignificanceReport<T>> {
    if !(delta >= T::zero()) {
        return Err(Error::Config("delta must be non-negative".into()));
    }
    let training = data.training();
    let traj = model.simulate(&training.inputs)?;
    let stats = variance_stats(&traj.states)?;
    let v = stats.variances.as_slice();
    let slack = T::lit(ORDER_SLACK);
    if let Some(i) = (0..v.len().saturating_sub(1)).find(|&i| v[i] < v[i + 1] - slack) {
        return Err(Error::Unordered {
            index: i + 1,
            prev: v[i].as_f64(),
            next: v[i + 1].as_f64(),
        });
    }
    let s = significant_count(v, delta);
    // With ordered variances the significant states form a prefix.
    let d = v.len();
    let residual_mean = stats.mean.rows(s, d - s).into_owned();
    Ok(SignificanceReport {
        delta,
        variances: stats.variances.clone(),
        significant_count: s,
        residual_mean,
    })
}

/// Number of variances strictly above `delta`.
pub fn significant_count<T: Real>(variances: &[T], delta: T) -> usize {
    variances.iter().filter(|&&v| v > delta).count()
}

/// Builds the order-`s` model without retraining.
pub fn reduce<T: Real>(model: &SsnnModel<T>, report: &SignificanceReport<T>) -> Result<ReducedModel<T>> {
    model.validate()?;
    let d = model.state_dim();
    let m = model.input_dim();
    let s = report.significant_count;
    if report.variances.len() != d {
        return Err(Error::dim("significance report", d, report.variances.len()));
    }
    if s > d || report.residual_mean.len() != d - s {
        return Err(Error::dim("residual mean", d - s.min(d), report.residual_mean.len()));
    }
    if s == 0 {
        return Err(Error::EmptyReduction {
            delta: report.delta.as_f64(),
        });
    }
    let xr = &report.residual_mean;

    let mut state_layers = model.state_layers.clone();
    // First state layer: keep [A_f1s | A_f1u], b_f1s = b_f1 + A_f1r x̄_r.
    {
        let first = &model.state_layers[0];
        let rows = first.outputs();
        let mut weights = DMatrix::zeros(rows, s + m);
        weights.columns_mut(0, s).copy_from(&first.weights.columns(0, s));
        weights.columns_mut(s, m).copy_from(&first.weights.columns(d, m));
        let bias = if s < d {
            &first.bias + first.weights.columns(s, d - s) * xr
        } else {
            first.bias.clone()
        };
        state_layers[0] = Layer {
            weights,
            bias,
            activation: first.activation,
        };
    }
    // Last state layer: first s rows.
    {
        let last = state_layers.len() - 1;
        let layer = &state_layers[last];
        state_layers[last] = Layer {
            weights: layer.weights.rows(0, s).into_owned(),
            bias: layer.bias.rows(0, s).into_owned(),
            activation: layer.activation,
        };
    }

    let mut output_layers = model.output_layers.clone();
    {
        let first = &model.output_layers[0];
        let bias = if s < d {
            &first.bias + first.weights.columns(s, d - s) * xr
        } else {
            first.bias.clone()
        };
        output_layers[0] = Layer {
            weights: first.weights.columns(0, s).into_owned(),
            bias,
            activation: first.activation,
        };
    }

    let mut state_widths = model.arch.state_widths.clone();
    *state_widths.last_mut().unwrap() = s;
    let arch = Architecture::new(s, m, model.output_dim(), state_widths, model.arch.output_widths.clone())?;
    let reduced = SsnnModel::from_parts(arch, state_layers, output_layers, model.x0.rows(0, s).into_owned())?;
    Ok(ReducedModel {
        model: reduced,
        delta: report.delta,
        residual_mean: xr.clone(),
        source_order: d,
    })
}

pub fn reduced_simulate<T: Real>(rm: &ReducedModel<T>, inputs: &DMatrix<T>) -> Result<Trajectory<T>> {
    rm.model.simulate(inputs)
}
