//! Variance-regularized prediction loss and its exact gradient.
//!
//! ```text
//! J = ||Y - Ŷ||_F²  +  α ||W^½ (X - X̄)||_F²  +  β ||θ_g||²
//!     ─── J_y ───      ──────── J_v ───────       ── J_g ──
//! ```
//!
//! The gradient is obtained by reverse-mode differentiation through the
//! unrolled state recursion, including the dependence on the initial state.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{concat, Layer, SsnnModel};
use crate::scalar::Real;

/// `α`, `β` and the diagonal of the variance weighting matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights<T: Real> {
    pub alpha: T,
    pub beta: T,
    pub w: DVector<T>,
}

impl<T: Real> LossWeights<T> {
    /// Requires `α, β > 0` and `0 ≤ w[0] < w[1] < …`.
    pub fn new(alpha: T, beta: T, w: DVector<T>) -> Result<Self> {
        if !(alpha > T::zero()) || !(beta > T::zero()) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if w.is_empty() {
            return Err(Error::Config("variance weights must not be empty".into()));
        }
        if w.iter().any(|v| !v.is_finite()) || w[0] < T::zero() {
            return Err(Error::Config("variance weights must be finite and non-negative".into()));
        }
        if w.as_slice().windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config("variance weights must be strictly increasing".into()));
        }
        Ok(Self { alpha, beta, w })
    }

    /// `W = diag(1, 2, …, d)`.
    pub fn with_linear_ramp(alpha: T, beta: T, state_dim: usize) -> Result<Self> {
        let w = DVector::from_fn(state_dim, |i, _| T::from_usize(i + 1).unwrap());
        Self::new(alpha, beta, w)
    }

    pub fn coefficients(&self) -> Coefficients<T> {
        Coefficients {
            alpha: self.alpha,
            beta: self.beta,
            w: self.w.clone(),
        }
    }
}

/// Objective coefficients without the positivity requirement, so that the
/// prediction-error-only baseline (`α = β = 0`) uses the same code path.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T: Real> {
    pub alpha: T,
    pub beta: T,
    pub w: DVector<T>,
}

impl<T: Real> Coefficients<T> {
    pub fn spe_only(state_dim: usize) -> Self {
        Self {
            alpha: T::zero(),
            beta: T::zero(),
            w: DVector::zeros(state_dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T: Real> {
    pub total: T,
    /// `J_y`
    pub spe: T,
    /// `J_v`
    pub variance: T,
    /// `J_g`
    pub param: T,
}

impl<T: Real> LossBreakdown<T> {
    fn combine(spe: T, variance: T, param: T, alpha: T, beta: T) -> Self {
        Self {
            total: spe + alpha * variance + beta * param,
            spe,
            variance,
            param,
        }
    }

    /// Same components, total recomputed with other coefficients.
    pub fn reweighted(&self, alpha: T, beta: T) -> Self {
        Self::combine(self.spe, self.variance, self.param, alpha, beta)
    }
}

pub fn loss<T: Real>(model: &SsnnModel<T>, data: &Dataset<T>, weights: &LossWeights<T>) -> Result<LossBreakdown<T>> {
    evaluate(model, data, &weights.coefficients(), false).map(|(l, _)| l)
}

/// Gradient of the total loss with respect to [`SsnnModel::flatten`].
pub fn loss_gradient<T: Real>(model: &SsnnModel<T>, data: &Dataset<T>, weights: &LossWeights<T>) -> Result<DVector<T>> {
    loss_and_gradient(model, data, weights).map(|(_, g)| g)
}

pub fn loss_and_gradient<T: Real>(
    model: &SsnnModel<T>,
    data: &Dataset<T>,
    weights: &LossWeights<T>,
) -> Result<(LossBreakdown<T>, DVector<T>)> {
    let (l, g) = evaluate(model, data, &weights.coefficients(), true)?;
    Ok((l, g.expect("gradient requested")))
}

fn check_data<T: Real>(model: &SsnnModel<T>, data: &Dataset<T>, coef: &Coefficients<T>) -> Result<()> {
    if data.input_dim() != model.input_dim() {
        return Err(Error::dim("dataset input rows", model.input_dim(), data.input_dim()));
    }
    if data.output_dim() != model.output_dim() {
        return Err(Error::dim("dataset output rows", model.output_dim(), data.output_dim()));
    }
    if coef.w.len() != model.state_dim() {
        return Err(Error::dim("variance weights", model.state_dim(), coef.w.len()));
    }
    if data.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: data.len(),
        });
    }
    Ok(())
}

/// Evaluates the loss on all columns of `data` and, optionally, its gradient.
pub fn evaluate<T: Real>(
    model: &SsnnModel<T>,
    data: &Dataset<T>,
    coef: &Coefficients<T>,
    with_gradient: bool,
) -> Result<(LossBreakdown<T>, Option<DVector<T>>)> {
    check_data(model, data, coef)?;
    let n = data.len();
    let d = model.state_dim();
    let two = T::lit(2.0);

    // Forward pass with per-step activations.
    let mut states = DMatrix::zeros(d, n);
    let mut state_acts: Vec<Vec<DVector<T>>> = Vec::with_capacity(if with_gradient { n } else { 0 });
    let mut output_acts: Vec<Vec<DVector<T>>> = Vec::with_capacity(if with_gradient { n } else { 0 });
    let mut residuals = DMatrix::zeros(model.output_dim(), n);
    let mut x = model.x0.clone();
    for k in 0..n {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        states.set_column(k, &x);
        let acts = forward_cached(&model.output_layers, x.clone());
        let yhat = acts.last().unwrap();
        if yhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        residuals.set_column(k, &(data.outputs.column(k) - yhat));
        if with_gradient {
            output_acts.push(acts);
        }
        if k + 1 < n {
            let u = data.inputs.column(k).into_owned();
            let acts = forward_cached(&model.state_layers, concat(&x, &u));
            x = acts.last().unwrap().clone();
            if with_gradient {
                state_acts.push(acts);
            }
        }
    }

    let spe = residuals.norm_squared();
    let mean = states.column_sum() / T::from_usize(n).unwrap();
    let mut centered = states;
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut variance = T::zero();
    for (i, row) in centered.row_iter().enumerate() {
        variance += coef.w[i] * row.norm_squared();
    }
    let param: T = model
        .output_layers
        .iter()
        .map(|l| l.weights.norm_squared() + l.bias.norm_squared())
        .fold(T::zero(), |a, b| a + b);
    let breakdown = LossBreakdown::combine(spe, variance, param, coef.alpha, coef.beta);
    if !breakdown.total.is_finite() {
        return Err(Error::Divergence { step: n });
    }
    if !with_gradient {
        return Ok((breakdown, None));
    }

    // Reverse pass.
    let arch = &model.arch;
    let mut grad = DVector::zeros(arch.param_count());
    let state_offsets = layer_offsets(&model.state_layers, 0);
    let g_range = model.output_param_range();
    let output_offsets = layer_offsets(&model.output_layers, g_range.start);

    let mut lambda: DVector<T> = DVector::zeros(d);
    for k in (0..n).rev() {
        // Direct dependence of J on x_k.
        let mut gx = centered.column(k).component_mul(&coef.w) * (two * coef.alpha);
        let seed = residuals.column(k) * (-two);
        gx += backprop_stack(&model.output_layers, &output_acts[k], seed, &mut grad, &output_offsets);
        if k + 1 < n {
            let gin = backprop_stack(&model.state_layers, &state_acts[k], lambda, &mut grad, &state_offsets);
            gx += gin.rows(0, d);
        }
        lambda = gx;
    }
    let x0_start = arch.state_param_count() + arch.output_param_count();
    grad.rows_mut(x0_start, d).copy_from(&lambda);

    // β‖θ_g‖²
    if coef.beta != T::zero() {
        let theta = model.flatten();
        for i in g_range {
            grad[i] += two * coef.beta * theta[i];
        }
    }
    Ok((breakdown, Some(grad)))
}

/// Activations of every layer, element 0 being the stack input.
pub(crate) fn forward_cached<T: Real>(layers: &[Layer<T>], input: DVector<T>) -> Vec<DVector<T>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for layer in layers {
        let next = layer.forward_unchecked(acts.last().unwrap());
        acts.push(next);
    }
    acts
}

pub(crate) fn layer_offsets<T: Real>(layers: &[Layer<T>], start: usize) -> Vec<usize> {
    let mut pos = start;
    layers
        .iter()
        .map(|l| {
            let o = pos;
            pos += l.param_count();
            o
        })
        .collect()
}

/// Pushes `seed = ∂J/∂(stack output)` back through the layers, accumulating
/// parameter gradients into `grad` at `offsets`, and returns `∂J/∂(stack input)`.
pub(crate) fn backprop_stack<T: Real>(
    layers: &[Layer<T>],
    acts: &[DVector<T>],
    seed: DVector<T>,
    grad: &mut DVector<T>,
    offsets: &[usize],
) -> DVector<T> {
    let mut g = seed;
    for (i, layer) in layers.iter().enumerate().rev() {
        let out = &acts[i + 1];
        let inp = &acts[i];
        let act = layer.activation;
        let gz = DVector::from_fn(g.len(), |r, _| g[r] * act.derivative_at_output(out[r]));
        let (rows, cols) = layer.weights.shape();
        let base = offsets[i];
        for r in 0..rows {
            let gr = gz[r];
            if gr == T::zero() {
                continue;
            }
            let row = base + r * cols;
            for c in 0..cols {
                grad[row + c] += gr * inp[c];
            }
            grad[base + rows * cols + r] += gr;
        }
        g = layer.weights.tr_mul(&gz);
    }
    g
}
