use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{concat, Layer, SsnnModel};
use crate::scalar::Real;

/// Linearization of the model at `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians<T: Real> {
    /// `∂f/∂x`, s×s
    pub f: DMatrix<T>,
    /// `∂f/∂u`, s×m
    pub g_u: DMatrix<T>,
    /// `∂g/∂x`, p×s
    pub h: DMatrix<T>,
}

/// Output of a layer stack and its Jacobian with respect to the input.
fn stack_jacobian<T: Real>(layers: &[Layer<T>], input: &DVector<T>) -> (DVector<T>, DMatrix<T>) {
    let mut a = input.clone();
    let mut jac = DMatrix::<T>::identity(input.len(), input.len());
    for layer in layers {
        let next = layer.forward_unchecked(&a);
        let mut local = &layer.weights * &jac;
        for (i, mut row) in local.row_iter_mut().enumerate() {
            row *= layer.activation.derivative_at_output(next[i]);
        }
        jac = local;
        a = next;
    }
    (a, jac)
}

/// `f(x, u)` together with `∂f/∂x` and `∂f/∂u`.
pub fn state_jacobians<T: Real>(
    model: &SsnnModel<T>,
    x: &DVector<T>,
    u: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>, DMatrix<T>)> {
    let (s, m) = (model.state_dim(), model.input_dim());
    if x.len() != s {
        return Err(Error::dim("state", s, x.len()));
    }
    if u.len() != m {
        return Err(Error::dim("input", m, u.len()));
    }
    let (next, jac) = stack_jacobian(&model.state_layers, &concat(x, u));
    Ok((next, jac.columns(0, s).into_owned(), jac.columns(s, m).into_owned()))
}

/// `g(x)` together with `∂g/∂x`.
pub fn output_jacobian<T: Real>(model: &SsnnModel<T>, x: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    if x.len() != model.state_dim() {
        return Err(Error::dim("state", model.state_dim(), x.len()));
    }
    Ok(stack_jacobian(&model.output_layers, x))
}

/// Exact Jacobians of the state and output maps at `(x, u)`.
pub fn model_jacobians<T: Real>(model: &SsnnModel<T>, x: &DVector<T>, u: &DVector<T>) -> Result<Jacobians<T>> {
    let (_, f, g_u) = state_jacobians(model, x, u)?;
    let (_, h) = output_jacobian(model, x)?;
    Ok(Jacobians { f, g_u, h })
}
