//! Continuous stirred-tank reactor with an exothermic first-order reaction.
//!
//! State `x = (conversion, temperature)`, input `u = jacket temperature`, all
//! in dimensionless form. The discrete plant integrates the continuous
//! dynamics over one sample period with the input held constant.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sign convention of the temperature self-term in `dx2/dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// `dx2/dt = -x2 + B·Da(1-x1)e^{x2} - Db(x2-u)`, the usual dimensionless CSTR.
    #[default]
    Standard,
    /// `dx2/dt = +x2 + B·Da(1-x1)e^{x2} - Db(x2-u)`. Runs away thermally for
    /// jacket temperatures above roughly -0.5.
    PositiveSelfTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CstrParams {
    /// Heat of reaction `B`.
    pub b: f64,
    /// Damköhler number `Da`.
    pub da: f64,
    /// Heat transfer coefficient `Db`.
    pub db: f64,
    #[serde(default)]
    pub formulation: Formulation,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            b: 22.0,
            da: 0.082,
            db: 3.0,
            formulation: Formulation::Standard,
        }
    }
}

/// Continuous-time vector field `f_c(x, u)`.
pub fn cstr_derivative<T: Real>(x: &Vector2<T>, u: T, params: &CstrParams) -> Vector2<T> {
    let (b, da, db) = (T::lit(params.b), T::lit(params.da), T::lit(params.db));
    let reaction = da * (T::one() - x[0]) * x[1].exp();
    let self_term = match params.formulation {
        Formulation::Standard => -x[1],
        Formulation::PositiveSelfTerm => x[1],
    };
    Vector2::new(-x[0] + reaction, self_term + b * reaction - db * (x[1] - u))
}

/// One sample period of the plant, integrated with `substeps` RK4 steps.
pub fn plant_step<T: Real>(x: &Vector2<T>, u: T, params: &CstrParams, period: T, substeps: usize) -> Result<Vector2<T>> {
    if substeps == 0 {
        return Err(Error::Config("plant integration needs at least one substep".into()));
    }
    let h = period / T::from_usize(substeps).unwrap();
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut x = *x;
    for _ in 0..substeps {
        let k1 = cstr_derivative(&x, u, params);
        let k2 = cstr_derivative(&(x + k1 * half), u, params);
        let k3 = cstr_derivative(&(x + k2 * half), u, params);
        let k4 = cstr_derivative(&(x + k3 * h), u, params);
        x += (k1 + k2 * two + k3 * two + k4) * sixth;
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::Divergence { step: 0 });
        }
    }
    Ok(x)
}

/// Simulates the plant over an input sequence; the result has one column per
/// input sample, column 0 being `x0`.
pub fn simulate_plant<T: Real>(
    x0: &Vector2<T>,
    inputs: &[T],
    params: &CstrParams,
    period: T,
    substeps: usize,
) -> Result<Vec<Vector2<T>>> {
    let mut states = Vec::with_capacity(inputs.len());
    let mut x = *x0;
    for (k, &u) in inputs.iter().enumerate() {
        states.push(x);
        if k + 1 < inputs.len() {
            x = plant_step(&x, u, params, period, substeps).map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence { step: k + 1 },
                other => other,
            })?;
        }
    }
    Ok(states)
}
