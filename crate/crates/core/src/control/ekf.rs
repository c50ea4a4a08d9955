//! Extended Kalman filter on the identified model.

use nalgebra::{DMatrix, DVector};

use super::jacobians::{output_jacobian, state_jacobians};
use crate::error::{Error, Result};
use crate::model::SsnnModel;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct EkfConfig<T: Real> {
    /// `Q_c`
    pub process_cov: DMatrix<T>,
    /// `R_c`
    pub measurement_cov: DMatrix<T>,
    /// Covariance of the initial estimate.
    pub initial_cov: DMatrix<T>,
}

impl<T: Real> EkfConfig<T> {
    /// `Q_c = diag(0.1, 0.2)` for two states (`0.15 I` otherwise),
    /// `R_c = 0.1 I` and `P0 = Q_c`.
    pub fn for_order(states: usize, outputs: usize) -> Self {
        let q = if states == 2 {
            DMatrix::from_diagonal(&DVector::from_vec(vec![T::lit(0.1), T::lit(0.2)]))
        } else {
            DMatrix::identity(states, states) * T::lit(0.15)
        };
        Self {
            initial_cov: q.clone(),
            process_cov: q,
            measurement_cov: DMatrix::identity(outputs, outputs) * T::lit(0.1),
        }
    }

    pub fn validate(&self, states: usize, outputs: usize) -> Result<()> {
        check_spd(&self.process_cov, states, "process covariance")?;
        check_spd(&self.measurement_cov, outputs, "measurement covariance")?;
        check_spd(&self.initial_cov, states, "initial covariance")
    }
}

fn check_spd<T: Real>(m: &DMatrix<T>, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::dim(what, n, m.nrows()));
    }
    let tol = T::lit(1e-12) * (T::one() + m.abs().max());
    if (m - m.transpose()).abs().max() > tol {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Config(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Current estimate and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState<T: Real> {
    pub x: DVector<T>,
    pub p: DMatrix<T>,
}

impl<T: Real> EkfState<T> {
    pub fn new(x: DVector<T>, p: DMatrix<T>) -> Self {
        Self { x, p }
    }

    /// Starts from the model's own initial state.
    pub fn from_model(model: &SsnnModel<T>, cfg: &EkfConfig<T>) -> Self {
        Self::new(model.x0.clone(), cfg.initial_cov.clone())
    }

    /// Largest deviation from symmetry and smallest eigenvalue of `P`.
    pub fn covariance_health(&self) -> (T, T) {
        let asym = (&self.p - self.p.transpose()).abs().max();
        let sym = (&self.p + self.p.transpose()) * T::lit(0.5);
        let min_eig = sym.symmetric_eigenvalues().min();
        (asym, min_eig)
    }
}

/// Time update `x⁻ = f(x̂, u)`, `P⁻ = F P Fᵀ + Q_c`.
pub fn ekf_predict<T: Real>(model: &SsnnModel<T>, state: &EkfState<T>, cfg: &EkfConfig<T>, u: &DVector<T>) -> Result<EkfState<T>> {
    let (x, f, _) = state_jacobians(model, &state.x, u)?;
    let p = &f * &state.p * f.transpose() + &cfg.process_cov;
    Ok(EkfState::new(x, symmetrize(p)))
}

/// Measurement update with the Joseph-form covariance.
pub fn ekf_update<T: Real>(model: &SsnnModel<T>, prior: &EkfState<T>, cfg: &EkfConfig<T>, y: &DVector<T>) -> Result<EkfState<T>> {
    if y.len() != model.output_dim() {
        return Err(Error::dim("measurement", model.output_dim(), y.len()));
    }
    let (y_hat, h) = output_jacobian(model, &prior.x)?;
    let pht = &prior.p * h.transpose();
    let s = &h * &pht + &cfg.measurement_cov;
    let s_inv = s
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| s.try_inverse())
        .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;
    let k = pht * s_inv;
    let x = &prior.x + &k * (y - y_hat);
    let n = prior.x.len();
    let i_kh = DMatrix::identity(n, n) - &k * &h;
    let p = &i_kh * &prior.p * i_kh.transpose() + &k * &cfg.measurement_cov * k.transpose();
    if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite filter state".into()));
    }
    Ok(EkfState::new(x, symmetrize(p)))
}

/// Predict with the input applied over the last period, then correct with
/// the new measurement.
pub fn ekf_step<T: Real>(
    model: &SsnnModel<T>,
    state: &EkfState<T>,
    cfg: &EkfConfig<T>,
    u_applied: &DVector<T>,
    y_measured: &DVector<T>,
) -> Result<EkfState<T>> {
    let prior = ekf_predict(model, state, cfg, u_applied)?;
    ekf_update(model, &prior, cfg, y_measured)
}

fn symmetrize<T: Real>(p: DMatrix<T>) -> DMatrix<T> {
    (&p + p.transpose()) * T::lit(0.5)
}
