//! Input-constrained tracking MPC by single shooting.
//!
//! The decision variable is the input sequence over the horizon. The cost is
//! `Σ_{i=1..Np} (x_i - x_ref)ᵀ Q (x_i - x_ref) + Σ_{i=0..Np-1} (u_i - u_ref)ᵀ R (u_i - u_ref)`
//! with `x_0` the current estimate. Gradients come from an adjoint recursion
//! and the box is handled by projection, so returned inputs are always feasible.

use nalgebra::{DMatrix, DVector};

use super::jacobians::state_jacobians;
use super::steady_state::ReferencePair;
use crate::error::{Error, Result};
use crate::model::SsnnModel;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig<T: Real> {
    pub horizon: usize,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub u_min: DVector<T>,
    pub u_max: DVector<T>,
    pub max_iterations: usize,
    /// Stop when the projected gradient step is this small.
    pub tolerance: T,
}

impl<T: Real> MpcConfig<T> {
    /// `N_p = 5`, `Q = diag(0.5, 1)` for two states (`0.75 I` otherwise),
    /// `R = 0.5 I`, `-1 ≤ u ≤ 0`.
    pub fn for_order(states: usize, inputs: usize) -> Self {
        let q = if states == 2 {
            DMatrix::from_diagonal(&DVector::from_vec(vec![T::lit(0.5), T::one()]))
        } else {
            DMatrix::identity(states, states) * T::lit(0.75)
        };
        Self {
            horizon: 5,
            q,
            r: DMatrix::identity(inputs, inputs) * T::lit(0.5),
            u_min: DVector::from_element(inputs, -T::one()),
            u_max: DVector::zeros(inputs),
            max_iterations: 200,
            tolerance: T::lit(1e-10),
        }
    }

    pub fn validate(&self, states: usize, inputs: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("MPC horizon must be at least 1".into()));
        }
        if self.q.shape() != (states, states) {
            return Err(Error::dim("state weight", states, self.q.nrows()));
        }
        if self.r.shape() != (inputs, inputs) {
            return Err(Error::dim("input weight", inputs, self.r.nrows()));
        }
        if self.u_min.len() != inputs || self.u_max.len() != inputs {
            return Err(Error::dim("input bounds", inputs, self.u_min.len()));
        }
        if (0..inputs).any(|i| !(self.u_min[i] <= self.u_max[i])) {
            return Err(Error::Config("input bounds must satisfy u_min <= u_max".into()));
        }
        let sym = |m: &DMatrix<T>| (m - m.transpose()).abs().max() <= T::lit(1e-12);
        if !sym(&self.q) || !sym(&self.r) {
            return Err(Error::Config("MPC weights must be symmetric".into()));
        }
        if self.q.symmetric_eigenvalues().min() < T::zero() {
            return Err(Error::Config("state weight must be positive semidefinite".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::Config("input weight must be positive definite".into()));
        }
        Ok(())
    }

    fn project(&self, u: &mut DMatrix<T>) {
        for (i, mut row) in u.row_iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = v.clamp(self.u_min[i], self.u_max[i]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution<T: Real> {
    /// m×N_p
    pub inputs: DMatrix<T>,
    pub cost: T,
    pub iterations: usize,
    /// False when the iteration limit or a stalled line search ended the
    /// solve; `inputs` is then the best feasible iterate found.
    pub converged: bool,
}

impl<T: Real> MpcSolution<T> {
    pub fn first_move(&self) -> DVector<T> {
        self.inputs.column(0).into_owned()
    }

    /// Previous solution shifted by one step with the last move repeated.
    pub fn shifted(&self) -> DMatrix<T> {
        let n = self.inputs.ncols();
        DMatrix::from_fn(self.inputs.nrows(), n, |r, c| self.inputs[(r, (c + 1).min(n - 1))])
    }
}

/// Cost of an input sequence and, optionally, its gradient.
pub fn mpc_cost<T: Real>(
    model: &SsnnModel<T>,
    x_hat: &DVector<T>,
    refs: &ReferencePair<T>,
    cfg: &MpcConfig<T>,
    inputs: &DMatrix<T>,
    with_gradient: bool,
) -> Result<(T, Option<DMatrix<T>>)> {
    let np = inputs.ncols();
    let two = T::lit(2.0);
    let mut xs = Vec::with_capacity(np + 1);
    let mut jacs = Vec::with_capacity(np);
    xs.push(x_hat.clone());
    let mut cost = T::zero();
    for i in 0..np {
        let u = inputs.column(i).into_owned();
        let (next, f, gu) = state_jacobians(model, &xs[i], &u)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        let du = &u - &refs.u_ref;
        cost += (du.transpose() * &cfg.r * &du)[(0, 0)];
        let dx = &next - &refs.x_ref;
        cost += (dx.transpose() * &cfg.q * &dx)[(0, 0)];
        xs.push(next);
        jacs.push((f, gu));
    }
    if !with_gradient {
        return Ok((cost, None));
    }
    let mut grad = DMatrix::zeros(inputs.nrows(), np);
    let mut lambda = (&cfg.q * (&xs[np] - &refs.x_ref)) * two;
    for i in (0..np).rev() {
        let (f, gu) = &jacs[i];
        let du = inputs.column(i) - &refs.u_ref;
        grad.set_column(i, &(gu.transpose() * &lambda + (&cfg.r * du) * two));
        lambda = f.transpose() * &lambda;
        if i > 0 {
            lambda += (&cfg.q * (&xs[i] - &refs.x_ref)) * two;
        }
    }
    Ok((cost, Some(grad)))
}

/// Minimizes the tracking cost over the horizon by projected BFGS with an
/// Armijo search along the projection arc. `warm_start` (m×N_p) defaults to
/// `u_ref` repeated.
pub fn mpc_solve<T: Real>(
    model: &SsnnModel<T>,
    x_hat: &DVector<T>,
    refs: &ReferencePair<T>,
    cfg: &MpcConfig<T>,
    warm_start: Option<&DMatrix<T>>,
) -> Result<MpcSolution<T>> {
    let (s, m) = (model.state_dim(), model.input_dim());
    cfg.validate(s, m)?;
    if x_hat.len() != s {
        return Err(Error::dim("state estimate", s, x_hat.len()));
    }
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("state estimate is not finite".into()));
    }
    let np = cfg.horizon;
    let mut u = match warm_start {
        Some(w) if w.shape() == (m, np) => w.clone(),
        _ => DMatrix::from_fn(m, np, |r, _| refs.u_ref[r]),
    };
    cfg.project(&mut u);
    let n = m * np;
    let (mut f, g) = mpc_cost(model, x_hat, refs, cfg, &u, true)?;
    let mut g = g.expect("gradient requested");
    let mut hinv = DMatrix::<T>::identity(n, n);
    let c1 = T::lit(1e-4);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        // Projected-gradient stationarity measure.
        let mut pg = &u - &g;
        cfg.project(&mut pg);
        let pg_norm = (&pg - &u).norm();
        if pg_norm <= cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // Variables held at a bound by the gradient are frozen for this step.
        let at_bound = |k: usize| {
            let (r, c) = (k % m, k / m);
            (u[(r, c)] <= cfg.u_min[r] && g[(r, c)] > T::zero()) || (u[(r, c)] >= cfg.u_max[r] && g[(r, c)] < T::zero())
        };
        let gv = DVector::from_column_slice(g.as_slice());
        let mut d = DVector::zeros(n);
        for a in 0..n {
            if at_bound(a) {
                continue;
            }
            let mut acc = T::zero();
            for b in 0..n {
                if !at_bound(b) {
                    acc += hinv[(a, b)] * gv[b];
                }
            }
            d[a] = -acc;
        }
        if gv.dot(&d) >= T::zero() {
            // Not a descent direction: fall back to steepest descent.
            hinv = DMatrix::identity(n, n);
            d = DVector::from_fn(n, |k, _| if at_bound(k) { T::zero() } else { -gv[k] });
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = &u + DMatrix::from_column_slice(m, np, (&d * step).as_slice());
            cfg.project(&mut trial);
            let delta = DVector::from_column_slice((&trial - &u).as_slice());
            if delta.norm() == T::zero() {
                break;
            }
            if let Ok((ft, _)) = mpc_cost(model, x_hat, refs, cfg, &trial, false) {
                if ft <= f + c1 * gv.dot(&delta) {
                    accepted = Some((trial, ft, delta));
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        let Some((trial, ft, delta)) = accepted else {
            break;
        };
        let (_, gt) = mpc_cost(model, x_hat, refs, cfg, &trial, true)?;
        let gt = gt.expect("gradient requested");
        let yv = DVector::from_column_slice((&gt - &g).as_slice());
        let sy = delta.dot(&yv);
        if sy > T::lit(1e-14) * delta.norm() * yv.norm() {
            let rho = T::one() / sy;
            let i = DMatrix::<T>::identity(n, n);
            let left = &i - &delta * yv.transpose() * rho;
            let right = &i - &yv * delta.transpose() * rho;
            hinv = &left * &hinv * &right + &delta * delta.transpose() * rho;
        }
        let decrease = f - ft;
        u = trial;
        f = ft;
        g = gt;
        if decrease <= T::lit(1e-15) * (T::one() + f.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("MPC solve stopped after {iterations} iterations without converging");
    }
    Ok(MpcSolution {
        inputs: u,
        cost: f,
        iterations,
        converged,
    })
}
