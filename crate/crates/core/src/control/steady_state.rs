//! Equilibrium `(x_ref, u_ref)` of the model with output `y_t`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::jacobians::{output_jacobian, state_jacobians};
use crate::error::{Error, Result};
use crate::model::SsnnModel;
use crate::scalar::Real;

/// Residual norm accepted as a solution.
pub const STEADY_STATE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair<T: Real> {
    pub x_ref: DVector<T>,
    pub u_ref: DVector<T>,
    pub target: DVector<T>,
    pub residual_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateConfig<T: Real> {
    pub starts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Solutions with `u_ref` inside these bounds are preferred.
    pub u_min: DVector<T>,
    pub u_max: DVector<T>,
}

impl<T: Real> SteadyStateConfig<T> {
    pub fn with_bounds(u_min: DVector<T>, u_max: DVector<T>) -> Self {
        Self {
            starts: 5,
            max_iterations: 100,
            seed: 0,
            u_min,
            u_max,
        }
    }
}

/// `[y_t - g(x); x - f(x, u)]` and its Jacobian with respect to `[x; u]`.
fn residual<T: Real>(model: &SsnnModel<T>, y_t: &DVector<T>, z: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let (s, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    let x = z.rows(0, s).into_owned();
    let u = z.rows(s, m).into_owned();
    let (fx, f, gu) = state_jacobians(model, &x, &u)?;
    let (gx, h) = output_jacobian(model, &x)?;
    let mut r = DVector::zeros(p + s);
    r.rows_mut(0, p).copy_from(&(y_t - gx));
    r.rows_mut(p, s).copy_from(&(&x - fx));
    let mut j = DMatrix::zeros(p + s, s + m);
    j.view_mut((0, 0), (p, s)).copy_from(&(-h));
    j.view_mut((p, 0), (s, s)).copy_from(&(DMatrix::identity(s, s) - f));
    j.view_mut((p, s), (s, m)).copy_from(&(-gu));
    Ok((r, j))
}

/// Damped Gauss-Newton from `z`; least squares when the system is not square.
fn newton<T: Real>(model: &SsnnModel<T>, y_t: &DVector<T>, mut z: DVector<T>, max_iterations: usize) -> Result<(DVector<T>, T)> {
    let tol = T::lit(STEADY_STATE_TOLERANCE);
    let (mut r, mut j) = residual(model, y_t, &z)?;
    let mut norm = r.norm();
    for _ in 0..max_iterations {
        if norm <= tol {
            break;
        }
        let step = j
            .clone()
            .svd(true, true)
            .solve(&(-&r), T::lit(1e-14))
            .map_err(|e| Error::Numerical(e.into()))?;
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &z + &step * t;
            if let Ok((rt, jt)) = residual(model, y_t, &trial) {
                let nt = rt.norm();
                if nt.is_finite() && nt < norm {
                    z = trial;
                    r = rt;
                    j = jt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            t *= T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    Ok((z, norm))
}

/// Solves `y_t = g(x)`, `x = f(x, u)` by Newton's method from several seeded
/// starts, preferring a solution whose input lies inside the bounds.
pub fn solve_steady_state<T: Real>(model: &SsnnModel<T>, y_t: &DVector<T>, cfg: &SteadyStateConfig<T>) -> Result<ReferencePair<T>> {
    let (s, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    if y_t.len() != p {
        return Err(Error::dim("target", p, y_t.len()));
    }
    if cfg.u_min.len() != m || cfg.u_max.len() != m {
        return Err(Error::dim("input bounds", m, cfg.u_min.len().min(cfg.u_max.len())));
    }
    if p != m {
        log::warn!("steady-state system has {} equations for {} unknowns; solving in the least-squares sense", p + s, s + m);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mid = (&cfg.u_min + &cfg.u_max) * T::lit(0.5);
    let inside = |u: &DVector<T>| (0..m).all(|i| u[i] >= cfg.u_min[i] && u[i] <= cfg.u_max[i]);
    let mut fallback: Option<ReferencePair<T>> = None;
    for start in 0..cfg.starts.max(1) {
        let mut z = DVector::zeros(s + m);
        if start == 0 {
            z.rows_mut(0, s).copy_from(&model.x0);
            z.rows_mut(s, m).copy_from(&mid);
        } else {
            for i in 0..s {
                z[i] = T::lit(rng.random_range(-1.0..1.0));
            }
            for i in 0..m {
                let (lo, hi) = (cfg.u_min[i].as_f64(), cfg.u_max[i].as_f64());
                z[s + i] = T::lit(if hi > lo { rng.random_range(lo..=hi) } else { lo });
            }
        }
        let Ok((z, norm)) = newton(model, y_t, z, cfg.max_iterations) else {
            continue;
        };
        if !(norm <= T::lit(STEADY_STATE_TOLERANCE)) {
            continue;
        }
        let pair = ReferencePair {
            x_ref: z.rows(0, s).into_owned(),
            u_ref: z.rows(s, m).into_owned(),
            target: y_t.clone(),
            residual_norm: norm,
        };
        if inside(&pair.u_ref) {
            return Ok(pair);
        }
        fallback.get_or_insert(pair);
    }
    match fallback {
        Some(pair) => {
            log::warn!("steady-state input {:?} lies outside the bounds", pair.u_ref.as_slice());
            Ok(pair)
        }
        None => Err(Error::InfeasibleTarget {
            target: y_t.iter().map(|v| v.as_f64()).collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn bounds() -> SteadyStateConfig<f64> {
        SteadyStateConfig::with_bounds(DVector::from_element(1, -1.0), DVector::from_element(1, 0.0))
    }

    #[test]
    fn recovers_a_constructed_fixed_point() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = Architecture::two_layer(2, 1, 1, 4, 3).unwrap();
        let mut m = SsnnModel::<f64>::random(&arch, 0.6, &mut rng).unwrap();
        m.state_layers[1].weights *= 0.5;
        // Make (x*, u*) a fixed point by adjusting the last state bias.
        let (xs, us) = (DVector::from_vec(vec![0.3, -0.2]), DVector::from_element(1, -0.4));
        let fx = m.state_step(&xs, &us).unwrap();
        m.state_layers[1].bias += &xs - fx;
        let y_t = m.output_map(&xs).unwrap();
        let pair = solve_steady_state(&m, &y_t, &bounds()).unwrap();
        assert!(pair.residual_norm <= 1e-8);
        assert!((&pair.x_ref - &xs).norm() < 1e-7, "{}", pair.x_ref);
        assert!((&pair.u_ref - &us).norm() < 1e-7, "{}", pair.u_ref);
    }

    #[test]
    fn affine_model_takes_one_newton_step() {
        let arch = Architecture::new(1, 1, 1, vec![1], vec![1]).unwrap();
        let mut m = SsnnModel::<f64>::zeros(&arch).unwrap();
        m.state_layers[0].weights = DMatrix::from_row_slice(1, 2, &[0.5, 1.0]);
        m.state_layers[0].bias[0] = 0.1;
        m.output_layers[0].weights[(0, 0)] = 2.0;
        let y_t = DVector::from_element(1, 0.6);
        let (z, norm) = newton(&m, &y_t, DVector::zeros(2), 1).unwrap();
        assert!(norm < 1e-12);
        // y = 2x = 0.6, x = 0.5x + u + 0.1.
        assert!((z[0] - 0.3).abs() < 1e-12 && (z[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_is_reported() {
        let arch = Architecture::new(1, 1, 1, vec![1], vec![1]).unwrap();
        let mut m = SsnnModel::<f64>::zeros(&arch).unwrap();
        m.state_layers[0].weights = DMatrix::from_row_slice(1, 2, &[0.5, 1.0]);
        // g(x) = 0.2 for every x, so 0.6 is out of reach.
        m.output_layers[0].bias[0] = 0.2;
        let err = solve_steady_state(&m, &DVector::from_element(1, 0.6), &bounds()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleTarget { .. }));
    }
}
