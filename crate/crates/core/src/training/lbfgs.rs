//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Objective evaluations that fail with [`Error::Divergence`] are treated as an
//! infinite function value, which makes the line search back off instead of
//! aborting the whole minimization.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WolfeParams {
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_evaluations: usize,
}

impl Default for WolfeParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_evaluations: 30,
        }
    }
}

impl WolfeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.max_evaluations == 0 {
            return Err(Error::Config("line search needs at least one evaluation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub memory: usize,
    pub wolfe: WolfeParams,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
            memory: 10,
            wolfe: WolfeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome<T: Real> {
    pub x: DVector<T>,
    pub value: T,
    pub gradient: DVector<T>,
    pub iterations: usize,
    pub termination: Termination,
}

impl<T: Real> LbfgsOutcome<T> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradientTolerance
    }
}

/// Minimizes `objective` from `x0`. `observer` is called once for the starting
/// point (iteration 0) and after every accepted step.
pub fn minimize<T, F, O>(x0: DVector<T>, mut objective: F, config: &LbfgsConfig, mut observer: O) -> Result<LbfgsOutcome<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
    O: FnMut(usize, &DVector<T>, T, &DVector<T>),
{
    config.wolfe.validate()?;
    let tol = T::lit(config.gradient_tolerance);
    let (mut f, mut g) = objective(&x0)?;
    let mut x = x0;
    observer(0, &x, f, &g);
    let mut memory: VecDeque<(DVector<T>, DVector<T>, T)> = VecDeque::with_capacity(config.memory);
    let mut iterations = 0;

    loop {
        if g.norm() <= tol {
            return Ok(finish(x, f, g, iterations, Termination::GradientTolerance));
        }
        if iterations >= config.max_iterations {
            return Ok(finish(x, f, g, iterations, Termination::MaxIterations));
        }

        let mut direction = two_loop(&g, &memory);
        let mut slope = g.dot(&direction);
        if !(slope < T::zero()) || !slope.is_finite() {
            memory.clear();
            direction = -&g;
            slope = -g.norm_squared();
        }
        let initial_step = if memory.is_empty() {
            T::one().min(T::one() / g.norm())
        } else {
            T::one()
        };

        let step = line_search(&mut objective, &x, f, slope, &direction, initial_step, &config.wolfe)?;
        let Some((alpha, f_new, g_new)) = step else {
            if memory.is_empty() {
                return Ok(finish(x, f, g, iterations, Termination::LineSearchFailed));
            }
            // Retry along steepest descent before giving up.
            memory.clear();
            continue;
        };

        let s = &direction * alpha;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > T::lit(1e-12) * s.norm() * y.norm() && sy > T::zero() {
            if memory.len() == config.memory {
                memory.pop_front();
            }
            if config.memory > 0 {
                memory.push_back((s.clone(), y, T::one() / sy));
            }
        }
        x += s;
        f = f_new;
        g = g_new;
        iterations += 1;
        observer(iterations, &x, f, &g);
    }
}

fn finish<T: Real>(x: DVector<T>, value: T, gradient: DVector<T>, iterations: usize, termination: Termination) -> LbfgsOutcome<T> {
    LbfgsOutcome {
        x,
        value,
        gradient,
        iterations,
        termination,
    }
}

fn two_loop<T: Real>(g: &DVector<T>, memory: &VecDeque<(DVector<T>, DVector<T>, T)>) -> DVector<T> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = *rho * s.dot(&q);
        q.axpy(-a, y, T::one());
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = s.dot(y) / y.norm_squared();
        q *= gamma;
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * y.dot(&q);
        q.axpy(a - b, s, T::one());
    }
    -q
}

struct Probe<T: Real> {
    alpha: T,
    value: T,
    slope: T,
    gradient: Option<DVector<T>>,
}

fn probe<T, F>(objective: &mut F, x: &DVector<T>, direction: &DVector<T>, alpha: T) -> Result<Probe<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
{
    let trial = x + direction * alpha;
    match objective(&trial) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|e| e.is_finite()) => Ok(Probe {
            alpha,
            value: v,
            slope: g.dot(direction),
            gradient: Some(g),
        }),
        Ok(_) | Err(Error::Divergence { .. }) => Ok(Probe {
            alpha,
            value: T::max_value().unwrap(),
            slope: T::zero(),
            gradient: None,
        }),
        Err(e) => Err(e),
    }
}

/// Strong-Wolfe bracketing and zoom. Returns `None` when no acceptable step
/// was found within the evaluation budget.
fn line_search<T, F>(
    objective: &mut F,
    x: &DVector<T>,
    f0: T,
    slope0: T,
    direction: &DVector<T>,
    initial: T,
    params: &WolfeParams,
) -> Result<Option<(T, T, DVector<T>)>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
{
    let c1 = T::lit(params.c1);
    let c2 = T::lit(params.c2);
    let mut evals = 0;
    let mut prev = Probe {
        alpha: T::zero(),
        value: f0,
        slope: slope0,
        gradient: None,
    };
    let mut alpha = initial;
    let alpha_max = T::lit(1e10);

    while evals < params.max_evaluations {
        let cur = probe(objective, x, direction, alpha)?;
        evals += 1;
        if cur.gradient.is_none() || cur.value > f0 + c1 * cur.alpha * slope0 || (evals > 1 && cur.value >= prev.value) {
            return zoom(objective, x, f0, slope0, direction, prev, cur, params, evals);
        }
        if cur.slope.abs() <= -c2 * slope0 {
            return Ok(Some((cur.alpha, cur.value, cur.gradient.unwrap())));
        }
        if cur.slope >= T::zero() {
            return zoom(objective, x, f0, slope0, direction, cur, prev, params, evals);
        }
        prev = cur;
        alpha = (alpha * T::lit(2.0)).min(alpha_max);
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn zoom<T, F>(
    objective: &mut F,
    x: &DVector<T>,
    f0: T,
    slope0: T,
    direction: &DVector<T>,
    mut lo: Probe<T>,
    mut hi: Probe<T>,
    params: &WolfeParams,
    mut evals: usize,
) -> Result<Option<(T, T, DVector<T>)>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Result<(T, DVector<T>)>,
{
    let c1 = T::lit(params.c1);
    let c2 = T::lit(params.c2);
    while evals < params.max_evaluations {
        let alpha = interpolate(&lo, &hi);
        let cur = probe(objective, x, direction, alpha)?;
        evals += 1;
        if cur.gradient.is_none() || cur.value > f0 + c1 * cur.alpha * slope0 || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope.abs() <= -c2 * slope0 {
                if let Some(g) = cur.gradient {
                    return Ok(Some((cur.alpha, cur.value, g)));
                }
            }
            if cur.slope * (hi.alpha - lo.alpha) >= T::zero() {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() <= T::lit(1e-16) * lo.alpha.abs().max(T::one()) {
            break;
        }
    }
    // Budget exhausted: accept the best sufficient-decrease point if any.
    if lo.alpha > T::zero() && lo.value < f0 {
        if let Some(g) = lo.gradient {
            return Ok(Some((lo.alpha, lo.value, g)));
        }
    }
    Ok(None)
}

/// Cubic interpolation between two probes, safeguarded into the middle of the
/// bracket; falls back to bisection when the data are not usable.
fn interpolate<T: Real>(lo: &Probe<T>, hi: &Probe<T>) -> T {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = (a + b) * T::lit(0.5);
    if hi.gradient.is_none() || lo.gradient.is_none() && lo.alpha != T::zero() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - T::lit(3.0) * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if !(disc >= T::zero()) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + T::lit(2.0) * d2;
    if denom == T::zero() {
        return mid;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = (right - left) * T::lit(0.1);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}
