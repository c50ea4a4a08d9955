use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lbfgs::{self, LbfgsConfig, Termination, WolfeParams};
use super::loss::{evaluate, Coefficients, LossBreakdown, LossWeights};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{variance_stats, Architecture, SsnnModel, VarianceStats};
use crate::permutation::{permute_model, variance_sort_index};
use crate::scalar::Real;

/// Which objective the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// `J_y + α J_v + β J_g`
    #[default]
    Ssnno,
    /// Plain prediction error `J_y`.
    SsnnSpeOnly,
    /// `J_y + β J_g`
    SsnnSpeParam,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub lbfgs_memory: usize,
    pub line_search: WolfeParams,
    pub seed: u64,
    pub init_scale: f64,
    pub mode: BaselineMode,
    /// Cap on outer rounds of the ordering repair loop.
    pub max_repair_rounds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            gradient_tolerance: 1e-6,
            lbfgs_memory: 10,
            line_search: WolfeParams::default(),
            seed: 0,
            init_scale: 0.5,
            mode: BaselineMode::Ssnno,
            max_repair_rounds: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.line_search.validate()?;
        if !(self.gradient_tolerance >= 0.0) {
            return Err(Error::Config("gradient tolerance must be non-negative".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init scale must be finite and non-negative".into()));
        }
        if self.max_repair_rounds == 0 {
            return Err(Error::Config("repair loop needs at least one round".into()));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            memory: self.lbfgs_memory,
            wolfe: self.line_search,
        }
    }

    pub fn coefficients<T: Real>(&self, weights: &LossWeights<T>) -> Coefficients<T> {
        match self.mode {
            BaselineMode::Ssnno => weights.coefficients(),
            BaselineMode::SsnnSpeOnly => Coefficients::spe_only(weights.w.len()),
            BaselineMode::SsnnSpeParam => Coefficients {
                beta: weights.beta,
                ..Coefficients::spe_only(weights.w.len())
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T: Real> {
    pub iteration: usize,
    /// Value of the minimized objective (depends on the mode).
    pub objective: T,
    /// Components, with `total` weighted by the configured `α`, `β`.
    pub loss: LossBreakdown<T>,
    pub gradient_norm: T,
}

/// One pass of the ordering repair loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairRound<T: Real> {
    pub local_loss: T,
    pub permuted_loss: T,
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T: Real> {
    pub model: SsnnModel<T>,
    pub history: Vec<IterationRecord<T>>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub gradient_norm: T,
    /// Statistics of the final model's states over the training window.
    pub stats: VarianceStats<T>,
    /// Filled by [`train_with_repair`].
    pub repair: Vec<RepairRound<T>>,
}

impl<T: Real> TrainReport<T> {
    /// Objective values accepted by the repair loop: `Ĵ₀, J̃₀, Ĵ₁, J̃₁, …`.
    pub fn accepted_losses(&self) -> Vec<T> {
        self.repair
            .iter()
            .flat_map(|r| [r.local_loss, r.permuted_loss])
            .collect()
    }

    pub fn final_loss(&self) -> Option<&IterationRecord<T>> {
        self.history.last()
    }
}

/// Random initial model for `config.seed`.
pub fn initial_model<T: Real>(arch: &Architecture, config: &TrainConfig) -> Result<SsnnModel<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    SsnnModel::random(arch, config.init_scale, &mut rng)
}

/// Minimizes the configured objective over the training window of `data`,
/// starting from a seeded random model.
pub fn train<T: Real>(
    data: &Dataset<T>,
    arch: &Architecture,
    weights: &LossWeights<T>,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    config.validate()?;
    let model = initial_model(arch, config)?;
    train_from(model, data, weights, config)
}

/// Like [`train`] but from explicit starting parameters.
pub fn train_from<T: Real>(
    start: SsnnModel<T>,
    data: &Dataset<T>,
    weights: &LossWeights<T>,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    config.validate()?;
    start.validate()?;
    let training = data.training();
    let coef = config.coefficients(weights);
    let mut scratch = start.clone();
    let mut history = Vec::new();

    let objective = |theta: &DVector<T>| -> Result<(T, DVector<T>)> {
        scratch.assign_flat(theta)?;
        let (l, g) = evaluate(&scratch, &training, &coef, true)?;
        Ok((l.total, g.expect("gradient requested")))
    };
    // The observer needs the loss components for the accepted iterate; they
    // are recomputed there without the gradient.
    let observe_model = start.clone();
    let mut observer = |it: usize, theta: &DVector<T>, value: T, grad: &DVector<T>| {
        let mut m = observe_model.clone();
        if m.assign_flat(theta).is_ok() {
            if let Ok((l, _)) = evaluate(&m, &training, &coef, false) {
                history.push(IterationRecord {
                    iteration: it,
                    objective: value,
                    loss: l.reweighted(weights.alpha, weights.beta),
                    gradient_norm: grad.norm(),
                });
            }
        }
    };
    let outcome = lbfgs::minimize(start.flatten(), objective, &config.lbfgs(), &mut observer)?;

    let mut model = start;
    model.assign_flat(&outcome.x)?;
    let traj = model.simulate(&training.inputs)?;
    let stats = variance_stats(&traj.states)?;
    Ok(TrainReport {
        model,
        history,
        iterations: outcome.iterations,
        converged: outcome.converged(),
        termination: outcome.termination,
        gradient_norm: outcome.gradient.norm(),
        stats,
        repair: Vec::new(),
    })
}

/// Trains to a local optimum, sorts the states by variance and retrains from
/// the permuted network while that strictly lowers the loss. The returned
/// model is the last permuted network, so its state variances are ordered.
///
/// `initial` overrides the seeded random start.
pub fn train_with_repair<T: Real>(
    data: &Dataset<T>,
    arch: &Architecture,
    weights: &LossWeights<T>,
    config: &TrainConfig,
    initial: Option<SsnnModel<T>>,
) -> Result<TrainReport<T>> {
    config.validate()?;
    let training = data.training();
    let coef = config.coefficients(weights);
    let mut start = match initial {
        Some(m) => m,
        None => initial_model(arch, config)?,
    };
    let mut rounds = Vec::new();
    let mut history: Vec<IterationRecord<T>> = Vec::new();

    for round in 0..config.max_repair_rounds {
        let mut report = train_from(start, data, weights, config)?;
        let offset = history.last().map_or(0, |r| r.iteration + 1);
        history.extend(report.history.drain(..).map(|mut r| {
            r.iteration += offset;
            r
        }));

        let local = report.model;
        let local_loss = evaluate(&local, &training, &coef, false)?.0.total;
        let z = variance_sort_index(&report.stats);
        let permuted = permute_model(&local, &z)?;
        let permuted_loss = evaluate(&permuted, &training, &coef, false)?.0.total;
        log::debug!(
            "repair round {round}: local {:.6e}, permuted {:.6e}, z = {:?}",
            local_loss.as_f64(),
            permuted_loss.as_f64(),
            z.as_slice()
        );
        rounds.push(RepairRound {
            local_loss,
            permuted_loss,
            permutation: z.as_slice().to_vec(),
        });

        let improved = local_loss - permuted_loss > T::zero();
        if !improved || round + 1 == config.max_repair_rounds {
            let traj = permuted.simulate(&training.inputs)?;
            let stats = variance_stats(&traj.states)?;
            let (l, g) = evaluate(&permuted, &training, &coef, true)?;
            let gradient_norm = g.expect("gradient requested").norm();
            history.push(IterationRecord {
                iteration: history.last().map_or(0, |r| r.iteration + 1),
                objective: l.total,
                loss: l.reweighted(weights.alpha, weights.beta),
                gradient_norm,
            });
            return Ok(TrainReport {
                model: permuted,
                history,
                iterations: report.iterations,
                converged: report.converged && !improved,
                termination: report.termination,
                gradient_norm,
                stats,
                repair: rounds,
            });
        }
        start = permuted;
    }
    unreachable!("loop returns on its last round")
}

/// Trains one model per seed and keeps the one with the lowest final
/// objective on the training window.
pub fn train_best_of<T: Real>(
    data: &Dataset<T>,
    arch: &Architecture,
    weights: &LossWeights<T>,
    config: &TrainConfig,
    seeds: &[u64],
    repair: bool,
) -> Result<TrainReport<T>> {
    let mut best: Option<TrainReport<T>> = None;
    let mut last_err = None;
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let result = if repair {
            train_with_repair(data, arch, weights, &cfg, None)
        } else {
            train(data, arch, weights, &cfg)
        };
        match result {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => objective_of(&r) < objective_of(b),
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Config("no seeds given".into())))
}

fn objective_of<T: Real>(r: &TrainReport<T>) -> T {
    r.history.last().map_or(T::max_value().unwrap(), |h| h.objective)
}
