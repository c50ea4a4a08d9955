//! EKF + MPC on the identified model driving the CSTR plant.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ekf::{ekf_step, ekf_update, EkfConfig, EkfState};
use super::mpc::{mpc_solve, MpcConfig};
use super::steady_state::{solve_steady_state, ReferencePair, SteadyStateConfig};
use crate::benchmark::cstr::{plant_step, CstrParams};
use crate::error::{Error, Result};
use crate::model::SsnnModel;

/// `start` for the first quarter of `steps`, lowered by `decrement` in each
/// later quarter.
pub fn quarterly_targets(steps: usize, start: f64, decrement: f64) -> Vec<f64> {
    (0..steps)
        .map(|k| start - decrement * ((4 * k) / steps.max(1)) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopConfig {
    pub params: CstrParams,
    pub sample_period: f64,
    pub substeps: usize,
    pub plant_x0: [f64; 2],
    /// Output target per step; its length sets the run length.
    pub targets: Vec<f64>,
    /// Standard deviation of the noise added to the measurement fed to the
    /// filter. The logged plant output is always noise-free.
    pub measurement_noise: f64,
    pub noise_seed: u64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            params: CstrParams::default(),
            sample_period: 1.0,
            substeps: 16,
            plant_x0: [0.0, 0.0],
            targets: quarterly_targets(100, 0.7, 0.1),
            measurement_noise: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LoopRecord {
    pub k: usize,
    pub y_target: f64,
    /// Plant output `x2`.
    pub y: f64,
    /// Measurement given to the filter.
    pub y_measured: f64,
    /// Output of the control model at the filtered estimate.
    pub y_hat: f64,
    /// Open-loop output of the source (full-order) model under the applied
    /// inputs, when one is supplied.
    pub y_full: Option<f64>,
    pub u: f64,
    pub x_hat: Vec<f64>,
    pub mpc_cost: f64,
    pub mpc_converged: bool,
}

/// Records up to the last completed step, plus the error that stopped the
/// run early, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub records: Vec<LoopRecord>,
    pub failure: Option<Error>,
    /// Covariance health per step: (asymmetry, smallest eigenvalue).
    pub covariance: Vec<(f64, f64)>,
}

impl ClosedLoopLog {
    /// Largest `|y - y_t|` over the last `window` steps of each constant
    /// target segment.
    pub fn segment_tail_errors(&self, window: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut start = 0;
        let r = &self.records;
        for i in 0..r.len() {
            if i + 1 == r.len() || r[i + 1].y_target != r[i].y_target {
                let from = start.max((i + 1).saturating_sub(window));
                let worst = r[from..=i]
                    .iter()
                    .map(|x| (x.y - x.y_target).abs())
                    .fold(0.0, f64::max);
                out.push((r[i].y_target, worst));
                start = i + 1;
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: &dyn std::fmt::Display| Error::Document(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(|e| err(&e))?;
        let s = self.records.first().map_or(0, |r| r.x_hat.len());
        let mut header: Vec<String> = ["k", "y_t", "y", "y_meas", "y_hat", "y_full", "u"]
            .iter()
            .map(|h| h.to_string())
            .collect();
        header.extend((1..=s).map(|i| format!("x_hat{i}")));
        header.push("mpc_cost".into());
        w.write_record(&header).map_err(|e| err(&e))?;
        for r in &self.records {
            let mut row = vec![
                r.k.to_string(),
                r.y_target.to_string(),
                r.y.to_string(),
                r.y_measured.to_string(),
                r.y_hat.to_string(),
                r.y_full.map_or(String::new(), |v| v.to_string()),
                r.u.to_string(),
            ];
            row.extend(r.x_hat.iter().map(|v| v.to_string()));
            row.push(r.mpc_cost.to_string());
            w.write_record(&row).map_err(|e| err(&e))?;
        }
        w.flush().map_err(|e| err(&e))
    }
}

/// Single-input single-output process driven by the loop.
pub trait Plant {
    /// Current (noise-free) output.
    fn output(&self) -> Result<f64>;
    /// Advances one sample with `u` held constant.
    fn advance(&mut self, u: f64) -> Result<()>;
}

/// The CSTR integrated with RK4; the output is the temperature `x2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CstrPlant {
    pub state: Vector2<f64>,
    pub params: CstrParams,
    pub sample_period: f64,
    pub substeps: usize,
}

impl Plant for CstrPlant {
    fn output(&self) -> Result<f64> {
        Ok(self.state[1])
    }

    fn advance(&mut self, u: f64) -> Result<()> {
        self.state = plant_step(&self.state, u, &self.params, self.sample_period, self.substeps)?;
        Ok(())
    }
}

/// A network used as the process, for nominal-loop checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPlant {
    pub model: SsnnModel<f64>,
    pub state: DVector<f64>,
}

impl Plant for ModelPlant {
    fn output(&self) -> Result<f64> {
        Ok(self.model.output_map(&self.state)?[0])
    }

    fn advance(&mut self, u: f64) -> Result<()> {
        self.state = self.model.state_step(&self.state, &DVector::from_element(1, u))?;
        if self.state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: 0 });
        }
        Ok(())
    }
}

/// Control model interface for the loop: single input, single output.
fn check_siso(model: &SsnnModel<f64>) -> Result<()> {
    if model.input_dim() != 1 || model.output_dim() != 1 {
        return Err(Error::Config("the CSTR loop needs a single-input single-output model".into()));
    }
    Ok(())
}

/// Runs the loop: measure, filter, solve for the references of the current
/// target, solve the MPC problem and apply its first move to the plant.
///
/// `full` is only simulated for logging.
pub fn closed_loop_run(
    cfg: &ClosedLoopConfig,
    model: &SsnnModel<f64>,
    full: Option<&SsnnModel<f64>>,
    ekf: &EkfConfig<f64>,
    mpc: &MpcConfig<f64>,
) -> Result<ClosedLoopLog> {
    if cfg.substeps == 0 || !(cfg.sample_period > 0.0) {
        return Err(Error::Config("plant needs a positive period and at least one substep".into()));
    }
    let mut plant = CstrPlant {
        state: Vector2::new(cfg.plant_x0[0], cfg.plant_x0[1]),
        params: cfg.params,
        sample_period: cfg.sample_period,
        substeps: cfg.substeps,
    };
    closed_loop_with_plant(&mut plant, cfg, model, full, ekf, mpc)
}

/// [`closed_loop_run`] against any [`Plant`]; the CSTR fields of `cfg` are
/// ignored.
pub fn closed_loop_with_plant(
    plant: &mut dyn Plant,
    cfg: &ClosedLoopConfig,
    model: &SsnnModel<f64>,
    full: Option<&SsnnModel<f64>>,
    ekf: &EkfConfig<f64>,
    mpc: &MpcConfig<f64>,
) -> Result<ClosedLoopLog> {
    check_siso(model)?;
    let s = model.state_dim();
    ekf.validate(s, 1)?;
    mpc.validate(s, 1)?;
    let noise = Normal::new(0.0, cfg.measurement_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    let ss_cfg = SteadyStateConfig::with_bounds(mpc.u_min.clone(), mpc.u_max.clone());

    let mut log = ClosedLoopLog {
        records: Vec::with_capacity(cfg.targets.len()),
        failure: None,
        covariance: Vec::with_capacity(cfg.targets.len()),
    };
    let mut full_state = full.map(|m| m.x0.clone());
    let mut est = EkfState::from_model(model, ekf);
    let mut refs: Option<ReferencePair<f64>> = None;
    let mut warm: Option<DMatrix<f64>> = None;
    let mut last_u: Option<DVector<f64>> = None;

    for (k, &target) in cfg.targets.iter().enumerate() {
        let step = (|| -> Result<LoopRecord> {
            let y = plant.output()?;
            let v = if cfg.measurement_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let y_meas = DVector::from_element(1, y + v);
            est = match &last_u {
                None => ekf_update(model, &est, ekf, &y_meas)?,
                Some(u) => ekf_step(model, &est, ekf, u, &y_meas)?,
            };
            if refs.as_ref().is_none_or(|r| r.target[0] != target) {
                refs = Some(solve_steady_state(model, &DVector::from_element(1, target), &ss_cfg)?);
            }
            let r = refs.as_ref().unwrap();
            let sol = mpc_solve(model, &est.x, r, mpc, warm.as_ref())?;
            let u = sol.first_move();
            let y_hat = model.output_map(&est.x)?[0];
            let y_full = match (full, &full_state) {
                (Some(m), Some(x)) => Some(m.output_map(x)?[0]),
                _ => None,
            };
            plant.advance(u[0]).map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence { step: k + 1 },
                other => other,
            })?;
            if let (Some(m), Some(x)) = (full, full_state.as_mut()) {
                *x = m.state_step(x, &u)?;
            }
            warm = Some(sol.shifted());
            last_u = Some(u.clone());
            Ok(LoopRecord {
                k,
                y_target: target,
                y,
                y_measured: y_meas[0],
                y_hat,
                y_full,
                u: u[0],
                x_hat: est.x.iter().copied().collect(),
                mpc_cost: sol.cost,
                mpc_converged: sol.converged,
            })
        })();
        match step {
            Ok(rec) => {
                log.covariance.push(est.covariance_health());
                log.records.push(rec);
            }
            Err(e) => {
                log.failure = Some(e);
                break;
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let t = quarterly_targets(100, 0.7, 0.1);
        assert_eq!(t.len(), 100);
        for (k, &v) in t.iter().enumerate() {
            let expected = [0.7, 0.6, 0.5, 0.4][k / 25];
            assert!((v - expected).abs() < 1e-12, "{k}: {v}");
        }
    }

    #[test]
    fn tail_errors_per_segment() {
        let rec = |k: usize, yt: f64, y: f64| LoopRecord {
            k,
            y_target: yt,
            y,
            y_measured: y,
            y_hat: y,
            y_full: None,
            u: 0.0,
            x_hat: vec![],
            mpc_cost: 0.0,
            mpc_converged: true,
        };
        let log = ClosedLoopLog {
            records: vec![rec(0, 0.7, 0.0), rec(1, 0.7, 0.69), rec(2, 0.6, 0.9), rec(3, 0.6, 0.61)],
            failure: None,
            covariance: vec![],
        };
        let e = log.segment_tail_errors(1);
        assert_eq!(e.len(), 2);
        assert!((e[0].1 - 0.01).abs() < 1e-12 && (e[1].1 - 0.01).abs() < 1e-12);
    }
}
