//! JSON model files and training-report output.
//!
//! A model file carries the architecture, every layer as a row-major weight
//! list plus bias and activation, and `x0`. Reduced models add the threshold,
//! the source order and the frozen residual mean.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, Layer, SsnnModel};
use crate::reduction::ReducedModel;
use crate::scalar::Real;
use crate::training::{Termination, TrainReport};

pub const MODEL_FORMAT: &str = "ssnno-model/1";
pub const REDUCED_FORMAT: &str = "ssnno-model-reduced/1";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerDoc {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReductionDoc {
    pub delta: f64,
    pub source_order: usize,
    pub residual_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub architecture: Architecture,
    pub state_layers: Vec<LayerDoc>,
    pub output_layers: Vec<LayerDoc>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<ReductionDoc>,
}

/// A model file in either format.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Full(SsnnModel<f64>),
    Reduced(ReducedModel<f64>),
}

impl LoadedModel {
    /// The network itself, whatever its provenance.
    pub fn model(&self) -> &SsnnModel<f64> {
        match self {
            LoadedModel::Full(m) => m,
            LoadedModel::Reduced(r) => &r.model,
        }
    }
}

fn layer_doc<T: Real>(l: &Layer<T>) -> LayerDoc {
    let (rows, cols) = l.weights.shape();
    LayerDoc {
        rows,
        cols,
        weights: (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|rc| l.weights[rc].as_f64())
            .collect(),
        bias: l.bias.iter().map(|v| v.as_f64()).collect(),
        activation: l.activation,
    }
}

fn layer_from_doc(d: &LayerDoc) -> Result<Layer<f64>> {
    if d.weights.len() != d.rows * d.cols {
        return Err(Error::Document(format!(
            "layer declares {}×{} but lists {} weights",
            d.rows,
            d.cols,
            d.weights.len()
        )));
    }
    Layer::new(
        DMatrix::from_row_slice(d.rows, d.cols, &d.weights),
        DVector::from_column_slice(&d.bias),
        d.activation,
    )
}

impl ModelDocument {
    pub fn from_model<T: Real>(model: &SsnnModel<T>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            architecture: model.arch.clone(),
            state_layers: model.state_layers.iter().map(layer_doc).collect(),
            output_layers: model.output_layers.iter().map(layer_doc).collect(),
            x0: model.x0.iter().map(|v| v.as_f64()).collect(),
            reduction: None,
        }
    }

    pub fn from_reduced<T: Real>(rm: &ReducedModel<T>) -> Self {
        Self {
            format: REDUCED_FORMAT.into(),
            reduction: Some(ReductionDoc {
                delta: rm.delta.as_f64(),
                source_order: rm.source_order,
                residual_mean: rm.residual_mean.iter().map(|v| v.as_f64()).collect(),
            }),
            ..Self::from_model(&rm.model)
        }
    }

    pub fn to_model(&self) -> Result<SsnnModel<f64>> {
        let layers = |docs: &[LayerDoc]| docs.iter().map(layer_from_doc).collect::<Result<Vec<_>>>();
        SsnnModel::from_parts(
            self.architecture.clone(),
            layers(&self.state_layers)?,
            layers(&self.output_layers)?,
            DVector::from_column_slice(&self.x0),
        )
    }

    pub fn load(&self) -> Result<LoadedModel> {
        let model = self.to_model()?;
        match (self.format.as_str(), &self.reduction) {
            (MODEL_FORMAT, None) => Ok(LoadedModel::Full(model)),
            (REDUCED_FORMAT, Some(r)) => {
                if r.source_order < model.state_dim() || r.residual_mean.len() != r.source_order - model.state_dim() {
                    return Err(Error::Document("residual mean does not match the reduced order".into()));
                }
                Ok(LoadedModel::Reduced(ReducedModel {
                    model,
                    delta: r.delta,
                    residual_mean: DVector::from_column_slice(&r.residual_mean),
                    source_order: r.source_order,
                }))
            }
            (REDUCED_FORMAT, None) => Err(Error::Document("reduced model without reduction data".into())),
            (other, _) => Err(Error::Document(format!("unsupported model format {other:?}"))),
        }
    }
}

pub fn model_to_json<T: Real>(model: &SsnnModel<T>) -> String {
    serde_json::to_string_pretty(&ModelDocument::from_model(model)).expect("model documents serialize")
}

pub fn reduced_to_json<T: Real>(rm: &ReducedModel<T>) -> String {
    serde_json::to_string_pretty(&ModelDocument::from_reduced(rm)).expect("model documents serialize")
}

pub fn model_from_json(text: &str) -> Result<LoadedModel> {
    let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
    doc.load()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Document(format!("{}: {e}", path.display())))
}

pub fn save_model<T: Real>(path: &Path, model: &SsnnModel<T>) -> Result<()> {
    write_text(path, &(model_to_json(model) + "\n"))
}

pub fn save_reduced<T: Real>(path: &Path, rm: &ReducedModel<T>) -> Result<()> {
    write_text(path, &(reduced_to_json(rm) + "\n"))
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Document(format!("{}: {e}", path.display())))?;
    model_from_json(&text)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RepairRoundDoc {
    pub local_loss: f64,
    pub permuted_loss: f64,
    pub permutation: Vec<usize>,
}

/// Summary of a training run; the per-iteration history goes to CSV.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReportDocument {
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub gradient_norm: f64,
    pub final_loss: Option<f64>,
    pub final_spe: Option<f64>,
    pub variances: Vec<f64>,
    pub state_mean: Vec<f64>,
    pub repair: Vec<RepairRoundDoc>,
}

impl ReportDocument {
    pub fn from_report<T: Real>(r: &TrainReport<T>) -> Self {
        let last = r.final_loss();
        Self {
            iterations: r.iterations,
            converged: r.converged,
            termination: r.termination,
            gradient_norm: r.gradient_norm.as_f64(),
            final_loss: last.map(|h| h.loss.total.as_f64()),
            final_spe: last.map(|h| h.loss.spe.as_f64()),
            variances: r.stats.variances.iter().map(|v| v.as_f64()).collect(),
            state_mean: r.stats.mean.iter().map(|v| v.as_f64()).collect(),
            repair: r
                .repair
                .iter()
                .map(|x| RepairRoundDoc {
                    local_loss: x.local_loss.as_f64(),
                    permuted_loss: x.permuted_loss.as_f64(),
                    permutation: x.permutation.clone(),
                })
                .collect(),
        }
    }
}

#[derive(serde::Serialize)]
struct HistoryRow {
    iteration: usize,
    objective: f64,
    j: f64,
    j_y: f64,
    j_v: f64,
    j_g: f64,
    grad_norm: f64,
}

/// Writes `iteration,objective,j,j_y,j_v,j_g,grad_norm`, one row per iterate.
pub fn write_history_csv<T: Real>(path: &Path, report: &TrainReport<T>) -> Result<()> {
    let err = |e: csv::Error| Error::Document(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for h in &report.history {
        w.serialize(HistoryRow {
            iteration: h.iteration,
            objective: h.objective.as_f64(),
            j: h.loss.total.as_f64(),
            j_y: h.loss.spe.as_f64(),
            j_v: h.loss.variance.as_f64(),
            j_g: h.loss.param.as_f64(),
            grad_norm: h.gradient_norm.as_f64(),
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Document(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> SsnnModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = Architecture::two_layer(3, 1, 1, 3, 3).unwrap();
        let mut m = SsnnModel::random(&arch, 0.8, &mut rng).unwrap();
        m.x0 = DVector::from_vec(vec![0.1, -1.0 / 3.0, 2.5e-17]);
        m
    }

    #[test]
    fn full_model_round_trip_is_bitwise() {
        let m = model();
        let back = model_from_json(&model_to_json(&m)).unwrap();
        assert_eq!(back, LoadedModel::Full(m));
    }

    #[test]
    fn reduced_model_round_trip() {
        let m = model();
        let report = crate::reduction::SignificanceReport {
            delta: 0.0005,
            variances: DVector::from_vec(vec![0.1, 0.01, 0.0]),
            significant_count: 2,
            residual_mean: DVector::from_vec(vec![0.25]),
        };
        let rm = crate::reduction::reduce(&m, &report).unwrap();
        let text = reduced_to_json(&rm);
        assert!(text.contains(REDUCED_FORMAT));
        assert_eq!(model_from_json(&text).unwrap(), LoadedModel::Reduced(rm));
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let mut doc = ModelDocument::from_model(&model());
        doc.format = "other/2".into();
        assert!(doc.load().is_err());
        let mut doc = ModelDocument::from_model(&model());
        doc.state_layers[0].weights.pop();
        assert!(doc.load().is_err());
        let mut doc = ModelDocument::from_model(&model());
        doc.x0.push(0.0);
        assert!(doc.load().is_err());
        assert!(model_from_json("{").is_err());
    }
}
