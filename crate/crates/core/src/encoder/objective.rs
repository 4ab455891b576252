use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_finite, check_finite_layers, EncoderModel};
use crate::error::{Error, Result};
use crate::linalg::add_scaled;

/// Norm applied to each read-out matrix in the `beta1` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightPenalty {
    #[default]
    SquaredFrobenius,
    /// Unsquared Frobenius norm per layer (group lasso over layers).
    GroupNorm,
}

impl WeightPenalty {
    pub fn value(self, w: &DMatrix<f64>) -> f64 {
        match self {
            WeightPenalty::SquaredFrobenius => w.norm_squared(),
            WeightPenalty::GroupNorm => w.norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default)]
    pub kind: WeightPenalty,
}

impl Penalty {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            kind: WeightPenalty::SquaredFrobenius,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) || !self.beta1.is_finite() || !self.beta2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "penalties must be finite and nonnegative (beta1={}, beta2={})",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Objective split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual: f64,
    pub weight_term: f64,
    pub sparsity_term: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.residual + self.weight_term + self.sparsity_term
    }
}

pub(crate) fn penalty_terms(model: &EncoderModel, penalty: &Penalty) -> (f64, f64) {
    let w: f64 = model.weights.iter().map(|w| penalty.kind.value(w)).sum();
    let o: f64 = model.layer_weights.iter().map(|v| v.abs()).sum();
    (penalty.beta1 * w, penalty.beta2 * o)
}

fn check_batch(model: &EncoderModel, layers: &[DMatrix<f64>], y: &DMatrix<f64>, penalty: &Penalty) -> Result<()> {
    penalty.validate()?;
    model.check_inputs(layers)?;
    check_finite_layers(layers, "features")?;
    check_finite(y, "responses")?;
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    if y.ncols() != model.voxels() || y.nrows() != layers[0].nrows() {
        return Err(Error::Dimension(format!(
            "responses are {:?}, expected {} x {}",
            y.shape(),
            layers[0].nrows(),
            model.voxels()
        )));
    }
    Ok(())
}

/// Evaluates the training objective on a batch (summed over videos).
pub fn loss(model: &EncoderModel, layers: &[DMatrix<f64>], y: &DMatrix<f64>, penalty: &Penalty) -> Result<LossBreakdown> {
    check_batch(model, layers, y, penalty)?;
    let pred = model.combine(&model.layer_outputs(layers), y.nrows());
    let residual = (y - pred).norm_squared();
    let (weight_term, sparsity_term) = penalty_terms(model, penalty);
    Ok(LossBreakdown {
        residual,
        weight_term,
        sparsity_term,
    })
}

/// Parameter gradients, laid out like [`EncoderModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Option<Vec<DVector<f64>>>,
    pub layer_weights: DVector<f64>,
}

/// Analytic gradient of [`loss`]. The L1 term uses subgradient 0 at
/// `omega_l = 0`, as does the group norm at `W_l = 0`.
pub fn gradient(model: &EncoderModel, layers: &[DMatrix<f64>], y: &DMatrix<f64>, penalty: &Penalty) -> Result<Gradients> {
    check_batch(model, layers, y, penalty)?;
    let outputs = model.layer_outputs(layers);
    let resid = y - model.combine(&outputs, y.nrows());
    let mut weights = Vec::with_capacity(model.num_layers());
    let mut biases = model.biases.as_ref().map(|_| Vec::with_capacity(model.num_layers()));
    let mut omega = DVector::zeros(model.num_layers());
    for l in 0..model.num_layers() {
        let w_l = model.layer_weights[l];
        let mut g = resid.tr_mul(&layers[l]) * (-2.0 * w_l);
        match penalty.kind {
            WeightPenalty::SquaredFrobenius => add_scaled(&mut g, 2.0 * penalty.beta1, &model.weights[l]),
            WeightPenalty::GroupNorm => {
                let norm = model.weights[l].norm();
                if norm > 0.0 {
                    add_scaled(&mut g, penalty.beta1 / norm, &model.weights[l]);
                }
            }
        }
        weights.push(g);
        if let Some(b) = biases.as_mut() {
            let colsum = DVector::from_iterator(resid.ncols(), resid.column_iter().map(|c| c.sum()));
            b.push(colsum * (-2.0 * w_l));
        }
        omega[l] = -2.0 * resid.dot(&outputs[l]) + penalty.beta2 * sign0(w_l);
    }
    Ok(Gradients {
        weights,
        biases,
        layer_weights: omega,
    })
}

pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
