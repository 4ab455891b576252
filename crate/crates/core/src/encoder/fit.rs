use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::objective::{penalty_terms, Penalty, WeightPenalty};
use super::{EncoderModel, EncodingData};
use crate::error::{Error, Result};
use crate::linalg::add_scaled;

/// Optimizer settings for [`fit`].
///
/// Training is full-batch proximal gradient descent that alternates between
/// the read-out block `(W, b)` and the layer-weight block `omega`. Each block
/// step is `multiplier / L` where `L` is a Lipschitz bound of that block's
/// smooth part, so the step multipliers in `step_grid` are scale-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub penalty_kind: WeightPenalty,
    pub use_bias: bool,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs; `None` trains to convergence and
    /// returns the final parameters.
    pub patience: Option<usize>,
    /// Relative validation decrease an epoch needs to reset the patience
    /// counter.
    pub min_improvement: f64,
    /// Candidate step multipliers; the one with the largest first-epoch
    /// decrease is used.
    pub step_grid: Vec<f64>,
    /// Heavy-ball momentum on the read-out block.
    pub momentum: f64,
    pub freeze_layer_weights: bool,
    /// Initial value of every layer weight; `None` means `1/L`.
    pub initial_layer_weight: Option<f64>,
    /// Relative objective change below which training stops.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            penalty_kind: WeightPenalty::SquaredFrobenius,
            use_bias: true,
            max_epochs: 500,
            patience: Some(10),
            min_improvement: 1e-4,
            step_grid: vec![0.25, 0.5, 1.0],
            momentum: 0.0,
            freeze_layer_weights: false,
            initial_layer_weight: None,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub region: String,
    pub beta1: f64,
    pub beta2: f64,
    pub step_multiplier: f64,
    /// Training objective per epoch; index 0 is the initial model.
    pub train_loss: Vec<f64>,
    /// Validation mean squared error per epoch.
    pub val_loss: Vec<f64>,
    pub selected_epoch: usize,
    pub stop: StopReason,
    pub layer_weights: Vec<f64>,
    /// Held-out region score, filled in by the caller that evaluates it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Largest eigenvalue of `A^T A` for `A = [X, 1]` (or `X`), by power iteration.
pub fn spectral_norm_sq(x: &DMatrix<f64>, with_ones: bool) -> f64 {
    let c = x.ncols();
    let dim = c + usize::from(with_ones);
    if dim == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let mut u = x * v.rows(0, c);
        if with_ones {
            u.add_scalar_mut(v[c]);
        }
        let mut out = DVector::zeros(dim);
        out.rows_mut(0, c).copy_from(&x.tr_mul(&u));
        if with_ones {
            out[c] = u.sum();
        }
        out
    };
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = apply(&v);
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        let done = (next - lambda).abs() <= 1e-7 * next;
        lambda = next;
        if done {
            break;
        }
    }
    // Power iteration approaches from below.
    lambda * 1.01
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Trainer<'a> {
    data: &'a EncodingData,
    penalty: Penalty,
    cfg: &'a FitConfig,
    spectral: Vec<f64>,
    vel_w: Vec<DMatrix<f64>>,
    vel_b: Vec<DVector<f64>>,
}

impl<'a> Trainer<'a> {
    fn new(data: &'a EncodingData, penalty: Penalty, cfg: &'a FitConfig) -> Self {
        let spectral = data
            .layers
            .iter()
            .map(|x| spectral_norm_sq(x, cfg.use_bias))
            .collect();
        Self {
            data,
            penalty,
            cfg,
            spectral,
            vel_w: Vec::new(),
            vel_b: Vec::new(),
        }
    }

    fn reset(&mut self, model: &EncoderModel) {
        self.vel_w = model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        self.vel_b = vec![DVector::zeros(model.voxels()); model.num_layers()];
    }

    fn objective(&self, model: &EncoderModel, outputs: &[DMatrix<f64>]) -> f64 {
        let resid = &self.data.responses - model.combine(outputs, self.data.len());
        let (w, o) = penalty_terms(model, &self.penalty);
        resid.norm_squared() + w + o
    }

    /// One epoch; `outputs` holds the per-layer read-outs of `model` on the
    /// training rows and is kept in sync. Returns the new objective.
    fn epoch(&mut self, model: &mut EncoderModel, outputs: &mut Vec<DMatrix<f64>>, eta: f64) -> f64 {
        let y = &self.data.responses;
        let n = self.data.len();
        let beta1 = self.penalty.beta1;
        let squared = self.penalty.kind == WeightPenalty::SquaredFrobenius;

        // Read-out block.
        let resid = y - model.combine(outputs, n);
        let mut lip: f64 = model
            .layer_weights
            .iter()
            .zip(&self.spectral)
            .map(|(w, s)| 2.0 * w * w * s)
            .sum();
        if squared {
            lip += 2.0 * beta1;
        }
        if lip > 0.0 {
            let step = eta / lip;
            let mu = self.cfg.momentum;
            let colsum = model
                .biases
                .as_ref()
                .map(|_| DVector::from_iterator(resid.ncols(), resid.column_iter().map(|c| c.sum())));
            for l in 0..model.num_layers() {
                let w_l = model.layer_weights[l];
                let mut g = resid.tr_mul(&self.data.layers[l]) * (-2.0 * w_l);
                if squared {
                    add_scaled(&mut g, 2.0 * beta1, &model.weights[l]);
                }
                if mu > 0.0 {
                    self.vel_w[l] *= mu;
                    add_scaled(&mut self.vel_w[l], -step, &g);
                    model.weights[l] += &self.vel_w[l];
                } else {
                    add_scaled(&mut model.weights[l], -step, &g);
                }
                if !squared && beta1 > 0.0 {
                    let norm = model.weights[l].norm();
                    let shrink = if norm > 0.0 { (1.0 - step * beta1 / norm).max(0.0) } else { 0.0 };
                    model.weights[l] *= shrink;
                }
                if let (Some(b), Some(cs)) = (model.biases.as_mut(), colsum.as_ref()) {
                    let gb = cs * (-2.0 * w_l);
                    if mu > 0.0 {
                        self.vel_b[l] *= mu;
                        add_scaled(&mut self.vel_b[l], -step, &gb);
                        b[l] += &self.vel_b[l];
                    } else {
                        add_scaled(&mut b[l], -step, &gb);
                    }
                }
            }
            *outputs = model.layer_outputs(&self.data.layers);
        }

        // Layer-weight block.
        if !self.cfg.freeze_layer_weights {
            let layers = model.num_layers();
            let gram = DMatrix::from_fn(layers, layers, |i, j| outputs[i].dot(&outputs[j]));
            let top = if layers == 1 {
                gram[(0, 0)]
            } else {
                SymmetricEigen::new(gram).eigenvalues.max()
            };
            let lip = 2.0 * top;
            if lip > 0.0 {
                let resid = y - model.combine(outputs, n);
                let step = eta / lip;
                let thresh = step * self.penalty.beta2;
                for l in 0..layers {
                    let g = -2.0 * resid.dot(&outputs[l]);
                    model.layer_weights[l] = soft_threshold(model.layer_weights[l] - step * g, thresh);
                }
            }
        }
        self.objective(model, outputs)
    }
}

fn val_mse(model: &EncoderModel, val: &EncodingData) -> f64 {
    let pred = model.combine(&model.layer_outputs(&val.layers), val.len());
    (&val.responses - pred).norm_squared() / (val.len() * val.voxels()).max(1) as f64
}

/// Trains one region encoder.
///
/// With early stopping enabled the returned parameters are those of the
/// epoch with the lowest validation loss.
pub fn fit(
    train: &EncodingData,
    val: &EncodingData,
    penalty: Penalty,
    cfg: &FitConfig,
    region: &str,
) -> Result<(EncoderModel, FitReport)> {
    penalty.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    if val.is_empty() && cfg.patience.is_some() {
        return Err(Error::EmptyInput("early stopping needs validation rows".into()));
    }
    if train.layer_dims() != val.layer_dims() || train.voxels() != val.voxels() {
        return Err(Error::Dimension("training and validation shapes differ".into()));
    }
    if cfg.step_grid.is_empty() || cfg.step_grid.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput("step grid must hold positive multipliers".into()));
    }
    if !(0.0..1.0).contains(&cfg.min_improvement) {
        return Err(Error::InvalidInput("minimum improvement must lie in [0, 1)".into()));
    }
    train.assert_disjoint(val)?;

    let penalty = Penalty {
        kind: cfg.penalty_kind,
        ..penalty
    };
    let dims = train.layer_dims();
    let omega0 = cfg.initial_layer_weight.unwrap_or(1.0 / dims.len() as f64);
    let init = EncoderModel::zeros(region, train.voxels(), &dims, cfg.use_bias, omega0);
    let mut trainer = Trainer::new(train, penalty, cfg);
    let init_outputs = init.layer_outputs(&train.layers);
    let init_obj = trainer.objective(&init, &init_outputs);

    let diverged = |epoch: usize, reason: &str| Error::Divergence {
        epoch,
        beta1: penalty.beta1,
        beta2: penalty.beta2,
        reason: reason.into(),
    };

    // Step multiplier with the largest first-epoch decrease.
    let mut eta = cfg.step_grid[0];
    let mut best_trial = f64::INFINITY;
    for &candidate in &cfg.step_grid {
        let mut m = init.clone();
        let mut outs = init_outputs.clone();
        trainer.reset(&m);
        let obj = trainer.epoch(&mut m, &mut outs, candidate);
        if obj.is_finite() && obj < best_trial {
            best_trial = obj;
            eta = candidate;
        }
    }
    if !best_trial.is_finite() {
        return Err(diverged(1, "every step multiplier produced a non-finite loss"));
    }

    let mut model = init.clone();
    let mut outputs = init_outputs;
    trainer.reset(&model);
    let mut train_loss = vec![init_obj];
    let mut val_loss = vec![if val.is_empty() { f64::NAN } else { val_mse(&model, val) }];
    let mut best = (0usize, val_loss[0], model.clone());
    let mut last_gain = (0usize, val_loss[0]);
    let mut stop = StopReason::MaxEpochs;
    let mut prev = init_obj;

    for epoch in 1..=cfg.max_epochs {
        let obj = trainer.epoch(&mut model, &mut outputs, eta);
        if !obj.is_finite() || !model.is_finite() {
            return Err(diverged(epoch, "training loss is not finite"));
        }
        let v = if val.is_empty() { f64::NAN } else { val_mse(&model, val) };
        if !val.is_empty() && !v.is_finite() {
            return Err(diverged(epoch, "validation loss is not finite"));
        }
        train_loss.push(obj);
        val_loss.push(v);
        if cfg.patience.is_some() && v < best.1 {
            best = (epoch, v, model.clone());
        }
        if v < last_gain.1 * (1.0 - cfg.min_improvement) {
            last_gain = (epoch, v);
        }
        if let Some(p) = cfg.patience {
            if epoch - last_gain.0 >= p {
                stop = StopReason::Patience;
                break;
            }
        }
        if (prev - obj).abs() <= cfg.tolerance * prev.abs().max(f64::MIN_POSITIVE) {
            stop = StopReason::Converged;
            break;
        }
        prev = obj;
    }

    let epochs_run = train_loss.len() - 1;
    let (selected_epoch, mut chosen) = if cfg.patience.is_some() {
        (best.0, best.2)
    } else {
        (epochs_run, model)
    };
    chosen.meta = super::TrainingMeta {
        beta1: penalty.beta1,
        beta2: penalty.beta2,
        epochs_run,
        best_val_loss: val_loss[selected_epoch],
    };
    let report = FitReport {
        region: region.into(),
        beta1: penalty.beta1,
        beta2: penalty.beta2,
        step_multiplier: eta,
        train_loss,
        val_loss,
        selected_epoch,
        stop,
        layer_weights: chosen.layer_weights.iter().copied().collect(),
        score: None,
    };
    Ok((chosen, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_matches_eigen() {
        let x = DMatrix::from_fn(12, 4, |r, c| ((r * 3 + c * 5) % 7) as f64 - 3.0);
        for with_ones in [false, true] {
            let a = if with_ones { x.clone().insert_column(4, 1.0) } else { x.clone() };
            let exact = SymmetricEigen::new(a.tr_mul(&a)).eigenvalues.max();
            let est = spectral_norm_sq(&x, with_ones);
            assert!(est >= exact * 0.999 && est <= exact * 1.011, "{est} vs {exact}");
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn rejects_overlapping_rows() {
        let d = EncodingData::new(vec![DMatrix::from_element(3, 2, 1.0)], DMatrix::from_element(3, 1, 1.0), vec![0, 1, 2]).unwrap();
        let err = fit(&d, &d, Penalty::new(0.1, 0.1), &FitConfig::default(), "r").unwrap_err();
        assert!(err.to_string().contains("both training and validation"));
    }
}
