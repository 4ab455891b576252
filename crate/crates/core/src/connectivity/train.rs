use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::strategy::RefinementTask;
use super::{
    assert_disjoint, initial_model, Activation, ConnectivityModel, ConnectivityTrainingMeta, ModelKind, Provenance,
    Variant,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectivityConfig {
    pub hidden: usize,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    /// Candidate L2 strengths; the one with the lowest validation error wins.
    pub l2_grid: Vec<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub activation: Activation,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            input_dropout: 0.2,
            hidden_dropout: 0.2,
            l2_grid: vec![1e-3, 1e-2, 1e-1],
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 300,
            patience: 10,
            activation: Activation::Identity,
        }
    }
}

impl ConnectivityConfig {
    pub fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..1.0).contains(&p);
        if self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidInput(
                "hidden width, batch size and epoch limit must be positive".into(),
            ));
        }
        if !p_ok(self.input_dropout) || !p_ok(self.hidden_dropout) {
            return Err(Error::InvalidInput("dropout rates must lie in [0, 1)".into()));
        }
        if self.l2_grid.is_empty() || self.l2_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidInput("l2 grid must be nonempty, finite and nonnegative".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub target: String,
    pub variant: String,
    pub l2: f64,
    /// Mean training objective per epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE per epoch; index 0 is the initial model.
    pub val_loss: Vec<f64>,
    pub selected_epoch: usize,
    /// `(l2, best validation MSE)` for every grid value tried.
    pub candidates: Vec<(f64, f64)>,
}

#[derive(Default)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        if self.m.is_empty() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
        }
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn dropout(m: &mut DMatrix<f64>, p: f64, rng: &mut ChaCha8Rng) -> Option<DMatrix<f64>> {
    if p == 0.0 {
        return None;
    }
    let scale = 1.0 / (1.0 - p);
    let keep = DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| if rng.random::<f64>() < p { 0.0 } else { scale });
    m.component_mul_assign(&keep);
    Some(keep)
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

fn mse(model: &ConnectivityModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (model.forward(x).1 - y).norm_squared() / y.len() as f64
}

/// Trains one learned model with a fixed L2 strength.
///
/// Inputs are the measured responses of the training videos. The loss is
/// the mean squared error over videos and target voxels plus
/// `l2 * (|A1|^2 + |A2|^2)`. Training runs Adam on seeded minibatches with
/// inverted dropout and keeps the parameters with the lowest validation
/// MSE, stopping after `patience` epochs without improvement.
pub fn train_connectivity(
    task: &RefinementTask<'_>,
    variant: Variant,
    l2: f64,
) -> Result<(ConnectivityModel, ConnectivityReport)> {
    let cfg = task.config;
    cfg.validate()?;
    if !(l2.is_finite() && l2 >= 0.0) {
        return Err(Error::InvalidInput(format!("l2 strength {l2} must be finite and nonnegative")));
    }
    task.train.expect(Provenance::GroundTruth, "connectivity training input")?;
    task.val_truth.expect(Provenance::GroundTruth, "connectivity validation target")?;
    if task.val_inputs.videos != task.val_truth.videos {
        return Err(Error::InvalidInput("validation inputs and targets cover different videos".into()));
    }
    assert_disjoint(task.train, task.val_inputs)?;
    if task.train.is_empty() || task.val_inputs.is_empty() {
        return Err(Error::EmptyInput("connectivity training or validation split".into()));
    }

    let layout = task.layout;
    let active = variant.active_regions(layout, task.target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut model = initial_model(
        ModelKind::Learned(variant),
        layout,
        task.target,
        active.clone(),
        cfg.hidden,
        cfg.activation,
        rng.random(),
    )?;
    model.dropout = (cfg.input_dropout, cfg.hidden_dropout);

    let x = task.train.concat(layout, &active)?;
    let y = task.train.region(task.target)?.clone();
    let xv = task.val_inputs.concat(layout, &active)?;
    let yv = task.val_truth.region(task.target)?.clone();

    let n = x.nrows();
    let outputs = y.ncols() as f64;
    let mut opt = [Adam::default(), Adam::default(), Adam::default(), Adam::default()];
    let mut order: Vec<usize> = (0..n).collect();

    let mut best = model.clone();
    let mut best_val = mse(&model, &xv, &yv);
    let mut val_loss = vec![best_val];
    let mut train_loss = Vec::new();
    let mut selected = 0;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len() as f64;
            let mut xb = x.select_rows(batch);
            let yb = y.select_rows(batch);
            dropout(&mut xb, cfg.input_dropout, &mut rng);

            let (pre, _) = model.forward(&xb);
            let mut h = pre.map(|v| cfg.activation.apply(v));
            let keep2 = dropout(&mut h, cfg.hidden_dropout, &mut rng);
            let mut out = &h * model.a2.transpose();
            for mut row in out.row_iter_mut() {
                row += model.c2.transpose();
            }
            let resid = out - yb;
            epoch_loss += resid.norm_squared() / (b * outputs) * b;

            let g = resid * (2.0 / (b * outputs));
            let mut d_a2 = g.tr_mul(&h);
            d_a2 += &model.a2 * (2.0 * l2);
            let d_c2 = column_sums(&g);
            let mut d_h = &g * &model.a2;
            if let Some(k) = keep2 {
                d_h.component_mul_assign(&k);
            }
            d_h.zip_apply(&pre, |d, p| *d *= cfg.activation.derivative(p));
            let mut d_a1 = d_h.tr_mul(&xb);
            d_a1 += &model.a1 * (2.0 * l2);
            let d_c1 = column_sums(&d_h);

            let lr = cfg.learning_rate;
            opt[0].step(model.a1.as_mut_slice(), d_a1.as_slice(), lr);
            opt[1].step(model.c1.as_mut_slice(), d_c1.as_slice(), lr);
            opt[2].step(model.a2.as_mut_slice(), d_a2.as_slice(), lr);
            opt[3].step(model.c2.as_mut_slice(), d_c2.as_slice(), lr);
            model.zero_inactive_columns();
        }
        let penalty = l2 * (model.a1.norm_squared() + model.a2.norm_squared());
        train_loss.push(epoch_loss / n as f64 + penalty);

        let v = mse(&model, &xv, &yv);
        if !v.is_finite() || !model.is_finite() {
            return Err(Error::NonFinite(format!(
                "connectivity model for `{}` diverged at epoch {epoch} (l2={l2})",
                task.target
            )));
        }
        val_loss.push(v);
        if v < best_val {
            best_val = v;
            best = model.clone();
            selected = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    best.training = Some(ConnectivityTrainingMeta {
        l2,
        epochs_run: train_loss.len(),
        selected_epoch: selected,
        best_val_loss: best_val,
    });
    let report = ConnectivityReport {
        target: task.target.into(),
        variant: variant.name().into(),
        l2,
        train_loss,
        val_loss,
        selected_epoch: selected,
        candidates: vec![(l2, best_val)],
    };
    Ok((best, report))
}

/// Trains one model per value of the configured L2 grid and keeps the one
/// with the lowest validation MSE (ties go to the stronger penalty).
pub fn tune_connectivity(task: &RefinementTask<'_>, variant: Variant) -> Result<(ConnectivityModel, ConnectivityReport)> {
    task.config.validate()?;
    let mut best: Option<(ConnectivityModel, ConnectivityReport)> = None;
    let mut candidates = Vec::new();
    for &l2 in &task.config.l2_grid {
        let (model, report) = train_connectivity(task, variant, l2)?;
        let score = report.val_loss[report.selected_epoch];
        candidates.push((l2, score));
        let better = match &best {
            None => true,
            Some((_, r)) => {
                let incumbent = r.val_loss[r.selected_epoch];
                score < incumbent || (score == incumbent && l2 > r.l2)
            }
        };
        if better {
            best = Some((model, report));
        }
    }
    let (model, mut report) = best.expect("grid is nonempty");
    report.candidates = candidates;
    Ok((model, report))
}
