use cortexfit::encoder::{
    fit, gradient, loss, ridge_oracle, tune, EncoderModel, EncodingData, FitConfig, HyperGrid, Penalty,
    WeightPenalty,
};
use cortexfit::metrics::region_score;
use cortexfit::synthetic::{gaussian, rng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn random_model(dims: &[usize], voxels: usize, seed: u64) -> EncoderModel {
    let mut r = rng(seed);
    let mut m = EncoderModel::zeros("r", voxels, dims, true, 1.0);
    for w in &mut m.weights {
        *w = gaussian(w.nrows(), w.ncols(), &mut r);
    }
    for b in m.biases.as_mut().unwrap() {
        *b = DVector::from_fn(voxels, |_, _| r.random_range(-1.0..1.0));
    }
    for o in m.layer_weights.iter_mut() {
        *o = r.random_range(0.3..1.0) * if r.random::<bool>() { 1.0 } else { -1.0 };
    }
    m
}

#[test]
fn prediction_matches_direct_sum() {
    let dims = [4, 3, 5];
    let m = random_model(&dims, 6, 1);
    let mut r = rng(2);
    let x: Vec<DMatrix<f64>> = dims.iter().map(|&c| gaussian(7, c, &mut r)).collect();
    let pred = m.predict(&x).unwrap();
    for v in 0..7 {
        for j in 0..6 {
            let mut direct = 0.0;
            for l in 0..3 {
                let mut inner = m.biases.as_ref().unwrap()[l][j];
                for c in 0..dims[l] {
                    inner += m.weights[l][(j, c)] * x[l][(v, c)];
                }
                direct += m.layer_weights[l] * inner;
            }
            assert!((pred[(v, j)] - direct).abs() <= 1e-6 * direct.abs().max(1.0));
        }
    }
}

#[test]
fn loss_matches_direct_evaluation() {
    let dims = [3, 2];
    let m = random_model(&dims, 4, 3);
    let mut r = rng(4);
    let x: Vec<DMatrix<f64>> = dims.iter().map(|&c| gaussian(9, c, &mut r)).collect();
    let y = gaussian(9, 4, &mut r);
    let (b1, b2) = (0.7, 1.3);
    let got = loss(&m, &x, &y, &Penalty::new(b1, b2)).unwrap();

    let mut resid = 0.0;
    for v in 0..9 {
        for j in 0..4 {
            let mut pred = 0.0;
            for l in 0..2 {
                let mut inner = m.biases.as_ref().unwrap()[l][j];
                for c in 0..dims[l] {
                    inner += m.weights[l][(j, c)] * x[l][(v, c)];
                }
                pred += m.layer_weights[l] * inner;
            }
            resid += (y[(v, j)] - pred).powi(2);
        }
    }
    let wsq: f64 = m.weights.iter().flat_map(|w| w.iter()).map(|v| v * v).sum();
    let l1: f64 = m.layer_weights.iter().map(|v| v.abs()).sum();
    let expected = resid + b1 * wsq + b2 * l1;
    assert!((got.total() - expected).abs() <= 1e-10 * expected);
    assert!((got.residual - resid).abs() <= 1e-10 * resid);
    assert!(got.total() >= 0.0);
}

/// Central differences on every parameter.
fn max_fd_error(layers: usize, kind: WeightPenalty, seed: u64) -> f64 {
    let dims: Vec<usize> = (0..layers).map(|l| 2 + l % 3).collect();
    let voxels = 3;
    let model = random_model(&dims, voxels, seed);
    let mut r = rng(seed + 100);
    let x: Vec<DMatrix<f64>> = dims.iter().map(|&c| gaussian(6, c, &mut r)).collect();
    let y = gaussian(6, voxels, &mut r);
    let p = Penalty { beta1: 0.8, beta2: 0.6, kind };
    let g = gradient(&model, &x, &y, &p).unwrap();
    let f = |m: &EncoderModel| loss(m, &x, &y, &p).unwrap().total();
    let h = 1e-5;
    let mut pairs = Vec::new();
    for l in 0..layers {
        for i in 0..model.weights[l].len() {
            let mut a = model.clone();
            let mut b = model.clone();
            a.weights[l].as_mut_slice()[i] += h;
            b.weights[l].as_mut_slice()[i] -= h;
            pairs.push((g.weights[l].as_slice()[i], (f(&a) - f(&b)) / (2.0 * h)));
        }
        for i in 0..voxels {
            let mut a = model.clone();
            let mut b = model.clone();
            a.biases.as_mut().unwrap()[l][i] += h;
            b.biases.as_mut().unwrap()[l][i] -= h;
            pairs.push((g.biases.as_ref().unwrap()[l][i], (f(&a) - f(&b)) / (2.0 * h)));
        }
        let mut a = model.clone();
        let mut b = model.clone();
        a.layer_weights[l] += h;
        b.layer_weights[l] -= h;
        pairs.push((g.layer_weights[l], (f(&a) - f(&b)) / (2.0 * h)));
    }
    let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    pairs
        .iter()
        .map(|(an, num)| (an - num).abs() / an.abs().max(num.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences() {
    for layers in [1, 2, 5] {
        for kind in [WeightPenalty::SquaredFrobenius, WeightPenalty::GroupNorm] {
            let err = max_fd_error(layers, kind, layers as u64);
            assert!(err < 1e-4, "layers={layers} {kind:?}: {err}");
        }
    }
}

#[test]
fn scaling_covariance() {
    let dims = [3, 4];
    let m = random_model(&dims, 5, 8);
    let mut r = rng(9);
    let x: Vec<DMatrix<f64>> = dims.iter().map(|&c| gaussian(6, c, &mut r)).collect();
    let c = 3.7;
    let mut scaled = m.clone();
    scaled.weights.iter_mut().for_each(|w| *w /= c);
    let xs: Vec<DMatrix<f64>> = x.iter().map(|v| v * c).collect();
    let a = m.predict(&x).unwrap();
    let b = scaled.predict(&xs).unwrap();
    assert!((a - &b).norm() <= 1e-6 * b.norm());
}

fn dataset(x: &DMatrix<f64>, y: &DMatrix<f64>, rows: std::ops::Range<usize>) -> EncodingData {
    let idx: Vec<usize> = rows.collect();
    EncodingData::new(vec![x.select_rows(&idx)], y.select_rows(&idx), idx).unwrap()
}

#[test]
fn constrained_fit_matches_ridge() {
    let mut r = rng(11);
    let x = gaussian(160, 12, &mut r);
    let w = gaussian(12, 5, &mut r);
    let y = &x * &w + gaussian(160, 5, &mut r) * 0.5;
    let train = dataset(&x, &y, 0..120);
    let test = dataset(&x, &y, 120..160);
    let lambda = 3.0;
    let cfg = FitConfig {
        use_bias: false,
        freeze_layer_weights: true,
        initial_layer_weight: Some(1.0),
        patience: None,
        tolerance: 0.0,
        max_epochs: 500,
        ..FitConfig::default()
    };
    let (model, _) = fit(&train, &test, Penalty::new(lambda, 0.0), &cfg, "r").unwrap();
    let oracle = ridge_oracle(&train.layers[0], &train.responses, lambda).unwrap();
    let expected = &test.layers[0] * oracle.transpose();
    let got = model.predict(&test.layers).unwrap();
    assert!((got - &expected).norm() <= 1e-4 * expected.norm());
}

#[test]
fn planted_recovery() {
    let mut r = rng(12);
    let x = gaussian(300, 20, &mut r);
    let y = &x * gaussian(20, 8, &mut r);
    let train = dataset(&x, &y, 0..240);
    let val = dataset(&x, &y, 240..270);
    let test = dataset(&x, &y, 270..300);
    let (model, report) = fit(&train, &val, Penalty::new(0.0, 0.0), &FitConfig::default(), "r").unwrap();
    let score = region_score(&model.predict(&test.layers).unwrap(), &test.responses).unwrap().0;
    assert!(score >= 0.999, "{score}");
    assert!(report.val_loss[report.selected_epoch] <= report.val_loss[0]);
    let best = report.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(report.val_loss[report.selected_epoch], best);
}

#[test]
fn strong_l1_sparsifies_layer_weights() {
    let mut r = rng(13);
    let n = 300;
    let layers: Vec<DMatrix<f64>> = (0..5).map(|_| gaussian(n, 16, &mut r)).collect();
    let y = &layers[0] * gaussian(16, 10, &mut r);
    let idx: Vec<usize> = (0..n).collect();
    let all = EncodingData::new(layers, y, idx).unwrap();
    let train = all.subset(&(0..250).collect::<Vec<_>>());
    let val = all.subset(&(250..300).collect::<Vec<_>>());
    let (model, _) = fit(&train, &val, Penalty::new(0.1, 100.0), &FitConfig::default(), "r").unwrap();
    let active = model.layer_weights.iter().filter(|w| w.abs() > 1e-3).count();
    assert!(active <= 2, "{:?}", model.layer_weights);
    assert!(model.layer_weights[0].abs() > 1e-3);
}

#[test]
fn fit_is_deterministic() {
    let mut r = rng(14);
    let x = gaussian(100, 10, &mut r);
    let y = &x * gaussian(10, 4, &mut r) + gaussian(100, 4, &mut r);
    let train = dataset(&x, &y, 0..80);
    let val = dataset(&x, &y, 80..100);
    let a = fit(&train, &val, Penalty::new(1.0, 1.0), &FitConfig::default(), "r").unwrap();
    let b = fit(&train, &val, Penalty::new(1.0, 1.0), &FitConfig::default(), "r").unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0, b.0);
}

#[test]
fn nan_responses_are_rejected() {
    let mut y = DMatrix::from_element(4, 1, 1.0);
    y[(2, 0)] = f64::NAN;
    assert!(EncodingData::new(vec![DMatrix::from_element(4, 2, 1.0)], y, vec![0, 1, 2, 3]).is_err());
}

#[test]
fn singleton_grid() {
    let mut r = rng(15);
    let x = gaussian(40, 5, &mut r);
    let y = &x * gaussian(5, 3, &mut r);
    let data = dataset(&x, &y, 0..40);
    let res = tune(&HyperGrid::single(1.0, 10.0), &[("r".into(), data)], &FitConfig::default(), 0).unwrap();
    assert_eq!((res.beta1, res.beta2), (1.0, 10.0));
    assert_eq!(res.cells.len(), 1);
}
