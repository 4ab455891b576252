use cortexfit::featurestore::*;
use cortexfit::synthetic::{gaussian, rng, video_ids};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn fm(m: &DMatrix<f64>) -> FeatureMatrix {
    FeatureMatrix::from_dmatrix(m).unwrap()
}

#[test]
fn unit_vectors_keep_unit_energy_on_average() {
    let spec = make_projection(7, 10_000, 64).unwrap();
    let r = spec.matrix();
    let mean: f64 = (0..spec.in_dim)
        .map(|i| r.row(i).iter().map(|(_, v)| v * v).sum::<f64>())
        .sum::<f64>()
        / spec.in_dim as f64;
    assert!((mean - 1.0).abs() < 0.05, "mean squared norm {mean}");
}

#[test]
fn nonzero_fraction_matches_density() {
    let spec = make_projection(11, 4096, 256).unwrap();
    let frac = spec.matrix().nnz() as f64 / (4096.0 * 256.0);
    let expected = 1.0 / 4096f64.sqrt();
    assert!((frac / expected - 1.0).abs() < 0.1, "fraction {frac}, expected {expected}");
}

#[test]
fn same_seed_same_matrix() {
    let a = make_projection(42, 1024, 256).unwrap().matrix();
    let b = make_projection(42, 1024, 256).unwrap().matrix();
    assert_eq!(a.to_dense(), b.to_dense());
    assert_ne!(a.to_dense(), make_projection(43, 1024, 256).unwrap().matrix().to_dense());
}

#[test]
fn pairwise_distances_are_preserved() {
    let mut r = rng(5);
    let x = gaussian(200, 2048, &mut r);
    let spec = make_projection(3, 2048, 512).unwrap();
    let p = apply_projection(&spec, &fm(&x), "x").unwrap().to_dmatrix();
    let within = (0..100)
        .filter(|&k| {
            let (i, j) = (2 * k, 2 * k + 1);
            let ratio = (p.row(i) - p.row(j)).norm() / (x.row(i) - x.row(j)).norm();
            (0.7..=1.3).contains(&ratio)
        })
        .count();
    assert!(within >= 95, "{within} of 100 pairs within [0.7, 1.3]");
}

#[test]
fn projection_is_linear() {
    let mut r = rng(8);
    let (x, y) = (gaussian(5, 300, &mut r), gaussian(5, 300, &mut r));
    let spec = make_projection(1, 300, 40).unwrap();
    let proj = |m: &DMatrix<f64>| apply_projection(&spec, &fm(m), "l").unwrap().to_dmatrix();
    let (a, b) = (0.7, -1.3);
    // Inputs are stored as f32, so compare against the projection of the
    // rounded combination.
    let combo = DMatrix::from_iterator(5, 300, (&x * a + &y * b).iter().map(|v| *v as f32 as f64));
    let lhs = proj(&combo);
    let rhs = proj(&x) * a + proj(&y) * b;
    assert!((&lhs - &rhs).norm() / rhs.norm() < 1e-6);
    assert!(proj(&DMatrix::zeros(5, 300)).iter().all(|v| *v == 0.0));
}

#[test]
fn temporal_average_matches_column_sums() {
    let mut r = rng(9);
    let raw = gaussian(7, 16, &mut r);
    let avg = temporal_average(&fm(&raw)).unwrap();
    for j in 0..16 {
        let mut s = 0.0;
        for i in 0..7 {
            s += raw[(i, j)] as f32 as f64;
        }
        let oracle = s / 7.0;
        assert!((avg[j] - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }
    assert_eq!(temporal_average(&FeatureMatrix::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap()).unwrap(), [2.0, 3.0]);
    assert_eq!(temporal_average(&FeatureMatrix::from_rows(&[vec![5., 7.]]).unwrap()).unwrap(), [5.0, 7.0]);
    assert!(temporal_average(&FeatureMatrix::zeros(0, 3)).is_err());
}

#[test]
fn feature_set_round_trip_is_exact() {
    let mut r = rng(2);
    let set = FeatureSet::new(
        "m",
        video_ids(9),
        vec![("conv1".into(), fm(&gaussian(9, 4, &mut r))), ("conv2".into(), fm(&gaussian(9, 6, &mut r)))],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_feature_set(&set, dir.path()).unwrap();
    let back = read_feature_set(dir.path()).unwrap();
    assert_eq!(back, set);

    let path = dir.path().join("layers").join("conv2.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(read_feature_set(dir.path()).is_err());
}

#[test]
fn response_store_round_trip_is_exact() {
    let mut r = rng(4);
    let dir = tempfile::tempdir().unwrap();
    let sets: Vec<ResponseSet> = ["01", "02"]
        .iter()
        .map(|s| {
            ResponseSet::new(
                *s,
                video_ids(6),
                vec![("V1".into(), fm(&gaussian(6, 3, &mut r))), ("EBA".into(), fm(&gaussian(6, 2, &mut r)))],
            )
            .unwrap()
        })
        .collect();
    for s in &sets {
        write_response_set(dir.path(), s).unwrap();
    }
    assert_eq!(read_response_store(dir.path()).unwrap(), sets);
}

proptest! {
    #[test]
    fn frame_order_does_not_change_the_average(seed in 0u64..1000, frames in 1usize..12) {
        let mut r = rng(seed);
        let raw = gaussian(frames, 5, &mut r);
        let mut order: Vec<usize> = (0..frames).collect();
        order.shuffle(&mut r);
        let shuffled = DMatrix::from_fn(frames, 5, |i, j| raw[(order[i], j)]);
        let a = temporal_average(&fm(&raw)).unwrap();
        let b = temporal_average(&fm(&shuffled)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
