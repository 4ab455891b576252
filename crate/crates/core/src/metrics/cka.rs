use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Linear centered kernel alignment between two representations of the
/// same stimuli (rows).
pub fn linear_cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "CKA inputs have {} and {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidInput("CKA needs at least 2 rows".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CKA input".into()));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    let cross = yc.tr_mul(&xc).norm_squared();
    let xx = xc.tr_mul(&xc).norm();
    let yy = yc.tr_mul(&yc).norm();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Degenerate("CKA of a zero (or constant) matrix".into()));
    }
    Ok((cross / (xx * yy)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_similarity_and_zero() {
        let x = DMatrix::from_fn(6, 3, |r, c| ((r * 5 + c * 2) % 7) as f64);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(linear_cka(&x, &DMatrix::zeros(6, 2)).is_err());
        assert!(linear_cka(&x, &DMatrix::zeros(5, 2)).is_err());
    }
}
