use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Closed-form ridge read-out for one layer with unit layer weight and no
/// bias: minimizes `|Y - X W^T|^2 + lambda |W|^2`.
///
/// `x` is `videos x features`, `y` is `videos x voxels`; the result is
/// `voxels x features`, i.e. `W = Y^T X (X^T X + lambda I)^-1`.
pub fn ridge_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "ridge design has {} rows, targets have {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let mut gram = x.tr_mul(x);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = x.tr_mul(y);
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::Singular(format!("X^T X + {lambda} I is not positive definite")))?;
    // Reject numerically singular factorizations too.
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if lo <= hi * 1e-10 {
        return Err(Error::Singular(format!("X^T X + {lambda} I is ill-conditioned")));
    }
    Ok(chol.solve(&rhs).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_design_returns_targets() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = ridge_oracle(&DMatrix::identity(3, 3), &y, 0.0).unwrap();
        assert!((w - y.transpose()).norm() < 1e-12);
    }

    #[test]
    fn singular_without_regularization() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(ridge_oracle(&x, &y, 0.0), Err(Error::Singular(_))));
        assert!(ridge_oracle(&x, &y, 0.1).is_ok());
    }

    #[test]
    fn shrinks_monotonically() {
        let x = DMatrix::from_fn(8, 3, |r, c| ((r * 5 + c * 3) % 7) as f64 - 3.0);
        let y = DMatrix::from_fn(8, 2, |r, c| ((r + 2 * c) % 5) as f64);
        let norms: Vec<f64> = [0.01, 0.1, 1.0, 10.0, 100.0, 1e4]
            .iter()
            .map(|&l| ridge_oracle(&x, &y, l).unwrap().norm())
            .collect();
        assert!(norms.windows(2).all(|p| p[1] < p[0]), "{norms:?}");
    }
}
