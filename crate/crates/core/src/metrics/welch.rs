use serde::{Deserialize, Serialize};

use super::special::student_t_two_sided;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "ns")]
    NotSignificant,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

impl Stars {
    pub fn label(self) -> &'static str {
        match self {
            Stars::NotSignificant => "ns",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

impl std::fmt::Display for Stars {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Strict thresholds: p = 0.05 is not significant.
pub fn stars(p: f64) -> Stars {
    if p < 0.001 {
        Stars::Three
    } else if p < 0.01 {
        Stars::Two
    } else if p < 0.05 {
        Stars::One
    } else {
        Stars::NotSignificant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub group_a: String,
    pub group_b: String,
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub stars: Stars,
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance two-sample t-test, two-sided.
pub fn welch(a: &[f64], b: &[f64]) -> Result<SignificanceResult> {
    welch_labeled("a", a, "b", b)
}

pub fn welch_labeled(
    label_a: &str,
    a: &[f64],
    label_b: &str,
    b: &[f64],
) -> Result<SignificanceResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Degenerate(format!(
            "welch needs at least 2 observations per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("welch input".into()));
    }
    let (ma, va) = moments(a);
    let (mb, vb) = moments(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(SignificanceResult {
        group_a: label_a.into(),
        group_b: label_b.into(),
        t,
        df,
        p,
        stars: stars(p),
    })
}
