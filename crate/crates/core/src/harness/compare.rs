use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bundle::ResultBundle;
use crate::error::{Error, Result};
use crate::metrics::{welch_labeled, SignificanceResult};

/// Named groups of models compared along a shared axis (regions or blocks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    /// Group name to member model names.
    pub groups: BTreeMap<String, Vec<String>>,
    /// Axis points to compare; empty means every point all members share.
    #[serde(default)]
    pub axis: Vec<String>,
}

impl ComparisonSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(Error::InvalidInput("a comparison needs at least two groups".into()));
        }
        let mut seen = BTreeSet::new();
        for (g, members) in &self.groups {
            if members.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "group `{g}` needs at least two models for a Welch test"
                )));
            }
            for m in members {
                if !seen.insert(m) {
                    return Err(Error::InvalidInput(format!("model `{m}` belongs to more than one group")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub models: usize,
    pub mean: f64,
    /// Sample standard deviation over models.
    pub std: f64,
    /// Worst model and its score.
    pub min: (String, f64),
    /// Best model and its score.
    pub max: (String, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub group_a: String,
    pub group_b: String,
    pub result: SignificanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisComparison {
    pub axis: String,
    pub groups: Vec<GroupSummary>,
    pub tests: Vec<PairTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// What one observation in the Welch tests is.
    pub sample_unit: String,
    pub rows: Vec<AxisComparison>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,group_a,group_b,mean_a,std_a,mean_b,std_b,t,df,p,stars\n");
        for row in &self.rows {
            let find = |g: &str| row.groups.iter().find(|x| x.group == g).expect("tested groups are summarized");
            for t in &row.tests {
                let (a, b) = (find(&t.group_a), find(&t.group_b));
                let r = &t.result;
                let _ = writeln!(
                    s,
                    "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e},{}",
                    row.axis, t.group_a, t.group_b, a.mean, a.std, b.mean, b.std, r.t, r.df, r.p, r.stars
                );
            }
        }
        s
    }
}

/// Per-model mean scores by axis point, keyed by source model name.
pub fn model_scores(bundles: &[ResultBundle]) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut out = BTreeMap::new();
    for b in bundles {
        let scores = b.aggregates.iter().map(|(k, v)| (k.clone(), v.mean)).collect();
        if out.insert(b.source_model.clone(), scores).is_some() {
            return Err(Error::InvalidInput(format!("two bundles for model `{}`", b.source_model)));
        }
    }
    Ok(out)
}

/// Welch tests between every pair of groups at every axis point, with
/// per-model mean scores as observations.
pub fn compare_families(spec: &ComparisonSpec, results: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<ComparisonTable> {
    spec.validate()?;
    let lookup = |model: &str| {
        results
            .get(model)
            .ok_or_else(|| Error::InvalidInput(format!("no results for model `{model}`")))
    };
    let axis: Vec<String> = if spec.axis.is_empty() {
        let mut shared: Option<BTreeSet<&String>> = None;
        for m in spec.groups.values().flatten() {
            let keys: BTreeSet<&String> = lookup(m)?.keys().collect();
            shared = Some(match shared {
                None => keys,
                Some(s) => s.intersection(&keys).copied().collect(),
            });
        }
        shared.unwrap_or_default().into_iter().cloned().collect()
    } else {
        spec.axis.clone()
    };
    if axis.is_empty() {
        return Err(Error::EmptyInput("the groups share no axis points".into()));
    }

    let mut rows = Vec::with_capacity(axis.len());
    for point in &axis {
        let mut groups = Vec::new();
        let mut samples: Vec<(&String, Vec<f64>)> = Vec::new();
        for (g, members) in &spec.groups {
            let mut vals = Vec::with_capacity(members.len());
            for m in members {
                let v = *lookup(m)?.get(point).ok_or_else(|| {
                    Error::InvalidInput(format!("model `{m}` has no score for `{point}`"))
                })?;
                vals.push((m.clone(), v));
            }
            let n = vals.len() as f64;
            let mean = vals.iter().map(|v| v.1).sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let by_score = |a: &&(String, f64), b: &&(String, f64)| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0));
            let min = vals.iter().min_by(by_score).unwrap().clone();
            let max = vals.iter().max_by(by_score).unwrap().clone();
            groups.push(GroupSummary {
                group: g.clone(),
                models: vals.len(),
                mean,
                std,
                min,
                max,
            });
            samples.push((g, vals.into_iter().map(|v| v.1).collect()));
        }
        let mut tests = Vec::new();
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                let (ga, a) = &samples[i];
                let (gb, b) = &samples[j];
                tests.push(PairTest {
                    group_a: (*ga).clone(),
                    group_b: (*gb).clone(),
                    result: welch_labeled(ga, a, gb, b)?,
                });
            }
        }
        rows.push(AxisComparison {
            axis: point.clone(),
            groups,
            tests,
        });
    }
    Ok(ComparisonTable {
        sample_unit: "per-model mean score".into(),
        rows,
    })
}
