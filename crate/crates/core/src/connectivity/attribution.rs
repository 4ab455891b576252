use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ConnectivityModel, ModelKind};
use crate::error::{Error, Result};

/// Mean absolute effective weight from each source region to each target
/// region. `values[source][target]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub regions: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// False when any contributing model was an untrained baseline.
    pub informative: bool,
}

impl AttributionMatrix {
    pub fn zeros(regions: Vec<String>) -> Self {
        let r = regions.len();
        Self {
            regions,
            values: vec![vec![0.0; r]; r],
            informative: true,
        }
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.regions
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| Error::InvalidInput(format!("region `{name}` is not in the attribution matrix")))
    }

    pub fn get(&self, source: &str, target: &str) -> Result<f64> {
        Ok(self.values[self.index(source)?][self.index(target)?])
    }

    /// Contributions of every source region to `target`.
    pub fn column(&self, target: &str) -> Result<Vec<f64>> {
        let t = self.index(target)?;
        Ok(self.values.iter().map(|row| row[t]).collect())
    }

    /// Source regions sorted by decreasing contribution to `target`
    /// (ties by name).
    pub fn ranked_sources(&self, target: &str) -> Result<Vec<(String, f64)>> {
        let col = self.column(target)?;
        let mut ranked: Vec<(String, f64)> = self.regions.iter().cloned().zip(col).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ranked)
    }

    /// Copy in which each target's contributions sum to one. Targets with no
    /// contributions stay zero.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for t in 0..self.regions.len() {
            let total: f64 = self.values.iter().map(|row| row[t]).sum();
            if total > 0.0 {
                for row in &mut out.values {
                    row[t] /= total;
                }
            }
        }
        out
    }

    /// CSV with a header row of target names and one row per source.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source");
        for r in &self.regions {
            s.push(',');
            s.push_str(r);
        }
        s.push('\n');
        for (name, row) in self.regions.iter().zip(&self.values) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Attribution of a single model: fills the column of its target region.
pub fn attribute(model: &ConnectivityModel) -> AttributionMatrix {
    let layout = &model.layout;
    let mut out = AttributionMatrix::zeros(layout.names().to_vec());
    out.informative = matches!(model.kind, ModelKind::Learned(_));
    let map = model.effective_map().abs();
    let t = model.target_index();
    for s in 0..layout.len() {
        if !model.active[s] {
            continue;
        }
        let block = map.columns(layout.offset(s), layout.count(s));
        out.values[s][t] = block.sum() / block.len() as f64;
    }
    out
}

/// Averages single-model attributions per target region. All models must
/// share one layout.
pub fn attribute_models(models: &[&ConnectivityModel]) -> Result<AttributionMatrix> {
    let first = models
        .first()
        .ok_or_else(|| Error::EmptyInput("no models to attribute".into()))?;
    let layout = &first.layout;
    let mut out = AttributionMatrix::zeros(layout.names().to_vec());
    let mut counts = vec![0usize; layout.len()];
    for m in models {
        if m.layout != *layout {
            return Err(Error::InvalidInput("models disagree on the region layout".into()));
        }
        let single = attribute(m);
        out.informative &= single.informative;
        let t = m.target_index();
        counts[t] += 1;
        for s in 0..layout.len() {
            out.values[s][t] += single.values[s][t];
        }
    }
    for (t, &c) in counts.iter().enumerate() {
        if c > 1 {
            for row in &mut out.values {
                row[t] /= c as f64;
            }
        }
    }
    Ok(out)
}
