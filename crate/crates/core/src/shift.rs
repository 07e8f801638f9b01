//! Distribution-shift tables: accuracy drop and score MMD across corruption levels.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{corrupt, CorruptionKind, CorruptionSpec, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{mmd, spearman};
use crate::nn::Mlp;
use crate::training::evaluate;
use crate::trust::{batch_trust_scores, TrustConfig};

pub const DEFAULT_LEVELS: [f64; 5] = [0.0, 0.1, 0.2, 0.4, 0.8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub level: f64,
    pub accuracy: f64,
    /// Clean test accuracy minus accuracy at this level.
    pub accuracy_drop: f64,
    /// MMD between TRUST scores on the corrupted test set and on the training set.
    pub mmd: f64,
}

/// One row per level. `clean_scores`, when given, are reused for level 0
/// instead of rescoring the uncorrupted test set.
#[allow(clippy::too_many_arguments)]
pub fn shift_table(
    model: &Mlp,
    train_scores: &[f64],
    test: &Dataset,
    kind: CorruptionKind,
    levels: &[f64],
    seed: u64,
    cfg: &TrustConfig,
    clean_scores: Option<&[f64]>,
) -> Result<Vec<ShiftRow>> {
    if levels.is_empty() {
        return Err(Error::Empty("no corruption levels".into()));
    }
    if let Some(s) = clean_scores {
        if s.len() != test.len() {
            return Err(Error::Shape(format!("{} clean scores for {} test samples", s.len(), test.len())));
        }
    }
    let clean = evaluate(model, test)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let shifted = corrupt(test, &CorruptionSpec { kind, level, seed })?;
        let accuracy = evaluate(model, &shifted)?;
        let scores: Vec<f64> = match clean_scores {
            Some(s) if level == 0.0 => s.to_vec(),
            _ => batch_trust_scores(model, &shifted.features, cfg)?
                .iter()
                .map(|r| r.score)
                .collect(),
        };
        rows.push(ShiftRow {
            level,
            accuracy,
            accuracy_drop: clean - accuracy,
            mmd: mmd(&scores, train_scores)?,
        });
    }
    Ok(rows)
}

/// Spearman correlation between MMD and accuracy drop over the rows.
pub fn shift_trend(rows: &[ShiftRow]) -> Result<f64> {
    let m: Vec<f64> = rows.iter().map(|r| r.mmd).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.accuracy_drop).collect();
    spearman(&m, &d)
}

/// CSV with header `level,accuracy,accuracy_drop,mmd`.
pub fn write_shift_csv<W: Write>(mut out: W, rows: &[ShiftRow]) -> Result<()> {
    writeln!(out, "level,accuracy,accuracy_drop,mmd")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.level, r.accuracy, r.accuracy_drop, r.mmd)?;
    }
    Ok(())
}
