//! Cross-evaluation of federation models and the federation accuracy (FA),
//! fairness (FF) and personalized accuracy (PFA) metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Shard};
use crate::nn::{accuracy, ModelParams};
use crate::{Error, Result};

/// `acc[i][j]` = accuracy of model `i` on node `j`'s private test set, stored row-major.
///
/// Usually square (one model per node). The joint baseline uses a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossAccuracyMatrix {
    pub round: usize,
    pub rows: usize,
    pub cols: usize,
    pub acc: Vec<f64>,
}

impl CrossAccuracyMatrix {
    pub fn from_rows(round: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::Empty("accuracy matrix"));
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                actual: rows.iter().map(Vec::len).find(|&l| l != cols).unwrap_or(0),
                context: "accuracy matrix row",
            });
        }
        let acc: Vec<f64> = rows.into_iter().flatten().collect();
        if acc.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidDataset(
                "accuracy entries must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            round,
            rows: acc.len() / cols,
            cols,
            acc,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.acc[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.acc[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.get(i, i))
            .collect()
    }
}

/// Evaluates every model on every shard's test set.
pub fn cross_accuracy(
    dataset: &Dataset,
    models: &[ModelParams],
    shards: &[Shard],
    round: usize,
) -> Result<CrossAccuracyMatrix> {
    if models.len() != shards.len() {
        return Err(Error::CountMismatchModels {
            models: models.len(),
            shards: shards.len(),
        });
    }
    row_accuracy(dataset, models, shards, round)
}

/// Rectangular variant: `models.len()` rows by `shards.len()` columns.
pub fn row_accuracy(
    dataset: &Dataset,
    models: &[ModelParams],
    shards: &[Shard],
    round: usize,
) -> Result<CrossAccuracyMatrix> {
    if models.is_empty() || shards.is_empty() {
        return Err(Error::Empty("models or shards"));
    }
    let rows: Vec<Vec<f64>> = models
        .par_iter()
        .map(|m| {
            shards
                .iter()
                .map(|s| accuracy(m, &s.test_view(dataset)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    CrossAccuracyMatrix::from_rows(round, rows)
}

/// FA: mean of all entries, accumulated row-major.
pub fn federation_accuracy(m: &CrossAccuracyMatrix) -> f64 {
    m.acc.iter().sum::<f64>() / m.acc.len() as f64
}

/// FF: Bessel-corrected standard deviation over all entries. Lower is fairer.
pub fn federation_fairness(m: &CrossAccuracyMatrix) -> Result<f64> {
    let n = m.acc.len();
    if n < 2 {
        return Err(Error::MetricUndefined(
            "fairness needs at least two entries",
        ));
    }
    let fa = federation_accuracy(m);
    let ss: f64 = m.acc.iter().map(|a| (a - fa) * (a - fa)).sum();
    Ok((ss / (n - 1) as f64).sqrt())
}

/// PFA: mean of the diagonal. For a single-row (joint) matrix this is the row mean.
pub fn personalized_fa(m: &CrossAccuracyMatrix) -> f64 {
    if m.rows == 1 {
        return federation_accuracy(m);
    }
    let diag = m.diagonal();
    diag.iter().sum::<f64>() / diag.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub fa: f64,
    /// `None` where fairness is not reported (single-model joint baseline, 1x1 matrices).
    pub ff: Option<f64>,
    pub pfa: f64,
    pub per_node_acc: Vec<f64>,
    /// Centralized runs only: mean accuracy of the aggregated server model over all test sets.
    pub global_acc: Option<f64>,
    pub matrix: CrossAccuracyMatrix,
}

impl MetricsRecord {
    pub fn from_matrix(matrix: CrossAccuracyMatrix) -> Self {
        let ff = if matrix.rows > 1 {
            federation_fairness(&matrix).ok()
        } else {
            None
        };
        let per_node_acc = if matrix.rows == 1 {
            matrix.row(0).to_vec()
        } else {
            matrix.diagonal()
        };
        Self {
            round: matrix.round,
            fa: federation_accuracy(&matrix),
            ff,
            pfa: personalized_fa(&matrix),
            per_node_acc,
            global_acc: None,
            matrix,
        }
    }
}
