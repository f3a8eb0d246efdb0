//! Accuracy, confusion matrices, the five-arm experiment matrix, and tables.

mod arm;
mod matrix;
mod published;
mod table;

use std::path::PathBuf;

use thiserror::Error;

pub use arm::ExperimentArm;
pub use matrix::{load_results, run_experiment_matrix, ExperimentResult, MatrixConfig, RESULT_FILE};
pub use published::{published_results, PUBLISHED};
pub use table::{emit_table, format_percent, Layout, TableFormat};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("arm {arm} needs {modality}, which the manifest lacks")]
    MissingModality { arm: String, modality: String },
    #[error("unknown table layout {0:?} (expected table1, table2 or table3)")]
    UnknownLayout(String),
    #[error("unknown table format {0:?} (expected text or csv)")]
    UnknownFormat(String),
    #[error("bad result file {}: {message}", path.display())]
    BadResult { path: PathBuf, message: String },
}

/// Percentage of positions where prediction equals label.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// `m[i][j]` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if let Some(&label) = [l, p].iter().find(|&&v| v >= num_classes) {
            return Err(EvalError::LabelOutOfRange { label, num_classes });
        }
        m[l][p] += 1;
    }
    Ok(m)
}

pub fn trace(m: &[Vec<u64>]) -> u64 {
    m.iter().enumerate().map(|(i, row)| row[i]).sum()
}
