use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::checkpoint::fnv1a64;
use crate::model::{predict, Checkpoint, Prediction, SequenceInstance};
use crate::risk::RiskLevel;

use super::metrics::{build_confusion, compute_metrics, ConfusionMatrix, Metrics};
use super::roc::{roc_auc, RocSet};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub checkpoint_id: String,
    pub variant: String,
    /// FNV-1a 64 over the evaluated sequences (features and labels).
    pub data_hash: String,
    pub instances: usize,
    pub confusion_matrix: ConfusionMatrix,
    pub metrics: Metrics,
    pub roc: RocSet,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::State(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::arg(format!("invalid report: {e}")))
    }

    /// `class,fpr,tpr` rows for every defined curve.
    pub fn write_roc_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,fpr,tpr")?;
        for c in &self.roc.curves {
            for (x, y) in &c.points {
                writeln!(w, "{},{},{}", c.class.name(), fmt_f64(*x), fmt_f64(*y))?;
            }
        }
        Ok(())
    }
}

pub fn sequences_hash(sequences: &[SequenceInstance]) -> String {
    let mut bytes = Vec::new();
    for s in sequences {
        bytes.extend_from_slice(s.worker_id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&s.window_start.to_le_bytes());
        for v in s.inputs.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(s.label.map_or(u8::MAX, |l| l.index() as u8));
    }
    format!("{:016x}", fnv1a64(&bytes))
}

/// Infer-mode predictions in input order.
pub fn predict_all(ck: &Checkpoint, sequences: &[SequenceInstance]) -> Result<Vec<Prediction>> {
    let cfg = &ck.params.config;
    if let Some(s) = sequences.iter().find(|s| s.inputs.cols() != cfg.input_dim) {
        return Err(Error::shape(format!(
            "checkpoint expects {} features per window but the data has {} (sequence {}@{})",
            cfg.input_dim,
            s.inputs.cols(),
            s.worker_id,
            s.window_start
        )));
    }
    sequences.par_iter().map(|s| predict(&ck.params, &s.inputs)).collect()
}

pub fn evaluate_predictions(
    ck: &Checkpoint,
    sequences: &[SequenceInstance],
    predictions: &[Prediction],
) -> Result<EvalReport> {
    let actual: Vec<RiskLevel> = sequences
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::arg(format!("sequence {}@{} has no label", s.worker_id, s.window_start))))
        .collect::<Result<_>>()?;
    let predicted: Vec<RiskLevel> = predictions.iter().map(|p| p.label).collect();
    let probs: Vec<[f64; RiskLevel::COUNT]> = predictions.iter().map(|p| p.probabilities).collect();
    let confusion_matrix = build_confusion(&actual, &predicted)?;
    let metrics = compute_metrics(&confusion_matrix)?;
    let roc = roc_auc(&actual, &probs)?;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        checkpoint_id: ck.id(),
        variant: ck.params.config.variant.name().to_string(),
        data_hash: sequences_hash(sequences),
        instances: sequences.len(),
        confusion_matrix,
        metrics,
        roc,
    })
}

/// Scores every labeled sequence with the checkpoint and assembles the
/// confusion matrix, metrics and ROC curves.
pub fn evaluate_checkpoint(ck: &Checkpoint, sequences: &[SequenceInstance]) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::InsufficientData("no sequences to evaluate".into()));
    }
    let preds = predict_all(ck, sequences)?;
    evaluate_predictions(ck, sequences, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams, Variant};
    use crate::numeric::{Matrix, Rng};

    fn data(n: usize, dim: usize) -> Vec<SequenceInstance> {
        let mut rng = Rng::new(8);
        (0..n)
            .map(|i| SequenceInstance {
                worker_id: "w".into(),
                window_start: i as i64,
                inputs: Matrix::from_fn(3, dim, |_, _| rng.normal()),
                label: RiskLevel::from_index(i % 3),
            })
            .collect()
    }

    fn ck() -> Checkpoint {
        let cfg = ModelConfig::new(Variant::LstmAttention, 4).with_hidden(5);
        Checkpoint::new(ModelParams::init(cfg, &mut Rng::new(1)).unwrap(), 1, 3)
    }

    #[test]
    fn report_is_deterministic_and_round_trips() {
        let d = data(30, 4);
        let a = evaluate_checkpoint(&ck(), &d).unwrap();
        let b = evaluate_checkpoint(&ck(), &d).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.confusion_matrix.total(), 30);
        let back = EvalReport::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        let mut csv = Vec::new();
        a.write_roc_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("class,fpr,tpr\nlow,0.0000000000000000e0,0.0000000000000000e0\n"));
    }

    #[test]
    fn dimension_mismatch_is_descriptive() {
        let err = evaluate_checkpoint(&ck(), &data(3, 6)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expects 4") && msg.contains("has 6"), "{msg}");
    }
}
