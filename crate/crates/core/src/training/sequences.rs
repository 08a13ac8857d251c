use crate::error::{Error, Result};
use crate::model::SequenceInstance;
use crate::numeric::Matrix;
use crate::preprocessing::WindowInstance;

pub const DEFAULT_SEQUENCE_LEN: usize = 15;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceBuild {
    pub sequences: Vec<SequenceInstance>,
    /// Index of each sequence's final window in the input slice.
    pub last_window: Vec<usize>,
    /// Workers whose windows produced no sequence.
    pub workers_without_sequences: usize,
    /// Windows that ended a full-length run but carried no label.
    pub unlabeled_ends: usize,
}

/// Sliding runs of `len` consecutive windows per worker (stride 1). Two
/// windows are consecutive when their starts differ by exactly `window_len`;
/// a run never spans a gap. Each sequence takes the label of its final
/// window. Input order does not matter.
pub fn make_sequences(windows: &[WindowInstance], window_len: i64, len: usize) -> Result<SequenceBuild> {
    if len == 0 {
        return Err(Error::arg("sequence length must be at least 1"));
    }
    if window_len <= 0 {
        return Err(Error::arg("window length must be positive"));
    }
    let dim = windows.first().map_or(0, |w| w.features.len());
    if let Some(w) = windows.iter().find(|w| w.features.len() != dim) {
        return Err(Error::shape(format!(
            "window {}@{} has {} features, expected {dim}",
            w.worker_id,
            w.window_start,
            w.features.len()
        )));
    }

    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by(|&a, &b| {
        (windows[a].worker_id.as_str(), windows[a].window_start).cmp(&(windows[b].worker_id.as_str(), windows[b].window_start))
    });

    let mut out = SequenceBuild::default();
    let mut i = 0;
    while i < order.len() {
        let worker = &windows[order[i]].worker_id;
        let mut j = i;
        while j < order.len() && windows[order[j]].worker_id == *worker {
            j += 1;
        }
        let before = out.sequences.len();
        // `run` counts consecutive windows ending at position k.
        let mut run = 0usize;
        for k in i..j {
            let w = &windows[order[k]];
            let continues = k > i && w.window_start - windows[order[k - 1]].window_start == window_len;
            run = if continues { run + 1 } else { 1 };
            if run < len {
                continue;
            }
            let Some(label) = w.label else {
                out.unlabeled_ends += 1;
                continue;
            };
            let mut data = Vec::with_capacity(len * dim);
            for &idx in &order[k + 1 - len..=k] {
                data.extend_from_slice(&windows[idx].features);
            }
            out.sequences.push(SequenceInstance {
                worker_id: worker.clone(),
                window_start: w.window_start,
                inputs: Matrix::from_vec(len, dim, data)?,
                label: Some(label),
            });
            out.last_window.push(order[k]);
        }
        if out.sequences.len() == before {
            out.workers_without_sequences += 1;
        }
        i = j;
    }
    Ok(out)
}
