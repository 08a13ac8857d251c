use crate::risk::RiskLevel;

/// Probabilities below this are clamped before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub value: f64,
    /// True when the target probability was clamped to the floor.
    pub clamped: bool,
}

/// −ln p_target.
pub fn cross_entropy_loss(probabilities: &[f64], target: RiskLevel) -> Loss {
    let p = probabilities[target.index()];
    if p < PROBABILITY_FLOOR {
        Loss {
            value: -PROBABILITY_FLOOR.ln(),
            clamped: true,
        }
    } else {
        Loss {
            value: -p.ln(),
            clamped: false,
        }
    }
}

/// Mean loss over a batch and the number of clamped terms.
pub fn mean_cross_entropy<'a>(items: impl IntoIterator<Item = (&'a [f64], RiskLevel)>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut clamped = 0usize;
    for (p, t) in items {
        let l = cross_entropy_loss(p, t);
        sum += l.value;
        clamped += usize::from(l.clamped);
        n += 1;
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, clamped)
}
