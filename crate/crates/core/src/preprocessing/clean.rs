//! Gap interpolation and z-score outlier replacement.

use crate::error::{Error, Result};
use crate::preprocessing::series::SignalSeries;

pub const DEFAULT_MAX_GAP: usize = 5;
pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;

/// Consistency constant turning a median absolute deviation into a normal SD.
const MAD_TO_SD: f64 = 1.482_602_218_505_602;

const MAX_OUTLIER_PASSES: usize = 64;

/// Fills each run of at most `max_gap` missing samples with the straight line
/// between the known samples on either side (time-weighted). Longer runs stay
/// missing so the windows containing them can be rejected later. Leading and
/// trailing missing samples are dropped.
pub fn interpolate_gaps(s: &SignalSeries, max_gap: usize) -> Result<SignalSeries> {
    let values = s.values();
    let first = values.iter().position(Option::is_some);
    let last = values.iter().rposition(Option::is_some);
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptySeries(s.channel.to_string())),
    };

    let ts = &s.timestamps()[first..=last];
    let mut out: Vec<Option<f64>> = values[first..=last].to_vec();

    let mut i = 0;
    while i < out.len() {
        if out[i].is_some() {
            i += 1;
            continue;
        }
        let left = i - 1;
        let mut right = i;
        while out[right].is_none() {
            right += 1;
        }
        if right - left - 1 <= max_gap {
            let (x0, x1) = (out[left].unwrap(), out[right].unwrap());
            let (t0, t1) = (ts[left], ts[right]);
            for j in i..right {
                // Multiply before dividing so a single midpoint gives exactly
                // x0 + (x1 - x0) / 2.
                out[j] = Some(x0 + (x1 - x0) * (ts[j] - t0) / (t1 - t0));
            }
        }
        i = right;
    }

    Ok(SignalSeries::from_parts_unchecked(s.channel, ts.to_vec(), out))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Robust location and scale of the present values: median and
/// 1.4826 × MAD, falling back to the population SD when the MAD is zero.
/// Returns `None` when the scale is zero.
pub fn robust_stats(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let center = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - center).abs()).collect();
    dev.sort_by(|a, b| a.total_cmp(b));
    let mad = median(&dev);
    let scale = if mad > 0.0 {
        MAD_TO_SD * mad
    } else {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    (scale > 0.0).then_some((center, scale))
}

/// Marks samples with |z| > `threshold` as missing and repairs them with
/// [`interpolate_gaps`]. The z-score uses the series' median and scaled MAD
/// (see [`robust_stats`]); detection is repeated on the repaired series until
/// nothing more is flagged, so a second application is a no-op.
///
/// Missing samples are interpolated first. A complete series whose scale is
/// zero, or which has no flagged samples, is returned unchanged.
pub fn replace_outliers(s: &SignalSeries, threshold: f64, max_gap: usize) -> Result<SignalSeries> {
    if !(threshold > 0.0) {
        return Err(Error::arg(format!("outlier threshold must be positive, got {threshold}")));
    }
    let present = s.present().count();
    if present < 3 {
        return Err(Error::arg(format!(
            "{}: outlier detection needs at least 3 values, got {present}",
            s.channel
        )));
    }

    // Short gaps are repaired before the statistics are taken so that a
    // later interpolation pass cannot shift them.
    let mut current = if s.missing_count() > 0 {
        interpolate_gaps(s, max_gap)?
    } else {
        s.clone()
    };
    let mut changed = current != *s;
    for _ in 0..MAX_OUTLIER_PASSES {
        let observed: Vec<f64> = current.present().collect();
        let Some((center, scale)) = robust_stats(&observed) else {
            break;
        };
        let mut flagged = false;
        let values: Vec<Option<f64>> = current
            .values()
            .iter()
            .map(|v| match v {
                Some(x) if ((x - center) / scale).abs() > threshold => {
                    flagged = true;
                    None
                }
                other => *other,
            })
            .collect();
        if !flagged {
            break;
        }
        changed = true;
        current = interpolate_gaps(&current.with_values(values), max_gap)?;
    }
    Ok(if changed { current } else { s.clone() })
}
