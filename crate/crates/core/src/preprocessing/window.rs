use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::series::{Channel, SignalSeries};
use crate::risk::RiskLevel;

pub const DEFAULT_WINDOW_SECONDS: i64 = 60;

/// One window of aggregate features. `features` holds `[mean, sd]` for each
/// feature channel in order; `raw_means` holds pre-normalization channel
/// means used for labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowInstance {
    pub worker_id: String,
    /// Seconds since the Unix epoch, aligned to the window length.
    pub window_start: i64,
    pub features: Vec<f64>,
    pub raw_means: BTreeMap<Channel, f64>,
    pub label: Option<RiskLevel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_len: i64,
    /// Minimum fraction of expected samples each feature channel must have.
    pub min_coverage: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_len: DEFAULT_WINDOW_SECONDS,
            min_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub windows: Vec<WindowInstance>,
    /// Candidate windows dropped for low coverage or an unrepaired gap.
    pub excluded: usize,
}

#[derive(Default)]
struct Bucket {
    present: Vec<f64>,
    missing: usize,
}

fn bucketize(s: &SignalSeries, len: i64) -> BTreeMap<i64, Bucket> {
    let mut out: BTreeMap<i64, Bucket> = BTreeMap::new();
    for (&t, v) in s.timestamps().iter().zip(s.values()) {
        let start = (t.floor() as i64).div_euclid(len) * len;
        let b = out.entry(start).or_default();
        match v {
            Some(x) => b.present.push(*x),
            None => b.missing += 1,
        }
    }
    out
}

/// Population mean and SD, accumulated relative to the first value so a
/// constant window gives exactly `(value, 0)`.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let pivot = values[0];
    let mean = pivot + values.iter().map(|x| x - pivot).sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Splits aligned channel streams of one worker into non-overlapping windows
/// `[start, start + window_len)` aligned to multiples of `window_len`.
///
/// `features` supplies the (normalized) channels whose mean and SD become
/// model features; `label_sources` supplies raw channels whose means are kept
/// for labeling. A window with samples in any feature channel is a candidate;
/// it is kept only when every feature channel has no unrepaired gap inside it
/// and at least `min_coverage` of its expected samples.
pub fn segment_windows(
    worker_id: &str,
    features: &[SignalSeries],
    label_sources: &[SignalSeries],
    cfg: &WindowConfig,
) -> Result<Segmentation> {
    if cfg.window_len <= 0 {
        return Err(Error::arg("window length must be positive"));
    }
    if features.is_empty() {
        return Err(Error::arg("no feature channels to segment"));
    }
    let len = cfg.window_len;
    let feature_buckets: Vec<(usize, BTreeMap<i64, Bucket>)> = features
        .iter()
        .map(|s| {
            let expected = match s.nominal_interval() {
                Some(dt) if dt > 0.0 => ((len as f64) / dt).round().max(1.0) as usize,
                _ => 1,
            };
            (expected, bucketize(s, len))
        })
        .collect();
    let label_buckets: Vec<(Channel, BTreeMap<i64, Bucket>)> = label_sources
        .iter()
        .map(|s| (s.channel, bucketize(s, len)))
        .collect();

    let mut starts: Vec<i64> = feature_buckets
        .iter()
        .flat_map(|(_, b)| b.keys().copied())
        .collect();
    starts.sort_unstable();
    starts.dedup();

    let mut seg = Segmentation::default();
    'windows: for start in starts {
        let mut feats = Vec::with_capacity(2 * features.len());
        for (expected, buckets) in &feature_buckets {
            let Some(b) = buckets.get(&start) else {
                seg.excluded += 1;
                continue 'windows;
            };
            let coverage = b.present.len() as f64 / *expected as f64;
            if b.missing > 0 || b.present.is_empty() || coverage < cfg.min_coverage {
                seg.excluded += 1;
                continue 'windows;
            }
            let (m, sd) = mean_sd(&b.present);
            feats.push(m);
            feats.push(sd);
        }
        let raw_means = label_buckets
            .iter()
            .filter_map(|(ch, buckets)| {
                let b = buckets.get(&start)?;
                (!b.present.is_empty()).then(|| (*ch, mean_sd(&b.present).0))
            })
            .collect();
        seg.windows.push(WindowInstance {
            worker_id: worker_id.to_string(),
            window_start: start,
            features: feats,
            raw_means,
            label: None,
        });
    }
    Ok(seg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(ch: Channel, n: usize, interval: f64, f: impl Fn(usize) -> Option<f64>) -> SignalSeries {
        let ts = (0..n).map(|i| i as f64 * interval).collect();
        SignalSeries::new(ch, ts, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn ten_minutes_make_ten_windows() {
        let hr = series(Channel::Hr, 600, 1.0, |i| Some(0.5 + 0.001 * i as f64));
        let seg = segment_windows("w1", &[hr.clone()], &[hr], &WindowConfig::default()).unwrap();
        assert_eq!(seg.windows.len(), 10);
        assert_eq!(seg.excluded, 0);
        let starts: Vec<i64> = seg.windows.iter().map(|w| w.window_start).collect();
        assert_eq!(starts, (0..10).map(|i| i * 60).collect::<Vec<_>>());
    }

    #[test]
    fn unrepaired_gap_excludes_its_window() {
        let hr = series(Channel::Hr, 600, 1.0, |i| (!(130..140).contains(&i)).then_some(0.4));
        let seg = segment_windows("w1", &[hr], &[], &WindowConfig::default()).unwrap();
        assert_eq!(seg.windows.len(), 9);
        assert_eq!(seg.excluded, 1);
        assert!(seg.windows.iter().all(|w| w.window_start != 120));
    }

    #[test]
    fn low_coverage_excludes_window() {
        // 10 s sampling, window 3 holds only two samples (2/6 < 50%).
        let ts: Vec<f64> = (0..24)
            .map(|i| i as f64 * 10.0)
            .filter(|t| !(185.0..230.0).contains(t))
            .collect();
        let n = ts.len();
        let s = SignalSeries::new(Channel::Hrv, ts, vec![Some(0.3); n]).unwrap();
        let seg = segment_windows("w", &[s], &[], &WindowConfig::default()).unwrap();
        assert_eq!(seg.windows.len(), 3);
        assert_eq!(seg.excluded, 1);
    }

    #[test]
    fn constant_channel_has_zero_sd() {
        let s = series(Channel::Spo2, 60, 1.0, |_| Some(0.7));
        let seg = segment_windows("w", &[s], &[], &WindowConfig::default()).unwrap();
        assert_eq!(seg.windows[0].features, vec![0.7, 0.0]);
    }

    #[test]
    fn raw_means_come_from_label_sources() {
        let norm = series(Channel::Stress, 120, 1.0, |_| Some(0.1));
        let raw = series(Channel::Stress, 120, 1.0, |i| Some(if i < 60 { 10.0 } else { 80.0 }));
        let seg = segment_windows("w", &[norm], &[raw], &WindowConfig::default()).unwrap();
        assert_eq!(seg.windows[0].raw_means[&Channel::Stress], 10.0);
        assert_eq!(seg.windows[1].raw_means[&Channel::Stress], 80.0);
    }

    #[test]
    fn windows_partition_samples() {
        let s = series(Channel::Hr, 300, 7.0, |i| Some((i % 13) as f64 / 13.0));
        let seg = segment_windows("w", &[s.clone()], &[], &WindowConfig::default()).unwrap();
        let mut prev = i64::MIN;
        for w in &seg.windows {
            assert!(w.window_start >= prev + 60);
            prev = w.window_start;
        }
        // full coverage everywhere except possibly the final partial window
        assert!(seg.excluded <= 1);
        for &t in s.timestamps() {
            let hits = seg
                .windows
                .iter()
                .filter(|w| (w.window_start as f64..(w.window_start + 60) as f64).contains(&t))
                .count();
            assert!(hits <= 1);
            if t < 2040.0 {
                assert_eq!(hits, 1, "sample at {t}");
            }
        }
    }
}
