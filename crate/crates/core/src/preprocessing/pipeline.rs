use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::clean::{interpolate_gaps, replace_outliers, DEFAULT_MAX_GAP, DEFAULT_Z_THRESHOLD};
use crate::preprocessing::label::{label_window, LabelMode};
use crate::preprocessing::normalize::{apply_normalizer, fit_normalizer, NormalizerParams};
use crate::preprocessing::series::{Channel, SignalSeries};
use crate::preprocessing::smooth::{savitzky_golay_smooth, SmootherSpec};
use crate::preprocessing::split::{stratified_split, DEFAULT_TRAIN_RATIO};
use crate::preprocessing::window::{segment_windows, WindowConfig, WindowInstance};

/// One raw sample as read from the input CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub worker_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub channel: Channel,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Partition::Train),
            "test" => Ok(Partition::Test),
            other => Err(Error::arg(format!("unknown partition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub label_mode: LabelMode,
    pub window: WindowConfig,
    pub max_gap: usize,
    pub z_threshold: f64,
    pub smoother_half_width: usize,
    pub smoother_degree: usize,
    /// Use the stress index as a model feature. `None` means "only when it is
    /// not the label source", i.e. excluded under StressBand labeling.
    pub include_stress: Option<bool>,
    pub include_environment: bool,
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            label_mode: LabelMode::StressBand,
            window: WindowConfig::default(),
            max_gap: DEFAULT_MAX_GAP,
            z_threshold: DEFAULT_Z_THRESHOLD,
            smoother_half_width: 2,
            smoother_degree: 2,
            include_stress: None,
            include_environment: false,
            train_ratio: DEFAULT_TRAIN_RATIO,
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn feature_channels(&self) -> Vec<Channel> {
        let stress = self
            .include_stress
            .unwrap_or(self.label_mode != LabelMode::StressBand);
        let mut out = vec![Channel::Hr, Channel::Hrv, Channel::Spo2, Channel::RespRate];
        if stress {
            out.push(Channel::Stress);
        }
        if self.include_environment {
            out.extend([Channel::AmbientTemp, Channel::Humidity]);
        }
        out
    }

    pub fn feature_names(&self) -> Vec<String> {
        feature_names(&self.feature_channels())
    }
}

pub fn feature_names(channels: &[Channel]) -> Vec<String> {
    channels
        .iter()
        .flat_map(|c| {
            let n = c.name().to_ascii_lowercase();
            [format!("{n}_mean"), format!("{n}_sd")]
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub series: usize,
    /// Series dropped before windowing (too few values or all missing).
    pub series_skipped: usize,
    /// Gap-free runs too short to smooth, passed through unsmoothed.
    pub short_runs: usize,
    pub windows_kept: usize,
    pub windows_excluded: usize,
    pub windows_unlabeled: usize,
}

#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    /// Labeled windows ordered by worker then start time.
    pub windows: Vec<WindowInstance>,
    pub partition: Vec<Partition>,
    pub normalizer: NormalizerParams,
    pub feature_channels: Vec<Channel>,
    pub diagnostics: Diagnostics,
}

impl PreprocessOutput {
    pub fn feature_names(&self) -> Vec<String> {
        feature_names(&self.feature_channels)
    }
}

struct SessionSeries {
    worker: String,
    /// Cleaned, unsmoothed series in channel units (label sources).
    cleaned: Vec<SignalSeries>,
    /// Smoothed feature channels in channel units.
    smoothed: Vec<SignalSeries>,
    short_runs: usize,
    skipped: usize,
}

fn day_of(t: f64) -> i64 {
    (t.floor() as i64).div_euclid(86_400)
}

/// Runs cleaning, smoothing, windowing, labeling, the stratified split and
/// train-only normalization.
///
/// Series are scoped per worker, channel and UTC day. Labels use window
/// means of the cleaned but unsmoothed, unnormalized signals.
pub fn preprocess(samples: &[RawSample], cfg: &PreprocessConfig) -> Result<PreprocessOutput> {
    let features = cfg.feature_channels();
    let smoother = SmootherSpec::new(cfg.smoother_half_width, cfg.smoother_degree)?;

    // (worker, day) -> channel -> (timestamps, values)
    type Columns = (Vec<f64>, Vec<Option<f64>>);
    let mut grouped: BTreeMap<(String, i64), BTreeMap<Channel, Columns>> = BTreeMap::new();
    for s in samples {
        let entry = grouped
            .entry((s.worker_id.clone(), day_of(s.timestamp)))
            .or_default()
            .entry(s.channel)
            .or_default();
        entry.0.push(s.timestamp);
        entry.1.push(s.value);
    }

    let sessions: Vec<SessionSeries> = grouped
        .into_par_iter()
        .map(|((worker, _day), channels)| {
            let mut session = SessionSeries {
                worker,
                cleaned: Vec::new(),
                smoothed: Vec::new(),
                short_runs: 0,
                skipped: 0,
            };
            for (channel, (ts, vs)) in channels {
                let mut order: Vec<usize> = (0..ts.len()).collect();
                order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
                let series = SignalSeries::new(
                    channel,
                    order.iter().map(|&i| ts[i]).collect(),
                    order.iter().map(|&i| vs[i]).collect(),
                )?;
                let cleaned = match clean_series(&series, cfg) {
                    Some(c) => c,
                    None => {
                        session.skipped += 1;
                        continue;
                    }
                };
                if features.contains(&channel) {
                    let sm = savitzky_golay_smooth(&cleaned, &smoother);
                    session.short_runs += sm.short_runs;
                    session.smoothed.push(sm.series);
                }
                session.cleaned.push(cleaned);
            }
            session
                .smoothed
                .sort_by_key(|s| features.iter().position(|c| *c == s.channel));
            Ok(session)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut diag = Diagnostics {
        series: sessions.iter().map(|s| s.cleaned.len() + s.skipped).sum(),
        series_skipped: sessions.iter().map(|s| s.skipped).sum(),
        short_runs: sessions.iter().map(|s| s.short_runs).sum(),
        ..Diagnostics::default()
    };

    // First pass in channel units: validity, raw means and labels.
    let mut windows: Vec<WindowInstance> = Vec::new();
    let mut session_of: Vec<usize> = Vec::new();
    for (si, session) in sessions.iter().enumerate() {
        if session.smoothed.len() != features.len() {
            // A feature channel is absent for the whole session: every
            // window it would have produced is unusable.
            let seg = segment_windows(&session.worker, &session.cleaned, &[], &cfg.window);
            if let Ok(seg) = seg {
                diag.windows_excluded += seg.windows.len() + seg.excluded;
            }
            continue;
        }
        let seg = segment_windows(&session.worker, &session.smoothed, &session.cleaned, &cfg.window)?;
        diag.windows_excluded += seg.excluded;
        for mut w in seg.windows {
            match label_window(&w, cfg.label_mode) {
                Ok(label) => {
                    w.label = Some(label);
                    windows.push(w);
                    session_of.push(si);
                }
                Err(Error::MissingChannel(_)) => diag.windows_unlabeled += 1,
                Err(e) => return Err(e),
            }
        }
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no complete windows ({} excluded, {} unlabeled)",
            diag.windows_excluded, diag.windows_unlabeled
        )));
    }

    let labels: Vec<_> = windows.iter().map(|w| w.label.unwrap()).collect();
    let (train_idx, _) = stratified_split(&labels, cfg.train_ratio, cfg.seed)?;
    let mut partition = vec![Partition::Test; windows.len()];
    for &i in &train_idx {
        partition[i] = Partition::Train;
    }

    // Normalizer sees only samples inside training windows.
    let len = cfg.window.window_len;
    let mut train_starts: Vec<BTreeSet<i64>> = vec![BTreeSet::new(); sessions.len()];
    for (i, w) in windows.iter().enumerate() {
        if partition[i] == Partition::Train {
            train_starts[session_of[i]].insert(w.window_start);
        }
    }
    let mut training_values: BTreeMap<Channel, Vec<f64>> = features.iter().map(|&c| (c, Vec::new())).collect();
    for (session, starts) in sessions.iter().zip(&train_starts) {
        if starts.is_empty() {
            continue;
        }
        for s in &session.smoothed {
            let bucket = training_values.get_mut(&s.channel).expect("feature channel");
            for (&t, v) in s.timestamps().iter().zip(s.values()) {
                let start = (t.floor() as i64).div_euclid(len) * len;
                if let (Some(x), true) = (v, starts.contains(&start)) {
                    bucket.push(*x);
                }
            }
        }
    }
    let normalizer = fit_normalizer(training_values.iter().map(|(c, v)| (*c, v.iter())))?;

    // Second pass on normalized series for the model features.
    let mut normalized_features: BTreeMap<(usize, i64), Vec<f64>> = BTreeMap::new();
    let used_sessions: BTreeSet<usize> = session_of.iter().copied().collect();
    for &si in &used_sessions {
        let session = &sessions[si];
        let norm = session
            .smoothed
            .iter()
            .map(|s| apply_normalizer(&normalizer, s))
            .collect::<Result<Vec<_>>>()?;
        let seg = segment_windows(&session.worker, &norm, &[], &cfg.window)?;
        for w in seg.windows {
            normalized_features.insert((si, w.window_start), w.features);
        }
    }
    for (w, &si) in windows.iter_mut().zip(&session_of) {
        w.features = normalized_features
            .remove(&(si, w.window_start))
            .ok_or_else(|| Error::State(format!("window {} lost between passes", w.window_start)))?;
    }

    diag.windows_kept = windows.len();
    Ok(PreprocessOutput {
        windows,
        partition,
        normalizer,
        feature_channels: features,
        diagnostics: diag,
    })
}

/// Outlier replacement then gap interpolation. `None` when the series has
/// too few values to clean.
fn clean_series(s: &SignalSeries, cfg: &PreprocessConfig) -> Option<SignalSeries> {
    if s.present().count() < 3 {
        return None;
    }
    let repaired = replace_outliers(s, cfg.z_threshold, cfg.max_gap).ok()?;
    interpolate_gaps(&repaired, cfg.max_gap).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(minutes: usize, worker: &str) -> Vec<RawSample> {
        let mut out = Vec::new();
        for i in 0..minutes * 6 {
            let t = 1_700_000_000.0 - 1_700_000_000f64 % 86_400.0 + 8.0 * 3600.0 + i as f64 * 10.0;
            let phase = i as f64 / 60.0;
            let stress = 50.0 + 45.0 * phase.sin();
            for (ch, v) in [
                (Channel::Hr, 90.0 + 0.4 * stress),
                (Channel::Hrv, 700.0 - 2.0 * stress),
                (Channel::Spo2, 97.0 - 0.05 * stress),
                (Channel::RespRate, 12.0 + 0.08 * stress),
                (Channel::Stress, stress),
            ] {
                out.push(RawSample {
                    worker_id: worker.into(),
                    timestamp: t,
                    channel: ch,
                    value: Some(v),
                });
            }
        }
        out
    }

    #[test]
    fn end_to_end_small() {
        let mut raw = synthetic(60, "a");
        raw.extend(synthetic(60, "b"));
        let out = preprocess(&raw, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.windows.len(), 120);
        assert_eq!(out.feature_channels.len(), 4);
        assert_eq!(out.windows[0].features.len(), 8);
        assert_eq!(out.partition.iter().filter(|p| **p == Partition::Train).count(), 96);
        for w in &out.windows {
            assert!(w.features.iter().all(|f| (0.0..=1.0).contains(f)));
        }
    }

    #[test]
    fn stress_feature_follows_mode() {
        let cfg = PreprocessConfig::default();
        assert!(!cfg.feature_channels().contains(&Channel::Stress));
        let cfg = PreprocessConfig {
            label_mode: LabelMode::MultiParam,
            ..PreprocessConfig::default()
        };
        assert!(cfg.feature_channels().contains(&Channel::Stress));
        let cfg = PreprocessConfig {
            include_stress: Some(true),
            include_environment: true,
            ..PreprocessConfig::default()
        };
        assert_eq!(cfg.feature_channels().len(), 7);
    }
}
