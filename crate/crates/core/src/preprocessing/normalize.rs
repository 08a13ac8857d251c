use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::series::{Channel, SignalSeries};

/// Per-channel min-max ranges fitted on the training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerParams {
    pub ranges: BTreeMap<Channel, ChannelRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    /// `(x - min) / (max - min)` clamped to `[0, 1]`.
    pub fn scale(&self, x: f64) -> f64 {
        self.scale_unclamped(x).clamp(0.0, 1.0)
    }

    pub fn scale_unclamped(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, x_norm: f64) -> f64 {
        x_norm * (self.max - self.min) + self.min
    }
}

/// Fits min/max per channel. Every channel must have at least one value and a
/// non-zero range.
pub fn fit_normalizer<'a, I, V>(training: I) -> Result<NormalizerParams>
where
    I: IntoIterator<Item = (Channel, V)>,
    V: IntoIterator<Item = &'a f64>,
{
    let mut ranges = BTreeMap::new();
    for (channel, values) in training {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut seen = false;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::arg(format!("{channel}: non-finite training value")));
            }
            min = min.min(v);
            max = max.max(v);
            seen = true;
        }
        if !seen {
            return Err(Error::EmptySeries(channel.to_string()));
        }
        if max <= min {
            return Err(Error::DegenerateChannel(channel.to_string()));
        }
        ranges.insert(channel, ChannelRange { min, max });
    }
    Ok(NormalizerParams { ranges })
}

impl NormalizerParams {
    pub fn range(&self, channel: Channel) -> Result<ChannelRange> {
        self.ranges
            .get(&channel)
            .copied()
            .ok_or_else(|| Error::arg(format!("normalizer has no range for channel {channel}")))
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        self.ranges.keys().copied()
    }
}

/// Scales a series into `[0, 1]`; values outside the fitted range clamp.
pub fn apply_normalizer(p: &NormalizerParams, s: &SignalSeries) -> Result<SignalSeries> {
    let range = p.range(s.channel)?;
    let values = s.values().iter().map(|v| v.map(|x| range.scale(x))).collect();
    Ok(s.with_values(values))
}
