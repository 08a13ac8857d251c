use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor channel. Units: HR bpm, HRV ms, SpO2 %, RR breaths/min, stress
/// index 0-100, ambient temperature °C, relative humidity %.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Hr,
    Hrv,
    Spo2,
    RespRate,
    Stress,
    AmbientTemp,
    Humidity,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Hr,
        Channel::Hrv,
        Channel::Spo2,
        Channel::RespRate,
        Channel::Stress,
        Channel::AmbientTemp,
        Channel::Humidity,
    ];

    /// The five wearable channels.
    pub const PHYSIOLOGICAL: [Channel; 5] = [
        Channel::Hr,
        Channel::Hrv,
        Channel::Spo2,
        Channel::RespRate,
        Channel::Stress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Hr => "HR",
            Channel::Hrv => "HRV",
            Channel::Spo2 => "SpO2",
            Channel::RespRate => "RR",
            Channel::Stress => "Stress",
            Channel::AmbientTemp => "Temp",
            Channel::Humidity => "Humidity",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let ch = match key.as_str() {
            "hr" => Channel::Hr,
            "hrv" => Channel::Hrv,
            "spo2" => Channel::Spo2,
            "rr" | "resprate" => Channel::RespRate,
            "stress" => Channel::Stress,
            "temp" | "ambienttemp" => Channel::AmbientTemp,
            "humidity" => Channel::Humidity,
            _ => return Err(Error::arg(format!("unknown channel '{}'", s.trim()))),
        };
        Ok(ch)
    }
}

/// One channel's samples. `None` marks a missing value. Timestamps are
/// seconds since the Unix epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub channel: Channel,
    timestamps: Vec<f64>,
    values: Vec<Option<f64>>,
}

impl SignalSeries {
    /// Builds a series from non-decreasing timestamps. Duplicate timestamps
    /// are collapsed, keeping the first non-missing value.
    pub fn new(channel: Channel, timestamps: Vec<f64>, values: Vec<Option<f64>>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::arg(format!(
                "{channel}: {} timestamps but {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::arg(format!("{channel}: non-finite timestamp")));
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::arg(format!("{channel}: timestamps must be non-decreasing")));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("{channel}: non-finite sample value")));
        }
        let mut ts: Vec<f64> = Vec::with_capacity(timestamps.len());
        let mut vs: Vec<Option<f64>> = Vec::with_capacity(values.len());
        for (t, v) in timestamps.into_iter().zip(values) {
            if ts.last() == Some(&t) {
                let last = vs.last_mut().expect("paired with timestamp");
                if last.is_none() {
                    *last = v;
                }
            } else {
                ts.push(t);
                vs.push(v);
            }
        }
        Ok(SignalSeries {
            channel,
            timestamps: ts,
            values: vs,
        })
    }

    /// Evenly spaced series with no missing values.
    pub fn from_values(channel: Channel, start: f64, interval: f64, values: &[f64]) -> Result<Self> {
        let ts = (0..values.len()).map(|i| start + interval * i as f64).collect();
        SignalSeries::new(channel, ts, values.iter().map(|&v| Some(v)).collect())
    }

    pub(crate) fn from_parts_unchecked(
        channel: Channel,
        timestamps: Vec<f64>,
        values: Vec<Option<f64>>,
    ) -> Self {
        SignalSeries {
            channel,
            timestamps,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Values with missing entries replaced by NaN, for callers that have
    /// already checked there are none.
    pub fn dense_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect()
    }

    /// Median spacing between consecutive timestamps.
    pub fn nominal_interval(&self) -> Option<f64> {
        if self.timestamps.len() < 2 {
            return None;
        }
        let mut d: Vec<f64> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(|a, b| a.total_cmp(b));
        Some(d[d.len() / 2])
    }

    pub(crate) fn with_values(&self, values: Vec<Option<f64>>) -> SignalSeries {
        debug_assert_eq!(values.len(), self.timestamps.len());
        SignalSeries {
            channel: self.channel,
            timestamps: self.timestamps.clone(),
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_collapse_to_first_present_value() {
        let s = SignalSeries::new(
            Channel::Hr,
            vec![0.0, 10.0, 10.0, 20.0],
            vec![Some(80.0), None, Some(85.0), Some(90.0)],
        )
        .unwrap();
        assert_eq!(s.timestamps(), &[0.0, 10.0, 20.0]);
        assert_eq!(s.values(), &[Some(80.0), Some(85.0), Some(90.0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SignalSeries::new(Channel::Hr, vec![1.0, 0.0], vec![None, None]).is_err());
        assert!(SignalSeries::new(Channel::Hr, vec![0.0], vec![Some(f64::NAN)]).is_err());
        assert!(SignalSeries::new(Channel::Hr, vec![0.0], vec![]).is_err());
    }

    #[test]
    fn channel_names_round_trip() {
        for ch in Channel::ALL {
            assert_eq!(ch.name().parse::<Channel>().unwrap(), ch);
        }
        assert!("bp".parse::<Channel>().is_err());
    }
}
