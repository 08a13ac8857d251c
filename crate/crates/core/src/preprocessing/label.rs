//! Window risk labels from raw channel means.
//!
//! Thresholds (values are window means in channel units):
//!
//! | channel | Low        | Moderate                 | High           |
//! |---------|------------|--------------------------|----------------|
//! | Stress  | ≤ 25       | (25, 75]                 | > 75           |
//! | HR      | [60, 95)   | < 60 or [95, 185]        | > 185          |
//! | HRV     | > 700      | [500, 700]               | < 500          |
//! | SpO2    | ≥ 95       | [90, 95)                 | < 90           |
//! | RR      | [12, 18]   | (18, 24]                 | < 12 or > 24   |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::series::Channel;
use crate::preprocessing::window::WindowInstance;
use crate::risk::RiskLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LabelMode {
    /// Device stress index bands.
    #[default]
    StressBand,
    /// Majority vote over five per-channel risk scores.
    MultiParam,
}

impl LabelMode {
    pub fn name(self) -> &'static str {
        match self {
            LabelMode::StressBand => "stressband",
            LabelMode::MultiParam => "multiparam",
        }
    }

    pub fn required_channels(self) -> &'static [Channel] {
        match self {
            LabelMode::StressBand => &[Channel::Stress],
            LabelMode::MultiParam => &Channel::PHYSIOLOGICAL,
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stressband" | "stress-band" | "stress" => Ok(LabelMode::StressBand),
            "multiparam" | "multi-param" => Ok(LabelMode::MultiParam),
            other => Err(Error::arg(format!("unknown label mode '{other}'"))),
        }
    }
}

pub fn stress_band(stress: f64) -> RiskLevel {
    if stress <= 25.0 {
        RiskLevel::Low
    } else if stress <= 75.0 {
        RiskLevel::Moderate
    } else {
        RiskLevel::High
    }
}

pub fn heart_rate_risk(hr: f64) -> RiskLevel {
    if hr > 185.0 {
        RiskLevel::High
    } else if (60.0..95.0).contains(&hr) {
        RiskLevel::Low
    } else {
        RiskLevel::Moderate
    }
}

pub fn hrv_risk(hrv: f64) -> RiskLevel {
    if hrv > 700.0 {
        RiskLevel::Low
    } else if hrv >= 500.0 {
        RiskLevel::Moderate
    } else {
        RiskLevel::High
    }
}

pub fn spo2_risk(spo2: f64) -> RiskLevel {
    if spo2 >= 95.0 {
        RiskLevel::Low
    } else if spo2 >= 90.0 {
        RiskLevel::Moderate
    } else {
        RiskLevel::High
    }
}

pub fn respiration_risk(rr: f64) -> RiskLevel {
    if !(12.0..=24.0).contains(&rr) {
        RiskLevel::High
    } else if rr <= 18.0 {
        RiskLevel::Low
    } else {
        RiskLevel::Moderate
    }
}

pub fn channel_risk(channel: Channel, value: f64) -> Option<RiskLevel> {
    match channel {
        Channel::Hr => Some(heart_rate_risk(value)),
        Channel::Hrv => Some(hrv_risk(value)),
        Channel::Spo2 => Some(spo2_risk(value)),
        Channel::RespRate => Some(respiration_risk(value)),
        Channel::Stress => Some(stress_band(value)),
        Channel::AmbientTemp | Channel::Humidity => None,
    }
}

/// Most frequent level; ties go to the higher risk.
pub fn majority_vote(votes: &[RiskLevel]) -> Option<RiskLevel> {
    let mut counts = [0usize; RiskLevel::COUNT];
    for v in votes {
        counts[v.index()] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    (0..RiskLevel::COUNT)
        .rev()
        .find(|&i| counts[i] == best)
        .and_then(RiskLevel::from_index)
}

pub fn label_from_means(
    means: &std::collections::BTreeMap<Channel, f64>,
    mode: LabelMode,
) -> Result<RiskLevel> {
    let get = |ch: Channel| {
        means
            .get(&ch)
            .copied()
            .ok_or_else(|| Error::MissingChannel(ch.to_string()))
    };
    match mode {
        LabelMode::StressBand => Ok(stress_band(get(Channel::Stress)?)),
        LabelMode::MultiParam => {
            let mut votes = Vec::with_capacity(5);
            for ch in Channel::PHYSIOLOGICAL {
                votes.push(channel_risk(ch, get(ch)?).expect("physiological channel"));
            }
            Ok(majority_vote(&votes).expect("five votes"))
        }
    }
}

pub fn label_window(w: &WindowInstance, mode: LabelMode) -> Result<RiskLevel> {
    label_from_means(&w.raw_means, mode)
}
