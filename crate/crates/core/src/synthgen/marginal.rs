use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::preprocessing::Channel;

/// Target marginal of one channel: mean, SD and the support `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl ChannelProfile {
    /// Field statistics of the study cohort; temperature and humidity are
    /// typical summer site conditions.
    pub fn default_for(channel: Channel) -> ChannelProfile {
        let (mean, sd, min, max) = match channel {
            Channel::Hr => (94.45, 20.19, 60.0, 129.0),
            Channel::Hrv => (599.35, 115.50, 400.0, 799.0),
            Channel::Spo2 => (94.00, 3.74, 88.0, 100.0),
            Channel::RespRate => (14.50, 2.87, 10.0, 19.0),
            Channel::Stress => (49.59, 28.86, 0.0, 99.0),
            Channel::AmbientTemp => (38.0, 4.0, 28.0, 48.0),
            Channel::Humidity => (45.0, 12.0, 15.0, 85.0),
        };
        ChannelProfile { mean, sd, min, max }
    }

    pub fn validate(&self, channel: Channel) -> Result<()> {
        let width = self.max - self.min;
        let ok = width > 0.0 && self.sd > 0.0 && self.mean > self.min && self.mean < self.max && {
            let m = (self.mean - self.min) / width;
            (self.sd / width).powi(2) < m * (1.0 - m)
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "{channel}: no distribution on [{}, {}] has mean {} and SD {}",
                self.min, self.max, self.mean, self.sd
            )))
        }
    }

    /// Beta shape parameters whose scaled distribution on `[min, max]` has
    /// exactly this mean and SD.
    pub fn beta_shape(&self) -> (f64, f64) {
        let width = self.max - self.min;
        let m = (self.mean - self.min) / width;
        let v = (self.sd / width).powi(2);
        let k = m * (1.0 - m) / v - 1.0;
        (m * k, (1.0 - m) * k)
    }
}

const GRID: usize = 8192;

/// Maps a standard-normal latent to a channel value through
/// `F⁻¹(Φ(z))`, where `F` is either the fitted scaled Beta or a piecewise
/// uniform distribution. `F` is stored as knots with linear interpolation.
#[derive(Debug, Clone)]
pub struct Marginal {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    normal: Normal,
}

impl Marginal {
    pub fn beta(p: &ChannelProfile) -> Result<Marginal> {
        let (a, b) = p.beta_shape();
        let dist = Beta::new(a, b).map_err(|e| Error::arg(format!("beta({a}, {b}): {e}")))?;
        let unit: Vec<f64> = (0..=GRID).map(|i| i as f64 / GRID as f64).collect();
        Ok(Marginal {
            cdf: unit.iter().map(|&u| dist.cdf(u)).collect(),
            xs: unit.iter().map(|&u| p.min + (p.max - p.min) * u).collect(),
            normal: Normal::standard(),
        })
    }

    /// Piecewise-uniform distribution putting mass `weights[i]` on
    /// `[edges[i], edges[i + 1]]`.
    pub fn piecewise(edges: &[f64], weights: &[f64]) -> Result<Marginal> {
        if edges.len() != weights.len() + 1 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("piecewise marginal needs increasing edges, one more than weights"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::arg("piecewise weights must be non-negative with a positive sum"));
        }
        let mut cdf = vec![0.0];
        for w in weights {
            cdf.push(cdf[cdf.len() - 1] + w / total);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Marginal {
            xs: edges.to_vec(),
            cdf,
            normal: Normal::standard(),
        })
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < u);
        if i == 0 {
            return self.xs[0];
        }
        if i >= self.cdf.len() {
            return self.xs[self.xs.len() - 1];
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 1.0 };
        self.xs[i - 1] + t * (self.xs[i] - self.xs[i - 1])
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let last = self.xs.len() - 1;
        let i = self.xs.partition_point(|&k| k <= x).clamp(1, last);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        self.cdf[i - 1] + t * (self.cdf[i] - self.cdf[i - 1])
    }

    /// Value for a standard-normal latent.
    pub fn from_latent(&self, z: f64) -> f64 {
        self.quantile(self.normal.cdf(z))
    }

    /// Latent whose value is `x`.
    pub fn latent_of(&self, x: f64) -> f64 {
        self.normal.inverse_cdf(self.cdf(x).clamp(1e-12, 1.0 - 1e-12))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_shape_reproduces_moments() {
        for ch in Channel::ALL {
            let p = ChannelProfile::default_for(ch);
            p.validate(ch).unwrap();
            let (a, b) = p.beta_shape();
            let w = p.max - p.min;
            let mean = p.min + w * a / (a + b);
            let sd = w * (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt();
            assert!((mean - p.mean).abs() < 1e-9, "{ch}");
            assert!((sd - p.sd).abs() < 1e-9, "{ch}");
        }
    }

    #[test]
    fn impossible_profile_rejected() {
        let p = ChannelProfile { mean: 50.0, sd: 60.0, min: 0.0, max: 100.0 };
        assert!(p.validate(Channel::Stress).is_err());
    }

    #[test]
    fn quantile_inverts_cdf_and_stays_in_range() {
        let m = Marginal::beta(&ChannelProfile::default_for(Channel::Spo2)).unwrap();
        for u in [0.0, 1e-9, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0] {
            let x = m.quantile(u);
            assert!((88.0..=100.0).contains(&x));
            assert!((m.cdf(x) - u).abs() < 1e-9, "u {u}");
        }
        assert!(m.from_latent(0.0) > 93.0 && m.from_latent(0.0) < 95.0);
        assert!((m.latent_of(m.from_latent(0.4)) - 0.4).abs() < 1e-6);
    }

    #[test]
    fn piecewise_puts_mass_in_bands() {
        let m = Marginal::piecewise(&[0.0, 25.0, 75.0, 99.0], &[0.5, 0.35, 0.15]).unwrap();
        assert!((m.cdf(25.0) - 0.5).abs() < 1e-12);
        assert!((m.cdf(75.0) - 0.85).abs() < 1e-12);
        assert!((m.quantile(0.25) - 12.5).abs() < 1e-9);
    }
}
