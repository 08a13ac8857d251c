//! Savitzky-Golay smoothing.
//!
//! Weights come from a least-squares polynomial fit over `2k + 1` points.
//! Interior samples use the centre weights; the first and last `k` samples
//! evaluate the fit of the first/last full window at their own offset, so the
//! output has the same length as the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{solve, Matrix};
use crate::preprocessing::series::SignalSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherSpec {
    half_width: usize,
    degree: usize,
    /// `weights[p]` evaluates the window's fit at offset `p - k`; row `k`
    /// holds the centre coefficients.
    weights: Vec<Vec<f64>>,
}

impl SmootherSpec {
    pub fn new(half_width: usize, degree: usize) -> Result<Self> {
        let width = 2 * half_width + 1;
        if half_width == 0 {
            return Err(Error::arg("smoothing half-width must be at least 1"));
        }
        if degree >= width {
            return Err(Error::arg(format!(
                "polynomial degree {degree} needs more than {width} points"
            )));
        }
        let k = half_width as f64;
        let terms = degree + 1;
        // Abscissae scaled to [-1, 1] to keep the normal equations well
        // conditioned; the fitted values are unaffected.
        let design = Matrix::from_fn(width, terms, |i, j| ((i as f64 - k) / k).powi(j as i32));
        let gram = crate::numeric::matmul(&design.transpose(), &design)?;

        let mut weights = Vec::with_capacity(width);
        for p in 0..width {
            let u = (p as f64 - k) / k;
            let basis: Vec<f64> = (0..terms).map(|j| u.powi(j as i32)).collect();
            // w = Aᵀ (AᵀA)⁻¹ basis, with AᵀA symmetric.
            let z = solve(&gram, &basis)?;
            let mut w = vec![0.0; width];
            design.matvec_acc(&z, &mut w);
            weights.push(w);
        }
        Ok(SmootherSpec {
            half_width,
            degree,
            weights,
        })
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn window(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.weights[self.half_width]
    }

    /// Smooths a gap-free slice. Returns `None` when it is shorter than the window.
    pub fn apply(&self, x: &[f64]) -> Option<Vec<f64>> {
        let k = self.half_width;
        let width = self.window();
        let n = x.len();
        if n < width {
            return None;
        }
        let mut y = vec![0.0; n];
        for (t, out) in y.iter_mut().enumerate() {
            let (start, row) = if t < k {
                (0, t)
            } else if t + k >= n {
                (n - width, t + width - n)
            } else {
                (t - k, k)
            };
            *out = crate::numeric::dot(&self.weights[row], &x[start..start + width]);
        }
        Some(y)
    }
}

impl Default for SmootherSpec {
    fn default() -> Self {
        SmootherSpec::new(2, 2).expect("valid default smoother")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub series: SignalSeries,
    /// Gap-free runs shorter than the window that were passed through as-is.
    pub short_runs: usize,
}

impl Smoothed {
    pub fn passed_through(&self) -> bool {
        self.short_runs > 0
    }
}

/// Smooths every maximal run of consecutive present samples independently.
/// Missing samples are left in place.
pub fn savitzky_golay_smooth(s: &SignalSeries, spec: &SmootherSpec) -> Smoothed {
    let values = s.values();
    let mut out: Vec<Option<f64>> = values.to_vec();
    let mut short_runs = 0;
    let mut i = 0;
    while i < values.len() {
        if values[i].is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i < values.len() && values[i].is_some() {
            i += 1;
        }
        let run: Vec<f64> = values[start..i].iter().map(|v| v.unwrap()).collect();
        match spec.apply(&run) {
            Some(y) => {
                for (slot, v) in out[start..i].iter_mut().zip(y) {
                    *slot = Some(v);
                }
            }
            None => short_runs += 1,
        }
    }
    Smoothed {
        series: s.with_values(out),
        short_runs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocessing::series::Channel;
    use proptest::prelude::*;

    /// Closed-form quadratic/cubic Savitzky-Golay centre weights.
    fn quadratic_oracle(k: i64, i: i64) -> f64 {
        let num = 3.0 * (3 * k * k + 3 * k - 1) as f64 - 15.0 * (i * i) as f64;
        let den = ((2 * k - 1) * (2 * k + 1) * (2 * k + 3)) as f64;
        num / den
    }

    #[test]
    fn five_point_quadratic_coefficients() {
        let spec = SmootherSpec::new(2, 2).unwrap();
        let want = [-3.0 / 35.0, 12.0 / 35.0, 17.0 / 35.0, 12.0 / 35.0, -3.0 / 35.0];
        for (i, (c, w)) in spec.coefficients().iter().zip(want).enumerate() {
            assert!((c - w).abs() < 1e-12, "c[{i}] = {c}, want {w}");
            assert!((c - quadratic_oracle(2, i as i64 - 2)).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_symmetric_and_normalized() {
        for k in 1..8 {
            for degree in 0..(2 * k).min(6) {
                let spec = SmootherSpec::new(k, degree).unwrap();
                let c = spec.coefficients();
                assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for i in 0..k {
                    assert!((c[i] - c[2 * k - i]).abs() < 1e-12);
                }
                if degree == 2 || degree == 3 {
                    for (i, ci) in c.iter().enumerate() {
                        assert!((ci - quadratic_oracle(k as i64, i as i64 - k as i64)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(SmootherSpec::new(0, 0).is_err());
        assert!(SmootherSpec::new(2, 5).is_err());
    }

    #[test]
    fn constant_and_short_series() {
        let spec = SmootherSpec::default();
        let s = SignalSeries::from_values(Channel::Hrv, 0.0, 10.0, &[600.0; 12]).unwrap();
        let out = savitzky_golay_smooth(&s, &spec);
        for v in out.series.dense_values() {
            assert!((v - 600.0).abs() < 1e-9);
        }
        let short = SignalSeries::from_values(Channel::Hrv, 0.0, 10.0, &[1.0, 5.0, 2.0]).unwrap();
        let out = savitzky_golay_smooth(&short, &spec);
        assert!(out.passed_through());
        assert_eq!(out.series, short);
    }

    #[test]
    fn missing_samples_split_runs() {
        let spec = SmootherSpec::default();
        let mut vals: Vec<Option<f64>> = (0..13).map(|i| Some((i * i) as f64)).collect();
        vals[6] = None;
        let ts = (0..13).map(|i| i as f64).collect();
        let s = SignalSeries::new(Channel::Hr, ts, vals).unwrap();
        let out = savitzky_golay_smooth(&s, &spec);
        assert_eq!(out.short_runs, 0);
        assert_eq!(out.series.values()[6], None);
        for (i, v) in out.series.values().iter().enumerate() {
            if let Some(v) = v {
                assert!((v - (i * i) as f64).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn reproduces_low_degree_polynomials(
            a in -100.0f64..100.0, b in -10.0f64..10.0, c in -1.0f64..1.0,
            n in 5usize..60, k in 2usize..5,
        ) {
            let spec = SmootherSpec::new(k, 2).unwrap();
            prop_assume!(n >= spec.window());
            let x: Vec<f64> = (0..n).map(|t| { let t = t as f64; a + b * t + c * t * t }).collect();
            let y = spec.apply(&x).unwrap();
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).abs() < 1e-9 * u.abs().max(1.0));
            }
        }
    }
}
