//! Deterministic synthetic wearable data with known ground truth.
//!
//! A shared latent strain process `s` (standard-normal AR(1)) drives every
//! channel through a Gaussian copula: each channel's latent is a mix of `s`
//! and channel-specific noise with unit variance, mapped to the channel's
//! marginal by `F⁻¹(Φ(z))`. Without events the marginals are exactly the
//! configured profiles. Heat events pull `s` toward a target inside the
//! Moderate or High stress band, which raises HR, RR and stress and lowers
//! HRV and SpO2.

pub mod marginal;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_timestamp, parse_timestamp};
use crate::numeric::Rng;
use crate::preprocessing::label::stress_band;
use crate::preprocessing::pipeline::RawSample;
use crate::preprocessing::series::Channel;
use crate::preprocessing::window::mean_sd;
use crate::risk::RiskLevel;

pub use marginal::{ChannelProfile, Marginal};

pub const DEFAULT_WORKERS: usize = 19;
pub const DEFAULT_DAYS: usize = 5;
pub const DEFAULT_SAMPLE_INTERVAL: f64 = 10.0;
pub const DEFAULT_AR_PER_MINUTE: f64 = 0.95;
pub const DEFAULT_EVENT_RATE: f64 = 1.0;
pub const DEFAULT_RAMP_MINUTES: f64 = 15.0;
/// 2023-06-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_685_577_600;
/// Work sessions as seconds after midnight: 08:00-12:00 and 15:00-18:00.
pub const SESSIONS: [(i64, i64); 2] = [(8 * 3600, 12 * 3600), (15 * 3600, 18 * 3600)];
pub const EVENTS_HEADER: &str = "worker_id,onset,duration_s,severity";

const REFERENCE_WINDOW: i64 = 60;
const PLATEAU_MINUTES: (f64, f64) = (10.0, 30.0);
const PLATEAU_JITTER: f64 = 0.25;
const ENV_COUPLING: f64 = 0.3;
const OUTLIER_SDS: (f64, f64) = (6.0, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Separability {
    High,
    PaperLike,
}

impl Separability {
    pub fn name(self) -> &'static str {
        match self {
            Separability::High => "high",
            Separability::PaperLike => "paper-like",
        }
    }

    /// (coupling of HR/HRV/SpO2/RR to the latent, white share of their
    /// residual, white share of the stress channel).
    fn noise(self) -> (f64, f64, f64) {
        match self {
            Separability::High => (0.995, 0.5, 0.0),
            Separability::PaperLike => (0.75, 0.5, 0.1),
        }
    }
}

impl fmt::Display for Separability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Separability {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Separability::High),
            "paper-like" | "paperlike" | "paper" => Ok(Separability::PaperLike),
            other => Err(Error::arg(format!("unknown separability '{other}' (expected high or paper-like)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub workers: usize,
    pub days: usize,
    pub seed: u64,
    /// Unix seconds of midnight UTC on the first day.
    pub start: i64,
    pub sample_interval: f64,
    pub profiles: BTreeMap<Channel, ChannelProfile>,
    /// Expected heat events per worker per day.
    pub event_rate: f64,
    pub ramp_minutes: f64,
    /// AR(1) coefficient of the latent processes per minute.
    pub ar_per_minute: f64,
    pub separability: Separability,
    /// Drop all white measurement noise.
    pub noise_free: bool,
    pub missing_rate: f64,
    pub outlier_rate: f64,
    /// Target Low/Moderate/High shares of the baseline stress index. `None`
    /// keeps the calibrated stress profile.
    pub class_balance: Option<[f64; 3]>,
}

impl GeneratorConfig {
    pub fn new(separability: Separability, seed: u64) -> Self {
        GeneratorConfig {
            workers: DEFAULT_WORKERS,
            days: DEFAULT_DAYS,
            seed,
            start: DEFAULT_START,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
            profiles: Channel::ALL.iter().map(|&c| (c, ChannelProfile::default_for(c))).collect(),
            event_rate: DEFAULT_EVENT_RATE,
            ramp_minutes: DEFAULT_RAMP_MINUTES,
            ar_per_minute: DEFAULT_AR_PER_MINUTE,
            separability,
            noise_free: false,
            missing_rate: 0.01,
            outlier_rate: 0.002,
            class_balance: None,
        }
    }

    /// No white noise, no missing values, no outliers.
    pub fn zero_noise(mut self) -> Self {
        self.noise_free = true;
        self.missing_rate = 0.0;
        self.outlier_rate = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.days == 0 {
            return Err(Error::InsufficientData(format!(
                "{} workers × {} days produces no samples",
                self.workers, self.days
            )));
        }
        for (name, r) in [
            ("event rate", self.event_rate),
            ("missing rate", self.missing_rate),
            ("outlier rate", self.outlier_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::arg(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        if !(self.sample_interval > 0.0 && self.sample_interval <= REFERENCE_WINDOW as f64) {
            return Err(Error::arg("sample interval must be in (0, 60] seconds"));
        }
        if !(self.ramp_minutes > 0.0) || !(0.0..1.0).contains(&self.ar_per_minute) {
            return Err(Error::arg("ramp must be positive and the AR coefficient in [0, 1)"));
        }
        for c in Channel::ALL {
            let p = self
                .profiles
                .get(&c)
                .ok_or_else(|| Error::arg(format!("no profile for channel {c}")))?;
            p.validate(c)?;
        }
        if let Some(b) = self.class_balance {
            if b.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::arg("class balance shares must be positive"));
            }
        }
        Ok(())
    }

    pub fn worker_id(&self, w: usize) -> String {
        let width = self.workers.to_string().len().max(2);
        format!("W{:0width$}", w + 1)
    }

    fn marginals(&self) -> Result<BTreeMap<Channel, Marginal>> {
        let mut out = BTreeMap::new();
        for c in Channel::ALL {
            let p = &self.profiles[&c];
            let m = match (c, self.class_balance) {
                (Channel::Stress, Some(b)) => Marginal::piecewise(&[p.min, 25.0, 75.0, p.max], &b)?,
                _ => Marginal::beta(p)?,
            };
            out.insert(c, m);
        }
        Ok(out)
    }
}

/// One heat event: a linear ramp toward the severity's stress target, a
/// plateau, and a ramp back of the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatEvent {
    pub worker_id: String,
    pub onset: f64,
    pub duration_s: f64,
    pub severity: RiskLevel,
}

impl HeatEvent {
    /// Plateau interval `[start, end)` given the ramp length.
    pub fn plateau(&self, ramp_s: f64) -> (f64, f64) {
        (self.onset + ramp_s, self.onset + self.duration_s - ramp_s)
    }

    fn weight(&self, t: f64, ramp_s: f64) -> f64 {
        let end = self.onset + self.duration_s;
        if t < self.onset || t >= end {
            0.0
        } else if t < self.onset + ramp_s {
            (t - self.onset) / ramp_s
        } else if t >= end - ramp_s {
            (end - t) / ramp_s
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventScript {
    /// Ordered by worker then onset.
    pub events: Vec<HeatEvent>,
}

impl EventScript {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{EVENTS_HEADER}")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{},{}",
                e.worker_id,
                format_timestamp(e.onset),
                e.duration_s,
                e.severity.name()
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || (i == 0 && line.starts_with("worker_id")) {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            events.push(HeatEvent {
                worker_id: f[0].to_string(),
                onset: parse_timestamp(f[1]).ok_or_else(|| bad("bad onset timestamp"))?,
                duration_s: f[2].trim().parse().map_err(|_| bad("bad duration"))?,
                severity: f[3].parse().map_err(|_| bad("bad severity"))?,
            });
        }
        Ok(EventScript { events })
    }
}

/// Ground-truth label of one window from the noise-free stress signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceWindow {
    pub worker_id: String,
    pub window_start: i64,
    pub label: RiskLevel,
}

#[derive(Debug, Clone, Default)]
pub struct Generated {
    /// Ordered by worker, time, then channel.
    pub samples: Vec<RawSample>,
    pub script: EventScript,
    pub reference: Vec<ReferenceWindow>,
    /// Non-missing values before injection of outliers.
    pub present_values: usize,
    pub injected_missing: usize,
    pub injected_outliers: usize,
}

struct Physio {
    coupling: f64,
    white: f64,
    stress_white: f64,
}

fn poisson(rng: &mut Rng, lambda: f64) -> usize {
    let limit = (-lambda).exp();
    let mut p = rng.uniform();
    let mut k = 0;
    while p > limit {
        k += 1;
        p *= rng.uniform();
    }
    k
}

fn script_day(cfg: &GeneratorConfig, worker: &str, day_start: f64, rng: &mut Rng) -> Vec<HeatEvent> {
    let ramp = (cfg.ramp_minutes * 60.0).round();
    let n = poisson(rng, cfg.event_rate);
    let mut events: Vec<HeatEvent> = Vec::new();
    for _ in 0..n {
        let severity = if rng.bernoulli(0.5) { RiskLevel::High } else { RiskLevel::Moderate };
        let plateau = (rng.uniform_range(PLATEAU_MINUTES.0, PLATEAU_MINUTES.1) * 60.0).round();
        let duration = 2.0 * ramp + plateau;
        for _ in 0..100 {
            let (a, b) = SESSIONS[rng.below(SESSIONS.len())];
            let room = (b - a) as f64 - duration;
            if room < 0.0 {
                continue;
            }
            let onset = day_start + a as f64 + (rng.uniform() * room).floor();
            let clash = events
                .iter()
                .any(|e| onset < e.onset + e.duration_s && e.onset < onset + duration);
            if !clash {
                events.push(HeatEvent {
                    worker_id: worker.to_string(),
                    onset,
                    duration_s: duration,
                    severity,
                });
                break;
            }
        }
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    events
}

struct EventTargets {
    moderate: (f64, f64, f64),
    high: (f64, f64, f64),
}

impl EventTargets {
    fn new(stress: &Marginal) -> Self {
        let z = |x| stress.latent_of(x);
        EventTargets {
            moderate: (z(62.0), z(30.0), z(72.0)),
            high: (z(88.0), z(79.0), z(97.0)),
        }
    }

    fn pull(&self, severity: RiskLevel, base: f64) -> f64 {
        let (target, lo, hi) = if severity == RiskLevel::High { self.high } else { self.moderate };
        (target + PLATEAU_JITTER * base).clamp(lo, hi)
    }
}

fn channel_sign(c: Channel) -> f64 {
    match c {
        Channel::Hrv | Channel::Spo2 => -1.0,
        _ => 1.0,
    }
}

fn generate_worker(
    cfg: &GeneratorConfig,
    marginals: &BTreeMap<Channel, Marginal>,
    w: usize,
    with_samples: bool,
) -> Generated {
    let worker = cfg.worker_id(w);
    let (coupling, white, stress_white) = cfg.separability.noise();
    let noise = if cfg.noise_free {
        Physio {
            coupling,
            white: 0.0,
            stress_white: 0.0,
        }
    } else {
        Physio {
            coupling,
            white,
            stress_white,
        }
    };
    let targets = EventTargets::new(&marginals[&Channel::Stress]);
    let dt = cfg.sample_interval;
    let rho = cfg.ar_per_minute.powf(dt / 60.0);
    let innov = (1.0 - rho * rho).sqrt();
    let ramp = (cfg.ramp_minutes * 60.0).round();
    let residual = (1.0 - noise.coupling * noise.coupling).sqrt();
    let env_residual = (1.0 - ENV_COUPLING * ENV_COUPLING).sqrt();

    let mut out = Generated::default();
    let worker_rng = Rng::new(cfg.seed).child(w as u64);
    for day in 0..cfg.days {
        let day_rng = worker_rng.child(day as u64);
        let day_start = (cfg.start + 86_400 * day as i64) as f64;
        let events = script_day(cfg, &worker, day_start, &mut day_rng.child(0));

        for (si, &(a, b)) in SESSIONS.iter().enumerate() {
            let mut latent = day_rng.child(10 + si as u64);
            let mut whites = day_rng.child(20 + si as u64);
            let mut inject = day_rng.child(30 + si as u64);
            let mut s = latent.normal();
            let mut own: Vec<f64> = Channel::ALL.iter().map(|_| latent.normal()).collect();
            let mut windows: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
            let n = ((b - a) as f64 / dt).floor() as usize;
            for k in 0..n {
                if k > 0 {
                    s = rho * s + innov * latent.normal();
                    for u in own.iter_mut() {
                        *u = rho * *u + innov * latent.normal();
                    }
                }
                let t = day_start + a as f64 + k as f64 * dt;
                let strain = match events.iter().find(|e| e.weight(t, ramp) > 0.0) {
                    Some(e) => {
                        let g = e.weight(t, ramp);
                        (1.0 - g) * s + g * targets.pull(e.severity, s)
                    }
                    None => s,
                };
                let clean_stress = marginals[&Channel::Stress].from_latent(strain);
                let start = (t.floor() as i64).div_euclid(REFERENCE_WINDOW) * REFERENCE_WINDOW;
                windows.entry(start).or_default().push(clean_stress);

                for (ci, &c) in Channel::ALL.iter().enumerate() {
                    let eps = whites.normal();
                    let z = match c {
                        Channel::Stress => {
                            (1.0 - noise.stress_white).sqrt() * strain + noise.stress_white.sqrt() * eps
                        }
                        Channel::AmbientTemp | Channel::Humidity => {
                            ENV_COUPLING * strain + env_residual * own[ci]
                        }
                        _ => {
                            channel_sign(c) * noise.coupling * strain
                                + residual * ((1.0 - noise.white).sqrt() * own[ci] + noise.white.sqrt() * eps)
                        }
                    };
                    let p = &cfg.profiles[&c];
                    let mut value = Some(marginals[&c].from_latent(z).clamp(p.min, p.max));
                    let missing = inject.bernoulli(cfg.missing_rate);
                    let outlier = inject.bernoulli(cfg.outlier_rate);
                    let magnitude = inject.uniform_range(OUTLIER_SDS.0, OUTLIER_SDS.1);
                    let up = inject.bernoulli(0.5);
                    if missing {
                        value = None;
                        out.injected_missing += 1;
                    } else {
                        out.present_values += 1;
                        if outlier {
                            let shift = magnitude * p.sd;
                            value = value.map(|v| if up { v + shift } else { v - shift });
                            out.injected_outliers += 1;
                        }
                    }
                    if with_samples {
                        out.samples.push(RawSample {
                            worker_id: worker.clone(),
                            timestamp: t,
                            channel: c,
                            value,
                        });
                    }
                }
            }
            for (start, values) in windows {
                out.reference.push(ReferenceWindow {
                    worker_id: worker.clone(),
                    window_start: start,
                    label: stress_band(mean_sd(&values).0),
                });
            }
        }
        out.script.events.extend(events);
    }
    out
}

fn run(cfg: &GeneratorConfig, with_samples: bool) -> Result<Generated> {
    cfg.validate()?;
    let marginals = cfg.marginals()?;
    let parts: Vec<Generated> = (0..cfg.workers)
        .into_par_iter()
        .map(|w| generate_worker(cfg, &marginals, w, with_samples))
        .collect();
    let mut out = Generated::default();
    for p in parts {
        out.samples.extend(p.samples);
        out.script.events.extend(p.script.events);
        out.reference.extend(p.reference);
        out.present_values += p.present_values;
        out.injected_missing += p.injected_missing;
        out.injected_outliers += p.injected_outliers;
    }
    Ok(out)
}

/// Raw samples for every worker over both daily sessions, the event script
/// and the reference labels. Identical configurations give identical output.
pub fn generate(cfg: &GeneratorConfig) -> Result<Generated> {
    run(cfg, true)
}

/// Per-window StressBand labels of the noise-free stress signal. Fails when
/// `script` is not the one `generate(cfg)` produces.
pub fn bayes_reference(cfg: &GeneratorConfig, script: &EventScript) -> Result<Vec<ReferenceWindow>> {
    let g = run(cfg, false)?;
    if g.script != *script {
        return Err(Error::arg("event script was not produced by this configuration"));
    }
    Ok(g.reference)
}
