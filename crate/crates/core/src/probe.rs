//! Active probing detector for critical slowing down.
//!
//! Every period `P` a rectangular pulse of height `K` and width `Δ` is pushed
//! into both fast channels. The squared radius is read right after the pulse
//! (`tₙˢ = tₙ + Δ`) and half a period later (`tₙᶠ = tₙˢ + P/2`); the decay
//! between the two reads gives an estimate of the current excitability. An
//! estimate above the threshold `σ̄` is an early warning: the detector latches
//! and stops probing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisError, R_FLOOR};
use crate::forcing::gaussian;
use crate::model::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("invalid probe schedule: {0}")]
    InvalidSchedule(String),
}

/// Optional additive noise on the measured `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub stddev: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSchedule {
    /// First probe time `t₁`.
    pub t1: f64,
    pub period: f64,
    pub amplitude: f64,
    pub width: f64,
    pub threshold: f64,
    #[serde(default)]
    pub measurement_noise: Option<MeasurementNoise>,
}

impl ProbeSchedule {
    /// Schedule with `t₁ = P`.
    pub fn new(period: f64, amplitude: f64, width: f64, threshold: f64) -> Result<Self, ProbeError> {
        let s = Self {
            t1: period,
            period,
            amplitude,
            width,
            threshold,
            measurement_noise: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// `P = 15, K = 0.5, Δ = 0.2, σ̄ = −0.1`.
    pub fn detection_example() -> Self {
        Self::new(15.0, 0.5, 0.2, -0.1).expect("valid")
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::InvalidSchedule(m));
        if !(self.period.is_finite() && self.period > 0.0) {
            return bad(format!("period must be > 0, got {}", self.period));
        }
        if !(self.width > 0.0 && self.width < self.period / 2.0) {
            return bad(format!(
                "width must satisfy 0 < width < period/2, got width = {}, period = {}",
                self.width, self.period
            ));
        }
        if !self.amplitude.is_finite() || self.amplitude == 0.0 {
            return bad(format!("amplitude must be finite and nonzero, got {}", self.amplitude));
        }
        if !(self.threshold.is_finite() && self.threshold < 0.0) {
            return bad(format!("threshold must be < 0, got {}", self.threshold));
        }
        if !(self.t1.is_finite() && self.t1 >= 0.0) {
            return bad(format!("t1 must be >= 0, got {}", self.t1));
        }
        if let Some(n) = self.measurement_noise {
            if !(n.stddev.is_finite() && n.stddev >= 0.0) {
                return bad(format!("measurement noise stddev must be >= 0, got {}", n.stddev));
            }
        }
        Ok(())
    }

    /// Pulse onset `tₙ` (1-based).
    pub fn onset(&self, n: usize) -> f64 {
        self.t1 + (n as f64 - 1.0) * self.period
    }

    pub fn first_sample(&self, n: usize) -> f64 {
        self.onset(n) + self.width
    }

    pub fn final_sample(&self, n: usize) -> f64 {
        self.first_sample(n) + self.period / 2.0
    }

    /// Snaps the schedule onto an integrator grid with step `dt`.
    pub fn on_grid(&self, dt: f64) -> ProbeGrid {
        let snap = |v: f64| (v / dt).round() as u64;
        ProbeGrid {
            first_onset: snap(self.t1),
            period: snap(self.period).max(1),
            width: snap(self.width).max(1),
            half_period: snap(self.period / 2.0).max(1),
        }
    }

    /// Largest distance between a schedule time and its grid point.
    pub fn snap_error(&self, dt: f64) -> f64 {
        let g = self.on_grid(dt);
        [
            (self.t1, g.first_onset),
            (self.period, g.period),
            (self.width, g.width),
            (self.period / 2.0, g.half_period),
        ]
        .iter()
        .map(|&(v, k)| (v - k as f64 * dt).abs())
        .fold(0.0, f64::max)
    }
}

/// Schedule expressed in integrator step indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeGrid {
    pub first_onset: u64,
    pub period: u64,
    pub width: u64,
    pub half_period: u64,
}

impl ProbeGrid {
    pub fn onset(&self, n: usize) -> u64 {
        self.first_onset + (n as u64 - 1) * self.period
    }

    pub fn first_sample(&self, n: usize) -> u64 {
        self.onset(n) + self.width
    }

    pub fn final_sample(&self, n: usize) -> u64 {
        self.first_sample(n) + self.half_period
    }

    /// Whether step `k` (covering `[k·dt, (k+1)·dt)`) lies under probe pulse `n`.
    pub fn pulse_covers(&self, n: usize, k: u64) -> bool {
        k >= self.onset(n) && k < self.first_sample(n)
    }
}

/// `(K, K)` on `[tₙ, tₙ + Δ]` for some `n ≥ 1`, zero elsewhere or once halted.
pub fn probe_forcing(t: f64, sched: &ProbeSchedule, halted: bool) -> [f64; 2] {
    if halted || t < sched.t1 {
        return [0.0, 0.0];
    }
    let n = ((t - sched.t1) / sched.period).floor();
    let offset = t - sched.t1 - n * sched.period;
    if offset <= sched.width {
        [sched.amplitude, sched.amplitude]
    } else {
        [0.0, 0.0]
    }
}

/// `(1/P)·ln(r_f/r_s) − 2ab·r_s + b·r_s²`.
pub fn estimate_from_probe(
    r_s: f64,
    r_f: f64,
    sched: &ProbeSchedule,
    p: &ModelParams,
) -> Result<f64, AnalysisError> {
    if !(r_s > R_FLOOR && r_f > R_FLOOR) {
        return Err(AnalysisError::DegenerateRadius { r0: r_s, rt: r_f });
    }
    Ok((r_f / r_s).ln() / sched.period - 2.0 * p.a * p.b * r_s + p.b * r_s * r_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub n: usize,
    pub t_s: f64,
    pub t_f: f64,
    pub r_s: f64,
    pub r_f: f64,
    /// `None` when the probe was skipped because a radius fell below the floor.
    pub sigma_n: Option<f64>,
    pub sigma_true: Option<f64>,
    pub event: bool,
}

/// Raw reads for one probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSamples {
    pub n: usize,
    pub t_s: f64,
    pub t_f: f64,
    pub r_s: f64,
    pub r_f: f64,
    pub sigma_true: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionState {
    /// Index of the next probe to be evaluated.
    pub next: usize,
    /// Latest estimate, initialised to `−a²b`.
    pub sigma_last: f64,
    pub halted: bool,
    pub first_event_time: Option<f64>,
    pub skipped: usize,
}

impl DetectionState {
    pub fn new(p: &ModelParams) -> Self {
        Self {
            next: 1,
            sigma_last: p.saddle_node(),
            halted: false,
            first_event_time: None,
            skipped: 0,
        }
    }
}

/// Consumes the reads of probe `n`, returning its record and the updated state.
///
/// After the first event the state is latched: later calls still produce a
/// record but never clear `halted`.
pub fn detector_step(
    samples: ProbeSamples,
    sched: &ProbeSchedule,
    p: &ModelParams,
    state: DetectionState,
) -> (DetectionRecord, DetectionState) {
    let mut next = state;
    next.next = samples.n + 1;
    let estimate = estimate_from_probe(samples.r_s, samples.r_f, sched, p).ok();
    let event = estimate.is_some_and(|s| s > sched.threshold);
    match estimate {
        Some(s) => next.sigma_last = s,
        None => next.skipped += 1,
    }
    if event && !next.halted {
        next.halted = true;
        next.first_event_time = Some(samples.t_f);
    }
    let record = DetectionRecord {
        n: samples.n,
        t_s: samples.t_s,
        t_f: samples.t_f,
        r_s: samples.r_s,
        r_f: samples.r_f,
        sigma_n: estimate,
        sigma_true: samples.sigma_true,
        event,
    };
    (record, next)
}

/// Applies the optional measurement noise to a read of `(x, y)` for probe `n`.
pub(crate) fn measure(sched: &ProbeSchedule, n: usize, which: u64, x: f64, y: f64) -> f64 {
    match sched.measurement_noise {
        Some(noise) if noise.stddev > 0.0 => {
            let base = (n as u64) * 4 + which * 2;
            let mx = x + noise.stddev * gaussian(noise.seed, 1, base);
            let my = y + noise.stddev * gaussian(noise.seed, 1, base + 1);
            mx * mx + my * my
        }
        _ => x * x + y * y,
    }
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: std::io::Write>(records: &[DetectionRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
