//! Region-of-attraction predicates, the recovery-rate bound and the
//! excitability estimator derived from it.
//!
//! With `r = x² + y²` the fast dynamics reduce to `ṙ = 2r·h(r, σ)` where
//! `h(r, σ) = σ + 2ab·r − b·r²`. Freezing `r` at its initial value in `h`
//! gives the decay rate
//!
//! ```text
//! μ(t) = −2(σ(t) + 2ab·r(0) − b·r(0)²)
//! ```
//!
//! and the envelope `r(t) ≤ exp(−t·μ(t))·r(0)` for starts inside the shrinking
//! disc `r < a − sqrt(a² + σ/b)`. Inverting the envelope yields an estimate of
//! the unobservable `σ` from two radius measurements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::Trajectory;
use crate::model::{ModelParams, SystemState};

/// Radii at or below this are treated as unmeasurable.
pub const R_FLOOR: f64 = 1e-12;

/// Relative slack on the envelope inequality, absorbing integrator error.
pub const ENVELOPE_SLACK: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("parameters outside the bistable regime -a^2 b < c1 < c2 < 0 < c3: {0}")]
    Regime(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate radius (r0 = {r0:e}, rt = {rt:e}); both must exceed {R_FLOOR:e}")]
    DegenerateRadius { r0: f64, rt: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    R1,
    R2,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMembership {
    pub label: RegionLabel,
    /// Slack of the binding inequality; negative outside the region.
    pub margin: f64,
}

impl RegionMembership {
    /// Inside `R1 ∪ R2`, or outside by no more than `tol`.
    pub fn within(&self, tol: f64) -> bool {
        self.label != RegionLabel::Outside || self.margin >= -tol
    }
}

/// Verifies `−a²b < c1 < c2 < 0 < c3`.
pub fn check_bistable_regime(p: &ModelParams) -> Result<(), AnalysisError> {
    let t = p.saddle_node();
    if t < p.c1 && p.c1 < p.c2 && p.c2 < 0.0 && 0.0 < p.c3 {
        Ok(())
    } else {
        Err(AnalysisError::Regime(format!(
            "-a^2 b = {t}, c = ({}, {}, {})",
            p.c1, p.c2, p.c3
        )))
    }
}

/// Radial bound `a − sqrt(a² + σ/b)` of the attraction disc at excitability `sigma`.
#[inline]
pub fn radial_bound(sigma: f64, p: &ModelParams) -> f64 {
    p.a - (p.a * p.a + sigma / p.b).max(0.0).sqrt()
}

pub fn region_membership(
    s: &SystemState,
    p: &ModelParams,
) -> Result<RegionMembership, AnalysisError> {
    check_bistable_regime(p)?;
    Ok(membership_unchecked(s, p))
}

#[inline]
pub(crate) fn membership_unchecked(s: &SystemState, p: &ModelParams) -> RegionMembership {
    if s.sigma < p.c1 {
        return RegionMembership {
            label: RegionLabel::R2,
            margin: p.c1 - s.sigma,
        };
    }
    if s.sigma >= p.c2 {
        return RegionMembership {
            label: RegionLabel::Outside,
            margin: p.c2 - s.sigma,
        };
    }
    let margin = radial_bound(s.sigma, p) - s.r();
    RegionMembership {
        label: if margin > 0.0 {
            RegionLabel::R1
        } else {
            RegionLabel::Outside
        },
        margin,
    }
}

/// `−2(σ + 2ab·r0 − b·r0²)`. May be non-positive near the critical point.
#[inline]
pub fn mu_bound(sigma_t: f64, r0: f64, p: &ModelParams) -> f64 {
    -2.0 * (sigma_t + 2.0 * p.a * p.b * r0 - p.b * r0 * r0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryBound {
    pub mu: f64,
    pub r0: f64,
}

impl RecoveryBound {
    pub fn new(sigma: f64, r0: f64, p: &ModelParams) -> Self {
        Self {
            mu: mu_bound(sigma, r0, p),
            r0,
        }
    }

    pub fn envelope(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.r0;
        }
        self.r0 * (-t * self.mu).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub holds: bool,
    pub first_violation: Option<f64>,
    /// First sample time with `r ≥ a − sqrt(a² + σ/b)`; `None` if the disc is never left.
    pub exit_time: Option<f64>,
    pub samples_checked: usize,
    /// Largest `r(t) / envelope(t)` seen before the exit time.
    pub worst_ratio: f64,
}

/// Checks `r(t) ≤ exp(−t·μ(t))·r(0)` at every sample before the exit time.
pub fn check_envelope(traj: &Trajectory, p: &ModelParams) -> Result<EnvelopeReport, AnalysisError> {
    let first = traj
        .samples
        .first()
        .ok_or_else(|| AnalysisError::Precondition("empty trajectory".into()))?
        .state;
    let r0 = first.r();
    if !(p.c2 < first.sigma && first.sigma < 0.0) {
        return Err(AnalysisError::Precondition(format!(
            "c2 < sigma(0) < 0 fails: c2 = {}, sigma(0) = {}",
            p.c2, first.sigma
        )));
    }
    let bound0 = radial_bound(first.sigma, p);
    if r0 >= bound0 || r0.is_nan() {
        return Err(AnalysisError::Precondition(format!(
            "r(0) < a - sqrt(a^2 + sigma(0)/b) fails: r(0) = {r0}, bound = {bound0}"
        )));
    }
    let mut report = EnvelopeReport {
        holds: true,
        first_violation: None,
        exit_time: None,
        samples_checked: 0,
        worst_ratio: 0.0,
    };
    for sample in &traj.samples {
        let s = sample.state;
        let r = s.r();
        if r >= radial_bound(s.sigma, p) {
            report.exit_time = Some(s.t);
            break;
        }
        let elapsed = s.t - first.t;
        let env = (-elapsed * mu_bound(s.sigma, r0, p)).exp() * r0;
        report.samples_checked += 1;
        if env > 0.0 {
            report.worst_ratio = report.worst_ratio.max(r / env);
        }
        if r > env + ENVELOPE_SLACK * r0 && report.holds {
            report.holds = false;
            report.first_violation = Some(s.t);
        }
    }
    Ok(report)
}

/// Inverts the exponential envelope: `(1/2t)·ln(rt/r0) − 2ab·r0 + b·r0²`.
pub fn estimate_sigma(r0: f64, rt: f64, t: f64, p: &ModelParams) -> Result<f64, AnalysisError> {
    if !(r0 > R_FLOOR && rt > R_FLOOR) {
        return Err(AnalysisError::DegenerateRadius { r0, rt });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!(
            "elapsed time must be > 0, got {t}"
        )));
    }
    Ok((rt / r0).ln() / (2.0 * t) - 2.0 * p.a * p.b * r0 + p.b * r0 * r0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTime {
    /// Elapsed time since the first sample.
    pub time: f64,
    /// False when the threshold is not held through the end of the run;
    /// `time` is then the horizon.
    pub reached: bool,
}

/// First time after which `r(t) ≤ fraction·r(0)` holds for the rest of the run.
pub fn recovery_time(traj: &Trajectory, fraction: f64) -> Result<RecoveryTime, AnalysisError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AnalysisError::InvalidArgument(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let samples = &traj.samples;
    let Some(first) = samples.first() else {
        return Err(AnalysisError::Precondition("empty trajectory".into()));
    };
    let t0 = first.state.t;
    let threshold = fraction * first.state.r();
    let last_above = samples.iter().rposition(|s| s.state.r() > threshold);
    Ok(match last_above {
        None => RecoveryTime {
            time: 0.0,
            reached: true,
        },
        Some(i) if i + 1 < samples.len() => RecoveryTime {
            time: samples[i + 1].state.t - t0,
            reached: true,
        },
        Some(_) => RecoveryTime {
            time: samples[samples.len() - 1].state.t - t0,
            reached: false,
        },
    })
}
