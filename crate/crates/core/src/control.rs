//! Event-latched linear feedback on the fast variables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SystemState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("feedback gain must be finite and >= 0, got {0}")]
    InvalidGain(f64),
}

/// Feedback `u = −F(t)·(x, y)` with `F(t) = 0` until the first detector
/// event and `F(t) = gain` for every step after it. The latch never resets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    gain: f64,
    #[serde(default)]
    latched: bool,
    #[serde(default)]
    activation_time: Option<f64>,
}

impl ControlPolicy {
    pub fn new(gain: f64) -> Result<Self, ControlError> {
        if !(gain.is_finite() && gain >= 0.0) {
            return Err(ControlError::InvalidGain(gain));
        }
        Ok(Self {
            gain,
            latched: false,
            activation_time: None,
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn is_latched(&self) -> bool {
        self.latched
    }

    pub fn activation_time(&self) -> Option<f64> {
        self.activation_time
    }

    /// Current effective gain `F(t)`.
    pub fn effective_gain(&self) -> f64 {
        if self.latched {
            self.gain
        } else {
            0.0
        }
    }

    #[inline]
    pub fn control_input(&self, s: &SystemState) -> [f64; 2] {
        if self.latched {
            [-self.gain * s.x, -self.gain * s.y]
        } else {
            [0.0, 0.0]
        }
    }

    /// Latches the policy at the detector's final sample time `t`.
    /// Later events leave the policy unchanged.
    #[must_use]
    pub fn on_event(self, t: f64) -> Self {
        if self.latched {
            return self;
        }
        Self {
            latched: true,
            activation_time: Some(t),
            ..self
        }
    }
}

/// Free-function form of [`ControlPolicy::control_input`].
pub fn control_input(s: &SystemState, policy: &ControlPolicy) -> [f64; 2] {
    policy.control_input(s)
}
