//! Model constants, the forced vector field and the attractor catalog.
//!
//! The fast subsystem is a radially symmetric oscillator whose amplitude
//! equation is governed by
//!
//! ```text
//! f(x, y, σ) = σ + 2ab(x² + y²) − b(x² + y²)²
//! ```
//!
//! and the slow excitability `σ` relaxes along the cubic
//! `−ε(σ − c1)(σ − c2)(σ − c3)`. Setting `ε = 0` freezes `σ`, which gives the
//! fixed-excitability oscillator used for bifurcation sweeps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("c{index} = {value} sits exactly on a bifurcation boundary ({boundary}); stability is degenerate there")]
    BoundaryCase {
        index: usize,
        value: f64,
        boundary: &'static str,
    },
}

/// All model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub omega: f64,
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub epsilon: f64,
}

impl ModelParams {
    /// Builds and validates a parameter set.
    pub fn new(
        omega: f64,
        a: f64,
        b: f64,
        c: [f64; 3],
        epsilon: f64,
    ) -> Result<Self, ModelError> {
        let p = Self {
            omega,
            a,
            b,
            c1: c[0],
            c2: c[1],
            c3: c[2],
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ModelError::InvalidParams {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        };
        positive("omega", self.omega)?;
        positive("a", self.a)?;
        positive("b", self.b)?;
        for (field, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !v.is_finite() {
                return Err(ModelError::InvalidParams {
                    field,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        if !(self.c1 < self.c2 && self.c2 < self.c3) {
            return Err(ModelError::InvalidParams {
                field: "c",
                reason: format!(
                    "require c1 < c2 < c3, got ({}, {}, {})",
                    self.c1, self.c2, self.c3
                ),
            });
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(ModelError::InvalidParams {
                field: "epsilon",
                reason: format!("must be finite and >= 0, got {}", self.epsilon),
            });
        }
        Ok(())
    }

    pub fn c(&self) -> [f64; 3] {
        [self.c1, self.c2, self.c3]
    }

    /// The saddle-node threshold `−a²b` of the fast subsystem.
    pub fn saddle_node(&self) -> f64 {
        -self.a * self.a * self.b
    }

    /// Squared radius of the stable cycle at excitability `sigma`, if it exists.
    pub fn outer_radius(&self, sigma: f64) -> Option<f64> {
        (sigma >= self.saddle_node()).then(|| self.a + self.gamma(sigma))
    }

    /// Squared radius of the unstable cycle at excitability `sigma`, if it exists.
    pub fn inner_radius(&self, sigma: f64) -> Option<f64> {
        (sigma > self.saddle_node() && sigma < 0.0).then(|| self.a - self.gamma(sigma))
    }

    /// `sqrt(a² + σ/b)`, clamped at zero below the saddle-node point.
    pub fn gamma(&self, sigma: f64) -> f64 {
        (self.a * self.a + sigma / self.b).max(0.0).sqrt()
    }

    /// The slow drift `−ε(σ − c1)(σ − c2)(σ − c3)`.
    #[inline]
    pub fn slow_drift(&self, sigma: f64) -> f64 {
        -self.epsilon * (sigma - self.c1) * (sigma - self.c2) * (sigma - self.c3)
    }

    /// Parameters of the critical-transition example (forcing-driven switch).
    pub fn transition_example() -> Self {
        Self {
            omega: 2.0,
            a: 1.0,
            b: 1.0,
            c1: -0.9,
            c2: -0.7,
            c3: 0.5,
            epsilon: 0.1,
        }
    }

    /// Parameters of the recovery-speed comparison.
    pub fn slowing_example() -> Self {
        Self {
            omega: 5.0,
            epsilon: 0.01,
            ..Self::transition_example()
        }
    }

    /// Parameters of the probing detector and feedback-control examples.
    pub fn detection_example() -> Self {
        Self {
            omega: 4.0,
            a: 1.0,
            b: 1.0,
            c1: -0.9,
            c2: -0.7,
            c3: 0.2,
            epsilon: 0.1,
        }
    }
}

/// A point of the flow. `t` is carried along so that samples are self-describing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    #[serde(default)]
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl SystemState {
    pub fn new(t: f64, x: f64, y: f64, sigma: f64) -> Self {
        Self { t, x, y, sigma }
    }

    /// Squared radius `x² + y²`.
    #[inline]
    pub fn r(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.is_finite() && self.y.is_finite() && self.sigma.is_finite()
    }
}

/// `σ + 2ab(x²+y²) − b(x²+y²)²`.
#[inline]
pub fn f_value(x: f64, y: f64, sigma: f64, p: &ModelParams) -> f64 {
    let r = x * x + y * y;
    sigma + 2.0 * p.a * p.b * r - p.b * r * r
}

/// Right-hand side of the forced system. `forcing` is `(ζx, ζy, ζσ)`.
#[inline]
pub fn vector_field(s: &SystemState, p: &ModelParams, forcing: [f64; 3]) -> [f64; 3] {
    let f = f_value(s.x, s.y, s.sigma, p);
    [
        -p.omega * s.y + s.x * f + forcing[0],
        p.omega * s.x + s.y * f + forcing[1],
        p.slow_drift(s.sigma) + forcing[2],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Nonexistent,
}

/// Equilibrium and the two candidate cycles attached to one root `cᵢ` of the slow drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttractorSet {
    pub index: usize,
    pub c: f64,
    pub gamma: Option<f64>,
    pub equilibrium: Stability,
    pub outer_cycle: Stability,
    pub outer_radius: Option<f64>,
    pub inner_cycle: Stability,
    pub inner_radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttractorCatalog {
    pub sets: [AttractorSet; 3],
}

impl AttractorCatalog {
    pub fn get(&self, index: usize) -> &AttractorSet {
        &self.sets[index - 1]
    }
}

/// Classifies equilibria and cycles at each slow root by parameter regime.
///
/// Roots 1 and 3 are stable roots of the slow drift, so the fast-subsystem
/// regime decides the label. Root 2 is unstable in σ, so every object that
/// exists there is unstable. Roots lying exactly on `−a²b` or `0` are
/// rejected with [`ModelError::BoundaryCase`].
pub fn attractor_catalog(p: &ModelParams) -> Result<AttractorCatalog, ModelError> {
    p.validate()?;
    let threshold = p.saddle_node();
    let mut sets = [None; 3];
    for (i, &c) in p.c().iter().enumerate() {
        let index = i + 1;
        if c == threshold {
            return Err(ModelError::BoundaryCase {
                index,
                value: c,
                boundary: "-a^2 b",
            });
        }
        if c == 0.0 {
            return Err(ModelError::BoundaryCase {
                index,
                value: c,
                boundary: "0",
            });
        }
        use Stability::*;
        let (mut eq, mut outer, mut inner) = if c < threshold {
            (Stable, Nonexistent, Nonexistent)
        } else if c < 0.0 {
            (Stable, Stable, Unstable)
        } else {
            (Unstable, Stable, Nonexistent)
        };
        if index == 2 {
            for s in [&mut eq, &mut outer, &mut inner] {
                if *s == Stable {
                    *s = Unstable;
                }
            }
        }
        let outer_radius = p.outer_radius(c);
        let inner_radius = p.inner_radius(c);
        sets[i] = Some(AttractorSet {
            index,
            c,
            gamma: outer_radius.map(|_| p.gamma(c)),
            equilibrium: eq,
            outer_cycle: outer,
            outer_radius,
            inner_cycle: inner,
            inner_radius,
        });
    }
    Ok(AttractorCatalog {
        sets: sets.map(|s| s.expect("filled above")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(c: [f64; 3], eps: f64) -> ModelParams {
        ModelParams::new(2.0, 1.0, 1.0, c, eps).unwrap()
    }

    #[test]
    fn f_value_examples() {
        let p = unit([-0.9, -0.7, 0.5], 0.1);
        assert_eq!(f_value(0.0, 0.0, -0.5, &p), -0.5);
        assert_eq!(f_value(1.0, 0.0, 0.0, &p), 1.0);
        let r = p.outer_radius(p.c1).unwrap();
        let x = r.sqrt();
        assert!(f_value(x, 0.0, p.c1, &p).abs() < 1e-14);
    }

    #[test]
    fn equilibria_are_fixed_points() {
        let p = unit([-0.9, -0.7, 0.5], 0.1);
        for c in p.c() {
            let s = SystemState::new(0.0, 0.0, 0.0, c);
            assert_eq!(vector_field(&s, &p, [0.0; 3]), [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn slow_drift_at_origin() {
        let p = unit([-0.9, -0.7, 0.5], 0.1);
        let d = vector_field(&SystemState::new(0.0, 0.0, 0.0, 0.0), &p, [0.0; 3]);
        assert!((d[2] - 0.0315).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(0.0, 1.0, 1.0, [-0.9, -0.7, 0.5], 0.1).is_err());
        assert!(ModelParams::new(1.0, -1.0, 1.0, [-0.9, -0.7, 0.5], 0.1).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, [-0.7, -0.7, 0.5], 0.1).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, [-0.9, -0.7, 0.5], -0.1).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, [-0.9, -0.7, 0.5], 0.0).is_ok());
    }

    #[test]
    fn catalog_bistable_root() {
        let p = unit([-0.9, -0.7, 0.5], 0.1);
        let cat = attractor_catalog(&p).unwrap();
        let s1 = cat.get(1);
        assert_eq!(s1.equilibrium, Stability::Stable);
        assert_eq!(s1.outer_cycle, Stability::Stable);
        assert_eq!(s1.inner_cycle, Stability::Unstable);
        assert!((s1.outer_radius.unwrap() - 1.316_227_766_016_838).abs() < 1e-12);
        assert!((s1.inner_radius.unwrap() - 0.683_772_233_983_162).abs() < 1e-12);

        let s3 = cat.get(3);
        assert_eq!(s3.equilibrium, Stability::Unstable);
        assert_eq!(s3.outer_cycle, Stability::Stable);
        assert_eq!(s3.inner_cycle, Stability::Nonexistent);
        assert!((s3.outer_radius.unwrap() - 2.224_744_871_391_589).abs() < 1e-12);

        let s2 = cat.get(2);
        assert_eq!(s2.equilibrium, Stability::Unstable);
        assert_eq!(s2.outer_cycle, Stability::Unstable);
        assert_eq!(s2.inner_cycle, Stability::Unstable);
    }

    #[test]
    fn catalog_monostable_root() {
        let p = unit([-1.5, -0.7, 0.5], 0.1);
        let s1 = *attractor_catalog(&p).unwrap().get(1);
        assert_eq!(s1.equilibrium, Stability::Stable);
        assert_eq!(s1.outer_cycle, Stability::Nonexistent);
        assert_eq!(s1.inner_cycle, Stability::Nonexistent);
        assert!(s1.outer_radius.is_none() && s1.gamma.is_none());
    }

    #[test]
    fn catalog_boundaries_are_explicit() {
        let p = unit([-1.0, -0.7, 0.5], 0.1);
        assert!(matches!(
            attractor_catalog(&p),
            Err(ModelError::BoundaryCase { index: 1, .. })
        ));
        let p = unit([-0.9, 0.0, 0.5], 0.1);
        assert!(matches!(
            attractor_catalog(&p),
            Err(ModelError::BoundaryCase { index: 2, .. })
        ));
    }

    fn ordered_cs() -> impl Strategy<Value = [f64; 3]> {
        (-3.0..3.0f64, 0.01..2.0f64, 0.01..2.0f64).prop_map(|(c1, d1, d2)| [c1, c1 + d1, c1 + d1 + d2])
    }

    proptest! {
        #[test]
        fn radial_reduction(x in -2.0..2.0f64, y in -2.0..2.0f64, sigma in -2.0..1.0f64,
                            omega in 0.1..10.0f64, a in 0.2..2.0f64, b in 0.2..2.0f64) {
            let p = ModelParams::new(omega, a, b, [-0.9, -0.7, 0.5], 0.1).unwrap();
            let s = SystemState::new(0.0, x, y, sigma);
            let d = vector_field(&s, &p, [0.0; 3]);
            let lhs = 2.0 * (x * d[0] + y * d[1]);
            let rhs = 2.0 * s.r() * f_value(x, y, sigma, &p);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs() + 2.0 * omega * s.r()));
        }

        #[test]
        fn cycles_are_level_sets(c in ordered_cs(), a in 0.2..2.0f64, b in 0.2..2.0f64, theta in 0.0..6.3f64) {
            let p = ModelParams::new(1.0, a, b, c, 0.1).unwrap();
            if let Ok(cat) = attractor_catalog(&p) {
                for set in cat.sets {
                    for radius in [set.outer_radius, set.inner_radius].into_iter().flatten() {
                        prop_assert!(set.gamma.unwrap().is_finite());
                        let rho = radius.sqrt();
                        let f = f_value(rho * theta.cos(), rho * theta.sin(), set.c, &p);
                        prop_assert!(f.abs() < 1e-12 * (1.0 + b * radius * radius), "f = {f}");
                    }
                    if let (Some(lo), Some(hi)) = (set.inner_radius, set.outer_radius) {
                        prop_assert!(0.0 <= lo && lo <= hi);
                    }
                    if set.index == 2 {
                        for st in [set.equilibrium, set.outer_cycle, set.inner_cycle] {
                            prop_assert_ne!(st, Stability::Stable);
                        }
                    }
                }
            }
        }

        #[test]
        fn catalog_regimes_exhaustive(c in ordered_cs()) {
            let p = ModelParams::new(1.0, 1.0, 1.0, c, 0.1).unwrap();
            let cat = attractor_catalog(&p).unwrap();
            for set in [cat.get(1), cat.get(3)] {
                let regimes = [
                    set.c < -1.0 && set.equilibrium == Stability::Stable
                        && set.outer_cycle == Stability::Nonexistent
                        && set.inner_cycle == Stability::Nonexistent,
                    -1.0 < set.c && set.c < 0.0 && set.equilibrium == Stability::Stable
                        && set.outer_cycle == Stability::Stable
                        && set.inner_cycle == Stability::Unstable,
                    set.c > 0.0 && set.equilibrium == Stability::Unstable
                        && set.outer_cycle == Stability::Stable
                        && set.inner_cycle == Stability::Nonexistent,
                ];
                prop_assert_eq!(regimes.iter().filter(|&&m| m).count(), 1);
            }
        }
    }
}
