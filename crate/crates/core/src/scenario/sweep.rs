//! Steady-state amplitude sweep of the fixed-excitability oscillator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrator::{step, IntegratorConfig};
use crate::model::{ModelParams, SystemState};

/// Change in `r` over one rotation period below which a run counts as settled.
pub const STEADY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub r_start_low: f64,
    pub r_start_high: f64,
    pub r_steady_low: f64,
    pub r_steady_high: f64,
    pub closed_form_stable_radius: Option<f64>,
    pub closed_form_unstable_radius: Option<f64>,
    pub settled_low: bool,
    pub settled_high: bool,
}

/// Evenly spaced grid of `steps` points over `[min, max]`.
pub fn sigma_grid(min: f64, max: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![min],
        n => (0..n)
            .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Integrates from `r0` (on the x axis) with σ frozen until `r` changes by
/// less than [`STEADY_TOL`] over one rotation period or the cap is hit.
fn settle(p: &ModelParams, sigma: f64, r0: f64, dt: f64, cap: f64) -> (f64, bool) {
    let period_steps = ((std::f64::consts::TAU / p.omega) / dt).round().max(1.0) as u64;
    let max_steps = (cap / dt).round() as u64;
    let mut s = SystemState::new(0.0, r0.sqrt(), 0.0, sigma);
    let mut last = s.r();
    let mut k = 0u64;
    while k < max_steps {
        for _ in 0..period_steps {
            s = match step(&s, p, |_| [0.0; 3], |_| [0.0; 2], dt) {
                Ok(next) => next,
                Err(_) => return (f64::NAN, false),
            };
        }
        k += period_steps;
        let r = s.r();
        if (r - last).abs() < STEADY_TOL {
            return (r, true);
        }
        last = r;
    }
    (s.r(), false)
}

/// For each σ, integrates from a small and a large start and records the
/// settled squared amplitude next to the closed-form cycle radii.
///
/// `ε` is forced to zero. `per_point.horizon` caps each run.
pub fn bifurcation_sweep(p_base: &ModelParams, sigma_grid: &[f64], per_point: &IntegratorConfig) -> Vec<SweepRow> {
    let p = ModelParams {
        epsilon: 0.0,
        ..*p_base
    };
    let dt = per_point.dt;
    let cap = if p_base.epsilon > 0.0 {
        per_point.horizon.min(2000.0 / p_base.epsilon)
    } else {
        per_point.horizon
    };
    sigma_grid
        .par_iter()
        .map(|&sigma| {
            let stable = p.outer_radius(sigma);
            let unstable = p.inner_radius(sigma);
            let r_low = unstable.map_or(1e-2, |u| (0.5 * u).min(1e-2));
            let r_high = 2.0 * stable.unwrap_or(2.0 * p.a);
            let (lo, settled_low) = settle(&p, sigma, r_low, dt, cap);
            let (hi, settled_high) = settle(&p, sigma, r_high, dt, cap);
            SweepRow {
                sigma,
                r_start_low: r_low,
                r_start_high: r_high,
                r_steady_low: lo,
                r_steady_high: hi,
                closed_form_stable_radius: stable,
                closed_form_unstable_radius: unstable,
                settled_low,
                settled_high,
            }
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str =
    "sigma,r_steady_low,r_steady_high,closed_form_stable_radius,closed_form_unstable_radius";

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{},{}",
            r.sigma,
            r.r_steady_low,
            r.r_steady_high,
            opt(r.closed_form_stable_radius),
            opt(r.closed_form_unstable_radius)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelParams {
        ModelParams {
            epsilon: 0.0,
            ..ModelParams::transition_example()
        }
    }

    #[test]
    fn grid_spacing() {
        let g = sigma_grid(-1.0, 1.0, 5);
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(sigma_grid(0.0, 1.0, 0).is_empty());
        assert_eq!(sigma_grid(0.3, 1.0, 1), vec![0.3]);
    }

    #[test]
    fn three_regimes() {
        let cfg = IntegratorConfig::new(1e-3, 400.0, 1);
        let rows = bifurcation_sweep(&base(), &[-1.2, -0.5, 0.25], &cfg);
        // subcritical: both decay
        assert!(rows[0].r_steady_low < 1e-6 && rows[0].r_steady_high < 1e-6);
        assert!(rows[0].closed_form_stable_radius.is_none());
        // bistable: small start decays, large start reaches the outer cycle
        assert!(rows[1].r_steady_low < 1e-6);
        assert!((rows[1].r_steady_high - (1.0 + 0.5f64.sqrt())).abs() < 1e-3);
        assert!((rows[1].closed_form_unstable_radius.unwrap() - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        // supercritical: both starts on the outer cycle
        let target = 1.0 + 1.25f64.sqrt();
        assert!((rows[2].r_steady_low - target).abs() < 1e-3);
        assert!((rows[2].r_steady_high - target).abs() < 1e-3);
        assert!(rows.iter().all(|r| r.settled_low && r.settled_high));
    }

    #[test]
    fn csv_leaves_missing_radii_empty() {
        let cfg = IntegratorConfig::new(1e-2, 50.0, 1);
        let rows = bifurcation_sweep(&base(), &[-1.5], &cfg);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.ends_with(",,"));
        assert_eq!(text.lines().next().unwrap(), SWEEP_CSV_HEADER);
    }
}
