//! Monte-Carlo estimate of the basin of `ℰ₁ = (0, 0, c1)`.
//!
//! Initial conditions are drawn per stratum from a seeded ChaCha stream,
//! integrated without forcing on the blocked ensemble stepper, and classified
//! by the attractor they settle on. Strata that start inside `R1 ∪ R2` are
//! additionally checked for staying inside at every sample.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{check_bistable_regime, membership_unchecked, radial_bound, AnalysisError};
use crate::integrator::{with_flush_to_zero, Ensemble, IntegratorConfig};
use crate::model::{ModelParams, SystemState};

/// Distance to `ℰ₁` that counts as strict convergence.
pub const STRICT_TOL: f64 = 1e-4;
/// Allowed excursion past the region boundary (integrator error).
pub const MARGIN_TOL: f64 = 1e-6;
/// Ensemble members integrated together by one worker.
const CHUNK: usize = 64;
/// Failing starts kept per stratum for diagnostics.
const KEEP_FAILURES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    /// Uniform over `R1` (rejection sampled).
    InsideR1,
    /// `σ ∈ [c1 − 0.5, c1)`, `(x, y)` uniform in the disc of twice the `ℳ₁` squared radius.
    InsideR2,
    /// `σ ∈ [c1, c2)` with `r` one thousandth below the `R1` radial bound.
    R1Boundary,
    /// `σ ∈ [c1, c2)` with `r` between the `R1` bound and the outer cycle.
    OutsideR1,
    /// `σ ∈ (c2, c3)`, `r ∈ [0.01, a + γ₃)`.
    AboveC2,
}

impl Stratum {
    pub const ALL: [Stratum; 5] = [
        Stratum::InsideR1,
        Stratum::InsideR2,
        Stratum::R1Boundary,
        Stratum::OutsideR1,
        Stratum::AboveC2,
    ];

    /// Whether starts in this stratum lie in `R1 ∪ R2`.
    pub fn inside_region(self) -> bool {
        matches!(self, Stratum::InsideR1 | Stratum::InsideR2 | Stratum::R1Boundary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Equilibrium1,
    Cycle1,
    Cycle3,
    Unsettled,
}

pub fn classify(s: &SystemState, p: &ModelParams) -> Terminal {
    let r = s.r();
    let near = |c: f64| (s.sigma - c).abs() < 1e-3;
    let on_cycle = |c: f64| p.outer_radius(c).is_some_and(|rad| (r - rad).abs() < 1e-2);
    if near(p.c1) && r < 1e-6 {
        Terminal::Equilibrium1
    } else if near(p.c1) && on_cycle(p.c1) {
        Terminal::Cycle1
    } else if near(p.c3) && on_cycle(p.c3) {
        Terminal::Cycle3
    } else {
        Terminal::Unsettled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub stratum: Stratum,
    pub samples: usize,
    pub equilibrium1: usize,
    pub cycle1: usize,
    pub cycle3: usize,
    pub unsettled: usize,
    pub fraction_equilibrium1: f64,
    /// Runs ending within [`STRICT_TOL`] of `ℰ₁`.
    pub strict_equilibrium1: usize,
    /// Runs whose samples all stayed in `R1 ∪ R2` up to [`MARGIN_TOL`];
    /// `None` for strata that start outside.
    pub stayed_in_region: Option<usize>,
    /// `max(0, −min margin)` over all checked samples.
    pub max_margin_violation: f64,
    /// Starts that left the region or missed strict convergence, `[x, y, σ]`.
    pub failures: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub seed: u64,
    pub samples_per_stratum: usize,
    pub dt: f64,
    pub horizon: f64,
    pub check_stride: usize,
    pub strata: Vec<StratumReport>,
}

impl BasinReport {
    pub fn stratum(&self, s: Stratum) -> Option<&StratumReport> {
        self.strata.iter().find(|r| r.stratum == s)
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn on_circle(rng: &mut ChaCha8Rng, r: f64, sigma: f64) -> SystemState {
    let theta = std::f64::consts::TAU * uniform(rng);
    let rho = r.sqrt();
    SystemState::new(0.0, rho * theta.cos(), rho * theta.sin(), sigma)
}

/// Draws `n` starts for one stratum. Uniform area in a disc means `r` uniform.
pub fn draw_stratum(stratum: Stratum, n: usize, p: &ModelParams, rng: &mut ChaCha8Rng) -> Vec<SystemState> {
    let (c1, c2, c3) = (p.c1, p.c2, p.c3);
    let span = c2 - c1;
    (0..n)
        .map(|_| match stratum {
            Stratum::InsideR1 => {
                let r_max = radial_bound(c1, p);
                loop {
                    let sigma = c1 + span * uniform(rng);
                    let r = r_max * uniform(rng);
                    if r < radial_bound(sigma, p) {
                        break on_circle(rng, r, sigma);
                    }
                }
            }
            Stratum::InsideR2 => {
                let sigma = c1 - 0.5 * (1.0 - uniform(rng));
                let disc = 2.0 * p.outer_radius(c1).unwrap_or(2.0 * p.a);
                let r = disc * uniform(rng);
                on_circle(rng, r, sigma)
            }
            Stratum::R1Boundary => {
                let sigma = c1 + span * uniform(rng);
                on_circle(rng, radial_bound(sigma, p) - 1e-3, sigma)
            }
            Stratum::OutsideR1 => {
                let sigma = c1 + span * uniform(rng);
                let lo = radial_bound(sigma, p);
                let hi = p.outer_radius(sigma).unwrap_or(2.0 * p.a);
                let r = lo + (hi - lo) * (1.0 - uniform(rng));
                on_circle(rng, r, sigma)
            }
            Stratum::AboveC2 => {
                let sigma = c2 + (c3 - c2) * (1.0 - uniform(rng));
                let hi = p.outer_radius(c3).unwrap_or(2.0 * p.a);
                let r = 1e-2 + (hi - 1e-2) * uniform(rng);
                on_circle(rng, r, sigma)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct LaneResult {
    start: SystemState,
    terminal: Terminal,
    strict: bool,
    stayed: bool,
    min_margin: f64,
}

fn run_chunk(starts: &[SystemState], p: &ModelParams, cfg: &IntegratorConfig, check: bool, stride: u64) -> Vec<LaneResult> {
    with_flush_to_zero(|| {
        let mut ens = Ensemble::new(starts);
        let mut min_margin = vec![f64::INFINITY; starts.len()];
        let observe = |ens: &Ensemble, mm: &mut [f64]| {
            for (i, m) in mm.iter_mut().enumerate() {
                let mem = membership_unchecked(&ens.state(i), p);
                let margin = match mem.label {
                    crate::analysis::RegionLabel::Outside => mem.margin,
                    _ => mem.margin.max(0.0),
                };
                *m = m.min(margin);
            }
        };
        if check {
            observe(&ens, &mut min_margin);
        }
        let n_steps = cfg.steps();
        for k in 1..=n_steps {
            ens.step(p, cfg.dt);
            if check && (k % stride == 0 || k == n_steps) {
                observe(&ens, &mut min_margin);
            }
        }
        starts
            .iter()
            .enumerate()
            .map(|(i, &start)| {
                let end = ens.state(i);
                let dist = (end.x * end.x + end.y * end.y + (end.sigma - p.c1).powi(2)).sqrt();
                LaneResult {
                    start,
                    terminal: classify(&end, p),
                    strict: dist <= STRICT_TOL,
                    stayed: !check || min_margin[i] >= -MARGIN_TOL,
                    min_margin: min_margin[i],
                }
            })
            .collect()
    })
}

/// Integrates pre-drawn starts for one stratum and summarises them.
pub fn evaluate_stratum(
    stratum: Stratum,
    starts: &[SystemState],
    p: &ModelParams,
    cfg: &IntegratorConfig,
) -> StratumReport {
    let check = stratum.inside_region();
    let stride = cfg.sample_stride.max(1) as u64;
    let lanes: Vec<LaneResult> = starts
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| run_chunk(chunk, p, cfg, check, stride))
        .collect();
    let count = |t: Terminal| lanes.iter().filter(|l| l.terminal == t).count();
    let equilibrium1 = count(Terminal::Equilibrium1);
    let min_margin = lanes.iter().map(|l| l.min_margin).fold(f64::INFINITY, f64::min);
    StratumReport {
        stratum,
        samples: lanes.len(),
        equilibrium1,
        cycle1: count(Terminal::Cycle1),
        cycle3: count(Terminal::Cycle3),
        unsettled: count(Terminal::Unsettled),
        fraction_equilibrium1: if lanes.is_empty() {
            0.0
        } else {
            equilibrium1 as f64 / lanes.len() as f64
        },
        strict_equilibrium1: lanes.iter().filter(|l| l.strict).count(),
        stayed_in_region: check.then(|| lanes.iter().filter(|l| l.stayed).count()),
        max_margin_violation: if check { (-min_margin).max(0.0) } else { 0.0 },
        failures: lanes
            .iter()
            .filter(|l| check && !(l.stayed && l.strict))
            .take(KEEP_FAILURES)
            .map(|l| [l.start.x, l.start.y, l.start.sigma])
            .collect(),
    }
}

/// Monte-Carlo basin estimate with `n_samples` starts per stratum.
///
/// `cfg.sample_stride` sets how often (in steps) region membership is checked.
pub fn basin_mc(
    p: &ModelParams,
    n_samples: usize,
    seed: u64,
    cfg: &IntegratorConfig,
    strata: &[Stratum],
) -> Result<BasinReport, AnalysisError> {
    check_bistable_regime(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(Stratum, Vec<SystemState>)> = strata
        .iter()
        .map(|&s| (s, draw_stratum(s, n_samples, p, &mut rng)))
        .collect();
    let reports = draws
        .iter()
        .map(|(s, starts)| evaluate_stratum(*s, starts, p, cfg))
        .collect();
    Ok(BasinReport {
        seed,
        samples_per_stratum: n_samples,
        dt: cfg.dt,
        horizon: cfg.horizon,
        check_stride: cfg.sample_stride,
        strata: reports,
    })
}
