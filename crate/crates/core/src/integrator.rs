//! Fixed-step RK4 integration of the forced, optionally probed and
//! controlled system.
//!
//! All discrete events live on the step grid `t₀ + k·dt`:
//! * impulses are snapped to the nearest grid point and applied as exact jumps
//!   after the step that ends there;
//! * pulses and noise are held constant over each step, using the value at
//!   the step midpoint (pulse edges therefore resolve to grid points);
//! * probe reads happen at grid points, and a control latch set at `tₙᶠ`
//!   takes effect from the step that starts at `tₙᶠ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlPolicy;
use crate::forcing::{ForcingError, ForcingProgram};
use crate::model::{vector_field, ModelError, ModelParams, SystemState};
use crate::probe::{detector_step, measure, DetectionRecord, DetectionState, ProbeError, ProbeSamples, ProbeSchedule};

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
    #[error("non-finite state at t = {t}; last good state {last_good:?}")]
    NonFiniteState {
        t: f64,
        last_good: SystemState,
        partial: Option<Box<SimulationOutput>>,
    },
    #[error("schedule conflict: {0}")]
    ScheduleConflict(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Forcing(#[from] ForcingError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "one")]
    pub sample_stride: usize,
}

fn one() -> usize {
    1
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 100.0,
            sample_stride: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: f64, sample_stride: usize) -> Self {
        Self {
            dt,
            horizon,
            sample_stride,
        }
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(IntegratorError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(IntegratorError::InvalidConfig(format!(
                "horizon must be >= dt, got {}",
                self.horizon
            )));
        }
        if self.sample_stride == 0 {
            return Err(IntegratorError::InvalidConfig("sample_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the horizon is rounded to the grid.
    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }
}

/// One recorded point: state plus the inputs applied from that instant on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: SystemState,
    pub forcing: [f64; 3],
    pub control: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub params: ModelParams,
    pub config: IntegratorConfig,
    pub forcing_digest: String,
}

pub const CSV_HEADER: &str = "t,x,y,sigma,zeta_x,zeta_y,zeta_sigma,u_x,u_y";

impl Trajectory {
    pub fn from_samples(samples: Vec<Sample>, params: ModelParams, config: IntegratorConfig) -> Self {
        Self {
            samples,
            params,
            config,
            forcing_digest: ForcingProgram::none().digest(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&SystemState> {
        self.samples.first().map(|s| &s.state)
    }

    pub fn last(&self) -> Option<&SystemState> {
        self.samples.last().map(|s| &s.state)
    }

    pub fn states(&self) -> impl Iterator<Item = &SystemState> {
        self.samples.iter().map(|s| &s.state)
    }

    /// First sample time at which `σ` reaches or passes `level` from below.
    pub fn sigma_crossing(&self, level: f64) -> Option<f64> {
        self.samples
            .windows(2)
            .find(|w| w[0].state.sigma < level && w[1].state.sigma >= level)
            .map(|w| w[1].state.t)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for s in &self.samples {
            let st = &s.state;
            let cols = [
                st.t,
                st.x,
                st.y,
                st.sigma,
                s.forcing[0],
                s.forcing[1],
                s.forcing[2],
                s.control[0],
                s.control[1],
            ];
            let mut first = true;
            for v in cols {
                if !first {
                    w.write_all(b",")?;
                }
                first = false;
                write!(w, "{v:.16e}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub trajectory: Trajectory,
    pub detections: Vec<DetectionRecord>,
    pub detector: Option<DetectionState>,
    pub control: Option<ControlPolicy>,
    pub warnings: Vec<String>,
}

#[inline(always)]
fn rk4<F, U>(s: &SystemState, p: &ModelParams, forcing: &F, control: &U, dt: f64) -> SystemState
where
    F: Fn(f64) -> [f64; 3],
    U: Fn(&SystemState) -> [f64; 2],
{
    let eval = |st: &SystemState, t: f64| {
        let mut z = forcing(t);
        let u = control(st);
        z[0] += u[0];
        z[1] += u[1];
        vector_field(st, p, z)
    };
    let at = |k: &[f64; 3], h: f64, t: f64| SystemState {
        t,
        x: s.x + h * k[0],
        y: s.y + h * k[1],
        sigma: s.sigma + h * k[2],
    };
    let half = 0.5 * dt;
    let k1 = eval(s, s.t);
    let k2 = eval(&at(&k1, half, s.t + half), s.t + half);
    let k3 = eval(&at(&k2, half, s.t + half), s.t + half);
    let k4 = eval(&at(&k3, dt, s.t + dt), s.t + dt);
    let w = dt / 6.0;
    SystemState {
        t: s.t + dt,
        x: s.x + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y: s.y + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        sigma: s.sigma + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    }
}

/// One classical RK4 step. `forcing` is evaluated at the stage times,
/// `control` at the stage states.
pub fn step<F, U>(
    s: &SystemState,
    p: &ModelParams,
    forcing: F,
    control: U,
    dt: f64,
) -> Result<SystemState, IntegratorError>
where
    F: Fn(f64) -> [f64; 3],
    U: Fn(&SystemState) -> [f64; 2],
{
    let next = rk4(s, p, &forcing, &control, dt);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(IntegratorError::NonFiniteState {
            t: next.t,
            last_good: *s,
            partial: None,
        })
    }
}

/// Impulse index on the grid, with a note when snapping moved it.
fn snap_impulses(
    forcing: &ForcingProgram,
    t0: f64,
    dt: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<(u64, [f64; 3])>, IntegratorError> {
    let mut out: Vec<(u64, [f64; 3])> = Vec::with_capacity(forcing.impulses.len());
    for imp in &forcing.impulses {
        let k = ((imp.time - t0) / dt).round() as u64;
        let snapped = t0 + k as f64 * dt;
        let moved = (snapped - imp.time).abs();
        if moved > 1e-9 * dt.max(1.0) {
            warnings.push(format!(
                "impulse at t = {} snapped to grid point {} (moved {:.3e})",
                imp.time, snapped, moved
            ));
        }
        if moved > 0.5 * dt * (1.0 + 1e-9) {
            warnings.push(format!("impulse at t = {} snapped by more than dt/2", imp.time));
        }
        out.push((k, [imp.dx, imp.dy, imp.dsigma]));
    }
    out.sort_by_key(|&(k, _)| k);
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(IntegratorError::ScheduleConflict(format!(
            "two impulses snap to the same grid point t = {}",
            t0 + w[0].0 as f64 * dt
        )));
    }
    // Pulse edges resolve to the first step whose midpoint lies past the edge.
    let edge_index = |e: f64| ((e - t0) / dt - 0.5).ceil().max(0.0) as u64;
    for imp in &forcing.impulses {
        let ki = ((imp.time - t0) / dt).round() as u64;
        for p in &forcing.pulses {
            for edge in [p.start, p.start + p.width] {
                let ke = edge_index(edge);
                let reversed = (ki < ke && imp.time > edge) || (ki > ke && imp.time < edge);
                let tie = ki == ke && imp.time > edge;
                if reversed || tie {
                    return Err(IntegratorError::ScheduleConflict(format!(
                        "impulse at t = {} and pulse edge at t = {} swap order on the grid (dt = {dt})",
                        imp.time, edge
                    )));
                }
            }
        }
    }
    Ok(out)
}

struct ProbeRun<'a> {
    sched: &'a ProbeSchedule,
    grid: crate::probe::ProbeGrid,
    state: DetectionState,
    current: usize,
    pending: Option<(f64, f64, f64)>,
    records: Vec<DetectionRecord>,
}

impl ProbeRun<'_> {
    fn forcing(&self, k: u64) -> [f64; 2] {
        if !self.state.halted && self.grid.pulse_covers(self.current, k) {
            [self.sched.amplitude, self.sched.amplitude]
        } else {
            [0.0, 0.0]
        }
    }
}

/// Integrates the system and collects every `sample_stride`-th state.
pub fn simulate(
    initial: SystemState,
    p: &ModelParams,
    forcing: &ForcingProgram,
    cfg: &IntegratorConfig,
    controller: Option<ControlPolicy>,
    probes: Option<&ProbeSchedule>,
) -> Result<SimulationOutput, IntegratorError> {
    cfg.validate()?;
    let expected = cfg.steps() as usize / cfg.sample_stride + 1;
    let mut samples = Vec::with_capacity(expected);
    let outcome = simulate_streaming(initial, p, forcing, cfg, controller, probes, |s| samples.push(*s));
    let trajectory = Trajectory {
        samples,
        params: *p,
        config: *cfg,
        forcing_digest: forcing.digest(),
    };
    match outcome {
        Ok(mut out) => {
            out.trajectory = trajectory;
            Ok(out)
        }
        Err(IntegratorError::NonFiniteState {
            t,
            last_good,
            partial,
        }) => {
            let partial = partial.map(|mut b| {
                b.trajectory = trajectory;
                b
            });
            Err(IntegratorError::NonFiniteState {
                t,
                last_good,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

/// Like [`simulate`], but hands each recorded sample to `sink` instead of
/// storing it. The returned output carries an empty trajectory.
pub fn simulate_streaming<S>(
    initial: SystemState,
    p: &ModelParams,
    forcing: &ForcingProgram,
    cfg: &IntegratorConfig,
    controller: Option<ControlPolicy>,
    probes: Option<&ProbeSchedule>,
    mut sink: S,
) -> Result<SimulationOutput, IntegratorError>
where
    S: FnMut(&Sample),
{
    p.validate()?;
    cfg.validate()?;
    forcing.validate(cfg.horizon)?;
    if !initial.is_finite() {
        return Err(IntegratorError::NonFiniteState {
            t: initial.t,
            last_good: initial,
            partial: None,
        });
    }
    let dt = cfg.dt;
    let t0 = initial.t;
    let n_steps = cfg.steps();
    let mut warnings = Vec::new();
    let impulses = snap_impulses(forcing, t0, dt, &mut warnings)?;
    let mut next_impulse = 0usize;

    let mut probe = match probes {
        Some(sched) => {
            sched.validate()?;
            let err = sched.snap_error(dt);
            if err > 1e-9 {
                warnings.push(format!("probe schedule snapped to grid (max shift {err:.3e})"));
            }
            Some(ProbeRun {
                sched,
                grid: sched.on_grid(dt),
                state: DetectionState::new(p),
                current: 1,
                pending: None,
                records: Vec::new(),
            })
        }
        None => None,
    };
    let mut policy = controller;
    let plain = forcing.pulses.is_empty() && forcing.noise.is_none();

    let applied = |k: u64, probe: &Option<ProbeRun>| -> [f64; 3] {
        let mut z = if plain {
            [0.0; 3]
        } else {
            let tm = t0 + (k as f64 + 0.5) * dt;
            let mut z = forcing.pulses_at(tm);
            if let Some(noise) = &forcing.noise {
                let n = noise.value(k, dt);
                for i in 0..3 {
                    z[i] += n[i];
                }
            }
            z
        };
        if let Some(pr) = probe {
            let pz = pr.forcing(k);
            z[0] += pz[0];
            z[1] += pz[1];
        }
        z
    };
    let record = |s: &SystemState, k: u64, probe: &Option<ProbeRun>, policy: &Option<ControlPolicy>| Sample {
        state: *s,
        forcing: applied(k, probe),
        control: policy.map(|c| c.control_input(s)).unwrap_or([0.0, 0.0]),
    };

    let mut s = initial;
    sink(&record(&s, 0, &probe, &policy));
    let stride = cfg.sample_stride as u64;
    for k in 0..n_steps {
        let z = applied(k, &probe);
        let next = match policy {
            Some(c) if c.is_latched() => rk4(&s, p, &|_| z, &|st: &SystemState| c.control_input(st), dt),
            _ => rk4(&s, p, &|_| z, &|_: &SystemState| [0.0, 0.0], dt),
        };
        let k1 = k + 1;
        let mut next = SystemState {
            t: t0 + k1 as f64 * dt,
            ..next
        };
        if !next.is_finite() {
            return Err(IntegratorError::NonFiniteState {
                t: next.t,
                last_good: s,
                partial: Some(Box::new(SimulationOutput {
                    trajectory: Trajectory::from_samples(Vec::new(), *p, *cfg),
                    detections: probe.as_ref().map(|pr| pr.records.clone()).unwrap_or_default(),
                    detector: probe.as_ref().map(|pr| pr.state),
                    control: policy,
                    warnings,
                })),
            });
        }
        while next_impulse < impulses.len() && impulses[next_impulse].0 == k1 {
            let d = impulses[next_impulse].1;
            next.x += d[0];
            next.y += d[1];
            next.sigma += d[2];
            next_impulse += 1;
        }
        if let Some(pr) = probe.as_mut() {
            if !pr.state.halted {
                let n = pr.current;
                if k1 == pr.grid.first_sample(n) {
                    let r_s = measure(pr.sched, n, 0, next.x, next.y);
                    pr.pending = Some((next.t, r_s, next.sigma));
                } else if k1 == pr.grid.final_sample(n) {
                    let (t_s, r_s, sigma_true) = pr.pending.take().expect("first read precedes final read");
                    let reads = ProbeSamples {
                        n,
                        t_s,
                        t_f: next.t,
                        r_s,
                        r_f: measure(pr.sched, n, 1, next.x, next.y),
                        sigma_true: Some(sigma_true),
                    };
                    let (rec, st) = detector_step(reads, pr.sched, p, pr.state);
                    pr.state = st;
                    pr.records.push(rec);
                    pr.current += 1;
                    if rec.event {
                        policy = policy.map(|c| c.on_event(rec.t_f));
                    }
                }
            }
        }
        s = next;
        if k1 % stride == 0 {
            sink(&record(&s, k1, &probe, &policy));
        }
    }

    Ok(SimulationOutput {
        trajectory: Trajectory {
            samples: Vec::new(),
            params: *p,
            config: *cfg,
            forcing_digest: forcing.digest(),
        },
        detections: probe.as_ref().map(|pr| pr.records.clone()).unwrap_or_default(),
        detector: probe.as_ref().map(|pr| pr.state),
        control: policy,
        warnings,
    })
}

/// Lanes per ensemble block.
pub const LANES: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Block {
    x: [f64; LANES],
    y: [f64; LANES],
    s: [f64; LANES],
}

type Lane3 = ([f64; LANES], [f64; LANES], [f64; LANES]);

#[inline(always)]
fn block_field(p: &ModelParams, x: &[f64; LANES], y: &[f64; LANES], s: &[f64; LANES]) -> Lane3 {
    let ab2 = 2.0 * p.a * p.b;
    let mut dx = [0.0; LANES];
    let mut dy = [0.0; LANES];
    let mut ds = [0.0; LANES];
    for i in 0..LANES {
        let r = x[i] * x[i] + y[i] * y[i];
        let f = s[i] + ab2 * r - p.b * r * r;
        dx[i] = -p.omega * y[i] + x[i] * f;
        dy[i] = p.omega * x[i] + y[i] * f;
        ds[i] = -p.epsilon * (s[i] - p.c1) * (s[i] - p.c2) * (s[i] - p.c3);
    }
    (dx, dy, ds)
}

#[inline(always)]
fn block_offset(b: &Block, k: &Lane3, h: f64) -> Block {
    let mut out = *b;
    for i in 0..LANES {
        out.x[i] += h * k.0[i];
        out.y[i] += h * k.1[i];
        out.s[i] += h * k.2[i];
    }
    out
}

impl Block {
    #[inline(always)]
    fn rk4(&mut self, p: &ModelParams, dt: f64) {
        let half = 0.5 * dt;
        let k1 = block_field(p, &self.x, &self.y, &self.s);
        let b2 = block_offset(self, &k1, half);
        let k2 = block_field(p, &b2.x, &b2.y, &b2.s);
        let b3 = block_offset(self, &k2, half);
        let k3 = block_field(p, &b3.x, &b3.y, &b3.s);
        let b4 = block_offset(self, &k3, dt);
        let k4 = block_field(p, &b4.x, &b4.y, &b4.s);
        let w = dt / 6.0;
        for i in 0..LANES {
            self.x[i] += w * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
            self.y[i] += w * (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i]);
            self.s[i] += w * (k1.2[i] + 2.0 * k2.2[i] + 2.0 * k3.2[i] + k4.2[i]);
        }
    }

    fn all_finite(&self) -> bool {
        (0..LANES).all(|i| self.x[i].is_finite() && self.y[i].is_finite() && self.s[i].is_finite())
    }
}

/// Blocked RK4 for ensembles of unforced, uncontrolled runs sharing one
/// parameter set and step size.
///
/// Members are packed [`LANES`] at a time into fixed-size arrays so the stage
/// arithmetic compiles to vector instructions. The arithmetic per member is
/// the same as [`step`] with zero inputs.
#[derive(Debug, Clone)]
pub struct Ensemble {
    blocks: Vec<Block>,
    len: usize,
    pub t: f64,
}

impl Ensemble {
    pub fn new(states: &[SystemState]) -> Self {
        let len = states.len();
        let blocks = states
            .chunks(LANES)
            .map(|chunk| {
                // padding lanes repeat the chunk's first member
                let pick = |i: usize| chunk.get(i).unwrap_or(&chunk[0]);
                Block {
                    x: std::array::from_fn(|i| pick(i).x),
                    y: std::array::from_fn(|i| pick(i).y),
                    s: std::array::from_fn(|i| pick(i).sigma),
                }
            })
            .collect();
        Self {
            blocks,
            len,
            t: states.first().map(|s| s.t).unwrap_or(0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn state(&self, i: usize) -> SystemState {
        let b = &self.blocks[i / LANES];
        let l = i % LANES;
        SystemState::new(self.t, b.x[l], b.y[l], b.s[l])
    }

    pub fn states(&self) -> impl Iterator<Item = SystemState> + '_ {
        (0..self.len).map(|i| self.state(i))
    }

    /// Advances every member by one step. Returns the index of a member that
    /// became non-finite, if any.
    pub fn step(&mut self, p: &ModelParams, dt: f64) -> Option<usize> {
        let mut bad = None;
        for (bi, b) in self.blocks.iter_mut().enumerate() {
            b.rk4(p, dt);
            if bad.is_none() && !b.all_finite() {
                bad = (0..LANES)
                    .find(|&i| !(b.x[i].is_finite() && b.y[i].is_finite() && b.s[i].is_finite()))
                    .map(|i| bi * LANES + i)
                    .filter(|&i| i < self.len);
            }
        }
        self.t += dt;
        bad
    }
}

/// Runs `f` with subnormal results flushed to zero on this thread.
///
/// Decaying runs spend most of a long horizon with `x² + y²` below the
/// smallest normal double, where subnormal arithmetic is one to two orders of
/// magnitude slower. Flushing only affects values below `2.2e−308`.
pub fn with_flush_to_zero<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(all(target_arch = "x86_64", target_feature = "sse"))]
    {
        #[allow(deprecated)]
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        const FTZ_DAZ: u32 = 0x8040;
        // SAFETY: only the FTZ and DAZ bits of MXCSR are toggled, and the
        // previous value is restored before returning.
        #[allow(deprecated)]
        let saved = unsafe { _mm_getcsr() };
        #[allow(deprecated)]
        unsafe {
            _mm_setcsr(saved | FTZ_DAZ)
        };
        let out = f();
        #[allow(deprecated)]
        unsafe {
            _mm_setcsr(saved)
        };
        out
    }
    #[cfg(not(all(target_arch = "x86_64", target_feature = "sse")))]
    {
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::{Channel, Impulse, NoiseSpec, Pulse};

    fn fig4() -> ModelParams {
        ModelParams::transition_example()
    }

    fn zero3(_: f64) -> [f64; 3] {
        [0.0; 3]
    }

    fn zero2(_: &SystemState) -> [f64; 2] {
        [0.0; 2]
    }

    #[test]
    fn equilibrium_is_rk4_fixed_point() {
        let p = fig4();
        for dt in [1e-3, 0.1, 0.7] {
            let s = SystemState::new(0.0, 0.0, 0.0, p.c1);
            let n = step(&s, &p, zero3, zero2, dt).unwrap();
            assert_eq!((n.x, n.y, n.sigma), (0.0, 0.0, p.c1));
            assert_eq!(n.t, dt);
        }
    }

    #[test]
    fn step_reports_non_finite() {
        let p = fig4();
        let s = SystemState::new(0.0, 1e200, 1e200, 0.0);
        assert!(matches!(
            step(&s, &p, zero3, zero2, 1e-3),
            Err(IntegratorError::NonFiniteState { .. })
        ));
    }

    #[test]
    fn subcritical_fixed_sigma_decays_monotonically() {
        let p = ModelParams { epsilon: 0.0, ..fig4() };
        let cfg = IntegratorConfig::new(1e-3, 20.0, 10);
        let out = simulate(SystemState::new(0.0, 0.3, 0.4, -1.5), &p, &ForcingProgram::none(), &cfg, None, None).unwrap();
        let r: Vec<f64> = out.trajectory.states().map(|s| s.r()).collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]));
        assert!(*r.last().unwrap() < 1e-20);
        assert!(out.trajectory.states().all(|s| s.sigma == -1.5));
    }

    #[test]
    fn sigma_relaxes_to_c1_from_below_c2() {
        let p = fig4();
        let cfg = IntegratorConfig::new(1e-3, 400.0, 100);
        let out = simulate(SystemState::new(0.0, 0.0, 0.0, -0.8), &p, &ForcingProgram::none(), &cfg, None, None).unwrap();
        let sig: Vec<f64> = out.trajectory.states().map(|s| s.sigma).collect();
        assert!(sig.windows(2).all(|w| w[1] <= w[0]));
        assert!((sig.last().unwrap() - p.c1).abs() < 1e-4);
    }

    #[test]
    fn equilibrium_run_is_constant() {
        let p = fig4();
        let cfg = IntegratorConfig::new(1e-3, 5.0, 50);
        let init = SystemState::new(0.0, 0.0, 0.0, p.c3);
        let out = simulate(init, &p, &ForcingProgram::none(), &cfg, None, None).unwrap();
        assert_eq!(out.trajectory.len(), 101);
        for s in out.trajectory.states() {
            assert_eq!((s.x, s.y, s.sigma), (0.0, 0.0, p.c3));
        }
    }

    #[test]
    fn sample_grid_is_uniform() {
        let p = fig4();
        let cfg = IntegratorConfig::new(1e-3, 2.0, 7);
        let out = simulate(SystemState::new(0.0, 0.1, 0.0, -0.8), &p, &ForcingProgram::none(), &cfg, None, None).unwrap();
        let tr = &out.trajectory;
        assert_eq!(tr.samples[0].state, SystemState::new(0.0, 0.1, 0.0, -0.8));
        for (i, s) in tr.states().enumerate() {
            assert!((s.t - i as f64 * 7e-3).abs() < 1e-12);
        }
    }

    #[test]
    fn impulses_jump_the_state_on_grid() {
        let p = fig4();
        let cfg = IntegratorConfig::new(1e-3, 2.0, 1);
        let fp = ForcingProgram {
            impulses: vec![Impulse {
                time: 1.0004,
                dx: 0.1,
                dy: 0.1,
                dsigma: 0.22,
            }],
            ..Default::default()
        };
        let out = simulate(SystemState::new(0.0, 0.0, 0.0, p.c1), &p, &fp, &cfg, None, None).unwrap();
        let tr = &out.trajectory;
        assert_eq!(tr.samples[999].state.x, 0.0);
        let jumped = tr.samples[1000].state;
        assert_eq!((jumped.x, jumped.y), (0.1, 0.1));
        assert!((jumped.sigma - (p.c1 + 0.22)).abs() < 1e-15);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn duplicate_impulses_conflict() {
        let p = fig4();
        let cfg = IntegratorConfig::new(1e-2, 2.0, 1);
        let imp = |time| Impulse {
            time,
            dx: 0.1,
            dy: 0.0,
            dsigma: 0.0,
        };
        let fp = ForcingProgram {
            impulses: vec![imp(1.0), imp(1.001)],
            ..Default::default()
        };
        let err = simulate(SystemState::new(0.0, 0.0, 0.0, p.c1), &p, &fp, &cfg, None, None).unwrap_err();
        assert!(matches!(err, IntegratorError::ScheduleConflict(_)));
    }

    #[test]
    fn impulse_after_pulse_edge_on_same_point_conflicts() {
        let p = fig4();
        let cfg = IntegratorConfig::new(1e-2, 2.0, 1);
        let fp = ForcingProgram {
            pulses: vec![Pulse {
                channel: Channel::X,
                start: 0.998,
                width: 0.5,
                amplitude: 1.0,
            }],
            impulses: vec![Impulse {
                time: 1.001,
                dx: 0.1,
                dy: 0.0,
                dsigma: 0.0,
            }],
            ..Default::default()
        };
        let err = simulate(SystemState::new(0.0, 0.0, 0.0, p.c1), &p, &fp, &cfg, None, None).unwrap_err();
        assert!(matches!(err, IntegratorError::ScheduleConflict(_)));
        let ok = ForcingProgram {
            impulses: vec![Impulse { time: 0.99, ..fp.impulses[0] }],
            ..fp
        };
        assert!(simulate(SystemState::new(0.0, 0.0, 0.0, p.c1), &p, &ok, &cfg, None, None).is_ok());
    }

    #[test]
    fn pulse_forcing_recorded_and_integrated() {
        let p = ModelParams { epsilon: 0.0, ..fig4() };
        let cfg = IntegratorConfig::new(1e-3, 1.0, 1);
        let fp = ForcingProgram {
            pulses: vec![Pulse {
                channel: Channel::Sigma,
                start: 0.2,
                width: 0.3,
                amplitude: 1.0,
            }],
            ..Default::default()
        };
        let out = simulate(SystemState::new(0.0, 0.0, 0.0, -0.8), &p, &fp, &cfg, None, None).unwrap();
        let tr = &out.trajectory;
        assert_eq!(tr.samples[199].forcing, [0.0; 3]);
        assert_eq!(tr.samples[200].forcing, [0.0, 0.0, 1.0]);
        assert_eq!(tr.samples[499].forcing, [0.0, 0.0, 1.0]);
        assert_eq!(tr.samples[500].forcing, [0.0; 3]);
        // σ' = pulse only, so σ moves by exactly the pulse area
        assert!((tr.last().unwrap().sigma - (-0.8 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn runs_are_bit_identical() {
        let p = fig4();
        let cfg = IntegratorConfig::new(1e-3, 5.0, 3);
        let fp = ForcingProgram {
            noise: Some(NoiseSpec {
                channels: vec![Channel::X, Channel::Y],
                stddev: 0.05,
                seed: 11,
            }),
            ..Default::default()
        };
        let init = SystemState::new(0.0, 0.1, 0.0, -0.8);
        let a = simulate(init, &p, &fp, &cfg, None, None).unwrap();
        let b = simulate(init, &p, &fp, &cfg, None, None).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        let other = ForcingProgram {
            noise: Some(NoiseSpec { seed: 12, ..fp.noise.clone().unwrap() }),
            ..Default::default()
        };
        let c = simulate(init, &p, &other, &cfg, None, None).unwrap();
        assert_ne!(a.trajectory.samples, c.trajectory.samples);
    }

    #[test]
    fn rejects_bad_config() {
        let p = fig4();
        let init = SystemState::new(0.0, 0.0, 0.0, -0.8);
        for cfg in [
            IntegratorConfig::new(0.0, 1.0, 1),
            IntegratorConfig::new(1e-3, 1e-4, 1),
            IntegratorConfig::new(1e-3, 1.0, 0),
        ] {
            assert!(matches!(
                simulate(init, &p, &ForcingProgram::none(), &cfg, None, None),
                Err(IntegratorError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn blow_up_keeps_partial_output() {
        let p = ModelParams { b: 1.0, ..fig4() };
        let cfg = IntegratorConfig::new(0.5, 50.0, 1);
        let err = simulate(SystemState::new(0.0, 3.0, 3.0, 0.0), &p, &ForcingProgram::none(), &cfg, None, None).unwrap_err();
        match err {
            IntegratorError::NonFiniteState { last_good, partial, .. } => {
                assert!(last_good.is_finite());
                let partial = partial.expect("partial output");
                assert!(!partial.trajectory.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ensemble_matches_scalar_path() {
        let p = fig4();
        let starts: Vec<SystemState> = (0..5)
            .map(|i| SystemState::new(0.0, 0.05 * i as f64, 0.3 - 0.05 * i as f64, -0.85 + 0.02 * i as f64))
            .collect();
        let mut ens = Ensemble::new(&starts);
        let dt = 1e-3;
        for _ in 0..2000 {
            assert!(ens.step(&p, dt).is_none());
        }
        let cfg = IntegratorConfig::new(dt, 2.0, 2000);
        for (i, s0) in starts.iter().enumerate() {
            let out = simulate(*s0, &p, &ForcingProgram::none(), &cfg, None, None).unwrap();
            let last = out.trajectory.last().unwrap();
            let e = ens.state(i);
            assert!((last.x - e.x).abs() < 1e-13);
            assert!((last.y - e.y).abs() < 1e-13);
            assert!((last.sigma - e.sigma).abs() < 1e-13);
        }
    }

    #[test]
    fn csv_header_and_precision() {
        let p = fig4();
        let cfg = IntegratorConfig::new(0.1, 0.2, 1);
        let out = simulate(SystemState::new(0.0, 0.1, 0.2, -0.8), &p, &ForcingProgram::none(), &cfg, None, None).unwrap();
        let mut buf = Vec::new();
        out.trajectory.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row.len(), 9);
        assert_eq!(row[1], 0.1);
        assert_eq!(row[2], 0.2);
        let x1: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(x1, out.trajectory.samples[1].state.x);
    }
}
