//! Scenario files, single-run execution, and the summaries written next to
//! the raw outputs.
//!
//! A scenario file is TOML whose tables mirror [`ScenarioSpec`]:
//!
//! ```toml
//! name = "my_run"
//! [params]
//! omega = 2.0
//! a = 1.0
//! b = 1.0
//! c1 = -0.9
//! c2 = -0.7
//! c3 = 0.5
//! epsilon = 0.1
//! [initial]
//! x = 0.0
//! y = 0.0
//! sigma = -0.9
//! [integrator]
//! dt = 0.001
//! horizon = 300.0
//! sample_stride = 100
//! [[forcing.impulses]]
//! time = 40.0
//! dx = 0.1
//! dy = 0.1
//! dsigma = 0.22
//! [outputs]
//! trajectory_csv = "my_run.csv"
//! summary_json = "my_run.json"
//! ```

pub mod basin;
pub mod registry;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    check_bistable_regime, check_envelope, membership_unchecked, recovery_time, EnvelopeReport, RecoveryTime,
};
use crate::control::ControlPolicy;
use crate::forcing::ForcingProgram;
use crate::integrator::{simulate, IntegratorConfig, IntegratorError, SimulationOutput};
use crate::model::{ModelParams, SystemState};
use crate::probe::{write_jsonl, DetectionRecord, ProbeSchedule};

pub use basin::{basin_mc, BasinReport, Stratum, StratumReport};
pub use registry::{Scenario, ScenarioRegistry};
pub use sweep::{bifurcation_sweep, sigma_grid, write_sweep_csv, SweepRow};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("cannot parse {file}: {message}")]
    Parse { file: String, message: String },
    #[error("unknown scenario '{0}' (not a built-in name or a readable file)")]
    Unknown(String),
    #[error("scenario '{0}' is already registered")]
    Duplicate(String),
    #[error("numerical abort at t = {t}: {message}")]
    NumericalAbort {
        t: f64,
        message: String,
        /// Files flushed from the partial run.
        written: Vec<PathBuf>,
    },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Validation { .. }
            | ScenarioError::Parse { .. }
            | ScenarioError::Unknown(_)
            | ScenarioError::Duplicate(_) => 2,
            ScenarioError::NumericalAbort { .. } => 3,
            ScenarioError::Io { .. } => 1,
        }
    }

    pub(crate) fn invalid(path: &str, message: impl ToString) -> Self {
        ScenarioError::Validation {
            path: path.to_string(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Reports the recovery time at this fraction of `r(0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_fraction: Option<f64>,
    #[serde(default)]
    pub check_envelope: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_jsonl: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_json: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_csv: Option<PathBuf>,
}

impl Outputs {
    fn declared(&self) -> Vec<(&'static str, &Path)> {
        [
            ("outputs.trajectory_csv", &self.trajectory_csv),
            ("outputs.detection_jsonl", &self.detection_jsonl),
            ("outputs.summary_json", &self.summary_json),
            ("outputs.sweep_csv", &self.sweep_csv),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|p| (k, p)))
        .collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let declared = self.declared();
        for (i, (key, path)) in declared.iter().enumerate() {
            if path.as_os_str().is_empty() {
                return Err(ScenarioError::invalid(key, "empty path"));
            }
            if let Some((other, _)) = declared[..i].iter().find(|(_, q)| q == path) {
                return Err(ScenarioError::invalid(
                    key,
                    format!("path {} already used by {other}", path.display()),
                ));
            }
        }
        Ok(())
    }
}

/// One simulation run, as read from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub params: ModelParams,
    pub initial: SystemState,
    #[serde(default)]
    pub forcing: ForcingProgram,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSpec>,
    /// Also runs the same scenario with control removed (probes kept).
    #[serde(default)]
    pub compare_uncontrolled: bool,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str, file: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            file: file.to_string(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario specs serialise to TOML")
    }

    /// Checks every section, reporting the first failure with its field path.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(ScenarioError::invalid("name", "must not be empty"));
        }
        self.params.validate().map_err(|e| ScenarioError::invalid("params", e))?;
        if !self.initial.is_finite() {
            return Err(ScenarioError::invalid("initial", "all fields must be finite"));
        }
        self.integrator
            .validate()
            .map_err(|e| ScenarioError::invalid("integrator", e))?;
        self.forcing
            .validate(self.integrator.horizon)
            .map_err(|e| ScenarioError::invalid("forcing", e))?;
        if let Some(p) = &self.probes {
            p.validate().map_err(|e| ScenarioError::invalid("probes", e))?;
        }
        if let Some(c) = &self.control {
            ControlPolicy::new(c.gain).map_err(|e| ScenarioError::invalid("control.gain", e))?;
        }
        if self.compare_uncontrolled && self.control.is_none() {
            return Err(ScenarioError::invalid(
                "compare_uncontrolled",
                "requires a [control] section",
            ));
        }
        if let Some(f) = self.analysis.recovery_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(ScenarioError::invalid(
                    "analysis.recovery_fraction",
                    format!("must lie in (0, 1), got {f}"),
                ));
            }
        }
        self.outputs.validate()
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, ctx: &RunContext) -> Self {
        if let Some(dt) = ctx.dt {
            self.integrator.dt = dt;
        }
        if let Some(h) = ctx.horizon {
            self.integrator.horizon = h;
        }
        if let Some(seed) = ctx.seed {
            if let Some(n) = self.forcing.noise.as_mut() {
                n.seed = seed;
            }
            if let Some(m) = self.probes.as_mut().and_then(|p| p.measurement_noise.as_mut()) {
                m.seed = seed;
            }
        }
        self
    }
}

/// Overrides and destination shared by every scenario kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunContext {
    /// Output files are written only when this is set.
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
}

impl RunContext {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: Some(dir.into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub horizon: f64,
    pub terminal_state: SystemState,
    pub terminal_r: f64,
    pub detected_events: usize,
    pub first_event_time: Option<f64>,
    /// Ground-truth time at which σ first reaches 0.
    pub sigma_zero_crossing: Option<f64>,
    pub activation_time: Option<f64>,
    /// Largest sampled `r` strictly after activation.
    pub sup_r_after_activation: Option<f64>,
    /// Largest sampled `r` of the paired run without control.
    pub uncontrolled_sup_r: Option<f64>,
    pub envelope: Option<EnvelopeReport>,
    pub recovery: Option<RecoveryTime>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// Not serialised, so that summaries stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub n: usize,
    pub t_s: f64,
    pub estimate: Option<f64>,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryEntry {
    pub sigma0: f64,
    pub time: f64,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Samples per region label; empty outside the bistable regime.
    pub region_counts: BTreeMap<String, usize>,
    pub envelope_holds: Option<bool>,
    pub first_violation: Option<f64>,
    pub recovery_times: Vec<RecoveryEntry>,
    pub sigma_estimates: Vec<SigmaEstimate>,
}

impl AnalysisReport {
    fn merge(&mut self, other: AnalysisReport) {
        for (k, v) in other.region_counts {
            *self.region_counts.entry(k).or_default() += v;
        }
        self.envelope_holds = match (self.envelope_holds, other.envelope_holds) {
            (Some(a), Some(b)) => Some(a && b),
            (a, b) => a.or(b),
        };
        self.first_violation = self.first_violation.or(other.first_violation);
        self.recovery_times.extend(other.recovery_times);
        self.sigma_estimates.extend(other.sigma_estimates);
    }
}

/// What a registered scenario hands back; serialised as the summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basin: Option<BasinReport>,
    /// Files written, relative to the output directory.
    pub files: Vec<PathBuf>,
}

impl ScenarioReport {
    pub fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            runs: Vec::new(),
            analysis: None,
            sweep: None,
            basin: None,
            files: Vec::new(),
        }
    }
}

/// Full result of [`run_scenario`], including the raw simulation outputs.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub summary: RunSummary,
    pub analysis: AnalysisReport,
    pub output: SimulationOutput,
    pub uncontrolled: Option<SimulationOutput>,
    pub files: Vec<PathBuf>,
}

impl ScenarioRun {
    pub fn into_report(self) -> ScenarioReport {
        ScenarioReport {
            name: self.summary.scenario.clone(),
            runs: vec![self.summary],
            analysis: Some(self.analysis),
            sweep: None,
            basin: None,
            files: self.files,
        }
    }
}

pub(crate) fn write_output<F>(ctx: &RunContext, rel: &Path, files: &mut Vec<PathBuf>, body: F) -> Result<(), ScenarioError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let Some(dir) = &ctx.out_dir else {
        return Ok(());
    };
    let path = dir.join(rel);
    let io = |source| ScenarioError::Io {
        path: path.clone(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(&path).map_err(io)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io)?;
    files.push(rel.to_path_buf());
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(ctx: &RunContext, rel: &Path, files: &mut Vec<PathBuf>, value: &T) -> Result<(), ScenarioError> {
    write_output(ctx, rel, files, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn sup_r(out: &SimulationOutput, after: f64) -> Option<f64> {
    out.trajectory
        .samples
        .iter()
        .filter(|s| s.state.t > after)
        .map(|s| s.state.r())
        .reduce(f64::max)
}

fn analyse(spec: &ScenarioSpec, out: &SimulationOutput) -> (AnalysisReport, Option<EnvelopeReport>, Option<RecoveryTime>, Vec<String>) {
    let p = &spec.params;
    let traj = &out.trajectory;
    let mut notes = Vec::new();
    let mut report = AnalysisReport::default();
    if check_bistable_regime(p).is_ok() {
        for s in traj.states() {
            let label = format!("{:?}", membership_unchecked(s, p).label);
            *report.region_counts.entry(label).or_default() += 1;
        }
    }
    let envelope = if spec.analysis.check_envelope {
        match check_envelope(traj, p) {
            Ok(e) => {
                report.envelope_holds = Some(e.holds);
                report.first_violation = e.first_violation;
                Some(e)
            }
            Err(e) => {
                notes.push(format!("envelope check skipped: {e}"));
                None
            }
        }
    } else {
        None
    };
    let recovery = spec.analysis.recovery_fraction.and_then(|f| match recovery_time(traj, f) {
        Ok(rt) => {
            report.recovery_times.push(RecoveryEntry {
                sigma0: spec.initial.sigma,
                time: rt.time,
                reached: rt.reached,
            });
            Some(rt)
        }
        Err(e) => {
            notes.push(format!("recovery time skipped: {e}"));
            None
        }
    });
    report.sigma_estimates = out
        .detections
        .iter()
        .map(|d: &DetectionRecord| SigmaEstimate {
            n: d.n,
            t_s: d.t_s,
            estimate: d.sigma_n,
            truth: d.sigma_true,
        })
        .collect();
    (report, envelope, recovery, notes)
}

fn flush_partial(spec: &ScenarioSpec, ctx: &RunContext, err: IntegratorError) -> ScenarioError {
    match err {
        IntegratorError::NonFiniteState { t, last_good, partial } => {
            let mut written = Vec::new();
            if let Some(out) = partial {
                if let Some(rel) = &spec.outputs.trajectory_csv {
                    let _ = write_output(ctx, &with_suffix(rel, "_partial"), &mut written, |w| out.trajectory.write_csv(w));
                }
                if let Some(rel) = &spec.outputs.detection_jsonl {
                    let _ = write_output(ctx, &with_suffix(rel, "_partial"), &mut written, |w| write_jsonl(&out.detections, w));
                }
            }
            ScenarioError::NumericalAbort {
                t,
                message: format!("state became non-finite; last good state {last_good:?}"),
                written,
            }
        }
        other => ScenarioError::invalid("scenario", other),
    }
}

/// Validates, simulates, analyses and writes the declared outputs.
///
/// Overrides in `ctx` are applied first. Output paths are relative to
/// `ctx.out_dir`; nothing is written when it is `None`.
pub fn run_scenario(spec: &ScenarioSpec, ctx: &RunContext) -> Result<ScenarioRun, ScenarioError> {
    let spec = spec.clone().with_overrides(ctx);
    spec.validate()?;
    let started = Instant::now();
    let p = &spec.params;
    let policy = spec
        .control
        .map(|c| ControlPolicy::new(c.gain).expect("validated gain"));
    let out = simulate(spec.initial, p, &spec.forcing, &spec.integrator, policy, spec.probes.as_ref())
        .map_err(|e| flush_partial(&spec, ctx, e))?;
    let uncontrolled = if spec.compare_uncontrolled {
        Some(
            simulate(spec.initial, p, &spec.forcing, &spec.integrator, None, spec.probes.as_ref())
                .map_err(|e| flush_partial(&spec, ctx, e))?,
        )
    } else {
        None
    };

    let (analysis, envelope, recovery, mut notes) = analyse(&spec, &out);
    let terminal = *out.trajectory.last().expect("trajectory holds the initial sample");
    let activation_time = out.control.and_then(|c| c.activation_time());
    if let Some(c) = spec.control {
        notes.push(format!(
            "feedback acts on x and y only (gain {}); sigma keeps drifting towards its stable equilibrium and the loop holds (x, y) near the origin",
            c.gain
        ));
        if activation_time.is_none() {
            notes.push("no detector event: control never activated".into());
        }
    }
    let summary = RunSummary {
        scenario: spec.name.clone(),
        horizon: spec.integrator.horizon,
        terminal_state: terminal,
        terminal_r: terminal.r(),
        detected_events: out.detections.iter().filter(|d| d.event).count(),
        first_event_time: out.detector.and_then(|d| d.first_event_time),
        sigma_zero_crossing: out.trajectory.sigma_crossing(0.0),
        activation_time,
        sup_r_after_activation: activation_time.and_then(|t| sup_r(&out, t)),
        uncontrolled_sup_r: uncontrolled.as_ref().and_then(|u| sup_r(u, f64::NEG_INFINITY)),
        envelope,
        recovery,
        warnings: out.warnings.clone(),
        notes,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };

    let mut files = Vec::new();
    if let Some(rel) = &spec.outputs.trajectory_csv {
        write_output(ctx, rel, &mut files, |w| out.trajectory.write_csv(w))?;
        if let Some(u) = &uncontrolled {
            write_output(ctx, &with_suffix(rel, "_uncontrolled"), &mut files, |w| u.trajectory.write_csv(w))?;
        }
    }
    if let Some(rel) = &spec.outputs.detection_jsonl {
        write_output(ctx, rel, &mut files, |w| write_jsonl(&out.detections, w))?;
    }
    let mut run = ScenarioRun {
        summary,
        analysis,
        output: out,
        uncontrolled,
        files,
    };
    if let Some(rel) = spec.outputs.summary_json.clone() {
        let mut files = run.files.clone();
        files.push(rel.clone());
        let report = ScenarioReport {
            files,
            ..run.clone().into_report()
        };
        write_json(ctx, &rel, &mut run.files, &report)?;
    }
    Ok(run)
}

/// Runs several specs and folds them into one report (used for comparisons).
pub(crate) fn run_batch(name: &str, specs: &[ScenarioSpec], ctx: &RunContext) -> Result<(ScenarioReport, Vec<ScenarioRun>), ScenarioError> {
    let mut report = ScenarioReport::empty(name);
    let mut analysis = AnalysisReport::default();
    let mut runs = Vec::with_capacity(specs.len());
    for spec in specs {
        let run = run_scenario(spec, ctx)?;
        report.runs.push(run.summary.clone());
        report.files.extend(run.files.iter().cloned());
        analysis.merge(run.analysis.clone());
        runs.push(run);
    }
    report.analysis = Some(analysis);
    Ok((report, runs))
}
