//! Named scenarios behind a common trait, looked up at run time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::forcing::{ForcingProgram, Impulse};
use crate::integrator::IntegratorConfig;
use crate::model::{ModelParams, SystemState};
use crate::probe::ProbeSchedule;

use super::basin::{basin_mc, Stratum};
use super::sweep::{bifurcation_sweep, sigma_grid, write_sweep_csv};
use super::{
    run_batch, run_scenario, write_json, write_output, AnalysisOptions, ControlSpec, Outputs, RunContext,
    ScenarioError, ScenarioReport, ScenarioSpec,
};

pub trait Scenario: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    fn run(&self, ctx: &RunContext) -> Result<ScenarioReport, ScenarioError>;
}

#[derive(Default)]
pub struct ScenarioRegistry {
    entries: BTreeMap<String, Box<dyn Scenario>>,
}

impl ScenarioRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding every built-in scenario.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        let builtins: Vec<Box<dyn Scenario>> = vec![
            Box::new(SweepScenario::fig2()),
            Box::new(SpecScenario::new(fig4_spec(), "impulse pushes sigma past c2, followed by the transition to the M3 cycle")),
            Box::new(RecoveryComparison::fig5()),
            Box::new(SpecScenario::new(fig7_spec(), "active probing with the early-warning detector")),
            Box::new(SpecScenario::new(fig8_spec(), "fig7 with event-based feedback, paired with an uncontrolled run")),
            Box::new(BasinScenario::default_mc()),
        ];
        for s in builtins {
            reg.register(s).expect("built-in names are distinct");
        }
        reg
    }

    pub fn register(&mut self, scenario: Box<dyn Scenario>) -> Result<(), ScenarioError> {
        let name = scenario.name().to_string();
        if self.entries.contains_key(&name) {
            return Err(ScenarioError::Duplicate(name));
        }
        self.entries.insert(name, scenario);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn Scenario> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Scenario> {
        self.entries.values().map(|b| b.as_ref())
    }

    /// Runs a registered scenario, or loads `target` as a scenario file.
    pub fn run(&self, target: &str, ctx: &RunContext) -> Result<ScenarioReport, ScenarioError> {
        if let Some(s) = self.get(target) {
            return s.run(ctx);
        }
        let path = Path::new(target);
        if path.is_file() {
            let spec = ScenarioSpec::from_file(path)?;
            return SpecScenario::new(spec, "scenario file").run(ctx);
        }
        Err(ScenarioError::Unknown(target.to_string()))
    }
}

/// A single simulation described by a [`ScenarioSpec`].
pub struct SpecScenario {
    spec: ScenarioSpec,
    description: String,
}

impl SpecScenario {
    pub fn new(spec: ScenarioSpec, description: &str) -> Self {
        Self {
            spec,
            description: description.to_string(),
        }
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }
}

impl Scenario for SpecScenario {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn description(&self) -> &str {
        &self.description
    }

    fn run(&self, ctx: &RunContext) -> Result<ScenarioReport, ScenarioError> {
        run_scenario(&self.spec, ctx).map(|r| r.into_report())
    }
}

fn outputs(stem: &str, detections: bool) -> Outputs {
    Outputs {
        trajectory_csv: Some(PathBuf::from(format!("{stem}.csv"))),
        detection_jsonl: detections.then(|| PathBuf::from(format!("{stem}_detections.jsonl"))),
        summary_json: Some(PathBuf::from(format!("{stem}.json"))),
        sweep_csv: None,
    }
}

/// Rest at `ℰ₁`, then an impulse at `t = 40` places `(x, y)` at
/// `(0.1, 0.1)` and `σ` at `c2 + 0.02`.
pub fn fig4_spec() -> ScenarioSpec {
    let p = ModelParams::transition_example();
    let delta = 0.02;
    ScenarioSpec {
        name: "fig4".into(),
        params: p,
        initial: SystemState::new(0.0, 0.0, 0.0, p.c1),
        forcing: ForcingProgram {
            impulses: vec![Impulse {
                time: 40.0,
                dx: 0.1,
                dy: 0.1,
                dsigma: p.c2 + delta - p.c1,
            }],
            ..ForcingProgram::none()
        },
        integrator: IntegratorConfig::new(1e-3, 300.0, 100),
        probes: None,
        control: None,
        compare_uncontrolled: false,
        analysis: AnalysisOptions::default(),
        outputs: outputs("fig4", false),
    }
}

/// Starting excitabilities compared in the slowing-down example.
pub const FIG5_SIGMAS: [f64; 3] = [-0.6, -0.4, -0.2];

/// Unforced decay from `x = y = 0.1` at a fixed starting `σ`.
pub fn fig5_spec(sigma0: f64) -> ScenarioSpec {
    ScenarioSpec {
        name: format!("fig5_sigma{sigma0}"),
        params: ModelParams::slowing_example(),
        initial: SystemState::new(0.0, 0.1, 0.1, sigma0),
        forcing: ForcingProgram::none(),
        integrator: IntegratorConfig::new(1e-3, 60.0, 10),
        probes: None,
        control: None,
        compare_uncontrolled: false,
        analysis: AnalysisOptions {
            recovery_fraction: Some(1e-3),
            check_envelope: true,
        },
        outputs: Outputs {
            trajectory_csv: Some(PathBuf::from(format!("fig5_sigma{sigma0}.csv"))),
            ..Outputs::default()
        },
    }
}

/// Probed drift from `σ(0) = −0.65` at the origin, probing with `t₁ = P`.
pub fn fig7_spec() -> ScenarioSpec {
    ScenarioSpec {
        name: "fig7".into(),
        params: ModelParams::detection_example(),
        initial: SystemState::new(0.0, 0.0, 0.0, -0.65),
        forcing: ForcingProgram::none(),
        integrator: IntegratorConfig::new(1e-3, 250.0, 10),
        probes: Some(ProbeSchedule::detection_example()),
        control: None,
        compare_uncontrolled: false,
        analysis: AnalysisOptions::default(),
        outputs: outputs("fig7", true),
    }
}

/// The fig7 run with feedback gain 1.4 and a paired uncontrolled run.
pub fn fig8_spec() -> ScenarioSpec {
    ScenarioSpec {
        name: "fig8".into(),
        control: Some(ControlSpec { gain: 1.4 }),
        compare_uncontrolled: true,
        outputs: outputs("fig8", true),
        ..fig7_spec()
    }
}

/// Recovery times for several starting excitabilities.
pub struct RecoveryComparison {
    name: String,
    specs: Vec<ScenarioSpec>,
}

impl RecoveryComparison {
    pub fn fig5() -> Self {
        Self {
            name: "fig5".into(),
            specs: FIG5_SIGMAS.iter().map(|&s| fig5_spec(s)).collect(),
        }
    }
}

impl Scenario for RecoveryComparison {
    fn name(&self) -> &str {
        &self.name
    }

    fn description(&self) -> &str {
        "recovery after a small displacement slows as sigma approaches 0"
    }

    fn run(&self, ctx: &RunContext) -> Result<ScenarioReport, ScenarioError> {
        let (mut report, _) = run_batch(&self.name, &self.specs, ctx)?;
        let rel = PathBuf::from(format!("{}.json", self.name));
        let mut files = report.files.clone();
        files.push(rel.clone());
        let snapshot = ScenarioReport { files, ..report.clone() };
        write_json(ctx, &rel, &mut report.files, &snapshot)?;
        Ok(report)
    }
}

/// Steady amplitude versus frozen `σ`.
pub struct SweepScenario {
    pub name: String,
    pub params: ModelParams,
    pub grid: Vec<f64>,
    /// `horizon` is the per-point time cap.
    pub per_point: IntegratorConfig,
}

impl SweepScenario {
    /// 40 points over `[−1.2, 0.5]`; none lands exactly on the fold at `σ = −1`.
    pub fn fig2() -> Self {
        Self {
            name: "fig2_sweep".into(),
            params: ModelParams::transition_example(),
            grid: sigma_grid(-1.2, 0.5, 40),
            per_point: IntegratorConfig::new(1e-3, 1000.0, 1),
        }
    }
}

impl Scenario for SweepScenario {
    fn name(&self) -> &str {
        &self.name
    }

    fn description(&self) -> &str {
        "steady amplitude versus frozen sigma against the closed-form cycle radii"
    }

    fn run(&self, ctx: &RunContext) -> Result<ScenarioReport, ScenarioError> {
        let mut cfg = self.per_point;
        cfg.dt = ctx.dt.unwrap_or(cfg.dt);
        cfg.horizon = ctx.horizon.unwrap_or(cfg.horizon);
        cfg.validate().map_err(|e| ScenarioError::invalid("integrator", e))?;
        self.params.validate().map_err(|e| ScenarioError::invalid("params", e))?;
        let rows = bifurcation_sweep(&self.params, &self.grid, &cfg);
        let mut report = ScenarioReport::empty(&self.name);
        let csv = PathBuf::from(format!("{}.csv", self.name));
        write_output(ctx, &csv, &mut report.files, |w| write_sweep_csv(&rows, w))?;
        report.sweep = Some(rows);
        let rel = PathBuf::from(format!("{}.json", self.name));
        let mut files = report.files.clone();
        files.push(rel.clone());
        let snapshot = ScenarioReport { files, ..report.clone() };
        write_json(ctx, &rel, &mut report.files, &snapshot)?;
        Ok(report)
    }
}

/// Monte-Carlo basin estimate of `ℰ₁`.
pub struct BasinScenario {
    pub name: String,
    pub params: ModelParams,
    pub samples: usize,
    pub seed: u64,
    /// `sample_stride` is the membership check interval in steps.
    pub config: IntegratorConfig,
    pub strata: Vec<Stratum>,
}

impl BasinScenario {
    pub fn default_mc() -> Self {
        Self {
            name: "basin_mc".into(),
            params: ModelParams::transition_example(),
            samples: 400,
            seed: 42,
            config: IntegratorConfig::new(1e-2, 500.0, 10),
            strata: Stratum::ALL.to_vec(),
        }
    }
}

impl Scenario for BasinScenario {
    fn name(&self) -> &str {
        &self.name
    }

    fn description(&self) -> &str {
        "stratified Monte-Carlo starts and the fraction converging to E1"
    }

    fn run(&self, ctx: &RunContext) -> Result<ScenarioReport, ScenarioError> {
        let mut cfg = self.config;
        cfg.dt = ctx.dt.unwrap_or(cfg.dt);
        cfg.horizon = ctx.horizon.unwrap_or(cfg.horizon);
        cfg.validate().map_err(|e| ScenarioError::invalid("integrator", e))?;
        if self.samples == 0 {
            return Err(ScenarioError::invalid("samples", "must be >= 1"));
        }
        let seed = ctx.seed.unwrap_or(self.seed);
        let basin = basin_mc(&self.params, self.samples, seed, &cfg, &self.strata)
            .map_err(|e| ScenarioError::invalid("params", e))?;
        let mut report = ScenarioReport::empty(&self.name);
        report.basin = Some(basin);
        let rel = PathBuf::from(format!("{}.json", self.name));
        let snapshot = ScenarioReport {
            files: vec![rel.clone()],
            ..report.clone()
        };
        write_json(ctx, &rel, &mut report.files, &snapshot)?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dummy(&'static str);

    impl Scenario for Dummy {
        fn name(&self) -> &str {
            self.0
        }
        fn description(&self) -> &str {
            "dummy"
        }
        fn run(&self, _: &RunContext) -> Result<ScenarioReport, ScenarioError> {
            Ok(ScenarioReport::empty(self.0))
        }
    }

    #[test]
    fn builtins_are_listed() {
        let reg = ScenarioRegistry::builtin();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, ["basin_mc", "fig2_sweep", "fig4", "fig5", "fig7", "fig8"]);
    }

    #[test]
    fn duplicate_registration_fails() {
        let mut reg = ScenarioRegistry::builtin();
        assert!(matches!(reg.register(Box::new(Dummy("fig4"))), Err(ScenarioError::Duplicate(_))));
        reg.register(Box::new(Dummy("extra"))).unwrap();
        assert_eq!(reg.run("extra", &RunContext::default()).unwrap().name, "extra");
    }

    #[test]
    fn unknown_target() {
        let reg = ScenarioRegistry::builtin();
        let e = reg.run("no_such_thing", &RunContext::default()).unwrap_err();
        assert!(matches!(e, ScenarioError::Unknown(_)));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn builtin_specs_validate() {
        for s in [fig4_spec(), fig5_spec(-0.4), fig7_spec(), fig8_spec()] {
            s.validate().unwrap();
        }
    }

    #[test]
    fn file_target_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = fig5_spec(-0.4);
        spec.integrator.horizon = 5.0;
        spec.name = "from_file".into();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, spec.to_toml_string()).unwrap();
        let reg = ScenarioRegistry::builtin();
        let rep = reg
            .run(path.to_str().unwrap(), &RunContext::in_dir(dir.path().join("out")))
            .unwrap();
        assert_eq!(rep.name, "from_file");
        assert!(dir.path().join("out/fig5_sigma-0.4.csv").exists());
    }
}
