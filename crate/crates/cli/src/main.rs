use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slowfast_core::model::ModelParams;
use slowfast_core::scenario::basin::Stratum;
use slowfast_core::scenario::registry::{BasinScenario, SweepScenario};
use slowfast_core::scenario::{sigma_grid, RunContext, Scenario, ScenarioError, ScenarioRegistry, ScenarioReport};
use slowfast_core::IntegratorConfig;

#[derive(Parser)]
#[command(name = "slowfast", version, about = "Run slow-fast seizure-model scenarios")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "SLOWFAST_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in scenario by name, or a TOML scenario file.
    Run {
        target: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Steady amplitude over a grid of frozen sigma values.
    Sweep {
        #[arg(long, default_value_t = -1.2, allow_negative_numbers = true)]
        sigma_min: f64,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        sigma_max: f64,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Monte-Carlo basin estimate of the rest state.
    Basin {
        /// Starts per stratum.
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// List built-in scenarios.
    List,
}

fn print_report(report: &ScenarioReport, seconds: f64) {
    println!("scenario {} finished in {seconds:.2} s", report.name);
    for run in &report.runs {
        println!(
            "  {}: terminal (x, y, sigma) = ({:.6}, {:.6}, {:.6}), r = {:.6}",
            run.scenario, run.terminal_state.x, run.terminal_state.y, run.terminal_state.sigma, run.terminal_r
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "    events {}, first event {}, sigma zero crossing {}, activation {}",
            run.detected_events,
            opt(run.first_event_time),
            opt(run.sigma_zero_crossing),
            opt(run.activation_time)
        );
        if let Some(r) = run.recovery {
            println!("    recovery time {:.3} (reached: {})", r.time, r.reached);
        }
        if let Some(e) = &run.envelope {
            println!("    envelope holds: {}", e.holds);
        }
        for w in run.warnings.iter().chain(&run.notes) {
            println!("    note: {w}");
        }
    }
    if let Some(rows) = &report.sweep {
        println!("  {} sweep points", rows.len());
    }
    if let Some(b) = &report.basin {
        for s in &b.strata {
            println!(
                "  {:?}: {}/{} to E1 ({} strict), {} to M1, {} to M3, stayed in R: {}",
                s.stratum,
                s.equilibrium1,
                s.samples,
                s.strict_equilibrium1,
                s.cycle1,
                s.cycle3,
                s.stayed_in_region.map_or("-".to_string(), |n| n.to_string())
            );
        }
    }
    for f in &report.files {
        println!("  wrote {}", f.display());
    }
}

fn execute(cli: Cli) -> Result<(), ScenarioError> {
    let registry = ScenarioRegistry::builtin();
    let started = std::time::Instant::now();
    let report = match cli.command {
        Command::List => {
            for s in registry.iter() {
                println!("{:<12} {}", s.name(), s.description());
            }
            return Ok(());
        }
        Command::Run {
            target,
            seed,
            dt,
            horizon,
        } => {
            let ctx = RunContext {
                out_dir: Some(cli.out),
                seed,
                dt,
                horizon,
            };
            registry.run(&target, &ctx)?
        }
        Command::Sweep {
            sigma_min,
            sigma_max,
            steps,
            dt,
        } => {
            if sigma_min >= sigma_max || sigma_min.is_nan() || sigma_max.is_nan() || steps < 2 {
                return Err(ScenarioError::Validation {
                    path: "sweep".into(),
                    message: "need sigma_min < sigma_max and steps >= 2".into(),
                });
            }
            let scenario = SweepScenario {
                name: "sweep".into(),
                grid: sigma_grid(sigma_min, sigma_max, steps),
                ..SweepScenario::fig2()
            };
            scenario.run(&RunContext {
                out_dir: Some(cli.out),
                dt,
                ..RunContext::default()
            })?
        }
        Command::Basin {
            samples,
            seed,
            dt,
            horizon,
        } => {
            let scenario = BasinScenario {
                name: "basin".into(),
                params: ModelParams::transition_example(),
                samples,
                seed,
                config: IntegratorConfig::new(1e-2, 500.0, 10),
                strata: Stratum::ALL.to_vec(),
            };
            scenario.run(&RunContext {
                out_dir: Some(cli.out),
                dt,
                horizon,
                seed: None,
            })?
        }
    };
    print_report(&report, started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
