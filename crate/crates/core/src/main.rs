use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use slicenet::drp::DrpConfig;
use slicenet::harness::{
    self, EvalOptions, ExperimentPlan, FileConfig, Load, Mechanism, MetricsRecord, PhiRule,
    RunLabel, ScenarioConfig, ScenarioFile,
};
use slicenet::{Error, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MechanismArg {
    Drp,
    MdDrf,
    PdDrf,
    Uniform,
    All,
}

impl MechanismArg {
    fn expand(self) -> Vec<Mechanism> {
        match self {
            MechanismArg::Drp => vec![Mechanism::Drp],
            MechanismArg::MdDrf => vec![Mechanism::MdDrf],
            MechanismArg::PdDrf => vec![Mechanism::PdDrf],
            MechanismArg::Uniform => vec![Mechanism::Uniform],
            MechanismArg::All => Mechanism::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LoadArg {
    Low,
    Mid,
    High,
}

impl From<LoadArg> for Load {
    fn from(l: LoadArg) -> Load {
        match l {
            LoadArg::Low => Load::Low,
            LoadArg::Mid => Load::Mid,
            LoadArg::High => Load::High,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Auction-based provisioning of multi-domain network slices.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Scenario file to evaluate.
    #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
    scenario: Option<PathBuf>,

    /// Generate the reference scenario instead of reading one.
    #[arg(long)]
    generate: bool,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, default_value_t = 50)]
    slices: usize,

    #[arg(long, value_enum, default_value = "high")]
    load: LoadArg,

    /// High-load demand scale as a multiple of the bottleneck threshold.
    #[arg(long, default_value_t = harness::DEFAULT_HIGH_LOAD_MULTIPLIER)]
    load_multiplier: f64,

    /// Upper end of the curvature range (lower end is 1).
    #[arg(long, default_value_t = 2.0)]
    alpha_max: f64,

    #[arg(long, value_enum, default_value = "all")]
    mechanism: MechanismArg,

    #[arg(long)]
    epsilon: Option<f64>,

    #[arg(long)]
    step: Option<f64>,

    #[arg(long, default_value_t = 5000)]
    max_iters: usize,

    #[arg(long, default_value_t = 1)]
    replications: usize,

    #[arg(long, value_enum, default_value = "off")]
    budget_enforcement: Switch,

    /// Stop DRF flows at their demand at OPEX prices.
    #[arg(long, value_enum, default_value = "off")]
    drf_satiation_cap: Switch,

    /// Write the auction trace (slice CSV here, prices next to it).
    #[arg(long)]
    emit_trace: Option<PathBuf>,

    /// Write the generated scenario to this file.
    #[arg(long, requires = "generate")]
    save_scenario: Option<PathBuf>,

    /// Metrics CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Outcome {
    Converged,
    NotConverged,
}

fn drp_config(cli: &Cli, file: Option<&FileConfig>) -> DrpConfig {
    let base = DrpConfig::default();
    DrpConfig {
        epsilon: cli.epsilon.or(file.map(|f| f.epsilon)).unwrap_or(base.epsilon),
        step: cli.step.or(file.map(|f| f.step)).unwrap_or(base.step),
        zeta: file.map(|f| f.zeta).unwrap_or(base.zeta),
        max_iters: cli.max_iters,
        budget_enforcement: matches!(cli.budget_enforcement, Switch::On),
    }
}

fn summarize(records: &[MetricsRecord], mechanisms: &[Mechanism]) {
    for &m in mechanisms {
        let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.mechanism == m).collect();
        if rows.is_empty() {
            continue;
        }
        let total: f64 = rows.iter().map(|r| r.x).sum();
        let ratios: Vec<f64> = rows.iter().map(|r| r.r).filter(|v| v.is_finite()).collect();
        let mean_r = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
        println!(
            "{m:<8} traffic {total:>12.4}  mean r {mean_r:>8.4}  opex/unit {:>10.4}",
            rows[0].opex_per_unit
        );
    }
}

fn options(cli: &Cli, drp: DrpConfig) -> EvalOptions {
    EvalOptions {
        mechanisms: cli.mechanism.expand(),
        drp,
        drf_satiation_cap: matches!(cli.drf_satiation_cap, Switch::On),
        record_trace: cli.emit_trace.is_some(),
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let mechanisms = cli.mechanism.expand();
    if cli.replications == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }

    let (records, converged) = if let Some(path) = &cli.scenario {
        let file = ScenarioFile::load(path)?;
        let drp = drp_config(cli, Some(&file.config));
        drp.validate()?;
        let scenario = file.scenario();
        let label = RunLabel {
            seed: cli.seed,
            load: file.config.load,
            replication: 0,
        };
        let eval = harness::evaluate(&scenario, &options(cli, drp), label)?;
        if let (Some(out), Some(trace)) = (&cli.emit_trace, &eval.drp.trace) {
            trace.write(out)?;
        }
        let ok = eval.converged();
        (eval.records, ok)
    } else {
        let drp = drp_config(cli, None);
        drp.validate()?;
        let base = ScenarioConfig {
            seed: cli.seed,
            slices: cli.slices,
            load: cli.load.into(),
            alpha_range: (1.0, cli.alpha_max),
            phi: PhiRule::Calibrated {
                multiplier: cli.load_multiplier,
            },
            ..ScenarioConfig::default()
        };
        base.validate()?;
        if cli.replications == 1 {
            let generated = harness::generate(&base, &drp)?;
            if let Some(p) = &cli.save_scenario {
                let config = FileConfig {
                    epsilon: drp.epsilon,
                    step: drp.step,
                    zeta: drp.zeta,
                    load: base.load,
                };
                ScenarioFile::new(generated.scenario.clone(), config).save(p)?;
            }
            let label = RunLabel {
                seed: cli.seed,
                load: base.load,
                replication: 0,
            };
            let eval = harness::evaluate(&generated.scenario, &options(cli, drp), label)?;
            if let (Some(out), Some(trace)) = (&cli.emit_trace, &eval.drp.trace) {
                trace.write(out)?;
            }
            let ok = eval.converged();
            (eval.records, ok)
        } else {
            if cli.emit_trace.is_some() || cli.save_scenario.is_some() {
                eprintln!("warning: --emit-trace and --save-scenario apply to single runs only");
            }
            let plan = ExperimentPlan {
                base: base.clone(),
                loads: vec![base.load],
                replications: cli.replications,
                options: options(cli, drp),
            };
            let table = harness::run_experiment(&plan)?;
            let ok = table.all_converged();
            (table.records, ok)
        }
    };

    summarize(&records, &mechanisms);
    if let Some(out) = &cli.out {
        harness::emit_csv(&records, out)?;
    }
    Ok(if converged {
        Outcome::Converged
    } else {
        Outcome::NotConverged
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Converged) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("auction did not converge within {} iterations", cli.max_iters);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
