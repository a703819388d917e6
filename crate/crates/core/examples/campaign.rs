//! Replicated campaign over the reference network, printing summary
//! statistics for each mechanism and load level.
//!
//! cargo run --release --example campaign -- [replications] [multiplier] [alpha_max] [cap|nocap] [step]

use slicenet::drp::DrpConfig;
use slicenet::harness::{
    delay_comparison, run_experiment, DelayTerm, EvalOptions, ExperimentPlan, Load, Mechanism,
    PhiRule, ScenarioConfig,
};

fn main() -> slicenet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let reps = args.first().and_then(|v| v.parse().ok()).unwrap_or(10);
    let multiplier = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(slicenet::harness::DEFAULT_HIGH_LOAD_MULTIPLIER);
    let alpha_max = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(2.0);
    let cap = args.get(3).map(|v| v == "cap").unwrap_or(false);
    let step = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(DrpConfig::default().step);
    let loads = [Load::High, Load::Mid, Load::Low];
    let plan = ExperimentPlan {
        base: ScenarioConfig {
            seed: 2024,
            alpha_range: (1.0, alpha_max),
            phi: PhiRule::Calibrated { multiplier },
            ..ScenarioConfig::default()
        },
        loads: loads.to_vec(),
        replications: reps,
        options: EvalOptions {
            drp: DrpConfig {
                step,
                ..DrpConfig::default()
            },
            drf_satiation_cap: cap,
            ..EvalOptions::default()
        },
    };
    let table = run_experiment(&plan)?;
    for load in loads {
        let runs: Vec<_> = table.runs.iter().filter(|r| r.load == load).collect();
        let iters = runs.iter().map(|r| r.iterations as f64).sum::<f64>() / runs.len() as f64;
        let kkt = runs.iter().map(|r| r.kkt_residual).fold(0.0, f64::max);
        println!(
            "\n[{load}] iterations {iters:.1}  worst kkt {kkt:.3e}  converged {}/{}  envy-free {}  sharing {}",
            runs.iter().filter(|r| r.converged).count(),
            runs.len(),
            runs.iter().filter(|r| r.envy_free).count(),
            runs.iter().filter(|r| r.sharing_incentive).count(),
        );
        for m in Mechanism::ALL {
            let cap = table.mean_capacity(m, load);
            let r = table.mean_ratio(m, load);
            let opex = table.mean_opex(m, load);
            let bn = runs.iter().filter(|r| r.bottlenecked[&m]).count();
            println!(
                "  {m:<8} capacity {:>9.3} ±{:.3}  r {:.3} ±{:.3}  opex {:.4}  bottlenecked {bn}/{}",
                cap.mean, cap.ci95, r.mean, r.ci95, opex.mean, runs.len()
            );
        }
        let drp: Vec<_> = table.select(Mechanism::Drp, load).cloned().collect();
        for m in [Mechanism::Uniform, Mechanism::MdDrf, Mechanism::PdDrf] {
            let other: Vec<_> = table.select(m, load).cloned().collect();
            let d = delay_comparison(&drp, &other, DelayTerm::Queuing)?;
            let e = delay_comparison(&drp, &other, DelayTerm::EndToEnd)?;
            println!(
                "  delay vs {m:<8} queuing {:.3}  end-to-end {:.3}  (compared {}, excluded {})",
                d.mean_ratio, e.mean_ratio, d.compared, d.excluded
            );
        }
        for m in [Mechanism::Drp, Mechanism::PdDrf, Mechanism::Uniform] {
            let u: Vec<String> = table
                .mean_utilization(m, load)
                .iter()
                .map(|(d, l, v)| format!("{}/{}={:.3}", d.label(), &l[..3], v))
                .collect();
            println!("  util {m:<8} {}", u.join(" "));
        }
    }
    Ok(())
}
