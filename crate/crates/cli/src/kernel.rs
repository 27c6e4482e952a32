use anyhow::Result;
use clap::Args;
use occrefine::kernel::check::run_checks;

use crate::config::FileConfig;
use crate::Outcome;

#[derive(Args, Debug)]
pub struct KernelArgs {
    /// Seed for the random instances [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Random instances per gradient check
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

pub fn run(a: KernelArgs, file: &FileConfig) -> Result<Outcome> {
    let report = run_checks(a.seed.or(file.seed).unwrap_or(0), a.instances);
    for c in &report.checks {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", report.checks.len() - failed, report.checks.len());
    Ok(if report.passed() { Outcome::Ok } else { Outcome::Failed })
}
