use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use otfs_pcrb::allocator::write_allocation_csv;
use otfs_pcrb::harness::{
    self, run_allocation_comparison_with, run_per_user_sweep_with, run_validation_suite, write_output,
    write_rows_csv, write_summary_csv, ExperimentConfig, Priors, UserLabel, ValidationPlan,
};
use otfs_pcrb::pcrb::PcrbReport;
use otfs_pcrb::{db_to_linear, linear_to_db};

#[derive(Parser)]
#[command(name = "otfs-pcrb", version, about = "OTFS multi-user pilot estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-user NMSE and normalised PCRB against pilot SNR.
    PerUserSweep(Common),
    /// Average NMSE of uniform against optimised pilot power, against Es/N0.
    AllocationComparison(Common),
    /// Oracle and consistency checks.
    Validate(Common),
    /// Prints the optimal pilot power split and the per-user bounds.
    Allocate(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config; defaults to the bundled four-user config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self, bundled: &str) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::from_toml_str(bundled)?,
        };
        if let Some(s) = self.seed {
            c = c.with_seed(s);
        }
        if let Some(t) = self.trials {
            c = c.with_trials(t)?;
        }
        if let Some(o) = &self.out {
            c = c.with_output_dir(o);
        }
        Ok(c)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::PerUserSweep(a) => per_user_sweep(a.load(harness::FOUR_USER)?),
        Command::AllocationComparison(a) => allocation_comparison(a.load(harness::FOUR_USER_ALLOCATION)?),
        Command::Validate(a) => validate(a.load(harness::FOUR_USER)?),
        Command::Allocate(a) => allocate(a.load(harness::FOUR_USER_ALLOCATION)?),
    }
}

fn per_user_sweep(c: ExperimentConfig) -> Result<()> {
    let priors = Priors::compute(&c);
    let rows = run_per_user_sweep_with(&c, &priors)?;
    let path = write_output(&c.output_dir, "per_user_sweep.csv", |w| write_rows_csv(&c, &rows, w))?;
    println!("{:>10} {:>5} {:>11} {:>11}", "snr_db", "user", "nmse_db", "npcrb_db");
    for r in rows.iter().filter(|r| r.user != UserLabel::Average) {
        println!("{:>10.1} {:>5} {:>11.3} {:>11.3}", r.sweep_value, r.user, r.nmse_db, linear_to_db(r.npcrb));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn allocation_comparison(c: ExperimentConfig) -> Result<()> {
    let priors = Priors::compute(&c);
    let cmp = run_allocation_comparison_with(&c, &priors)?;
    let rows = write_output(&c.output_dir, "allocation_comparison.csv", |w| write_rows_csv(&c, &cmp.rows, w))?;
    let summary = write_output(&c.output_dir, "allocation_summary.csv", |w| write_summary_csv(&c, &cmp.points, w))?;
    println!("{:>10} {:>12} {:>12} {:>9} {:>12}", "es_n0_db", "uniform_db", "other_db", "gain_db", "significant");
    for p in &cmp.points {
        println!(
            "{:>10.1} {:>12.3} {:>12.3} {:>9.3} {:>12}",
            p.sweep_value,
            linear_to_db(p.nmse_uniform),
            linear_to_db(p.nmse_other),
            p.gain_db,
            p.significant
        );
    }
    println!("wrote {} and {}", rows.display(), summary.display());
    Ok(())
}

fn validate(c: ExperimentConfig) -> Result<()> {
    let report = run_validation_suite(&c, &ValidationPlan::default());
    let path = write_output(&c.output_dir, "validation.csv", |w| report.write_csv(&c, w))?;
    for r in &report.results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:<14} {:.4e} (limit {:.1e}) {}", r.name, r.statistic, r.threshold, r.detail);
    }
    println!("wrote {}", path.display());
    anyhow::ensure!(report.all_passed(), "validation failed");
    Ok(())
}

fn allocate(c: ExperimentConfig) -> Result<()> {
    let priors = Priors::compute(&c);
    let n0 = c.otfs.n0();
    let total = db_to_linear(c.total_pilot_power_db);
    let a = harness::optimized_powers(&priors, total, n0, c.otfs.paths())?;
    let profiles: Vec<_> = c.profiles.iter().zip(&a.powers).map(|(p, &pw)| p.with_pilot_power(pw)).collect();
    let report = PcrbReport::closed_form(&profiles, priors.scale, &c.otfs, &priors.n_u);
    let alloc = write_output(&c.output_dir, "allocation.csv", |w| write_allocation_csv(&a, w))?;
    let bounds = write_output(&c.output_dir, "pcrb.csv", |w| report.write_csv(w))?;
    println!("total pilot power {:.2} dB, N0 {n0}, lambda {:.6e}", c.total_pilot_power_db, a.lambda);
    println!("{:>5} {:>12} {:>12} {:>12} {:>12}", "user", "power_db", "phi", "n_u", "npcrb_h");
    for (u, p) in report.users.iter().enumerate() {
        let db = if a.powers[u] > 0.0 { format!("{:.4}", linear_to_db(a.powers[u])) } else { "-inf".into() };
        println!("{:>5} {:>12} {:>12.4e} {:>12.4e} {:>12.4e}", p.user_id, db, p.phi, p.n_u, p.npcrb_h);
    }
    println!("wrote {} and {}", alloc.display(), bounds.display());
    Ok(())
}
