//! Monte Carlo experiment driver: per-user NMSE sweeps, the uniform versus
//! optimised allocation comparison, and the validation suite.
//!
//! Every trial draws its channels from `StreamId(trial, Channel, user)` and
//! its noise from `StreamId(trial, Noise, 0)`, so all sweep points and all
//! allocation schemes see the same realizations. Trials run in parallel and
//! are reduced in trial order, which keeps the output byte-identical for a
//! given config and seed.

mod config;
mod validation;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::allocator::{solve_closed_form, Allocation, AllocationProblem, UserTerms};
use crate::channel::{joint_normalization_scale, sample_channel, ChannelRealization};
use crate::config::UserProfile;
use crate::error::{Error, Result};
use crate::estimator::{estimate_threshold, nmse, ChannelEstimate};
use crate::grid::DDGrid;
use crate::pcrb::{normalization_factor, phi, MonteCarlo};
use crate::rng::{Purpose, StreamId};
use crate::waveform::{build_pilot_frame, received_signal, Frame};
use crate::{db_to_linear, linear_to_db};

pub use config::{AllocationMode, ExperimentConfig, Sweep, SweepAxis, FOUR_USER, FOUR_USER_ALLOCATION};
pub use validation::{
    run_validation_suite, small_instances, Check, CheckResult, Fault, ValidationPlan, ValidationReport,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserLabel {
    User(usize),
    Average,
}

impl fmt::Display for UserLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserLabel::User(u) => write!(f, "{u}"),
            UserLabel::Average => f.write_str("avg"),
        }
    }
}

/// One CSV line: a scheme, a sweep point and a user (or the user average).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: String,
    pub sweep_value: f64,
    pub user: UserLabel,
    pub nmse: f64,
    pub nmse_db: f64,
    /// Standard error of `nmse` over trials.
    pub nmse_std_error: f64,
    pub npcrb: f64,
    pub detections_mean: f64,
    pub false_alarms_mean: f64,
    pub trials: usize,
}

pub const RESULT_HEADER: &str =
    "scheme,sweep_value,user,nmse,nmse_db,nmse_std_error,npcrb,detections_mean,false_alarms_mean,trials";

impl ResultRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{:?},{},{:e},{:.6},{:e},{:e},{:.6},{:.6},{}",
            self.scheme,
            self.sweep_value,
            self.user,
            self.nmse,
            self.nmse_db,
            self.nmse_std_error,
            self.npcrb,
            self.detections_mean,
            self.false_alarms_mean,
            self.trials
        )
    }
}

/// `# config_sha256=<hex> seed=<seed>`.
pub fn header_comment(config: &ExperimentConfig) -> String {
    format!("# config_sha256={} seed={}", config.hash_hex(), config.seed())
}

pub fn write_rows_csv<W: Write>(config: &ExperimentConfig, rows: &[ResultRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", header_comment(config))?;
    writeln!(w, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Creates `dir` and writes `name` into it through `body`.
pub fn write_output(dir: &Path, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(path)
}

/// Prior-dependent quantities shared by every run of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    /// Joint power-profile normalisation.
    pub scale: f64,
    pub phi: Vec<f64>,
    pub n_u: Vec<MonteCarlo>,
}

impl Priors {
    pub fn compute(config: &ExperimentConfig) -> Self {
        let paths = config.otfs.paths();
        let scale = joint_normalization_scale(&config.profiles, paths);
        let phi = config.profiles.iter().map(|p| phi(p, scale).value).collect();
        let n_u = config
            .profiles
            .par_iter()
            .map(|p| {
                let mut rng = StreamId::new(0, Purpose::Normalization, p.user_id).spawn(config.seed());
                normalization_factor(p, scale, paths, &mut rng, config.normalization_samples)
            })
            .collect();
        Priors { scale, phi, n_u }
    }

    /// `N_u P (P_u/N0 + Phi_u)^{-1}`.
    pub fn npcrb(&self, user: usize, paths: usize, pilot_snr: f64) -> f64 {
        self.n_u[user].mean * paths as f64 / (pilot_snr + self.phi[user])
    }

    /// The allocation problem in pilot-SNR units with budget `total_snr`.
    pub fn problem(&self, total_snr: f64, paths: usize) -> Result<AllocationProblem> {
        let users = self.phi.iter().zip(&self.n_u).map(|(&phi, n)| UserTerms { phi, n_u: n.mean }).collect();
        AllocationProblem::new(total_snr, users, paths)
    }
}

/// Channels and unit-variance noise of one trial.
struct Realization {
    channels: Vec<ChannelRealization>,
    unit_noise: DDGrid,
}

fn realization(config: &ExperimentConfig, scale: f64, trial: u64) -> Realization {
    let seed = config.seed();
    let channels = config
        .profiles
        .iter()
        .map(|p| {
            let mut rng = StreamId::new(trial, Purpose::Channel, p.user_id).spawn(seed);
            sample_channel(p, scale, config.otfs.paths(), &mut rng)
        })
        .collect();
    let mut unit_noise = DDGrid::for_config(&config.otfs);
    crate::waveform::add_noise(&mut unit_noise, 1.0, &mut StreamId::new(trial, Purpose::Noise, 0).spawn(seed));
    Realization { channels, unit_noise }
}

/// Frames and profiles for one power vector at one noise level.
struct Setup {
    frames: Vec<Frame>,
    profiles: Vec<UserProfile>,
    n0: f64,
    beta: f64,
}

impl Setup {
    fn new(config: &ExperimentConfig, powers: &[f64], n0: f64) -> Result<Self> {
        let profiles: Vec<UserProfile> =
            config.profiles.iter().zip(powers).map(|(p, &pw)| p.with_pilot_power(pw)).collect();
        let otfs = config.otfs.with_n0(n0)?;
        let frames = profiles.iter().map(|p| build_pilot_frame(p, &otfs)).collect::<Result<_>>()?;
        Ok(Setup {
            frames,
            profiles,
            n0,
            beta: config.threshold.beta(n0),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct UserOutcome {
    nmse: f64,
    detections: usize,
    false_alarms: usize,
}

fn simulate(config: &ExperimentConfig, setup: &Setup, r: &Realization) -> Result<Vec<UserOutcome>> {
    let cfg = &config.otfs;
    let mut y = received_signal(&setup.frames, &r.channels, cfg)?;
    let sigma = setup.n0.sqrt();
    for (v, w) in y.as_mut_slice().iter_mut().zip(r.unit_noise.as_slice()) {
        *v += w * sigma;
    }
    setup
        .profiles
        .iter()
        .zip(&r.channels)
        .map(|(p, truth)| {
            let est = if p.pilot_power > 0.0 {
                estimate_threshold(&y, p, setup.beta, cfg)?
            } else {
                ChannelEstimate::empty(p.user_id)
            };
            Ok(UserOutcome {
                nmse: nmse(&est, truth, cfg)?,
                detections: est.paths.len(),
                false_alarms: est.false_alarms(truth),
            })
        })
        .collect()
}

/// Per-trial outcomes of several setups, `[trial][setup][user]`.
fn run_trials(config: &ExperimentConfig, scale: f64, setups: &[Setup]) -> Result<Vec<Vec<Vec<UserOutcome>>>> {
    (0..config.trials as u64)
        .into_par_iter()
        .map(|t| {
            let r = realization(config, scale, t);
            setups.iter().map(|s| simulate(config, s, &r)).collect()
        })
        .collect()
}

#[derive(Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
        self.n += 1;
    }

    fn finish(&self) -> MonteCarlo {
        MonteCarlo::from_sums(self.sum, self.sum_sq, self.n)
    }
}

/// Reduces `[trial][user]` outcomes into per-user rows plus an average row.
fn summarize(scheme: &str, sweep_value: f64, per_trial: &[&[UserOutcome]], npcrb: &[f64]) -> Vec<ResultRow> {
    let users = npcrb.len();
    let trials = per_trial.len();
    let mut rows = Vec::with_capacity(users + 1);
    let mut avg = Moments::default();
    for t in per_trial {
        avg.push(t.iter().map(|o| o.nmse).sum::<f64>() / users as f64);
    }
    for u in 0..users {
        let mut m = Moments::default();
        let (mut det, mut fa) = (0usize, 0usize);
        for t in per_trial {
            m.push(t[u].nmse);
            det += t[u].detections;
            fa += t[u].false_alarms;
        }
        let mc = m.finish();
        rows.push(ResultRow {
            scheme: scheme.to_string(),
            sweep_value,
            user: UserLabel::User(u + 1),
            nmse: mc.mean,
            nmse_db: linear_to_db(mc.mean),
            nmse_std_error: mc.std_error,
            npcrb: npcrb[u],
            detections_mean: det as f64 / trials as f64,
            false_alarms_mean: fa as f64 / trials as f64,
            trials,
        });
    }
    let mc = avg.finish();
    let n = users as f64;
    rows.push(ResultRow {
        scheme: scheme.to_string(),
        sweep_value,
        user: UserLabel::Average,
        nmse: mc.mean,
        nmse_db: linear_to_db(mc.mean),
        nmse_std_error: mc.std_error,
        npcrb: npcrb.iter().sum::<f64>() / n,
        detections_mean: rows.iter().map(|r| r.detections_mean).sum::<f64>() / n,
        false_alarms_mean: rows.iter().map(|r| r.false_alarms_mean).sum::<f64>() / n,
        trials,
    });
    rows
}

/// Per-user NMSE and normalised PCRB against pilot SNR (`N0` from the
/// grid config). Each user's pilot SNR is the sweep value, plus its offset
/// in explicit mode.
pub fn run_per_user_sweep(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_per_user_sweep_with(config, &Priors::compute(config))
}

pub fn run_per_user_sweep_with(config: &ExperimentConfig, priors: &Priors) -> Result<Vec<ResultRow>> {
    config.validate()?;
    if config.sweep.axis != SweepAxis::PilotSnrDb {
        return Err(Error::InvalidConfig("sweep.axis: per-user sweeps need pilot_snr_db".into()));
    }
    let offsets = match &config.allocation {
        AllocationMode::Uniform => vec![0.0; config.profiles.len()],
        AllocationMode::Explicit(v) => v.clone(),
        AllocationMode::Optimized => {
            return Err(Error::InvalidConfig("power.mode: per-user sweeps take uniform or explicit".into()))
        }
    };
    let n0 = config.otfs.n0();
    let paths = config.otfs.paths();
    let points: Vec<Vec<f64>> = config
        .sweep
        .values
        .iter()
        .map(|&v| offsets.iter().map(|o| n0 * db_to_linear(v + o)).collect())
        .collect();
    let setups = points.iter().map(|p| Setup::new(config, p, n0)).collect::<Result<Vec<_>>>()?;
    let outcomes = run_trials(config, priors.scale, &setups)?;

    let mut rows = Vec::new();
    for (i, (&value, powers)) in config.sweep.values.iter().zip(&points).enumerate() {
        let per_trial: Vec<&[UserOutcome]> = outcomes.iter().map(|t| t[i].as_slice()).collect();
        let npcrb: Vec<f64> = (0..powers.len()).map(|u| priors.npcrb(u, paths, powers[u] / n0)).collect();
        rows.extend(summarize(config.allocation.name(), value, &per_trial, &npcrb));
    }
    Ok(rows)
}

/// Optimised split of `total` pilot power at noise level `n0`: the
/// allocator runs in pilot-SNR units with budget `total / N0`.
pub fn optimized_powers(priors: &Priors, total: f64, n0: f64, paths: usize) -> Result<Allocation> {
    let mut a = solve_closed_form(&priors.problem(total / n0, paths)?)?;
    for p in &mut a.powers {
        *p *= n0;
    }
    Ok(a)
}

/// Splits `total` in proportion to `10^(offset/10)`.
pub fn explicit_powers(offsets_db: &[f64], total: f64) -> Vec<f64> {
    let w: Vec<f64> = offsets_db.iter().map(|&o| db_to_linear(o)).collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|x| total * x / sum).collect()
}

/// Paired statistics at one `E_s/N0` point.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonPoint {
    pub sweep_value: f64,
    pub n0: f64,
    pub nmse_uniform: f64,
    pub nmse_other: f64,
    /// `10 log10(nmse_uniform / nmse_other)`.
    pub gain_db: f64,
    /// Mean and standard error of the per-trial difference
    /// `avg NMSE uniform - avg NMSE other`.
    pub diff_mean: f64,
    pub diff_std_error: f64,
    /// Improvement significant at 95% (one-sided lower bound above zero).
    pub significant: bool,
    /// Not significantly worse than uniform at 95%.
    pub not_worse: bool,
    pub powers: Vec<f64>,
    pub clamped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ResultRow>,
    pub points: Vec<ComparisonPoint>,
}

pub const SUMMARY_HEADER: &str =
    "sweep_value,n0,nmse_uniform,nmse_other,gain_db,diff_mean,diff_std_error,significant,not_worse,powers_db,clamped";

pub fn write_summary_csv<W: Write>(config: &ExperimentConfig, points: &[ComparisonPoint], mut w: W) -> Result<()> {
    writeln!(w, "{}", header_comment(config))?;
    writeln!(w, "{SUMMARY_HEADER}")?;
    for p in points {
        let powers: Vec<String> = p.powers.iter().map(|&x| format!("{:.4}", linear_to_db(x))).collect();
        let clamped: Vec<String> = p.clamped.iter().map(|u| u.to_string()).collect();
        writeln!(
            w,
            "{:?},{:e},{:e},{:e},{:.6},{:e},{:e},{},{},{},{}",
            p.sweep_value,
            p.n0,
            p.nmse_uniform,
            p.nmse_other,
            p.gain_db,
            p.diff_mean,
            p.diff_std_error,
            p.significant,
            p.not_worse,
            powers.join(";"),
            clamped.join(";")
        )?;
    }
    Ok(())
}

/// Average NMSE of uniform `P/K_u` against the configured scheme
/// (optimised or explicit) for a fixed total pilot power, sweeping
/// `E_s/N0` with `E_s = 1`. The optimised split is recomputed at every
/// noise level. Both schemes run on the same realizations.
pub fn run_allocation_comparison(config: &ExperimentConfig) -> Result<Comparison> {
    run_allocation_comparison_with(config, &Priors::compute(config))
}

pub fn run_allocation_comparison_with(config: &ExperimentConfig, priors: &Priors) -> Result<Comparison> {
    config.validate()?;
    if config.sweep.axis != SweepAxis::EsOverN0Db {
        return Err(Error::InvalidConfig("sweep.axis: allocation comparisons need es_over_n0_db".into()));
    }
    if config.allocation == AllocationMode::Uniform {
        return Err(Error::InvalidConfig("power.mode: compare uniform against optimized or explicit".into()));
    }
    let users = config.profiles.len();
    let paths = config.otfs.paths();
    let total = db_to_linear(config.total_pilot_power_db);
    let uniform = vec![total / users as f64; users];

    let mut setups = Vec::new();
    let mut plans = Vec::new();
    for &v in &config.sweep.values {
        let n0 = db_to_linear(-v);
        let (powers, clamped) = match &config.allocation {
            AllocationMode::Explicit(o) => (explicit_powers(o, total), Vec::new()),
            _ => {
                let a = optimized_powers(priors, total, n0, paths)?;
                (a.powers, a.clamped.iter().map(|u| u + 1).collect())
            }
        };
        setups.push(Setup::new(config, &uniform, n0)?);
        setups.push(Setup::new(config, &powers, n0)?);
        plans.push((n0, powers, clamped));
    }
    let outcomes = run_trials(config, priors.scale, &setups)?;

    let scheme = config.allocation.name();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (i, (&value, (n0, powers, clamped))) in config.sweep.values.iter().zip(plans).enumerate() {
        let mut diff = Moments::default();
        for t in &outcomes {
            let a: f64 = t[2 * i].iter().map(|o| o.nmse).sum();
            let b: f64 = t[2 * i + 1].iter().map(|o| o.nmse).sum();
            diff.push((a - b) / users as f64);
        }
        let d = diff.finish();
        for (j, name, pw) in [(2 * i, "uniform", &uniform), (2 * i + 1, scheme, &powers)] {
            let per_trial: Vec<&[UserOutcome]> = outcomes.iter().map(|t| t[j].as_slice()).collect();
            let npcrb: Vec<f64> = (0..users).map(|u| priors.npcrb(u, paths, pw[u] / n0)).collect();
            rows.extend(summarize(name, value, &per_trial, &npcrb));
        }
        let avg = |r: &[ResultRow]| r.iter().rev().find(|r| r.user == UserLabel::Average).map(|r| r.nmse).unwrap();
        let nmse_other = avg(&rows);
        let nmse_uniform = avg(&rows[..rows.len() - users - 1]);
        points.push(ComparisonPoint {
            sweep_value: value,
            n0,
            nmse_uniform,
            nmse_other,
            gain_db: linear_to_db(nmse_uniform / nmse_other),
            diff_mean: d.mean,
            diff_std_error: d.std_error,
            significant: d.mean - Z95 * d.std_error > 0.0,
            not_worse: d.mean + Z95 * d.std_error >= 0.0,
            powers,
            clamped,
        });
    }
    Ok(Comparison { rows, points })
}
