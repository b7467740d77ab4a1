//! Executable checks: transforms, FIM oracle agreement and structure,
//! allocator optimality and prior sampling moments.

use std::io::Write;

use rayon::prelude::*;

use crate::allocator::{kkt_residual, solve_bruteforce, solve_closed_form, AllocationProblem, UserTerms};
use crate::channel::{joint_normalization_scale, mean_gamma, mean_inverse_gamma, sample_channel};
use crate::config::{DDIndex, OtfsConfig, UserProfile};
use crate::error::Result;
use crate::grid::DDGrid;
use crate::pcrb::{fim_diagonals, numerical_fim, PriorRegime};
use crate::rng::{Purpose, RandomStream, StreamId};
use crate::waveform::SymplecticFft;

use super::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Transform,
    FimMatch,
    FimDiagonal,
    Allocator,
    PriorMoments,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::Transform,
        Check::FimMatch,
        Check::FimDiagonal,
        Check::Allocator,
        Check::PriorMoments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Transform => "transform",
            Check::FimMatch => "fim_match",
            Check::FimDiagonal => "fim_diagonal",
            Check::Allocator => "allocator",
            Check::PriorMoments => "prior_moments",
        }
    }
}

/// Deliberate corruption used to confirm that a check can fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Scales the closed-form `J_r` gain entries before comparison.
    ScaleJrH(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPlan {
    pub checks: Vec<Check>,
    pub fault: Option<Fault>,
    /// Prior draws for each FIM-oracle instance.
    pub oracle_draws: usize,
}

impl Default for ValidationPlan {
    fn default() -> Self {
        ValidationPlan {
            checks: Check::ALL.to_vec(),
            fault: None,
            oracle_draws: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured value compared against `threshold`.
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub results: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn write_csv<W: Write>(&self, config: &ExperimentConfig, mut w: W) -> Result<()> {
        writeln!(w, "{}", super::header_comment(config))?;
        writeln!(w, "check,passed,statistic,threshold,detail")?;
        for r in &self.results {
            writeln!(w, "{},{},{:e},{:e},\"{}\"", r.name, r.passed, r.statistic, r.threshold, r.detail)?;
        }
        Ok(())
    }
}

/// Runs the checks in `plan` using the config's seed. Failures are reported,
/// never returned as errors.
pub fn run_validation_suite(config: &ExperimentConfig, plan: &ValidationPlan) -> ValidationReport {
    let seed = config.seed();
    let results = plan
        .checks
        .iter()
        .map(|&c| {
            let outcome = match c {
                Check::Transform => transform_check(seed),
                Check::FimMatch => fim_match_check(seed, plan.oracle_draws, plan.fault),
                Check::FimDiagonal => fim_diagonal_check(seed, plan.oracle_draws),
                Check::Allocator => allocator_check(seed),
                Check::PriorMoments => prior_moment_check(config),
            };
            outcome.unwrap_or_else(|e| CheckResult {
                name: c.name().to_string(),
                passed: false,
                statistic: f64::NAN,
                threshold: f64::NAN,
                detail: format!("error: {e}"),
            })
        })
        .collect();
    ValidationReport { results }
}

/// Small oracle-sized instances: 8x8 grids, `N0 = 0.5`, every combination
/// of one or two users with one or two paths.
pub fn small_instances() -> Vec<(OtfsConfig, Vec<UserProfile>)> {
    let build = |paths: usize, supports: &[(usize, usize, usize, DDIndex, f64)]| {
        let cfg = OtfsConfig::new(8, 8, paths, supports.len(), 0.5, 0).expect("valid instance");
        let profiles = supports
            .iter()
            .enumerate()
            .map(|(u, &(l_min, l_max, k_max, pilot, power))| UserProfile::new(u + 1, l_min, l_max, k_max, pilot, power))
            .collect();
        (cfg, profiles)
    };
    vec![
        build(1, &[(0, 2, 1, DDIndex::new(4, 4), 20.0)]),
        build(2, &[(0, 1, 1, DDIndex::new(4, 3), 10.0)]),
        build(1, &[(0, 1, 1, DDIndex::new(4, 1), 20.0), (1, 2, 1, DDIndex::new(4, 4), 5.0)]),
        build(2, &[(0, 1, 1, DDIndex::new(4, 2), 20.0), (0, 1, 1, DDIndex::new(4, 6), 20.0)]),
    ]
}

fn random_grid(n: usize, m: usize, rng: &mut RandomStream) -> DDGrid {
    DDGrid::from_fn(n, m, |_, _| rng.complex_gaussian(1.0))
}

fn transform_check(seed: u64) -> Result<CheckResult> {
    let cfg = OtfsConfig::new(32, 32, 1, 1, 1.0, seed)?;
    let fft = SymplecticFft::new(&cfg);
    let mut rng = StreamId::new(0, Purpose::Validation, 1).spawn(seed);
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let x = random_grid(32, 32, &mut rng);
        let tf = fft.isfft(&x)?;
        let back = fft.sfft(&tf)?;
        let e = x.energy();
        worst = worst
            .max(back.max_abs_diff(&x))
            .max((tf.energy() - e).abs() / e)
            .max((fft.sfft(&fft.isfft(&x)?)?.energy() - e).abs() / e);
    }
    Ok(CheckResult {
        name: Check::Transform.name().into(),
        passed: worst < 1e-10,
        statistic: worst,
        threshold: 1e-10,
        detail: "max of round-trip error and relative energy change".into(),
    })
}

fn fim_match_check(seed: u64, draws: usize, fault: Option<Fault>) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    for (i, (cfg, profiles)) in small_instances().into_iter().enumerate() {
        let scale = joint_normalization_scale(&profiles, cfg.paths());
        let fim = numerical_fim(&cfg, &profiles, scale, seed, draws)?;
        let mut closed = fim_diagonals(&profiles, scale, &cfg, PriorRegime::Discrete);
        if let Some(Fault::ScaleJrH(f)) = fault {
            closed.perturb_jr_h(f);
        }
        for (j, (o, c)) in fim.diagonal().iter().zip(closed.theta_diagonal()).enumerate() {
            let rel = (c - o).abs() / o;
            if rel > worst {
                worst = rel;
                where_ = format!("instance {i}, entry {j}: oracle {o:.6e}, closed form {c:.6e}");
            }
        }
    }
    Ok(CheckResult {
        name: Check::FimMatch.name().into(),
        passed: worst < 0.02,
        statistic: worst,
        threshold: 0.02,
        detail: where_,
    })
}

/// The diagonality instance: one user, one path, 8x8 grid.
pub(crate) fn diagonal_instance() -> (OtfsConfig, Vec<UserProfile>) {
    let cfg = OtfsConfig::new(8, 8, 1, 1, 1.0, 0).expect("valid instance");
    (cfg, vec![UserProfile::new(1, 0, 0, 1, DDIndex::new(4, 7), 1.0)])
}

fn fim_diagonal_check(seed: u64, draws: usize) -> Result<CheckResult> {
    let (cfg, profiles) = diagonal_instance();
    let scale = joint_normalization_scale(&profiles, cfg.paths());
    let fim = numerical_fim(&cfg, &profiles, scale, seed, draws)?;
    let off = fim.max_offdiag_over_min_diag();
    let z = fim.max_score_z();
    Ok(CheckResult {
        name: Check::FimDiagonal.name().into(),
        passed: off < 0.01 && z < 3.0,
        statistic: off,
        threshold: 0.01,
        detail: format!(
            "max score |mean|/se {z:.3}; max off-diagonal correlation {:.3e}",
            fim.max_offdiag_correlation()
        ),
    })
}

/// Random two-user problems spanning clamped and interior solutions.
pub(crate) fn allocator_instances(seed: u64) -> Vec<AllocationProblem> {
    let mut rng = StreamId::new(0, Purpose::Validation, 2).spawn(seed);
    let mut u = move |lo: f64, hi: f64| lo * (hi / lo).powf(rand::Rng::random::<f64>(&mut rng));
    (0..20)
        .map(|_| {
            let users = (0..2).map(|_| UserTerms { phi: u(0.1, 1e3), n_u: u(0.01, 1e3) }).collect();
            AllocationProblem::new(u(1.0, 1e4), users, 4).expect("valid instance")
        })
        .collect()
}

fn allocator_check(seed: u64) -> Result<CheckResult> {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_kkt = 0.0f64;
    let mut worst_budget = 0.0f64;
    for p in allocator_instances(seed) {
        let a = solve_closed_form(&p)?;
        let b = solve_bruteforce(&p, 401)?;
        worst_gap = worst_gap.max((a.objective - b.objective) / b.objective);
        worst_kkt = worst_kkt.max(kkt_residual(&p, &a));
        worst_budget = worst_budget.max((a.powers.iter().sum::<f64>() - p.total_power).abs() / p.total_power);
    }
    Ok(CheckResult {
        name: Check::Allocator.name().into(),
        passed: worst_gap <= 1e-12 && worst_kkt < 1e-10 && worst_budget < 1e-9,
        statistic: worst_gap,
        threshold: 1e-12,
        detail: format!("max kkt residual {worst_kkt:.3e}; max budget error {worst_budget:.3e}"),
    })
}

/// Compares sampled `E[|h|^2]` and the delay frequencies against the
/// priors, as z-scores, over the configured users.
fn prior_moment_check(config: &ExperimentConfig) -> Result<CheckResult> {
    let draws = 100_000usize;
    let paths = config.otfs.paths();
    let scale = joint_normalization_scale(&config.profiles, paths);
    let seed = config.seed();
    let worst = config
        .profiles
        .par_iter()
        .map(|p| {
            let mut rng = StreamId::new(1, Purpose::Validation, p.user_id).spawn(seed);
            let mut counts = vec![0usize; p.delay_count()];
            let (mut s, mut s2, mut inv) = (0.0, 0.0, 0.0);
            for _ in 0..draws {
                let ch = sample_channel(p, scale, 1, &mut rng);
                let path = ch.paths[0];
                counts[(path.l - p.l_min as i64) as usize] += 1;
                let e = path.h.norm_sqr();
                s += e;
                s2 += e * e;
                inv += 1.0 / path.gamma;
            }
            let n = draws as f64;
            let mean = s / n;
            let se = ((s2 / n - mean * mean) / n).sqrt();
            let mut z = ((mean - mean_gamma(p, scale)) / se).abs();
            let q = 1.0 / p.delay_count() as f64;
            for c in counts {
                z = z.max((c as f64 / n - q).abs() / (q * (1.0 - q) / n).sqrt());
            }
            // E[1/gamma] over the delay draws is exact given the counts, so
            // compare it with a loose relative tolerance only.
            let rel = (inv / n - mean_inverse_gamma(p, scale)).abs() / mean_inverse_gamma(p, scale);
            if rel > 0.05 {
                z = f64::INFINITY;
            }
            z
        })
        .reduce(|| 0.0, f64::max);
    Ok(CheckResult {
        name: Check::PriorMoments.name().into(),
        passed: worst < 4.5,
        statistic: worst,
        threshold: 4.5,
        detail: format!("max |z| over gain power and delay frequencies, {draws} draws per user"),
    })
}
