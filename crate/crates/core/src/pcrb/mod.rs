//! Posterior Fisher information and closed-form posterior Cramér-Rao bounds.
//!
//! The parameter vector of all users is ordered as
//! `[h_1, ..., h_Ku, l_1, ..., l_Ku, k_1, ..., k_Ku]` where each `h_u`
//! holds the real parts of the user's `P` gains followed by their
//! imaginary parts. With one pilot per user the posterior FIM
//! `J = J_r + J_p` is diagonal, so every bound is a sum of reciprocals of
//! the per-coordinate entries computed here.

mod oracle;

use std::f64::consts::PI;
use std::io::Write;

use crate::channel::{mean_gamma, mean_inverse_gamma};
use crate::config::{OtfsConfig, UserProfile};
use crate::error::Result;
use crate::rng::RandomStream;

pub use oracle::{numerical_fim, NumericalFim, ScoreMean, ORACLE_DIM_CAP};

/// Which delay prior an expectation over `l` is taken under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorRegime {
    /// Continuous uniform density on `[l_min, l_max]`; yields the
    /// closed-form `Phi_u`.
    Continuous,
    /// Discrete uniform on the integers `{l_min, ..., l_max}`, matching
    /// how channels are sampled.
    Discrete,
}

/// The prior information term `Phi_u = E[1/gamma]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi {
    pub value: f64,
    /// Set when `l_min == l_max` and the continuity limit was used.
    pub degenerate: bool,
}

/// `Phi_u = (1/s) * 2 k_max (e^{l_max} - e^{l_min}) / (l_max - l_min)`,
/// the continuous-prior expectation of `1/gamma`.
///
/// For a single-point delay support this returns the limit
/// `(1/s) * 2 k_max e^{l_min}` and flags it.
pub fn phi(profile: &UserProfile, scale: f64) -> Phi {
    let two_k = 2.0 * profile.k_max as f64;
    let (lo, hi) = (profile.l_min as f64, profile.l_max as f64);
    if profile.l_max == profile.l_min {
        return Phi {
            value: two_k * lo.exp() / scale,
            degenerate: true,
        };
    }
    // e^hi - e^lo = e^lo * expm1(hi - lo) keeps full precision.
    Phi {
        value: two_k * lo.exp() * (hi - lo).exp_m1() / (hi - lo) / scale,
        degenerate: false,
    }
}

/// `E[1/gamma]` under the requested delay prior.
pub fn mean_inverse_gamma_under(profile: &UserProfile, scale: f64, regime: PriorRegime) -> f64 {
    match regime {
        PriorRegime::Continuous => phi(profile, scale).value,
        PriorRegime::Discrete => mean_inverse_gamma(profile, scale),
    }
}

/// `E[k^2]` for `k` uniform on `{-k_max, ..., k_max}`.
fn doppler_second_moment(k_max: usize) -> f64 {
    let k = k_max as f64;
    k * (k + 1.0) / 3.0
}

/// `A = E[(|h| 2 pi k / (MN))^2] = (2pi/MN)^2 E_l[gamma] E_k[k^2]` over
/// the discrete priors. Independent of the pilot power.
pub fn expectation_a(profile: &UserProfile, scale: f64, cfg: &OtfsConfig) -> f64 {
    let c = 2.0 * PI / cfg.cells() as f64;
    c * c * mean_gamma(profile, scale) * doppler_second_moment(profile.k_max)
}

/// `B = E[(|h| 2 pi (l'' - l) / (MN))^2]` with `l'' - l = l_tau`, i.e.
/// `(2pi l_tau / MN)^2 E_l[gamma]`.
pub fn expectation_b(profile: &UserProfile, scale: f64, cfg: &OtfsConfig) -> f64 {
    let c = 2.0 * PI * profile.pilot.l as f64 / cfg.cells() as f64;
    c * c * mean_gamma(profile, scale)
}

/// Per-path diagonal entries of one FIM block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FimEntries {
    /// Real and imaginary gain coordinates share this value.
    pub h: f64,
    pub l: f64,
    pub k: f64,
}

/// Observation part `J_r`: `2P_u/N0`, `(2P_u/N0) A`, `(2P_u/N0) B`.
pub fn jr_entries(profile: &UserProfile, scale: f64, cfg: &OtfsConfig) -> FimEntries {
    let snr2 = 2.0 * profile.pilot_power / cfg.n0();
    FimEntries {
        h: snr2,
        l: snr2 * expectation_a(profile, scale, cfg),
        k: snr2 * expectation_b(profile, scale, cfg),
    }
}

/// Prior part `J_p`: `E[2/gamma]`, and for the exponential power-delay /
/// uniform power-Doppler law `E[(d ln gamma / dl)^2] = 1` and
/// `E[(d ln gamma / dk)^2] = 0` exactly.
pub fn jp_entries(profile: &UserProfile, scale: f64, regime: PriorRegime) -> FimEntries {
    FimEntries {
        h: 2.0 * mean_inverse_gamma_under(profile, scale, regime),
        l: 1.0,
        k: 0.0,
    }
}

/// Diagonal FIM entries for one path of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFim {
    pub user_id: usize,
    /// 1-based path number.
    pub path: usize,
    pub jr: FimEntries,
    pub jp: FimEntries,
}

/// All `(user, path)` diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FimDiagonals {
    pub paths_per_user: usize,
    pub entries: Vec<PathFim>,
}

pub fn fim_diagonals(profiles: &[UserProfile], scale: f64, cfg: &OtfsConfig, regime: PriorRegime) -> FimDiagonals {
    let entries = profiles
        .iter()
        .flat_map(|p| {
            let jr = jr_entries(p, scale, cfg);
            let jp = jp_entries(p, scale, regime);
            (1..=cfg.paths()).map(move |path| PathFim {
                user_id: p.user_id,
                path,
                jr,
                jp,
            })
        })
        .collect();
    FimDiagonals {
        paths_per_user: cfg.paths(),
        entries,
    }
}

impl FimDiagonals {
    /// Diagonal of `J = J_r + J_p` laid out in parameter-vector order.
    pub fn theta_diagonal(&self) -> Vec<f64> {
        let p = self.paths_per_user;
        let users = self.entries.len() / p;
        let mut out = vec![0.0; 4 * p * users];
        for (i, e) in self.entries.iter().enumerate() {
            let (u, q) = (i / p, i % p);
            let h = e.jr.h + e.jp.h;
            out[theta_h_re(u, q, p)] = h;
            out[theta_h_im(u, q, p)] = h;
            out[theta_l(u, q, p, users)] = e.jr.l + e.jp.l;
            out[theta_k(u, q, p, users)] = e.jr.k + e.jp.k;
        }
        out
    }

    /// Multiplies every `J_r` gain entry by `factor` (fault injection for
    /// exercising the validation suite).
    pub fn perturb_jr_h(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.jr.h *= factor;
        }
    }
}

// Parameter-vector positions for user `u` (0-based) and path `q` (0-based).
pub(crate) fn theta_h_re(u: usize, q: usize, p: usize) -> usize {
    2 * p * u + q
}

pub(crate) fn theta_h_im(u: usize, q: usize, p: usize) -> usize {
    2 * p * u + p + q
}

pub(crate) fn theta_l(u: usize, q: usize, p: usize, users: usize) -> usize {
    2 * p * users + p * u + q
}

pub(crate) fn theta_k(u: usize, q: usize, p: usize, users: usize) -> usize {
    3 * p * users + p * u + q
}

/// `PCRB(h_u) = P (P_u/N0 + Phi_u)^{-1}`.
pub fn pcrb_h_closed(profile: &UserProfile, scale: f64, cfg: &OtfsConfig) -> f64 {
    pcrb_h_with(profile, cfg, phi(profile, scale).value)
}

/// The same bound with `E[1/gamma]` taken under the discrete delay prior.
pub fn pcrb_h_discrete(profile: &UserProfile, scale: f64, cfg: &OtfsConfig) -> f64 {
    pcrb_h_with(profile, cfg, mean_inverse_gamma(profile, scale))
}

fn pcrb_h_with(profile: &UserProfile, cfg: &OtfsConfig, inv_gamma: f64) -> f64 {
    cfg.paths() as f64 / (profile.pilot_power / cfg.n0() + inv_gamma)
}

/// `(PCRB(l_u), PCRB(k_u))`, each summed over the user's paths. The
/// Doppler bound is `+inf` when `B = 0` (pilot at zero delay) or the pilot
/// power is zero.
pub fn pcrb_lk_closed(profile: &UserProfile, scale: f64, cfg: &OtfsConfig) -> (f64, f64) {
    let jr = jr_entries(profile, scale, cfg);
    let jp = jp_entries(profile, scale, PriorRegime::Continuous);
    let p = cfg.paths() as f64;
    let k_info = jr.k + jp.k;
    let pcrb_k = if k_info > 0.0 { p / k_info } else { f64::INFINITY };
    (p / (jr.l + jp.l), pcrb_k)
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MonteCarlo {
    pub(crate) fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        MonteCarlo {
            mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }
}

/// `N_u = E[1 / ||h_u||^2]` over prior draws of the user's `P` paths.
pub fn normalization_factor(
    profile: &UserProfile,
    scale: f64,
    paths: usize,
    rng: &mut RandomStream,
    samples: usize,
) -> MonteCarlo {
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let e = crate::channel::sample_channel(profile, scale, paths, rng).energy();
        let v = 1.0 / e;
        sum += v;
        sum_sq += v * v;
    }
    MonteCarlo::from_sums(sum, sum_sq, samples)
}

/// Bounds for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBound {
    pub user_id: usize,
    pub phi: f64,
    pub phi_degenerate: bool,
    pub n_u: f64,
    pub n_u_std_error: f64,
    pub pcrb_h: f64,
    /// The channel bound with the discrete-prior `E[1/gamma]` in place of
    /// `Phi_u`.
    pub pcrb_h_discrete: f64,
    pub npcrb_h: f64,
    pub pcrb_l: f64,
    pub pcrb_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcrbReport {
    pub users: Vec<UserBound>,
    pub pcrb_h_total: f64,
    pub npcrb_total: f64,
}

impl PcrbReport {
    /// Assembles the closed-form bounds. `normalizers[i]` is `N_u` for
    /// `profiles[i]`.
    pub fn closed_form(profiles: &[UserProfile], scale: f64, cfg: &OtfsConfig, normalizers: &[MonteCarlo]) -> Self {
        assert_eq!(profiles.len(), normalizers.len());
        let users: Vec<UserBound> = profiles
            .iter()
            .zip(normalizers)
            .map(|(p, n)| {
                let ph = phi(p, scale);
                let pcrb_h = pcrb_h_closed(p, scale, cfg);
                let (pcrb_l, pcrb_k) = pcrb_lk_closed(p, scale, cfg);
                UserBound {
                    user_id: p.user_id,
                    phi: ph.value,
                    phi_degenerate: ph.degenerate,
                    n_u: n.mean,
                    n_u_std_error: n.std_error,
                    pcrb_h,
                    pcrb_h_discrete: pcrb_h_discrete(p, scale, cfg),
                    npcrb_h: n.mean * pcrb_h,
                    pcrb_l,
                    pcrb_k,
                }
            })
            .collect();
        PcrbReport {
            pcrb_h_total: users.iter().map(|u| u.pcrb_h).sum(),
            npcrb_total: users.iter().map(|u| u.npcrb_h).sum(),
            users,
        }
    }

    /// CSV `user,phi,n_u,pcrb_h,npcrb_h,pcrb_l,pcrb_k`, non-finite values
    /// written as `inf`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "user,phi,n_u,pcrb_h,npcrb_h,pcrb_l,pcrb_k")?;
        for u in &self.users {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                u.user_id,
                fmt_bound(u.phi),
                fmt_bound(u.n_u),
                fmt_bound(u.pcrb_h),
                fmt_bound(u.npcrb_h),
                fmt_bound(u.pcrb_l),
                fmt_bound(u.pcrb_k)
            )?;
        }
        Ok(())
    }
}

fn fmt_bound(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "inf".to_string()
    }
}
