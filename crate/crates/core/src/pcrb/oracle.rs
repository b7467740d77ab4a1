//! Monte Carlo estimate of the full posterior FIM for small instances.
//!
//! Nothing here assumes diagonality. For every prior draw of the channel
//! the conditional observation information
//! `(2/N0) Re sum_{k,l} conj(dz/dtheta_i) dz/dtheta_j` is formed from the
//! analytic partial derivatives of the noiseless received grid, and the
//! prior information from the negative Hessian of `ln p(h | l, k)` with
//! the derivatives of `ln gamma` taken by central finite differences of
//! the power profile. Averaging over draws gives `J_r` and `J_p`; the
//! first-order scores (with sampled noise for the likelihood part) are
//! averaged too so their zero-mean regularity can be checked.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{theta_h_im, theta_h_re, theta_k, theta_l, MonteCarlo};
use crate::channel::{gamma_at, sample_channel, ChannelRealization};
use crate::config::{wrap_index, OtfsConfig, UserProfile};
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamId};
use crate::waveform::{build_frames, Frame};

/// Largest parameter dimension `4 P K_u` the oracle accepts.
pub const ORACLE_DIM_CAP: usize = 32;

const CHUNKS: usize = 64;
const FD_STEP: f64 = 1e-4;

/// Mean of one score coordinate with its standard error.
pub type ScoreMean = MonteCarlo;

/// Monte Carlo estimate of `J = J_r + J_p` in parameter-vector order.
#[derive(Debug, Clone)]
pub struct NumericalFim {
    pub dim: usize,
    pub draws: usize,
    /// Row-major `dim x dim`.
    pub jr: Vec<f64>,
    pub jp: Vec<f64>,
    /// Standard errors of `jr + jp`, entry by entry.
    pub std_error: Vec<f64>,
    /// `E[d ln p(y | theta) / d theta_i]`.
    pub likelihood_score: Vec<ScoreMean>,
    /// `E[d ln p(h | l, k) / d theta_i]`.
    pub prior_score: Vec<ScoreMean>,
}

impl NumericalFim {
    pub fn total(&self, i: usize, j: usize) -> f64 {
        self.jr[i * self.dim + j] + self.jp[i * self.dim + j]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.total(i, i)).collect()
    }

    /// `max_{i != j} |J_ij| / min_i J_ii`.
    pub fn max_offdiag_over_min_diag(&self) -> f64 {
        let min_diag = self.diagonal().into_iter().fold(f64::INFINITY, f64::min);
        self.max_offdiag() / min_diag
    }

    /// `max_{i != j} |J_ij| / sqrt(J_ii J_jj)`.
    pub fn max_offdiag_correlation(&self) -> f64 {
        let d = self.diagonal();
        self.offdiag_pairs()
            .map(|(i, j)| self.total(i, j).abs() / (d[i] * d[j]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn max_offdiag(&self) -> f64 {
        self.offdiag_pairs().map(|(i, j)| self.total(i, j).abs()).fold(0.0, f64::max)
    }

    fn offdiag_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dim).flat_map(move |i| (0..self.dim).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// Largest `|mean| / std_error` over all likelihood and prior score
    /// coordinates. Coordinates whose score is identically zero count as 0.
    pub fn max_score_z(&self) -> f64 {
        self.likelihood_score
            .iter()
            .chain(&self.prior_score)
            .map(|s| if s.std_error > 0.0 { s.mean.abs() / s.std_error } else if s.mean == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

struct Accumulator {
    draws: usize,
    jr: Vec<f64>,
    jp: Vec<f64>,
    total_sq: Vec<f64>,
    ls: Vec<f64>,
    ls_sq: Vec<f64>,
    ps: Vec<f64>,
    ps_sq: Vec<f64>,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Accumulator {
            draws: 0,
            jr: vec![0.0; dim * dim],
            jp: vec![0.0; dim * dim],
            total_sq: vec![0.0; dim * dim],
            ls: vec![0.0; dim],
            ls_sq: vec![0.0; dim],
            ps: vec![0.0; dim],
            ps_sq: vec![0.0; dim],
        }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        self.draws += other.draws;
        for (a, b) in [
            (&mut self.jr, &other.jr),
            (&mut self.jp, &other.jp),
            (&mut self.total_sq, &other.total_sq),
            (&mut self.ls, &other.ls),
            (&mut self.ls_sq, &other.ls_sq),
            (&mut self.ps, &other.ps),
            (&mut self.ps_sq, &other.ps_sq),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

/// Sparse partial derivative of `z` with respect to one parameter.
type Partial = Vec<(usize, Complex64)>;

/// Estimates the full posterior FIM from `draws` prior draws.
///
/// `profiles` must form a valid layout for `cfg`; `4 P K_u` may not exceed
/// [`ORACLE_DIM_CAP`]. Draws are split into fixed chunks, each with its own
/// stream derived from `master_seed`, and reduced in chunk order, so the
/// result does not depend on thread scheduling.
pub fn numerical_fim(
    cfg: &OtfsConfig,
    profiles: &[UserProfile],
    scale: f64,
    master_seed: u64,
    draws: usize,
) -> Result<NumericalFim> {
    let dim = 4 * cfg.paths() * cfg.users();
    if dim > ORACLE_DIM_CAP {
        return Err(Error::OracleTooLarge { dim, cap: ORACLE_DIM_CAP });
    }
    if draws < 2 {
        return Err(Error::InvalidConfig("the FIM oracle needs at least two draws".into()));
    }
    let frames = build_frames(profiles, cfg)?;
    let per_chunk = draws.div_ceil(CHUNKS);

    let partials: Vec<Accumulator> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let start = c * per_chunk;
            let end = draws.min(start + per_chunk);
            let mut acc = Accumulator::new(dim);
            let mut rng = StreamId::new(c as u64, Purpose::Prior, 0).spawn(master_seed);
            let mut scratch = Scratch::new(dim);
            for _ in start..end {
                let channels: Vec<ChannelRealization> = profiles
                    .iter()
                    .map(|p| sample_channel(p, scale, cfg.paths(), &mut rng))
                    .collect();
                scratch.evaluate(cfg, profiles, &frames, &channels, scale, &mut rng);
                scratch.accumulate(&mut acc);
            }
            acc
        })
        .collect();

    let acc = partials.iter().fold(Accumulator::new(dim), |a, b| a.merge(b));
    let n = acc.draws as f64;
    let mean = |v: &[f64]| v.iter().map(|x| x / n).collect::<Vec<_>>();
    let jr = mean(&acc.jr);
    let jp = mean(&acc.jp);
    let std_error = (0..dim * dim)
        .map(|i| {
            let m = jr[i] + jp[i];
            ((acc.total_sq[i] / n - m * m).max(0.0) / n).sqrt()
        })
        .collect();
    let scores = |s: &[f64], sq: &[f64]| (0..dim).map(|i| MonteCarlo::from_sums(s[i], sq[i], acc.draws)).collect();
    Ok(NumericalFim {
        dim,
        draws: acc.draws,
        likelihood_score: scores(&acc.ls, &acc.ls_sq),
        prior_score: scores(&acc.ps, &acc.ps_sq),
        jr,
        jp,
        std_error,
    })
}

/// Per-draw working buffers.
struct Scratch {
    dim: usize,
    partials: Vec<Partial>,
    jr: Vec<f64>,
    jp: Vec<f64>,
    ls: Vec<f64>,
    ps: Vec<f64>,
    noise: Vec<(usize, Complex64)>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            dim,
            partials: vec![Vec::new(); dim],
            jr: vec![0.0; dim * dim],
            jp: vec![0.0; dim * dim],
            ls: vec![0.0; dim],
            ps: vec![0.0; dim],
            noise: Vec::new(),
        }
    }

    fn evaluate(
        &mut self,
        cfg: &OtfsConfig,
        profiles: &[UserProfile],
        frames: &[Frame],
        channels: &[ChannelRealization],
        scale: f64,
        rng: &mut crate::rng::RandomStream,
    ) {
        let p = cfg.paths();
        let users = profiles.len();
        let mn = cfg.cells() as f64;
        self.partials.iter_mut().for_each(Vec::clear);
        self.jp.iter_mut().for_each(|v| *v = 0.0);
        self.ps.iter_mut().for_each(|v| *v = 0.0);

        for (u, ((profile, frame), channel)) in profiles.iter().zip(frames).zip(channels).enumerate() {
            for (q, path) in channel.paths.iter().enumerate() {
                let (ire, iim) = (theta_h_re(u, q, p), theta_h_im(u, q, p));
                let (il, ik) = (theta_l(u, q, p, users), theta_k(u, q, p, users));
                for (src, x) in frame.grid.nonzero() {
                    let dst = wrap_index(src.k as i64 + path.k, src.l as i64 + path.l, cfg);
                    let dl = (dst.l as i64 - path.l) as f64;
                    let base = Complex64::from_polar(1.0, 2.0 * PI * dl * path.k as f64 / mn) * x;
                    let cell = cfg.flat(dst);
                    let j = Complex64::i();
                    self.partials[ire].push((cell, base));
                    self.partials[iim].push((cell, j * base));
                    self.partials[il].push((cell, -path.h * j * (2.0 * PI * path.k as f64 / mn) * base));
                    self.partials[ik].push((cell, path.h * j * (2.0 * PI * dl / mn) * base));
                }

                // Prior part from ln p(h | l, k) = -|h|^2/gamma - ln(pi gamma).
                let log_gamma = |l: f64, _k: f64| gamma_at(l, profile, scale).ln();
                let (l0, k0) = (path.l as f64, path.k as f64);
                let d = FD_STEP;
                let f0 = log_gamma(l0, k0);
                let g_l = (log_gamma(l0 + d, k0) - log_gamma(l0 - d, k0)) / (2.0 * d);
                let g_k = (log_gamma(l0, k0 + d) - log_gamma(l0, k0 - d)) / (2.0 * d);
                let g_ll = (log_gamma(l0 + d, k0) - 2.0 * f0 + log_gamma(l0 - d, k0)) / (d * d);
                let g_kk = (log_gamma(l0, k0 + d) - 2.0 * f0 + log_gamma(l0, k0 - d)) / (d * d);
                let g_lk = (log_gamma(l0 + d, k0 + d) - log_gamma(l0 + d, k0 - d) - log_gamma(l0 - d, k0 + d)
                    + log_gamma(l0 - d, k0 - d))
                    / (4.0 * d * d);
                let inv = (-f0).exp();
                let (a, b) = (path.h.re, path.h.im);
                let power = path.h.norm_sqr();
                let dim = self.dim;
                let mut set = |i: usize, j: usize, v: f64| {
                    self.jp[i * dim + j] = v;
                    self.jp[j * dim + i] = v;
                };
                set(ire, ire, 2.0 * inv);
                set(iim, iim, 2.0 * inv);
                set(ire, iim, 0.0);
                set(ire, il, -2.0 * a * inv * g_l);
                set(ire, ik, -2.0 * a * inv * g_k);
                set(iim, il, -2.0 * b * inv * g_l);
                set(iim, ik, -2.0 * b * inv * g_k);
                let cross = |g_xy: f64, g_x: f64, g_y: f64| -g_xy * (power * inv - 1.0) + power * inv * g_x * g_y;
                set(il, il, cross(g_ll, g_l, g_l));
                set(ik, ik, cross(g_kk, g_k, g_k));
                set(il, ik, cross(g_lk, g_l, g_k));
                self.ps[ire] = -2.0 * a * inv;
                self.ps[iim] = -2.0 * b * inv;
                self.ps[il] = g_l * (power * inv - 1.0);
                self.ps[ik] = g_k * (power * inv - 1.0);
            }
        }

        // Observation information and likelihood scores.
        let n0 = cfg.n0();
        for i in 0..self.dim {
            for j in i..self.dim {
                let mut acc = 0.0;
                for &(ci, vi) in &self.partials[i] {
                    for &(cj, vj) in &self.partials[j] {
                        if ci == cj {
                            acc += (vi.conj() * vj).re;
                        }
                    }
                }
                let v = 2.0 / n0 * acc;
                self.jr[i * self.dim + j] = v;
                self.jr[j * self.dim + i] = v;
            }
        }

        // Noise only matters on cells where some partial is nonzero.
        let mut cells: Vec<usize> = self.partials.iter().flatten().map(|&(c, _)| c).collect();
        cells.sort_unstable();
        cells.dedup();
        self.noise.clear();
        self.noise.extend(cells.into_iter().map(|c| (c, rng.complex_gaussian(n0))));
        for i in 0..self.dim {
            let mut acc = 0.0;
            for &(ci, vi) in &self.partials[i] {
                if let Ok(pos) = self.noise.binary_search_by_key(&ci, |&(c, _)| c) {
                    acc += (vi.conj() * self.noise[pos].1).re;
                }
            }
            self.ls[i] = 2.0 / n0 * acc;
        }
    }

    fn accumulate(&self, acc: &mut Accumulator) {
        acc.draws += 1;
        for i in 0..self.dim * self.dim {
            acc.jr[i] += self.jr[i];
            acc.jp[i] += self.jp[i];
            let t = self.jr[i] + self.jp[i];
            acc.total_sq[i] += t * t;
        }
        for i in 0..self.dim {
            acc.ls[i] += self.ls[i];
            acc.ls_sq[i] += self.ls[i] * self.ls[i];
            acc.ps[i] += self.ps[i];
            acc.ps_sq[i] += self.ps[i] * self.ps[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::joint_normalization_scale;
    use crate::config::DDIndex;
    use crate::pcrb::{fim_diagonals, PriorRegime};

    fn small(paths: usize, users: usize) -> (OtfsConfig, Vec<UserProfile>) {
        let cfg = OtfsConfig::new(8, 8, paths, users, 0.5, 0).unwrap();
        let profiles = (0..users)
            .map(|u| UserProfile::new(u + 1, 0, 1, 1, DDIndex::new(4, 2 + 4 * u), 20.0))
            .collect();
        (cfg, profiles)
    }

    #[test]
    fn dimension_cap() {
        let cfg = OtfsConfig::new(32, 32, 3, 3, 1.0, 0).unwrap();
        let profiles: Vec<_> = (0..3).map(|u| UserProfile::new(u + 1, 0, 1, 1, DDIndex::new(0, 8 * u), 1.0)).collect();
        assert!(matches!(
            numerical_fim(&cfg, &profiles, 1.0, 0, 100),
            Err(Error::OracleTooLarge { dim: 36, cap: 32 })
        ));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (cfg, profiles) = small(1, 1);
        let a = numerical_fim(&cfg, &profiles, 1.0, 3, 2_000).unwrap();
        let b = numerical_fim(&cfg, &profiles, 1.0, 3, 2_000).unwrap();
        assert_eq!(a.jr, b.jr);
        assert_eq!(a.jp, b.jp);
        assert_eq!(a.draws, 2_000);
    }

    #[test]
    fn oracle_tracks_closed_form() {
        let (cfg, profiles) = small(2, 2);
        let scale = joint_normalization_scale(&profiles, cfg.paths());
        let fim = numerical_fim(&cfg, &profiles, scale, 1, 40_000).unwrap();
        let closed = fim_diagonals(&profiles, scale, &cfg, PriorRegime::Discrete).theta_diagonal();
        for (i, (o, c)) in fim.diagonal().iter().zip(&closed).enumerate() {
            assert!((o - c).abs() / c < 0.03, "entry {i}: oracle {o}, closed {c}");
        }
        // The gain block is exact per draw.
        assert_eq!(fim.jr[0], 2.0 * 20.0 / 0.5);
    }
}
