//! Channel priors and sparse channel realizations.
//!
//! Delay indices are uniform on `{l_min, ..., l_max}`, Doppler indices on
//! `{-k_max, ..., k_max}`, and each gain is `CN(0, gamma)` with the
//! exponential power-delay / uniform power-Doppler variance
//! `gamma = s * exp(-l) / (2 k_max)`. The factor `s` comes from
//! [`joint_normalization_scale`].

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use crate::config::{OtfsConfig, UserProfile};
use crate::error::Result;
use crate::rng::RandomStream;

/// One resolvable path. Indices are stored unwrapped; `k` may be negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPath {
    pub l: i64,
    pub k: i64,
    pub h: Complex64,
    /// Variance the gain was drawn from.
    pub gamma: f64,
}

/// The `P` paths of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub user_id: usize,
    pub paths: Vec<ChannelPath>,
}

impl ChannelRealization {
    /// `||h_u||^2` summed over paths.
    pub fn energy(&self) -> f64 {
        self.paths.iter().map(|p| p.h.norm_sqr()).sum()
    }
}

/// Draws `(l, k)` from the discrete uniform delay and Doppler priors.
pub fn sample_indices(profile: &UserProfile, rng: &mut RandomStream) -> (i64, i64) {
    let l = rng.random_range(profile.l_min as i64..=profile.l_max as i64);
    let k_max = profile.k_max as i64;
    let k = rng.random_range(-k_max..=k_max);
    assert!(
        (profile.l_min as i64..=profile.l_max as i64).contains(&l) && (-k_max..=k_max).contains(&k),
        "sampled indices left the prior support"
    );
    (l, k)
}

/// Path variance at a (possibly non-integer) delay.
pub fn gamma_at(l: f64, profile: &UserProfile, scale: f64) -> f64 {
    scale * (-l).exp() / (2.0 * profile.k_max as f64)
}

/// `scale * exp(-l) / (2 k_max)`.
pub fn gamma_of(l: i64, profile: &UserProfile, scale: f64) -> f64 {
    gamma_at(l as f64, profile, scale)
}

/// `E_l[gamma]` under the discrete uniform delay prior.
pub fn mean_gamma(profile: &UserProfile, scale: f64) -> f64 {
    let sum: f64 = (profile.l_min..=profile.l_max).map(|l| gamma_of(l as i64, profile, scale)).sum();
    sum / profile.delay_count() as f64
}

/// `E_l[1 / gamma]` under the discrete uniform delay prior.
pub fn mean_inverse_gamma(profile: &UserProfile, scale: f64) -> f64 {
    let sum: f64 = (profile.l_min..=profile.l_max).map(|l| 1.0 / gamma_of(l as i64, profile, scale)).sum();
    sum / profile.delay_count() as f64
}

/// Scale `s` that makes the prior-expected total receive power of all
/// users and paths equal to one:
/// `s = 1 / sum_u P * mean_l(exp(-l) / (2 k_max_u))`.
pub fn joint_normalization_scale(profiles: &[UserProfile], paths: usize) -> f64 {
    assert!(!profiles.is_empty(), "joint normalization needs at least one user");
    let total: f64 = profiles.iter().map(|p| paths as f64 * mean_gamma(p, 1.0)).sum();
    1.0 / total
}

/// Draws `paths` independent paths for one user.
pub fn sample_channel(profile: &UserProfile, scale: f64, paths: usize, rng: &mut RandomStream) -> ChannelRealization {
    let paths = (0..paths)
        .map(|_| {
            let (l, k) = sample_indices(profile, rng);
            let gamma = gamma_of(l, profile, scale);
            ChannelPath {
                l,
                k,
                h: rng.complex_gaussian(gamma),
                gamma,
            }
        })
        .collect();
    ChannelRealization {
        user_id: profile.user_id,
        paths,
    }
}

/// Samples one realization per profile, each from its own stream.
pub fn sample_channels(
    profiles: &[UserProfile],
    scale: f64,
    cfg: &OtfsConfig,
    mut stream_for: impl FnMut(&UserProfile) -> RandomStream,
) -> Vec<ChannelRealization> {
    profiles
        .iter()
        .map(|p| sample_channel(p, scale, cfg.paths(), &mut stream_for(p)))
        .collect()
}

/// Writes channels as CSV `user,path,l,k,re,im,gamma` (paths numbered from 1).
pub fn write_channels_csv<W: Write>(channels: &[ChannelRealization], mut w: W) -> Result<()> {
    writeln!(w, "user,path,l,k,re,im,gamma")?;
    for ch in channels {
        for (i, p) in ch.paths.iter().enumerate() {
            writeln!(w, "{},{},{},{},{},{},{}", ch.user_id, i + 1, p.l, p.k, p.h.re, p.h.im, p.gamma)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DDIndex;
    use crate::rng::spawn_rng;

    fn four_user() -> Vec<UserProfile> {
        [(0, 4, 3), (6, 10, 3), (0, 4, 7), (6, 10, 7)]
            .iter()
            .enumerate()
            .map(|(u, &(a, b, k))| UserProfile::new(u + 1, a, b, k, DDIndex::new(16, 0), 1.0))
            .collect()
    }

    #[test]
    fn degenerate_delay_support() {
        let p = UserProfile::new(1, 3, 3, 2, DDIndex::new(0, 0), 1.0);
        let mut rng = spawn_rng(1, 1);
        for _ in 0..1000 {
            assert_eq!(sample_indices(&p, &mut rng).0, 3);
        }
    }

    #[test]
    fn four_user_delay_frequencies() {
        let p = &four_user()[0];
        let mut rng = spawn_rng(2, 0);
        let mut counts = [0usize; 5];
        let mut k_sum = 0i64;
        let draws = 100_000;
        for _ in 0..draws {
            let (l, k) = sample_indices(p, &mut rng);
            counts[l as usize] += 1;
            k_sum += k;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.2).abs() < 0.01);
        }
        // Var(k) = 4 for k uniform on -3..=3.
        let se = (4.0 / draws as f64).sqrt();
        assert!((k_sum as f64 / draws as f64).abs() < 3.0 * se);
    }

    #[test]
    fn gamma_values() {
        let p = UserProfile::new(1, 0, 4, 3, DDIndex::new(0, 0), 1.0);
        assert!((gamma_of(0, &p, 1.0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((gamma_of(4, &p, 1.0) - (-4f64).exp() / 6.0).abs() < 1e-15);
        assert!((gamma_of(4, &p, 1.0) - 0.0030526).abs() < 1e-7);
        let p7 = UserProfile { k_max: 7, ..p };
        assert!((gamma_of(0, &p7, 1.0) - 1.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_scale() {
        let single = UserProfile::new(1, 0, 0, 1, DDIndex::new(0, 0), 1.0);
        assert!((joint_normalization_scale(&[single], 1) - 2.0).abs() < 1e-15);

        let users = four_user();
        let s4 = joint_normalization_scale(&users, 4);
        // Explicit finite sum over the four-user supports.
        let mut total = 0.0;
        for (lo, hi, k) in [(0, 4, 3.0), (6, 10, 3.0), (0, 4, 7.0), (6, 10, 7.0)] {
            let mean: f64 = (lo..=hi).map(|l| (-(l as f64)).exp() / (2.0 * k)).sum::<f64>() / 5.0;
            total += 4.0 * mean;
        }
        assert!((s4 - 1.0 / total).abs() < 1e-12 * s4);
        let s8 = joint_normalization_scale(&users, 8);
        assert!((s8 - s4 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gain_moments() {
        let p = UserProfile::new(1, 2, 2, 3, DDIndex::new(0, 0), 1.0);
        let gamma = gamma_of(2, &p, 1.5);
        let mut rng = spawn_rng(3, 0);
        let draws = 100_000;
        let mut sum = Complex64::new(0.0, 0.0);
        let mut power = 0.0;
        for _ in 0..draws {
            let ch = sample_channel(&p, 1.5, 1, &mut rng);
            assert_eq!(ch.paths[0].gamma, gamma);
            sum += ch.paths[0].h;
            power += ch.paths[0].h.norm_sqr();
        }
        assert!((power / draws as f64 - gamma).abs() / gamma < 0.02);
        let se = (gamma / 2.0 / draws as f64).sqrt();
        let mean = sum / draws as f64;
        assert!(mean.re.abs() < 3.0 * se && mean.im.abs() < 3.0 * se);
    }

    #[test]
    fn streams_give_independent_gains() {
        let p = UserProfile::new(1, 0, 0, 3, DDIndex::new(0, 0), 1.0);
        let draws = 10_000;
        let mut cross = Complex64::new(0.0, 0.0);
        let (mut ea, mut eb) = (0.0, 0.0);
        for t in 0..draws {
            let a = sample_channel(&p, 1.0, 1, &mut spawn_rng(9, 2 * t)).paths[0].h;
            let b = sample_channel(&p, 1.0, 1, &mut spawn_rng(9, 2 * t + 1)).paths[0].h;
            cross += a * b.conj();
            ea += a.norm_sqr();
            eb += b.norm_sqr();
        }
        let rho = cross.norm() / (ea * eb).sqrt();
        assert!(rho < 0.03, "correlation {rho}");
    }

    #[test]
    fn normalized_total_power_is_one() {
        let users = four_user();
        let cfg = OtfsConfig::new(32, 32, 4, 4, 1.0, 0).unwrap();
        let s = joint_normalization_scale(&users, 4);
        let trials = 100_000u64;
        let mut total = 0.0;
        for t in 0..trials {
            let chans = sample_channels(&users, s, &cfg, |p| spawn_rng(4, t * 8 + p.user_id as u64));
            total += chans.iter().map(|c| c.energy()).sum::<f64>();
        }
        let mean = total / trials as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean total power {mean}");
    }

    #[test]
    fn channel_csv() {
        let ch = ChannelRealization {
            user_id: 2,
            paths: vec![ChannelPath {
                l: 7,
                k: -2,
                h: Complex64::new(0.5, 0.25),
                gamma: 0.125,
            }],
        };
        let mut out = Vec::new();
        write_channels_csv(&[ch], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "user,path,l,k,re,im,gamma\n2,1,7,-2,0.5,0.25,0.125\n");
    }
}
