//! Threshold-based channel estimation from the received delay-Doppler grid.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::config::{wrap_index, OtfsConfig, UserProfile};
use crate::error::{Error, Result};
use crate::grid::DDGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedPath {
    pub l: i64,
    pub k: i64,
    pub h: Complex64,
}

/// Detected paths of one user. `(l, k)` pairs are unique and lie in the
/// user's prior support.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub user_id: usize,
    pub paths: Vec<EstimatedPath>,
}

impl ChannelEstimate {
    pub fn empty(user_id: usize) -> Self {
        ChannelEstimate {
            user_id,
            paths: Vec::new(),
        }
    }

    /// Detections that do not coincide with any true `(l, k)` pair.
    pub fn false_alarms(&self, truth: &ChannelRealization) -> usize {
        self.paths
            .iter()
            .filter(|e| !truth.paths.iter().any(|p| p.l == e.l && p.k == e.k))
            .count()
    }
}

/// How the detection threshold `beta` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// `beta = c * sqrt(N0)`.
    NoiseMultiple(f64),
    /// Fixed `beta`.
    Absolute(f64),
}

impl Default for ThresholdRule {
    /// `3 sqrt(N0)`, a per-cell false-alarm rate of `exp(-9)` on pure noise.
    fn default() -> Self {
        ThresholdRule::NoiseMultiple(3.0)
    }
}

impl ThresholdRule {
    pub fn beta(&self, n0: f64) -> f64 {
        match *self {
            ThresholdRule::NoiseMultiple(c) => c * n0.sqrt(),
            ThresholdRule::Absolute(b) => b,
        }
    }
}

impl std::fmt::Display for ThresholdRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThresholdRule::NoiseMultiple(c) => write!(f, "sigma:{c}"),
            ThresholdRule::Absolute(b) => write!(f, "abs:{b}"),
        }
    }
}

impl std::str::FromStr for ThresholdRule {
    type Err = String;

    /// Parses `sigma:<c>` or `abs:<beta>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, value) = s.split_once(':').ok_or_else(|| format!("expected sigma:<c> or abs:<beta>, got {s:?}"))?;
        let value: f64 = value.trim().parse().map_err(|_| format!("bad threshold value in {s:?}"))?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(format!("threshold must be positive, got {value}"));
        }
        match kind.trim() {
            "sigma" => Ok(ThresholdRule::NoiseMultiple(value)),
            "abs" => Ok(ThresholdRule::Absolute(value)),
            other => Err(format!("unknown threshold kind {other:?}")),
        }
    }
}

/// Scans the user's search window, keeps cells with `|y| >= beta`, and
/// removes the pilot amplitude and the input-output phase from each.
///
/// A path `(l, k)` maps the pilot at `(k_tau, l_tau)` to the cell
/// `([k_tau + k]_N, [l_tau + l]_M)` with gain
/// `h * sqrt(P_u) * exp(j2pi (l_cell - l) k / (MN))`; without delay
/// wrap-around `l_cell - l = l_tau`.
pub fn estimate_threshold(y: &DDGrid, profile: &UserProfile, beta: f64, cfg: &OtfsConfig) -> Result<ChannelEstimate> {
    y.check_dims(cfg)?;
    if profile.pilot_power <= 0.0 {
        return Err(Error::ZeroPilotPower(profile.user_id));
    }
    let amp = profile.pilot_power.sqrt();
    let mn = cfg.cells() as f64;
    let paths = profile
        .search_window(cfg)
        .filter_map(|(l, k, cell)| {
            let v = y[cell];
            if v.norm() < beta {
                return None;
            }
            let phase = 2.0 * PI * (cell.l as i64 - l) as f64 * k as f64 / mn;
            Some(EstimatedPath {
                l,
                k,
                h: v / (amp * Complex64::from_polar(1.0, phase)),
            })
        })
        .collect();
    Ok(ChannelEstimate {
        user_id: profile.user_id,
        paths,
    })
}

/// Embeds paths into a length `N*M` vector at flat index `[k]_N * M + l`;
/// coinciding `(l, k)` entries add.
pub fn effective_vector(paths: impl IntoIterator<Item = (i64, i64, Complex64)>, cfg: &OtfsConfig) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); cfg.cells()];
    for (l, k, h) in paths {
        v[cfg.flat(wrap_index(k, l, cfg))] += h;
    }
    v
}

/// `||v_hat - v||^2 / ||v||^2` over the effective-vector embeddings, so
/// missed paths and false alarms are both charged.
pub fn nmse(est: &ChannelEstimate, truth: &ChannelRealization, cfg: &OtfsConfig) -> Result<f64> {
    let v = effective_vector(truth.paths.iter().map(|p| (p.l, p.k, p.h)), cfg);
    let denom: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroEnergyTruth);
    }
    let v_hat = effective_vector(est.paths.iter().map(|p| (p.l, p.k, p.h)), cfg);
    let err: f64 = v_hat.iter().zip(&v).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(err / denom)
}

/// Writes estimates as CSV `user,l,k,re,im`.
pub fn write_estimates_csv<W: Write>(estimates: &[ChannelEstimate], mut w: W) -> Result<()> {
    writeln!(w, "user,l,k,re,im")?;
    for e in estimates {
        for p in &e.paths {
            writeln!(w, "{},{},{},{},{}", e.user_id, p.l, p.k, p.h.re, p.h.im)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelPath;
    use crate::config::DDIndex;
    use crate::rng::spawn_rng;
    use crate::waveform::{add_noise, build_pilot_frame, received_signal};

    fn cfg32(n0: f64) -> OtfsConfig {
        OtfsConfig::new(32, 32, 4, 1, n0, 0).unwrap()
    }

    fn user(power: f64) -> UserProfile {
        UserProfile::new(1, 0, 4, 3, DDIndex::new(16, 2), power)
    }

    fn single(l: i64, k: i64, h: Complex64) -> ChannelRealization {
        ChannelRealization {
            user_id: 1,
            paths: vec![ChannelPath { l, k, h, gamma: 1.0 }],
        }
    }

    #[test]
    fn noiseless_single_path_is_recovered() {
        let cfg = cfg32(1.0);
        let p = user(16.0);
        let h = Complex64::new(0.5, 0.5);
        let truth = single(2, -3, h);
        let frame = build_pilot_frame(&p, &cfg).unwrap();
        let y = received_signal(&[frame], std::slice::from_ref(&truth), &cfg).unwrap();
        let est = estimate_threshold(&y, &p, 0.4 * 4.0, &cfg).unwrap();
        assert_eq!(est.paths.len(), 1);
        assert_eq!((est.paths[0].l, est.paths[0].k), (2, -3));
        assert!((est.paths[0].h - h).norm() < 1e-14);
        assert!(nmse(&est, &truth, &cfg).unwrap() < 1e-28);
    }

    #[test]
    fn weak_path_is_missed() {
        let cfg = cfg32(1.0);
        let p = user(1.0);
        let truth = single(1, 1, Complex64::new(0.1, 0.0));
        let frame = build_pilot_frame(&p, &cfg).unwrap();
        let y = received_signal(&[frame], std::slice::from_ref(&truth), &cfg).unwrap();
        let est = estimate_threshold(&y, &p, 0.2, &cfg).unwrap();
        assert!(est.paths.is_empty());
        assert_eq!(nmse(&est, &truth, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn wrapped_delay_is_phase_corrected() {
        // Pilot at the right edge so the received delay wraps past M.
        let cfg = cfg32(1.0);
        let p = UserProfile::new(1, 0, 4, 3, DDIndex::new(5, 30), 9.0);
        let h = Complex64::new(-0.3, 0.8);
        let truth = single(4, 2, h);
        let frame = build_pilot_frame(&p, &cfg).unwrap();
        let y = received_signal(&[frame], &[truth], &cfg).unwrap();
        let est = estimate_threshold(&y, &p, 0.5, &cfg).unwrap();
        assert_eq!(est.paths.len(), 1);
        assert!((est.paths[0].h - h).norm() < 1e-14);
    }

    #[test]
    fn zero_pilot_power_is_an_error() {
        let cfg = cfg32(1.0);
        let y = DDGrid::for_config(&cfg);
        assert!(matches!(estimate_threshold(&y, &user(0.0), 1.0, &cfg), Err(Error::ZeroPilotPower(1))));
    }

    #[test]
    fn false_alarm_rate_matches_rayleigh_tail() {
        let cfg = cfg32(2.0);
        let beta = ThresholdRule::default().beta(cfg.n0());
        let mut rng = spawn_rng(21, 0);
        let mut hits = 0usize;
        let mut cells = 0usize;
        while cells < 2_000_000 {
            let mut g = DDGrid::for_config(&cfg);
            add_noise(&mut g, cfg.n0(), &mut rng);
            hits += g.as_slice().iter().filter(|v| v.norm() >= beta).count();
            cells += cfg.cells();
        }
        let p = (-9f64).exp();
        let rate = hits as f64 / cells as f64;
        let se = (p * (1.0 - p) / cells as f64).sqrt();
        assert!((rate - p).abs() < 4.0 * se, "rate {rate}, expected {p}");
    }

    #[test]
    fn effective_vector_layout() {
        let cfg = cfg32(1.0);
        assert!(effective_vector(std::iter::empty(), &cfg).iter().all(|v| v.norm() == 0.0));
        let v = effective_vector([(2, 3, Complex64::i())], &cfg);
        assert_eq!(v[98], Complex64::i());
        assert_eq!(v.iter().filter(|x| x.norm() > 0.0).count(), 1);
        let (a, b) = (Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25));
        let v = effective_vector([(1, -1, a), (1, -1, b)], &cfg);
        assert_eq!(v[31 * 32 + 1], a + b);
    }

    #[test]
    fn nmse_partial_miss() {
        let cfg = cfg32(1.0);
        let paths = 4;
        let truth = ChannelRealization {
            user_id: 1,
            paths: (0..paths)
                .map(|i| ChannelPath {
                    l: i,
                    k: 0,
                    h: Complex64::from_polar(1.0, i as f64),
                    gamma: 1.0,
                })
                .collect(),
        };
        let est = ChannelEstimate {
            user_id: 1,
            paths: truth.paths[..3].iter().map(|p| EstimatedPath { l: p.l, k: p.k, h: p.h }).collect(),
        };
        assert!((nmse(&est, &truth, &cfg).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(est.false_alarms(&truth), 0);
        let empty = ChannelRealization {
            user_id: 1,
            paths: vec![],
        };
        assert!(matches!(nmse(&est, &empty, &cfg), Err(Error::ZeroEnergyTruth)));
    }

    #[test]
    fn nmse_is_phase_invariant() {
        let cfg = cfg32(0.5);
        let p = user(100.0);
        let truth = ChannelRealization {
            user_id: 1,
            paths: vec![
                ChannelPath { l: 0, k: 1, h: Complex64::new(0.4, -0.2), gamma: 1.0 },
                ChannelPath { l: 3, k: -2, h: Complex64::new(0.1, 0.3), gamma: 1.0 },
            ],
        };
        let frame = build_pilot_frame(&p, &cfg).unwrap();
        let mut y = received_signal(&[frame], std::slice::from_ref(&truth), &cfg).unwrap();
        add_noise(&mut y, cfg.n0(), &mut spawn_rng(1, 1));
        let rot = Complex64::from_polar(1.0, 1.1);
        let y_rot = DDGrid::from_fn(32, 32, |k, l| y[(k, l)] * rot);
        let truth_rot = ChannelRealization {
            user_id: 1,
            paths: truth.paths.iter().map(|q| ChannelPath { h: q.h * rot, ..*q }).collect(),
        };
        let beta = 3.0 * cfg.n0().sqrt();
        let a = nmse(&estimate_threshold(&y, &p, beta, &cfg).unwrap(), &truth, &cfg).unwrap();
        let b = nmse(&estimate_threshold(&y_rot, &p, beta, &cfg).unwrap(), &truth_rot, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1e-300));
    }

    #[test]
    fn threshold_rule_parsing() {
        assert_eq!("sigma:3".parse::<ThresholdRule>().unwrap(), ThresholdRule::NoiseMultiple(3.0));
        assert_eq!("abs:0.5".parse::<ThresholdRule>().unwrap(), ThresholdRule::Absolute(0.5));
        assert!("abs:-1".parse::<ThresholdRule>().is_err());
        assert!("median:2".parse::<ThresholdRule>().is_err());
        assert_eq!(ThresholdRule::NoiseMultiple(3.0).beta(4.0), 6.0);
    }
}
