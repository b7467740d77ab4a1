//! System configuration, user profiles and cyclic delay-Doppler indexing.

use crate::error::{Error, Result};

/// Grid dimensions, user/path counts and noise level shared by every module.
///
/// Only integer delay and Doppler indices are modelled, so the subcarrier
/// spacing and slot duration never appear: they cancel out of every
/// discrete-index computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtfsConfig {
    m: usize,
    n: usize,
    paths: usize,
    users: usize,
    n0: f64,
    seed: u64,
}

impl OtfsConfig {
    /// `m` delay bins, `n` Doppler bins, `paths` per user, `users` users,
    /// noise power spectral density `n0` (linear) and the master seed.
    pub fn new(m: usize, n: usize, paths: usize, users: usize, n0: f64, seed: u64) -> Result<Self> {
        let cfg = OtfsConfig {
            m,
            n,
            paths,
            users,
            n0,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("grid dimensions must be positive".into()));
        }
        if self.paths == 0 {
            return Err(Error::InvalidConfig("paths must be positive".into()));
        }
        if self.users == 0 {
            return Err(Error::InvalidConfig("users must be positive".into()));
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return Err(Error::InvalidConfig(format!("n0 must be positive and finite, got {}", self.n0)));
        }
        Ok(())
    }

    /// Number of delay bins.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of Doppler bins.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn users(&self) -> usize {
        self.users
    }

    /// Noise power spectral density (linear).
    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total number of delay-Doppler cells, `N * M`.
    pub fn cells(&self) -> usize {
        self.n * self.m
    }

    /// Largest admissible Doppler index magnitude, `floor((N - 1) / 2)`.
    pub fn max_doppler(&self) -> usize {
        (self.n - 1) / 2
    }

    pub fn with_n0(&self, n0: f64) -> Result<Self> {
        OtfsConfig::new(self.m, self.n, self.paths, self.users, n0, self.seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        OtfsConfig { seed, ..*self }
    }

    /// Flat index `k * M + l` of a wrapped cell.
    pub fn flat(&self, idx: DDIndex) -> usize {
        idx.k * self.m + idx.l
    }
}

/// A cell of the delay-Doppler grid, always reduced modulo `(N, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DDIndex {
    /// Doppler bin, row.
    pub k: usize,
    /// Delay bin, column.
    pub l: usize,
}

impl DDIndex {
    pub const fn new(k: usize, l: usize) -> Self {
        DDIndex { k, l }
    }
}

/// Reduces arbitrary signed indices onto the grid: `([k]_N, [l]_M)`.
pub fn wrap_index(k: i64, l: i64, cfg: &OtfsConfig) -> DDIndex {
    DDIndex {
        k: k.rem_euclid(cfg.n as i64) as usize,
        l: l.rem_euclid(cfg.m as i64) as usize,
    }
}

/// Per-user prior support, pilot placement and pilot power.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    /// 1-based user id.
    pub user_id: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub k_max: usize,
    /// Pilot cell `(k_tau, l_tau)`.
    pub pilot: DDIndex,
    /// Pilot power `x_u^H x_u` (linear).
    pub pilot_power: f64,
}

impl UserProfile {
    pub fn new(user_id: usize, l_min: usize, l_max: usize, k_max: usize, pilot: DDIndex, pilot_power: f64) -> Self {
        UserProfile {
            user_id,
            l_min,
            l_max,
            k_max,
            pilot,
            pilot_power,
        }
    }

    pub fn with_pilot_power(&self, pilot_power: f64) -> Self {
        UserProfile {
            pilot_power,
            ..self.clone()
        }
    }

    /// Number of integer delay values in the prior support.
    pub fn delay_count(&self) -> usize {
        self.l_max - self.l_min + 1
    }

    /// Number of integer Doppler values in the prior support.
    pub fn doppler_count(&self) -> usize {
        2 * self.k_max + 1
    }

    pub fn validate(&self, cfg: &OtfsConfig) -> Result<()> {
        let field = |msg: String| Err(Error::InvalidConfig(format!("user {}: {msg}", self.user_id)));
        if self.user_id == 0 || self.user_id > cfg.users() {
            return field(format!("user_id must lie in [1, {}]", cfg.users()));
        }
        if self.l_min > self.l_max || self.l_max >= cfg.m() {
            return field(format!(
                "need 0 <= l_min <= l_max < M, got l_min={} l_max={} M={}",
                self.l_min,
                self.l_max,
                cfg.m()
            ));
        }
        if self.k_max == 0 || self.k_max > cfg.max_doppler() {
            return field(format!("k_max must lie in [1, {}], got {}", cfg.max_doppler(), self.k_max));
        }
        if self.pilot.k >= cfg.n() || self.pilot.l >= cfg.m() {
            return field(format!("pilot ({}, {}) lies outside the grid", self.pilot.k, self.pilot.l));
        }
        if !(self.pilot_power >= 0.0 && self.pilot_power.is_finite()) {
            return field(format!("pilot_power must be finite and nonnegative, got {}", self.pilot_power));
        }
        Ok(())
    }

    /// Cells where this user's pilot can land after the channel: delay
    /// `l_tau + [l_min, l_max]`, Doppler `k_tau + [-k_max, k_max]`.
    pub fn search_window(&self, cfg: &OtfsConfig) -> impl Iterator<Item = (i64, i64, DDIndex)> + '_ {
        let cfg = *cfg;
        let k_max = self.k_max as i64;
        (-k_max..=k_max).flat_map(move |k| {
            (self.l_min as i64..=self.l_max as i64).map(move |l| {
                (
                    l,
                    k,
                    wrap_index(self.pilot.k as i64 + k, self.pilot.l as i64 + l, &cfg),
                )
            })
        })
    }
}
