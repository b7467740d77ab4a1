//! Experiment configuration: a flat `section.key = value` file.
//!
//! ```text
//! grid.m = 32                      # delay bins
//! grid.n = 32                      # Doppler bins
//! grid.paths = 4                   # paths per user
//! grid.n0 = 1.0                    # noise PSD (per-user sweeps)
//! run.seed = 1
//! run.trials = 2000
//! run.normalization_samples = 200000
//! sweep.axis = "pilot_snr_db"      # or "es_over_n0_db"
//! sweep.values = [0, 5, 10]        # or sweep.start / sweep.stop / sweep.step
//! power.total_db = 55.0            # total pilot power, allocation runs
//! power.mode = "uniform"           # uniform | optimized | explicit
//! power.explicit_db = [0, 0, 0, 0] # per-user offsets, explicit mode
//! estimator.threshold = "sigma:3"  # or "abs:<beta>"
//! output.dir = "results"
//! user.1.l_min = 0
//! user.1.l_max = 4
//! user.1.k_max = 3
//! user.1.pilot_k = 16              # optional, together with pilot_l
//! user.1.pilot_l = 1
//! ```
//!
//! Users are numbered `1..=K_u` without gaps. Pilots default to
//! [`centered_layout`](crate::waveform::centered_layout).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::Value;

use crate::config::{DDIndex, OtfsConfig, UserProfile};
use crate::error::{Error, Result};
use crate::estimator::ThresholdRule;
use crate::waveform::{centered_layout, check_layout};

/// The four-user per-user sweep.
pub const FOUR_USER: &str = include_str!("../../configs/four_user.toml");
/// The four-user uniform-versus-optimised comparison.
pub const FOUR_USER_ALLOCATION: &str = include_str!("../../configs/four_user_allocation.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Per-user pilot SNR `P_u / N0` in dB, `N0` fixed.
    PilotSnrDb,
    /// `E_s / N0` in dB with `E_s = 1`, total pilot power fixed.
    EsOverN0Db,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PilotSnrDb => "pilot_snr_db",
            SweepAxis::EsOverN0Db => "es_over_n0_db",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AllocationMode {
    Uniform,
    Optimized,
    /// Per-user dB offsets. In a pilot-SNR sweep user `u` runs at
    /// `value + offset_u`; in an allocation comparison the offsets set the
    /// shares of the total budget.
    Explicit(Vec<f64>),
}

impl AllocationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AllocationMode::Uniform => "uniform",
            AllocationMode::Optimized => "optimized",
            AllocationMode::Explicit(_) => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub otfs: OtfsConfig,
    /// Profiles with pilot placement; pilot powers are set per run.
    pub profiles: Vec<UserProfile>,
    pub sweep: Sweep,
    pub trials: usize,
    pub total_pilot_power_db: f64,
    pub allocation: AllocationMode,
    pub threshold: ThresholdRule,
    pub output_dir: PathBuf,
    /// Monte Carlo draws per user for `N_u`.
    pub normalization_samples: usize,
}

const DEFAULT_TRIALS: usize = 2000;
const DEFAULT_NORMALIZATION_SAMPLES: usize = 200_000;

impl ExperimentConfig {
    pub fn four_user() -> Self {
        Self::from_toml_str(FOUR_USER).expect("bundled config is valid")
    }

    pub fn four_user_allocation() -> Self {
        Self::from_toml_str(FOUR_USER_ALLOCATION).expect("bundled config is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
            Error::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        let mut keys = BTreeMap::new();
        flatten("", &Value::Table(table), &mut keys);
        let mut r = Reader { keys };

        let m = r.usize("grid.m")?.unwrap_or(32);
        let n = r.usize("grid.n")?.unwrap_or(32);
        let paths = r.usize("grid.paths")?.unwrap_or(4);
        let n0 = r.f64("grid.n0")?.unwrap_or(1.0);
        let seed = r.u64("run.seed")?.unwrap_or(1);
        let trials = r.usize("run.trials")?.unwrap_or(DEFAULT_TRIALS);
        let normalization_samples = r.usize("run.normalization_samples")?.unwrap_or(DEFAULT_NORMALIZATION_SAMPLES);

        let axis = match r.string("sweep.axis")?.as_deref() {
            Some("pilot_snr_db") | None => SweepAxis::PilotSnrDb,
            Some("es_over_n0_db") => SweepAxis::EsOverN0Db,
            Some(other) => return Err(field("sweep.axis", format!("unknown axis {other:?}"))),
        };
        let values = match r.f64_list("sweep.values")? {
            Some(v) => {
                if r.has_prefix("sweep.start") || r.has_prefix("sweep.stop") || r.has_prefix("sweep.step") {
                    return Err(field("sweep.values", "give either values or start/stop/step, not both"));
                }
                v
            }
            None => {
                let start = r.f64("sweep.start")?.ok_or_else(|| field("sweep.values", "missing"))?;
                let stop = r.f64("sweep.stop")?.ok_or_else(|| field("sweep.stop", "missing"))?;
                let step = r.f64("sweep.step")?.ok_or_else(|| field("sweep.step", "missing"))?;
                linspace_step(start, stop, step)?
            }
        };

        let total_pilot_power_db = r.f64("power.total_db")?.unwrap_or(55.0);
        let explicit = r.f64_list("power.explicit_db")?;
        let allocation = match (r.string("power.mode")?.as_deref(), explicit) {
            (Some("uniform") | None, None) => AllocationMode::Uniform,
            (Some("optimized"), None) => AllocationMode::Optimized,
            (Some("explicit"), Some(v)) => AllocationMode::Explicit(v),
            (Some("explicit"), None) => return Err(field("power.explicit_db", "required in explicit mode")),
            (_, Some(_)) => return Err(field("power.explicit_db", "only allowed in explicit mode")),
            (Some(other), None) => return Err(field("power.mode", format!("unknown mode {other:?}"))),
        };
        let threshold = match r.string("estimator.threshold")? {
            Some(s) => s.parse().map_err(|e| field("estimator.threshold", e))?,
            None => ThresholdRule::default(),
        };
        let output_dir = PathBuf::from(r.string("output.dir")?.unwrap_or_else(|| "results".into()));

        let mut supports = Vec::new();
        let mut pilots = Vec::new();
        for u in 1.. {
            let prefix = format!("user.{u}.");
            if !r.has_prefix(&prefix) {
                break;
            }
            let key = |k: &str| format!("{prefix}{k}");
            let l_min = r.usize(&key("l_min"))?.ok_or_else(|| field(&key("l_min"), "missing"))?;
            let l_max = r.usize(&key("l_max"))?.ok_or_else(|| field(&key("l_max"), "missing"))?;
            let k_max = r.usize(&key("k_max"))?.ok_or_else(|| field(&key("k_max"), "missing"))?;
            let pilot = match (r.usize(&key("pilot_k"))?, r.usize(&key("pilot_l"))?) {
                (Some(k), Some(l)) => Some(DDIndex::new(k, l)),
                (None, None) => None,
                _ => return Err(field(&key("pilot_k"), "pilot_k and pilot_l go together")),
            };
            supports.push((l_min, l_max, k_max));
            pilots.push(pilot);
        }
        if supports.is_empty() {
            return Err(field("user.1", "at least one user is required"));
        }
        if let Some(k) = r.keys.keys().next() {
            return Err(field(k, "unknown key"));
        }

        let otfs = OtfsConfig::new(m, n, paths, supports.len(), n0, seed)?;
        let defaults = if pilots.iter().any(Option::is_none) {
            let delay: Vec<_> = supports.iter().map(|&(a, b, _)| (a, b)).collect();
            centered_layout(&otfs, &delay)?
        } else {
            Vec::new()
        };
        let profiles = supports
            .iter()
            .zip(&pilots)
            .enumerate()
            .map(|(i, (&(l_min, l_max, k_max), pilot))| {
                UserProfile::new(i + 1, l_min, l_max, k_max, pilot.unwrap_or_else(|| defaults[i]), 0.0)
            })
            .collect();

        let config = ExperimentConfig {
            otfs,
            profiles,
            sweep: Sweep { axis, values },
            trials,
            total_pilot_power_db,
            allocation,
            threshold,
            output_dir,
            normalization_samples,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(field("run.trials", "must be at least 1"));
        }
        if self.normalization_samples < 2 {
            return Err(field("run.normalization_samples", "must be at least 2"));
        }
        if self.sweep.values.is_empty() {
            return Err(field("sweep.values", "must not be empty"));
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(field("sweep.values", "must be finite"));
        }
        if !self.total_pilot_power_db.is_finite() {
            return Err(field("power.total_db", "must be finite"));
        }
        if let AllocationMode::Explicit(v) = &self.allocation {
            if v.len() != self.profiles.len() {
                return Err(field(
                    "power.explicit_db",
                    format!("expected {} entries, got {}", self.profiles.len(), v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(field("power.explicit_db", "must be finite"));
            }
        }
        check_layout(&self.profiles, &self.otfs)?;
        for p in &self.profiles {
            crate::waveform::build_pilot_frame(p, &self.otfs)?;
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.otfs = self.otfs.with_seed(seed);
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Result<Self> {
        self.trials = trials;
        self.validate()?;
        Ok(self)
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = dir.into();
        self
    }

    pub fn seed(&self) -> u64 {
        self.otfs.seed()
    }

    /// Every setting as sorted `key = value` lines, with pilots resolved.
    /// Parsing this text yields an equal config.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let c = &self.otfs;
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "));
        let _ = writeln!(s, "estimator.threshold = {:?}", self.threshold.to_string());
        let _ = writeln!(s, "grid.m = {}", c.m());
        let _ = writeln!(s, "grid.n = {}", c.n());
        let _ = writeln!(s, "grid.n0 = {:?}", c.n0());
        let _ = writeln!(s, "grid.paths = {}", c.paths());
        let _ = writeln!(s, "output.dir = {:?}", self.output_dir.display().to_string());
        if let AllocationMode::Explicit(v) = &self.allocation {
            let _ = writeln!(s, "power.explicit_db = {}", list(v));
        }
        let _ = writeln!(s, "power.mode = {:?}", self.allocation.name());
        let _ = writeln!(s, "power.total_db = {:?}", self.total_pilot_power_db);
        let _ = writeln!(s, "run.normalization_samples = {}", self.normalization_samples);
        let _ = writeln!(s, "run.seed = {}", c.seed());
        let _ = writeln!(s, "run.trials = {}", self.trials);
        let _ = writeln!(s, "sweep.axis = {:?}", self.sweep.axis.name());
        let _ = writeln!(s, "sweep.values = {}", list(&self.sweep.values));
        for p in &self.profiles {
            let u = p.user_id;
            let _ = writeln!(s, "user.{u}.k_max = {}", p.k_max);
            let _ = writeln!(s, "user.{u}.l_max = {}", p.l_max);
            let _ = writeln!(s, "user.{u}.l_min = {}", p.l_min);
            let _ = writeln!(s, "user.{u}.pilot_k = {}", p.pilot.k);
            let _ = writeln!(s, "user.{u}.pilot_l = {}", p.pilot.l);
        }
        s
    }

    /// SHA-256 of [`canonical_text`](Self::canonical_text) without the
    /// output directory, hex encoded. Results never depend on where they
    /// are written.
    pub fn hash_hex(&self) -> String {
        let text: String = self
            .canonical_text()
            .lines()
            .filter(|l| !l.starts_with("output."))
            .flat_map(|l| [l, "\n"])
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn field(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{key}: {msg}"))
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn linspace_step(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite() && start.is_finite() && stop.is_finite() && stop >= start) {
        return Err(field("sweep.step", "need finite start <= stop and a positive step"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// Consumes keys so leftovers can be reported as unknown.
struct Reader {
    keys: BTreeMap<String, Value>,
}

impl Reader {
    fn has_prefix(&self, prefix: &str) -> bool {
        self.keys.keys().any(|k| k.starts_with(prefix))
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.keys.remove(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(x)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(_) => Err(field(key, "expected a number")),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.keys.remove(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
            Some(_) => Err(field(key, "expected a nonnegative integer")),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.keys.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(field(key, "expected a string")),
        }
    }

    fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.keys.remove(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .into_iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(x),
                    Value::Integer(i) => Ok(i as f64),
                    _ => Err(field(key, "expected a list of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(field(key, "expected a list of numbers")),
        }
    }
}
