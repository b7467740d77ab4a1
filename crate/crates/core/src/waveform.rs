//! OTFS transforms, embedded-pilot frames and the delay-Doppler
//! input-output relation.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::channel::ChannelRealization;
use crate::config::{wrap_index, DDIndex, OtfsConfig, UserProfile};
use crate::error::{Error, Result};
use crate::grid::{DDGrid, TfGrid};
use crate::rng::RandomStream;

/// Planned ISFFT/SFFT pair for one grid size.
///
/// ```text
/// ISFFT: X[n,m] = 1/sqrt(NM) sum_k sum_l x[k,l] exp(j2pi(nk/N - ml/M))
/// SFFT:  y[k,l] = 1/sqrt(NM) sum_n sum_m Y[n,m] exp(-j2pi(nk/N - ml/M))
/// ```
///
/// Both are unitary and mutually inverse.
pub struct SymplecticFft {
    n: usize,
    m: usize,
    fwd_n: Arc<dyn Fft<f64>>,
    inv_n: Arc<dyn Fft<f64>>,
    fwd_m: Arc<dyn Fft<f64>>,
    inv_m: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SymplecticFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymplecticFft").field("n", &self.n).field("m", &self.m).finish()
    }
}

impl SymplecticFft {
    pub fn new(cfg: &OtfsConfig) -> Self {
        let mut planner = FftPlanner::new();
        SymplecticFft {
            n: cfg.n(),
            m: cfg.m(),
            fwd_n: planner.plan_fft_forward(cfg.n()),
            inv_n: planner.plan_fft_inverse(cfg.n()),
            fwd_m: planner.plan_fft_forward(cfg.m()),
            inv_m: planner.plan_fft_inverse(cfg.m()),
        }
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if rows != self.n || cols != self.m {
            return Err(Error::DimensionMismatch {
                want_n: self.n,
                want_m: self.m,
                got_n: rows,
                got_m: cols,
            });
        }
        Ok(())
    }

    /// Delay-Doppler to time-frequency.
    pub fn isfft(&self, dd: &DDGrid) -> Result<TfGrid> {
        self.check(dd.rows(), dd.cols())?;
        let mut data = dd.as_slice().to_vec();
        self.transform(&mut data, &self.fwd_m, &self.inv_n);
        TfGrid::from_vec(self.n, self.m, data)
    }

    /// Time-frequency to delay-Doppler.
    pub fn sfft(&self, tf: &TfGrid) -> Result<DDGrid> {
        self.check(tf.rows(), tf.cols())?;
        let mut data = tf.as_slice().to_vec();
        self.transform(&mut data, &self.inv_m, &self.fwd_n);
        DDGrid::from_vec(self.n, self.m, data)
    }

    // Applies `along_cols` to every row (length M) and `along_rows` to every
    // column (length N), then scales by 1/sqrt(NM).
    fn transform(&self, data: &mut [Complex64], along_cols: &Arc<dyn Fft<f64>>, along_rows: &Arc<dyn Fft<f64>>) {
        let (n, m) = (self.n, self.m);
        along_cols.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..m {
            for r in 0..n {
                column[r] = data[r * m + c];
            }
            along_rows.process(&mut column);
            for r in 0..n {
                data[r * m + c] = column[r];
            }
        }
        let scale = 1.0 / ((n * m) as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

/// One user's transmitted delay-Doppler frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub user_id: usize,
    pub grid: DDGrid,
    pub pilot_cells: BTreeSet<DDIndex>,
    pub guard_cells: BTreeSet<DDIndex>,
}

impl Frame {
    /// Total power on the pilot cells.
    pub fn pilot_energy(&self) -> f64 {
        self.pilot_cells.iter().map(|&c| self.grid[c].norm_sqr()).sum()
    }
}

/// Builds an estimation-only frame: one pilot of amplitude `sqrt(pilot_power)`
/// surrounded by zero guard cells spanning `l_tau +- l_max` in delay and
/// `k_tau +- 2 k_max` in Doppler. Data cells are left empty.
pub fn build_pilot_frame(profile: &UserProfile, cfg: &OtfsConfig) -> Result<Frame> {
    profile.validate(cfg)?;
    let delay_span = 2 * profile.l_max + 1;
    let doppler_span = 4 * profile.k_max + 1;
    if delay_span > cfg.m() || doppler_span > cfg.n() {
        return Err(Error::GuardExceedsGrid { user: profile.user_id });
    }

    let mut grid = DDGrid::for_config(cfg);
    grid[profile.pilot] = Complex64::new(profile.pilot_power.sqrt(), 0.0);

    let (k0, l0) = (profile.pilot.k as i64, profile.pilot.l as i64);
    let (lm, km) = (profile.l_max as i64, 2 * profile.k_max as i64);
    let guard_cells = (-km..=km)
        .flat_map(|dk| (-lm..=lm).map(move |dl| (dk, dl)))
        .map(|(dk, dl)| wrap_index(k0 + dk, l0 + dl, cfg))
        .filter(|&c| c != profile.pilot)
        .collect();

    Ok(Frame {
        user_id: profile.user_id,
        grid,
        pilot_cells: BTreeSet::from([profile.pilot]),
        guard_cells,
    })
}

/// Checks that the users form a valid multi-user layout: ids `1..=K_u`
/// appear once each and no two users' estimation windows share a cell.
pub fn check_layout(profiles: &[UserProfile], cfg: &OtfsConfig) -> Result<()> {
    if profiles.len() != cfg.users() {
        return Err(Error::InvalidConfig(format!(
            "expected {} user profiles, got {}",
            cfg.users(),
            profiles.len()
        )));
    }
    let mut owner = vec![0usize; cfg.cells()];
    let mut ids = BTreeSet::new();
    for p in profiles {
        p.validate(cfg)?;
        if !ids.insert(p.user_id) {
            return Err(Error::InvalidConfig(format!("duplicate user id {}", p.user_id)));
        }
        for (_, _, cell) in p.search_window(cfg) {
            let slot = &mut owner[cfg.flat(cell)];
            if *slot != 0 && *slot != p.user_id {
                return Err(Error::OverlappingUsers {
                    first: *slot,
                    second: p.user_id,
                });
            }
            *slot = p.user_id;
        }
    }
    Ok(())
}

/// Validates the layout and builds every user's pilot frame.
pub fn build_frames(profiles: &[UserProfile], cfg: &OtfsConfig) -> Result<Vec<Frame>> {
    check_layout(profiles, cfg)?;
    profiles.iter().map(|p| build_pilot_frame(p, cfg)).collect()
}

/// Default pilot placement: the delay axis is split into `K_u` contiguous
/// blocks and each user's estimation window `l_tau + [l_min, l_max]` is
/// centred in its block. Pilots sit on the middle Doppler row.
///
/// `supports` holds `(l_min, l_max)` per user in user order.
pub fn centered_layout(cfg: &OtfsConfig, supports: &[(usize, usize)]) -> Result<Vec<DDIndex>> {
    let users = supports.len();
    if users == 0 {
        return Ok(Vec::new());
    }
    let width = cfg.m() / users;
    supports
        .iter()
        .enumerate()
        .map(|(u, &(l_min, l_max))| {
            let span = l_max.checked_sub(l_min).map(|d| d + 1).unwrap_or(usize::MAX);
            if span > width {
                return Err(Error::InvalidConfig(format!(
                    "user {} delay support of {span} bins does not fit a {width}-bin partition",
                    u + 1
                )));
            }
            let start = u * width + (width - span) / 2;
            let l_tau = (start as i64 - l_min as i64).rem_euclid(cfg.m() as i64) as usize;
            Ok(DDIndex::new(cfg.n() / 2, l_tau))
        })
        .collect()
}

/// Noiseless received grid `z[k,l]`: every user's frame passed through its
/// sparse channel,
///
/// ```text
/// z[k,l] = sum_u sum_p h_pu exp(j2pi (l - l_pu) k_pu / (MN)) x_u[[k - k_pu]_N, [l - l_pu]_M]
/// ```
pub fn received_signal(frames: &[Frame], channels: &[ChannelRealization], cfg: &OtfsConfig) -> Result<DDGrid> {
    if frames.len() != channels.len() {
        return Err(Error::UserCountMismatch {
            frames: frames.len(),
            channels: channels.len(),
        });
    }
    let mut z = DDGrid::for_config(cfg);
    let mn = cfg.cells() as f64;
    for (frame, channel) in frames.iter().zip(channels) {
        frame.grid.check_dims(cfg)?;
        if frame.user_id != channel.user_id {
            return Err(Error::InvalidConfig(format!(
                "frame of user {} paired with channel of user {}",
                frame.user_id, channel.user_id
            )));
        }
        // Sparse evaluation: each source cell lands on exactly one output
        // cell per path.
        for (src, x) in frame.grid.nonzero() {
            for path in &channel.paths {
                let dst = wrap_index(src.k as i64 + path.k, src.l as i64 + path.l, cfg);
                let phase = 2.0 * PI * (dst.l as i64 - path.l) as f64 * path.k as f64 / mn;
                z[dst] += path.h * Complex64::from_polar(1.0, phase) * x;
            }
        }
    }
    Ok(z)
}

/// Received grid `y = z + w` with `w` i.i.d. CN(0, N0) per cell, drawn in
/// row-major order from `noise`.
pub fn apply_channel(
    frames: &[Frame],
    channels: &[ChannelRealization],
    cfg: &OtfsConfig,
    noise: &mut RandomStream,
) -> Result<DDGrid> {
    let mut y = received_signal(frames, channels, cfg)?;
    add_noise(&mut y, cfg.n0(), noise);
    Ok(y)
}

/// Adds CN(0, `n0`) noise to every cell.
pub fn add_noise(grid: &mut DDGrid, n0: f64, noise: &mut RandomStream) {
    for v in grid.as_mut_slice() {
        *v += noise.complex_gaussian(n0);
    }
}

/// Writes frames as CSV `user,k,l,kind,re,im` with `kind` in `{pilot, guard}`.
pub fn write_frames_csv<W: Write>(frames: &[Frame], mut w: W) -> Result<()> {
    writeln!(w, "user,k,l,kind,re,im")?;
    for f in frames {
        for (kind, cells) in [("pilot", &f.pilot_cells), ("guard", &f.guard_cells)] {
            for &c in cells {
                let v = f.grid[c];
                writeln!(w, "{},{},{},{kind},{},{}", f.user_id, c.k, c.l, v.re, v.im)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelPath;
    use crate::rng::spawn_rng;
    use proptest::prelude::*;

    fn cfg(n: usize, m: usize, users: usize, n0: f64) -> OtfsConfig {
        OtfsConfig::new(m, n, 2, users, n0, 0).unwrap()
    }

    fn random_grid(n: usize, m: usize, seed: u64) -> DDGrid {
        let mut rng = spawn_rng(seed, 0);
        DDGrid::from_fn(n, m, |_, _| rng.complex_gaussian(1.0))
    }

    fn isfft_direct(x: &DDGrid) -> TfGrid {
        let (n, m) = (x.rows(), x.cols());
        let s = 1.0 / ((n * m) as f64).sqrt();
        TfGrid::from_fn(n, m, |nn, mm| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                for l in 0..m {
                    let arg = 2.0 * PI * ((nn * k) as f64 / n as f64 - (mm * l) as f64 / m as f64);
                    acc += x[(k, l)] * Complex64::from_polar(1.0, arg);
                }
            }
            acc * s
        })
    }

    fn sfft_direct(y: &TfGrid) -> DDGrid {
        let (n, m) = (y.rows(), y.cols());
        let s = 1.0 / ((n * m) as f64).sqrt();
        DDGrid::from_fn(n, m, |k, l| {
            let mut acc = Complex64::new(0.0, 0.0);
            for nn in 0..n {
                for mm in 0..m {
                    let arg = -2.0 * PI * ((nn * k) as f64 / n as f64 - (mm * l) as f64 / m as f64);
                    acc += y[(nn, mm)] * Complex64::from_polar(1.0, arg);
                }
            }
            acc * s
        })
    }

    #[test]
    fn isfft_of_impulse_is_flat() {
        let c = cfg(4, 6, 1, 1.0);
        let t = SymplecticFft::new(&c);
        let mut x = DDGrid::for_config(&c);
        x[(0, 0)] = Complex64::new(1.0, 0.0);
        let big = t.isfft(&x).unwrap();
        let expect = 1.0 / 24f64.sqrt();
        for v in big.as_slice() {
            assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn sfft_of_constant_is_impulse() {
        let c = cfg(4, 4, 1, 1.0);
        let t = SymplecticFft::new(&c);
        let val = Complex64::new(0.3, -0.7);
        let y = t.sfft(&TfGrid::from_fn(4, 4, |_, _| val)).unwrap();
        for k in 0..4 {
            for l in 0..4 {
                let want = if k == 0 && l == 0 { val * 4.0 } else { Complex64::new(0.0, 0.0) };
                assert!((y[(k, l)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn transforms_match_double_sums() {
        let c = cfg(4, 4, 1, 1.0);
        let t = SymplecticFft::new(&c);
        let x = random_grid(4, 4, 3);
        assert!(t.isfft(&x).unwrap().max_abs_diff(&isfft_direct(&x)) < 1e-12);
        let y = TfGrid::from_vec(4, 4, random_grid(4, 4, 4).into_vec()).unwrap();
        assert!(t.sfft(&y).unwrap().max_abs_diff(&sfft_direct(&y)) < 1e-12);

        // Non-square grids exercise the axis assignment.
        let c = cfg(3, 5, 1, 1.0);
        let t = SymplecticFft::new(&c);
        let x = random_grid(3, 5, 5);
        assert!(t.isfft(&x).unwrap().max_abs_diff(&isfft_direct(&x)) < 1e-12);
    }

    #[test]
    fn transform_dimension_mismatch() {
        let t = SymplecticFft::new(&cfg(4, 4, 1, 1.0));
        assert!(matches!(t.isfft(&DDGrid::zeros(4, 5)), Err(Error::DimensionMismatch { .. })));
        assert!(t.sfft(&TfGrid::zeros(5, 4)).is_err());
    }

    proptest! {
        #[test]
        fn transforms_are_unitary_inverses(seed in any::<u64>(), n in 1usize..9, m in 1usize..9) {
            let c = cfg(n, m, 1, 1.0);
            let t = SymplecticFft::new(&c);
            let x = random_grid(n, m, seed);
            let tf = t.isfft(&x).unwrap();
            prop_assert!((tf.energy() - x.energy()).abs() <= 1e-10 * x.energy());
            prop_assert!(t.sfft(&tf).unwrap().max_abs_diff(&x) < 1e-10);
        }
    }

    fn first_user(power: f64) -> UserProfile {
        UserProfile::new(1, 0, 4, 3, DDIndex::new(16, 2), power)
    }

    #[test]
    fn pilot_frame_energy() {
        let c = OtfsConfig::new(32, 32, 4, 1, 1.0, 0).unwrap();
        let f = build_pilot_frame(&first_user(4.0), &c).unwrap();
        assert_eq!(f.grid[(16, 2)], Complex64::new(2.0, 0.0));
        assert_eq!(f.grid.energy(), 4.0);
        assert_eq!(f.pilot_energy(), 4.0);
        assert_eq!(f.grid.nonzero().count(), 1);
    }

    #[test]
    fn pilot_frame_guard_set() {
        let c = OtfsConfig::new(32, 32, 4, 1, 1.0, 0).unwrap();
        let f = build_pilot_frame(&first_user(1.0), &c).unwrap();
        let cols: BTreeSet<usize> = f.guard_cells.iter().map(|c| c.l).collect();
        let rows: BTreeSet<usize> = f.guard_cells.iter().map(|c| c.k).collect();
        let want_cols: BTreeSet<usize> = [30, 31, 0, 1, 2, 3, 4, 5, 6].into();
        let want_rows: BTreeSet<usize> = (10..=22).collect();
        assert_eq!(cols, want_cols);
        assert_eq!(rows, want_rows);
        assert_eq!(f.guard_cells.len(), 9 * 13 - 1);
        assert!(f.guard_cells.is_disjoint(&f.pilot_cells));
        assert!(f.guard_cells.iter().all(|&g| f.grid[g] == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn zero_power_frame_is_empty() {
        let c = OtfsConfig::new(32, 32, 4, 1, 1.0, 0).unwrap();
        let f = build_pilot_frame(&first_user(0.0), &c).unwrap();
        assert_eq!(f.grid.energy(), 0.0);
    }

    #[test]
    fn guard_must_fit() {
        let c = OtfsConfig::new(8, 8, 1, 1, 1.0, 0).unwrap();
        let p = UserProfile::new(1, 0, 4, 1, DDIndex::new(0, 0), 1.0);
        assert!(matches!(build_pilot_frame(&p, &c), Err(Error::GuardExceedsGrid { user: 1 })));
    }

    #[test]
    fn overlapping_users_rejected() {
        let c = OtfsConfig::new(32, 32, 4, 2, 1.0, 0).unwrap();
        let a = UserProfile::new(1, 0, 4, 3, DDIndex::new(16, 2), 1.0);
        let b = UserProfile::new(2, 0, 4, 3, DDIndex::new(16, 5), 1.0);
        assert!(matches!(build_frames(&[a.clone(), b], &c), Err(Error::OverlappingUsers { .. })));
        let b = UserProfile::new(2, 0, 4, 3, DDIndex::new(16, 7), 1.0);
        assert_eq!(build_frames(&[a, b], &c).unwrap().len(), 2);
    }

    #[test]
    fn four_user_default_layout_is_disjoint() {
        let c = OtfsConfig::new(32, 32, 4, 4, 1.0, 0).unwrap();
        let supports = [(0, 4), (6, 10), (0, 4), (6, 10)];
        let pilots = centered_layout(&c, &supports).unwrap();
        assert_eq!(pilots.iter().map(|p| p.l).collect::<Vec<_>>(), vec![1, 3, 17, 19]);
        let kmax = [3, 3, 7, 7];
        let profiles: Vec<_> = (0..4)
            .map(|u| UserProfile::new(u + 1, supports[u].0, supports[u].1, kmax[u], pilots[u], 1.0))
            .collect();
        check_layout(&profiles, &c).unwrap();
    }

    fn path(l: i64, k: i64, h: Complex64) -> ChannelPath {
        ChannelPath { l, k, h, gamma: 1.0 }
    }

    #[test]
    fn identity_channel_passes_frame() {
        let c = OtfsConfig::new(8, 8, 1, 1, 1.0, 0).unwrap();
        let frame = Frame {
            user_id: 1,
            grid: random_grid(8, 8, 9),
            pilot_cells: BTreeSet::new(),
            guard_cells: BTreeSet::new(),
        };
        let ch = ChannelRealization {
            user_id: 1,
            paths: vec![path(0, 0, Complex64::new(1.0, 0.0))],
        };
        let z = received_signal(std::slice::from_ref(&frame), &[ch], &c).unwrap();
        assert_eq!(z, frame.grid);
    }

    #[test]
    fn shifted_impulse_lands_with_unit_phase() {
        let c = OtfsConfig::new(32, 32, 1, 1, 1.0, 0).unwrap();
        let mut grid = DDGrid::for_config(&c);
        grid[(0, 0)] = Complex64::new(1.0, 0.0);
        let frame = Frame {
            user_id: 1,
            grid,
            pilot_cells: BTreeSet::new(),
            guard_cells: BTreeSet::new(),
        };
        let ch = ChannelRealization {
            user_id: 1,
            paths: vec![path(2, -3, Complex64::new(1.0, 0.0))],
        };
        let z = received_signal(&[frame], &[ch], &c).unwrap();
        let nz: Vec<_> = z.nonzero().collect();
        assert_eq!(nz.len(), 1);
        assert_eq!(nz[0].0, DDIndex::new(29, 2));
        assert!((nz[0].1 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn user_count_mismatch() {
        let c = OtfsConfig::new(8, 8, 1, 1, 1.0, 0).unwrap();
        let mut rng = spawn_rng(0, 0);
        assert!(matches!(
            apply_channel(&[], &[ChannelRealization { user_id: 1, paths: vec![] }], &c, &mut rng),
            Err(Error::UserCountMismatch { .. })
        ));
    }

    #[test]
    fn noise_statistics() {
        let c = OtfsConfig::new(64, 64, 1, 1, 0.5, 0).unwrap();
        let mut rng = spawn_rng(5, 5);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut power = 0.0;
        let mut count = 0usize;
        for _ in 0..32 {
            let mut g = DDGrid::for_config(&c);
            add_noise(&mut g, c.n0(), &mut rng);
            for v in g.as_slice() {
                sum += v;
                power += v.norm_sqr();
                count += 1;
            }
        }
        assert!(count >= 100_000);
        let mean = sum / count as f64;
        let var = power / count as f64 - mean.norm_sqr();
        assert!((var - 0.5).abs() / 0.5 < 0.02, "variance {var}");
        let sigma = (0.5 / 2.0 / count as f64).sqrt();
        assert!(mean.re.abs() < 3.0 * sigma && mean.im.abs() < 3.0 * sigma);
    }

    fn random_channel(rng: &mut RandomStream, user: usize, paths: usize, n: i64, m: i64) -> ChannelRealization {
        use rand::Rng;
        ChannelRealization {
            user_id: user,
            paths: (0..paths)
                .map(|_| path(rng.random_range(0..m), rng.random_range(-(n / 2)..=n / 2), rng.complex_gaussian(1.0)))
                .collect(),
        }
    }

    fn dense_frame(grid: DDGrid) -> Frame {
        Frame {
            user_id: 1,
            grid,
            pilot_cells: BTreeSet::new(),
            guard_cells: BTreeSet::new(),
        }
    }

    proptest! {
        #[test]
        fn channel_is_linear(seed in any::<u64>()) {
            let c = OtfsConfig::new(8, 8, 3, 1, 1.0, 0).unwrap();
            let mut rng = spawn_rng(seed, 1);
            let ch = random_channel(&mut rng, 1, 3, 8, 8);
            let a = random_grid(8, 8, seed);
            let b = random_grid(8, 8, seed.wrapping_add(1));
            let sum = DDGrid::from_fn(8, 8, |k, l| a[(k, l)] + b[(k, l)]);
            let za = received_signal(&[dense_frame(a)], std::slice::from_ref(&ch), &c).unwrap();
            let zb = received_signal(&[dense_frame(b)], std::slice::from_ref(&ch), &c).unwrap();
            let zs = received_signal(&[dense_frame(sum)], &[ch], &c).unwrap();
            let added = DDGrid::from_fn(8, 8, |k, l| za[(k, l)] + zb[(k, l)]);
            prop_assert!(zs.max_abs_diff(&added) < 1e-12);
        }

        #[test]
        fn unit_path_preserves_energy(seed in any::<u64>(), l in 0i64..8, k in -3i64..=3, phase in 0.0..std::f64::consts::TAU) {
            let c = OtfsConfig::new(8, 8, 1, 1, 1.0, 0).unwrap();
            let x = random_grid(8, 8, seed);
            let e = x.energy();
            let ch = ChannelRealization { user_id: 1, paths: vec![path(l, k, Complex64::from_polar(1.0, phase))] };
            let z = received_signal(&[dense_frame(x)], &[ch], &c).unwrap();
            prop_assert!((z.energy() - e).abs() < 1e-10 * e);
        }

        #[test]
        fn cyclic_shift_moves_output(seed in any::<u64>(), dk in 0usize..8, dl in 0usize..8) {
            // Shifting the input by (dk, dl) shifts z by (dk, dl); each path's
            // phase changes by exp(j2pi * dl * k_p / MN) before wrap-around
            // of the delay index, and by exp(j2pi * (dl - M) * k_p / MN) after.
            let c = OtfsConfig::new(8, 8, 1, 1, 1.0, 0).unwrap();
            let mut rng = spawn_rng(seed, 2);
            let ch = random_channel(&mut rng, 1, 1, 8, 8);
            let p = ch.paths[0];
            let x = random_grid(8, 8, seed);
            let shifted = DDGrid::from_fn(8, 8, |k, l| x[((k + 8 - dk) % 8, (l + 8 - dl) % 8)]);
            let z = received_signal(&[dense_frame(x)], std::slice::from_ref(&ch), &c).unwrap();
            let zs = received_signal(&[dense_frame(shifted)], &[ch], &c).unwrap();
            for k in 0..8 {
                for l in 0..8 {
                    let (k2, l2) = ((k + dk) % 8, (l + dl) % 8);
                    let delta = l2 as f64 - l as f64;
                    let rot = Complex64::from_polar(1.0, 2.0 * PI * delta * p.k as f64 / 64.0);
                    prop_assert!((zs[(k2, l2)] - z[(k, l)] * rot).norm() < 1e-12);
                }
            }
        }
    }
}
