//! Dense complex grids in the delay-Doppler and time-frequency domains.

use std::io::{BufRead, Write};
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::config::{DDIndex, OtfsConfig};
use crate::error::{Error, Result};

/// `N x M` complex grid in the delay-Doppler domain, row = Doppler `k`,
/// column = delay `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DDGrid {
    n: usize,
    m: usize,
    data: Vec<Complex64>,
}

/// `N x M` complex grid in the time-frequency domain, row = slot `n`,
/// column = subcarrier `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    n: usize,
    m: usize,
    data: Vec<Complex64>,
}

macro_rules! grid_common {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(n: usize, m: usize) -> Self {
                $ty {
                    n,
                    m,
                    data: vec![Complex64::new(0.0, 0.0); n * m],
                }
            }

            /// Builds a grid from `f(row, column)`.
            pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
                let data = (0..n).flat_map(|r| (0..m).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
                $ty { n, m, data }
            }

            /// Wraps row-major data of length `n * m`.
            pub fn from_vec(n: usize, m: usize, data: Vec<Complex64>) -> Result<Self> {
                if data.len() != n * m {
                    return Err(Error::InvalidConfig(format!(
                        "grid data has {} entries, expected {}",
                        data.len(),
                        n * m
                    )));
                }
                Ok($ty { n, m, data })
            }

            /// Number of rows.
            pub fn rows(&self) -> usize {
                self.n
            }

            /// Number of columns.
            pub fn cols(&self) -> usize {
                self.m
            }

            pub fn as_slice(&self) -> &[Complex64] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<Complex64> {
                self.data
            }

            /// Squared Frobenius norm.
            pub fn energy(&self) -> f64 {
                self.data.iter().map(|v| v.norm_sqr()).sum()
            }

            pub fn check_dims(&self, cfg: &OtfsConfig) -> Result<()> {
                if self.n != cfg.n() || self.m != cfg.m() {
                    return Err(Error::DimensionMismatch {
                        want_n: cfg.n(),
                        want_m: cfg.m(),
                        got_n: self.n,
                        got_m: self.m,
                    });
                }
                Ok(())
            }

            /// Largest absolute element-wise difference.
            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                assert_eq!((self.n, self.m), (other.n, other.m));
                self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
            }
        }

        impl Index<(usize, usize)> for $ty {
            type Output = Complex64;

            fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
                assert!(r < self.n && c < self.m);
                &self.data[r * self.m + c]
            }
        }

        impl IndexMut<(usize, usize)> for $ty {
            fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
                assert!(r < self.n && c < self.m);
                &mut self.data[r * self.m + c]
            }
        }
    };
}

grid_common!(DDGrid);
grid_common!(TfGrid);

impl Index<DDIndex> for DDGrid {
    type Output = Complex64;

    fn index(&self, idx: DDIndex) -> &Complex64 {
        &self[(idx.k, idx.l)]
    }
}

impl IndexMut<DDIndex> for DDGrid {
    fn index_mut(&mut self, idx: DDIndex) -> &mut Complex64 {
        &mut self[(idx.k, idx.l)]
    }
}

impl DDGrid {
    pub fn for_config(cfg: &OtfsConfig) -> Self {
        DDGrid::zeros(cfg.n(), cfg.m())
    }

    /// Nonzero cells in `(k, l)` order.
    pub fn nonzero(&self) -> impl Iterator<Item = (DDIndex, Complex64)> + '_ {
        self.data.iter().enumerate().filter(|(_, v)| **v != Complex64::new(0.0, 0.0)).map(|(i, v)| {
            (DDIndex::new(i / self.m, i % self.m), *v)
        })
    }

    /// Writes the grid as CSV with header `k,l,re,im`, rows sorted by `(k, l)`.
    ///
    /// Values use the shortest representation that parses back to the same
    /// `f64`, so [`DDGrid::read_csv`] restores the grid bit-exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,l,re,im")?;
        for k in 0..self.n {
            for l in 0..self.m {
                let v = self[(k, l)];
                writeln!(w, "{k},{l},{},{}", v.re, v.im)?;
            }
        }
        Ok(())
    }

    /// Parses the format written by [`DDGrid::write_csv`]. Every cell of the
    /// grid must be present exactly once; the dimensions are inferred from
    /// the largest indices.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut cells = Vec::new();
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == "k,l,re,im" => {}
            Some((_, Err(e))) => return Err(e.into()),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "expected header k,l,re,im".into(),
                })
            }
        }
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let k: usize = fields[0].trim().parse().map_err(|_| bad("bad k"))?;
            let l: usize = fields[1].trim().parse().map_err(|_| bad("bad l"))?;
            let re: f64 = fields[2].trim().parse().map_err(|_| bad("bad re"))?;
            let im: f64 = fields[3].trim().parse().map_err(|_| bad("bad im"))?;
            cells.push((k, l, Complex64::new(re, im)));
        }
        let n = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let m = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        if cells.len() != n * m {
            return Err(Error::Parse {
                line: 0,
                msg: format!("{} cells do not fill a {n}x{m} grid", cells.len()),
            });
        }
        let mut grid = DDGrid::zeros(n, m);
        let mut seen = vec![false; n * m];
        for (k, l, v) in cells {
            if std::mem::replace(&mut seen[k * m + l], true) {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("duplicate cell ({k}, {l})"),
                });
            }
            grid[(k, l)] = v;
        }
        Ok(grid)
    }
}
