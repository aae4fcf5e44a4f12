use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_LATTICE_CAP: usize = 50_000_000;

/// All count vectors over `d` states summing to `n`, in colexicographic
/// order, with a combinatorial rank as index map.
#[derive(Debug, Clone, Serialize)]
pub struct SimplexLattice {
    n: u64,
    d: usize,
    #[serde(skip)]
    points: Vec<u32>,
    #[serde(skip)]
    binom: Vec<Vec<u64>>,
}

/// C(n + d − 1, d − 1) in exact integer arithmetic (saturating).
pub fn lattice_size(n: u64, d: usize) -> u128 {
    let k = (d - 1) as u128;
    let top = n as u128 + k;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul(top - i) / (i + 1);
    }
    c
}

impl SimplexLattice {
    pub fn enumerate(n: u64, d: usize) -> Result<Self> {
        Self::enumerate_with_cap(n, d, DEFAULT_LATTICE_CAP)
    }

    pub fn enumerate_with_cap(n: u64, d: usize, cap: usize) -> Result<Self> {
        if n == 0 || d < 2 {
            return Err(Error::InvalidParameter(format!("lattice needs N >= 1 and |S| >= 2, got N={n}, |S|={d}")));
        }
        let size = lattice_size(n, d);
        if size > cap as u128 {
            return Err(Error::LatticeTooLarge { size, cap });
        }
        let size = size as usize;
        // binom[k][m] = C(m, k) for m ≤ n + d.
        let binom: Vec<Vec<u64>> = (0..d)
            .map(|k| {
                (0..=(n as usize + d))
                    .map(|m| {
                        if k > m {
                            0
                        } else {
                            let mut c: u128 = 1;
                            for i in 0..k as u128 {
                                c = c * (m as u128 - i) / (i + 1);
                            }
                            c.min(u64::MAX as u128) as u64
                        }
                    })
                    .collect()
            })
            .collect();
        let mut lat = Self { n, d, points: vec![0; size * d], binom };
        let mut counts = vec![0u32; d];
        let mut filled = 0usize;
        let mut visit = |c: &[u32], lat: &mut Self| {
            let r = lat.rank_u32(c);
            lat.points[r * d..(r + 1) * d].copy_from_slice(c);
            filled += 1;
        };
        fill(&mut counts, d - 1, n as u32, &mut |c| visit(c, &mut lat));
        debug_assert_eq!(filled, size);
        Ok(lat)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn num_states(&self) -> usize {
        self.d
    }

    pub fn size(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn point(&self, idx: usize) -> &[u32] {
        &self.points[idx * self.d..(idx + 1) * self.d]
    }

    pub fn fractions(&self, idx: usize) -> Vec<f64> {
        let n = self.n as f64;
        self.point(idx).iter().map(|&c| c as f64 / n).collect()
    }

    fn rank_u32(&self, c: &[u32]) -> usize {
        let mut rest = self.n as usize;
        let mut r: u64 = 0;
        for k in (1..self.d).rev() {
            let ck = c[k] as usize;
            // rest = R_k = N − Σ_{m>k} c_m
            r += self.binom[k][rest + k] - self.binom[k][rest - ck + k];
            rest -= ck;
        }
        r as usize
    }

    /// Ordinal of a count vector. Returns `None` if it is not on the lattice.
    pub fn rank(&self, counts: &[u64]) -> Option<usize> {
        if counts.len() != self.d || counts.iter().sum::<u64>() != self.n {
            return None;
        }
        let c: Vec<u32> = counts.iter().map(|&x| x as u32).collect();
        Some(self.rank_u32(&c))
    }

    /// Index of μ^{i→j}, if state i is occupied.
    pub fn neighbor(&self, idx: usize, i: usize, j: usize) -> Option<usize> {
        let p = self.point(idx);
        if i == j || p[i] == 0 {
            return None;
        }
        let mut c = p.to_vec();
        c[i] -= 1;
        c[j] += 1;
        Some(self.rank_u32(&c))
    }
}

/// Visits all vectors with the given total, fixing the highest coordinate
/// first.
fn fill(c: &mut Vec<u32>, pos: usize, left: u32, f: &mut dyn FnMut(&[u32])) {
    if pos == 0 {
        c[0] = left;
        f(c);
        return;
    }
    for v in 0..=left {
        c[pos] = v;
        fill(c, pos - 1, left - v, f);
    }
}
