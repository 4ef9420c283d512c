//! Cubic supercell lattices and the plane-wave grid attached to them.
//!
//! A [`Lattice`] describes the periodic lattice `R_L = L * a Z^3`, its unit
//! cell `Γ_L = (-aL/2, aL/2]^3` and a uniform grid of `n_per_cell` points per
//! unit-cell edge. Grid point `(i, j, l)` sits at `(i, j, l) * h` folded back
//! into `Γ_L`, so the origin is always a grid point.
//!
//! Fourier modes follow FFT ordering along each axis: index `i` maps to the
//! signed mode `m = i` for `i < M/2` and `m = i - M` otherwise, with `M` the
//! number of points per edge. The Nyquist index `-M/2` aliases `+M/2`; every
//! multiplier used in this crate depends on `|m|` only, so the two are the
//! same mode.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::LatticeError;

/// Cubic lattice `L * a Z^3` with a plane-wave grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    a: f64,
    supercell: usize,
    n_per_cell: usize,
}

/// A Fourier mode of the grid: integer index and wave vector `2π m / (aL)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KIndex {
    pub m: [i64; 3],
    pub k: [f64; 3],
}

impl KIndex {
    pub fn norm_sq(&self) -> f64 {
        self.k.iter().map(|x| x * x).sum()
    }
}

impl Lattice {
    /// Builds the supercell lattice `R_L` with `n_per_cell` points per unit-cell edge.
    pub fn new(a: f64, supercell: usize, n_per_cell: usize) -> Result<Self, LatticeError> {
        if !(a.is_finite() && a > 0.0) {
            return Err(LatticeError::NonPositiveEdge(a));
        }
        if supercell == 0 {
            return Err(LatticeError::ZeroSupercell);
        }
        if n_per_cell < 4 || !n_per_cell.is_multiple_of(2) {
            return Err(LatticeError::BadGridSize(n_per_cell));
        }
        Ok(Self {
            a,
            supercell,
            n_per_cell,
        })
    }

    /// Same unit cell and resolution, different supercell factor.
    pub fn with_supercell(&self, supercell: usize) -> Result<Self, LatticeError> {
        Self::new(self.a, supercell, self.n_per_cell)
    }

    /// Unit-cell edge `a`.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Supercell factor `L`.
    pub fn supercell(&self) -> usize {
        self.supercell
    }

    pub fn n_per_cell(&self) -> usize {
        self.n_per_cell
    }

    /// Edge of the simulation cell, `aL`.
    pub fn edge(&self) -> f64 {
        self.a * self.supercell as f64
    }

    /// `|Γ_L| = (aL)^3`.
    pub fn volume(&self) -> f64 {
        self.edge().powi(3)
    }

    /// Grid points per simulation-cell edge, `n_per_cell * L`.
    pub fn points_per_edge(&self) -> usize {
        self.n_per_cell * self.supercell
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.points_per_edge().pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Real-space grid spacing `a / n_per_cell`.
    pub fn spacing(&self) -> f64 {
        self.a / self.n_per_cell as f64
    }

    /// Quadrature weight of one grid point, `|Γ_L| / N`.
    pub fn cell_weight(&self) -> f64 {
        self.spacing().powi(3)
    }

    /// Reciprocal lattice spacing `2π / (aL)`.
    pub fn dk(&self) -> f64 {
        2.0 * PI / self.edge()
    }

    /// Signed mode number of FFT index `i` along one axis.
    #[inline]
    pub fn mode(&self, i: usize) -> i64 {
        let m = self.points_per_edge();
        if i < m / 2 {
            i as i64
        } else {
            i as i64 - m as i64
        }
    }

    /// Flat index of grid point `(i, j, l)`.
    #[inline]
    pub fn flat(&self, i: usize, j: usize, l: usize) -> usize {
        let m = self.points_per_edge();
        (i * m + j) * m + l
    }

    /// Inverse of [`Lattice::flat`].
    #[inline]
    pub fn unflat(&self, idx: usize) -> [usize; 3] {
        let m = self.points_per_edge();
        [idx / (m * m), (idx / m) % m, idx % m]
    }

    /// Position of grid point `idx`, folded into `Γ_L`.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let [i, j, l] = self.unflat(idx);
        self.wrap_to_cell([i as f64 * h, j as f64 * h, l as f64 * h])
    }

    /// Signed integer offset of grid point `idx` from the origin (in units of `h`).
    pub fn offset(&self, idx: usize) -> [i64; 3] {
        let m = self.points_per_edge() as i64;
        let fold = |i: usize| {
            let i = i as i64;
            if 2 * i > m {
                i - m
            } else {
                i
            }
        };
        let [i, j, l] = self.unflat(idx);
        [fold(i), fold(j), fold(l)]
    }

    /// Grid point nearest to `x` (after periodic folding).
    pub fn nearest_index(&self, x: [f64; 3]) -> usize {
        let m = self.points_per_edge() as i64;
        let h = self.spacing();
        let idx = x.map(|c| ((c / h).round() as i64).rem_euclid(m) as usize);
        self.flat(idx[0], idx[1], idx[2])
    }

    /// Representative of `x` in `Γ_L = (-aL/2, aL/2]^3`.
    pub fn wrap_to_cell(&self, x: [f64; 3]) -> [f64; 3] {
        let e = self.edge();
        x.map(|c| {
            let r = c - e * ((c - 0.5 * e) / e).ceil();
            // guard the upper face against round-off in the ceil argument
            if r <= -0.5 * e {
                r + e
            } else {
                r
            }
        })
    }

    /// `|k|^2` of the mode stored at flat index `idx`.
    #[inline]
    pub fn k_norm_sq(&self, idx: usize) -> f64 {
        let dk = self.dk();
        let [i, j, l] = self.unflat(idx);
        let (mi, mj, ml) = (self.mode(i), self.mode(j), self.mode(l));
        dk * dk * (mi * mi + mj * mj + ml * ml) as f64
    }

    /// Table of `|k|^2` over all modes in storage order.
    pub fn k_norm_sq_table(&self) -> Vec<f64> {
        let m = self.points_per_edge();
        let dk2 = self.dk() * self.dk();
        let sq: Vec<f64> = (0..m).map(|i| (self.mode(i) * self.mode(i)) as f64).collect();
        let mut out = Vec::with_capacity(self.len());
        for si in &sq {
            for sj in &sq {
                for sl in &sq {
                    out.push(dk2 * (si + sj + sl));
                }
            }
        }
        out
    }

    /// All Fourier modes of the grid in storage order.
    pub fn k_indices(&self) -> Vec<KIndex> {
        let dk = self.dk();
        (0..self.len())
            .map(|idx| {
                let [i, j, l] = self.unflat(idx);
                let m = [self.mode(i), self.mode(j), self.mode(l)];
                KIndex {
                    m,
                    k: m.map(|c| c as f64 * dk),
                }
            })
            .collect()
    }

    /// Storage index of the mode `-m` (modulo aliasing of the Nyquist plane).
    pub fn negated_mode_index(&self, idx: usize) -> usize {
        let m = self.points_per_edge();
        let [i, j, l] = self.unflat(idx);
        let neg = |i: usize| (m - i) % m;
        self.flat(neg(i), neg(j), neg(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_sizes_and_spacing() {
        let lat = Lattice::new(1.0, 1, 4).unwrap();
        assert_eq!(lat.len(), 64);
        assert_relative_eq!(lat.dk(), 2.0 * PI);

        let lat = Lattice::new(1.0, 2, 4).unwrap();
        assert_eq!(lat.len(), 512);
        assert_relative_eq!(lat.dk(), PI);

        let lat = Lattice::new(2.5, 3, 8).unwrap();
        assert_relative_eq!(lat.volume(), 421.875, max_relative = 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(Lattice::new(1.0, 1, 5), Err(LatticeError::BadGridSize(5))));
        assert!(matches!(Lattice::new(1.0, 0, 4), Err(LatticeError::ZeroSupercell)));
        assert!(Lattice::new(0.0, 1, 4).is_err());
        assert!(Lattice::new(1.0, 1, 2).is_err());
    }

    #[test]
    fn wrap_examples() {
        let lat = Lattice::new(1.5, 2, 4).unwrap();
        let e = lat.edge();
        assert_eq!(lat.wrap_to_cell([0.0; 3]), [0.0; 3]);
        let w = lat.wrap_to_cell([e, 0.0, 0.0]);
        assert_relative_eq!(w[0], 0.0, epsilon = 1e-14);
        let w = lat.wrap_to_cell([0.6 * e, 0.0, 0.0]);
        assert_relative_eq!(w[0], -0.4 * e, epsilon = 1e-14);
        // half-open convention
        assert_relative_eq!(lat.wrap_to_cell([0.5 * e, 0.0, 0.0])[0], 0.5 * e);
        assert_relative_eq!(lat.wrap_to_cell([-0.5 * e, 0.0, 0.0])[0], 0.5 * e);
    }

    #[test]
    fn positions_round_trip_to_indices() {
        let lat = Lattice::new(0.7, 2, 6).unwrap();
        for idx in 0..lat.len() {
            let x = lat.position(idx);
            assert!(x.iter().all(|c| *c > -0.5 * lat.edge() && *c <= 0.5 * lat.edge()));
            assert_eq!(lat.nearest_index(x), idx);
            let shifted = x.map(|c| c + 3.0 * lat.edge());
            assert_eq!(lat.nearest_index(lat.wrap_to_cell(shifted)), idx);
        }
    }

    #[test]
    fn k_set_is_symmetric() {
        let lat = Lattice::new(1.0, 1, 6).unwrap();
        let ks = lat.k_indices();
        let m = lat.points_per_edge() as i64;
        for (idx, k) in ks.iter().enumerate() {
            let neg = &ks[lat.negated_mode_index(idx)];
            for c in 0..3 {
                assert_eq!((k.m[c] + neg.m[c]).rem_euclid(m), 0);
            }
            assert_relative_eq!(k.norm_sq(), neg.norm_sq());
            assert!(k.m.iter().all(|c| c.abs() <= m / 2));
        }
    }

    #[test]
    fn supercell_k_set_matches_refined_single_cell() {
        // (a, L, n) and (aL, 1, nL) describe the same grid
        let sc = Lattice::new(1.3, 3, 4).unwrap();
        let big = Lattice::new(1.3 * 3.0, 1, 12).unwrap();
        assert_eq!(sc.len(), big.len());
        let a = sc.k_norm_sq_table();
        let b = big.k_norm_sq_table();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-13);
        }
        let ka = sc.k_indices();
        let kb = big.k_indices();
        for (x, y) in ka.iter().zip(&kb) {
            assert_eq!(x.m, y.m);
        }
    }

    #[test]
    fn k_table_matches_pointwise() {
        let lat = Lattice::new(2.0, 1, 8).unwrap();
        let t = lat.k_norm_sq_table();
        for (idx, k2) in t.iter().enumerate() {
            assert_relative_eq!(*k2, lat.k_norm_sq(idx), max_relative = 1e-14);
        }
    }
}
