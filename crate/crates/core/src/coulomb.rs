//! Periodic Coulomb kernel, the periodic and free-space Coulomb forms, and
//! zero-mean Poisson solves.
//!
//! With the field normalization of [`crate::field`], convolution with the
//! kernel acts mode by mode: `c_k(G ⋆ f) = w_k c_k(f)` with `w_k = 4π/|k|²`
//! for `k ≠ 0` and `w_0 = ∫_Γ G`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::FieldError;
use crate::field::{GridFunction, Spectrum};
use crate::lattice::Lattice;
use crate::model::Gaussian;

/// The `R_L`-periodic Coulomb kernel, shifted so that its minimum over the
/// grid is zero.
#[derive(Clone, Debug)]
pub struct PeriodicKernel {
    lat: Lattice,
    g1: f64,
    weights: Vec<f64>,
    values: GridFunction,
}

pub fn build_kernel(lat: &Lattice) -> PeriodicKernel {
    let k2 = lat.k_norm_sq_table();
    let root = lat.volume().sqrt();
    let coeffs: Vec<Complex64> = k2
        .iter()
        .map(|&k| {
            if k == 0.0 {
                Complex64::default()
            } else {
                Complex64::new(4.0 * PI / (k * root), 0.0)
            }
        })
        .collect();
    let zero_mean = Spectrum::from_coeffs(*lat, coeffs)
        .expect("table length matches lattice")
        .to_real();
    let g1 = -zero_mean.min();
    let values = zero_mean.map(|v| v + g1);
    let w0 = g1 * lat.volume();
    let weights = k2.iter().map(|&k| if k == 0.0 { w0 } else { 4.0 * PI / k }).collect();
    PeriodicKernel {
        lat: *lat,
        g1,
        weights,
        values,
    }
}

impl PeriodicKernel {
    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    /// Mean value `|Γ|^{-1} ∫_Γ G`.
    pub fn g1(&self) -> f64 {
        self.g1
    }

    /// `∫_Γ G`, the weight of the `k = 0` mode.
    pub fn zero_mode_weight(&self) -> f64 {
        self.weights[0]
    }

    /// Grid samples of `G`.
    pub fn values(&self) -> &GridFunction {
        &self.values
    }

    /// Per-mode weights `w_k` in storage order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `G ⋆_R f`, including the mean contribution `w_0 c_0(f)`.
    pub fn potential(&self, f: &GridFunction) -> GridFunction {
        assert_eq!(f.lattice(), &self.lat, "kernel applied across lattices");
        let mut spec = f.to_fourier();
        for (c, w) in spec.coeffs_mut().iter_mut().zip(&self.weights) {
            *c *= w;
        }
        spec.to_real()
    }

    /// `D_R(f, g)` from precomputed spectra.
    pub fn form_spectra(&self, f: &Spectrum, g: &Spectrum) -> f64 {
        f.coeffs()
            .iter()
            .zip(g.coeffs())
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a.conj() * b).re)
            .sum()
    }

    /// `D_R(f, g) = Σ_k w_k conj(c_k(f)) c_k(g)`.
    pub fn form(&self, f: &GridFunction, g: &GridFunction) -> Result<f64, FieldError> {
        if f.lattice() != &self.lat || g.lattice() != &self.lat {
            return Err(FieldError::LatticeMismatch);
        }
        let sf = f.to_fourier();
        if std::ptr::eq(f, g) {
            return Ok(self.form_spectra(&sf, &sf));
        }
        Ok(self.form_spectra(&sf, &g.to_fourier()))
    }
}

pub fn coulomb_form(kernel: &PeriodicKernel, f: &GridFunction, g: &GridFunction) -> Result<f64, FieldError> {
    kernel.form(f, g)
}

/// Zero-mean `W` with `-ΔW = 4π(ρ - mean ρ)`.
pub fn poisson_periodic(rho: &GridFunction) -> GridFunction {
    rho.apply_multiplier(|k2| if k2 == 0.0 { 0.0 } else { 4.0 * PI / k2 })
}

/// Whole-space Coulomb energy `D(ν, ν)` of a sum of Gaussians.
pub fn coulomb_form_free(nu: &[Gaussian]) -> f64 {
    let mut total = 0.0;
    for gi in nu {
        for gj in nu {
            let s = (2.0 * (gi.width * gi.width + gj.width * gj.width)).sqrt();
            let d = [0, 1, 2]
                .map(|c| gi.center[c] - gj.center[c])
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            // erf(d/s)/d tends to 2/(s√π) as d -> 0
            let pair = if d < 1e-8 * s {
                2.0 / (s * PI.sqrt())
            } else {
                libm::erf(d / s) / d
            };
            total += gi.charge * gj.charge * pair;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_field;
    use approx::assert_relative_eq;

    /// Zero-mean periodic Coulomb potential of a unit point charge on the
    /// cubic lattice `a Z³`, by Ewald summation.
    fn ewald_zero_mean(x: [f64; 3], a: f64) -> f64 {
        let eta = 2.5 / a;
        let vol = a * a * a;
        let mut real = 0.0;
        for i in -4i32..=4 {
            for j in -4i32..=4 {
                for l in -4i32..=4 {
                    let r = [x[0] + i as f64 * a, x[1] + j as f64 * a, x[2] + l as f64 * a];
                    let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                    real += libm::erfc(eta * d) / d;
                }
            }
        }
        let dk = 2.0 * PI / a;
        let mut recip = 0.0;
        for i in -12i32..=12 {
            for j in -12i32..=12 {
                for l in -12i32..=12 {
                    if i == 0 && j == 0 && l == 0 {
                        continue;
                    }
                    let k = [i as f64 * dk, j as f64 * dk, l as f64 * dk];
                    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                    recip += 4.0 * PI / k2
                        * (-k2 / (4.0 * eta * eta)).exp()
                        * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).cos();
                }
            }
        }
        real + recip / vol - PI / (eta * eta * vol)
    }

    #[test]
    fn kernel_minimum_is_zero_and_mean_matches_weight() {
        let lat = Lattice::new(1.0, 1, 16).unwrap();
        let k = build_kernel(&lat);
        assert_eq!(k.values().min(), 0.0);
        assert_relative_eq!(k.values().mean(), k.g1(), max_relative = 1e-12);
        assert_relative_eq!(k.zero_mode_weight(), k.g1() * lat.volume(), max_relative = 1e-14);
        assert!(k.g1() > 0.0);
    }

    #[test]
    fn kernel_scales_with_supercell() {
        // (a, L, n) and (a, 1, nL) share mode sets up to the factor L
        for l in 2..=3 {
            let big = build_kernel(&Lattice::new(1.0, l, 8).unwrap());
            let unit = build_kernel(&Lattice::new(1.0, 1, 8 * l).unwrap());
            assert_relative_eq!(big.g1(), unit.g1() / l as f64, max_relative = 1e-12);
            for (a, b) in big.values().values().iter().zip(unit.values().values()) {
                assert!((a - b / l as f64).abs() < 1e-10 * (1.0 + a.abs()));
            }
        }
        // continuum g1 is approached under refinement
        let coarse = build_kernel(&Lattice::new(1.0, 1, 16).unwrap()).g1();
        let fine = build_kernel(&Lattice::new(1.0, 1, 32).unwrap()).g1();
        let two = build_kernel(&Lattice::new(1.0, 2, 16).unwrap()).g1();
        assert!((coarse - fine).abs() < 0.05 * fine);
        assert!((two - fine / 2.0).abs() < 0.05 * fine);
    }

    #[test]
    fn singular_part_is_coulombic() {
        let probes = [
            [0.25, 0.0, 0.0],
            [0.125, 0.125, 0.0],
            [0.25, 0.25, 0.25],
            [0.375, 0.0, 0.125],
        ];
        let mut prev: Option<Vec<f64>> = None;
        for n in [16, 32, 64] {
            let lat = Lattice::new(1.0, 1, n).unwrap();
            let k = build_kernel(&lat);
            let diffs: Vec<f64> = probes
                .iter()
                .map(|&x| {
                    let g = k.values().values()[lat.nearest_index(x)] - k.g1();
                    let exact = ewald_zero_mean(x, 1.0);
                    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                    // truncation error of the cube-cut series decays like 1/n
                    assert!(
                        (g - exact).abs() < 2.5 / n as f64,
                        "n={n} x={x:?} grid {g} ewald {exact}"
                    );
                    g + k.g1() - 1.0 / r
                })
                .collect();
            for d in &diffs {
                assert!(d.abs() < 5.0);
            }
            if let Some(p) = prev {
                for (a, b) in p.iter().zip(&diffs) {
                    assert!((a - b).abs() < 0.2);
                }
            }
            prev = Some(diffs);
        }
    }

    #[test]
    fn ewald_oracle_matches_fine_grid() {
        let lat = Lattice::new(1.0, 1, 64).unwrap();
        let k = build_kernel(&lat);
        let x = [0.25, 0.25, 0.0];
        let g = k.values().values()[lat.nearest_index(x)] - k.g1();
        assert!((g - ewald_zero_mean(x, 1.0)).abs() < 2e-2);
    }

    #[test]
    fn form_on_single_mode_pair_and_constants() {
        let lat = Lattice::new(1.5, 1, 8).unwrap();
        let k = build_kernel(&lat);
        let k0 = 2.0 * PI / lat.edge();
        let f = GridFunction::from_fn(lat, |x| (k0 * x[1]).cos());
        let ck2 = lat.volume() / 4.0;
        assert_relative_eq!(
            k.form(&f, &f).unwrap(),
            2.0 * 4.0 * PI / (k0 * k0) * ck2,
            max_relative = 1e-12
        );
        let c = GridFunction::constant(lat, 0.7);
        assert_relative_eq!(
            k.form(&c, &c).unwrap(),
            k.zero_mode_weight() * 0.49 * lat.volume(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn form_is_symmetric_and_nonnegative() {
        let lat = Lattice::new(1.0, 1, 8).unwrap();
        let k = build_kernel(&lat);
        for seed in 0..5 {
            let f = random_field(lat, seed, 0.1, 1.0);
            let g = random_field(lat, seed + 100, -0.3, 1.0);
            let fg = k.form(&f, &g).unwrap();
            assert_relative_eq!(fg, k.form(&g, &f).unwrap(), max_relative = 1e-12);
            assert!(k.form(&f, &f).unwrap() >= 0.0);
            // potential and form agree
            assert_relative_eq!(k.potential(&g).inner(&f), fg, max_relative = 1e-10, epsilon = 1e-12);
        }
        let other = GridFunction::zeros(Lattice::new(1.0, 1, 4).unwrap());
        assert!(k.form(&other, &other).is_err());
    }

    #[test]
    fn poisson_examples() {
        let lat = Lattice::new(2.0, 1, 8).unwrap();
        let c = GridFunction::constant(lat, 3.0);
        assert!(poisson_periodic(&c).max_abs() < 1e-14);
        let k0 = 2.0 * PI / lat.edge();
        let rho = GridFunction::from_fn(lat, |x| (k0 * x[0]).cos());
        let w = poisson_periodic(&rho);
        let expect = rho.scaled(4.0 * PI / (k0 * k0));
        assert!((&w - &expect).max_abs() < 1e-12);
        let r = random_field(lat, 7, 0.5, 1.0);
        let w = poisson_periodic(&r);
        let lhs = w.laplacian().scaled(-1.0);
        let m = r.mean();
        let rhs = r.map(|v| 4.0 * PI * (v - m));
        assert!((&lhs - &rhs).max_abs() < 1e-10);
        assert!(w.mean().abs() < 1e-13);
    }

    /// `4π ∫ conj(f̂) ĝ / |k|²` for two unit Gaussians of width `s` at distance
    /// `d`, by composite Simpson in `|k|` after the angular average.
    fn fourier_pair_oracle(s: f64, d: f64) -> f64 {
        let kmax = 12.0 / s;
        let n = 20_000;
        let h = kmax / n as f64;
        let f = |k: f64| {
            let ang = if d == 0.0 || k == 0.0 {
                1.0
            } else {
                (k * d).sin() / (k * d)
            };
            (-(k * s) * (k * s)).exp() * ang
        };
        let mut acc = f(0.0) + f(kmax);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        // (2π)^{-3} 4π · 4π ∫ e^{-k²s²} sinc dk
        2.0 / PI * acc * h / 3.0
    }

    #[test]
    fn free_form_matches_fourier_oracle() {
        let s = 0.3;
        let g = Gaussian::new(1.0, [0.0; 3], s).unwrap();
        assert_relative_eq!(coulomb_form_free(&[g]), 1.0 / (s * PI.sqrt()), max_relative = 1e-14);
        assert_relative_eq!(
            coulomb_form_free(&[g]),
            fourier_pair_oracle(s, 0.0),
            max_relative = 1e-9
        );
        let d = 0.8;
        let h = Gaussian::new(1.0, [0.0, d, 0.0], s).unwrap();
        let cross = coulomb_form_free(&[g, h]) - 2.0 * coulomb_form_free(&[g]);
        assert_relative_eq!(cross, 2.0 * libm::erf(d / (2.0 * s)) / d, max_relative = 1e-14);
        assert_relative_eq!(cross, 2.0 * fourier_pair_oracle(s, d), max_relative = 1e-9);
        // separated neutral pair: finite, positive
        let minus = Gaussian::new(-1.0, [3.0, 0.0, 0.0], s).unwrap();
        let dip = coulomb_form_free(&[g, minus]);
        assert!(dip > 0.0 && dip.is_finite());
    }
}
