//! Real periodic scalar fields sampled on a [`Lattice`] grid.
//!
//! Fourier coefficients use the normalization
//! `c_k(v) = |Γ|^{-1/2} ∫_Γ v(x) e^{-ik.x} dx`, evaluated with the
//! equal-weight grid quadrature, so that `v(x) = Σ_k c_k e^{ik.x} / |Γ|^{1/2}`
//! and Parseval reads `Σ_k |c_k|^2 = ∫_Γ |v|^2` exactly on the grid.
//!
//! Pointwise nonlinearities act on the real-space samples; products are not
//! de-aliased.

use std::io::{Read, Write};
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::FieldError;
use crate::fft;
use crate::lattice::Lattice;
use crate::model::Gaussian;

#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    lat: Lattice,
    values: Vec<f64>,
}

/// Fourier coefficients `c_k` of a [`GridFunction`], in storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    lat: Lattice,
    coeffs: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(lat: Lattice, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != lat.len() {
            return Err(FieldError::BadDump(format!(
                "expected {} samples, got {}",
                lat.len(),
                values.len()
            )));
        }
        Ok(Self { lat, values })
    }

    pub fn zeros(lat: Lattice) -> Self {
        Self::constant(lat, 0.0)
    }

    pub fn constant(lat: Lattice, c: f64) -> Self {
        Self {
            lat,
            values: vec![c; lat.len()],
        }
    }

    /// Samples `f` at every grid point (positions folded into `Γ_L`).
    pub fn from_fn(lat: Lattice, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..lat.len()).map(|idx| f(lat.position(idx))).collect();
        Self { lat, values }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_lattice(&self, other: &Self) -> Result<(), FieldError> {
        if self.lat == other.lat {
            Ok(())
        } else {
            Err(FieldError::LatticeMismatch)
        }
    }

    /// Fourier analysis with the `|Γ|^{-1/2}` normalization.
    pub fn to_fourier(&self) -> Spectrum {
        let mut data: Vec<Complex64> = self.values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft::plan(self.lat.points_per_edge()).forward(&mut data);
        let scale = self.lat.volume().sqrt() / self.lat.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        Spectrum {
            lat: self.lat,
            coeffs: data,
        }
    }

    /// `∫_Γ v`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lat.cell_weight()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.lat.len() as f64
    }

    /// `∫_Γ v w`.
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.lat, other.lat, "inner product across lattices");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.lat.cell_weight()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            lat: self.lat,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.lat, other.lat, "pointwise map across lattices");
        Self {
            lat: self.lat,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        assert_eq!(self.lat, other.lat, "axpy across lattices");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Applies the Fourier multiplier `symbol(|k|^2)` (mode by mode).
    pub fn apply_multiplier(&self, symbol: impl Fn(f64) -> f64) -> Self {
        let mut spec = self.to_fourier();
        let k2 = self.lat.k_norm_sq_table();
        for (c, &k) in spec.coeffs.iter_mut().zip(&k2) {
            *c *= symbol(k);
        }
        spec.to_real()
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self) -> Self {
        self.apply_multiplier(|k2| -k2)
    }

    /// `∫_Γ |∇v|^2 = Σ_k |k|^2 |c_k|^2`.
    pub fn gradient_sq_integral(&self) -> f64 {
        let spec = self.to_fourier();
        let k2 = self.lat.k_norm_sq_table();
        spec.coeffs.iter().zip(&k2).map(|(c, k)| k * c.norm_sqr()).sum()
    }

    /// `(Σ_k (1+|k|^2)^s |c_k|^2)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let spec = self.to_fourier();
        let k2 = self.lat.k_norm_sq_table();
        spec.coeffs
            .iter()
            .zip(&k2)
            .map(|(c, k)| (1.0 + k).powf(s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Writes `x,y,z,value` rows, one per grid point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,z,value")?;
        for (idx, v) in self.values.iter().enumerate() {
            let [x, y, z] = self.lat.position(idx);
            writeln!(w, "{x:.16e},{y:.16e},{z:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    /// Raw volumetric dump: three little-endian `u32` dimensions, a `u32`
    /// flag, then the samples as little-endian `f64` in storage order
    /// (first index slowest).
    pub fn write_raw<W: Write>(&self, mut w: W, flag: u32) -> std::io::Result<()> {
        let m = self.lat.points_per_edge() as u32;
        for d in [m, m, m, flag] {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn raw_bytes(&self, flag: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.values.len());
        self.write_raw(&mut out, flag).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a dump written by [`GridFunction::write_raw`] onto `lat`; returns the flag.
    pub fn read_raw<R: Read>(lat: Lattice, mut r: R) -> Result<(Self, u32), FieldError> {
        let bad = |e: std::io::Error| FieldError::BadDump(e.to_string());
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(bad)?;
        let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
        let m = lat.points_per_edge() as u32;
        if word(0) != m || word(1) != m || word(2) != m {
            return Err(FieldError::BadDump(format!(
                "dimensions {}x{}x{} do not match lattice edge {m}",
                word(0),
                word(1),
                word(2)
            )));
        }
        let mut values = Vec::with_capacity(lat.len());
        let mut buf = [0u8; 8];
        for _ in 0..lat.len() {
            r.read_exact(&mut buf).map_err(bad)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok((Self { lat, values }, word(3)))
    }
}

impl Spectrum {
    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn from_coeffs(lat: Lattice, coeffs: Vec<Complex64>) -> Result<Self, FieldError> {
        if coeffs.len() != lat.len() {
            return Err(FieldError::LatticeMismatch);
        }
        Ok(Self { lat, coeffs })
    }

    /// Coefficient of the `k = 0` mode.
    pub fn zero_mode(&self) -> Complex64 {
        self.coeffs[0]
    }

    /// Synthesis `v(x) = Σ_k c_k e^{ik.x} / |Γ|^{1/2}`; the imaginary part is dropped.
    pub fn to_real(&self) -> GridFunction {
        let mut data = self.coeffs.clone();
        fft::plan(self.lat.points_per_edge()).inverse(&mut data);
        let scale = 1.0 / self.lat.volume().sqrt();
        GridFunction {
            lat: self.lat,
            values: data.iter().map(|c| c.re * scale).collect(),
        }
    }

    /// `Σ_k |c_k|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// `(f ⋆_R g)(x) = ∫_Γ f(x - y) g(y) dy`, computed as `c_k = |Γ|^{1/2} c_k(f) c_k(g)`.
pub fn periodic_convolve(f: &GridFunction, g: &GridFunction) -> Result<GridFunction, FieldError> {
    f.same_lattice(g)?;
    let sf = f.to_fourier();
    let sg = g.to_fourier();
    let root = f.lat.volume().sqrt();
    let coeffs = sf.coeffs.iter().zip(&sg.coeffs).map(|(a, b)| a * b * root).collect();
    Ok(Spectrum { lat: f.lat, coeffs }.to_real())
}

/// Samples a localized density on `Γ_L` without periodic images.
///
/// Each Gaussian is evaluated at the minimum-image displacement from its
/// centre, so a Gaussian centred at the origin gives `ν_L|_{Γ_L} = ν|_{Γ_L}`
/// exactly and off-centre Gaussians are first translated into the cell.
pub fn restrict_to_cell(nu: &[Gaussian], lat: &Lattice) -> GridFunction {
    GridFunction::from_fn(*lat, |x| {
        nu.iter()
            .map(|g| {
                let d = lat.wrap_to_cell([x[0] - g.center[0], x[1] - g.center[1], x[2] - g.center[2]]);
                g.density_at_offset(d)
            })
            .sum()
    })
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &GridFunction {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Mul<f64> for &GridFunction {
    type Output = GridFunction;
    fn mul(self, rhs: f64) -> GridFunction {
        self.scaled(rhs)
    }
}

impl Neg for &GridFunction {
    type Output = GridFunction;
    fn neg(self) -> GridFunction {
        self.scaled(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_field;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn lat(a: f64, n: usize) -> Lattice {
        Lattice::new(a, 1, n).unwrap()
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let l = lat(1.7, 6);
        let v = GridFunction::constant(l, 2.5);
        let s = v.to_fourier();
        assert_relative_eq!(s.zero_mode().re, 2.5 * l.volume().sqrt(), max_relative = 1e-13);
        for c in &s.coeffs()[1..] {
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn cosine_has_two_modes() {
        let l = lat(2.0, 8);
        let k0 = l.dk();
        let v = GridFunction::from_fn(l, |x| (k0 * x[1]).cos());
        let s = v.to_fourier();
        let half = l.volume().sqrt() / 2.0;
        let plus = l.flat(0, 1, 0);
        let minus = l.flat(0, 7, 0);
        for (idx, c) in s.coeffs().iter().enumerate() {
            if idx == plus || idx == minus {
                assert_relative_eq!(c.re, half, max_relative = 1e-12);
                assert!(c.im.abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12);
            }
        }
        // Sobolev norm of a two-mode field
        for s in [0.0, 1.0, 2.5, -1.0] {
            let expect = (l.volume() * (1.0 + k0 * k0).powf(s) / 2.0).sqrt();
            assert_relative_eq!(v.sobolev_norm(s), expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn sobolev_norm_trivial_cases() {
        let l = lat(1.3, 4);
        assert_eq!(GridFunction::zeros(l).sobolev_norm(1.0), 0.0);
        let c = GridFunction::constant(l, -0.7);
        for s in [-2.0, 0.0, 1.0, 3.0] {
            assert_relative_eq!(c.sobolev_norm(s), 0.7 * l.volume().sqrt(), max_relative = 1e-13);
        }
    }

    #[test]
    fn parseval_and_round_trip() {
        let l = lat(1.1, 8);
        let v = random_field(l, 3, 0.0, 1.0);
        let s = v.to_fourier();
        assert_relative_eq!(s.norm_sq(), v.inner(&v), max_relative = 1e-12);
        assert_relative_eq!(v.sobolev_norm(0.0), v.l2_norm(), max_relative = 1e-12);
        let back = s.to_real();
        let err = (&back - &v).max_abs();
        assert!(err <= 1e-12 * v.max_abs(), "round trip error {err}");
    }

    #[test]
    fn realness_symmetry() {
        let l = lat(1.0, 6);
        let v = random_field(l, 11, 0.3, 1.0);
        let s = v.to_fourier();
        for idx in 0..l.len() {
            let neg = s.coeffs()[l.negated_mode_index(idx)];
            assert!((s.coeffs()[idx] - neg.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn convolution_with_mean_projector() {
        let l = lat(1.4, 6);
        let f = random_field(l, 5, 0.2, 1.0);
        let g = GridFunction::constant(l, 1.0 / l.volume());
        let fg = periodic_convolve(&f, &g).unwrap();
        let mean = f.integral() / l.volume();
        for v in fg.values() {
            assert_relative_eq!(*v, mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolution_commutes() {
        let l = lat(0.9, 8);
        let f = random_field(l, 1, 0.0, 1.0);
        let g = random_field(l, 2, 0.5, 1.0);
        let a = periodic_convolve(&f, &g).unwrap();
        let b = periodic_convolve(&g, &f).unwrap();
        assert!((&a - &b).max_abs() < 1e-13);
    }

    #[test]
    fn convolution_matches_double_sum() {
        // brute-force periodic quadrature oracle on an 8^3 grid
        let l = lat(2.0, 8);
        let sig = 0.25;
        let f = GridFunction::from_fn(l, |x| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2.0 * sig * sig)).exp() / (2.0 * PI * sig * sig).powf(1.5)
        });
        let k0 = l.dk();
        let g = GridFunction::from_fn(l, |x| 1.0 + 0.3 * (k0 * x[0]).cos() + 0.2 * (k0 * (x[1] - x[2])).sin());
        let fast = periodic_convolve(&f, &g).unwrap();
        let m = l.points_per_edge();
        let w = l.cell_weight();
        for idx in (0..l.len()).step_by(37) {
            let [i, j, k] = l.unflat(idx);
            let mut acc = 0.0;
            for jdx in 0..l.len() {
                let [a, b, c] = l.unflat(jdx);
                let d = l.flat((i + m - a) % m, (j + m - b) % m, (k + m - c) % m);
                acc += f.values()[d] * g.values()[jdx] * w;
            }
            assert_relative_eq!(fast.values()[idx], acc, max_relative = 1e-12);
        }
    }

    #[test]
    fn convolution_rejects_mismatch() {
        let f = GridFunction::zeros(lat(1.0, 4));
        let g = GridFunction::zeros(lat(1.0, 6));
        assert_eq!(periodic_convolve(&f, &g), Err(FieldError::LatticeMismatch));
    }

    #[test]
    fn restricted_gaussian_mass() {
        let l = Lattice::new(1.0, 3, 12).unwrap();
        let sigma = 0.07 * l.edge();
        let zero = restrict_to_cell(&[], &l);
        assert_eq!(zero.max_abs(), 0.0);
        // box mass of a centred Gaussian: erf(E / (2√2 σ))^3
        let oracle = libm::erf(l.edge() / (2.0 * 2f64.sqrt() * sigma)).powi(3);
        let g = Gaussian::new(1.0, [0.0; 3], sigma).unwrap();
        let nu = restrict_to_cell(&[g], &l);
        assert_relative_eq!(nu.integral(), oracle, max_relative = 1e-9);
        let corner = 0.5 * l.edge();
        let g = Gaussian::new(1.0, [corner, -corner, corner], sigma).unwrap();
        let nu = restrict_to_cell(&[g], &l);
        assert_relative_eq!(nu.integral(), oracle, max_relative = 1e-9);
    }

    #[test]
    fn raw_dump_round_trip() {
        let l = lat(1.0, 4);
        let v = random_field(l, 9, 0.0, 1.0);
        let bytes = v.raw_bytes(7);
        assert_eq!(bytes.len(), 16 + 8 * 64);
        let (back, flag) = GridFunction::read_raw(l, bytes.as_slice()).unwrap();
        assert_eq!(flag, 7);
        assert_eq!(back, v);
        assert!(GridFunction::read_raw(lat(1.0, 6), bytes.as_slice()).is_err());
    }

    #[test]
    fn csv_dump_has_header() {
        let l = lat(1.0, 4);
        let mut out = Vec::new();
        GridFunction::constant(l, 1.0).write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("x,y,z,value\n"));
        assert_eq!(text.lines().count(), 65);
    }
}
