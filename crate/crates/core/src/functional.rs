//! TFW energy functionals: the periodic energy `E_R`, the defect energy
//! `ℰ^ν_L` measured from a perfect crystal, their `L²` gradients, and the
//! pointwise convexity bound used in the coercivity argument.

use serde::{Deserialize, Serialize};

use crate::coulomb::{build_kernel, PeriodicKernel};
use crate::error::{DomainError, FieldError, LatticeError};
use crate::field::GridFunction;
use crate::lattice::Lattice;

/// `C_TF = (10/3)(3π²)^{2/3}`.
pub fn default_c_tf() -> f64 {
    10.0 / 3.0 * (3.0 * std::f64::consts::PI.powi(2)).powf(2.0 / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfwParams {
    #[serde(default = "one")]
    pub c_w: f64,
    #[serde(default = "default_c_tf")]
    pub c_tf: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for TfwParams {
    fn default() -> Self {
        Self {
            c_w: 1.0,
            c_tf: default_c_tf(),
        }
    }
}

impl TfwParams {
    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, value) in [("c_w", self.c_w), ("c_tf", self.c_tf)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(DomainError::OutOfDomain {
                    name,
                    value,
                    reason: "must be positive",
                });
            }
        }
        Ok(())
    }
}

/// `|x|^{4/3}`.
#[inline]
pub(crate) fn pow43(x: f64) -> f64 {
    let c = x.abs().cbrt();
    let c2 = c * c;
    c2 * c2
}

/// `∫|∇v|²` and `Δv` from one forward and one inverse transform.
fn kinetic(v: &GridFunction, k2: &[f64]) -> (f64, GridFunction) {
    let mut spec = v.to_fourier();
    let mut grad_sq = 0.0;
    for (c, &k) in spec.coeffs_mut().iter_mut().zip(k2) {
        grad_sq += k * c.norm_sqr();
        *c *= -k;
    }
    (grad_sq, spec.to_real())
}

/// Objective for the minimizer, in terms of the full amplitude `w`.
pub trait Objective {
    fn lattice(&self) -> &Lattice;
    /// Energy and `L²` gradient at `w`.
    fn eval(&self, w: &GridFunction) -> (f64, GridFunction);
    fn energy(&self, w: &GridFunction) -> f64 {
        self.eval(w).0
    }
    /// Mean amplitude used to scale the preconditioner.
    fn reference_amplitude(&self) -> f64;
    fn params(&self) -> &TfwParams;
    fn kernel(&self) -> &PeriodicKernel;
}

/// `E_R(ρ_nuc, v) = C_W∫|∇v|² + C_TF∫|v|^{10/3} + ½D_R(ρ_nuc − v², ρ_nuc − v²)`.
#[derive(Clone, Debug)]
pub struct PeriodicTfw {
    params: TfwParams,
    rho_nuc: GridFunction,
    kernel: PeriodicKernel,
    k2: Vec<f64>,
}

impl PeriodicTfw {
    pub fn new(rho_nuc: GridFunction, params: TfwParams) -> Self {
        let kernel = build_kernel(rho_nuc.lattice());
        Self::with_kernel(rho_nuc, params, kernel).expect("kernel built on the same lattice")
    }

    pub fn with_kernel(rho_nuc: GridFunction, params: TfwParams, kernel: PeriodicKernel) -> Result<Self, FieldError> {
        if kernel.lattice() != rho_nuc.lattice() {
            return Err(FieldError::LatticeMismatch);
        }
        let k2 = rho_nuc.lattice().k_norm_sq_table();
        Ok(Self {
            params,
            rho_nuc,
            kernel,
            k2,
        })
    }

    pub fn rho_nuc(&self) -> &GridFunction {
        &self.rho_nuc
    }

    pub fn energy_and_gradient(&self, v: &GridFunction) -> (f64, GridFunction) {
        let p = &self.params;
        let (grad_sq, lap) = kinetic(v, &self.k2);
        let tf: f64 = v.values().iter().map(|&x| pow43(x) * x * x).sum::<f64>() * v.lattice().cell_weight();
        let charge = v.zip_map(&self.rho_nuc, |x, r| x * x - r);
        let mut spec = charge.to_fourier();
        let coulomb = 0.5 * self.kernel.form_spectra(&spec, &spec);
        for (c, w) in spec.coeffs_mut().iter_mut().zip(self.kernel.weights()) {
            *c *= w;
        }
        let phi = spec.to_real();
        let energy = p.c_w * grad_sq + p.c_tf * tf + coulomb;
        let mut grad = v.clone();
        for (((g, &x), &l), &f) in grad
            .values_mut()
            .iter_mut()
            .zip(v.values())
            .zip(lap.values())
            .zip(phi.values())
        {
            *g = -2.0 * p.c_w * l + 10.0 / 3.0 * p.c_tf * pow43(x) * x + 2.0 * f * x;
        }
        (energy, grad)
    }

    pub fn energy(&self, v: &GridFunction) -> f64 {
        self.energy_and_gradient(v).0
    }

    pub fn gradient(&self, v: &GridFunction) -> GridFunction {
        self.energy_and_gradient(v).1
    }
}

impl Objective for PeriodicTfw {
    fn lattice(&self) -> &Lattice {
        self.rho_nuc.lattice()
    }
    fn eval(&self, w: &GridFunction) -> (f64, GridFunction) {
        self.energy_and_gradient(w)
    }
    fn reference_amplitude(&self) -> f64 {
        self.rho_nuc.mean().max(0.0).sqrt()
    }
    fn params(&self) -> &TfwParams {
        &self.params
    }
    fn kernel(&self) -> &PeriodicKernel {
        &self.kernel
    }
}

pub fn tfw_energy(rho_nuc: &GridFunction, v: &GridFunction, p: &TfwParams) -> Result<f64, FieldError> {
    rho_nuc.same_lattice(v)?;
    Ok(PeriodicTfw::new(rho_nuc.clone(), *p).energy(v))
}

pub fn tfw_gradient(rho_nuc: &GridFunction, v: &GridFunction, p: &TfwParams) -> Result<GridFunction, FieldError> {
    rho_nuc.same_lattice(v)?;
    Ok(PeriodicTfw::new(rho_nuc.clone(), *p).gradient(v))
}

/// Ground state of a perfect crystal on some supercell `Γ_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerfectCrystalState {
    pub u0: GridFunction,
    pub rho0: GridFunction,
    /// Zero-mean potential `G ⋆ (ρ⁰ − ρ_nuc)`.
    pub v0: GridFunction,
    pub eps_f: f64,
    pub m_bound: f64,
    pub big_m_bound: f64,
}

impl PerfectCrystalState {
    /// Assembles the state from a ground-state amplitude and the nuclear density.
    pub fn from_ground_state(u0: GridFunction, rho_nuc: &GridFunction, eps_f: f64) -> Self {
        let rho0 = u0.map(|x| x * x);
        let v0 = crate::coulomb::poisson_periodic(&(&rho0 - rho_nuc));
        let m_bound = u0.min();
        let big_m_bound = u0.max();
        Self {
            u0,
            rho0,
            v0,
            eps_f,
            m_bound,
            big_m_bound,
        }
    }

    /// Homogeneous host `u⁰ ≡ α`, `V⁰ ≡ 0`, `ε⁰_F = (5/3)C_TF α^{4/3}`.
    pub fn jellium(alpha: f64, lat: Lattice, p: &TfwParams) -> Self {
        Self {
            u0: GridFunction::constant(lat, alpha),
            rho0: GridFunction::constant(lat, alpha * alpha),
            v0: GridFunction::zeros(lat),
            eps_f: 5.0 / 3.0 * p.c_tf * pow43(alpha),
            m_bound: alpha,
            big_m_bound: alpha,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        self.u0.lattice()
    }

    /// Tiles the (unit-cell periodic) state onto the supercell of size `l`.
    pub fn on_supercell(&self, l: usize) -> Result<Self, LatticeError> {
        let src = *self.lattice();
        let dst = src.with_supercell(l)?;
        let m = src.points_per_edge();
        let tile = |f: &GridFunction| {
            let values = (0..dst.len())
                .map(|idx| {
                    let [i, j, k] = dst.unflat(idx);
                    f.values()[src.flat(i % m, j % m, k % m)]
                })
                .collect();
            GridFunction::new(dst, values).expect("tiled length matches")
        };
        Ok(Self {
            u0: tile(&self.u0),
            rho0: tile(&self.rho0),
            v0: tile(&self.v0),
            eps_f: self.eps_f,
            m_bound: self.m_bound,
            big_m_bound: self.big_m_bound,
        })
    }

    /// `⟨(H⁰ − ε⁰_F)v, v⟩ = C_W∫|∇v|² + ∫((5/3)C_TF(ρ⁰)^{2/3} + V⁰ − ε⁰_F)v²`.
    pub fn h0_form(&self, v: &GridFunction, p: &TfwParams) -> Result<f64, FieldError> {
        self.u0.same_lattice(v)?;
        let pot: f64 = v
            .values()
            .iter()
            .zip(self.u0.values())
            .zip(self.v0.values())
            .map(|((&x, &u), &w)| (5.0 / 3.0 * p.c_tf * pow43(u) + w - self.eps_f) * x * x)
            .sum::<f64>()
            * v.lattice().cell_weight();
        Ok(p.c_w * v.gradient_sq_integral() + pot)
    }
}

/// Defect energy `ℰ^ν_L(v)` around a perfect crystal on `Γ_L`.
#[derive(Clone, Debug)]
pub struct DefectTfw {
    params: TfwParams,
    state: PerfectCrystalState,
    nu: GridFunction,
    kernel: PeriodicKernel,
    k2: Vec<f64>,
    u0_43: Vec<f64>,
    reference: f64,
}

impl DefectTfw {
    pub fn new(state: PerfectCrystalState, nu: GridFunction, params: TfwParams) -> Result<Self, FieldError> {
        state.u0.same_lattice(&nu)?;
        let kernel = build_kernel(state.lattice());
        let k2 = state.lattice().k_norm_sq_table();
        let u0_43 = state.u0.values().iter().map(|&u| pow43(u)).collect();
        let reference = state.rho0.mean().sqrt();
        Ok(Self {
            params,
            state,
            nu,
            kernel,
            k2,
            u0_43,
            reference,
        })
    }

    pub fn state(&self) -> &PerfectCrystalState {
        &self.state
    }

    pub fn nu(&self) -> &GridFunction {
        &self.nu
    }

    /// `2u⁰v + v²`.
    pub fn electron_response(&self, v: &GridFunction) -> GridFunction {
        self.state.u0.zip_map(v, |u, x| (2.0 * u + x) * x)
    }

    /// `∫(ν_L − (2u⁰v + v²))`.
    pub fn screening_integral(&self, v: &GridFunction) -> f64 {
        (&self.nu - &self.electron_response(v)).integral()
    }

    pub fn energy_and_gradient(&self, v: &GridFunction) -> (f64, GridFunction) {
        let p = &self.params;
        let st = &self.state;
        let (grad_sq, lap) = kinetic(v, &self.k2);
        let cw = v.lattice().cell_weight();
        let mut pot = 0.0;
        let mut tf = 0.0;
        let mut charge = v.clone();
        for (idx, c) in charge.values_mut().iter_mut().enumerate() {
            let x = v.values()[idx];
            let u = st.u0.values()[idx];
            let w = u + x;
            let u43 = self.u0_43[idx];
            pot += (st.v0.values()[idx] - st.eps_f) * x * x;
            // |w|^{10/3} − |u|^{10/3} − (10/3)|u|^{4/3} u v; the (5/3)|u|^{4/3}v²
            // terms of the quadratic form and of the TF remainder cancel
            tf += pow43(w) * w * w - u43 * u * u - 10.0 / 3.0 * u43 * u * x;
            *c = (2.0 * u + x) * x - self.nu.values()[idx];
        }
        let mut spec = charge.to_fourier();
        let coulomb = 0.5 * self.kernel.form_spectra(&spec, &spec);
        for (c, w) in spec.coeffs_mut().iter_mut().zip(self.kernel.weights()) {
            *c *= w;
        }
        let phi = spec.to_real();
        let energy = p.c_w * grad_sq + pot * cw + p.c_tf * tf * cw + coulomb;

        let mut grad = v.clone();
        for (idx, g) in grad.values_mut().iter_mut().enumerate() {
            let x = v.values()[idx];
            let u = st.u0.values()[idx];
            let w = u + x;
            *g = 2.0
                * (-p.c_w * lap.values()[idx]
                    + (st.v0.values()[idx] - st.eps_f) * x
                    + 5.0 / 3.0 * p.c_tf * (pow43(w) * w - self.u0_43[idx] * u)
                    + phi.values()[idx] * w);
        }
        (energy, grad)
    }

    pub fn energy(&self, v: &GridFunction) -> f64 {
        self.energy_and_gradient(v).0
    }

    pub fn gradient(&self, v: &GridFunction) -> GridFunction {
        self.energy_and_gradient(v).1
    }
}

impl Objective for DefectTfw {
    fn lattice(&self) -> &Lattice {
        self.state.lattice()
    }
    fn eval(&self, w: &GridFunction) -> (f64, GridFunction) {
        self.energy_and_gradient(&(w - &self.state.u0))
    }
    fn reference_amplitude(&self) -> f64 {
        self.reference
    }
    fn params(&self) -> &TfwParams {
        &self.params
    }
    fn kernel(&self) -> &PeriodicKernel {
        &self.kernel
    }
}

pub fn defect_energy(
    state: &PerfectCrystalState,
    nu: &GridFunction,
    v: &GridFunction,
    p: &TfwParams,
) -> Result<f64, FieldError> {
    state.u0.same_lattice(v)?;
    Ok(DefectTfw::new(state.clone(), nu.clone(), *p)?.energy(v))
}

pub fn defect_gradient(
    state: &PerfectCrystalState,
    nu: &GridFunction,
    v: &GridFunction,
    p: &TfwParams,
) -> Result<GridFunction, FieldError> {
    state.u0.same_lattice(v)?;
    Ok(DefectTfw::new(state.clone(), nu.clone(), *p)?.gradient(v))
}

/// Two-sided bound on `(a+b)^γ − a^γ − γa^{γ−1}b` for `m ≤ a ≤ M`, `b ≥ −a`.
///
/// The lower member is `(γ−1)a^{γ−2}b²`; the upper member is
/// `C(1 + |b|^{γ−2})b²` with `C` calibrated by dense maximization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexityBound {
    pub m: f64,
    pub big_m: f64,
    pub gamma: f64,
    pub c: f64,
}

fn domain(name: &'static str, value: f64, reason: &'static str) -> DomainError {
    DomainError::OutOfDomain { name, value, reason }
}

/// `|1+t|^γ − 1 − γt`, by its binomial series when that is exact or fast.
pub(crate) fn binomial_remainder(t: f64, gamma: f64) -> f64 {
    let integer = gamma.fract() == 0.0;
    if integer || t.abs() <= 0.5 {
        let mut coef = gamma * (gamma - 1.0) / 2.0;
        let mut tn = t * t;
        let mut term = coef * tn;
        let mut sum = 0.0;
        let mut n = 2.0;
        while term != 0.0 {
            sum += term;
            coef *= (gamma - n) / (n + 1.0);
            n += 1.0;
            tn *= t;
            term = coef * tn;
            if !integer && term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (1.0 + t).abs().powf(gamma) - 1.0 - gamma * t
    }
}

impl ConvexityBound {
    /// Calibrates `C` as 1.05 times the largest ratio `middle / ((1+|b|^{γ−2})b²)`
    /// over a dense grid of `(a, b)`, including the `b → 0` limit.
    pub fn calibrate(m: f64, big_m: f64, gamma: f64) -> Result<Self, DomainError> {
        if !(m > 0.0 && m <= big_m && big_m.is_finite()) {
            return Err(domain("m", m, "need 0 < m <= M"));
        }
        if !(gamma >= 2.0 && gamma.is_finite()) {
            return Err(domain("gamma", gamma, "need gamma >= 2"));
        }
        let mut best: f64 = 0.0;
        let na = 200;
        for i in 0..=na {
            let a = m + (big_m - m) * i as f64 / na as f64;
            // b → 0 limit of the ratio
            // |b|^{γ−2} tends to 1 when γ = 2 and to 0 otherwise
            let tail = if gamma == 2.0 { 2.0 } else { 1.0 };
            best = best.max(gamma * (gamma - 1.0) / 2.0 * a.powf(gamma - 2.0) / tail);
            for j in 1..=4000 {
                // t = b/a from −1 to large values, denser near the origin
                let s = j as f64 / 4000.0;
                for t in [-s, 60.0 * s * s * s] {
                    let b = t * a;
                    if b == 0.0 {
                        continue;
                    }
                    let middle = a.powf(gamma) * binomial_remainder(t, gamma);
                    let denom = (1.0 + b.abs().powf(gamma - 2.0)) * b * b;
                    best = best.max(middle / denom);
                }
            }
        }
        Ok(Self {
            m,
            big_m,
            gamma,
            c: 1.05 * best,
        })
    }

    /// `(lower, middle, upper)` at `(a, b)`.
    pub fn gap(&self, a: f64, b: f64) -> Result<(f64, f64, f64), DomainError> {
        if !(a >= self.m && a <= self.big_m) {
            return Err(domain("a", a, "need m <= a <= M"));
        }
        if !(b >= -a && b.is_finite()) {
            return Err(domain("b", b, "need b >= -a"));
        }
        Ok(convexity_members(a, b, self.gamma, self.c))
    }
}

/// The three members at `(a, b)` for a given constant `c`; both the lower
/// and middle members are evaluated as `a^γ` times a function of `t = b/a`.
pub fn convexity_members(a: f64, b: f64, gamma: f64, c: f64) -> (f64, f64, f64) {
    let t = b / a;
    let scale = a.powf(gamma);
    // same operation order as the series so that γ = 2 gives identical bits
    let lower = scale * ((gamma - 1.0) * (t * t));
    let middle = scale * binomial_remainder(t, gamma);
    let upper = c * (1.0 + b.abs().powf(gamma - 2.0)) * b * b;
    (lower, middle, upper)
}

pub fn convexity_gap(a: f64, b: f64, bound: &ConvexityBound) -> Result<(f64, f64, f64), DomainError> {
    bound.gap(a, b)
}

/// Relative mismatch between the central difference of the energy along `h`
/// with step `t` and the analytic directional derivative `⟨grad, h⟩`.
pub fn directional_fd_error(
    f: impl Fn(&GridFunction) -> (f64, GridFunction),
    v: &GridFunction,
    h: &GridFunction,
    t: f64,
) -> f64 {
    let mut vp = v.clone();
    vp.axpy(t, h);
    let mut vm = v.clone();
    vm.axpy(-t, h);
    let fd = (f(&vp).0 - f(&vm).0) / (2.0 * t);
    let an = f(v).1.inner(h);
    (fd - an).abs() / an.abs().max(1e-12)
}
