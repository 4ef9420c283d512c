//! Homogeneous host (jellium): closed-form response kernels, their radial
//! inversion, and the nonlinear fixed-point solve for the defect response.
//!
//! Fourier transforms are unitary, `f̂(k) = (2π)^{-3/2} ∫ f e^{-ik·x}`, so a
//! whole-space convolution `g ⋆ f` has transform `(2π)^{3/2} ĝ f̂`. On a
//! periodic box the same product acts on the plane-wave coefficients.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coulomb::build_kernel;
use crate::error::{DomainError, SolveError};
use crate::field::{restrict_to_cell, GridFunction};
use crate::functional::{binomial_remainder, pow43, TfwParams};
use crate::lattice::Lattice;
use crate::minimize::SolverConfig;
use crate::model::Gaussian;
use crate::quadrature::{integrate, integrate_to_infinity, sine_integral};

/// `(2π)^{3/2}`.
const TWO_PI_32: f64 = 15.749_609_945_722_419;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JelliumParams {
    pub alpha: f64,
    #[serde(default)]
    pub p: TfwParams,
}

impl JelliumParams {
    pub fn new(alpha: f64, p: TfwParams) -> Result<Self, DomainError> {
        let jp = Self { alpha, p };
        jp.validate()?;
        Ok(jp)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(DomainError::OutOfDomain {
                name: "alpha",
                value: self.alpha,
                reason: "must be positive and finite",
            });
        }
        self.p.validate()
    }

    /// Linearized Thomas–Fermi stiffness `(20/9) C_TF α^{4/3}`.
    pub fn tf_stiffness(&self) -> f64 {
        20.0 / 9.0 * self.p.c_tf * pow43(self.alpha)
    }

    /// Fermi level of the host, `(5/3) C_TF α^{4/3}`.
    pub fn fermi_level(&self) -> f64 {
        5.0 / 3.0 * self.p.c_tf * pow43(self.alpha)
    }

    fn denominator(&self, k2: f64) -> f64 {
        self.p.c_w * k2 * k2 + self.tf_stiffness() * k2 + 8.0 * PI * self.alpha * self.alpha
    }
}

pub fn kernel_g_hat(k: f64, jp: &JelliumParams) -> f64 {
    4.0 * PI * jp.alpha / (TWO_PI_32 * jp.denominator(k * k))
}

pub fn kernel_h_hat(k: f64, jp: &JelliumParams) -> f64 {
    k * k / (TWO_PI_32 * jp.denominator(k * k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    G,
    H,
}

impl Kernel {
    pub fn hat(self, k: f64, jp: &JelliumParams) -> f64 {
        match self {
            Kernel::G => kernel_g_hat(k, jp),
            Kernel::H => kernel_h_hat(k, jp),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RadialProfile {
    pub kernel: Kernel,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// `∫_{ℝ³} f = (2π)^{3/2} f̂(0)`.
    pub total_integral: f64,
}

/// `f(r) = √(2/π) r⁻¹ ∫_0^∞ k f̂(k) sin(kr) dk`.
fn radial_value(kernel: Kernel, jp: &JelliumParams, r: f64) -> Result<f64, SolveError> {
    let s = sine_integral(|k| k * kernel.hat(k, jp), r, 1e-12, 1e-16)?;
    Ok((2.0 / PI).sqrt() * s / r)
}

pub fn kernel_realspace(kernel: Kernel, jp: &JelliumParams, radii: &[f64]) -> Result<RadialProfile, SolveError> {
    jp.validate()?;
    if let Some(&bad) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(SolveError::InvalidArgument(format!(
            "radii must be positive, got {bad}"
        )));
    }
    let values = radii
        .par_iter()
        .map(|&r| radial_value(kernel, jp, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RadialProfile {
        kernel,
        radii: radii.to_vec(),
        values,
        total_integral: TWO_PI_32 * kernel.hat(0.0, jp),
    })
}

/// Writes `r,g,h`; both profiles must share their radii.
pub fn write_profiles_csv<W: Write>(g: &RadialProfile, h: &RadialProfile, mut w: W) -> std::io::Result<()> {
    assert_eq!(g.radii, h.radii, "profiles sampled at different radii");
    writeln!(w, "r,g,h")?;
    for ((r, a), b) in g.radii.iter().zip(&g.values).zip(&h.values) {
        writeln!(w, "{r:.16e},{a:.16e},{b:.16e}")?;
    }
    Ok(())
}

/// `4π ∫_0^∞ r² f(r) dr`, with `f(r)` itself from the oscillatory radial
/// inversion.
pub fn profile_integral(kernel: Kernel, jp: &JelliumParams) -> Result<f64, SolveError> {
    jp.validate()?;
    let err = std::cell::Cell::new(None);
    let integrand = |r: f64| {
        if r == 0.0 {
            return 0.0;
        }
        match radial_value(kernel, jp, r) {
            Ok(v) => r * r * v,
            Err(e) => {
                err.set(Some(e));
                0.0
            }
        }
    };
    // the profile varies on the scale of the longest screening length
    let split = 1.0 / (8.0 * PI * jp.alpha * jp.alpha / jp.p.c_w).powf(0.25).max(1e-3);
    let near = integrate(integrand, 0.0, split, 1e-15, 1e-12)?;
    let far = integrate_to_infinity(integrand, split, 1e-15, 1e-12)?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(4.0 * PI * (near + far))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScreeningEvaluation {
    Analytic,
    Quadrature,
    /// Uses `ĝ(0)` as the integral, omitting `(2π)^{3/2}`.
    WrongConvention,
}

/// `|2α ∫g − 1|`.
pub fn linear_screening_check(jp: &JelliumParams, how: ScreeningEvaluation) -> Result<f64, SolveError> {
    jp.validate()?;
    let int_g = match how {
        ScreeningEvaluation::Analytic => TWO_PI_32 * kernel_g_hat(0.0, jp),
        ScreeningEvaluation::Quadrature => profile_integral(Kernel::G, jp)?,
        ScreeningEvaluation::WrongConvention => kernel_g_hat(0.0, jp),
    };
    Ok((2.0 * jp.alpha * int_g - 1.0).abs())
}

/// Treatment of the `k = 0` plane wave on the box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroMode {
    /// The `k → 0` limits of the whole-space kernels; the Coulomb potential
    /// has zero mean.
    Screened,
    /// Coulomb zero-mode weight `w₀` of a periodic supercell kernel, used in
    /// both the kernels and the potential. Reproduces the supercell Euler
    /// equation on a jellium host exactly.
    Periodic(f64),
}

struct BoxOperators {
    m_g: Vec<f64>,
    m_h: Vec<f64>,
    coulomb: Vec<f64>,
}

impl BoxOperators {
    fn new(jp: &JelliumParams, lat: &Lattice, zero: ZeroMode) -> Self {
        let k2 = lat.k_norm_sq_table();
        let mut m_g: Vec<f64> = k2.iter().map(|&k| TWO_PI_32 * kernel_g_hat(k.sqrt(), jp)).collect();
        let mut m_h: Vec<f64> = k2.iter().map(|&k| TWO_PI_32 * kernel_h_hat(k.sqrt(), jp)).collect();
        let mut coulomb: Vec<f64> = k2.iter().map(|&k| if k == 0.0 { 0.0 } else { 4.0 * PI / k }).collect();
        if let ZeroMode::Periodic(w0) = zero {
            let a = jp.alpha;
            let den = jp.tf_stiffness() + 2.0 * a * a * w0;
            m_g[0] = a * w0 / den;
            m_h[0] = 1.0 / den;
            coulomb[0] = w0;
        }
        Self { m_g, m_h, coulomb }
    }

    fn apply(symbol: &[f64], f: &GridFunction) -> GridFunction {
        let mut spec = f.to_fourier();
        for (c, s) in spec.coeffs_mut().iter_mut().zip(symbol) {
            *c *= s;
        }
        spec.to_real()
    }

    /// `κ_ν(v)`, the part of the Euler equation beyond linear order.
    fn kappa(&self, jp: &JelliumParams, nu: &GridFunction, v: &GridFunction) -> GridFunction {
        let a = jp.alpha;
        let a73 = pow43(a) * a;
        let c = 5.0 / 3.0 * jp.p.c_tf;
        let charge = nu.zip_map(v, |n, x| n - 2.0 * a * x - x * x);
        let phi = Self::apply(&self.coulomb, &charge);
        v.zip_map(&phi, |x, p| {
            let t = x / a;
            let tf = if t >= -1.0 {
                a73 * binomial_remainder(t, 7.0 / 3.0)
            } else {
                let w = a + x;
                pow43(w) * w - a73 - 7.0 / 3.0 * pow43(a) * x
            };
            -c * tf + p * x
        })
    }

    fn map(&self, jp: &JelliumParams, nu: &GridFunction, v: &GridFunction) -> GridFunction {
        let src = nu.zip_map(v, |n, x| n - x * x);
        let mut out = Self::apply(&self.m_g, &src);
        out.axpy(1.0, &Self::apply(&self.m_h, &self.kappa(jp, nu, v)));
        out
    }
}

#[derive(Clone, Debug)]
pub struct JelliumSolution {
    pub v: GridFunction,
    /// `‖T(v) − v‖_{L²}` of the fixed-point map at the returned `v`.
    pub residual: f64,
    pub iters: usize,
    /// Damping factor used at every attempted step.
    pub damping_trace: Vec<f64>,
    /// Residual after every accepted step.
    pub residual_trace: Vec<f64>,
}

impl JelliumSolution {
    /// `∫(ν − 2αv − v²)`.
    pub fn screening_integral(&self, nu: &GridFunction, alpha: f64) -> f64 {
        nu.zip_map(&self.v, |n, x| n - 2.0 * alpha * x - x * x).integral()
    }

    /// `∫|v − g⋆ν|` over the box, the mass of the beyond-linear part.
    pub fn remainder_l1(&self, nu: &GridFunction, jp: &JelliumParams, zero: ZeroMode) -> f64 {
        self.v
            .zip_map(&linear_response(nu, jp, zero), |v, l| (v - l).abs())
            .integral()
    }
}

/// Default fixed-point tolerance on `‖T(v) − v‖_{L²}` when the solver
/// configuration leaves it open.
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-11;

/// `g ⋆ ν` on the box.
pub fn linear_response(nu: &GridFunction, jp: &JelliumParams, zero: ZeroMode) -> GridFunction {
    BoxOperators::apply(&BoxOperators::new(jp, nu.lattice(), zero).m_g, nu)
}

/// Solves `v = g⋆(ν − v²) + h⋆κ_ν(v)` by damped fixed-point iteration.
///
/// The damping starts at 0.5, grows by 1.25 after an accepted step (up to 1)
/// and halves after a rejected one; a step is accepted only if it lowers the
/// residual, so the accepted residuals decrease monotonically.
pub fn jellium_solve_field(
    nu: &GridFunction,
    jp: &JelliumParams,
    zero: ZeroMode,
    cfg: &SolverConfig,
) -> Result<JelliumSolution, SolveError> {
    jp.validate()?;
    cfg.validate()?;
    let tol = cfg.grad_tol.unwrap_or(DEFAULT_FIXED_POINT_TOL);
    let ops = BoxOperators::new(jp, nu.lattice(), zero);
    let mut v = GridFunction::zeros(*nu.lattice());
    let mut t = ops.map(jp, nu, &v);
    let mut res = (&t - &v).l2_norm();
    let mut theta = 0.5;
    let mut damping_trace = Vec::new();
    let mut residual_trace = vec![res];
    let mut iters = 0;
    while res > tol {
        if iters >= cfg.max_iters {
            return Err(SolveError::NotConverged { residual: res, iters });
        }
        iters += 1;
        damping_trace.push(theta);
        let mut cand = v.clone();
        cand.axpy(theta, &(&t - &v));
        let t_c = ops.map(jp, nu, &cand);
        let res_c = (&t_c - &cand).l2_norm();
        if res_c.is_finite() && res_c < res {
            v = cand;
            t = t_c;
            res = res_c;
            residual_trace.push(res);
            theta = (theta * 1.25).min(1.0);
        } else {
            theta *= 0.5;
            if theta < 1e-6 {
                return Err(SolveError::Diverged { trace: damping_trace });
            }
        }
    }
    Ok(JelliumSolution {
        v,
        residual: res,
        iters,
        damping_trace,
        residual_trace,
    })
}

/// [`jellium_solve_field`] for a defect given as Gaussians restricted to the box.
pub fn jellium_solve(
    nu: &[Gaussian],
    jp: &JelliumParams,
    box_lat: &Lattice,
    zero: ZeroMode,
    cfg: &SolverConfig,
) -> Result<JelliumSolution, SolveError> {
    jellium_solve_field(&restrict_to_cell(nu, box_lat), jp, zero, cfg)
}

/// Zero-mode weight of the box's own periodic Coulomb kernel.
pub fn periodic_zero_mode(box_lat: &Lattice) -> ZeroMode {
    ZeroMode::Periodic(build_kernel(box_lat).zero_mode_weight())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LadderRow {
    pub epsilon: f64,
    /// `‖v − g⋆ν‖_{L²}`.
    pub linear_residual: f64,
}

pub fn write_ladder_csv<W: Write>(rows: &[LadderRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epsilon,linear_residual")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e}", r.epsilon, r.linear_residual)?;
    }
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Solves for `ν = ε·shape` over `epsilons` and fits the log-log slope of
/// the deviation from linear response.
pub fn epsilon_ladder(
    shape: &[Gaussian],
    epsilons: &[f64],
    jp: &JelliumParams,
    box_lat: &Lattice,
    cfg: &SolverConfig,
) -> Result<(Vec<LadderRow>, f64), SolveError> {
    if epsilons.len() < 2 || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(SolveError::InvalidArgument(
            "need at least two positive epsilons".into(),
        ));
    }
    let base = restrict_to_cell(shape, box_lat);
    let rows = epsilons
        .par_iter()
        .map(|&eps| {
            let nu = base.scaled(eps);
            let sol = jellium_solve_field(&nu, jp, ZeroMode::Screened, cfg)?;
            let lin = linear_response(&nu, jp, ZeroMode::Screened);
            Ok(LadderRow {
                epsilon: eps,
                linear_residual: (&sol.v - &lin).l2_norm(),
            })
        })
        .collect::<Result<Vec<_>, SolveError>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.linear_residual).collect();
    Ok((rows, loglog_slope(&x, &y)))
}
