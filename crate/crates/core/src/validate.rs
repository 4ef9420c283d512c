//! Built-in invariant checks: gradient consistency, convexity sampling,
//! Parseval, Coulomb form symmetry and the jellium kernel identities.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::coulomb::build_kernel;
use crate::error::SolveError;
use crate::field::GridFunction;
use crate::functional::{directional_fd_error, ConvexityBound, DefectTfw, PerfectCrystalState, PeriodicTfw, TfwParams};
use crate::jellium::{kernel_h_hat, linear_screening_check, JelliumParams, ScreeningEvaluation};
use crate::lattice::Lattice;
use crate::model::NuclearModel;
use crate::random::{rng, smooth_field};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckOutcome {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

pub fn write_checks_csv<W: Write>(checks: &[CheckOutcome], mut w: W) -> std::io::Result<()> {
    writeln!(w, "check,value,threshold,passed")?;
    for c in checks {
        writeln!(w, "{},{:.16e},{:.16e},{}", c.name, c.value, c.threshold, c.passed)?;
    }
    Ok(())
}

/// Finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative finite-difference mismatch of the periodic functional
/// over `n_states` random positive states and directions.
pub fn periodic_gradient_error(rho_nuc: &GridFunction, p: &TfwParams, n_states: usize, seed: u64) -> f64 {
    let lat = *rho_nuc.lattice();
    let obj = PeriodicTfw::new(rho_nuc.clone(), *p);
    let mut r = rng(seed);
    (0..n_states)
        .map(|_| {
            let v = smooth_field(lat, &mut r, 0.6, 0.3);
            let h = smooth_field(lat, &mut r, 0.0, 1.0);
            directional_fd_error(|x| obj.energy_and_gradient(x), &v, &h, FD_STEP)
        })
        .fold(0.0, f64::max)
}

/// As [`periodic_gradient_error`] for the defect functional around a random
/// positive host.
pub fn defect_gradient_error(
    rho_nuc: &GridFunction,
    p: &TfwParams,
    n_states: usize,
    seed: u64,
) -> Result<f64, SolveError> {
    let lat = *rho_nuc.lattice();
    let mut r = rng(seed);
    let u0 = smooth_field(lat, &mut r, 0.8, 0.3);
    let state = PerfectCrystalState::from_ground_state(u0, rho_nuc, 1.0);
    let nu = smooth_field(lat, &mut r, 0.0, 0.5);
    let obj = DefectTfw::new(state, nu, *p)?;
    Ok((0..n_states)
        .map(|_| {
            let v = smooth_field(lat, &mut r, 0.0, 0.3);
            let h = smooth_field(lat, &mut r, 0.0, 1.0);
            directional_fd_error(|x| obj.energy_and_gradient(x), &v, &h, FD_STEP)
        })
        .fold(0.0, f64::max))
}

/// A random `(a, b)` with `m ≤ a ≤ M`, `b ≥ −a`: half the draws have
/// `|b| ≤ a`, the rest are log-uniform in `[10⁻³, 10³]`.
pub fn sample_convexity_point(r: &mut impl Rng, m: f64, big_m: f64) -> (f64, f64) {
    let a = r.random_range(m..=big_m);
    let b = if r.random_bool(0.5) {
        r.random_range(-a..=a)
    } else {
        10f64.powf(r.random_range(-3.0..=3.0))
    };
    (a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvexitySampling {
    pub gamma: f64,
    pub c: f64,
    pub samples: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
}

/// Counts violations of the lower inequality on one sample and of the
/// calibrated upper inequality on a second, independent sample.
pub fn convexity_sampling(
    m: f64,
    big_m: f64,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<ConvexitySampling, SolveError> {
    let bound = ConvexityBound::calibrate(m, big_m, gamma)?;
    let mut lower_violations = 0;
    let mut r = rng(seed);
    for _ in 0..samples {
        let (a, b) = sample_convexity_point(&mut r, m, big_m);
        let (lo, mid, _) = bound.gap(a, b)?;
        lower_violations += usize::from(lo > mid);
    }
    let mut upper_violations = 0;
    let mut r = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    for _ in 0..samples {
        let (a, b) = sample_convexity_point(&mut r, m, big_m);
        let (_, mid, up) = bound.gap(a, b)?;
        upper_violations += usize::from(mid > up);
    }
    Ok(ConvexitySampling {
        gamma,
        c: bound.c,
        samples,
        lower_violations,
        upper_violations,
    })
}

/// `|‖f‖² − Σ|c_k|²| / ‖f‖²` for a random field.
pub fn parseval_error(lat: Lattice, seed: u64) -> f64 {
    let f = smooth_field(lat, &mut rng(seed), 0.2, 1.0);
    let direct = f.inner(&f);
    (direct - f.to_fourier().norm_sq()).abs() / direct
}

/// Asymmetry `|D(f,g) − D(g,f)|` relative to `√(D(f,f)D(g,g))`, and the
/// smallest `D(f,f)` seen, over random pairs.
pub fn coulomb_form_checks(lat: Lattice, pairs: usize, seed: u64) -> Result<(f64, f64), SolveError> {
    let kernel = build_kernel(&lat);
    let mut r = rng(seed);
    let mut asym: f64 = 0.0;
    let mut min_self = f64::INFINITY;
    for _ in 0..pairs {
        let f = smooth_field(lat, &mut r, 0.0, 1.0);
        let g = smooth_field(lat, &mut r, 0.0, 1.0);
        let ff = kernel.form(&f, &f)?;
        let gg = kernel.form(&g, &g)?;
        let fg = kernel.form(&f, &g)?;
        let gf = kernel.form(&g, &f)?;
        asym = asym.max((fg - gf).abs() / (ff * gg).sqrt());
        min_self = min_self.min(ff.min(gg));
    }
    Ok((asym, min_self))
}

/// Settings of the invariant suite.
#[derive(Clone, Debug)]
pub struct SuiteSettings {
    pub lattice: Lattice,
    pub model: NuclearModel,
    pub p: TfwParams,
    pub alpha: f64,
    pub gradient_states: usize,
    pub convexity_samples: usize,
    pub seed: u64,
}

pub fn invariant_suite(s: &SuiteSettings) -> Result<Vec<CheckOutcome>, SolveError> {
    let lat = s.lattice;
    let mut rho = s.model.periodic_density(&lat);
    if rho.max_abs() == 0.0 {
        rho = smooth_field(lat, &mut rng(s.seed.wrapping_add(7)), 1.0, 0.5);
    }
    let mut out = vec![
        CheckOutcome::at_most(
            "gradient_periodic",
            periodic_gradient_error(&rho, &s.p, s.gradient_states, s.seed),
            1e-6,
        ),
        CheckOutcome::at_most(
            "gradient_defect",
            defect_gradient_error(&rho, &s.p, s.gradient_states, s.seed.wrapping_add(1))?,
            1e-6,
        ),
    ];
    for (i, gamma) in [2.0, 10.0 / 3.0].into_iter().enumerate() {
        let c = convexity_sampling(0.2, 5.0, gamma, s.convexity_samples, s.seed.wrapping_add(10 + i as u64))?;
        let tag = if i == 0 { "2" } else { "10/3" };
        out.push(CheckOutcome::at_most(
            format!("convexity_lower_gamma_{tag}"),
            c.lower_violations as f64,
            0.0,
        ));
        out.push(CheckOutcome::at_most(
            format!("convexity_upper_gamma_{tag}"),
            c.upper_violations as f64,
            0.0,
        ));
    }
    out.push(CheckOutcome::at_most("parseval", parseval_error(lat, s.seed), 1e-12));
    let (asym, min_self) = coulomb_form_checks(lat, 4, s.seed)?;
    out.push(CheckOutcome::at_most("coulomb_symmetry", asym, 1e-12));
    out.push(CheckOutcome::at_most("coulomb_positivity", -min_self, 0.0));
    let jp = JelliumParams::new(s.alpha, s.p)?;
    out.push(CheckOutcome::at_most(
        "screening_identity_analytic",
        linear_screening_check(&jp, ScreeningEvaluation::Analytic)?,
        1e-14,
    ));
    out.push(CheckOutcome::at_most(
        "screening_identity_quadrature",
        linear_screening_check(&jp, ScreeningEvaluation::Quadrature)?,
        1e-8,
    ));
    out.push(CheckOutcome::at_most(
        "h_hat_at_zero",
        kernel_h_hat(0.0, &jp).abs(),
        0.0,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let s = SuiteSettings {
            lattice: Lattice::new(2.0, 1, 8).unwrap(),
            model: NuclearModel::default(),
            p: TfwParams::default(),
            alpha: 1.0,
            gradient_states: 2,
            convexity_samples: 2000,
            seed: 3,
        };
        let checks = invariant_suite(&s).unwrap();
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
        let mut csv = Vec::new();
        write_checks_csv(&checks, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), checks.len() + 1);
    }

    #[test]
    fn samples_stay_in_domain() {
        let mut r = rng(1);
        for _ in 0..10_000 {
            let (a, b) = sample_convexity_point(&mut r, 0.2, 5.0);
            assert!((0.2..=5.0).contains(&a) && b >= -a);
        }
    }
}
