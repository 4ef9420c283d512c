//! Preconditioned projected gradient descent for the TFW problems.
//!
//! All problems are solved in the full amplitude `w` (`w = u` for the
//! periodic problem, `w = u⁰ + v` for defects). Charge constraints are the
//! sphere `∫w² = target`, kept by rescaling after every step. Search
//! directions are the preconditioned gradient projected onto the tangent
//! space in the preconditioner metric.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::field::GridFunction;
use crate::functional::{pow43, DefectTfw, Objective, PeriodicTfw};
use crate::lattice::Lattice;
use crate::random::{rng, smooth_field};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum StepRule {
    /// Constant step in the preconditioned direction, no energy checks.
    Fixed {
        step: f64,
    },
    Backtracking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// `L²` residual tolerance; `1e-8·√N` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(default = "default_step_rule")]
    pub step_rule: StepRule,
    #[serde(default = "yes")]
    pub precondition: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_iters() -> usize {
    5000
}

fn default_step_rule() -> StepRule {
    StepRule::Backtracking
}

fn yes() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            grad_tol: None,
            step_rule: default_step_rule(),
            precondition: true,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn tolerance(&self, lat: &Lattice) -> f64 {
        self.grad_tol.unwrap_or(1e-8 * (lat.len() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if self.max_iters == 0 {
            return Err(SolveError::InvalidArgument("max_iters must be >= 1".into()));
        }
        if let Some(t) = self.grad_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(SolveError::InvalidArgument("grad_tol must be positive".into()));
            }
        }
        if let StepRule::Fixed { step } = self.step_rule {
            if !(step > 0.0 && step.is_finite()) {
                return Err(SolveError::InvalidArgument("step must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub residual: f64,
    pub constraint_violation: f64,
    pub multiplier: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    /// `u` for periodic problems, `v` for defect problems.
    pub v: GridFunction,
    pub energy: f64,
    /// `ε_F` or `μ_{ν,q,L}`; zero for unconstrained problems.
    pub multiplier: f64,
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    /// Set when an iterate went negative and the solve restarted from `|w|`.
    pub positivity_fallback: bool,
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    pub fn into_result(self) -> Result<Self, SolveError> {
        if self.converged {
            Ok(self)
        } else {
            Err(SolveError::NotConverged {
                residual: self.residual,
                iters: self.iters,
            })
        }
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iter,energy,residual,constraint_violation,multiplier")?;
    for r in trace {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.iter, r.energy, r.residual, r.constraint_violation, r.multiplier
        )?;
    }
    Ok(())
}

/// Inverse of `C_W|k|² + (20/9)C_TF ū^{4/3} + 2ū² w_k`, the linearized
/// response of a homogeneous host of amplitude `ū`. The Coulomb weight of
/// the zero mode is only included for unconstrained problems.
struct Preconditioner {
    inv: Vec<f64>,
}

impl Preconditioner {
    fn new(obj: &dyn Objective, include_zero_mode: bool, enabled: bool) -> Self {
        let lat = obj.lattice();
        if !enabled {
            return Self {
                inv: vec![1.0; lat.len()],
            };
        }
        let p = obj.params();
        let ubar = obj.reference_amplitude();
        let shift = (20.0 / 9.0 * p.c_tf * pow43(ubar)).max(p.c_w * lat.dk() * lat.dk());
        let k2 = lat.k_norm_sq_table();
        let inv = k2
            .iter()
            .zip(obj.kernel().weights())
            .map(|(&k, &wk)| {
                let coulomb = if k == 0.0 && !include_zero_mode {
                    0.0
                } else {
                    2.0 * ubar * ubar * wk
                };
                1.0 / (p.c_w * k + shift + coulomb)
            })
            .collect();
        Self { inv }
    }

    fn apply(&self, f: &GridFunction) -> GridFunction {
        let mut spec = f.to_fourier();
        for (c, s) in spec.coeffs_mut().iter_mut().zip(&self.inv) {
            *c *= s;
        }
        spec.to_real()
    }
}

/// Iterations without a new best residual after which a solve is abandoned.
const STALL_WINDOW: usize = 200;

struct Outcome {
    w: GridFunction,
    energy: f64,
    multiplier: f64,
    residual: f64,
    iters: usize,
    converged: bool,
    fallback: bool,
    trace: Vec<TraceRow>,
}

fn retract(w: &mut GridFunction, target: f64) {
    let n2 = w.inner(w);
    if n2 > 0.0 {
        *w = w.scaled((target / n2).sqrt());
    }
}

/// Multiplier and tangent residual at `w`.
fn stationarity(g: &GridFunction, w: &GridFunction, constrained: bool) -> (f64, GridFunction) {
    if !constrained {
        return (0.0, g.clone());
    }
    let mu = g.inner(w) / (2.0 * w.inner(w));
    let mut r = g.clone();
    r.axpy(-2.0 * mu, w);
    (mu, r)
}

fn descend(obj: &dyn Objective, init: GridFunction, target: Option<f64>, cfg: &SolverConfig) -> Outcome {
    let lat = *obj.lattice();
    let tol = cfg.tolerance(&lat);
    let constrained = target.is_some();
    let pre = Preconditioner::new(obj, !constrained, cfg.precondition);
    let mut w = init;
    if let Some(t) = target {
        retract(&mut w, t);
    }
    let violation = |w: &GridFunction| target.map_or(0.0, |t| (w.inner(w) - t).abs());

    let (mut energy, mut grad) = obj.eval(&w);
    let mut trace = Vec::new();
    let mut step = match cfg.step_rule {
        StepRule::Fixed { step } => step,
        StepRule::Backtracking => 1.0,
    };
    let mut fallback = false;
    let mut iters = 0;
    let mut best = f64::INFINITY;
    let mut best_iter = 0;
    loop {
        let (mu, r) = stationarity(&grad, &w, constrained);
        let residual = r.l2_norm();
        trace.push(TraceRow {
            iter: iters,
            energy,
            residual,
            constraint_violation: violation(&w),
            multiplier: mu,
        });
        if residual <= tol {
            if w.min() < 0.0 && !fallback {
                fallback = true;
                w = w.map(f64::abs);
                (energy, grad) = obj.eval(&w);
                continue;
            }
            return Outcome {
                w,
                energy,
                multiplier: mu,
                residual,
                iters,
                converged: true,
                fallback,
                trace,
            };
        }
        if residual < best {
            best = residual;
            best_iter = iters;
        }
        let stalled = iters - best_iter >= STALL_WINDOW;
        if iters >= cfg.max_iters || !residual.is_finite() || stalled {
            return Outcome {
                w,
                energy,
                multiplier: mu,
                residual,
                iters,
                converged: false,
                fallback,
                trace,
            };
        }
        iters += 1;

        // built from the tangent residual rather than the full gradient: near
        // convergence `grad ≈ 2μw` and the projection would cancel catastrophically
        let mut d = pre.apply(&r);
        if constrained {
            let pw = pre.apply(&w);
            let coef = d.inner(&w) / pw.inner(&w);
            d.axpy(-coef, &pw);
        }
        let slope = r.inner(&d);

        let trial = |t: f64| {
            let mut wt = w.clone();
            wt.axpy(-t, &d);
            if let Some(tg) = target {
                retract(&mut wt, tg);
            }
            let (et, gt) = obj.eval(&wt);
            (wt, et, gt)
        };

        match cfg.step_rule {
            StepRule::Fixed { step } => {
                let (wt, et, gt) = trial(step);
                w = wt;
                energy = et;
                grad = gt;
            }
            StepRule::Backtracking => {
                let mut t = step;
                let mut accepted = None;
                for _ in 0..60 {
                    let (wt, et, gt) = trial(t);
                    // slope along the path at t; `slope` is its value at 0
                    let (_, rt) = stationarity(&gt, &wt, constrained);
                    let slope_t = rt.inner(&d);
                    let armijo = et <= energy - 1e-4 * t * slope;
                    // below round-off the energy difference is noise, so the
                    // accurate path slope decides whether the step overshot
                    let noise = 1e-13 * energy.abs().max(1.0);
                    let flat = (et - energy).abs() <= noise && slope_t >= -0.8 * slope;
                    if armijo || flat {
                        accepted = Some((wt, et, gt, t, slope_t));
                        break;
                    }
                    t = if slope_t < 0.0 {
                        secant(t, slope, slope_t).clamp(0.1 * t, 0.5 * t)
                    } else {
                        0.5 * t
                    };
                }
                match accepted {
                    Some((wt, et, gt, t, slope_t)) => {
                        w = wt;
                        energy = et;
                        grad = gt;
                        // minimizer of the quadratic model along the last direction
                        step = if slope - slope_t > 0.0 {
                            secant(t, slope, slope_t).clamp(0.1 * t, 10.0 * t)
                        } else {
                            2.0 * t
                        };
                    }
                    None => {
                        let (mu, r) = stationarity(&grad, &w, constrained);
                        return Outcome {
                            residual: r.l2_norm(),
                            w,
                            energy,
                            multiplier: mu,
                            iters,
                            converged: false,
                            fallback,
                            trace,
                        };
                    }
                }
            }
        }
    }
}

/// Zero of the linear interpolant of the path slope through `(0, s0)` and `(t, st)`.
fn secant(t: f64, s0: f64, st: f64) -> f64 {
    t * s0 / (s0 - st)
}

/// `I_R(ρ_nuc, Q)`: minimizes `E_R` over `∫u² = Q`.
pub fn minimize_constrained(obj: &PeriodicTfw, q: f64, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    let lat = *Objective::lattice(obj);
    let init = GridFunction::constant(lat, (q.max(0.0) / lat.volume()).sqrt());
    minimize_constrained_from(obj, q, init, cfg)
}

pub fn minimize_constrained_from(
    obj: &PeriodicTfw,
    q: f64,
    init: GridFunction,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    if !(q >= 0.0) {
        return Err(SolveError::NegativeCharge(q));
    }
    let lat = *Objective::lattice(obj);
    init.same_lattice(&GridFunction::zeros(lat))?;
    if q == 0.0 {
        let u = GridFunction::zeros(lat);
        let energy = obj.energy(&u);
        return Ok(trivial(u, energy));
    }
    let out = descend(obj, init, Some(q), cfg);
    let w = if out.w.integral() < 0.0 { -&out.w } else { out.w };
    Ok(SolveResult {
        v: w,
        energy: out.energy,
        multiplier: out.multiplier,
        residual: out.residual,
        iters: out.iters,
        converged: out.converged,
        positivity_fallback: out.fallback,
        trace: out.trace,
    })
}

fn trivial(v: GridFunction, energy: f64) -> SolveResult {
    SolveResult {
        v,
        energy,
        multiplier: 0.0,
        residual: 0.0,
        iters: 0,
        converged: true,
        positivity_fallback: false,
        trace: vec![TraceRow {
            iter: 0,
            energy,
            residual: 0.0,
            constraint_violation: 0.0,
            multiplier: 0.0,
        }],
    }
}

fn defect_result(obj: &DefectTfw, out: Outcome) -> SolveResult {
    let u0 = &obj.state().u0;
    let w = if out.w.inner(u0) < 0.0 { -&out.w } else { out.w };
    SolveResult {
        v: &w - u0,
        energy: out.energy,
        multiplier: out.multiplier,
        residual: out.residual,
        iters: out.iters,
        converged: out.converged,
        positivity_fallback: out.fallback,
        trace: out.trace,
    }
}

/// Constrained target `∫(u⁰)² + q`, checked for feasibility.
fn defect_target(obj: &DefectTfw, q: f64) -> Result<f64, SolveError> {
    let target = obj.state().rho0.integral() + q;
    if !(target >= 0.0) {
        return Err(SolveError::InfeasibleCharge(target));
    }
    Ok(target)
}

/// Minimizes `ℰ^ν_L` under `∫(2u⁰v + v²) = q`, starting from `v = 0`.
pub fn minimize_defect_constrained(obj: &DefectTfw, q: f64, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    minimize_defect_constrained_from(obj, q, obj.state().u0.clone(), cfg)
}

/// As [`minimize_defect_constrained`] from the amplitude `w = u⁰ + v`.
pub fn minimize_defect_constrained_from(
    obj: &DefectTfw,
    q: f64,
    init_w: GridFunction,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    let target = defect_target(obj, q)?;
    init_w.same_lattice(&obj.state().u0)?;
    if target == 0.0 {
        let v = -&obj.state().u0;
        let energy = obj.energy(&v);
        return Ok(trivial(v, energy));
    }
    Ok(defect_result(obj, descend(obj, init_w, Some(target), cfg)))
}

/// Minimizes `ℰ^ν_L` without a charge constraint, starting from `v = 0`.
pub fn minimize_defect_free(obj: &DefectTfw, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    minimize_defect_free_from(obj, obj.state().u0.clone(), cfg)
}

pub fn minimize_defect_free_from(
    obj: &DefectTfw,
    init_w: GridFunction,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    init_w.same_lattice(&obj.state().u0)?;
    Ok(defect_result(obj, descend(obj, init_w, None, cfg)))
}

/// Problem handed to [`uniqueness_probe`].
pub enum Problem<'a> {
    Periodic { obj: &'a PeriodicTfw, q: f64 },
    DefectConstrained { obj: &'a DefectTfw, q: f64 },
    DefectFree { obj: &'a DefectTfw },
}

/// Solves from `n_starts` random positive initializations and returns the
/// largest pairwise `‖ρ_i − ρ_j‖ / ‖ρ_1‖`, where `ρ` is the electronic
/// density (periodic) or the electronic response `2u⁰v + v²` (defect).
pub fn uniqueness_probe(problem: &Problem<'_>, n_starts: usize, cfg: &SolverConfig) -> Result<f64, SolveError> {
    if n_starts < 2 {
        return Ok(0.0);
    }
    let densities: Vec<GridFunction> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(cfg.seed.wrapping_add(i as u64));
            let res = match problem {
                Problem::Periodic { obj, q } => {
                    let lat = *Objective::lattice(*obj);
                    let ubar = (q / lat.volume()).sqrt();
                    let init = smooth_field(lat, &mut r, ubar, 0.5 * ubar);
                    minimize_constrained_from(obj, *q, init, cfg)?.into_result()?
                }
                Problem::DefectConstrained { obj, q } => {
                    minimize_defect_constrained_from(obj, *q, random_host_start(obj, &mut r), cfg)?.into_result()?
                }
                Problem::DefectFree { obj } => {
                    minimize_defect_free_from(obj, random_host_start(obj, &mut r), cfg)?.into_result()?
                }
            };
            Ok(match problem {
                Problem::Periodic { .. } => res.v.map(|x| x * x),
                Problem::DefectConstrained { obj, .. } | Problem::DefectFree { obj } => obj.electron_response(&res.v),
            })
        })
        .collect::<Result<_, SolveError>>()?;
    let scale = densities[0].l2_norm().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..n_starts {
        for j in i + 1..n_starts {
            worst = worst.max((&densities[i] - &densities[j]).l2_norm() / scale);
        }
    }
    Ok(worst)
}

/// `u⁰` modulated by a positive random factor in `[0.6, 1.4]`.
fn random_host_start(obj: &DefectTfw, r: &mut impl rand::Rng) -> GridFunction {
    let u0 = &obj.state().u0;
    let factor = smooth_field(*u0.lattice(), r, 1.0, 0.4);
    u0 * &factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{PerfectCrystalState, TfwParams};
    use crate::model::{Gaussian, NuclearModel};
    use approx::assert_relative_eq;

    #[test]
    fn jellium_ground_state_is_constant() {
        let lat = Lattice::new(2.0, 1, 8).unwrap();
        let p = TfwParams::default();
        let alpha: f64 = 0.6;
        let obj = PeriodicTfw::new(GridFunction::constant(lat, alpha * alpha), p);
        let res = minimize_constrained(&obj, alpha * alpha * lat.volume(), &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!((&res.v - &GridFunction::constant(lat, alpha)).max_abs() < 1e-12);
        assert_relative_eq!(
            res.multiplier,
            5.0 / 3.0 * p.c_tf * alpha.powf(4.0 / 3.0),
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_charge_and_bad_inputs() {
        let lat = Lattice::new(1.0, 1, 8).unwrap();
        let rho = GridFunction::constant(lat, 1.0);
        let obj = PeriodicTfw::new(rho.clone(), TfwParams::default());
        let res = minimize_constrained(&obj, 0.0, &SolverConfig::default()).unwrap();
        assert_eq!(res.v.max_abs(), 0.0);
        let k = crate::coulomb::build_kernel(&lat);
        assert_relative_eq!(res.energy, 0.5 * k.form(&rho, &rho).unwrap(), max_relative = 1e-13);
        assert!(matches!(
            minimize_constrained(&obj, -1.0, &SolverConfig::default()),
            Err(SolveError::NegativeCharge(_))
        ));
        let bad = SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        };
        assert!(minimize_constrained(&obj, 1.0, &bad).is_err());
    }

    #[test]
    fn gaussian_crystal_converges_with_monotone_energy() {
        let lat = Lattice::new(2.0, 1, 12).unwrap();
        let model = NuclearModel {
            background: 0.0,
            periodic: vec![Gaussian::new(1.0, [0.0; 3], 0.3).unwrap()],
            defect: vec![],
        };
        let rho = model.periodic_density(&lat);
        let obj = PeriodicTfw::new(rho.clone(), TfwParams::default());
        let res = minimize_constrained(&obj, rho.integral(), &SolverConfig::default()).unwrap();
        assert!(res.converged, "residual {} after {}", res.residual, res.iters);
        assert!(res.v.min() > 0.0);
        for pair in res.trace.windows(2) {
            let scale = 1e-12 * pair[0].energy.abs().max(1.0);
            assert!(pair[1].energy <= pair[0].energy + scale);
        }
        for row in &res.trace {
            assert!(row.constraint_violation <= 1e-10 * rho.integral());
        }
        let mut csv = Vec::new();
        write_trace_csv(&res.trace, &mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("iter,energy,residual,constraint_violation,multiplier\n"));
    }

    #[test]
    fn unperturbed_defect_problem_is_trivial() {
        let lat = Lattice::new(1.0, 2, 8).unwrap();
        let p = TfwParams::default();
        let state = PerfectCrystalState::jellium(0.8, lat, &p);
        let obj = DefectTfw::new(state, GridFunction::zeros(lat), p).unwrap();
        let c = minimize_defect_constrained(&obj, 0.0, &SolverConfig::default()).unwrap();
        assert!(c.v.max_abs() < 1e-12);
        assert!(c.multiplier.abs() < 1e-10);
        let f = minimize_defect_free(&obj, &SolverConfig::default()).unwrap();
        assert!(f.v.max_abs() < 1e-12);
    }

    #[test]
    fn infeasible_charge_rejected() {
        let lat = Lattice::new(1.0, 1, 8).unwrap();
        let p = TfwParams::default();
        let state = PerfectCrystalState::jellium(0.5, lat, &p);
        let obj = DefectTfw::new(state, GridFunction::zeros(lat), p).unwrap();
        assert!(matches!(
            minimize_defect_constrained(&obj, -1.0, &SolverConfig::default()),
            Err(SolveError::InfeasibleCharge(_))
        ));
    }
}
