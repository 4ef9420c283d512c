//! One-dimensional quadrature: adaptive Gauss–Kronrod on finite intervals,
//! half-infinite integrals by a rational map, and Fourier sine integrals
//! summed panel by panel with Wynn's epsilon acceleration.

use crate::error::SolveError;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point Gauss rule.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod: bisects the worst panel until the summed error
/// estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64, SolveError> {
    if a == b {
        return Ok(0.0);
    }
    let (i0, e0) = gk15(&f, a, b);
    let mut panels = vec![(a, b, i0, e0)];
    let mut total = i0;
    let mut err = e0;
    for _ in 0..2000 {
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (pa, pb, pi, pe) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        let (li, le) = gk15(&f, pa, mid);
        let (ri, re) = gk15(&f, mid, pb);
        total += li + ri - pi;
        err += le + re - pe;
        panels.push((pa, mid, li, le));
        panels.push((mid, pb, ri, re));
    }
    // recompute the sums to shed accumulated cancellation before judging
    total = panels.iter().map(|p| p.2).sum();
    err = panels.iter().map(|p| p.3).sum();
    if err <= abs_tol.max(rel_tol * total.abs()) {
        Ok(total)
    } else {
        Err(SolveError::Quadrature(format!(
            "adaptive Gauss-Kronrod on [{a}, {b}] stalled with error estimate {err:e}"
        )))
    }
}

/// `∫_a^∞ f` via `x = a + t/(1−t)`.
pub fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64, abs_tol: f64, rel_tol: f64) -> Result<f64, SolveError> {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            f(a + t / s) / (s * s)
        },
        0.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

/// Wynn's epsilon table over a sequence of partial sums; returns the latest
/// even-column extrapolation.
fn wynn_epsilon(sums: &[f64]) -> f64 {
    let n = sums.len();
    let mut prev = vec![0.0; n + 1];
    let mut cur: Vec<f64> = sums.to_vec();
    let mut best = *sums.last().expect("nonempty");
    let mut col = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let diff = cur[i + 1] - cur[i];
            let val = if diff == 0.0 {
                f64::INFINITY
            } else {
                prev[i + 1] + 1.0 / diff
            };
            next.push(val);
        }
        prev = cur;
        cur = next;
        col += 1;
        if col % 2 == 0 {
            match cur.last() {
                Some(v) if v.is_finite() => best = *v,
                _ => break,
            }
        }
    }
    best
}

/// `∫_0^∞ f(k) sin(kr) dk` for `f` decaying at least like `1/k`.
///
/// The integral is split at the zeros `jπ/r`; the resulting alternating
/// series of panel integrals is accelerated with Wynn's epsilon. Stops when
/// successive extrapolations differ by less than `max(tol·|I|, abs_tol)`.
pub fn sine_integral(f: impl Fn(f64) -> f64, r: f64, tol: f64, abs_tol: f64) -> Result<f64, SolveError> {
    if !(r > 0.0) {
        return Err(SolveError::Quadrature(format!("sine integral needs r > 0, got {r}")));
    }
    let period = std::f64::consts::PI / r;
    let g = |k: f64| f(k) * (k * r).sin();
    let mut sums = Vec::new();
    let mut acc = 0.0;
    let mut last = f64::NAN;
    let mut stable = 0;
    for j in 0..400 {
        let a = j as f64 * period;
        let panel = integrate(g, a, a + period, 1e-3 * abs_tol, 1e-13)?;
        acc += panel;
        sums.push(acc);
        if sums.len() < 6 {
            continue;
        }
        let start = sums.len().saturating_sub(40);
        let est = wynn_epsilon(&sums[start..]);
        let small_panel = panel.abs() <= (1e-3 * tol * acc.abs()).max(1e-3 * abs_tol);
        if (est - last).abs() <= (tol * est.abs()).max(abs_tol) || small_panel {
            stable += 1;
            if stable >= 2 {
                return Ok(if small_panel { acc } else { est });
            }
        } else {
            stable = 0;
        }
        last = est;
    }
    Err(SolveError::Quadrature(format!(
        "sine integral at r = {r} did not settle within 400 panels"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn gauss_kronrod_exact_and_adaptive() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-14, 1e-14).unwrap();
        assert_relative_eq!(v, (64.0 - 1.0) / 6.0 - (8.0 + 1.0), max_relative = 1e-14);
        let v = integrate(|x| x.sqrt(), 0.0, 1.0, 1e-13, 1e-13).unwrap();
        assert_relative_eq!(v, 2.0 / 3.0, max_relative = 1e-12);
        let v = integrate_to_infinity(|x| (-x * x).exp(), 0.0, 1e-14, 1e-13).unwrap();
        assert_relative_eq!(v, PI.sqrt() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn sine_integrals_with_closed_forms() {
        // ∫ sin(kr)/k = π/2, conditionally convergent
        let v = sine_integral(|k| if k == 0.0 { 0.0 } else { 1.0 / k }, 1.7, 1e-11, 0.0).unwrap();
        assert_relative_eq!(v, PI / 2.0, max_relative = 1e-9);
        // ∫ k sin(kr)/(k²+m²) = (π/2) e^{-mr}
        let m: f64 = 0.8;
        let r = 2.5;
        let v = sine_integral(|k| k / (k * k + m * m), r, 1e-11, 0.0).unwrap();
        assert_relative_eq!(v, PI / 2.0 * (-m * r).exp(), max_relative = 1e-9);
        assert!(sine_integral(|k| k, 0.0, 1e-8, 0.0).is_err());
    }
}
