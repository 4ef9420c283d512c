//! Perfect-crystal reference solves, defect diagnostics, and the supercell
//! thermodynamic-limit scan.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coulomb::poisson_periodic;
use crate::error::SolveError;
use crate::field::GridFunction;
use crate::functional::{DefectTfw, PerfectCrystalState, PeriodicTfw, TfwParams};
use crate::lattice::Lattice;
use crate::minimize::{
    minimize_constrained, minimize_defect_constrained, minimize_defect_free, SolveResult, SolverConfig,
};
use crate::model::NuclearModel;

/// Perfect crystal on the unit cell together with its solver record.
#[derive(Clone, Debug)]
pub struct PerfectSolution {
    pub state: PerfectCrystalState,
    pub rho_nuc: GridFunction,
    pub result: SolveResult,
}

impl PerfectSolution {
    /// `∫_Γ₁ (ρ_nuc − ρ⁰)`.
    pub fn neutrality_defect(&self) -> f64 {
        (&self.rho_nuc - &self.state.rho0).integral()
    }
}

/// Ground state of the periodic crystal at the neutral charge `Q = Z`, where
/// `Z` is the grid integral of the nuclear density.
pub fn solve_perfect(
    model: &NuclearModel,
    unit: &Lattice,
    p: &TfwParams,
    cfg: &SolverConfig,
) -> Result<PerfectSolution, SolveError> {
    if unit.supercell() != 1 {
        return Err(SolveError::InvalidArgument(
            "the perfect crystal is solved on the unit cell".into(),
        ));
    }
    model.validate(unit.a())?;
    let rho_nuc = model.periodic_density(unit);
    let z = rho_nuc.integral();
    let obj = PeriodicTfw::new(rho_nuc.clone(), *p);
    let result = minimize_constrained(&obj, z, cfg)?.into_result()?;
    let min = result.v.min();
    if !(min > 0.0) {
        return Err(SolveError::NonPositiveHost(min));
    }
    let state = PerfectCrystalState::from_ground_state(result.v.clone(), &rho_nuc, result.multiplier);
    Ok(PerfectSolution { state, rho_nuc, result })
}

/// Quantities attached to a converged defect solve.
#[derive(Clone, Debug)]
pub struct DefectDiagnostics {
    /// `ρ⁰_ν = ν_L − (2u⁰v + v²)`.
    pub rho_defect: GridFunction,
    /// Zero-mean periodic potential of `ρ⁰_ν`.
    pub phi: GridFunction,
    /// `∫ ρ⁰_ν`.
    pub screening_integral: f64,
    /// `(r, smallk_avg(r))` over the smallest distinct `|k|` shells.
    pub shells: Vec<(f64, f64)>,
}

pub fn defect_diagnostics(obj: &DefectTfw, v: &GridFunction) -> DefectDiagnostics {
    let rho_defect = obj.nu() - &obj.electron_response(v);
    let phi = poisson_periodic(&rho_defect);
    let screening_integral = rho_defect.integral();
    let shells = smallk_shells(&rho_defect, 4);
    DefectDiagnostics {
        rho_defect,
        phi,
        screening_integral,
        shells,
    }
}

/// Average of `|ρ̂(k)|` over the grid modes in the closed ball `|k| ≤ r`.
///
/// `ρ̂` uses the unitary whole-space transform, approximated on `Γ` by
/// `(2π)^{-3/2} |Γ|^{1/2} c_k`. The ball volume is replaced by the mode
/// count times the reciprocal cell volume, so the result is a plain mean.
pub fn smallk_avg(rho: &GridFunction, r: f64) -> f64 {
    let lat = rho.lattice();
    let spec = rho.to_fourier();
    let scale = lat.volume().sqrt() / (2.0 * std::f64::consts::PI).powf(1.5);
    let k2 = lat.k_norm_sq_table();
    let lim = r * r * (1.0 + 1e-12);
    let (sum, count) = spec
        .coeffs()
        .iter()
        .zip(&k2)
        .filter(|(_, &k)| k <= lim)
        .fold((0.0, 0usize), |(s, n), (c, _)| (s + c.norm() * scale, n + 1));
    sum / count as f64
}

/// `smallk_avg` at the `count` smallest distinct mode radii, starting at 0.
pub fn smallk_shells(rho: &GridFunction, count: usize) -> Vec<(f64, f64)> {
    let lat = rho.lattice();
    // integer |m|² enumerates the shells exactly
    let mut norms: Vec<i64> = (0..lat.len())
        .map(|idx| {
            let [i, j, l] = lat.unflat(idx);
            let m = [lat.mode(i), lat.mode(j), lat.mode(l)];
            m[0] * m[0] + m[1] * m[1] + m[2] * m[2]
        })
        .collect();
    norms.sort_unstable();
    norms.dedup();
    norms
        .iter()
        .take(count)
        .map(|&n2| {
            let r = lat.dk() * (n2 as f64).sqrt();
            (r, smallk_avg(rho, r))
        })
        .collect()
}

/// Grid samples of `f` at integer offsets strictly within `radius` of the
/// origin. The open ball keeps the sample set symmetric when `radius` is half
/// a cell edge.
pub fn ball_samples(f: &GridFunction, radius: f64) -> HashMap<[i64; 3], f64> {
    let lat = f.lattice();
    let h = lat.spacing();
    let lim = radius * radius * (1.0 - 1e-12);
    (0..lat.len())
        .filter_map(|idx| {
            let o = lat.offset(idx);
            let d2 = ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64) * h * h;
            (d2 < lim).then(|| (o, f.values()[idx]))
        })
        .collect()
}

/// `‖f‖_{L²(B)}` on the ball `B` of the given radius around the origin.
pub fn ball_norm(f: &GridFunction, radius: f64) -> f64 {
    let w = f.lattice().cell_weight();
    (ball_samples(f, radius).values().map(|x| x * x).sum::<f64>() * w).sqrt()
}

/// `‖f − g‖_{L²(B)}` for fields on supercells sharing the grid spacing.
pub fn ball_distance(f: &GridFunction, g: &GridFunction, radius: f64) -> Result<f64, SolveError> {
    let (lf, lg) = (f.lattice(), g.lattice());
    if lf.spacing() != lg.spacing() || lf.a() != lg.a() {
        return Err(SolveError::InvalidArgument(
            "ball distance needs matching grid spacing".into(),
        ));
    }
    let sf = ball_samples(f, radius);
    let sg = ball_samples(g, radius);
    let mut keys: Vec<_> = sf.keys().copied().collect();
    keys.sort_unstable();
    let mut acc = 0.0;
    for k in keys {
        let b = sg
            .get(&k)
            .ok_or_else(|| SolveError::InvalidArgument("ball does not fit in both cells".into()))?;
        acc += (sf[&k] - b).powi(2);
    }
    Ok((acc * lf.cell_weight()).sqrt())
}

/// Charge label of a scan row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ScanCharge {
    Fixed(f64),
    Free,
}

impl ScanCharge {
    fn sort_key(&self) -> (u8, f64) {
        match self {
            ScanCharge::Fixed(q) => (0, *q),
            ScanCharge::Free => (1, 0.0),
        }
    }
}

impl std::fmt::Display for ScanCharge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScanCharge::Fixed(q) => write!(f, "{q:.16e}"),
            ScanCharge::Free => write!(f, "free"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub l: usize,
    pub q: ScanCharge,
    pub energy: f64,
    pub multiplier: f64,
    pub screening_integral: f64,
    /// `‖v_L − v_{L_max}‖_{L²(B)}` at the same charge label.
    pub local_distance: f64,
    pub iters: usize,
    pub converged: bool,
    /// SHA-256 of the raw dump of `v`.
    pub field_sha256: String,
    #[serde(skip)]
    pub v: Option<GridFunction>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThermoScanReport {
    pub rows: Vec<ScanRow>,
    /// Per-cell failures; the scan continues past them.
    pub failures: Vec<String>,
    /// Radius of the ball used for `local_distance`.
    pub ball_radius: f64,
}

impl ThermoScanReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "L,q,energy,multiplier,screening_integral,local_distance,iters,converged"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                r.l, r.q, r.energy, r.multiplier, r.screening_integral, r.local_distance, r.iters, r.converged
            )?;
        }
        Ok(())
    }

    pub fn rows_for(&self, q: ScanCharge) -> Vec<&ScanRow> {
        self.rows.iter().filter(|r| r.q == q).collect()
    }
}

pub fn field_checksum(f: &GridFunction) -> String {
    hex::encode(Sha256::digest(f.raw_bytes(0)))
}

/// Runs the constrained solve for every `(q, L)` and the free solve for
/// every `L`, around a perfect crystal solved once on the unit cell.
pub fn run_thermo_scan(
    model: &NuclearModel,
    unit: &Lattice,
    q_list: &[f64],
    l_list: &[usize],
    p: &TfwParams,
    cfg: &SolverConfig,
) -> Result<ThermoScanReport, SolveError> {
    if l_list.is_empty() || l_list.windows(2).any(|w| w[0] >= w[1]) || l_list[0] == 0 {
        return Err(SolveError::InvalidArgument(
            "L list must be nonempty, increasing and >= 1".into(),
        ));
    }
    let perfect = solve_perfect(model, unit, p, cfg)?;
    let z = perfect.rho_nuc.integral();
    for &q in q_list {
        for &l in l_list {
            let total = z * (l as f64).powi(3) + q;
            if total < 0.0 {
                return Err(SolveError::InfeasibleCharge(total));
            }
        }
    }
    let charges: Vec<ScanCharge> = q_list
        .iter()
        .map(|&q| ScanCharge::Fixed(q))
        .chain(std::iter::once(ScanCharge::Free))
        .collect();
    let cells: Vec<(usize, ScanCharge)> = l_list
        .iter()
        .flat_map(|&l| charges.iter().map(move |&c| (l, c)))
        .collect();

    let outcomes: Vec<Result<ScanRow, String>> = cells
        .par_iter()
        .map(|&(l, charge)| {
            let st = perfect.state.on_supercell(l).map_err(|e| e.to_string())?;
            let nu = model.defect_density(st.lattice());
            let obj = DefectTfw::new(st, nu, *p).map_err(|e| e.to_string())?;
            let res = match charge {
                ScanCharge::Fixed(q) => minimize_defect_constrained(&obj, q, cfg),
                ScanCharge::Free => minimize_defect_free(&obj, cfg),
            }
            .map_err(|e| format!("L={l} q={charge}: {e}"))?;
            Ok(ScanRow {
                l,
                q: charge,
                energy: res.energy,
                multiplier: res.multiplier,
                screening_integral: obj.screening_integral(&res.v),
                local_distance: 0.0,
                iters: res.iters,
                converged: res.converged,
                field_sha256: field_checksum(&res.v),
                v: Some(res.v),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (o, &(l, c)) in outcomes.into_iter().zip(&cells) {
        match o {
            Ok(row) => {
                if !row.converged {
                    failures.push(format!("L={l} q={c}: not converged after {} iterations", row.iters));
                }
                rows.push(row);
            }
            Err(e) => failures.push(e),
        }
    }
    rows.sort_by(|a, b| {
        let (ka, kb) = (a.q.sort_key(), b.q.sort_key());
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.l.cmp(&b.l))
    });

    let radius = unit.a() / 2.0;
    let l_max = *l_list.last().expect("nonempty");
    for c in &charges {
        let reference = rows
            .iter()
            .find(|r| r.q == *c && r.l == l_max)
            .and_then(|r| r.v.clone());
        for row in rows.iter_mut().filter(|r| r.q == *c) {
            row.local_distance = match (&reference, &row.v) {
                (Some(vr), Some(v)) => ball_distance(v, vr, radius)?,
                _ => f64::NAN,
            };
        }
    }
    Ok(ThermoScanReport {
        rows,
        failures,
        ball_radius: radius,
    })
}
