//! Mode drivers: run a validated configuration, write its reports, and
//! always leave a manifest behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{emit_config, parse_config, ConfigError, ExperimentConfig, Mode};
use crate::crystal::{defect_diagnostics, field_checksum, run_thermo_scan, solve_perfect, ScanCharge};
use crate::error::SolveError;
use crate::field::{restrict_to_cell, GridFunction};
use crate::functional::DefectTfw;
use crate::jellium::{
    epsilon_ladder, jellium_solve_field, kernel_realspace, linear_response, linear_screening_check, write_ladder_csv,
    write_profiles_csv, JelliumParams, Kernel, ScreeningEvaluation, ZeroMode,
};
use crate::lattice::Lattice;
use crate::minimize::{minimize_defect_constrained, minimize_defect_free, write_trace_csv};
use crate::validate::{invariant_suite, write_checks_csv, CheckOutcome, SuiteSettings};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "TFW_OUTPUT_DIR";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: Option<&'static str>,
    pub status: &'static str,
    /// Canonical echo of the effective configuration.
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub checks: Vec<CheckOutcome>,
    pub failures: Vec<String>,
    pub artifacts: Vec<String>,
    pub results: Map<String, Value>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

/// Collects artifacts and checks while a mode runs.
struct Sink {
    dir: PathBuf,
    artifacts: Vec<String>,
    checks: Vec<CheckOutcome>,
    failures: Vec<String>,
    results: Map<String, Value>,
}

impl Sink {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), SolveError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), SolveError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| io_failure(&self.dir.join(name), e))?;
        self.write(name, &buf)
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), SolveError> {
        let mut text = serde_json::to_string_pretty(value).expect("report is serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn check(&mut self, c: CheckOutcome) {
        self.checks.push(c);
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> SolveError {
    SolveError::InvalidArgument(format!("cannot write {}: {e}", path.display()))
}

fn converged_check(name: &str, converged: bool) -> CheckOutcome {
    CheckOutcome::at_most(name, if converged { 0.0 } else { 1.0 }, 0.0)
}

/// Parses `text` and runs it; configuration errors still produce a manifest.
/// With `expected`, the configured mode must match it.
pub fn run_text(text: &str, expected: Option<Mode>, opts: &RunOptions) -> RunOutcome {
    let parsed = parse_config(text).and_then(|cfg| match expected {
        Some(m) if m != cfg.mode => Err(ConfigError::Invalid {
            key: "mode".into(),
            message: format!(
                "configuration is for `{}` but `{}` was requested",
                cfg.mode.name(),
                m.name()
            ),
        }),
        _ => Ok(cfg),
    });
    match parsed {
        Ok(cfg) => run(&cfg, opts),
        Err(e) => config_failure(e, opts),
    }
}

fn threads() -> usize {
    rayon::current_num_threads()
}

fn resolve_dir(cfg_dir: Option<&Path>, opts: &RunOptions) -> PathBuf {
    opts.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg_dir.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("tfw-output"))
}

/// Records a configuration error: manifest written, exit code 2.
pub fn config_failure(e: ConfigError, opts: &RunOptions) -> RunOutcome {
    let dir = resolve_dir(None, opts);
    let manifest = Manifest {
        tool: "tfw",
        version: env!("CARGO_PKG_VERSION"),
        mode: None,
        status: "config-error",
        config: None,
        seed: opts.seed,
        threads: threads(),
        wall_time_seconds: 0.0,
        checks: vec![],
        failures: vec![e.to_string()],
        artifacts: vec![],
        results: Map::new(),
    };
    write_manifest(&dir, &manifest);
    RunOutcome {
        exit_code: EXIT_CONFIG,
        output_dir: dir,
        manifest,
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) {
    // the manifest is best effort: a failure here must not mask the run's own status
    if fs::create_dir_all(dir).is_ok() {
        let text = serde_json::to_string_pretty(manifest).expect("manifest is serializable");
        let _ = fs::write(dir.join("manifest.json"), text + "\n");
    }
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> RunOutcome {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.solver.seed = seed;
    }
    let dir = resolve_dir(Some(&cfg.output_dir), opts);
    let mut sink = Sink {
        dir: dir.clone(),
        artifacts: vec![],
        checks: vec![],
        failures: vec![],
        results: Map::new(),
    };
    let outcome = fs::create_dir_all(&dir)
        .map_err(|e| io_failure(&dir, e))
        .and_then(|_| match cfg.mode {
            Mode::Perfect => run_perfect(&cfg, &mut sink),
            Mode::Defect => run_defect(&cfg, &mut sink),
            Mode::ThermoScan => run_scan(&cfg, &mut sink),
            Mode::Jellium => run_jellium(&cfg, &mut sink),
            Mode::Validate => run_validate(&cfg, &mut sink),
        });
    if let Err(e) = outcome {
        sink.failures.push(e.to_string());
    }
    for c in sink.checks.iter().filter(|c| !c.passed) {
        sink.failures
            .push(format!("check {} failed: {:e} > {:e}", c.name, c.value, c.threshold));
    }
    let pass = sink.failures.is_empty();
    let manifest = Manifest {
        tool: "tfw",
        version: env!("CARGO_PKG_VERSION"),
        mode: Some(cfg.mode.name()),
        status: if pass { "pass" } else { "fail" },
        config: Some(emit_config(&cfg)),
        seed: Some(cfg.solver.seed),
        threads: opts.threads.unwrap_or_else(threads),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        checks: sink.checks,
        failures: sink.failures,
        artifacts: sink.artifacts,
        results: sink.results,
    };
    write_manifest(&dir, &manifest);
    RunOutcome {
        exit_code: if pass { EXIT_PASS } else { EXIT_FAILURE },
        output_dir: dir,
        manifest,
    }
}

fn unit_cell(cfg: &ExperimentConfig) -> Result<Lattice, SolveError> {
    cfg.lattice
        .expect("validated")
        .unit_cell()
        .map_err(|e| SolveError::InvalidArgument(e.to_string()))
}

fn run_perfect(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), SolveError> {
    let unit = unit_cell(cfg)?;
    let sol = solve_perfect(&cfg.model, &unit, &cfg.tfw, &cfg.solver)?;
    let z = sol.rho_nuc.integral();
    let neutrality = sol.neutrality_defect();
    let report = json!({
        "Z": z,
        "fermi_level": sol.state.eps_f,
        "energy": sol.result.energy,
        "neutrality_defect": neutrality,
        "min_u0": sol.state.u0.min(),
        "max_u0": sol.state.u0.max(),
        "residual": sol.result.residual,
        "iters": sol.result.iters,
        "converged": sol.result.converged,
        "u0_sha256": field_checksum(&sol.state.u0),
    });
    sink.write_json("perfect.json", &report)?;
    sink.write_with("trace.csv", |b| write_trace_csv(&sol.result.trace, b))?;
    sink.write("u0.raw", &sol.state.u0.raw_bytes(0))?;
    sink.check(converged_check("converged", sol.result.converged));
    sink.check(CheckOutcome::at_most("neutrality", neutrality.abs(), 1e-9 * z.abs()));
    sink.results.insert("fermi_level".into(), json!(sol.state.eps_f));
    Ok(())
}

fn run_defect(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), SolveError> {
    let unit = unit_cell(cfg)?;
    let d = cfg.defect.expect("validated");
    let perfect = solve_perfect(&cfg.model, &unit, &cfg.tfw, &cfg.solver)?;
    let state = perfect.state.on_supercell(d.l)?;
    let nu = cfg.model.defect_density(state.lattice());
    let obj = DefectTfw::new(state, nu, cfg.tfw)?;
    let res = match d.q {
        Some(q) => minimize_defect_constrained(&obj, q, &cfg.solver)?,
        None => minimize_defect_free(&obj, &cfg.solver)?,
    };
    let diag = defect_diagnostics(&obj, &res.v);
    let charge = d.q.map_or(ScanCharge::Free, ScanCharge::Fixed);
    let report = json!({
        "L": d.l,
        "q": charge,
        "energy": res.energy,
        "multiplier": res.multiplier,
        "screening_integral": diag.screening_integral,
        "residual": res.residual,
        "iters": res.iters,
        "converged": res.converged,
        "positivity_fallback": res.positivity_fallback,
        "v_sha256": field_checksum(&res.v),
    });
    sink.write_json("defect.json", &report)?;
    sink.write_with("trace.csv", |b| write_trace_csv(&res.trace, b))?;
    sink.write_with("shells.csv", |b| {
        use std::io::Write;
        writeln!(b, "r,smallk_avg")?;
        for (r, s) in &diag.shells {
            writeln!(b, "{r:.16e},{s:.16e}")?;
        }
        Ok(())
    })?;
    sink.write("v.raw", &res.v.raw_bytes(0))?;
    sink.check(converged_check("converged", res.converged));
    sink.results.insert("multiplier".into(), json!(res.multiplier));
    sink.results
        .insert("screening_integral".into(), json!(diag.screening_integral));
    Ok(())
}

fn charge_tag(q: ScanCharge) -> String {
    match q {
        ScanCharge::Fixed(q) => format!("q{q}"),
        ScanCharge::Free => "free".into(),
    }
}

fn run_scan(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), SolveError> {
    let unit = unit_cell(cfg)?;
    let scan = cfg.scan.as_ref().expect("validated");
    let report = run_thermo_scan(&cfg.model, &unit, &scan.q_list, &scan.l_list, &cfg.tfw, &cfg.solver)?;
    for row in &report.rows {
        if let Some(v) = &row.v {
            sink.write(
                &format!("fields/v_L{}_{}.raw", row.l, charge_tag(row.q)),
                &v.raw_bytes(0),
            )?;
        }
    }
    sink.write_with("thermo_scan.csv", |b| report.write_csv(b))?;
    sink.write_json("thermo_scan.json", &report)?;
    sink.check(CheckOutcome::at_most("failed_cells", report.failures.len() as f64, 0.0));
    sink.failures.extend(report.failures.iter().cloned());
    Ok(())
}

fn run_jellium(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), SolveError> {
    let j = cfg.jellium.as_ref().expect("validated");
    let jp = JelliumParams::new(j.alpha, cfg.tfw)?;
    let g = kernel_realspace(Kernel::G, &jp, &j.radii)?;
    let h = kernel_realspace(Kernel::H, &jp, &j.radii)?;
    sink.write_with("profiles.csv", |b| write_profiles_csv(&g, &h, b))?;
    let identity = linear_screening_check(&jp, ScreeningEvaluation::Quadrature)?;
    sink.check(CheckOutcome::at_most("screening_identity_quadrature", identity, 1e-8));

    let box_edge = j.box_edge.expect("defaulted");
    let lat = Lattice::new(box_edge, 1, j.n)?;
    let nu = restrict_to_cell(&cfg.model.defect, &lat);
    let sol = jellium_solve_field(&nu, &jp, ZeroMode::Screened, &cfg.solver)?;
    let lin = linear_response(&nu, &jp, ZeroMode::Screened);
    let screening = sol.screening_integral(&nu, jp.alpha);
    let remainder = sol.remainder_l1(&nu, &jp, ZeroMode::Screened);

    // same spacing on a box of twice the edge
    let big = Lattice::new(2.0 * box_edge, 1, 2 * j.n)?;
    let big_nu = restrict_to_cell(&cfg.model.defect, &big);
    let big_sol = jellium_solve_field(&big_nu, &jp, ZeroMode::Screened, &cfg.solver)?;
    let screening_change = (big_sol.screening_integral(&big_nu, jp.alpha) - screening).abs();
    let remainder_change = (big_sol.remainder_l1(&big_nu, &jp, ZeroMode::Screened) - remainder).abs();
    let v_norm = sol.v.l2_norm();
    let linear_rel = if v_norm > 0.0 {
        (&sol.v - &lin).l2_norm() / v_norm
    } else {
        0.0
    };
    let report = json!({
        "alpha": jp.alpha,
        "box": box_edge,
        "n": j.n,
        "integral_g": g.total_integral,
        "screening_identity_defect": identity,
        "screening_integral": screening,
        "nonlinear_fraction": linear_rel,
        "remainder_l1": remainder,
        "doubling_screening_change": screening_change,
        "doubling_remainder_change": remainder_change,
        "residual": sol.residual,
        "iters": sol.iters,
        "v_sha256": field_checksum(&sol.v),
    });
    sink.write_json("jellium.json", &report)?;
    sink.write("v.raw", &sol.v.raw_bytes(0))?;
    sink.check(CheckOutcome::at_most("perfect_screening", screening.abs(), 1e-6));
    sink.check(CheckOutcome::at_most("box_doubling_screening", screening_change, 1e-6));
    sink.check(CheckOutcome::at_most("box_doubling_remainder", remainder_change, 1e-6));
    sink.results.insert("screening_integral".into(), json!(screening));

    if !j.epsilons.is_empty() {
        let (rows, slope) = epsilon_ladder(&cfg.model.defect, &j.epsilons, &jp, &lat, &cfg.solver)?;
        sink.write_with("ladder.csv", |b| write_ladder_csv(&rows, b))?;
        sink.check(CheckOutcome::at_most(
            "ladder_slope_deviation",
            (slope - 2.0).abs(),
            0.2,
        ));
        sink.results.insert("ladder_slope".into(), json!(slope));
    }
    Ok(())
}

fn run_validate(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), SolveError> {
    let v = cfg.validate.expect("defaulted");
    let settings = SuiteSettings {
        lattice: unit_cell(cfg)?,
        model: cfg.model.clone(),
        p: cfg.tfw,
        alpha: v.alpha,
        gradient_states: v.gradient_states,
        convexity_samples: v.convexity_samples,
        seed: cfg.solver.seed,
    };
    let checks = invariant_suite(&settings)?;
    sink.write_with("validate.csv", |b| write_checks_csv(&checks, b))?;
    for c in checks {
        sink.check(c);
    }
    Ok(())
}

/// Plain-text pass/fail table of the manifest's checks.
pub fn format_checks(manifest: &Manifest) -> String {
    let width = manifest.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>12}  {:>12}  result\n", "check", "value", "threshold");
    for c in &manifest.checks {
        out.push_str(&format!(
            "{:<width$}  {:>12.4e}  {:>12.4e}  {}\n",
            c.name,
            c.value,
            c.threshold,
            if c.passed { "PASS" } else { "FAIL" }
        ));
    }
    out
}

/// Reads a raw field dump written by a run.
pub fn read_field(path: &Path, lat: Lattice) -> Result<GridFunction, SolveError> {
    let file = fs::File::open(path).map_err(|e| SolveError::InvalidArgument(format!("{}: {e}", path.display())))?;
    Ok(GridFunction::read_raw(lat, std::io::BufReader::new(file))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_error_still_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let out = run_text("mode = \"thermo-scan\"\n[scan]\nL_list = [0]\n", None, &opts);
        assert_eq!(out.exit_code, EXIT_CONFIG);
        let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains("config-error"));
    }

    #[test]
    fn empty_defect_scan_exits_zero() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
mode = "thermo-scan"
[lattice]
a = 2.0
n_per_cell = 8
[model]
background = 0.25
[scan]
q_list = [0.0]
L_list = [1, 2]
"#;
        let opts = RunOptions {
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        assert_eq!(run_text(text, Some(Mode::Perfect), &opts).exit_code, EXIT_CONFIG);
        let out = run_text(text, Some(Mode::ThermoScan), &opts);
        assert_eq!(out.exit_code, EXIT_PASS, "{:?}", out.manifest.failures);
        let csv = fs::read_to_string(dir.path().join("thermo_scan.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        let lat = Lattice::new(2.0, 2, 8).unwrap();
        let v = read_field(&dir.path().join("fields/v_L2_free.raw"), lat).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        assert!(format_checks(&out.manifest).contains("PASS"));
    }
}
