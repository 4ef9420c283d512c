use tfw_core::crystal::solve_perfect;
use tfw_core::functional::{DefectTfw, TfwParams};
use tfw_core::minimize::{minimize_defect_constrained, minimize_defect_free, SolverConfig};
use tfw_core::{Gaussian, Lattice, NuclearModel};

fn setup(l: usize) -> DefectTfw {
    let model = NuclearModel {
        background: 0.0,
        periodic: vec![Gaussian::new(1.0, [0.0; 3], 0.6).unwrap()],
        defect: vec![
            Gaussian::new(0.7, [0.3, 0.0, 0.0], 0.6).unwrap(),
            Gaussian::new(-0.2, [-0.5, 0.2, 0.0], 0.6).unwrap(),
        ],
    };
    let unit = Lattice::new(4.0, 1, 10).unwrap();
    let p = TfwParams::default();
    let perfect = solve_perfect(&model, &unit, &p, &cfg()).unwrap();
    let st = perfect.state.on_supercell(l).unwrap();
    let nu = model.defect_density(st.lattice());
    DefectTfw::new(st, nu, p).unwrap()
}

fn cfg() -> SolverConfig {
    SolverConfig {
        grad_tol: Some(1e-10),
        ..SolverConfig::default()
    }
}

#[test]
fn constrained_screening_is_defect_charge_minus_q() {
    let obj = setup(2);
    let nu_total = obj.nu().integral();
    for q in [-0.5, 0.0, 0.25, 0.5] {
        let res = minimize_defect_constrained(&obj, q, &cfg()).unwrap();
        assert!(res.converged);
        let s = obj.screening_integral(&res.v);
        assert!(
            (s - (nu_total - q)).abs() <= 1e-9,
            "q={q}: s={s} expected {}",
            nu_total - q
        );
        let total = obj.state().rho0.integral() + q;
        for row in &res.trace {
            assert!(row.constraint_violation <= 1e-10 * total);
        }
    }
}

#[test]
fn free_solve_is_constrained_solve_at_its_charge() {
    let obj = setup(2);
    let free = minimize_defect_free(&obj, &cfg()).unwrap();
    let q_star = obj.electron_response(&free.v).integral();
    let con = minimize_defect_constrained(&obj, q_star, &cfg()).unwrap();
    let gap = (&con.v - &free.v).l2_norm() / free.v.l2_norm();
    assert!(gap <= 1e-7, "relative gap {gap:e}");
    assert!(con.multiplier.abs() <= 1e-8, "mu {:e}", con.multiplier);
}

#[test]
fn free_energy_is_below_every_constrained_energy() {
    let obj = setup(1);
    let free = minimize_defect_free(&obj, &cfg()).unwrap();
    for q in [-0.5, -0.1, 0.0, 0.1, 0.5] {
        let con = minimize_defect_constrained(&obj, q, &cfg()).unwrap();
        assert!(free.energy <= con.energy + 1e-12 * con.energy.abs().max(1.0), "q={q}");
    }
}

#[test]
fn multiplier_makes_residual_orthogonal() {
    let obj = setup(1);
    let res = minimize_defect_constrained(&obj, 0.3, &cfg()).unwrap();
    let w = &obj.state().u0 + &res.v;
    let g = obj.gradient(&res.v);
    let mut r = g.clone();
    r.axpy(-2.0 * res.multiplier, &w);
    let cos = r.inner(&w).abs() / (r.l2_norm() * w.l2_norm()).max(1e-300);
    let scale = g.inner(&w).abs();
    assert!(r.inner(&w).abs() <= 1e-10 * scale.max(1.0), "cos {cos:e}");
}
