use ellpar_core::fe::{assemble, boundary_vector, build_space, load_vector, project_initial};
use ellpar_core::linalg::BandMatrix;
use ellpar_core::{InputSignal, ProblemDefinition, ScalarField};
use nalgebra::DVector;

fn problem() -> ProblemDefinition {
    ProblemDefinition::standard(InputSignal::u1(), 1.0)
}

fn min_eigenvalue(m: &BandMatrix) -> f64 {
    m.to_dense().symmetric_eigen().eigenvalues.min()
}

#[test]
fn space_dimensions() {
    let p = problem();
    assert_eq!(build_space(&p, 200, 1).unwrap().dim_v(), 201);
    assert_eq!(build_space(&p, 200, 2).unwrap().dim_v(), 401);
    assert_eq!(build_space(&p, 2, 1).unwrap().nodes, vec![0.0, 0.5, 1.0]);
}

#[test]
fn interior_stencils_order_one() {
    let p = problem();
    let s = build_space(&p, 8, 1).unwrap();
    let ops = assemble(&p, &s).unwrap();
    let h = s.h();
    for (j, expected) in [(3, -1.0 / h), (4, 2.0 / h), (5, -1.0 / h)] {
        assert!((ops.a1.get(4, j) - expected).abs() < 1e-12);
    }
    for (j, expected) in [(3, h / 6.0), (4, 4.0 * h / 6.0), (5, h / 6.0)] {
        assert!((ops.my.get(4, j) - expected).abs() < 1e-15);
    }
}

#[test]
fn structural_properties_variable_coefficients() {
    let mut p = problem();
    p.kappa1 = ScalarField::Affine { at_zero: 1.0, slope: 2.0 };
    p.kappa2 = ScalarField::Custom(std::sync::Arc::new(|x: f64| 1.0 + x * x));
    for order in [1, 2] {
        let s = build_space(&p, 12, order).unwrap();
        let ops = assemble(&p, &s).unwrap();
        for m in [&ops.my, &ops.a1, &ops.mq, &ops.a2, &ops.sy, &ops.sq, &ops.stiffness] {
            assert_eq!(m.asymmetry(), 0.0);
        }
        for m in [&ops.my, &ops.mq, &ops.sy, &ops.sq, &ops.a2] {
            assert!(m.to_dense().cholesky().is_some());
        }
        assert!(min_eigenvalue(&ops.a1) > -1e-10);
        // constants lie in the kernel of both Neumann stiffness matrices
        assert!(ops.stiffness.row_sums().iter().all(|v| v.abs() < 1e-11));
        assert!(ops.a1.row_sums().iter().all(|v| v.abs() < 1e-11));
        // Dirichlet reduction drops node 0
        let k = ops.stiffness.to_dense();
        let n = s.dim_v0();
        assert_eq!(ops.sq.to_dense(), k.view((1, 1), (n, n)).into_owned());
    }
}

#[test]
fn initial_projection() {
    let p = problem();
    let s = build_space(&p, 10, 1).unwrap();
    let ops = assemble(&p, &s).unwrap();
    let y = project_initial(&p, &s, &ops).unwrap();
    assert!(y.iter().all(|v| (v - 5.0).abs() < 1e-12));

    let mut lin = problem();
    lin.y_init = ScalarField::Affine { at_zero: 1.0, slope: 1.0 };
    let y = project_initial(&lin, &s, &ops).unwrap();
    for (v, x) in y.iter().zip(&s.nodes) {
        assert!((v - (1.0 + x)).abs() < 1e-12);
    }

    // Galerkin orthogonality of the projection residual
    let mut sine = problem();
    sine.y_init = ScalarField::Custom(std::sync::Arc::new(|x: f64| 2.0 + (std::f64::consts::PI * x).sin()));
    let y = project_initial(&sine, &s, &ops).unwrap();
    let load = load_vector(&s, |x| 2.0 + (std::f64::consts::PI * x).sin());
    assert!((ops.my.mul_vec(&y) - load).amax() < 1e-13);
}

#[test]
fn nonpositive_initial_state_is_rejected() {
    let mut p = problem();
    p.y_init = ScalarField::Affine { at_zero: 0.0, slope: 1.0 };
    let s = build_space(&p, 4, 1).unwrap();
    let ops = assemble(&p, &s).unwrap();
    assert!(project_initial(&p, &s, &ops).is_err());
}

#[test]
fn boundary_functional() {
    let p = problem();
    let s = build_space(&p, 6, 1).unwrap();
    let ops = assemble(&p, &s).unwrap();
    let n = ops.dim_v0();
    let mut e_l = DVector::zeros(n);
    e_l[n - 1] = 1.0;
    assert_eq!(boundary_vector(&p, &ops, 0.3), e_l);
    let u2 = ProblemDefinition::standard(InputSignal::u2(), 1.0);
    assert_eq!(boundary_vector(&u2, &ops, 0.5), -&e_l);
    assert_eq!(boundary_vector(&u2, &ops, 0.75), e_l);
    let zero = ProblemDefinition::standard(InputSignal::zero(), 1.0);
    assert_eq!(boundary_vector(&zero, &ops, 0.5), DVector::zeros(n));
}

/// `|g|_1^2 - g_h^T K g_h` for the nodal interpolant `g_h` of a smooth `g`.
fn energy_defect(n_cells: usize, order: usize) -> f64 {
    let p = problem();
    let s = build_space(&p, n_cells, order).unwrap();
    let ops = assemble(&p, &s).unwrap();
    let g = s.interpolate(|x| (2.0 * x).sin() + x * x);
    // int_0^1 (2 cos 2x + 2x)^2 dx
    let exact = (4.0f64).sin() / 2.0 + 4.0 * (2.0f64).sin() + 2.0 * (2.0f64).cos() + 4.0 / 3.0;
    (exact - ops.stiffness.quad_form(&g, &g)).abs()
}

fn mass_defect(n_cells: usize) -> f64 {
    let p = problem();
    let s = build_space(&p, n_cells, 1).unwrap();
    let ops = assemble(&p, &s).unwrap();
    let g = s.interpolate(|x| x.exp());
    let exact = ((2.0f64).exp() - 1.0) / 2.0;
    (exact - ops.my.quad_form(&g, &g)).abs()
}

#[test]
fn bilinear_forms_converge_under_refinement() {
    for order in [1, 2] {
        let rate = (energy_defect(16, order) / energy_defect(32, order)).log2();
        assert!((rate - 2.0 * order as f64).abs() < 0.1, "order {order}: rate {rate}");
    }
    let rate = (mass_defect(16) / mass_defect(32)).log2();
    assert!((rate - 2.0).abs() < 0.1, "mass rate {rate}");
}
