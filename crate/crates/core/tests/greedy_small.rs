use ellpar_core::estimators::{efficiency, estimate_sigmas, nested_errors, true_error};
use ellpar_core::fom::FullOrderModel;
use ellpar_core::greedy::{run_weak_greedy, GreedyConfig, GreedyResult};
use ellpar_core::linalg::{BandMatrix, Weighted};
use ellpar_core::rom::{deim_build, lift, pod, EnlargedBasis, GramFactor, NestedRom, PodRule};
use ellpar_core::{InputSignal, Parameter, ProblemDefinition};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(input: InputSignal) -> FullOrderModel {
    FullOrderModel::new(ProblemDefinition::standard(input, 1.0), 40, 1, 51).unwrap()
}

fn config(m: &FullOrderModel, tol: f64, cap: usize) -> GreedyConfig {
    let b = m.problem.bounds;
    GreedyConfig::new(tol, cap, b.grid(3), b.center())
}

fn run(m: &FullOrderModel, tol: f64, cap: usize) -> GreedyResult {
    run_weak_greedy(&config(m, tol, cap), m).unwrap()
}

#[test]
fn greedy_certifies_the_training_set() {
    let m = model(InputSignal::u2());
    let r = run(&m, 1e-4, 50);
    assert!(!r.capped);
    let last = r.history.last().unwrap();
    assert!(last.e_hat <= 1e-4);
    assert!(r.calibration.is_saturated());
    for w in r.history.windows(2) {
        assert!(w[1].l_y >= w[0].l_y && w[1].l_q >= w[0].l_q);
        assert!(w[1].m_y >= w[0].m_y && w[1].m_q >= w[0].m_q);
    }
    let basis = &r.rom.basis;
    assert!(basis.is_nested(&basis.reduced()));
    assert!(basis.enlarged().orthonormality_defect(&m.ops.sy, &m.ops.sq) < 1e-10);
    assert_eq!(r.rom.m_y(), basis.psi_y.ncols());
    // the indicator bounds the true error on the training set up to the effectivity
    let est = r.estimator();
    for mu in m.problem.bounds.grid(3).iter().step_by(7) {
        let e = est.estimate(&r.rom, mu).unwrap();
        assert!(e.indicator() <= 1e-4);
    }
}

#[test]
fn greedy_is_deterministic() {
    let m = model(InputSignal::u1());
    let a = run(&m, 1e-4, 50);
    let b = run(&m, 1e-4, 50);
    assert_eq!(a.history, b.history);
    assert_eq!(a.rom.basis, b.rom.basis);
    assert_eq!(a.rom.deim.points, b.rom.deim.points);
}

#[test]
fn infinite_tolerance_stops_after_initialization() {
    let m = model(InputSignal::u1());
    let r = run(&m, f64::INFINITY, 50);
    assert!(!r.capped);
    assert_eq!(r.history.len(), 1);
    assert_eq!(r.rom.m_y(), r.rom.l_y() + 2);
    assert_eq!(r.rom.m_q(), r.rom.l_q() + 2);
}

#[test]
fn basis_cap_terminates_with_flag() {
    let m = model(InputSignal::u3());
    let r = run(&m, 1e-12, 2);
    assert!(r.capped);
}

#[test]
fn invalid_configs_are_rejected() {
    let m = model(InputSignal::u1());
    let mut c = config(&m, 1e-4, 50);
    c.training_set.clear();
    assert!(run_weak_greedy(&c, &m).is_err());
    assert!(run_weak_greedy(&config(&m, 0.0, 50), &m).is_err());
    assert!(run_weak_greedy(&config(&m, 1e-4, 0), &m).is_err());
}

#[test]
fn estimator_sandwich_on_random_parameters() {
    let m = model(InputSignal::u2());
    let r = run(&m, 1e-4, 50);
    let est = r.estimator();
    let cal = r.calibration;
    let w = m.grid.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for mu in m.problem.bounds.sample(&mut rng, 20) {
        let t = m.solve(&mu).unwrap();
        let e = est.estimate(&r.rom, &mu).unwrap();
        let (ly, lq) = lift(&r.rom.basis.reduced(), &e.small);
        let (ey, eq) = true_error((&t.y, &t.q), (&ly, &lq), &w, &m.ops.sy, &m.ops.sq);
        let n = nested_errors(&mu, &r.rom, &(t.y.clone(), t.q.clone()), &w, &m.ops.sy, &m.ops.sq).unwrap();
        for (ratio, sigma, dlm, err) in [(n.ratio_y(), cal.sigma_y, e.delta_lm_y, ey), (n.ratio_q(), cal.sigma_q, e.delta_lm_q, eq)] {
            if ratio > sigma {
                continue;
            }
            checked += 1;
            // triangle inequality with E^m <= sqrt(sigma) E^l; no orthogonality of the errors is assumed
            let s = sigma.sqrt();
            assert!(dlm / (1.0 + s) <= err * (1.0 + 1e-9) + 1e-14, "{mu}: {dlm} vs {err}");
            assert!(err <= dlm / (1.0 - s) * (1.0 + 1e-9) + 1e-14, "{mu}: {dlm} vs {err}");
            assert!(efficiency(dlm / (1.0 - s), err) >= 1.0 - 1e-8);
        }
    }
    assert!(checked >= 20, "only {checked} field checks satisfied the saturation ratio");
}

#[test]
fn saturation_calibration_limits() {
    let m = model(InputSignal::u1());
    let r = run(&m, 1e-3, 50);
    let training: Vec<Parameter> = m.problem.bounds.grid(2);
    let w = m.grid.weights();
    let reference = |mu: &Parameter| m.solve(mu).map(|t| (t.y, t.q));

    // enlarged space equal to the reduced one: the ratio is one everywhere
    let same = NestedRom::build(
        &m,
        EnlargedBasis::new(&r.rom.basis.reduced(), &DMatrix::zeros(m.dim_v(), 0), &DMatrix::zeros(m.dim_v0(), 0)),
        r.rom.deim.clone(),
    );
    let (cal, _) = estimate_sigmas(&training, reference, &same, &w, &m.ops.sy, &m.ops.sq).unwrap();
    assert!(!cal.is_saturated());
    assert!((cal.sigma_y - 1.0).abs() < 1e-12 && (cal.sigma_q - 1.0).abs() < 1e-12);

    // small basis completed to the whole space, exact interpolation: the enlarged model is the FOM
    let small = r.rom.basis.reduced();
    let complement = |gram: &BandMatrix, psi: &DMatrix<f64>| {
        let dim = gram.dim();
        let rest = Weighted(gram).project_out(&DMatrix::identity(dim, dim), psi);
        pod(&rest, Some(&GramFactor::new(gram).unwrap()), PodRule::Rank(dim - psi.ncols())).unwrap().modes
    };
    let full = EnlargedBasis::new(&small, &complement(&m.ops.sy, &small.psi_y), &complement(&m.ops.sq, &small.psi_q));
    let n = m.dim_v0();
    let exact = NestedRom::build(&m, full, deim_build(&DMatrix::identity(n, n), PodRule::Rank(n)).unwrap());
    let (cal, errors) = estimate_sigmas(&training, reference, &exact, &w, &m.ops.sy, &m.ops.sq).unwrap();
    assert!(cal.sigma_y < 1e-6 && cal.sigma_q < 1e-6, "{cal:?}");
    assert!(errors.iter().all(|e| e.e_m_y < 1e-8 && e.e_m_q < 1e-8));
    assert!(estimate_sigmas(&[], reference, &r.rom, &w, &m.ops.sy, &m.ops.sq).is_err());
}
