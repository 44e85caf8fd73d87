use std::path::Path;
use std::process::Command;

use ellpar_cli::artifact::{pack_rom, ArtifactContainer};
use ellpar_cli::{cmd_greedy, cmd_optimize, cmd_solve, generate_data, ExperimentConfig};
use ellpar_core::greedy::run_weak_greedy;
use ellpar_core::optim::{run_tr_rb, TrSeed};
use ellpar_core::Parameter;

const BASE: &str = r#"
seed = 5

[problem]
final_time = 1.0
input = { named = "u2" }

[discretization]
n_cells = 20
steps = 21

[greedy]
tol = 1e-3
grid_per_dim = 2
test_count = 3

[optim]
alpha_j = 1e5
lambda = 1e-7
mu_ref = [3.0, 3.0, 3.0, 3.0]
mu_start = [3.0, 3.0, 3.0, 3.0]
mu_true = [2.0, 3.0, 4.0, 5.0]
noise_variance = 1e-6
max_iterations = 8
"#;

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// CSV text with wall-clock columns and rows blanked.
fn without_timings(text: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let timed: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.ends_with("_s")).map(|(i, _)| i).collect();
    let mut out = vec![header.join(",")];
    for line in lines {
        if line.split(',').next().is_some_and(|q| q.ends_with("_s")) {
            continue;
        }
        let row: Vec<&str> = line.split(',').enumerate().map(|(i, v)| if timed.contains(&i) { "" } else { v }).collect();
        out.push(row.join(","));
    }
    out.join("\n")
}

#[test]
fn greedy_writes_its_outputs_deterministically() {
    let cfg = ExperimentConfig::parse(BASE).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = cmd_greedy(&cfg, &a, 5).unwrap();
    cmd_greedy(&cfg, &b, 5).unwrap();
    let names: Vec<_> = ra.files.iter().map(|f| f.file_name().unwrap().to_str().unwrap().to_string()).collect();
    for n in ["table.csv", "history.csv", "test_errors.csv", "convergence.svg", "dimensions.svg", "basis.ellpar"] {
        assert!(names.iter().any(|x| x == n), "missing {n}");
    }
    for n in ["history.csv", "test_errors.csv", "convergence.svg", "dimensions.svg", "basis.ellpar"] {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n} differs");
    }
    assert_eq!(without_timings(&read(&a.join("table.csv"))), without_timings(&read(&b.join("table.csv"))));
    assert_eq!(ra.tests.len(), 3);
    assert!(ra.result.history.last().unwrap().e_hat <= 1e-3 || ra.result.capped);
    assert!(read(&a.join("convergence.svg")).starts_with("<svg"));

    // another seed draws another test set
    let c = dir.path().join("c");
    cmd_greedy(&cfg, &c, 6).unwrap();
    assert_ne!(read(&a.join("test_errors.csv")), read(&c.join("test_errors.csv")));
}

#[test]
fn greedy_without_test_set_reports_calibration_only() {
    let cfg = ExperimentConfig::parse(&BASE.replace("test_count = 3", "test_count = 0")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_greedy(&cfg, dir.path(), 1).unwrap();
    assert!(r.summary.is_none() && r.tests.is_empty());
    let table = read(&dir.path().join("table.csv"));
    assert!(table.contains("sigma_y") && table.contains("l_y"));
    assert!(!table.contains("max_e_y"));
}

#[test]
fn noise_free_data_is_the_state() {
    let cfg = ExperimentConfig::parse(&BASE.replace("noise_variance = 1e-6", "noise_variance = 0.0")).unwrap();
    let model = cfg.model().unwrap();
    let d = generate_data(&cfg, &model, 1).unwrap();
    assert_eq!(d.w, model.solve(&Parameter([2.0, 3.0, 4.0, 5.0])).unwrap().q);

    let noisy = ExperimentConfig::parse(BASE).unwrap();
    let (a, b, c) = (generate_data(&noisy, &model, 9).unwrap(), generate_data(&noisy, &model, 9).unwrap(), generate_data(&noisy, &model, 10).unwrap());
    assert_eq!(a.w, b.w);
    assert_ne!(a.w, c.w);
    let diff = &a.w - &d.w;
    let var = diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64;
    assert!((var / 1e-6 - 1.0).abs() < 0.3, "sample variance {var}");
}

#[test]
fn stationary_start_needs_no_iterations() {
    let text = BASE.replace("mu_true = [2.0, 3.0, 4.0, 5.0]", "mu_true = [3.0, 3.0, 3.0, 3.0]").replace("noise_variance = 1e-6", "noise_variance = 0.0");
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_optimize(&cfg, dir.path(), 0).unwrap();
    assert_eq!(r.tr.result.iterations, 0);
    assert_eq!(r.tr.result.fom_evaluations, 1);
    assert!(r.tr.result.converged);
    assert_eq!(r.tr.result.mu_opt, Parameter([3.0; 4]));
    assert_eq!(r.reference.unwrap().iterations, 0);
}

#[test]
fn optimize_outputs_are_reproducible() {
    let cfg = ExperimentConfig::parse(&BASE.replace("max_iterations = 8", "max_iterations = 3")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = cmd_optimize(&cfg, &a, 2).unwrap();
    cmd_optimize(&cfg, &b, 2).unwrap();
    for n in ["trace_tr.csv", "trace_fo.csv", "trace_tr_accepted.csv", "errors.svg"] {
        assert_eq!(read(&a.join(n)), read(&b.join(n)), "{n} differs");
    }
    assert_eq!(without_timings(&read(&a.join("table.csv"))), without_timings(&read(&b.join("table.csv"))));
    let table = read(&a.join("table.csv"));
    assert_eq!(table.lines().count(), 3);
    assert!(ra.tr.result.iterations <= 3);
    assert_eq!(ra.tr.state.history.len(), read(&a.join("trace_tr.csv")).lines().count() - 1);
}

#[test]
fn stored_basis_seeds_trust_region_like_the_in_memory_one() {
    let dir = tempfile::tempdir().unwrap();
    let art = dir.path().join("basis.ellpar");
    let cfg_text = format!("basis = {:?}\n{}", art.to_str().unwrap(), BASE.replace("max_iterations = 8", "max_iterations = 4"));
    let cfg = ExperimentConfig::parse(&cfg_text).unwrap();
    let model = cfg.model().unwrap();
    let g = run_weak_greedy(&cfg.greedy_config().unwrap(), &model).unwrap();
    pack_rom(&g.rom, &g.calibration, &cfg.model_hash()).save(&art).unwrap();

    let data = generate_data(&cfg, &model, 0).unwrap();
    let start = Parameter([3.0; 4]);
    let seed = TrSeed::from_rom(&g.rom, g.calibration);
    let direct = run_tr_rb(&model, &data, &cfg.cost().unwrap(), &cfg.tr_config().unwrap(), &start, Some(&seed)).unwrap();
    let out = dir.path().join("out");
    let mut no_fo = cfg.clone();
    no_fo.optim.as_mut().unwrap().run_reference = false;
    let via_file = cmd_optimize(&no_fo, &out, 0).unwrap();
    assert_eq!(direct.state.history, via_file.tr.state.history);
    assert_eq!(direct.result.mu_opt, via_file.tr.result.mu_opt);
    assert!(via_file.reference.is_none());

    // the artifact is refused for a different discretization
    let other = ExperimentConfig::parse(&cfg_text.replace("steps = 21", "steps = 31")).unwrap();
    assert!(cmd_optimize(&other, &dir.path().join("x"), 0).is_err());

    // solve adds the reduced trajectory
    let s = cmd_solve(&cfg, &Parameter([1.5, 2.0, 4.0, 4.5]), &dir.path().join("s")).unwrap();
    let (ey, eq) = s.rom_errors.unwrap();
    assert!(ey < 1e-2 && eq < 1e-2, "{ey} {eq}");
    let csv = read(&dir.path().join("s/solve.csv"));
    assert!(csv.lines().next().unwrap().ends_with("y_rb,q_rb"));
    assert_eq!(csv.lines().count(), 1 + 21 * 21);
    // artifact written by one process reads back identically
    let c = ArtifactContainer::load(&art, Some(&cfg.model_hash())).unwrap();
    assert_eq!(c.to_bytes(), std::fs::read(&art).unwrap());
}

#[test]
fn solve_rejects_parameters_outside_the_box() {
    let cfg = ExperimentConfig::parse(BASE).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(cmd_solve(&cfg, &Parameter([0.5, 3.0, 3.0, 3.0]), dir.path()).is_err());
    let s = cmd_solve(&cfg, &Parameter([3.0; 4]), dir.path()).unwrap();
    assert!(s.rom_errors.is_none());
    assert!(s.min_y.is_finite() && s.max_y.is_finite() && s.min_y < s.max_y);
}

#[test]
fn binary_reports_failures_with_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_ellpar");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, BASE).unwrap();
    let out = dir.path().join("o");

    let ok = Command::new(exe).args(["solve", "--config", cfg.to_str().unwrap(), "--mu", "3,3,3,3", "--out", out.to_str().unwrap()]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("solve.csv").exists());

    let bad_mu = Command::new(exe).args(["solve", "--config", cfg.to_str().unwrap(), "--mu", "3,3,3"]).output().unwrap();
    assert_eq!(bad_mu.status.code(), Some(2));

    let missing = Command::new(exe).args(["greedy", "--config", dir.path().join("none.toml").to_str().unwrap()]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    std::fs::write(&cfg, BASE.replace("n_cells = 20", "n_cells = -1")).unwrap();
    let invalid = Command::new(exe).args(["optimize", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(invalid.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&invalid.stderr).is_empty());
}
