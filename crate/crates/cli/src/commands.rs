//! The `greedy`, `optimize` and `solve` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ellpar_core::estimators::{efficiency, gram_norm, true_error, Estimator, EstimatorCalibration};
use ellpar_core::fom::FullOrderModel;
use ellpar_core::greedy::{run_weak_greedy, GreedyResult};
use ellpar_core::optim::{run_fo_reference, run_tr_rb, synthetic_data, MeasurementData, OptimResult, TrOutcome, TrSeed};
use ellpar_core::rom::{lift, NestedRom};
use ellpar_core::Parameter;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifact::{pack_rom, unpack_rom, ArtifactContainer};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::svg::{Chart, Series};

/// Measurement data from the `[optim]` block: one full-order solve at the
/// true parameter plus seeded Gaussian nodal noise.
pub fn generate_data(cfg: &ExperimentConfig, model: &FullOrderModel, seed: u64) -> Result<MeasurementData> {
    let o = cfg.optim_block()?;
    Ok(synthetic_data(model, &Parameter(o.mu_true), o.noise_variance, seed)?)
}

/// Reduced model stored by a previous `greedy` run for the same model configuration.
pub fn load_basis(cfg: &ExperimentConfig, model: &FullOrderModel) -> Result<Option<(NestedRom, EstimatorCalibration)>> {
    let Some(path) = &cfg.basis else { return Ok(None) };
    let c = ArtifactContainer::load(path, Some(&cfg.model_hash()))?;
    Ok(Some(unpack_rom(&c, model, path)?))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Shortest round-trip representation, in exponent form for very small or large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-3..1e6).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn mu_fields(mu: &Parameter) -> [String; 4] {
    std::array::from_fn(|i| num(mu[i]))
}

/// Per-parameter outcome of the random test sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestRecord {
    pub mu: Parameter,
    pub e_y: f64,
    pub e_q: f64,
    /// Errors of the enlarged model.
    pub e_m_y: f64,
    pub e_m_q: f64,
    pub delta_lm_y: f64,
    pub delta_lm_q: f64,
    pub delta_y: f64,
    pub delta_q: f64,
    pub eta_y: f64,
    pub eta_q: f64,
}

impl TestRecord {
    pub fn ratio_y(&self) -> f64 {
        ellpar_core::estimators::ratio(self.e_m_y, self.e_y)
    }

    pub fn ratio_q(&self) -> f64 {
        ellpar_core::estimators::ratio(self.e_m_q, self.e_q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestSummary {
    pub count: usize,
    pub fe_time_avg_s: f64,
    pub rb_time_avg_s: f64,
    pub max_e_y: f64,
    pub max_e_q: f64,
    pub max_eta_y: f64,
    pub max_eta_q: f64,
}

pub struct GreedyReport {
    pub result: GreedyResult,
    pub tests: Vec<TestRecord>,
    pub summary: Option<TestSummary>,
    pub files: Vec<PathBuf>,
}

/// Errors and estimator values of the reduced model on `tests`, with
/// average full-order and reduced solve times.
pub fn test_sweep(model: &FullOrderModel, rom: &NestedRom, calibration: EstimatorCalibration, tests: &[Parameter]) -> Result<(Vec<TestRecord>, Option<TestSummary>)> {
    let est = Estimator::new(rom, calibration);
    let w = model.grid.weights();
    let (small_basis, big_basis) = (rom.basis.reduced(), rom.basis.enlarged());
    let mut fe_time = 0.0;
    let mut rb_time = 0.0;
    let mut records = Vec::with_capacity(tests.len());
    for mu in tests {
        let clock = Instant::now();
        let t = model.solve(mu).map_err(|e| e.at(*mu))?;
        fe_time += clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let e = est.estimate(rom, mu).map_err(|e| e.at(*mu))?;
        rb_time += clock.elapsed().as_secs_f64();
        let (ly, lq) = lift(&small_basis, &e.small);
        let (my, mq) = lift(&big_basis, &e.big);
        let (e_y, e_q) = true_error((&t.y, &t.q), (&ly, &lq), &w, &model.ops.sy, &model.ops.sq);
        let (e_m_y, e_m_q) = true_error((&t.y, &t.q), (&my, &mq), &w, &model.ops.sy, &model.ops.sq);
        records.push(TestRecord {
            mu: *mu,
            e_y,
            e_q,
            e_m_y,
            e_m_q,
            delta_lm_y: e.delta_lm_y,
            delta_lm_q: e.delta_lm_q,
            delta_y: e.delta_y,
            delta_q: e.delta_q,
            eta_y: efficiency(e.delta_y, e_y),
            eta_q: efficiency(e.delta_q, e_q),
        });
    }
    if records.is_empty() {
        return Ok((records, None));
    }
    let n = records.len() as f64;
    let max = |f: fn(&TestRecord) -> f64| records.iter().map(f).fold(0.0, f64::max);
    let summary = TestSummary {
        count: records.len(),
        fe_time_avg_s: fe_time / n,
        rb_time_avg_s: rb_time / n,
        max_e_y: max(|r| r.e_y),
        max_e_q: max(|r| r.e_q),
        max_eta_y: max(|r| r.eta_y),
        max_eta_q: max(|r| r.eta_q),
    };
    Ok((records, Some(summary)))
}

/// Weak greedy, random test sweep, tables, plots and the reduced-model artifact.
pub fn cmd_greedy(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<GreedyReport> {
    let model = cfg.model()?;
    let gcfg = cfg.greedy_config()?;
    let count = cfg.greedy_block()?.test_count;
    create_dir(out)?;
    log::info!("greedy on {} training parameters, n = {}, K = {}", gcfg.training_set.len(), model.dim_v(), model.grid.len());
    let result = run_weak_greedy(&gcfg, &model)?;
    if result.capped {
        log::warn!("greedy stopped at the basis cap before reaching the tolerance");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tests = model.problem.bounds.sample(&mut rng, count);
    let (records, summary) = test_sweep(&model, &result.rom, result.calibration, &tests)?;

    let mut files = Vec::new();
    let table = out.join("table.csv");
    write_greedy_table(&table, &result, summary.as_ref())?;
    files.push(table);

    let history = out.join("history.csv");
    let mut wtr = csv_writer(&history)?;
    wtr.write_record(["iteration", "mu1", "mu2", "mu3", "mu4", "e_hat", "l_y", "l_q", "m_y", "m_q", "l_f", "sigma_y", "sigma_q"])?;
    for h in &result.history {
        let [a, b, c, d] = mu_fields(&h.mu_hat);
        wtr.write_record([
            h.iteration.to_string(),
            a,
            b,
            c,
            d,
            num(h.e_hat),
            h.l_y.to_string(),
            h.l_q.to_string(),
            h.m_y.to_string(),
            h.m_q.to_string(),
            h.l_f.to_string(),
            num(h.sigma_y),
            num(h.sigma_q),
        ])?;
    }
    wtr.flush().map_err(|e| CliError::io(&history, e))?;
    files.push(history);

    let errors = out.join("test_errors.csv");
    let mut wtr = csv_writer(&errors)?;
    wtr.write_record([
        "mu1", "mu2", "mu3", "mu4", "e_y", "e_q", "e_m_y", "e_m_q", "delta_lm_y", "delta_lm_q", "delta_y", "delta_q", "eta_y", "eta_q",
    ])?;
    for r in &records {
        let mut row: Vec<String> = mu_fields(&r.mu).into();
        row.extend(
            [r.e_y, r.e_q, r.e_m_y, r.e_m_q, r.delta_lm_y, r.delta_lm_q, r.delta_y, r.delta_q, r.eta_y, r.eta_q].map(num),
        );
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| CliError::io(&errors, e))?;
    files.push(errors);

    if cfg.output.svg {
        let it = |f: fn(&ellpar_core::greedy::GreedyIteration) -> f64| -> Vec<(f64, f64)> {
            result.history.iter().map(|h| (h.iteration as f64, f(h))).collect()
        };
        let conv = Chart {
            title: "Greedy error indicator".into(),
            x_label: "iteration".into(),
            y_label: "max indicator on training set".into(),
            log_y: true,
            series: vec![Series::new("e_hat", it(|h| h.e_hat))],
            reference: Some(("tolerance".into(), gcfg.tol)),
        };
        let dims = Chart {
            title: "Reduced dimensions".into(),
            x_label: "iteration".into(),
            y_label: "dimension".into(),
            log_y: false,
            series: vec![
                Series::new("l_y", it(|h| h.l_y as f64)),
                Series::new("l_q", it(|h| h.l_q as f64)),
                Series::new("m_y", it(|h| h.m_y as f64)),
                Series::new("m_q", it(|h| h.m_q as f64)),
            ],
            reference: None,
        };
        for (name, chart) in [("convergence.svg", conv), ("dimensions.svg", dims)] {
            let path = out.join(name);
            write_text(&path, &chart.render())?;
            files.push(path);
        }
    }
    if cfg.output.artifacts {
        let path = out.join("basis.ellpar");
        pack_rom(&result.rom, &result.calibration, &cfg.model_hash()).save(&path)?;
        files.push(path);
    }
    Ok(GreedyReport { result, tests: records, summary, files })
}

/// Two-column table: greedy and calibration rows, then the test-sweep rows.
fn write_greedy_table(path: &Path, r: &GreedyResult, summary: Option<&TestSummary>) -> Result<()> {
    let last = r.history.last();
    let mut rows: Vec<(&str, String)> = vec![
        ("greedy_time_s", num(r.elapsed.as_secs_f64())),
        ("greedy_iterations", r.history.len().to_string()),
        ("fom_solves", r.fom_solves.to_string()),
        ("capped", r.capped.to_string()),
        ("final_indicator", last.map(|h| num(h.e_hat)).unwrap_or_default()),
        ("l_y", r.rom.l_y().to_string()),
        ("l_q", r.rom.l_q().to_string()),
        ("m_y", r.rom.m_y().to_string()),
        ("m_q", r.rom.m_q().to_string()),
        ("l_f", r.rom.deim.len().to_string()),
        ("sigma_y", num(r.calibration.sigma_y)),
        ("sigma_q", num(r.calibration.sigma_q)),
        ("eta_bar_y", num(r.calibration.eta_bar_y)),
        ("eta_bar_q", num(r.calibration.eta_bar_q)),
    ];
    if let Some(s) = summary {
        rows.extend([
            ("test_count", s.count.to_string()),
            ("fe_time_avg_s", num(s.fe_time_avg_s)),
            ("rb_time_avg_s", num(s.rb_time_avg_s)),
            ("max_e_y", num(s.max_e_y)),
            ("max_e_q", num(s.max_e_q)),
            ("max_eta_y", num(s.max_eta_y)),
            ("max_eta_q", num(s.max_eta_q)),
        ]);
    }
    let mut wtr = csv_writer(path)?;
    wtr.write_record(["quantity", "value"])?;
    for (k, v) in rows {
        wtr.write_record([k, v.as_str()])?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub struct OptimizeReport {
    pub data: MeasurementData,
    pub reference: Option<OptimResult>,
    pub tr: TrOutcome,
    pub files: Vec<PathBuf>,
}

/// Full-order reference and trust-region reduced-basis optimization on the same data.
pub fn cmd_optimize(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<OptimizeReport> {
    let o = cfg.optim_block()?;
    let model = cfg.model()?;
    let cost = cfg.cost()?;
    let start = Parameter(o.mu_start);
    create_dir(out)?;
    let data = generate_data(cfg, &model, seed)?;
    let reference = if o.run_reference {
        log::info!("full-order reference optimization");
        Some(run_fo_reference(&model, &data, &cost, &start, &cfg.bfgs_options()?)?)
    } else {
        None
    };
    let seed_model = load_basis(cfg, &model)?.map(|(rom, cal)| TrSeed::from_rom(&rom, cal));
    log::info!("trust-region reduced-basis optimization");
    let tr = run_tr_rb(&model, &data, &cost, &cfg.tr_config()?, &start, seed_model.as_ref())?;

    let mut files = Vec::new();
    let table = out.join("table.csv");
    let mut wtr = csv_writer(&table)?;
    wtr.write_record([
        "method", "time_s", "iterations", "fom_evaluations", "e_abs", "e_rel", "mu1", "mu2", "mu3", "mu4", "cost", "converged", "stationarity",
    ])?;
    let rows = reference.iter().map(|r| ("FO", r)).chain(std::iter::once(("TR-RB", &tr.result)));
    for (name, r) in rows {
        let mut row = vec![
            name.to_string(),
            num(r.elapsed.as_secs_f64()),
            r.iterations.to_string(),
            r.fom_evaluations.to_string(),
            opt(r.e_abs),
            opt(r.e_rel),
        ];
        row.extend(mu_fields(&r.mu_opt));
        row.extend([num(r.cost), r.converged.to_string(), num(r.stationarity)]);
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| CliError::io(&table, e))?;
    files.push(table);

    let trace = out.join("trace_tr.csv");
    let mut wtr = csv_writer(&trace)?;
    wtr.write_record([
        "iteration", "mu1", "mu2", "mu3", "mu4", "cand1", "cand2", "cand3", "cand4", "agc_value", "candidate_value", "delta_j", "radius", "accepted",
        "enriched", "fom_evaluations", "l_y", "l_q", "m_y", "m_q", "l_f", "sigma_q", "fom_value", "certified",
    ])?;
    for h in &tr.state.history {
        let mut row = vec![h.iteration.to_string()];
        row.extend(mu_fields(&h.mu));
        row.extend(mu_fields(&h.candidate));
        row.extend([
            num(h.agc_value),
            num(h.candidate_value),
            num(h.delta_j),
            num(h.radius),
            h.accepted.to_string(),
            h.enriched.to_string(),
            h.fom_evaluations.to_string(),
            h.l_y.to_string(),
            h.l_q.to_string(),
            h.m_y.to_string(),
            h.m_q.to_string(),
            h.l_f.to_string(),
            num(h.sigma_q),
            opt(h.fom_value),
            h.certified.map(|c| c.to_string()).unwrap_or_default(),
        ]);
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| CliError::io(&trace, e))?;
    files.push(trace);

    for (name, r) in reference.iter().map(|r| ("trace_fo.csv", r)).chain(std::iter::once(("trace_tr_accepted.csv", &tr.result))) {
        let path = out.join(name);
        let mut wtr = csv_writer(&path)?;
        wtr.write_record(["iteration", "mu1", "mu2", "mu3", "mu4", "cost", "fom_evaluations"])?;
        for p in &r.trace {
            let mut row = vec![p.iteration.to_string()];
            row.extend(mu_fields(&p.mu));
            row.extend([num(p.cost), p.fom_evaluations.to_string()]);
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| CliError::io(&path, e))?;
        files.push(path);
    }

    if cfg.output.svg {
        if let Some(local) = &tr.local {
            let path = out.join("errors.svg");
            write_text(&path, &error_chart(&model, &local.rom, &tr.result.mu_opt)?.render())?;
            files.push(path);
        }
    }
    Ok(OptimizeReport { data, reference, tr, files })
}

/// Per-step errors between the full-order and reduced states at `mu`.
fn error_chart(model: &FullOrderModel, rom: &NestedRom, mu: &Parameter) -> Result<Chart> {
    let t = model.solve(mu)?;
    let (ly, lq) = lift(&rom.basis.reduced(), &rom.solve_small(mu)?);
    let per_step = |a: &DMatrix<f64>, b: &DMatrix<f64>, gram| -> Vec<(f64, f64)> {
        (0..a.ncols()).map(|k| (model.grid.time(k), gram_norm(gram, &(a.column(k) - b.column(k))))).collect()
    };
    Ok(Chart {
        title: format!("Full-order vs reduced states at {mu}"),
        x_label: "t".into(),
        y_label: "error norm".into(),
        log_y: true,
        series: vec![Series::new("y", per_step(&t.y, &ly, &model.ops.sy)), Series::new("q", per_step(&t.q, &lq, &model.ops.sq))],
        reference: None,
    })
}

pub struct SolveReport {
    pub fom_newton_iterations: usize,
    pub min_y: f64,
    pub max_y: f64,
    /// Errors of the stored reduced model, when one is configured.
    pub rom_errors: Option<(f64, f64)>,
    pub files: Vec<PathBuf>,
}

/// One full-order solve (and a reduced one with a stored model) dumped as long-format CSV.
pub fn cmd_solve(cfg: &ExperimentConfig, mu: &Parameter, out: &Path) -> Result<SolveReport> {
    let model = cfg.model()?;
    if !model.problem.bounds.contains(mu) {
        return Err(CliError::Config(format!("{mu} lies outside the admissible box")));
    }
    create_dir(out)?;
    let t = model.solve(mu)?;
    let rom = load_basis(cfg, &model)?;
    let reduced = match &rom {
        Some((rom, _)) => Some(lift(&rom.basis.reduced(), &rom.solve_small(mu)?)),
        None => None,
    };
    let path = out.join("solve.csv");
    let mut wtr = csv_writer(&path)?;
    let mut header = vec!["k", "t", "x", "y", "q"];
    if reduced.is_some() {
        header.extend(["y_rb", "q_rb"]);
    }
    wtr.write_record(&header)?;
    let nodes = &model.space.nodes;
    for k in 0..t.y.ncols() {
        for (j, x) in nodes.iter().enumerate() {
            // q vanishes at the Dirichlet node x = 0
            let q = if j == 0 { 0.0 } else { t.q[(j - 1, k)] };
            let mut row = vec![k.to_string(), num(model.grid.time(k)), num(*x), num(t.y[(j, k)]), num(q)];
            if let Some((ry, rq)) = &reduced {
                row.push(num(ry[(j, k)]));
                row.push(if j == 0 { "0".into() } else { num(rq[(j - 1, k)]) });
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|e| CliError::io(&path, e))?;
    let rom_errors = reduced.as_ref().map(|(ry, rq)| true_error((&t.y, &t.q), (ry, rq), &model.grid.weights(), &model.ops.sy, &model.ops.sq));
    Ok(SolveReport {
        fom_newton_iterations: t.newton_iterations,
        min_y: t.monitor.min_y,
        max_y: t.monitor.max_y,
        rom_errors,
        files: vec![path],
    })
}
