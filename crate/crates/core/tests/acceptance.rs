//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Training runs are cached by rendered config, so the loss grid and the
//! lambda grid share their common points. Grid CSVs land in
//! `$CARGO_TARGET_TMPDIR/acceptance/`.

mod common;

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{criteria, grad, median};
use uvireid::pipeline::config::Matcher;
use uvireid::pipeline::experiment::{lambda_grid, loss_grid, run_grid, write_grid, GridRow};
use uvireid::pipeline::{run_experiment, LossKind, MetricsReport, TrainConfig};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    passed: usize,
    failed: Vec<String>,
}

impl Outcome {
    fn line(&mut self, name: &str, pass: bool, detail: impl AsRef<str>) {
        println!("{} {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(name.to_string());
        }
    }
}

#[derive(Default)]
struct Runs {
    cache: HashMap<String, MetricsReport>,
}

impl Runs {
    fn report(&mut self, cfg: &TrainConfig) -> uvireid::Result<MetricsReport> {
        let key = cfg.render();
        if let Some(r) = self.cache.get(&key) {
            return Ok(r.clone());
        }
        let r = run_experiment(cfg, None)?.report;
        self.cache.insert(key, r.clone());
        Ok(r)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("create acceptance dir");
    dir
}

fn gradients(o: &mut Outcome) {
    let start = Instant::now();
    let errs = grad::all();
    let took = start.elapsed();
    for (name, err) in errs {
        let label = format!("gradient {name}");
        o.line(&label, err < grad::TOL, format!("worst rel err {err:.2e} over {} instances", grad::INSTANCES));
    }
    o.line("gradient suite runtime", took < Duration::from_secs(60), secs(took));
}

fn clustering(o: &mut Outcome) {
    let start = Instant::now();
    let t = criteria::dbscan_agreement(50);
    let took = start.elapsed();
    o.line(
        "dbscan oracle agreement",
        t.mismatches == 0,
        format!("{} of {} instances disagree ({} clusters, {} noise points)", t.mismatches, t.instances, t.clusters, t.noise),
    );
    o.line("dbscan runtime", took < Duration::from_secs(60), secs(took));
}

fn noise_model(o: &mut Outcome) {
    let drops = criteria::em_likelihood_drops(100);
    o.line("bmm log-likelihood non-decreasing", drops == 0, format!("{drops} of 100 datasets drop"));
    let errs = criteria::single_beta_errors();
    let m = median(&errs);
    o.line("bmm single-beta mean recovery", m < 0.05, format!("median |mean - 2/7| = {m:.4}"));
    let pis = criteria::balanced_mixture_weights();
    let worst = pis.iter().map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
    o.line("bmm balanced weight recovery", worst < 0.1, format!("worst |pi - 0.5| = {worst:.4}"));
    let bad = criteria::posterior_grid_failures();
    let cases = criteria::posterior_cases().len();
    o.line("bmm posterior monotone grid", bad == 0, format!("{bad} of {cases} mixtures fail"));
}

fn matching(o: &mut Outcome) {
    let zero = criteria::zero_gap_accuracy(5);
    let worst = zero.iter().map(|&(a, b)| a.min(b)).fold(1.0, f64::min);
    o.line("sfm zero-gap correspondence", worst == 1.0, format!("worst accuracy {worst:.4} over 5 seeds"));
    let moderate = criteria::match_accuracies(&TrainConfig::default(), Matcher::Sfm, 5);
    let m = median(&moderate);
    o.line("sfm moderate gap", m >= 0.95, format!("median accuracy {m:.4}"));
    let bench = common::benchmark();
    let sfm = median(&criteria::match_accuracies(&bench, Matcher::Sfm, 5));
    let greedy = median(&criteria::match_accuracies(&bench, Matcher::Greedy, 5));
    o.line("sfm >= greedy on benchmark", sfm >= greedy, format!("sfm {sfm:.4}, greedy {greedy:.4}"));
}

fn row(rows: &[GridRow], loss: LossKind, cma: bool, lfc: bool) -> f64 {
    rows.iter()
        .find(|r| r.loss == loss && (r.lambda_cma > 0.0) == cma && (r.lambda_lfc > 0.0) == lfc)
        .map(GridRow::median_map)
        .expect("grid point")
}

fn strict(o: &mut Outcome, name: &str, hi: (&str, f64), lo: (&str, f64)) {
    o.line(name, hi.1 > lo.1, format!("{} {:.4} vs {} {:.4}", hi.0, hi.1, lo.0, lo.1));
}

fn ablation(o: &mut Outcome, runs: &mut Runs) {
    let dir = out_dir();
    let mut base = common::benchmark();
    base.lambda_cma = 0.5;
    base.lambda_lfc = 0.5;

    let points = loss_grid(&base);
    let rows = match run_grid(&points, &SEEDS, |cfg| runs.report(cfg)) {
        Ok(rows) => rows,
        Err(e) => return o.line("ablation grid", false, format!("training failed: {e}")),
    };
    write_grid(&rows, std::fs::File::create(dir.join("ablation.csv")).unwrap()).unwrap();
    let d = row(&rows, LossKind::DynamicPlc, false, false);
    let s = row(&rows, LossKind::StaticPlc, false, false);
    let c = row(&rows, LossKind::ClusterNce, false, false);
    strict(o, "ablation D-PLC > S-PLC", ("D-PLC", d), ("S-PLC", s));
    strict(o, "ablation S-PLC > ClusterNCE", ("S-PLC", s), ("ClusterNCE", c));
    let cma = row(&rows, LossKind::DynamicPlc, true, false);
    let lfc = row(&rows, LossKind::DynamicPlc, false, true);
    let both = row(&rows, LossKind::DynamicPlc, true, true);
    strict(o, "ablation +CMA > PLC-only", ("+CMA", cma), ("PLC-only", d));
    strict(o, "ablation +LFC > PLC-only", ("+LFC", lfc), ("PLC-only", d));
    o.line(
        "ablation CMA+LFC >= each alone",
        both >= cma && both >= lfc,
        format!("CMA+LFC {both:.4}, CMA {cma:.4}, LFC {lfc:.4}"),
    );

    base.loss = LossKind::DynamicPlc;
    let points = lambda_grid(&base);
    let rows = match run_grid(&points, &SEEDS, |cfg| runs.report(cfg)) {
        Ok(rows) => rows,
        Err(e) => return o.line("lambda grid", false, format!("training failed: {e}")),
    };
    let path = dir.join("lambda_grid.csv");
    write_grid(&rows, std::fs::File::create(&path).unwrap()).unwrap();
    let at = |l1: f64, l2: f64| rows.iter().find(|r| r.lambda_cma == l1 && r.lambda_lfc == l2).unwrap().median_map();
    o.line("lambda grid complete", rows.len() == 9, format!("{} rows written to {}", rows.len(), path.display()));
    strict(o, "lambda (0.5,0.5) > (0,0)", ("(0.5,0.5)", at(0.5, 0.5)), ("(0,0)", at(0.0, 0.0)));
}

fn metrics(o: &mut Outcome) {
    let t = criteria::metric_arrangements(6);
    o.line(
        "metric oracle agreement",
        t.mismatches == 0,
        format!("{} of {} arrangements disagree", t.mismatches, t.arrangements),
    );
    let gap = criteria::single_positive_gap(6);
    o.line("metric single-positive expectation", gap < 1e-12, format!("max |mean AP - H_G/G| = {gap:.1e}"));
    o.line(
        "metric mINP <= mAP per query",
        t.inp_above_ap == 0,
        format!("{} of {} arrangements have INP > AP", t.inp_above_ap, t.arrangements),
    );
}

fn end_to_end(o: &mut Outcome) {
    let cfg = TrainConfig::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let start = Instant::now();
    let first = run_experiment(&cfg, Some(dirs[0].path()));
    let took = start.elapsed();
    if let Err(e) = first.and_then(|_| run_experiment(&cfg, Some(dirs[1].path()))) {
        o.line("determinism", false, format!("training failed: {e}"));
        o.line("default config wall clock", false, format!("training failed: {e}"));
        return;
    }
    let read = |i: usize| std::fs::read(dirs[i].path().join("metrics.csv")).unwrap();
    let (a, b) = (read(0), read(1));
    o.line("determinism", a == b && !a.is_empty(), format!("metrics.csv {} bytes, identical: {}", a.len(), a == b));
    o.line("default config wall clock", took < Duration::from_secs(600), secs(took));
}

/// Run one group of criteria; a panic inside it becomes a FAIL line.
fn section(o: &mut Outcome, name: &str, f: impl FnOnce(&mut Outcome)) {
    if let Err(p) = panic::catch_unwind(AssertUnwindSafe(|| f(o))) {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        o.line(name, false, format!("panicked: {msg}"));
    }
}

fn main() {
    let start = Instant::now();
    let mut o = Outcome { passed: 0, failed: Vec::new() };
    let mut runs = Runs::default();
    section(&mut o, "gradients", gradients);
    section(&mut o, "clustering", clustering);
    section(&mut o, "noise model", noise_model);
    section(&mut o, "matching", matching);
    section(&mut o, "metrics", metrics);
    section(&mut o, "end to end", end_to_end);
    section(&mut o, "ablation", |o| ablation(o, &mut runs));
    println!(
        "acceptance: {} passed, {} failed, {} training runs, {}",
        o.passed,
        o.failed.len(),
        runs.cache.len(),
        secs(start.elapsed())
    );
    if !o.failed.is_empty() {
        println!("failed: {}", o.failed.join(", "));
        std::process::exit(1);
    }
}
