//! End-to-end runs, on-disk artifacts and the ablation grids.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{LossKind, TrainConfig};
use super::eval::{evaluate, MetricsReport};
use super::train::{train, Model, TrainLog};
use crate::datagen::{generate_split, EmbeddingDataset};
use crate::diffcore::{write_checkpoint, NamedNetwork};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MATCH_FILE: &str = "match.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const BMM_FILE: &str = "bmm.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";

/// Training and evaluation sets. With no `data` key the synthetic world is
/// generated; with `data` but no `test_data` evaluation reuses the training set.
pub fn load_data(cfg: &TrainConfig) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    match &cfg.data {
        None => generate_split(&cfg.gen),
        Some(p) => {
            let train = load_named(p, "data")?;
            let test = match &cfg.test_data {
                Some(t) => load_named(t, "test_data")?,
                None => {
                    log::warn!("no test_data given; evaluating on the training set");
                    train.clone()
                }
            };
            if train.dim() != test.dim() {
                return Err(Error::Data(format!(
                    "data has dim {} but test_data has dim {}",
                    train.dim(),
                    test.dim()
                )));
            }
            Ok((train, test))
        }
    }
}

fn load_named(path: &Path, key: &str) -> Result<EmbeddingDataset> {
    if !path.exists() {
        return Err(Error::Data(format!("{key} = {}: no such file", path.display())));
    }
    EmbeddingDataset::load(path)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub struct ExperimentResult {
    pub report: MetricsReport,
    pub model: Model,
    pub log: TrainLog,
}

/// Train, evaluate, and optionally write every artifact into `out_dir`.
pub fn run_experiment(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (train_set, test_set) = load_data(cfg)?;
    let (model, log) = train(cfg, &train_set)?;
    let report = evaluate(&model.encoder, &test_set).map_err(|e| e.in_stage("eval"))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        report.write_csv(create(dir, METRICS_FILE)?)?;
        if let Some(t) = &log.last_match {
            t.write_csv(create(dir, MATCH_FILE)?)?;
        }
        write_curves(&log, create(dir, CURVES_FILE)?)?;
        write_bmm(&log, create(dir, BMM_FILE)?)?;
        write_checkpoint(create(dir, CHECKPOINT_FILE)?, &model_networks(&model))?;
        std::fs::write(dir.join(CONFIG_FILE), cfg.render())?;
    }
    Ok(ExperimentResult { report, model, log })
}

pub fn model_networks(m: &Model) -> Vec<NamedNetwork> {
    [
        ("encoder", &m.encoder),
        ("gen_vi", &m.pair.gen_vi),
        ("gen_iv", &m.pair.gen_iv),
        ("critic_v", &m.pair.critic_v),
        ("critic_i", &m.pair.critic_i),
    ]
    .into_iter()
    .map(|(role, net)| NamedNetwork { role: role.into(), net: net.clone() })
    .collect()
}

pub fn write_curves<W: Write>(log: &TrainLog, mut w: W) -> Result<()> {
    writeln!(
        w,
        "stage,epoch,plc,cma,lfc,cycle,wasserstein,clusters_v,clusters_i,ari_v,ari_i,match_v2i,match_i2v,w_clean,w_noisy"
    )?;
    for r in &log.curves {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.stage,
            r.epoch,
            r.plc,
            r.cma,
            r.lfc,
            r.cycle,
            r.wasserstein,
            r.clusters_v,
            r.clusters_i,
            r.ari_v,
            r.ari_i,
            r.match_v2i,
            r.match_i2v,
            r.w_clean,
            r.w_noisy
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bmm<W: Write>(log: &TrainLog, mut w: W) -> Result<()> {
    writeln!(w, "epoch,modality,alpha_clean,beta_clean,alpha_noisy,beta_noisy,weight_noisy")?;
    for r in &log.bmm {
        let [c, n] = &r.mixture.components;
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch,
            r.modality.code(),
            c.alpha,
            c.beta,
            n.alpha,
            n.beta,
            r.mixture.weights[1]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Metrics CSVs found in `dir` and its immediate subdirectories, sorted by path.
pub fn find_metrics(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let own = dir.join(METRICS_FILE);
    if own.is_file() {
        found.push(own);
    }
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path().join(METRICS_FILE);
        if p.is_file() {
            found.push(p);
        }
    }
    found.sort();
    Ok(found)
}

/// Parsed metrics rows: direction and the six values.
pub fn read_metrics(path: &Path) -> Result<Vec<(String, [f64; 6])>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, msg: String| Error::Parse { line, msg: format!("{}: {msg}", path.display()) };
    let mut lines = text.lines();
    if lines.next() != Some("direction,rank1,rank5,rank10,rank20,map,minp") {
        return Err(bad(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (n, l) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 7 {
            return Err(bad(n + 2, format!("expected 7 fields, got {}", f.len())));
        }
        let mut v = [0.0; 6];
        for (x, s) in v.iter_mut().zip(&f[1..]) {
            *x = s.parse().map_err(|_| bad(n + 2, format!("bad number '{s}'")))?;
        }
        rows.push((f[0].to_string(), v));
    }
    Ok(rows)
}

/// Combine every run's metrics under `dir` into `summary.csv`; returns its text.
pub fn aggregate(dir: &Path) -> Result<String> {
    let files = find_metrics(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no {METRICS_FILE} under {}", dir.display())));
    }
    let mut out = String::from("run,direction,rank1,rank5,rank10,rank20,map,minp\n");
    let mut mean: Vec<(String, [f64; 6], usize)> = Vec::new();
    for f in &files {
        let run = f
            .parent()
            .filter(|p| *p != dir)
            .and_then(|p| p.file_name())
            .map_or(".".to_string(), |n| n.to_string_lossy().into_owned());
        for (dirn, v) in read_metrics(f)? {
            out.push_str(&format!("{run},{dirn}"));
            for x in v {
                out.push_str(&format!(",{x:.6}"));
            }
            out.push('\n');
            match mean.iter_mut().find(|m| m.0 == dirn) {
                Some(m) => {
                    m.1.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                    m.2 += 1;
                }
                None => mean.push((dirn, v, 1)),
            }
        }
    }
    for (dirn, sum, n) in mean {
        out.push_str(&format!("mean,{dirn}"));
        for x in sum {
            out.push_str(&format!(",{:.6}", x / n as f64));
        }
        out.push('\n');
    }
    std::fs::write(dir.join("summary.csv"), &out)?;
    Ok(out)
}

/// Named configuration in an ablation grid.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub loss: LossKind,
    pub lambda_cma: f64,
    pub lambda_lfc: f64,
    pub cfg: TrainConfig,
}

/// The 12-point loss grid: three intra-modality losses, each with and
/// without CMA and LFC. Enabled terms use the base config's weights, or 0.5
/// when the base disables them.
pub fn loss_grid(base: &TrainConfig) -> Vec<GridPoint> {
    let on = |x: f64| if x > 0.0 { x } else { 0.5 };
    let mut out = Vec::new();
    for loss in [LossKind::ClusterNce, LossKind::StaticPlc, LossKind::DynamicPlc] {
        for cma in [false, true] {
            for lfc in [false, true] {
                let mut cfg = base.clone();
                cfg.loss = loss;
                cfg.lambda_cma = if cma { on(base.lambda_cma) } else { 0.0 };
                cfg.lambda_lfc = if lfc { on(base.lambda_lfc) } else { 0.0 };
                out.push(GridPoint { loss, lambda_cma: cfg.lambda_cma, lambda_lfc: cfg.lambda_lfc, cfg });
            }
        }
    }
    out
}

/// The 3×3 grid over both alignment weights in {0, 0.5, 1}.
pub fn lambda_grid(base: &TrainConfig) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for l1 in [0.0, 0.5, 1.0] {
        for l2 in [0.0, 0.5, 1.0] {
            let mut cfg = base.clone();
            cfg.lambda_cma = l1;
            cfg.lambda_lfc = l2;
            out.push(GridPoint { loss: cfg.loss, lambda_cma: l1, lambda_lfc: l2, cfg });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub loss: LossKind,
    pub lambda_cma: f64,
    pub lambda_lfc: f64,
    /// Mean mAP over both directions, one per seed.
    pub maps: Vec<f64>,
    pub rank1s: Vec<f64>,
}

impl GridRow {
    pub fn median_map(&self) -> f64 {
        median(&self.maps)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Run every grid point under each seed (overriding `seed` and `gen.seed`).
/// `run` is the training entry point, so callers can cache or stub it.
pub fn run_grid<F>(points: &[GridPoint], seeds: &[u64], mut run: F) -> Result<Vec<GridRow>>
where
    F: FnMut(&TrainConfig) -> Result<MetricsReport>,
{
    points
        .iter()
        .map(|p| {
            let mut row = GridRow {
                loss: p.loss,
                lambda_cma: p.lambda_cma,
                lambda_lfc: p.lambda_lfc,
                maps: Vec::new(),
                rank1s: Vec::new(),
            };
            for &s in seeds {
                let mut cfg = p.cfg.clone();
                cfg.seed = s;
                cfg.gen.seed = s;
                let r = run(&cfg)?;
                log::info!(
                    "{} cma={} lfc={} seed={s}: mAP {:.4}",
                    p.loss.tag(),
                    p.lambda_cma,
                    p.lambda_lfc,
                    r.map()
                );
                row.maps.push(r.map());
                row.rank1s.push(r.rank1());
            }
            Ok(row)
        })
        .collect()
}

pub fn write_grid<W: Write>(rows: &[GridRow], mut w: W) -> Result<()> {
    writeln!(w, "loss,lambda_cma,lambda_lfc,seeds,median_map,median_rank1,maps")?;
    for r in rows {
        let maps: Vec<String> = r.maps.iter().map(|m| format!("{m:.6}")).collect();
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{}",
            r.loss.tag(),
            r.lambda_cma,
            r.lambda_lfc,
            r.maps.len(),
            r.median_map(),
            median(&r.rank1s),
            maps.join(";")
        )?;
    }
    w.flush()?;
    Ok(())
}
