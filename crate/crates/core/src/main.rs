use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use uvireid::cluster::dbscan;
use uvireid::datagen::{generate_split, EmbeddingDataset, Modality};
use uvireid::diffcore::checkpoint::{find_role, read_checkpoint};
use uvireid::membank::{init_bank, BankKind};
use uvireid::pipeline::eval::{encode, evaluate};
use uvireid::pipeline::experiment::{aggregate, lambda_grid, loss_grid, run_experiment, run_grid, write_grid};
use uvireid::pipeline::TrainConfig;
use uvireid::sfm::{majority_identity, matching_accuracy, sfm_match};
use uvireid::Error;

#[derive(Parser)]
#[command(name = "uvireid", version, about = "Unsupervised visible-infrared re-identification on embeddings")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// Three losses, each with and without CMA and LFC.
    Loss,
    /// Alignment weights over {0, 0.5, 1}².
    Lambda,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset from the `gen.*` keys of a config file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the held-out identities here.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Run all three stages, evaluate, and write artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Retrieval metrics for a checkpoint's encoder.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Cluster both modalities and print the cluster match table.
    Match {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Clustering settings; defaults apply without it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate metrics CSVs under a directory into summary.csv.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run an ablation grid over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "loss")]
        grid: Grid,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn require(path: &Path, flag: &str) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(Error::Data(format!("{flag} {}: no such file", path.display())).into());
    }
    Ok(())
}

fn load_data(path: &Path) -> anyhow::Result<EmbeddingDataset> {
    require(path, "--data")?;
    Ok(EmbeddingDataset::load(path)?)
}

fn load_config(path: &Path) -> anyhow::Result<TrainConfig> {
    require(path, "--config").map_err(|_| Error::config(format!("--config {}: no such file", path.display())))?;
    Ok(TrainConfig::load(path)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    match cli.cmd {
        Cmd::GenData { spec, out, test_out } => {
            if !spec.exists() {
                return Err(Error::config(format!("--spec {}: no such file", spec.display())).into());
            }
            let cfg = TrainConfig::load(&spec)?;
            let (train, test) = generate_split(&cfg.gen)?;
            train.save(&out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(t) = test_out {
                test.save(&t).with_context(|| format!("writing {}", t.display()))?;
            }
            log::info!("wrote {} training samples", train.len());
        }
        Cmd::Train { config, out_dir } => {
            let cfg = load_config(&config)?;
            let res = run_experiment(&cfg, Some(&out_dir))?;
            res.report.write_csv(stdout.lock())?;
        }
        Cmd::Eval { checkpoint, data } => {
            require(&checkpoint, "--checkpoint")?;
            require(&data, "--data")?;
            let nets = read_checkpoint(std::fs::File::open(&checkpoint)?)?;
            let data = load_data(&data)?;
            evaluate(find_role(&nets, "encoder")?, &data)?.write_csv(stdout.lock())?;
        }
        Cmd::Match { checkpoint, data, config } => {
            require(&checkpoint, "--checkpoint")?;
            require(&data, "--data")?;
            let nets = read_checkpoint(std::fs::File::open(&checkpoint)?)?;
            let data = load_data(&data)?;
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => TrainConfig::default(),
            };
            let feats = encode(find_role(&nets, "encoder")?, &data.feature_matrix(&(0..data.len()).collect::<Vec<_>>()))?;
            let side = |m: Modality| -> anyhow::Result<_> {
                let idx = data.originals(m);
                let f: Vec<Vec<f64>> = idx.iter().map(|&i| feats.row(i).to_vec()).collect();
                let lab = dbscan(&f, cfg.dbscan_eps, cfg.dbscan_min_pts)?;
                if lab.num_clusters == 0 {
                    return Err(Error::config(format!(
                        "no {} clusters; adjust dbscan_eps or dbscan_min_pts",
                        m.code()
                    ))
                    .into());
                }
                let bank = init_bank(&f, &lab, m, BankKind::Real, cfg.bank_rate)?;
                let ids: Vec<usize> = idx.iter().map(|&i| data.samples()[i].identity).collect();
                Ok((f, lab, bank, ids))
            };
            let (fv, lv, bv, idv) = side(Modality::Visible)?;
            let (fi, li, bi, idi) = side(Modality::Infrared)?;
            let table = sfm_match(
                &fv,
                &lv,
                &fi,
                &li,
                find_role(&nets, "gen_vi")?,
                find_role(&nets, "gen_iv")?,
                &bv,
                &bi,
                cfg.shortlist,
            )?;
            table.write_csv(stdout.lock())?;
            let (a, b) = matching_accuracy(&table, &majority_identity(&lv, &idv), &majority_identity(&li, &idi));
            eprintln!("match accuracy: V2I {a:.4}, I2V {b:.4}");
        }
        Cmd::Report { dir } => {
            if !dir.is_dir() {
                return Err(Error::Data(format!("--dir {}: not a directory", dir.display())).into());
            }
            stdout.lock().write_all(aggregate(&dir)?.as_bytes())?;
        }
        Cmd::Ablate { config, grid, seeds, out_dir } => {
            let base = load_config(&config)?;
            let points = match grid {
                Grid::Loss => loss_grid(&base),
                Grid::Lambda => lambda_grid(&base),
            };
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = run_grid(&points, &seeds, |cfg| Ok(run_experiment(cfg, None)?.report))?;
            write_grid(&rows, stdout.lock())?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                let name = match grid {
                    Grid::Loss => "ablation.csv",
                    Grid::Lambda => "lambda_grid.csv",
                };
                write_grid(&rows, std::fs::File::create(dir.join(name))?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
