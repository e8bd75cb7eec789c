//! `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datagen::GenSpec;
use crate::error::{Error, Result};
use crate::mla::LfcMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    ClusterNce,
    StaticPlc,
    DynamicPlc,
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::ClusterNce => "cluster_nce",
            LossKind::StaticPlc => "s_plc",
            LossKind::DynamicPlc => "d_plc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cluster_nce" => Some(LossKind::ClusterNce),
            "s_plc" => Some(LossKind::StaticPlc),
            "d_plc" => Some(LossKind::DynamicPlc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matcher {
    Sfm,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Training embeddings; generated from `gen` when absent.
    pub data: Option<PathBuf>,
    /// Evaluation embeddings; generated from `gen` when absent.
    pub test_data: Option<PathBuf>,
    pub gen: GenSpec,
    pub seed: u64,

    pub tau: f64,
    pub bank_rate: f64,
    pub loss: LossKind,
    pub static_w: f64,
    pub bmm_iters: usize,
    pub bmm_start_epoch: usize,
    /// Fraction of pseudo labels replaced by a fixed decoy's label.
    pub label_noise: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,

    pub lambda_cma: f64,
    pub lambda_lfc: f64,
    pub lfc_mode: LfcMode,
    pub matcher: Matcher,
    pub shortlist: usize,

    pub lr: f64,
    pub warmup_steps: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub encoder_hidden: usize,

    pub gan_lr: f64,
    pub n_critic: usize,
    pub clip: f64,
    /// Critic-only updates before the first generator step of stage 2.
    pub critic_warmup: usize,
    pub gan_steps_per_epoch: usize,
    pub stage3_gan_steps: usize,

    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_stage3: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data: None,
            test_data: None,
            gen: GenSpec::default(),
            seed: 0,
            tau: 0.05,
            bank_rate: 0.2,
            loss: LossKind::DynamicPlc,
            static_w: 0.5,
            bmm_iters: 10,
            bmm_start_epoch: 2,
            label_noise: 0.0,
            dbscan_eps: 0.3,
            dbscan_min_pts: 4,
            lambda_cma: 0.5,
            lambda_lfc: 0.5,
            lfc_mode: LfcMode::BatchSoftmax,
            matcher: Matcher::Sfm,
            shortlist: 2,
            lr: 3.5e-3,
            warmup_steps: 0,
            decay_epochs: vec![20, 50],
            decay_factor: 0.1,
            encoder_hidden: 0,
            gan_lr: 1e-3,
            n_critic: 5,
            clip: 0.01,
            critic_warmup: 100,
            gan_steps_per_epoch: 10,
            stage3_gan_steps: 1,
            epochs_stage1: 15,
            epochs_stage2: 10,
            epochs_stage3: 20,
            batch_size: 32,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("--config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative data paths resolve against the config's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data, &mut cfg.test_data].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut gen_seed = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected 'key = value'", n + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "data" => cfg.data = Some(PathBuf::from(v)),
                "test_data" => cfg.test_data = Some(PathBuf::from(v)),
                "seed" => cfg.seed = num(key, v)?,
                "tau" => cfg.tau = num(key, v)?,
                "bank_rate" => cfg.bank_rate = num(key, v)?,
                "loss" => {
                    cfg.loss = LossKind::parse(v).ok_or_else(|| {
                        Error::config(format!("loss: expected cluster_nce, s_plc or d_plc, got '{v}'"))
                    })?
                }
                "static_w" => cfg.static_w = num(key, v)?,
                "bmm_iters" => cfg.bmm_iters = num(key, v)?,
                "bmm_start_epoch" => cfg.bmm_start_epoch = num(key, v)?,
                "label_noise" => cfg.label_noise = num(key, v)?,
                "dbscan_eps" => cfg.dbscan_eps = num(key, v)?,
                "dbscan_min_pts" => cfg.dbscan_min_pts = num(key, v)?,
                "lambda_cma" => cfg.lambda_cma = num(key, v)?,
                "lambda_lfc" => cfg.lambda_lfc = num(key, v)?,
                "lfc_mode" => {
                    cfg.lfc_mode = match v {
                        "batch_softmax" => LfcMode::BatchSoftmax,
                        "mean" => LfcMode::Mean,
                        _ => return Err(Error::config(format!("lfc_mode: unknown '{v}'"))),
                    }
                }
                "matcher" => {
                    cfg.matcher = match v {
                        "sfm" => Matcher::Sfm,
                        "greedy" => Matcher::Greedy,
                        _ => return Err(Error::config(format!("matcher: unknown '{v}'"))),
                    }
                }
                "shortlist" => cfg.shortlist = num(key, v)?,
                "lr" => cfg.lr = num(key, v)?,
                "warmup_steps" => cfg.warmup_steps = num(key, v)?,
                "decay_epochs" => {
                    cfg.decay_epochs = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| num(key, s))
                        .collect::<Result<_>>()?
                }
                "decay_factor" => cfg.decay_factor = num(key, v)?,
                "encoder_hidden" => cfg.encoder_hidden = num(key, v)?,
                "gan_lr" => cfg.gan_lr = num(key, v)?,
                "n_critic" => cfg.n_critic = num(key, v)?,
                "clip" => cfg.clip = num(key, v)?,
                "critic_warmup" => cfg.critic_warmup = num(key, v)?,
                "gan_steps_per_epoch" => cfg.gan_steps_per_epoch = num(key, v)?,
                "stage3_gan_steps" => cfg.stage3_gan_steps = num(key, v)?,
                "epochs_stage1" => cfg.epochs_stage1 = num(key, v)?,
                "epochs_stage2" => cfg.epochs_stage2 = num(key, v)?,
                "epochs_stage3" => cfg.epochs_stage3 = num(key, v)?,
                "batch_size" => cfg.batch_size = num(key, v)?,
                "gen.num_identities" => cfg.gen.num_identities = num(key, v)?,
                "gen.test_identities" => cfg.gen.test_identities = num(key, v)?,
                "gen.samples_per_identity" => cfg.gen.samples_per_identity = num(key, v)?,
                "gen.dim" => cfg.gen.dim = num(key, v)?,
                "gen.identity_rank" => cfg.gen.identity_rank = num(key, v)?,
                "gen.sigma_id" => cfg.gen.sigma_id = num(key, v)?,
                "gen.delta_mod" => cfg.gen.delta_mod = num(key, v)?,
                "gen.shared_rotation" => cfg.gen.shared_rotation = num(key, v)?,
                "gen.sigma_aug" => cfg.gen.sigma_aug = num(key, v)?,
                "gen.cameras_per_modality" => cfg.gen.cameras_per_modality = num(key, v)?,
                "gen.seed" => gen_seed = Some(num(key, v)?),
                _ => return Err(Error::config(format!("line {}: unknown key '{key}'", n + 1))),
            }
        }
        cfg.gen.seed = gen_seed.unwrap_or(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("lr", self.lr),
            ("gan_lr", self.gan_lr),
            ("clip", self.clip),
            ("dbscan_eps", self.dbscan_eps),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{k} must be > 0, got {v}")));
            }
        }
        let unit = [
            ("bank_rate", self.bank_rate),
            ("static_w", self.static_w),
            ("label_noise", self.label_noise),
            ("decay_factor", self.decay_factor),
        ];
        for (k, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        for (k, v) in [("lambda_cma", self.lambda_cma), ("lambda_lfc", self.lambda_lfc)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{k} must be >= 0, got {v}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("dbscan_min_pts", self.dbscan_min_pts),
            ("bmm_iters", self.bmm_iters),
            ("n_critic", self.n_critic),
            ("shortlist", self.shortlist),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{k} must be >= 1")));
            }
        }
        if self.dbscan_eps >= 2.0 {
            return Err(Error::config("dbscan_eps must be < 2"));
        }
        self.gen.validate()
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = &self.data {
            kv("data", p.display().to_string());
        }
        if let Some(p) = &self.test_data {
            kv("test_data", p.display().to_string());
        }
        kv("seed", self.seed.to_string());
        kv("tau", format!("{:?}", self.tau));
        kv("bank_rate", format!("{:?}", self.bank_rate));
        kv("loss", self.loss.tag().into());
        kv("static_w", format!("{:?}", self.static_w));
        kv("bmm_iters", self.bmm_iters.to_string());
        kv("bmm_start_epoch", self.bmm_start_epoch.to_string());
        kv("label_noise", format!("{:?}", self.label_noise));
        kv("dbscan_eps", format!("{:?}", self.dbscan_eps));
        kv("dbscan_min_pts", self.dbscan_min_pts.to_string());
        kv("lambda_cma", format!("{:?}", self.lambda_cma));
        kv("lambda_lfc", format!("{:?}", self.lambda_lfc));
        kv(
            "lfc_mode",
            match self.lfc_mode {
                LfcMode::BatchSoftmax => "batch_softmax",
                LfcMode::Mean => "mean",
            }
            .into(),
        );
        kv(
            "matcher",
            match self.matcher {
                Matcher::Sfm => "sfm",
                Matcher::Greedy => "greedy",
            }
            .into(),
        );
        kv("shortlist", self.shortlist.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("warmup_steps", self.warmup_steps.to_string());
        kv(
            "decay_epochs",
            self.decay_epochs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("decay_factor", format!("{:?}", self.decay_factor));
        kv("encoder_hidden", self.encoder_hidden.to_string());
        kv("gan_lr", format!("{:?}", self.gan_lr));
        kv("n_critic", self.n_critic.to_string());
        kv("clip", format!("{:?}", self.clip));
        kv("critic_warmup", self.critic_warmup.to_string());
        kv("gan_steps_per_epoch", self.gan_steps_per_epoch.to_string());
        kv("stage3_gan_steps", self.stage3_gan_steps.to_string());
        kv("epochs_stage1", self.epochs_stage1.to_string());
        kv("epochs_stage2", self.epochs_stage2.to_string());
        kv("epochs_stage3", self.epochs_stage3.to_string());
        kv("batch_size", self.batch_size.to_string());
        let g = &self.gen;
        kv("gen.num_identities", g.num_identities.to_string());
        kv("gen.test_identities", g.test_identities.to_string());
        kv("gen.samples_per_identity", g.samples_per_identity.to_string());
        kv("gen.dim", g.dim.to_string());
        kv("gen.identity_rank", g.identity_rank.to_string());
        kv("gen.sigma_id", format!("{:?}", g.sigma_id));
        kv("gen.delta_mod", format!("{:?}", g.delta_mod));
        kv("gen.shared_rotation", format!("{:?}", g.shared_rotation));
        kv("gen.sigma_aug", format!("{:?}", g.sigma_aug));
        kv("gen.cameras_per_modality", g.cameras_per_modality.to_string());
        kv("gen.seed", g.seed.to_string());
        s
    }
}
