//! Three-stage training: encoder with intra-modality contrastive learning,
//! translator pre-training, then joint fine-tuning with cross-modality
//! alignment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LossKind, Matcher, TrainConfig};
use super::eval::encode;
use crate::bit::{self, GanDiagnostics, GanOptimizers, TranslationPair};
use crate::cluster::{adjusted_rand_index, dbscan, PseudoLabeling, NOISE};
use crate::datagen::{EmbeddingDataset, Modality};
use crate::diffcore::tensor::DenseTensor;
use crate::diffcore::{Activation, Network, OptimizerKind, OptimizerState, Schedule, Tape, Var};
use crate::error::{Error, Result};
use crate::membank::{init_bank, init_pseudo_bank, BankKind, MemoryBank};
use crate::mla::{cma_direction, lfc_modality, matched_targets};
use crate::plc::{cluster_nce_batch, fit_bmm_raw, per_sample_nce, plc_batch, BetaMixture};
use crate::sfm::{greedy_match, majority_identity, matching_accuracy, sfm_match, MatchTable};

const STREAM_ENCODER: u64 = 10;
const STREAM_SHUFFLE: u64 = 11;
const STREAM_CORRUPT: u64 = 12;
const STREAM_GAN_INIT: u64 = 13;
const STREAM_GAN_BATCH: u64 = 14;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

/// One row of the per-epoch training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveRow {
    pub stage: u8,
    pub epoch: usize,
    pub plc: f64,
    pub cma: f64,
    pub lfc: f64,
    pub cycle: f64,
    pub wasserstein: f64,
    pub clusters_v: usize,
    pub clusters_i: usize,
    pub ari_v: f64,
    pub ari_i: f64,
    pub match_v2i: f64,
    pub match_i2v: f64,
    /// Mean noise posterior of clean and of corrupted samples.
    pub w_clean: f64,
    pub w_noisy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BmmRow {
    pub epoch: usize,
    pub modality: Modality,
    pub mixture: BetaMixture,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub curves: Vec<CurveRow>,
    pub bmm: Vec<BmmRow>,
    /// Every translator step: `(stage, diagnostics)`.
    pub gan_steps: Vec<(u8, GanDiagnostics)>,
    pub last_match: Option<MatchTable>,
}

/// Labels, bank and correction weights for one modality's epoch.
#[derive(Debug, Clone)]
pub struct ModalityState {
    pub modality: Modality,
    /// Dataset indices of originals.
    pub orig: Vec<usize>,
    pub twins: Vec<Option<usize>>,
    /// Density clustering output before label corruption.
    pub clean: PseudoLabeling,
    /// Training labels.
    pub labeling: PseudoLabeling,
    pub corrupted: Vec<bool>,
    pub bank: MemoryBank,
    pub weights: Vec<f64>,
}

impl ModalityState {
    pub fn trainable(&self) -> Vec<usize> {
        (0..self.orig.len()).filter(|&p| self.labeling.labels[p] != NOISE).collect()
    }
}

/// Renumber labels so clusters are `0..k` in order of their old ids.
fn compact(labels: &[i64]) -> Vec<i64> {
    let max = labels.iter().copied().max().unwrap_or(-1);
    let mut map = vec![-1i64; (max + 1).max(0) as usize];
    for &l in labels {
        if l >= 0 {
            map[l as usize] = 0;
        }
    }
    let mut next = 0;
    for m in map.iter_mut() {
        if *m == 0 {
            *m = next;
            next += 1;
        }
    }
    labels.iter().map(|&l| if l < 0 { NOISE } else { map[l as usize] }).collect()
}

pub struct Model {
    pub encoder: Network,
    pub pair: TranslationPair,
}

pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a EmbeddingDataset,
    x: DenseTensor,
    v_orig: Vec<usize>,
    i_orig: Vec<usize>,
    /// Fixed decoy position per original whose label it takes when corrupted.
    decoys: [Vec<Option<usize>>; 2],
    pub encoder: Network,
    pub pair: TranslationPair,
    enc_opt: OptimizerState,
    gan_opts: GanOptimizers,
    shuffle_rng: ChaCha8Rng,
    gan_rng: ChaCha8Rng,
    /// Encoder epochs completed across stages 1 and 3.
    epoch: usize,
    pub log: TrainLog,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, data: &'a EmbeddingDataset) -> Result<Self> {
        cfg.validate()?;
        let d = data.dim();
        let v_orig = data.originals(Modality::Visible);
        let i_orig = data.originals(Modality::Infrared);
        if v_orig.is_empty() || i_orig.is_empty() {
            return Err(Error::Data("training data needs both modalities".into()));
        }
        let all: Vec<usize> = (0..data.len()).collect();
        let x = data.feature_matrix(&all);

        let mut enc_rng = stream(cfg.seed, STREAM_ENCODER);
        let encoder = if cfg.encoder_hidden == 0 {
            Network::identity(d)
        } else {
            let mut n = Network::init(
                &[d, cfg.encoder_hidden, d],
                &[Activation::Relu, Activation::Linear],
                true,
                &mut enc_rng,
            )?;
            n.layers_mut()[1].weight.data_mut().iter_mut().for_each(|w| *w *= 0.1);
            n
        };
        let pair = TranslationPair::new(d, cfg.clip, &mut stream(cfg.seed, STREAM_GAN_INIT))?;

        let mut crng = stream(cfg.seed, STREAM_CORRUPT);
        let decoys = [&v_orig, &i_orig].map(|orig| {
            orig.iter()
                .map(|&i| {
                    let id = data.samples()[i].identity;
                    let pick = crng.random::<f64>() < cfg.label_noise;
                    let others: Vec<usize> = (0..orig.len())
                        .filter(|&q| data.samples()[orig[q]].identity != id)
                        .collect();
                    if pick && !others.is_empty() {
                        Some(others[crng.random_range(0..others.len())])
                    } else {
                        None
                    }
                })
                .collect()
        });

        Ok(Trainer {
            cfg,
            data,
            x,
            v_orig,
            i_orig,
            decoys,
            encoder,
            pair,
            enc_opt: Self::encoder_optimizer(cfg)?,
            gan_opts: GanOptimizers::adam(cfg.gan_lr, cfg.n_critic)?,
            shuffle_rng: stream(cfg.seed, STREAM_SHUFFLE),
            gan_rng: stream(cfg.seed, STREAM_GAN_BATCH),
            epoch: 0,
            log: TrainLog::default(),
        })
    }

    fn encoder_optimizer(cfg: &TrainConfig) -> Result<OptimizerState> {
        OptimizerState::new(
            OptimizerKind::Adam,
            cfg.lr,
            Schedule {
                warmup_steps: cfg.warmup_steps,
                decay_epochs: cfg.decay_epochs.clone(),
                decay_factor: cfg.decay_factor,
            },
        )
    }

    pub fn into_model(self) -> (Model, TrainLog) {
        (Model { encoder: self.encoder, pair: self.pair }, self.log)
    }

    fn features(&self) -> Result<DenseTensor> {
        encode(&self.encoder, &self.x)
    }

    fn rows(feats: &DenseTensor, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| feats.row(i).to_vec()).collect()
    }

    /// Cluster one modality's originals, corrupt labels, build the bank and
    /// weights. Returns the noise model when one was fitted.
    fn modality_state(&self, feats: &DenseTensor, m: Modality) -> Result<(ModalityState, Option<BetaMixture>)> {
        let (orig, decoys) = match m {
            Modality::Visible => (&self.v_orig, &self.decoys[0]),
            Modality::Infrared => (&self.i_orig, &self.decoys[1]),
        };
        let f = Self::rows(feats, orig);
        let clean = dbscan(&f, self.cfg.dbscan_eps, self.cfg.dbscan_min_pts)?;
        if clean.num_clusters == 0 {
            return Err(Error::config(format!(
                "no {} clusters found; try a larger dbscan_eps (now {}) or smaller dbscan_min_pts (now {})",
                m.code(),
                self.cfg.dbscan_eps,
                self.cfg.dbscan_min_pts
            )));
        }
        let raw: Vec<i64> = (0..orig.len())
            .map(|p| {
                let own = clean.labels[p];
                match decoys[p] {
                    Some(q) if own != NOISE && clean.labels[q] != NOISE => clean.labels[q],
                    _ => own,
                }
            })
            .collect();
        let corrupted = raw.iter().zip(&clean.labels).map(|(a, b)| a != b).collect();
        let labeling = PseudoLabeling::from_labels(compact(&raw))?;
        let twins = orig.iter().map(|&i| self.data.twin_of(i)).collect();
        let bank = init_bank(&f, &labeling, m, BankKind::Real, self.cfg.bank_rate)?;
        let mut st = ModalityState {
            modality: m,
            orig: orig.clone(),
            twins,
            clean,
            labeling,
            corrupted,
            bank,
            weights: vec![self.cfg.static_w; orig.len()],
        };
        let bmm = self.fit_weights(&mut st, &f)?;
        Ok((st, bmm))
    }

    fn fit_weights(&self, st: &mut ModalityState, f: &[Vec<f64>]) -> Result<Option<BetaMixture>> {
        if self.cfg.loss != LossKind::DynamicPlc || self.epoch + 1 < self.cfg.bmm_start_epoch {
            return Ok(None);
        }
        let train = st.trainable();
        if train.len() < 4 {
            log::warn!("too few samples for the noise model; keeping static weights this epoch");
            return Ok(None);
        }
        let z = DenseTensor::from_rows(&train.iter().map(|&p| &f[p]).collect::<Vec<_>>())?;
        let pos: Vec<usize> = train.iter().map(|&p| st.labeling.labels[p] as usize).collect();
        let losses = per_sample_nce(&z, &st.bank.to_tensor(), &pos, self.cfg.tau)?;
        let (bmm, norm) = fit_bmm_raw(&losses, self.cfg.bmm_iters)?;
        for (&p, &l) in train.iter().zip(&norm) {
            st.weights[p] = bmm.noise_posterior(l);
        }
        Ok(Some(bmm))
    }

    fn weight_means(st: &ModalityState) -> (f64, f64, usize, usize) {
        let (mut c, mut n, mut nc, mut nn) = (0.0, 0.0, 0, 0);
        for p in st.trainable() {
            if st.corrupted[p] {
                n += st.weights[p];
                nn += 1;
            } else {
                c += st.weights[p];
                nc += 1;
            }
        }
        (c, n, nc, nn)
    }

    fn epoch_states(&mut self, row: &mut CurveRow) -> Result<[ModalityState; 2]> {
        let feats = self.features()?;
        let (sv, bmm_v) = self.modality_state(&feats, Modality::Visible)?;
        let (si, bmm_i) = self.modality_state(&feats, Modality::Infrared)?;
        let truth = |st: &ModalityState| -> Vec<i64> {
            st.orig.iter().map(|&i| self.data.samples()[i].identity as i64).collect()
        };
        row.clusters_v = sv.labeling.num_clusters;
        row.clusters_i = si.labeling.num_clusters;
        row.ari_v = adjusted_rand_index(&sv.clean.labels, &truth(&sv));
        row.ari_i = adjusted_rand_index(&si.clean.labels, &truth(&si));
        let (a, b) = (Self::weight_means(&sv), Self::weight_means(&si));
        row.w_clean = (a.0 + b.0) / ((a.2 + b.2).max(1) as f64);
        row.w_noisy = (a.1 + b.1) / ((a.3 + b.3).max(1) as f64);
        for (m, bmm) in [(Modality::Visible, bmm_v), (Modality::Infrared, bmm_i)] {
            if let Some(mixture) = bmm {
                self.log.bmm.push(BmmRow { epoch: self.epoch + 1, modality: m, mixture });
            }
        }
        Ok([sv, si])
    }

    pub fn stage1(&mut self) -> Result<()> {
        for _ in 0..self.cfg.epochs_stage1 {
            let mut row = CurveRow { stage: 1, epoch: self.epoch + 1, ..Default::default() };
            let [mut sv, mut si] = self.epoch_states(&mut row)?;
            self.encoder_epoch(&mut sv, &mut si, None, &mut row)?;
            self.epoch += 1;
            self.log.curves.push(row);
        }
        Ok(())
    }

    fn gan_batch(&mut self, feats: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
        let b = self.cfg.batch_size;
        let mut pick = |orig: &[usize]| -> Result<DenseTensor> {
            let n = orig.len();
            let idx = rand::seq::index::sample(&mut self.gan_rng, n, b.min(n));
            DenseTensor::from_rows(&idx.iter().map(|k| feats.row(orig[k])).collect::<Vec<_>>())
        };
        let zv = pick(&self.v_orig.clone())?;
        let zi = pick(&self.i_orig.clone())?;
        Ok((zv, zi))
    }

    fn gan_steps(&mut self, feats: &DenseTensor, steps: usize, stage: u8) -> Result<(f64, f64)> {
        let (mut c, mut w) = (0.0, 0.0);
        for _ in 0..steps {
            let (zv, zi) = self.gan_batch(feats)?;
            let diag = bit::gan_step(&mut self.pair, &zv, &zi, &mut self.gan_opts, self.epoch)?;
            c += diag.cycle;
            w += diag.wasserstein;
            self.log.gan_steps.push((stage, diag));
        }
        let n = steps.max(1) as f64;
        Ok((c / n, w / n))
    }

    pub fn stage2(&mut self) -> Result<()> {
        let feats = self.features()?;
        if self.cfg.epochs_stage2 > 0 {
            for _ in 0..self.cfg.critic_warmup {
                let (zv, zi) = self.gan_batch(&feats)?;
                bit::critic_step(&mut self.pair, &zv, &zi, &mut self.gan_opts, self.epoch)?;
            }
        }
        for e in 0..self.cfg.epochs_stage2 {
            let (cycle, wasserstein) = self.gan_steps(&feats, self.cfg.gan_steps_per_epoch, 2)?;
            self.log.curves.push(CurveRow { stage: 2, epoch: e + 1, cycle, wasserstein, ..Default::default() });
        }
        Ok(())
    }

    fn match_table(&self, sv: &ModalityState, si: &ModalityState, feats: &DenseTensor) -> Result<MatchTable> {
        match self.cfg.matcher {
            Matcher::Greedy => Ok(greedy_match(&sv.bank, &si.bank)),
            Matcher::Sfm => sfm_match(
                &Self::rows(feats, &sv.orig),
                &sv.labeling,
                &Self::rows(feats, &si.orig),
                &si.labeling,
                &self.pair.gen_vi,
                &self.pair.gen_iv,
                &sv.bank,
                &si.bank,
                self.cfg.shortlist,
            ),
        }
    }

    pub fn stage3(&mut self) -> Result<()> {
        if self.cfg.epochs_stage3 > 0 {
            self.enc_opt = Self::encoder_optimizer(self.cfg)?;
        }
        for _ in 0..self.cfg.epochs_stage3 {
            let mut row = CurveRow { stage: 3, epoch: self.epoch + 1, ..Default::default() };
            let [mut sv, mut si] = self.epoch_states(&mut row)?;
            let feats = self.features()?;
            let fv = Self::rows(&feats, &sv.orig);
            let fi = Self::rows(&feats, &si.orig);
            let table = self.match_table(&sv, &si, &feats)?;
            let ids = |st: &ModalityState| -> Vec<usize> {
                st.orig.iter().map(|&i| self.data.samples()[i].identity).collect()
            };
            let (acc_v, acc_i) = matching_accuracy(
                &table,
                &majority_identity(&sv.labeling, &ids(&sv)),
                &majority_identity(&si.labeling, &ids(&si)),
            );
            row.match_v2i = acc_v;
            row.match_i2v = acc_i;
            let pseudo_i = init_pseudo_bank(&fv, &sv.labeling, &self.pair.gen_vi, Modality::Visible, self.cfg.bank_rate)?;
            let pseudo_v = init_pseudo_bank(&fi, &si.labeling, &self.pair.gen_iv, Modality::Infrared, self.cfg.bank_rate)?;
            let mut align = Alignment { table, pseudo_v, pseudo_i };
            self.encoder_epoch(&mut sv, &mut si, Some(&mut align), &mut row)?;
            self.log.last_match = Some(align.table);

            let feats = self.features()?;
            let (cycle, wasserstein) = self.gan_steps(&feats, self.cfg.stage3_gan_steps, 3)?;
            row.cycle = cycle;
            row.wasserstein = wasserstein;
            self.epoch += 1;
            self.log.curves.push(row);
        }
        Ok(())
    }

    fn encoder_epoch(
        &mut self,
        sv: &mut ModalityState,
        si: &mut ModalityState,
        mut align: Option<&mut Alignment>,
        row: &mut CurveRow,
    ) -> Result<()> {
        let mut tv = sv.trainable();
        let mut ti = si.trainable();
        tv.shuffle(&mut self.shuffle_rng);
        ti.shuffle(&mut self.shuffle_rng);
        if tv.is_empty() || ti.is_empty() {
            return Err(Error::config("every sample was marked as noise; adjust dbscan settings"));
        }
        let b = self.cfg.batch_size;
        let batches = tv.len().div_ceil(b);
        let mut sums = [0.0; 3];
        for k in 0..batches {
            let pv = &tv[k * b..((k + 1) * b).min(tv.len())];
            let pi: Vec<usize> = (0..pv.len()).map(|j| ti[(k * b + j) % ti.len()]).collect();
            let parts = self.encoder_step(sv, si, pv, &pi, align.as_deref_mut())?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
        }
        let n = batches as f64;
        row.plc = sums[0] / n;
        row.cma = sums[1] / n;
        row.lfc = sums[2] / n;
        Ok(())
    }

    /// Dataset rows, labels and weights for a visible batch (originals then twins).
    fn batch_rows(st: &ModalityState, pos: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut rows = Vec::with_capacity(2 * pos.len());
        let mut labels = Vec::with_capacity(2 * pos.len());
        let mut w = Vec::with_capacity(2 * pos.len());
        let twins: Vec<usize> = pos.iter().filter_map(|&p| st.twins[p]).collect();
        let with_twins: Vec<usize> = pos.iter().copied().filter(|&p| st.twins[p].is_some()).collect();
        for &p in pos {
            rows.push(st.orig[p]);
            labels.push(st.labeling.labels[p] as usize);
            w.push(st.weights[p]);
        }
        for (&p, &t) in with_twins.iter().zip(&twins) {
            rows.push(t);
            labels.push(st.labeling.labels[p] as usize);
            w.push(st.weights[p]);
        }
        (rows, labels, w)
    }

    fn encoder_step(
        &mut self,
        sv: &mut ModalityState,
        si: &mut ModalityState,
        pv: &[usize],
        pi: &[usize],
        align: Option<&mut Alignment>,
    ) -> Result<[f64; 3]> {
        let cfg = self.cfg;
        let (rows_v, lab_v, w_v) = Self::batch_rows(sv, pv);
        let (rows_i, lab_i, w_i) = Self::batch_rows(si, pi);
        let tape = Tape::new();
        let (grads, parts, zv_val, zi_val) = {
            let enc = self.encoder.bind(&tape);
            let xv = tape.constant(self.data.feature_matrix(&rows_v));
            let xi = tape.constant(self.data.feature_matrix(&rows_i));
            let zv = enc.forward(xv)?.normalize_rows()?;
            let zi = enc.forward(xi)?.normalize_rows()?;
            let (zv_val, zi_val) = (zv.value(), zi.value());
            let bv = tape.constant(sv.bank.to_tensor());
            let bi = tape.constant(si.bank.to_tensor());
            let plc = intra(cfg, zv, bv, &sv.bank, &zv_val, &lab_v, &w_v)?
                .add(intra(cfg, zi, bi, &si.bank, &zi_val, &lab_i, &w_i)?)?;
            let mut total = plc;
            let mut parts = [plc.item(), 0.0, 0.0];
            if let Some(al) = align.as_deref() {
                if cfg.lambda_cma > 0.0 {
                    let mv = matched_targets(&lab_v, &al.table.v_to_i)?;
                    let mi = matched_targets(&lab_i, &al.table.i_to_v)?;
                    let cma = cma_direction(zv, bi, &mv, cfg.tau)?.add(cma_direction(zi, bv, &mi, cfg.tau)?)?;
                    parts[1] = cma.item();
                    total = total.add(cma.scale(cfg.lambda_cma))?;
                }
                if cfg.lambda_lfc > 0.0 {
                    let pv_al = tape.constant(al.pseudo_v.reindexed(&al.table.v_to_i)?.to_tensor());
                    let pi_al = tape.constant(al.pseudo_i.reindexed(&al.table.i_to_v)?.to_tensor());
                    let lfc = lfc_modality(zv, bv, pv_al, cfg.tau, cfg.lfc_mode)?
                        .add(lfc_modality(zi, bi, pi_al, cfg.tau, cfg.lfc_mode)?)?;
                    parts[2] = lfc.item();
                    total = total.add(lfc.scale(cfg.lambda_lfc))?;
                }
            }
            if !total.item().is_finite() {
                return Err(Error::numeric(format!("encoder loss is {} at epoch {}", total.item(), self.epoch + 1)));
            }
            let g = tape.backward(total)?;
            (enc.gradients(&g), parts, zv_val, zi_val)
        };
        self.enc_opt.step_network(&mut self.encoder, "encoder", &grads, self.epoch)?;

        for (r, &l) in lab_v.iter().enumerate() {
            sv.bank.ema_update(l, zv_val.row(r))?;
        }
        for (r, &l) in lab_i.iter().enumerate() {
            si.bank.ema_update(l, zi_val.row(r))?;
        }
        if let Some(al) = align {
            let tv = bit::translate_batch(&self.pair.gen_vi, &(0..zv_val.rows()).map(|r| zv_val.row(r)).collect::<Vec<_>>())?;
            let ti = bit::translate_batch(&self.pair.gen_iv, &(0..zi_val.rows()).map(|r| zi_val.row(r)).collect::<Vec<_>>())?;
            for (z, &l) in tv.iter().zip(&lab_v) {
                al.pseudo_i.ema_update(l, z)?;
            }
            for (z, &l) in ti.iter().zip(&lab_i) {
                al.pseudo_v.ema_update(l, z)?;
            }
        }
        Ok(parts)
    }
}

/// Intra-modality term: ClusterNCE or PLC against the nearest centroids.
fn intra<'t>(
    cfg: &TrainConfig,
    z: Var<'t>,
    bank_var: Var<'t>,
    bank: &MemoryBank,
    val: &DenseTensor,
    lab: &[usize],
    w: &[f64],
) -> Result<Var<'t>> {
    match cfg.loss {
        LossKind::ClusterNce => cluster_nce_batch(z, bank_var, lab, cfg.tau),
        _ => {
            let nearest: Vec<usize> = (0..val.rows()).map(|r| bank.nearest(val.row(r))).collect();
            plc_batch(z, bank_var, lab, &nearest, w, cfg.tau)
        }
    }
}

/// Stage-3 cross-modality state: the match table and the pseudo banks.
/// `pseudo_i` holds translated visible features per visible cluster;
/// `pseudo_v` holds translated infrared features per infrared cluster.
struct Alignment {
    table: MatchTable,
    pseudo_v: MemoryBank,
    pseudo_i: MemoryBank,
}

/// All three stages, each error tagged with its stage.
pub fn train(cfg: &TrainConfig, data: &EmbeddingDataset) -> Result<(Model, TrainLog)> {
    let mut t = Trainer::new(cfg, data)?;
    t.stage1().map_err(|e| e.in_stage("stage1"))?;
    t.stage2().map_err(|e| e.in_stage("stage2"))?;
    t.stage3().map_err(|e| e.in_stage("stage3"))?;
    Ok(t.into_model())
}
