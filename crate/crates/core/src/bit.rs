//! Bidirectional translation between visible and infrared latent features,
//! trained with cycle consistency and weight-clipped Wasserstein critics.

use rand::Rng;

use crate::diffcore::network::BoundNetwork;
use crate::diffcore::tensor::DenseTensor;
use crate::diffcore::{Activation, Network, OptimizerState, Tape, Var};
use crate::error::{Error, Result};

/// `normalize(gen(z))` for each row.
pub fn translate_batch<F: AsRef<[f64]>>(gen: &Network, feats: &[F]) -> Result<Vec<Vec<f64>>> {
    if feats.is_empty() {
        return Ok(Vec::new());
    }
    let x = DenseTensor::from_rows(feats)?;
    let (y, _) = crate::diffcore::tensor::normalize_rows(&gen.infer(&x)?)?;
    Ok((0..y.rows()).map(|i| y.row(i).to_vec()).collect())
}

pub fn translate(gen: &Network, z: &[f64]) -> Result<Vec<f64>> {
    Ok(translate_batch(gen, &[z])?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationPair {
    pub gen_vi: Network,
    pub gen_iv: Network,
    pub critic_v: Network,
    pub critic_i: Network,
    pub clip: f64,
}

impl TranslationPair {
    /// Residual generators `z + tanh(W₂ relu(W₁ z))` with a damped output
    /// layer so translation starts close to the identity; critics
    /// `d → 2d relu → 1`, clamped to `[-clip, clip]`.
    pub fn new<R: Rng + ?Sized>(dim: usize, clip: f64, rng: &mut R) -> Result<Self> {
        if !(clip > 0.0) {
            return Err(Error::config(format!("critic clip must be > 0, got {clip}")));
        }
        let gen = |rng: &mut R| -> Result<Network> {
            let mut g = Network::init(
                &[dim, 2 * dim, dim],
                &[Activation::Relu, Activation::Tanh],
                true,
                rng,
            )?;
            g.layers_mut()[1].weight.data_mut().iter_mut().for_each(|w| *w *= 0.1);
            Ok(g)
        };
        let gen_vi = gen(rng)?;
        let gen_iv = gen(rng)?;
        let critic = |rng: &mut R| -> Result<Network> {
            let mut c = Network::init(&[dim, 2 * dim, 1], &[Activation::Relu, Activation::Linear], false, rng)?;
            c.clamp_params(clip);
            Ok(c)
        };
        let critic_v = critic(rng)?;
        let critic_i = critic(rng)?;
        Ok(TranslationPair { gen_vi, gen_iv, critic_v, critic_i, clip })
    }

    pub fn dim(&self) -> usize {
        self.gen_vi.input_dim()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Trainable {
    Generators,
    Critics,
}

struct Bound<'p, 't> {
    gen_vi: BoundNetwork<'p, 't>,
    gen_iv: BoundNetwork<'p, 't>,
    critic_v: BoundNetwork<'p, 't>,
    critic_i: BoundNetwork<'p, 't>,
}

impl<'p, 't> Bound<'p, 't> {
    fn new(pair: &'p TranslationPair, tape: &'t Tape, which: Trainable) -> Self {
        let g = |n: &'p Network| {
            if which == Trainable::Generators {
                n.bind(tape)
            } else {
                n.bind_frozen(tape)
            }
        };
        let c = |n: &'p Network| {
            if which == Trainable::Critics {
                n.bind(tape)
            } else {
                n.bind_frozen(tape)
            }
        };
        Bound {
            gen_vi: g(&pair.gen_vi),
            gen_iv: g(&pair.gen_iv),
            critic_v: c(&pair.critic_v),
            critic_i: c(&pair.critic_i),
        }
    }
}

fn translate_var<'t>(gen: &BoundNetwork<'_, 't>, z: Var<'t>) -> Result<Var<'t>> {
    gen.forward(z)?.normalize_rows()
}

fn check_batches(zv: &DenseTensor, zi: &DenseTensor) -> Result<()> {
    if zv.rows() == 0 || zi.rows() == 0 {
        return Err(Error::contract("translation losses need non-empty batches"));
    }
    Ok(())
}

fn cycle_var<'t>(b: &Bound<'_, 't>, zv: Var<'t>, zi: Var<'t>) -> Result<Var<'t>> {
    let rec_v = translate_var(&b.gen_iv, translate_var(&b.gen_vi, zv)?)?;
    let rec_i = translate_var(&b.gen_vi, translate_var(&b.gen_iv, zi)?)?;
    let term_v = zv.sub(rec_v)?.abs().row_sum().mean();
    let term_i = zi.sub(rec_i)?.abs().row_sum().mean();
    term_v.add(term_i)
}

/// `mean D_V(z_v) − mean D_V(G_IV z_i) + mean D_I(z_i) − mean D_I(G_VI z_v)`.
fn wasserstein_var<'t>(b: &Bound<'_, 't>, zv: Var<'t>, zi: Var<'t>) -> Result<Var<'t>> {
    let fake_i = translate_var(&b.gen_vi, zv)?;
    let fake_v = translate_var(&b.gen_iv, zi)?;
    let v = b.critic_v.forward(zv)?.mean().sub(b.critic_v.forward(fake_v)?.mean())?;
    let i = b.critic_i.forward(zi)?.mean().sub(b.critic_i.forward(fake_i)?.mean())?;
    v.add(i)
}

fn generator_var<'t>(b: &Bound<'_, 't>, zv: Var<'t>, zi: Var<'t>) -> Result<Var<'t>> {
    let fake_i = translate_var(&b.gen_vi, zv)?;
    let fake_v = translate_var(&b.gen_iv, zi)?;
    let adv = b
        .critic_i
        .forward(fake_i)?
        .mean()
        .add(b.critic_v.forward(fake_v)?.mean())?
        .neg();
    cycle_var(b, zv, zi)?.add(adv)
}

/// Mean L1 round-trip error in both directions.
pub fn cycle_loss(zv: &DenseTensor, zi: &DenseTensor, pair: &TranslationPair) -> Result<f64> {
    check_batches(zv, zi)?;
    let tape = Tape::new();
    let b = Bound::new(pair, &tape, Trainable::Generators);
    Ok(cycle_var(&b, tape.constant(zv.clone()), tape.constant(zi.clone()))?.item())
}

/// Negated Wasserstein estimate; critics minimize it.
pub fn critic_loss(zv: &DenseTensor, zi: &DenseTensor, pair: &TranslationPair) -> Result<f64> {
    Ok(critic_gradients(zv, zi, pair)?.0)
}

/// Cycle term minus critic scores on translated features.
pub fn generator_adv_loss(zv: &DenseTensor, zi: &DenseTensor, pair: &TranslationPair) -> Result<f64> {
    Ok(generator_gradients(zv, zi, pair)?.0)
}

/// Critic loss and gradients for `critic_v` then `critic_i` parameters.
pub fn critic_gradients(
    zv: &DenseTensor,
    zi: &DenseTensor,
    pair: &TranslationPair,
) -> Result<(f64, Vec<DenseTensor>)> {
    check_batches(zv, zi)?;
    let tape = Tape::new();
    let b = Bound::new(pair, &tape, Trainable::Critics);
    let loss = wasserstein_var(&b, tape.constant(zv.clone()), tape.constant(zi.clone()))?.neg();
    let g = tape.backward(loss)?;
    let mut grads = b.critic_v.gradients(&g);
    grads.extend(b.critic_i.gradients(&g));
    Ok((loss.item(), grads))
}

/// Generator loss and gradients for `gen_vi` then `gen_iv` parameters.
pub fn generator_gradients(
    zv: &DenseTensor,
    zi: &DenseTensor,
    pair: &TranslationPair,
) -> Result<(f64, Vec<DenseTensor>)> {
    check_batches(zv, zi)?;
    let tape = Tape::new();
    let b = Bound::new(pair, &tape, Trainable::Generators);
    let loss = generator_var(&b, tape.constant(zv.clone()), tape.constant(zi.clone()))?;
    let g = tape.backward(loss)?;
    let mut grads = b.gen_vi.gradients(&g);
    grads.extend(b.gen_iv.gradients(&g));
    Ok((loss.item(), grads))
}

pub struct GanOptimizers {
    pub critic: OptimizerState,
    pub generator: OptimizerState,
    pub n_critic: usize,
}

impl GanOptimizers {
    pub fn adam(lr: f64, n_critic: usize) -> Result<Self> {
        if n_critic == 0 {
            return Err(Error::config("n_critic must be >= 1"));
        }
        Ok(GanOptimizers {
            critic: OptimizerState::adam(lr)?,
            generator: OptimizerState::adam(lr)?,
            n_critic,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanDiagnostics {
    pub cycle: f64,
    pub wasserstein: f64,
}

fn step_pair(
    opt: &mut OptimizerState,
    a: &mut Network,
    a_name: &str,
    b: &mut Network,
    b_name: &str,
    grads: &[DenseTensor],
    epoch: usize,
) -> Result<()> {
    let mut names = a.param_names(a_name);
    names.extend(b.param_names(b_name));
    let mut params = a.params_mut();
    params.extend(b.params_mut());
    opt.step(&mut params, &names, grads, epoch)
}

/// `n_critic` clipped critic updates followed by one generator update on the
/// same detached batches.
/// One clipped critic update.
pub fn critic_step(
    pair: &mut TranslationPair,
    zv: &DenseTensor,
    zi: &DenseTensor,
    opts: &mut GanOptimizers,
    epoch: usize,
) -> Result<()> {
    let (_, grads) = critic_gradients(zv, zi, pair)?;
    step_pair(
        &mut opts.critic,
        &mut pair.critic_v,
        "critic_v",
        &mut pair.critic_i,
        "critic_i",
        &grads,
        epoch,
    )?;
    pair.critic_v.clamp_params(pair.clip);
    pair.critic_i.clamp_params(pair.clip);
    Ok(())
}

pub fn gan_step(
    pair: &mut TranslationPair,
    zv: &DenseTensor,
    zi: &DenseTensor,
    opts: &mut GanOptimizers,
    epoch: usize,
) -> Result<GanDiagnostics> {
    for _ in 0..opts.n_critic {
        critic_step(pair, zv, zi, opts, epoch)?;
    }
    let wasserstein = -critic_loss(zv, zi, pair)?;
    let (_, grads) = generator_gradients(zv, zi, pair)?;
    step_pair(
        &mut opts.generator,
        &mut pair.gen_vi,
        "gen_vi",
        &mut pair.gen_iv,
        "gen_iv",
        &grads,
        epoch,
    )?;
    let cycle = cycle_loss(zv, zi, pair)?;
    if !cycle.is_finite() || !wasserstein.is_finite() {
        return Err(Error::numeric(format!(
            "translation step produced cycle={cycle}, wasserstein={wasserstein}"
        )));
    }
    Ok(GanDiagnostics { cycle, wasserstein })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tensor::normalized;
    use crate::diffcore::Layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn negation(d: usize) -> Network {
        let mut n = Network::identity(d);
        n.layers_mut()[0].weight.data_mut().iter_mut().for_each(|w| *w = -*w);
        n
    }

    fn zero_critic(d: usize) -> Network {
        Network::new(
            vec![Layer {
                weight: DenseTensor::zeros(&[d, 1]),
                bias: DenseTensor::zeros(&[1]),
                activation: Activation::Linear,
            }],
            false,
        )
        .unwrap()
    }

    fn first_coord_critic(d: usize) -> Network {
        let mut w = vec![0.0; d];
        w[0] = 1.0;
        Network::new(
            vec![Layer {
                weight: DenseTensor::matrix(d, 1, w).unwrap(),
                bias: DenseTensor::zeros(&[1]),
                activation: Activation::Linear,
            }],
            false,
        )
        .unwrap()
    }

    fn identity_pair(d: usize) -> TranslationPair {
        TranslationPair {
            gen_vi: Network::identity(d),
            gen_iv: Network::identity(d),
            critic_v: zero_critic(d),
            critic_i: zero_critic(d),
            clip: 0.01,
        }
    }

    fn rows(v: &[&[f64]]) -> DenseTensor {
        let n: Vec<Vec<f64>> = v.iter().map(|r| normalized(r).unwrap()).collect();
        DenseTensor::from_rows(&n).unwrap()
    }

    #[test]
    fn identity_translation() {
        let z = normalized(&[0.3, -0.4, 0.5]).unwrap();
        let t = translate(&Network::identity(3), &z).unwrap();
        for (a, b) in t.iter().zip(&z) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_pair_has_zero_losses() {
        let p = identity_pair(3);
        let zv = rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]]);
        let zi = rows(&[&[0.2, 0.3, 0.1]]);
        assert!(cycle_loss(&zv, &zi, &p).unwrap() < 1e-15);
        assert_eq!(critic_loss(&zv, &zi, &p).unwrap(), 0.0);
        assert!(generator_adv_loss(&zv, &zi, &p).unwrap() < 1e-15);
    }

    #[test]
    fn negation_round_trip_costs_two() {
        let mut p = identity_pair(3);
        p.gen_iv = negation(3);
        let zv = rows(&[&[1.0, 0.0, 0.0]]);
        let zi = rows(&[&[0.0, 0.0, 1.0]]);
        assert!((cycle_loss(&zv, &zi, &p).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn first_coordinate_critics() {
        let mut p = identity_pair(2);
        p.gen_vi = negation(2);
        p.critic_v = first_coord_critic(2);
        p.critic_i = first_coord_critic(2);
        let zv = rows(&[&[1.0, 0.0], &[0.6, 0.8]]);
        let zi = rows(&[&[0.0, 1.0]]);
        // D_V(zv) = 0.8, D_V(G_IV zi) = 0, D_I(zi) = 0, D_I(-zv) = -0.8
        let expect = -(0.8 - 0.0 + 0.0 + 0.8);
        assert!((critic_loss(&zv, &zi, &p).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn clamp_after_critic_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = TranslationPair::new(4, 0.01, &mut rng).unwrap();
        let zv = rows(&[&[1.0, 0.2, 0.0, 0.0], &[0.5, 0.5, 0.5, 0.0]]);
        let zi = rows(&[&[0.0, 0.0, 1.0, 0.3]]);
        let mut opts = GanOptimizers::adam(0.05, 5).unwrap();
        gan_step(&mut p, &zv, &zi, &mut opts, 0).unwrap();
        for c in [&p.critic_v, &p.critic_i] {
            assert!(c.flat_params().iter().all(|w| w.abs() <= 0.01));
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = TranslationPair::new(4, 0.01, &mut rng).unwrap();
        let before = p.clone();
        let zv = rows(&[&[1.0, 0.2, 0.0, 0.0]]);
        let zi = rows(&[&[0.0, 0.0, 1.0, 0.3]]);
        let mut opts = GanOptimizers::adam(0.0, 5).unwrap();
        gan_step(&mut p, &zv, &zi, &mut opts, 0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn gradient_sides_are_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TranslationPair::new(3, 0.5, &mut rng).unwrap();
        let zv = rows(&[&[1.0, 0.2, 0.0]]);
        let zi = rows(&[&[0.0, 0.3, 1.0]]);
        let (_, cg) = critic_gradients(&zv, &zi, &p).unwrap();
        assert_eq!(cg.len(), p.critic_v.params().len() + p.critic_i.params().len());
        let (_, gg) = generator_gradients(&zv, &zi, &p).unwrap();
        assert_eq!(gg.len(), p.gen_vi.params().len() + p.gen_iv.params().len());
    }
}
