//! Finite-difference checks for every training loss. Each check returns the
//! worst relative error over its random instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use uvireid::bit::{critic_gradients, cycle_loss, generator_gradients, TranslationPair};
use uvireid::diffcore::tensor::normalize_rows;
use uvireid::diffcore::{finite_diff_check, Activation, DenseTensor, Network, Tape, Var};
use uvireid::mla::{cma_direction, lfc_modality, LfcMode};
use uvireid::plc::{cluster_nce_batch, plc_batch};

use super::rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn unit_rows(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
    normalize_rows(&DenseTensor::matrix(r, c, random_matrix(r, c, rng)).unwrap()).unwrap().0
}

fn flat(ts: &[DenseTensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// A small contrastive instance: raw features, two banks, labels, temperature.
pub struct Instance {
    pub b: usize,
    pub k: usize,
    pub d: usize,
    pub z: Vec<f64>,
    pub bank: DenseTensor,
    pub other: DenseTensor,
    pub pos: Vec<usize>,
    pub nearest: Vec<usize>,
    pub w: Vec<f64>,
    pub tau: f64,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let b = r.random_range(2..=4);
    let k = r.random_range(2..=5);
    let d = r.random_range(2..=8);
    Instance {
        b,
        k,
        d,
        z: random_matrix(b, d, &mut r),
        bank: unit_rows(k, d, &mut r),
        other: unit_rows(k, d, &mut r),
        pos: (0..b).map(|_| r.random_range(0..k)).collect(),
        nearest: (0..b).map(|_| r.random_range(0..k)).collect(),
        w: (0..b).map(|_| r.random_range(0.0..=1.0)).collect(),
        tau: r.random_range(0.1..1.0),
    }
}

/// Check a loss of normalized features and two banks with respect to the
/// raw features, the first bank and the second bank in turn.
fn check_all<F>(loss: F) -> f64
where
    F: for<'t> Fn(&Instance, Var<'t>, Var<'t>, Var<'t>) -> Var<'t>,
{
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        for target in 0..3 {
            let x0: Vec<f64> = match target {
                0 => inst.z.clone(),
                1 => inst.bank.data().to_vec(),
                _ => inst.other.data().to_vec(),
            };
            let eval = |x: &[f64]| {
                let tape = Tape::new();
                let mk = |t: usize, base: &[f64], rows: usize| {
                    let data = if t == target { x.to_vec() } else { base.to_vec() };
                    let m = DenseTensor::matrix(rows, inst.d, data).unwrap();
                    if t == target {
                        tape.param(m)
                    } else {
                        tape.constant(m)
                    }
                };
                let z = mk(0, &inst.z, inst.b);
                let bank = mk(1, inst.bank.data(), inst.k);
                let other = mk(2, inst.other.data(), inst.k);
                let l = loss(&inst, z.normalize_rows().unwrap(), bank, other);
                let g = tape.backward(l).unwrap();
                (l.item(), g.wrt([z, bank, other][target]).into_data())
            };
            worst = worst.max(finite_diff_check(eval, &x0, H));
        }
    }
    worst
}

pub fn cluster_nce() -> f64 {
    check_all(|i, z, bank, _| cluster_nce_batch(z, bank, &i.pos, i.tau).unwrap())
}

pub fn plc() -> f64 {
    check_all(|i, z, bank, _| plc_batch(z, bank, &i.pos, &i.nearest, &i.w, i.tau).unwrap())
}

pub fn cma() -> f64 {
    check_all(|i, z, _, other| cma_direction(z, other, &i.pos, i.tau).unwrap())
}

pub fn lfc(mode: LfcMode) -> f64 {
    check_all(|i, z, real, pseudo| lfc_modality(z, real, pseudo, i.tau, mode).unwrap())
}

/// LFC with the pseudo bank produced in-graph by a translator, checked
/// against the translator's parameters.
pub fn lfc_through_translator() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut r = rng(1000 + seed);
        let gen = Network::init(&[inst.d, 2 * inst.d, inst.d], &[Activation::Relu, Activation::Tanh], true, &mut r)
            .unwrap();
        let src = DenseTensor::matrix(inst.k, inst.d, random_matrix(inst.k, inst.d, &mut r)).unwrap();
        let eval = |p: &[f64]| {
            let mut g = gen.clone();
            g.set_flat_params(p).unwrap();
            let tape = Tape::new();
            let bound = g.bind(&tape);
            let pseudo = bound.forward(tape.constant(src.clone())).unwrap().normalize_rows().unwrap();
            let z = tape
                .constant(DenseTensor::matrix(inst.b, inst.d, inst.z.clone()).unwrap())
                .normalize_rows()
                .unwrap();
            let l = lfc_modality(z, tape.constant(inst.bank.clone()), pseudo, inst.tau, LfcMode::BatchSoftmax)
                .unwrap();
            let grads = tape.backward(l).unwrap();
            (l.item(), flat(&bound.gradients(&grads)))
        };
        worst = worst.max(finite_diff_check(eval, &gen.flat_params(), H));
    }
    worst
}

fn pair_instance(seed: u64) -> (TranslationPair, DenseTensor, DenseTensor) {
    let mut r = rng(2000 + seed);
    let d = r.random_range(2..=6);
    let mut pair = TranslationPair::new(d, 0.5, &mut r).unwrap();
    // undamped weights exercise the nonlinearities more
    for n in [&mut pair.gen_vi, &mut pair.gen_iv, &mut pair.critic_v, &mut pair.critic_i] {
        let p: Vec<f64> = n.flat_params().iter().map(|_| r.random_range(-0.5..0.5)).collect();
        n.set_flat_params(&p).unwrap();
    }
    let b = r.random_range(2..=4);
    (pair, unit_rows(b, d, &mut r), unit_rows(b, d, &mut r))
}

fn gen_params(p: &TranslationPair) -> Vec<f64> {
    let mut v = p.gen_vi.flat_params();
    v.extend(p.gen_iv.flat_params());
    v
}

fn set_gen_params(p: &mut TranslationPair, x: &[f64]) {
    let n = p.gen_vi.num_params();
    p.gen_vi.set_flat_params(&x[..n]).unwrap();
    p.gen_iv.set_flat_params(&x[n..]).unwrap();
}

/// Cycle loss wrt generator weights. Zeroed critics leave only the cycle
/// term in the generator objective; its value must equal the cycle loss.
pub fn cycle() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let (mut pair, zv, zi) = pair_instance(seed);
        for c in [&mut pair.critic_v, &mut pair.critic_i] {
            let zeros = vec![0.0; c.num_params()];
            c.set_flat_params(&zeros).unwrap();
        }
        let eval = |x: &[f64]| {
            let mut p = pair.clone();
            set_gen_params(&mut p, x);
            let (l, g) = generator_gradients(&zv, &zi, &p).unwrap();
            assert!((l - cycle_loss(&zv, &zi, &p).unwrap()).abs() < 1e-12);
            (l, flat(&g))
        };
        worst = worst.max(finite_diff_check(eval, &gen_params(&pair), H));
    }
    worst
}

pub fn generator_adversarial() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let (pair, zv, zi) = pair_instance(seed);
        let eval = |x: &[f64]| {
            let mut p = pair.clone();
            set_gen_params(&mut p, x);
            let (l, g) = generator_gradients(&zv, &zi, &p).unwrap();
            (l, flat(&g))
        };
        worst = worst.max(finite_diff_check(eval, &gen_params(&pair), H));
    }
    worst
}

pub fn critic() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let (pair, zv, zi) = pair_instance(seed);
        let mut x0 = pair.critic_v.flat_params();
        x0.extend(pair.critic_i.flat_params());
        let n = pair.critic_v.num_params();
        let eval = |x: &[f64]| {
            let mut p = pair.clone();
            p.critic_v.set_flat_params(&x[..n]).unwrap();
            p.critic_i.set_flat_params(&x[n..]).unwrap();
            let (l, g) = critic_gradients(&zv, &zi, &p).unwrap();
            (l, flat(&g))
        };
        worst = worst.max(finite_diff_check(eval, &x0, H));
    }
    worst
}

/// Every check, by loss name.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("cluster_nce", cluster_nce()),
        ("plc", plc()),
        ("cycle", cycle()),
        ("critic", critic()),
        ("generator_adversarial", generator_adversarial()),
        ("cma", cma()),
        ("lfc", lfc(LfcMode::BatchSoftmax)),
        ("lfc_mean", lfc(LfcMode::Mean)),
        ("lfc_via_translator", lfc_through_translator()),
    ]
}
