//! Two-component Beta mixture over normalized per-sample losses.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LOSS_EPS: f64 = 1e-4;

/// Min-max normalize into `[ε, 1 − ε]`. A constant vector maps to 0.5.
pub fn normalize_losses(losses: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = loss_bounds(losses)?;
    Ok(losses.iter().map(|&l| normalize_with(l, lo, hi)).collect())
}

fn loss_bounds(losses: &[f64]) -> Result<(f64, f64)> {
    if losses.len() < 2 {
        return Err(Error::contract("loss normalization needs at least 2 samples"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::numeric("non-finite per-sample loss"));
    }
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

fn normalize_with(l: f64, lo: f64, hi: f64) -> f64 {
    if hi - lo <= 0.0 {
        return 0.5;
    }
    ((l - lo) / (hi - lo)).clamp(LOSS_EPS, 1.0 - LOSS_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaComponent {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaComponent {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
    }
}

/// Component 0 is the clean (low-loss) one.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMixture {
    pub components: [BetaComponent; 2],
    pub weights: [f64; 2],
    /// Raw-loss range used for normalization, when fitted from raw losses.
    pub bounds: (f64, f64),
    pub eps: f64,
}

/// Per-iteration log-likelihood, starting with the initial parameters.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub log_likelihood: Vec<f64>,
}

const PARAM_MIN: f64 = 1e-2;
const PARAM_MAX: f64 = 1e3;

impl BetaMixture {
    pub fn initial() -> Self {
        BetaMixture {
            components: [
                BetaComponent { alpha: 2.0, beta: 5.0 },
                BetaComponent { alpha: 5.0, beta: 2.0 },
            ],
            weights: [0.5, 0.5],
            bounds: (0.0, 1.0),
            eps: LOSS_EPS,
        }
    }

    fn ln_joint(&self, x: f64) -> [f64; 2] {
        [
            self.weights[0].ln() + self.components[0].ln_pdf(x),
            self.weights[1].ln() + self.components[1].ln_pdf(x),
        ]
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| log_add(self.ln_joint(x))).sum()
    }

    /// Posterior probability of the noisy component at normalized loss `l`.
    pub fn noise_posterior(&self, l: f64) -> f64 {
        let l = l.clamp(self.eps, 1.0 - self.eps);
        let j = self.ln_joint(l);
        (j[1] - log_add(j)).exp().clamp(0.0, 1.0)
    }

    /// Posterior for a raw loss, normalized with the fitted bounds.
    pub fn noise_posterior_raw(&self, loss: f64) -> f64 {
        self.noise_posterior(normalize_with(loss, self.bounds.0, self.bounds.1))
    }

    fn responsibilities(&self, xs: &[f64]) -> Vec<[f64; 2]> {
        xs.iter()
            .map(|&x| {
                let j = self.ln_joint(x);
                let z = log_add(j);
                [(j[0] - z).exp(), (j[1] - z).exp()]
            })
            .collect()
    }
}

fn log_add(v: [f64; 2]) -> f64 {
    let m = v[0].max(v[1]);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((v[0] - m).exp() + (v[1] - m).exp()).ln()
}

/// Expected complete-data log-likelihood of one component's shape parameters.
fn q_shape(c: BetaComponent, xs: &[f64], r: &[[f64; 2]], k: usize) -> f64 {
    xs.iter().zip(r).map(|(&x, ri)| ri[k] * c.ln_pdf(x)).sum()
}

/// Weighted method-of-moments estimate, or `None` when the moments admit none.
fn moments(xs: &[f64], r: &[[f64; 2]], k: usize) -> Option<BetaComponent> {
    let w: f64 = r.iter().map(|ri| ri[k]).sum();
    if w <= 1e-12 {
        return None;
    }
    let mean = xs.iter().zip(r).map(|(&x, ri)| ri[k] * x).sum::<f64>() / w;
    let var = xs.iter().zip(r).map(|(&x, ri)| ri[k] * (x - mean).powi(2)).sum::<f64>() / w;
    if var <= 1e-12 || var >= mean * (1.0 - mean) {
        return None;
    }
    let common = mean * (1.0 - mean) / var - 1.0;
    Some(BetaComponent {
        alpha: (mean * common).clamp(PARAM_MIN, PARAM_MAX),
        beta: ((1.0 - mean) * common).clamp(PARAM_MIN, PARAM_MAX),
    })
}

/// Shape update that never lowers the component's expected log-likelihood:
/// the moment estimate, or the closest point toward it that does not lose ground.
fn shape_step(old: BetaComponent, xs: &[f64], r: &[[f64; 2]], k: usize) -> BetaComponent {
    let Some(target) = moments(xs, r, k) else {
        return old;
    };
    let base = q_shape(old, xs, r, k);
    let mut t = 1.0;
    for _ in 0..20 {
        let cand = BetaComponent {
            alpha: old.alpha + t * (target.alpha - old.alpha),
            beta: old.beta + t * (target.beta - old.beta),
        };
        if q_shape(cand, xs, r, k) >= base {
            return cand;
        }
        t *= 0.5;
    }
    old
}

/// EM fit on values in (0, 1). Needs at least four samples.
pub fn fit_bmm(xs: &[f64], iters: usize) -> Result<(BetaMixture, FitTrace)> {
    if xs.len() < 4 {
        return Err(Error::contract(format!("beta mixture needs >= 4 samples, got {}", xs.len())));
    }
    if iters == 0 {
        return Err(Error::config("bmm iterations must be >= 1"));
    }
    if let Some(x) = xs.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::contract(format!("beta mixture input {x} outside (0, 1)")));
    }
    let mut m = BetaMixture::initial();
    let mut trace = vec![m.log_likelihood(xs)];
    let n = xs.len() as f64;
    for _ in 0..iters {
        let r = m.responsibilities(xs);
        for k in 0..2 {
            let pi = r.iter().map(|ri| ri[k]).sum::<f64>() / n;
            m.weights[k] = pi.clamp(1e-12, 1.0 - 1e-12);
        }
        let s = m.weights[0] + m.weights[1];
        m.weights = [m.weights[0] / s, m.weights[1] / s];
        for k in 0..2 {
            m.components[k] = shape_step(m.components[k], xs, &r, k);
        }
        trace.push(m.log_likelihood(xs));
    }
    if m.components[0].mean() > m.components[1].mean() {
        m.components.swap(0, 1);
        m.weights.swap(0, 1);
    }
    Ok((m, FitTrace { log_likelihood: trace }))
}

/// Normalize raw losses, fit, and record the bounds in the mixture.
pub fn fit_bmm_raw(losses: &[f64], iters: usize) -> Result<(BetaMixture, Vec<f64>)> {
    let (lo, hi) = loss_bounds(losses)?;
    let norm: Vec<f64> = losses.iter().map(|&l| normalize_with(l, lo, hi)).collect();
    let (mut m, _) = fit_bmm(&norm, iters)?;
    m.bounds = (lo, hi);
    Ok((m, norm))
}
