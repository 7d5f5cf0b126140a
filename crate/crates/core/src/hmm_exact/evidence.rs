//! Divergence between the two posteriors `P(S | X = x)` of a pair of HMMs.
//!
//! Backward quantities `B_i(s) = P(x_{i+1:N} | S_i = s)` give the posterior
//! chain `P(S_1 | E)`, `P(S_i | S_{i-1}, E)`; the divergence between two such
//! chains follows the same inward recursion as the unconditioned tree, run
//! from the end of the sequence with `K_N ≡ 0`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::divergence::{kl_unchecked, weighted_sum};
use crate::error::{KldError, Result, Side};
use crate::model::{EmissionSpec, Evidence, HmmModel};

use super::check_pair;

/// Backward quantities with per-position max scaling: `B_i(s) = b_i(s) · exp(c_i)`
/// where `max_s b_i(s) = 1`. Positions are 0-based.
#[derive(Debug, Clone)]
pub struct BackwardTable {
    states: usize,
    scaled: Vec<f64>,
    log_scale: Vec<f64>,
    log_likelihood: f64,
}

impl BackwardTable {
    pub fn len(&self) -> usize {
        self.log_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scale.is_empty()
    }

    /// `b_i(·)`, the scaled row at 0-based position `i`.
    pub fn scaled(&self, i: usize) -> &[f64] {
        &self.scaled[i * self.states..(i + 1) * self.states]
    }

    /// `c_i`, the log scale at 0-based position `i`.
    pub fn log_scale(&self, i: usize) -> f64 {
        self.log_scale[i]
    }

    /// `log B_i(s)`.
    pub fn log_backward(&self, i: usize, s: usize) -> f64 {
        self.scaled(i)[s].ln() + self.log_scale[i]
    }

    /// `log P(X = x)`.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
}

fn discrete_emission(m: &HmmModel) -> Result<&DMatrix<f64>> {
    match m.emission() {
        EmissionSpec::Discrete(e) => Ok(e),
        EmissionSpec::Gaussian { .. } => Err(KldError::Unsupported("evidence requires discrete emissions".into())),
    }
}

/// Backward recursion `B_{i-1}(r) = Σ_s π(r, s) e(s, x_i) B_i(s)` from `B_N ≡ 1`.
pub fn backward_quantities(m: &HmmModel, ev: &Evidence) -> Result<BackwardTable> {
    ev.check_against(m)?;
    let e = discrete_emission(m)?;
    let pi = m.transition();
    let d = m.states();
    let n = ev.len();
    let x = ev.symbols();
    let mut scaled = vec![0.0; n * d];
    let mut log_scale = vec![0.0; n];
    scaled[(n - 1) * d..].fill(1.0);

    let mut raw = vec![0.0; d];
    for i in (1..n).rev() {
        let next = &scaled[i * d..(i + 1) * d];
        for (r, out) in raw.iter_mut().enumerate() {
            *out = (0..d).map(|s| pi[(r, s)] * e[(s, x[i])] * next[s]).sum();
        }
        let max = raw.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(KldError::ZeroLikelihood { side: None, position: i + 1 });
        }
        for r in 0..d {
            scaled[(i - 1) * d + r] = raw[r] / max;
        }
        log_scale[i - 1] = log_scale[i] + max.ln();
    }

    let first: f64 = (0..d).map(|s| m.initial()[s] * e[(s, x[0])] * scaled[s]).sum();
    if first <= 0.0 {
        return Err(KldError::ZeroLikelihood { side: None, position: 1 });
    }
    let log_likelihood = log_scale[0] + first.ln();
    Ok(BackwardTable { states: d, scaled, log_scale, log_likelihood })
}

/// The posterior law of the hidden chain as an inhomogeneous Markov chain.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// `P(S_1 = s | E)`.
    pub first: Vec<f64>,
    /// `steps[i - 1](r, s) = P(S_{i+1} = s | S_i = r, E)` for 1-based `i`.
    /// Rows for states that cannot explain the remaining evidence are zero.
    pub steps: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `log P(S = path | E)`; `-∞` for paths outside the posterior support.
    pub fn log_prob(&self, path: &[usize]) -> f64 {
        assert_eq!(path.len(), self.len(), "path length must match the evidence");
        let mut lp = self.first[path[0]].ln();
        for (step, w) in self.steps.iter().zip(path.windows(2)) {
            lp += step[(w[0], w[1])].ln();
        }
        lp
    }

    /// Draws `S_1` from `P(S_1 | E)`, then each `S_i` given `S_{i-1}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.len());
        let mut cur = sample_categorical(self.first.iter().copied(), rng);
        path.push(cur);
        for step in &self.steps {
            cur = sample_categorical(step.row(cur).iter().copied(), rng);
            path.push(cur);
        }
        path
    }
}

/// Inverse-CDF draw from nonnegative weights summing to one.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// `P(S_1 | E)` and `P(S_i = s | S_{i-1} = r, E) = π(r,s) e(s,x_i) B_i(s) / B_{i-1}(r)`.
pub fn posterior_conditionals(m: &HmmModel, ev: &Evidence) -> Result<Posterior> {
    let table = backward_quantities(m, ev)?;
    let e = discrete_emission(m)?;
    let pi = m.transition();
    let d = m.states();
    let x = ev.symbols();

    let mut first: Vec<f64> = (0..d).map(|s| m.initial()[s] * e[(s, x[0])] * table.scaled(0)[s]).collect();
    let z: f64 = first.iter().sum();
    first.iter_mut().for_each(|p| *p /= z);

    let steps = (1..ev.len())
        .map(|i| {
            let next = table.scaled(i);
            let mut step = DMatrix::from_fn(d, d, |r, s| pi[(r, s)] * e[(s, x[i])] * next[s]);
            for r in 0..d {
                // row sum is B_{i-1}(r) in the scaling of position i
                let total: f64 = step.row(r).iter().sum();
                if total > 0.0 {
                    step.row_mut(r).iter_mut().for_each(|p| *p /= total);
                }
            }
            step
        })
        .collect();
    Ok(Posterior { first, steps, log_likelihood: table.log_likelihood() })
}

pub(crate) fn tag_side(side: Side) -> impl Fn(KldError) -> KldError {
    move |e| match e {
        KldError::ZeroLikelihood { position, .. } => KldError::ZeroLikelihood { side: Some(side), position },
        other => other,
    }
}

/// `D(P1(S | E) ‖ P0(S | E))` from two posterior chains.
pub fn kld_posterior_chains(p1: &Posterior, p0: &Posterior) -> f64 {
    let d = p1.first.len();
    let mut k = vec![0.0; d];
    let mut next = vec![0.0; d];
    for (s1, s0) in p1.steps.iter().zip(&p0.steps).rev() {
        for (r, out) in next.iter_mut().enumerate() {
            let row1 = s1.row(r);
            *out = kl_unchecked(row1.iter(), s0.row(r).iter()) + weighted_sum(row1.iter(), k.iter());
        }
        std::mem::swap(&mut k, &mut next);
    }
    kl_unchecked(&p1.first, &p0.first) + weighted_sum(&p1.first, &k)
}

/// Exact `D(P_{θ1}(S | X = x) ‖ P_{θ0}(S | X = x))`.
pub fn kld_hmm_evidence(m1: &HmmModel, m0: &HmmModel, ev: &Evidence) -> Result<f64> {
    check_pair(m1, m0)?;
    let p1 = posterior_conditionals(m1, ev).map_err(tag_side(Side::First))?;
    let p0 = posterior_conditionals(m0, ev).map_err(tag_side(Side::Second))?;
    Ok(kld_posterior_chains(&p1, &p0))
}
