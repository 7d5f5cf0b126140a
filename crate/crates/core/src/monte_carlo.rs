//! Monte Carlo estimates of both divergences, with normal-approximation
//! 95% confidence intervals.
//!
//! Trial `t` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `t`, so
//! each trial's randomness depends only on `(seed, t)`. Trials run in
//! parallel, and per-trial values are summed in trial order, which makes
//! estimates bitwise identical across thread counts.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{KldError, Result, Side};
use crate::hmm_exact::evidence::sample_categorical;
use crate::hmm_exact::evidence::tag_side;
use crate::hmm_exact::{check_pair, posterior_conditionals, Posterior};
use crate::hmt_exact::check_compatible;
use crate::model::{EmissionSpec, Evidence, HmmModel, HmtModel, TreeLayout};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Emitted values, one per node in breadth-first order.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Symbols(Vec<usize>),
    Values(Vec<f64>),
}

/// One draw of `(X, S)`; index `v` is the `v`-th node in breadth-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub states: Vec<usize>,
    pub observations: Observations,
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated standard deviation")
}

fn emit<R: Rng + ?Sized>(e: &EmissionSpec, s: usize, rng: &mut R) -> EmittedValue {
    match e {
        EmissionSpec::Discrete(m) => EmittedValue::Symbol(sample_categorical(m.row(s).iter().copied(), rng)),
        EmissionSpec::Gaussian { means, sds } => EmittedValue::Value(normal(means[s], sds[s]).sample(rng)),
    }
}

enum EmittedValue {
    Symbol(usize),
    Value(f64),
}

/// Ancestral sampling over a materialized layout.
pub fn sample_joint_on<R: Rng + ?Sized>(m: &HmtModel, layout: &TreeLayout, rng: &mut R) -> JointSample {
    let n = layout.len();
    let mut states = Vec::with_capacity(n);
    let mut symbols = Vec::new();
    let mut values = Vec::new();
    for v in 0..n {
        let s = match layout.parent(v) {
            None => sample_categorical(m.initial().iter().copied(), rng),
            Some(p) => sample_categorical(m.transition(v).row(states[p]).iter().copied(), rng),
        };
        states.push(s);
        match emit(m.emission(v), s, rng) {
            EmittedValue::Symbol(x) => symbols.push(x),
            EmittedValue::Value(x) => values.push(x),
        }
    }
    let observations = if values.is_empty() { Observations::Symbols(symbols) } else { Observations::Values(values) };
    JointSample { states, observations }
}

/// One draw of `(X, S)` from `m`, root first.
pub fn sample_joint<R: Rng + ?Sized>(m: &HmtModel, rng: &mut R) -> Result<JointSample> {
    let layout = m.topology().layout()?;
    Ok(sample_joint_on(m, &layout, rng))
}

fn gaussian_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `log P(X = x, S = s)`, with density terms for Gaussian emissions.
/// Zero-probability factors give `-∞`.
pub fn loglik_joint_on(m: &HmtModel, layout: &TreeLayout, sample: &JointSample) -> Result<f64> {
    let n = layout.len();
    let mismatch = || KldError::InvalidArgument(format!("assignment does not cover the {n} nodes"));
    if sample.states.len() != n {
        return Err(mismatch());
    }
    let mut lp = 0.0;
    for v in 0..n {
        let s = sample.states[v];
        if s >= m.states() {
            return Err(KldError::InvalidArgument(format!("state {} out of range at node {v}", s + 1)));
        }
        lp += match layout.parent(v) {
            None => m.initial()[s].ln(),
            Some(p) => m.transition(v)[(sample.states[p], s)].ln(),
        };
        lp += match (m.emission(v), &sample.observations) {
            (EmissionSpec::Discrete(e), Observations::Symbols(x)) => {
                let x = *x.get(v).ok_or_else(mismatch)?;
                if x >= e.ncols() {
                    return Err(KldError::InvalidArgument(format!("symbol {} out of range at node {v}", x + 1)));
                }
                e[(s, x)].ln()
            }
            (EmissionSpec::Gaussian { means, sds }, Observations::Values(x)) => {
                gaussian_log_pdf(*x.get(v).ok_or_else(mismatch)?, means[s], sds[s])
            }
            _ => return Err(KldError::KindMismatch("observation kind does not match the emission law".into())),
        };
    }
    Ok(lp)
}

/// [`loglik_joint_on`] for the model's own layout.
pub fn loglik_joint(m: &HmtModel, sample: &JointSample) -> Result<f64> {
    let layout = m.topology().layout()?;
    loglik_joint_on(m, &layout, sample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation, `n - 1` denominator.
    pub sd: f64,
    pub trials: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
    /// Draws whose log-ratio was `+∞` (zero probability under the second model).
    pub infinite_draws: usize,
}

impl McEstimate {
    /// Summarizes per-trial log-ratios.
    pub fn from_samples(values: &[f64], seed: u64) -> McEstimate {
        let trials = values.len();
        let infinite_draws = values.iter().filter(|v| **v == f64::INFINITY).count();
        if infinite_draws > 0 {
            return McEstimate {
                mean: f64::INFINITY,
                sd: f64::INFINITY,
                trials,
                ci_lo: f64::INFINITY,
                ci_hi: f64::INFINITY,
                seed,
                infinite_draws,
            };
        }
        let n = trials as f64;
        let mean = neumaier_sum(values.iter().copied()) / n;
        let var = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
        let sd = var.sqrt();
        let half = Z_95 * sd / n.sqrt();
        McEstimate { mean, sd, trials, ci_lo: mean - half, ci_hi: mean + half, seed, infinite_draws }
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_hi - self.ci_lo) / 2.0
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }
}

/// Compensated summation in iteration order.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// The generator for one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 2 {
        return Err(KldError::InvalidArgument(format!("need at least 2 trials, got {trials}")));
    }
    Ok(())
}

fn run_trials(trials: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> Result<f64> + Sync) -> Result<McEstimate> {
    check_trials(trials)?;
    let values: Vec<f64> =
        (0..trials).into_par_iter().map(|t| f(&mut trial_rng(seed, t as u64))).collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&values, seed))
}

/// Mean of `log P1(X, S) - log P0(X, S)` over draws from `m1`.
pub fn mc_kld_no_evidence(m1: &HmtModel, m0: &HmtModel, trials: usize, seed: u64) -> Result<McEstimate> {
    check_compatible(m1, m0)?;
    let layout = m1.topology().layout()?;
    run_trials(trials, seed, |rng| {
        let sample = sample_joint_on(m1, &layout, rng);
        let l1 = loglik_joint_on(m1, &layout, &sample)?;
        let l0 = loglik_joint_on(m0, &layout, &sample)?;
        Ok(if l0 == f64::NEG_INFINITY { f64::INFINITY } else { l1 - l0 })
    })
}

/// One exact draw from `P(S | X = x)`.
pub fn sample_posterior<R: Rng + ?Sized>(m: &HmmModel, ev: &Evidence, rng: &mut R) -> Result<Vec<usize>> {
    Ok(posterior_conditionals(m, ev)?.sample(rng))
}

/// Mean of `log P1(S | E) - log P0(S | E)` over posterior draws from `m1`.
pub fn mc_kld_evidence(m1: &HmmModel, m0: &HmmModel, ev: &Evidence, trials: usize, seed: u64) -> Result<McEstimate> {
    check_pair(m1, m0)?;
    let p1: Posterior = posterior_conditionals(m1, ev).map_err(tag_side(Side::First))?;
    let p0: Posterior = posterior_conditionals(m0, ev).map_err(tag_side(Side::Second))?;
    run_trials(trials, seed, |rng| {
        let path = p1.sample(rng);
        let l0 = p0.log_prob(&path);
        Ok(if l0 == f64::NEG_INFINITY { f64::INFINITY } else { p1.log_prob(&path) - l0 })
    })
}
