//! Brute-force enumeration, used as ground truth on small instances.

use crate::error::{KldError, Result, Side};
use crate::hmm_exact::check_pair;
use crate::hmt_exact::check_compatible;
use crate::model::{EmissionSpec, Evidence, HmmModel, HmtModel};
use crate::monte_carlo::{loglik_joint_on, JointSample, Observations};

/// Environment variable that overrides [`EnumerationBudget::default`].
pub const BUDGET_ENV: &str = "KLD_ENUM_BUDGET";

/// Upper bound on the number of outcomes an oracle may enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_outcomes: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_outcomes: 10_000_000 }
    }
}

impl EnumerationBudget {
    pub fn new(max_outcomes: u64) -> Self {
        EnumerationBudget { max_outcomes }
    }

    /// The default, or the value of `KLD_ENUM_BUDGET` when it is set.
    pub fn from_env() -> Result<Self> {
        match std::env::var(BUDGET_ENV) {
            Err(_) => Ok(Self::default()),
            Ok(v) => v
                .trim()
                .parse()
                .map(Self::new)
                .map_err(|_| KldError::InvalidArgument(format!("{BUDGET_ENV}={v:?} is not a nonnegative integer"))),
        }
    }

    fn admit(&self, base: usize, exponent: usize) -> Result<u64> {
        let outcomes = u32::try_from(exponent).ok().and_then(|e| (base as u128).checked_pow(e)).unwrap_or(u128::MAX);
        if outcomes > self.max_outcomes as u128 {
            return Err(KldError::BudgetExceeded { outcomes, budget: self.max_outcomes });
        }
        Ok(outcomes as u64)
    }
}

/// An enumerated divergence with the total mass of the reference law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleKld {
    pub kld: f64,
    /// Should be 1 up to rounding.
    pub mass: f64,
}

/// `p log(p / q)` from log-probabilities.
fn log_term(l1: f64, l0: f64) -> f64 {
    if l1 == f64::NEG_INFINITY {
        0.0
    } else if l0 == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        l1.exp() * (l1 - l0)
    }
}

#[derive(Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        if self.sum.is_infinite() {
            self.sum
        } else {
            self.sum + self.comp
        }
    }
}

/// Advances a mixed-radix counter; false once it wraps around.
fn advance(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

fn discrete_alphabet(e: &EmissionSpec) -> Result<usize> {
    e.alphabet().ok_or_else(|| KldError::Unsupported("enumeration needs discrete emissions".into()))
}

/// `Σ_{x,s} P1(x, s) log(P1(x, s) / P0(x, s))` over every joint outcome.
pub fn brute_force_kld_joint(m1: &HmtModel, m0: &HmtModel, budget: EnumerationBudget) -> Result<OracleKld> {
    check_compatible(m1, m0)?;
    let m = discrete_alphabet(m1.emission(0))?;
    discrete_alphabet(m0.emission(0))?;
    let layout = m1.topology().layout()?;
    let n = layout.len();
    let d = m1.states();
    budget.admit(d * m, n)?;

    let mut sample = JointSample { states: vec![0; n], observations: Observations::Symbols(vec![0; n]) };
    let mut digits = vec![0usize; n];
    let (mut kld, mut mass) = (Compensated::default(), Compensated::default());
    loop {
        let Observations::Symbols(symbols) = &mut sample.observations else { unreachable!() };
        for (v, &c) in digits.iter().enumerate() {
            sample.states[v] = c / m;
            symbols[v] = c % m;
        }
        let l1 = loglik_joint_on(m1, &layout, &sample)?;
        let l0 = loglik_joint_on(m0, &layout, &sample)?;
        kld.add(log_term(l1, l0));
        mass.add(l1.exp());
        if !advance(&mut digits, d * m) {
            break;
        }
    }
    Ok(OracleKld { kld: kld.total(), mass: mass.total() })
}

/// `log P(S = s, X = x)` for one hidden path.
fn log_path_joint(m: &HmmModel, e: &nalgebra::DMatrix<f64>, x: &[usize], s: &[usize]) -> f64 {
    let mut lp = m.initial()[s[0]].ln() + e[(s[0], x[0])].ln();
    for i in 1..s.len() {
        lp += m.transition()[(s[i - 1], s[i])].ln() + e[(s[i], x[i])].ln();
    }
    lp
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut acc = Compensated::default();
    for v in values {
        acc.add((v - max).exp());
    }
    max + acc.total().ln()
}

/// First 1-based position after which no hidden path explains `x_1..x_i`.
fn first_unexplained(m: &HmmModel, e: &nalgebra::DMatrix<f64>, x: &[usize]) -> usize {
    let d = m.states();
    let mut live: Vec<bool> = (0..d).map(|s| m.initial()[s] > 0.0 && e[(s, x[0])] > 0.0).collect();
    for (i, &xi) in x.iter().enumerate() {
        if i > 0 {
            live =
                (0..d).map(|s| e[(s, xi)] > 0.0 && (0..d).any(|r| live[r] && m.transition()[(r, s)] > 0.0)).collect();
        }
        if !live.iter().any(|&l| l) {
            return i + 1;
        }
    }
    x.len()
}

/// Log joint probability of every hidden path in lexicographic order, with
/// the log-likelihood of the evidence.
fn enumerate_paths(
    m: &HmmModel,
    ev: &Evidence,
    budget: EnumerationBudget,
    side: Option<Side>,
) -> Result<(Vec<f64>, f64)> {
    ev.check_against(m)?;
    let EmissionSpec::Discrete(e) = m.emission() else {
        return Err(KldError::Unsupported("evidence needs discrete emissions".into()));
    };
    let n = ev.len();
    let d = m.states();
    budget.admit(d, n)?;
    let x = ev.symbols();
    let mut s = vec![0usize; n];
    let mut logs = Vec::new();
    loop {
        logs.push(log_path_joint(m, e, x, &s));
        if !advance(&mut s, d) {
            break;
        }
    }
    let log_z = log_sum_exp(&logs);
    if log_z == f64::NEG_INFINITY {
        return Err(KldError::ZeroLikelihood { side, position: first_unexplained(m, e, x) });
    }
    Ok((logs, log_z))
}

/// `Σ_s P1(s | x) log(P1(s | x) / P0(s | x))` over every hidden path.
pub fn brute_force_kld_posterior(
    m1: &HmmModel,
    m0: &HmmModel,
    ev: &Evidence,
    budget: EnumerationBudget,
) -> Result<OracleKld> {
    check_pair(m1, m0)?;
    let (l1, z1) = enumerate_paths(m1, ev, budget, Some(Side::First))?;
    let (l0, z0) = enumerate_paths(m0, ev, budget, Some(Side::Second))?;
    let (mut kld, mut mass) = (Compensated::default(), Compensated::default());
    for (a, b) in l1.iter().zip(&l0) {
        kld.add(log_term(a - z1, b - z0));
        mass.add((a - z1).exp());
    }
    Ok(OracleKld { kld: kld.total().max(0.0), mass: mass.total() })
}

/// `P(S = path | X = x)` by normalizing over every hidden path.
pub fn brute_force_path_posterior(
    m: &HmmModel,
    ev: &Evidence,
    path: &[usize],
    budget: EnumerationBudget,
) -> Result<f64> {
    if path.len() != ev.len() || path.iter().any(|&s| s >= m.states()) {
        return Err(KldError::InvalidArgument("path must assign a valid state to every position".into()));
    }
    let (logs, log_z) = enumerate_paths(m, ev, budget, None)?;
    let index = path.iter().fold(0usize, |acc, &s| acc * m.states() + s);
    Ok((logs[index] - log_z).exp())
}
