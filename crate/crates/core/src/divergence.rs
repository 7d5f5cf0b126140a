//! Elementary Kullback-Leibler divergences, in nats.
//!
//! Conventions: `0 · log(0 / q) = 0`, and `p · log(p / 0) = +∞` for `p > 0`.
//! A support mismatch is returned as `f64::INFINITY` rather than an error.

use nalgebra::DMatrix;

use crate::error::{KldError, Result};
use crate::model::{EmissionSpec, STOCHASTIC_TOL};

/// `Σ p log(p / q)` over one pair of aligned entries.
#[inline]
fn kl_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if q == 0.0 {
        f64::INFINITY
    } else {
        p * (p / q).ln()
    }
}

/// Kl of two aligned, already-validated probability vectors.
pub(crate) fn kl_unchecked<'a>(p: impl IntoIterator<Item = &'a f64>, q: impl IntoIterator<Item = &'a f64>) -> f64 {
    let total: f64 = p.into_iter().zip(q).map(|(&a, &b)| kl_term(a, b)).sum();
    // Gibbs' inequality; rounding may leave a few ulps below zero.
    total.max(0.0)
}

/// `Σ w_i v_i` with `0 · ∞ = 0`.
pub(crate) fn weighted_sum<'a>(w: impl IntoIterator<Item = &'a f64>, v: impl IntoIterator<Item = &'a f64>) -> f64 {
    w.into_iter().zip(v).map(|(&w, &v)| if w == 0.0 { 0.0 } else { w * v }).sum()
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(KldError::InvalidArgument(format!("{name} is not a probability vector (sum {sum})")));
    }
    Ok(())
}

/// `D(p ‖ q)` for two discrete distributions.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(KldError::DimensionMismatch(format!("lengths {} and {}", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(kl_unchecked(p, q))
}

/// `D(N(m1, s1²) ‖ N(m0, s0²))`, parameterized by standard deviations.
pub fn kl_gaussian(m1: f64, s1: f64, m0: f64, s0: f64) -> Result<f64> {
    if !(s1 > 0.0 && s0 > 0.0) {
        return Err(KldError::InvalidArgument(format!("standard deviations must be positive, got {s1} and {s0}")));
    }
    Ok(gaussian_kl_raw(m1, s1, m0, s0))
}

fn gaussian_kl_raw(m1: f64, s1: f64, m0: f64, s0: f64) -> f64 {
    let dm = m1 - m0;
    let v = (s1 * s1 + dm * dm) / (2.0 * s0 * s0) + (s0 / s1).ln() - 0.5;
    v.max(0.0)
}

/// Per-state local divergences `k(r)`, one per hidden state of the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct KVector {
    entries: Vec<f64>,
}

impl KVector {
    pub fn new(entries: Vec<f64>) -> Self {
        KVector { entries }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// False when some entry is `+∞` (support mismatch).
    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }
}

impl std::ops::Index<usize> for KVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.entries[i]
    }
}

fn check_pair(e1: &EmissionSpec, e0: &EmissionSpec, d: usize) -> Result<()> {
    if e1.kind() != e0.kind() {
        return Err(KldError::KindMismatch(format!("{} vs {}", e1.kind(), e0.kind())));
    }
    if e1.states() != d || e0.states() != d {
        return Err(KldError::DimensionMismatch(format!(
            "emissions have {} and {} states, expected {d}",
            e1.states(),
            e0.states()
        )));
    }
    if e1.alphabet() != e0.alphabet() {
        return Err(KldError::DimensionMismatch(format!("alphabet sizes {:?} and {:?}", e1.alphabet(), e0.alphabet())));
    }
    Ok(())
}

/// Per-state emission divergences `D(e)_s = D(e1(s, ·) ‖ e0(s, ·))`.
pub fn emission_divergences(e1: &EmissionSpec, e0: &EmissionSpec) -> Result<Vec<f64>> {
    check_pair(e1, e0, e1.states())?;
    match (e1, e0) {
        (EmissionSpec::Discrete(a), EmissionSpec::Discrete(b)) => {
            Ok((0..a.nrows()).map(|s| kl_unchecked(a.row(s).iter(), b.row(s).iter())).collect())
        }
        (EmissionSpec::Gaussian { means: m1, sds: s1 }, EmissionSpec::Gaussian { means: m0, sds: s0 }) => {
            (0..m1.len()).map(|s| kl_gaussian(m1[s], s1[s], m0[s], s0[s])).collect()
        }
        _ => unreachable!("kinds checked"),
    }
}

/// Per-row transition divergences `D(π)_r = D(π1(r, ·) ‖ π0(r, ·))`.
pub fn transition_divergences(pi1: &DMatrix<f64>, pi0: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square_pair(pi1, pi0)?;
    Ok((0..pi1.nrows()).map(|r| kl_unchecked(pi1.row(r).iter(), pi0.row(r).iter())).collect())
}

fn check_square_pair(pi1: &DMatrix<f64>, pi0: &DMatrix<f64>) -> Result<()> {
    if pi1.shape() != pi0.shape() || pi1.nrows() != pi1.ncols() {
        return Err(KldError::DimensionMismatch(format!("transition shapes {:?} and {:?}", pi1.shape(), pi0.shape())));
    }
    Ok(())
}

/// Divergence of one joint `(S, X)` step drawn from hidden-state weights
/// `w1` (vs `w0`) followed by the emission:
/// `Σ_{s,x} w1(s)e1(s,x) log[w1(s)e1(s,x) / (w0(s)e0(s,x))]`.
fn joint_step<'a>(
    w1: impl Iterator<Item = &'a f64>,
    w0: impl Iterator<Item = &'a f64>,
    e1: &EmissionSpec,
    e0: &EmissionSpec,
) -> f64 {
    match (e1, e0) {
        (EmissionSpec::Discrete(a), EmissionSpec::Discrete(b)) => {
            let mut total = 0.0;
            for (s, (&p, &q)) in w1.zip(w0).enumerate() {
                for x in 0..a.ncols() {
                    total += kl_term(p * a[(s, x)], q * b[(s, x)]);
                }
            }
            total.max(0.0)
        }
        (EmissionSpec::Gaussian { means: m1, sds: s1 }, EmissionSpec::Gaussian { means: m0, sds: s0 }) => {
            let mut total = 0.0;
            for (s, (&p, &q)) in w1.zip(w0).enumerate() {
                if p == 0.0 {
                    continue;
                }
                total += kl_term(p, q) + p * gaussian_kl_raw(m1[s], s1[s], m0[s], s0[s]);
            }
            total.max(0.0)
        }
        _ => unreachable!("kinds checked"),
    }
}

/// `k(r) = D[P1(X, S | S_parent = r) ‖ P0(X, S | S_parent = r)]` for one
/// transition-plus-emission step.
pub fn local_k_vector(pi1: &DMatrix<f64>, pi0: &DMatrix<f64>, e1: &EmissionSpec, e0: &EmissionSpec) -> Result<KVector> {
    check_square_pair(pi1, pi0)?;
    check_pair(e1, e0, pi1.ncols())?;
    Ok(KVector::new((0..pi1.nrows()).map(|r| joint_step(pi1.row(r).iter(), pi0.row(r).iter(), e1, e0)).collect()))
}

/// Same quantity as [`local_k_vector`], assembled as `D(π) + π1 · D(e)`.
pub fn local_k_vector_decomposed(
    pi1: &DMatrix<f64>,
    pi0: &DMatrix<f64>,
    e1: &EmissionSpec,
    e0: &EmissionSpec,
) -> Result<KVector> {
    let dpi = transition_divergences(pi1, pi0)?;
    check_pair(e1, e0, pi1.ncols())?;
    let de = emission_divergences(e1, e0)?;
    Ok(KVector::new((0..pi1.nrows()).map(|r| dpi[r] + weighted_sum(pi1.row(r).iter(), de.iter())).collect()))
}

/// `k_∅ = D[P1(X_∅, S_∅) ‖ P0(X_∅, S_∅)]`.
pub fn local_k_root(mu1: &[f64], mu0: &[f64], e1: &EmissionSpec, e0: &EmissionSpec) -> Result<f64> {
    if mu1.len() != mu0.len() {
        return Err(KldError::DimensionMismatch(format!("initial lengths {} and {}", mu1.len(), mu0.len())));
    }
    check_pair(e1, e0, mu1.len())?;
    Ok(joint_step(mu1.iter(), mu0.iter(), e1, e0))
}
