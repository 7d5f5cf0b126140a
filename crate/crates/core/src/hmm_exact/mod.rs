//! Exact divergences between two homogeneous HMMs of equal length.
//!
//! Without evidence the divergence is
//! `D = k_∅ + μ1 (I + π1 + … + π1^{N-2}) k`, and `D / N` tends to the rate
//! `ν · k` where `ν` is the stationary law of `π1`. With evidence the two
//! posterior chains are compared by a backward recursion (see [`evidence`]).

pub mod evidence;
pub mod spectral;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::divergence::{
    emission_divergences, kl_unchecked, local_k_root, local_k_vector, transition_divergences, weighted_sum, KVector,
};
use crate::error::{KldError, Result};
use crate::model::{HmmModel, STOCHASTIC_TOL};

pub use evidence::{backward_quantities, kld_hmm_evidence, posterior_conditionals, BackwardTable, Posterior};
pub use spectral::Spectral;

/// Eigenvalues within this distance of 1 count toward its multiplicity.
const UNIT_MULTIPLICITY_TOL: f64 = 1e-8;
/// Other eigenvalues must have modulus at most `1 - PERIODIC_TOL`.
const PERIODIC_TOL: f64 = 1e-10;
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub(crate) fn check_pair(m1: &HmmModel, m0: &HmmModel) -> Result<()> {
    if m1.length() != m0.length() {
        return Err(KldError::DimensionMismatch(format!("lengths {} and {}", m1.length(), m0.length())));
    }
    if m1.states() != m0.states() {
        return Err(KldError::DimensionMismatch(format!("{} vs {} hidden states", m1.states(), m0.states())));
    }
    if m1.emission().kind() != m0.emission().kind() {
        return Err(KldError::KindMismatch(format!("{} vs {}", m1.emission().kind(), m0.emission().kind())));
    }
    if m1.alphabet() != m0.alphabet() {
        return Err(KldError::DimensionMismatch(format!("alphabets {:?} and {:?}", m1.alphabet(), m0.alphabet())));
    }
    Ok(())
}

/// `k_∅` and `k` for a model pair.
fn local_terms(m1: &HmmModel, m0: &HmmModel) -> Result<(f64, KVector)> {
    check_pair(m1, m0)?;
    let k_root = local_k_root(m1.initial().as_slice(), m0.initial().as_slice(), m1.emission(), m0.emission())?;
    let k = local_k_vector(m1.transition(), m0.transition(), m1.emission(), m0.emission())?;
    Ok((k_root, k))
}

fn row_times(w: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|s| weighted_sum(w, m.column(s).iter())).collect()
}

/// `D(θ1 ‖ θ0)` by the direct `O(N d²)` sum `k_∅ + Σ_{i<N-1} (μ1 π1^i) · k`.
pub fn kld_hmm_no_evidence(m1: &HmmModel, m0: &HmmModel) -> Result<f64> {
    let (k_root, k) = local_terms(m1, m0)?;
    Ok(k_root + direct_sum(m1.initial().as_slice(), m1.transition(), k.entries(), m1.length() - 1))
}

/// `Σ_{i=0}^{terms-1} (w π^i) · k`, propagating the row vector forward.
fn direct_sum(mu: &[f64], pi: &DMatrix<f64>, k: &[f64], terms: usize) -> f64 {
    let mut total = 0.0;
    let mut w = mu.to_vec();
    for i in 0..terms {
        total += weighted_sum(&w, k);
        if i + 1 < terms {
            w = row_times(&w, pi);
        }
    }
    total
}

/// How [`kld_hmm_fast`] evaluated the matrix sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumMethod {
    /// Eigendecomposition with `π̃^{N-1}` by repeated squaring.
    Spectral,
    /// The direct `O(N)` sum.
    Direct,
}

impl fmt::Display for SumMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SumMethod::Spectral => write!(f, "spectral"),
            SumMethod::Direct => write!(f, "direct"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastKld {
    pub value: f64,
    pub method: SumMethod,
    /// Why the spectral path was not taken, when it was not.
    pub diagnostic: Option<String>,
}

/// `D(θ1 ‖ θ0)` in `O(d³ log N)` when `π1` is diagonalizable with a simple
/// unit eigenvalue and a spectral gap; otherwise the direct sum, with the
/// reason in [`FastKld::diagnostic`].
pub fn kld_hmm_fast(m1: &HmmModel, m0: &HmmModel) -> Result<FastKld> {
    let (k_root, k) = local_terms(m1, m0)?;
    let n = m1.length();
    let fallback = |reason: String| -> Result<FastKld> {
        Ok(FastKld {
            value: k_root + direct_sum(m1.initial().as_slice(), m1.transition(), k.entries(), n - 1),
            method: SumMethod::Direct,
            diagnostic: Some(reason),
        })
    };
    if n <= 2 {
        return fallback(format!("N = {n}: the sum has at most one term"));
    }
    if !k.is_finite() || !k_root.is_finite() {
        return fallback("local divergence is infinite".into());
    }
    let spectral = match Spectral::decompose(m1.transition()) {
        Ok(s) => s,
        Err(reason) => return fallback(reason),
    };
    if let Err(reason) = spectral.check_fast_path() {
        return fallback(reason);
    }
    let sum = match spectral.geometric_sum(k.entries(), (n - 1) as u64) {
        Ok(s) => s,
        Err(reason) => return fallback(reason),
    };
    let value = k_root + weighted_sum(m1.initial().as_slice(), &sum);
    if !value.is_finite() {
        return fallback("spectral evaluation was not finite".into());
    }
    Ok(FastKld { value, method: SumMethod::Spectral, diagnostic: None })
}

/// The layered bound
/// `U = D(μ) + μ1 (Σ_{i=1}^{N-1} π1^{i-1} [D(π) + D(e)] + π1^{N-1} D(e))`,
/// evaluated from the row-wise divergences rather than the joint k-vector.
pub fn do_bound(m1: &HmmModel, m0: &HmmModel) -> Result<f64> {
    check_pair(m1, m0)?;
    let d_mu = kl_unchecked(m1.initial().iter(), m0.initial().iter());
    let d_pi = transition_divergences(m1.transition(), m0.transition())?;
    let d_e = emission_divergences(m1.emission(), m0.emission())?;
    let step: Vec<f64> = d_pi.iter().zip(&d_e).map(|(a, b)| a + b).collect();

    let n = m1.length();
    let mut w = m1.initial().as_slice().to_vec();
    let mut total = 0.0;
    for _ in 1..n {
        total += weighted_sum(&w, &step);
        w = row_times(&w, m1.transition());
    }
    total += weighted_sum(&w, &d_e);
    Ok(d_mu + total)
}

/// Stationary law `ν` of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    nu: Vec<f64>,
}

impl StationaryDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.nu
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.nu
    }
}

/// Solves `ν (π - I) = 0`, `Σ ν = 1`. The chain must have a simple unit
/// eigenvalue and no other eigenvalue on the unit circle.
pub fn stationary_distribution(pi: &DMatrix<f64>) -> Result<StationaryDistribution> {
    let d = pi.nrows();
    if d == 0 || pi.ncols() != d {
        return Err(KldError::DimensionMismatch(format!("transition shape {:?}", pi.shape())));
    }
    for r in 0..d {
        let sum: f64 = pi.row(r).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || pi.row(r).iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(KldError::InvalidArgument(format!("transition row {} is not a distribution", r + 1)));
        }
    }

    let eigenvalues = pi.clone().complex_eigenvalues();
    let unit = eigenvalues.iter().filter(|l| (*l - ONE).norm() <= UNIT_MULTIPLICITY_TOL).count();
    if unit != 1 {
        return Err(KldError::NoUniqueStationary(format!("eigenvalue 1 has multiplicity {unit} (reducible chain)")));
    }
    if let Some(l) =
        eigenvalues.iter().find(|l| (*l - ONE).norm() > UNIT_MULTIPLICITY_TOL && l.norm() > 1.0 - PERIODIC_TOL)
    {
        return Err(KldError::NoUniqueStationary(format!("periodic chain: eigenvalue {l} on the unit circle")));
    }

    // (π^T - I) ν^T = 0 with the last equation replaced by Σ ν = 1
    let mut a = pi.transpose() - DMatrix::<f64>::identity(d, d);
    a.row_mut(d - 1).fill(1.0);
    let mut b = DVector::<f64>::zeros(d);
    b[d - 1] = 1.0;
    let nu = a.lu().solve(&b).ok_or_else(|| KldError::NoUniqueStationary("singular stationary system".into()))?;
    let nu: Vec<f64> = nu.iter().map(|&x| if x < 0.0 && x > -1e-14 { 0.0 } else { x }).collect();
    if nu.iter().any(|&x| x.is_nan() || x < 0.0) {
        return Err(KldError::NoUniqueStationary("stationary solve produced negative mass".into()));
    }
    Ok(StationaryDistribution { nu })
}

/// The divergence rate `lim D / N = ν · k`.
pub fn kld_rate(m1: &HmmModel, m0: &HmmModel) -> Result<f64> {
    Ok(kld_rate_with_nu(m1, m0)?.0)
}

/// [`kld_rate`] together with the stationary law used.
pub fn kld_rate_with_nu(m1: &HmmModel, m0: &HmmModel) -> Result<(f64, StationaryDistribution)> {
    let (_, k) = local_terms(m1, m0)?;
    let nu = stationary_distribution(m1.transition())?;
    Ok((weighted_sum(nu.as_slice(), k.entries()), nu))
}
