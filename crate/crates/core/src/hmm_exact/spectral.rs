//! Eigendecomposition of a stochastic matrix and the logarithmic-time
//! evaluation of `Σ_{i=0}^{n-1} π^i k`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Tolerance for `λ₁ = 1`.
pub const UNIT_EIGENVALUE_TOL: f64 = 1e-10;
/// Eigenvalues other than the unit one must satisfy `|λ| ≤ 1 - GAP_TOL`.
pub const GAP_TOL: f64 = 1e-10;
/// Bound on `‖P D P⁻¹ - π‖_∞`.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;

/// Eigenvalues closer than this are treated as one repeated eigenvalue.
const CLUSTER_TOL: f64 = 1e-7;

/// `π = P diag(λ) P⁻¹`, with the eigenvalue closest to 1 in position 0.
#[derive(Debug, Clone)]
pub struct Spectral {
    eigenvalues: Vec<Complex64>,
    basis: DMatrix<Complex64>,
    inverse: DMatrix<Complex64>,
    residual: f64,
}

/// `k = k₁ v₁ + k̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSplit {
    /// `k₁ v₁`, the component along the unit eigenvector.
    pub along_unit: Vec<f64>,
    /// `k̃`, the component in the span of the remaining eigenvectors.
    pub remainder: Vec<f64>,
}

fn inf_norm(m: &DMatrix<Complex64>) -> f64 {
    (0..m.nrows()).map(|r| m.row(r).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

impl Spectral {
    /// Diagonalizes `pi`. Fails with a reason when no eigenbasis is found.
    pub fn decompose(pi: &DMatrix<f64>) -> Result<Spectral, String> {
        let d = pi.nrows();
        if d == 0 || pi.ncols() != d {
            return Err("matrix must be square and nonempty".into());
        }
        let mut eigenvalues: Vec<Complex64> = pi.clone().complex_eigenvalues().iter().copied().collect();
        if eigenvalues.len() != d || eigenvalues.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
            return Err("eigenvalue computation did not converge".into());
        }
        let one = Complex64::new(1.0, 0.0);
        eigenvalues.sort_by(|a, b| (a - one).norm().total_cmp(&(b - one).norm()));

        let a: DMatrix<Complex64> = pi.map(|x| Complex64::new(x, 0.0));
        let mut basis = DMatrix::<Complex64>::zeros(d, d);
        let mut ordered = Vec::with_capacity(d);
        let mut assigned = vec![false; d];
        for i in 0..d {
            if assigned[i] {
                continue;
            }
            let lambda = eigenvalues[i];
            let cluster: Vec<usize> =
                (i..d).filter(|&j| !assigned[j] && (eigenvalues[j] - lambda).norm() <= CLUSTER_TOL).collect();
            // null space of (π - λI) from the smallest right singular vectors
            let shifted = &a - DMatrix::<Complex64>::identity(d, d) * lambda;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.ok_or("singular value decomposition failed")?;
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
            for (slot, &j) in cluster.iter().enumerate() {
                assigned[j] = true;
                let v: DVector<Complex64> = v_t.row(order[slot]).transpose().map(|z| z.conj());
                basis.set_column(ordered.len(), &v);
                ordered.push(eigenvalues[j]);
            }
        }
        let eigenvalues = ordered;
        // Gauge the unit eigenvector so it is real and positive.
        let phase = basis.column(0).iter().copied().max_by(|x, y| x.norm().total_cmp(&y.norm())).unwrap_or(one);
        if phase.norm() > 0.0 {
            let scale = phase.norm() / phase;
            for r in 0..d {
                basis[(r, 0)] *= scale;
            }
        }

        let inverse = basis.clone().try_inverse().ok_or("eigenvector basis is singular (defective matrix)")?;
        let diag = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
        let residual = inf_norm(&(&basis * diag * &inverse - &a));
        if !residual.is_finite() {
            return Err("eigendecomposition is not finite".into());
        }
        Ok(Spectral { eigenvalues, basis, inverse, residual })
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &DMatrix<Complex64> {
        &self.basis
    }

    /// `‖P D P⁻¹ - π‖_∞`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Checks the conditions under which [`Spectral::geometric_sum`] applies:
    /// a simple unit eigenvalue, spectral gap, and an accurate reconstruction.
    pub fn check_fast_path(&self) -> Result<(), String> {
        let l1 = self.eigenvalues[0];
        if (l1 - Complex64::new(1.0, 0.0)).norm() > UNIT_EIGENVALUE_TOL {
            return Err(format!("leading eigenvalue {l1} is not 1"));
        }
        if let Some(l) = self.eigenvalues[1..].iter().find(|l| l.norm() > 1.0 - GAP_TOL) {
            return Err(format!("eigenvalue {l} lies on the unit circle"));
        }
        if self.residual > RECONSTRUCTION_TOL {
            return Err(format!("reconstruction residual {:.3e} exceeds {RECONSTRUCTION_TOL:e}", self.residual));
        }
        Ok(())
    }

    /// Splits `k` along the unit eigenvector and the remaining eigenspaces.
    pub fn split(&self, k: &[f64]) -> UnitSplit {
        let kc = DVector::from_iterator(k.len(), k.iter().map(|&x| Complex64::new(x, 0.0)));
        let coords = &self.inverse * kc;
        let along: Vec<f64> = self.basis.column(0).iter().map(|v| (v * coords[0]).re).collect();
        let remainder = k.iter().zip(&along).map(|(a, b)| a - b).collect();
        UnitSplit { along_unit: along, remainder }
    }

    /// `π̃ = P diag(0, λ₂, …, λ_d) P⁻¹`, real up to rounding.
    pub fn deflated(&self) -> DMatrix<f64> {
        let mut lambdas = self.eigenvalues.clone();
        lambdas[0] = Complex64::new(0.0, 0.0);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(lambdas));
        (&self.basis * diag * &self.inverse).map(|z| z.re)
    }

    /// `Σ_{i=0}^{terms-1} π^i k = terms · k₁v₁ + (I - π̃^terms)(I - π̃)⁻¹ k̃`.
    pub fn geometric_sum(&self, k: &[f64], terms: u64) -> Result<Vec<f64>, String> {
        let d = k.len();
        let split = self.split(k);
        let tilde = self.deflated();
        let lhs = DMatrix::<f64>::identity(d, d) - &tilde;
        let y = lhs.lu().solve(&DVector::from_vec(split.remainder)).ok_or("I - π̃ is singular")?;
        let power = mat_pow(&tilde, terms);
        let tail = &y - power * &y;
        Ok((0..d).map(|r| terms as f64 * split.along_unit[r] + tail[r]).collect())
    }
}

/// `m^e` by repeated squaring.
pub fn mat_pow(m: &DMatrix<f64>, mut e: u64) -> DMatrix<f64> {
    let d = m.nrows();
    let mut result = DMatrix::<f64>::identity(d, d);
    let mut base = m.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}
