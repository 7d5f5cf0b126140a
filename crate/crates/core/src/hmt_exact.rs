//! Exact divergence between two hidden Markov trees sharing a topology.
//!
//! The inward quantity `K_{ua→u}(r)` is the divergence between the two
//! models' laws of the whole subtree rooted at `S_ua`, given `S_u = r`. It
//! obeys
//!
//! ```text
//! K_{ua→u}(r) = k_ua(r) + Σ_s π1^ua(r, s) Σ_b K_{uab→ua}(s)
//! ```
//!
//! where `k_ua` is the one-step local divergence of the transition into `ua`
//! and its emission. Leaves have no children, so their sum is zero. The root
//! aggregates `D = k_∅ + Σ_s μ1(s) Σ_a K_{a→∅}(s)`.

use std::borrow::Cow;

use nalgebra::DMatrix;

use crate::divergence::{local_k_root, local_k_vector, weighted_sum, KVector};
use crate::error::{KldError, Result};
use crate::model::{HmtModel, NodePath, TreeLayout};

/// Exact divergence value with the location of the first infinite term.
#[derive(Debug, Clone, PartialEq)]
pub struct Kld {
    pub value: f64,
    /// First node (breadth-first) whose local term is infinite with positive
    /// probability under the first model. Set only when `value` is `+∞`.
    pub infinite_at: Option<NodePath>,
}

impl Kld {
    fn finite(value: f64) -> Self {
        Kld { value, infinite_at: None }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Inward quantities for every non-root node.
#[derive(Debug, Clone)]
pub struct InwardTable {
    states: usize,
    layout: TreeLayout,
    /// `K_{v→parent(v)}`, row-major by node; the root row stays zero.
    values: Vec<f64>,
    /// `Σ_a K_{ua→u}` per node `u`.
    child_sums: Vec<f64>,
}

impl InwardTable {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn layout(&self) -> &TreeLayout {
        &self.layout
    }

    /// `K_{v→parent(v)}(·)` for node index `v`.
    pub fn get(&self, node: usize) -> &[f64] {
        &self.values[node * self.states..(node + 1) * self.states]
    }

    pub fn get_path(&self, path: &NodePath) -> Option<&[f64]> {
        (1..self.layout.len()).find(|&i| self.layout.path(i) == *path).map(|i| self.get(i))
    }

    /// `Σ_a K_{ua→u}(·)` over the children of node `u`.
    pub fn child_sum(&self, node: usize) -> &[f64] {
        &self.child_sums[node * self.states..(node + 1) * self.states]
    }
}

pub(crate) fn check_compatible(m1: &HmtModel, m0: &HmtModel) -> Result<()> {
    if !m1.topology().same_shape(m0.topology()) {
        return Err(KldError::TopologyMismatch("the two trees have different node sets".into()));
    }
    if m1.states() != m0.states() {
        return Err(KldError::DimensionMismatch(format!("{} vs {} hidden states", m1.states(), m0.states())));
    }
    if m1.emission_kind() != m0.emission_kind() {
        return Err(KldError::KindMismatch(format!("{} vs {}", m1.emission_kind(), m0.emission_kind())));
    }
    Ok(())
}

/// Children-first evaluation of every inward quantity.
pub fn inward_pass(m1: &HmtModel, m0: &HmtModel) -> Result<InwardTable> {
    check_compatible(m1, m0)?;
    let layout = m1.topology().layout()?.into_owned();
    let d = m1.states();
    let n = layout.len();
    let mut values = vec![0.0; n * d];
    let mut child_sums = vec![0.0; n * d];

    let shared_k = match (m1.shared(), m0.shared()) {
        (Some((t1, e1)), Some((t0, e0))) => Some(local_k_vector(t1, t0, e1, e0)?),
        _ => None,
    };

    // Breadth-first indices put every child after its parent.
    for v in (1..n).rev() {
        let k: Cow<'_, KVector> = match &shared_k {
            Some(k) => Cow::Borrowed(k),
            None => Cow::Owned(local_k_vector(m1.transition(v), m0.transition(v), m1.emission(v), m0.emission(v))?),
        };
        let pi1 = m1.transition(v);
        let (below, row_v) = child_sums.split_at_mut(v * d);
        let sums_v = &row_v[..d];
        for r in 0..d {
            let downstream = if layout.is_leaf(v) { 0.0 } else { weighted_sum(pi1.row(r).iter(), sums_v.iter()) };
            values[v * d + r] = k[r] + downstream;
        }
        let p = layout.parent(v).expect("non-root");
        for r in 0..d {
            below[p * d + r] += values[v * d + r];
        }
    }

    Ok(InwardTable { states: d, layout, values, child_sums })
}

/// Exact `D(θ1 ‖ θ0)` on an arbitrary shared topology.
pub fn kld_exact_tree(m1: &HmtModel, m0: &HmtModel) -> Result<Kld> {
    let table = inward_pass(m1, m0)?;
    let root_k = local_k_root(m1.initial().as_slice(), m0.initial().as_slice(), m1.emission(0), m0.emission(0))?;
    let value = root_k + weighted_sum(m1.initial().iter(), table.child_sum(0).iter());
    if value.is_finite() {
        return Ok(Kld::finite(value));
    }
    if value.is_nan() {
        return Err(KldError::NonFinite("tree recursion produced NaN".into()));
    }
    Ok(Kld { value, infinite_at: first_infinite_node(m1, m0, &table.layout, root_k)? })
}

/// Top-down scan for the first node whose local term is reachable and infinite.
fn first_infinite_node(m1: &HmtModel, m0: &HmtModel, layout: &TreeLayout, root_k: f64) -> Result<Option<NodePath>> {
    if root_k.is_infinite() {
        return Ok(Some(NodePath::root()));
    }
    let d = m1.states();
    let mut marginals = vec![0.0; layout.len() * d];
    marginals[..d].copy_from_slice(m1.initial().as_slice());
    for v in 1..layout.len() {
        let p = layout.parent(v).expect("non-root");
        let parent_marg: Vec<f64> = marginals[p * d..(p + 1) * d].to_vec();
        let k = local_k_vector(m1.transition(v), m0.transition(v), m1.emission(v), m0.emission(v))?;
        if weighted_sum(parent_marg.iter(), k.entries().iter()).is_infinite() {
            return Ok(Some(layout.path(v)));
        }
        let pi1 = m1.transition(v);
        for s in 0..d {
            marginals[v * d + s] = (0..d).map(|r| parent_marg[r] * pi1[(r, s)]).sum();
        }
    }
    Ok(None)
}

/// Closed form for homogeneous models on a regular tree:
/// `k_∅ + μ1 (C I + C² π1 + … + C^{N-1} π1^{N-2}) k`.
pub fn kld_homogeneous_tree(m1: &HmtModel, m0: &HmtModel) -> Result<Kld> {
    check_compatible(m1, m0)?;
    let ((t1, e1), (t0, e0)) = match (m1.shared(), m0.shared()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(KldError::NotHomogeneous),
    };
    let (children, depth) = m1.topology().regularity().ok_or(KldError::NotHomogeneous)?;
    let k_root = local_k_root(m1.initial().as_slice(), m0.initial().as_slice(), e1, e0)?;
    let k = local_k_vector(t1, t0, e1, e0)?;
    let value = homogeneous_closed_form(m1.initial().as_slice(), t1, k_root, &k, children, depth)?;
    if value.is_finite() {
        return Ok(Kld::finite(value));
    }
    let infinite_at = if k_root.is_infinite() {
        Some(NodePath::root())
    } else {
        // level marginals μ1 π1^{l-1}; first level l whose term blows up
        let mut w = m1.initial().as_slice().to_vec();
        let mut found = None;
        for level in 1..depth {
            if weighted_sum(w.iter(), k.entries().iter()).is_infinite() {
                found = Some(NodePath::from_labels(vec![0; level]));
                break;
            }
            w = row_times(&w, t1);
        }
        found
    };
    Ok(Kld { value, infinite_at })
}

fn row_times(w: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|s| (0..m.nrows()).map(|r| w[r] * m[(r, s)]).sum()).collect()
}

/// Horner evaluation `acc ← C (k + π1 acc)`, applied `N - 1` times, then
/// `k_∅ + μ1 · acc`. `C^{N-1}` is never formed on its own; if the
/// accumulator overflows with finite inputs the call fails.
pub fn homogeneous_closed_form(
    mu1: &[f64],
    pi1: &DMatrix<f64>,
    k_root: f64,
    k: &KVector,
    children: usize,
    depth: usize,
) -> Result<f64> {
    if depth == 0 {
        return Err(KldError::InvalidArgument("tree depth N must be at least 1".into()));
    }
    if children == 0 && depth > 1 {
        return Err(KldError::InvalidArgument("children count C must be at least 1".into()));
    }
    let d = mu1.len();
    if pi1.nrows() != d || k.len() != d {
        return Err(KldError::DimensionMismatch(format!("{d} states vs {}x{} transition", pi1.nrows(), pi1.ncols())));
    }
    let c = children as f64;
    let mut acc = vec![0.0; d];
    let mut next = vec![0.0; d];
    for _ in 1..depth {
        for r in 0..d {
            next[r] = c * (k[r] + weighted_sum(pi1.row(r).iter(), acc.iter()));
        }
        std::mem::swap(&mut acc, &mut next);
    }
    let value = k_root + weighted_sum(mu1.iter(), acc.iter());
    if !value.is_finite() && k_root.is_finite() && k.is_finite() {
        return Err(KldError::NonFinite(format!("closed form overflowed for C = {children}, N = {depth}")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmissionSpec, NodeParams, Topology};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    /// Binary depth-3 trees with per-level zero-mean Gaussian emissions.
    fn reference_hmt_pair() -> (HmtModel, HmtModel) {
        let build = |mu: [f64; 2], p0: [f64; 4], p00: [f64; 4], sds: [[f64; 2]; 3]| {
            let topo = Topology::regular(2, 3).unwrap();
            let level1 = DMatrix::from_row_slice(2, 2, &p0);
            let level2 = DMatrix::from_row_slice(2, 2, &p00);
            // nodes: "", "0", "1", "00", "01", "10", "11"
            let transitions = vec![level1.clone(), level1, level2.clone(), level2.clone(), level2.clone(), level2];
            let e = |l: usize| EmissionSpec::centered_gaussian(sds[l].to_vec());
            let emissions = vec![e(0), e(1), e(1), e(2), e(2), e(2), e(2)];
            HmtModel::new(
                topo,
                DVector::from_vec(mu.to_vec()),
                NodeParams::PerNode(transitions),
                NodeParams::PerNode(emissions),
            )
            .unwrap()
        };
        (
            build(
                [0.69, 0.31],
                [0.99, 0.01, 0.22, 0.78],
                [0.99, 0.01, 0.32, 0.68],
                [[11.8, 67.1], [4.1, 29.3], [2.8, 10.3]],
            ),
            build(
                [0.63, 0.37],
                [0.98, 0.02, 0.20, 0.80],
                [0.99, 0.01, 0.22, 0.78],
                [[24.6, 74.8], [6.9, 31.9], [3.1, 14.8]],
            ),
        )
    }

    #[test]
    fn reference_hmt_value() {
        let (a, b) = reference_hmt_pair();
        let d = kld_exact_tree(&a, &b).unwrap();
        assert_abs_diff_eq!(d.value, 0.690, epsilon = 1e-3);
        // independent NumPy evaluation of the same recursion
        assert_abs_diff_eq!(d.value, 0.689_522_884_55, epsilon = 1e-10);
    }

    #[test]
    fn identical_trees_give_zero_table() {
        let (a, _) = reference_hmt_pair();
        let t = inward_pass(&a, &a).unwrap();
        for v in 0..t.layout().len() {
            assert!(t.get(v).iter().all(|&x| x == 0.0));
        }
        assert_eq!(kld_exact_tree(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn leaf_quantities_are_local_terms() {
        let (a, b) = reference_hmt_pair();
        let t = inward_pass(&a, &b).unwrap();
        let leaf = t.layout().len() - 1;
        let k = local_k_vector(a.transition(leaf), b.transition(leaf), a.emission(leaf), b.emission(leaf)).unwrap();
        assert_eq!(t.get(leaf), k.entries());
        assert!(t.child_sum(leaf).iter().all(|&x| x == 0.0));
        let path = NodePath::parse("10").unwrap();
        assert_eq!(t.get_path(&path).unwrap(), t.get(5));
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let (a, _) = reference_hmt_pair();
        let mu = DVector::from_vec(vec![0.5, 0.5]);
        let other = HmtModel::homogeneous(
            Topology::regular(3, 3).unwrap(),
            mu,
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            EmissionSpec::centered_gaussian(vec![1.0, 2.0]),
        )
        .unwrap();
        assert!(matches!(kld_exact_tree(&a, &other), Err(KldError::TopologyMismatch(_))));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let topo = Topology::regular(2, 2).unwrap();
        let mu = DVector::from_vec(vec![1.0]);
        let t = DMatrix::identity(1, 1);
        let g = HmtModel::homogeneous(topo.clone(), mu.clone(), t.clone(), EmissionSpec::centered_gaussian(vec![1.0]))
            .unwrap();
        let dsc = HmtModel::homogeneous(topo, mu, t, EmissionSpec::Discrete(DMatrix::identity(1, 1))).unwrap();
        assert!(matches!(kld_exact_tree(&g, &dsc), Err(KldError::KindMismatch(_))));
    }

    #[test]
    fn depth_one_closed_form_is_root_term() {
        let k = KVector::new(vec![1.0, 2.0]);
        let pi = DMatrix::identity(2, 2);
        assert_eq!(homogeneous_closed_form(&[0.5, 0.5], &pi, 0.25, &k, 2, 1).unwrap(), 0.25);
        assert!(homogeneous_closed_form(&[0.5, 0.5], &pi, 0.25, &k, 0, 3).is_err());
        assert!(homogeneous_closed_form(&[0.5, 0.5], &pi, 0.25, &k, 2, 0).is_err());
    }

    #[test]
    fn closed_form_overflow_is_an_error() {
        let k = KVector::new(vec![1.0]);
        let pi = DMatrix::identity(1, 1);
        assert!(matches!(homogeneous_closed_form(&[1.0], &pi, 0.0, &k, 10, 400), Err(KldError::NonFinite(_))));
    }

    #[test]
    fn infinite_term_names_the_node() {
        let topo = Topology::regular(2, 3).unwrap();
        let mu = DVector::from_vec(vec![0.5, 0.5]);
        let e = EmissionSpec::Discrete(DMatrix::identity(2, 2));
        let p1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let a = HmtModel::homogeneous(topo.clone(), mu.clone(), p1, e.clone()).unwrap();
        let b = HmtModel::homogeneous(topo, mu, p0, e).unwrap();
        let d = kld_exact_tree(&a, &b).unwrap();
        assert_eq!(d.value, f64::INFINITY);
        assert_eq!(d.infinite_at.unwrap().to_string(), "0");
        let h = kld_homogeneous_tree(&a, &b).unwrap();
        assert_eq!(h.value, f64::INFINITY);
        assert_eq!(h.infinite_at.unwrap().to_string(), "0");
    }

    #[test]
    fn not_homogeneous_is_rejected() {
        let (a, b) = reference_hmt_pair();
        assert!(matches!(kld_homogeneous_tree(&a, &b), Err(KldError::NotHomogeneous)));
    }
}
