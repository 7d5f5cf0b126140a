//! Hidden Markov tree and hidden Markov model parameters.
//!
//! A hidden Markov tree (HMT) is a rooted tree of hidden nodes `S_u`; every
//! hidden node carries exactly one observable child `X_u`. Nodes are addressed
//! by their path from the root (the empty path). A hidden Markov model is the
//! chain-shaped special case with one hidden child per node.
//!
//! Models are immutable once built. Every constructor validates the
//! stochasticity invariants at [`STOCHASTIC_TOL`]; nothing is renormalized.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{KldError, Result};

/// Tolerance on row sums of probability vectors and stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Upper bound on the number of nodes a topology may materialize.
pub const MAX_MATERIALIZED_NODES: usize = 50_000_000;

/// Path of a hidden node from the root; the empty path is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePath(Vec<u32>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    /// Parses a string over `'0'..='9'`.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| c.to_digit(10).ok_or_else(|| KldError::Schema(format!("node path {s:?} contains {c:?}"))))
            .collect::<Result<Vec<_>>>()
            .map(NodePath)
    }

    pub fn from_labels(labels: Vec<u32>) -> Self {
        NodePath(labels)
    }

    pub fn labels(&self) -> &[u32] {
        &self.0
    }

    /// Number of edges from the root.
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parent(&self) -> Option<NodePath> {
        if self.is_root() {
            None
        } else {
            Some(NodePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn child(&self, label: u32) -> NodePath {
        let mut labels = self.0.clone();
        labels.push(label);
        NodePath(labels)
    }

    /// Breadth-first ordering key: shorter paths first, then lexicographic.
    fn bfs_key(&self) -> (usize, &[u32]) {
        (self.0.len(), &self.0)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&l| l < 10) {
            for l in &self.0 {
                write!(f, "{l}")?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
            write!(f, "{}", parts.join("."))
        }
    }
}

/// Materialized tree in breadth-first order. Node 0 is the root; every
/// node's children occupy a contiguous index range after the node itself,
/// so iterating indices in reverse visits children before parents.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeLayout {
    parent: Vec<usize>,
    label: Vec<u32>,
    depth: Vec<usize>,
    first_child: Vec<usize>,
    child_count: Vec<usize>,
}

impl TreeLayout {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        if node == 0 {
            None
        } else {
            Some(self.parent[node])
        }
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    pub fn children(&self, node: usize) -> std::ops::Range<usize> {
        let start = self.first_child[node];
        start..start + self.child_count[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.child_count[node] == 0
    }

    pub fn path(&self, node: usize) -> NodePath {
        let mut labels = Vec::with_capacity(self.depth[node]);
        let mut cur = node;
        while cur != 0 {
            labels.push(self.label[cur]);
            cur = self.parent[cur];
        }
        labels.reverse();
        NodePath(labels)
    }

    fn push(&mut self, parent: usize, label: u32, depth: usize) {
        let idx = self.parent.len();
        if parent != usize::MAX {
            if self.child_count[parent] == 0 {
                self.first_child[parent] = idx;
            }
            self.child_count[parent] += 1;
        }
        self.parent.push(parent);
        self.label.push(label);
        self.depth.push(depth);
        self.first_child.push(0);
        self.child_count.push(0);
    }

    fn with_capacity(n: usize) -> Self {
        TreeLayout {
            parent: Vec::with_capacity(n),
            label: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            first_child: Vec::with_capacity(n),
            child_count: Vec::with_capacity(n),
        }
    }
}

/// Shape of the hidden tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    /// Every internal node has `children` hidden children; all leaves sit at
    /// depth `depth - 1`. Kept symbolic until a recursion needs the nodes.
    Regular { children: usize, depth: usize },
    /// Explicit node set.
    General(GeneralTree),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralTree {
    paths: Vec<NodePath>,
    layout: TreeLayout,
    regular: Option<(usize, usize)>,
}

impl Topology {
    pub fn regular(children: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(KldError::InvalidArgument("tree depth must be at least 1".into()));
        }
        if children == 0 && depth > 1 {
            return Err(KldError::InvalidArgument(
                "a regular tree deeper than 1 needs at least one child per node".into(),
            ));
        }
        Ok(Topology::Regular { children, depth })
    }

    /// A chain of `length` hidden nodes.
    pub fn chain(length: usize) -> Result<Self> {
        Topology::regular(1, length)
    }

    /// Builds an explicit topology from its node paths (any order).
    pub fn general(paths: impl IntoIterator<Item = NodePath>) -> Result<Self> {
        let mut paths: Vec<NodePath> = paths.into_iter().collect();
        paths.sort_by(|a, b| a.bfs_key().cmp(&b.bfs_key()));
        if paths.first().map(NodePath::is_root) != Some(true) {
            return Err(KldError::Schema("node list must contain the root \"\"".into()));
        }
        let mut index: HashMap<&NodePath, usize> = HashMap::with_capacity(paths.len());
        let mut layout = TreeLayout::with_capacity(paths.len());
        for (i, p) in paths.iter().enumerate() {
            if index.insert(p, i).is_some() {
                return Err(KldError::Schema(format!("duplicate node path {p:?}", p = p.to_string())));
            }
            match p.parent() {
                None => layout.push(usize::MAX, 0, 0),
                Some(parent) => {
                    let &pi = index.get(&parent).ok_or_else(|| {
                        KldError::Schema(format!("node {:?} has no parent {:?}", p.to_string(), parent.to_string()))
                    })?;
                    layout.push(pi, *p.labels().last().unwrap(), p.depth());
                }
            }
        }
        let regular = detect_regular(&layout);
        Ok(Topology::General(GeneralTree { paths, layout, regular }))
    }

    /// Tree depth `N`: one more than the longest node path.
    pub fn depth(&self) -> usize {
        match self {
            Topology::Regular { depth, .. } => *depth,
            Topology::General(g) => g.layout.depth.iter().max().copied().unwrap_or(0) + 1,
        }
    }

    /// `(children, depth)` when the tree is regular.
    pub fn regularity(&self) -> Option<(usize, usize)> {
        match self {
            Topology::Regular { children, depth } => Some((*children, *depth)),
            Topology::General(g) => g.regular,
        }
    }

    pub fn node_count(&self) -> Option<usize> {
        match self {
            Topology::Regular { children, depth } => regular_node_count(*children, *depth),
            Topology::General(g) => Some(g.layout.len()),
        }
    }

    pub fn layout(&self) -> Result<Cow<'_, TreeLayout>> {
        match self {
            Topology::General(g) => Ok(Cow::Borrowed(&g.layout)),
            Topology::Regular { children, depth } => {
                let n = regular_node_count(*children, *depth).filter(|&n| n <= MAX_MATERIALIZED_NODES).ok_or_else(
                    || {
                        KldError::InvalidArgument(format!(
                            "regular tree with {children} children and depth {depth} is too large to materialize"
                        ))
                    },
                )?;
                let mut layout = TreeLayout::with_capacity(n);
                layout.push(usize::MAX, 0, 0);
                let mut i = 0;
                while i < layout.len() {
                    let d = layout.depth[i];
                    if d + 1 < *depth {
                        for a in 0..*children {
                            layout.push(i, a as u32, d + 1);
                        }
                    }
                    i += 1;
                }
                Ok(Cow::Owned(layout))
            }
        }
    }

    /// Node paths in breadth-first (index) order.
    pub fn paths(&self) -> Result<Vec<NodePath>> {
        match self {
            Topology::General(g) => Ok(g.paths.clone()),
            Topology::Regular { .. } => {
                let layout = self.layout()?;
                Ok((0..layout.len()).map(|i| layout.path(i)).collect())
            }
        }
    }

    /// Structural equality: same node set regardless of representation.
    pub fn same_shape(&self, other: &Topology) -> bool {
        // A lone root is regular for any child count.
        let norm = |(c, n): (usize, usize)| if n == 1 { (0, 1) } else { (c, n) };
        if let (Some(a), Some(b)) = (self.regularity(), other.regularity()) {
            return norm(a) == norm(b);
        }
        match (self.paths(), other.paths()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    }
}

fn regular_node_count(children: usize, depth: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut level: usize = 1;
    for d in 0..depth {
        total = total.checked_add(level)?;
        if d + 1 < depth {
            level = level.checked_mul(children)?;
        }
    }
    Some(total)
}

fn detect_regular(layout: &TreeLayout) -> Option<(usize, usize)> {
    let max_depth = layout.depth.iter().copied().max()?;
    let mut c = None;
    for i in 0..layout.len() {
        if layout.is_leaf(i) {
            if layout.depth[i] != max_depth {
                return None;
            }
        } else {
            let n = layout.child_count[i];
            match c {
                None => c = Some(n),
                Some(prev) if prev != n => return None,
                _ => {}
            }
        }
    }
    Some((c.unwrap_or(0), max_depth + 1))
}

/// Per-state emission law.
#[derive(Debug, Clone, PartialEq)]
pub enum EmissionSpec {
    /// Row-stochastic `d x m` matrix, `e(s, x)`.
    Discrete(DMatrix<f64>),
    /// One normal density per hidden state.
    Gaussian { means: Vec<f64>, sds: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionKind {
    Discrete,
    Gaussian,
}

impl fmt::Display for EmissionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmissionKind::Discrete => write!(f, "discrete"),
            EmissionKind::Gaussian => write!(f, "gaussian"),
        }
    }
}

impl EmissionSpec {
    pub fn kind(&self) -> EmissionKind {
        match self {
            EmissionSpec::Discrete(_) => EmissionKind::Discrete,
            EmissionSpec::Gaussian { .. } => EmissionKind::Gaussian,
        }
    }

    pub fn states(&self) -> usize {
        match self {
            EmissionSpec::Discrete(m) => m.nrows(),
            EmissionSpec::Gaussian { means, .. } => means.len(),
        }
    }

    /// Alphabet size for discrete emissions.
    pub fn alphabet(&self) -> Option<usize> {
        match self {
            EmissionSpec::Discrete(m) => Some(m.ncols()),
            EmissionSpec::Gaussian { .. } => None,
        }
    }

    /// Zero-mean Gaussian emissions with the given per-state standard deviations.
    pub fn centered_gaussian(sds: Vec<f64>) -> Self {
        EmissionSpec::Gaussian { means: vec![0.0; sds.len()], sds }
    }

    fn check(&self, what: &str, report: &mut ValidationReport) {
        match self {
            EmissionSpec::Discrete(m) => check_stochastic_matrix(m, what, report),
            EmissionSpec::Gaussian { means, sds } => {
                if means.len() != sds.len() {
                    report.push(format!("{what}: {} means but {} standard deviations", means.len(), sds.len()));
                }
                for (i, m) in means.iter().enumerate() {
                    if !m.is_finite() {
                        report.push(format!("{what}: mean {} is not finite", i + 1));
                    }
                }
                for (i, s) in sds.iter().enumerate() {
                    if !(s.is_finite() && *s > 0.0) {
                        report.push(format!("{what}: standard deviation {} is {s}, must be positive", i + 1));
                    }
                }
            }
        }
    }
}

/// Parameters that are either shared by every node or given per node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeParams<T> {
    Shared(T),
    /// Indexed by breadth-first node order (see [`TreeLayout`]).
    PerNode(Vec<T>),
}

impl<T> NodeParams<T> {
    pub fn is_shared(&self) -> bool {
        matches!(self, NodeParams::Shared(_))
    }

    fn at(&self, i: usize) -> &T {
        match self {
            NodeParams::Shared(t) => t,
            NodeParams::PerNode(v) => &v[i],
        }
    }

    fn iter(&self) -> Box<dyn Iterator<Item = &T> + '_> {
        match self {
            NodeParams::Shared(t) => Box::new(std::iter::once(t)),
            NodeParams::PerNode(v) => Box::new(v.iter()),
        }
    }
}

/// List of violated invariants; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: String) {
        self.violations.push(v);
    }

    fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(KldError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "valid")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

fn check_distribution(v: &[f64], what: &str, report: &mut ValidationReport) {
    let mut sum = 0.0;
    for (i, &p) in v.iter().enumerate() {
        if !(p.is_finite() && p >= 0.0) {
            report.push(format!("{what}: entry {} is {p}, must be a nonnegative number", i + 1));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        report.push(format!("{what}: sums to {sum}"));
    }
}

fn check_stochastic_matrix(m: &DMatrix<f64>, what: &str, report: &mut ValidationReport) {
    for r in 0..m.nrows() {
        let mut sum = 0.0;
        for c in 0..m.ncols() {
            let p = m[(r, c)];
            if !(p.is_finite() && p >= 0.0) {
                report.push(format!("{what}: entry ({}, {}) is {p}, must be a nonnegative number", r + 1, c + 1));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            report.push(format!("{what}: row {} sums to {sum}", r + 1));
        }
    }
}

/// Hidden Markov tree parameters `θ = (μ, π^u, e^u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmtModel {
    topology: Topology,
    initial: DVector<f64>,
    /// Transition into each non-root node; per-node vectors are indexed by
    /// `node - 1`.
    transitions: NodeParams<DMatrix<f64>>,
    emissions: NodeParams<EmissionSpec>,
}

impl HmtModel {
    /// Builds and validates a model.
    pub fn new(
        topology: Topology,
        initial: DVector<f64>,
        transitions: NodeParams<DMatrix<f64>>,
        emissions: NodeParams<EmissionSpec>,
    ) -> Result<Self> {
        let model = Self::new_unchecked(topology, initial, transitions, emissions);
        model.validate().into_result()?;
        Ok(model)
    }

    /// Builds a model without checking invariants; pair with [`HmtModel::validate`].
    pub fn new_unchecked(
        topology: Topology,
        initial: DVector<f64>,
        transitions: NodeParams<DMatrix<f64>>,
        emissions: NodeParams<EmissionSpec>,
    ) -> Self {
        HmtModel { topology, initial, transitions, emissions }
    }

    /// Homogeneous model: one shared transition matrix and emission law.
    pub fn homogeneous(
        topology: Topology,
        initial: DVector<f64>,
        transition: DMatrix<f64>,
        emission: EmissionSpec,
    ) -> Result<Self> {
        Self::new(topology, initial, NodeParams::Shared(transition), NodeParams::Shared(emission))
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let d = self.initial.len();
        if d == 0 {
            report.push("initial: must have at least one state".into());
        }
        check_distribution(self.initial.as_slice(), "initial", &mut report);

        let nodes = self.topology.node_count();
        match (&self.transitions, nodes) {
            (NodeParams::PerNode(v), Some(n)) if v.len() + 1 != n => {
                report.push(format!("transition: {} per-node matrices for {} non-root nodes", v.len(), n - 1))
            }
            (NodeParams::PerNode(_), None) => {
                report.push("transition: topology too large for per-node parameters".into())
            }
            _ => {}
        }
        match (&self.emissions, nodes) {
            (NodeParams::PerNode(v), Some(n)) if v.len() != n => {
                report.push(format!("emission: {} per-node laws for {} nodes", v.len(), n))
            }
            (NodeParams::PerNode(_), None) => {
                report.push("emission: topology too large for per-node parameters".into())
            }
            _ => {}
        }

        let label = |kind: &str, i: usize, shared: bool, offset: usize| -> String {
            if shared {
                kind.to_string()
            } else {
                match self.topology.layout() {
                    Ok(l) if i + offset < l.len() => format!("{kind} (node {:?})", l.path(i + offset).to_string()),
                    _ => format!("{kind} #{}", i + 1),
                }
            }
        };

        let shared_t = self.transitions.is_shared();
        for (i, t) in self.transitions.iter().enumerate() {
            let what = label("transition", i, shared_t, 1);
            if t.nrows() != d || t.ncols() != d {
                report.push(format!("{what}: shape {}x{}, expected {d}x{d}", t.nrows(), t.ncols()));
            }
            check_stochastic_matrix(t, &what, &mut report);
        }

        let shared_e = self.emissions.is_shared();
        let mut kind = None;
        let mut alphabet = None;
        for (i, e) in self.emissions.iter().enumerate() {
            let what = label("emission", i, shared_e, 0);
            if e.states() != d {
                report.push(format!("{what}: {} states, expected {d}", e.states()));
            }
            match kind {
                None => kind = Some(e.kind()),
                Some(k) if k != e.kind() => report.push(format!("{what}: mixes {k} and {} emissions", e.kind())),
                _ => {}
            }
            if let Some(m) = e.alphabet() {
                match alphabet {
                    None => alphabet = Some(m),
                    Some(prev) if prev != m => report.push(format!("{what}: alphabet size {m}, expected {prev}")),
                    _ => {}
                }
            }
            e.check(&what, &mut report);
        }
        report
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn transitions(&self) -> &NodeParams<DMatrix<f64>> {
        &self.transitions
    }

    pub fn emissions(&self) -> &NodeParams<EmissionSpec> {
        &self.emissions
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    /// Transition matrix into `node` (breadth-first index, must not be the root).
    pub fn transition(&self, node: usize) -> &DMatrix<f64> {
        debug_assert!(node > 0, "the root has no incoming transition");
        self.transitions.at(node - 1)
    }

    pub fn emission(&self, node: usize) -> &EmissionSpec {
        self.emissions.at(node)
    }

    pub fn emission_kind(&self) -> EmissionKind {
        self.emissions.at(0).kind()
    }

    pub fn alphabet(&self) -> Option<usize> {
        self.emissions.at(0).alphabet()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.transitions.is_shared() && self.emissions.is_shared()
    }

    /// Shared parameters of a homogeneous model.
    pub fn shared(&self) -> Option<(&DMatrix<f64>, &EmissionSpec)> {
        match (&self.transitions, &self.emissions) {
            (NodeParams::Shared(t), NodeParams::Shared(e)) => Some((t, e)),
            _ => None,
        }
    }

    /// Converts a chain-shaped homogeneous tree back into an HMM.
    pub fn to_hmm(&self) -> Option<HmmModel> {
        let (children, depth) = self.topology.regularity()?;
        if children != 1 && depth > 1 {
            return None;
        }
        let (t, e) = self.shared()?;
        Some(HmmModel { length: depth, initial: self.initial.clone(), transition: t.clone(), emission: e.clone() })
    }
}

/// Homogeneous hidden Markov model over `S_{1:N}`, `X_{1:N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    length: usize,
    initial: DVector<f64>,
    transition: DMatrix<f64>,
    emission: EmissionSpec,
}

impl HmmModel {
    pub fn new(length: usize, initial: DVector<f64>, transition: DMatrix<f64>, emission: EmissionSpec) -> Result<Self> {
        let m = Self::new_unchecked(length, initial, transition, emission);
        m.validate().into_result()?;
        Ok(m)
    }

    pub fn new_unchecked(
        length: usize,
        initial: DVector<f64>,
        transition: DMatrix<f64>,
        emission: EmissionSpec,
    ) -> Self {
        HmmModel { length, initial, transition, emission }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.length == 0 {
            report.push("length: must be at least 1".into());
        }
        let d = self.initial.len();
        if d == 0 {
            report.push("initial: must have at least one state".into());
        }
        check_distribution(self.initial.as_slice(), "initial", &mut report);
        if self.transition.nrows() != d || self.transition.ncols() != d {
            report.push(format!(
                "transition: shape {}x{}, expected {d}x{d}",
                self.transition.nrows(),
                self.transition.ncols()
            ));
        }
        check_stochastic_matrix(&self.transition, "transition", &mut report);
        if self.emission.states() != d {
            report.push(format!("emission: {} states, expected {d}", self.emission.states()));
        }
        self.emission.check("emission", &mut report);
        report
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn alphabet(&self) -> Option<usize> {
        self.emission.alphabet()
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn emission(&self) -> &EmissionSpec {
        &self.emission
    }

    /// Same parameters over a different sequence length.
    pub fn with_length(&self, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(KldError::InvalidArgument("HMM length must be at least 1".into()));
        }
        Ok(HmmModel { length, ..self.clone() })
    }

    /// The chain-shaped tree with one hidden child per node.
    pub fn as_tree(&self) -> HmtModel {
        HmtModel {
            topology: Topology::Regular { children: 1, depth: self.length },
            initial: self.initial.clone(),
            transitions: NodeParams::Shared(self.transition.clone()),
            emissions: NodeParams::Shared(self.emission.clone()),
        }
    }
}

/// Observed emissions `x_{1:N}`, stored as 0-based symbol indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    symbols: Vec<usize>,
}

impl Evidence {
    pub fn new(symbols: Vec<usize>) -> Self {
        Evidence { symbols }
    }

    /// From 1-based external labels.
    pub fn from_one_based(labels: &[usize]) -> Result<Self> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                l.checked_sub(1)
                    .ok_or_else(|| KldError::Schema(format!("evidence position {}: symbols are 1-based", i + 1)))
            })
            .collect::<Result<Vec<_>>>()
            .map(Evidence::new)
    }

    /// Parses whitespace-separated 1-based symbol labels.
    pub fn parse(text: &str) -> Result<Self> {
        let labels = text
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| KldError::Parse(format!("evidence token {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_one_based(&labels)
    }

    pub fn to_text(&self) -> String {
        let parts: Vec<String> = self.symbols.iter().map(|s| (s + 1).to_string()).collect();
        parts.join(" ")
    }

    /// Ten-position blocks cycling through symbols 1, 2, 3: symbol 1 on
    /// positions 1-10, 31-40, 61-70, 91-100, symbol 2 on 11-20, 41-50, 71-80,
    /// symbol 3 on 21-30, 51-60, 81-90. Positions past 100 keep cycling.
    pub fn block_pattern(n: usize) -> Self {
        Evidence::new((0..n).map(|i| (i / 10) % 3).collect())
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.symbols.len() {
            return Err(KldError::InvalidArgument(format!(
                "evidence has {} symbols, {n} requested",
                self.symbols.len()
            )));
        }
        Ok(Evidence::new(self.symbols[..n].to_vec()))
    }

    /// Checks length and alphabet against a model.
    pub fn check_against(&self, model: &HmmModel) -> Result<()> {
        if self.len() != model.length() {
            return Err(KldError::DimensionMismatch(format!(
                "evidence length {} but model length {}",
                self.len(),
                model.length()
            )));
        }
        let m = model.alphabet().ok_or_else(|| KldError::Unsupported("evidence requires discrete emissions".into()))?;
        if let Some((i, s)) = self.symbols.iter().enumerate().find(|(_, &s)| s >= m) {
            return Err(KldError::Schema(format!(
                "evidence position {}: symbol {} outside alphabet 1..={m}",
                i + 1,
                s + 1
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_theta1() -> HmmModel {
        HmmModel::new(
            10,
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
            EmissionSpec::Discrete(DMatrix::from_row_slice(2, 3, &[0.1, 0.3, 0.6, 0.2, 0.1, 0.7])),
        )
        .unwrap()
    }

    #[test]
    fn reference_hmm_is_valid() {
        assert!(reference_theta1().validate().is_valid());
    }

    #[test]
    fn deterministic_model_is_valid() {
        let m = HmmModel::new_unchecked(
            4,
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::identity(2, 2),
            EmissionSpec::Discrete(DMatrix::identity(2, 2)),
        );
        assert!(m.validate().is_valid());
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let m = HmmModel::new_unchecked(
            3,
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.2, 0.8]),
            EmissionSpec::Discrete(DMatrix::identity(2, 2)),
        );
        let report = m.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("row 1 sums to 1.1"), "{report}");
    }

    #[test]
    fn gaussian_needs_positive_sd() {
        let m = HmmModel::new_unchecked(
            2,
            DVector::from_vec(vec![1.0]),
            DMatrix::identity(1, 1),
            EmissionSpec::centered_gaussian(vec![0.0]),
        );
        assert!(!m.validate().is_valid());
    }

    #[test]
    fn regular_layout_is_breadth_first() {
        let t = Topology::regular(2, 3).unwrap();
        let l = t.layout().unwrap();
        assert_eq!(l.len(), 7);
        let paths: Vec<String> = (0..7).map(|i| l.path(i).to_string()).collect();
        assert_eq!(paths, ["", "0", "1", "00", "01", "10", "11"]);
        assert_eq!(l.children(1), 3..5);
        assert!(l.is_leaf(6));
        assert_eq!(l.parent(5), Some(2));
    }

    #[test]
    fn general_topology_matches_regular() {
        let paths = ["11", "", "0", "1", "00", "01", "10"].iter().map(|p| NodePath::parse(p).unwrap());
        let g = Topology::general(paths).unwrap();
        assert_eq!(g.regularity(), Some((2, 3)));
        assert_eq!(*g.layout().unwrap(), *Topology::regular(2, 3).unwrap().layout().unwrap());
        assert!(g.same_shape(&Topology::regular(2, 3).unwrap()));
        assert!(!g.same_shape(&Topology::regular(3, 3).unwrap()));
    }

    #[test]
    fn general_topology_rejects_orphans() {
        let paths = ["", "01"].iter().map(|p| NodePath::parse(p).unwrap());
        assert!(matches!(Topology::general(paths), Err(KldError::Schema(_))));
        let paths = ["0"].iter().map(|p| NodePath::parse(p).unwrap());
        assert!(Topology::general(paths).is_err());
    }

    #[test]
    fn irregular_tree_is_detected() {
        let paths = ["", "0", "1", "00"].iter().map(|p| NodePath::parse(p).unwrap());
        let g = Topology::general(paths).unwrap();
        assert_eq!(g.regularity(), None);
        assert_eq!(g.depth(), 3);
    }

    #[test]
    fn as_tree_round_trips() {
        let hmm = reference_theta1();
        let tree = hmm.as_tree();
        assert_eq!(tree.topology().regularity(), Some((1, 10)));
        assert_eq!(tree.topology().layout().unwrap().len(), 10);
        assert_eq!(tree.to_hmm().unwrap(), hmm);
    }

    #[test]
    fn single_node_chain() {
        let hmm = reference_theta1().with_length(1).unwrap();
        let tree = hmm.as_tree();
        let l = tree.topology().layout().unwrap();
        assert_eq!(l.len(), 1);
        assert!(l.is_leaf(0));
    }

    #[test]
    fn block_pattern_layout() {
        let ev = Evidence::block_pattern(100);
        let labels: Vec<usize> = ev.symbols().iter().map(|s| s + 1).collect();
        assert!(labels[0..10].iter().all(|&s| s == 1));
        assert!(labels[10..20].iter().all(|&s| s == 2));
        assert!(labels[20..30].iter().all(|&s| s == 3));
        assert!(labels[90..100].iter().all(|&s| s == 1));
        assert_eq!(Evidence::block_pattern(35).symbols(), &ev.symbols()[..35]);
    }

    #[test]
    fn evidence_parsing() {
        let ev = Evidence::parse("1 1 1 2 2\n2 3 3 3 3\n").unwrap();
        assert_eq!(ev.symbols(), &[0, 0, 0, 1, 1, 1, 2, 2, 2, 2]);
        assert_eq!(ev.to_text(), "1 1 1 2 2 2 3 3 3 3");
        assert!(Evidence::parse("0 1").is_err());
        assert!(Evidence::parse("1 x").is_err());
        let bad = Evidence::parse("1 4 1 1 1 1 1 1 1 1").unwrap();
        assert!(bad.check_against(&reference_theta1()).is_err());
    }
}
