#![allow(dead_code)]

use hmt_kld::{EmissionSpec, HmmModel, HmtModel, NodeParams, Topology};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly positive random distribution.
pub fn dist(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn stochastic(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for (c, p) in dist(rng, cols).into_iter().enumerate() {
            m[(r, c)] = p;
        }
    }
    m
}

pub fn random_hmm(rng: &mut impl Rng, n: usize, d: usize, m: usize) -> HmmModel {
    HmmModel::new(
        n,
        DVector::from_vec(dist(rng, d)),
        stochastic(rng, d, d),
        EmissionSpec::Discrete(stochastic(rng, d, m)),
    )
    .unwrap()
}

/// Inhomogeneous discrete tree with independent parameters at every node.
pub fn random_tree(rng: &mut impl Rng, topology: Topology, d: usize, m: usize) -> HmtModel {
    let n = topology.node_count().unwrap();
    let transitions = (1..n).map(|_| stochastic(rng, d, d)).collect();
    let emissions = (0..n).map(|_| EmissionSpec::Discrete(stochastic(rng, d, m))).collect();
    HmtModel::new(
        topology,
        DVector::from_vec(dist(rng, d)),
        NodeParams::PerNode(transitions),
        NodeParams::PerNode(emissions),
    )
    .unwrap()
}

pub fn random_homogeneous_tree(rng: &mut impl Rng, children: usize, depth: usize, d: usize, m: usize) -> HmtModel {
    HmtModel::homogeneous(
        Topology::regular(children, depth).unwrap(),
        DVector::from_vec(dist(rng, d)),
        stochastic(rng, d, d),
        EmissionSpec::Discrete(stochastic(rng, d, m)),
    )
    .unwrap()
}

fn theta(p: [f64; 4], e: [f64; 6], n: usize) -> HmmModel {
    HmmModel::new(
        n,
        DVector::from_vec(vec![0.5, 0.5]),
        DMatrix::from_row_slice(2, 2, &p),
        EmissionSpec::Discrete(DMatrix::from_row_slice(2, 3, &e)),
    )
    .unwrap()
}

pub fn reference_theta1(n: usize) -> HmmModel {
    theta([0.9, 0.1, 0.2, 0.8], [0.1, 0.3, 0.6, 0.2, 0.1, 0.7], n)
}

pub fn reference_theta0(n: usize) -> HmmModel {
    theta([0.7, 0.3, 0.4, 0.6], [0.3, 0.5, 0.2, 0.6, 0.2, 0.2], n)
}

pub fn fixture(name: &str) -> String {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/");
    std::fs::read_to_string(format!("{path}{name}")).unwrap()
}

pub fn reference_hmt_pair() -> (HmtModel, HmtModel) {
    let load = |f| hmt_kld::format::load_model(&fixture(f)).unwrap().into_tree();
    (load("hmt_theta1.json"), load("hmt_theta0.json"))
}
