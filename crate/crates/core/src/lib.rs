//! Exact Kullback-Leibler divergence between hidden Markov trees and hidden
//! Markov models, with Monte Carlo and enumeration cross-checks.
//!
//! All divergences are in nats.

pub mod divergence;
pub mod error;
pub mod format;
pub mod hmm_exact;
pub mod hmt_exact;
pub mod model;
pub mod monte_carlo;
pub mod oracle;

pub use error::{KldError, Result, Side};
pub use hmm_exact::{
    do_bound, kld_hmm_evidence, kld_hmm_fast, kld_hmm_no_evidence, kld_rate, kld_rate_with_nu, stationary_distribution,
    FastKld, StationaryDistribution, SumMethod,
};
pub use hmt_exact::{inward_pass, kld_exact_tree, kld_homogeneous_tree, InwardTable, Kld};
pub use model::{EmissionKind, EmissionSpec, Evidence, HmmModel, HmtModel, NodeParams, NodePath, Topology};
pub use monte_carlo::{mc_kld_evidence, mc_kld_no_evidence, McEstimate};
pub use oracle::{brute_force_kld_joint, brute_force_kld_posterior, EnumerationBudget, OracleKld};
