//! Acceptance criteria. Every criterion prints one `PASS`/`FAIL` line with
//! the measured values; the run fails if any criterion does.
//!
//! Run with `cargo test -p hmt-kld-cli --test acceptance`.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hmt_kld::divergence::local_k_vector;
use hmt_kld::format::{load_model, LoadedModel};
use hmt_kld::oracle::brute_force_path_posterior;
use hmt_kld::{
    brute_force_kld_joint, brute_force_kld_posterior, do_bound, kld_exact_tree, kld_hmm_evidence, kld_hmm_fast,
    kld_hmm_no_evidence, kld_rate, mc_kld_evidence, mc_kld_no_evidence, stationary_distribution, EmissionSpec,
    EnumerationBudget, Evidence, HmmModel, HmtModel, NodeParams, SumMethod, Topology,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    title: &'static str,
    ok: bool,
    detail: String,
}

fn verdict(id: u32, title: &'static str, ok: bool, detail: String) -> Outcome {
    Outcome { id, title, ok, detail }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn load(name: &str) -> LoadedModel {
    load_model(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

fn hmt_pair() -> (HmtModel, HmtModel) {
    (load("hmt_theta1.json").into_tree(), load("hmt_theta0.json").into_tree())
}

fn hmm(name: &str) -> HmmModel {
    match load(name) {
        LoadedModel::Hmm(h) => h,
        LoadedModel::Hmt(_) => panic!("{name} is not an HMM"),
    }
}

fn hmm_pair(n: usize) -> (HmmModel, HmmModel) {
    (hmm("hmm_theta1.json").with_length(n).unwrap(), hmm("hmm_theta0.json").with_length(n).unwrap())
}

fn dist(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn stochastic(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for (c, p) in dist(rng, cols).into_iter().enumerate() {
            m[(r, c)] = p;
        }
    }
    m
}

fn random_hmm(rng: &mut impl Rng, n: usize, d: usize, m: usize) -> HmmModel {
    HmmModel::new(
        n,
        DVector::from_vec(dist(rng, d)),
        stochastic(rng, d, d),
        EmissionSpec::Discrete(stochastic(rng, d, m)),
    )
    .unwrap()
}

fn random_binary_tree(rng: &mut impl Rng, depth: usize) -> HmtModel {
    let topology = Topology::regular(2, depth).unwrap();
    let n = topology.node_count().unwrap();
    let transitions = (1..n).map(|_| stochastic(rng, 2, 2)).collect();
    let emissions = (0..n).map(|_| EmissionSpec::Discrete(stochastic(rng, 2, 2))).collect();
    HmtModel::new(
        topology,
        DVector::from_vec(dist(rng, 2)),
        NodeParams::PerNode(transitions),
        NodeParams::PerNode(emissions),
    )
    .unwrap()
}

fn criterion_01_hmt_golden_value() -> Outcome {
    let (a, b) = hmt_pair();
    let start = Instant::now();
    let d = kld_exact_tree(&a, &b).unwrap().value;
    let elapsed = start.elapsed();
    let ok = (d - 0.690).abs() <= 0.001 && elapsed < Duration::from_secs(1);
    verdict(1, "HMT golden value", ok, format!("exact KLD = {d:.6} (target 0.690 ± 0.001) in {elapsed:?}"))
}

fn criterion_02_table_reproduction() -> Outcome {
    let (a, b) = hmt_pair();
    let start = Instant::now();
    let inside = (0..100u64)
        .filter(|&seed| {
            let est = mc_kld_no_evidence(&a, &b, 100_000, seed).unwrap();
            (0.684..=0.696).contains(&est.mean)
        })
        .count();
    let min_half = (0..100u64)
        .map(|seed| mc_kld_no_evidence(&a, &b, 100, seed).unwrap().half_width())
        .fold(f64::INFINITY, f64::min);
    let elapsed = start.elapsed();
    let ok = inside >= 95 && min_half >= 0.1 && elapsed < Duration::from_secs(120);
    verdict(
        2,
        "Monte Carlo table",
        ok,
        format!(
            "{inside}/100 seeds with 1e5-trial mean in [0.684, 0.696]; smallest 1e2-trial half-width {min_half:.4} \
             over 100 seeds; {elapsed:?}"
        ),
    )
}

fn criterion_03_stationary_law() -> Outcome {
    let (a, _) = hmm_pair(10);
    let nu = stationary_distribution(a.transition()).unwrap();
    let err = (nu.as_slice()[0] - 2.0 / 3.0).abs().max((nu.as_slice()[1] - 1.0 / 3.0).abs());
    verdict(3, "stationary law", err <= 1e-12, format!("nu = {:?}, max error {err:.2e}", nu.as_slice()))
}

fn criterion_04_counterexample() -> Outcome {
    let (a, b) = hmm_pair(10);
    let x = Evidence::parse(&std::fs::read_to_string(fixture("counterexample_x.txt")).unwrap()).unwrap();
    let s: Vec<usize> = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2].iter().map(|v| v - 1).collect();
    let budget = EnumerationBudget::default();
    let p1 = brute_force_path_posterior(&a, &x, &s, budget).unwrap();
    let p0 = brute_force_path_posterior(&b, &x, &s, budget).unwrap();
    let d = kld_hmm_no_evidence(&a, &b).unwrap();
    let u = do_bound(&a, &b).unwrap();
    let ok = (p1 - 0.91).abs() <= 0.005
        && (p0 - 0.10).abs() <= 0.005
        && (d - 0.071).abs() <= 0.0005
        && (u - 0.071).abs() <= 0.0005;
    verdict(
        4,
        "counterexample",
        ok,
        format!(
            "P1(s|x) = {p1:.6} (target 0.91), P0(s|x) = {p0:.6} (target 0.10), D = {d:.6}, U = {u:.6} (target 0.071)"
        ),
    )
}

fn criterion_05_layered_bound_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, d, m) = (rng.random_range(1..=50), rng.random_range(1..=4), rng.random_range(1..=4));
        let a = random_hmm(&mut rng, n, d, m);
        let b = random_hmm(&mut rng, n, d, m);
        worst = worst.max((do_bound(&a, &b).unwrap() - kld_hmm_no_evidence(&a, &b).unwrap()).abs());
    }
    verdict(5, "layered bound identity", worst <= 1e-12, format!("max |U - D| = {worst:.2e} over 100 pairs"))
}

fn criterion_06_oracle_no_evidence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let budget = EnumerationBudget::default();
    let mut worst_chain = 0.0f64;
    for _ in 0..50 {
        let (n, d, m) = (rng.random_range(1..=4), rng.random_range(1..=2), rng.random_range(1..=3));
        let a = random_hmm(&mut rng, n, d, m);
        let b = random_hmm(&mut rng, n, d, m);
        let oracle = brute_force_kld_joint(&a.as_tree(), &b.as_tree(), budget).unwrap().kld;
        worst_chain = worst_chain.max((kld_hmm_no_evidence(&a, &b).unwrap() - oracle).abs());
    }
    let mut worst_tree = 0.0f64;
    for i in 0..50 {
        let depth = 1 + i % 3;
        let a = random_binary_tree(&mut rng, depth);
        let b = random_binary_tree(&mut rng, depth);
        let oracle = brute_force_kld_joint(&a, &b, budget).unwrap().kld;
        worst_tree = worst_tree.max((kld_exact_tree(&a, &b).unwrap().value - oracle).abs());
    }
    let ok = worst_chain <= 1e-10 && worst_tree <= 1e-10;
    verdict(
        6,
        "oracle equivalence without evidence",
        ok,
        format!("max error {worst_chain:.2e} on 50 chains, {worst_tree:.2e} on 50 binary trees"),
    )
}

fn criterion_07_oracle_evidence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..=10), rng.random_range(1..=3));
        let a = random_hmm(&mut rng, n, 2, m);
        let b = random_hmm(&mut rng, n, 2, m);
        let ev = Evidence::new((0..n).map(|_| rng.random_range(0..m)).collect());
        let oracle = brute_force_kld_posterior(&a, &b, &ev, EnumerationBudget::default()).unwrap().kld;
        worst = worst.max((kld_hmm_evidence(&a, &b, &ev).unwrap() - oracle).abs());
    }
    verdict(7, "oracle equivalence with evidence", worst <= 1e-10, format!("max error {worst:.2e} on 50 instances"))
}

/// Fastest of several repetitions.
fn best_time(reps: usize, mut f: impl FnMut()) -> Duration {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn criterion_08_fast_path() -> Outcome {
    let mut worst = 0.0f64;
    let mut spectral = true;
    for n in [100, 10_000, 1_000_000] {
        let (a, b) = hmm_pair(n);
        let fast = kld_hmm_fast(&a, &b).unwrap();
        spectral &= fast.method == SumMethod::Spectral;
        let direct = kld_hmm_no_evidence(&a, &b).unwrap();
        worst = worst.max(((fast.value - direct) / direct).abs());
    }
    let (a3, b3) = hmm_pair(1_000);
    let (a6, b6) = hmm_pair(1_000_000);
    let t3 = best_time(200, || {
        kld_hmm_fast(&a3, &b3).unwrap();
    });
    let t6 = best_time(200, || {
        kld_hmm_fast(&a6, &b6).unwrap();
    });
    let ok = spectral && worst <= 1e-9 && t6 < 10 * t3;
    verdict(
        8,
        "fast path",
        ok,
        format!("max relative error {worst:.2e}, spectral = {spectral}, t(1e6) = {t6:?} vs t(1e3) = {t3:?}"),
    )
}

fn criterion_09_rate_convergence() -> Outcome {
    let (a, b) = hmm_pair(1);
    let rate = kld_rate(&a, &b).unwrap();
    let k = local_k_vector(a.transition(), b.transition(), a.emission(), b.emission()).unwrap();
    let nu = stationary_distribution(a.transition()).unwrap();
    let nu_k: f64 = nu.as_slice().iter().zip(k.entries()).map(|(n, k)| n * k).sum();
    let gap = |n: usize| {
        let (a, b) = hmm_pair(n);
        (kld_hmm_no_evidence(&a, &b).unwrap() / n as f64 - nu_k).abs()
    };
    let at_100 = gap(100);
    let gaps: Vec<f64> = (10..=100).map(gap).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let ok = at_100 <= 0.01 && monotone && (rate - nu_k).abs() <= 1e-15;
    verdict(
        9,
        "rate convergence",
        ok,
        format!("|D/N - nu.k| = {at_100:.2e} at N = 100, monotone over N = 10..100: {monotone}, rate = {rate:.9}"),
    )
}

fn criterion_10_block_evidence_coverage() -> Outcome {
    let (a, b) = hmm_pair(100);
    let seed = 0u64;
    let mut covered = 0;
    let mut misses = Vec::new();
    for n in (5..=100).step_by(5) {
        let (a, b) = (a.with_length(n).unwrap(), b.with_length(n).unwrap());
        let ev = Evidence::block_pattern(n);
        let exact = kld_hmm_evidence(&a, &b, &ev).unwrap();
        let est = mc_kld_evidence(&a, &b, &ev, 1000, seed + n as u64).unwrap();
        if est.contains(exact) {
            covered += 1;
        } else {
            misses.push(n);
        }
    }
    verdict(
        10,
        "block evidence coverage",
        covered >= 18,
        format!("{covered}/20 intervals contain the exact value, misses at N = {misses:?}"),
    )
}

fn run_cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_hmt-kld")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_11_reproducibility() -> Outcome {
    let (ta, tb) = (fixture("hmt_theta1.json"), fixture("hmt_theta0.json"));
    let (ha, hb) = (fixture("hmm_theta1.json"), fixture("hmm_theta0.json"));
    let (ta, tb, ha, hb) = (ta.to_str().unwrap(), tb.to_str().unwrap(), ha.to_str().unwrap(), hb.to_str().unwrap());
    let commands: Vec<Vec<&str>> = vec![
        vec!["mc", "--model-a", ta, "--model-b", tb, "--trials", "20000", "--seed", "42"],
        vec![
            "mc",
            "--model-a",
            ha,
            "--model-b",
            hb,
            "--trials",
            "5000",
            "--seed",
            "42",
            "--evidence",
            "blocks",
            "--n",
            "60",
        ],
        vec![
            "sweep",
            "--model-a",
            ha,
            "--model-b",
            hb,
            "--n-min",
            "5",
            "--n-max",
            "50",
            "--step",
            "5",
            "--trials",
            "500",
            "--seed",
            "9",
        ],
    ];
    let mut identical = 0;
    for args in &commands {
        if run_cli(args) == run_cli(args) {
            identical += 1;
        }
    }
    verdict(
        11,
        "reproducibility",
        identical == commands.len(),
        format!("{identical}/{} commands bitwise identical across reruns", commands.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 11] = [
        criterion_01_hmt_golden_value,
        criterion_02_table_reproduction,
        criterion_03_stationary_law,
        criterion_04_counterexample,
        criterion_05_layered_bound_identity,
        criterion_06_oracle_no_evidence,
        criterion_07_oracle_evidence,
        criterion_08_fast_path,
        criterion_09_rate_convergence,
        criterion_10_block_evidence_coverage,
        criterion_11_reproducibility,
    ];
    let mut failed = 0;
    for criterion in criteria {
        let o = criterion();
        println!("{} criterion {} ({}): {}", if o.ok { "PASS" } else { "FAIL" }, o.id, o.title, o.detail);
        failed += usize::from(!o.ok);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
