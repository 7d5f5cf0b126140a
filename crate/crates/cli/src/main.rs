use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmt_kld::format::{load_model, LoadedModel};
use hmt_kld::oracle::{brute_force_kld_joint, brute_force_kld_posterior, EnumerationBudget};
use hmt_kld::{
    do_bound, kld_exact_tree, kld_hmm_evidence, kld_hmm_fast, kld_hmm_no_evidence, kld_homogeneous_tree,
    kld_rate_with_nu, mc_kld_evidence, mc_kld_no_evidence, Evidence, HmmModel, HmtModel, KldError, McEstimate,
    SumMethod,
};

mod output;

use output::{fmt_num, CSV_HEADER};

#[derive(Debug, Parser)]
#[command(name = "hmt-kld", version, about = "Exact and Monte Carlo KLD between hidden Markov trees and chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact divergence with no evidence
    Exact(ExactArgs),
    /// Divergence rate and stationary law of model a
    Rate(PairArgs),
    /// The layered bound, which equals the exact divergence
    Bound(LengthArgs),
    /// Exact divergence between the posteriors given evidence
    EvidenceExact(EvidenceArgs),
    /// Monte Carlo estimate with a 95% interval
    Mc(McArgs),
    /// CSV of exact and Monte Carlo values over a range of lengths
    Sweep(SweepArgs),
    /// Check one or two model files
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct PairArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
}

#[derive(Debug, Args)]
struct LengthArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Override the chain length N of both HMMs
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
struct ExactArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Override the chain length N of both HMMs
    #[arg(long)]
    n: Option<usize>,
    /// Use the logarithmic-time spectral sum for HMMs
    #[arg(long, overrides_with = "no_fast")]
    fast: bool,
    /// Use the direct sum (default)
    #[arg(long, overrides_with = "fast")]
    no_fast: bool,
    /// Also enumerate every outcome (bounded by KLD_ENUM_BUDGET)
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Args)]
struct EvidenceArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Evidence file of 1-based symbols, or `blocks` for the ten-position block pattern
    #[arg(long)]
    evidence: String,
    /// Truncate the evidence to its first N symbols
    #[arg(long)]
    n: Option<usize>,
    /// Also enumerate every hidden path (bounded by KLD_ENUM_BUDGET)
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Args)]
struct McArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimate the posterior divergence given this evidence (file or `blocks`)
    #[arg(long)]
    evidence: Option<String>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, default_value_t = 1)]
    n_min: usize,
    #[arg(long)]
    n_max: usize,
    #[arg(long, default_value_t = 1)]
    step: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Row N uses seed + N
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep the posterior divergence given this evidence (file or `blocks`)
    #[arg(long)]
    evidence: Option<String>,
    #[arg(long, overrides_with = "no_fast")]
    fast: bool,
    #[arg(long, overrides_with = "fast")]
    no_fast: bool,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<KldError> for Failure {
    fn from(e: KldError) -> Self {
        let code = match e {
            KldError::NoUniqueStationary(_) | KldError::ZeroLikelihood { .. } | KldError::NonFinite(_) => 3,
            KldError::BudgetExceeded { .. } => 4,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<LoadedModel, Failure> {
    load_model(&read(path)?).map_err(|e| {
        let f = Failure::from(e);
        Failure { message: format!("{}: {}", path.display(), f.message), ..f }
    })
}

fn load_pair(pair: &PairArgs) -> Result<(LoadedModel, LoadedModel), Failure> {
    Ok((load(&pair.model_a)?, load(&pair.model_b)?))
}

fn as_hmm(m: LoadedModel, what: &str) -> Result<HmmModel, Failure> {
    match m {
        LoadedModel::Hmm(h) => Ok(h),
        LoadedModel::Hmt(t) => t.to_hmm().ok_or_else(|| usage(format!("{what} needs HMM models"))),
    }
}

fn hmm_pair(pair: &PairArgs, n: Option<usize>, what: &str) -> Result<(HmmModel, HmmModel), Failure> {
    let (a, b) = load_pair(pair)?;
    let (mut a, mut b) = (as_hmm(a, what)?, as_hmm(b, what)?);
    if let Some(n) = n {
        a = a.with_length(n)?;
        b = b.with_length(n)?;
    }
    Ok((a, b))
}

fn budget() -> Result<EnumerationBudget, Failure> {
    Ok(EnumerationBudget::from_env()?)
}

fn load_evidence(spec: &str, n: Option<usize>, model_length: usize) -> Result<Evidence, Failure> {
    if spec == "blocks" {
        return Ok(Evidence::block_pattern(n.unwrap_or(model_length)));
    }
    let ev = Evidence::parse(&read(Path::new(spec))?)?;
    Ok(match n {
        Some(n) => ev.truncated(n)?,
        None => ev,
    })
}

/// Both models resized to the evidence length.
fn fit_to_evidence(a: &HmmModel, b: &HmmModel, ev: &Evidence) -> Result<(HmmModel, HmmModel), Failure> {
    Ok((a.with_length(ev.len())?, b.with_length(ev.len())?))
}

fn report_infinite(kld: &hmt_kld::Kld) {
    if let Some(p) = &kld.infinite_at {
        let name = if p.is_root() { "root".to_string() } else { format!("node {p}") };
        eprintln!("divergence is infinite: support mismatch at {name}");
    }
}

fn cmd_exact(args: ExactArgs) -> CmdResult {
    let (a, b) = load_pair(&args.pair)?;
    let (value, method, oracle) = match (a, b) {
        (LoadedModel::Hmm(a), LoadedModel::Hmm(b)) => {
            let (a, b) = match args.n {
                Some(n) => (a.with_length(n)?, b.with_length(n)?),
                None => (a, b),
            };
            let (value, method) = if args.fast {
                let f = kld_hmm_fast(&a, &b)?;
                if let Some(d) = &f.diagnostic {
                    eprintln!("fast path unavailable: {d}");
                }
                (f.value, if f.method == SumMethod::Spectral { "fast-path" } else { "closed-form" })
            } else {
                (kld_hmm_no_evidence(&a, &b)?, "closed-form")
            };
            let oracle = if args.oracle {
                Some(brute_force_kld_joint(&a.as_tree(), &b.as_tree(), budget()?)?.kld)
            } else {
                None
            };
            (value, method, oracle)
        }
        (a, b) => {
            if args.n.is_some() {
                return Err(usage("--n applies to HMM models only"));
            }
            let (a, b): (HmtModel, HmtModel) = (a.into_tree(), b.into_tree());
            let homogeneous = a.is_homogeneous() && b.is_homogeneous();
            let (kld, method) = if homogeneous && a.topology().regularity().is_some() {
                (kld_homogeneous_tree(&a, &b)?, "closed-form")
            } else {
                (kld_exact_tree(&a, &b)?, "tree-recursion")
            };
            report_infinite(&kld);
            let oracle = if args.oracle { Some(brute_force_kld_joint(&a, &b, budget()?)?.kld) } else { None };
            (kld.value, method, oracle)
        }
    };
    match oracle {
        Some(o) => println!("exact_kld={} method={method} oracle_kld={}", fmt_num(value), fmt_num(o)),
        None => println!("exact_kld={} method={method}", fmt_num(value)),
    }
    Ok(())
}

fn cmd_rate(args: PairArgs) -> CmdResult {
    let (a, b) = hmm_pair(&args, None, "rate")?;
    let (rate, nu) = kld_rate_with_nu(&a, &b)?;
    let nu: Vec<String> = nu.as_slice().iter().map(|x| format!("{x:.6}")).collect();
    println!("nu={} rate={}", nu.join(","), fmt_num(rate));
    Ok(())
}

fn cmd_bound(args: LengthArgs) -> CmdResult {
    let (a, b) = hmm_pair(&args.pair, args.n, "bound")?;
    println!("do_bound={}", fmt_num(do_bound(&a, &b)?));
    Ok(())
}

fn cmd_evidence_exact(args: EvidenceArgs) -> CmdResult {
    let (a, b) = hmm_pair(&args.pair, None, "evidence-exact")?;
    let ev = load_evidence(&args.evidence, args.n, a.length())?;
    let (a, b) = fit_to_evidence(&a, &b, &ev)?;
    let value = kld_hmm_evidence(&a, &b, &ev)?;
    if args.oracle {
        let o = brute_force_kld_posterior(&a, &b, &ev, budget()?)?;
        println!("evidence_kld={} oracle_kld={}", fmt_num(value), fmt_num(o.kld));
    } else {
        println!("evidence_kld={}", fmt_num(value));
    }
    Ok(())
}

fn print_estimate(est: &McEstimate) {
    println!(
        "mc_mean={} sd={} ci_lo={} ci_hi={} trials={} seed={}",
        fmt_num(est.mean),
        fmt_num(est.sd),
        fmt_num(est.ci_lo),
        fmt_num(est.ci_hi),
        est.trials,
        est.seed
    );
    if est.infinite_draws > 0 {
        eprintln!("{} draws had zero probability under model b", est.infinite_draws);
    }
}

fn cmd_mc(args: McArgs) -> CmdResult {
    let est = match &args.evidence {
        Some(spec) => {
            let (a, b) = hmm_pair(&args.pair, None, "mc --evidence")?;
            let ev = load_evidence(spec, args.n, a.length())?;
            let (a, b) = fit_to_evidence(&a, &b, &ev)?;
            mc_kld_evidence(&a, &b, &ev, args.trials, args.seed)?
        }
        None => {
            let (a, b) = load_pair(&args.pair)?;
            let (a, b) = match (a, b, args.n) {
                (LoadedModel::Hmm(a), LoadedModel::Hmm(b), Some(n)) => {
                    (a.with_length(n)?.as_tree(), b.with_length(n)?.as_tree())
                }
                (_, _, Some(_)) => return Err(usage("--n applies to HMM models only")),
                (a, b, None) => (a.into_tree(), b.into_tree()),
            };
            mc_kld_no_evidence(&a, &b, args.trials, args.seed)?
        }
    };
    print_estimate(&est);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    if args.n_min < 1 || args.n_min > args.n_max {
        return Err(usage(format!("need 1 <= n-min <= n-max, got {}..{}", args.n_min, args.n_max)));
    }
    if args.step == 0 {
        return Err(usage("--step must be positive"));
    }
    if args.trials < 2 {
        return Err(usage("--trials must be at least 2"));
    }
    let (a, b) = hmm_pair(&args.pair, None, "sweep")?;
    let evidence = match &args.evidence {
        Some(spec) => {
            let full = load_evidence(spec, Some(args.n_max), a.length())?;
            Some(full)
        }
        None => None,
    };
    let rate = if evidence.is_none() { Some(kld_rate_with_nu(&a, &b)?.0) } else { None };

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for n in (args.n_min..=args.n_max).step_by(args.step) {
        let seed = args.seed.wrapping_add(n as u64);
        let (a, b) = (a.with_length(n)?, b.with_length(n)?);
        let (exact, est) = match &evidence {
            Some(full) => {
                let ev = full.truncated(n)?;
                (kld_hmm_evidence(&a, &b, &ev)?, mc_kld_evidence(&a, &b, &ev, args.trials, seed)?)
            }
            None => {
                let exact = if args.fast { kld_hmm_fast(&a, &b)?.value } else { kld_hmm_no_evidence(&a, &b)? };
                (exact, mc_kld_no_evidence(&a.as_tree(), &b.as_tree(), args.trials, seed)?)
            }
        };
        let row = [
            n.to_string(),
            fmt_num(exact),
            fmt_num(exact / n as f64),
            rate.map(fmt_num).unwrap_or_default(),
            fmt_num(est.mean),
            fmt_num(est.ci_lo),
            fmt_num(est.ci_hi),
            est.trials.to_string(),
            seed.to_string(),
        ];
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    match &args.out {
        Some(path) => fs::write(path, csv).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => std::io::stdout().write_all(csv.as_bytes()).map_err(|e| usage(e.to_string()))?,
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    let mut failure = None;
    for (label, path) in [("model a", Some(&args.model_a)), ("model b", args.model_b.as_ref())] {
        let Some(path) = path else { continue };
        match load(path) {
            Ok(m) => {
                let kind = match m {
                    LoadedModel::Hmm(_) => "hmm",
                    LoadedModel::Hmt(_) => "hmt",
                };
                println!("{label}: valid {kind}");
            }
            Err(f) => {
                println!("{label}: invalid");
                failure = Some(f);
            }
        }
    }
    failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Exact(a) => cmd_exact(a),
        Command::Rate(a) => cmd_rate(a),
        Command::Bound(a) => cmd_bound(a),
        Command::EvidenceExact(a) => cmd_evidence_exact(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
