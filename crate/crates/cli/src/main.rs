use clap::{Args, Parser, Subcommand, ValueEnum};
use odrs_core::apps::coloring::{default_c, edge_color_online, verify_coloring};
use odrs_core::apps::cover::{cover_trials, round_multistage_cover, verify_cover};
use odrs_core::bench::{lb_adversary, lb_constant, monte_carlo_edge_probs, three_node_impossibility, RoundReport};
use odrs_core::crs::{balance_ratio_detail, build_selector, SupportDistribution};
use odrs_core::exact::edge_match_probs;
use odrs_core::instance::{self, CoverInstance, MatchingInstance, MultigraphInstance, ValidationReport};
use odrs_core::odrs::{Algorithm, OdrsScheme};
use odrs_core::scaling::{optimize_params, ScalingParams, Variant};
use odrs_core::stochastic::eval_vs_lp;
use odrs_core::{Error, Result};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "odrs-lab", version, about = "Online dependent rounding experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check an instance file against its schema invariants
    Validate {
        file: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Generate an instance
    Gen(GenArgs),
    /// Round an instance by Monte Carlo or exactly
    Round(RoundArgs),
    /// Search (ε, δ) maximizing the guaranteed ratio
    OptimizeParams {
        #[arg(long, default_value = "matching")]
        variant: Variant,
    },
    /// Balance ratio and selection marginals of a bidder distribution
    Crs {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        v: PathBuf,
    },
    /// Correlation adversary and the three-node harness
    Lowerbound(LbArgs),
    /// Online edge coloring of a multigraph
    Color(ColorArgs),
    /// Multi-stage cover rounding
    Cover(CoverArgs),
    /// Convert a saved round report
    Report {
        file: PathBuf,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Matching,
    Multigraph,
    Cover,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Star,
    LbPrefix,
    Random,
    RandomB,
    Stochastic,
    Multigraph,
    Cover,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    t: usize,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 3)]
    max_b: u32,
    #[arg(long, default_value_t = 256)]
    delta: u32,
    /// matchings summed (multigraph) or stages (cover)
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// hyperedge count
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// hyperedge size
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    demand: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Alg {
    Warmup,
    Odrs,
    OdrsB,
    Stochastic,
}

#[derive(Args)]
struct RoundArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "odrs")]
    alg: Alg,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    n_runs: usize,
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LbArgs {
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 200_000)]
    probe: usize,
    #[arg(long, default_value_t = 1_000_000)]
    eval: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "odrs")]
    alg: Alg,
    /// also sample the three-node harness with this many runs
    #[arg(long)]
    three_node_runs: Option<usize>,
}

#[derive(Args)]
struct ColorArgs {
    input: PathBuf,
    #[arg(long)]
    c: Option<u32>,
    /// declared maximum degree used by the rounds (defaults to the instance's)
    #[arg(long)]
    delta_cap: Option<u32>,
    #[arg(long, value_enum, default_value = "odrs")]
    alg: Alg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoverArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// run this many independent trials and report aggregate statistics
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn emit(text: String, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text + "\n")?),
        None => say(&text),
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn params_for(variant: Variant, eps: Option<f64>, delta: Option<f64>) -> Result<ScalingParams> {
    match (eps, delta) {
        (None, None) => Ok(optimize_params(variant).params()),
        (e, d) => ScalingParams::new(e.unwrap_or(0.0), d.unwrap_or(0.0), variant),
    }
}

fn algorithm(alg: Alg) -> Result<Algorithm> {
    match alg {
        Alg::Warmup => Ok(Algorithm::Warmup),
        Alg::Odrs => Ok(Algorithm::Odrs),
        Alg::OdrsB => Ok(Algorithm::OdrsB),
        Alg::Stochastic => Err(Error::Domain("stochastic is only available for `round`".into())),
    }
}

fn detect(text: &str) -> Result<Kind> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    if v.get("n_offline").is_some() {
        Ok(Kind::Matching)
    } else if v.get("left").is_some() {
        Ok(Kind::Multigraph)
    } else if v.get("xstar").is_some() {
        Ok(Kind::Cover)
    } else {
        Err(Error::Validation("unrecognized instance schema".into()))
    }
}

fn validate(file: &Path, kind: Option<Kind>) -> Result<()> {
    let text = read(file)?;
    let kind = match kind {
        Some(k) => k,
        None => detect(&text)?,
    };
    let rep: ValidationReport = match kind {
        Kind::Matching => MatchingInstance::from_json(&text)?.validate(),
        Kind::Multigraph => serde_json::from_str::<MultigraphInstance>(&text)?.validate(),
        Kind::Cover => serde_json::from_str::<CoverInstance>(&text)?.validate(),
    };
    say(&pretty(&json!({ "valid": rep.is_valid(), "violations": rep.violations })))?;
    rep.into_result()
}

fn gen(a: &GenArgs) -> Result<()> {
    let text = match a.family {
        Family::Star => instance::gen_uniform_star(a.n)?.to_json(),
        Family::LbPrefix => instance::gen_lb_prefix(a.n)?.to_json(),
        Family::Random => instance::gen_random(a.n, a.t, a.density, a.seed)?.to_json(),
        Family::RandomB => instance::gen_random_b(a.n, a.t, a.density, a.max_b, a.seed)?.to_json(),
        Family::Stochastic => instance::gen_stochastic(a.n, a.t, a.density, a.seed)?.to_json(),
        Family::Multigraph => pretty(&instance::gen_multigraph(a.n, a.delta, a.k, a.seed)?),
        Family::Cover => pretty(&instance::gen_cover(a.n, a.m, a.d, a.demand, a.k, a.seed)?),
    };
    emit(text, &a.out)
}

fn round(a: &RoundArgs) -> Result<()> {
    let inst = MatchingInstance::from_json(&read(&a.input)?)?;
    if a.alg == Alg::Stochastic {
        let params = params_for(Variant::Matching, a.eps, a.delta)?;
        let ev = eval_vs_lp(&inst, &params, a.n_runs, a.seed)?;
        return emit(pretty(&ev), &a.out);
    }
    inst.validate().into_result()?;
    let alg = algorithm(a.alg)?;
    let params = match alg {
        Algorithm::Warmup => ScalingParams::identity(Variant::Matching),
        _ => params_for(alg.variant(), a.eps, a.delta)?,
    };
    let name = format!("{:?}", alg).to_lowercase();
    let mut rep = if a.exact {
        let t = edge_match_probs(&inst, alg, &params)?;
        let probs = {
            let mut p: Vec<Vec<f64>> = inst.arrivals.iter().map(|a| vec![0.0; a.edges.len()]).collect();
            for e in &t.edges {
                let k = inst.arrivals[e.arrival].edges.iter().position(|x| x.i == e.offline).expect("edge");
                p[e.arrival][k] = e.prob;
            }
            p
        };
        RoundReport::from_exact(&name, &inst, &probs, params.eps, params.delta)
    } else {
        let scheme = OdrsScheme { algorithm: alg, params };
        monte_carlo_edge_probs(&scheme, &inst, a.n_runs, a.seed)?
    };
    rep.eps = params.eps;
    rep.delta = params.delta;
    emit(if a.csv { rep.to_csv().trim_end().to_string() } else { pretty(&rep) }, &a.out)
}

fn crs(dist: &Path, v: &Path) -> Result<()> {
    let d = SupportDistribution::from_json(&read(dist)?)?;
    let v: Vec<f64> = serde_json::from_str(&read(v)?)?;
    let br = balance_ratio_detail(&d, &v)?;
    let rule = build_selector(&d, &v)?;
    let marg = rule.selection_marginals(&d);
    let targets: Vec<f64> = v.iter().map(|x| br.alpha * x).collect();
    say(&pretty(&json!({
        "alpha": br.alpha,
        "argmin": (0..d.elements.len()).filter(|i| br.argmin >> i & 1 == 1).map(|i| d.elements[i]).collect::<Vec<_>>(),
        "elements": d.elements,
        "marginals": marg,
        "targets": targets,
    })))
}

fn lowerbound(a: &LbArgs) -> Result<()> {
    let alg = algorithm(a.alg)?;
    let params = match alg {
        Algorithm::Warmup => ScalingParams::identity(Variant::Matching),
        _ => optimize_params(alg.variant()).params(),
    };
    let scheme = OdrsScheme { algorithm: alg, params };
    let (p, residual) = lb_constant();
    let adv = lb_adversary(&scheme, a.n, a.probe, a.eval, a.seed)?;
    let three = three_node_impossibility(&scheme, a.three_node_runs, a.seed)?;
    say(&pretty(&json!({ "p": p, "root_residual": residual, "adversary": adv, "three_node": three })))
}

fn color(a: &ColorArgs) -> Result<()> {
    let mut mg: MultigraphInstance = serde_json::from_str(&read(&a.input)?)?;
    if let Some(d) = a.delta_cap {
        mg.delta = d;
    }
    mg.validate().into_result()?;
    let alg = algorithm(a.alg)?;
    let params = match alg {
        Algorithm::Warmup => ScalingParams::identity(Variant::Matching),
        _ => optimize_params(Variant::Matching).params(),
    };
    let c = a.c.unwrap_or_else(|| default_c(mg.left + mg.right));
    let col = edge_color_online(&mg, c, alg, &params, a.seed)?;
    let rep = verify_coloring(&mg, &col);
    if a.csv {
        emit(col.to_csv(&mg).trim_end().to_string(), &a.out)
    } else {
        let body = json!({
            "c": c,
            "rounds": col.rounds,
            "per_round": col.per_round,
            "matcher_colors": col.matcher_colors,
            "report": rep,
            "colors": col.colors,
        });
        emit(pretty(&body), &a.out)
    }
}

fn cover(a: &CoverArgs) -> Result<()> {
    let cov: CoverInstance = serde_json::from_str(&read(&a.input)?)?;
    cov.validate().into_result()?;
    match a.trials {
        Some(n) => emit(pretty(&cover_trials(&cov, n, a.seed)?), &a.out),
        None => {
            let sol = round_multistage_cover(&cov, a.seed)?;
            let rep = verify_cover(&cov, &sol.y);
            emit(pretty(&json!({ "solution": sol, "report": rep })), &a.out)
        }
    }
}

fn report(file: &Path, csv: bool) -> Result<()> {
    let rep: RoundReport = serde_json::from_str(&read(file)?)?;
    say(&if csv { rep.to_csv().trim_end().to_string() } else { pretty(&rep) })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Validate { file, kind } => validate(&file, kind),
        Cmd::Gen(a) => gen(&a),
        Cmd::Round(a) => round(&a),
        Cmd::OptimizeParams { variant } => say(&pretty(&optimize_params(variant))),
        Cmd::Crs { dist, v } => crs(&dist, &v),
        Cmd::Lowerbound(a) => lowerbound(&a),
        Cmd::Color(a) => color(&a),
        Cmd::Cover(a) => cover(&a),
        Cmd::Report { file, csv } => report(&file, csv),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::InfeasibleParams(_) | Error::Parse(_) => 2,
        Error::InvariantBreach(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let t0 = Instant::now();
    let res = run(cli);
    eprintln!("elapsed {:.3}s", t0.elapsed().as_secs_f64());
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
