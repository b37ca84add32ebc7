use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use monotest_core::io::{load_csv, result_json, write_xi_curve, ColumnMapping, LoadedSample};
use monotest_core::montecarlo::{rejection_rate, xi_curve, Dgp, RateRow, RateTable, SimDesign};
use monotest_core::{
    rescale_covariate, run_test, run_test_joint, run_test_semi, run_test_x, BenefitDerivative, Error,
    GameClass, InverseDemand, MomentKernel, Result, TestConfig, TestResult, ThetaMode,
};

const EXIT_REJECT: u8 = 10;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "monotest", version, about = "Tests whether equilibrium strategies are monotone in private types")]
struct Cli {
    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test on games with a common number of agents.
    Test(TestArgs),
    /// Joint test across games with different numbers of agents.
    TestJoint(TestArgs),
    /// Test conditioning on one continuous game-level covariate.
    TestCovariate(CovariateArgs),
    /// Test after homogenizing actions on game covariates.
    TestSemi(SemiArgs),
    /// Monte Carlo rejection frequencies.
    Simulate(SimulateArgs),
    /// Analytic quasi-inverse bid function of the simulation design.
    XiCurve(XiArgs),
}

#[derive(Args, Clone, Default)]
struct TestArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// auction-high, auction-low, contest, public-good or cournot.
    #[arg(long)]
    game: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Column holding the game identifier [default: game_id].
    #[arg(long)]
    game_id: Option<String>,
    /// Column holding the action [default: action].
    #[arg(long)]
    action: Option<String>,
    /// Column each action is divided by.
    #[arg(long)]
    normalize_by: Option<String>,
    /// Significance level [default: 0.10].
    #[arg(long)]
    alpha: Option<f64>,
    /// Bootstrap replications [default: 1000].
    #[arg(long)]
    n_boot: Option<usize>,
    /// Expected observations in the smallest cell [default: 20].
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Known action support instead of the sample range.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    support: Option<Vec<f64>>,
    /// Public good: benefit gamma * s^rho of total contributions.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Cournot: inverse demand alpha - beta * s.
    #[arg(long)]
    demand_alpha: Option<f64>,
    #[arg(long)]
    demand_beta: Option<f64>,
    /// Result JSON path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CovariateArgs {
    #[command(flatten)]
    common: TestArgs,
    /// Column holding the game-level covariate.
    #[arg(long)]
    covariate: Option<String>,
}

#[derive(Args, Clone)]
struct SemiArgs {
    #[command(flatten)]
    common: TestArgs,
    /// Game-level covariates of the log-action regression.
    #[arg(long, num_args = 1..)]
    design_cols: Option<Vec<String>>,
    /// Bootstrap replications for standard errors and critical value [default: --n-boot].
    #[arg(long)]
    k_boot: Option<usize>,
    /// Keep the full-sample coefficients in every replication (ablation only).
    #[arg(long)]
    fixed_theta: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DgpKind {
    /// No covariates.
    Table1,
    /// One covariate, cases 1 to 5.
    Table2,
    /// Heterogeneous numbers of agents.
    #[value(name = "table-a", alias = "tableA")]
    TableA,
    /// Actions scaled by exp(0.5 + 0.8 X).
    Semi,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    dgp: DgpKind,
    #[arg(long, num_args = 1..)]
    k: Option<Vec<f64>>,
    #[arg(long, num_args = 1..)]
    case: Option<Vec<u8>>,
    /// Games per sample.
    #[arg(long = "L", num_args = 1..)]
    l: Option<Vec<usize>>,
    /// Sample-size multiplier of the heterogeneous design.
    #[arg(long, num_args = 1..)]
    a: Option<Vec<usize>>,
    #[arg(long, num_args = 1.., default_value = "20")]
    nc: Vec<usize>,
    /// Agents per game.
    #[arg(long = "N", default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    n_mc: usize,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rate table CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-repetition JSON lines, one per design.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct XiArgs {
    #[arg(long)]
    k: f64,
    #[arg(long = "N", default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 512)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Options accepted in a `--config` file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    game: Option<String>,
    input: Option<PathBuf>,
    game_id: Option<String>,
    action: Option<String>,
    normalize_by: Option<String>,
    covariate: Option<String>,
    design_cols: Option<Vec<String>>,
    alpha: Option<f64>,
    n_boot: Option<usize>,
    #[serde(alias = "n_c")]
    nc: Option<usize>,
    seed: Option<u64>,
    eta: Option<f64>,
    epsilon: Option<f64>,
    support: Option<[f64; 2]>,
    gamma: Option<f64>,
    rho: Option<f64>,
    demand_alpha: Option<f64>,
    demand_beta: Option<f64>,
    k_boot: Option<usize>,
    out: Option<PathBuf>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => Ok(serde_json::from_reader(File::open(p)?)?),
    }
}

/// A test invocation with flags and config file merged.
struct Resolved {
    kernel: MomentKernel,
    input: PathBuf,
    mapping: ColumnMapping,
    config: TestConfig,
    out: Option<PathBuf>,
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{name} is required")))
}

fn kernel_for(class: GameClass, args: &TestArgs, file: &FileConfig) -> Result<MomentKernel> {
    Ok(match class {
        GameClass::AuctionHigh => MomentKernel::AuctionHigh,
        GameClass::AuctionLow => MomentKernel::AuctionLow,
        GameClass::Contest => MomentKernel::Contest,
        GameClass::PublicGood => MomentKernel::PublicGood(BenefitDerivative::power(
            required(args.gamma.or(file.gamma), "gamma")?,
            required(args.rho.or(file.rho), "rho")?,
        )?),
        GameClass::Cournot => MomentKernel::Cournot(InverseDemand::linear(
            required(args.demand_alpha.or(file.demand_alpha), "demand-alpha")?,
            required(args.demand_beta.or(file.demand_beta), "demand-beta")?,
        )?),
    })
}

fn resolve(args: &TestArgs, file: &FileConfig, covariates: Vec<String>) -> Result<Resolved> {
    let game = required(args.game.clone().or_else(|| file.game.clone()), "game")?;
    let class: GameClass = game.parse()?;
    let defaults = TestConfig::default();
    let support = match (&args.support, file.support) {
        (Some(v), _) => Some((v[0], v[1])),
        (None, Some([lo, hi])) => Some((lo, hi)),
        (None, None) => None,
    };
    let mapping = ColumnMapping {
        game_id: args.game_id.clone().or_else(|| file.game_id.clone()).unwrap_or(ColumnMapping::default().game_id),
        action: args.action.clone().or_else(|| file.action.clone()).unwrap_or(ColumnMapping::default().action),
        covariates,
        normalize_by: args.normalize_by.clone().or_else(|| file.normalize_by.clone()),
    };
    Ok(Resolved {
        kernel: kernel_for(class, args, file)?,
        input: required(args.input.clone().or_else(|| file.input.clone()), "input")?,
        mapping,
        config: TestConfig {
            alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
            n_boot: args.n_boot.or(file.n_boot).unwrap_or(defaults.n_boot),
            eta: args.eta.or(file.eta).unwrap_or(defaults.eta),
            epsilon: args.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
            n_c: args.nc.or(file.nc).unwrap_or(defaults.n_c),
            seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
            support,
        },
        out: args.out.clone().or_else(|| file.out.clone()),
    })
}

fn load(r: &Resolved) -> Result<LoadedSample> {
    let loaded = load_csv(&r.input, &r.mapping)?;
    if loaded.dropped_games > 0 {
        eprintln!(
            "warning: dropped {} game(s) with fewer than 2 rows",
            loaded.dropped_games
        );
    }
    Ok(loaded)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn report(result: &TestResult, out: Option<&Path>) -> Result<u8> {
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let json = result_json(result)?;
    let mut w = open_out(out)?;
    w.write_all(json.as_bytes())?;
    w.flush()?;
    eprintln!(
        "statistic {:.6}  critical value {:.6}  p-value {:.4}  {}",
        result.statistic,
        result.critical_value,
        result.p_value,
        if result.reject { "reject" } else { "do not reject" }
    );
    Ok(if result.reject { EXIT_REJECT } else { 0 })
}

fn run_plain(args: &TestArgs, joint: bool) -> Result<u8> {
    let file = read_config(args.config.as_deref())?;
    let r = resolve(args, &file, Vec::new())?;
    let sample = load(&r)?.sample;
    let result = if joint {
        run_test_joint(&sample, &r.kernel, &r.config)?
    } else {
        run_test(&sample, &r.kernel, &r.config)?
    };
    report(&result, r.out.as_deref())
}

fn run_covariate(args: &CovariateArgs) -> Result<u8> {
    let file = read_config(args.common.config.as_deref())?;
    let column = required(args.covariate.clone().or_else(|| file.covariate.clone()), "covariate")?;
    let r = resolve(&args.common, &file, vec![column])?;
    let sample = rescale_covariate(&load(&r)?.sample)?;
    report(&run_test_x(&sample, &r.kernel, &r.config)?, r.out.as_deref())
}

fn run_semi(args: &SemiArgs) -> Result<u8> {
    let file = read_config(args.common.config.as_deref())?;
    let cols = args.design_cols.clone().or_else(|| file.design_cols.clone()).unwrap_or_default();
    let r = resolve(&args.common, &file, cols)?;
    let sample = load(&r)?.sample;
    let k_boot = args.k_boot.or(file.k_boot).unwrap_or(r.config.n_boot);
    let mode = if args.fixed_theta { ThetaMode::Fixed } else { ThetaMode::Refit };
    report(&run_test_semi(&sample, &r.kernel, &r.config, k_boot, mode)?, r.out.as_deref())
}

fn simulate(args: &SimulateArgs) -> Result<u8> {
    let ks = |default: &[f64]| args.k.clone().unwrap_or_else(|| default.to_vec());
    let ls = |default: &[usize]| args.l.clone().unwrap_or_else(|| default.to_vec());
    let rows: Vec<(Dgp, usize)> = match args.dgp {
        DgpKind::Table1 => ks(&[0.5, 5.0, 10.0, 20.0])
            .into_iter()
            .flat_map(|k| ls(&[100, 250, 500]).into_iter().map(move |l| (Dgp::NoCovariate { k }, l)))
            .collect(),
        DgpKind::Table2 => args
            .case
            .clone()
            .unwrap_or_else(|| vec![1, 2, 3, 4, 5])
            .into_iter()
            .flat_map(|case| ls(&[100, 250, 500, 1000]).into_iter().map(move |l| (Dgp::Covariate { case }, l)))
            .collect(),
        DgpKind::TableA => ks(&[0.5, 10.0, 20.0, 40.0])
            .into_iter()
            .flat_map(|k| {
                args.a
                    .clone()
                    .unwrap_or_else(|| vec![1, 2, 3])
                    .into_iter()
                    .map(move |a| (Dgp::HeteroN { k, a }, a))
            })
            .collect(),
        DgpKind::Semi => ks(&[0.5, 20.0])
            .into_iter()
            .flat_map(|k| ls(&[500]).into_iter().map(move |l| (Dgp::Scaled { k }, l)))
            .collect(),
    };
    let mut log = args.log.as_deref().map(File::create).transpose()?.map(BufWriter::new);
    let mut table = RateTable {
        n_cs: args.nc.clone(),
        rows: Vec::new(),
    };
    for (dgp, size) in rows {
        let mut rates = Vec::new();
        for &n_c in &args.nc {
            let design = SimDesign {
                dgp,
                n_agents: args.n,
                n_games: if matches!(dgp, Dgp::HeteroN { .. }) { 2 } else { size },
                n_mc: args.n_mc,
                n_boot: args.n_boot,
                n_c,
                alpha: args.alpha,
                seed: args.seed,
            };
            let sim = rejection_rate(&design)?;
            eprintln!("{dgp:?} size {size} n_c {n_c}: {:.3}", sim.rate);
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut *w, &sim)?;
                writeln!(w)?;
            }
            rates.push(sim.rate);
        }
        table.rows.push(RateRow { dgp, size, rates });
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    let mut out = open_out(args.out.as_deref())?;
    table.write_csv(&mut out)?;
    out.flush()?;
    Ok(0)
}

fn xi(args: &XiArgs) -> Result<u8> {
    let curve = xi_curve(args.k, args.n, args.points)?;
    let mut out = open_out(args.out.as_deref())?;
    write_xi_curve(&curve, &mut out)?;
    out.flush()?;
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Test(a) => run_plain(a, false),
        Command::TestJoint(a) => run_plain(a, true),
        Command::TestCovariate(a) => run_covariate(a),
        Command::TestSemi(a) => run_semi(a),
        Command::Simulate(a) => simulate(a),
        Command::XiCurve(a) => xi(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_NUMERIC })
        }
    }
}
