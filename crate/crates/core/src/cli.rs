//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use crate::constructions::{self, PartitionStrategy, PrecoderType, Scheme};
use crate::error::{Error, Result};
use crate::io::{self, Metadata};
use crate::metrics::{self, MetricKind};
use crate::model::ChannelConfig;
use crate::optimizer::{self, InitSpec, OptimizerOptions};
use crate::pep;
use crate::power::{self, NelderMeadOptions};
use crate::simulator::{self, SimPlan};

#[derive(Parser, Debug)]
#[command(name = "ncmac", version, about = "Joint constellations for the noncoherent MIMO multiple-access channel")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log verbosity; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a structured constellation.
    Construct(ConstructArgs),
    /// Optimize a constellation for a design criterion.
    Optimize(OptimizeArgs),
    /// Evaluate metrics of a saved constellation.
    Metrics(MetricsArgs),
    /// Pairwise error probability of two joint symbols.
    Pep(PepArgs),
    /// Optimize per-user powers of a saved constellation.
    Power(PowerArgs),
    /// Monte Carlo symbol error rate over an SNR grid.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Dims {
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long = "K", default_value_t = 1)]
    pub k: usize,
    /// Antennas per user: one value or a comma list.
    #[arg(long = "M", default_value = "1")]
    pub m: String,
    /// Bits per user: one value or a comma list.
    #[arg(long)]
    pub bits: String,
    #[arg(long = "snr-db", default_value_t = 30.0)]
    pub snr_db: f64,
    #[arg(long = "N", default_value_t = io::DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ConstructType {
    RandomUstm,
    Partition,
    #[value(name = "precode-1")]
    Precode1,
    #[value(name = "precode-2")]
    Precode2,
    Pilot,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StrategyArg {
    Random,
    Greedy,
}

#[derive(Args, Debug)]
pub struct ConstructArgs {
    #[arg(long = "type", value_enum)]
    pub kind: ConstructType,
    #[command(flatten)]
    pub dims: Dims,
    /// Partition strategy.
    #[arg(long, value_enum, default_value_t = StrategyArg::Greedy)]
    pub strategy: StrategyArg,
    /// CG iterations for single-user packings.
    #[arg(long, default_value_t = 300)]
    pub packing_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// J, J:s, d, e, m1 or m2 (m2 uses --N).
    #[arg(long)]
    pub criterion: String,
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Comma list of precoding, partitioning, pilot, random:COUNT.
    #[arg(long, default_value = "precoding,partitioning,pilot,random:1")]
    pub init: String,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Round-robin per-user optimization from a random start.
    #[arg(long)]
    pub alternating: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of the objective trace of the kept run.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "b,J:0.5,d,e,m1,m2:4,coherence")]
    pub kinds: String,
    /// Rescale the budget before evaluating.
    #[arg(long = "snr-db")]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PepMethodArg {
    Mc,
    Closed,
    Chernoff,
    Bounds,
}

#[derive(Args, Debug)]
pub struct PepArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Flat joint-symbol indices `i,j`.
    #[arg(long)]
    pub pair: String,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value_t = PepMethodArg::Closed)]
    pub method: PepMethodArg,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PowerMode {
    Cubic,
    Golden,
    Nelder,
}

#[derive(Args, Debug)]
pub struct PowerArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: PowerMode,
    #[arg(long, default_value = "d")]
    pub metric: String,
    /// Write the constellation at the returned powers.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// `a:step:b` in dB, inclusive.
    #[arg(long = "snr-db")]
    pub snr_db: String,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 100)]
    pub target_errors: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn list<T: std::str::FromStr + Clone>(s: &str, k: usize, what: &str) -> Result<Vec<T>> {
    let v: Vec<T> = s
        .split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| Error::InvalidInput(format!("bad {what} '{x}'"))))
        .collect::<Result<_>>()?;
    match v.len() {
        1 => Ok(vec![v[0].clone(); k]),
        n if n == k => Ok(v),
        n => Err(Error::InvalidInput(format!("{what} lists {n} values for K = {k}"))),
    }
}

impl Dims {
    fn config(&self) -> Result<(ChannelConfig, Vec<u32>)> {
        if self.k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        let m = list::<usize>(&self.m, self.k, "--M")?;
        let bits = list::<u32>(&self.bits, self.k, "--bits")?;
        let config = ChannelConfig::new(self.t, m, self.n, simulator::db_to_linear(self.snr_db))?;
        Ok((config, bits))
    }

    fn meta(&self, criterion: &str) -> Metadata {
        Metadata { criterion: Some(criterion.into()), snr_db: Some(self.snr_db), seed: Some(self.seed), n: Some(self.n) }
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn construct(a: &ConstructArgs) -> Result<()> {
    let (config, bits) = a.dims.config()?;
    let scheme = match a.kind {
        ConstructType::RandomUstm => Scheme::RandomUstm,
        ConstructType::Pilot => Scheme::Pilot,
        ConstructType::Precode1 => Scheme::Precode(PrecoderType::I),
        ConstructType::Precode2 => Scheme::Precode(PrecoderType::II),
        ConstructType::Partition => Scheme::Partition(match a.strategy {
            StrategyArg::Random => PartitionStrategy::Random,
            StrategyArg::Greedy => PartitionStrategy::GreedySwap,
        }),
    };
    let packing = optimizer::packing_options(
        &OptimizerOptions { max_iters: a.packing_iters, seed: a.dims.seed, ..Default::default() },
        a.dims.seed,
    );
    let c = constructions::build_scheme(scheme, &config, &bits, &packing)?;
    let name = a.kind.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    io::save_constellation(&a.out, &c, &a.dims.meta(&name))
}

fn optimize(a: &OptimizeArgs) -> Result<()> {
    let (config, bits) = a.dims.config()?;
    let kind = match MetricKind::parse(&a.criterion)? {
        MetricKind::M2(_) => MetricKind::M2(config.n),
        k => k,
    };
    let opts = OptimizerOptions { epsilon: a.epsilon, max_iters: a.max_iters, seed: a.dims.seed, ..Default::default() };
    let (c, trace) = if a.alternating {
        let r = optimizer::alternating_optimize(kind, &config, &bits, &opts)?;
        info!("alternating: {} cycles, metric trace {:?}", r.cycles, r.metric_trace);
        (r.constellation, None)
    } else {
        let inits = a.init.split(',').map(|s| InitSpec::parse(s.trim())).collect::<Result<Vec<_>>>()?;
        let r = optimizer::multi_start_optimize(kind, &config, &bits, &inits, &opts)?;
        for run in &r.runs {
            info!("{}: {:.6} -> {:.6} in {} iterations", run.init, run.initial_metric, run.metric, run.iterations);
        }
        (r.best, Some(r.best_state.trace))
    };
    if let (Some(path), Some(trace)) = (&a.trace, trace) {
        let mut s = String::from("iter,objective,gradnorm,step\n");
        for t in trace {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", t.iter, t.objective, t.gradnorm, t.step));
        }
        fs::write(path, s)?;
    }
    io::save_constellation(&a.out, &c, &a.dims.meta(&a.criterion))
}

fn metrics_cmd(a: &MetricsArgs, out: &mut dyn Write) -> Result<()> {
    let (mut c, _) = io::load_constellation(&a.input)?;
    if let Some(db) = a.snr_db {
        c = c.with_power_budget(simulator::db_to_linear(db))?;
    }
    let names: Vec<&str> = a.kinds.split(',').map(str::trim).collect();
    let kinds = names.iter().map(|s| MetricKind::parse(s)).collect::<Result<Vec<_>>>()?;
    let mut header = String::from("snr_db");
    let mut row = format!("{}", 10.0 * c.config().power.log10());
    for (name, kind) in names.iter().zip(kinds) {
        let v = metrics::evaluate(kind, &c)?.value;
        header.push(',');
        header.push_str(name);
        row.push_str(&format!(",{v:e}"));
    }
    emit(out, a.out.as_deref(), &format!("{header}\n{row}\n"))
}

fn pep_cmd(a: &PepArgs, out: &mut dyn Write) -> Result<()> {
    let (c, meta) = io::load_constellation(&a.input)?;
    let n = a.n.or(meta.n).unwrap_or(io::DEFAULT_N);
    let idx: Vec<usize> = a
        .pair
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::InvalidInput(format!("bad --pair '{}'", a.pair))))
        .collect::<Result<_>>()?;
    let [i, j] = idx[..] else {
        return Err(Error::InvalidInput("--pair needs two indices".into()));
    };
    let count = c.joint_count();
    if i >= count || j >= count {
        return Err(Error::InvalidInput(format!("pair indices must be below {count}")));
    }
    let x = c.joint_symbol(&c.index_tuple(i));
    let xp = c.joint_symbol(&c.index_tuple(j));
    let mut s = String::from("method,value,stderr\n");
    match a.method {
        PepMethodArg::Closed => {
            let r = pep::pep_closed_form(&x, &xp, n)?;
            if let Some(d) = &r.diagnostic {
                warn!("{d}");
            }
            s.push_str(&format!("closed,{:e},\n", r.value));
        }
        PepMethodArg::Mc => {
            let r = pep::pep_monte_carlo(&x, &xp, n, a.trials, a.seed)?;
            s.push_str(&format!("mc,{:e},{:e}\n", r.value, r.stderr.unwrap_or(0.0)));
        }
        PepMethodArg::Chernoff => {
            s.push_str(&format!("chernoff,{:e},\n", pep::pep_chernoff(&x, &xp, n, 0.5)?));
        }
        PepMethodArg::Bounds => {
            let (lo, hi) = pep::exponent_bounds(&x, &xp)?;
            s.push_str(&format!("exponent-lower,{lo:e},\nexponent-upper,{hi:e},\n"));
            s.push_str(&format!("chernoff,{:e},\n", pep::pep_chernoff(&x, &xp, n, 0.5)?));
        }
    }
    emit(out, None, &s)
}

fn power_cmd(a: &PowerArgs, out: &mut dyn Write) -> Result<()> {
    let (c, meta) = io::load_constellation(&a.input)?;
    let kind = MetricKind::parse(&a.metric)?;
    let p = c.config().power;
    let base = c.with_user_powers(&vec![p; c.k()])?;
    let r = match a.mode {
        PowerMode::Cubic => power::theta_star_enumerate(&base, p)?,
        PowerMode::Golden => power::theta_golden(kind, &base, p)?,
        PowerMode::Nelder => power::powers_neldermead(kind, &base, p, &NelderMeadOptions::default())?,
    };
    let adjusted = base.with_user_powers(&r.powers)?;
    let value = metrics::evaluate(kind, &adjusted)?.value;
    let theta_or_powers = match r.theta {
        Some(t) => json!(t),
        None => json!(r.powers),
    };
    let doc = json!({
        "method": r.method,
        "theta_or_powers": theta_or_powers,
        "powers": r.powers,
        "metric": a.metric,
        "value": value,
    });
    if let Some(path) = &a.out {
        io::save_constellation(path, &adjusted, &meta)?;
    }
    emit(out, None, &format!("{doc}\n"))
}

fn simulate_cmd(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let (c, meta) = io::load_constellation(&a.input)?;
    let plan = SimPlan {
        n: a.n.or(meta.n).unwrap_or(io::DEFAULT_N),
        snr_db: simulator::parse_snr_grid(&a.snr_db)?,
        max_trials: a.trials,
        target_errors: a.target_errors,
        seed: a.seed,
    };
    let r = simulator::simulate_ser(&c, &plan)?;
    emit(out, a.out.as_deref(), &r.to_csv())
}

/// Executes a parsed command line, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be positive".into()));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("thread pool already initialized; --threads ignored");
        }
    }
    match &cli.command {
        Command::Construct(a) => construct(a),
        Command::Optimize(a) => optimize(a),
        Command::Metrics(a) => metrics_cmd(a, out),
        Command::Pep(a) => pep_cmd(a, out),
        Command::Power(a) => power_cmd(a, out),
        Command::Simulate(a) => simulate_cmd(a, out),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
