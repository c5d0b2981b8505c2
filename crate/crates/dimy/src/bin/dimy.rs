use clap::{Args, Parser, Subcommand};
use dimy::backend::http::{BackendState, SystemTimeSource};
use dimy::backend::{default_epoch, Ledger, LedgerConfig};
use dimy::bloom::{fpr_estimate, BloomFilter, BloomParams};
use dimy::sim::{self, AttackKind, AttackParams, Scenario};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dimy", version, about = "Contact-tracing protocol simulator and backend")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulation subcommands
    #[command(subcommand)]
    Sim(SimCommand),
    /// Backend subcommands
    #[command(subcommand)]
    Backend(BackendCommand),
    /// Bloom-filter file tools
    #[command(subcommand)]
    Bf(BfCommand),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario file and write the metrics report
    Run(SimRunArgs),
    /// Run a named attack scenario
    Attack(SimAttackArgs),
    /// Measure empirical false-positive rates against the closed form
    Fpr(SimFprArgs),
}

#[derive(Args)]
struct SimRunArgs {
    /// Scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Report output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimAttackArgs {
    /// One of: replay, relay, short_contact, carryover_tracking
    #[arg(long)]
    name: String,
    /// Optional JSON file with {"seed": u64, "trials": u32}
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u32>,
}

#[derive(Args)]
struct SimFprArgs {
    /// Filter size in bits
    #[arg(long, default_value_t = 800_000)]
    m: u32,
    /// Number of hash functions
    #[arg(long, default_value_t = 3)]
    k: u8,
    /// Largest item count to measure
    #[arg(long, default_value_t = 21_000)]
    n_max: u64,
    /// Probes per measured point
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum BackendCommand {
    /// Serve the HTTP API
    Serve(BackendServeArgs),
}

#[derive(Args)]
struct BackendServeArgs {
    #[arg(long, default_value_t = 8720)]
    port: u16,
    /// File with one health-authority credential per line
    #[arg(long)]
    ha_creds: PathBuf,
    /// Ledger token seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum BfCommand {
    /// Print params, popcount, fill ratio and FPR estimates of a DIMB file
    Inspect { file: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Sim(SimCommand::Run(args)) => sim_run(args),
        Command::Sim(SimCommand::Attack(args)) => sim_attack(args),
        Command::Sim(SimCommand::Fpr(args)) => sim_fpr(args),
        Command::Backend(BackendCommand::Serve(args)) => backend_serve(args),
        Command::Bf(BfCommand::Inspect { file }) => bf_inspect(&file),
    }
}

fn sim_run(args: SimRunArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let mut scenario: Scenario = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let report = sim::run(scenario)?;
    let bytes = report.to_json_bytes();
    match &args.out {
        Some(path) => std::fs::write(path, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    let c = &report.exposure_counts;
    eprintln!(
        "queries: {} (TP {} / FP {} / FN {} / TN {})",
        report.queries.len(),
        c.true_positive,
        c.false_positive,
        c.false_negative,
        c.true_negative
    );
    Ok(ExitCode::SUCCESS)
}

fn sim_attack(args: SimAttackArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let kind: AttackKind = args.name.parse()?;
    let mut params = match &args.params {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => AttackParams::default(),
    };
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    if let Some(trials) = args.trials {
        params.trials = trials;
    }
    let verdict = sim::run_attack(kind, params);
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    Ok(if verdict.pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn sim_fpr(args: SimFprArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let params = BloomParams::new(args.m, args.k)?;
    let points = sim::fpr_experiment(params, args.n_max, args.trials, args.seed);
    println!("{:>10} {:>10} {:>12} {:>14} {:>14}", "inserted", "probes", "positives", "empirical", "predicted");
    for p in &points {
        println!(
            "{:>10} {:>10} {:>12} {:>14.6e} {:>14.6e}",
            p.inserted, p.probes, p.positives, p.empirical, p.predicted
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn backend_serve(args: BackendServeArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let creds: Vec<String> = std::fs::read_to_string(&args.ha_creds)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if creds.is_empty() {
        return Err("credentials file is empty".into());
    }
    let ledger = Ledger::new(LedgerConfig::new(creds), args.seed);
    let state = BackendState::new(ledger, SystemTimeSource { epoch: default_epoch() });

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", args.port)).await?;
        log::info!("backend listening on {}", listener.local_addr()?);
        dimy::backend::http::serve(listener, state).await
    })?;
    Ok(ExitCode::SUCCESS)
}

fn bf_inspect(path: &PathBuf) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let bytes = std::fs::read(path)?;
    let filter = BloomFilter::deserialize(&bytes)?;
    let params = *filter.params();
    let popcount = filter.popcount();
    let fill = filter.fill_ratio();
    // invert the fill ratio to estimate how many items went in
    let est_items = if fill >= 1.0 {
        f64::INFINITY
    } else {
        -(params.bits as f64 / params.hashes as f64) * (1.0 - fill).ln()
    };
    println!("file:            {}", path.display());
    println!("m (bits):        {}", params.bits);
    println!("k (hashes):      {}", params.hashes);
    println!("role:            {:?}", filter.role());
    println!("popcount:        {popcount}");
    println!("fill ratio:      {fill:.6}");
    println!("current fpr:     {:.6e}  ((t/m)^k)", fill.powi(params.hashes as i32));
    println!("est. items:      {est_items:.1}");
    println!("eq.1 fpr at est: {:.6e}", fpr_estimate(&params, est_items.round().max(0.0) as u64));
    Ok(ExitCode::SUCCESS)
}
