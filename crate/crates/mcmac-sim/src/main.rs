//! Command-line front end: experiment runner, built-in time-sharing
//! demo, and the invariant verification suite.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mcmac_sim::config::{parse_list, RawConfig};
use mcmac_sim::experiment::{
    emit_alloc_dump, emit_csv, emit_trace, format_sig, run_experiment, ExperimentSpec, Method,
    Mode, Sweep, SweepVar,
};
use mcmac_sim::verify;

#[derive(Parser)]
#[command(
    name = "mcmac",
    version,
    about = "Power-subcarrier allocation and time-sharing simulator for low-rank multi-carrier uplink channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (optionally swept over SNR, antennas, users, or
    /// subcarriers) and write a results CSV.
    Run(Box<RunArgs>),
    /// Solve the built-in three-user time-sharing example and print the
    /// schedule.
    TimeshareDemo {
        /// Also write the schedule as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite on random seeds and print pass/fail lines.
    Verify {
        /// Base seed for the randomized checks.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file with [scenario] and [experiment] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also dump every allocation to a companion CSV.
    #[arg(long)]
    dump_alloc: Option<PathBuf>,
    /// Write the proposed solver's per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Worker thread cap for parallel cells.
    #[arg(long)]
    jobs: Option<usize>,

    // Scenario overrides (same names as the config file keys).
    #[arg(long)]
    num_users: Option<usize>,
    /// Scalar or comma list, e.g. `1` or `1,1,2`.
    #[arg(long)]
    antennas_per_user: Option<String>,
    #[arg(long)]
    ap_antennas: Option<usize>,
    #[arg(long)]
    num_subcarriers: Option<usize>,
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    #[arg(long)]
    center_freq_hz: Option<f64>,
    /// Comma list, e.g. `3,3,3`; omit to sample positions per trial.
    #[arg(long)]
    distances_m: Option<String>,
    #[arg(long)]
    d_min_m: Option<f64>,
    #[arg(long)]
    d_max_m: Option<f64>,
    #[arg(long)]
    noise_psd_dbm_per_hz: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,

    // Experiment overrides.
    /// `min_energy` or `max_rate`.
    #[arg(long)]
    mode: Option<String>,
    /// Comma list from proposed,oma,noma,mc_noma.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// Receive-SNR normalization of the budgets (max_rate mode).
    #[arg(long)]
    snr_db: Option<f64>,
    /// Absolute per-user budgets in dBm (scalar or comma list).
    #[arg(long)]
    budget_dbm: Option<String>,
    /// Per-user rate targets in Mbps (scalar or comma list).
    #[arg(long)]
    b_min_mbps: Option<String>,
    /// Rate weights of the dual objective (comma list).
    #[arg(long)]
    theta_w: Option<String>,
    /// Energy weights of the primal objective (comma list).
    #[arg(long)]
    weights: Option<String>,
    /// One of snr, ap_antennas, num_users, num_subcarriers.
    #[arg(long)]
    sweep_var: Option<String>,
    /// Comma list of sweep values.
    #[arg(long)]
    sweep_values: Option<String>,
}

fn build_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let raw = match &args.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    let mut spec = raw.into_spec()?;

    let s = &mut spec.scenario;
    if let Some(v) = args.num_users {
        s.num_users = v;
    }
    if let Some(v) = &args.antennas_per_user {
        s.antennas_per_user = parse_list(v)?.iter().map(|&x| x as usize).collect();
    }
    if let Some(v) = args.ap_antennas {
        s.ap_antennas = v;
    }
    if let Some(v) = args.num_subcarriers {
        s.num_subcarriers = v;
    }
    if let Some(v) = args.bandwidth_hz {
        s.bandwidth_hz = v;
    }
    if let Some(v) = args.center_freq_hz {
        s.center_freq_hz = v;
    }
    if let Some(v) = &args.distances_m {
        s.distances_m = parse_list(v)?;
    }
    if let Some(v) = args.d_min_m {
        s.d_min_m = v;
    }
    if let Some(v) = args.d_max_m {
        s.d_max_m = v;
    }
    if let Some(v) = args.noise_psd_dbm_per_hz {
        s.noise_psd_dbm_per_hz = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }

    if let Some(v) = &args.mode {
        spec.mode = Mode::parse(v)?;
    }
    if let Some(v) = &args.methods {
        spec.methods = v.split(',').map(Method::parse).collect::<Result<_>>()?;
    }
    if let Some(v) = args.trials {
        spec.trials = v;
    }
    if args.snr_db.is_some() {
        spec.snr_db = args.snr_db;
        spec.budget_dbm = None;
    }
    if let Some(v) = &args.budget_dbm {
        spec.budget_dbm = Some(parse_list(v)?);
        spec.snr_db = None;
    }
    if let Some(v) = &args.b_min_mbps {
        spec.b_min_mbps = parse_list(v)?;
    }
    if let Some(v) = &args.theta_w {
        spec.theta_w = parse_list(v)?;
    }
    if let Some(v) = &args.weights {
        spec.weights = parse_list(v)?;
    }
    match (&args.sweep_var, &args.sweep_values) {
        (Some(var), Some(values)) => {
            spec.sweep = Some(Sweep { variable: SweepVar::parse(var)?, values: parse_list(values)? });
        }
        (Some(_), None) | (None, Some(_)) => {
            anyhow::bail!("--sweep-var and --sweep-values must be given together")
        }
        (None, None) => {}
    }
    Ok(spec)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let spec = build_spec(args)?;
    let (table, dump, trace_lines) = run_experiment(&spec)?;
    emit_csv(&table, &args.out)?;
    if let Some(path) = &args.dump_alloc {
        emit_alloc_dump(&dump, path)?;
    }
    if let Some(path) = &args.trace {
        emit_trace(&trace_lines, path)?;
    }
    let failed = table.failed_rows();
    println!(
        "wrote {} rows to {} ({failed} failed)",
        table.rows.len(),
        args.out.display()
    );
    for row in table.rows.iter().filter(|r| r.status != "ok") {
        eprintln!(
            "row failed: method={} sweep={} seed={}: {}",
            row.method, row.sweep_value, row.seed, row.status
        );
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_timeshare_demo(out: Option<&PathBuf>) -> Result<ExitCode> {
    let (cand, b_min) = verify::reference_candidates();
    let sched = mcmac_core::timeshare::solve_timeshare(&cand, &b_min, 1e-3)
        .map_err(anyhow::Error::msg)?;
    println!("targets: {} Mbps per user", format_sig(b_min[0], 6));
    println!("{:<12} {:>10}   per-user rates (Mbps)", "order", "fraction");
    for (ord, w) in &sched.entries {
        let row = cand.orders.iter().position(|o| o == ord).unwrap();
        let rates = cand.rates[row]
            .iter()
            .map(|&r| format!("{:>8}", format_sig(r, 6)))
            .collect::<Vec<_>>()
            .join(" ");
        println!("{:<12} {:>10}   {rates}", ord.to_dash_string(), format_sig(*w, 4));
    }
    let avg = sched.averaged_rates(&cand);
    println!(
        "time-shared average: {}",
        avg.iter().map(|&a| format_sig(a, 6)).collect::<Vec<_>>().join(", ")
    );
    if let Some(path) = out {
        std::fs::write(path, sched.to_csv(&cand))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("schedule written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::TimeshareDemo { out } => cmd_timeshare_demo(out.as_ref()),
        Command::Verify { seed } => {
            let failures = verify::run(*seed);
            println!("{} checks failed", failures);
            Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
