use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fal_cli::config::{read_config, resolve, Algorithm, Overrides, Preset, RunConfigFile};
use fal_cli::studies::{
    self, CouplingOptions, FiniteDiffOptions, FlGapOptions, StudySummary, UniformApproxOptions,
};
use fal_cli::{execute_run, init_thread_pool, write_json, CliError, EXIT_CHECK_FAILED, EXIT_CONFIG};
use fal_core::data::{gen_gaussian_clusters, gen_separable_sphere, points_as_dataset, save_csv, ClusterSpec, DataMode};
use fal_core::rng::dataset_stream;
use fal_core::verification::ConvergenceProbe;

#[derive(Parser)]
#[command(name = "fal", version, about = "Federated adversarial learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated adversarial training.
    Run(RunArgs),
    /// Federated averaging without an adversary.
    Fedavg(RunArgs),
    /// Numerical studies with pass/fail checks.
    Verify {
        #[command(subcommand)]
        study: Study,
    },
    /// Generate a dataset as CSV.
    GenData {
        #[command(subcommand)]
        kind: GenKind,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, visible_alias = "T")]
    rounds: Option<usize>,
    #[arg(long = "local-steps", visible_alias = "K")]
    local_steps: Option<usize>,
    /// Local learning rate.
    #[arg(long, visible_alias = "eta-local")]
    lr: Option<f64>,
    #[arg(long)]
    eta_global: Option<f64>,
    #[arg(long, visible_alias = "m")]
    width: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// 0 selects full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    grad_audit_every: Option<usize>,
    /// Train on all adversarial examples generated so far in the round.
    #[arg(long)]
    accumulate_adv_set: bool,
    /// Feature scale of cluster data.
    #[arg(long)]
    scale: Option<f64>,
    /// Run clients one after another.
    #[arg(long)]
    sequential: bool,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "theory" => Ok(Preset::Theory),
        "experiment6" => Ok(Preset::Experiment6),
        _ => Err(format!("unknown preset {s:?} (expected theory or experiment6)")),
    }
}

#[derive(Args)]
struct StudyOut {
    #[arg(long, default_value = "fal-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Study {
    /// Real vs pseudo network sup-gap over widths.
    UniformApprox {
        #[command(flatten)]
        common: StudyOut,
        #[arg(long = "m-grid", value_delimiter = ',')]
        m_grid: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Real vs pseudo gradient coupling over widths.
    Coupling {
        #[command(flatten)]
        common: StudyOut,
        #[arg(long = "m-grid", value_delimiter = ',')]
        m_grid: Option<Vec<usize>>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Real vs FL gradient over audited training rounds.
    FlGap {
        #[command(flatten)]
        common: StudyOut,
        #[arg(long = "K", visible_alias = "local-steps", default_value_t = 4)]
        local_steps: usize,
        #[arg(long = "m-grid", value_delimiter = ',')]
        m_grid: Option<Vec<usize>>,
        #[arg(long = "T", visible_alias = "rounds", default_value_t = 10)]
        rounds: usize,
    },
    /// Analytic gradients against central differences.
    FiniteDiff {
        #[command(flatten)]
        common: StudyOut,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-6)]
        probe: f64,
    },
    /// Minimum adversarial loss reached by theory-preset training.
    Convergence {
        #[command(flatten)]
        common: StudyOut,
        #[arg(long = "m", visible_alias = "width")]
        width: Option<usize>,
        #[arg(long = "T", visible_alias = "rounds")]
        rounds: Option<usize>,
    },
}

#[derive(Subcommand)]
enum GenKind {
    /// Separated points on the unit manifold.
    Sphere {
        #[arg(long = "N", visible_alias = "clients", default_value_t = 2)]
        n_clients: usize,
        #[arg(long = "J", visible_alias = "per-client", default_value_t = 4)]
        per_client: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 0.3)]
        delta: f64,
        /// Adversary radius used for the separability bound.
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "fal-out")]
        out: PathBuf,
    },
    /// Four Gaussian clusters, two per class.
    Clusters {
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.05)]
        flip_rate: f64,
        #[arg(long = "N", visible_alias = "clients", default_value_t = 4)]
        n_clients: usize,
        #[arg(long)]
        shard_by_cluster: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "fal-out")]
        out: PathBuf,
    },
}

fn cmd_run(args: RunArgs, algorithm: Algorithm) -> Result<i32, CliError> {
    let file = match &args.config {
        Some(p) => read_config(p)?,
        None => RunConfigFile::default(),
    };
    let file = RunConfigFile {
        algorithm: Some(algorithm),
        ..file
    };
    let flags = Overrides {
        preset: args.preset,
        out: args.out,
        seed: args.seed,
        rounds: args.rounds,
        local_steps: args.local_steps,
        eta_local: args.lr,
        eta_global: args.eta_global,
        width: args.width,
        rho: args.rho,
        batch_size: args.batch_size,
        grad_audit_every: args.grad_audit_every,
        accumulate_adv_set: args.accumulate_adv_set,
        scale: args.scale,
        sequential: args.sequential,
    };
    let cfg = resolve(file, &flags)?;
    let records = execute_run(&cfg)?;
    if let Some(last) = records.last() {
        println!(
            "{} rounds; final adv_loss {:.6} train_acc {:.4}; outputs in {}",
            records.len(),
            last.adv_loss,
            last.train_acc,
            cfg.out.display()
        );
    } else {
        println!("0 rounds; outputs in {}", cfg.out.display());
    }
    Ok(0)
}

fn emit(summary: StudySummary, common: &StudyOut) -> Result<i32, CliError> {
    fs::create_dir_all(&common.out)?;
    let stem = summary.study.clone();
    fs::write(common.out.join(format!("{stem}.csv")), &summary.table)?;
    write_json(&common.out.join(format!("{stem}.json")), &summary)?;
    for c in &summary.checks {
        println!("{} {} = {:e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.condition);
    }
    Ok(if summary.pass { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_verify(study: Study) -> Result<i32, CliError> {
    match study {
        Study::UniformApprox { common, m_grid, radius, d, samples, seeds } => {
            let opts = UniformApproxOptions {
                radius,
                m_grid: m_grid.unwrap_or_else(|| studies::DEFAULT_M_GRID.to_vec()),
                d,
                samples,
                seeds,
                seed: common.seed,
            };
            emit(studies::uniform_approx(&opts)?, &common)
        }
        Study::Coupling { common, m_grid, seeds } => {
            let mut opts = CouplingOptions {
                seeds,
                seed: common.seed,
                ..CouplingOptions::default()
            };
            if let Some(g) = m_grid {
                opts.m_grid = g;
            }
            emit(studies::coupling(&opts)?, &common)
        }
        Study::FlGap { common, local_steps, m_grid, rounds } => {
            let mut opts = FlGapOptions {
                local_steps,
                rounds,
                seed: common.seed,
                ..FlGapOptions::default()
            };
            if let Some(g) = m_grid {
                opts.m_grid = g;
            }
            emit(studies::fl_gap(&opts)?, &common)
        }
        Study::FiniteDiff { common, seeds, probe } => {
            let opts = FiniteDiffOptions {
                seeds,
                probe,
                seed: common.seed,
                ..FiniteDiffOptions::default()
            };
            emit(studies::finite_diff(&opts)?, &common)
        }
        Study::Convergence { common, width, rounds } => {
            let mut probe = ConvergenceProbe {
                seed: common.seed,
                ..ConvergenceProbe::default()
            };
            if let Some(m) = width {
                probe.width = m;
            }
            if let Some(t) = rounds {
                probe.rounds = t;
            }
            emit(studies::convergence(&probe)?, &common)
        }
    }
}

fn cmd_gen_data(kind: GenKind) -> Result<i32, CliError> {
    match kind {
        GenKind::Sphere { n_clients, per_client, d, delta, rho, seed, out } => {
            if !(delta > 0.0 && delta < 0.5) {
                return Err(CliError::Config(format!("--delta must lie in (0, 1/2), got {delta}")));
            }
            let ds = gen_separable_sphere::<f64>(n_clients, per_client, d, delta, &dataset_stream(seed))?;
            fs::create_dir_all(&out)?;
            save_csv(&ds, out.join("data.csv"))?;
            let stats = ds.separability_stats(rho);
            println!(
                "points={} delta_min={:e} gamma_bound={:e}",
                ds.len(),
                stats.delta_min,
                stats.gamma_bound
            );
        }
        GenKind::Clusters { scale, flip_rate, n_clients, shard_by_cluster, seed, out } => {
            let spec = ClusterSpec {
                scale,
                flip_rate,
                n_clients,
                shard_by_cluster,
                ..ClusterSpec::default()
            };
            let (train, test) = gen_gaussian_clusters::<f64>(&spec, &dataset_stream(seed))?;
            fs::create_dir_all(&out)?;
            save_csv(&train, out.join("train.csv"))?;
            save_csv(&points_as_dataset(&test, DataMode::Clusters)?, out.join("test.csv"))?;
            let stats = train.separability_stats(0.0);
            println!(
                "train={} test={} delta_min={:e} gamma_bound={:e}",
                train.len(),
                test.len(),
                stats.delta_min,
                stats.gamma_bound
            );
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = init_thread_pool().and_then(|()| match cli.command {
        Command::Run(args) => cmd_run(args, Algorithm::Fal),
        Command::Fedavg(args) => cmd_run(args, Algorithm::Fedavg),
        Command::Verify { study } => cmd_verify(study),
        Command::GenData { kind } => cmd_gen_data(kind),
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
