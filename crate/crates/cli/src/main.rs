use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hris_bench::{
    active_ratio_rows, beampattern_grid, brute_force_oracle, run_sweep, run_trial, small_instance, summarize,
    write_active_ratio_csv, write_summary_csv, write_sweep_csv, OracleModes, SweepParam, SweepSpec,
};
use hris_core::metrics::{audit, DEFAULT_TOL_FEAS};
use hris_core::model::{generate_channels, Scenario, SystemConfig};
use hris_core::optimizer::{RunOptions, Scheme, SolveTrace};
use hris_core::{HrisError, Result};

#[derive(Parser)]
#[command(name = "hris", version, about = "Hybrid active/passive RIS ISAC design: runs, sweeps and audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON; the built-in default scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Gaussian randomization samples per RIS update.
    #[arg(long, default_value_t = 10_000)]
    l_gau: usize,
    #[arg(long, default_value_t = 30)]
    max_outer_iter: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme on one channel realization and write its trace.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        scheme: String,
    },
    /// Sweep one parameter over a grid for several schemes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// n, p_ris_max (dBm), gamma (dB), m or l.
        #[arg(long)]
        param: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Comma-separated schemes: proposed, fixed_mode_<Na>, full_passive, full_active.
        #[arg(long, value_delimiter = ',', default_value = "proposed,fixed_mode_12,full_passive,full_active")]
        scheme: Vec<String>,
        #[arg(long)]
        threads: Option<usize>,
        /// Append a wall_time column (makes the CSV run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Normalized beampattern of one solved instance.
    Beampattern {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        scheme: String,
        /// Points per angle axis.
        #[arg(long, default_value_t = 91)]
        grid: usize,
    },
    /// Exhaustive search on the small instance derived from the scenario.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        phase_grid: usize,
        #[arg(long, default_value_t = 8)]
        beta_grid: usize,
        /// Use the scenario as is (N <= 3) instead of deriving the small instance.
        #[arg(long)]
        as_is: bool,
    },
    /// Re-audit a stored trace against regenerated channels.
    Audit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL_FEAS)]
        tol: f64,
    },
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig> {
    match path {
        Some(p) => Scenario::load(p)?.to_config(),
        None => Scenario::reference_default().to_config(),
    }
}

fn options(c: &Common) -> RunOptions {
    RunOptions { seed: c.seed, l_gau: c.l_gau, max_outer_iter: c.max_outer_iter, ..Default::default() }
}

fn create(dir: &Path, name: &str) -> Result<File> {
    fs::create_dir_all(dir)?;
    Ok(File::create(dir.join(name))?)
}

fn write_trace(dir: &Path, tr: &SolveTrace, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("trace_{}_seed{seed}.json", tr.scheme.label()));
    fs::write(&path, tr.to_json()?)?;
    Ok(path)
}

fn print_trace(tr: &SolveTrace) {
    println!(
        "{}: status {:?}, objective {:.6e} W, {} iterations, {} active, {:.1} s",
        tr.scheme.label(),
        tr.status,
        tr.objective.unwrap_or(f64::NAN),
        tr.iterations.len(),
        tr.active_count().unwrap_or(0),
        tr.wall_time
    );
    if let Some(m) = &tr.message {
        println!("  {m}");
    }
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { common, scheme } => {
            let cfg = load_config(common.config.as_deref())?;
            let scheme: Scheme = scheme.parse()?;
            let tr = run_trial(&cfg, common.seed, scheme, &options(&common))?;
            print_trace(&tr);
            let path = write_trace(&common.out, &tr, common.seed)?;
            println!("trace written to {}", path.display());
            Ok(true)
        }
        Command::Sweep { common, param, grid, trials, scheme, threads, timing } => {
            let base = load_config(common.config.as_deref())?;
            let schemes = scheme.iter().map(|s| s.parse()).collect::<Result<Vec<Scheme>>>()?;
            let param: SweepParam = param.parse()?;
            let spec = SweepSpec {
                base: base.clone(),
                param,
                grid,
                trials,
                schemes,
                seed_base: common.seed,
                options: options(&common),
                threads,
            };
            let rows = run_sweep(&spec)?;
            write_sweep_csv(&rows, create(&common.out, "sweep.csv")?, timing)?;
            let summary = summarize(&rows);
            write_summary_csv(&summary, create(&common.out, "summary.csv")?)?;
            if param == SweepParam::PRisMax {
                write_active_ratio_csv(&active_ratio_rows(&rows, base.n()), create(&common.out, "active_ratio.csv")?)?;
            }
            for s in &summary {
                println!(
                    "{} = {:>8} {:>14}: mean {:.4e} ± {:.1e} W, {}/{} converged, {:.1} active",
                    s.param, s.value, s.scheme, s.mean, s.stderr, s.converged, s.trials, s.mean_active
                );
            }
            println!("{} rows written to {}", rows.len(), common.out.join("sweep.csv").display());
            Ok(true)
        }
        Command::Beampattern { common, scheme, grid } => {
            let cfg = load_config(common.config.as_deref())?;
            let ch = generate_channels(&cfg, common.seed)?;
            let scheme: Scheme = scheme.parse()?;
            let tr = run_trial(&cfg, common.seed, scheme, &options(&common))?;
            print_trace(&tr);
            let (Some(ris), Some(bf)) = (&tr.ris, &tr.beamforming) else {
                return Err(HrisError::Validation("run produced no solution to plot".into()));
            };
            let bp = beampattern_grid(&cfg, &ch, ris, bf, grid);
            bp.write_csv(create(&common.out, "beampattern.csv")?)?;
            for (i, j, v) in bp.local_maxima().into_iter().take(cfg.l().max(2)) {
                println!("peak at ({:.1}°, {:.1}°): {v:.4}", bp.angles[i].to_degrees(), bp.angles[j].to_degrees());
            }
            println!("targets matched: {}", bp.peaks_at(&cfg.target_angles));
            Ok(true)
        }
        Command::Oracle { common, phase_grid, beta_grid, as_is } => {
            let base = load_config(common.config.as_deref())?;
            let cfg = if as_is { base } else { small_instance(&base) };
            let ch = generate_channels(&cfg, common.seed)?;
            let res = brute_force_oracle(&cfg, &ch, phase_grid, beta_grid, OracleModes::All, DEFAULT_TOL_FEAS)?;
            let Some(res) = res else {
                println!("no feasible configuration on the grid");
                return Ok(false);
            };
            println!(
                "oracle objective {:.6e} W ({} of {} candidates solved), modes {:?}",
                res.objective, res.solved, res.candidates, res.ris.q
            );
            let tr = run_trial(&cfg, common.seed, Scheme::Proposed, &options(&common))?;
            print_trace(&tr);
            if let Some(obj) = tr.objective {
                println!("proposed / oracle = {:.4}", obj / res.objective);
            }
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join(format!("oracle_seed{}.json", common.seed)), serde_json::to_string_pretty(&res)?)?;
            Ok(true)
        }
        Command::Audit { config, trace, tol } => {
            let cfg = load_config(config.as_deref())?;
            let tr: SolveTrace = serde_json::from_str(&fs::read_to_string(&trace)?)?;
            if tr.config_hash != cfg.hash() {
                return Err(HrisError::Validation("trace was produced under a different scenario".into()));
            }
            let (Some(ris), Some(bf)) = (&tr.ris, &tr.beamforming) else {
                return Err(HrisError::Validation("trace holds no solution".into()));
            };
            let ch = generate_channels(&cfg, tr.channel_seed)?;
            let report = audit(&cfg, &ch, ris, bf, tol)?;
            for r in report.violations() {
                println!("violated {}: lhs {:.6e} rhs {:.6e} slack {:.3e}", r.name, r.lhs, r.rhs, r.slack);
            }
            println!(
                "objective {:.9e} W (stored {:.9e}), {} constraints, {} violated",
                report.objective,
                tr.objective.unwrap_or(f64::NAN),
                report.records.len(),
                report.violations().count()
            );
            Ok(report.all_satisfied())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
