mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{parse_loss_mode, parse_mode, Overrides, RunConfigFile};
use output::{RunWriter, SummaryRow};
use rspinn::diagnostics::{bias_audit, gradcheck, verify_estimators, AuditConfig, AuditTarget};
use rspinn::loss::LossMode;
use rspinn::trainer::{summarize, train_with, ModeName};
use rspinn::Error;

/// Exit status of a run that finished but failed a check or diverged.
const EXIT_FAILED: u8 = 1;
/// Exit status of an unusable config or argument.
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "rspinn", version, about = "Randomized-smoothing PINN solver for high-dimensional PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write CSV records.
    Run {
        /// Config file, or the name of a bundled config.
        #[arg(long)]
        config: String,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// biased, unbiased1, unbiased2 or hybrid.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ModeName>,
        #[arg(long)]
        dim: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical bias of every derivative estimator on closed-form cases.
    VerifyEstimators {
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Resampled loss of an affine model against its exact value.
    BiasAudit {
        /// boundary, or a residual kind such as hjb_quadratic.
        #[arg(long)]
        pde: AuditTarget,
        #[arg(long, value_parser = parse_loss_mode)]
        mode: LossMode,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 100_000)]
        resamples: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draws per mode for the gradient-variance table; 0 skips it.
        #[arg(long, default_value_t = 10_000)]
        variance_draws: usize,
    },
    /// Reverse-mode gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("RSPINN_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the worker pool: {e}");
                }
            }
            _ => {
                eprintln!("error: RSPINN_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(EXIT_INVALID);
            }
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            mode,
            dim,
            out,
        } => cmd_run(&config, Overrides { seed, mode, dim, out }),
        Command::VerifyEstimators { draws, seed } => report(verify_estimators(draws, seed)),
        Command::BiasAudit {
            pde,
            mode,
            k,
            resamples,
            dim,
            sigma,
            seed,
            variance_draws,
        } => {
            let cfg = AuditConfig {
                dim,
                sigma,
                seed,
                variance_draws,
                ..AuditConfig::new(pde, mode, k, resamples)
            };
            report(bias_audit(&cfg).map(|a| a.report))
        }
        Command::Gradcheck { seed, tol } => report(gradcheck(seed, tol)),
    }
}

fn report(r: rspinn::Result<rspinn::diagnostics::Report>) -> ExitCode {
    match r {
        Ok(r) => {
            print!("{r}");
            let failed = r.checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", r.checks.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn cmd_run(source: &str, overrides: Overrides) -> ExitCode {
    let (mut file, name) = match RunConfigFile::load(source) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    // the file must be valid as written, before any override
    if let Err(e) = file.train_config().resolve() {
        eprintln!("error: {source}: {e}");
        return ExitCode::from(EXIT_INVALID);
    }
    overrides.apply(&mut file);
    let config = file.train_config();
    if let Err(e) = config.resolve() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INVALID);
    }
    let s = &config.schedule;
    if s.seeds.is_empty() {
        eprintln!("error: no seeds to run");
        return ExitCode::from(EXIT_INVALID);
    }
    let work = s.epochs as f64 * s.batch_size as f64 * config.smoothing.k as f64;
    if work > 5e9 {
        log::warn!("full-scale run: {work:.1e} perturbed evaluations per seed; expect hours per seed");
    }
    let prefix = file.reporting.name.clone().unwrap_or(name);
    let dir = &file.reporting.out_dir;
    if let Err(e) = std::fs::create_dir_all(dir) {
        eprintln!("error: {}: {e}", dir.display());
        return ExitCode::from(EXIT_INVALID);
    }

    let mut summary = Vec::new();
    let mut errors = Vec::new();
    let mut ok = true;
    for &seed in &s.seeds {
        let path = dir.join(format!("{prefix}_seed{seed}.csv"));
        let mut writer = match RunWriter::create(&path) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(EXIT_INVALID);
            }
        };
        log::info!("seed {seed}: writing {}", path.display());
        let started = Instant::now();
        let mut io_error = None;
        let result = train_with(&config, seed, &mut |row| {
            if let Err(e) = writer.write(row) {
                io_error.get_or_insert(e);
            }
            log::info!(
                "seed {seed} epoch {:>6} {:<9} loss {:.4e} test {:.4e}",
                row.epoch,
                row.mode.as_str(),
                row.train_loss,
                row.test_rel_l2
            );
        });
        if let Some(e) = io_error {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_FAILED);
        }
        let wall = started.elapsed().as_secs_f64();
        match result {
            Ok(record) => {
                println!("seed {seed}: final relative L2 error {:.6e}", record.final_error);
                errors.push(record.final_error);
                summary.push(SummaryRow {
                    seed: seed.to_string(),
                    final_error: record.final_error,
                    wall_time_s: wall,
                    status: "ok".into(),
                });
            }
            Err(Error::Diverged { epoch, diagnostic, record }) => {
                eprintln!("seed {seed}: diverged at epoch {epoch}: {diagnostic}");
                ok = false;
                summary.push(SummaryRow {
                    seed: seed.to_string(),
                    final_error: record.final_error,
                    wall_time_s: wall,
                    status: "diverged".into(),
                });
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                ok = false;
                summary.push(SummaryRow {
                    seed: seed.to_string(),
                    final_error: f64::NAN,
                    wall_time_s: wall,
                    status: "error".into(),
                });
            }
        }
    }
    if !errors.is_empty() {
        let (mean, std) = summarize(&errors);
        println!("{prefix}: relative L2 error {mean:.6e} ± {std:.6e} over {} seeds", errors.len());
        for (label, v) in [("mean", mean), ("std", std)] {
            summary.push(SummaryRow {
                seed: label.into(),
                final_error: v,
                wall_time_s: f64::NAN,
                status: if ok { "ok".into() } else { "partial".into() },
            });
        }
    }
    let path = dir.join(format!("{prefix}_summary.csv"));
    if let Err(e) = output::write_summary(&path, &summary) {
        eprintln!("error: {}: {e}", path.display());
        return ExitCode::from(EXIT_FAILED);
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}
