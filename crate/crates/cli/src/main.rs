//! Command line front end: every subcommand is a thin wrapper over the
//! library harness, reading one TOML config and writing CSV into the
//! output directory. Runs are deterministic in (config, seed).
//!
//! Exit codes: 0 on success, 1 on configuration or io errors, 2 when
//! file-based estimation does not converge.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hamsense::config::{load_config, RunConfig};
use hamsense::harness::{
    instantiate_model, run_benchmark, run_certification, run_diagnostics, run_noise_study,
    write_certification_csv, write_diagnostics_csv, write_noise_csv, write_summary_csv,
    write_trials_csv, ModelInstance,
};
use hamsense::sensing::{self, OutcomeModel};
use hamsense::solver::solve_reweighted;
use hamsense::{Error, Result};

#[derive(Parser)]
#[command(name = "hamsense", version, about = "Sparse Hamiltonian estimation from random local measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override master_seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV reports
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved model and write its coefficients
    Model(CommonArgs),
    /// Assemble one sensing system and write phi/pbar/meta files
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of measurement configurations
        #[arg(long)]
        m: usize,
    },
    /// Recover coefficients from files written by simulate
    Estimate {
        /// Directory holding phi.csv, pbar.csv, meta.toml
        #[arg(long, value_name = "DIR")]
        system: PathBuf,
        /// Residual budget; required, real data carries no oracle
        #[arg(long)]
        epsilon: Option<f64>,
        /// Optional config whose [solver] section tunes the run
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Recovery performance over a grid of batch sizes
    Benchmark(CommonArgs),
    /// Paired clean-versus-noisy recovery comparison
    NoiseStudy(CommonArgs),
    /// Estimate-stability certificate over nested batches
    Certify(CommonArgs),
    /// Measurement-ensemble concentration and isometry probes
    Diagnose(CommonArgs),
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Model(common) => {
            let cfg = load(&common)?;
            cmd_model(&cfg, &common.out)
        }
        Command::Simulate { common, m } => {
            let cfg = load(&common)?;
            cmd_simulate(&cfg, m, &common.out)
        }
        Command::Estimate { system, epsilon, config, out } => {
            cmd_estimate(&system, epsilon, config.as_deref(), &out)
        }
        Command::Benchmark(common) => {
            let cfg = load(&common)?;
            cmd_benchmark(&cfg, &common.out)
        }
        Command::NoiseStudy(common) => {
            let cfg = load(&common)?;
            cmd_noise_study(&cfg, &common.out)
        }
        Command::Certify(common) => {
            let cfg = load(&common)?;
            cmd_certify(&cfg, &common.out)
        }
        Command::Diagnose(common) => {
            let cfg = load(&common)?;
            cmd_diagnose(&cfg, &common.out)
        }
    }
}

fn load(common: &CommonArgs) -> Result<RunConfig> {
    if let Some(k) = common.threads {
        // a second build_global in the same process is harmless; the
        // first pool wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, body: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}

fn coeff_csv(values: &[f64]) -> Vec<u8> {
    let mut out = b"index,coefficient\n".to_vec();
    for (i, v) in values.iter().enumerate() {
        if *v != 0.0 {
            out.extend_from_slice(format!("{i},{v:e}\n").as_bytes());
        }
    }
    out
}

fn cmd_model(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let instance = instantiate_model(cfg)?;
    match &instance {
        ModelInstance::Standard { h, time, outcomes } => {
            let kind = match outcomes {
                OutcomeModel::Exact => "exact",
                OutcomeModel::Linearized => "linearized",
            };
            let nnz = h.values().iter().filter(|v| **v != 0.0).count();
            println!(
                "closed system on {} qubits, {} nonzero coefficients, t = {time:.6}, {kind} outcomes",
                h.n_qubits(),
                nnz
            );
            let path = write_file(out, "model.csv", &coeff_csv(h.values()))?;
            println!("wrote {}", path.display());
        }
        ModelInstance::Fine(p) => {
            println!(
                "perturbation on {} qubits over a known background, t = {:.6}",
                p.n_qubits(),
                p.time
            );
            write_file(out, "background.csv", &coeff_csv(p.h0.values()))?;
            let path = write_file(out, "model.csv", &coeff_csv(p.delta_true.values()))?;
            println!("wrote {}", path.display());
        }
        ModelInstance::Open(spec) => {
            println!(
                "system-bath register {}+{} qubits, {} coupling slots, t = {:.6}",
                spec.n_system(),
                spec.n_bath(),
                spec.coupling_dim(),
                spec.time
            );
            let lam = spec.flattened_lambdas();
            let path = write_file(out, "model.csv", &coeff_csv(lam.as_slice().unwrap()))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(cfg: &RunConfig, m: usize, out: &Path) -> Result<ExitCode> {
    if m == 0 {
        return Err(Error::config("m must be ≥ 1"));
    }
    let instance = instantiate_model(cfg)?;
    let (system, configs) = match &instance {
        ModelInstance::Standard { h, time, outcomes } => {
            let configs = hamsense::harness::benchmark_configs(cfg, h.n_qubits(), *time, m);
            let noise = hamsense::harness::benchmark_noise(cfg, m);
            (sensing::assemble(h, &configs, &noise, *outcomes)?, configs)
        }
        ModelInstance::Fine(p) => {
            let configs = hamsense::harness::benchmark_configs(cfg, p.n_qubits(), p.time, m);
            (
                hamsense::fine_structure::assemble_fine_system(p, &configs)?,
                configs,
            )
        }
        ModelInstance::Open(_) => {
            return Err(Error::config(
                "simulate writes the closed-system file layout; coupling runs go through benchmark",
            ))
        }
    };
    sensing::write_system(&system, &configs, out)?;
    println!(
        "wrote {} rows over {} columns to {}",
        system.m(),
        system.d_coeff(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_estimate(
    system_dir: &Path,
    epsilon: Option<f64>,
    config: Option<&Path>,
    out: &Path,
) -> Result<ExitCode> {
    let cfg_solver = match config {
        Some(path) => load_config(path)?.solver,
        None => Default::default(),
    };
    let eps = epsilon.or(cfg_solver.epsilon).ok_or_else(|| {
        Error::config(
            "no residual budget given: pass --epsilon or set [solver] epsilon; \
             measured data carries no oracle for it",
        )
    })?;
    let (system, _) = sensing::read_system(system_dir)?;
    let opts = cfg_solver.build(eps);
    let result = solve_reweighted(&system.phi.view(), &system.pbar.view(), &opts)?;
    let path = write_file(out, "h_star.csv", &coeff_csv(result.h_star.as_slice().unwrap()))?;
    println!(
        "residual {:.3e} after {} iterations, converged = {}",
        result.residual_l2, result.iterations, result.converged
    );
    println!("wrote {}", path.display());
    if result.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn cmd_benchmark(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let report = run_benchmark(cfg)?;
    let mut trials = Vec::new();
    write_trials_csv(&report.records, &mut trials)?;
    write_file(out, "trials.csv", &trials)?;
    let mut summary = Vec::new();
    write_summary_csv(&report.summary, &mut summary)?;
    write_file(out, "summary.csv", &summary)?;
    for s in &report.summary {
        println!(
            "m = {:>4}: mean performance {:.4} ± {:.4} over {} trials ({} non-converged)",
            s.m, s.mean_performance, s.std_performance, s.trials, s.non_converged
        );
    }
    println!("{}", report.reference_note);
    println!("wrote trials.csv, summary.csv to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_noise_study(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let report = run_noise_study(cfg)?;
    let mut csv = Vec::new();
    write_noise_csv(&report, &mut csv)?;
    write_file(out, "noise.csv", &csv)?;
    println!(
        "mean performance {:.4} clean vs {:.4} noisy (drop {:.4}) over {} paired trials",
        report.mean_clean,
        report.mean_noisy,
        report.mean_drop,
        report.records.len()
    );
    println!("wrote noise.csv to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_certify(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let trials = run_certification(cfg)?;
    let mut csv = Vec::new();
    write_certification_csv(&trials, &mut csv)?;
    write_file(out, "certification.csv", &csv)?;
    let certified = trials.iter().filter(|t| t.certified).count();
    println!("{certified} of {} trials certified stable", trials.len());
    println!("wrote certification.csv to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_diagnose(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let report = run_diagnostics(cfg)?;
    let mut csv = Vec::new();
    write_diagnostics_csv(&report, &mut csv)?;
    write_file(out, "diagnostics.csv", &csv)?;
    let mut dev = Vec::new();
    hamsense::diagnostics::write_deviation_csv(&report.scan, &mut dev)?;
    write_file(out, "deviation.csv", &dev)?;
    println!(
        "column moment ratio g/f = {:.4}, kappa = {:.4}, bound holds = {}",
        report.scan.g / report.scan.f,
        report.scan.kappa,
        report.scan.ratio_bound_ok
    );
    println!(
        "isometry probe: delta_{} estimate {:.4} over {} samples",
        report.probe_s, report.probe_delta, report.probe_samples
    );
    println!("wrote diagnostics.csv, deviation.csv to {}", out.display());
    Ok(ExitCode::SUCCESS)
}
