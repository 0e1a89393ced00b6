use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use curveflow::diagnostics::{
    all_proved_pass, gradient_reports, gradient_samples, refinement_study, CertificateReport,
};
use curveflow::io::{diagnose_run, run_manifest, write_report, RunManifest};
use curveflow::EnergyParams;

#[derive(Parser)]
#[command(name = "curveflow", version, about = "p-elastic flow of closed planar curves by minimizing movements")]
struct Cli {
    /// Print only the final verdict.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for concurrent runs and residual evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the manifest's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow described by a manifest and certify it.
    Run(ManifestArgs),
    /// Compare analytic first variations with finite differences.
    CheckGradients {
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        p: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a stored run directory from its snapshots.
    Diagnose {
        #[arg(long)]
        out: PathBuf,
    },
    /// Halve τ repeatedly and compare terminal curves.
    Refine {
        #[command(flatten)]
        run: ManifestArgs,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Run the manifest over a grid of exponents and length weights.
    Sweep {
        #[command(flatten)]
        run: ManifestArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        lambda: Vec<f64>,
    },
}

fn print_reports(reports: &[CertificateReport], quiet: bool) {
    if quiet {
        return;
    }
    for r in reports {
        let verdict = match (r.pass, r.proved) {
            (_, false) if r.bound.is_nan() => "info",
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "miss",
        };
        println!("{verdict:>4}  {:<28} {:>12.5e}  bound {:>12.5e}  [{}]", r.name, r.measured, r.bound, r.context);
    }
}

fn out_dir(args: &ManifestArgs, manifest: &RunManifest) -> PathBuf {
    args.out.clone().unwrap_or_else(|| manifest.output_dir.clone())
}

fn run_one(manifest: &RunManifest, out: &Path, quiet: bool) -> anyhow::Result<bool> {
    let outcome = run_manifest(manifest, out).with_context(|| format!("run into {}", out.display()))?;
    if !quiet {
        let s = &outcome.summary;
        println!(
            "{}: {} steps to t = {}, energy {:.10} → {:.10}, length {:.8}, elastica residual {:.3e}",
            out.display(),
            s.steps,
            s.final_time,
            s.energy_initial,
            s.energy_final,
            s.length_final,
            s.elastica_residual
        );
        if let Some(f) = &s.failure {
            println!("aborted: {f}");
        }
    }
    print_reports(&outcome.reports, quiet);
    Ok(outcome.summary.all_proved_pass)
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Run(args) => {
            let manifest = RunManifest::load(&args.manifest)?;
            run_one(&manifest, &out_dir(args, &manifest), cli.quiet)
        }
        Command::CheckGradients { grid, cases, p, lambda, seed, out } => {
            let mut reports = Vec::new();
            for &p in p {
                let params = EnergyParams::new(p, *lambda)?;
                let samples = gradient_samples(&params, *grid, *cases, *seed)?;
                reports.extend(gradient_reports(&samples, &format!("p = {p}")));
            }
            print_reports(&reports, cli.quiet);
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                write_report(&reports, &dir.join("gradients.json"))?;
            }
            Ok(all_proved_pass(&reports))
        }
        Command::Diagnose { out } => {
            let reports = diagnose_run(out)?;
            print_reports(&reports, cli.quiet);
            write_report(&reports, &out.join("diagnose.json"))?;
            Ok(all_proved_pass(&reports))
        }
        Command::Refine { run, levels } => {
            let manifest = RunManifest::load(&run.manifest)?;
            let init = manifest.initial_curve()?;
            let study = refinement_study(&init, &manifest.config, *levels)?;
            print_reports(&study.reports, cli.quiet);
            let dir = out_dir(run, &manifest);
            std::fs::create_dir_all(&dir)?;
            write_report(&study.reports, &dir.join("refinement.json"))?;
            Ok(all_proved_pass(&study.reports))
        }
        Command::Sweep { run, p, lambda } => {
            let manifest = RunManifest::load(&run.manifest)?;
            let base = out_dir(run, &manifest);
            let mut members = Vec::new();
            for &p in p {
                for &l in lambda {
                    let mut m = manifest.clone();
                    m.config.params = EnergyParams::new(p, l)?;
                    let dir = base.join(format!("p{p}_lambda{l}"));
                    m.output_dir = dir.clone();
                    members.push((m, dir));
                }
            }
            let verdicts: Vec<anyhow::Result<bool>> =
                members.par_iter().map(|(m, dir)| run_one(m, dir, cli.quiet)).collect();
            let mut ok = true;
            for v in verdicts {
                ok &= v?;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(true) => {
            if !cli.quiet {
                println!("all proved certificates pass");
            }
            ExitCode::SUCCESS
        }
        Ok(false) => {
            eprintln!("a proved certificate failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
