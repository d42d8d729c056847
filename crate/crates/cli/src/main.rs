// `!(x >= 0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
use std::io::{self, BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddrm_cli::config::{EtaBSetting, RunConfig, KEYS};
use ddrm_cli::error::{CliError, Result};
use ddrm_cli::restore;
use ddrm_cli::verify::{self, VerifyOptions};

#[derive(Parser)]
#[command(name = "ddrm", version, about = "Diffusion restoration for linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore an image and write samples, aggregates and metrics.
    Restore(RunArgs),
    /// Mean PSNR over an (eta, etab) grid, as CSV on stdout.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated eta values.
        #[arg(long, default_value = "0.7,0.8,0.9,1.0")]
        etas: String,
        /// Comma-separated etab values ("theorem" allowed).
        #[arg(long, default_value = "0.7,0.8,0.9,1.0")]
        etabs: String,
    },
    /// Run the acceptance checks.
    Verify {
        /// Skip the Monte Carlo checks.
        #[arg(long)]
        quick: bool,
        /// Scale every singular value in the SVD check (fault injection).
        #[arg(long, hide = true)]
        corrupt_singulars: Option<f64>,
        /// Write a JSON summary here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Loopback denoiser server on stdin/stdout, for protocol testing.
    #[command(hide = true)]
    BridgeEcho {
        #[arg(long)]
        expect_n: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    outdir: Option<String>,
    #[arg(long)]
    deg: Option<String>,
    #[arg(long = "sigma-y")]
    sigma_y: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    etab: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long = "schedule-file")]
    schedule_file: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    denoiser: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long = "gmm-file")]
    gmm_file: Option<String>,
    #[arg(long = "bridge-cmd")]
    bridge_cmd: Option<String>,
    #[arg(long = "class-label")]
    class_label: Option<String>,
    #[arg(long = "sv-threshold")]
    sv_threshold: Option<String>,
    #[arg(long)]
    mask: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_text(
                &std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?,
            )?,
            None => RunConfig::default(),
        };
        let flags = [
            &self.deg,
            &self.sigma_y,
            &self.eta,
            &self.etab,
            &self.steps,
            &self.schedule_file,
            &self.seed,
            &self.samples,
            &self.denoiser,
            &self.tau,
            &self.mu,
            &self.gmm_file,
            &self.bridge_cmd,
            &self.class_label,
            &self.sv_threshold,
            &self.mask,
            &self.input,
            &self.outdir,
        ];
        for (key, value) in KEYS.iter().zip(flags) {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_list<T>(text: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    text.split(',').map(|s| parse(s.trim())).collect()
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Restore(args) => {
            let cfg = args.resolve()?;
            let report = restore::restore(&cfg, restore::threads_from_env()?)?;
            for (name, value) in &report.metrics {
                println!("{name}={value}");
            }
            Ok(true)
        }
        Command::Sweep { run, etas, etabs } => {
            let cfg = run.resolve()?;
            let etas = parse_list(&etas, |s| {
                s.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("etas: cannot parse '{s}'")))
            })?;
            let etabs = parse_list(&etabs, |s| s.parse::<EtaBSetting>())?;
            let prepared = restore::prepare(&cfg)?;
            let rows = restore::sweep(&prepared, &etas, &etabs, restore::threads_from_env()?)?;
            print!("{}", restore::sweep_csv(&rows));
            Ok(true)
        }
        Command::Verify {
            quick,
            corrupt_singulars,
            summary,
        } => {
            let opts = VerifyOptions {
                quick,
                corrupt_singulars,
                threads: restore::threads_from_env()?,
            };
            let results = verify::run(&opts);
            for r in &results {
                println!("{}", verify::report_line(r));
            }
            if let Some(path) = summary {
                std::fs::write(path, verify::summary_json(&results)?)?;
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
            if failed.is_empty() {
                Ok(true)
            } else {
                Err(CliError::Verify(format!("failed checks: {}", failed.join(" "))))
            }
        }
        Command::BridgeEcho { expect_n } => {
            let stdin = BufReader::new(io::stdin().lock());
            let stdout = BufWriter::new(io::stdout().lock());
            ddrm::denoiser::bridge::serve_echo(stdin, stdout, expect_n)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
