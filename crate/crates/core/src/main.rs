use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qdnet::harness::{self, RunConfig, Suite};
use qdnet::optim::Algorithm;

#[derive(Parser)]
#[command(name = "qdnet", version, about = "Quasi-diagonal Riemannian training of MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write the per-epoch CSV log.
    Train(RunArgs),
    /// Train once per step-size and report the best one.
    Grid(RunArgs),
    /// Median per-epoch time of several algorithms relative to SGD.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated algorithms to time.
        #[arg(long, default_value = "sgd,adagrad,dop,qdop,dmcnat,qdmcnat,dnat,qdnat")]
        algos: String,
    },
    /// Run a built-in verification suite (or all of them).
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Every flag is optional and overrides the config file, which overrides
/// the defaults.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    /// Layer sizes, e.g. 784,100,10.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lr_grid: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    nmc: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Hidden-layer dropout rate.
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    input_dropout: Option<String>,
    /// Incoming connections per unit (sparse networks).
    #[arg(long, value_name = "FAN_IN")]
    sparsity: Option<String>,
    #[arg(long)]
    invert_inputs: bool,
    #[arg(long)]
    autoencode: bool,
    /// Held-out samples from the end of the data.
    #[arg(long)]
    valid: Option<String>,
    /// Use only the first N samples.
    #[arg(long)]
    limit: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    log: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let pairs = [
            ("dataset", &self.dataset),
            ("data-dir", &self.data_dir),
            ("arch", &self.arch),
            ("activation", &self.activation),
            ("output", &self.output),
            ("algo", &self.algo),
            ("lr", &self.lr),
            ("lr-grid", &self.lr_grid),
            ("gamma", &self.gamma),
            ("epsilon", &self.epsilon),
            ("nmc", &self.nmc),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("dropout", &self.dropout),
            ("input-dropout", &self.input_dropout),
            ("sparsity", &self.sparsity),
            ("valid", &self.valid),
            ("limit", &self.limit),
            ("warmup", &self.warmup),
            ("seed", &self.seed),
            ("log", &self.log),
            ("checkpoint", &self.checkpoint),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.invert_inputs {
            cfg.set("invert-inputs", "true")?;
        }
        if self.autoencode {
            cfg.set("autoencode", "true")?;
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fmt_row(r: &harness::EpochRow) -> String {
    format!(
        "epoch {:>3}  train_nll {:.5}  train_err {:.4}  valid_nll {:.5}  valid_err {:.4}  {:.2}s{}",
        r.epoch,
        r.train.nll,
        r.train.err,
        r.valid.nll,
        r.valid.err,
        r.wall_s,
        if r.diverged { "  DIVERGED" } else { "" }
    )
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let (train, valid) = cfg.load_data()?;
            let out = harness::train(&cfg, &train, valid.as_ref())?;
            println!(
                "epoch   0  train_nll {:.5}  valid_nll {:.5}",
                out.log.initial_train.nll, out.log.initial_valid.nll
            );
            for r in &out.log.rows {
                println!("{}", fmt_row(r));
            }
            Ok(true)
        }
        Command::Grid(args) => {
            let cfg = args.config()?;
            let (train, valid) = cfg.load_data()?;
            let summary = harness::grid(&cfg, &cfg.lr_grid, &train, valid.as_ref())?;
            print!("{}", summary.report());
            Ok(true)
        }
        Command::Bench { run, algos } => {
            let cfg = run.config()?;
            let (train, _) = cfg.load_data()?;
            let algos = algos
                .split(',')
                .map(|a| a.trim().parse::<Algorithm>())
                .collect::<qdnet::Result<Vec<_>>>()?;
            let rows = harness::bench(&cfg, &algos, &train)?;
            print!("{}", harness::bench_report(&rows));
            Ok(true)
        }
        Command::Verify { suite, seed } => {
            let suites = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let mut ok = true;
            for s in suites {
                let report = harness::run_suite(s, seed)?;
                print!("{report}");
                ok &= report.passed();
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
