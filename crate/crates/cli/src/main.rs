use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use erw_cli::commands::{self, CliError, Output};
use erw_cli::config::ExperimentConfig;
use erw_cli::record::{write_run, ResultRecord};
use erw_cli::verify::{parse_ids, run_all, Verifier};

#[derive(Parser)]
#[command(name = "erwlab", version, about = "Monte Carlo experiments for excited random walks")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

/// Per-run overrides of configuration keys.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    d: Option<String>,
    /// Cookies per site, or `inf`.
    #[arg(long)]
    m: Option<String>,
    /// constant, iid, vertical or pair.
    #[arg(long)]
    env: Option<String>,
    /// Cookie value; for `sweep`, a comma-separated grid.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    betas: Option<String>,
    /// Site law: const:B, uniform:LO:HI or discrete:V@W,...
    #[arg(long)]
    law: Option<String>,
    #[arg(long)]
    identical: Option<String>,
    #[arg(long)]
    lower: Option<String>,
    #[arg(long)]
    upper: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    env_draws: Option<String>,
    /// Derivative to estimate: at-zero, m-beta or coupled.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    stream: Option<String>,
    #[arg(long)]
    max_attempts: Option<String>,
    #[arg(long)]
    ess_fraction: Option<String>,
    #[arg(long)]
    truncation_threshold: Option<String>,
    #[arg(long)]
    beta_max: Option<String>,
    /// Any configuration key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn pairs(&self, beta_key: &'static str) -> Vec<(&'static str, &String)> {
        let fields: [(&'static str, &Option<String>); 25] = [
            ("experiment", &self.experiment),
            ("d", &self.d),
            ("m", &self.m),
            ("env", &self.env),
            (beta_key, &self.beta),
            ("betas", &self.betas),
            ("law", &self.law),
            ("identical", &self.identical),
            ("lower", &self.lower),
            ("upper", &self.upper),
            ("sigma", &self.sigma),
            ("horizon", &self.horizon),
            ("window", &self.window),
            ("replicates", &self.replicates),
            ("t", &self.t),
            ("env_draws", &self.env_draws),
            ("derivative", &self.kind),
            ("dim", &self.dim),
            ("eps", &self.eps),
            ("n", &self.n),
            ("stream", &self.stream),
            ("max_attempts", &self.max_attempts),
            ("ess_fraction", &self.ess_fraction),
            ("truncation_threshold", &self.truncation_threshold),
            ("beta_max", &self.beta_max),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write one trajectory of `horizon` steps.
    Simulate(Overrides),
    /// Speed by long runs and by the cut-time ratio.
    Speed(Overrides),
    /// Girsanov speed estimates over a grid of cookie values.
    Sweep(Overrides),
    /// Derivative of the speed: at zero, in beta, or along a coupled pair.
    Derivative(Overrides),
    /// Cut-time moments of the vertical walk.
    CutMoments(Overrides),
    /// Range constant of the simple random walk.
    Range(Overrides),
    /// Exact return probabilities of the lazy walk.
    ReturnProb(Overrides),
    /// Exact path law of short walks.
    Oracle(Overrides),
    /// Run the acceptance checks.
    Verify {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long)]
        only: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn build_config(cli: &Cli, overrides: &Overrides, beta_key: &'static str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::parse(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in overrides.pairs(beta_key) {
        cfg.set(k, v)?;
    }
    for kv in &overrides.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("`--set {kv}` needs KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (run_fn, overrides, beta_key): (fn(&ExperimentConfig) -> Result<Output, CliError>, &Overrides, _) =
        match &cli.command {
            Cmd::Simulate(o) => (commands::simulate, o, "beta"),
            Cmd::Speed(o) => (commands::speed, o, "beta"),
            Cmd::Sweep(o) => (commands::sweep, o, "betas"),
            Cmd::Derivative(o) => (commands::derivative, o, "beta"),
            Cmd::CutMoments(o) => (commands::cut_moments, o, "beta"),
            Cmd::Range(o) => (commands::range, o, "beta"),
            Cmd::ReturnProb(o) => (commands::return_prob, o, "beta"),
            Cmd::Oracle(o) => (commands::oracle, o, "beta"),
            Cmd::Verify { only, overrides } => {
                let cfg = build_config(&cli, overrides, "beta")?;
                return verify(&cfg, only.as_deref());
            }
        };
    let cfg = build_config(&cli, overrides, beta_key)?;
    let start = Instant::now();
    let (record, tables) = run_fn(&cfg)?;
    let summary = write_run(&cfg.out, &cfg, record, &tables, start.elapsed())?;
    for t in &tables {
        println!("{} rows -> {}", t.len(), cfg.out.join(format!("{}_{}.csv", cfg.experiment, t.name)).display());
    }
    println!("summary -> {}", summary.display());
    Ok(true)
}

fn verify(cfg: &ExperimentConfig, only: Option<&str>) -> Result<bool, CliError> {
    let ids = match only {
        Some(list) => parse_ids(list)?,
        None => (1..=12).collect(),
    };
    let verifier = Verifier::from_config(cfg, std::env::current_exe().ok());
    let start = Instant::now();
    let results = run_all(&verifier, &ids, |c| {
        println!("{}", c.line());
        for d in &c.details {
            println!("       {d}");
        }
    });
    let passed = results.iter().all(|c| c.pass);
    let mut record = ResultRecord::new("verify", cfg);
    record.quantities = results
        .iter()
        .map(|c| erw_cli::record::Quantity {
            name: format!("criterion {} {}", c.id, c.title),
            estimate: f64::from(u8::from(c.pass)),
            stderr: 0.0,
        })
        .collect();
    write_run(&cfg.out, cfg, record, &[], start.elapsed())?;
    Ok(passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
