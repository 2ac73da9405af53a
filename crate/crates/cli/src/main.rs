//! `galu` — experiment harness for gated linear unit networks.
//!
//! Subcommands reproduce the synthetic experiments (memorize, underparam,
//! clustered, linsep, parity) and run the theory/kernel property suites.
//! Exit codes: 0 success, 1 usage error, 2 property-suite failure,
//! 3 capacity error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use galu_cli::commands::separable::Task;
use galu_cli::commands::{self, CmdError};
use galu_cli::config::Config;
use galu_cli::rows::{self, ResultRow};

#[derive(Parser)]
#[command(
    name = "galu",
    about = "Gated linear unit networks: exactly solvable experiments and theory checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Minimal network width to memorize gaussian data
    Memorize(Flags),
    /// Training loss across kd/m ratios in the under-parametrized regime
    Underparam(Flags),
    /// Closed-form memorization of highly clustered piecewise-linear data
    Clustered(Flags),
    /// Classification of margin-filtered linearly separable data
    Linsep(Flags),
    /// Classification of parity-labeled sign vectors (a failure case)
    Parity(Flags),
    /// Kernel identity and concentration property suite
    KernelCheck(Flags),
    /// Quantitative-guarantee suite: bounds, laws, gradient equalities
    TheoryCheck(Flags),
}

/// Every configuration field as an optional override; unset flags fall back
/// to the config file, then to the subcommand's defaults.
#[derive(Args, Clone, Default)]
struct Flags {
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample size
    #[arg(long)]
    m: Option<usize>,
    /// Input dimension(s), comma separated where a sweep is meaningful
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    /// Gate count(s), comma separated
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// kd/m grid for underparam
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Root seed
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions per parameter point
    #[arg(long)]
    seeds: Option<usize>,
    /// Monte Carlo trials per parameter point
    #[arg(long)]
    trials: Option<usize>,
    /// galu | relu | both
    #[arg(long)]
    activation: Option<String>,
    /// closed-form | iterative
    #[arg(long)]
    mode: Option<String>,
    /// Memorization success threshold on the mse
    #[arg(long)]
    success_mse: Option<f64>,
    /// Upper bracket for the width search (0 derives from m/d)
    #[arg(long)]
    k_max: Option<usize>,
    /// Training set size for linsep/parity
    #[arg(long)]
    train_size: Option<usize>,
    /// Test set size for linsep/parity
    #[arg(long)]
    test_size: Option<usize>,
    /// Margin filter for linsep
    #[arg(long)]
    margin: Option<f64>,
    /// Optimizer steps for iterative runs
    #[arg(long)]
    steps: Option<usize>,
    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Optimizer learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Training loss for iterative classification runs: mse | hinge
    #[arg(long)]
    loss: Option<String>,
    /// Cluster count for the clustered experiment
    #[arg(long)]
    clusters: Option<usize>,
    /// Failure probability budget
    #[arg(long)]
    delta: Option<f64>,
    /// Mutation canary: negate the GaLU gate in the gradient-equality check
    #[arg(long)]
    negate_indicator: bool,
    /// Memory budget in MiB for dense allocations
    #[arg(long)]
    memory_budget_mb: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write trained models as JSON next to the results
    #[arg(long)]
    save_model: Option<PathBuf>,
}

impl Flags {
    /// defaults < config file < flags
    fn resolve(&self, defaults: Config) -> Result<Config, CmdError> {
        let mut cfg = match &self.config {
            Some(path) => merge_file_over(defaults, path)?,
            None => defaults,
        };
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = &self.d {
            cfg.d = v.clone();
        }
        if let Some(v) = &self.k {
            cfg.k = v.clone();
        }
        if let Some(v) = &self.ratios {
            cfg.ratios = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.seeds {
            cfg.seeds = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = &self.activation {
            cfg.activation = v.clone();
        }
        if let Some(v) = &self.mode {
            cfg.mode = v.clone();
        }
        if let Some(v) = self.success_mse {
            cfg.success_mse = v;
        }
        if let Some(v) = self.k_max {
            cfg.k_max = v;
        }
        if let Some(v) = self.train_size {
            cfg.train_size = v;
        }
        if let Some(v) = self.test_size {
            cfg.test_size = v;
        }
        if let Some(v) = self.margin {
            cfg.margin = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = &self.loss {
            cfg.loss = v.clone();
        }
        if let Some(v) = self.clusters {
            cfg.clusters = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if self.negate_indicator {
            cfg.negate_indicator = true;
        }
        if let Some(v) = self.memory_budget_mb {
            cfg.memory_budget_mb = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.save_model {
            cfg.save_model = Some(v.clone());
        }
        cfg.validate().map_err(CmdError::Usage)?;
        Ok(cfg)
    }
}

/// A config file only overrides the fields it actually mentions.
fn merge_file_over(defaults: Config, path: &std::path::Path) -> Result<Config, CmdError> {
    let file = Config::load_file(path).map_err(CmdError::Usage)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mentioned: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CmdError::Usage(format!("invalid JSON: {e}")))?;
    let obj = mentioned
        .as_object()
        .ok_or_else(|| CmdError::Usage("config must be a JSON object".into()))?;
    let mut out = defaults;
    macro_rules! take {
        ($key:literal, $field:ident) => {
            if obj.contains_key($key) {
                out.$field = file.$field.clone();
            }
        };
    }
    take!("m", m);
    take!("d", d);
    take!("k", k);
    take!("ratios", ratios);
    take!("seed", seed);
    take!("seeds", seeds);
    take!("trials", trials);
    take!("activation", activation);
    take!("mode", mode);
    take!("success_mse", success_mse);
    take!("k_max", k_max);
    take!("train_size", train_size);
    take!("test_size", test_size);
    take!("margin", margin);
    take!("steps", steps);
    take!("batch_size", batch_size);
    take!("learning_rate", learning_rate);
    take!("loss", loss);
    take!("clusters", clusters);
    take!("delta", delta);
    take!("negate_indicator", negate_indicator);
    take!("memory_budget_mb", memory_budget_mb);
    take!("out", out);
    take!("save_model", save_model);
    Ok(out)
}

fn memorize_defaults() -> Config {
    Config {
        m: 1000,
        d: vec![20, 50, 100],
        seeds: 5,
        activation: "galu".into(),
        mode: "closed-form".into(),
        ..Config::default()
    }
}

fn underparam_defaults() -> Config {
    Config::default() // m = 4096, d = 64, the standard ratio grid, 50 trials
}

fn clustered_defaults() -> Config {
    Config {
        m: 160,
        d: vec![0], // derive the concentration dimension
        clusters: 10,
        seeds: 1,
        ..Config::default()
    }
}

fn separable_defaults(loss: &str) -> Config {
    Config {
        d: vec![100],
        k: vec![32],
        activation: "both".into(),
        mode: "iterative".into(),
        loss: loss.into(),
        ..Config::default()
    }
}

fn write_outputs(
    cfg: &Config,
    rows: &[ResultRow],
    summary: Option<String>,
) -> Result<(), CmdError> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CmdError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    cfg.echo(&cfg.out)
        .map_err(|e| CmdError::Io(format!("cannot write resolved config: {e}")))?;
    rows::write_csv(&cfg.out.join("results.csv"), rows)
        .map_err(|e| CmdError::Io(format!("cannot write results: {e}")))?;
    if let Some(text) = summary {
        std::fs::write(cfg.out.join("summary.txt"), text)
            .map_err(|e| CmdError::Io(format!("cannot write summary: {e}")))?;
    }
    Ok(())
}

fn dispatch(cmd: &Cmd) -> Result<bool, CmdError> {
    match cmd {
        Cmd::Memorize(flags) => {
            let cfg = flags.resolve(memorize_defaults())?;
            let rows = commands::memorize::run(&cfg)?;
            write_outputs(&cfg, &rows, None)?;
            print_rows(&rows, "min_k");
            Ok(true)
        }
        Cmd::Underparam(flags) => {
            let cfg = flags.resolve(underparam_defaults())?;
            let rows = commands::underparam::run(&cfg)?;
            write_outputs(&cfg, &rows, None)?;
            print_rows(&rows, "mse_mean");
            Ok(true)
        }
        Cmd::Clustered(flags) => {
            let cfg = flags.resolve(clustered_defaults())?;
            let rows = commands::clustered::run(&cfg)?;
            write_outputs(&cfg, &rows, None)?;
            print_rows(&rows, "train_mse");
            print_rows(&rows, "test_error");
            Ok(true)
        }
        Cmd::Linsep(flags) => {
            // the margin objective: separable features make the hinge
            // optimum a perfect classifier, which squared loss is not
            let cfg = flags.resolve(separable_defaults("hinge"))?;
            let rows = commands::separable::run(&cfg, Task::Linsep)?;
            write_outputs(&cfg, &rows, None)?;
            print_rows(&rows, "test_accuracy");
            Ok(true)
        }
        Cmd::Parity(flags) => {
            let cfg = flags.resolve(separable_defaults("mse"))?;
            let rows = commands::separable::run(&cfg, Task::Parity)?;
            write_outputs(&cfg, &rows, None)?;
            print_rows(&rows, "test_accuracy");
            Ok(true)
        }
        Cmd::KernelCheck(flags) => {
            let cfg = flags.resolve(Config::default())?;
            let report = commands::checks_cmd::run_kernel(&cfg)?;
            let summary = commands::checks_cmd::summary_text(&report.outcomes);
            write_outputs(&cfg, &report.rows, Some(summary.clone()))?;
            print!("{summary}");
            Ok(report.all_passed)
        }
        Cmd::TheoryCheck(flags) => {
            let cfg = flags.resolve(Config::default())?;
            let report = commands::checks_cmd::run_theory(&cfg)?;
            let summary = commands::checks_cmd::summary_text(&report.outcomes);
            write_outputs(&cfg, &report.rows, Some(summary.clone()))?;
            print!("{summary}");
            Ok(report.all_passed)
        }
    }
}

fn print_rows(rows: &[ResultRow], metric: &str) {
    for r in rows.iter().filter(|r| r.metric == metric) {
        println!(
            "{} m={} d={} k={} {} {} = {:.6}",
            r.experiment, r.param_m, r.param_d, r.param_k, r.activation, r.metric, r.value
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("property suite reported failures");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_capacity() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
