//! Command-line and config-file parsing into a validated [`RunConfig`].

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{CommandFactory, Parser, ValueEnum};
use seedbank_core::diffusion::Boundary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CommandKind {
    Rates,
    LimitChain,
    Timescale,
    Simulate,
    Duality,
    Converge,
    Spark,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    #[default]
    Seedbank,
    TwoIsland,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum MatrixKind {
    /// Block-counting rate matrix (structured for the two-island model)
    #[default]
    Q,
    /// Projection onto states with at most one active block
    P,
    /// Generator of the ancient limit
    G,
    /// Slow part of the prelimit decomposition
    B,
    /// Generator of the imbalanced-island limit
    Ghat,
    /// Limit chain restricted to at most one active block
    Gbar,
}

macro_rules! value_name {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = self.to_possible_value().expect("no skipped variants");
                f.write_str(v.get_name())
            }
        }
    )*};
}
value_name!(CommandKind, ModelKind, MatrixKind);

/// Seed bank scaling-limit toolkit.
///
/// Every option can also be given as `key=value` in a file passed with `--config`;
/// flags on the command line take precedence.
#[derive(Debug, Parser)]
#[command(name = "seedbank", version, allow_negative_numbers = true)]
pub struct Cli {
    /// Pipeline to run
    #[arg(value_enum)]
    pub command: Option<CommandKind>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Matrix dumped by `rates`
    #[arg(long, value_enum)]
    pub matrix: Option<MatrixKind>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Comma-separated, strictly decreasing
    #[arg(long = "c-list", value_delimiter = ',')]
    pub c_list: Option<Vec<f64>>,
    #[arg(long = "K")]
    pub k: Option<f64>,
    #[arg(long = "alpha-prime")]
    pub alpha_prime: Option<f64>,
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long)]
    pub m0: Option<usize>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub y0: Option<f64>,
    /// Single time point; shorthand for a one-element `--t-list`
    #[arg(long)]
    pub t: Option<f64>,
    /// Comma-separated, increasing
    #[arg(long = "t-list", value_delimiter = ',')]
    pub t_list: Option<Vec<f64>>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub replicates: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// EM boundary treatment: clamp or moment-matched
    #[arg(long)]
    pub boundary: Option<Boundary>,
    /// Bias allowance added to the MC tolerance in `duality`
    #[arg(long)]
    pub bias: Option<f64>,
    /// Use the limit process instead of the prelimit one
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub limit: Option<bool>,
    /// Two-time joint laws in `converge` (needs exactly two times)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub joint: Option<bool>,
    /// Output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key=value` file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads for replicate fan-out
    #[arg(long)]
    pub workers: Option<usize>,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident; $($f:ident),*) => {
        Cli { $($f: $a.$f.or($b.$f)),* }
    };
}

impl Cli {
    /// Field-wise merge; values set in `self` win.
    fn or(self, other: Cli) -> Cli {
        let (a, mut b) = (self, other);
        if a.t.is_some() || a.t_list.is_some() {
            b.t = None;
            b.t_list = None;
        }
        merge_fields!(a, b; command, model, matrix, c, c_list, k, alpha_prime, n0, m0, x0, y0, t, t_list, h,
            replicates, seed, boundary, bias, limit, joint, out, config, workers)
    }
}

/// Usage error, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Fully resolved run parameters with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: ModelKind,
    pub matrix: MatrixKind,
    pub c: Option<f64>,
    pub c_list: Option<Vec<f64>>,
    pub k: f64,
    pub alpha_prime: Option<f64>,
    pub n0: Option<usize>,
    pub m0: Option<usize>,
    pub x0: Option<f64>,
    pub y0: Option<f64>,
    pub t_list: Option<Vec<f64>>,
    pub h: f64,
    pub replicates: u64,
    pub seed: u64,
    pub boundary: Boundary,
    pub bias: Option<f64>,
    pub limit: bool,
    pub joint: bool,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub const DEFAULT_K: f64 = 1.0;
pub const DEFAULT_H: f64 = 1e-3;
pub const DEFAULT_REPLICATES: u64 = 10_000;
pub const DEFAULT_SEED: u64 = 42;

impl RunConfig {
    /// `key=value` pairs of every parameter that can influence the output.
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let opt_n = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let list = |v: &Option<Vec<f64>>| {
            v.as_ref().map_or_else(
                || "none".to_string(),
                |l| l.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            )
        };
        vec![
            ("command", self.command.to_string()),
            ("model", self.model.to_string()),
            ("matrix", self.matrix.to_string()),
            ("c", opt(self.c)),
            ("c_list", list(&self.c_list)),
            ("K", self.k.to_string()),
            ("alpha_prime", opt(self.alpha_prime)),
            ("n0", opt_n(self.n0)),
            ("m0", opt_n(self.m0)),
            ("x0", opt(self.x0)),
            ("y0", opt(self.y0)),
            ("t_list", list(&self.t_list)),
            ("h", self.h.to_string()),
            ("replicates", self.replicates.to_string()),
            ("seed", self.seed.to_string()),
            ("boundary", self.boundary.name().to_string()),
            ("bias", opt(self.bias)),
            ("limit", self.limit.to_string()),
            ("joint", self.joint.to_string()),
        ]
    }
}

/// Long option names accepted as config-file keys, with `_` read as `-`.
fn known_keys() -> Vec<String> {
    Cli::command()
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|k| k != "config" && k != "help" && k != "version")
        .collect()
}

/// Parses flat `key=value` text into command-line tokens. `#` starts a comment.
pub fn config_tokens(text: &str) -> Result<(Option<String>, Vec<String>), UsageError> {
    let keys = known_keys();
    let mut command = None;
    let mut tokens = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value, got '{line}'", lineno + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "command" {
            command = Some(value.to_string());
            continue;
        }
        if !keys.contains(&key) {
            return Err(usage(format!("unknown config key '{key}'")));
        }
        tokens.push(format!("--{key}={value}"));
    }
    Ok((command, tokens))
}

fn parse_cli(args: &[OsString]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(args)
}

/// Parses argv, merges the optional config file under it, and validates.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let first = parse_cli(&argv).map_err(ParseFailure::Clap)?;
    let cli = match &first.config {
        None => first,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            let (command, tokens) = config_tokens(&text)?;
            let mut file_args: Vec<OsString> = vec![argv.first().cloned().unwrap_or_else(|| "seedbank".into())];
            file_args.extend(command.map(OsString::from));
            file_args.extend(tokens.into_iter().map(OsString::from));
            let file = parse_cli(&file_args).map_err(|e| {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
                usage(format!("config {}: {first}", path.display()))
            })?;
            first.or(file)
        }
    };
    Ok(resolve(cli)?)
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Usage(UsageError),
}

impl From<UsageError> for ParseFailure {
    fn from(e: UsageError) -> Self {
        ParseFailure::Usage(e)
    }
}

fn positive(key: &str, v: f64) -> Result<(), UsageError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("{key} must be positive, got {v}")))
    }
}

fn unit(key: &str, v: f64) -> Result<(), UsageError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(usage(format!("{key} must lie in [0, 1], got {v}")))
    }
}

fn resolve(cli: Cli) -> Result<RunConfig, UsageError> {
    let command = cli.command.ok_or_else(|| usage("missing command"))?;
    if cli.t.is_some() && cli.t_list.is_some() {
        return Err(usage("give either t or t-list, not both"));
    }
    let t_list = cli.t.map(|t| vec![t]).or(cli.t_list);
    let config = RunConfig {
        command,
        model: cli.model.unwrap_or_default(),
        matrix: cli.matrix.unwrap_or_default(),
        c: cli.c,
        c_list: cli.c_list,
        k: cli.k.unwrap_or(DEFAULT_K),
        alpha_prime: cli.alpha_prime,
        n0: cli.n0,
        m0: cli.m0,
        x0: cli.x0,
        y0: cli.y0,
        t_list,
        h: cli.h.unwrap_or(DEFAULT_H),
        replicates: cli.replicates.unwrap_or(DEFAULT_REPLICATES),
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
        boundary: cli.boundary.unwrap_or_default(),
        bias: cli.bias,
        limit: cli.limit.unwrap_or(false),
        joint: cli.joint.unwrap_or(false),
        out: cli.out,
        workers: cli.workers,
    };
    validate(&config)?;
    Ok(config)
}

fn validate(cfg: &RunConfig) -> Result<(), UsageError> {
    if let Some(c) = cfg.c {
        positive("c", c)?;
    }
    if let Some(list) = &cfg.c_list {
        if list.is_empty() {
            return Err(usage("c-list must not be empty"));
        }
        for &c in list {
            positive("c", c)?;
        }
        if list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(usage("c-list must be strictly decreasing"));
        }
    }
    positive("K", cfg.k)?;
    if let Some(a) = cfg.alpha_prime {
        positive("alpha-prime", a)?;
    }
    positive("h", cfg.h)?;
    if cfg.replicates == 0 {
        return Err(usage("replicates must be at least 1, got 0"));
    }
    if let Some(x) = cfg.x0 {
        unit("x0", x)?;
    }
    if let Some(y) = cfg.y0 {
        unit("y0", y)?;
    }
    if let Some(list) = &cfg.t_list {
        if list.is_empty() {
            return Err(usage("t-list must not be empty"));
        }
        for &t in list {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(usage(format!("t must be non-negative, got {t}")));
            }
        }
        if list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(usage("t-list must be increasing"));
        }
    }
    if let Some(b) = cfg.bias {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(usage(format!("bias must be non-negative, got {b}")));
        }
    }
    if cfg.workers == Some(0) {
        return Err(usage("workers must be at least 1, got 0"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig, ParseFailure> {
        parse_config(std::iter::once("seedbank").chain(args.iter().copied()))
    }

    fn usage_message(args: &[&str]) -> String {
        match parse(args) {
            Err(ParseFailure::Usage(e)) => e.0,
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn duality_flags() {
        let cfg = parse(&["duality", "--c", "1", "--K", "1", "--t", "1", "--replicates", "100000", "--seed", "7"]).unwrap();
        assert_eq!(cfg.command, CommandKind::Duality);
        assert_eq!(cfg.c, Some(1.0));
        assert_eq!(cfg.k, 1.0);
        assert_eq!(cfg.t_list, Some(vec![1.0]));
        assert_eq!(cfg.replicates, 100_000);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn list_valued_fields() {
        let cfg = parse(&["converge", "--c-list", "0.2,0.1,0.05,0.02", "--n0", "3", "--m0", "2", "--t-list", "0.5,1,2"]).unwrap();
        assert_eq!(cfg.c_list, Some(vec![0.2, 0.1, 0.05, 0.02]));
        assert_eq!(cfg.t_list, Some(vec![0.5, 1.0, 2.0]));
        assert_eq!((cfg.n0, cfg.m0), (Some(3), Some(2)));
    }

    #[test]
    fn defaults() {
        let cfg = parse(&["spark"]).unwrap();
        assert_eq!(cfg.k, 1.0);
        assert_eq!(cfg.h, 1e-3);
        assert_eq!(cfg.replicates, 10_000);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.boundary, Boundary::Clamp);
        assert!(!cfg.limit);
    }

    #[test]
    fn negative_c_rejected() {
        assert_eq!(usage_message(&["simulate", "--model", "seedbank", "--c", "-1"]), "c must be positive, got -1");
    }

    #[test]
    fn other_ranges_rejected() {
        assert!(usage_message(&["simulate", "--x0", "1.5"]).starts_with("x0"));
        assert!(usage_message(&["simulate", "--h", "0"]).starts_with("h"));
        assert!(usage_message(&["simulate", "--replicates", "0"]).starts_with("replicates"));
        assert!(usage_message(&["converge", "--c-list", "0.1,0.2"]).contains("decreasing"));
        assert!(usage_message(&["spark", "--K", "-2"]).starts_with("K"));
    }

    #[test]
    fn config_text() {
        let (cmd, tokens) = config_tokens("# comment\ncommand = duality\nc=0.5\nalpha_prime = 2 # trailing\n\n").unwrap();
        assert_eq!(cmd.as_deref(), Some("duality"));
        assert_eq!(tokens, ["--c=0.5", "--alpha-prime=2"]);
        let err = config_tokens("c=1\nbogus=3\n").unwrap_err();
        assert_eq!(err.0, "unknown config key 'bogus'");
        assert!(config_tokens("c 1").is_err());
    }
}
