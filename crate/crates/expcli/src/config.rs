use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Steepest-descent error history per m at a single lambda.
    SdConvergence,
    /// Normalized normal-system singular values at the starting point.
    SvdSpectrum,
    /// Linearized-iteration error history per m.
    LinConvergence,
    /// Converged error versus m and per-node deviation from identity.
    SpatialDecay,
    /// Converged error over a lambda by m grid.
    LambdaSweep,
    /// Embeds converged transformations in a grid and checks locality.
    GlobalVerify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "csv+svg" => Ok(Format::CsvSvg),
            other => Err(format!("unknown format '{other}', expected csv or csv+svg")),
        }
    }
}

/// Settings that may come from the command line or a config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Comma-separated lambda values.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambda: Option<Vec<f64>>,
    /// Comma-separated hop radii.
    #[arg(long, global = true, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Supernode width.
    #[arg(long, global = true)]
    pub p: Option<usize>,
    /// Supernode height.
    #[arg(long, global = true)]
    pub q: Option<usize>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Relative error-change tolerance for stopping.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Maximum number of runs solved concurrently.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

impl Overrides {
    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: Overrides) -> Overrides {
        Overrides {
            lambda: self.lambda.or(base.lambda),
            m: self.m.or(base.m),
            p: self.p.or(base.p),
            q: self.q.or(base.q),
            max_iter: self.max_iter.or(base.max_iter),
            tol: self.tol.or(base.tol),
            out: self.out.or(base.out),
            format: self.format.or(base.format),
            jobs: self.jobs.or(base.jobs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| ConfigError(format!("invalid value '{}' for {key}", v.trim())))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("invalid value '{value}' for {key}")))
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; unknown or repeated keys are errors.
pub fn parse_config(text: &str) -> Result<Overrides, ConfigError> {
    let mut o = Overrides::default();
    let mut seen = std::collections::BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        if !seen.insert(key.clone()) {
            return Err(ConfigError(format!(
                "line {}: duplicate key '{key}'",
                n + 1
            )));
        }
        match key.as_str() {
            "lambda" => o.lambda = Some(parse_list(&key, value)?),
            "m" => o.m = Some(parse_list(&key, value)?),
            "p" => o.p = Some(parse_one(&key, value)?),
            "q" => o.q = Some(parse_one(&key, value)?),
            "max_iter" => o.max_iter = Some(parse_one(&key, value)?),
            "tol" => o.tol = Some(parse_one(&key, value)?),
            "out" => o.out = Some(PathBuf::from(value)),
            "format" => o.format = Some(value.parse().map_err(ConfigError)?),
            "jobs" => o.jobs = Some(parse_one(&key, value)?),
            other => {
                return Err(ConfigError(format!(
                    "line {}: unknown key '{other}'",
                    n + 1
                )))
            }
        }
    }
    Ok(o)
}

pub fn read_config(path: &Path) -> Result<Overrides, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// Fully resolved and validated settings for one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub lambdas: Vec<f64>,
    pub ms: Vec<usize>,
    pub p: usize,
    pub q: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub out: PathBuf,
    pub format: Format,
    pub jobs: usize,
}

/// Dense local matrices beyond this size are refused.
const MAX_LOCAL_NODES: usize = 2000;

fn defaults(command: Command) -> (Vec<f64>, Vec<usize>, usize, f64) {
    match command {
        Command::SdConvergence => (vec![0.0], vec![1, 2, 3, 4], 1000, 1e-12),
        Command::SvdSpectrum => (vec![0.0], (1..=6).collect(), 200, 1e-10),
        Command::LinConvergence => (vec![0.0], (1..=7).collect(), 200, 1e-10),
        Command::SpatialDecay => (vec![0.0], (1..=7).collect(), 200, 1e-10),
        Command::LambdaSweep => (
            (0..=8).map(|k| 0.5 * k as f64).collect(),
            (1..=7).collect(),
            200,
            1e-10,
        ),
        Command::GlobalVerify => (vec![0.0, 3.5], vec![2, 4], 200, 1e-10),
    }
}

impl RunConfig {
    pub fn resolve(command: Command, o: Overrides) -> Result<RunConfig, ConfigError> {
        let (lambdas, ms, max_iter, tol) = defaults(command);
        let cfg = RunConfig {
            command,
            lambdas: o.lambda.unwrap_or(lambdas),
            ms: o.m.unwrap_or(ms),
            p: o.p.unwrap_or(1),
            q: o.q.unwrap_or(1),
            max_iter: o.max_iter.unwrap_or(max_iter),
            tol: o.tol.unwrap_or(tol),
            out: o.out.unwrap_or_else(|| PathBuf::from(".")),
            format: o.format.unwrap_or(Format::Csv),
            jobs: o.jobs.unwrap_or(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: &str| Err(ConfigError(msg.to_string()));
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !l.is_finite()) {
            return err("lambda needs at least one finite value");
        }
        if self.ms.is_empty() || self.ms.contains(&0) {
            return err("m needs at least one value, each at least 1");
        }
        if self.p == 0 || self.q == 0 {
            return err("p and q must be at least 1");
        }
        if self.max_iter == 0 {
            return err("max-iter must be at least 1");
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return err("tol must be positive and finite");
        }
        if self.jobs == 0 {
            return err("jobs must be at least 1");
        }
        let single_lambda = !matches!(self.command, Command::LambdaSweep | Command::GlobalVerify);
        if single_lambda && self.lambdas.len() != 1 {
            return err("this subcommand takes a single lambda");
        }
        let n_local = |m: usize| (2 * m * m + 2 * m + 1).saturating_mul(self.p * self.q);
        if self.ms.iter().any(|&m| n_local(m) > MAX_LOCAL_NODES) {
            return Err(ConfigError(format!(
                "local region exceeds {MAX_LOCAL_NODES} nodes; reduce m, p or q"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let o = parse_config(
            "# comment\nlambda = 0, 3.5\nm=2,4\np = 2\nq=1\nmax-iter = 50\ntol = 1e-9\nout = res\nformat = csv+svg\njobs = 3\n",
        )
        .unwrap();
        assert_eq!(o.lambda, Some(vec![0.0, 3.5]));
        assert_eq!(o.m, Some(vec![2, 4]));
        assert_eq!(
            (o.p, o.q, o.max_iter, o.jobs),
            (Some(2), Some(1), Some(50), Some(3))
        );
        assert_eq!(o.tol, Some(1e-9));
        assert_eq!(o.out, Some(PathBuf::from("res")));
        assert_eq!(o.format, Some(Format::CsvSvg));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(parse_config("lamda = 1")
            .unwrap_err()
            .0
            .contains("unknown key"));
        assert!(parse_config("m = 1\nm = 2")
            .unwrap_err()
            .0
            .contains("duplicate"));
        assert!(parse_config("m 1").is_err());
        assert!(parse_config("m = x").is_err());
        assert!(parse_config("format = png").is_err());
    }

    #[test]
    fn command_line_wins() {
        let file = parse_config("m = 1,2\njobs = 4").unwrap();
        let cli = Overrides {
            m: Some(vec![3]),
            ..Default::default()
        };
        let merged = cli.over(file);
        assert_eq!(merged.m, Some(vec![3]));
        assert_eq!(merged.jobs, Some(4));
    }

    #[test]
    fn validation() {
        let bad = |o: Overrides, c: Command| RunConfig::resolve(c, o).is_err();
        assert!(bad(
            Overrides {
                m: Some(vec![0]),
                ..Default::default()
            },
            Command::LinConvergence
        ));
        assert!(bad(
            Overrides {
                tol: Some(-1.0),
                ..Default::default()
            },
            Command::LinConvergence
        ));
        assert!(bad(
            Overrides {
                lambda: Some(vec![0.0, 1.0]),
                ..Default::default()
            },
            Command::SdConvergence
        ));
        assert!(bad(
            Overrides {
                lambda: Some(vec![f64::NAN]),
                ..Default::default()
            },
            Command::LambdaSweep
        ));
        let ok = RunConfig::resolve(Command::LambdaSweep, Overrides::default()).unwrap();
        assert_eq!(ok.lambdas.len(), 9);
        assert_eq!(ok.ms, (1..=7).collect::<Vec<_>>());
    }
}
