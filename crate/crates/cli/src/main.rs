use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use geodensity::density::{eval_p, eval_p_hat, eval_series, DensityPoint, EvalResult, SeriesConfig, SeriesKind};
use geodensity::prelimit::scaled_density_ratio;
use geodensity::validation::{run_suite, Suite};
use geodensity::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Densities of a conditioned directed-landscape geodesic near its endpoint.
#[derive(Parser, Debug)]
#[command(name = "geodensity", version)]
struct Cli {
    /// key=value file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate one density at one point.
    Eval(EvalArgs),
    /// Tabulate p and p_hat on a grid as CSV.
    Grid(GridArgs),
    /// Run the validation suite.
    Validate(ValidateArgs),
    /// Compare the scaled finite-L density with its limit.
    Prelimit(PrelimitArgs),
}

#[derive(Args, Debug, Default)]
struct SeriesFlags {
    /// Largest series index.
    #[arg(long)]
    nmax: Option<usize>,
    /// Gauss-Legendre nodes per wedge leg.
    #[arg(long)]
    nodes: Option<usize>,
    /// Wedge truncation tolerance.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t: Option<f64>,
    /// p, phat or ut-tail.
    #[arg(long)]
    density: Option<String>,
    #[command(flatten)]
    series: SeriesFlags,
    /// Emit JSON instead of a text line.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// start:stop:count, endpoints included.
    #[arg(long = "h-range", allow_hyphen_values = true)]
    h_range: Option<String>,
    #[arg(long = "x-range", allow_hyphen_values = true)]
    x_range: Option<String>,
    #[arg(long)]
    t: Option<f64>,
    /// Output CSV path, `-` for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    series: SeriesFlags,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// fast, full or slow.
    #[arg(long)]
    suite: Option<String>,
    #[command(flatten)]
    series: SeriesFlags,
}

#[derive(Args, Debug)]
struct PrelimitArgs {
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t: Option<f64>,
    #[arg(long = "L")]
    l: Option<f64>,
    /// Truncation of both series indices.
    #[arg(long)]
    nmax: Option<usize>,
    /// Nodes per leg of the finite-L contours.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    json: bool,
}

/// Flat `key=value` settings; `#` starts a comment.
#[derive(Debug, Default)]
struct ConfigFile(HashMap<String, String>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    /// The flag if given, else the file entry, parsed.
    fn pick<T>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}={v}: {e}"))),
        }
    }

    fn require<T>(&self, flag: Option<T>, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required --{key}")))
    }

    fn flag(&self, flag: bool, key: &str) -> CliResult<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.pick(None::<bool>, key)?.unwrap_or(false))
    }

    fn series(&self, flags: &SeriesFlags) -> CliResult<SeriesConfig> {
        let mut cfg = SeriesConfig::default();
        if let Some(n) = self.pick(flags.nmax, "nmax")? {
            cfg.n_max = n;
        }
        if let Some(n) = self.pick(flags.nodes, "nodes")? {
            cfg.nodes_per_leg = n;
        }
        if let Some(e) = self.pick(flags.eps, "eps")? {
            cfg.eps_quad = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_density(s: &str) -> CliResult<SeriesKind> {
    match s {
        "p" => Ok(SeriesKind::P),
        "phat" => Ok(SeriesKind::PHat),
        "ut-tail" => Ok(SeriesKind::UtTail),
        _ => Err(CliError::Usage(format!("unknown density {s:?}, expected p, phat or ut-tail"))),
    }
}

/// `start:stop:count` with both endpoints included.
fn parse_range(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("range {s:?} must look like start:stop:count"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

fn write_output(out: &Path, text: &str) -> CliResult<()> {
    if out.as_os_str() == "-" {
        io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string()))
    } else {
        fs::write(out, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", out.display())))
    }
}

#[derive(Serialize)]
struct TermJson {
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct EvalJson<'a> {
    value: f64,
    err_estimate: f64,
    terms: Vec<TermJson>,
    n_used: usize,
    config: &'a SeriesConfig,
}

fn check_finite(r: &EvalResult) -> CliResult<()> {
    if r.value.is_finite() && r.err_estimate.is_finite() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("non-finite result {} ± {}", r.value, r.err_estimate)))
    }
}

fn run_eval(args: EvalArgs, file: &ConfigFile) -> CliResult<u8> {
    let h = file.require(args.h, "h")?;
    let x = file.require(args.x, "x")?;
    let t = file.require(args.t, "t")?;
    let kind = parse_density(&file.pick(args.density, "density")?.unwrap_or_else(|| "p".into()))?;
    let cfg = file.series(&args.series)?;
    let json = file.flag(args.json, "json")?;
    let pt = DensityPoint::new(h, x, t)?;
    let r = eval_series(kind, &pt, &cfg)?;
    check_finite(&r)?;
    if json {
        let out = EvalJson {
            value: r.value,
            err_estimate: r.err_estimate,
            terms: r.terms.iter().map(|c| TermJson { re: c.re, im: c.im }).collect(),
            n_used: r.n_used,
            config: &cfg,
        };
        let s = serde_json::to_string_pretty(&out).map_err(|e| CliError::Numeric(e.to_string()))?;
        println!("{s}");
    } else {
        let terms: Vec<String> = r.terms.iter().map(|c| format!("{:.3e}", c.norm())).collect();
        println!(
            "{}= {:.16e} err= {:.3e} n_used= {} terms= {}",
            kind.label(),
            r.value,
            r.err_estimate,
            r.n_used,
            terms.join(",")
        );
    }
    Ok(0)
}

/// CSV float: 17 significant digits.
fn f17(v: f64) -> String {
    format!("{v:.16e}")
}

fn run_grid(args: GridArgs, file: &ConfigFile) -> CliResult<u8> {
    let hs = parse_range(&file.require(args.h_range, "h-range")?)?;
    let xs = parse_range(&file.require(args.x_range, "x-range")?)?;
    let t = file.require(args.t, "t")?;
    let out: PathBuf = file.require(args.out, "out")?;
    let cfg = file.series(&args.series)?;
    let points: Vec<(f64, f64)> = hs.iter().flat_map(|&h| xs.iter().map(move |&x| (h, x))).collect();
    let rows: Vec<(EvalResult, EvalResult)> = points
        .par_iter()
        .map(|&(h, x)| -> CliResult<_> {
            let pt = DensityPoint::new(h, x, t)?;
            let p = eval_p(&pt, &cfg)?;
            let q = eval_p_hat(&pt, &cfg)?;
            check_finite(&p)?;
            check_finite(&q)?;
            Ok((p, q))
        })
        .collect::<CliResult<_>>()?;
    let mut csv = String::from("h,x,t,p,p_hat,err_p,err_phat,n_used\n");
    for (&(h, x), (p, q)) in points.iter().zip(&rows) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            f17(h),
            f17(x),
            f17(t),
            f17(p.value),
            f17(q.value),
            f17(p.err_estimate),
            f17(q.err_estimate),
            p.n_used.max(q.n_used)
        ));
    }
    write_output(&out, &csv)?;
    // Location of the maximum of p along h on the column closest to x = 0.
    let j0 = (0..xs.len())
        .min_by(|&a, &b| xs[a].abs().total_cmp(&xs[b].abs()))
        .unwrap_or(0);
    let best = (0..hs.len())
        .max_by(|&a, &b| rows[a * xs.len() + j0].0.value.total_cmp(&rows[b * xs.len() + j0].0.value))
        .unwrap_or(0);
    eprintln!("argmax_h p at x={}: h={}", xs[j0], hs[best]);
    Ok(0)
}

fn run_validate(args: ValidateArgs, file: &ConfigFile) -> CliResult<u8> {
    let suite: Suite = file
        .pick(args.suite, "suite")?
        .map(|s: String| s.parse())
        .transpose()?
        .unwrap_or(Suite::Fast);
    let cfg = file.series(&args.series)?;
    let report = run_suite(suite, &cfg)?;
    for line in report.lines() {
        println!("{line}");
    }
    Ok(if report.passed() { 0 } else { EXIT_VALIDATION })
}

#[derive(Serialize)]
struct PrelimitJson {
    h: f64,
    x: f64,
    t: f64,
    #[serde(rename = "L")]
    l: f64,
    n_max: usize,
    ratio: f64,
    p: f64,
    rel_gap: f64,
}

fn run_prelimit(args: PrelimitArgs, file: &ConfigFile) -> CliResult<u8> {
    let h = file.require(args.h, "h")?;
    let x = file.require(args.x, "x")?;
    let t = file.require(args.t, "t")?;
    let l = file.require(args.l, "L")?;
    let n_max = file.pick(args.nmax, "nmax")?.unwrap_or(1);
    let nodes = file.pick(args.nodes, "nodes")?.unwrap_or(24);
    let json = file.flag(args.json, "json")?;
    let ratio = scaled_density_ratio(h, x, t, l, n_max, nodes)?;
    let p = eval_p(&DensityPoint::new(h, x, t)?, &SeriesConfig::default())?.value;
    let rel_gap = (ratio - p).abs() / p.abs();
    if json {
        let out = PrelimitJson {
            h,
            x,
            t,
            l,
            n_max,
            ratio,
            p,
            rel_gap,
        };
        let s = serde_json::to_string_pretty(&out).map_err(|e| CliError::Numeric(e.to_string()))?;
        println!("{s}");
    } else {
        println!("L= {l} ratio= {:.16e} p= {:.16e} rel_gap= {:.6e}", ratio, p, rel_gap);
    }
    Ok(0)
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("GEODENSITY_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("GEODENSITY_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult<u8> {
    init_threads()?;
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Eval(a) => run_eval(a, &file),
        Command::Grid(a) => run_grid(a, &file),
        Command::Validate(a) => run_validate(a, &file),
        Command::Prelimit(a) => run_prelimit(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
