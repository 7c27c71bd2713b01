//! Command-line front end: `simulate`, `rate`, `estimate` and `verify`.
//!
//! Exit codes: 0 success, 1 runtime failure (exhausted retries, overflow,
//! budgets, failed checks), 2 invalid input.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::empirical::{OffspringMeasure, PairMeasure, TreeCounts};
use crate::error::{Error, Result};
use crate::law::CountLaw;
use crate::par;
use crate::rate::{
    ip_geometric_closed, legendre_ip, rate_i, rate_j, rate_jk, rate_k, BallOptions, RateOptions, RateValue,
};
use crate::sim::{sample_conditioned_with, sample_tree, DEFAULT_RETRY_BUDGET};
use crate::spec_doc::{load_model, ModelSpec};
use crate::tilting::{auto_tilt, estimate_decay_rate, tilted_model, Event, TiltDocument, TiltFunction};
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "gwldp", version, about = "Conditioned multitype Galton-Watson trees and their large deviations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample trees and write them with their empirical measures.
    Simulate(SimulateArgs),
    /// Evaluate rate functions.
    #[command(subcommand)]
    Rate(RateCommand),
    /// Importance-sampling estimates of event probabilities and decay rates.
    Estimate(EstimateArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Kernel specification (JSON).
    #[arg(long)]
    pub kernel: PathBuf,
    /// Target size with --conditioned, vertex cap otherwise.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Condition on exactly n vertices (rejection sampling).
    #[arg(long)]
    pub conditioned: bool,
    #[arg(long, default_value_t = DEFAULT_RETRY_BUDGET)]
    pub retry_budget: u64,
}

#[derive(Debug, Clone, Subcommand)]
pub enum RateCommand {
    /// Legendre transform I_p of an offspring-count law.
    Ip {
        /// Count law, e.g. geometric:0.5, poisson:1, table:0.25,0.5,0.25.
        #[arg(long)]
        p: String,
        #[arg(long, conflicts_with = "x_grid", required_unless_present = "x_grid")]
        x: Option<f64>,
        /// start:stop:step, emitted as CSV `x,value`.
        #[arg(long)]
        x_grid: Option<String>,
    },
    /// J (or J_k with --truncate) at a pair and offspring measure.
    #[command(name = "J")]
    J {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        offspring: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        marginal_tol: f64,
        #[arg(long)]
        truncate: Option<usize>,
    },
    /// K at an offspring measure.
    #[command(name = "K")]
    K {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        offspring: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// I at a pair probability measure, for a factored kernel.
    #[command(name = "I")]
    I {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        pair: PathBuf,
    },
    /// Largest gap between the Legendre and closed-form geometric rates.
    GeometricCheck {
        #[arg(long, default_value = "0.05:5:0.05")]
        grid: String,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub kernel: PathBuf,
    /// `true` or `ball:center=FILE,radius=R` (pair or offspring CSV).
    #[arg(long)]
    pub event: String,
    /// `3..8`, `3:8` or `3,5,8`.
    #[arg(long)]
    pub n_list: String,
    #[arg(long)]
    pub samples: usize,
    /// `none`, `auto` or a tilt JSON file.
    #[arg(long, default_value = "none")]
    pub tilt: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest offspring count searched by --tilt auto.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Run a single check by name.
    #[arg(long)]
    pub only: Option<String>,
}

/// Runs a parsed command, printing to `out`/`err`; returns the exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Simulate(args) => simulate(&args).and_then(|s| {
            writeln!(out, "{}", s.message)?;
            Ok(if s.failures > 0 { 1 } else { 0 })
        }),
        Command::Rate(cmd) => run_rate(&cmd, out),
        Command::Estimate(args) => estimate(&args, out, err).map(|_| 0),
        Command::Verify(args) => run_verify(args.only.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Domain(_) | Error::Json(_) => 2,
        Error::Resource(_) | Error::Exhausted { .. } | Error::Io(_) => 1,
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a, A: Serialize> {
    command: &'a str,
    args: &'a A,
    seed: u64,
    version: &'static str,
    threads: usize,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    started_unix_seconds: u64,
    wall_clock_seconds: f64,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn write_manifest<A: Serialize>(
    dir: &Path,
    command: &str,
    args: &A,
    seed: u64,
    inputs: &[&Path],
    outputs: &[PathBuf],
    started: (SystemTime, Instant),
) -> Result<()> {
    let manifest = Manifest {
        command,
        args,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
        outputs: outputs
            .iter()
            .map(|p| {
                let mut d = digest_file(&dir.join(p))?;
                d.path = p.display().to_string();
                Ok(d)
            })
            .collect::<Result<_>>()?,
        started_unix_seconds: started.0.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        wall_clock_seconds: started.1.elapsed().as_secs_f64(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub struct SimulateSummary {
    pub written: usize,
    pub failures: usize,
    pub message: String,
}

enum Draw {
    Tree(crate::tree::TypedTree, u64),
    Overflow,
    Exhausted(u64),
}

/// Writes `trees/tree_NNNNN.txt`, `measures/offspring_NNNNN.csv`,
/// `measures/pair_NNNNN.csv` (the `|T|`-normalized pair measure),
/// `samples.csv` and `manifest.json` under `args.out`.
pub fn simulate(args: &SimulateArgs) -> Result<SimulateSummary> {
    let started = (SystemTime::now(), Instant::now());
    let model = load_model(&args.kernel)?;
    if args.n == 0 {
        return Err(Error::validation("--n must be at least 1"));
    }
    let draws = par::map_chunks(args.samples, 1, args.seed, |_, _, rng| {
        if args.conditioned {
            match sample_conditioned_with(&model.kernel, &model.root_law, args.n, rng, args.retry_budget) {
                Ok((tree, attempts)) => Draw::Tree(tree, attempts),
                Err(_) => Draw::Exhausted(args.retry_budget),
            }
        } else {
            match sample_tree(&model.kernel, &model.root_law, rng, args.n) {
                Ok(tree) => Draw::Tree(tree, 1),
                Err(_) => Draw::Overflow,
            }
        }
    });
    fs::create_dir_all(args.out.join("trees"))?;
    fs::create_dir_all(args.out.join("measures"))?;
    let mut outputs = Vec::new();
    let mut table = String::from("sample,status,vertices,attempts\n");
    let (mut written, mut overflow, mut exhausted) = (0, 0, 0);
    for (i, draw) in draws.iter().enumerate() {
        match draw {
            Draw::Tree(tree, attempts) => {
                let files = [
                    (PathBuf::from(format!("trees/tree_{i:05}.txt")), tree.to_text(&model.alphabet)),
                    (PathBuf::from(format!("measures/offspring_{i:05}.csv")), {
                        TreeCounts::of(tree, model.alphabet.len()).offspring_measure().to_csv(&model.alphabet)
                    }),
                    (PathBuf::from(format!("measures/pair_{i:05}.csv")), {
                        TreeCounts::of(tree, model.alphabet.len()).pair_measure_tilde().to_csv(&model.alphabet)
                    }),
                ];
                for (path, text) in files {
                    fs::write(args.out.join(&path), text)?;
                    outputs.push(path);
                }
                table.push_str(&format!("{i},ok,{},{attempts}\n", tree.len()));
                written += 1;
            }
            Draw::Overflow => {
                table.push_str(&format!("{i},overflow,,1\n"));
                overflow += 1;
            }
            Draw::Exhausted(attempts) => {
                table.push_str(&format!("{i},exhausted,,{attempts}\n"));
                exhausted += 1;
            }
        }
    }
    fs::write(args.out.join("samples.csv"), table)?;
    outputs.push(PathBuf::from("samples.csv"));
    write_manifest(&args.out, "simulate", args, args.seed, &[&args.kernel], &outputs, started)?;
    let failures = overflow + exhausted;
    let message = if failures == 0 {
        format!("wrote {written} trees to {}", args.out.display())
    } else {
        format!(
            "wrote {written} trees to {}; {overflow} overflowed past {} vertices, {exhausted} exhausted {} retries",
            args.out.display(),
            args.n,
            args.retry_budget
        )
    };
    Ok(SimulateSummary { written, failures, message })
}

/// `start:stop:step`, inclusive, with points rounded to 12 decimals.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::validation(format!("bad grid '{spec}'"))))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(Error::validation(format!("grid '{spec}' must be start:stop:step")));
    };
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::validation(format!("grid '{spec}' needs step > 0 and stop >= start")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
}

/// Largest `|I_p(x) - closed(x)|` over `grid` for geometric(1/2).
pub fn geometric_check(grid: &[f64], closed: impl Fn(f64) -> f64) -> Result<f64> {
    let law = CountLaw::geometric(0.5)?;
    let mut worst = 0.0f64;
    for &x in grid {
        let d = (legendre_ip(&law, x)?.value() - closed(x)).abs();
        worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
    }
    Ok(worst)
}

#[derive(Serialize)]
struct RateRecord {
    inputs_hash: String,
    rate: RateValue,
    finite: bool,
}

fn inputs_hash(label: &str, files: &[&Path], extra: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    for f in files {
        h.update(fs::read(f)?);
        h.update([0u8]);
    }
    h.update(extra.as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn print_record(out: &mut dyn Write, inputs_hash: String, rate: RateValue) -> Result<()> {
    let rec = RateRecord { inputs_hash, finite: rate.is_finite(), rate };
    writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    Ok(())
}

fn read_pair(path: &Path, model: &ModelSpec) -> Result<PairMeasure> {
    PairMeasure::from_csv(&fs::read_to_string(path)?, &model.alphabet)
}

fn read_offspring(path: &Path, model: &ModelSpec) -> Result<OffspringMeasure> {
    OffspringMeasure::from_csv(&fs::read_to_string(path)?, &model.alphabet)
}

fn run_rate(cmd: &RateCommand, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        RateCommand::Ip { p, x, x_grid } => {
            let law = CountLaw::parse(p)?;
            if let Some(x) = x {
                writeln!(out, "{:.7}", legendre_ip(&law, *x)?)?;
            } else if let Some(grid) = x_grid {
                writeln!(out, "x,value")?;
                for x in parse_grid(grid)? {
                    writeln!(out, "{x},{}", legendre_ip(&law, x)?)?;
                }
            }
            Ok(0)
        }
        RateCommand::J { kernel, pair, offspring, marginal_tol, truncate } => {
            let model = load_model(kernel)?;
            let (w, nu) = (read_pair(pair, &model)?, read_offspring(offspring, &model)?);
            let opts = RateOptions { marginal_tol: *marginal_tol, ..RateOptions::default() };
            let rate = match truncate {
                Some(k) => rate_jk(&w, &nu, &model.kernel.truncate(*k)?, &opts)?,
                None => rate_j(&w, &nu, &model.kernel, &opts)?,
            };
            let extra = format!("{marginal_tol}:{truncate:?}");
            print_record(out, inputs_hash("J", &[kernel, pair, offspring], &extra)?, rate)?;
            Ok(0)
        }
        RateCommand::K { kernel, offspring, tol } => {
            let model = load_model(kernel)?;
            let rate = rate_k(&read_offspring(offspring, &model)?, &model.kernel, *tol)?;
            print_record(out, inputs_hash("K", &[kernel, offspring], &tol.to_string())?, rate)?;
            Ok(0)
        }
        RateCommand::I { kernel, pair } => {
            let model = load_model(kernel)?;
            let (law, transition) =
                model.factors().ok_or_else(|| Error::validation("rate I needs a factored kernel specification"))?;
            let rate = rate_i(&read_pair(pair, &model)?, transition, law)?;
            print_record(out, inputs_hash("I", &[kernel, pair], "")?, rate)?;
            Ok(0)
        }
        RateCommand::GeometricCheck { grid } => {
            let points = parse_grid(grid)?;
            let worst = geometric_check(&points, |x| ip_geometric_closed(x).map_or(f64::NAN, RateValue::value))?;
            let pass = worst < 1e-8;
            writeln!(out, "max_abs_deviation,{worst}")?;
            writeln!(out, "points,{}", points.len())?;
            writeln!(out, "{}", if pass { "PASS" } else { "FAIL" })?;
            Ok(if pass { 0 } else { 1 })
        }
    }
}

/// `3..8`, `3:8` (both inclusive) or a comma list.
pub fn parse_n_list(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::validation(format!("bad n list '{spec}'"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let list = if let Some((a, b)) = spec.split_once("..").or_else(|| spec.split_once(':')) {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if list.is_empty() || list.contains(&0) {
        return Err(bad());
    }
    Ok(list)
}

/// `true` or `ball:center=FILE,radius=R`; the center file's CSV header decides
/// between a pair ball and an offspring ball.
pub fn parse_event(spec: &str, model: &ModelSpec) -> Result<Event> {
    if spec == "true" {
        return Ok(Event::True);
    }
    let body = spec
        .strip_prefix("ball:")
        .ok_or_else(|| Error::validation(format!("event '{spec}' must be 'true' or 'ball:center=FILE,radius=R'")))?;
    let (mut center, mut radius) = (None, None);
    for part in body.split(',') {
        match part.split_once('=') {
            Some(("center", v)) => center = Some(PathBuf::from(v)),
            Some(("radius", v)) => {
                radius = Some(v.parse::<f64>().map_err(|_| Error::validation(format!("bad radius '{v}'")))?)
            }
            _ => return Err(Error::validation(format!("unknown event field '{part}'"))),
        }
    }
    let (Some(center), Some(radius)) = (center, radius) else {
        return Err(Error::validation("ball events need both center and radius"));
    };
    if !(radius >= 0.0) {
        return Err(Error::validation("ball radius must be nonnegative"));
    }
    let text = fs::read_to_string(&center)?;
    match text.lines().next().map(str::trim) {
        Some("from,to,weight") => {
            Ok(Event::PairBall { center: PairMeasure::from_csv(&text, &model.alphabet)?, radius })
        }
        Some("type,count,children,weight") => {
            Ok(Event::OffspringBall { center: OffspringMeasure::from_csv(&text, &model.alphabet)?, radius })
        }
        _ => Err(Error::validation(format!("{}: not a pair or offspring measure CSV", center.display()))),
    }
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    event: &'a str,
    tilt: &'a str,
    tilt_bound: f64,
    /// Rate infimum over the ball found while building an automatic tilt.
    ball_rate: Option<RateValue>,
    points: &'a [crate::tilting::DecayPoint],
}

fn fmt_value(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        "inf".into()
    }
}

/// Runs the estimator over the n list. With `--out`, writes `decay.csv`,
/// `report.json`, `tilt.json` and `manifest.json`; otherwise prints the CSV.
pub fn estimate(args: &EstimateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let started = (SystemTime::now(), Instant::now());
    let model = load_model(&args.kernel)?;
    let event = parse_event(&args.event, &model)?;
    let n_list = parse_n_list(&args.n_list)?;
    if args.samples == 0 {
        return Err(Error::validation("--samples must be positive"));
    }
    let mut inputs: Vec<&Path> = vec![&args.kernel];
    let (g, ball_rate) = match args.tilt.as_str() {
        "none" => (TiltFunction::zero(model.alphabet.len()), None),
        "auto" => {
            let k = args.k.or(model.kernel.support_bound()).unwrap_or_else(|| match &event {
                Event::OffspringBall { center, .. } => center.max_count().max(2),
                _ => 2,
            });
            let (g, v) = auto_tilt(&model.kernel, &event, k, &BallOptions::default())?;
            (g, Some(v))
        }
        file => {
            inputs.push(Path::new(file));
            let doc: TiltDocument = serde_json::from_str(&fs::read_to_string(file)?)?;
            (TiltFunction::from_json(&doc, &model.alphabet)?, None)
        }
    };
    let tilted = tilted_model(&model.kernel, &model.root_law, &g)?;
    let points = estimate_decay_rate(&tilted, &event, &n_list, args.samples, args.seed)?;
    let mut csv = String::from("n,estimate,stderr,decay\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.report.n,
            fmt_value(p.report.estimate),
            fmt_value(p.report.stderr),
            fmt_value(p.decay.value())
        ));
        if !p.report.reliable {
            writeln!(err, "warning: no hits at n = {}; decay reported as inf", p.report.n)?;
        }
    }
    match &args.out {
        None => out.write_all(csv.as_bytes())?,
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("decay.csv"), &csv)?;
            let report = EstimateOutput {
                event: &args.event,
                tilt: &args.tilt,
                tilt_bound: g.bound(),
                ball_rate,
                points: &points,
            };
            fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            fs::write(dir.join("tilt.json"), serde_json::to_string_pretty(&g.to_json(&model.alphabet))? + "\n")?;
            let outputs = ["decay.csv", "report.json", "tilt.json"].map(PathBuf::from);
            let center_path = event_center_path(&args.event);
            if let Some(c) = &center_path {
                inputs.push(c);
            }
            write_manifest(dir, "estimate", args, args.seed, &inputs, &outputs, started)?;
            writeln!(out, "wrote {} sizes to {}", points.len(), dir.display())?;
        }
    }
    Ok(())
}

fn event_center_path(spec: &str) -> Option<PathBuf> {
    spec.strip_prefix("ball:")?.split(',').find_map(|p| p.strip_prefix("center=").map(PathBuf::from))
}

fn run_verify(only: Option<&str>, out: &mut dyn Write) -> Result<i32> {
    let results = verify::run(only)?;
    writeln!(out, "{:<3} {:<18} {:<6} {:>9}  detail", "#", "check", "result", "seconds")?;
    for r in &results {
        writeln!(
            out,
            "{:<3} {:<18} {:<6} {:>9.3}  {}",
            r.criterion,
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        )?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(out, "{} of {} checks passed", results.len() - failed, results.len())?;
    Ok(if failed == 0 { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = parse_grid("0.05:5:0.05").unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g[2], 0.15);
        assert_eq!(*g.last().unwrap(), 5.0);
        assert!(parse_grid("1:0:0.1").is_err());
    }

    #[test]
    fn n_lists() {
        assert_eq!(parse_n_list("3..6").unwrap(), vec![3, 4, 5, 6]);
        assert_eq!(parse_n_list("3:5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_n_list("2,9").unwrap(), vec![2, 9]);
        assert!(parse_n_list("0..2").is_err());
    }

    #[test]
    fn corrupted_closed_form_fails_the_check() {
        let grid = parse_grid("0.05:5:0.05").unwrap();
        let good = geometric_check(&grid, |x| ip_geometric_closed(x).unwrap().value()).unwrap();
        assert!(good < 1e-8);
        let bad = geometric_check(&grid, |x| x * x.ln() - (x + 1.0) * ((x + 1.0) / 2.1).ln()).unwrap();
        assert!(bad > 1e-3);
    }

    #[test]
    fn ip_output() {
        let mut out = Vec::new();
        let cmd = RateCommand::Ip { p: "geometric:0.5".into(), x: Some(2.0), x_grid: None };
        assert_eq!(run_rate(&cmd, &mut out).unwrap(), 0);
        assert_eq!(String::from_utf8(out).unwrap(), "0.1698990\n");
        let mut out = Vec::new();
        let cmd = RateCommand::Ip { p: "geometric:0.5".into(), x: Some(0.0), x_grid: None };
        run_rate(&cmd, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0.6931472\n");
    }
}
