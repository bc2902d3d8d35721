//! `imitatio analyze | sample | validate | walks`.
//!
//! Exit codes: 0 success, 2 invalid kernel file, 3 precondition or usage
//! error, 4 validation failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::coupling::doeblin_certificate;
use crate::invariant::{p_hat, Distribution};
use crate::kernel::{coalescence_verdict, parse_kernel_spec, ImitationKernel, KernelError, State};
use crate::rng::{RandomSource, Site};
use crate::samplers::{sample_batch, Algorithm, SampleBatch, SampleError, SamplerConfig, SamplingContext};
use crate::structure::{uniqueness_verdict, Verdict};
use crate::validate::cross_algorithm_report;
use crate::walks::{joint_coalescence, s_hat_tail_estimate, von_schelling_simulate, wilson_interval, Window};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_KERNEL: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

pub const STEP_CAP_ENV: &str = "IMITATIO_STEP_CAP";
const DEFAULT_STEP_CAP: u64 = 100_000_000;

#[derive(Debug, Parser)]
#[command(name = "imitatio", version, about = "Imitation kernels: structure, invariant laws and perfect sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Structure report, invariant law, coalescence verdict and Doeblin certificate.
    Analyze(AnalyzeArgs),
    /// Sample the compatible law on a window; CSV `replica,site,state`.
    Sample(SampleArgs),
    /// Cross-check every sampler against each other and against λ̂.
    Validate(ValidateArgs),
    /// Coalescence of backward walks; CSV `replica,start_distance,hit_step_or_-1`.
    Walks(WalksArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    kernel: PathBuf,
    #[arg(long, value_delimiter = ',')]
    invariant_weights: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Cftp,
    Eps,
    Doeblin,
}

#[derive(Debug, Args)]
struct SampleArgs {
    kernel: PathBuf,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Window,
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    /// Required by `eps`; must lie below the window.
    #[arg(long, allow_hyphen_values = true, required_if_eq("algorithm", "eps"))]
    threshold: Option<i64>,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    replicas: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    invariant_weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    kernel: PathBuf,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true, default_value = "0..1")]
    window: Window,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    replicas: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WalksArgs {
    kernel: PathBuf,
    /// Joint walks from every site of the window.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true, conflicts_with = "distance")]
    window: Option<Window>,
    /// A pair of walks at this distance (the default, with distance 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    distance: Option<u64>,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    replicas: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also estimate the probability that the window coalesces below this site.
    #[arg(long, allow_hyphen_values = true, requires = "window")]
    threshold: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<Window, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got `{s}`"))?;
    let a: Site = a.trim().parse().map_err(|e| format!("bad window start `{a}`: {e}"))?;
    let b: Site = b.trim().parse().map_err(|e| format!("bad window end `{b}`: {e}"))?;
    Window::range(a, b).map_err(|e| e.to_string())
}

/// A message plus the exit code it maps to.
struct Failure(i32, String);

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure(EXIT_PRECONDITION, e.to_string())
    }
}

impl From<SampleError> for Failure {
    fn from(e: SampleError) -> Self {
        Failure(EXIT_PRECONDITION, e.to_string())
    }
}

fn fail<T>(code: i32, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

/// Parses `args` (program name first) and runs the command. Reports go to
/// `stdout` unless `--out` is given; messages go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PRECONDITION } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze(a, stdout),
        Command::Sample(a) => sample(a, stdout, stderr),
        Command::Validate(a) => validate(a, stdout),
        Command::Walks(a) => walks(a, stdout, stderr),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            code
        }
    }
}

fn step_cap() -> Result<u64, Failure> {
    match std::env::var(STEP_CAP_ENV) {
        Ok(v) => v.trim().parse::<u64>().ok().filter(|&c| c > 0).map_or_else(
            || fail(EXIT_PRECONDITION, format!("{STEP_CAP_ENV} must be a positive integer, got `{v}`")),
            Ok,
        ),
        Err(_) => Ok(DEFAULT_STEP_CAP),
    }
}

fn load_kernel(path: &Path) -> Result<ImitationKernel, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure(EXIT_PRECONDITION, format!("cannot read {}: {e}", path.display())))?;
    parse_kernel_spec(&text).map_err(|e| match e {
        KernelError::Malformed(m) => {
            Failure(EXIT_INVALID_KERNEL, format!("{}: malformed kernel spec: {m}", path.display()))
        }
        KernelError::Invalid(v) => {
            let list: Vec<String> = v.iter().map(|x| format!("  - {x}")).collect();
            Failure(EXIT_INVALID_KERNEL, format!("{}: invalid kernel:\n{}", path.display(), list.join("\n")))
        }
    })
}

fn write_document(doc: &impl Serialize, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| Failure(EXIT_PRECONDITION, e.to_string()))?;
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn names(kernel: &ImitationKernel, states: &[State]) -> Vec<String> {
    states.iter().map(|&g| kernel.state_name(g)).collect()
}

fn named_law(kernel: &ImitationKernel, d: &Distribution) -> Value {
    d.weights().iter().enumerate().map(|(g, &w)| json!({ "state": kernel.state_name(g), "weight": w })).collect()
}

fn analyze(args: AnalyzeArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let kernel = load_kernel(&args.kernel)?;
    let structure = uniqueness_verdict(&kernel);
    let ctx = SamplingContext::new(&kernel, args.invariant_weights.as_deref())?;
    let invariant = ctx
        .invariant
        .as_ref()
        .map(|d| json!({ "law": named_law(&kernel, d), "residual": d.residual(&p_hat(&kernel)) }));
    let certificate = if structure.verdict == Verdict::Unique {
        let cert = doeblin_certificate(&kernel, None).map_err(|e| Failure(EXIT_PRECONDITION, e.to_string()))?;
        let mut v = serde_json::to_value(&cert).map_err(|e| Failure(EXIT_PRECONDITION, e.to_string()))?;
        v["target"] = json!(kernel.state_name(cert.target));
        v["q_bar"] = json!(cert.q_bar.to_rows());
        Some(v)
    } else {
        None
    };
    let doc = json!({
        "states": names(&kernel, &(0..kernel.states()).collect::<Vec<_>>()),
        "verdict": structure.verdict,
        "d_a": structure.d_a,
        "closed_classes": structure.classes.closed.iter().map(|c| names(&kernel, c)).collect::<Vec<_>>(),
        "transient": names(&kernel, &structure.classes.transient),
        "essential_irreducible": structure.essential_irreducible,
        "chain_period": structure.chain_period,
        "periodic_partition": structure.periodic_partition.as_ref()
            .map(|p| p.iter().map(|c| names(&kernel, c)).collect::<Vec<_>>()),
        "stages": structure.stages,
        "invariant": invariant,
        "coalescence": coalescence_verdict(&kernel),
        "sampling_coalescence": ctx.coalescence,
        "doeblin_certificate": certificate,
    });
    write_document(&doc, args.out.as_deref(), stdout)?;
    Ok(EXIT_OK)
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_rows(
    out: Option<&Path>,
    stdout: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(fs::File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(stdout);
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn sample(args: SampleArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let kernel = load_kernel(&args.kernel)?;
    let algorithm = match args.algorithm {
        AlgorithmArg::Cftp => Algorithm::Cftp,
        AlgorithmArg::Eps => Algorithm::Eps { threshold: args.threshold.expect("required by clap") },
        AlgorithmArg::Doeblin => Algorithm::Doeblin,
    };
    let config = SamplerConfig {
        algorithm,
        window: args.window,
        replicas: args.replicas,
        seed: args.seed,
        step_cap: step_cap()?,
        mixture: args.invariant_weights,
    };
    let batch = sample_batch(&kernel, &config)?;
    let labels: Vec<String> = (0..kernel.states()).map(|g| kernel.state_name(g)).collect();
    write_rows(args.out.as_deref(), stdout, |w| write_batch_csv(&batch, &labels, w))?;
    let diag = json!({
        "algorithm": batch.algorithm,
        "seed": batch.seed,
        "window": batch.window,
        "replicas": batch.replicates.len(),
        "threshold": match algorithm { Algorithm::Eps { threshold } => Some(threshold), _ => None },
        "error_estimate": batch.error_estimate,
        "diagnostics": batch.replicates.iter().map(|r| &r.diagnostics).collect::<Vec<_>>(),
    });
    match &args.out {
        Some(p) => write_document(&diag, Some(&sidecar(p, ".diag.json")), stdout)?,
        None => write_document(&diag, None, stderr)?,
    }
    Ok(EXIT_OK)
}

fn write_batch_csv(batch: &SampleBatch, labels: &[String], w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "replica,site,state")?;
    for (r, rep) in batch.replicates.iter().enumerate() {
        for (&site, &g) in batch.window.sites().iter().zip(&rep.values) {
            writeln!(w, "{r},{site},{}", labels[g])?;
        }
    }
    Ok(())
}

fn validate(args: ValidateArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let kernel = load_kernel(&args.kernel)?;
    let report = cross_algorithm_report(&kernel, &args.window, args.replicas, args.seed)?;
    write_document(&report, args.out.as_deref(), stdout)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATION })
}

/// `(start distance, hitting step, coalescence point)`.
type WalkRow = (u64, Option<u64>, Option<Site>);

#[derive(Serialize)]
struct WalkSummary {
    mode: String,
    replicas: u64,
    horizon: u64,
    seed: u64,
    hits: u64,
    hit_fraction: f64,
    ci_low: f64,
    ci_high: f64,
    mean_hit_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_hat_tail: Option<crate::walks::TailEstimate>,
}

fn walks(args: WalksArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let kernel = load_kernel(&args.kernel)?;
    let (mode, rows): (String, Vec<WalkRow>) = match &args.window {
        None => {
            let d = args.distance.unwrap_or(1);
            let rows = (0..args.replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rng = RandomSource::for_replica(&kernel, args.seed, r);
                    (d, von_schelling_simulate(&kernel, d, args.horizon, &mut rng), None)
                })
                .collect();
            (format!("pair at distance {d}"), rows)
        }
        Some(w) => {
            let span = (w.max() - w.min()) as u64;
            let rows = (0..args.replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rng = RandomSource::for_replica(&kernel, args.seed, r);
                    let rep = joint_coalescence(w, args.horizon, &mut rng)?;
                    Ok((span, rep.s_lambda.map(|_| rep.steps), rep.s_lambda))
                })
                .collect::<Result<_, crate::walks::WalkError>>()
                .map_err(|e| Failure(EXIT_PRECONDITION, e.to_string()))?;
            (format!("window {}..{}", w.min(), w.max()), rows)
        }
    };
    let s_hat_tail = match (&args.window, args.threshold) {
        (Some(w), Some(u)) => Some(
            s_hat_tail_estimate(&kernel, w, u, args.horizon, args.replicas, args.seed)
                .map_err(|e| Failure(EXIT_PRECONDITION, e.to_string()))?,
        ),
        _ => None,
    };
    let windowed = args.window.is_some();
    write_rows(args.out.as_deref(), stdout, |w| {
        if windowed {
            writeln!(w, "replica,start_distance,hit_step_or_-1,coalescence_point")?;
        } else {
            writeln!(w, "replica,start_distance,hit_step_or_-1")?;
        }
        for (r, (d, hit, point)) in rows.iter().enumerate() {
            let hit = hit.map_or("-1".to_string(), |h| h.to_string());
            if windowed {
                let point = point.map_or(String::new(), |p| p.to_string());
                writeln!(w, "{r},{d},{hit},{point}")?;
            } else {
                writeln!(w, "{r},{d},{hit}")?;
            }
        }
        Ok(())
    })?;
    let hit_steps: Vec<u64> = rows.iter().filter_map(|r| r.1).collect();
    let hits = hit_steps.len() as u64;
    let (ci_low, ci_high) = wilson_interval(hits, args.replicas);
    let summary = WalkSummary {
        mode,
        replicas: args.replicas,
        horizon: args.horizon,
        seed: args.seed,
        hits,
        hit_fraction: hits as f64 / args.replicas as f64,
        ci_low,
        ci_high,
        mean_hit_step: (hits > 0).then(|| hit_steps.iter().map(|&h| h as f64).sum::<f64>() / hits as f64),
        s_hat_tail,
    };
    match &args.out {
        Some(p) => write_document(&summary, Some(&sidecar(p, ".summary.json")), stdout)?,
        None => write_document(&summary, None, stderr)?,
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("imitatio").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("0..1").unwrap().sites(), &[0, 1]);
        assert_eq!(parse_window("-3..-2").unwrap().sites(), &[-3, -2]);
        assert!(parse_window("2..1").is_err());
        assert!(parse_window("0-1").is_err());
    }

    #[test]
    fn usage_errors_exit_3() {
        let dir = tempfile::tempdir().unwrap();
        let k = dir.path().join("k.json");
        fs::write(&k, r#"{"states":2,"support":[{"k":1,"theta":0.5,"matrix":[[1,0],[0,1]]},{"k":2,"theta":0.5,"matrix":[[0,1],[1,0]]}]}"#).unwrap();
        let k = k.to_str().unwrap();
        assert_eq!(run_str(&["sample", k, "--window", "0..1", "--algorithm", "eps"]).0, 3);
        assert_eq!(run_str(&["sample", k, "--window", "0..1", "--algorithm", "cftp", "--replicas", "0"]).0, 3);
        assert_eq!(run_str(&["walks", k, "--replicas", "0"]).0, 3);
        assert_eq!(run_str(&["analyze", "/nonexistent/kernel.json"]).0, 3);
        assert_eq!(run_str(&["--help"]).0, 0);
        let (code, out, _) =
            run_str(&["sample", k, "--window", "-1..0", "--algorithm", "eps", "--threshold", "-5", "--replicas", "3"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 7);
    }
}
