//! Command-line surface: `simulate`, `keyrate`, `threshold` and `sweep`.
//!
//! Exit statuses: 0 success, 1 usage error, 2 domain error, 3 I/O error.
//! Failures print one JSON line `{"error": kind, "message": text}` on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::Error;
use crate::protocol::{
    self, ProtocolConfig, ReverseChannel, SizingMode, TranscriptDocument, DEFAULT_DELTA,
    DEFAULT_TEST_THRESHOLD, SCHEMA_VERSION,
};
use crate::security::depolarizing::{closed_form_gap, observable_route};
use crate::security::threshold::p_grid;
use crate::security::{f_bp, sweep, threshold_p, KeyRateReport, SweepRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DOMAIN: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Upper limit on sweep grid points per `b`.
pub const MAX_SWEEP_POINTS: usize = 1_000_000;

#[derive(Debug, Parser)]
#[command(
    name = "sqkd",
    version,
    about = "Single-state SQKD simulator and key-rate analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the protocol and write a transcript JSON.
    Simulate(SimulateArgs),
    /// Closed-form key-rate report for a depolarizing reverse channel.
    Keyrate(KeyrateArgs),
    /// Smallest depolarizing p at which the key-rate bound reaches zero.
    Threshold(ThresholdArgs),
    /// Key-rate bound over a (b, p) grid, written as CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sizing {
    Paper,
    Realized,
}

impl From<Sizing> for SizingMode {
    fn from(s: Sizing) -> Self {
        match s {
            Sizing::Paper => SizingMode::PaperLiteral,
            Sizing::Realized => SizingMode::RealizedL,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of iterations N.
    #[arg(long)]
    pub n: usize,
    /// Forward-attack parameter, |b| < 1/2.
    #[arg(long, allow_hyphen_values = true)]
    pub b: f64,
    /// Depolarizing parameter of the reverse channel; 0 means ideal.
    #[arg(long, allow_hyphen_values = true)]
    pub p: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "realized")]
    pub sizing: Sizing,
    /// Include per-iteration records in the transcript.
    #[arg(long)]
    pub records: bool,
    #[arg(long, default_value_t = DEFAULT_DELTA, allow_hyphen_values = true)]
    pub delta: f64,
    /// Abort threshold P_T on the TEST error rate.
    #[arg(long, default_value_t = DEFAULT_TEST_THRESHOLD, allow_hyphen_values = true)]
    pub test_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KeyrateArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub b: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub p: f64,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub b: f64,
    #[arg(long, default_value_t = 1e-5, allow_hyphen_values = true)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated forward-attack values.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub b: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub p_min: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub p_max: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub p_step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Usage,
    Domain,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: FailureKind,
    pub message: String,
}

impl CliError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            kind: FailureKind::Io,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Usage => EXIT_USAGE,
            FailureKind::Domain => EXIT_DOMAIN,
            FailureKind::Io => EXIT_IO,
        }
    }

    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            kind: FailureKind::Domain,
            message: e.to_string(),
        }
    }
}

fn domain(message: String) -> CliError {
    CliError {
        kind: FailureKind::Domain,
        message,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let message = e
                .to_string()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            let err = CliError {
                kind: FailureKind::Usage,
                message,
            };
            let _ = writeln!(stderr, "{}", err.to_json_line());
            return err.exit_code();
        }
    };
    match dispatch(&cli.command).and_then(|line| {
        writeln!(stdout, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
    }) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.to_json_line());
            err.exit_code()
        }
    }
}

/// Executes a command and returns the line to print on stdout.
pub fn dispatch(command: &Command) -> Result<String, CliError> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Keyrate(a) => keyrate(a),
        Command::Threshold(a) => threshold(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let reverse = if a.p == 0.0 {
        ReverseChannel::Ideal
    } else {
        ReverseChannel::depolarizing(a.p)?
    };
    let config = ProtocolConfig {
        iterations: a.n,
        delta: a.delta,
        b: a.b,
        reverse,
        seed: a.seed,
        test_threshold: a.test_threshold,
        sizing_mode: a.sizing.into(),
    };
    config.validate()?;
    let transcript = protocol::run(&config)?;
    let doc = transcript.to_document(a.records);
    write_atomic(&a.out, doc.to_json().as_bytes())?;
    let s = &doc.summary;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "out": a.out.display().to_string(),
        "aborted": s.aborted,
        "abort_reason": s.abort_reason,
        "sifted_length": s.sifted_length,
        "info_length": s.info_length,
        "test_error_rate": s.test_error_rate,
        "keep_rate": s.keep_rate,
        "efficiency": s.efficiency,
    })
    .to_string())
}

#[derive(Debug, Serialize)]
struct KeyrateOutput {
    schema_version: u32,
    b: f64,
    p: f64,
    #[serde(flatten)]
    report: KeyRateReport,
    k_prime: f64,
    /// The general observable bound on the same statistics.
    observable_route: KeyRateReport,
    /// Closed-form `𝓑` minus the observable-route `𝓑`, both unclamped.
    #[serde(rename = "closed_form_gap_B")]
    closed_form_gap_b: f64,
}

fn keyrate(a: &KeyrateArgs) -> Result<String, CliError> {
    let f = f_bp(a.b, a.p)?;
    let out = KeyrateOutput {
        schema_version: SCHEMA_VERSION,
        b: a.b,
        p: a.p,
        report: f.report()?,
        k_prime: f.k_prime,
        observable_route: observable_route(a.b, a.p)?,
        closed_form_gap_b: closed_form_gap(a.b, a.p)?,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

fn threshold(a: &ThresholdArgs) -> Result<String, CliError> {
    let t = threshold_p(a.b, a.tol)?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "b": t.b,
        "tol": a.tol,
        "p_star": t.p_star,
        "e_z_threshold": t.e_z_threshold,
        "sign_changes": t.sign_changes,
        "warning": t.warning,
    })
    .to_string())
}

fn sweep_cmd(a: &SweepArgs) -> Result<String, CliError> {
    for &b in &a.b {
        if !b.is_finite() || b.abs() >= 0.5 {
            return Err(Error::Domain {
                what: "b",
                value: b,
                domain: "(-1/2, 1/2)",
            }
            .into());
        }
    }
    if !(a.p_min >= 0.0) {
        return Err(Error::Domain {
            what: "p_min",
            value: a.p_min,
            domain: "[0, ∞)",
        }
        .into());
    }
    if a.p_step > 0.0 && (a.p_max - a.p_min) / a.p_step > MAX_SWEEP_POINTS as f64 {
        return Err(domain(format!("p grid exceeds {MAX_SWEEP_POINTS} points")));
    }
    let grid = p_grid(a.p_min, a.p_max, a.p_step)?;
    let rows = sweep(&a.b, &grid);
    write_atomic(&a.out, render_csv(&rows).as_bytes())?;
    Ok(json!({ "out": a.out.display().to_string(), "rows": rows.len() }).to_string())
}

/// CSV with header `b,p,r_lower`; out-of-domain points render as `NaN`.
pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("b,p,r_lower\n");
    for r in rows {
        let r_lower = r.r_lower.map_or_else(|| "NaN".to_string(), format_sig);
        s.push_str(&format!(
            "{},{},{}\n",
            format_sig(r.b),
            format_sig(r.p),
            r_lower
        ));
    }
    s
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<(), CliError> {
    write_atomic(path, render_csv(rows).as_bytes())
}

/// Nine significant digits in positional notation; exact zero is `0`.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return "NaN".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let render = |exp: i32| format!("{:.*}", (DIGITS - 1 - exp).max(0) as usize, x);
    let s = render(exp);
    // rounding can carry into a new leading digit, e.g. 9.9999999996
    let digits = s
        .trim_start_matches('-')
        .trim_start_matches(['0', '.'])
        .replace('.', "");
    if digits.len() > DIGITS as usize && exp < DIGITS - 1 {
        render(exp + 1)
    } else {
        s
    }
}

/// Writes to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_transcript(path: &Path) -> Result<TranscriptDocument, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(TranscriptDocument::from_json(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("sqkd").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1.00000000");
        assert_eq!(format_sig(0.05), "0.0500000000");
        assert_eq!(format_sig(-0.123456789123), "-0.123456789");
        assert_eq!(format_sig(123.456), "123.456000");
        assert_eq!(format_sig(9.9999999996), "10.0000000");
        assert_eq!(format_sig(1234567890.4), "1234567890");
        assert_eq!(format_sig(f64::NAN), "NaN");
    }

    #[test]
    fn csv_shapes() {
        assert_eq!(render_csv(&[]), "b,p,r_lower\n");
        let one = [SweepRow {
            b: 0.0,
            p: 0.0,
            r_lower: Some(1.0),
        }];
        assert_eq!(render_csv(&one), "b,p,r_lower\n0,0,1.00000000\n");
        let nan = [SweepRow {
            b: 0.1,
            p: 0.6,
            r_lower: None,
        }];
        assert_eq!(
            render_csv(&nan),
            "b,p,r_lower\n0.100000000,0.600000000,NaN\n"
        );
    }

    #[test]
    fn usage_and_domain_errors() {
        let (code, out, err) = call(&["frobnicate"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(out.is_empty());
        assert_eq!(err.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(v["error"], "usage");

        let (code, _, err) = call(&["keyrate", "--b", "0.7", "--p", "0.1"]);
        assert_eq!(code, EXIT_DOMAIN);
        let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(v["error"], "domain");

        let (code, _, _) = call(&["keyrate", "--b", "0", "--p", "0.6"]);
        assert_eq!(code, EXIT_DOMAIN);
        let (code, _, _) = call(&["threshold", "--b", "0.499"]);
        assert_eq!(code, EXIT_DOMAIN);
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("simulate"));
    }

    #[test]
    fn keyrate_noiseless() {
        let (code, out, _) = call(&["keyrate", "--b", "0", "--p", "0"]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["r_lower"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((v["B"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(v["schema_version"], 1);
        for key in [
            "lambda",
            "k1",
            "k2",
            "h_b_given_a",
            "closed_form_gap_B",
            "observable_route",
        ] {
            assert!(!v[key].is_null(), "{key}");
        }
    }

    #[test]
    fn negative_b_is_accepted() {
        let (code, out, _) = call(&["threshold", "--b", "-0.05"]);
        assert_eq!(code, EXIT_OK, "{out}");
    }

    #[test]
    fn io_error_exit_code() {
        let (code, _, err) = call(&[
            "sweep",
            "--b",
            "0",
            "--p-min",
            "0",
            "--p-max",
            "0.01",
            "--p-step",
            "0.01",
            "--out",
            "/nonexistent-dir/x.csv",
        ]);
        assert_eq!(code, EXIT_IO);
        assert!(err.contains("\"io\""));
    }
}
