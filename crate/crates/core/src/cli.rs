//! Command-line front end: argument and config-file parsing, experiment
//! sweeps, single-configuration verification and route tracing.

use std::ffi::OsString;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{FaultConfiguration, FaultModel, FaultSet};
use crate::ft_routing::{route_ft_traced, TraceRecord};
use crate::routing::{ack_source, PacketKind};
use crate::sim::{
    aggregate, fault_free_baseline, path_length_histogram, run_seeded, write_rows_csv, RunOutcome, RunRow, Summary,
};
use crate::topology::{build_network, Coord, Network, NetworkConfig};
use crate::verification::{verify_faults, Report};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HSF_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Simulate,
    Verify,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub width: usize,
    pub height: usize,
    pub model: FaultModel,
    pub fault_pcts: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub mode: Mode,
    pub trace_dst: Option<Coord>,
    pub faults_file: Option<PathBuf>,
    pub jobs: usize,
    pub merge: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            width: 25,
            height: 25,
            model: FaultModel::Random,
            fault_pcts: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            runs: 100,
            seed: 42,
            out: PathBuf::from("results"),
            mode: Mode::Simulate,
            trace_dst: None,
            faults_file: None,
            jobs: 0,
            merge: true,
        }
    }
}

impl ExperimentSpec {
    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        self.network_config()
            .validate()
            .map_err(|e| Error::Usage(e.to_string()))?;
        if self.runs == 0 {
            return Err(Error::Usage("--runs must be at least 1".into()));
        }
        if self.fault_pcts.is_empty() {
            return Err(Error::Usage("at least one --fault-pct is required".into()));
        }
        if let Some(p) = self.fault_pcts.iter().find(|&&p| !(p > 0.0 && p < 100.0)) {
            return Err(Error::Usage(format!("fault percentage {p} is not in (0, 100)")));
        }
        if self.mode == Mode::Trace && self.trace_dst.is_none() {
            return Err(Error::Usage("trace mode needs --trace-dst x,y".into()));
        }
        if let Some(c) = self.trace_dst {
            if !self.network_config().contains(c) {
                return Err(Error::Usage(format!("--trace-dst {c} is outside the grid")));
            }
        }
        Ok(())
    }
}

fn parse_coord(s: &str) -> std::result::Result<Coord, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got '{s}'"))?;
    let x = x.trim().parse().map_err(|e| format!("bad x in '{s}': {e}"))?;
    let y = y.trim().parse().map_err(|e| format!("bad y in '{s}': {e}"))?;
    Ok(Coord::new(x, y))
}

fn parse_model(s: &str) -> std::result::Result<FaultModel, String> {
    s.parse::<FaultModel>().map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hsf-sim", version, about = "South-last fault-tolerant routing simulator and verifier")]
struct Args {
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Fault distribution: rf (random) or cf (correlated)
    #[arg(long, value_parser = parse_model)]
    model: Option<FaultModel>,
    /// Percentage of grid nodes that fail; repeat for several points
    #[arg(long = "fault-pct")]
    fault_pct: Vec<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $HSF_OUT_DIR or ./results]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long = "trace-dst", value_parser = parse_coord)]
    trace_dst: Option<Coord>,
    /// JSON fault set used by verify and trace modes
    #[arg(long = "faults-file")]
    faults_file: Option<PathBuf>,
    /// TOML file with the same keys as the flags (underscores for dashes)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for run-level parallelism (0 = all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Skip super-block merging (exposes the overlap hazard)
    #[arg(long = "no-merge")]
    no_merge: bool,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    width: Option<usize>,
    height: Option<usize>,
    model: Option<String>,
    fault_pct: Option<Vec<f64>>,
    runs: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    mode: Option<Mode>,
    trace_dst: Option<String>,
    faults_file: Option<PathBuf>,
    jobs: Option<usize>,
    merge: Option<bool>,
}

fn read_text(path: &FsPath) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Builds an [`ExperimentSpec`] with precedence flags > config file > environment > defaults.
pub fn parse_args<I, T>(argv: I) -> Result<ExperimentSpec>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let a = Args::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    let file = match &a.config {
        Some(p) => toml::from_str::<FileConfig>(&read_text(p)?)
            .map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?,
        None => FileConfig::default(),
    };
    let d = ExperimentSpec::default();
    let file_model = file.model.as_deref().map(str::parse::<FaultModel>).transpose()?;
    let file_dst = file
        .trace_dst
        .as_deref()
        .map(parse_coord)
        .transpose()
        .map_err(Error::Usage)?;
    let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    let spec = ExperimentSpec {
        width: a.width.or(file.width).unwrap_or(d.width),
        height: a.height.or(file.height).unwrap_or(d.height),
        model: a.model.or(file_model).unwrap_or(d.model),
        fault_pcts: if a.fault_pct.is_empty() {
            file.fault_pct.unwrap_or(d.fault_pcts)
        } else {
            a.fault_pct
        },
        runs: a.runs.or(file.runs).unwrap_or(d.runs),
        seed: a.seed.or(file.seed).unwrap_or(d.seed),
        out: a.out.or(file.out).or(env_out).unwrap_or(d.out),
        mode: a.mode.or(file.mode).unwrap_or(d.mode),
        trace_dst: a.trace_dst.or(file_dst),
        faults_file: a.faults_file.or(file.faults_file),
        jobs: a.jobs.or(file.jobs).unwrap_or(d.jobs),
        merge: !a.no_merge && file.merge.unwrap_or(true),
    };
    spec.validate()?;
    Ok(spec)
}

/// What a finished invocation produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub violations: usize,
    pub files: Vec<PathBuf>,
    /// Human-readable lines for stdout.
    pub messages: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.violations == 0 {
            EXIT_OK
        } else {
            EXIT_VIOLATION
        }
    }
}

fn write_file(path: PathBuf, bytes: &[u8], out: &mut Outcome) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    out.files.push(path);
    Ok(())
}

fn ensure_dir(dir: &FsPath) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        msg: e.to_string(),
    })
}

fn load_faults(spec: &ExperimentSpec) -> Result<FaultSet> {
    match &spec.faults_file {
        Some(p) => FaultSet::from_json(&read_text(p)?),
        None => Ok(FaultSet::default()),
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Outcome> {
    spec.validate()?;
    let net = build_network(spec.network_config())?;
    match spec.mode {
        Mode::Simulate => simulate(spec, &net),
        Mode::Verify => verify(spec, &net),
        Mode::Trace => trace(spec, &net),
    }
}

/// One entry of the violations file.
#[derive(Debug, Serialize)]
struct ViolationEntry {
    fault_pct: f64,
    run_seed: u64,
    faults: Option<FaultSet>,
    report: Option<Report>,
    error: Option<String>,
}

fn pct_label(p: f64) -> String {
    format!("{p}")
}

fn simulate(spec: &ExperimentSpec, net: &Network) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let baseline = fault_free_baseline(net);
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut summaries: Vec<Summary> = Vec::new();
    let mut histograms = Vec::new();
    let mut bad = Vec::new();

    for &pct in &spec.fault_pcts {
        let results: Vec<(u64, Result<RunOutcome>)> = pool.install(|| {
            (0..spec.runs as u64)
                .into_par_iter()
                .map(|i| (spec.seed + i, run_seeded(net, spec.model, pct, spec.seed + i, true)))
                .collect()
        });
        let mut metrics = Vec::with_capacity(results.len());
        for (seed, r) in results {
            match r {
                Ok(r) => {
                    let report = r.report.expect("verification requested");
                    if !report.is_clean() {
                        out.violations += report.violation_count();
                        bad.push(ViolationEntry {
                            fault_pct: pct,
                            run_seed: seed,
                            faults: Some(r.faults),
                            report: Some(report),
                            error: None,
                        });
                    }
                    rows.push(RunRow::from(&r.metrics));
                    metrics.push(r.metrics);
                }
                Err(e @ (Error::Config(_) | Error::Usage(_) | Error::InfeasibleTarget { .. })) => return Err(e),
                Err(e) => {
                    out.violations += 1;
                    bad.push(ViolationEntry {
                        fault_pct: pct,
                        run_seed: seed,
                        faults: None,
                        report: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        if metrics.is_empty() {
            continue;
        }
        let summary = aggregate(&metrics)?;
        out.messages.push(format!(
            "{} {}%: mean hops {:.4}, spanned {:.4}, victimized {:.2}, boundary {:.2}",
            spec.model.tag(),
            pct,
            summary.mean_hops,
            summary.spanned_fraction,
            summary.mean_victimized,
            summary.mean_boundary
        ));
        summaries.push(summary);
        histograms.push((pct, path_length_histogram(&metrics, &baseline)));
    }

    ensure_dir(&spec.out)?;
    let mut buf = Vec::new();
    write_rows_csv(&rows, &mut buf)?;
    write_file(spec.out.join("runs.csv"), &buf, &mut out)?;
    for (pct, h) in histograms {
        let mut buf = Vec::new();
        write_rows_csv(&h, &mut buf)?;
        let name = format!("histogram_{}_{}.csv", spec.model.tag(), pct_label(pct));
        write_file(spec.out.join(name), &buf, &mut out)?;
    }
    let json = serde_json::to_string_pretty(&summaries).expect("summary serialization is infallible");
    write_file(spec.out.join("summary.json"), json.as_bytes(), &mut out)?;
    if !bad.is_empty() {
        let json = serde_json::to_string_pretty(&bad).expect("serializable");
        write_file(spec.out.join("violations.json"), json.as_bytes(), &mut out)?;
    }
    Ok(out)
}

fn verify(spec: &ExperimentSpec, net: &Network) -> Result<Outcome> {
    let faults = load_faults(spec)?;
    let (cfg, report) = verify_faults(net, &faults, spec.merge);
    let mut out = Outcome {
        violations: report.violation_count(),
        ..Default::default()
    };
    ensure_dir(&spec.out)?;
    write_file(spec.out.join("report.json"), report.to_json().as_bytes(), &mut out)?;
    if let Some(cfg) = cfg {
        let g = crate::verification::build_cdg(net, &cfg);
        write_file(spec.out.join("cdg.dot"), g.to_dot().as_bytes(), &mut out)?;
    }
    out.messages.push(format!(
        "{} delivered of {} deliverable, {} violations",
        report.delivered, report.deliverable, out.violations
    ));
    if let Some(e) = &report.config_error {
        out.messages.push(e.clone());
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceLine {
    pub kind: PacketKind,
    #[serde(flatten)]
    pub record: TraceRecord,
}

/// JSON-lines trace of the directive to `dst` and of its ACK.
pub fn trace_lines(net: &Network, cfg: &FaultConfiguration, dst: Coord) -> Result<Vec<String>> {
    let (path, trace) = route_ft_traced(net.input_gw(), dst, cfg, net, PacketKind::Directive)?;
    let origin = ack_source(&path).expect("path is never empty");
    let (_, ack) = route_ft_traced(origin, net.ack_gw(), cfg, net, PacketKind::Ack)?;
    let lines = trace
        .into_iter()
        .map(|r| (PacketKind::Directive, r))
        .chain(ack.into_iter().map(|r| (PacketKind::Ack, r)))
        .map(|(kind, record)| serde_json::to_string(&TraceLine { kind, record }).expect("serializable"))
        .collect();
    Ok(lines)
}

fn trace(spec: &ExperimentSpec, net: &Network) -> Result<Outcome> {
    let faults = load_faults(spec)?;
    faults.validate(net.config())?;
    let cfg = FaultConfiguration::build(net, &faults, spec.merge)?;
    let dst = spec.trace_dst.expect("validated");
    let lines = trace_lines(net, &cfg, dst)?;
    let mut out = Outcome::default();
    ensure_dir(&spec.out)?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_file(spec.out.join("trace.jsonl"), text.as_bytes(), &mut out)?;
    out.messages = lines;
    Ok(out)
}

/// Parses `argv`, runs, prints and maps the result to an exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let spec = match Args::try_parse_from(&argv) {
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        _ => match parse_args(&argv) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{e}");
                return exit_code_for(&e);
            }
        },
    };
    match run_experiment(&spec) {
        Ok(o) => {
            for m in &o.messages {
                println!("{m}");
            }
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_VIOLATION,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        std::iter::once("hsf-sim".to_string())
            .chain(s.split_whitespace().map(String::from))
            .collect()
    }

    #[test]
    fn no_args_gives_defaults() {
        let s = parse_args(args("")).unwrap();
        let d = ExperimentSpec::default();
        assert_eq!((s.width, s.height, s.model, s.runs, s.seed), (25, 25, FaultModel::Random, 100, 42));
        assert_eq!(s.fault_pcts, d.fault_pcts);
        assert_eq!(s.mode, Mode::Simulate);
    }

    #[test]
    fn correlated_reference_point() {
        let s = parse_args(args("--width 25 --height 25 --model cf --fault-pct 1.6 --runs 100")).unwrap();
        assert_eq!(s.model, FaultModel::Correlated);
        assert_eq!(s.fault_pcts, vec![1.6]);
        assert_eq!(s.runs, 100);
    }

    #[test]
    fn even_width_is_usage_error() {
        let e = parse_args(args("--width 24")).unwrap_err();
        assert!(matches!(e, Error::Usage(_)));
        assert_eq!(exit_code_for(&e), EXIT_USAGE);
    }

    #[test]
    fn bad_values_rejected() {
        for a in ["--runs 0", "--fault-pct 0", "--fault-pct 100", "--model xx", "--mode trace", "--trace-dst 3"] {
            assert!(matches!(parse_args(args(a)), Err(Error::Usage(_))), "{a}");
        }
    }

    #[test]
    fn repeated_fault_pct() {
        let s = parse_args(args("--fault-pct 1 --fault-pct 2.5")).unwrap();
        assert_eq!(s.fault_pcts, vec![1.0, 2.5]);
    }

    #[test]
    fn config_file_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        fs::write(&p, "width = 15\nheight = 11\nmodel = \"cf\"\nfault_pct = [2.0]\nruns = 7\n").unwrap();
        let s = parse_args(args(&format!("--config {} --height 9", p.display()))).unwrap();
        assert_eq!((s.width, s.height, s.runs), (15, 9, 7));
        assert_eq!(s.model, FaultModel::Correlated);
        assert_eq!(s.fault_pcts, vec![2.0]);
        assert_eq!(s.seed, 42);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        fs::write(&p, "widht = 15\n").unwrap();
        assert!(matches!(
            parse_args(args(&format!("--config {}", p.display()))),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn missing_config_is_io_error() {
        let e = parse_args(args("--config /nonexistent/exp.toml")).unwrap_err();
        assert_eq!(exit_code_for(&e), EXIT_IO);
    }
}
