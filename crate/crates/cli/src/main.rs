//! `carry-sim`: run scenarios, exhaustive checks and fork-fraction sweeps.
//!
//! Exit codes: 0 clean, 1 violation found, 2 configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carry_core::adversary::{AdversaryScript, Behavior};
use carry_core::harness::{
    exhaustive_check, fork_fraction_sweep, parse_adversary, run_scenario, verify_run, CheckBounds,
    RunOutcome, ScenarioConfig, ScenarioError, SweepRow,
};
use carry_core::pacemaker::PacemakerMode;
use carry_core::types::{ProtocolConfig, ProtocolVariant, ReplicaId};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "carry-sim", version, about = "Carry-the-Tail simulator and checker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics as JSON.
    Run(RunArgs),
    /// Enumerate small-scope executions and check every invariant.
    Check(CheckArgs),
    /// Measure fork fractions over worst-case Byzantine placements.
    Sweep(SweepArgs),
    /// Re-run a stored scenario and re-verify the invariants.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Hotstuff2,
    Carry,
}

impl From<ProtocolArg> for ProtocolVariant {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Hotstuff2 => ProtocolVariant::HotStuff2Baseline,
            ProtocolArg::Carry => ProtocolVariant::CarryTheTail,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PacemakerArg {
    Oracle,
    Timeout,
}

impl From<PacemakerArg> for PacemakerMode {
    fn from(p: PacemakerArg) -> Self {
        match p {
            PacemakerArg::Oracle => PacemakerMode::Oracle,
            PacemakerArg::Timeout => PacemakerMode::Timeout,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; without one, a fault-free cluster with f = 1.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    views: Option<u64>,
    #[arg(long)]
    rho: Option<u64>,
    #[arg(long)]
    protocol: Option<ProtocolArg>,
    #[arg(long)]
    pacemaker: Option<PacemakerArg>,
    /// Adversary file, or a preset: `honest`, or a behavior name
    /// (`tail-fork`, `skip-forward`, `skip-backward`, `silent`,
    /// `equivocate`) optionally followed by `:ID`.
    #[arg(long)]
    adversary: Option<String>,
    /// Write the delivery trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the metrics here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    views: u64,
    #[arg(long, default_value_t = 2)]
    rho: u64,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Carry)]
    protocol: ProtocolArg,
    /// Early views whose deliveries the adversary schedules.
    #[arg(long, default_value_t = 2)]
    pre_gst_views: u64,
    /// Lower the quorum to 2f; the check must then find violations.
    #[arg(long)]
    canary: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// A single value, `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1..8")]
    rho: String,
    #[arg(long, default_value_t = 1)]
    f: usize,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Carry)]
    protocol: ProtocolArg,
    /// Run every worst-case placement instead of only the first.
    #[arg(long)]
    worst_case: bool,
    /// Full leader rotations per run.
    #[arg(long, default_value_t = 12)]
    rotations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Usage(String),
}

type Outcome = Result<bool, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn set_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    Ok(())
}

fn preset(spec: &str, n: usize) -> Result<AdversaryScript, CliError> {
    if spec == "honest" {
        return Ok(AdversaryScript::honest());
    }
    let (name, id) = match spec.split_once(':') {
        Some((name, id)) => {
            let id: u32 = id
                .parse()
                .map_err(|_| CliError::Usage(format!("bad replica id in {spec:?}")))?;
            (name, id)
        }
        None => (spec, n as u32 - 1),
    };
    let behavior = match name {
        "tail-fork" => Behavior::TailFork,
        "skip-forward" => Behavior::SkipForward { target: None },
        "skip-backward" => Behavior::SkipBackward { target: None },
        "silent" => Behavior::Silent,
        "equivocate" => Behavior::Equivocate,
        other => return Err(CliError::Usage(format!("unknown adversary preset {other:?}"))),
    };
    Ok(AdversaryScript {
        byzantine: [ReplicaId(id)].into_iter().collect(),
        default: behavior,
        ..AdversaryScript::default()
    })
}

fn build_run_config(a: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &a.scenario {
        Some(p) => ScenarioConfig::from_toml(&read(p)?)?,
        None => ScenarioConfig::honest(1, 6, ProtocolVariant::CarryTheTail, 20),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.views {
        cfg.views = v;
    }
    if let Some(r) = a.rho {
        cfg.protocol.rho = r;
    }
    if let Some(p) = a.protocol {
        cfg.protocol = ProtocolConfig {
            variant: p.into(),
            ..cfg.protocol
        };
    }
    if let Some(p) = a.pacemaker {
        cfg.pacemaker.mode = p.into();
    }
    if let Some(spec) = &a.adversary {
        let path = Path::new(spec);
        cfg.adversary = if path.is_file() {
            parse_adversary(&read(path)?)?
        } else {
            preset(spec, cfg.protocol.n)?
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_run(out: &RunOutcome, trace: Option<&Path>, output: Option<&Path>) -> Result<(), CliError> {
    if let Some(t) = trace {
        let mut text = out.trace.join("\n");
        text.push('\n');
        write_or_print(Some(t), &text)?;
    }
    let mut json = serde_json::to_string_pretty(&out.metrics).expect("metrics serialize");
    json.push('\n');
    write_or_print(output, &json)
}

fn cmd_run(a: RunArgs) -> Outcome {
    let cfg = build_run_config(&a)?;
    let out = run_scenario(&cfg)?;
    emit_run(&out, a.trace.as_deref(), a.output.as_deref())?;
    Ok(out.metrics.safety_violations.is_empty())
}

fn cmd_replay(a: ReplayArgs) -> Outcome {
    let cfg = ScenarioConfig::from_toml(&read(&a.scenario)?)?;
    let out = run_scenario(&cfg)?;
    emit_run(&out, a.trace.as_deref(), a.output.as_deref())?;
    let found = verify_run(&cfg, &out);
    for (inv, detail) in &found {
        eprintln!("violation: {inv:?}: {detail}");
    }
    Ok(found.is_empty())
}

fn cmd_check(a: CheckArgs) -> Outcome {
    set_jobs(a.jobs)?;
    if a.n < 4 || (a.n - 1) % 3 != 0 {
        return Err(CliError::Usage(format!("--n must be 3f+1 with f >= 1, got {}", a.n)));
    }
    let f = (a.n - 1) / 3;
    let bounds = CheckBounds {
        f,
        views: a.views,
        rho: a.rho,
        variant: a.protocol.into(),
        quorum_override: a.canary.then_some(2 * f),
        pre_gst_views: a.pre_gst_views,
        ..CheckBounds::default()
    };
    if bounds.views < 3 || bounds.pre_gst_views >= bounds.views {
        return Err(CliError::Usage(
            "--views must be at least 3 and exceed --pre-gst-views".into(),
        ));
    }
    let report = exhaustive_check(&bounds)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_or_print(a.output.as_deref(), &json)?;
    Ok(report.is_clean())
}

fn parse_range(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("bad range {spec:?}"));
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        if lo == 0 || lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let values = spec
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn cmd_sweep(a: SweepArgs) -> Outcome {
    set_jobs(a.jobs)?;
    let rhos = parse_range(&a.rho)?;
    if a.f == 0 || a.rotations < 3 {
        return Err(CliError::Usage("--f must be positive and --rotations at least 3".into()));
    }
    let mut rows = fork_fraction_sweep(a.f, &rhos, a.protocol.into(), a.rotations, a.seed)?;
    if !a.worst_case {
        let mut seen = std::collections::BTreeSet::new();
        rows.retain(|r| seen.insert(r.rho));
    }
    let mut text = format!("# carry-sim sweep seed={} rotations={}\n", a.seed, a.rotations);
    text.push_str(SweepRow::CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    write_or_print(a.output.as_deref(), &text)?;
    Ok(true)
}
