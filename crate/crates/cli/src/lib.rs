//! Experiment runner for the relay network simulator.
//!
//! Three commands: `simulate` runs seeded trials of a scheme and writes a
//! versioned JSON or CSV result file, `bounds` prints the DoF bound table and
//! `verify` runs the invariant suite on one scenario. Every command is also a
//! library function so tests can drive it without spawning a process.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use relay_dof::analysis::{bound_table, ordering_holds, DofValue};
use relay_dof::network::FeedbackMode;
use relay_dof::schemes::{
    run_scheme, Mutation, RunOptions, SchemeError, SchemeId, SimReport, ViolationKind,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status when a trial fails to decode or an invariant fails.
pub const EXIT_FAILED: i32 = 1;
/// Exit status for configuration problems and scheme errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("cannot write output: {0}")]
    Write(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "relay-dof",
    version,
    about = "Delayed-CSIT relay network simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded trials of a scheme and write the results.
    Simulate(ExperimentArgs),
    /// Print cascade, lower and upper DoF bounds for a range of K.
    Bounds(BoundsArgs),
    /// Run the invariant suite on one scenario.
    Verify(VerifyArgs),
}

/// Experiment flags; each overrides the matching key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// TOML file with any subset of the experiment keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub scheme: Option<SchemeId>,
    /// global-range or one-hop-range; defaults to the scheme's own.
    #[arg(long)]
    pub feedback: Option<FeedbackMode>,
    /// Rounds (blocks for global-k2).
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add unit-variance receiver noise.
    #[arg(long)]
    pub noise: bool,
    /// Transmit power per layer.
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    #[arg(long, default_value_t = 2)]
    pub from: u32,
    #[arg(long, default_value_t = 10)]
    pub to: u32,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Inject a fault into the schedule before running.
    #[arg(long, value_enum)]
    pub mutate: Option<MutationArg>,
    /// Largest normalised decode error still counted as delivered.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MutationArg {
    UnformableSwap,
}

impl From<MutationArg> for Mutation {
    fn from(m: MutationArg) -> Self {
        match m {
            MutationArg::UnformableSwap => Mutation::UnformableSwap,
        }
    }
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    layers: Option<usize>,
    users: Option<usize>,
    scheme: Option<SchemeId>,
    feedback: Option<FeedbackMode>,
    rounds: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    noise: Option<bool>,
    power: Option<f64>,
    format: Option<OutputFormat>,
    out: Option<PathBuf>,
}

/// A fully resolved, validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub layers: usize,
    pub users: usize,
    pub scheme: SchemeId,
    pub feedback: FeedbackMode,
    pub rounds: usize,
    pub trials: usize,
    pub seed: u64,
    pub noise: bool,
    pub power: f64,
    pub format: OutputFormat,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            users: 3,
            scheme: SchemeId::OneHop33,
            feedback: FeedbackMode::OneHopRange,
            rounds: 1,
            trials: 1,
            seed: 0,
            noise: false,
            power: 1.0,
            format: OutputFormat::Json,
            out: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(args: &ExperimentArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => load_config(path)?,
            None => ConfigFile::default(),
        };
        let d = Self::default();
        let scheme = args.scheme.or(file.scheme).unwrap_or(d.scheme);
        let config = Self {
            layers: args.layers.or(file.layers).unwrap_or(d.layers),
            users: args.users.or(file.users).unwrap_or(d.users),
            scheme,
            feedback: args
                .feedback
                .or(file.feedback)
                .unwrap_or_else(|| scheme.native_feedback()),
            rounds: args.rounds.or(file.rounds).unwrap_or(d.rounds),
            trials: args.trials.or(file.trials).unwrap_or(d.trials),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            noise: args.noise || file.noise.unwrap_or(d.noise),
            power: args.power.or(file.power).unwrap_or(d.power),
            format: args.format.or(file.format).unwrap_or(d.format),
            out: args.out.clone().or(file.out),
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks scheme, K and N together before anything runs.
    ///
    /// A scheme may be paired with a feedback mode it was not designed for;
    /// the run then stops at its first out-of-scope CSI request.
    pub fn validate(&self) -> Result<(), CliError> {
        self.scheme
            .validate(self.layers, self.users)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.rounds == 0 {
            return Err(CliError::Config("rounds must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(CliError::Config(format!(
                "power must be positive, got {}",
                self.power
            )));
        }
        Ok(())
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            feedback: Some(self.feedback),
            noise: self.noise,
            power: self.power,
            ..RunOptions::default()
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| CliError::Toml {
        path: path.to_owned(),
        source,
    })
}

fn fraction(numer: u64, denom: u64) -> String {
    DofValue::from_ratio(numer, denom).fraction()
}

fn decimal(numer: u64, denom: u64) -> f64 {
    DofValue::from_ratio(numer, denom).approx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub slots: usize,
    pub messages: usize,
    pub delivered: usize,
    pub dof: String,
    pub dof_decimal: f64,
    pub max_residual: f64,
    pub redraws: usize,
    pub decoded: bool,
}

impl TrialRecord {
    fn from_report(trial: usize, r: &SimReport) -> Self {
        let (n, d) = (r.messages_delivered as u64, r.slots_used as u64);
        Self {
            trial,
            seed: r.seed,
            slots: r.slots_used,
            messages: r.messages_sent,
            delivered: r.messages_delivered,
            dof: fraction(n, d),
            dof_decimal: decimal(n, d),
            max_residual: r.max_residual(),
            redraws: r.redraw_count,
            decoded: r.all_decoded(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub decoded_trials: usize,
    pub min_residual: f64,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub redraws: usize,
    /// Delivered over used slots, summed across trials.
    pub dof: String,
    pub dof_decimal: f64,
    pub asymptote: String,
    pub asymptote_decimal: f64,
    pub gap: String,
    pub gap_decimal: f64,
}

impl Aggregate {
    fn from_trials(scheme: SchemeId, trials: &[TrialRecord]) -> Self {
        let residuals: Vec<f64> = trials.iter().map(|t| t.max_residual).collect();
        let delivered: u64 = trials.iter().map(|t| t.delivered as u64).sum();
        let slots: u64 = trials.iter().map(|t| t.slots as u64).sum();
        let measured = DofValue::from_ratio(delivered, slots);
        let a = scheme.asymptotic_dof();
        let asymptote = DofValue::from_ratio(*a.numer(), *a.denom());
        let gap = DofValue::new(&asymptote.exact - &measured.exact);
        Self {
            trials: trials.len(),
            decoded_trials: trials.iter().filter(|t| t.decoded).count(),
            min_residual: residuals.iter().copied().fold(f64::INFINITY, f64::min),
            max_residual: residuals.iter().copied().fold(0.0, f64::max),
            mean_residual: residuals.iter().sum::<f64>() / residuals.len() as f64,
            redraws: trials.iter().map(|t| t.redraws).sum(),
            dof: measured.fraction(),
            dof_decimal: measured.approx,
            asymptote: asymptote.fraction(),
            asymptote_decimal: asymptote.approx,
            gap: gap.fraction(),
            gap_decimal: gap.approx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub trial: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl ResultDocument {
    /// 0 when every trial decoded, [`EXIT_FAILED`] when one did not,
    /// [`EXIT_ERROR`] when a trial hit a scheme error.
    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            EXIT_ERROR
        } else if self.trials.iter().all(|t| t.decoded) {
            0
        } else {
            EXIT_FAILED
        }
    }

    pub fn render(&self, format: OutputFormat) -> Result<String, CliError> {
        match format {
            OutputFormat::Json => Ok(serde_json::to_string_pretty(self)? + "\n"),
            OutputFormat::Csv => {
                if let Some(e) = &self.error {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.serialize(e)?;
                    return csv_string(w);
                }
                let mut w = csv::Writer::from_writer(Vec::new());
                for t in &self.trials {
                    w.serialize(t)?;
                }
                csv_string(w)
            }
        }
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Write(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs every trial, in parallel, and collects them in trial order.
///
/// On scheme errors the error of the lowest-numbered failing trial is
/// reported, so the result does not depend on thread scheduling.
pub fn cmd_simulate(config: &ExperimentConfig) -> ResultDocument {
    let options = config.run_options();
    let outcomes: Vec<(usize, u64, Result<SimReport, SchemeError>)> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let seed = config.trial_seed(i);
            let r = run_scheme(
                config.scheme,
                config.layers,
                config.users,
                config.rounds,
                seed,
                &options,
            );
            (i, seed, r)
        })
        .collect();
    let mut trials = Vec::with_capacity(outcomes.len());
    for (i, seed, r) in outcomes {
        match r {
            Ok(report) => trials.push(TrialRecord::from_report(i, &report)),
            Err(e) => {
                return ResultDocument {
                    schema_version: SCHEMA_VERSION,
                    config: config.clone(),
                    trials,
                    aggregate: None,
                    error: Some(ErrorRecord {
                        kind: e.kind().to_string(),
                        message: e.to_string(),
                        trial: i,
                        seed,
                    }),
                }
            }
        }
    }
    ResultDocument {
        schema_version: SCHEMA_VERSION,
        aggregate: Some(Aggregate::from_trials(config.scheme, &trials)),
        config: config.clone(),
        trials,
        error: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub users: u32,
    pub cascade: String,
    pub cascade_decimal: f64,
    pub lower: String,
    pub lower_decimal: f64,
    pub upper: String,
    pub upper_decimal: f64,
    /// `cascade < lower ≤ upper = K/H_K`.
    pub ordered: bool,
}

pub fn cmd_bounds(from: u32, to: u32) -> Result<Vec<BoundRecord>, CliError> {
    if from < 2 || to < from {
        return Err(CliError::Config(format!(
            "need 2 ≤ from ≤ to, got {from}..{to}"
        )));
    }
    Ok(bound_table(from..=to)
        .into_iter()
        .map(|row| BoundRecord {
            users: row.users,
            cascade: row.cascade.fraction(),
            cascade_decimal: row.cascade.approx,
            lower: row.lower.fraction(),
            lower_decimal: row.lower.approx,
            upper: row.upper.fraction(),
            upper_decimal: row.upper.approx,
            ordered: ordering_holds(row.users),
        })
        .collect())
}

pub fn render_bounds(rows: &[BoundRecord], format: OutputFormat) -> Result<String, CliError> {
    match format {
        OutputFormat::Json => Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "bounds": rows,
        }))? + "\n"),
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            csv_string(w)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Not meaningful for this scenario; does not fail the suite.
    Skip,
}

impl Verdict {
    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantResult {
    pub name: &'static str,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub results: Vec<InvariantResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.verdict != Verdict::Fail)
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.results
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.verdict)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            EXIT_FAILED
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<20} {:<6} {}\n", "invariant", "result", "detail");
        for r in &self.results {
            out.push_str(&format!(
                "{:<20} {:<6} {}\n",
                r.name,
                r.verdict.as_str(),
                r.detail
            ));
        }
        out
    }
}

/// Runs the scenario once, logging every violation instead of stopping, and
/// judges each invariant from the log. Only the first trial seed is used.
pub fn cmd_verify(
    config: &ExperimentConfig,
    mutate: Option<Mutation>,
    tolerance: Option<f64>,
) -> Result<VerifyReport, CliError> {
    let mut options = RunOptions {
        strict: false,
        mutation: mutate,
        ..config.run_options()
    };
    if let Some(t) = tolerance {
        options.decode_tolerance = t;
    }
    let report = run_scheme(
        config.scheme,
        config.layers,
        config.users,
        config.rounds,
        config.seed,
        &options,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    let count = |kinds: &[ViolationKind]| {
        report
            .violations
            .iter()
            .filter(|v| kinds.contains(&v.kind))
            .count()
    };
    let first = |kinds: &[ViolationKind]| {
        report
            .violations
            .iter()
            .find(|v| kinds.contains(&v.kind))
            .map(|v| format!("slot {}: {}", v.slot, v.detail))
    };
    let judge = |name: &'static str, kinds: &[ViolationKind], extra_ok: bool, ok_detail: String| {
        let n = count(kinds);
        InvariantResult {
            name,
            verdict: Verdict::of(n == 0 && extra_ok),
            detail: first(kinds).unwrap_or(ok_detail),
        }
    };

    let mut results = Vec::new();
    results.push(judge(
        "formability",
        &[ViolationKind::Formability],
        true,
        format!("{} slots", report.slots_used),
    ));
    let in_scope = config.feedback == FeedbackMode::GlobalRange || report.csi.out_of_scope() == 0;
    results.push(judge(
        "csit-scope",
        &[ViolationKind::CsitAccess],
        in_scope,
        format!(
            "{} queries, {} out of scope",
            report.csi.total,
            report.csi.out_of_scope()
        ),
    ));
    results.push(judge(
        "knowledge-claims",
        &[ViolationKind::Knowledge],
        true,
        format!("{} claims checked", report.claims_checked),
    ));
    results.push(judge(
        "overheard-pairs",
        &[ViolationKind::OverheardPair],
        true,
        "all pairs held".into(),
    ));
    if config.noise {
        results.push(InvariantResult {
            name: "consistency",
            verdict: Verdict::Skip,
            detail: "values carry noise".into(),
        });
    } else {
        results.push(judge(
            "consistency",
            &[ViolationKind::Consistency, ViolationKind::Elimination],
            true,
            format!("max residual {:.3e}", report.max_consistency_residual),
        ));
    }
    results.push(judge(
        "decode",
        &[ViolationKind::Decode],
        report.all_decoded(),
        format!(
            "{}/{} messages, max error {:.3e}",
            report.messages_delivered,
            report.messages_sent,
            report.max_residual()
        ),
    ));
    let expected = DofValue::from_ratio(
        config.scheme.messages(config.rounds) as u64,
        config.scheme.slots_used(config.layers, config.rounds) as u64,
    );
    let measured = DofValue::from_ratio(report.messages_delivered as u64, report.slots_used as u64);
    results.push(InvariantResult {
        name: "dof-counting",
        verdict: Verdict::of(measured == expected),
        detail: format!(
            "measured {} expected {}",
            measured.fraction(),
            expected.fraction()
        ),
    });
    Ok(VerifyReport { results })
}

/// Writes `text` to `out`, or to stdout.
pub fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}
