//! `visurvey`: validate study documents, preview compiled plans, run scripted
//! sessions headlessly, serve the HTTP API and export stored results.
//!
//! Exit codes are shared by every subcommand: 0 success, 1 validation or
//! semantic failure, 2 I/O or usage error.

pub mod script;

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use visurvey_core::compiler::StepKind;
use visurvey_core::sdl::{AssessmentPair, AssetManifest, Severity};
use visurvey_core::store::{encode_record, export_results, open_sink, ExportFilter, ResultSink, SinkConfig, StoreError};
use visurvey_core::{
    derive_active_items, parse_study_definition, validate_study, ActiveItemSet, Clock, IdSource,
    ManualClock, RandomIds, SequentialIds, StudyDefinition, SystemClock, TaskPlan,
};

use crate::script::{run_script, AnswerScript};

#[derive(Debug, Parser)]
#[command(
    name = "visurvey",
    version,
    about = "Validate, preview, simulate, serve and export visual self-report studies",
    after_help = "Exit status: 0 success, 1 validation or semantic failure, 2 I/O or usage error."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a study document and list its diagnostics
    Validate(ValidateArgs),
    /// Print the compiled steps of one task
    Plan(PlanArgs),
    /// Run the full assessment, derive active items, then run the spot assessment
    Simulate(SimulateArgs),
    /// Serve the HTTP API
    Serve(ServeArgs),
    /// Print stored result records, one per line
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Full,
    Spot,
    Pam,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Study document (JSON)
    path: PathBuf,
    /// Directory of media assets; image titles must match file stems
    #[arg(long, value_name = "DIR")]
    assets: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "human")]
    format: Format,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Study document (JSON)
    path: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Full or spot identifier of the assessment pair; needed when the study has several
    #[arg(long, value_name = "ID")]
    assessment: Option<String>,
    /// Active item set for spot tasks: {"itemIds": [...]} or a plain array of item ids
    #[arg(long, value_name = "FILE", required_if_eq("task", "spot"))]
    active: Option<PathBuf>,
    /// Prompt for pam tasks
    #[arg(long, default_value = "Choose the picture that best shows how you feel right now")]
    prompt: String,
    #[arg(long, value_enum, default_value = "human")]
    format: Format,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Study document (JSON)
    path: PathBuf,
    /// Answer script (JSON)
    #[arg(long, value_name = "FILE")]
    script: PathBuf,
    /// Sink config file (JSON, or TOML by extension); results are discarded without one
    #[arg(long, value_name = "FILE", conflicts_with = "out")]
    sink: Option<PathBuf>,
    /// Shorthand for a file sink writing to PATH
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Start time of the simulated full session (RFC 3339); defaults to now
    #[arg(long, value_name = "TIME")]
    at: Option<DateTime<Utc>>,
    /// Use sequential ids with this prefix instead of random ones
    #[arg(long, value_name = "PREFIX")]
    id_prefix: Option<String>,
    /// Full or spot identifier of the assessment pair; overrides the script
    #[arg(long, value_name = "ID")]
    assessment: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Server config file (TOML)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Listen address; overrides the config file
    #[arg(long, value_name = "ADDR")]
    bind: Option<SocketAddr>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["sink", "file"]))]
struct ExportArgs {
    /// Sink config file (JSON, or TOML by extension)
    #[arg(long, value_name = "FILE")]
    sink: Option<PathBuf>,
    /// Read a file sink at PATH
    #[arg(long, value_name = "PATH")]
    file: Option<PathBuf>,
    #[arg(long, value_name = "ID")]
    study: Option<String>,
    #[arg(long, value_name = "ID")]
    participant: Option<String>,
    /// Earliest completion time, inclusive (RFC 3339)
    #[arg(long, value_name = "TIME")]
    from: Option<DateTime<Utc>>,
    /// Latest completion time, exclusive (RFC 3339)
    #[arg(long, value_name = "TIME")]
    to: Option<DateTime<Utc>>,
}

/// A failed command: the message and its exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn semantic(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

type Outcome = Result<u8, Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(a, out),
        Command::Plan(a) => cmd_plan(a, out),
        Command::Simulate(a) => cmd_simulate(a, out, err),
        Command::Serve(a) => cmd_serve(a),
        Command::Export(a) => cmd_export(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|e| Failure::io(format!("stdout: {e}")))
}

fn load_study(path: &Path) -> Result<StudyDefinition, Failure> {
    parse_study_definition(&read(path)?)
        .map_err(|e| Failure::io(format!("{}: {e} [{}]", path.display(), e.code())))
}

/// Loads a study that must be free of validation errors.
fn load_valid_study(path: &Path) -> Result<StudyDefinition, Failure> {
    let def = load_study(path)?;
    let report = validate_study(&def, None);
    if !report.is_valid() {
        return Err(Failure::semantic(format!(
            "{}: study has {} validation error(s) ({}); run `visurvey validate` for details",
            path.display(),
            report.error_count(),
            report
                .diagnostics
                .iter()
                .filter(|d| d.severity == Severity::Error)
                .map(|d| d.code)
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    Ok(def)
}

fn select_pair<'a>(def: &'a StudyDefinition, id: Option<&str>) -> Result<&'a AssessmentPair, Failure> {
    match id {
        Some(id) => def
            .pair(id)
            .ok_or_else(|| Failure::semantic(format!("study has no assessment {id:?}"))),
        None if def.assessments.len() == 1 => Ok(&def.assessments[0]),
        None => Err(Failure::semantic(format!(
            "study has {} assessment pairs; choose one with --assessment ({})",
            def.assessments.len(),
            def.assessments.iter().map(|p| p.full.identifier.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn cmd_validate(a: ValidateArgs, out: &mut dyn Write) -> Outcome {
    let def = load_study(&a.path)?;
    let manifest = match &a.assets {
        Some(dir) => Some(
            AssetManifest::from_dir(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?,
        ),
        None => None,
    };
    let report = validate_study(&def, manifest.as_ref());
    let file = a.path.display().to_string();
    let text = match a.format {
        Format::Json => {
            let v = json!({
                "file": file,
                "valid": report.is_valid(),
                "errorCount": report.error_count(),
                "warningCount": report.warning_count(),
                "diagnostics": report.diagnostics,
            });
            serde_json::to_string_pretty(&v).unwrap() + "\n"
        }
        Format::Human => {
            let mut s = format!(
                "{file}: {}, {} error(s), {} warning(s)\n",
                if report.is_valid() { "valid" } else { "invalid" },
                report.error_count(),
                report.warning_count()
            );
            for d in &report.diagnostics {
                let severity = match d.severity {
                    Severity::Error => "error",
                    Severity::Warning => "warning",
                };
                s.push_str(&format!("  {severity:<7} {:<24} {}: {}\n", d.code, d.path, d.message));
            }
            s
        }
    };
    emit(out, &text)?;
    Ok(if report.is_valid() { 0 } else { 1 })
}

fn load_active(path: &Path) -> Result<ActiveItemSet, Failure> {
    let bytes = read(path)?;
    let bad = |e: serde_json::Error| Failure::io(format!("{}: not an active item set: {e}", path.display()));
    let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(bad)?;
    if v.is_array() {
        let item_ids: Vec<String> = serde_json::from_value(v).map_err(bad)?;
        return Ok(ActiveItemSet { item_ids, ..Default::default() });
    }
    serde_json::from_value(v).map_err(bad)
}

/// One line per step, e.g. `1. A.Bathing [singleChoice] Bathing: easy | moderate | hard`.
pub fn describe_plan(plan: &TaskPlan) -> String {
    let mut s = String::new();
    for (i, step) in plan.steps.iter().enumerate() {
        let detail = match &step.kind {
            StepKind::SingleChoice { item, choices, .. } => format!(
                "{}: {}",
                item.identifier,
                choices.iter().map(|c| c.value.as_str()).collect::<Vec<_>>().join(" | ")
            ),
            StepKind::Grid { selection, items, options, .. } => {
                let ids = items.iter().map(|i| i.identifier.as_str()).collect::<Vec<_>>().join(", ");
                let per_row = options.as_ref().map(|o| format!(" ({} per row)", o.items_per_row)).unwrap_or_default();
                format!("{}-select grid: {ids}{per_row}", serde_json::to_value(selection).unwrap().as_str().unwrap())
            }
            StepKind::Summary { summary } => format!("{:?}: {}", summary.title, summary.text),
        };
        let kind = serde_json::to_value(step).unwrap()["type"].as_str().unwrap().to_string();
        s.push_str(&format!("{}. {} [{kind}] {detail}\n", i + 1, step.step_id));
    }
    s
}

fn cmd_plan(a: PlanArgs, out: &mut dyn Write) -> Outcome {
    let def = load_valid_study(&a.path)?;
    let compiled = match a.task {
        TaskArg::Full => def.compile_full(select_pair(&def, a.assessment.as_deref())?),
        TaskArg::Spot => {
            let active = load_active(a.active.as_deref().expect("clap requires --active for spot"))?;
            def.compile_spot(select_pair(&def, a.assessment.as_deref())?, &active)
        }
        TaskArg::Pam => def.compile_pam(&a.prompt),
    };
    let plan = compiled.map_err(|e| Failure::semantic(e.to_string()))?;
    let text = match a.format {
        Format::Human => describe_plan(&plan),
        Format::Json => serde_json::to_string_pretty(&plan).unwrap() + "\n",
    };
    emit(out, &text)?;
    Ok(0)
}

/// Reads a sink config; relative paths inside it are taken from the config's
/// directory.
fn load_sink_config(path: &Path) -> Result<SinkConfig, Failure> {
    let bytes = read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut config: SinkConfig = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?
    };
    let base = path.parent().unwrap_or(Path::new(""));
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    match &mut config {
        SinkConfig::File { path, .. } => fix(path),
        SinkConfig::Http { outbox_path, .. } => fix(outbox_path),
        SinkConfig::Memory => {}
    }
    Ok(config)
}

fn open(config: &SinkConfig, clock: Arc<dyn Clock>) -> Result<Arc<dyn ResultSink>, Failure> {
    open_sink(config, clock).map_err(|e| Failure::io(e.to_string()))
}

fn store(sink: &dyn ResultSink, env: &visurvey_core::ResultEnvelope, err: &mut dyn Write) -> Result<(), Failure> {
    match sink.append(env) {
        Ok(_) => Ok(()),
        Err(e @ StoreError::Outboxed { .. }) => {
            let _ = writeln!(err, "warning: {e}");
            Ok(())
        }
        Err(e) => Err(Failure::io(e.to_string())),
    }
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let def = load_valid_study(&a.path)?;
    let script: AnswerScript = serde_json::from_slice(&read(&a.script)?)
        .map_err(|e| Failure::io(format!("{}: {e}", a.script.display())))?;
    let pair = select_pair(&def, a.assessment.as_deref().or(script.assessment.as_deref()))?;

    let clock = Arc::new(ManualClock::new(a.at.unwrap_or_else(|| SystemClock.now())));
    let ids: Box<dyn IdSource> = match &a.id_prefix {
        Some(prefix) => Box::new(SequentialIds::new(prefix.clone())),
        None => Box::new(RandomIds),
    };
    let sink_config = match (&a.sink, &a.out) {
        (Some(path), _) => load_sink_config(path)?,
        (None, Some(path)) => SinkConfig::File { path: path.clone(), rotation: None },
        (None, None) => SinkConfig::Memory,
    };
    let sink = open(&sink_config, clock.clone())?;
    let failed = |phase: &str, e: script::ScriptError| Failure::semantic(format!("{phase} assessment: {e}"));

    let full_plan = def.compile_full(pair).map_err(|e| Failure::semantic(e.to_string()))?;
    let full = run_script(full_plan, &script.participant_id, &script.full, &clock, &*ids).map_err(|e| failed("full", e))?;
    store(&*sink, &full, err)?;
    emit(out, &format!("full: envelope {} with {} result(s) -> {} sink\n", full.envelope_id, full.results.len(), sink.kind()))?;

    let active = derive_active_items(&full, &pair.activation, &def.items).map_err(|e| Failure::semantic(e.to_string()))?;
    let listed = if active.item_ids.is_empty() { "(none)".to_string() } else { active.item_ids.join(", ") };
    emit(out, &format!("active = {listed}\n"))?;

    let spot_plan = def.compile_spot(pair, &active).map_err(|e| Failure::semantic(e.to_string()))?;
    let spot = run_script(spot_plan, &script.participant_id, &script.spot, &clock, &*ids).map_err(|e| failed("spot", e))?;
    store(&*sink, &spot, err)?;
    emit(out, &format!("spot: envelope {} with {} result(s) -> {} sink\n", spot.envelope_id, spot.results.len(), sink.kind()))?;
    Ok(0)
}

fn cmd_serve(a: ServeArgs) -> Outcome {
    let mut config = visurvey_server::ServerConfig::load(&a.config).map_err(|e| Failure::io(e.to_string()))?;
    if let Some(bind) = a.bind {
        config.bind = bind;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::io(e.to_string()))?;
    runtime
        .block_on(visurvey_server::serve(config))
        .map_err(|e| Failure::io(e.to_string()))?;
    Ok(0)
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> Outcome {
    let config = match (&a.sink, &a.file) {
        (Some(path), _) => load_sink_config(path)?,
        (None, Some(path)) => SinkConfig::File { path: path.clone(), rotation: None },
        (None, None) => unreachable!("clap requires a source"),
    };
    let sink = open(&config, Arc::new(SystemClock))?;
    let filter = ExportFilter {
        study_id: a.study,
        participant_id: a.participant,
        from: a.from,
        to: a.to,
    };
    let records = export_results(&*sink, &filter).map_err(|e| Failure::io(e.to_string()))?;
    let mut text = String::new();
    for env in &records {
        text.push_str(&encode_record(env));
        text.push('\n');
    }
    emit(out, &text)?;
    Ok(0)
}
