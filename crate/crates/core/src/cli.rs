//! Command-line front end: `noise`, `evaluate`, `fuse-check`, `probe`,
//! `serve`, `tune-noise` and `report`.
//!
//! Exit codes: 0 ok, 2 usage, 3 data error, 4 internal. Failures print one
//! line `error<TAB>kind<TAB>message` to stderr.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::annotate::client::{self, AnnotationClient, ClientError, TuneOptions};
use crate::annotate::{self, service, QualityReport, Store};
use crate::corpus::{self, CorpusFormat, CorpusSplit, SplitName, FEATURE_FORMAT_VERSION};
use crate::fusion::{self, check};
use crate::metrics::{self, Metric, MetricOptions};
use crate::noiser::{self, Decrement, NoiseConfig};
use crate::probing::{self, ComparisonTable, FeatureKind, ProbeConfig, ScoreSet, Subset, Substitution};
use crate::text::Tokenizer;

pub const VERSION_LINE: &str = concat!(env!("CARGO_PKG_VERSION"), " (feature format 1)");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Internal => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Usage, message: m.to_string() }
    }

    pub fn data(m: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Data, message: m.to_string() }
    }

    pub fn internal(m: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Internal, message: m.to_string() }
    }

    /// The one-line form printed to stderr.
    pub fn line(&self) -> String {
        let msg = self.message.replace(['\n', '\r', '\t'], " ");
        format!("error\t{}\t{}", self.kind.as_str(), msg.trim())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<corpus::CorpusError> for CliError {
    fn from(e: corpus::CorpusError) -> Self {
        CliError::data(e)
    }
}

impl From<noiser::NoiseError> for CliError {
    fn from(e: noiser::NoiseError) -> Self {
        CliError::data(e)
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::data(e)
    }
}

impl From<probing::ProbeError> for CliError {
    fn from(e: probing::ProbeError) -> Self {
        CliError::data(e)
    }
}

impl From<annotate::AnnotateError> for CliError {
    fn from(e: annotate::AnnotateError) -> Self {
        match e {
            annotate::AnnotateError::Io(_) => CliError::internal(e),
            _ => CliError::data(e),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { status, .. } if *status < 500 => CliError::data(e),
            ClientError::Noise(_) => CliError::data(e),
            _ => CliError::internal(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------- grammar

#[derive(Debug, Parser)]
#[command(name = "mmtlab", version = VERSION_LINE, about = "Noisy multimodal MT robustness lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt the source side of a corpus or a plain sentence file.
    Noise(NoiseArgs),
    /// Score hypotheses against references (BLEU, chrF2, TER).
    Evaluate(EvaluateArgs),
    /// Run the fusion invariant and gradient suite.
    FuseCheck(FuseCheckArgs),
    /// Image-substitution probing and score tables.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Tune noise probabilities against human naturalness ratings.
    TuneNoise(TuneArgs),
    /// Print annotation reports.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Low,
    High,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// From the file extension: `.txt` is text, `.jsonl` JSONL, else TSV.
    Auto,
    Tsv,
    Jsonl,
    /// One sentence per line.
    Text,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long, value_enum)]
    pub config: Option<Preset>,
    #[arg(long)]
    pub p_article: Option<f64>,
    #[arg(long)]
    pub p_vowel: Option<f64>,
    #[arg(long)]
    pub p_dupe: Option<f64>,
    /// Leave surviving articles untouched (custom config only).
    #[arg(long)]
    pub no_article_edits: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSONL, one corruption trace per line.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: InputFormat,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Comma-separated subset of bleu,chrf2,ter.
    #[arg(long, value_delimiter = ',', default_value = "bleu,chrf2,ter")]
    pub metric: Vec<Metric>,
    #[arg(long)]
    pub per_segment: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long, default_value = "whitespace")]
    pub tokenizer: Tokenizer,
    /// Floor zero BLEU n-gram matches instead of scoring 0.
    #[arg(long)]
    pub smooth: bool,
}

#[derive(Debug, Args)]
pub struct FuseCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// d,heads,dimg,m,n
    #[arg(long, default_value = "32,4,48,6,9")]
    pub dims: fusion::Dims,
    /// Check at most this many entries per tensor.
    #[arg(long)]
    pub max_per_tensor: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Write the feature container each record sees under a substitution mode.
    Substitute(SubstituteArgs),
    /// Signed-delta table of one or more systems against a baseline.
    Table(TableArgs),
    /// Score one hypothesis file into a score TSV cell.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct SubstituteArgs {
    #[arg(long, default_value = "uniform")]
    pub mode: Substitution,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TSV of original and assigned image per record.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "crop")]
    pub feature_kind: FeatureKindArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureKindArg {
    Crop,
    Full,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Baseline scores.
    #[arg(long)]
    pub a: PathBuf,
    /// Compared systems, one table row each.
    #[arg(long, required = true)]
    pub b: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "bleu")]
    pub metric: Metric,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub language: String,
    #[arg(long)]
    pub subset: Subset,
    /// Score TSV; an existing cell for the same language and subset is replaced.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long, default_value = "whitespace")]
    pub tokenizer: Tokenizer,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub media: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Sentence pool: text (one per line) or a corpus whose sources are used.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub server: String,
    #[arg(long, default_value_t = noiser::DEFAULT_SAMPLE_SIZE)]
    pub sample: usize,
    #[arg(long, default_value_t = noiser::DEFAULT_TARGET_MEAN)]
    pub target: f64,
    #[arg(long, default_value_t = noiser::DEFAULT_DECREMENT)]
    pub decrement: f64,
    /// Per-type decrements; unset ones fall back to `--decrement`.
    #[arg(long)]
    pub decrement_article: Option<f64>,
    #[arg(long)]
    pub decrement_vowel: Option<f64>,
    #[arg(long)]
    pub decrement_dupe: Option<f64>,
    #[arg(long, default_value_t = noiser::TUNING_START_PROBABILITY)]
    pub start: f64,
    /// Only the first N sentences form the pool.
    #[arg(long)]
    pub first: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub poll_ms: u64,
    /// Give up on a round after this many seconds without complete ratings.
    #[arg(long)]
    pub round_timeout: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub max_rounds: u32,
    /// Batch keys are `<prefix>-r<round>`; defaults to `tune-s<seed>`.
    #[arg(long)]
    pub key_prefix: Option<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: InputFormat,
    /// Also write the converged configuration here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Adequacy, fluency and image-need percentages.
    Quality(QualityReportArgs),
    /// Ratings and mean of one naturalness batch.
    Naturalness(NaturalnessReportArgs),
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["server", "store"])]
pub struct ReportSource {
    #[arg(long)]
    pub server: Option<String>,
    /// Read the event log directly.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QualityReportArgs {
    #[command(flatten)]
    pub source: ReportSource,
    #[arg(long)]
    pub subset: Option<Subset>,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct NaturalnessReportArgs {
    #[command(flatten)]
    pub source: ReportSource,
    #[arg(long)]
    pub batch: String,
    #[arg(long)]
    pub json: bool,
}

// ---------------------------------------------------------------- manifest

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub feature_format_version: u32,
    pub started_utc: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Value, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.into(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            feature_format_version: FEATURE_FORMAT_VERSION,
            started_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// `<primary>.manifest.json`.
    pub fn path_for(primary: &Path) -> PathBuf {
        let mut name = primary.file_name().map(OsString::from).unwrap_or_default();
        name.push(".manifest.json");
        primary.with_file_name(name)
    }

    pub fn write_next_to(&self, primary: &Path) -> CliResult<PathBuf> {
        let path = Self::path_for(primary);
        let text = serde_json::to_string_pretty(self).map_err(CliError::internal)?;
        write_file(&path, format!("{text}\n").as_bytes())?;
        Ok(path)
    }
}

// ---------------------------------------------------------------- dispatch

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`dispatch`] with explicit output streams.
pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let first = e.to_string();
                    let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
                    let _ = writeln!(err, "{}", CliError::usage(first).line());
                    2
                }
            };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.line());
            e.kind.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Noise(a) => noise(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::FuseCheck(a) => fuse_check(a, out),
        Command::Probe(ProbeCommand::Substitute(a)) => probe_substitute(a, out),
        Command::Probe(ProbeCommand::Table(a)) => probe_table(a, out),
        Command::Probe(ProbeCommand::Score(a)) => probe_score(a, out),
        Command::Serve(a) => serve(a, out),
        Command::TuneNoise(a) => tune(a, out),
        Command::Report(ReportCommand::Quality(a)) => report_quality(a, out),
        Command::Report(ReportCommand::Naturalness(a)) => report_naturalness(a, out),
    }
}

// ---------------------------------------------------------------- helpers

fn emit(out: &mut dyn Write, text: impl fmt::Display) -> CliResult<()> {
    writeln!(out, "{text}").map_err(CliError::internal)
}

fn open_input(path: &Path) -> CliResult<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    open_input(path)?
        .lines()
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
        .collect::<io::Result<_>>()
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

fn resolve_format(format: InputFormat, path: &Path) -> InputFormat {
    match format {
        InputFormat::Auto => match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("txt") => InputFormat::Text,
            Some("jsonl" | "json") => InputFormat::Jsonl,
            _ => InputFormat::Tsv,
        },
        f => f,
    }
}

fn load_split(path: &Path, format: InputFormat) -> CliResult<CorpusSplit> {
    let format = match format {
        InputFormat::Jsonl => CorpusFormat::Jsonl,
        _ => CorpusFormat::Tsv,
    };
    Ok(corpus::read_corpus(open_input(path)?, format, SplitName::Train)?)
}

// ---------------------------------------------------------------- noise

fn noise_config(a: &NoiseArgs) -> CliResult<NoiseConfig> {
    let probs = [a.p_article, a.p_vowel, a.p_dupe];
    let any_p = probs.iter().any(Option::is_some);
    let preset = match (a.config, any_p) {
        (Some(p), _) => p,
        (None, true) => Preset::Custom,
        (None, false) => return Err(CliError::usage("one of --config or --p-article/--p-vowel/--p-dupe is required")),
    };
    if preset != Preset::Custom && (any_p || a.no_article_edits) {
        return Err(CliError::usage(
            "--p-* and --no-article-edits conflict with a preset --config",
        ));
    }
    let config = match preset {
        Preset::Low => NoiseConfig::low(a.seed),
        Preset::High => NoiseConfig::high(a.seed),
        Preset::Custom => {
            let [Some(pa), Some(pv), Some(pd)] = probs else {
                return Err(CliError::usage("--config custom needs --p-article, --p-vowel and --p-dupe"));
            };
            NoiseConfig::new(pa, pv, pd, !a.no_article_edits, a.seed).map_err(CliError::usage)?
        }
    };
    Ok(config)
}

fn noise(a: NoiseArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = noise_config(&a)?;
    let format = resolve_format(a.format, &a.input);
    let (original, corrupted, traces) = if format == InputFormat::Text {
        let lines = read_lines(&a.input)?;
        if lines.is_empty() {
            return Err(noiser::NoiseError::EmptySplit.into());
        }
        let traces: Vec<_> = lines
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut t = noiser::corrupt_sentence(s, &config, &noiser::NoiseStream::new(config.seed, i as u64));
                t.record_id = Some(i as u64);
                t
            })
            .collect();
        let mut text = String::new();
        for t in &traces {
            text.push_str(&t.corrupted);
            text.push('\n');
        }
        write_file(&a.out, text.as_bytes())?;
        let corrupted: Vec<String> = traces.iter().map(|t| t.corrupted.clone()).collect();
        (lines, corrupted, traces)
    } else {
        let split = load_split(&a.input, format)?;
        let (noisy, traces) = noiser::corrupt_corpus(&split, &config)?;
        let mut buf = Vec::new();
        corpus::write_tsv(&noisy, &mut buf).map_err(CliError::internal)?;
        write_file(&a.out, &buf)?;
        let original = split.sources().into_iter().map(String::from).collect();
        let corrupted = noisy.sources().into_iter().map(String::from).collect();
        (original, corrupted, traces)
    };
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.trace {
        let mut buf = Vec::new();
        for t in &traces {
            serde_json::to_writer(&mut buf, t).map_err(CliError::internal)?;
            buf.push(b'\n');
        }
        write_file(path, &buf)?;
        outputs.push(path.clone());
    }
    let report = metrics::evaluate(&corrupted, &original, &MetricOptions::default(), false)?;
    let mut manifest = RunManifest::new(
        "noise",
        json!({"preset": a.config.unwrap_or(Preset::Custom), "noise": config}),
        Some(a.seed),
    );
    manifest.inputs.push(a.input.clone());
    manifest.outputs = outputs;
    manifest.write_next_to(&a.out)?;
    emit(out, report.tsv_line())
}

// ---------------------------------------------------------------- evaluate

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    let opts = MetricOptions {
        tokenizer: a.tokenizer,
        lowercase: a.lowercase,
        bleu_smoothing: a.smooth,
    };
    let report = metrics::evaluate(&hyps, &refs, &opts, a.per_segment.is_some())?;
    let mut fields = Vec::new();
    for m in [Metric::Bleu, Metric::Chrf2, Metric::Ter] {
        if a.metric.contains(&m) {
            let v = match m {
                Metric::Bleu => report.bleu,
                Metric::Chrf2 => report.chrf2,
                Metric::Ter => report.ter,
            };
            fields.push(format!("{v:.2}"));
        }
    }
    fields.push(report.segment_count.to_string());
    if let (Some(path), Some(segments)) = (&a.per_segment, &report.per_segment) {
        let mut buf = Vec::new();
        for (i, s) in segments.iter().enumerate() {
            let mut row = serde_json::Map::new();
            row.insert("segment".into(), json!(i));
            for m in &a.metric {
                let (k, v) = match m {
                    Metric::Bleu => ("bleu", s.bleu),
                    Metric::Chrf2 => ("chrf2", s.chrf2),
                    Metric::Ter => ("ter", s.ter),
                };
                row.insert(k.into(), json!(v));
            }
            serde_json::to_writer(&mut buf, &row).map_err(CliError::internal)?;
            buf.push(b'\n');
        }
        write_file(path, &buf)?;
        let mut manifest = RunManifest::new("evaluate", serde_json::to_value(opts).unwrap_or_default(), None);
        manifest.inputs = vec![a.hyp.clone(), a.reference.clone()];
        manifest.outputs = vec![path.clone()];
        manifest.write_next_to(path)?;
    }
    emit(out, fields.join("\t"))
}

// ---------------------------------------------------------------- fuse-check

fn fuse_check(a: FuseCheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let opts = check::FdOptions {
        max_per_tensor: a.max_per_tensor,
        ..check::FdOptions::default()
    };
    let rows = check::run_suite(a.seed, &a.dims, &opts).map_err(CliError::usage)?;
    emit(out, "status\tcheck\tvalue\tlimit\tdetail")?;
    for r in &rows {
        emit(out, r.tsv_line())?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    emit(out, format!("{} of {} checks passed", rows.len() - failed.len(), rows.len()))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::internal(format!("failed checks: {}", failed.join(", "))))
    }
}

// ---------------------------------------------------------------- probe

fn probe_substitute(a: SubstituteArgs, out: &mut dyn Write) -> CliResult<()> {
    let split = load_split(&a.corpus, resolve_format(InputFormat::Auto, &a.corpus))?;
    let features = corpus::read_features(open_input(&a.features)?)?;
    let config = ProbeConfig {
        substitution: a.mode,
        seed: a.seed,
        feature_kind: match a.feature_kind {
            FeatureKindArg::Crop => FeatureKind::Crop,
            FeatureKindArg::Full => FeatureKind::Full,
        },
        ..ProbeConfig::default()
    };
    let sub = probing::substitute_features(&split, &features, &config)?;
    let mut buf = Vec::new();
    corpus::write_features(&sub.to_feature_map(), &mut buf)?;
    write_file(&a.out, &buf)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.assignment {
        let mut buf = Vec::new();
        sub.write_assignment(&split, &mut buf).map_err(CliError::internal)?;
        write_file(path, &buf)?;
        outputs.push(path.clone());
    }
    let kept = split.records.iter().filter(|r| sub.assignment[&r.id] == r.image_id).count();
    let mut manifest = RunManifest::new(
        "probe substitute",
        serde_json::to_value(config).unwrap_or_default(),
        Some(a.seed),
    );
    manifest.inputs = vec![a.corpus.clone(), a.features.clone()];
    manifest.outputs = outputs;
    manifest.write_next_to(&a.out)?;
    emit(out, format!("{}\trecords\t{}\tkept_own_image\t{}", config.substitution, split.len(), kept))
}

fn score_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_scores(path: &Path) -> CliResult<ScoreSet> {
    Ok(ScoreSet::read(open_input(path)?, score_label(path))?)
}

fn probe_table(a: TableArgs, out: &mut dyn Write) -> CliResult<()> {
    let base = read_scores(&a.a)?;
    let systems = a.b.iter().map(|p| read_scores(p)).collect::<CliResult<Vec<_>>>()?;
    let table = ComparisonTable::build(&base, &systems, a.metric)?;
    let md = table.to_markdown();
    write_file(&a.out, md.as_bytes())?;
    let mut outputs = vec![a.out.clone()];
    if let Some(csv) = &a.csv {
        write_file(csv, table.to_csv().as_bytes())?;
        outputs.push(csv.clone());
    }
    let mut manifest = RunManifest::new("probe table", json!({"metric": a.metric}), None);
    manifest.inputs = std::iter::once(a.a.clone()).chain(a.b.iter().cloned()).collect();
    manifest.outputs = outputs;
    manifest.write_next_to(&a.out)?;
    write!(out, "{md}").map_err(CliError::internal)
}

fn probe_score(a: ScoreArgs, out: &mut dyn Write) -> CliResult<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    let opts = MetricOptions {
        tokenizer: a.tokenizer,
        lowercase: a.lowercase,
        bleu_smoothing: false,
    };
    let row = probing::score_row(&a.language, a.subset, &hyps, &refs, &opts)?;
    let mut set = if a.out.exists() {
        read_scores(&a.out)?
    } else {
        ScoreSet::new(score_label(&a.out))
    };
    set.rows.retain(|r| !(r.language == row.language && r.subset == row.subset));
    set.rows.push(row.clone());
    let mut buf = Vec::new();
    set.write(&mut buf).map_err(CliError::internal)?;
    write_file(&a.out, &buf)?;
    let mut manifest = RunManifest::new(
        "probe score",
        json!({"language": a.language, "subset": a.subset, "metric_options": opts}),
        None,
    );
    manifest.inputs = vec![a.hyp.clone(), a.reference.clone()];
    manifest.outputs = vec![a.out.clone()];
    manifest.write_next_to(&a.out)?;
    emit(
        out,
        format!(
            "{}\t{}\t{:.2}\t{:.2}\t{:.2}",
            row.language,
            row.subset,
            row.bleu,
            row.chrf2.unwrap_or(f64::NAN),
            row.ter.unwrap_or(f64::NAN)
        ),
    )
}

// ---------------------------------------------------------------- annotation

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::internal)
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> CliResult<()> {
    fs::create_dir_all(&a.store).map_err(|e| CliError::internal(format!("cannot create {}: {e}", a.store.display())))?;
    if let Some(m) = &a.media {
        if !m.is_dir() {
            return Err(CliError::data(format!("media root {} is not a directory", m.display())));
        }
    }
    let store = Store::open(&a.store)?;
    let mut manifest = RunManifest::new("serve", json!({"addr": a.addr}), None);
    manifest.inputs = a.media.iter().cloned().collect();
    manifest.outputs = vec![store.log_path().to_path_buf()];
    manifest.write_next_to(store.log_path())?;
    let rt = runtime()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| CliError::data(format!("cannot bind {}: {e}", a.addr)))?;
        let local = listener.local_addr().map_err(CliError::internal)?;
        emit(out, format!("listening\thttp://{local}"))?;
        out.flush().map_err(CliError::internal)?;
        service::serve(listener, service::AppState::new(store, a.media.clone()))
            .await
            .map_err(CliError::internal)
    })
}

fn sentence_pool(path: &Path, format: InputFormat, first: Option<usize>) -> CliResult<Vec<String>> {
    let mut pool: Vec<String> = match resolve_format(format, path) {
        InputFormat::Text => read_lines(path)?.into_iter().filter(|l| !l.trim().is_empty()).collect(),
        f => load_split(path, f)?.records.into_iter().map(|r| r.source).collect(),
    };
    if let Some(n) = first {
        pool.truncate(n);
    }
    if pool.is_empty() {
        return Err(noiser::NoiseError::EmptyPool.into());
    }
    Ok(pool)
}

fn tune(a: TuneArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.sample == 0 {
        return Err(CliError::usage("--sample must be positive"));
    }
    if !(1.0..=5.0).contains(&a.target) {
        return Err(CliError::usage("--target must lie in 1..5"));
    }
    let pool = sentence_pool(&a.corpus, a.format, a.first)?;
    let per_type = [a.decrement_article, a.decrement_vowel, a.decrement_dupe];
    let decrement = if per_type.iter().any(Option::is_some) {
        Decrement::PerType {
            article: a.decrement_article.unwrap_or(a.decrement),
            vowel: a.decrement_vowel.unwrap_or(a.decrement),
            dupe: a.decrement_dupe.unwrap_or(a.decrement),
        }
    } else {
        Decrement::Uniform(a.decrement)
    };
    let opts = TuneOptions {
        seed: a.seed,
        start: a.start,
        sample_size: a.sample,
        target_mean: a.target,
        decrement,
        poll_interval: Duration::from_millis(a.poll_ms.max(1)),
        round_timeout: a.round_timeout.map(Duration::from_secs),
        max_rounds: a.max_rounds,
        key_prefix: a.key_prefix.clone().unwrap_or_else(|| format!("tune-s{}", a.seed)),
    };
    let http = AnnotationClient::new(a.server.clone());
    let mut lines = Vec::new();
    let state = runtime()?.block_on(client::tune_noise(&http, &pool, &opts, |s| {
        let (pa, pv, pd) = s.config.probabilities();
        lines.push(format!(
            "round\t{}\tmean\t{:.4}\tnext\t{pa}\t{pv}\t{pd}",
            s.history.len() - 1,
            s.history.last().copied().unwrap_or(f64::NAN)
        ));
    }))?;
    for l in &lines {
        emit(out, l)?;
    }
    let config = serde_json::to_string(&state.config).map_err(CliError::internal)?;
    emit(out, &config)?;
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&json!({"config": state.config, "history": state.history}))
            .map_err(CliError::internal)?;
        write_file(path, format!("{text}\n").as_bytes())?;
        let mut manifest = RunManifest::new(
            "tune-noise",
            json!({
                "server": a.server, "sample": a.sample, "target": a.target, "decrement": decrement,
                "start": a.start, "first": a.first, "key_prefix": opts.key_prefix,
            }),
            Some(a.seed),
        );
        manifest.inputs = vec![a.corpus.clone()];
        manifest.outputs = vec![path.clone()];
        manifest.write_next_to(path)?;
    }
    Ok(())
}

fn quality_text(r: &QualityReport) -> String {
    let mut s = String::new();
    let mut line = |attr: &str, key: String, count: usize, pct: f64| {
        s.push_str(&format!("{attr}\t{key}\t{count}\t{pct:.2}\n"));
    };
    for (k, c) in &r.adequacy.counts {
        line("adequacy", json_name(k), *c, r.adequacy.percent[k]);
    }
    for (k, c) in &r.fluency.counts {
        line("fluency", json_name(k), *c, r.fluency.percent[k]);
    }
    for (k, c) in &r.image_need.counts {
        line("image_need", json_name(k), *c, r.image_need.percent[k]);
    }
    s
}

fn json_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn report_quality(a: QualityReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let report = match (&a.source.server, &a.source.store) {
        (Some(server), _) => runtime()?.block_on(
            AnnotationClient::new(server.clone()).quality_report(a.subset, a.language.as_deref()),
        )?,
        (None, Some(dir)) => Store::open(dir)?.index().aggregate_quality(a.subset, a.language.as_deref())?,
        (None, None) => return Err(CliError::usage("--server or --store is required")),
    };
    if a.json {
        emit(out, serde_json::to_string_pretty(&report).map_err(CliError::internal)?)
    } else {
        write!(out, "attribute\tvalue\tcount\tpercent\n{}", quality_text(&report)).map_err(CliError::internal)
    }
}

fn report_naturalness(a: NaturalnessReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let report = match (&a.source.server, &a.source.store) {
        (Some(server), _) => {
            let client = AnnotationClient::new(server.clone());
            match runtime()?.block_on(client.naturalness_report(&a.batch))? {
                Some(r) => r,
                None => return Err(CliError::data(format!("batch `{}` is not fully rated", a.batch))),
            }
        }
        (None, Some(dir)) => Store::open(dir)?.index().aggregate_naturalness(&a.batch)?,
        (None, None) => return Err(CliError::usage("--server or --store is required")),
    };
    if a.json {
        emit(out, serde_json::to_string_pretty(&report).map_err(CliError::internal)?)
    } else {
        let ratings: Vec<String> = report.ratings.iter().map(u8::to_string).collect();
        emit(
            out,
            format!("{}\ttasks\t{}\tmean\t{:.4}\tratings\t{}", report.batch, report.tasks, report.mean, ratings.join(",")),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = dispatch_to(std::iter::once("mmtlab").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn version_names_feature_format() {
        assert!(VERSION_LINE.ends_with(&format!("(feature format {FEATURE_FORMAT_VERSION})")));
        let (code, out, _) = run_args(&["--version"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), format!("mmtlab {VERSION_LINE}"));
    }

    #[test]
    fn usage_errors_exit_2_with_one_line() {
        for args in [
            vec!["noise", "--bogus"],
            vec!["frobnicate"],
            vec!["noise", "--config", "low", "--p-article", "0.5", "--in", "a", "--out", "b"],
            vec!["noise", "--config", "custom", "--p-article", "0.5", "--in", "a", "--out", "b"],
            vec!["noise", "--in", "a", "--out", "b"],
            vec!["report", "quality", "--server", "x", "--store", "y"],
        ] {
            let (code, out, err) = run_args(&args);
            assert_eq!(code, 2, "{args:?}: {err}");
            assert!(out.is_empty());
            assert_eq!(err.lines().count(), 1, "{err}");
            assert!(err.starts_with("error\tusage\t"), "{err}");
        }
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.txt");
        let (code, _, err) = run_args(&[
            "evaluate",
            "--hyp",
            missing.to_str().unwrap(),
            "--ref",
            missing.to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
        assert!(err.starts_with("error\tdata\tcannot read"), "{err}");
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            RunManifest::path_for(Path::new("/x/b.tsv")),
            PathBuf::from("/x/b.tsv.manifest.json")
        );
    }
}
