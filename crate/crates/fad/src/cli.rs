//! The `fad` command line.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data
//! errors (unreadable or malformed input, absent trigger, failed verify).

use std::ffi::OsString;
use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fad_core::augment::{AugmentError, Augmenter, VariantMode};
use fad_core::caption::{TokenizationMode, TriggerSet};
use fad_core::cooccurrence::CooccurrenceError;
use fad_core::policy::build_policy;
use fad_core::stats::{check_against_plan, tag_frequency, DropCounter};
use fad_core::surrogate::{
    standard_schedule_variants, ExperimentConfig, StudyRow, SurrogateError, SurrogateReport, SyntheticCorpusConfig,
    TrainConfig,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{env_seed, ConfigError, PartialConfig, Preset, RunConfig};
use crate::dataset::{load_dataset, Dataset, InputFormat, LoadError};
use crate::formats::{
    read_compact_stream, read_jsonl_stream, write_frequency_text, write_json, write_record, write_schedule_text,
    PolicyFile, ScheduleDocument, StreamFormat, TableFile,
};
use crate::output::emit;
use crate::parallel;

/// Steps augmented per parallel batch before being written out.
const CHUNK: usize = 4096;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<CooccurrenceError> for Failure {
    fn from(e: CooccurrenceError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<AugmentError> for Failure {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::EmptyDataset => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<SurrogateError> for Failure {
    fn from(e: SurrogateError) -> Self {
        match e {
            SurrogateError::Config(_) | SurrogateError::TooFewSeeds { .. } | SurrogateError::ScheduleMismatch { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn data_err(path: &Path, e: impl Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_err(e: io::Error) -> Failure {
    Failure::Data(format!("writing output: {e}"))
}

/// Frequency-aware caption dropout toolkit.
#[derive(Debug, Parser)]
#[command(name = "fad", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count trigger co-occurrence over a caption file.
    Analyze(AnalyzeArgs),
    /// Turn a co-occurrence table into per-token dropout probabilities.
    Plan(PlanArgs),
    /// Print the schedule factor for every step.
    Schedule(ScheduleCmdArgs),
    /// Emit the augmented caption of every training step.
    Augment(AugmentArgs),
    /// Tag frequencies of a caption file, or drop rates of an augmented stream.
    Stats(StatsArgs),
    /// Train the synthetic surrogate under each dropout mode.
    Surrogate(SurrogateArgs),
    /// Check an augmented stream against its plan, or re-read a compact stream.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Default, Args)]
struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Named hyperparameter preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Debug, Clone, Default, Args)]
struct TokenArgs {
    /// Trigger phrase; repeat for several.
    #[arg(long = "trigger", short = 't', value_name = "PHRASE")]
    triggers: Vec<String>,
    /// `tag` (comma separated) or `word` (whitespace separated).
    #[arg(long, value_parser = serde_value::<fad_core::TokenizerKind>)]
    tokenizer: Option<fad_core::TokenizerKind>,
    /// Keep letter case.
    #[arg(long)]
    keep_case: bool,
    /// Keep surrounding whitespace of tags.
    #[arg(long)]
    no_trim: bool,
}

#[derive(Debug, Clone, Default, Args)]
struct PolicyArgs {
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    /// Ratio at which p is halfway between p_min and p_max.
    #[arg(long)]
    center: Option<f64>,
    #[arg(long)]
    slope: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
struct ScheduleArgs {
    /// `exponential`, `linear` or `constant`.
    #[arg(long, value_parser = serde_value::<fad_core::ScheduleShape>)]
    shape: Option<fad_core::ScheduleShape>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    warmup_end: Option<u64>,
    #[arg(long)]
    full_step: Option<u64>,
    #[arg(long)]
    warmup_ratio: Option<f64>,
    #[arg(long)]
    full_ratio: Option<f64>,
    /// Schedule length; defaults to --steps.
    #[arg(long)]
    schedule_steps: Option<u64>,
    /// Factor during warmup.
    #[arg(long)]
    start: Option<f64>,
    /// Factor at the full step.
    #[arg(long)]
    end: Option<f64>,
    /// Exponential ramp normalized to reach `end` exactly at the full step.
    #[arg(long)]
    normalized: bool,
}

#[derive(Debug, Clone, Default, Args)]
struct RunArgs {
    /// `normal`, `fad`, `sfad` or `uniform=P`.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<VariantMode>,
    #[arg(long)]
    steps: Option<u64>,
    /// Global seed; defaults to $FAD_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// `cycle` or `shuffle-per-epoch`.
    #[arg(long, value_parser = serde_value::<fad_core::Sampling>)]
    sampling: Option<fad_core::Sampling>,
    /// Repeated tokens in one caption share a single draw.
    #[arg(long)]
    per_type: bool,
}

#[derive(Debug, Clone, Default, Args)]
struct CaptionArgs {
    /// Caption file: plain text, or JSON lines with a `caption` field.
    #[arg(long, value_name = "FILE")]
    captions: Option<PathBuf>,
    /// Input format; inferred from the file extension by default.
    #[arg(long, value_enum)]
    input_format: Option<InputFormat>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    input: CaptionArgs,
    #[command(flatten)]
    tokens: TokenArgs,
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Table written by `analyze`.
    #[arg(long, value_name = "FILE")]
    table: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, clap::ValueEnum)]
enum ReportFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Args)]
struct ScheduleCmdArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    steps: Option<u64>,
    /// Print every n-th step (the last step is always printed).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    every: u64,
    #[arg(long, value_enum, default_value_t)]
    format: ReportFormat,
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    input: CaptionArgs,
    /// Policy written by `plan`.
    #[arg(long, value_name = "FILE")]
    policy: PathBuf,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t)]
    format: StreamFormat,
    /// Augment on one thread.
    #[arg(long)]
    serial: bool,
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["captions", "stream"]))]
struct StatsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Caption file to count tags in.
    #[arg(long, value_name = "FILE")]
    captions: Option<PathBuf>,
    #[arg(long, value_enum)]
    input_format: Option<InputFormat>,
    /// Full (jsonl) augmented stream to measure drop rates in.
    #[arg(long, value_name = "FILE")]
    stream: Option<PathBuf>,
    #[command(flatten)]
    tokens: TokenArgs,
    /// Keep only the first K entries.
    #[arg(long, value_name = "K")]
    top: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    format: ReportFormat,
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SurrogateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of seeds, counted up from --seed.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long = "num-captions")]
    num_captions: Option<usize>,
    /// Style tokens per positive caption.
    #[arg(long = "style-tokens")]
    style_tokens: Option<usize>,
    /// Chance a style token appears with the trigger.
    #[arg(long)]
    cooccurrence: Option<f64>,
    #[arg(long)]
    prevalence: Option<f64>,
    #[arg(long)]
    filler: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Also compare linear/exponential, ascending/descending schedules.
    #[arg(long)]
    study: bool,
    /// Write the full report as JSON.
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Stream written by `augment`.
    #[arg(long, value_name = "FILE")]
    stream: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    format: StreamFormat,
    /// Policy the stream was produced with (full streams only).
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Fail unless the stream holds exactly this many records.
    #[arg(long, value_name = "N")]
    expect_steps: Option<usize>,
    /// Print `step<TAB>caption` for each compact record.
    #[arg(long)]
    dump: bool,
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<VariantMode, String> {
    match s.split_once(['=', ':']) {
        Some(("uniform", p)) => p.parse().map(VariantMode::Uniform).map_err(|e| format!("uniform probability: {e}")),
        _ => serde_value(s).map_err(|_| format!("unknown mode {s:?}; expected normal, fad, sfad or uniform=P")),
    }
}

impl ConfigArgs {
    /// Config file, overlaid by `flags`, resolved against the preset.
    fn resolve(&self, mut flags: PartialConfig) -> Result<RunConfig, Failure> {
        flags.preset = self.preset;
        let file = match &self.config {
            Some(path) => PartialConfig::load(path)?,
            None => PartialConfig::default(),
        };
        Ok(file.overlay(&flags).resolve(env_seed()?)?)
    }
}

impl TokenArgs {
    fn apply(&self, p: &mut PartialConfig) {
        if !self.triggers.is_empty() {
            p.triggers = Some(self.triggers.clone());
        }
        p.tokenization.kind = self.tokenizer;
        p.tokenization.lowercase = self.keep_case.then_some(false);
        p.tokenization.trim = self.no_trim.then_some(false);
    }
}

impl PolicyArgs {
    fn apply(&self, p: &mut PartialConfig) {
        p.policy.p_min = self.p_min;
        p.policy.p_max = self.p_max;
        p.policy.center = self.center;
        p.policy.slope = self.slope;
    }
}

impl ScheduleArgs {
    fn apply(&self, p: &mut PartialConfig) {
        let s = &mut p.schedule;
        s.shape = self.shape;
        s.beta = self.beta;
        s.warmup_end = self.warmup_end;
        s.full_step = self.full_step;
        s.warmup_ratio = self.warmup_ratio;
        s.full_ratio = self.full_ratio;
        s.total_steps = self.schedule_steps;
        s.start = self.start;
        s.end = self.end;
        s.unnormalized = self.normalized.then_some(false);
    }
}

impl RunArgs {
    fn apply(&self, p: &mut PartialConfig) {
        p.mode = self.mode;
        p.steps = self.steps;
        p.seed = self.seed;
        p.sampling = self.sampling;
        p.per_type = self.per_type.then_some(true);
    }
}

impl CaptionArgs {
    fn apply(&self, p: &mut PartialConfig) {
        p.captions = self.captions.clone();
    }
}

fn load_captions(cfg: &RunConfig, format: Option<InputFormat>, mode: TokenizationMode) -> Result<Dataset, Failure> {
    let path = cfg.captions.as_deref().ok_or_else(|| Failure::Usage("no caption file given (--captions)".into()))?;
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    let format = format.unwrap_or_else(|| InputFormat::from_path(path));
    match load_dataset(BufReader::new(file), format, mode) {
        Ok(d) if d.records.is_empty() => Err(data_err(path, LoadError::EmptyDataset)),
        Ok(d) => Ok(d),
        Err(e) => Err(data_err(path, e)),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| data_err(path, e))
}

fn trigger_set(cfg: &RunConfig) -> Result<TriggerSet, Failure> {
    TriggerSet::new(&cfg.triggers, cfg.tokenization).map_err(|e| Failure::Usage(format!("trigger: {e}")))
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    emit(out, |w| write_json(w, value)).map_err(write_err)
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let mut flags = PartialConfig::default();
    args.tokens.apply(&mut flags);
    args.input.apply(&mut flags);
    let cfg = args.config.resolve(flags)?;
    let trigger = trigger_set(&cfg)?;
    let dataset = load_captions(&cfg, args.input.input_format, cfg.tokenization)?;
    let table = parallel::analyze(&dataset.records, &trigger)?;
    emit_json(args.out.as_deref(), &TableFile { tokenization: cfg.tokenization, table })
}

fn plan(args: PlanArgs) -> Result<(), Failure> {
    let mut flags = PartialConfig::default();
    args.policy.apply(&mut flags);
    let cfg = args.config.resolve(flags)?;
    let file: TableFile = read_json(&args.table)?;
    let trigger = file.table.trigger().clone();
    let policy = build_policy(&file.table, &cfg.policy, &trigger).map_err(|e| Failure::Usage(e.to_string()))?;
    emit_json(args.out.as_deref(), &PolicyFile { tokenization: file.tokenization, policy })
}

fn schedule(args: ScheduleCmdArgs) -> Result<(), Failure> {
    let mut flags = PartialConfig { steps: args.steps, ..Default::default() };
    args.schedule.apply(&mut flags);
    let cfg = args.config.resolve(flags)?;
    let sched = cfg.schedule;
    let total = sched.total_steps;
    let mut points = Vec::new();
    for step in (0..=total).step_by(args.every as usize).chain((total % args.every != 0).then_some(total)) {
        points.push((step, sched.factor(step).map_err(|e| Failure::Usage(e.to_string()))?));
    }
    match args.format {
        ReportFormat::Text => emit(args.out.as_deref(), |w| write_schedule_text(w, &points)).map_err(write_err),
        ReportFormat::Json => emit_json(args.out.as_deref(), &ScheduleDocument { schedule: sched, points }),
    }
}

fn augment(args: AugmentArgs) -> Result<(), Failure> {
    let mut flags = PartialConfig::default();
    args.input.apply(&mut flags);
    args.schedule.apply(&mut flags);
    args.run.apply(&mut flags);
    let cfg = args.config.resolve(flags)?;
    let PolicyFile { tokenization, policy } = read_json(&args.policy)?;
    let dataset = load_captions(&cfg, args.input.input_format, tokenization)?;
    let records = &dataset.records;
    let augmenter = Augmenter::new(&policy, cfg.schedule, cfg.mode, cfg.seed)?.per_type(cfg.per_type);
    let positions = augmenter.plan(records.len(), cfg.steps, cfg.sampling)?;

    emit(args.out.as_deref(), |w| {
        let mut write_all = |batch: &[fad_core::AugmentedCaption]| {
            batch.iter().try_for_each(|rec| write_record(&mut *w, rec, args.format, tokenization))
        };
        if args.serial {
            for (k, &pos) in positions.iter().enumerate() {
                let rec = augmenter.augment(&records[pos], k as u64 + 1).map_err(io::Error::other)?;
                write_all(std::slice::from_ref(&rec))?;
            }
        } else {
            for (c, chunk) in positions.chunks(CHUNK).enumerate() {
                let batch = parallel::augment_steps(&augmenter, records, chunk, (c * CHUNK) as u64 + 1)
                    .map_err(io::Error::other)?;
                write_all(&batch)?;
            }
        }
        Ok(())
    })
    .map_err(write_err)
}

#[derive(Serialize)]
struct DropRow {
    token: String,
    dropped: u64,
    total: u64,
    rate: f64,
}

fn stats(args: StatsArgs) -> Result<(), Failure> {
    let out = args.out.as_deref();
    if let Some(path) = &args.stream {
        let file = File::open(path).map_err(|e| data_err(path, e))?;
        let stream = read_jsonl_stream(BufReader::new(file)).map_err(|e| data_err(path, e))?;
        let mut counter = DropCounter::default();
        stream.iter().for_each(|c| counter.add(c));
        let mut rows: Vec<DropRow> = counter
            .tallies()
            .iter()
            .map(|(t, c)| DropRow { token: t.clone(), dropped: c.dropped, total: c.total, rate: c.rate() })
            .collect();
        rows.sort_by(|a, b| b.total.cmp(&a.total).then_with(|| a.token.cmp(&b.token)));
        rows.truncate(args.top.unwrap_or(usize::MAX));
        return match args.format {
            ReportFormat::Json => emit_json(out, &rows),
            ReportFormat::Text => emit(out, |w| {
                writeln!(w, "# token\tdropped\ttotal\trate ({} records)", stream.len())?;
                for r in &rows {
                    writeln!(w, "{}\t{}\t{}\t{:.6}", r.token, r.dropped, r.total, r.rate)?;
                }
                Ok(())
            })
            .map_err(write_err),
        };
    }

    let mut flags = PartialConfig { captions: args.captions.clone(), ..Default::default() };
    args.tokens.apply(&mut flags);
    let cfg = args.config.resolve(flags)?;
    // Triggers are optional here; they only mark rows.
    let trigger = if cfg.triggers.is_empty() { None } else { Some(trigger_set(&cfg)?) };
    let dataset = load_captions(&cfg, args.input_format, cfg.tokenization)?;
    let mut report = match &trigger {
        Some(t) => tag_frequency(&dataset.records, t),
        None => untriggered_frequency(&dataset),
    };
    if let Some(k) = args.top {
        report = report.top(k);
    }
    match args.format {
        ReportFormat::Text => emit(out, |w| write_frequency_text(w, &report)).map_err(write_err),
        ReportFormat::Json => emit_json(out, &report),
    }
}

fn untriggered_frequency(dataset: &Dataset) -> fad_core::stats::FrequencyReport {
    // A phrase nobody can type: no token is ever marked as a trigger.
    let t = TriggerSet::from_phrases(vec![vec!["\u{0}".to_owned()]]).expect("non-blank phrase");
    tag_frequency(&dataset.records, &t)
}

fn surrogate(args: SurrogateArgs) -> Result<(), Failure> {
    let mut flags = PartialConfig { seed: args.seed, ..Default::default() };
    args.policy.apply(&mut flags);
    args.schedule.apply(&mut flags);
    let cfg = args.config.resolve(flags)?;
    let d = SyntheticCorpusConfig::default();
    let t = TrainConfig::default();
    let exp = ExperimentConfig {
        corpus: SyntheticCorpusConfig {
            vocab_size: args.vocab.unwrap_or(d.vocab_size),
            num_captions: args.num_captions.unwrap_or(d.num_captions),
            style_tokens: args.style_tokens.unwrap_or(d.style_tokens),
            style_cooccurrence: args.cooccurrence.unwrap_or(d.style_cooccurrence),
            trigger_prevalence: args.prevalence.unwrap_or(d.trigger_prevalence),
            filler_rate: args.filler.unwrap_or(d.filler_rate),
            seed: 0,
        },
        policy: cfg.policy,
        schedule: cfg.schedule,
        train: TrainConfig {
            learning_rate: args.learning_rate.unwrap_or(t.learning_rate),
            epochs: args.epochs.unwrap_or(t.epochs),
            batch_size: args.batch_size.or(t.batch_size),
        },
        ..ExperimentConfig::default()
    };
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let report = parallel::run_experiment(&exp, &seeds)?;
    let study = if args.study {
        let total = exp.train.total_steps(exp.corpus.num_captions).max(1);
        Some(parallel::schedule_study(&exp, &standard_schedule_variants(total), &seeds)?)
    } else {
        None
    };

    let stdout = io::stdout();
    let mut w = stdout.lock();
    write_summary(&mut w, &report, study.as_deref()).map_err(write_err)?;
    if let Some(path) = &args.out {
        #[derive(Serialize)]
        struct Document<'a> {
            config: &'a ExperimentConfig,
            report: &'a SurrogateReport,
            #[serde(skip_serializing_if = "Option::is_none")]
            schedule_study: Option<&'a [StudyRow]>,
        }
        emit_json(Some(path), &Document { config: &exp, report: &report, schedule_study: study.as_deref() })?;
    }
    Ok(())
}

fn fmt_share(s: Option<f64>) -> String {
    s.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

/// Human-readable summary of a surrogate run.
pub fn write_summary<W: Write>(mut w: W, report: &SurrogateReport, study: Option<&[StudyRow]>) -> io::Result<()> {
    writeln!(w, "{} seeds", report.seeds.len())?;
    writeln!(w, "{:<10} {:>12} {:>14} {:>11} {:>11}", "mode", "trig share", "omission drop", "final loss", "degenerate")?;
    for s in &report.summary {
        writeln!(
            w,
            "{:<10} {:>12} {:>14.4} {:>11.4} {:>11}",
            s.mode.name(),
            fmt_share(s.mean_trigger_share),
            s.mean_omission_drop,
            s.mean_final_loss,
            s.degenerate_seeds
        )?;
    }
    let modes: Vec<VariantMode> = report.summary.iter().map(|s| s.mode).collect();
    for m in modes.iter().filter(|m| **m != VariantMode::Normal) {
        if modes.contains(&VariantMode::Normal) {
            let rate = report.share_win_rate(*m, VariantMode::Normal);
            writeln!(w, "share({}) > share(normal) in {:.0}% of seeds", m.name(), rate * 100.0)?;
        }
    }
    if let Some(rows) = study {
        writeln!(w)?;
        writeln!(w, "{:<14} {:>12} {:>14} {:>11}", "schedule", "trig share", "omission drop", "final loss")?;
        for r in rows {
            writeln!(
                w,
                "{:<14} {:>12} {:>14.4} {:>11.4}",
                r.label,
                fmt_share(r.mean_trigger_share),
                r.mean_omission_drop,
                r.mean_final_loss
            )?;
        }
    }
    w.flush()
}

fn check_count(path: &Path, got: usize, expected: Option<usize>) -> Result<(), Failure> {
    match expected {
        Some(n) if n != got => Err(data_err(path, format!("stream holds {got} records, expected {n}"))),
        _ => Ok(()),
    }
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let path = &args.stream;
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    let reader = BufReader::new(file);
    let out = args.out.as_deref();

    if args.format == StreamFormat::Compact {
        let records = read_compact_stream(reader).map_err(|e| data_err(path, e))?;
        check_count(path, records.len(), args.expect_steps)?;
        if args.dump {
            return emit(out, |w| records.iter().try_for_each(|r| writeln!(w, "{}\t{}", r.step, r.caption)))
                .map_err(write_err);
        }
        return emit(out, |w| writeln!(w, "{} records", records.len())).map_err(write_err);
    }

    let policy_path = args.policy.as_deref().ok_or_else(|| Failure::Usage("verify of a full stream needs --policy".into()))?;
    let mut flags = PartialConfig::default();
    args.schedule.apply(&mut flags);
    args.run.apply(&mut flags);
    let cfg = args.config.resolve(flags)?;
    let PolicyFile { policy, .. } = read_json(policy_path)?;
    let stream = read_jsonl_stream(reader).map_err(|e| data_err(path, e))?;
    check_count(path, stream.len(), args.expect_steps)?;
    let checks = check_against_plan(&stream, &policy, &cfg.schedule, cfg.mode).map_err(|e| data_err(path, e))?;
    emit(out, |w| {
        writeln!(w, "# token\toccurrences\tobserved\texpected\ttolerance\tresult")?;
        for c in &checks {
            let verdict = if c.pass { "ok" } else { "FAIL" };
            writeln!(
                w,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{verdict}",
                c.token, c.occurrences, c.observed_rate, c.expected_rate, c.tolerance
            )?;
        }
        Ok(())
    })
    .map_err(write_err)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.token.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(data_err(path, format!("drop rates outside tolerance for {}", failed.join(", "))))
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Plan(a) => plan(a),
        Command::Schedule(a) => schedule(a),
        Command::Augment(a) => augment(a),
        Command::Stats(a) => stats(a),
        Command::Surrogate(a) => surrogate(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("fad: {f}");
            f.code()
        }
    }
}
