use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use annogate::engine::{annotate_corpus, load_run, RunOptions, RunRecord, RunResults, RunStatus};
use annogate::eval::{
    compare_runs, render_summary_table, stratify, summarize, write_metrics_csv, DimensionEvaluation,
};
use annogate::model::{
    default_output_contract, join_gold, load_codebook, load_corpus, write_codebook,
};
use annogate::provider::{
    approx_tokens, render_prompt, CompletionProvider, HttpProvider, ProviderConfig,
    ScriptedProvider, SimulatedProvider, UsageRecord, Usd, LABELS_PREFIX,
};
use annogate::workflow::{
    audit_human_labels, build_review_queue, evaluate_holdout, evaluate_refinement,
    export_training_data, label_full_corpus, split, validation_evidence, CodebookLedger,
    ExportFormat, GateVerdict, ProjectLayout, RefinementReport, ReviewMode, SplitSide, SplitSpec,
    WorkflowError,
};
use annogate::{Codebook, Dimension, GoldRecord, TextSample};
use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::config::{ProjectConfig, ProviderKind, RunOverrides, TEMPLATE};
use crate::error::CliError;

const SNIPPET_CHARS: usize = 120;
const LOCK_FILE: &str = ".annogate.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Refinement,
    Holdout,
    Corpus,
}

impl SplitChoice {
    fn name(self) -> &'static str {
        match self {
            SplitChoice::Refinement => "refinement",
            SplitChoice::Holdout => "holdout",
            SplitChoice::Corpus => "corpus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Refinement,
    Holdout,
}

pub struct AnnotateArgs {
    pub split: SplitChoice,
    pub run_id: Option<String>,
    pub yes: bool,
    pub overrides: RunOverrides,
    pub stop_after: Option<u64>,
}

/// Holds an advisory lock on the state directory for the life of the command.
/// The OS drops the lock if the process dies, so a killed run can resume.
struct ProjectLock {
    _file: File,
}

impl ProjectLock {
    fn acquire(state_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(state_dir).map_err(|e| CliError::io(state_dir, e))?;
        let path = state_dir.join(LOCK_FILE);
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(ProjectLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(CliError::Locked(state_dir.to_path_buf())),
            Err(fs::TryLockError::Error(e)) => Err(CliError::io(&path, e)),
        }
    }
}

/// Loaded project inputs shared by every command except `init`.
struct Project {
    config: ProjectConfig,
    layout: ProjectLayout,
    corpus: Vec<TextSample>,
    codebook: Codebook,
    gold: Vec<GoldRecord>,
    _lock: ProjectLock,
}

impl Project {
    fn open(config: ProjectConfig) -> Result<Self, CliError> {
        config.validate()?;
        let lock = ProjectLock::acquire(&config.state_dir)?;
        let layout = ProjectLayout::new(&config.state_dir);
        layout.create_dirs()?;
        let corpus = load_corpus(&config.corpus.path, config.corpus.format)?;
        let codebook = load_codebook(&config.codebook.path)?;
        let gold = join_gold(&corpus, &config.gold.path, &codebook)?;
        Ok(Project {
            config,
            layout,
            corpus,
            codebook,
            gold,
            _lock: lock,
        })
    }

    fn ledger(&self) -> Result<CodebookLedger, CliError> {
        self.layout.load_ledger()?.ok_or_else(|| {
            CliError::Config(
                "no ledger yet; run `annogate annotate --split refinement` first".into(),
            )
        })
    }

    fn split(&self) -> Result<SplitSpec, CliError> {
        self.layout.load_split()?.ok_or_else(|| {
            CliError::Config(
                "no split yet; run `annogate annotate --split refinement` first".into(),
            )
        })
    }

    fn run(&self, run_id: &str) -> Result<RunRecord, CliError> {
        let dir = self.layout.run(run_id);
        if !dir.join("manifest.json").is_file() {
            return Err(CliError::Config(format!(
                "no run named {run_id:?} in {}",
                self.layout.runs().display()
            )));
        }
        Ok(load_run(&dir)?)
    }

    fn finished_run(&self, run_id: &str) -> Result<RunRecord, CliError> {
        let run = self.run(run_id)?;
        if run.manifest.status != RunStatus::Complete {
            return Err(WorkflowError::RunNotComplete(run.manifest.status).into());
        }
        Ok(run)
    }

    fn report_path(&self, name: &str) -> PathBuf {
        self.layout.reports().join(name)
    }
}

fn write_report(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn write_json_report(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_report(path, text.as_bytes())
}

pub fn init(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if entries.next().is_some() {
            return Err(CliError::NonEmptyDirectory(dir.to_path_buf()));
        }
    }
    let layout = ProjectLayout::new(dir);
    layout.create_dirs()?;
    let data = dir.join("data");
    fs::create_dir_all(&data).map_err(|e| CliError::io(&data, e))?;
    let config = dir.join(crate::config::DEFAULT_CONFIG);
    fs::write(&config, TEMPLATE).map_err(|e| CliError::io(&config, e))?;
    let skeleton = Codebook {
        codebook_id: "my-codebook".into(),
        version: 1,
        parent_version: None,
        preamble: "You are annotating short texts for a research project. Read the text and \
decide, for each dimension below, whether it is present."
            .into(),
        dimensions: vec![Dimension {
            key: "example".into(),
            name: "Example dimension".into(),
            definition: "Replace this with the definition your human annotators use, \
including edge cases and what does not count."
                .into(),
        }],
        output_contract: default_output_contract(),
    };
    let codebook = layout.codebooks().join("v1.md");
    fs::write(&codebook, write_codebook(&skeleton)).map_err(|e| CliError::io(&codebook, e))?;
    println!("initialized project in {}", dir.display());
    println!(
        "next: add data/corpus.jsonl and data/gold.csv, edit codebooks/v1.md and annogate.toml"
    );
    Ok(())
}

fn build_provider(
    config: &ProjectConfig,
    provider_config: &ProviderConfig,
    seed: Option<u64>,
    gold: &[GoldRecord],
) -> Result<Box<dyn CompletionProvider>, CliError> {
    Ok(match config.provider.kind {
        ProviderKind::Http => Box::new(HttpProvider::from_env(provider_config.clone())?),
        ProviderKind::Scripted => {
            let script = config.provider.script.as_deref().expect("validated");
            Box::new(ScriptedProvider::load(script)?)
        }
        ProviderKind::Simulated => {
            let p = config.provider.correctness_probability.unwrap_or(0.8);
            Box::new(SimulatedProvider::new(seed.unwrap_or(0), p).with_gold(gold))
        }
    })
}

/// Token-count estimate for a full run: prompt tokens per pass plus one
/// `LABELS:` line of output.
fn estimate_usage(samples: &[TextSample], codebook: &Codebook, passes: u32) -> UsageRecord {
    let keys = codebook.keys();
    let reply = format!(
        "{LABELS_PREFIX} {}",
        keys.iter()
            .map(|k| format!("{k}=0"))
            .collect::<Vec<_>>()
            .join("; ")
    );
    let output = approx_tokens(&reply);
    let mut usage = UsageRecord::default();
    for sample in samples {
        let bundle = render_prompt(codebook, sample);
        let input = approx_tokens(&bundle.system_text) + approx_tokens(&bundle.user_text);
        usage.total_requests += u64::from(passes);
        usage.total_input_tokens += input * u64::from(passes);
        usage.total_output_tokens += output * u64::from(passes);
    }
    usage
}

fn fixed_time() -> Result<Option<DateTime<Utc>>, CliError> {
    let Ok(raw) = std::env::var("SOURCE_DATE_EPOCH") else {
        return Ok(None);
    };
    let secs: i64 = raw.trim().parse().map_err(|_| {
        CliError::Config(format!("SOURCE_DATE_EPOCH must be an integer, got {raw:?}"))
    })?;
    DateTime::from_timestamp(secs, 0)
        .map(Some)
        .ok_or_else(|| CliError::Config(format!("SOURCE_DATE_EPOCH out of range: {secs}")))
}

fn usd(amount: &Usd) -> String {
    format!("${}", amount.to_decimal(4))
}

/// Ensures the configured codebook is the ledger's current version and the
/// requested split is allowed right now, before any request is spent.
fn prepare_ledger(project: &Project, choice: SplitChoice) -> Result<CodebookLedger, CliError> {
    let codebook = &project.codebook;
    let mut ledger = match project.layout.load_ledger()? {
        Some(ledger) => ledger,
        None if choice == SplitChoice::Corpus => {
            return Err(WorkflowError::UnvalidatedCodebook.into())
        }
        None => CodebookLedger::new(codebook)?,
    };
    match choice {
        SplitChoice::Corpus => {
            validation_evidence(&ledger, codebook)?;
        }
        SplitChoice::Refinement | SplitChoice::Holdout => {
            if ledger.frozen {
                return Err(WorkflowError::AlreadyFrozen.into());
            }
            ledger.register_version(codebook)?;
            let archived = project
                .layout
                .codebooks()
                .join(format!("v{}.md", codebook.version));
            if !archived.exists() {
                write_report(&archived, write_codebook(codebook).as_bytes())?;
            }
        }
    }
    if choice == SplitChoice::Holdout {
        let latest = ledger.latest_version();
        if codebook.version != latest {
            return Err(WorkflowError::StaleCodebook {
                used: codebook.version,
                latest,
            }
            .into());
        }
        if ledger.versions[&latest].refinements.is_empty() {
            return Err(WorkflowError::NoRefinement(latest).into());
        }
    }
    project.layout.save_ledger(&ledger)?;
    Ok(ledger)
}

fn prepare_split(project: &Project) -> Result<SplitSpec, CliError> {
    if let Some(existing) = project.layout.load_split()? {
        let unassigned = existing.unassigned(&project.gold);
        if !unassigned.is_empty() {
            println!(
                "note: {} gold record(s) are not in the saved split and are ignored until you re-split",
                unassigned.len()
            );
        }
        return Ok(existing);
    }
    let spec = split(
        &project.gold,
        project.config.split.refinement_fraction,
        project.config.split.seed,
    )?;
    project.layout.save_split(&spec)?;
    println!(
        "created split: {} refinement, {} holdout (seed {})",
        spec.refinement_ids().len(),
        spec.holdout_ids().len(),
        spec.seed
    );
    Ok(spec)
}

pub fn annotate(config: ProjectConfig, args: AnnotateArgs) -> Result<(), CliError> {
    let project = Project::open(config)?;
    let ledger = prepare_ledger(&project, args.split)?;
    let spec = prepare_split(&project)?;

    let selected: BTreeSet<&str> = match args.split {
        SplitChoice::Refinement => spec.refinement_ids(),
        SplitChoice::Holdout => spec.holdout_ids(),
        SplitChoice::Corpus => {
            let gold_ids: BTreeSet<&str> =
                project.gold.iter().map(|g| g.sample_id.as_str()).collect();
            project
                .corpus
                .iter()
                .map(|s| s.id.as_str())
                .filter(|id| !gold_ids.contains(id))
                .collect()
        }
    };
    let samples: Vec<TextSample> = project
        .corpus
        .iter()
        .filter(|s| selected.contains(s.id.as_str()))
        .cloned()
        .collect();
    if samples.is_empty() {
        return Err(CliError::Config(format!(
            "the {} split has no samples",
            args.split.name()
        )));
    }

    let run_config = project.config.run_config(&args.overrides)?;
    let provider_config = project.config.provider_config(run_config.temperature)?;
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-v{}", args.split.name(), project.codebook.version));
    let run_dir = project.layout.run(&run_id);

    let estimate =
        estimate_usage(&samples, &project.codebook, run_config.passes).priced(&provider_config);
    println!(
        "run {run_id}: {} samples x {} passes = {} requests, ~{} input + ~{} output tokens, estimated cost {}",
        samples.len(),
        run_config.passes,
        estimate.total_requests,
        estimate.total_input_tokens,
        estimate.total_output_tokens,
        usd(&estimate.estimated_cost)
    );
    let ceiling = project.config.cost.ceiling_usd;
    if project.config.provider.kind == ProviderKind::Http
        && estimate.estimated_cost > ceiling
        && !args.yes
    {
        return Err(CliError::CostCeiling {
            estimate: usd(&estimate.estimated_cost),
            ceiling: usd(&ceiling),
        });
    }

    let provider = build_provider(
        &project.config,
        &provider_config,
        run_config.seed,
        &project.gold,
    )?;
    let options = RunOptions {
        stop_after_requests: args.stop_after,
        pricing: Some(provider_config),
        validation: None,
        fixed_time: fixed_time()?,
    };
    let out: RunResults = match args.split {
        SplitChoice::Corpus => label_full_corpus(
            &ledger,
            &samples,
            &project.codebook,
            &run_config,
            provider.as_ref(),
            &run_dir,
            &run_id,
            &options,
        )?,
        _ => annotate_corpus(
            &samples,
            &project.codebook,
            &run_config,
            provider.as_ref(),
            &run_dir,
            &run_id,
            &options,
        )?,
    };
    let usage = &out.manifest.usage;
    let unresolved = out
        .results
        .iter()
        .filter(|r| r.resolved().is_none())
        .count();
    println!(
        "completed {run_id}: {} new requests; total {} requests, {} input + {} output tokens, cost {}",
        out.new_requests,
        usage.total_requests,
        usage.total_input_tokens,
        usage.total_output_tokens,
        usd(&usage.estimated_cost)
    );
    println!(
        "{} annotations, {unresolved} unresolvable; artifacts in {}",
        out.results.len(),
        run_dir.display()
    );
    Ok(())
}

fn print_evaluation(evaluations: &[DimensionEvaluation], verdicts: &[GateVerdict]) {
    let sets: Vec<_> = evaluations.iter().map(|e| e.metrics).collect();
    match summarize(&sets) {
        Ok(dist) => {
            println!("metric distribution across {} dimension(s):", sets.len());
            print!("{}", render_summary_table(&dist));
        }
        Err(e) => println!("no summary: {e}"),
    }
    for e in evaluations {
        println!(
            "{}: {} (n={}, unresolved={})",
            e.dimension,
            annogate::workflow::describe_metrics(&e.metrics),
            e.metrics.confusion.total(),
            e.unresolved
        );
    }
    for v in verdicts {
        println!("{v}");
    }
}

pub fn evaluate(config: ProjectConfig, run_id: &str, stage: Stage) -> Result<(), CliError> {
    let project = Project::open(config)?;
    let mut ledger = project.ledger()?;
    let spec = project.split()?;
    let run = project.run(run_id)?;
    let thresholds = project.config.thresholds;

    let (stage_name, side, evaluations, verdicts, previous) = match stage {
        Stage::Refinement => {
            let report = evaluate_refinement(&mut ledger, &run, &project.gold, &spec, &thresholds)?;
            write_json_report(
                &project.report_path(&format!("{run_id}-refinement-metrics.json")),
                &report,
            )?;
            let RefinementReport {
                evaluations,
                verdicts,
                previous_run_id,
                ..
            } = report;
            (
                "refinement",
                SplitSide::Refinement,
                evaluations,
                verdicts,
                previous_run_id,
            )
        }
        Stage::Holdout => {
            let report = evaluate_holdout(&mut ledger, &run, &project.gold, &spec, &thresholds)?;
            write_json_report(
                &project.report_path(&format!("{run_id}-holdout-metrics.json")),
                &report,
            )?;
            (
                "holdout",
                SplitSide::Holdout,
                report.evaluations,
                report.verdicts,
                None,
            )
        }
    };
    project.layout.save_ledger(&ledger)?;

    let gold = spec.gold_for(&project.gold, side);
    let mut csv = Vec::new();
    write_metrics_csv(&evaluations, &mut csv).map_err(|e| CliError::Config(e.to_string()))?;
    write_report(
        &project.report_path(&format!("{run_id}-{stage_name}-metrics.csv")),
        &csv,
    )?;
    match stratify(&run.results, &gold) {
        Ok(s) => write_json_report(
            &project.report_path(&format!("{run_id}-{stage_name}-stratified.json")),
            &s,
        )?,
        Err(e) => println!("no stratified report: {e}"),
    }
    let audit = audit_human_labels(&run.results, &gold)?;
    write_json_report(
        &project.report_path(&format!("{run_id}-{stage_name}-audit.json")),
        &audit,
    )?;

    println!(
        "{stage_name} evaluation of {run_id} (codebook v{}):",
        run.manifest.codebook.version
    );
    print_evaluation(&evaluations, &verdicts);

    if let Some(previous) = previous {
        let before = project.run(&previous)?;
        match compare_runs((&before.results, &gold), (&run.results, &gold)) {
            Ok(delta) => {
                let path = project.report_path(&format!("{run_id}-delta.json"));
                write_json_report(
                    &path,
                    &serde_json::json!({
                        "before_run_id": previous,
                        "after_run_id": run_id,
                        "report": delta,
                    }),
                )?;
                println!(
                    "compared with {previous}: {}",
                    if delta.is_all_zero() {
                        "no change"
                    } else {
                        "see delta report"
                    }
                );
                for d in &delta.dimensions {
                    let show = |v: Option<annogate::eval::Rational>| {
                        v.map_or("undefined".to_string(), |v| {
                            format!("{:+.3}", annogate::eval::render3(v))
                        })
                    };
                    println!(
                        "  {}: accuracy {} precision {} recall {} f1 {}",
                        d.dimension,
                        show(d.delta.accuracy),
                        show(d.delta.precision),
                        show(d.delta.recall),
                        show(d.delta.f1)
                    );
                }
            }
            Err(e) => println!("no delta report against {previous}: {e}"),
        }
    }
    if stage == Stage::Holdout {
        println!(
            "ledger frozen: codebook v{} is validated for full-corpus labeling",
            run.manifest.codebook.version
        );
    }
    println!("reports written to {}", project.layout.reports().display());
    Ok(())
}

fn snippet(text: &str) -> String {
    let flat: String = text
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    if flat.chars().count() <= SNIPPET_CHARS {
        return flat;
    }
    let mut cut: String = flat.chars().take(SNIPPET_CHARS - 3).collect();
    cut.push_str("...");
    cut
}

pub fn review(
    config: ProjectConfig,
    run_id: &str,
    mode: ReviewMode,
    limit: usize,
) -> Result<(), CliError> {
    let project = Project::open(config)?;
    let run = project.finished_run(run_id)?;
    let queue = build_review_queue(&run.results, mode);
    let mode_name = match mode {
        ReviewMode::EdgeCases => "edge_cases",
        ReviewMode::Positives => "positives",
        ReviewMode::Both => "both",
    };
    let path = project.report_path(&format!("{run_id}-review-{mode_name}.csv"));
    let mut csv = Vec::new();
    queue
        .write_csv(&mut csv)
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_report(&path, &csv)?;
    if queue.is_empty() {
        println!("queue empty: nothing to review in {run_id} ({mode_name})");
        println!("wrote {}", path.display());
        return Ok(());
    }
    let texts: HashMap<&str, &str> = project
        .corpus
        .iter()
        .map(|s| (s.id.as_str(), s.text.as_str()))
        .collect();
    println!(
        "{:<11} {:<19} {:<16} {:<12} {:<5} text",
        "consistency", "reason", "sample", "dimension", "label"
    );
    for e in queue.entries.iter().take(limit) {
        println!(
            "{:<11} {:<19} {:<16} {:<12} {:<5} {}",
            e.consistency
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".into()),
            e.reason.as_str(),
            e.sample_id,
            e.dimension_key,
            e.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            snippet(texts.get(e.sample_id.as_str()).copied().unwrap_or(""))
        );
    }
    if queue.len() > limit {
        println!("... {} more in the file", queue.len() - limit);
    }
    println!("{} entries written to {}", queue.len(), path.display());
    Ok(())
}

pub fn export(
    config: ProjectConfig,
    run_id: &str,
    min_consistency: f64,
    format: ExportFormat,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&min_consistency) {
        return Err(WorkflowError::InvalidMinConsistency(min_consistency).into());
    }
    let project = Project::open(config)?;
    let run = project.finished_run(run_id)?;
    let ext = match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Jsonl => "jsonl",
    };
    let path = project.report_path(&format!("{run_id}-export.{ext}"));
    let mut buf = Vec::new();
    let summary = export_training_data(
        &project.corpus,
        &run.results,
        &project.codebook.keys(),
        min_consistency,
        run_id,
        run.manifest.codebook.version,
        format,
        &mut buf,
    )?;
    write_report(&path, &buf)?;
    if summary.is_empty() {
        eprintln!(
            "warning: no sample reached consistency {min_consistency} ({} fully resolved candidates)",
            summary.candidates
        );
    }
    println!(
        "exported {} of {} resolved samples to {}",
        summary.rows,
        summary.candidates,
        path.display()
    );
    std::io::stdout().flush().ok();
    Ok(())
}
