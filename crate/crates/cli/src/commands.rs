use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use legalprompt::corpus::{self, Dataset, SplitKind};
use legalprompt::embedding::{EmbeddingError, EmbeddingProvider};
use legalprompt::ensemble::{self, PredictionTable, SearchSpace};
use legalprompt::llm::{
    self, CachedProvider, ChatProvider, LlmError, MockProvider, RemoteChatProvider, ReplayProvider, ResponseCache,
};
use legalprompt::metrics::{self, Method, ScoreRow};
use legalprompt::pipeline::{self, PipelineError, PredictContext, RetrievalContext};
use legalprompt::prompting::{self, FixedShotSet, PromptTemplate, ShotSource, Strategy};
use legalprompt::retrieval::{self, ExampleIndex, RetrievalError};
use legalprompt::window::{self, MockWindowClassifier, RemoteWindowClassifier, WindowClassifier};
use legalprompt::Label;
use serde::{Deserialize, Serialize};

use crate::config::{ChatProviderKind, RunConfig, WindowClassifierKind};
use crate::error::{CliError, CliResult, Failure, ResultExt};

pub const ENSEMBLE_FILE: &str = "ensemble";
pub const WINDOW_BASELINE_FILE: &str = "window_baseline";

fn split_path(config: &RunConfig, split: SplitKind) -> CliResult<&Path> {
    let path = match split {
        SplitKind::Train => &config.data.train,
        SplitKind::Validation => &config.data.validation,
        SplitKind::Test => &config.data.test,
    };
    path.as_deref()
        .ok_or_else(|| CliError::config(format!("no dataset path configured for the {split} split")))
}

fn load_split(config: &RunConfig, split: SplitKind) -> CliResult<Dataset> {
    let path = split_path(config, split)?;
    if !path.exists() {
        return Err(CliError::config(format!("{split} dataset {} does not exist", path.display())));
    }
    corpus::load_dataset(path, split).fail(Failure::Data, format!("loading {split} split"))
}

fn load_template(config: &RunConfig) -> CliResult<PromptTemplate> {
    match &config.data.template {
        Some(path) => PromptTemplate::load(path).fail(Failure::Config, format!("template {}", path.display())),
        None => Ok(PromptTemplate::default()),
    }
}

fn load_fixed_shots(config: &RunConfig) -> CliResult<FixedShotSet> {
    let path = config
        .data
        .fixed_shots
        .as_deref()
        .ok_or_else(|| CliError::config("no fixed_shots path configured"))?;
    prompting::load_fixed_shots(path).fail(Failure::Data, format!("fixed shots {}", path.display()))
}

fn predictions_dir(config: &RunConfig, split: SplitKind) -> PathBuf {
    config.output_dir.join("predictions").join(split.as_str())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).fail(Failure::Other, format!("creating {}", dir.display()))
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, body).fail(Failure::Other, format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut body = String::new();
    for r in rows {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    write_file(path, &body)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut body = serde_json::to_string_pretty(value).expect("record serializes");
    body.push('\n');
    write_file(path, &body)
}

/// Any JSON-lines record carrying `id` and `label`.
#[derive(Debug, Deserialize)]
struct LabelRecord {
    id: String,
    label: Label,
}

fn read_labels(path: &Path) -> CliResult<Vec<(String, Label)>> {
    let text = fs::read_to_string(path).fail(Failure::Data, format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<LabelRecord>(l)
                .map(|r| (r.id, r.label))
                .fail(Failure::Data, format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

fn llm_failure(e: &LlmError) -> Failure {
    match e {
        LlmError::MissingCredential(_) | LlmError::InvalidParams(_) => Failure::Config,
        LlmError::Prompt(_) | LlmError::PredictionFile(_) => Failure::Data,
        _ => Failure::Provider,
    }
}

fn embedding_failure(e: &EmbeddingError) -> Failure {
    match e {
        EmbeddingError::Unreachable { .. } | EmbeddingError::Protocol(_) | EmbeddingError::DimensionMismatch { .. } => {
            Failure::Provider
        }
        EmbeddingError::InvalidConfig(_) => Failure::Config,
        _ => Failure::Data,
    }
}

fn retrieval_failure(e: &RetrievalError) -> Failure {
    match e {
        RetrievalError::Embed { source, .. } => embedding_failure(source),
        RetrievalError::FingerprintMismatch { .. } => Failure::Config,
        _ => Failure::Data,
    }
}

fn pipeline_failure(e: &PipelineError) -> Failure {
    match e {
        PipelineError::NoFixedShots(_) | PipelineError::NoIndex(_) | PipelineError::ThreadPool(_) => Failure::Config,
        PipelineError::QueryEmbed { source, .. } => embedding_failure(source),
        PipelineError::Retrieval { source, .. } => retrieval_failure(source),
        PipelineError::Classify { source, .. } => llm_failure(source),
        PipelineError::UnknownExemplar(_) | PipelineError::Prompt(_) => Failure::Data,
    }
}

#[derive(Serialize)]
struct SplitSummary {
    split: SplitKind,
    path: PathBuf,
    instances: usize,
    trues: usize,
    falses: usize,
}

pub fn validate_data(config: &RunConfig) -> CliResult<()> {
    let mut summaries = Vec::new();
    for split in [SplitKind::Train, SplitKind::Validation, SplitKind::Test] {
        if split_path(config, split).is_err() {
            continue;
        }
        let data = load_split(config, split)?;
        let (trues, falses) = data.label_counts();
        println!("{split}: {} instances ({trues} TRUE, {falses} FALSE)", data.len());
        summaries.push(SplitSummary {
            split,
            path: split_path(config, split)?.to_path_buf(),
            instances: data.len(),
            trues,
            falses,
        });
    }
    if summaries.is_empty() {
        return Err(CliError::config("no dataset paths configured"));
    }
    if config.data.fixed_shots.is_some() {
        let shots = load_fixed_shots(config)?;
        println!("fixed shots: {}", shots.shots().len());
    }
    load_template(config)?;
    write_json(&config.output_dir.join("data_summary.json"), &summaries)
}

pub fn audit_leakage(config: &RunConfig) -> CliResult<()> {
    let train = load_split(config, SplitKind::Train)?;
    let mut audited = 0;
    for split in [SplitKind::Validation, SplitKind::Test] {
        if split_path(config, split).is_err() {
            continue;
        }
        let other = load_split(config, split)?;
        let report = corpus::audit_leakage(&train, &other);
        println!(
            "{split}: {} of {} instances share an introduction and question with TRAIN",
            report.overlap_count,
            other.len()
        );
        write_json(
            &config.output_dir.join("leakage").join(format!("{}.json", split.as_str())),
            &report,
        )?;
        audited += 1;
    }
    if audited == 0 {
        return Err(CliError::config("no validation or test split configured"));
    }
    Ok(())
}

fn embedder(config: &RunConfig) -> CliResult<Box<dyn EmbeddingProvider>> {
    config
        .embedding
        .build()
        .map_err(|e| CliError::new(embedding_failure(&e), anyhow::Error::new(e).context("embedding provider")))
}

pub fn build_index(config: &RunConfig) -> CliResult<ExampleIndex> {
    let train = load_split(config, SplitKind::Train)?;
    let provider = embedder(config)?;
    let index = retrieval::build_index(&train, provider.as_ref(), config.key_mode)
        .map_err(|e| CliError::new(retrieval_failure(&e), anyhow::Error::new(e).context("building index")))?;
    let path = config.index_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    index.save(&path).fail(Failure::Other, format!("writing {}", path.display()))?;
    println!(
        "index: {} FALSE + {} TRUE exemplars -> {}",
        index.partition(Label::False).len(),
        index.partition(Label::True).len(),
        path.display()
    );
    Ok(index)
}

/// The saved index when it matches the active embedder; built otherwise.
fn obtain_index(config: &RunConfig, provider: &dyn EmbeddingProvider) -> CliResult<ExampleIndex> {
    let path = config.index_path();
    if path.exists() {
        let fp = legalprompt::embedding::fingerprint(provider, config.key_mode);
        return ExampleIndex::load(&path, &fp)
            .map_err(|e| CliError::new(retrieval_failure(&e), anyhow::Error::new(e).context(format!("{}", path.display()))));
    }
    log::info!("no index at {}; building one", path.display());
    build_index(config)
}

fn chat_provider(config: &RunConfig) -> CliResult<Box<dyn ChatProvider>> {
    let cache = ResponseCache::open(config.cache_dir()).fail(Failure::Config, "opening response cache")?;
    let chat = &config.chat;
    Ok(match chat.provider {
        ChatProviderKind::Mock => {
            let script = match &chat.mock_script {
                Some(path) => MockProvider::read_script(path).fail(Failure::Config, "mock script")?,
                None => Vec::new(),
            };
            Box::new(CachedProvider::new(MockProvider::synthetic_with_script(script), cache))
        }
        ChatProviderKind::Remote => {
            let endpoint = chat
                .endpoint
                .clone()
                .ok_or_else(|| CliError::config("chat.endpoint is required for the remote provider"))?;
            let remote = RemoteChatProvider::from_env(
                endpoint,
                chat.transport,
                chat.max_in_flight,
                Duration::from_secs(chat.timeout_secs),
            )
            .fail(Failure::Config, "remote chat provider")?;
            Box::new(CachedProvider::new(remote, cache))
        }
        ChatProviderKind::Replay => Box::new(ReplayProvider::new(cache)),
    })
}

pub fn predict(config: &RunConfig, strategies: &[Strategy], split: SplitKind) -> CliResult<()> {
    let data = load_split(config, split)?;
    let template = load_template(config)?;
    let needs = |source| strategies.iter().any(|s| s.requirements().shots == source);
    let fixed = if needs(ShotSource::Fixed) {
        Some(load_fixed_shots(config)?)
    } else {
        None
    };
    let rag = if needs(ShotSource::Retrieved) {
        let train = load_split(config, SplitKind::Train)?;
        let provider = embedder(config)?;
        let index = obtain_index(config, provider.as_ref())?;
        Some((train, provider, index))
    } else {
        None
    };
    let provider = chat_provider(config)?;
    let ctx = PredictContext {
        template: &template,
        settings: config.chat.settings(),
        retry: config.retry.clone(),
        fixed_shots: fixed.as_ref(),
        retrieval: rag.as_ref().map(|(train, embedder, index)| RetrievalContext {
            index,
            embedder: embedder.as_ref(),
            key_mode: config.key_mode,
            config: config.retrieval.clone(),
            train,
        }),
        word_budget: config.word_budget,
    };
    let dir = predictions_dir(config, split);
    create_dir(&dir)?;
    for &strategy in strategies {
        let predictions = pipeline::predict_dataset(provider.as_ref(), strategy, &data, &ctx, config.jobs)
            .map_err(|e| CliError::new(pipeline_failure(&e), anyhow::Error::new(e).context(format!("{strategy}"))))?;
        let path = dir.join(format!("{}.jsonl", strategy.as_str()));
        llm::write_predictions(&path, &predictions).fail(Failure::Other, "writing predictions")?;
        let defaulted = predictions
            .iter()
            .filter(|p| p.parse_status == llm::ParseStatus::Defaulted)
            .count();
        println!(
            "{strategy}: {} predictions ({defaulted} defaulted) -> {}",
            predictions.len(),
            path.display()
        );
    }
    Ok(())
}

fn load_table(config: &RunConfig, split: SplitKind, strategies: &[Strategy]) -> CliResult<PredictionTable> {
    let dir = predictions_dir(config, split);
    let mut sets = BTreeMap::new();
    for &s in strategies {
        let path = dir.join(format!("{}.jsonl", s.as_str()));
        if !path.exists() {
            return Err(CliError::data(format!(
                "missing predictions for {s}: {} (run predict first)",
                path.display()
            )));
        }
        sets.insert(s, read_labels(&path)?);
    }
    PredictionTable::new(sets).fail(Failure::Data, "aligning prediction sets")
}

pub fn ensemble_vote(config: &RunConfig, split: SplitKind) -> CliResult<()> {
    let table = load_table(config, split, &config.ensemble.members)?;
    let outcomes = table.vote_all(&config.ensemble).fail(Failure::Data, "voting")?;
    let path = predictions_dir(config, split).join(format!("{ENSEMBLE_FILE}.jsonl"));
    write_jsonl(&path, &outcomes)?;
    write_json(
        &config.output_dir.join("ensemble").join(format!("config_{}.json", split.as_str())),
        &config.ensemble,
    )?;
    let trues = outcomes.iter().filter(|o| o.label.is_true()).count();
    println!(
        "ensemble {}: {} votes ({trues} TRUE) -> {}",
        config.ensemble.describe(),
        outcomes.len(),
        path.display()
    );
    Ok(())
}

fn available_strategies(config: &RunConfig, split: SplitKind) -> Vec<Strategy> {
    let dir = predictions_dir(config, split);
    config
        .strategies
        .iter()
        .copied()
        .filter(|s| dir.join(format!("{}.jsonl", s.as_str())).exists())
        .collect()
}

fn gold_labels(config: &RunConfig, split: SplitKind) -> CliResult<Vec<(String, Label)>> {
    if !split.requires_label() {
        return Err(CliError::data(format!("the {split} split carries no gold labels")));
    }
    Ok(load_split(config, split)?.gold_labels())
}

pub fn ensemble_search(
    config: &RunConfig,
    split: SplitKind,
    holdout_split: Option<SplitKind>,
    min_size: usize,
    thresholds: Option<Vec<f64>>,
) -> CliResult<()> {
    let strategies = available_strategies(config, split);
    if strategies.is_empty() {
        return Err(CliError::data(format!("no strategy predictions for the {split} split")));
    }
    let table = load_table(config, split, &strategies)?;
    let gold = gold_labels(config, split)?;
    let space = SearchSpace {
        thresholds: thresholds.unwrap_or_else(ensemble::default_threshold_grid),
        min_size,
        tie_rule: config.ensemble.tie_rule,
    };
    let results = match holdout_split {
        None => ensemble::search(&table, &gold, &space),
        Some(h) => {
            let holdout = load_table(config, h, &strategies)?;
            let holdout_gold = gold_labels(config, h)?;
            ensemble::search_with_holdout(&table, &gold, &holdout, &holdout_gold, &space)
        }
    }
    .map_err(|e| {
        let failure = match e {
            ensemble::EnsembleError::BadThreshold(_)
            | ensemble::EnsembleError::EmptyGrid
            | ensemble::EnsembleError::MinSizeTooLarge { .. } => Failure::Config,
            _ => Failure::Data,
        };
        CliError::new(failure, anyhow::Error::new(e).context("ensemble search"))
    })?;
    let path = config
        .output_dir
        .join("ensemble")
        .join(format!("search_{}.jsonl", split.as_str()));
    write_jsonl(&path, &results)?;
    let top = &results[..results.len().min(10)];
    let width = top.iter().map(|r| r.config.describe().len()).max().unwrap_or(0);
    println!("{:<width$}  {:>8}  {:>6}", "Configuration", "Macro F1", "Acc.");
    for r in top {
        println!(
            "{:<width$}  {:>8}  {:>6}",
            r.config.describe(),
            metrics::format_score(r.macro_f1),
            metrics::format_score(r.accuracy)
        );
    }
    println!("{} configurations -> {}", results.len(), path.display());
    Ok(())
}

fn method_for(name: &str) -> Method {
    if name == ENSEMBLE_FILE {
        Method::Ensemble
    } else if let Ok(s) = name.parse::<Strategy>() {
        Method::Strategy(s)
    } else {
        Method::Baseline(name.to_string())
    }
}

fn emit(rows: &[ScoreRow], dir: &Path) -> CliResult<()> {
    let files = metrics::emit_report(rows, dir).fail(Failure::Other, "writing report")?;
    let table = fs::read_to_string(&files.table).fail(Failure::Other, "reading report")?;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(table.as_bytes());
    Ok(())
}

pub fn score(config: &RunConfig, predictions: &[PathBuf], gold: Option<&Path>, split: SplitKind) -> CliResult<()> {
    let gold = match gold {
        Some(path) => read_labels(path)?,
        None => gold_labels(config, split)?,
    };
    let mut rows = Vec::new();
    for path in predictions {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let labels = read_labels(path)?;
        rows.push(ScoreRow::score(method_for(&name), &labels, &gold).fail(Failure::Data, format!("scoring {}", path.display()))?);
    }
    emit(&rows, &config.output_dir.join("scores"))
}

pub fn report(config: &RunConfig, split: SplitKind) -> CliResult<()> {
    let gold = gold_labels(config, split)?;
    let dir = predictions_dir(config, split);
    let mut names: Vec<String> = Strategy::ALL.iter().map(|s| s.as_str().to_string()).collect();
    names.push(ENSEMBLE_FILE.to_string());
    names.push(WINDOW_BASELINE_FILE.to_string());
    let mut rows = Vec::new();
    for name in names {
        let path = dir.join(format!("{name}.jsonl"));
        if !path.exists() {
            continue;
        }
        let labels = read_labels(&path)?;
        rows.push(ScoreRow::score(method_for(&name), &labels, &gold).fail(Failure::Data, format!("scoring {}", path.display()))?);
    }
    if rows.is_empty() {
        return Err(CliError::data(format!("no prediction files under {}", dir.display())));
    }
    emit(&rows, &config.output_dir.join("report").join(split.as_str()))
}

pub fn baseline_windows(config: &RunConfig, split: SplitKind) -> CliResult<()> {
    let data = load_split(config, split)?;
    let w = &config.window;
    let classifier: Box<dyn WindowClassifier> = match w.classifier {
        WindowClassifierKind::Mock => Box::new(MockWindowClassifier::new().with_true_keywords(w.true_keywords.clone())),
        WindowClassifierKind::Remote => {
            let endpoint = w
                .endpoint
                .clone()
                .ok_or_else(|| CliError::config("window.endpoint is required for the remote classifier"))?;
            Box::new(RemoteWindowClassifier::new(
                endpoint,
                w.max_in_flight,
                Duration::from_secs(w.timeout_secs),
            ))
        }
    };
    let predictions = window::classify_dataset(classifier.as_ref(), data.instances(), w.limit, config.jobs)
        .map_err(|e| {
            let failure = match e {
                window::WindowError::Remote { .. } => Failure::Provider,
                window::WindowError::NoCapacity { .. } => Failure::Config,
                _ => Failure::Data,
            };
            CliError::new(failure, anyhow::Error::new(e).context("window baseline"))
        })?;
    let path = predictions_dir(config, split).join(format!("{WINDOW_BASELINE_FILE}.jsonl"));
    write_jsonl(&path, &predictions)?;
    let windows: usize = predictions.iter().map(|p| p.window_labels.len()).sum();
    println!(
        "window baseline: {} predictions over {windows} windows -> {}",
        predictions.len(),
        path.display()
    );
    Ok(())
}
