//! End-to-end prediction over every strategy, then offline replay from the
//! response cache.

use legalprompt::corpus::{Dataset, Instance, SplitKind};
use legalprompt::embedding::{BuiltinEmbedder, KeyMode};
use legalprompt::llm::{CachedProvider, LlmError, MockProvider, Prediction, ReplayProvider, ResponseCache};
use legalprompt::pipeline::{predict_dataset, PipelineError, PredictContext, RetrievalContext};
use legalprompt::prompting::{FixedShotSet, PromptTemplate, Strategy};
use legalprompt::retrieval::{build_index, RetrievalConfig};
use legalprompt::Label;

const TOPICS: [&str; 6] = [
    "diversity of citizenship between the parties",
    "federal question arising under a statute",
    "removal from state court after service",
    "supplemental claims from the same transaction",
    "amount in controversy and aggregation",
    "personal jurisdiction and minimum contacts",
];

fn instance(id: &str, n: usize, label: Option<Label>) -> Instance {
    Instance {
        id: id.into(),
        introduction: format!("Case {n}. The dispute concerns {}.", TOPICS[n % TOPICS.len()]),
        question: format!("Question {n}: may the federal court hear the claim?"),
        answer_candidate: format!("Candidate {n}: the court {} hear it.", ["may", "may not", "may not"][n % 3]),
        analysis: label.map(|_| format!("Reasoning for case {n}.")),
        label,
    }
}

fn train() -> Dataset {
    let rows = (0..12)
        .map(|n| instance(&format!("tr{n:02}"), n, Some(Label::from(n % 3 == 0))))
        .collect();
    Dataset::new(SplitKind::Train, rows).unwrap()
}

fn validation() -> Dataset {
    let rows = (0..8)
        .map(|n| instance(&format!("va{n:02}"), n + 20, Some(Label::from(n % 2 == 0))))
        .collect();
    Dataset::new(SplitKind::Validation, rows).unwrap()
}

fn run_all(provider: &dyn legalprompt::llm::ChatProvider, jobs: usize) -> Result<Vec<Vec<Prediction>>, PipelineError> {
    let train = train();
    let validation = validation();
    let embedder = BuiltinEmbedder::default();
    let index = build_index(&train, &embedder, KeyMode::Triplet).unwrap();
    let template = PromptTemplate::default();
    let shots = FixedShotSet::new(vec![train.instances()[1].clone(), train.instances()[0].clone()]).unwrap();
    let mut ctx = PredictContext::new(&template);
    ctx.fixed_shots = Some(&shots);
    ctx.retrieval = Some(RetrievalContext {
        index: &index,
        embedder: &embedder,
        key_mode: KeyMode::Triplet,
        config: RetrievalConfig::default(),
        train: &train,
    });
    Strategy::ALL
        .iter()
        .map(|&s| predict_dataset(provider, s, &validation, &ctx, jobs))
        .collect()
}

#[test]
fn replay_reproduces_a_cached_run() {
    let dir = tempfile::tempdir().unwrap();
    let live = CachedProvider::new(MockProvider::synthetic(), ResponseCache::open(dir.path()).unwrap());
    let first = run_all(&live, 1).unwrap();
    let cached = live.cache().len().unwrap();
    assert!(cached > 0);

    for (strategy, preds) in Strategy::ALL.iter().zip(&first) {
        assert_eq!(preds.len(), 8);
        assert!(preds.iter().all(|p| p.strategy == *strategy));
        let ids: Vec<&str> = preds.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, validation().instances().iter().map(|i| i.id.as_str()).collect::<Vec<_>>());
    }

    // A warm cache answers everything; nothing new is written.
    let again = run_all(&live, 4).unwrap();
    assert_eq!(again, first);
    assert_eq!(live.cache().len().unwrap(), cached);

    let replay = ReplayProvider::new(ResponseCache::open(dir.path()).unwrap());
    assert_eq!(run_all(&replay, 3).unwrap(), first);
}

#[test]
fn replay_with_empty_cache_fails_on_miss() {
    let dir = tempfile::tempdir().unwrap();
    let replay = ReplayProvider::new(ResponseCache::open(dir.path()).unwrap());
    match run_all(&replay, 1) {
        Err(PipelineError::Classify {
            source: LlmError::CacheMiss(digest),
            ..
        }) => assert_eq!(digest.len(), 64),
        other => panic!("expected a cache miss, got {other:?}"),
    }
}

#[test]
fn analysis_is_kept_only_for_reasoning_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let live = CachedProvider::new(MockProvider::synthetic(), ResponseCache::open(dir.path()).unwrap());
    let runs = run_all(&live, 2).unwrap();
    for (strategy, preds) in Strategy::ALL.iter().zip(&runs) {
        let reasons = strategy.requirements().cot;
        assert!(
            preds.iter().all(|p| p.generated_analysis.is_some() == reasons),
            "{strategy}"
        );
    }
}
