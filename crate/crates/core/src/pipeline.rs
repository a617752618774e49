//! Run one prompting strategy over a dataset.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{Dataset, Instance};
use crate::embedding::{EmbeddingError, EmbeddingProvider, KeyMode};
use crate::llm::{classify_instance, ChatProvider, ChatSettings, LlmError, Prediction, RetryPolicy};
use crate::prompting::{FixedShotSet, PromptError, PromptTemplate, ShotSource, Strategy};
use crate::retrieval::{self, ExampleIndex, RetrievalConfig, RetrievalError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0} needs a fixed shot set")]
    NoFixedShots(Strategy),
    #[error("{0} needs a retrieval index")]
    NoIndex(Strategy),
    #[error("retrieved exemplar {0} is not in the training split")]
    UnknownExemplar(String),
    #[error("embedding query {id}: {source}")]
    QueryEmbed { id: String, source: EmbeddingError },
    #[error("retrieval for {id}: {source}")]
    Retrieval { id: String, source: RetrievalError },
    #[error("{id}: {source}")]
    Classify { id: String, source: LlmError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Everything needed to pick exemplars by similarity.
pub struct RetrievalContext<'a> {
    pub index: &'a ExampleIndex,
    pub embedder: &'a dyn EmbeddingProvider,
    pub key_mode: KeyMode,
    pub config: RetrievalConfig,
    pub train: &'a Dataset,
}

pub struct PredictContext<'a> {
    pub template: &'a PromptTemplate,
    pub settings: ChatSettings,
    pub retry: RetryPolicy,
    pub fixed_shots: Option<&'a FixedShotSet>,
    pub retrieval: Option<RetrievalContext<'a>>,
    /// Warn when a rendered prompt exceeds this many words.
    pub word_budget: Option<usize>,
}

impl<'a> PredictContext<'a> {
    pub fn new(template: &'a PromptTemplate) -> Self {
        Self {
            template,
            settings: ChatSettings::default(),
            retry: RetryPolicy::default(),
            fixed_shots: None,
            retrieval: None,
            word_budget: None,
        }
    }

    /// Fails early when the strategy's shot source is not configured.
    pub fn check(&self, strategy: Strategy) -> Result<(), PipelineError> {
        match strategy.requirements().shots {
            ShotSource::Fixed if self.fixed_shots.is_none() => Err(PipelineError::NoFixedShots(strategy)),
            ShotSource::Retrieved if self.retrieval.is_none() => Err(PipelineError::NoIndex(strategy)),
            _ => Ok(()),
        }
    }
}

/// Exemplars for `test` in prompt order.
pub fn select_shots<'a>(
    strategy: Strategy,
    ctx: &'a PredictContext<'_>,
    train_by_id: &HashMap<&str, &'a Instance>,
    test: &Instance,
) -> Result<Vec<&'a Instance>, PipelineError> {
    match strategy.requirements().shots {
        ShotSource::None => Ok(Vec::new()),
        ShotSource::Fixed => Ok(ctx
            .fixed_shots
            .ok_or(PipelineError::NoFixedShots(strategy))?
            .as_refs()),
        ShotSource::Retrieved => {
            let rc = ctx.retrieval.as_ref().ok_or(PipelineError::NoIndex(strategy))?;
            let query = retrieval::embed_instance(rc.embedder, test, rc.key_mode).map_err(|source| {
                PipelineError::QueryEmbed {
                    id: test.id.clone(),
                    source,
                }
            })?;
            let mut config = rc.config.clone();
            if config.exclude_shared_introduction {
                config.exclude_ids.extend(retrieval::shared_introduction_ids(rc.train, test));
            }
            let found = retrieval::retrieve(rc.index, &query, &test.id, &config).map_err(|source| {
                PipelineError::Retrieval {
                    id: test.id.clone(),
                    source,
                }
            })?;
            retrieval::order_examples(&found, config.ordering_policy)
                .into_iter()
                .map(|s| {
                    train_by_id
                        .get(s.id.as_str())
                        .copied()
                        .ok_or(PipelineError::UnknownExemplar(s.id))
                })
                .collect()
        }
    }
}

fn predict_one(
    provider: &dyn ChatProvider,
    strategy: Strategy,
    ctx: &PredictContext<'_>,
    train_by_id: &HashMap<&str, &Instance>,
    test: &Instance,
) -> Result<Prediction, PipelineError> {
    let shots = select_shots(strategy, ctx, train_by_id, test)?;
    if let Some(budget) = ctx.word_budget {
        let messages = crate::prompting::render_prompt(strategy, ctx.template, test, &shots)?;
        if let Some(warning) = messages.check_word_budget(budget) {
            log::warn!("{} / {strategy}: {warning}", test.id);
        }
    }
    classify_instance(provider, strategy, ctx.template, test, &shots, &ctx.settings, &ctx.retry).map_err(
        |source| PipelineError::Classify {
            id: test.id.clone(),
            source,
        },
    )
}

/// Predictions for every instance, in dataset order, using up to `jobs`
/// worker threads.
pub fn predict_dataset(
    provider: &dyn ChatProvider,
    strategy: Strategy,
    dataset: &Dataset,
    ctx: &PredictContext<'_>,
    jobs: usize,
) -> Result<Vec<Prediction>, PipelineError> {
    ctx.check(strategy)?;
    let train_by_id = ctx.retrieval.as_ref().map(|r| r.train.by_id()).unwrap_or_default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
    pool.install(|| {
        dataset
            .instances()
            .par_iter()
            .map(|test| predict_one(provider, strategy, ctx, &train_by_id, test))
            .collect()
    })
}
