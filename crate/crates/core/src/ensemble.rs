//! Threshold voting over strategy predictions and exhaustive search over
//! member subsets and thresholds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::label::Label;
use crate::metrics::{self, ConfusionMatrix};
use crate::prompting::Strategy;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("threshold {0} is outside (0, 1]")]
    BadThreshold(f64),
    #[error("no prediction for member {strategy} on instance {id}")]
    MissingMember { strategy: Strategy, id: String },
    #[error("no prediction sets to combine")]
    NoPredictionSets,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("prediction sets cover different ids: {0}")]
    Misaligned(String),
    #[error("min_size {min_size} exceeds the {available} available prediction sets")]
    MinSizeTooLarge { min_size: usize, available: usize },
}

/// How a fraction exactly equal to the threshold is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// TRUE iff the TRUE fraction is at least the threshold.
    #[default]
    AtLeast,
    /// TRUE iff the TRUE fraction is strictly above the threshold.
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: Vec<Strategy>,
    pub threshold: f64,
    pub tie_rule: TieRule,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: vec![
                Strategy::ZeroShot,
                Strategy::ZeroShotCot,
                Strategy::FewShotCot,
                Strategy::FewShotCotRag,
            ],
            threshold: 0.5,
            tie_rule: TieRule::AtLeast,
        }
    }
}

impl EnsembleConfig {
    pub fn new(members: impl IntoIterator<Item = Strategy>, threshold: f64) -> Result<Self, EnsembleError> {
        let mut members: Vec<Strategy> = members.into_iter().collect();
        members.sort();
        members.dedup();
        let config = Self {
            members,
            threshold,
            tie_rule: TieRule::AtLeast,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.members.is_empty() {
            return Err(EnsembleError::NoMembers);
        }
        check_threshold(self.threshold)
    }

    pub fn describe(&self) -> String {
        let names: Vec<_> = self.members.iter().map(|s| s.as_str()).collect();
        format!("{{{}}}@{}", names.join(","), self.threshold)
    }
}

fn check_threshold(t: f64) -> Result<(), EnsembleError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(EnsembleError::BadThreshold(t))
    }
}

/// The nine-point grid 0.1, 0.2, ..., 0.9.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

pub fn decide(true_votes: usize, members: usize, threshold: f64, rule: TieRule) -> (f64, Label) {
    let fraction = true_votes as f64 / members as f64;
    let is_true = match rule {
        TieRule::AtLeast => fraction >= threshold,
        TieRule::Above => fraction > threshold,
    };
    (fraction, Label::from(is_true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub id: String,
    pub true_fraction: f64,
    pub label: Label,
}

pub fn vote(
    id: &str,
    per_strategy_labels: &HashMap<Strategy, Label>,
    config: &EnsembleConfig,
) -> Result<VoteOutcome, EnsembleError> {
    config.validate()?;
    let mut trues = 0;
    for strategy in &config.members {
        let label = per_strategy_labels
            .get(strategy)
            .ok_or_else(|| EnsembleError::MissingMember {
                strategy: *strategy,
                id: id.to_string(),
            })?;
        trues += usize::from(label.is_true());
    }
    let (true_fraction, label) = decide(trues, config.members.len(), config.threshold, config.tie_rule);
    Ok(VoteOutcome {
        id: id.to_string(),
        true_fraction,
        label,
    })
}

/// Strategy predictions aligned on a common id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    ids: Vec<String>,
    sets: BTreeMap<Strategy, Vec<Label>>,
}

impl PredictionTable {
    /// Every set must cover the same ids exactly once. Row order follows the
    /// first set (in strategy order).
    pub fn new(sets: BTreeMap<Strategy, Vec<(String, Label)>>) -> Result<Self, EnsembleError> {
        let mut iter = sets.iter();
        let (first_strategy, first) = iter.next().ok_or(EnsembleError::NoPredictionSets)?;
        let ids: Vec<String> = first.iter().map(|(id, _)| id.clone()).collect();
        let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        if position.len() != ids.len() {
            return Err(EnsembleError::Misaligned(format!("{first_strategy} repeats an id")));
        }
        let mut aligned = BTreeMap::new();
        for (strategy, rows) in &sets {
            if rows.len() != ids.len() {
                return Err(EnsembleError::Misaligned(format!(
                    "{strategy} has {} predictions, {first_strategy} has {}",
                    rows.len(),
                    ids.len()
                )));
            }
            let mut labels: Vec<Option<Label>> = vec![None; ids.len()];
            for (id, label) in rows {
                let slot = position
                    .get(id.as_str())
                    .ok_or_else(|| EnsembleError::Misaligned(format!("{strategy} has unknown id {id}")))?;
                if labels[*slot].replace(*label).is_some() {
                    return Err(EnsembleError::Misaligned(format!("{strategy} repeats id {id}")));
                }
            }
            aligned.insert(*strategy, labels.into_iter().map(|l| l.expect("all slots filled")).collect());
        }
        Ok(Self { ids, sets: aligned })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.sets.keys().copied().collect()
    }

    pub fn labels(&self, strategy: Strategy) -> Option<&[Label]> {
        self.sets.get(&strategy).map(Vec::as_slice)
    }

    pub fn vote_all(&self, config: &EnsembleConfig) -> Result<Vec<VoteOutcome>, EnsembleError> {
        config.validate()?;
        let columns = self.member_columns(config)?;
        Ok(self
            .ids
            .iter()
            .enumerate()
            .map(|(row, id)| {
                let trues = columns.iter().filter(|c| c[row].is_true()).count();
                let (true_fraction, label) = decide(trues, columns.len(), config.threshold, config.tie_rule);
                VoteOutcome {
                    id: id.clone(),
                    true_fraction,
                    label,
                }
            })
            .collect())
    }

    fn member_columns(&self, config: &EnsembleConfig) -> Result<Vec<&[Label]>, EnsembleError> {
        config
            .members
            .iter()
            .map(|s| {
                self.labels(*s).ok_or_else(|| EnsembleError::MissingMember {
                    strategy: *s,
                    id: self.ids.first().cloned().unwrap_or_default(),
                })
            })
            .collect()
    }

    /// Gold labels reordered to this table's rows.
    fn align_gold(&self, gold: &[(String, Label)]) -> Result<Vec<Label>, EnsembleError> {
        let map: HashMap<&str, Label> = gold.iter().map(|(id, l)| (id.as_str(), *l)).collect();
        if map.len() != gold.len() || gold.len() != self.ids.len() {
            return Err(EnsembleError::Misaligned(format!(
                "gold has {} labels for {} predictions",
                gold.len(),
                self.ids.len()
            )));
        }
        self.ids
            .iter()
            .map(|id| {
                map.get(id.as_str())
                    .copied()
                    .ok_or_else(|| EnsembleError::Misaligned(format!("no gold label for {id}")))
            })
            .collect()
    }

    fn evaluate(&self, config: &EnsembleConfig, gold: &[Label]) -> Result<(f64, f64, ConfusionMatrix), EnsembleError> {
        let outcomes = self.vote_all(config)?;
        let mut cm = ConfusionMatrix::default();
        for (outcome, truth) in outcomes.iter().zip(gold) {
            cm.record(*truth, outcome.label);
        }
        // Empty tables are rejected before evaluation.
        Ok((
            metrics::macro_f1(&cm).unwrap_or(0.0),
            metrics::accuracy(&cm).unwrap_or(0.0),
            cm,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub config: EnsembleConfig,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_accuracy: Option<f64>,
}

/// Ranking: macro F1 descending, accuracy descending, fewer members, lower
/// threshold, then member list in strategy order. Scores compare exactly on
/// the confusion counts, so mathematically equal scores always fall through
/// to the later keys.
pub fn rank_order(a: &SearchResult, b: &SearchResult) -> Ordering {
    metrics::cmp_macro_f1(&b.confusion, &a.confusion)
        .then_with(|| metrics::cmp_accuracy(&b.confusion, &a.confusion))
        .then_with(|| a.config.members.len().cmp(&b.config.members.len()))
        .then_with(|| a.config.threshold.total_cmp(&b.config.threshold))
        .then_with(|| a.config.members.cmp(&b.config.members))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub thresholds: Vec<f64>,
    pub min_size: usize,
    pub tie_rule: TieRule,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            thresholds: default_threshold_grid(),
            min_size: 1,
            tie_rule: TieRule::AtLeast,
        }
    }
}

fn subsets(strategies: &[Strategy], min_size: usize) -> Vec<Vec<Strategy>> {
    (1u32..(1 << strategies.len()))
        .filter(|mask| mask.count_ones() as usize >= min_size)
        .map(|mask| {
            strategies
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| *s)
                .collect()
        })
        .collect()
}

/// Score every member subset of size at least `min_size` at every
/// threshold, best first.
pub fn search(
    table: &PredictionTable,
    gold: &[(String, Label)],
    space: &SearchSpace,
) -> Result<Vec<SearchResult>, EnsembleError> {
    if space.thresholds.is_empty() {
        return Err(EnsembleError::EmptyGrid);
    }
    for t in &space.thresholds {
        check_threshold(*t)?;
    }
    let strategies = table.strategies();
    let min_size = space.min_size.max(1);
    if min_size > strategies.len() {
        return Err(EnsembleError::MinSizeTooLarge {
            min_size,
            available: strategies.len(),
        });
    }
    if table.ids.is_empty() {
        return Err(EnsembleError::Misaligned("prediction sets are empty".into()));
    }
    let gold = table.align_gold(gold)?;
    let candidates: Vec<EnsembleConfig> = subsets(&strategies, min_size)
        .into_iter()
        .flat_map(|members| {
            space.thresholds.iter().map(move |t| EnsembleConfig {
                members: members.clone(),
                threshold: *t,
                tie_rule: space.tie_rule,
            })
        })
        .collect();
    let mut results = candidates
        .into_par_iter()
        .map(|config| {
            let (macro_f1, accuracy, confusion) = table.evaluate(&config, &gold)?;
            Ok(SearchResult {
                config,
                macro_f1,
                accuracy,
                confusion,
                holdout_macro_f1: None,
                holdout_accuracy: None,
            })
        })
        .collect::<Result<Vec<_>, EnsembleError>>()?;
    results.sort_by(rank_order);
    Ok(results)
}

/// Search on one labeled split and report each configuration's scores on a
/// second split next to its search scores.
pub fn search_with_holdout(
    table: &PredictionTable,
    gold: &[(String, Label)],
    holdout: &PredictionTable,
    holdout_gold: &[(String, Label)],
    space: &SearchSpace,
) -> Result<Vec<SearchResult>, EnsembleError> {
    let mut results = search(table, gold, space)?;
    let holdout_gold = holdout.align_gold(holdout_gold)?;
    for r in &mut results {
        let (f1, acc, _) = holdout.evaluate(&r.config, &holdout_gold)?;
        r.holdout_macro_f1 = Some(f1);
        r.holdout_accuracy = Some(acc);
    }
    Ok(results)
}
