//! Injector/detector co-evolution: an EXP3 bandit over patterns against a
//! logistic ranker over candidate sites.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{mine_sites, CandidateSite, FeatureVector, QueryConfig, FEATURE_WIDTH};
use crate::benchkit::{finish_attempt, AttemptRecord, BenchmarkItem, PreparedProject};
use crate::digest::derive_seed;
use crate::inject::catalog::PatternId;
use crate::inject::{
    complete, eligible_patterns, plan_site, select_site, InjectError, InjectionOutcome,
    InjectionPolicy, RuleBasedAgents,
};
use crate::lang::Program;
use crate::pov::FuzzConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 5,
            seed: 0,
        }
    }
}

/// Weight 0 multiplies the constant bias feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub weights: [f64; FEATURE_WIDTH],
    pub config: TrainConfig,
}

impl DetectorModel {
    pub fn zero(config: TrainConfig) -> DetectorModel {
        DetectorModel {
            weights: [0.0; FEATURE_WIDTH],
            config,
        }
    }

    pub fn margin(&self, x: &FeatureVector) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.margin(x))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSite {
    pub site: CandidateSite,
    pub score: f64,
}

/// Ranks every mined site by a score, highest first, ties by site id.
pub fn rank_by(program: &Program, score: impl Fn(&FeatureVector) -> f64) -> Vec<ScoredSite> {
    let config = QueryConfig {
        require_compatible: false,
        ..QueryConfig::default()
    };
    let mut out: Vec<ScoredSite> = mine_sites(program, &config)
        .into_iter()
        .map(|site| ScoredSite {
            score: score(&site.features),
            site,
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.site.site_id.cmp(&b.site.site_id))
    });
    out
}

pub fn detect(model: &DetectorModel, program: &Program) -> Vec<ScoredSite> {
    rank_by(program, |x| model.score(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: FeatureVector,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("training set needs at least one positive and one negative example")]
pub struct DegenerateCorpus;

/// Mean cross-entropy of the model over `examples`.
pub fn loss(model: &DetectorModel, examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let total: f64 = examples
        .iter()
        .map(|e| {
            let z = model.margin(&e.features);
            if e.label {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    total / examples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub model: DetectorModel,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Seeded-shuffle SGD on cross-entropy, starting from `model`.
pub fn train_detector(
    model: &DetectorModel,
    examples: &[Example],
) -> Result<Trained, DegenerateCorpus> {
    if !examples.iter().any(|e| e.label) || !examples.iter().any(|e| !e.label) {
        return Err(DegenerateCorpus);
    }
    let loss_before = loss(model, examples);
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(m.config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..m.config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let e = &examples[i];
            let err = m.score(&e.features) - if e.label { 1.0 } else { 0.0 };
            for (w, x) in m.weights.iter_mut().zip(&e.features) {
                *w -= m.config.learning_rate * err * x;
            }
        }
    }
    Ok(Trained {
        loss_after: loss(&m, examples),
        model: m,
        loss_before,
    })
}

/// Whether a mined site on the patched program is the item's injected site.
pub fn is_injected(item: &BenchmarkItem, site: &CandidateSite) -> bool {
    let t = &item.labels.injected_site;
    site.sink_file == t.file
        && site.sink_span.start_line == t.line
        && site.path.sink_kind == t.sink_kind
        && site.path.source_kind == t.source_kind
}

/// 1-based rank of the injected site under `model`, if it is mined at all.
pub fn injected_rank(model: &DetectorModel, item: &BenchmarkItem) -> Option<usize> {
    let program = item.patched_program().ok()?;
    detect(model, &program)
        .iter()
        .position(|s| is_injected(item, &s.site))
        .map(|i| i + 1)
}

/// Positive: every site matching the injection (several sources may reach
/// the injected sink); negatives: every other site on the patched program.
pub fn training_examples(items: &[BenchmarkItem]) -> Vec<Example> {
    let config = QueryConfig {
        require_compatible: false,
        ..QueryConfig::default()
    };
    let mut out = Vec::new();
    for item in items {
        let Ok(program) = item.patched_program() else {
            continue;
        };
        for s in mine_sites(&program, &config) {
            out.push(Example {
                features: s.features,
                label: is_injected(item, &s),
            });
        }
    }
    out
}

/// Fraction of items whose injected site ranks in the top `k`.
pub fn recall_at_k(model: &DetectorModel, items: &[BenchmarkItem], k: usize) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let hits = items
        .iter()
        .filter(|i| injected_rank(model, i).is_some_and(|r| r <= k))
        .count();
    hits as f64 / items.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub arms: Vec<PatternId>,
    pub weights: Vec<f64>,
    pub gamma: f64,
}

/// Weights are rescaled so the largest is 1 and floored here, which keeps
/// them positive and finite over arbitrarily long runs.
const WEIGHT_FLOOR: f64 = 1e-300;

impl PolicyState {
    pub fn new(arms: Vec<PatternId>, gamma: f64) -> PolicyState {
        PolicyState {
            weights: vec![1.0; arms.len()],
            arms,
            gamma,
        }
    }

    /// The EXP3 distribution over all arms.
    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.arms.len() as f64;
        let total: f64 = self.weights.iter().sum();
        self.weights
            .iter()
            .map(|w| (1.0 - self.gamma) * w / total + self.gamma / k)
            .collect()
    }

    /// The distribution restricted to `eligible` and renormalized, in arm
    /// order.
    pub fn restricted(&self, eligible: &[PatternId]) -> Vec<(PatternId, f64)> {
        let p = self.probabilities();
        let picked: Vec<(PatternId, f64)> = self
            .arms
            .iter()
            .zip(p)
            .filter(|(a, _)| eligible.contains(a))
            .map(|(a, p)| (*a, p))
            .collect();
        let total: f64 = picked.iter().map(|(_, p)| p).sum();
        picked.into_iter().map(|(a, p)| (a, p / total)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmChoice {
    pub arm: PatternId,
    pub probability: f64,
}

/// Samples from the restricted distribution. `None` when no eligible arm is
/// one of the policy's arms.
pub fn policy_sample(state: &PolicyState, eligible: &[PatternId], seed: u64) -> Option<ArmChoice> {
    let dist = state.restricted(eligible);
    if dist.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(arm, probability) in &dist {
        acc += probability;
        if u < acc {
            return Some(ArmChoice { arm, probability });
        }
    }
    let &(arm, probability) = dist.last().expect("non-empty");
    Some(ArmChoice { arm, probability })
}

/// `w ← w · exp(γ · (reward / p) / K)` for the chosen arm.
pub fn policy_update(state: &PolicyState, choice: ArmChoice, reward: f64) -> PolicyState {
    let mut next = state.clone();
    let Some(i) = next.arms.iter().position(|a| *a == choice.arm) else {
        return next;
    };
    let k = next.arms.len() as f64;
    let estimate = reward / choice.probability;
    next.weights[i] *= (next.gamma * estimate / k).exp();
    let max = next
        .weights
        .iter()
        .copied()
        .fold(f64::MIN_POSITIVE, f64::max);
    if max > 1.0 {
        for w in &mut next.weights {
            *w = (*w / max).max(WEIGHT_FLOOR);
        }
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoevolveConfig {
    pub rounds: usize,
    pub per_round: usize,
    pub k: usize,
    pub gamma: f64,
    pub seed: u64,
    pub policy: InjectionPolicy,
    pub fuzz: FuzzConfig,
    pub train: TrainConfig,
    /// Off for the stationary ablation.
    pub update_policy: bool,
    pub train_detector: bool,
}

impl Default for CoevolveConfig {
    fn default() -> Self {
        CoevolveConfig {
            rounds: 5,
            per_round: 20,
            k: 5,
            gamma: 0.1,
            seed: 0,
            policy: InjectionPolicy::default(),
            fuzz: FuzzConfig {
                budget: 1000,
                ..FuzzConfig::default()
            },
            train: TrainConfig::default(),
            update_policy: true,
            train_detector: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub attempts: usize,
    pub items_generated: usize,
    /// `None` when the round produced no items.
    pub recall_at_k: Option<f64>,
    pub evasion_rate: Option<f64>,
    pub arm_counts: BTreeMap<String, usize>,
    pub arm_probabilities: BTreeMap<String, f64>,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoevolveReport {
    pub config: CoevolveConfig,
    pub rounds: Vec<RoundReport>,
    pub final_model: DetectorModel,
    pub final_policy: PolicyState,
}

#[derive(Debug, Clone)]
pub struct CoevolveRun {
    pub report: CoevolveReport,
    pub items: Vec<BenchmarkItem>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoevolveError {
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("no projects")]
    NoProjects,
    #[error("round 1 produced no items: {0}")]
    Degenerate(#[from] DegenerateCorpus),
}

/// One attempt with the arm chosen by the bandit. Returns the record, the
/// item if any, and the arm choice if one was made.
fn bandit_attempt(
    project: &PreparedProject,
    index: usize,
    seed: u64,
    state: &PolicyState,
    config: &CoevolveConfig,
) -> (AttemptRecord, Option<BenchmarkItem>, Option<ArmChoice>) {
    let outcome_and_choice = || -> (InjectionOutcome, Option<ArmChoice>) {
        let Some(site) = select_site(&project.baseline, &config.policy, seed) else {
            return (InjectionOutcome::NoSite, None);
        };
        let eligible = eligible_patterns(site, &config.policy);
        let Some(choice) = policy_sample(state, &eligible, derive_seed(seed, "arm", 0)) else {
            return (InjectionOutcome::NoSite, None);
        };
        let program = match project.snapshot.program() {
            Ok(p) => p,
            Err(e) => {
                return (
                    InjectionOutcome::TransformFailed {
                        reason: e.to_string(),
                    },
                    Some(choice),
                )
            }
        };
        let outcome = match plan_site(&program, site, choice.arm, seed) {
            Ok(plan) => complete(
                &RuleBasedAgents,
                &project.snapshot,
                &project.baseline,
                &project.suite,
                &config.policy,
                plan,
            ),
            Err(InjectError::NoSite) => InjectionOutcome::NoSite,
            Err(InjectError::Transform(reason)) => InjectionOutcome::TransformFailed { reason },
        };
        (outcome, Some(choice))
    };
    let (outcome, choice) = outcome_and_choice();
    let r = finish_attempt(project, index, seed, outcome, &config.policy, &config.fuzz);
    (r.record, r.item, choice)
}

/// Runs the loop. Per round: the injector picks a pattern per attempt, the
/// current detector is scored on the new items, the injector is rewarded per
/// evading item and the detector is retrained on everything so far.
pub fn coevolve(
    projects: &[PreparedProject],
    config: &CoevolveConfig,
) -> Result<CoevolveRun, CoevolveError> {
    if config.rounds == 0 {
        return Err(CoevolveError::NoRounds);
    }
    if projects.is_empty() {
        return Err(CoevolveError::NoProjects);
    }
    let mut state = PolicyState::new(config.policy.allowed_patterns.clone(), config.gamma);
    let mut model = DetectorModel::zero(TrainConfig {
        seed: derive_seed(config.seed, "train", 0),
        ..config.train.clone()
    });
    let mut corpus: Vec<BenchmarkItem> = Vec::new();
    let mut rounds = Vec::new();
    for round in 0..config.rounds {
        let arm_probabilities = state
            .arms
            .iter()
            .zip(state.probabilities())
            .map(|(a, p)| (a.name().to_string(), p))
            .collect();
        let mut arm_counts: BTreeMap<String, usize> = state
            .arms
            .iter()
            .map(|a| (a.name().to_string(), 0))
            .collect();
        let mut new_items: Vec<(BenchmarkItem, ArmChoice)> = Vec::new();
        for j in 0..config.per_round {
            let index = round * config.per_round + j;
            let seed = derive_seed(config.seed, "attempt", index as u64);
            let project = &projects[index % projects.len()];
            let (_, item, choice) = bandit_attempt(project, index, seed, &state, config);
            if let (Some(item), Some(choice)) = (item, choice) {
                let duplicate = corpus
                    .iter()
                    .chain(new_items.iter().map(|(i, _)| i))
                    .any(|i| i.item_id == item.item_id);
                if !duplicate {
                    *arm_counts.entry(choice.arm.name().to_string()).or_default() += 1;
                    new_items.push((item, choice));
                }
            }
        }
        let mut hits = 0;
        for (item, choice) in &new_items {
            let detected = injected_rank(&model, item).is_some_and(|r| r <= config.k);
            if detected {
                hits += 1;
            }
            if config.update_policy {
                state = policy_update(&state, *choice, if detected { 0.0 } else { 1.0 });
            }
        }
        let recall = (!new_items.is_empty()).then(|| hits as f64 / new_items.len() as f64);
        corpus.extend(new_items.iter().map(|(i, _)| i.clone()));
        let (mut loss_before, mut loss_after, mut note) = (None, None, None);
        if config.train_detector {
            match train_detector(&model, &training_examples(&corpus)) {
                Ok(t) => {
                    loss_before = Some(t.loss_before);
                    loss_after = Some(t.loss_after);
                    model = t.model;
                }
                Err(e) if round == 0 => return Err(e.into()),
                Err(e) => note = Some(e.to_string()),
            }
        }
        if new_items.is_empty() {
            note.get_or_insert_with(|| "no items".to_string());
        }
        rounds.push(RoundReport {
            round,
            attempts: config.per_round,
            items_generated: new_items.len(),
            recall_at_k: recall,
            evasion_rate: recall.map(|r| 1.0 - r),
            arm_counts,
            arm_probabilities,
            loss_before,
            loss_after,
            note,
        });
    }
    Ok(CoevolveRun {
        report: CoevolveReport {
            config: config.clone(),
            rounds,
            final_model: model,
            final_policy: state,
        },
        items: corpus,
    })
}

/// Stationary ablation: recall@k of the zero-weight detector and of a
/// detector trained on `train` items, both measured on `held_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub untrained_recall: f64,
    pub trained_recall: f64,
    pub loss_before: f64,
    pub loss_after: f64,
}

pub fn stationary_ablation(
    train: &[BenchmarkItem],
    held_out: &[BenchmarkItem],
    k: usize,
    config: TrainConfig,
) -> Result<AblationResult, DegenerateCorpus> {
    let zero = DetectorModel::zero(config);
    let trained = train_detector(&zero, &training_examples(train))?;
    Ok(AblationResult {
        untrained_recall: recall_at_k(&zero, held_out, k),
        trained_recall: recall_at_k(&trained.model, held_out, k),
        loss_before: trained.loss_before,
        loss_after: trained.loss_after,
    })
}
