//! The iterative training loop.
//!
//! For epochs `n = 1..=N`: ground the rules against the current graph when
//! `n` is a multiple of `k = ⌊N/M⌋` (so the first `k - 1` epochs see triples
//! only), run one pass of minibatch updates of the joint objective, then
//! promote the conclusions the model is sure about into the graph. Promoted
//! conclusions stay in their rule's group, marked accepted, so the rule
//! losses keep seeing everything a rule has derived.
//!
//! Every epoch draws from its own seeded stream, so a run resumed from a
//! checkpoint continues exactly as the uninterrupted run would have.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    gradients, gradients_parallel, load_checkpoint, sample_negatives, save_checkpoint, AdaGrad,
    ConclusionLabelMode, EmbeddingModel, LabeledExample, LossTerms, PromotionPolicy,
    TrainingConfig, UpdateMode,
};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::rules::{ground_rules, ConclusionSet, HornRule};

/// Named configurations of the method and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoNne,
    NoL2,
    NoIterative,
    NoDc,
    NoRc,
    /// No iteration and neither rule loss.
    NoIterativeDcRc,
    AllPositive,
    Weighted,
    TopN,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::NoNne,
        Variant::NoL2,
        Variant::NoIterative,
        Variant::NoDc,
        Variant::NoRc,
        Variant::NoIterativeDcRc,
        Variant::AllPositive,
        Variant::Weighted,
        Variant::TopN,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNne => "no-nne",
            Variant::NoL2 => "no-l2",
            Variant::NoIterative => "no-iterative",
            Variant::NoDc => "no-dc",
            Variant::NoRc => "no-rc",
            Variant::NoIterativeDcRc => "no-iterative-dc-rc",
            Variant::AllPositive => "all-positive",
            Variant::Weighted => "weighted",
            Variant::TopN => "top-n",
        }
    }

    /// `config` with this variant's switches applied.
    pub fn apply(self, config: &TrainingConfig) -> TrainingConfig {
        let mut c = config.clone();
        match self {
            Variant::Full => {}
            Variant::NoNne => c.nne = false,
            Variant::NoL2 => c.l2 = 0.0,
            Variant::NoIterative => c.iterative = false,
            Variant::NoDc => c.dc_loss = false,
            Variant::NoRc => c.rc_loss = false,
            Variant::NoIterativeDcRc => {
                c.iterative = false;
                c.dc_loss = false;
                c.rc_loss = false;
            }
            Variant::AllPositive => c.label_mode = ConclusionLabelMode::AllPositive,
            Variant::Weighted => c.label_mode = ConclusionLabelMode::Weighted,
            Variant::TopN => c.promotion = PromotionPolicy::TopN,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub grounded: bool,
    pub steps: usize,
    /// Loss components averaged over the epoch's steps.
    pub loss: LossTerms,
    pub kg_triples: usize,
    pub conclusions: usize,
    pub candidates: usize,
    pub promoted: usize,
    pub promoted_total: usize,
    /// Mean over non-empty groups of `|mean S - c_f|` after the epoch.
    pub confidence_gap: f64,
}

/// Everything the loop carries from one epoch to the next.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationState {
    /// Last completed epoch (0 before training).
    pub epoch: usize,
    /// Conclusions of the current round, with accepted ones marked.
    pub conclusions: ConclusionSet,
    /// Every promoted triple, in promotion order.
    pub promoted: Vec<Triple>,
    pub log: Vec<EpochMetrics>,
}

impl IterationState {
    pub fn promoted_set(&self) -> HashSet<Triple> {
        self.promoted.iter().copied().collect()
    }
}

pub struct TrainingOutcome {
    pub model: EmbeddingModel,
    pub optimizer: AdaGrad,
    /// Training graph plus every promoted conclusion.
    pub graph: KnowledgeGraph,
    pub state: IterationState,
}

/// Hooks and persistence for [`run_training_with`].
#[derive(Default)]
pub struct TrainingOptions<'a> {
    /// Where periodic checkpoints go (`config.checkpoint_every`).
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `checkpoint_dir` if there is one.
    pub resume: bool,
    /// Stop after this epoch even if `config.epochs` is larger.
    pub stop_after: Option<usize>,
    pub on_epoch: Option<Box<dyn FnMut(&EpochMetrics) + 'a>>,
}

/// Epochs at which the rules are (re-)grounded; without iteration only the
/// first of them.
pub fn is_grounding_epoch(epoch: usize, config: &TrainingConfig) -> bool {
    let period = (config.epochs / config.iterations).max(1);
    if config.iterative {
        epoch % period == 0
    } else {
        epoch == period
    }
}

/// Last epoch of the grounding round that contains `epoch`.
fn is_round_end(epoch: usize, config: &TrainingConfig) -> bool {
    epoch == config.epochs || is_grounding_epoch(epoch + 1, config)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Candidates with `σ(F) >= threshold`, removed from the candidate pool.
/// Triples already in `kg` are never returned.
pub fn filter_conclusions(
    model: &EmbeddingModel,
    conclusions: &mut ConclusionSet,
    kg: &KnowledgeGraph,
    threshold: f64,
) -> Vec<Triple> {
    let chosen: Vec<Triple> = conclusions
        .candidates()
        .filter(|t| !kg.contains(t) && model.probability(t) >= threshold)
        .copied()
        .collect();
    for t in &chosen {
        conclusions.accept(t);
    }
    chosen
}

/// The `round(|C_f| * c_f)` best-scoring conclusions of every rule.
pub fn top_n_conclusions(
    model: &EmbeddingModel,
    conclusions: &mut ConclusionSet,
    rules: &[HornRule],
    kg: &KnowledgeGraph,
) -> Vec<Triple> {
    let mut chosen = Vec::new();
    let mut seen = HashSet::new();
    for (group, rule) in conclusions.groups().iter().zip(rules) {
        let n = (group.len() as f64 * rule.confidence).round() as usize;
        let mut scored: Vec<(f64, Triple)> = group.iter().map(|t| (model.score(t), *t)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, t) in scored.iter().take(n) {
            if !kg.contains(&t) && seen.insert(t) {
                chosen.push(t);
            }
        }
    }
    chosen.retain(|t| conclusions.state(t) == Some(crate::rules::ConclusionState::Candidate));
    for t in &chosen {
        conclusions.accept(t);
    }
    chosen
}

/// Mean `σ(F)` of each rule's group (`None` for empty groups).
pub fn mean_conclusion_scores(model: &EmbeddingModel, groups: &[Vec<Triple>]) -> Vec<Option<f64>> {
    groups
        .iter()
        .map(|g| {
            (!g.is_empty())
                .then(|| g.iter().map(|t| model.probability(t)).sum::<f64>() / g.len() as f64)
        })
        .collect()
}

fn confidence_gap(model: &EmbeddingModel, groups: &[Vec<Triple>], rules: &[HornRule]) -> f64 {
    let gaps: Vec<f64> = mean_conclusion_scores(model, groups)
        .into_iter()
        .zip(rules)
        .filter_map(|(m, r)| m.map(|m| (m - r.confidence).abs()))
        .collect();
    if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    }
}

pub fn run_training(
    kg: &KnowledgeGraph,
    rules: &[HornRule],
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    run_training_with(kg, rules, config, TrainingOptions::default())
}

pub fn run_training_with(
    kg: &KnowledgeGraph,
    rules: &[HornRule],
    config: &TrainingConfig,
    mut options: TrainingOptions<'_>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    for rule in rules {
        for r in rule.relations() {
            kg.check_relation(r)?;
        }
    }

    let resumed = match (&options.checkpoint_dir, options.resume) {
        (Some(dir), true) if dir.join(STATE_FILE).exists() => {
            Some(load_training_checkpoint(dir, kg, rules)?)
        }
        _ => None,
    };
    let (mut model, mut optimizer, mut graph, mut state) = match resumed {
        Some(r) => {
            log::info!("resuming after epoch {}", r.3.epoch);
            r
        }
        None => {
            let mut init = epoch_rng(config.seed, 0);
            let model =
                EmbeddingModel::random(kg.entity_count(), kg.relation_count(), config, &mut init);
            let optimizer = AdaGrad::new(&model, config.learning_rate);
            let state = IterationState {
                conclusions: ConclusionSet::empty(rules.len()),
                ..Default::default()
            };
            (model, optimizer, kg.clone(), state)
        }
    };

    let objective = config.objective();
    let last = options
        .stop_after
        .unwrap_or(config.epochs)
        .min(config.epochs);
    for epoch in state.epoch + 1..=last {
        let mut rng = epoch_rng(config.seed, epoch);
        let grounded = !rules.is_empty() && is_grounding_epoch(epoch, config);
        if grounded {
            let mut fresh = ground_rules(&graph, rules)?;
            fresh.carry_accepted(&state.conclusions);
            state.conclusions = fresh;
            log::debug!(
                "epoch {epoch}: grounded {} conclusions",
                state.conclusions.len()
            );
        }

        let mut positives: Vec<Triple> = graph.triples().to_vec();
        positives.shuffle(&mut rng);
        let mut pool: Vec<(usize, Triple)> = state
            .conclusions
            .groups()
            .iter()
            .enumerate()
            .flat_map(|(rule, g)| g.iter().map(move |t| (rule, *t)))
            .collect();
        pool.shuffle(&mut rng);

        let steps = positives.len().div_ceil(config.batch_size).max(1);
        let mut totals = LossTerms::default();
        let mut cursor = 0usize;
        for step in 0..steps {
            let lo = step * positives.len() / steps;
            let hi = (step + 1) * positives.len() / steps;
            let batch = &positives[lo..hi];
            let mut examples = Vec::with_capacity(batch.len() * (1 + config.negatives));
            for t in batch {
                examples.push(LabeledExample::positive(*t));
                for n in sample_negatives(&graph, t, config.negatives, &mut rng) {
                    examples.push(LabeledExample::negative(n));
                }
            }

            let mut groups = vec![Vec::new(); rules.len()];
            if !pool.is_empty() {
                let take = match config.conclusion_fraction {
                    None => (step + 1) * pool.len() / steps - step * pool.len() / steps,
                    Some(f) => ((batch.len() as f64) * f / (1.0 - f)).round() as usize,
                };
                for _ in 0..take {
                    let (rule, t) = pool[cursor % pool.len()];
                    groups[rule].push(t);
                    cursor += 1;
                }
            }

            let (terms, grads) = match config.update_mode {
                UpdateMode::Deterministic => {
                    gradients(&model, &examples, &groups, rules, &objective)
                }
                UpdateMode::Parallel => gradients_parallel(
                    &model,
                    &examples,
                    &groups,
                    rules,
                    &objective,
                    config.workers,
                ),
            };
            optimizer.step(&mut model, &grads, config.nne);
            totals.logistic += terms.logistic;
            totals.dc += terms.dc;
            totals.rc += terms.rc;
            totals.l2 += terms.l2;
            totals.total += terms.total;
        }
        if !model.is_finite() {
            return Err(Error::Config(format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        let scale = 1.0 / steps as f64;
        let loss = LossTerms {
            logistic: totals.logistic * scale,
            dc: totals.dc * scale,
            rc: totals.rc * scale,
            l2: totals.l2 * scale,
            total: totals.total * scale,
        };

        let promoted = if !config.iterative {
            Vec::new()
        } else {
            match config.promotion {
                PromotionPolicy::Threshold => filter_conclusions(
                    &model,
                    &mut state.conclusions,
                    &graph,
                    config.acceptance_threshold,
                ),
                PromotionPolicy::TopN if is_round_end(epoch, config) => {
                    top_n_conclusions(&model, &mut state.conclusions, rules, &graph)
                }
                PromotionPolicy::TopN => Vec::new(),
            }
        };
        graph.add_triples(promoted.iter().copied())?;
        state.promoted.extend_from_slice(&promoted);
        state.epoch = epoch;

        let metrics = EpochMetrics {
            epoch,
            grounded,
            steps,
            loss,
            kg_triples: graph.len(),
            conclusions: state.conclusions.len(),
            candidates: state.conclusions.candidate_count(),
            promoted: promoted.len(),
            promoted_total: state.promoted.len(),
            confidence_gap: confidence_gap(&model, state.conclusions.groups(), rules),
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} promoted {} candidates {}",
            metrics.loss.total,
            metrics.promoted,
            metrics.candidates
        );
        if let Some(hook) = options.on_epoch.as_mut() {
            hook(&metrics);
        }
        state.log.push(metrics);

        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0
                && (epoch % config.checkpoint_every == 0 || epoch == last)
            {
                save_training_checkpoint(dir, &model, &optimizer, &state)?;
            }
        }
    }

    Ok(TrainingOutcome {
        model,
        optimizer,
        graph,
        state,
    })
}

/// One JSON object per line.
pub fn write_epoch_log<W: Write>(log: &[EpochMetrics], mut out: W) -> Result<()> {
    for m in log {
        let line = serde_json::to_string(m).map_err(|e| Error::Checkpoint(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<epoch log>", e))?;
    }
    Ok(())
}

pub fn read_epoch_log(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse("<epoch log>", i + 1, e.to_string()))
        })
        .collect()
}

pub const MODEL_FILE: &str = "model.bin";
pub const STATE_FILE: &str = "state.json";

#[derive(Serialize, Deserialize)]
struct StateFile {
    epoch: usize,
    promoted: Vec<Triple>,
    groups: Vec<Vec<Triple>>,
    accepted: Vec<Triple>,
    log: Vec<EpochMetrics>,
}

/// Writes `model.bin` (model and optimizer) and `state.json` into `dir`.
pub fn save_training_checkpoint(
    dir: &Path,
    model: &EmbeddingModel,
    optimizer: &AdaGrad,
    state: &IterationState,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&dir.join(MODEL_FILE), model, Some(optimizer))?;
    let file = StateFile {
        epoch: state.epoch,
        promoted: state.promoted.clone(),
        groups: state.conclusions.groups().to_vec(),
        accepted: state.conclusions.accepted().copied().collect(),
        log: state.log.clone(),
    };
    let json = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let path = dir.join(STATE_FILE);
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

fn load_training_checkpoint(
    dir: &Path,
    kg: &KnowledgeGraph,
    rules: &[HornRule],
) -> Result<(EmbeddingModel, AdaGrad, KnowledgeGraph, IterationState)> {
    let (model, optimizer) = load_checkpoint(&dir.join(MODEL_FILE))?;
    let optimizer =
        optimizer.ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
    if model.entity_count() != kg.entity_count() || model.relation_count() != kg.relation_count() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entities and {} relations, the graph {} and {}",
            model.entity_count(),
            model.relation_count(),
            kg.entity_count(),
            kg.relation_count()
        )));
    }
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: StateFile =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.groups.len() != rules.len() && !(file.groups.is_empty() && rules.is_empty()) {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} rule groups for {} rules",
            file.groups.len(),
            rules.len()
        )));
    }
    let mut graph = kg.clone();
    graph.add_triples(file.promoted.iter().copied())?;
    let mut conclusions = ConclusionSet::from_groups(file.groups);
    for t in &file.accepted {
        conclusions.accept(t);
    }
    let state = IterationState {
        epoch: file.epoch,
        conclusions,
        promoted: file.promoted,
        log: file.log,
    };
    Ok((model, optimizer, graph, state))
}
