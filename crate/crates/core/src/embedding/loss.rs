//! The joint objective
//!
//! ```text
//! mean_L softplus(-y F)  +  1/|F| Σ_f ( L_dc(f) + L_rc(f) )  +  μ ‖Θ_batch‖²
//! L_dc(f) = -mean_{C_f} (S_i - 0.5)²      L_rc(f) = (mean_{C_f} S_i - c_f)²
//! ```
//!
//! with `S_i = σ(F(conclusion_i))`, `|F|` the number of rules with a
//! non-empty group, and the `l2` term taken over the rows the batch touches.
//! In the all-positive and weighted label modes the conclusions join the
//! logistic term (target 1 or `c_f`) and the rule terms are dropped.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scoring::{sigmoid, softplus, SIGMOID_CLAMP};
use super::{ConclusionLabelMode, EmbeddingModel, LabeledExample, ScorerKind};
use crate::kg::{EntityId, RelationId, Triple};
use crate::rules::HornRule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub l2: f64,
    pub dc_loss: bool,
    pub rc_loss: bool,
    pub label_mode: ConclusionLabelMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            l2: 0.0,
            dc_loss: true,
            rc_loss: true,
            label_mode: ConclusionLabelMode::Iterlogic,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub logistic: f64,
    pub dc: f64,
    pub rc: f64,
    pub l2: f64,
    pub total: f64,
}

/// Sparse gradient: one `[re.., im..]` row per touched entity or relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    dim: usize,
    pub entity: HashMap<EntityId, Vec<f64>>,
    pub relation: HashMap<RelationId, Vec<f64>>,
}

impl Gradients {
    pub fn new(dim: usize) -> Self {
        Gradients {
            dim,
            entity: HashMap::new(),
            relation: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_row(&self, id: EntityId) -> Option<&[f64]> {
        self.entity.get(&id).map(Vec::as_slice)
    }

    pub fn relation_row(&self, id: RelationId) -> Option<&[f64]> {
        self.relation.get(&id).map(Vec::as_slice)
    }

    fn entity_mut(&mut self, id: EntityId) -> &mut Vec<f64> {
        let d = self.dim;
        self.entity.entry(id).or_insert_with(|| vec![0.0; 2 * d])
    }

    fn relation_mut(&mut self, id: RelationId) -> &mut Vec<f64> {
        let d = self.dim;
        self.relation.entry(id).or_insert_with(|| vec![0.0; 2 * d])
    }

    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.entity {
            add_into(self.entity_mut(id), &g);
        }
        for (id, g) in other.relation {
            add_into(self.relation_mut(id), &g);
        }
    }

    fn add_score_gradient(
        &mut self,
        model: &EmbeddingModel,
        t: &Triple,
        coeff: f64,
        scratch: &mut Scratch,
    ) {
        scratch.clear();
        model.accumulate_score_gradient(
            t,
            coeff,
            &mut scratch.head,
            &mut scratch.relation,
            &mut scratch.tail,
        );
        add_into(self.entity_mut(t.head), &scratch.head);
        add_into(self.entity_mut(t.tail), &scratch.tail);
        add_into(self.relation_mut(t.relation), &scratch.relation);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

struct Scratch {
    head: Vec<f64>,
    relation: Vec<f64>,
    tail: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            head: vec![0.0; 2 * dim],
            relation: vec![0.0; 2 * dim],
            tail: vec![0.0; 2 * dim],
        }
    }

    fn clear(&mut self) {
        self.head.fill(0.0);
        self.relation.fill(0.0);
        self.tail.fill(0.0);
    }
}

/// A logistic term with target probability `target` (1 for positives, 0 for
/// negatives, `c_f` for soft labels): `target·sp(-F) + (1-target)·sp(F)`.
#[derive(Debug, Clone, Copy)]
struct Target {
    triple: Triple,
    target: f64,
}

fn target_loss(score: f64, target: f64) -> f64 {
    if target == 1.0 {
        softplus(-score)
    } else if target == 0.0 {
        softplus(score)
    } else {
        target * softplus(-score) + (1.0 - target) * softplus(score)
    }
}

/// Mean `log(1 + exp(-y·F))` over the batch.
pub fn logistic_loss(model: &EmbeddingModel, batch: &[LabeledExample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch
        .iter()
        .map(|e| softplus(-e.sign() * model.score(&e.triple)))
        .sum::<f64>()
        / batch.len() as f64
}

/// `S_i = σ(F)` for every conclusion, grouped like the input.
pub fn conclusion_scores(model: &EmbeddingModel, groups: &[Vec<Triple>]) -> Vec<Vec<f64>> {
    groups
        .iter()
        .map(|g| g.iter().map(|t| model.probability(t)).collect())
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average over non-empty groups of `-mean (S - 0.5)²`.
pub fn dc_loss(scores: &[Vec<f64>]) -> f64 {
    let active: Vec<&Vec<f64>> = scores.iter().filter(|s| !s.is_empty()).collect();
    if active.is_empty() {
        return 0.0;
    }
    active
        .iter()
        .map(|s| -s.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / s.len() as f64)
        .sum::<f64>()
        / active.len() as f64
}

/// Average over non-empty groups of `(mean S - c_f)²`.
pub fn rc_loss(scores: &[Vec<f64>], rules: &[HornRule]) -> f64 {
    let active: Vec<(&Vec<f64>, &HornRule)> = scores
        .iter()
        .zip(rules)
        .filter(|(s, _)| !s.is_empty())
        .collect();
    if active.is_empty() {
        return 0.0;
    }
    active
        .iter()
        .map(|(s, r)| (mean(s) - r.confidence).powi(2))
        .sum::<f64>()
        / active.len() as f64
}

struct Prepared<'a> {
    targets: Vec<Target>,
    rule_groups: Vec<(&'a [Triple], f64)>,
}

fn prepare<'a>(
    examples: &[LabeledExample],
    conclusions: &'a [Vec<Triple>],
    rules: &[HornRule],
    config: &ObjectiveConfig,
) -> Prepared<'a> {
    let mut targets: Vec<Target> = examples
        .iter()
        .map(|e| Target {
            triple: e.triple,
            target: if e.label >= 0 { 1.0 } else { 0.0 },
        })
        .collect();
    let mut rule_groups = Vec::new();
    for (group, rule) in conclusions.iter().zip(rules) {
        if group.is_empty() {
            continue;
        }
        match config.label_mode {
            ConclusionLabelMode::Iterlogic => rule_groups.push((group.as_slice(), rule.confidence)),
            ConclusionLabelMode::AllPositive => {
                targets.extend(group.iter().map(|&triple| Target {
                    triple,
                    target: 1.0,
                }))
            }
            ConclusionLabelMode::Weighted => targets.extend(group.iter().map(|&triple| Target {
                triple,
                target: rule.confidence,
            })),
        }
    }
    Prepared {
        targets,
        rule_groups,
    }
}

/// Sum over `targets` of the loss, with `norm`-scaled gradients if requested.
fn logistic_part(
    model: &EmbeddingModel,
    targets: &[Target],
    norm: f64,
    mut grads: Option<&mut Gradients>,
) -> f64 {
    let mut scratch = Scratch::new(model.dim);
    let mut total = 0.0;
    for t in targets {
        let f = model.score(&t.triple);
        total += target_loss(f, t.target);
        if let Some(g) = grads.as_deref_mut() {
            // d/dF [target·sp(-F) + (1-target)·sp(F)] = σ(F) - target.
            let coeff = norm * (sigmoid(f) - t.target);
            g.add_score_gradient(model, &t.triple, coeff, &mut scratch);
        }
    }
    total
}

fn rule_part(
    model: &EmbeddingModel,
    groups: &[(&[Triple], f64)],
    config: &ObjectiveConfig,
    mut grads: Option<&mut Gradients>,
) -> (f64, f64) {
    if groups.is_empty() || !(config.dc_loss || config.rc_loss) {
        return (0.0, 0.0);
    }
    let per_rule = 1.0 / groups.len() as f64;
    let mut scratch = Scratch::new(model.dim);
    let (mut dc, mut rc) = (0.0, 0.0);
    for &(group, confidence) in groups {
        let n = group.len() as f64;
        let raw: Vec<f64> = group.iter().map(|t| model.score(t)).collect();
        let s: Vec<f64> = raw
            .iter()
            .map(|f| sigmoid(f.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)))
            .collect();
        let m = mean(&s);
        if config.dc_loss {
            dc -= per_rule * s.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / n;
        }
        if config.rc_loss {
            rc += per_rule * (m - confidence).powi(2);
        }
        if let Some(g) = grads.as_deref_mut() {
            for ((t, &f), &si) in group.iter().zip(&raw).zip(&s) {
                let ds_df = if f.abs() < SIGMOID_CLAMP {
                    si * (1.0 - si)
                } else {
                    0.0
                };
                let mut dl_ds = 0.0;
                if config.dc_loss {
                    dl_ds -= 2.0 * (si - 0.5) / n;
                }
                if config.rc_loss {
                    dl_ds += 2.0 * (m - confidence) / n;
                }
                let coeff = per_rule * dl_ds * ds_df;
                if coeff != 0.0 {
                    g.add_score_gradient(model, t, coeff, &mut scratch);
                }
            }
        }
    }
    (dc, rc)
}

/// `μ Σ ‖row‖²` over touched rows (entities always, relations for the
/// bilinear scorer only: rotation phases are not penalised).
fn l2_part(
    model: &EmbeddingModel,
    prepared: &Prepared<'_>,
    mu: f64,
    mut grads: Option<&mut Gradients>,
) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let mut entities = BTreeSet::new();
    let mut relations = BTreeSet::new();
    let all = prepared
        .targets
        .iter()
        .map(|t| &t.triple)
        .chain(prepared.rule_groups.iter().flat_map(|(g, _)| g.iter()));
    for t in all {
        entities.insert(t.head);
        entities.insert(t.tail);
        relations.insert(t.relation);
    }
    let d = model.dim;
    let mut total = 0.0;
    for e in entities {
        let (re, im) = (
            model.entity_re.row(e.index()),
            model.entity_im.row(e.index()),
        );
        total +=
            mu * (re.iter().map(|v| v * v).sum::<f64>() + im.iter().map(|v| v * v).sum::<f64>());
        if let Some(g) = grads.as_deref_mut() {
            let row = g.entity_mut(e);
            for k in 0..d {
                row[k] += 2.0 * mu * re[k];
                row[d + k] += 2.0 * mu * im[k];
            }
        }
    }
    if model.scorer == ScorerKind::Complex {
        for r in relations {
            let (re, im) = (
                model.relation_re.row(r.index()),
                model.relation_im.row(r.index()),
            );
            total += mu
                * (re.iter().map(|v| v * v).sum::<f64>() + im.iter().map(|v| v * v).sum::<f64>());
            if let Some(g) = grads.as_deref_mut() {
                let row = g.relation_mut(r);
                for k in 0..d {
                    row[k] += 2.0 * mu * re[k];
                    row[d + k] += 2.0 * mu * im[k];
                }
            }
        }
    }
    total
}

fn objective(
    model: &EmbeddingModel,
    examples: &[LabeledExample],
    conclusions: &[Vec<Triple>],
    rules: &[HornRule],
    config: &ObjectiveConfig,
    workers: usize,
    mut grads: Option<&mut Gradients>,
) -> LossTerms {
    let prepared = prepare(examples, conclusions, rules, config);
    let norm = if prepared.targets.is_empty() {
        0.0
    } else {
        1.0 / prepared.targets.len() as f64
    };

    let summed = if workers > 1 && prepared.targets.len() >= 2 * workers {
        let chunk = prepared.targets.len().div_ceil(workers);
        let want_grads = grads.is_some();
        let parts: Vec<(f64, Option<Gradients>)> = prepared
            .targets
            .par_chunks(chunk)
            .map(|part| {
                let mut g = want_grads.then(|| Gradients::new(model.dim));
                let loss = logistic_part(model, part, norm, g.as_mut());
                (loss, g)
            })
            .collect();
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            if let (Some(dst), Some(g)) = (grads.as_deref_mut(), g) {
                dst.merge(g);
            }
        }
        loss
    } else {
        logistic_part(model, &prepared.targets, norm, grads.as_deref_mut())
    };
    let logistic = if prepared.targets.is_empty() {
        0.0
    } else {
        summed / prepared.targets.len() as f64
    };
    let (dc, rc) = rule_part(model, &prepared.rule_groups, config, grads.as_deref_mut());
    let l2 = l2_part(model, &prepared, config.l2, grads);
    LossTerms {
        logistic,
        dc,
        rc,
        l2,
        total: logistic + dc + rc + l2,
    }
}

/// Value of the joint objective on one batch.
pub fn total_objective(
    model: &EmbeddingModel,
    examples: &[LabeledExample],
    conclusions: &[Vec<Triple>],
    rules: &[HornRule],
    config: &ObjectiveConfig,
) -> LossTerms {
    objective(model, examples, conclusions, rules, config, 1, None)
}

/// Analytic gradient of [`total_objective`]; rows the batch does not touch
/// are absent (zero).
pub fn gradients(
    model: &EmbeddingModel,
    examples: &[LabeledExample],
    conclusions: &[Vec<Triple>],
    rules: &[HornRule],
    config: &ObjectiveConfig,
) -> (LossTerms, Gradients) {
    let mut g = Gradients::new(model.dim);
    let terms = objective(model, examples, conclusions, rules, config, 1, Some(&mut g));
    (terms, g)
}

/// [`gradients`] with the logistic term split over `workers` threads. The
/// split is fixed by the batch size, so results are reproducible.
pub(crate) fn gradients_parallel(
    model: &EmbeddingModel,
    examples: &[LabeledExample],
    conclusions: &[Vec<Triple>],
    rules: &[HornRule],
    config: &ObjectiveConfig,
    workers: usize,
) -> (LossTerms, Gradients) {
    let mut g = Gradients::new(model.dim);
    let terms = objective(
        model,
        examples,
        conclusions,
        rules,
        config,
        workers,
        Some(&mut g),
    );
    (terms, g)
}
