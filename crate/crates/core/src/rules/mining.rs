//! Exhaustive miner for closed rules of length ≤ 2.
//!
//! Statistics follow the AMIE definitions over distinct `(x, z)` bindings of
//! the conclusion's variables:
//!
//! * `support`: bindings where the premise and the conclusion both hold
//! * `body_count`: bindings where the premise holds
//! * `pca_body_count`: premise bindings whose subject (or, switched, object)
//!   already has some fact of the conclusion relation
//!
//! A binding whose only premise witnesses reuse the conclusion triple itself
//! (e.g. `r(y,x) => r(x,y)` at `x = y`) is not counted for that rule.
//!
//! Length-2 bodies are enumerated only when a head-first pass finds enough
//! supporting facts to pass `min_support`.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chain_rule, Atom, Dir, HornRule, Step};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceKind {
    Standard,
    #[default]
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaDirection {
    #[default]
    Subject,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub max_length: usize,
    pub min_confidence: f64,
    pub min_support: u64,
    pub confidence_kind: ConfidenceKind,
    pub pca_direction: PcaDirection,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            max_length: 2,
            min_confidence: 0.8,
            min_support: 2,
            confidence_kind: ConfidenceKind::Pca,
            pca_direction: PcaDirection::Subject,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.max_length) {
            return Err(Error::Config(format!(
                "max_length must be 1 or 2, got {}",
                self.max_length
            )));
        }
        if !(self.min_confidence > 0.0) || !self.min_confidence.is_finite() {
            return Err(Error::Config(format!(
                "min_confidence must be positive, got {}",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

/// Both confidence denominators for one rule shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleStatistics {
    pub premise: Vec<Atom>,
    pub conclusion: Atom,
    pub support: u64,
    pub body_count: u64,
    pub pca_body_count: u64,
}

impl RuleStatistics {
    pub fn standard_confidence(&self) -> f64 {
        ratio(self.support, self.body_count)
    }

    pub fn pca_confidence(&self) -> f64 {
        ratio(self.support, self.pca_body_count)
    }

    pub fn confidence(&self, kind: ConfidenceKind) -> f64 {
        match kind {
            ConfidenceKind::Standard => self.standard_confidence(),
            ConfidenceKind::Pca => self.pca_confidence(),
        }
    }

    pub fn to_rule(&self, kind: ConfidenceKind) -> Result<HornRule> {
        let body = match kind {
            ConfidenceKind::Standard => self.body_count,
            ConfidenceKind::Pca => self.pca_body_count,
        };
        HornRule::new(
            self.premise.clone(),
            self.conclusion,
            ratio(self.support, body),
            self.support,
            Some(body),
        )
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mines every closed rule of length ≤ `max_length` with at least
/// `min_support` (and at least one) supporting binding.
pub fn rule_statistics(
    kg: &KnowledgeGraph,
    max_length: usize,
    min_support: u64,
    direction: PcaDirection,
) -> Vec<RuleStatistics> {
    let min_support = min_support.max(1);
    let mut bodies: Vec<Vec<Step>> = Vec::new();
    if max_length >= 1 {
        for r in 0..kg.relation_count() as u32 {
            let relation = RelationId(r);
            if kg.pairs(relation).is_empty() {
                continue;
            }
            for dir in [Dir::Forward, Dir::Inverse] {
                bodies.push(vec![Step { relation, dir }]);
            }
        }
    }
    if max_length >= 2 {
        bodies.extend(
            length_two_candidates(kg, min_support)
                .into_iter()
                .map(|(a, b)| vec![a, b]),
        );
    }

    let mut stats: Vec<RuleStatistics> = bodies
        .par_iter()
        .flat_map_iter(|steps| body_statistics(kg, steps, min_support, direction))
        .collect();
    stats.sort_by(|a, b| {
        (a.premise.len(), &a.premise, a.conclusion).cmp(&(
            b.premise.len(),
            &b.premise,
            b.conclusion,
        ))
    });
    stats
}

/// Mines rules and keeps those passing the configured thresholds.
pub fn mine_rules(kg: &KnowledgeGraph, config: &MiningConfig) -> Result<Vec<HornRule>> {
    config.validate()?;
    rule_statistics(
        kg,
        config.max_length,
        config.min_support,
        config.pca_direction,
    )
    .iter()
    .filter(|s| s.confidence(config.confidence_kind) >= config.min_confidence)
    .map(|s| s.to_rule(config.confidence_kind))
    .collect()
}

/// Drops exact duplicates and every length-2 rule all of whose relations
/// already appear in some length-1 rule.
pub fn dedupe_rules(rules: &[HornRule]) -> Vec<HornRule> {
    let mut unique: Vec<&HornRule> = Vec::with_capacity(rules.len());
    for r in rules {
        if !unique.iter().any(|u| u.same_shape(r)) {
            unique.push(r);
        }
    }
    let short: HashSet<RelationId> = unique
        .iter()
        .filter(|r| r.len() == 1)
        .flat_map(|r| r.relations())
        .collect();
    unique
        .into_iter()
        .filter(|r| r.len() == 1 || !r.relations().all(|rel| short.contains(&rel)))
        .cloned()
        .collect()
}

/// Length-2 bodies that support at least one conclusion relation
/// `min_support` times, found by walking from each fact's head to its tail.
fn length_two_candidates(kg: &KnowledgeGraph, min_support: u64) -> Vec<(Step, Step)> {
    let mut adjacency: Vec<Vec<(Step, EntityId)>> = vec![Vec::new(); kg.entity_count()];
    for t in kg.triples() {
        adjacency[t.head.index()].push((
            Step {
                relation: t.relation,
                dir: Dir::Forward,
            },
            t.tail,
        ));
        adjacency[t.tail.index()].push((
            Step {
                relation: t.relation,
                dir: Dir::Inverse,
            },
            t.head,
        ));
    }

    type Key = (Step, Step, RelationId);
    let counts: HashMap<Key, u64> = kg
        .triples()
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<Key, u64>, fact| {
            let mut keys: HashSet<Key> = HashSet::new();
            for &(first, y) in &adjacency[fact.head.index()] {
                for &relation in kg.relations_between(y, fact.tail) {
                    let second = Step {
                        relation,
                        dir: Dir::Forward,
                    };
                    keys.insert((first, second, fact.relation));
                }
                for &relation in kg.relations_between(fact.tail, y) {
                    let second = Step {
                        relation,
                        dir: Dir::Inverse,
                    };
                    keys.insert((first, second, fact.relation));
                }
            }
            for k in keys {
                *acc.entry(k).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });

    let mut bodies: Vec<(Step, Step)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_support)
        .map(|((a, b, _), _)| (a, b))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    bodies.sort();
    bodies
}

/// Calls `f(x, y, z)` for every premise binding; length-1 bodies bind `z = y`.
pub(crate) fn for_each_binding(
    kg: &KnowledgeGraph,
    steps: &[Step],
    mut f: impl FnMut(EntityId, EntityId, EntityId),
) {
    match steps {
        [first] => {
            for (x, y) in first.pairs(kg) {
                f(x, y, y);
            }
        }
        [first, second] => {
            for (x, y) in first.pairs(kg) {
                for &z in second.next(kg, y) {
                    f(x, y, z);
                }
            }
        }
        _ => {}
    }
}

fn body_statistics(
    kg: &KnowledgeGraph,
    steps: &[Step],
    min_support: u64,
    direction: PcaDirection,
) -> Vec<RuleStatistics> {
    let (premise, _) = chain_rule(steps, RelationId(0));
    // Relations for which some binding can be tautological.
    let mut special: Vec<RelationId> = steps.iter().map(|s| s.relation).collect();
    special.dedup();

    // (x, z) -> for each special relation, whether a non-tautological witness exists.
    let mut bindings: HashMap<(EntityId, EntityId), [bool; 2]> = HashMap::new();
    for_each_binding(kg, steps, |x, y, z| {
        let entry = bindings.entry((x, z)).or_insert([false; 2]);
        for (slot, &rc) in special.iter().enumerate() {
            if entry[slot] {
                continue;
            }
            let conclusion = Triple {
                head: x,
                relation: rc,
                tail: z,
            };
            entry[slot] = premise.iter().all(|a| a.ground(x, y, z) != conclusion);
        }
    });
    let counts_for = |rc: RelationId, ok: &[bool; 2]| match special.iter().position(|&s| s == rc) {
        Some(slot) => ok[slot],
        None => true,
    };

    let mut support: HashMap<RelationId, u64> = HashMap::new();
    for (&(x, z), ok) in &bindings {
        for &rc in kg.relations_between(x, z) {
            if counts_for(rc, ok) {
                *support.entry(rc).or_default() += 1;
            }
        }
    }

    let mut out = Vec::new();
    let mut heads: Vec<(RelationId, u64)> = support
        .into_iter()
        .filter(|&(_, s)| s >= min_support)
        .collect();
    heads.sort();
    for (rc, support) in heads {
        if steps.len() == 1 && steps[0].dir == Dir::Forward && steps[0].relation == rc {
            continue;
        }
        let mut body_count = 0;
        let mut pca_body_count = 0;
        for (&(x, z), ok) in &bindings {
            if !counts_for(rc, ok) {
                continue;
            }
            body_count += 1;
            let known = match direction {
                PcaDirection::Subject => kg.has_tail_for(x, rc),
                PcaDirection::Object => kg.has_head_for(z, rc),
            };
            if known {
                pca_body_count += 1;
            }
        }
        let (premise, conclusion) = chain_rule(steps, rc);
        out.push(RuleStatistics {
            premise,
            conclusion,
            support,
            body_count,
            pca_body_count,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::Var;

    fn kg(n: usize, r: usize, triples: &[(u32, u32, u32)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(n, r, triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)))
            .unwrap()
    }

    #[test]
    fn single_pair_implication() {
        let g = kg(2, 2, &[(0, 0, 1), (0, 1, 1)]);
        let config = MiningConfig {
            max_length: 1,
            min_support: 1,
            confidence_kind: ConfidenceKind::Standard,
            ..Default::default()
        };
        let rules = mine_rules(&g, &config).unwrap();
        let r1_r2 = rules
            .iter()
            .find(|r| {
                r.premise == vec![Atom::new(RelationId(0), Var::X, Var::Y)]
                    && r.conclusion.relation == RelationId(1)
            })
            .expect("r1 => r2 mined");
        assert_eq!(r1_r2.confidence, 1.0);
        assert_eq!(r1_r2.support, 1);
        assert_eq!(r1_r2.body_count, Some(1));
    }

    #[test]
    fn symmetric_rule_skips_self_loops() {
        // r is symmetric on (0,1); the self loop (2,r,2) must not count as support.
        let g = kg(3, 1, &[(0, 0, 1), (1, 0, 0), (2, 0, 2)]);
        let stats = rule_statistics(&g, 1, 1, PcaDirection::Subject);
        assert_eq!(stats.len(), 1);
        let s = &stats[0];
        assert_eq!(s.premise, vec![Atom::new(RelationId(0), Var::Y, Var::X)]);
        assert_eq!((s.support, s.body_count), (2, 2));
    }

    #[test]
    fn pca_uses_known_subjects_only() {
        // a(x,y) => c(x,y): subjects 0 and 1 have a c-fact, subject 2 does not.
        let g = kg(
            6,
            2,
            &[(0, 0, 3), (1, 0, 4), (2, 0, 5), (0, 1, 3), (1, 1, 0)],
        );
        let stats = rule_statistics(&g, 1, 1, PcaDirection::Subject);
        let s = stats
            .iter()
            .find(|s| {
                s.premise[0] == Atom::new(RelationId(0), Var::X, Var::Y)
                    && s.conclusion.relation == RelationId(1)
            })
            .unwrap();
        assert_eq!((s.support, s.body_count, s.pca_body_count), (1, 3, 2));
        assert!(s.pca_confidence() >= s.standard_confidence());
    }

    #[test]
    fn chain_rule_counts_distinct_endpoints() {
        // Two paths 0 -> {1,2} -> 3 collapse into one (x, z) binding.
        let g = kg(
            5,
            3,
            &[
                (0, 0, 1),
                (0, 0, 2),
                (1, 1, 3),
                (2, 1, 3),
                (0, 2, 3),
                (4, 0, 1),
            ],
        );
        let stats = rule_statistics(&g, 2, 1, PcaDirection::Subject);
        let s = stats
            .iter()
            .find(|s| {
                s.premise
                    == vec![
                        Atom::new(RelationId(0), Var::X, Var::Y),
                        Atom::new(RelationId(1), Var::Y, Var::Z),
                    ]
                    && s.conclusion.relation == RelationId(2)
            })
            .unwrap();
        assert_eq!((s.support, s.body_count, s.pca_body_count), (1, 2, 1));
    }

    #[test]
    fn threshold_above_one_yields_nothing() {
        let g = kg(2, 2, &[(0, 0, 1), (0, 1, 1)]);
        let config = MiningConfig {
            min_confidence: 1.01,
            min_support: 1,
            ..Default::default()
        };
        assert!(mine_rules(&g, &config).unwrap().is_empty());
    }

    fn rule(steps: &[(u32, Dir)], c: u32, conf: f64) -> HornRule {
        let steps: Vec<Step> = steps
            .iter()
            .map(|&(r, dir)| Step {
                relation: RelationId(r),
                dir,
            })
            .collect();
        let (p, c) = chain_rule(&steps, RelationId(c));
        HornRule::new(p, c, conf, 1, None).unwrap()
    }

    #[test]
    fn dedupe_drops_long_rules_covered_by_short_ones() {
        let short = rule(&[(1, Dir::Forward)], 2, 0.9);
        let long = rule(&[(1, Dir::Forward), (2, Dir::Forward)], 2, 0.85);
        assert_eq!(dedupe_rules(&[short.clone(), long]), vec![short]);
    }

    #[test]
    fn dedupe_keeps_disjoint_and_removes_duplicates() {
        let short = rule(&[(1, Dir::Forward)], 2, 0.9);
        let long = rule(&[(3, Dir::Forward), (4, Dir::Inverse)], 5, 0.85);
        let out = dedupe_rules(&[short.clone(), long.clone(), short.clone()]);
        assert_eq!(out, vec![short, long]);
    }
}
