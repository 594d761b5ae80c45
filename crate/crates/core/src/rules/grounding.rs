//! One forward-chaining cycle: match every premise against the graph and
//! collect the conclusions that are not facts yet.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mining::for_each_binding;
use super::HornRule;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConclusionState {
    Candidate,
    Accepted,
}

/// Conclusions grouped by the rule (index into the rule list) that derived
/// them. A triple derived by several rules sits in each of their groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConclusionSet {
    groups: Vec<Vec<Triple>>,
    provenance: BTreeMap<Triple, Vec<usize>>,
    accepted: HashSet<Triple>,
}

impl ConclusionSet {
    pub fn empty(rule_count: usize) -> Self {
        ConclusionSet {
            groups: vec![Vec::new(); rule_count],
            ..Default::default()
        }
    }

    /// Builds a set from explicit per-rule groups (each group is sorted and
    /// deduplicated).
    pub fn from_groups(groups: Vec<Vec<Triple>>) -> Self {
        let mut set = ConclusionSet::empty(0);
        for (rule, mut group) in groups.into_iter().enumerate() {
            group.sort();
            group.dedup();
            for t in &group {
                set.provenance.entry(*t).or_default().push(rule);
            }
            set.groups.push(group);
        }
        set
    }

    pub fn rule_count(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<Triple>] {
        &self.groups
    }

    pub fn group(&self, rule: usize) -> &[Triple] {
        self.groups.get(rule).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Rules that derived `triple`.
    pub fn derived_by(&self, triple: &Triple) -> &[usize] {
        self.provenance
            .get(triple)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Distinct conclusions, sorted.
    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.provenance.keys()
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.provenance.contains_key(triple)
    }

    pub fn state(&self, triple: &Triple) -> Option<ConclusionState> {
        if !self.contains(triple) {
            None
        } else if self.accepted.contains(triple) {
            Some(ConclusionState::Accepted)
        } else {
            Some(ConclusionState::Candidate)
        }
    }

    /// Marks a candidate accepted; returns false if it was not a candidate.
    pub fn accept(&mut self, triple: &Triple) -> bool {
        self.contains(triple) && self.accepted.insert(*triple)
    }

    /// Sorted conclusions still awaiting a decision.
    pub fn candidates(&self) -> impl Iterator<Item = &Triple> {
        self.provenance
            .keys()
            .filter(|t| !self.accepted.contains(t))
    }

    pub fn candidate_count(&self) -> usize {
        self.len() - self.accepted.len()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &Triple> {
        self.provenance.keys().filter(|t| self.accepted.contains(t))
    }

    /// Adds the accepted conclusions of `previous` to the matching groups,
    /// still accepted.
    pub fn carry_accepted(&mut self, previous: &ConclusionSet) {
        for (rule, group) in previous.groups.iter().enumerate().take(self.groups.len()) {
            for t in group.iter().filter(|t| previous.accepted.contains(t)) {
                if let Err(pos) = self.groups[rule].binary_search(t) {
                    self.groups[rule].insert(pos, *t);
                    let rules = self.provenance.entry(*t).or_default();
                    rules.push(rule);
                    rules.sort_unstable();
                    self.accepted.insert(*t);
                }
            }
        }
    }
}

/// Runs exactly one match-select-act cycle of `rules` over `kg`.
///
/// Conclusions are never fed back into premises within the call.
pub fn ground_rules(kg: &KnowledgeGraph, rules: &[HornRule]) -> Result<ConclusionSet> {
    for (i, rule) in rules.iter().enumerate() {
        for relation in rule.relations() {
            kg.check_relation(relation).map_err(|_| Error::Vocabulary {
                kind: "relation",
                name: format!("#{} in rule {i}", relation.0),
            })?;
        }
    }
    let groups = rules
        .par_iter()
        .map(|rule| -> Result<Vec<Triple>> {
            let steps = rule.steps()?;
            let mut seen = HashSet::new();
            for_each_binding(kg, &steps, |x, y, z| {
                let t = rule.conclusion.ground(x, y, z);
                if !kg.contains(&t) {
                    seen.insert(t);
                }
            });
            let mut group: Vec<Triple> = seen.into_iter().collect();
            group.sort();
            Ok(group)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConclusionSet::from_groups(groups))
}
