#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use iterlogic_core::kg::{EntityId, RelationId};
use iterlogic_core::pipeline::{run_pipeline, PipelineReport, RunConfig};
use iterlogic_core::rules::{Atom, Var};
use iterlogic_core::synth::{self, SynthConfig, SynthDataset};
use iterlogic_core::{EmbeddingModel, HornRule, KnowledgeGraph, Triple};
use num_complex::Complex64;
use rand::Rng;

pub const SYNTHETIC_CONFIG: &str = include_str!("../../../../configs/synthetic.toml");

pub fn random_graph<R: Rng>(
    rng: &mut R,
    entities: usize,
    relations: usize,
    triples: usize,
) -> KnowledgeGraph {
    let list: Vec<Triple> = (0..triples)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..entities as u32),
                rng.gen_range(0..relations as u32),
                rng.gen_range(0..entities as u32),
            )
        })
        .collect();
    KnowledgeGraph::from_triples(entities, relations, list).unwrap()
}

/// Every closed rule shape over `relations` relations, minus `r(x,y) => r(x,y)`.
pub fn all_shapes(relations: usize) -> Vec<(Vec<Atom>, Atom)> {
    let rel = |r: usize| RelationId(r as u32);
    let mut out = Vec::new();
    for c in 0..relations {
        let conclusion = Atom::new(rel(c), Var::X, Var::Y);
        for r in 0..relations {
            if r != c {
                out.push((vec![Atom::new(rel(r), Var::X, Var::Y)], conclusion));
            }
            out.push((vec![Atom::new(rel(r), Var::Y, Var::X)], conclusion));
        }
    }
    for c in 0..relations {
        let conclusion = Atom::new(rel(c), Var::X, Var::Z);
        for a in 0..relations {
            for b in 0..relations {
                for (a1, a2) in [(Var::X, Var::Y), (Var::Y, Var::X)] {
                    for (b1, b2) in [(Var::Y, Var::Z), (Var::Z, Var::Y)] {
                        out.push((
                            vec![Atom::new(rel(a), a1, a2), Atom::new(rel(b), b1, b2)],
                            conclusion,
                        ));
                    }
                }
            }
        }
    }
    out
}

pub fn random_rules<R: Rng>(rng: &mut R, relations: usize, count: usize) -> Vec<HornRule> {
    let shapes = all_shapes(relations);
    (0..count)
        .map(|_| {
            let (premise, conclusion) = shapes[rng.gen_range(0..shapes.len())].clone();
            let confidence = rng.gen_range(0.05..=1.0);
            HornRule::new(premise, conclusion, confidence, 1, None).unwrap()
        })
        .collect()
}

fn bind(v: Var, x: EntityId, y: EntityId, z: EntityId) -> EntityId {
    match v {
        Var::X => x,
        Var::Y => y,
        Var::Z => z,
    }
}

fn ground_atom(a: &Atom, x: EntityId, y: EntityId, z: EntityId) -> Triple {
    Triple {
        head: bind(a.arg1, x, y, z),
        relation: a.relation,
        tail: bind(a.arg2, x, y, z),
    }
}

fn facts(kg: &KnowledgeGraph) -> HashSet<Triple> {
    kg.triples().iter().copied().collect()
}

/// Every `(x, y, z)` in `E³` (`z` fixed to `x` for one-atom rules, which
/// never mention it).
fn for_each_assignment(
    n: usize,
    premise_len: usize,
    mut f: impl FnMut(EntityId, EntityId, EntityId),
) {
    for x in 0..n as u32 {
        for y in 0..n as u32 {
            if premise_len == 1 {
                f(EntityId(x), EntityId(y), EntityId(x));
            } else {
                for z in 0..n as u32 {
                    f(EntityId(x), EntityId(y), EntityId(z));
                }
            }
        }
    }
}

/// Nested-loop forward chaining: per rule, the conclusions of every
/// satisfied assignment that are not facts.
pub fn naive_ground(kg: &KnowledgeGraph, rules: &[HornRule]) -> Vec<HashSet<Triple>> {
    let known = facts(kg);
    rules
        .iter()
        .map(|rule| {
            let mut out = HashSet::new();
            for_each_assignment(kg.entity_count(), rule.premise.len(), |x, y, z| {
                if rule
                    .premise
                    .iter()
                    .all(|a| known.contains(&ground_atom(a, x, y, z)))
                {
                    let t = ground_atom(&rule.conclusion, x, y, z);
                    if !known.contains(&t) {
                        out.insert(t);
                    }
                }
            });
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub support: u64,
    pub body: u64,
    pub pca_body: u64,
}

/// Distinct conclusion pairs counted by exhaustive enumeration. A binding
/// whose grounded premise equals the grounded conclusion is ignored.
pub fn naive_counts(kg: &KnowledgeGraph, premise: &[Atom], conclusion: &Atom) -> Counts {
    let known = facts(kg);
    let mut pairs = HashSet::new();
    for_each_assignment(kg.entity_count(), premise.len(), |x, y, z| {
        let c = ground_atom(conclusion, x, y, z);
        let ok = premise.iter().all(|a| {
            let g = ground_atom(a, x, y, z);
            known.contains(&g) && g != c
        });
        if ok {
            pairs.insert((c.head, c.tail));
        }
    });
    let mut counts = Counts {
        support: 0,
        body: pairs.len() as u64,
        pca_body: 0,
    };
    for &(h, t) in &pairs {
        let has_any = known
            .iter()
            .any(|f| f.head == h && f.relation == conclusion.relation);
        if known.contains(&Triple {
            head: h,
            relation: conclusion.relation,
            tail: t,
        }) {
            counts.support += 1;
        }
        if has_any {
            counts.pca_body += 1;
        }
    }
    counts
}

/// Shape → counts for every shape with at least one supporting pair.
pub fn naive_statistics(kg: &KnowledgeGraph) -> BTreeMap<(Vec<Atom>, Atom), Counts> {
    all_shapes(kg.relation_count())
        .into_iter()
        .filter_map(|(p, c)| {
            let counts = naive_counts(kg, &p, &c);
            (counts.support > 0).then_some(((p, c), counts))
        })
        .collect()
}

/// Bilinear score recomputed with complex arithmetic.
pub fn complex_score(model: &EmbeddingModel, t: &Triple) -> f64 {
    let c = |m: &iterlogic_core::embedding::Matrix,
             n: &iterlogic_core::embedding::Matrix,
             i: usize,
             k: usize| { Complex64::new(m.row(i)[k], n.row(i)[k]) };
    (0..model.dim)
        .map(|k| {
            let h = c(&model.entity_re, &model.entity_im, t.head.index(), k);
            let r = c(
                &model.relation_re,
                &model.relation_im,
                t.relation.index(),
                k,
            );
            let tl = c(&model.entity_re, &model.entity_im, t.tail.index(), k);
            (h * r * tl.conj()).re
        })
        .sum()
}

/// Rotation score recomputed with complex arithmetic.
pub fn rotate_score(model: &EmbeddingModel, t: &Triple) -> f64 {
    let dist: f64 = (0..model.dim)
        .map(|k| {
            let h = Complex64::new(
                model.entity_re.row(t.head.index())[k],
                model.entity_im.row(t.head.index())[k],
            );
            let r = Complex64::from_polar(1.0, model.relation_re.row(t.relation.index())[k]);
            let tl = Complex64::new(
                model.entity_re.row(t.tail.index())[k],
                model.entity_im.row(t.tail.index())[k],
            );
            (h * r - tl).norm()
        })
        .sum();
    model.rotate_margin - dist
}

/// Filtered or raw rank by sorting every corrupted candidate's score; ties
/// with the target count half.
pub fn sorted_rank(
    model: &EmbeddingModel,
    filter: &HashSet<Triple>,
    test: &Triple,
    filtered: bool,
    replace_head: bool,
) -> f64 {
    let target = model.score(test);
    let mut scores: Vec<f64> = (0..model.entity_count() as u32)
        .map(|e| {
            let mut c = *test;
            if replace_head {
                c.head = EntityId(e);
            } else {
                c.tail = EntityId(e);
            }
            c
        })
        .filter(|c| c != test && !(filtered && filter.contains(c)))
        .map(|c| model.score(&c))
        .collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let above = scores.iter().take_while(|&&s| s > target).count();
    let level = scores[above..].iter().take_while(|&&s| s == target).count();
    1.0 + above as f64 + level as f64 / 2.0
}

/// Writes the synthetic world, runs the pipeline with the shared synthetic
/// settings and returns the report together with the world.
pub fn run_synthetic(
    world: &SynthConfig,
    seed: u64,
    with_rules: bool,
    dir: &Path,
) -> (SynthDataset, PipelineReport) {
    let data = synth::generate(world).unwrap();
    let data_dir = dir.join("data");
    data.write(&data_dir).unwrap();
    let rules = if with_rules {
        data_dir.join(synth::RULES_FILE)
    } else {
        let empty = dir.join("no_rules.tsv");
        std::fs::write(&empty, "").unwrap();
        empty
    };
    let mut config = RunConfig::from_toml(SYNTHETIC_CONFIG).unwrap();
    config.train = Some(data_dir.join(synth::TRAIN_FILE));
    config.valid = Some(data_dir.join(synth::VALID_FILE));
    config.test = Some(data_dir.join(synth::TEST_FILE));
    config.rules = Some(rules);
    config.out_dir = dir.join("out");
    config.seed = seed;
    let report = run_pipeline(&config).unwrap();
    (data, report)
}

/// Resolves named triples against the run's vocabulary.
pub fn resolve(report: &PipelineReport, named: &[synth::NamedTriple]) -> Vec<Triple> {
    let v = &report.dataset.vocab;
    named
        .iter()
        .map(|(h, r, t)| Triple {
            head: v.entity_id(h).unwrap(),
            relation: v.relation_id(r).unwrap(),
            tail: v.entity_id(t).unwrap(),
        })
        .collect()
}

pub fn report_line(name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}
