mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use common::*;
use iterlogic_core::embedding::{gradients, total_objective, LabeledExample, ObjectiveConfig};
use iterlogic_core::eval::RankMode;
use iterlogic_core::pipeline::{self, RunConfig};
use iterlogic_core::rules::{rule_statistics, PcaDirection};
use iterlogic_core::synth::SynthConfig;
use iterlogic_core::trainer::mean_conclusion_scores;
use iterlogic_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
/// Gradient entries below this magnitude are compared on an absolute scale.
const FD_FLOOR: f64 = 1e-6;
const SYNTH_SEEDS: [u64; 4] = [1, 2, 3, 4];

fn within(name: &str, start: Instant, limit: Duration, pass: bool, detail: String) {
    let elapsed = start.elapsed();
    let ok = pass && elapsed <= limit;
    report_line(
        name,
        ok,
        &format!(
            "{detail}; {:.1}s of {}s",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    );
    assert!(pass, "{name}: {detail}");
    assert!(elapsed <= limit, "{name} took {elapsed:?}");
}

fn objectives() -> [(&'static str, ObjectiveConfig, bool, bool); 4] {
    let only = |dc, rc| ObjectiveConfig {
        l2: 0.0,
        dc_loss: dc,
        rc_loss: rc,
        ..Default::default()
    };
    [
        ("logistic", only(false, false), true, false),
        ("dc", only(true, false), false, true),
        ("rc", only(false, true), false, true),
        (
            "combined",
            ObjectiveConfig {
                l2: 1e-3,
                ..only(true, true)
            },
            true,
            true,
        ),
    ]
}

/// Largest relative deviation between the analytic gradient and central
/// differences over every parameter of the model.
fn gradient_error(
    model: &EmbeddingModel,
    examples: &[LabeledExample],
    groups: &[Vec<Triple>],
    rules: &[HornRule],
    config: &ObjectiveConfig,
) -> f64 {
    let (_, grads) = gradients(model, examples, groups, rules, config);
    let d = model.dim;
    let mut worst = 0.0f64;
    for table in 0..4 {
        let rows = if table < 2 {
            model.entity_count()
        } else {
            model.relation_count()
        };
        for row in 0..rows {
            for k in 0..d {
                let analytic = if table < 2 {
                    grads.entity.get(&EntityId(row as u32))
                } else {
                    grads.relation.get(&RelationId(row as u32))
                }
                .map_or(0.0, |g| g[(table % 2) * d + k]);
                let eval_at = |delta: f64| {
                    let mut m = model.clone();
                    let slot = match table {
                        0 => &mut m.entity_re,
                        1 => &mut m.entity_im,
                        2 => &mut m.relation_re,
                        _ => &mut m.relation_im,
                    };
                    slot.row_mut(row)[k] += delta;
                    total_objective(&m, examples, groups, rules, config).total
                };
                let numeric = (eval_at(FD_STEP) - eval_at(-FD_STEP)) / (2.0 * FD_STEP);
                let scale = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for instance in 0..20 {
        let scorer = if instance % 2 == 0 {
            ScorerKind::Complex
        } else {
            ScorerKind::Rotate
        };
        let config = TrainingConfig {
            dim: 4,
            scorer,
            nne: false,
            init_scale: 0.8,
            rotate_margin: 2.0,
            ..Default::default()
        };
        let model = EmbeddingModel::random(10, 3, &config, &mut rng);
        let triple = |rng: &mut ChaCha8Rng| {
            Triple::new(
                rng.gen_range(0..10),
                rng.gen_range(0..3),
                rng.gen_range(0..10),
            )
        };
        let examples: Vec<LabeledExample> = (0..8)
            .map(|i| {
                let t = triple(&mut rng);
                if i % 3 == 0 {
                    LabeledExample::negative(t)
                } else {
                    LabeledExample::positive(t)
                }
            })
            .collect();
        let groups: Vec<Vec<Triple>> = (0..2)
            .map(|_| (0..rng.gen_range(2..6)).map(|_| triple(&mut rng)).collect())
            .collect();
        let rules = random_rules(&mut rng, 3, 2);
        for (_, objective, with_examples, with_rules) in objectives() {
            let ex: &[LabeledExample] = if with_examples { &examples } else { &[] };
            let (g, r): (&[Vec<Triple>], &[HornRule]) = if with_rules {
                (&groups, &rules)
            } else {
                (&[], &[])
            };
            worst = worst.max(gradient_error(&model, ex, g, r, &objective));
            checks += 1;
        }
    }
    within(
        "gradient_correctness",
        start,
        Duration::from_secs(10),
        worst < FD_TOLERANCE,
        format!("{checks} objective checks, max relative error {worst:.2e}"),
    );
}

#[test]
fn grounding_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    let mut conclusions = 0;
    for _ in 0..50 {
        let entities = rng.gen_range(5..=100);
        let relations = rng.gen_range(1..=5);
        let triples = rng.gen_range(0..=500);
        let kg = random_graph(&mut rng, entities, relations, triples);
        let count = rng.gen_range(1..=6);
        let rules = random_rules(&mut rng, relations, count);
        let got = ground_rules(&kg, &rules).unwrap();
        let want = naive_ground(&kg, &rules);
        for (i, expected) in want.iter().enumerate() {
            let actual: HashSet<Triple> = got.group(i).iter().copied().collect();
            conclusions += expected.len();
            if &actual != expected {
                mismatches += 1;
            }
            for t in expected {
                if !got.derived_by(t).contains(&i) {
                    mismatches += 1;
                }
            }
        }
    }
    within(
        "grounding_oracle_equivalence",
        start,
        Duration::from_secs(30),
        mismatches == 0,
        format!("50 graphs, {conclusions} conclusions, {mismatches} mismatching groups"),
    );
}

#[test]
fn confidence_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut rules_checked, mut mismatches, mut pca_below) = (0, 0, 0);
    for _ in 0..30 {
        let entities = rng.gen_range(4..=20);
        let relations = rng.gen_range(1..=4);
        let triples = rng.gen_range(1..=200);
        let kg = random_graph(&mut rng, entities, relations, triples);
        let want = naive_statistics(&kg);
        let got = rule_statistics(&kg, 2, 1, PcaDirection::Subject);
        if got.len() != want.len() {
            mismatches += 1;
        }
        for s in &got {
            rules_checked += 1;
            match want.get(&(s.premise.clone(), s.conclusion)) {
                Some(c)
                    if c.support == s.support
                        && c.body == s.body_count
                        && c.pca_body == s.pca_body_count
                        && s.standard_confidence() == c.support as f64 / c.body as f64
                        && s.pca_confidence() == c.support as f64 / c.pca_body as f64 => {}
                _ => mismatches += 1,
            }
            if s.pca_confidence() < s.standard_confidence() {
                pca_below += 1;
            }
        }
        for kind in [rules::ConfidenceKind::Standard, rules::ConfidenceKind::Pca] {
            let mined = mine_rules(
                &kg,
                &MiningConfig {
                    min_confidence: 1e-9,
                    min_support: 1,
                    confidence_kind: kind,
                    ..Default::default()
                },
            )
            .unwrap();
            for r in &mined {
                let c = want[&(r.premise.clone(), r.conclusion)];
                let body = match kind {
                    rules::ConfidenceKind::Standard => c.body,
                    rules::ConfidenceKind::Pca => c.pca_body,
                };
                if r.confidence != c.support as f64 / body as f64 {
                    mismatches += 1;
                }
            }
            if mined.len() != want.len() {
                mismatches += 1;
            }
        }
    }
    within(
        "confidence_oracle_equivalence",
        start,
        Duration::from_secs(30),
        mismatches == 0 && pca_below == 0,
        format!(
            "{rules_checked} rules, {mismatches} mismatches, {pca_below} with PCA below standard"
        ),
    );
}

#[test]
fn ranking_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut mismatches = 0;
    let mut ranks = 0;
    for round in 0..6 {
        let kg = random_graph(&mut rng, 50, 4, 400);
        let filter: HashSet<Triple> = kg.triples().iter().copied().collect();
        let mut model = EmbeddingModel::zeros(50, 4, 3, ScorerKind::Complex);
        // Small integers make exact ties common.
        for m in [&mut model.entity_re, &mut model.entity_im] {
            for v in m.as_mut_slice() {
                *v = if round < 4 {
                    rng.gen_range(0..3) as f64
                } else {
                    rng.gen_range(-1.0..1.0)
                };
            }
        }
        for m in [&mut model.relation_re, &mut model.relation_im] {
            for v in m.as_mut_slice() {
                *v = rng.gen_range(-1..=1) as f64;
            }
        }
        let test: Vec<Triple> = kg.triples().iter().step_by(7).copied().collect();
        for (mode, filtered) in [(RankMode::Filtered, true), (RankMode::Raw, false)] {
            let mut oracle = Vec::new();
            for t in &test {
                let got = rank_entities(&model, &kg, t, mode);
                let head = sorted_rank(&model, &filter, t, filtered, true);
                let tail = sorted_rank(&model, &filter, t, filtered, false);
                if got.head_rank != head || got.tail_rank != tail {
                    mismatches += 1;
                }
                oracle.extend([head, tail]);
            }
            ranks += oracle.len();
            if evaluate(&model, &kg, &test, mode) != Metrics::from_ranks(&oracle) {
                mismatches += 1;
            }
        }
    }
    within(
        "ranking_oracle_equivalence",
        start,
        Duration::from_secs(10),
        mismatches == 0,
        format!("{ranks} ranks, {mismatches} mismatches"),
    );
}

#[test]
fn conclusion_polarization() {
    let start = Instant::now();
    let (mut held, mut held_hi, mut fals, mut fals_lo) = (0, 0, 0, 0);
    let mut per_seed = Vec::new();
    for seed in SYNTH_SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let world = SynthConfig {
            seed,
            ..SynthConfig::polarization()
        };
        let (data, report) = run_synthetic(&world, seed, true, dir.path());
        let model = &report.outcome.model;
        let h = resolve(&report, &data.held_out_true);
        let f = resolve(&report, &data.planted_false);
        let hi = h.iter().filter(|t| model.probability(t) >= 0.99).count();
        let lo = f.iter().filter(|t| model.probability(t) < 0.5).count();
        per_seed.push(format!("seed {seed}: {hi}/{} {lo}/{}", h.len(), f.len()));
        held += h.len();
        held_hi += hi;
        fals += f.len();
        fals_lo += lo;
    }
    let held_share = held_hi as f64 / held as f64;
    let false_share = fals_lo as f64 / fals as f64;
    within(
        "conclusion_polarization",
        start,
        Duration::from_secs(300),
        held_share >= 0.9 && false_share >= 0.9,
        format!(
            "held-out true >= 0.99: {held_share:.3}, planted false < 0.5: {false_share:.3} [{}]",
            per_seed.join(", ")
        ),
    );
}

#[test]
fn confidence_loss_fidelity() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut per_seed = Vec::new();
    for seed in SYNTH_SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let world = SynthConfig {
            seed,
            ..SynthConfig::fidelity()
        };
        let (_, report) = run_synthetic(&world, seed, true, dir.path());
        let grounded = ground_rules(&report.dataset.train, &report.rules).unwrap();
        let means = mean_conclusion_scores(&report.outcome.model, grounded.groups());
        let mut line = Vec::new();
        for (m, rule) in means.iter().zip(&report.rules) {
            let m = m.expect("every planted rule has conclusions");
            worst = worst.max((m - rule.confidence).abs());
            line.push(format!("{:.1}->{m:.3}", rule.confidence));
        }
        per_seed.push(format!("seed {seed}: {}", line.join(" ")));
    }
    within(
        "confidence_loss_fidelity",
        start,
        Duration::from_secs(300),
        worst <= 0.05,
        format!("max |mean - c| {worst:.3} [{}]", per_seed.join(", ")),
    );
}

#[test]
fn rule_benefit() {
    let start = Instant::now();
    let world = SynthConfig::default();
    let mut worst = f64::INFINITY;
    let mut per_seed = Vec::new();
    for seed in SYNTH_SEEDS {
        let mrr = |with_rules: bool| {
            let dir = tempfile::tempdir().unwrap();
            let (_, report) = run_synthetic(&world, seed, with_rules, dir.path());
            report.metrics.last().unwrap().1.mrr
        };
        let (rules, base) = (mrr(true), mrr(false));
        let gain = rules / base - 1.0;
        worst = worst.min(gain);
        per_seed.push(format!("seed {seed}: {rules:.4} vs {base:.4}"));
    }
    within(
        "rule_benefit",
        start,
        Duration::from_secs(600),
        worst >= 0.05,
        format!("min relative MRR gain {worst:.3} [{}]", per_seed.join(", ")),
    );
}

#[test]
fn determinism() {
    let start = Instant::now();
    let csv = |dir: &std::path::Path| {
        let (_, report) = run_synthetic(&SynthConfig::default(), 3, true, dir);
        let text = std::fs::read(dir.join("out").join(pipeline::METRICS_FILE)).unwrap();
        (text, report.outcome.state.promoted)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, promoted_a) = csv(a.path());
    let (second, promoted_b) = csv(b.path());
    within(
        "determinism",
        start,
        Duration::from_secs(300),
        first == second && promoted_a == promoted_b,
        format!("{} metric bytes compared", first.len()),
    );
}

/// Full benchmark runs. Point `ITERLOGIC_FB15K` and/or `ITERLOGIC_DB100K` at
/// a directory holding `train.txt`, `valid.txt` and `test.txt`, then run with
/// `--ignored`.
#[test]
#[ignore]
fn benchmark_datasets() {
    let cases = [
        ("ITERLOGIC_FB15K", 1e-3, 3e-5, 0.814, Some(0.778)),
        ("ITERLOGIC_DB100K", 1e-4, 1e-4, 0.374, None),
    ];
    let mut ran = false;
    for (var, lr, l2, mrr, hits1) in cases {
        let Ok(dir) = std::env::var(var) else {
            continue;
        };
        ran = true;
        let dir = std::path::PathBuf::from(dir);
        let out = tempfile::tempdir().unwrap();
        let mut config = RunConfig {
            train: Some(dir.join("train.txt")),
            valid: Some(dir.join("valid.txt")),
            test: Some(dir.join("test.txt")),
            out_dir: out.path().to_path_buf(),
            ..Default::default()
        };
        config.training.dim = 300;
        config.training.learning_rate = lr;
        config.training.negatives = 10;
        config.training.l2 = l2;
        let start = Instant::now();
        let report = pipeline::run_pipeline(&config).unwrap();
        let m = report.metrics.last().unwrap().1;
        let pass = (m.mrr - mrr).abs() <= 0.02 && hits1.is_none_or(|h| (m.hits1 - h).abs() <= 0.02);
        report_line(
            var,
            pass,
            &format!(
                "MRR {:.4} Hits@1 {:.4}, {} rules, {:.0}s",
                m.mrr,
                m.hits1,
                report.rules.len(),
                start.elapsed().as_secs_f64()
            ),
        );
        assert!(pass);
    }
    if !ran {
        println!("no benchmark dataset configured");
    }
}
