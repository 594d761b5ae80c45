//! Link-prediction evaluation.
//!
//! For every test triple the head and then the tail is replaced by each
//! entity. In the filtered setting, replacements that form a known fact
//! (other than the test triple) are skipped. Ties are resolved by giving the
//! test triple the mean position of its tied block:
//! `rank = 1 + #better + #tied / 2`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingModel;
use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::rules::{filter_by_confidence, HornRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    #[default]
    Filtered,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub triple: Triple,
    pub head_rank: f64,
    pub tail_rank: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// Number of ranks averaged (two per test triple).
    pub ranks: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
            ranks: ranks.len(),
        }
    }

    /// `split,metric,value` rows (no header).
    pub fn csv_rows(&self, split: &str) -> String {
        let mut out = String::new();
        for (name, v) in [
            ("mrr", self.mrr),
            ("hits@1", self.hits1),
            ("hits@3", self.hits3),
            ("hits@10", self.hits10),
        ] {
            let _ = writeln!(out, "{split},{name},{v}");
        }
        out
    }

    pub fn table(&self, split: &str) -> String {
        format!(
            "{split:<8} MRR {:.4}  Hits@1 {:.4}  Hits@3 {:.4}  Hits@10 {:.4}  ({} ranks)",
            self.mrr, self.hits1, self.hits3, self.hits10, self.ranks
        )
    }
}

pub const METRICS_CSV_HEADER: &str = "split,metric,value\n";

fn rank_one(
    model: &EmbeddingModel,
    filter: &KnowledgeGraph,
    test: &Triple,
    mode: RankMode,
    corrupt: impl Fn(EntityId) -> Triple,
    original: EntityId,
) -> f64 {
    let target = model.score(test);
    let mut better = 0usize;
    let mut tied = 0usize;
    for e in 0..model.entity_count() as u32 {
        let e = EntityId(e);
        if e == original {
            continue;
        }
        let candidate = corrupt(e);
        if mode == RankMode::Filtered && filter.contains(&candidate) {
            continue;
        }
        let s = model.score(&candidate);
        if s > target {
            better += 1;
        } else if s == target {
            tied += 1;
        }
    }
    1.0 + better as f64 + tied as f64 / 2.0
}

pub fn rank_entities(
    model: &EmbeddingModel,
    filter: &KnowledgeGraph,
    test: &Triple,
    mode: RankMode,
) -> RankResult {
    let head_rank = rank_one(
        model,
        filter,
        test,
        mode,
        |e| Triple { head: e, ..*test },
        test.head,
    );
    let tail_rank = rank_one(
        model,
        filter,
        test,
        mode,
        |e| Triple { tail: e, ..*test },
        test.tail,
    );
    RankResult {
        triple: *test,
        head_rank,
        tail_rank,
    }
}

pub fn rank_all(
    model: &EmbeddingModel,
    filter: &KnowledgeGraph,
    test: &[Triple],
    mode: RankMode,
) -> Vec<RankResult> {
    test.par_iter()
        .map(|t| rank_entities(model, filter, t, mode))
        .collect()
}

/// MRR and Hits@{1,3,10} averaged over head and tail replacement.
pub fn evaluate(
    model: &EmbeddingModel,
    filter: &KnowledgeGraph,
    test: &[Triple],
    mode: RankMode,
) -> Metrics {
    let ranks: Vec<f64> = rank_all(model, filter, test, mode)
        .into_iter()
        .flat_map(|r| [r.head_rank, r.tail_rank])
        .collect();
    Metrics::from_ranks(&ranks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub rules: usize,
    pub metrics: Metrics,
}

/// `start, start + step, ...` up to `end` inclusive, rounded to 1e-9.
pub fn threshold_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

/// Re-filters `rules` at each threshold and hands the survivors to `run`,
/// which trains and evaluates.
pub fn confidence_sweep<F>(
    rules: &[HornRule],
    thresholds: &[f64],
    mut run: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(&[HornRule]) -> Result<Metrics>,
{
    thresholds
        .iter()
        .map(|&threshold| {
            let kept = filter_by_confidence(rules, threshold);
            let metrics = run(&kept)?;
            Ok(SweepRow {
                threshold,
                rules: kept.len(),
                metrics,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,rules,mrr,hits@1,hits@10\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.threshold, r.rules, r.metrics.mrr, r.metrics.hits1, r.metrics.hits10
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Matrix, ScorerKind};

    #[test]
    fn constant_scorer_gives_mean_tie_rank() {
        let model = EmbeddingModel::zeros(5, 1, 2, ScorerKind::Complex);
        let filter = KnowledgeGraph::new(5, 1);
        let r = rank_entities(&model, &filter, &Triple::new(0, 0, 1), RankMode::Raw);
        assert_eq!(r.head_rank, 3.0);
        assert_eq!(r.tail_rank, 3.0);
    }

    #[test]
    fn best_triple_ranks_first() {
        // One-dimensional real embeddings: entity 0 and 1 large, others small.
        let mut model = EmbeddingModel::zeros(4, 1, 1, ScorerKind::Complex);
        model.entity_re = Matrix::from_vec(4, 1, vec![2.0, 3.0, 0.1, 0.2]).unwrap();
        model.relation_re = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let filter = KnowledgeGraph::new(4, 1);
        let r = rank_entities(&model, &filter, &Triple::new(0, 0, 1), RankMode::Filtered);
        // Head side: (1,0,1) scores 9 > 6, so rank 2; tail side: rank 2 as well ((0,0,0)=4 < 6).
        assert_eq!(r.head_rank, 2.0);
        assert_eq!(r.tail_rank, 1.0);
        let filter = KnowledgeGraph::from_triples(4, 1, [Triple::new(1, 0, 1)]).unwrap();
        let r = rank_entities(&model, &filter, &Triple::new(0, 0, 1), RankMode::Filtered);
        assert_eq!(r.head_rank, 1.0);
        let raw = rank_entities(&model, &filter, &Triple::new(0, 0, 1), RankMode::Raw);
        assert_eq!(raw.head_rank, 2.0);
    }

    #[test]
    fn metrics_arithmetic() {
        let m = Metrics::from_ranks(&[1.0, 1.0, 4.0, 4.0]);
        assert_eq!(m.mrr, 0.625);
        assert_eq!(m.hits1, 0.5);
        assert_eq!(m.hits3, 0.5);
        assert_eq!(m.hits10, 1.0);
        let perfect = Metrics::from_ranks(&[1.0; 6]);
        assert_eq!(
            (perfect.mrr, perfect.hits1, perfect.hits10),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn threshold_grid_is_clean() {
        let g = threshold_grid(0.5, 1.0, 0.05);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[6], 0.8);
        assert_eq!(g[10], 1.0);
    }

    #[test]
    fn sweep_rule_counts_shrink() {
        use crate::kg::RelationId;
        use crate::rules::{Atom, Var};
        let rules: Vec<HornRule> = [0.55, 0.7, 0.85, 0.95]
            .iter()
            .map(|&c| {
                HornRule::new(
                    vec![Atom::new(RelationId(0), Var::X, Var::Y)],
                    Atom::new(RelationId(1), Var::X, Var::Y),
                    c,
                    1,
                    None,
                )
                .unwrap()
            })
            .collect();
        let rows = confidence_sweep(&rules, &threshold_grid(0.5, 1.0, 0.05), |kept| {
            Ok(Metrics {
                mrr: kept.len() as f64,
                ..Default::default()
            })
        })
        .unwrap();
        assert!(rows.windows(2).all(|w| w[0].rules >= w[1].rules));
        assert_eq!(rows.last().unwrap().rules, 0);
        assert!(sweep_csv(&rows).starts_with("threshold,rules,mrr,hits@1,hits@10\n0.5,4,4,0,0\n"));
    }
}
