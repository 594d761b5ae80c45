//! Knowledge-graph completion that couples soft Horn rules with complex-valued
//! embeddings.
//!
//! The pipeline mines closed rules from the training graph, grounds them by
//! one forward-chaining cycle, trains embeddings on the graph triples jointly
//! with a loss that drives each conclusion's probability towards 0 or 1 and a
//! loss that pulls each rule's mean conclusion probability towards the rule's
//! confidence, and promotes conclusions the model is sure about back into the
//! graph before the next grounding round.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod kg;
pub mod pipeline;
pub mod rules;
pub mod synth;
pub mod trainer;

pub use embedding::{EmbeddingModel, LabeledExample, ScorerKind, TrainingConfig};
pub use error::{Error, Result};
pub use eval::{evaluate, rank_entities, Metrics, RankResult};
pub use kg::{Dataset, EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};
pub use rules::{ground_rules, mine_rules, ConclusionSet, HornRule, MiningConfig};

pub use trainer::{run_training, TrainingOutcome};
