use rand::Rng;

use crate::kg::{EntityId, KnowledgeGraph, Triple};

/// Attempts per negative before a corrupted triple is accepted even though
/// it is a known fact.
pub const MAX_RESAMPLE: usize = 100;

/// Draws `count` negatives for `positive` by replacing its head or tail
/// (chosen uniformly) with a uniform random entity, redrawing while the
/// corruption is a fact of `kg`.
pub fn sample_negatives<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    positive: &Triple,
    count: usize,
    rng: &mut R,
) -> Vec<Triple> {
    let n = kg.entity_count() as u32;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut candidate = *positive;
        for _ in 0..MAX_RESAMPLE {
            candidate = *positive;
            let e = EntityId(rng.gen_range(0..n));
            if rng.gen_bool(0.5) {
                candidate.head = e;
            } else {
                candidate.tail = e;
            }
            if !kg.contains(&candidate) {
                break;
            }
        }
        out.push(candidate);
    }
    out
}
