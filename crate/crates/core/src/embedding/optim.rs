use serde::{Deserialize, Serialize};

use super::loss::Gradients;
use super::{EmbeddingModel, Matrix};

/// Initial value of every accumulator.
pub const INITIAL_ACCUMULATOR: f64 = 1e-8;

/// Per-coordinate AdaGrad: `acc += g²; θ -= lr · g / sqrt(acc)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGrad {
    pub learning_rate: f64,
    pub entity_re: Matrix,
    pub entity_im: Matrix,
    pub relation_re: Matrix,
    pub relation_im: Matrix,
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub entity_rows: usize,
    pub relation_rows: usize,
}

impl AdaGrad {
    pub fn new(model: &EmbeddingModel, learning_rate: f64) -> Self {
        let (e, r, d) = (model.entity_count(), model.relation_count(), model.dim);
        AdaGrad {
            learning_rate,
            entity_re: Matrix::filled(e, d, INITIAL_ACCUMULATOR),
            entity_im: Matrix::filled(e, d, INITIAL_ACCUMULATOR),
            relation_re: Matrix::filled(r, d, INITIAL_ACCUMULATOR),
            relation_im: Matrix::filled(r, d, INITIAL_ACCUMULATOR),
        }
    }

    /// Applies one update; with `nonnegative` the touched entity rows are
    /// clamped at zero afterwards.
    pub fn step(
        &mut self,
        model: &mut EmbeddingModel,
        grads: &Gradients,
        nonnegative: bool,
    ) -> StepStats {
        let d = model.dim;
        let lr = self.learning_rate;
        for (id, g) in &grads.entity {
            let i = id.index();
            update(
                model.entity_re.row_mut(i),
                self.entity_re.row_mut(i),
                &g[..d],
                lr,
            );
            update(
                model.entity_im.row_mut(i),
                self.entity_im.row_mut(i),
                &g[d..],
                lr,
            );
            if nonnegative {
                for v in model
                    .entity_re
                    .row_mut(i)
                    .iter_mut()
                    .chain(model.entity_im.row_mut(i))
                {
                    *v = v.max(0.0);
                }
            }
        }
        for (id, g) in &grads.relation {
            let i = id.index();
            update(
                model.relation_re.row_mut(i),
                self.relation_re.row_mut(i),
                &g[..d],
                lr,
            );
            update(
                model.relation_im.row_mut(i),
                self.relation_im.row_mut(i),
                &g[d..],
                lr,
            );
        }
        StepStats {
            entity_rows: grads.entity.len(),
            relation_rows: grads.relation.len(),
        }
    }
}

fn update(params: &mut [f64], acc: &mut [f64], grad: &[f64], lr: f64) {
    for ((p, a), g) in params.iter_mut().zip(acc.iter_mut()).zip(grad) {
        if *g == 0.0 {
            continue;
        }
        *a += g * g;
        *p -= lr * g / a.sqrt();
    }
}
