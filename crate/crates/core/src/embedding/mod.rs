//! Complex-valued embeddings, the joint rule/triple objective, its analytic
//! gradients, AdaGrad updates and negative sampling.

mod checkpoint;
mod loss;
mod optim;
mod sampling;
mod scoring;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::Triple;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub(crate) use loss::gradients_parallel;
pub use loss::{
    conclusion_scores, dc_loss, gradients, logistic_loss, rc_loss, total_objective, Gradients,
    LossTerms, ObjectiveConfig,
};
pub use optim::{AdaGrad, StepStats};
pub use sampling::{sample_negatives, MAX_RESAMPLE};
pub use scoring::{sigmoid, softplus, SIGMOID_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Complex,
    Rotate,
}

/// How grounded conclusions enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConclusionLabelMode {
    /// Deterministic-conclusion and rule-confidence losses.
    #[default]
    Iterlogic,
    /// Every conclusion is a positive logistic example.
    AllPositive,
    /// Every conclusion is a logistic example with soft label `c_f`.
    Weighted,
}

impl ConclusionLabelMode {
    pub fn from_flags(all_positive: bool, weighted: bool) -> Result<Self> {
        match (all_positive, weighted) {
            (true, true) => Err(Error::Config(
                "all-positive and weighted conclusion labels are mutually exclusive".into(),
            )),
            (true, false) => Ok(ConclusionLabelMode::AllPositive),
            (false, true) => Ok(ConclusionLabelMode::Weighted),
            (false, false) => Ok(ConclusionLabelMode::Iterlogic),
        }
    }
}

/// Which conclusions move into the graph after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromotionPolicy {
    /// Every candidate whose probability reaches the acceptance threshold.
    #[default]
    Threshold,
    /// At the end of each grounding round, the `round(|C_f| * c_f)`
    /// best-scoring conclusions of every rule.
    TopN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One writer, bit-reproducible.
    #[default]
    Deterministic,
    /// Batch gradients computed by `workers` threads and summed.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub dim: usize,
    pub learning_rate: f64,
    /// Negatives drawn per positive triple.
    pub negatives: usize,
    pub l2: f64,
    pub nne: bool,
    pub dc_loss: bool,
    pub rc_loss: bool,
    pub label_mode: ConclusionLabelMode,
    pub epochs: usize,
    /// Number of grounding rounds spread over `epochs`.
    pub iterations: usize,
    /// Off: ground once, at epoch `⌊N/M⌋`, and never promote.
    pub iterative: bool,
    pub promotion: PromotionPolicy,
    pub acceptance_threshold: f64,
    pub batch_size: usize,
    /// Fraction of each step's examples drawn from the conclusions; `None`
    /// means `|C| / (|T| + |C|)`.
    pub conclusion_fraction: Option<f64>,
    pub scorer: ScorerKind,
    pub rotate_margin: f64,
    pub init_scale: f64,
    pub update_mode: UpdateMode,
    pub workers: usize,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: 300,
            learning_rate: 1e-3,
            negatives: 10,
            l2: 3e-5,
            nne: true,
            dc_loss: true,
            rc_loss: true,
            label_mode: ConclusionLabelMode::Iterlogic,
            epochs: 1000,
            iterations: 5,
            iterative: true,
            promotion: PromotionPolicy::Threshold,
            acceptance_threshold: 0.99,
            batch_size: 1000,
            conclusion_fraction: None,
            scorer: ScorerKind::Complex,
            rotate_margin: 12.0,
            init_scale: 0.1,
            update_mode: UpdateMode::Deterministic,
            workers: 1,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.l2 >= 0.0) {
            return fail(format!("l2 must be >= 0, got {}", self.l2));
        }
        if self.negatives < 1 {
            return fail("negatives must be >= 1".into());
        }
        if self.iterations < 1 || self.epochs < self.iterations {
            return fail(format!(
                "need epochs >= iterations >= 1, got {} and {}",
                self.epochs, self.iterations
            ));
        }
        if !(self.acceptance_threshold > 0.5 && self.acceptance_threshold <= 1.0) {
            return fail(format!(
                "acceptance_threshold must lie in (0.5, 1], got {}",
                self.acceptance_threshold
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if let Some(f) = self.conclusion_fraction {
            if !(0.0..1.0).contains(&f) {
                return fail(format!("conclusion_fraction must lie in [0, 1), got {f}"));
            }
        }
        if !(self.init_scale > 0.0) {
            return fail("init_scale must be positive".into());
        }
        if self.update_mode == UpdateMode::Parallel && self.workers == 0 {
            return fail("parallel updates need at least one worker".into());
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            l2: self.l2,
            dc_loss: self.dc_loss,
            rc_loss: self.rc_loss,
            label_mode: self.label_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub triple: Triple,
    /// Exactly `+1` or `-1`.
    pub label: i8,
}

impl LabeledExample {
    pub fn positive(triple: Triple) -> Self {
        LabeledExample { triple, label: 1 }
    }

    pub fn negative(triple: Triple) -> Self {
        LabeledExample { triple, label: -1 }
    }

    pub fn sign(&self) -> f64 {
        if self.label >= 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Dense row-major table of embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Checkpoint(format!(
                "expected {} values, found {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub dim: usize,
    pub scorer: ScorerKind,
    /// Margin of the rotation scorer, `F = margin - distance`.
    pub rotate_margin: f64,
    pub entity_re: Matrix,
    pub entity_im: Matrix,
    /// Real parts, or rotation phases for the rotation scorer.
    pub relation_re: Matrix,
    /// Imaginary parts; unused (zero) for the rotation scorer.
    pub relation_im: Matrix,
}

impl EmbeddingModel {
    pub fn zeros(entities: usize, relations: usize, dim: usize, scorer: ScorerKind) -> Self {
        EmbeddingModel {
            dim,
            scorer,
            rotate_margin: TrainingConfig::default().rotate_margin,
            entity_re: Matrix::zeros(entities, dim),
            entity_im: Matrix::zeros(entities, dim),
            relation_re: Matrix::zeros(relations, dim),
            relation_im: Matrix::zeros(relations, dim),
        }
    }

    /// Uniform initialisation in `[-init_scale, init_scale]`; entity values
    /// start non-negative under NNE, rotation phases are uniform in `[-π, π]`.
    pub fn random<R: Rng>(
        entities: usize,
        relations: usize,
        config: &TrainingConfig,
        rng: &mut R,
    ) -> Self {
        let mut model = Self::zeros(entities, relations, config.dim, config.scorer);
        model.rotate_margin = config.rotate_margin;
        let a = config.init_scale;
        let entity_low = if config.nne { 0.0 } else { -a };
        for v in model
            .entity_re
            .as_mut_slice()
            .iter_mut()
            .chain(model.entity_im.as_mut_slice())
        {
            *v = rng.gen_range(entity_low..=a);
        }
        match config.scorer {
            ScorerKind::Complex => {
                for v in model
                    .relation_re
                    .as_mut_slice()
                    .iter_mut()
                    .chain(model.relation_im.as_mut_slice())
                {
                    *v = rng.gen_range(-a..=a);
                }
            }
            ScorerKind::Rotate => {
                for v in model.relation_re.as_mut_slice() {
                    *v = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
                }
            }
        }
        model
    }

    pub fn entity_count(&self) -> usize {
        self.entity_re.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_re.rows()
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.entity_re,
            &self.entity_im,
            &self.relation_re,
            &self.relation_im,
        ]
        .iter()
        .all(|m| m.as_slice().iter().all(|v| v.is_finite()))
    }

    /// Clamps every entity coordinate at zero.
    pub fn project_nonnegative(&mut self) {
        for v in self
            .entity_re
            .as_mut_slice()
            .iter_mut()
            .chain(self.entity_im.as_mut_slice())
        {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}
