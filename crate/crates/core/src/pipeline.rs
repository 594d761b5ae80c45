//! Run configuration and the end-to-end stages: load, mine (or read rules),
//! train, evaluate, and write artifacts.
//!
//! Artifacts in the output directory:
//!
//! | file              | content                                           |
//! |-------------------|---------------------------------------------------|
//! | `entities.tsv`    | `id<TAB>name`                                      |
//! | `relations.tsv`   | `id<TAB>name`                                      |
//! | `rules.tsv`       | the rules used, in rule text format                |
//! | `model.bin`       | final model and optimizer state                    |
//! | `augmented.tsv`   | training graph plus promoted conclusions           |
//! | `promoted.tsv`    | promoted conclusions in promotion order            |
//! | `epochs.jsonl`    | one JSON object per epoch                          |
//! | `metrics.csv`     | `split,metric,value`                               |
//! | `.partial`        | present while a run is in progress or after it failed |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{save_checkpoint, TrainingConfig};
use crate::error::{Error, Result};
use crate::eval::{
    confidence_sweep, evaluate, sweep_csv, threshold_grid, Metrics, RankMode, SweepRow,
    METRICS_CSV_HEADER,
};
use crate::kg::{Dataset, KnowledgeGraph, Triple, Vocabulary};
use crate::rules::{dedupe_rules, format_rules, load_rules, mine_rules, HornRule, MiningConfig};
use crate::trainer::{
    run_training_with, write_epoch_log, TrainingOptions, TrainingOutcome, Variant,
};

pub const PARTIAL_MARKER: &str = ".partial";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EPOCH_LOG_FILE: &str = "epochs.jsonl";
pub const MODEL_FILE: &str = "model.bin";
pub const AUGMENTED_FILE: &str = "augmented.tsv";
pub const PROMOTED_FILE: &str = "promoted.tsv";
pub const RULES_FILE: &str = "rules.tsv";
pub const CONCLUSIONS_FILE: &str = "conclusions.tsv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Valid,
    #[default]
    Test,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: RankMode,
    pub split: EvalSplit,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: RankMode::Filtered,
            split: EvalSplit::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            start: 0.5,
            end: 1.0,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Skip mining and read rules from this file.
    pub rules: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Seed for everything random; overrides `training.seed`.
    pub seed: u64,
    pub variant: Option<Variant>,
    /// Resume from `out_dir/checkpoint` when it exists.
    pub resume: bool,
    pub mining: MiningConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            valid: None,
            test: None,
            rules: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            variant: None,
            resume: false,
            mining: MiningConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The training configuration after the variant and the seed are applied.
    pub fn effective_training(&self) -> TrainingConfig {
        let mut c = match self.variant {
            Some(v) => v.apply(&self.training),
            None => self.training.clone(),
        };
        c.seed = self.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.mining.validate()?;
        self.effective_training().validate()?;
        let train = self
            .train
            .as_ref()
            .ok_or_else(|| Error::Config("no training file given".into()))?;
        for path in [
            Some(train),
            self.valid.as_ref(),
            self.test.as_ref(),
            self.rules.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            if !path.is_file() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoint")
    }
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let train = config
        .train
        .as_deref()
        .ok_or_else(|| Error::Config("no training file given".into()))?;
    Dataset::load(train, config.valid.as_deref(), config.test.as_deref())
}

/// Rule counts by premise length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleSummary {
    pub total: usize,
    pub length_one: usize,
    pub length_two: usize,
}

impl RuleSummary {
    pub fn of(rules: &[HornRule]) -> Self {
        RuleSummary {
            total: rules.len(),
            length_one: rules.iter().filter(|r| r.len() == 1).count(),
            length_two: rules.iter().filter(|r| r.len() == 2).count(),
        }
    }
}

/// Mines and deduplicates rules from the training graph.
pub fn mine(train: &KnowledgeGraph, config: &MiningConfig) -> Result<Vec<HornRule>> {
    if train.is_empty() {
        return Err(Error::Data("the training graph is empty".into()));
    }
    Ok(dedupe_rules(&mine_rules(train, config)?))
}

/// Rules from `config.rules` if given, mined otherwise.
pub fn obtain_rules(config: &RunConfig, dataset: &Dataset) -> Result<Vec<HornRule>> {
    match &config.rules {
        Some(path) => {
            let rules = load_rules(path, &dataset.vocab)?;
            log::info!(
                "read {} rules from {}; mining skipped",
                rules.len(),
                path.display()
            );
            Ok(rules)
        }
        None => {
            let rules = mine(&dataset.train, &config.mining)?;
            log::info!("mined {} rules", rules.len());
            Ok(rules)
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn triples_tsv(triples: &[Triple], vocab: &Vocabulary) -> String {
    let mut s = String::new();
    for t in triples {
        let name = |id: Option<&str>| id.unwrap_or("?").to_string();
        s.push_str(&name(vocab.entity_name(t.head)));
        s.push('\t');
        s.push_str(&name(vocab.relation_name(t.relation)));
        s.push('\t');
        s.push_str(&name(vocab.entity_name(t.tail)));
        s.push('\n');
    }
    s
}

/// Evaluates on the configured split(s); the filter is `train ∪ valid ∪ test`.
pub fn evaluate_splits(
    model: &crate::embedding::EmbeddingModel,
    dataset: &Dataset,
    config: &EvalConfig,
) -> Result<Vec<(String, Metrics)>> {
    let filter = dataset.all_known()?;
    let mut out = Vec::new();
    let mut run = |name: &str, split: &KnowledgeGraph| {
        if !split.is_empty() {
            out.push((
                name.to_string(),
                evaluate(model, &filter, split.triples(), config.mode),
            ));
        }
    };
    match config.split {
        EvalSplit::Valid => run("valid", &dataset.valid),
        EvalSplit::Test => run("test", &dataset.test),
        EvalSplit::Both => {
            run("valid", &dataset.valid);
            run("test", &dataset.test);
        }
    }
    if out.is_empty() {
        return Err(Error::Data("the evaluation split is empty".into()));
    }
    Ok(out)
}

pub fn metrics_csv(metrics: &[(String, Metrics)]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    for (split, m) in metrics {
        s.push_str(&m.csv_rows(split));
    }
    s
}

pub struct PipelineReport {
    pub rules: Vec<HornRule>,
    pub outcome: TrainingOutcome,
    pub metrics: Vec<(String, Metrics)>,
    pub dataset: Dataset,
}

/// Trains on `dataset` with `rules` and writes model, graph and log
/// artifacts into `config.out_dir`.
pub fn train_stage(
    config: &RunConfig,
    dataset: &Dataset,
    rules: &[HornRule],
) -> Result<TrainingOutcome> {
    let training = config.effective_training();
    let options = TrainingOptions {
        checkpoint_dir: (training.checkpoint_every > 0).then(|| config.checkpoint_dir()),
        resume: config.resume,
        ..Default::default()
    };
    let outcome = run_training_with(&dataset.train, rules, &training, options)?;
    let out = &config.out_dir;
    save_checkpoint(
        &out.join(MODEL_FILE),
        &outcome.model,
        Some(&outcome.optimizer),
    )?;
    outcome
        .graph
        .save_tsv(&dataset.vocab, &out.join(AUGMENTED_FILE))?;
    write_text(
        &out.join(PROMOTED_FILE),
        &triples_tsv(&outcome.state.promoted, &dataset.vocab),
    )?;
    let mut log = Vec::new();
    write_epoch_log(&outcome.state.log, &mut log)?;
    write_text(&out.join(EPOCH_LOG_FILE), &String::from_utf8_lossy(&log))?;
    Ok(outcome)
}

/// Load, rules, train, evaluate. A `.partial` marker sits in the output
/// directory until every stage has succeeded.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e).in_stage("setup"))?;
    let marker = out.join(PARTIAL_MARKER);
    write_text(&marker, "").map_err(|e| e.in_stage("setup"))?;

    let dataset = load_dataset(config).map_err(|e| e.in_stage("load"))?;
    dataset.vocab.save(out).map_err(|e| e.in_stage("load"))?;
    let rules = obtain_rules(config, &dataset).map_err(|e| e.in_stage("rules"))?;
    write_text(&out.join(RULES_FILE), &format_rules(&rules, &dataset.vocab))
        .map_err(|e| e.in_stage("rules"))?;
    let outcome = train_stage(config, &dataset, &rules).map_err(|e| e.in_stage("train"))?;
    let metrics =
        evaluate_splits(&outcome.model, &dataset, &config.eval).map_err(|e| e.in_stage("eval"))?;
    write_text(&out.join(METRICS_FILE), &metrics_csv(&metrics)).map_err(|e| e.in_stage("eval"))?;

    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e).in_stage("finish"))?;
    Ok(PipelineReport {
        rules,
        outcome,
        metrics,
        dataset,
    })
}

/// Retrains at every threshold of `config.sweep` and writes `sweep.csv`.
pub fn run_sweep(config: &RunConfig) -> Result<Vec<SweepRow>> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let dataset = load_dataset(config).map_err(|e| e.in_stage("load"))?;
    let rules = obtain_rules(config, &dataset).map_err(|e| e.in_stage("rules"))?;
    let training = config.effective_training();
    let thresholds = threshold_grid(config.sweep.start, config.sweep.end, config.sweep.step);
    let rows = confidence_sweep(&rules, &thresholds, |kept| {
        log::info!("sweep: training with {} rules", kept.len());
        let outcome =
            run_training_with(&dataset.train, kept, &training, TrainingOptions::default())?;
        let metrics = evaluate_splits(&outcome.model, &dataset, &config.eval)?;
        Ok(metrics.last().map(|(_, m)| *m).unwrap_or_default())
    })
    .map_err(|e| e.in_stage("sweep"))?;
    write_text(&config.out_dir.join(SWEEP_FILE), &sweep_csv(&rows))
        .map_err(|e| e.in_stage("sweep"))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_toml_fills_defaults_and_rejects_typos() {
        let c = RunConfig::from_toml("seed = 3\n[training]\ndim = 8\n").unwrap();
        assert_eq!(c.training.dim, 8);
        assert_eq!(c.training.negatives, 10);
        assert_eq!(c.effective_training().seed, 3);
        assert!(RunConfig::from_toml("[training]\ndimm = 8\n").is_err());
    }

    #[test]
    fn variant_is_applied() {
        let c = RunConfig::from_toml("variant = \"no-iterative\"\n").unwrap();
        assert!(!c.effective_training().iterative);
    }

    #[test]
    fn missing_training_file_is_a_config_error() {
        let c = RunConfig {
            train: Some(PathBuf::from("/nonexistent/train.tsv")),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::default().validate(),
            Err(Error::Config(_))
        ));
    }
}
