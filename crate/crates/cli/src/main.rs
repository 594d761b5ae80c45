use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use iterlogic_core::embedding::{load_checkpoint, PromotionPolicy, UpdateMode};
use iterlogic_core::eval::RankMode;
use iterlogic_core::pipeline::{
    self, evaluate_splits, load_dataset, metrics_csv, obtain_rules, train_stage, write_text,
    RuleSummary, RunConfig, CONCLUSIONS_FILE, METRICS_FILE, MODEL_FILE, RULES_FILE,
};
use iterlogic_core::rules::{format_rules, load_rules, ConfidenceKind};
use iterlogic_core::synth::{self, SynthConfig};
use iterlogic_core::trainer::Variant;
use iterlogic_core::{ground_rules, Error, Metrics, ScorerKind};

/// Knowledge-graph completion with soft rules and complex embeddings.
#[derive(Parser)]
#[command(name = "iterlogic", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, env = "ITERLOGIC_OUT_DIR")]
    out_dir: Option<PathBuf>,

    /// Threads for gradient computation; more than one switches to the
    /// parallel update mode.
    #[arg(long, global = true, env = "ITERLOGIC_WORKERS")]
    workers: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine closed rules from the training split.
    Mine {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mining: MiningArgs,
    },
    /// Ground the rules once and write the conclusions.
    Ground {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train embeddings jointly with the rules.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Rank the evaluation split with a trained model.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// Model checkpoint; defaults to the one in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Mine (or read) rules, train and evaluate in one go.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        training: TrainingArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Retrain at a grid of rule-confidence thresholds.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        training: TrainingArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        start: Option<f64>,
        #[arg(long)]
        end: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Write a synthetic world with planted rules and known ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Rule file; skips mining.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct MiningArgs {
    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long)]
    min_support: Option<u64>,
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long, value_enum)]
    confidence: Option<Confidence>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Confidence {
    Standard,
    Pca,
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    scorer: Option<Scorer>,
    #[arg(long)]
    top_n: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scorer {
    Complex,
    Rotate,
}

#[derive(Args)]
struct EvalArgs {
    /// Rank against every entity instead of filtering known triples.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// default, polarization or fidelity.
    #[arg(long, default_value = "default")]
    preset: String,
    /// Directory to write into.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    persons: Option<usize>,
    #[arg(long)]
    cities: Option<usize>,
    #[arg(long)]
    countries: Option<usize>,
    /// Comma-separated rule confidences.
    #[arg(long, value_delimiter = ',')]
    confidences: Option<Vec<f64>>,
    #[arg(long)]
    held_out: Option<f64>,
    /// Share of false candidates per rule.
    #[arg(long)]
    false_share: Option<f64>,
    #[arg(long)]
    evidence: Option<f64>,
}

/// Published rule counts, keyed by training-graph shape.
const REFERENCE_RULES: [(&str, usize, usize, usize); 2] =
    [("FB15K", 14_951, 1_345, 441), ("DB100K", 99_604, 470, 25)];

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .chain()
                .any(|c| c.downcast_ref::<Error>().is_some_and(is_usage_error));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}

/// Problems with the invocation rather than with a run.
fn is_usage_error(e: &Error) -> bool {
    match e {
        Error::Config(_) | Error::Vocabulary { .. } => true,
        Error::Stage { error, .. } => is_usage_error(error),
        _ => false,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Synth(args) = &cli.command {
        return synth(args, cli.seed);
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(Error::Config("workers must be positive".into()));
        }
        config.training.workers = n;
        config.training.update_mode = if n > 1 {
            UpdateMode::Parallel
        } else {
            UpdateMode::Deterministic
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }

    match cli.command {
        Command::Mine { data, mining } => {
            data.apply(&mut config);
            mining.apply(&mut config);
            mine(&config)
        }
        Command::Ground { data } => {
            data.apply(&mut config);
            ground(&config)
        }
        Command::Train {
            data,
            mining,
            training,
        } => {
            data.apply(&mut config);
            mining.apply(&mut config);
            training.apply(&mut config);
            train(&config)
        }
        Command::Eval { data, eval, model } => {
            data.apply(&mut config);
            eval.apply(&mut config);
            evaluate(&config, model)
        }
        Command::Pipeline {
            data,
            mining,
            training,
            eval,
        } => {
            data.apply(&mut config);
            mining.apply(&mut config);
            training.apply(&mut config);
            eval.apply(&mut config);
            let report = pipeline::run_pipeline(&config)?;
            print_metrics(&report.metrics);
            println!(
                "{} rules, {} conclusions promoted; artifacts in {}",
                report.rules.len(),
                report.outcome.state.promoted.len(),
                config.out_dir.display()
            );
            Ok(())
        }
        Command::Sweep {
            data,
            mining,
            training,
            eval,
            start,
            end,
            step,
        } => {
            data.apply(&mut config);
            mining.apply(&mut config);
            training.apply(&mut config);
            eval.apply(&mut config);
            set(&mut config.sweep.start, start);
            set(&mut config.sweep.end, end);
            set(&mut config.sweep.step, step);
            let rows = pipeline::run_sweep(&config)?;
            println!("threshold  rules  MRR     Hits@1  Hits@10");
            for r in rows {
                println!(
                    "{:<9.2}  {:<5}  {:.4}  {:.4}  {:.4}",
                    r.threshold, r.rules, r.metrics.mrr, r.metrics.hits1, r.metrics.hits10
                );
            }
            Ok(())
        }
        Command::Synth(_) => unreachable!(),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, config: &mut RunConfig) {
        for (slot, value) in [
            (&mut config.train, self.train),
            (&mut config.valid, self.valid),
            (&mut config.test, self.test),
            (&mut config.rules, self.rules),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
    }
}

impl MiningArgs {
    fn apply(self, config: &mut RunConfig) {
        let m = &mut config.mining;
        set(&mut m.min_confidence, self.min_confidence);
        set(&mut m.min_support, self.min_support);
        set(&mut m.max_length, self.max_length);
        set(
            &mut m.confidence_kind,
            self.confidence.map(|c| match c {
                Confidence::Standard => ConfidenceKind::Standard,
                Confidence::Pca => ConfidenceKind::Pca,
            }),
        );
    }
}

impl TrainingArgs {
    fn apply(self, config: &mut RunConfig) {
        if self.variant.is_some() {
            config.variant = self.variant;
        }
        config.resume |= self.resume;
        let t = &mut config.training;
        set(&mut t.dim, self.dim);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.negatives, self.negatives);
        set(&mut t.l2, self.l2);
        set(&mut t.epochs, self.epochs);
        set(&mut t.iterations, self.iterations);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.acceptance_threshold, self.threshold);
        set(&mut t.checkpoint_every, self.checkpoint_every);
        set(
            &mut t.scorer,
            self.scorer.map(|s| match s {
                Scorer::Complex => ScorerKind::Complex,
                Scorer::Rotate => ScorerKind::Rotate,
            }),
        );
        if self.top_n {
            t.promotion = PromotionPolicy::TopN;
        }
    }
}

impl EvalArgs {
    fn apply(self, config: &mut RunConfig) {
        if self.raw {
            config.eval.mode = RankMode::Raw;
        }
    }
}

fn require_train(config: &RunConfig) -> anyhow::Result<()> {
    config.mining.validate()?;
    for path in [&config.train, &config.valid, &config.test, &config.rules]
        .into_iter()
        .flatten()
    {
        if !path.is_file() {
            bail!(Error::Config(format!("{} does not exist", path.display())));
        }
    }
    if config.train.is_none() {
        bail!(Error::Config("no training file given (--train)".into()));
    }
    Ok(())
}

fn mine(config: &RunConfig) -> anyhow::Result<()> {
    require_train(config)?;
    let dataset = load_dataset(config)?;
    let rules = pipeline::mine(&dataset.train, &config.mining)?;
    let path = config.out_dir.join(RULES_FILE);
    write_text(&path, &format_rules(&rules, &dataset.vocab))?;
    let s = RuleSummary::of(&rules);
    println!(
        "{} rules ({} of length 1, {} of length 2) written to {}",
        s.total,
        s.length_one,
        s.length_two,
        path.display()
    );
    let (e, r) = (dataset.train.entity_count(), dataset.train.relation_count());
    if let Some((name, _, _, published)) = REFERENCE_RULES
        .iter()
        .find(|(_, re, rr, _)| *rr == r && e.abs_diff(*re) * 100 <= *re)
    {
        println!(
            "{name} reference: {published} rules; deviation {:+} ({:+.1}%)",
            s.total as i64 - *published as i64,
            100.0 * (s.total as f64 - *published as f64) / *published as f64
        );
    }
    Ok(())
}

fn rules_for(
    config: &RunConfig,
    dataset: &iterlogic_core::Dataset,
) -> anyhow::Result<Vec<iterlogic_core::HornRule>> {
    let mined = config.out_dir.join(RULES_FILE);
    if config.rules.is_none() && mined.is_file() {
        log::info!("reading rules from {}; mining skipped", mined.display());
        return Ok(load_rules(&mined, &dataset.vocab)?);
    }
    Ok(obtain_rules(config, dataset)?)
}

fn ground(config: &RunConfig) -> anyhow::Result<()> {
    require_train(config)?;
    let dataset = load_dataset(config)?;
    let rules = rules_for(config, &dataset)?;
    let set = ground_rules(&dataset.train, &rules)?;
    let v = &dataset.vocab;
    let mut text = String::new();
    for t in set.triples() {
        let ids: Vec<String> = set.derived_by(t).iter().map(|i| i.to_string()).collect();
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}",
            v.entity_name(t.head).unwrap_or("?"),
            v.relation_name(t.relation).unwrap_or("?"),
            v.entity_name(t.tail).unwrap_or("?"),
            ids.join(",")
        );
    }
    let path = config.out_dir.join(CONCLUSIONS_FILE);
    write_text(&path, &text)?;
    println!(
        "{} conclusions from {} rules written to {}",
        set.len(),
        rules.len(),
        path.display()
    );
    for (i, group) in set.groups().iter().enumerate() {
        log::info!("rule {i}: {} conclusions", group.len());
    }
    Ok(())
}

fn train(config: &RunConfig) -> anyhow::Result<()> {
    require_train(config)?;
    config.effective_training().validate()?;
    let dataset = load_dataset(config)?;
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating {}", config.out_dir.display()))?;
    dataset.vocab.save(&config.out_dir)?;
    let rules = rules_for(config, &dataset)?;
    write_text(
        &config.out_dir.join(RULES_FILE),
        &format_rules(&rules, &dataset.vocab),
    )?;
    let outcome = train_stage(config, &dataset, &rules)?;
    let last = outcome.state.log.last();
    println!(
        "trained {} epochs with {} rules; {} conclusions promoted; final loss {:.5}",
        outcome.state.epoch,
        rules.len(),
        outcome.state.promoted.len(),
        last.map_or(0.0, |e| e.loss.total)
    );
    Ok(())
}

fn evaluate(config: &RunConfig, model: Option<PathBuf>) -> anyhow::Result<()> {
    require_train(config)?;
    let dataset = load_dataset(config)?;
    let path = model.unwrap_or_else(|| config.out_dir.join(MODEL_FILE));
    let (model, _) = load_checkpoint(&path)?;
    if model.entity_count() != dataset.vocab.entity_count()
        || model.relation_count() != dataset.vocab.relation_count()
    {
        bail!(Error::Config(format!(
            "{} holds {} entities and {} relations but the data has {} and {}",
            path.display(),
            model.entity_count(),
            model.relation_count(),
            dataset.vocab.entity_count(),
            dataset.vocab.relation_count()
        )));
    }
    let metrics = evaluate_splits(&model, &dataset, &config.eval)?;
    write_text(&config.out_dir.join(METRICS_FILE), &metrics_csv(&metrics))?;
    print_metrics(&metrics);
    Ok(())
}

fn print_metrics(metrics: &[(String, Metrics)]) {
    for (split, m) in metrics {
        println!("{}", m.table(split));
    }
}

fn synth(args: &SynthArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let mut c = SynthConfig::preset(&args.preset)?;
    set(&mut c.seed, seed);
    set(&mut c.persons, args.persons);
    set(&mut c.cities, args.cities);
    set(&mut c.countries, args.countries);
    set(&mut c.rule_confidences, args.confidences.clone());
    set(&mut c.held_out, args.held_out);
    set(&mut c.evidence, args.evidence);
    if args.false_share.is_some() {
        c.false_share = args.false_share;
    }
    let data = synth::generate(&c)?;
    data.write(&args.dir)?;
    println!(
        "{} train / {} valid / {} test triples, {} rules, {} held-out true and {} false conclusions in {}",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        data.rules.len(),
        data.held_out_true.len(),
        data.planted_false.len(),
        args.dir.display()
    );
    Ok(())
}
