//! Training, evaluation, cross-validation and the comparison studies.

use std::fs;
use std::io::Write;
use std::path::Path;

use depnet_tensor::{Adam, AdamConfig, Graph, ParamStore};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::Modality;
use crate::corpus::{kfold, split, Label, UserRecord};
use crate::error::{Error, Result};
use crate::model::{decide, Ablation, DepressionNet, EmbeddingInit, ModelConfig, UserInput, DEFAULT_THRESHOLD};
use crate::pipeline::{prepare_inputs, vocabulary, FeaturePipeline, InputMode, Resources, DEFAULT_TOP_WORDS};
use crate::seed::{derive_seed, rng_for};
use crate::topicmodel::LdaConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Tallies `(truth, prediction)` pairs with "depressed" as positive.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (truth, pred) in pairs {
            match (truth, pred) {
                (Label::Depressed, Label::Depressed) => c.tp += 1,
                (Label::NonDepressed, Label::Depressed) => c.fp += 1,
                (Label::Depressed, Label::NonDepressed) => c.fn_ += 1,
                (Label::NonDepressed, Label::NonDepressed) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    /// The same counts with the classes swapped.
    pub fn flipped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Metrics reported as 0 because their denominator was 0.
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let mut undefined = Vec::new();
        let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
        let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
        let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut undefined);
        let n = c.flipped();
        let neg_precision = ratio(n.tp, n.tp + n.fp, "negative_precision", &mut undefined);
        let neg_recall = ratio(n.tp, n.tp + n.fn_, "negative_recall", &mut undefined);
        let f1 = harmonic(precision, recall);
        Self {
            confusion: c,
            precision,
            recall,
            f1,
            accuracy,
            macro_precision: (precision + neg_precision) / 2.0,
            macro_recall: (recall + neg_recall) / 2.0,
            macro_f1: (f1 + harmonic(neg_precision, neg_recall)) / 2.0,
            undefined,
        }
    }

    pub fn zero_division(&self) -> bool {
        !self.undefined.is_empty()
    }
}

/// Settings for one experiment. The model and topic seeds are derived from
/// `seed`; the seeds inside `model` and `lda` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub input_mode: InputMode,
    pub ablation: Ablation,
    pub adam: AdamConfig,
    pub lda: LdaConfig,
    pub top_words: usize,
    pub threshold: f64,
    /// Stop once training accuracy reaches this value (checked after every
    /// epoch).
    pub target_train_accuracy: Option<f64>,
    /// Evaluate the training set after every epoch.
    pub track_train_accuracy: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 16,
            epochs: 50,
            seed: 0,
            input_mode: InputMode::Summary,
            ablation: Ablation::default(),
            adam: AdamConfig::default(),
            lda: LdaConfig::default(),
            top_words: DEFAULT_TOP_WORDS,
            threshold: DEFAULT_THRESHOLD,
            target_train_accuracy: None,
            track_train_accuracy: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.top_words == 0 {
            return Err(Error::InvalidArgument("top_words must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument("threshold must lie in [0, 1]".into()));
        }
        self.ablation.validate()?;
        self.model.validate()
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig {
            seed: derive_seed(self.seed, "lda"),
            ..self.lda
        }
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, "model")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's examples.
    pub loss: f64,
    pub train_accuracy: Option<f64>,
    pub valid: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, when a validation set was given.
    pub best_epoch: Option<usize>,
    /// Probabilities clamped inside the loss.
    pub clamped: usize,
}

/// Per-user predictions for `inputs`.
pub fn predict_all(net: &DepressionNet, inputs: &[UserInput], ablation: &Ablation, threshold: f64) -> Result<Vec<(Label, f64)>> {
    inputs
        .par_iter()
        .map(|x| {
            let [p_dep, _] = net.predict_proba(x, ablation)?;
            Ok((decide(p_dep, threshold), p_dep))
        })
        .collect()
}

pub fn evaluate(net: &DepressionNet, inputs: &[UserInput], ablation: &Ablation, threshold: f64) -> Result<Metrics> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate zero users".into()));
    }
    let preds = predict_all(net, inputs, ablation, threshold)?;
    let pairs = inputs
        .iter()
        .zip(preds)
        .map(|(x, (pred, _))| Ok((x.label.ok_or_else(|| Error::Unlabeled(x.user_id.clone()))?, pred)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_confusion(Confusion::from_pairs(pairs)))
}

/// Mini-batch Adam on `train`. With a validation set, the parameters of the
/// epoch with the best validation F1 (earliest on ties) are restored at the
/// end.
pub fn fit_model(net: &mut DepressionNet, config: &RunConfig, train: &[UserInput], valid: Option<&[UserInput]>) -> Result<History> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut adam = Adam::new(config.adam);
    let mut history = History::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, &format!("shuffle:{epoch}")));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&UserInput> = batch.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let vars = net.bind_store(&mut g);
            let loss = net.loss(&mut g, &vars, &inputs, &config.ablation)?;
            total += g.value(loss).item() * inputs.len() as f64;
            let grads = g.backward(loss)?;
            history.clamped += g.clamp_count();
            adam.step(&mut net.store, &g.param_grads(&grads))?;
        }
        let train_accuracy = if config.track_train_accuracy || config.target_train_accuracy.is_some() {
            Some(evaluate(net, train, &config.ablation, config.threshold)?.accuracy)
        } else {
            None
        };
        let valid_metrics = match valid {
            Some(v) if !v.is_empty() => Some(evaluate(net, v, &config.ablation, config.threshold)?),
            _ => None,
        };
        if let Some(m) = &valid_metrics {
            if best.as_ref().is_none_or(|(f1, _)| m.f1 > *f1) {
                best = Some((m.f1, net.store.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        log::debug!("epoch {epoch}: loss {:.6} train_acc {train_accuracy:?}", total / train.len() as f64);
        history.epochs.push(EpochRecord {
            epoch,
            loss: total / train.len() as f64,
            train_accuracy,
            valid: valid_metrics,
        });
        if let (Some(target), Some(acc)) = (config.target_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        net.store = store;
    }
    Ok(history)
}

/// A trained model with the feature pipeline it was fitted with.
#[derive(Debug, Clone)]
pub struct Trained {
    pub net: DepressionNet,
    pub pipeline: FeaturePipeline,
    pub history: History,
    pub config: RunConfig,
}

impl Trained {
    pub fn inputs(&self, users: &[UserRecord], res: &Resources) -> Result<Vec<UserInput>> {
        prepare(&self.config, &self.pipeline, res, users)
    }

    pub fn evaluate(&self, users: &[UserRecord], res: &Resources) -> Result<Metrics> {
        let inputs = self.inputs(users, res)?;
        evaluate(&self.net, &inputs, &self.config.ablation, self.config.threshold)
    }

    /// Checkpoint, feature pipeline, run config and history under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.net.save(dir, self.history.epochs.len() as u64)?;
        self.pipeline.save(dir)?;
        write_json(&dir.join(RUN_CONFIG_FILE), &self.config)?;
        write_json(&dir.join(HISTORY_FILE), &self.history)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::file(path, e))
        };
        let config: RunConfig = serde_json::from_str(&read(RUN_CONFIG_FILE)?)?;
        config.validate()?;
        Ok(Self {
            net: DepressionNet::load(dir)?,
            pipeline: FeaturePipeline::load(dir)?,
            history: serde_json::from_str(&read(HISTORY_FILE)?)?,
            config,
        })
    }
}

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const HISTORY_FILE: &str = "history.json";

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::file(path, e))
}

fn prepare(config: &RunConfig, pipeline: &FeaturePipeline, res: &Resources, users: &[UserRecord]) -> Result<Vec<UserInput>> {
    prepare_inputs(
        users,
        pipeline,
        res,
        config.input_mode,
        config.model.m,
        config.model.n_max,
        derive_seed(config.seed, "selection"),
    )
}

/// Fits the feature pipeline on `train_users`, builds the model and trains
/// it. `valid_users` may be empty.
pub fn train(config: &RunConfig, res: &Resources, train_users: &[UserRecord], valid_users: &[UserRecord]) -> Result<Trained> {
    config.validate()?;
    if train_users.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let pipeline = FeaturePipeline::fit(train_users, res, config.lda_config(), config.top_words)?;
    let train_inputs = prepare(config, &pipeline, res, train_users)?;
    let valid_inputs = prepare(config, &pipeline, res, valid_users)?;
    let mut model = config.model.clone();
    model.topic_dim = pipeline.topic_words.len();
    model.seed = config.model_seed();
    let init = match &res.word_vectors {
        Some(wv) => EmbeddingInit::Pretrained(wv.as_ref().clone()),
        None => EmbeddingInit::Random(vocabulary(&train_inputs)),
    };
    let mut net = DepressionNet::new(model.clone(), init)?;
    let valid = (!valid_inputs.is_empty()).then_some(valid_inputs.as_slice());
    let history = fit_model(&mut net, config, &train_inputs, valid)?;
    let mut config = config.clone();
    config.model = model;
    Ok(Trained {
        net,
        pipeline,
        history,
        config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_users: Vec<String>,
    pub fitted_on: Vec<String>,
    pub metrics: Metrics,
    pub history: History,
}

/// Mean and population standard deviation of the headline metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: (f64, f64),
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f1: (f64, f64),
    pub macro_f1: (f64, f64),
}

/// Shifted by the first value so identical inputs give that value exactly
/// and a spread of 0.
fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let first = xs.clone().next().unwrap_or(0.0);
    let mean = first + xs.clone().map(|x| x - first).sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn of(metrics: &[&Metrics]) -> Self {
        let it = |f: fn(&Metrics) -> f64| mean_std(metrics.iter().map(move |m| f(m)));
        Self {
            accuracy: it(|m| m.accuracy),
            precision: it(|m| m.precision),
            recall: it(|m| m.recall),
            f1: it(|m| m.f1),
            macro_f1: it(|m| m.macro_f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub aggregate: Aggregate,
}

pub const CV_HEADER: [&str; 17] = [
    "fold",
    "n_train",
    "n_test",
    "tp",
    "fp",
    "fn",
    "tn",
    "accuracy",
    "accuracy_std",
    "precision",
    "precision_std",
    "recall",
    "recall_std",
    "f1",
    "f1_std",
    "macro_f1",
    "macro_f1_std",
];

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

impl CvReport {
    /// Pooled confusion over all folds.
    pub fn pooled(&self) -> Metrics {
        let c = self
            .folds
            .iter()
            .fold(Confusion::default(), |acc, f| acc.merge(&f.metrics.confusion));
        Metrics::from_confusion(c)
    }

    /// One row per fold, then an `aggregate` row with means and standard
    /// deviations.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CV_HEADER)?;
        for f in &self.folds {
            let m = &f.metrics;
            let c = m.confusion;
            w.write_record([
                f.fold.to_string(),
                f.n_train.to_string(),
                f.n_test.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                fmt(m.accuracy),
                String::new(),
                fmt(m.precision),
                String::new(),
                fmt(m.recall),
                String::new(),
                fmt(m.f1),
                String::new(),
                fmt(m.macro_f1),
                String::new(),
            ])?;
        }
        let a = &self.aggregate;
        let c = self.pooled().confusion;
        let n_train: usize = self.folds.iter().map(|f| f.n_train).sum();
        let n_test: usize = self.folds.iter().map(|f| f.n_test).sum();
        let mut row = vec![
            "aggregate".to_string(),
            n_train.to_string(),
            n_test.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
        ];
        for (mean, std) in [a.accuracy, a.precision, a.recall, a.f1, a.macro_f1] {
            row.push(fmt(mean));
            row.push(fmt(std));
        }
        w.write_record(row)?;
        w.flush()?;
        Ok(())
    }
}

/// Runs `f` on a pool of `jobs` threads (at least one).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// `k`-fold cross-validation: the feature pipeline is refitted on each
/// training portion and no validation set is carved out, so each fold keeps
/// its final-epoch parameters. Folds run on up to `jobs` threads; results do
/// not depend on `jobs`.
pub fn cross_validate(config: &RunConfig, res: &Resources, users: &[UserRecord], k: usize, jobs: usize) -> Result<CvReport> {
    config.validate()?;
    let plan = kfold(users, k, derive_seed(config.seed, "folds"))?;
    let folds = with_jobs(jobs, || {
        (0..plan.k())
            .into_par_iter()
            .map(|i| {
                let (train_users, test_users) = plan.partition(users, i);
                let trained = train(config, res, &train_users, &[])?;
                let metrics = trained.evaluate(&test_users, res)?;
                Ok(FoldResult {
                    fold: i,
                    n_train: train_users.len(),
                    n_test: test_users.len(),
                    test_users: test_users.iter().map(|u| u.user_id.clone()).collect(),
                    fitted_on: trained.pipeline.fitted_on,
                    metrics,
                    history: trained.history,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let aggregate = Aggregate::of(&folds.iter().map(|f| &f.metrics).collect::<Vec<_>>());
    Ok(CvReport {
        seed: config.seed,
        folds,
        aggregate,
    })
}

/// How a study scores each variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train on a seeded split, score the held-out part.
    Holdout { train_fraction: f64 },
    /// Pooled confusion over `k` folds.
    CrossValidation { k: usize },
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Holdout { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub variant: String,
    pub metrics: Metrics,
}

fn score(config: &RunConfig, res: &Resources, users: &[UserRecord], protocol: Protocol, jobs: usize) -> Result<Metrics> {
    match protocol {
        Protocol::Holdout { train_fraction } => {
            let (tr, te) = split(users, train_fraction, derive_seed(config.seed, "holdout"))?;
            train(config, res, &tr, &[])?.evaluate(&te, res)
        }
        Protocol::CrossValidation { k } => Ok(cross_validate(config, res, users, k, jobs)?.pooled()),
    }
}

fn run_study(
    variants: Vec<(String, RunConfig)>,
    res: &Resources,
    users: &[UserRecord],
    protocol: Protocol,
    jobs: usize,
) -> Result<Vec<StudyRow>> {
    with_jobs(jobs, || {
        variants
            .into_par_iter()
            .map(|(variant, cfg)| {
                log::info!("study variant {variant}");
                Ok(StudyRow {
                    variant,
                    metrics: score(&cfg, res, users, protocol, 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// The four input modes under identical seeds, summary first.
pub fn input_mode_study(config: &RunConfig, res: &Resources, users: &[UserRecord], protocol: Protocol, jobs: usize) -> Result<Vec<StudyRow>> {
    let variants = InputMode::ALL
        .into_iter()
        .map(|mode| {
            let cfg = RunConfig {
                input_mode: mode,
                ..config.clone()
            };
            (mode.name().to_string(), cfg)
        })
        .collect();
    run_study(variants, res, users, protocol, jobs)
}

/// Full model, each modality dropped in turn, the summary branch alone and
/// the behaviour branch alone.
pub fn ablation_study(config: &RunConfig, res: &Resources, users: &[UserRecord], protocol: Protocol, jobs: usize) -> Result<Vec<StudyRow>> {
    let mut variants = vec![("full".to_string(), Ablation::default())];
    for m in Modality::ALL {
        variants.push((format!("without_{}", m.short()), Ablation::dropping(m)));
    }
    variants.push((
        "summary_only".to_string(),
        Ablation {
            drop_behavior: true,
            ..Ablation::default()
        },
    ));
    variants.push((
        "behavior_only".to_string(),
        Ablation {
            drop_summary: true,
            ..Ablation::default()
        },
    ));
    let variants = variants
        .into_iter()
        .map(|(name, ablation)| {
            let cfg = RunConfig {
                ablation,
                ..config.clone()
            };
            (name, cfg)
        })
        .collect();
    run_study(variants, res, users, protocol, jobs)
}

pub const STUDY_HEADER: [&str; 10] = [
    "variant",
    "tp",
    "fp",
    "fn",
    "tn",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "macro_f1",
];

pub fn write_study_csv(rows: &[StudyRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STUDY_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        let c = m.confusion;
        w.write_record([
            r.variant.clone(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            fmt(m.accuracy),
            fmt(m.precision),
            fmt(m.recall),
            fmt(m.f1),
            fmt(m.macro_f1),
        ])?;
    }
    w.flush()?;
    Ok(())
}
