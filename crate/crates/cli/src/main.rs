mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use depnet::behavior::extract_features;
use depnet::corpus::{
    filter_users, load_timelines, retain_language, write_timelines, AsciiLetterHeuristic, UserRecord,
    DEFAULT_MAX_FOLLOWERS, DEFAULT_MIN_POSTS,
};
use depnet::harness::{
    ablation_study, cross_validate, input_mode_study, predict_all, train, with_jobs, write_json, write_study_csv,
    Protocol, RunConfig, Trained, HISTORY_FILE,
};
use depnet::lexicon::Lexicons;
use depnet::pipeline::{fit_topics, select_tweets, InputMode, Providers};
use depnet::seed::derive_seed;
use depnet::summarize::{abstractive, AbstractiveProvider, ConcatTruncate};
use depnet::synth::{separable_users, SynthConfig};
use depnet::topicmodel::TopicModel;
use serde::Serialize;

use crate::config::{missing, MissingPath, PipelineConfig};

#[derive(Parser)]
#[command(name = "depnet", version, about = "Depression detection from user timelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Root seed; every other seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// TOML config; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Corpus {
    /// Timeline JSONL, one user per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct Lexicon {
    /// Directory holding vad.tsv, emoji.tsv, antidepressants.txt and symptoms/.
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    input_mode: Option<InputMode>,
    /// Stop training once training accuracy reaches this value.
    #[arg(long)]
    target_train_accuracy: Option<f64>,
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    s.parse().map_err(|e: depnet::Error| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    InputMode,
    Ablation,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolKind {
    Holdout,
    Cv,
}

#[derive(Subcommand)]
enum Command {
    /// Drop users with too few posts or too many followers.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the JSON stats report; stderr otherwise.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_POSTS)]
        min_posts: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_FOLLOWERS)]
        max_followers: u64,
        /// Also drop users whose text is mostly non-ASCII letters.
        #[arg(long)]
        english_only: bool,
    },
    /// Fit the topic model on depressed users' tweets.
    FitTopics {
        #[command(flatten)]
        corpus: Corpus,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Raw behaviour features, one JSON record per user.
    Features {
        #[command(flatten)]
        corpus: Corpus,
        #[command(flatten)]
        lexicons: Lexicon,
        /// Topic model written by fit-topics.
        #[arg(long, conflicts_with = "fit_topics", required_unless_present = "fit_topics")]
        topic_model: Option<PathBuf>,
        /// Fit the topic model on the corpus first.
        #[arg(long)]
        fit_topics: bool,
        #[arg(long)]
        top_words: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary-branch token sequence per user.
    Summarize {
        #[command(flatten)]
        corpus: Corpus,
        #[arg(long, value_parser = parse_mode)]
        input_mode: Option<InputMode>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a corpus and write a checkpoint directory.
    Train {
        #[command(flatten)]
        corpus: Corpus,
        #[command(flatten)]
        lexicons: Lexicon,
        /// Validation corpus used to pick the best epoch.
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunOverrides,
    },
    /// Score a labelled corpus with a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        corpus: Corpus,
        #[command(flatten)]
        lexicons: Lexicon,
        /// Metrics JSON; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print `user_id<TAB>label<TAB>score` per user.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        corpus: Corpus,
        #[command(flatten)]
        lexicons: Lexicon,
    },
    /// k-fold cross-validation.
    Cv {
        #[command(flatten)]
        corpus: Corpus,
        #[command(flatten)]
        lexicons: Lexicon,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Metrics CSV; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full report with per-fold histories.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        run: RunOverrides,
    },
    /// Compare input modes or modality ablations.
    Study {
        #[arg(long, value_enum)]
        kind: StudyKind,
        #[arg(long, value_enum, default_value = "holdout")]
        protocol: ProtocolKind,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[command(flatten)]
        corpus: Corpus,
        #[command(flatten)]
        lexicons: Lexicon,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunOverrides,
    },
    /// Write the synthetic separable corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().users)]
        users: usize,
    },
}

struct App {
    cfg: PipelineConfig,
    jobs: usize,
}

impl App {
    fn corpus_path(&self, c: &Corpus) -> Result<PathBuf> {
        c.corpus
            .clone()
            .or_else(|| self.cfg.paths.data.clone())
            .ok_or_else(|| anyhow!("no corpus given: pass --corpus or set paths.data"))
    }

    fn users(&self, c: &Corpus) -> Result<Vec<UserRecord>> {
        read_users(&self.corpus_path(c)?)
    }

    fn lexicon_dir(&self, l: &Lexicon) -> Result<PathBuf> {
        let dir = l
            .lexicons
            .clone()
            .or_else(|| self.cfg.paths.lexicons.clone())
            .ok_or_else(|| anyhow!("no lexicons given: pass --lexicons or set paths.lexicons"))?;
        if !dir.is_dir() {
            bail!(missing(&dir, "lexicon directory"));
        }
        Ok(dir)
    }

    fn checkpoint(&self, dir: &Option<PathBuf>) -> Result<PathBuf> {
        dir.clone()
            .or_else(|| self.cfg.paths.checkpoint_dir.clone())
            .ok_or_else(|| anyhow!("no checkpoint directory: pass --checkpoint/--out or set paths.checkpoint_dir"))
    }

    fn run_config(&self, o: &RunOverrides) -> Result<RunConfig> {
        let mut run = self.cfg.run.clone();
        if let Some(e) = o.epochs {
            run.epochs = e;
        }
        if let Some(b) = o.batch_size {
            run.batch_size = b;
        }
        if let Some(m) = o.input_mode {
            run.input_mode = m;
        }
        if o.target_train_accuracy.is_some() {
            run.target_train_accuracy = o.target_train_accuracy;
        }
        run.validate()?;
        Ok(run)
    }
}

fn read_users(path: &Path) -> Result<Vec<UserRecord>> {
    if !path.exists() {
        bail!(missing(path, "corpus"));
    }
    load_timelines(path).with_context(|| format!("reading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = output(Some(path))?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct IngestStats {
    input_users: usize,
    kept: usize,
    excluded: usize,
    excluded_by_filters: usize,
    excluded_by_language: usize,
    kept_per_class: BTreeMap<&'static str, usize>,
}

fn ingest(
    input: &Path,
    output_path: &Path,
    stats: Option<&Path>,
    min_posts: usize,
    max_followers: u64,
    english_only: bool,
) -> Result<()> {
    let users = read_users(input)?;
    let n = users.len();
    let filtered = filter_users(users, min_posts, max_followers);
    let after_filters = filtered.len();
    let kept = if english_only {
        retain_language(filtered, &AsciiLetterHeuristic::default())
    } else {
        filtered
    };
    write_timelines(output_path, &kept)?;
    let mut per_class = BTreeMap::from([("depressed", 0), ("non_depressed", 0), ("unlabeled", 0)]);
    for u in &kept {
        *per_class.entry(u.label.map_or("unlabeled", |l| l.as_str())).or_default() += 1;
    }
    let report = IngestStats {
        input_users: n,
        kept: kept.len(),
        excluded: n - kept.len(),
        excluded_by_filters: n - after_filters,
        excluded_by_language: after_filters - kept.len(),
        kept_per_class: per_class,
    };
    match stats {
        Some(p) => write_json(p, &report)?,
        None => eprintln!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    user_id: &'a str,
    source_tweet_ids: Vec<String>,
    tokens: Vec<String>,
}

fn summarize_users(users: &[UserRecord], run: &RunConfig, providers: &Providers, out: &Path) -> Result<()> {
    let seed = derive_seed(run.seed, "selection");
    let records = users
        .iter()
        .map(|u| {
            let selected = select_tweets(u, run.input_mode, run.model.m, seed, providers)?;
            let condenser: &dyn AbstractiveProvider = match run.input_mode {
                InputMode::Summary => providers.condenser.as_ref(),
                _ => &ConcatTruncate,
            };
            let s = abstractive(&selected, condenser, run.model.n_max)?;
            Ok(SummaryRecord {
                user_id: &u.user_id,
                source_tweet_ids: s.source_tweet_ids,
                tokens: s.tokens,
            })
        })
        .collect::<depnet::Result<Vec<_>>>()?;
    write_jsonl(out, &records)
}

fn topic_words(ctx: &App, users: &[UserRecord], topic_model: Option<&Path>, top_words: usize) -> Result<Vec<String>> {
    match topic_model {
        Some(path) => {
            if !path.exists() {
                bail!(missing(path, "topic model"));
            }
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let model: TopicModel =
                serde_json::from_str(&text).with_context(|| format!("parsing topic model {}", path.display()))?;
            Ok(model.topic_words(top_words))
        }
        None => {
            let stop = depnet::text::default_stopwords();
            Ok(fit_topics(users, &stop, ctx.cfg.run.lda_config(), top_words)?.words)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => bail!(missing(p, "config")),
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.apply_env();
    cfg.validate()?;
    let ctx = App { cfg, jobs: cli.jobs };
    with_jobs(ctx.jobs, || dispatch(&ctx, cli.command, cli.seed))?
}

fn dispatch(ctx: &App, command: Command, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Ingest {
            input,
            output,
            stats,
            min_posts,
            max_followers,
            english_only,
        } => ingest(&input, &output, stats.as_deref(), min_posts, max_followers, english_only),
        Command::FitTopics {
            corpus,
            out,
            topics,
            iters,
        } => {
            let users = ctx.users(&corpus)?;
            let mut lda = ctx.cfg.run.lda_config();
            if let Some(k) = topics {
                lda.topics = k;
            }
            if let Some(i) = iters {
                lda.iters = i;
            }
            let fit = fit_topics(&users, &depnet::text::default_stopwords(), lda, ctx.cfg.run.top_words)?;
            log::info!("topic words: {}", fit.words.join(" "));
            write_json(&out, &fit.model)?;
            Ok(())
        }
        Command::Features {
            corpus,
            lexicons,
            topic_model,
            fit_topics: _,
            top_words,
            out,
        } => {
            let users = ctx.users(&corpus)?;
            let dir = ctx.lexicon_dir(&lexicons)?;
            let lex = Lexicons::load(&dir).with_context(|| format!("loading lexicons from {}", dir.display()))?;
            let words = topic_words(ctx, &users, topic_model.as_deref(), top_words.unwrap_or(ctx.cfg.run.top_words))?;
            let feats = users
                .iter()
                .map(|u| extract_features(u, &lex, &words))
                .collect::<depnet::Result<Vec<_>>>()?;
            write_jsonl(&out, &feats)
        }
        Command::Summarize {
            corpus,
            input_mode,
            m,
            n_max,
            out,
        } => {
            let users = ctx.users(&corpus)?;
            let mut run = ctx.cfg.run.clone();
            if let Some(mode) = input_mode {
                run.input_mode = mode;
            }
            if let Some(m) = m {
                run.model.m = m;
            }
            if let Some(n) = n_max {
                run.model.n_max = n;
            }
            summarize_users(&users, &run, &ctx.cfg.providers(), &out)
        }
        Command::Train {
            corpus,
            lexicons,
            valid,
            out,
            run,
        } => {
            let run = ctx.run_config(&run)?;
            let users = ctx.users(&corpus)?;
            let valid_users = match &valid {
                Some(p) => read_users(p)?,
                None => Vec::new(),
            };
            let res = ctx.cfg.resources(&ctx.lexicon_dir(&lexicons)?)?;
            let dir = ctx.checkpoint(&out)?;
            let trained = train(&run, &res, &users, &valid_users)?;
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            trained.save(&dir)?;
            let last = trained.history.epochs.last();
            println!(
                "trained {} epochs; final loss {:.6}; history in {}",
                trained.history.epochs.len(),
                last.map_or(f64::NAN, |e| e.loss),
                dir.join(HISTORY_FILE).display()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            lexicons,
            out,
        } => {
            let (trained, res) = load_trained(ctx, &checkpoint, &lexicons, seed)?;
            let users = ctx.users(&corpus)?;
            let metrics = trained.evaluate(&users, &res)?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &metrics)?;
            w.write_all(b"\n")?;
            w.flush()?;
            Ok(())
        }
        Command::Predict {
            checkpoint,
            corpus,
            lexicons,
        } => {
            let (trained, res) = load_trained(ctx, &checkpoint, &lexicons, seed)?;
            let users = ctx.users(&corpus)?;
            let inputs = trained.inputs(&users, &res)?;
            let preds = predict_all(&trained.net, &inputs, &trained.config.ablation, trained.config.threshold)?;
            let mut w = output(None)?;
            for (x, (label, score)) in inputs.iter().zip(preds) {
                writeln!(w, "{}\t{}\t{score:.6}", x.user_id, label.as_str())?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Cv {
            corpus,
            lexicons,
            k,
            out,
            report,
            run,
        } => {
            let run = ctx.run_config(&run)?;
            let users = ctx.users(&corpus)?;
            let res = ctx.cfg.resources(&ctx.lexicon_dir(&lexicons)?)?;
            let cv = cross_validate(&run, &res, &users, k, ctx.jobs)?;
            cv.write_csv(output(out.as_deref())?)?;
            if let Some(p) = report {
                write_json(&p, &cv)?;
            }
            Ok(())
        }
        Command::Study {
            kind,
            protocol,
            k,
            train_fraction,
            corpus,
            lexicons,
            out,
            run,
        } => {
            let run = ctx.run_config(&run)?;
            let users = ctx.users(&corpus)?;
            let res = ctx.cfg.resources(&ctx.lexicon_dir(&lexicons)?)?;
            let protocol = match protocol {
                ProtocolKind::Holdout => Protocol::Holdout { train_fraction },
                ProtocolKind::Cv => Protocol::CrossValidation { k },
            };
            let rows = match kind {
                StudyKind::InputMode => input_mode_study(&run, &res, &users, protocol, ctx.jobs)?,
                StudyKind::Ablation => ablation_study(&run, &res, &users, protocol, ctx.jobs)?,
            };
            write_study_csv(&rows, output(out.as_deref())?)?;
            Ok(())
        }
        Command::Synth { out, users } => {
            let cfg = SynthConfig {
                users,
                seed: seed.unwrap_or(SynthConfig::default().seed),
                ..SynthConfig::default()
            };
            write_timelines(&out, &separable_users(&cfg))?;
            Ok(())
        }
    }
}

/// The checkpoint's own run config decides everything but the providers;
/// `--seed` is ignored here.
fn load_trained(
    ctx: &App,
    checkpoint: &Option<PathBuf>,
    lexicons: &Lexicon,
    seed: Option<u64>,
) -> Result<(Trained, depnet::pipeline::Resources)> {
    let dir = ctx.checkpoint(checkpoint)?;
    if !dir.is_dir() {
        bail!(missing(&dir, "checkpoint directory"));
    }
    if seed.is_some() {
        log::warn!("--seed has no effect on a trained checkpoint");
    }
    let trained = Trained::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let mut cfg = ctx.cfg.clone();
    cfg.run = trained.config.clone();
    let res = cfg.resources(&ctx.lexicon_dir(lexicons)?)?;
    Ok((trained, res))
}

/// 2 when a named input does not exist, 1 for every other failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    let not_found = err.chain().any(|e| {
        e.is::<MissingPath>()
            || e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::NotFound)
            || matches!(
                e.downcast_ref::<depnet::Error>(),
                Some(depnet::Error::File { source, .. }) if source.kind() == io::ErrorKind::NotFound
            )
    });
    if not_found {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
