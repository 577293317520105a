use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use histag::corpus::{load_reference_lists, read_tsv, validate, write_tsv, Document, ReferenceSet};
use histag::evaluation::{evaluate, pos_lemma_posttreatment, Column, EvalOptions, RuleSet, Threshold};
use histag::preprocess::{join_morph, normalize_roman, segment_sentences, split_dataset, split_morph, SegmentationMode, SplitSet};
use histag::sweep::{generate_grid, neural_trainer, rank_models, run_sweep, GridOverrides, RankingPolicy, SweepOptions};
use histag::tagger::{model_file_name, save_model, train_with_observer, ModelSet, TaskId, TrainConfig};
use histag_service::{AppState, ServiceConfig};

mod settings;

use settings::{config_error, Classify, Failure, Outcome, Settings};

/// Lemmatisation and morpho-syntactic tagging of historical texts.
#[derive(Debug, Parser)]
#[command(name = "histag", version)]
struct Cli {
    /// key=value file supplying defaults for any flag (flags win)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Segment {
    Punctuation,
    Line,
}

impl From<Segment> for SegmentationMode {
    fn from(s: Segment) -> Self {
        match s {
            Segment::Punctuation => SegmentationMode::Punctuation,
            Segment::Line => SegmentationMode::Line,
        }
    }
}

#[derive(Debug, clap::Args)]
struct Refs {
    /// Allowed lemmas, one per line
    #[arg(long)]
    lemmas: Option<PathBuf>,
    /// Allowed atomic POS tags, one per line
    #[arg(long)]
    pos: Option<PathBuf>,
    /// Allowed morphology values, `CATEGORY<TAB>value` per line
    #[arg(long)]
    morph: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct Hyper {
    #[arg(long)]
    cemb_size: Option<usize>,
    #[arg(long)]
    cemb_layers: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_patience: Option<usize>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    /// accuracy, precision, recall or f1
    #[arg(long)]
    target_metric: Option<String>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_probability: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse TSV files, segment them into sentences and write one corpus
    Ingest {
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        segment: Option<Segment>,
    },
    /// List lemmas, POS tags and morph values missing from the reference lists
    Validate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        refs: Refs,
        /// Write the findings as TSV here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Replace Roman numerals by their value and canonicalise morph strings
    Normalize {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Shuffle sentences and write train.tsv, dev.tsv and test.tsv
    Split {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// train,dev,test fractions
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long, value_enum)]
        segment: Option<Segment>,
    },
    /// Train one task and save `<task>.htgm`
    Train {
        /// LEMMA, POS or a morphology category such as NOMB
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Where to write the per-epoch log
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Train a hyperparameter grid several times and pick a model by rank sum
    Sweep {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// JSON-lines run log; an existing log is resumed
        #[arg(long)]
        log: Option<PathBuf>,
        /// key=value grid overrides: cemb_sizes, cemb_layers, hidden_sizes as comma
        /// lists; any other key is a fixed training setting
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        report_dir: Option<PathBuf>,
        /// Print the grid and exit
        #[arg(long)]
        dry_run: bool,
    },
    /// Annotate a corpus with every model found in a directory
    Tag {
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare predictions with gold annotations
    Eval {
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Training split, for known/unknown/ambiguous subsets
        #[arg(long)]
        train: Option<PathBuf>,
        /// `all` or a comma list of: metrics, confusion, concentration,
        /// per_pos, lemma_by_pos, sentence_scores, que, json
        #[arg(long)]
        tables: Option<String>,
        #[arg(long)]
        report_dir: Option<PathBuf>,
        /// Lemma confusion cells need a count above this
        #[arg(long)]
        lemma_threshold: Option<usize>,
        /// POS confusion cells need at least this count
        #[arg(long)]
        pos_threshold: Option<usize>,
        /// Columns a word must get right in sentence scores, e.g. lemma,pos
        #[arg(long)]
        sentence_columns: Option<String>,
    },
    /// Rewrite homograph lemmas from the predicted POS
    Posttreat {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// family<TAB>pos<TAB>cue<TAB>lemma rules; the que rules by default
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Serve the tagging and correction HTTP API
    Serve {
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[command(flatten)]
        refs: Refs,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn read_doc(path: &Path) -> Outcome<Document> {
    read_tsv(path).map_err(|e| anyhow!("{}: {e}", path.display())).or_input()
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| anyhow!("{}: {e}", parent.display()))
            .or_runtime()?;
    }
    fs::write(path, bytes).map_err(|e| anyhow!("{}: {e}", path.display())).or_runtime()
}

fn segment_mode(s: &Settings, flag: Option<Segment>) -> Outcome<SegmentationMode> {
    match flag {
        Some(m) => Ok(m.into()),
        None => match s.raw("segment") {
            None | Some("punctuation") => Ok(SegmentationMode::Punctuation),
            Some("line") => Ok(SegmentationMode::Line),
            Some(other) => Err(config_error(format!("segment must be punctuation or line, got `{other}`"))),
        },
    }
}

fn references(s: &Settings, refs: Refs, required: bool) -> Outcome<Option<ReferenceSet>> {
    let lemmas = s.get(refs.lemmas, "lemmas")?;
    let pos = s.get(refs.pos, "pos")?;
    let morph = s.get(refs.morph, "morph")?;
    match (lemmas, pos, morph) {
        (Some(l), Some(p), Some(m)) => Ok(Some(load_reference_lists(l, p, m).or_input()?)),
        (None, None, None) if !required => Ok(None),
        _ => Err(config_error("--lemmas, --pos and --morph must be given together")),
    }
}

fn task(s: &Settings, flag: Option<String>) -> Outcome<TaskId> {
    s.require(flag, "task")?.parse().or_config()
}

fn train_config(s: &Settings, task: TaskId, h: Hyper) -> Outcome<TrainConfig> {
    let mut config = TrainConfig::recommended(task);
    let known: BTreeSet<String> = histag::tagger::parse_kv(&config.to_kv())
        .expect("own output parses")
        .into_keys()
        .collect();
    for (k, v) in s.entries() {
        if known.contains(k) && k != "task" {
            config.set(k, v).or_config()?;
        }
    }
    let flags: [(&str, Option<String>); 13] = [
        ("cemb_size", h.cemb_size.map(|v| v.to_string())),
        ("cemb_layers", h.cemb_layers.map(|v| v.to_string())),
        ("hidden_size", h.hidden_size.map(|v| v.to_string())),
        ("dropout", h.dropout.map(|v| v.to_string())),
        ("learning_rate", h.learning_rate.map(|v| v.to_string())),
        ("lr_patience", h.lr_patience.map(|v| v.to_string())),
        ("lr_decay", h.lr_decay.map(|v| v.to_string())),
        ("early_stop_patience", h.early_stop_patience.map(|v| v.to_string())),
        ("target_metric", h.target_metric),
        ("max_epochs", h.max_epochs.map(|v| v.to_string())),
        ("seed", h.seed.map(|v| v.to_string())),
        ("noise_probability", h.noise_probability.map(|v| v.to_string())),
        ("batch_size", h.batch_size.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            config.set(k, &v).or_config()?;
        }
    }
    config.validate().or_config()?;
    Ok(config)
}

fn parse_ratios(text: &str) -> Outcome<[f64; 3]> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| config_error(format!("ratios: {e}")))?;
    values
        .try_into()
        .map_err(|_| config_error("ratios needs three comma-separated values"))
}

fn run(cli: Cli) -> Outcome<()> {
    let s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { input, output, segment } => {
            let inputs = if input.is_empty() {
                vec![s.path(None, "input")?]
            } else {
                input
            };
            let output = s.path(output, "output")?;
            let mode = segment_mode(&s, segment)?;
            let mut sentences = Vec::new();
            for path in &inputs {
                sentences.extend(segment_sentences(&read_doc(path)?, mode));
            }
            let doc = Document::new("", sentences);
            write_file(&output, write_tsv(&doc))?;
            println!(
                "{} files, {} sentences, {} tokens -> {}",
                inputs.len(),
                doc.sentences.len(),
                doc.token_count(),
                output.display()
            );
        }
        Command::Validate { input, refs, report } => {
            let doc = read_doc(&s.path(input, "input")?)?;
            let refs = references(&s, refs, true)?.expect("required");
            let findings = validate(&doc, &refs);
            if let Some(path) = s.get(report, "report")? {
                write_file(&path, findings.to_tsv())?;
            }
            println!(
                "unallowed lemmas {}, POS {}, morph {}",
                findings.unallowed_lemmas.len(),
                findings.unallowed_pos.len(),
                findings.unallowed_morph.len()
            );
        }
        Command::Normalize { input, output } => {
            let mut doc = read_doc(&s.path(input, "input")?)?;
            let output = s.path(output, "output")?;
            let (mut numerals, mut morphs) = (0, 0);
            for t in doc.sentences.iter_mut().flat_map(|s| s.tokens.iter_mut()) {
                let form = normalize_roman(&t.form);
                if form != t.form {
                    t.form = form;
                    numerals += 1;
                }
                if let Ok(v) = split_morph(&t.morph) {
                    let canonical = join_morph(&v);
                    if t.morph != "_" && canonical != t.morph {
                        t.morph = canonical;
                        morphs += 1;
                    }
                }
            }
            write_file(&output, write_tsv(&doc))?;
            println!("{numerals} numerals normalised, {morphs} morph strings canonicalised");
        }
        Command::Split { input, output_dir, seed, ratios, segment } => {
            let doc = read_doc(&s.path(input, "input")?)?;
            let dir = s.path(output_dir, "output_dir")?;
            let seed = s.or(seed, "seed", 42)?;
            let ratios = parse_ratios(&s.or(ratios, "ratios", "0.8,0.1,0.1".to_string())?)?;
            let sentences = segment_sentences(&doc, segment_mode(&s, segment)?);
            let split = split_dataset(&sentences, ratios, seed).or_input()?;
            for (name, part) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
                write_file(&dir.join(format!("{name}.tsv")), write_tsv(&Document::new(name, part.clone())))?;
            }
            println!(
                "train {} / dev {} / test {} sentences (seed {seed})",
                split.train.len(),
                split.dev.len(),
                split.test.len()
            );
        }
        Command::Train { task: t, train, dev, model_dir, report_dir, hyper } => {
            let task = task(&s, t)?;
            let config = train_config(&s, task, hyper)?;
            let train = read_doc(&s.path(train, "train")?)?;
            let dev = read_doc(&s.path(dev, "dev")?)?;
            let model_dir = s.path(model_dir, "model_dir")?;
            let model = train_with_observer(&config, &train.sentences, &dev.sentences, |r| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  dev {:.4}  lr {:.2e}{}",
                    r.epoch,
                    r.loss,
                    r.dev_score,
                    r.learning_rate,
                    if r.improved { "  *" } else { "" }
                );
            })
            .map_err(|e| match e {
                histag::tagger::TaggerError::EmptySplit(_) | histag::tagger::TaggerError::Morph(_) => {
                    Failure { kind: settings::Kind::Input, error: e.into() }
                }
                e => Failure { kind: settings::Kind::Runtime, error: e.into() },
            })?;
            let path = model_dir.join(model_file_name(task));
            fs::create_dir_all(&model_dir).or_runtime()?;
            save_model(&model, &path).or_runtime()?;
            if let Some(dir) = s.get(report_dir, "report_dir")? {
                let mut log = String::from("epoch\tloss\tdev_score\tlearning_rate\timproved\n");
                for r in &model.log {
                    log.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{}\n",
                        r.epoch, r.loss, r.dev_score, r.learning_rate, r.improved
                    ));
                }
                write_file(&dir.join(format!("train_{}.tsv", task.name().to_lowercase())), log)?;
            }
            let best = model.log.iter().map(|r| r.dev_score).fold(f64::NEG_INFINITY, f64::max);
            println!(
                "{}: {} epochs, best dev {} {:.4} -> {}",
                task,
                model.log.len(),
                config.target_metric.name(),
                best,
                path.display()
            );
        }
        Command::Sweep { task: t, runs, train, dev, log, grid, workers, seed, model_dir, report_dir, dry_run } => {
            let task = task(&s, t)?;
            let overrides = match s.get(grid, "grid")? {
                Some(path) => GridOverrides::parse(&fs::read_to_string(&path).map_err(|e| anyhow!("{}: {e}", path.display())).or_config()?)
                    .or_config()?,
                None => GridOverrides::default(),
            };
            let configs = generate_grid(task, &overrides).or_config()?;
            let runs = s.or(runs, "runs", histag::sweep::MIN_RUNS_PER_CONFIG)?;
            if runs < histag::sweep::MIN_RUNS_PER_CONFIG {
                return Err(config_error(format!(
                    "runs must be at least {}",
                    histag::sweep::MIN_RUNS_PER_CONFIG
                )));
            }
            if dry_run {
                println!("index\tcemb_size\tcemb_layers\thidden_size");
                for (i, c) in configs.iter().enumerate() {
                    println!("{i}\t{}\t{}\t{}", c.cemb_size, c.cemb_layers, c.hidden_size);
                }
                println!("{} configurations x {runs} runs = {} runs", configs.len(), configs.len() * runs);
                return Ok(());
            }
            let splits = SplitSet {
                train: read_doc(&s.path(train, "train")?)?.sentences,
                dev: read_doc(&s.path(dev, "dev")?)?.sentences,
                test: Vec::new(),
                seed: 0,
                ratios: [0.8, 0.1, 0.1],
            };
            let log = s.path(log, "log")?;
            let model_dir = s.get(model_dir, "model_dir")?;
            if let Some(dir) = &model_dir {
                fs::create_dir_all(dir).or_runtime()?;
            }
            let options = SweepOptions {
                runs_per_config: runs,
                base_seed: s.or(seed, "seed", 0)?,
                workers: s.or(workers, "workers", 1)?,
                max_new_runs: None,
            };
            let trainer = neural_trainer(&splits, model_dir.as_deref());
            let records = run_sweep(&configs, &options, &log, trainer).or_runtime()?;
            let ranking = rank_models(&records, &RankingPolicy::for_target(configs[0].target_metric)).or_runtime()?;
            let chosen = records.iter().find(|r| r.run_id == ranking.selected).expect("selected run exists");
            if let Some(dir) = s.get(report_dir, "report_dir")? {
                write_file(&dir.join("ranking.json"), serde_json::to_string_pretty(&ranking).or_runtime()?)?;
            }
            let failed = records.iter().filter(|r| r.status == histag::sweep::RunStatus::Failed).count();
            println!(
                "{} runs ({failed} failed); selected run {} (cemb {} x{} hidden {}, seed {})",
                records.len(),
                chosen.run_id,
                chosen.config.cemb_size,
                chosen.config.cemb_layers,
                chosen.config.hidden_size,
                chosen.seed
            );
        }
        Command::Tag { model_dir, input, output } => {
            let dir = s.path(model_dir, "model_dir")?;
            let models = ModelSet::load_dir(&dir).or_input()?;
            if models.is_empty() {
                return Err(config_error(format!("no models in {}", dir.display())));
            }
            let doc = read_doc(&s.path(input, "input")?)?;
            let tagged = models.tag_document(&doc).or_runtime()?;
            let output = s.path(output, "output")?;
            write_file(&output, write_tsv(&tagged))?;
            println!("{} tokens tagged -> {}", tagged.token_count(), output.display());
        }
        Command::Eval { gold, pred, train, tables, report_dir, lemma_threshold, pos_threshold, sentence_columns } => {
            let gold = read_doc(&s.path(gold, "gold")?)?;
            let pred = read_doc(&s.path(pred, "pred")?)?;
            let train = match s.get(train, "train")? {
                Some(p) => Some(read_doc(&p)?),
                None => None,
            };
            let mut options = EvalOptions::default();
            if let Some(t) = s.get(lemma_threshold, "lemma_threshold")? {
                options.lemma_threshold = Threshold::Greater(t);
            }
            if let Some(t) = s.get(pos_threshold, "pos_threshold")? {
                options.pos_threshold = Threshold::AtLeast(t);
            }
            if let Some(cols) = s.get(sentence_columns, "sentence_columns")? {
                options.sentence_columns = cols
                    .split(',')
                    .map(|c| Column::parse(c.trim()).ok_or_else(|| config_error(format!("unknown column `{c}`"))))
                    .collect::<Outcome<_>>()?;
            }
            let report = evaluate(train.as_ref().map(|d| d.sentences.as_slice()), &gold.sentences, &pred.sentences, &options)
                .or_input()?;
            let wanted = table_files(&s.or(tables, "tables", "metrics".to_string())?)?;
            let rendered = report.render();
            match s.get(report_dir, "report_dir")? {
                Some(dir) => {
                    for (name, body) in &rendered {
                        if wanted.contains(name) {
                            write_file(&dir.join(name), body)?;
                        }
                    }
                    println!("{} reports -> {}", wanted.len(), dir.display());
                }
                None => {
                    for (name, body) in &rendered {
                        if wanted.contains(name) && *name != "report.json" {
                            println!("== {name}\n{body}");
                        }
                    }
                }
            }
        }
        Command::Posttreat { input, output, rules } => {
            let doc = read_doc(&s.path(input, "input")?)?;
            let rules = match s.get(rules, "rules")? {
                Some(p) => RuleSet::parse(&fs::read_to_string(&p).map_err(|e| anyhow!("{}: {e}", p.display())).or_config()?)
                    .or_config()?,
                None => RuleSet::default(),
            };
            let mut out = doc.clone();
            out.sentences = pos_lemma_posttreatment(&doc.sentences, &rules);
            let changed = doc.tokens().zip(out.tokens()).filter(|(a, b)| a.lemma != b.lemma).count();
            let output = s.path(output, "output")?;
            write_file(&output, write_tsv(&out))?;
            println!("{changed} lemmas rewritten -> {}", output.display());
        }
        Command::Serve { corpus_dir, model_dir, refs, host, port } => {
            let config = ServiceConfig {
                corpus_dir: s.get(corpus_dir, "corpus_dir")?,
                model_dir: s.get(model_dir, "model_dir")?,
                references: references(&s, refs, false)?,
            };
            let host = s.or(host, "host", "127.0.0.1".to_string())?;
            let port = s.or(port, "port", 8080)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().or_config()?;
            let state: AppState = config.load().or_input()?;
            println!("listening on http://{addr}");
            tokio::runtime::Runtime::new()
                .or_runtime()?
                .block_on(histag_service::serve(state, addr))
                .or_runtime()?;
        }
    }
    Ok(())
}

const TABLES: [(&str, &[&str]); 8] = [
    ("metrics", &["metrics.tsv"]),
    ("confusion", &["confusion_lemma.tsv", "confusion_pos.tsv"]),
    ("concentration", &["error_concentration.tsv"]),
    ("per_pos", &["per_pos.tsv"]),
    ("lemma_by_pos", &["lemma_by_pos.tsv"]),
    ("sentence_scores", &["sentence_scores.tsv"]),
    ("que", &["que.tsv"]),
    ("json", &["report.json"]),
];

fn table_files(names: &str) -> Outcome<BTreeSet<&'static str>> {
    let mut out = BTreeSet::new();
    for name in names.split(',').map(str::trim) {
        if name == "all" {
            out.extend(TABLES.iter().flat_map(|(_, files)| files.iter().copied()));
            continue;
        }
        let (_, files) = TABLES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| config_error(format!("unknown table `{name}`")))?;
        out.extend(files.iter().copied());
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.kind as u8)
        }
    }
}
