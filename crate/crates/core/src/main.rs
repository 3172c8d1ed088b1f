use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use curator::corpus::{ingest_files, Corpus};
use curator::curriculum::{
    emit_stage, stage_eligible, stage_seed, validate_plan, EmitContext, StagePlan,
};
use curator::dedup::{dedup_corpus, DedupConfig, DedupStats, DuplicateCluster};
use curator::io::{read_jsonl, write_jsonl};
use curator::pipeline::{self, load_distribution, lr_csv, PipelineConfig, SamplingConfig, SamplingSummary};
use curator::quality::{
    annotate, train_classifier, AnnotateConfig, AnnotatedDoc, HeuristicThresholds, Hyper,
    QualityClassifier, QualityStats,
};
use curator::sampling::{build_distribution, draw, representatives, sampling_units, weight_records};
use curator::synth::{write_workspace, SynthConfig};
use curator::tokenize::WhitespaceTokenizer;
use curator::train_prep::{lr_at, pack_documents, rope_config, write_packed, LrScheduleSpec, RopeStage};
use curator::{Error, Result};

#[derive(Parser)]
#[command(name = "curator", version, about = "Pre-training data curation and training-input preparation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Workers {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw JSONL dumps into a corpus directory.
    Ingest {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        shard_size: usize,
        #[command(flatten)]
        workers: Workers,
    },
    /// Cluster near-duplicates and keep the top-k variants per cluster.
    Dedup {
        /// TOML with dedup settings, bare or under `[dedup]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        workers: Workers,
    },
    /// Heuristic filtering and classifier training, scoring and annotation
    #[command(subcommand)]
    Quality(QualityCmd),
    /// Build per-signal weight maps and the merged sampling distribution.
    Sample {
        /// TOML with sampling policies, bare or under `[sampling]`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Annotated documents from `quality annotate`.
        #[arg(long)]
        annotated: PathBuf,
        /// Cluster file from `dedup`.
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write this many seeded draws to `draws.jsonl`.
        #[arg(long, default_value_t = 0)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate stage plans and emit token-budgeted stage shards
    #[command(subcommand)]
    Curriculum(CurriculumCmd),
    /// Sequence packing, learning-rate schedule and RoPE settings
    #[command(subcommand)]
    Prep(PrepCmd),
    /// Run every phase, resuming completed ones.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Stop after this phase.
        #[arg(long)]
        until: Option<String>,
    },
    /// Recompute the pipeline report from artifacts on disk.
    Report {
        #[arg(long)]
        work_dir: PathBuf,
    },
    /// Write a synthetic dump, reference sets and a pipeline config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        docs: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        refs_per_class: usize,
        /// Total token budget of the generated four-stage plan.
        #[arg(long, default_value_t = 400_000)]
        tokens: u64,
    },
}

#[derive(Subcommand)]
enum QualityCmd {
    /// Train one classifier from positive and negative JSONL texts.
    Train {
        #[arg(long)]
        id: String,
        #[arg(long)]
        positives: PathBuf,
        #[arg(long)]
        negatives: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dims: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print `{doc_id, score}` lines for a corpus.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Filter and attach signals to a deduplicated corpus.
    Annotate {
        /// Output directory of `dedup`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Quality classifier as `ID=PATH`; repeatable.
        #[arg(long = "model", value_parser = parse_kv)]
        models: Vec<(String, PathBuf)>,
        /// Domain classifier as `TAG=PATH`; `code` and `math` are required.
        #[arg(long = "domain", value_parser = parse_kv)]
        domains: Vec<(String, PathBuf)>,
        #[arg(long, default_value_t = 0.5)]
        tag_threshold: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        workers: Workers,
    },
}

#[derive(Subcommand)]
enum CurriculumCmd {
    /// Check a stage plan and print per-stage budgets.
    Validate {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Emit token shards for one stage.
    Emit {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        stage: String,
        #[arg(long)]
        annotated: PathBuf,
        /// Output directory of `sample`.
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1 << 20)]
        shard_tokens: u64,
        #[arg(long, default_value_t = 102_400)]
        vocab_size: u32,
    },
}

#[derive(Subcommand)]
enum PrepCmd {
    /// Pack curriculum shards into fixed-length sequences.
    Pack {
        #[arg(long)]
        length: u32,
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        pad_id: u32,
    },
    /// Evaluate a learning-rate schedule.
    Schedule {
        #[arg(long)]
        spec: PathBuf,
        /// Print `step,lr` for every step.
        #[arg(long)]
        dump_csv: bool,
        #[arg(long)]
        step: Vec<u64>,
    },
    /// Print the RoPE configuration for a context stage.
    Rope {
        #[arg(long)]
        stage: RopeStage,
    },
}

fn parse_kv(s: &str) -> std::result::Result<(String, PathBuf), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), PathBuf::from(v)))
        .ok_or_else(|| format!("expected KEY=PATH, got `{s}`"))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

/// Reads a TOML file as `T`, either from the `key` table or the whole file.
fn read_section<T: DeserializeOwned>(path: &Path, key: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: toml::Table = toml::from_str(&text)?;
    let section = match value.remove(key) {
        Some(v) => v,
        // A pipeline config without this section means defaults.
        None if value.contains_key("paths") => toml::Value::Table(toml::Table::new()),
        None => toml::Value::Table(value),
    };
    section.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(serde::Deserialize)]
struct TextRow {
    text: String,
}

fn texts(path: &Path) -> Result<Vec<String>> {
    Ok(read_jsonl::<TextRow>(path)?.into_iter().map(|r| r.text).collect())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { inputs, out, shard_size, workers } => {
            let (corpus, report) = ingest_files(&inputs, workers.workers)?;
            corpus.write_dir(&out, shard_size.max(1))?;
            print_json(&report)
        }
        Command::Dedup { config, input, out, workers } => {
            let cfg: DedupConfig = match config {
                Some(p) => read_section(&p, "dedup")?,
                None => DedupConfig::default(),
            };
            cfg.validate()?;
            let corpus = Corpus::read(&input)?;
            let result = dedup_corpus(&corpus, &cfg, workers.workers)?;
            result.corpus.write_dir(&out, 100_000)?;
            write_jsonl(&out.join("clusters.jsonl"), &result.clusters)?;
            print_json(&DedupStats::of(&result.clusters))
        }
        Command::Quality(q) => quality(q),
        Command::Sample { config, annotated, clusters, out, draws, seed } => {
            let cfg: SamplingConfig = match config {
                Some(p) => read_section(&p, "sampling")?,
                None => SamplingConfig::default(),
            };
            let docs: Vec<AnnotatedDoc> = read_jsonl(&annotated)?;
            let clusters: Vec<DuplicateCluster> = read_jsonl(&clusters)?;
            let units = sampling_units(&clusters, &docs);
            let reps = representatives(&units, &docs);
            let (maps, merged) = build_distribution(&reps, &cfg.policies)?;
            write_jsonl(&out.join("weights.jsonl"), &weight_records(&maps, &merged))?;
            write_jsonl(&out.join("units.jsonl"), &units)?;
            let summary = SamplingSummary {
                docs_in: docs.len() as u64,
                units: units.len() as u64,
                representatives: reps.len() as u64,
                support: merged.probabilities.iter().filter(|(_, p)| *p > 0.0).count() as u64,
                mixture_weights: merged.mixture_weights.clone(),
            };
            curator::io::write_json(&out.join("sampling.json"), &summary)?;
            let n = if draws > 0 { draws } else { cfg.draws };
            if n > 0 {
                write_jsonl(&out.join("draws.jsonl"), &draw(&merged, &units, seed, n)?)?;
            }
            print_json(&summary)
        }
        Command::Curriculum(c) => curriculum(c),
        Command::Prep(p) => prep(p),
        Command::Run { config, seed, workers, work_dir, until } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(d) = work_dir {
                cfg.paths.work_dir = d;
            }
            let report = pipeline::run_until(&cfg, until.as_deref())?;
            print_json(&report)?;
            if report.reconciliation_errors.is_empty() {
                Ok(())
            } else {
                Err(Error::Invalid(report.reconciliation_errors.join("; ")))
            }
        }
        Command::Report { work_dir } => print_json(&pipeline::report(&work_dir)?),
        Command::Synth { out, docs, seed, refs_per_class, tokens } => {
            let cfg = SynthConfig { docs, seed, ..SynthConfig::default() };
            let path = write_workspace(&out, &cfg, refs_per_class, tokens)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn quality(cmd: QualityCmd) -> Result<()> {
    match cmd {
        QualityCmd::Train { id, positives, negatives, out, epochs, lr, dims, seed } => {
            let d = Hyper::default();
            let hyper = Hyper {
                epochs: epochs.unwrap_or(d.epochs),
                lr: lr.unwrap_or(d.lr),
                dims: dims.unwrap_or(d.dims),
                seed: seed.unwrap_or(d.seed),
                ..d
            };
            let source = positives.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let clf = train_classifier(&id, &source, &texts(&positives)?, &texts(&negatives)?, &hyper)?;
            clf.save(&out)?;
            print_json(&clf.meta)
        }
        QualityCmd::Score { model, input } => {
            let clf = QualityClassifier::load(&model)?;
            let corpus = Corpus::read(&input)?;
            let mut out = std::io::stdout().lock();
            for d in corpus.iter() {
                let line = serde_json::json!({ "doc_id": d.doc_id, "score": clf.score(&d.text) });
                writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))?;
            }
            Ok(())
        }
        QualityCmd::Annotate { input, models, domains, tag_threshold, out, workers } => {
            let classifiers = models
                .iter()
                .map(|(id, p)| {
                    QualityClassifier::load(p).map(|mut c| {
                        c.model_id = id.clone();
                        c
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let domain = domains
                .iter()
                .map(|(t, p)| QualityClassifier::load(p).map(|c| (t.clone(), c)))
                .collect::<Result<_>>()?;
            let corpus = Corpus::read(&input)?;
            let clusters: Vec<DuplicateCluster> = read_jsonl(&input.join("clusters.jsonl"))?;
            let cfg = AnnotateConfig { heuristics: HeuristicThresholds::default(), tag_threshold };
            let result = curator::with_workers(workers.workers, || {
                annotate(&corpus, &clusters, &classifiers, &domain, &cfg)
            })??;
            write_jsonl(&out.join("annotated.jsonl"), &result.docs)?;
            write_jsonl(&out.join("drops.jsonl"), &result.drops)?;
            print_json(&QualityStats::of(&result.docs, &result.drops))
        }
    }
}

/// Accepts a bare spec, an `[lr]` table, or a pipeline config's `[prep.lr]`.
fn read_lr_spec(path: &Path) -> Result<LrScheduleSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = toml::from_str(&text)?;
    let section = match (table.get("lr"), table.get("prep").and_then(|p| p.get("lr"))) {
        (Some(v), _) | (None, Some(v)) => v.clone(),
        (None, None) => toml::Value::Table(table),
    };
    section.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))
}

fn read_plan(path: &Path) -> Result<StagePlan> {
    read_section(path, "curriculum")
}

fn curriculum(cmd: CurriculumCmd) -> Result<()> {
    match cmd {
        CurriculumCmd::Validate { plan } => {
            let v = validate_plan(&read_plan(&plan)?).map_err(Error::Plan)?;
            print_json(&v)
        }
        CurriculumCmd::Emit { plan, stage, annotated, sample, out, seed, shard_tokens, vocab_size } => {
            let v = validate_plan(&read_plan(&plan)?).map_err(Error::Plan)?;
            let (_, spec, budget) = v
                .stage(&stage)
                .ok_or_else(|| Error::Config(format!("no stage `{stage}` in plan")))?;
            let docs: Vec<AnnotatedDoc> = read_jsonl(&annotated)?;
            let units: Vec<DuplicateCluster> = read_jsonl(&sample.join("units.jsonl"))?;
            let dist = load_distribution(&sample)?;
            let reps = representatives(&units, &docs);
            let tokenizer = WhitespaceTokenizer { vocab_size };
            let ctx = EmitContext { units: &units, docs: &docs, tokenizer: &tokenizer, shard_tokens };
            let eligible = stage_eligible(&reps, spec)?;
            let m = emit_stage(spec, budget, &eligible, &dist, &ctx, stage_seed(seed, &stage), &out)?;
            print_json(&m)
        }
    }
}

fn prep(cmd: PrepCmd) -> Result<()> {
    match cmd {
        PrepCmd::Pack { length, inputs, out, pad_id } => {
            let mut docs = Vec::new();
            for p in &inputs {
                for r in read_jsonl::<curator::curriculum::ShardRecord>(p)? {
                    docs.push((r.doc_id, r.token_ids));
                }
            }
            let seqs = pack_documents(&docs, length as usize, pad_id)?;
            curator::io::ensure_parent(&out)?;
            let file = std::fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            let mut w = std::io::BufWriter::new(file);
            write_packed(&mut w, &seqs, length, pad_id)?;
            w.flush().map_err(|e| Error::io(&out, e))?;
            print_json(&serde_json::json!({
                "sequences": seqs.len(),
                "documents": docs.len(),
                "input_tokens": docs.iter().map(|(_, t)| t.len()).sum::<usize>(),
                "sha256": curator::io::sha256_file(&out)?,
            }))
        }
        PrepCmd::Schedule { spec, dump_csv, step } => {
            let spec = read_lr_spec(&spec)?;
            spec.validate()?;
            if dump_csv {
                print!("{}", lr_csv(&spec)?);
            } else {
                for s in step {
                    println!("{s},{:e}", lr_at(s, &spec)?);
                }
            }
            Ok(())
        }
        PrepCmd::Rope { stage } => print_json(&rope_config(stage)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
