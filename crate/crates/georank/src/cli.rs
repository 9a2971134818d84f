//! The `geo` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use georank_core::corpus::{generate_corpus, GeneratorConfig};
use georank_core::train::rerank;
use georank_core::{FusionMode, Scheme};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{resolve, FileConfig, RunConfig};
use crate::error::{Error, Result};
use crate::io::{load_taxonomy, read_corpus, read_to_string, write_corpus, write_string, Segmenter, SpanRecord};
use crate::manifest::RunManifest;
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(name = "geo", version, about = "Chunk-aware re-ranking of geographic addresses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic ranking corpus as JSONL.
    Generate(GenerateArgs),
    /// Segment addresses (one per line) into labeled chunks.
    Chunk(ChunkArgs),
    /// Train a re-ranker and write a checkpoint directory.
    Train(TrainArgs),
    /// Train once per gamma and tabulate best dev Hit@1.
    Sweep(SweepArgs),
    /// Score a checkpoint on a test corpus.
    Evaluate(EvaluateArgs),
    /// Rank candidate strings against a query.
    Rerank(RerankArgs),
    /// Corpus and checkpoint analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 20)]
    pub candidates: usize,
    /// Emit graded relevance labels.
    #[arg(long)]
    pub graded: bool,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value = "geo")]
    pub scheme: Scheme,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ConfigFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub fusion: Option<FusionMode>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> Result<RunConfig> {
        let flags = FileConfig {
            seed: self.seed,
            chunk_scheme: self.scheme,
            fusion: self.fusion,
            gamma: self.gamma,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            ..FileConfig::default()
        };
        resolve(self.config.as_deref(), flags)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Comma-separated gamma values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub gammas: Vec<f64>,
    /// CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub query: String,
    /// A candidate string; repeat for each candidate.
    #[arg(long = "candidate")]
    pub candidates: Vec<String>,
    /// File with one candidate per line, appended after `--candidate` values.
    #[arg(long)]
    pub candidates_file: Option<PathBuf>,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Per-category entropy of chunk strings in a corpus.
    Entropy {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value = "geo")]
        scheme: Scheme,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learned per-category attention weights and class means.
    Attention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise Spearman correlation of attention weights across checkpoints.
    Correlate {
        #[arg(long = "ckpt", num_args = 1.., required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_string(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn finish(mut manifest: RunManifest, start: Instant, outputs: &[PathBuf], manifest_path: &Path) -> Result<()> {
    for o in outputs {
        manifest.add_output(o);
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(manifest_path)
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializes")
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    let start = Instant::now();
    match command {
        Command::Generate(a) => {
            let tax = load_taxonomy(a.taxonomy.as_deref(), Scheme::Geo)?;
            let mut cfg = GeneratorConfig::new(a.seed, a.queries, a.candidates);
            cfg.graded = a.graded;
            let corpus = generate_corpus(&cfg, &tax)?;
            write_corpus(&a.out, &corpus, &tax)?;
            let mut m = RunManifest::new(argv.to_vec(), json(&cfg), Some(a.seed));
            if let Some(t) = &a.taxonomy {
                m.add_input(t)?;
            }
            finish(
                m,
                start,
                std::slice::from_ref(&a.out),
                &RunManifest::path_for(&a.out, false),
            )
        }
        Command::Chunk(a) => {
            let tax = load_taxonomy(a.taxonomy.as_deref(), a.scheme)?;
            let seg = Segmenter::new(tax, a.scheme)?;
            let mut text = String::new();
            for line in read_to_string(&a.input)?.lines().filter(|l| !l.trim().is_empty()) {
                let ct = seg.segment(line.trim());
                let chunks: Vec<SpanRecord> = ct
                    .chunks
                    .iter()
                    .map(|c| {
                        (
                            c.start,
                            c.end,
                            crate::io::CategoryRef::Name(seg.taxonomy().name(c.category).to_string()),
                        )
                    })
                    .collect();
                let rec = serde_json::json!({ "text": ct.source, "chunks": chunks });
                text.push_str(&rec.to_string());
                text.push('\n');
            }
            emit(a.out.as_deref(), &text)?;
            if let Some(out) = &a.out {
                let mut m = RunManifest::new(argv.to_vec(), serde_json::json!({ "scheme": a.scheme }), None);
                m.add_input(&a.input)?;
                finish(m, start, std::slice::from_ref(out), &RunManifest::path_for(out, false))?;
            }
            Ok(())
        }
        Command::Train(a) => {
            let cfg = a.flags.resolve()?;
            let tax = load_taxonomy(a.flags.taxonomy.as_deref(), cfg.train.chunk_scheme)?;
            let seg = Segmenter::new(tax.clone(), cfg.train.chunk_scheme)?;
            let train_set = read_corpus(&a.train, &seg)?;
            let dev_set = read_corpus(&a.dev, &seg)?;
            let outcome = pipeline::run_training(&train_set, &dev_set, &cfg, &tax, |e| {
                eprintln!(
                    "epoch {:>3}  loss {:.5}  L_cls {:.5}  L_u {:.5}  dev hit@1 {:.4}",
                    e.epoch, e.loss.total, e.loss.cls, e.loss.component, e.dev_hit1
                )
            })?;
            let outputs = pipeline::save_training(&a.out, &outcome)?;
            let mut m = RunManifest::new(argv.to_vec(), json(&cfg), Some(cfg.train.seed));
            for p in [
                Some(&a.train),
                Some(&a.dev),
                a.flags.config.as_ref(),
                a.flags.taxonomy.as_ref(),
            ]
            .into_iter()
            .flatten()
            {
                m.add_input(p)?;
            }
            m.timing.insert("train_seconds".into(), outcome.seconds);
            finish(m, start, &outputs, &RunManifest::path_for(&a.out, true))
        }
        Command::Sweep(a) => {
            let cfg = a.flags.resolve()?;
            let tax = load_taxonomy(a.flags.taxonomy.as_deref(), cfg.train.chunk_scheme)?;
            let seg = Segmenter::new(tax.clone(), cfg.train.chunk_scheme)?;
            let train_set = read_corpus(&a.train, &seg)?;
            let dev_set = read_corpus(&a.dev, &seg)?;
            let rows = pipeline::sweep_gamma(&train_set, &dev_set, &a.gammas, &cfg, &tax, |w| {
                eprintln!("warning: {w}")
            })?;
            write_string(&a.out, &pipeline::sweep_csv(&rows))?;
            let mut m = RunManifest::new(argv.to_vec(), json(&cfg), Some(cfg.train.seed));
            m.add_input(&a.train)?;
            m.add_input(&a.dev)?;
            finish(
                m,
                start,
                std::slice::from_ref(&a.out),
                &RunManifest::path_for(&a.out, false),
            )?;
            if rows.iter().all(|r| r.error.is_some()) {
                return Err(Error::Core(georank_core::Error::Numeric(
                    "every sweep arm failed".into(),
                )));
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let ck = Checkpoint::load(&a.ckpt)?;
            let seg = Segmenter::new(ck.taxonomy()?, ck.model.scheme)?;
            let test = read_corpus(&a.test, &seg)?;
            let (report, ms) = pipeline::evaluate(&ck, &test)?;
            write_string(
                &a.out,
                &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"),
            )?;
            let mut m = RunManifest::new(argv.to_vec(), serde_json::Value::Null, None);
            m.add_input(&Checkpoint::model_path(&a.ckpt))?;
            m.add_input(&a.test)?;
            m.timing.insert("latency_ms_per_case".into(), ms);
            finish(
                m,
                start,
                std::slice::from_ref(&a.out),
                &RunManifest::path_for(&a.out, false),
            )
        }
        Command::Rerank(a) => {
            let ck = Checkpoint::load(&a.ckpt)?;
            let mut cands = a.candidates.clone();
            if let Some(f) = &a.candidates_file {
                cands.extend(
                    read_to_string(f)?
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(|l| l.trim().to_string()),
                );
            }
            let refs: Vec<&str> = cands.iter().map(String::as_str).collect();
            let ranked = rerank(&ck.model.encoder()?, &a.query, &refs)?;
            let mut text = String::new();
            for (rank, (i, score)) in ranked.iter().enumerate() {
                let rec = serde_json::json!({ "rank": rank + 1, "index": i, "score": score, "text": cands[*i] });
                text.push_str(&rec.to_string());
                text.push('\n');
            }
            emit(a.out.as_deref(), &text)
        }
        Command::Analyze(cmd) => analyze(cmd, argv, start),
    }
}

fn analyze(cmd: AnalyzeCommand, argv: &[String], start: Instant) -> Result<()> {
    match cmd {
        AnalyzeCommand::Entropy {
            input,
            taxonomy,
            scheme,
            out,
        } => {
            let tax = load_taxonomy(taxonomy.as_deref(), scheme)?;
            let seg = Segmenter::new(tax.clone(), scheme)?;
            let corpus = read_corpus(&input, &seg)?;
            emit(out.as_deref(), &pipeline::entropy_csv(&corpus, &tax)?)?;
            if let Some(out) = &out {
                let mut m = RunManifest::new(argv.to_vec(), serde_json::json!({ "scheme": scheme }), None);
                m.add_input(&input)?;
                finish(m, start, std::slice::from_ref(out), &RunManifest::path_for(out, false))?;
            }
            Ok(())
        }
        AnalyzeCommand::Attention { ckpt, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let report = pipeline::checkpoint_attention(&ck)?;
            emit(out.as_deref(), &pipeline::attention_csv(&report))?;
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
            eprintln!(
                "general mean {}  specific mean {}  specific > general: {}",
                fmt(report.general_mean),
                fmt(report.specific_mean),
                report.specific_higher
            );
            if let Some(out) = &out {
                let mut m = RunManifest::new(argv.to_vec(), serde_json::Value::Null, None);
                m.add_input(&Checkpoint::model_path(&ckpt))?;
                finish(m, start, std::slice::from_ref(out), &RunManifest::path_for(out, false))?;
            }
            Ok(())
        }
        AnalyzeCommand::Correlate { ckpts, out } => {
            if ckpts.len() < 2 {
                return Err(Error::Usage("correlate needs at least two --ckpt values".into()));
            }
            let loaded = ckpts.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["a", "b", "spearman", "p_value", "n"])
                .expect("in-memory write");
            for i in 0..loaded.len() {
                for j in i + 1..loaded.len() {
                    let c = pipeline::correlate_checkpoints(&loaded[i], &loaded[j])?;
                    w.write_record([
                        ckpts[i].display().to_string(),
                        ckpts[j].display().to_string(),
                        c.rho.to_string(),
                        c.p_value.to_string(),
                        c.n.to_string(),
                    ])
                    .expect("in-memory write");
                }
            }
            let text = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
            emit(out.as_deref(), &text)?;
            if let Some(out) = &out {
                let mut m = RunManifest::new(argv.to_vec(), serde_json::Value::Null, None);
                for p in &ckpts {
                    m.add_input(&Checkpoint::model_path(p))?;
                }
                finish(m, start, std::slice::from_ref(out), &RunManifest::path_for(out, false))?;
            }
            Ok(())
        }
    }
}
