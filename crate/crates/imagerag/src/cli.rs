//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 model or pipeline failure, 2 usage or configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imagerag_core::rerank;
use imagerag_core::{Bm25Corpus, EmbeddingIndex, ImageRef};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{BackendProfile, HttpT2i, MockT2i, T2iClient};
use crate::chat::{read_transcript, HttpVlmClient, ScriptedVlm, TranscriptLine, VlmClient};
use crate::embed::{EmbedderClient, HttpEmbedder, MockEmbedder};
use crate::error::{Error, Result};
use crate::eval::{self, EvalMetric, ExperimentPlan, GridContext, Report, SemGrouping};
use crate::http::HttpConfig;
use crate::pipeline::{self, Clients, Pipeline, PipelineConfig, RerankMode, RunFailure, RunOutput};
use crate::retrieval::{self, RetrievalSource};
use crate::store;
use crate::synthetic::{SyntheticWorld, WorldSpec};

pub const ENV_VLM_ENDPOINT: &str = "IMAGERAG_VLM_ENDPOINT";
pub const ENV_VLM_KEY: &str = "IMAGERAG_VLM_KEY";
pub const ENV_T2I_ENDPOINT: &str = "IMAGERAG_T2I_ENDPOINT";
pub const ENV_T2I_KEY: &str = "IMAGERAG_T2I_KEY";
pub const ENV_EMBED_ENDPOINT: &str = "IMAGERAG_EMBED_ENDPOINT";
pub const ENV_EMBED_KEY: &str = "IMAGERAG_EMBED_KEY";

#[derive(Debug, Parser)]
#[command(name = "imagerag", version, about = "Retrieval-augmented text-to-image generation")]
pub struct Cli {
    /// Print a single human-readable line instead of JSON.
    #[arg(long, global = true)]
    pub plain: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an IRAG vector file with its metadata and write an index.
    Ingest {
        vectors: PathBuf,
        metadata: PathBuf,
        /// Output index path; the metadata sidecar is written next to it as `.jsonl`.
        out: PathBuf,
    },
    /// Retrieve the top-k images for a caption.
    Retrieve {
        #[arg(long)]
        caption: String,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the full pipeline for a prompt.
    Generate {
        prompt: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the pipeline with a personal subject image.
    Personalize {
        prompt: String,
        #[arg(long)]
        subject: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run an experiment grid.
    Eval {
        /// JSON experiment file (plans, evaluators, parallelism, seeds).
        #[arg(long)]
        plans: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Run the full method on nested random subsets of the index.
    Sweep {
        /// Subset sizes, ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Pipeline configuration file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Index file(s); overrides the config's list.
    #[arg(long)]
    pub index: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub rerank: Option<RerankArg>,
    /// Scripted transcript that replaces every model client with a mock.
    #[arg(long)]
    pub mock_transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Builtin profile name or a profile file.
    #[arg(long)]
    pub backend_profile: Option<String>,
    #[arg(long)]
    pub skip_decision: bool,
    /// Seed for both generations.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Class list (JSON lines of {class_id, prompt, real_images}).
    #[arg(long, required_unless_present = "synthetic")]
    pub classes: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub backend_profile: Option<String>,
    #[arg(long)]
    pub skip_decision: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Use the built-in synthetic world instead of indexes, classes and services.
    #[arg(long)]
    pub synthetic: bool,
    /// Classes in the synthetic world.
    #[arg(long, default_value_t = 20)]
    pub synthetic_classes: usize,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the CSV projection here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankArg {
    None,
    Bm25,
    Vlm,
}

impl From<RerankArg> for RerankMode {
    fn from(r: RerankArg) -> Self {
        match r {
            RerankArg::None => RerankMode::None,
            RerankArg::Bm25 => RerankMode::Bm25,
            RerankArg::Vlm => RerankMode::Vlm,
        }
    }
}

/// Experiment file for `eval`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub plans: Vec<ExperimentPlan>,
    /// Embedding model tag per evaluation metric.
    #[serde(default)]
    pub evaluators: BTreeMap<EvalMetric, String>,
    /// Extra named retrieval sets (index files each); the configured indexes are `default`.
    #[serde(default)]
    pub retrieval_sets: BTreeMap<String, Vec<PathBuf>>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub subset_seed: Option<u64>,
    #[serde(default)]
    pub grouping: SemGrouping,
}

enum Failure {
    Usage(Error),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e)
        } else {
            Failure::Model(e)
        }
    }
}

type CmdResult = std::result::Result<Value, Failure>;

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    run(cli)
}

pub fn run(cli: Cli) -> ExitCode {
    let plain = cli.plain;
    let result = match cli.command {
        Command::Ingest { vectors, metadata, out } => cmd_ingest(&vectors, &metadata, &out),
        Command::Retrieve { caption, k, common } => cmd_retrieve(&caption, k as usize, &common),
        Command::Generate { prompt, run } => cmd_generate(&prompt, None, &run),
        Command::Personalize { prompt, subject, run } => cmd_generate(&prompt, Some(ImageRef::new(subject)), &run),
        Command::Eval { plans, grid } => cmd_eval(plans.as_deref(), None, &grid),
        Command::Sweep { sizes, grid } => cmd_eval(None, Some(&sizes), &grid),
    };
    match result {
        Ok(v) => {
            let text = if plain {
                plain_line(&v)
            } else {
                serde_json::to_string_pretty(&v).expect("JSON value serializes")
            };
            // A closed stdout (e.g. piped into `head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn plain_line(v: &Value) -> String {
    let line = v.get("summary_line").or_else(|| v.get("summary"));
    match line.and_then(Value::as_str) {
        Some(s) => s.to_string(),
        None => v.to_string(),
    }
}

fn cmd_ingest(vectors: &Path, metadata: &Path, out: &Path) -> CmdResult {
    let index = store::ingest(vectors, metadata)?;
    store::write_index(&index, out)?;
    Ok(json!({
        "records": index.len(),
        "dimension": index.dimension(),
        "embedder_tag": index.embedder_tag(),
        "index": out,
        "metadata": store::sidecar_path(out),
        "summary": format!("{} records, dim {}", index.len(), index.dimension()),
    }))
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if !common.index.is_empty() {
        config.indexes = common.index.clone();
    }
    if let Some(r) = common.rerank {
        config.rerank = r.into();
    }
    Ok(config)
}

fn load_indexes(paths: &[PathBuf]) -> Result<Vec<Arc<EmbeddingIndex>>> {
    if paths.is_empty() {
        return Err(Error::Config("no index given (use --index or the config's \"indexes\")".into()));
    }
    paths.iter().map(|p| store::load_index(p).map(Arc::new)).collect()
}

/// Model clients, either scripted or talking to the configured services.
struct Stack {
    transcript: Option<Vec<TranscriptLine>>,
    http: HttpConfig,
}

impl Stack {
    fn new(common: &CommonArgs) -> Result<Self> {
        let transcript = match &common.mock_transcript {
            Some(p) => Some(read_transcript(fs::File::open(p).map_err(|e| Error::io(p, e))?)?),
            None => None,
        };
        Ok(Self {
            transcript,
            http: HttpConfig::default(),
        })
    }

    fn env(name: &str) -> Result<String> {
        std::env::var(name).map_err(|_| Error::Config(format!("{name} is not set (or pass --mock-transcript)")))
    }

    fn vlm(&self, model: &str) -> Result<Arc<dyn VlmClient>> {
        match &self.transcript {
            Some(t) => Ok(Arc::new(ScriptedVlm::from_transcript(t)?)),
            None => Ok(Arc::new(
                HttpVlmClient::new(Self::env(ENV_VLM_ENDPOINT)?, model, self.http.clone())?
                    .with_api_key(std::env::var(ENV_VLM_KEY).ok()),
            )),
        }
    }

    fn embedder(&self, tag: &str, dimension: usize) -> Result<Arc<dyn EmbedderClient>> {
        match &self.transcript {
            Some(t) => {
                let mut e = MockEmbedder::new(tag, dimension, 0);
                for l in t.iter().filter(|l| l.kind == "embed") {
                    let v = l
                        .vector
                        .clone()
                        .ok_or_else(|| Error::Config("embed transcript lines need a vector".into()))?;
                    match (&l.text, &l.image) {
                        (Some(text), _) => e.insert_text(text.clone(), v),
                        (None, Some(image)) => e.insert_image(image.clone(), v),
                        (None, None) => return Err(Error::Config("embed transcript lines need text or image".into())),
                    }
                }
                Ok(Arc::new(e))
            }
            None => Ok(Arc::new(
                HttpEmbedder::new(Self::env(ENV_EMBED_ENDPOINT)?, tag, self.http.clone())?
                    .with_api_key(std::env::var(ENV_EMBED_KEY).ok()),
            )),
        }
    }

    fn t2i(&self, profile: &BackendProfile) -> Result<Arc<dyn T2iClient>> {
        if self.transcript.is_some() {
            return Ok(Arc::new(MockT2i::new()));
        }
        let endpoint = match std::env::var(ENV_T2I_ENDPOINT) {
            Ok(e) => e,
            Err(_) => profile.endpoint.clone().ok_or_else(|| {
                Error::Config(format!("{ENV_T2I_ENDPOINT} is not set and profile \"{}\" has no endpoint", profile.name))
            })?,
        };
        Ok(Arc::new(
            HttpT2i::new(endpoint, self.http.clone())?.with_api_key(std::env::var(ENV_T2I_KEY).ok()),
        ))
    }

    fn sources(&self, indexes: Vec<Arc<EmbeddingIndex>>) -> Result<Vec<RetrievalSource>> {
        indexes
            .into_iter()
            .map(|i| Ok(RetrievalSource::new(i.clone(), self.embedder(i.embedder_tag(), i.dimension())?)))
            .collect()
    }
}

fn cmd_retrieve(caption: &str, k: usize, common: &CommonArgs) -> CmdResult {
    let config = load_config(common)?;
    let indexes = load_indexes(&config.indexes)?;
    if config.rerank == RerankMode::Bm25 {
        if let Some((p, _)) = config.indexes.iter().zip(&indexes).find(|(_, i)| !i.fully_captioned()) {
            return Err(Failure::Usage(Error::Config(format!(
                "--rerank bm25 needs a caption for every record; {} has records without one",
                store::sidecar_path(p).display()
            ))));
        }
    }
    let stack = Stack::new(common)?;
    let sources = stack.sources(indexes)?;
    let per_source = match config.rerank {
        RerankMode::None => k,
        _ => config.per_source_k.unwrap_or(pipeline::DEFAULT_RERANK_DEPTH).max(k),
    };
    let pool = retrieval::build_pool(caption, per_source, &sources)?;
    let mut warning = None;
    let mut hits = match config.rerank {
        RerankMode::None => pool.hits(),
        RerankMode::Bm25 => {
            let corpus = Bm25Corpus::from_documents(
                sources[0].index.records().iter().filter_map(|r| r.metadata.caption.as_deref()),
            );
            rerank::bm25_rerank(&pool, caption, &config.bm25, &corpus).map_err(Error::from)?
        }
        RerankMode::Vlm => {
            let r = retrieval::vlm_rerank(&pool, caption, stack.vlm(&config.vlm_model)?.as_ref());
            warning = r.warning;
            r.hits
        }
    };
    hits.truncate(k);
    let summary = hits
        .iter()
        .map(|h| format!("{}:{:.6}", h.id, h.score))
        .collect::<Vec<_>>()
        .join(" ");
    let mut out = json!({ "caption": caption, "hits": hits, "summary": summary });
    if let Some(w) = warning {
        out["warning"] = json!(w);
    }
    Ok(out)
}

fn cmd_generate(prompt: &str, subject: Option<ImageRef>, args: &RunArgs) -> CmdResult {
    let mut config = load_config(&args.common)?;
    if let Some(p) = &args.backend_profile {
        config.backend_profile = p.clone();
    }
    if args.skip_decision {
        config.skip_decision = true;
    }
    if args.seed.is_some() {
        config.initial_seed = args.seed;
        config.final_seed = args.seed;
    }
    let profile = BackendProfile::resolve(&config.backend_profile)?;
    let stack = Stack::new(&args.common)?;
    let clients = Clients {
        vlm: stack.vlm(&config.vlm_model)?,
        t2i: stack.t2i(&profile)?,
        sources: stack.sources(load_indexes(&config.indexes)?)?,
    };
    let pipeline = Pipeline::new(config, profile, clients)?;
    let result = match &subject {
        Some(s) => pipeline.run_personalized(prompt, s),
        None => pipeline.run(prompt),
    };
    match result {
        Ok(output) => Ok(report_run(&output, &args.out_dir)?),
        Err(RunFailure { error, output }) => {
            match pipeline::persist(&output, &args.out_dir) {
                Ok(dir) => eprintln!("partial trace written to {}", dir.display()),
                Err(e) => eprintln!("could not persist partial trace: {e}"),
            }
            Err(error.into())
        }
    }
}

fn report_run(output: &RunOutput, out_dir: &Path) -> Result<Value> {
    let dir = pipeline::persist(output, out_dir)?;
    let final_path = output.final_image().map(|a| pipeline::artifact_path(&dir, a));
    let summary = match &final_path {
        Some(p) => format!("{} {}", output.trace.run_id, p.display()),
        None => output.trace.run_id.clone(),
    };
    Ok(json!({
        "run_id": output.trace.run_id,
        "run_dir": dir,
        "final_artifact": final_path,
        "outcome": output.trace.outcome,
        "stages": output.trace.stage_names(),
        "warnings": output.trace.warnings,
        "summary": summary,
    }))
}

fn cmd_eval(plans_file: Option<&Path>, sizes: Option<&[usize]>, args: &GridArgs) -> CmdResult {
    let mut config = load_config(&args.common)?;
    if let Some(p) = &args.backend_profile {
        config.backend_profile = p.clone();
    }
    if args.skip_decision {
        config.skip_decision = true;
    }
    let experiment: ExperimentFile = match plans_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentFile::default(),
    };
    let plans = match sizes {
        Some(s) => eval::sweep_plans(s, None)?,
        None if experiment.plans.is_empty() => {
            return Err(Failure::Usage(Error::Config("the experiment file lists no plans".into())))
        }
        None => experiment.plans.clone(),
    };
    let profile = BackendProfile::resolve(&config.backend_profile)?;
    let parallelism = args.parallelism.or(experiment.parallelism).unwrap_or(1);
    let seed = args.seed.or(experiment.seed).unwrap_or(0);

    let (ctx, classes) = if args.synthetic {
        let largest = sizes.and_then(|s| s.last().copied()).unwrap_or(0);
        let spec = WorldSpec {
            classes: args.synthetic_classes,
            distractors: WorldSpec::default().distractors.max(largest),
            ..WorldSpec::default()
        };
        let world = SyntheticWorld::new(spec)?;
        let mut ctx = world.grid_context(config, profile, parallelism);
        ctx.seed = seed;
        ctx.grouping = experiment.grouping;
        if let Some(s) = experiment.subset_seed {
            ctx.subset_seed = s;
        }
        (ctx, world.classes.clone())
    } else {
        let classes_path = args.classes.as_ref().expect("clap requires --classes without --synthetic");
        let classes =
            eval::read_class_list(fs::File::open(classes_path).map_err(|e| Error::io(classes_path, e))?)?;
        let stack = Stack::new(&args.common)?;
        let mut retrieval_sets = vec![("default".to_string(), stack.sources(load_indexes(&config.indexes)?)?)];
        for (name, paths) in &experiment.retrieval_sets {
            retrieval_sets.push((name.clone(), stack.sources(load_indexes(paths)?)?));
        }
        if experiment.evaluators.is_empty() {
            return Err(Failure::Usage(Error::Config("the experiment file names no evaluators".into())));
        }
        let dimension = retrieval_sets[0].1[0].index.dimension();
        let evaluators = experiment
            .evaluators
            .iter()
            .map(|(m, tag)| Ok((*m, stack.embedder(tag, dimension)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let ctx = GridContext {
            vlm: stack.vlm(&config.vlm_model)?,
            t2i: stack.t2i(&profile)?,
            config,
            profile,
            retrieval_sets,
            evaluators,
            parallelism,
            subset_seed: experiment.subset_seed.unwrap_or(seed),
            grouping: experiment.grouping,
            seed,
        };
        (ctx, classes)
    };
    let report = eval::run_grid(&ctx, &plans, &classes)?;
    write_report(&report, args)?;
    let mut v = serde_json::to_value(&report).map_err(Error::from)?;
    v["summary_line"] = json!(format!(
        "{} cells, {} summary rows, {} failures",
        report.cells.len(),
        report.summary.len(),
        report.failures.len()
    ));
    Ok(v)
}

fn write_report(report: &Report, args: &GridArgs) -> Result<()> {
    if let Some(p) = &args.out {
        fs::write(p, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(p, e))?;
    }
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
