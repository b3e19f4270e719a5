//! The end-to-end run: initial generation, match decision, missing-concept
//! captions, retrieval with optional re-ranking, and the augmented regeneration.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use imagerag_core::parse::ConceptCaption;
use imagerag_core::rerank::{self, CandidatePool, RankingQuality};
use imagerag_core::template::{self, AugmentedPrompt, ConceptGroup};
use imagerag_core::{Bm25Corpus, Bm25Params, ImageRef, RetrievalHit, RetryPolicy};
use serde::{Deserialize, Serialize};

use crate::backend::{self, BackendProfile, GenerationRecord, GenerationResult, T2iClient};
use crate::chat::VlmClient;
use crate::embed::hex_digest;
use crate::error::{Error, Result};
use crate::retrieval::{self, RetrievalSource};
use crate::vlm::{self, CaptionGeneration, MatchDecision, QueryMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RerankMode {
    #[default]
    None,
    Bm25,
    Vlm,
}

/// What text drives retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalQuery {
    /// VLM-generated caption per missing concept.
    #[default]
    Captions,
    /// The missing-concept phrases themselves.
    Concepts,
    /// The prompt, without asking for missing concepts.
    Prompt,
}

fn default_images_per_concept() -> usize {
    1
}

fn default_profile() -> String {
    "omnigen".into()
}

fn default_vlm_model() -> String {
    "gpt-4o-2024-08-06".into()
}

pub const DEFAULT_CONCEPTS: usize = 3;
pub const DEFAULT_RERANK_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Unset: 3, lowered to what the backend's image cap allows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts_per_prompt: Option<usize>,
    #[serde(default = "default_images_per_concept")]
    pub images_per_concept: usize,
    /// Unset: 3 when re-ranking, else `images_per_concept`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_source_k: Option<usize>,
    #[serde(default)]
    pub rerank: RerankMode,
    #[serde(default)]
    pub skip_decision: bool,
    #[serde(default)]
    pub retry_policy: RetryPolicy,
    #[serde(default = "default_profile")]
    pub backend_profile: String,
    /// Index files, one per embedding space; each needs a `.jsonl` sidecar.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub indexes: Vec<PathBuf>,
    #[serde(default)]
    pub retrieval_query: RetrievalQuery,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_seed: Option<u64>,
    #[serde(default = "default_vlm_model")]
    pub vlm_model: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Concept count and retrieval depths for a reference budget of `cap` images.
    pub fn resolve(&self, cap: usize) -> Result<Resolved> {
        let ipc = self.images_per_concept;
        if ipc == 0 {
            return Err(Error::Config("images_per_concept must be at least 1".into()));
        }
        let concepts = match self.concepts_per_prompt {
            Some(0) => return Err(Error::Config("concepts_per_prompt must be at least 1".into())),
            Some(c) => {
                if c * ipc > cap {
                    return Err(Error::Config(format!(
                        "concepts_per_prompt ({c}) x images_per_concept ({ipc}) exceeds the backend's {cap} reference images"
                    )));
                }
                c
            }
            None => DEFAULT_CONCEPTS.min(cap / ipc),
        };
        if concepts == 0 {
            return Err(Error::Config(format!(
                "images_per_concept ({ipc}) does not fit the backend's {cap} reference images"
            )));
        }
        let per_source_k = match self.per_source_k {
            Some(0) => return Err(Error::Config("per_source_k must be at least 1".into())),
            Some(k) => k,
            None if self.rerank != RerankMode::None => DEFAULT_RERANK_DEPTH,
            None => ipc,
        };
        Ok(Resolved {
            concepts,
            images_per_concept: ipc,
            per_source_k,
            // Deep enough that every caption still has unused candidates after
            // earlier captions took theirs.
            depth: per_source_k.max(concepts * ipc),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub concepts: usize,
    pub images_per_concept: usize,
    pub per_source_k: usize,
    /// Hits fetched per source and caption.
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRetrieval {
    pub concept: String,
    pub caption: String,
    pub pool: CandidatePool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRerank {
    pub caption: String,
    pub hits: Vec<RetrievalHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<RankingQuality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub caption: String,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum StageRecord {
    InitialGen {
        text: String,
        result: GenerationRecord,
    },
    Decision {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decision: Option<MatchDecision>,
        /// Set when the reply was neither yes nor no; the run treats it as a mismatch.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unparseable: Option<String>,
    },
    VlmLoop {
        generation: CaptionGeneration,
    },
    Retrieval {
        resolved: Resolved,
        queries: Vec<CaptionRetrieval>,
    },
    Rerank {
        mode: RerankMode,
        rankings: Vec<CaptionRerank>,
    },
    FinalGen {
        selections: Vec<Selection>,
        augmented: AugmentedPrompt,
        result: GenerationRecord,
    },
}

impl StageRecord {
    pub fn name(&self) -> &'static str {
        match self {
            StageRecord::InitialGen { .. } => "initial-gen",
            StageRecord::Decision { .. } => "decision",
            StageRecord::VlmLoop { .. } => "vlm-loop",
            StageRecord::Retrieval { .. } => "retrieval",
            StageRecord::Rerank { .. } => "rerank",
            StageRecord::FinalGen { .. } => "final-gen",
        }
    }
}

/// Canonical stage order; a trace's stages are always a subsequence of it.
pub const STAGE_ORDER: [&str; 6] = ["initial-gen", "decision", "vlm-loop", "retrieval", "rerank", "final-gen"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    /// The initial image already matched; it is the final image.
    Matched,
    Augmented {
        fallback_used: bool,
    },
    Failed {
        stage: String,
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub run_id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<ImageRef>,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_seed: Option<u64>,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timings: Vec<StageTiming>,
}

impl PipelineTrace {
    pub fn stage_names(&self) -> Vec<&'static str> {
        self.stages.iter().map(StageRecord::name).collect()
    }

    /// The trace with wall-clock data removed, for replay comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn final_augmented(&self) -> Option<&AugmentedPrompt> {
        self.stages.iter().find_map(|s| match s {
            StageRecord::FinalGen { augmented, .. } => Some(augmented),
            _ => None,
        })
    }
}

/// A generated image kept for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    /// `initial` or `final`.
    pub name: &'static str,
    pub result: GenerationResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: PipelineTrace,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    /// The image the run ends with: the final one, or the initial one on early exit.
    pub fn final_image(&self) -> Option<&Artifact> {
        self.artifacts.last()
    }
}

/// A run that stopped at a hard error; `output` holds everything up to it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub output: Box<RunOutput>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run {} failed: {}", self.output.trace.run_id, self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type RunResult = std::result::Result<RunOutput, RunFailure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub initial: Option<u64>,
    pub final_gen: Option<u64>,
}

pub struct Clients {
    pub vlm: Arc<dyn VlmClient>,
    pub t2i: Arc<dyn T2iClient>,
    pub sources: Vec<RetrievalSource>,
}

pub struct Pipeline {
    config: PipelineConfig,
    profile: BackendProfile,
    clients: Clients,
    corpus: Option<Bm25Corpus>,
}

struct Run {
    trace: PipelineTrace,
    artifacts: Vec<Artifact>,
    clock: Instant,
}

impl Run {
    fn push(&mut self, stage: StageRecord) {
        let millis = self.clock.elapsed().as_secs_f64() * 1e3;
        self.trace.timings.push(StageTiming {
            stage: stage.name().into(),
            millis,
        });
        self.trace.stages.push(stage);
        self.clock = Instant::now();
    }

    fn fail(mut self, stage: &str, error: Error) -> RunFailure {
        self.trace.outcome = Some(Outcome::Failed {
            stage: stage.into(),
            error: error.to_string(),
        });
        RunFailure {
            error,
            output: Box::new(self.finish()),
        }
    }

    fn finish(self) -> RunOutput {
        RunOutput {
            trace: self.trace,
            artifacts: self.artifacts,
        }
    }
}

/// Takes up to `n` ids from `ranked` that earlier captions have not used.
fn select(ranked: &[RetrievalHit], n: usize, used: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    for hit in ranked {
        if out.len() == n {
            break;
        }
        if used.insert(hit.id.clone()) {
            out.push(hit.id.clone());
        }
    }
    out
}

impl Pipeline {
    pub fn new(config: PipelineConfig, profile: BackendProfile, clients: Clients) -> Result<Self> {
        profile.validate()?;
        config.retry_policy.validate()?;
        config.bm25.validate()?;
        config.resolve(profile.max_reference_images)?;
        if clients.sources.is_empty() {
            return Err(Error::Config("at least one retrieval index is required".into()));
        }
        let corpus = match config.rerank {
            RerankMode::Bm25 => {
                for s in &clients.sources {
                    if !s.index.fully_captioned() {
                        return Err(Error::Config(format!(
                            "bm25 re-ranking needs a caption for every record, index \"{}\" has records without one",
                            s.index.embedder_tag()
                        )));
                    }
                }
                let index = &clients.sources[0].index;
                Some(Bm25Corpus::from_documents(
                    index.records().iter().filter_map(|r| r.metadata.caption.as_deref()),
                ))
            }
            _ => None,
        };
        Ok(Self {
            config,
            profile,
            clients,
            corpus,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    /// Deterministic run id derived from the inputs, so replays land in the same place.
    pub fn run_id(&self, prompt: &str, subject: Option<&ImageRef>, seeds: Seeds) -> String {
        let key = serde_json::json!({
            "prompt": prompt,
            "subject": subject,
            "seeds": [seeds.initial, seeds.final_gen],
            "backend": self.profile.name,
            "config": self.config,
        });
        hex_digest(key.to_string().as_bytes())[..16].to_string()
    }

    fn config_seeds(&self) -> Seeds {
        Seeds {
            initial: self.config.initial_seed,
            final_gen: self.config.final_seed,
        }
    }

    pub fn run(&self, prompt: &str) -> RunResult {
        self.execute(prompt, None, self.config_seeds())
    }

    /// As [`Self::run`] with seeds overriding the configured ones.
    pub fn run_with_seeds(&self, prompt: &str, initial: Option<u64>, final_gen: Option<u64>) -> RunResult {
        self.execute(prompt, None, Seeds { initial, final_gen })
    }

    pub fn run_personalized(&self, prompt: &str, subject: &ImageRef) -> RunResult {
        self.execute(prompt, Some(subject), self.config_seeds())
    }

    fn new_run(&self, prompt: &str, subject: Option<&ImageRef>, seeds: Seeds) -> Run {
        Run {
            trace: PipelineTrace {
                run_id: self.run_id(prompt, subject, seeds),
                prompt: prompt.to_string(),
                subject: subject.cloned(),
                backend: self.profile.name.clone(),
                initial_seed: seeds.initial,
                final_seed: seeds.final_gen,
                config: self.config.clone(),
                stages: Vec::new(),
                outcome: None,
                warnings: Vec::new(),
                timings: Vec::new(),
            },
            artifacts: Vec::new(),
            clock: Instant::now(),
        }
    }

    fn execute(&self, prompt: &str, subject: Option<&ImageRef>, seeds: Seeds) -> RunResult {
        let mut run = self.new_run(prompt, subject, seeds);
        if prompt.trim().is_empty() {
            return Err(run.fail("initial-gen", Error::Precondition("prompt is empty".into())));
        }
        let cap = self.profile.max_reference_images;
        let budget = match subject {
            Some(_) if !self.profile.supports_personal_subject => {
                let e = Error::Config(format!("backend \"{}\" does not support a personal subject", self.profile.name));
                return Err(run.fail("initial-gen", e));
            }
            Some(_) => cap.saturating_sub(1),
            None => cap,
        };
        let resolved = match self.personal_resolve(budget, subject.is_some()) {
            Ok(r) => r,
            Err(e) => return Err(run.fail("initial-gen", e)),
        };
        let style = self.profile.placeholder_style;

        // Initial generation.
        let (text, images) = match subject {
            Some(s) => (template::personalized_base(prompt, style), vec![s.clone()]),
            None => (prompt.to_string(), Vec::new()),
        };
        let initial = match backend::generate(
            self.clients.t2i.as_ref(),
            &self.profile,
            &text,
            images,
            seeds.initial,
        ) {
            Ok(r) => r,
            Err(e) => return Err(run.fail("initial-gen", e)),
        };
        let initial_image = initial.image.clone();
        run.push(StageRecord::InitialGen {
            text,
            result: initial.record.clone(),
        });
        run.artifacts.push(Artifact {
            name: "initial",
            result: initial,
        });

        let vlm = self.clients.vlm.as_ref();
        let t0 = self.config.retry_policy.initial_temperature;

        if !self.config.skip_decision {
            match vlm::decide_match(vlm, prompt, &initial_image, t0) {
                Ok(d) => {
                    let matches = d.matches;
                    run.push(StageRecord::Decision {
                        decision: Some(d),
                        unparseable: None,
                    });
                    if matches {
                        run.trace.outcome = Some(Outcome::Matched);
                        return Ok(run.finish());
                    }
                }
                Err(Error::UnparseableDecision { raw }) => {
                    run.trace
                        .warnings
                        .push("decision reply was neither yes nor no; treated as a mismatch".into());
                    run.push(StageRecord::Decision {
                        decision: None,
                        unparseable: Some(raw),
                    });
                }
                Err(e) => return Err(run.fail("decision", e)),
            }
        }

        let generation = match self.config.retrieval_query {
            RetrievalQuery::Prompt => CaptionGeneration {
                captions: vec![ConceptCaption {
                    concept: prompt.to_string(),
                    caption: prompt.to_string(),
                }],
                fallback_used: false,
                attempts: Vec::new(),
                warnings: Vec::new(),
            },
            q => {
                let mode = if q == RetrievalQuery::Concepts {
                    QueryMode::Concepts
                } else {
                    QueryMode::Captions
                };
                let g = match vlm::retrieval_caption_generation(
                    vlm,
                    prompt,
                    &initial_image,
                    &self.config.retry_policy,
                    resolved.concepts,
                    mode,
                ) {
                    Ok(g) => g,
                    Err(e) => return Err(run.fail("vlm-loop", e)),
                };
                run.trace.warnings.extend(g.warnings.iter().cloned());
                run.push(StageRecord::VlmLoop { generation: g.clone() });
                g
            }
        };

        // Retrieval.
        let mut queries = Vec::with_capacity(generation.captions.len());
        for cc in &generation.captions {
            match retrieval::build_pool(&cc.caption, resolved.depth, &self.clients.sources) {
                Ok(pool) => queries.push(CaptionRetrieval {
                    concept: cc.concept.clone(),
                    caption: cc.caption.clone(),
                    pool,
                }),
                Err(e) => return Err(run.fail("retrieval", e)),
            }
        }
        run.push(StageRecord::Retrieval {
            resolved,
            queries: queries.clone(),
        });

        // Optional re-rank.
        let ranked: Vec<Vec<RetrievalHit>> = match self.config.rerank {
            RerankMode::None => queries.iter().map(|q| q.pool.hits()).collect(),
            mode => {
                let mut rankings = Vec::with_capacity(queries.len());
                for q in &queries {
                    let r = match mode {
                        RerankMode::Bm25 => {
                            let corpus = self.corpus.as_ref().expect("corpus built for bm25");
                            match rerank::bm25_rerank(&q.pool, &q.caption, &self.config.bm25, corpus) {
                                Ok(hits) => CaptionRerank {
                                    caption: q.caption.clone(),
                                    hits,
                                    quality: None,
                                    warning: None,
                                },
                                Err(e) => return Err(run.fail("rerank", e.into())),
                            }
                        }
                        _ => {
                            let r = retrieval::vlm_rerank(&q.pool, &q.caption, vlm);
                            if let Some(w) = &r.warning {
                                run.trace.warnings.push(format!("{}: {w}", q.caption));
                            }
                            CaptionRerank {
                                caption: q.caption.clone(),
                                hits: r.hits,
                                quality: Some(r.quality),
                                warning: r.warning,
                            }
                        }
                    };
                    rankings.push(r);
                }
                let hits = rankings.iter().map(|r| r.hits.clone()).collect();
                run.push(StageRecord::Rerank { mode, rankings });
                hits
            }
        };

        // Selection and final generation.
        let mut used: HashSet<String> = HashSet::new();
        let mut selections = Vec::new();
        let mut groups = Vec::new();
        for (q, hits) in queries.iter().zip(&ranked) {
            let ids = select(hits, resolved.images_per_concept, &mut used);
            if ids.is_empty() {
                run.trace
                    .warnings
                    .push(format!("no unused candidates left for \"{}\"", q.caption));
                continue;
            }
            let images = ids
                .iter()
                .map(|id| {
                    let c = q.pool.candidates.iter().find(|c| &c.hit.id == id).expect("selected from pool");
                    ImageRef::new(c.uri.clone())
                })
                .collect();
            groups.push(ConceptGroup::new(q.caption.clone(), images));
            selections.push(Selection {
                caption: q.caption.clone(),
                ids,
            });
        }
        let augmented = match subject {
            Some(s) => template::render_personalized(prompt, s, &groups, style, &self.profile.capabilities()),
            None => template::render_template(prompt, &groups, style, cap),
        };
        let augmented = match augmented {
            Ok(a) => a,
            Err(e) => return Err(run.fail("final-gen", e.into())),
        };
        let final_result = match backend::generate(
            self.clients.t2i.as_ref(),
            &self.profile,
            &augmented.text,
            augmented.images.clone(),
            seeds.final_gen,
        ) {
            Ok(r) => r,
            Err(e) => return Err(run.fail("final-gen", e)),
        };
        run.push(StageRecord::FinalGen {
            selections,
            augmented,
            result: final_result.record.clone(),
        });
        run.artifacts.push(Artifact {
            name: "final",
            result: final_result,
        });
        run.trace.outcome = Some(Outcome::Augmented {
            fallback_used: generation.fallback_used,
        });
        Ok(run.finish())
    }

    fn personal_resolve(&self, budget: usize, personal: bool) -> Result<Resolved> {
        if !personal {
            return self.config.resolve(budget);
        }
        // Lower an unset concept count to the reduced budget.
        let mut config = self.config.clone();
        if config.concepts_per_prompt.is_none() {
            config.concepts_per_prompt = Some(DEFAULT_CONCEPTS.min(budget / config.images_per_concept.max(1)));
        }
        config.resolve(budget)
    }
}

/// Writes `trace.json` and the artifacts under `<out_dir>/<run-id>/`.
pub fn persist(output: &RunOutput, out_dir: &Path) -> Result<PathBuf> {
    let dir = out_dir.join(&output.trace.run_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for a in &output.artifacts {
        let path = dir.join(format!("{}.{}", a.name, a.result.record.ext));
        fs::write(&path, &a.result.artifact).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("trace.json");
    fs::write(&path, output.trace.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

/// Path of the artifact a run ends with, inside a persisted run directory.
pub fn artifact_path(run_dir: &Path, artifact: &Artifact) -> PathBuf {
    run_dir.join(format!("{}.{}", artifact.name, artifact.result.record.ext))
}

/// True when `names` is a subsequence of [`STAGE_ORDER`].
pub fn is_canonical_order(names: &[&str]) -> bool {
    let mut order = STAGE_ORDER.iter();
    names.iter().all(|n| order.any(|s| s == n))
}
