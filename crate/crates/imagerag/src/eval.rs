//! Similarity metrics, mean ± standard error aggregation, and experiment grids
//! (method vs. baseline, ablations, retrieval-set and dataset-size sweeps).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::sync::Arc;

use imagerag_core::stats::Accumulator;
use imagerag_core::{vector, AggregateCell, EmbeddingIndex, ImageRef};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{self, BackendProfile, T2iClient};
use crate::chat::VlmClient;
use crate::embed::{embed_image, embed_text, hex_digest, EmbedderClient};
use crate::error::{Error, Result};
use crate::pipeline::{Clients, Pipeline, PipelineConfig, RerankMode, RetrievalQuery};
use crate::retrieval::RetrievalSource;
use crate::vlm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMetric {
    ClipT2i,
    SiglipT2i,
    DinoI2i,
}

impl EvalMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMetric::ClipT2i => "clip-t2i",
            EvalMetric::SiglipT2i => "siglip-t2i",
            EvalMetric::DinoI2i => "dino-i2i",
        }
    }
}

/// Cosine between a text and an image in one embedding space.
pub fn text_image_score(embedder: &dyn EmbedderClient, text: &str, image: &ImageRef) -> Result<f64> {
    let t = embed_text(embedder, text, None)?;
    let i = embed_image(embedder, image, Some(t.len()))?;
    vector::cosine(&t, &i).map_err(|_| Error::Precondition("cannot score a zero embedding".into()))
}

pub fn image_image_score(embedder: &dyn EmbedderClient, a: &ImageRef, b: &ImageRef) -> Result<f64> {
    let va = embed_image(embedder, a, None)?;
    let vb = embed_image(embedder, b, Some(va.len()))?;
    vector::cosine(&va, &vb).map_err(|_| Error::Precondition("cannot score a zero embedding".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub class_id: String,
    pub metric: EvalMetric,
    pub value: f64,
}

pub fn aggregate_samples(samples: &[ScoreSample]) -> Result<AggregateCell> {
    Ok(imagerag_core::aggregate(samples.iter().map(|s| s.value))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain generation from the prompt.
    Base,
    /// VLM rephrasing of the prompt, then plain generation.
    RephrasedPrompt,
    /// Retrieval queried with the raw missing-concept phrases.
    RetrieveConcepts,
    /// Retrieval queried with the prompt itself.
    RetrievePrompt,
    #[default]
    FullMethod,
}

fn default_samples() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    #[serde(default)]
    pub variant: Variant,
    /// Named retrieval set; unset uses the grid's default set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_set: Option<String>,
    /// Restrict retrieval to a seeded subset of this many records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank: Option<RerankMode>,
    /// Generated images per class.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl ExperimentPlan {
    pub fn new(name: impl Into<String>, variant: Variant) -> Self {
        Self {
            name: name.into(),
            variant,
            retrieval_set: None,
            subset_size: None,
            rerank: None,
            samples: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: String,
    pub prompt: String,
    #[serde(default)]
    pub real_images: Vec<ImageRef>,
}

pub fn read_class_list<R: Read>(reader: R) -> Result<Vec<ClassEntry>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Config(format!("class list line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Config(format!("class list line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

/// Positions of nested seeded subsets of `0..count`: each subset is a prefix
/// of one shuffled order, so smaller subsets are contained in larger ones.
pub fn nested_subsets(count: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("subset sizes must be strictly ascending".into()));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > count) {
        return Err(Error::Config(format!("subset size {s} is outside 1..={count}")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(sizes
        .iter()
        .map(|&s| {
            let mut prefix = order[..s].to_vec();
            prefix.sort_unstable();
            prefix
        })
        .collect())
}

/// Restricts every source to the records whose ids sit at `positions` of the first source.
pub fn subset_sources(sources: &[RetrievalSource], positions: &[usize]) -> Result<Vec<RetrievalSource>> {
    let first = &sources.first().ok_or_else(|| Error::Config("empty retrieval set".into()))?.index;
    let ids: Vec<&str> = positions.iter().map(|&p| first.records()[p].id.as_str()).collect();
    sources
        .iter()
        .map(|s| {
            let pos = ids
                .iter()
                .map(|id| {
                    s.index.position(id).ok_or_else(|| {
                        Error::Precondition(format!("id \"{id}\" missing from index \"{}\"", s.index.embedder_tag()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let sub: EmbeddingIndex = s.index.subset(&pos)?;
            Ok(RetrievalSource::new(Arc::new(sub), s.embedder.clone()))
        })
        .collect()
}

/// Population behind a summary cell's standard error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemGrouping {
    /// Every generated image is one sample.
    #[default]
    Images,
    /// Each class's mean is one sample.
    Classes,
}

/// Everything a grid run needs besides plans and classes.
pub struct GridContext {
    pub config: PipelineConfig,
    pub profile: BackendProfile,
    pub vlm: Arc<dyn VlmClient>,
    pub t2i: Arc<dyn T2iClient>,
    /// Named retrieval sets; the first entry is the default.
    pub retrieval_sets: Vec<(String, Vec<RetrievalSource>)>,
    /// Scoring spaces, distinct from the retrieval embedders.
    pub evaluators: BTreeMap<EvalMetric, Arc<dyn EmbedderClient>>,
    /// Worker threads for grid cells. Scripted (order-dependent) mocks need 1.
    pub parallelism: usize,
    pub subset_seed: u64,
    pub grouping: SemGrouping,
    /// Seed of sample `s` is `seed + s`, shared across plans.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub plan: String,
    pub class_id: String,
    pub metric: EvalMetric,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub plan: String,
    pub metric: EvalMetric,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub plan: String,
    pub class_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetInfo {
    pub plan: String,
    pub size: usize,
    /// SHA-256 over the subset's ids, newline-joined in index order.
    pub ids_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub plans: Vec<ExperimentPlan>,
    pub metrics: Vec<EvalMetric>,
    /// One per plan × class × metric.
    pub cells: Vec<Cell>,
    /// One per plan × metric, over images or class means per [`SemGrouping`].
    pub summary: Vec<SummaryCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CellFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsets: Vec<SubsetInfo>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    pub fn summary_for(&self, plan: &str, metric: EvalMetric) -> Option<&SummaryCell> {
        self.summary.iter().find(|c| c.plan == plan && c.metric == metric)
    }

    /// Plans as rows, one mean and one sem column per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("plan");
        for m in &self.metrics {
            let _ = write!(out, ",{0} mean,{0} sem", m.as_str());
        }
        out.push('\n');
        for p in &self.plans {
            out.push_str(&csv_field(&p.name));
            for &m in &self.metrics {
                match self.summary_for(&p.name, m) {
                    Some(c) => {
                        let _ = write!(out, ",{},{}", c.mean, c.sem);
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

struct PreparedPlan {
    plan: ExperimentPlan,
    pipeline: Option<Pipeline>,
}

fn prepare(ctx: &GridContext, plan: &ExperimentPlan, subsets: &mut Vec<SubsetInfo>) -> Result<PreparedPlan> {
    if plan.samples == 0 {
        return Err(Error::Config(format!("plan \"{}\": samples must be at least 1", plan.name)));
    }
    let query = match plan.variant {
        Variant::Base | Variant::RephrasedPrompt => {
            return Ok(PreparedPlan {
                plan: plan.clone(),
                pipeline: None,
            })
        }
        Variant::RetrieveConcepts => RetrievalQuery::Concepts,
        Variant::RetrievePrompt => RetrievalQuery::Prompt,
        Variant::FullMethod => RetrievalQuery::Captions,
    };
    let (set_name, sources) = match &plan.retrieval_set {
        Some(name) => ctx
            .retrieval_sets
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Config(format!("unknown retrieval set \"{name}\"")))?,
        None => ctx
            .retrieval_sets
            .first()
            .ok_or_else(|| Error::Config("no retrieval sets configured".into()))?,
    };
    let sources = match plan.subset_size {
        Some(size) => {
            let count = sources.first().map_or(0, |s| s.index.len());
            let positions = nested_subsets(count, &[size], ctx.subset_seed)?.remove(0);
            let sub = subset_sources(sources, &positions)?;
            subsets.push(SubsetInfo {
                plan: plan.name.clone(),
                size,
                ids_sha256: hex_digest(
                    sub[0].index.records().iter().map(|r| r.id.as_str()).collect::<Vec<_>>().join("\n").as_bytes(),
                ),
            });
            sub
        }
        None => sources.clone(),
    };
    tracing::debug!(plan = %plan.name, set = %set_name, records = sources[0].index.len(), "prepared plan");
    let mut config = ctx.config.clone();
    config.retrieval_query = query;
    if let Some(r) = plan.rerank {
        config.rerank = r;
    }
    let clients = Clients {
        vlm: ctx.vlm.clone(),
        t2i: ctx.t2i.clone(),
        sources,
    };
    Ok(PreparedPlan {
        plan: plan.clone(),
        pipeline: Some(Pipeline::new(config, ctx.profile.clone(), clients)?),
    })
}

/// One generated image for `class` under `plan`.
fn generate_one(ctx: &GridContext, prepared: &PreparedPlan, class: &ClassEntry, seed: u64) -> Result<ImageRef> {
    let seed = Some(seed);
    match (&prepared.pipeline, prepared.plan.variant) {
        (Some(p), _) => {
            let output = p.run_with_seeds(&class.prompt, seed, seed).map_err(|f| f.error)?;
            let image = output
                .final_image()
                .map(|a| a.result.image.clone())
                .ok_or_else(|| Error::Backend("run produced no image".into()))?;
            Ok(image)
        }
        (None, Variant::RephrasedPrompt) => {
            let initial = backend::generate(ctx.t2i.as_ref(), &ctx.profile, &class.prompt, Vec::new(), seed)?;
            let t0 = ctx.config.retry_policy.initial_temperature;
            let rephrased = vlm::rephrase_prompt(ctx.vlm.as_ref(), &class.prompt, &initial.image, t0)?;
            Ok(backend::generate(ctx.t2i.as_ref(), &ctx.profile, &rephrased, Vec::new(), seed)?.image)
        }
        (None, _) => Ok(backend::generate(ctx.t2i.as_ref(), &ctx.profile, &class.prompt, Vec::new(), seed)?.image),
    }
}

fn score(ctx: &GridContext, class: &ClassEntry, image: &ImageRef) -> Result<Vec<(EvalMetric, f64)>> {
    let mut out = Vec::new();
    for (&metric, embedder) in &ctx.evaluators {
        match metric {
            EvalMetric::ClipT2i | EvalMetric::SiglipT2i => {
                out.push((metric, text_image_score(embedder.as_ref(), &class.prompt, image)?));
            }
            EvalMetric::DinoI2i => {
                if class.real_images.is_empty() {
                    continue;
                }
                let mut acc = Accumulator::default();
                for real in &class.real_images {
                    acc.push(image_image_score(embedder.as_ref(), real, image)?);
                }
                out.push((metric, acc.finish()?.mean));
            }
        }
    }
    Ok(out)
}

fn run_cell(ctx: &GridContext, prepared: &PreparedPlan, class: &ClassEntry) -> Result<BTreeMap<EvalMetric, Vec<f64>>> {
    let mut values: BTreeMap<EvalMetric, Vec<f64>> = BTreeMap::new();
    for s in 0..prepared.plan.samples {
        let image = generate_one(ctx, prepared, class, ctx.seed.wrapping_add(s as u64))?;
        for (m, v) in score(ctx, class, &image)? {
            values.entry(m).or_default().push(v);
        }
    }
    Ok(values)
}

/// Runs every plan on every class and aggregates per cell and per plan.
///
/// A failing cell is recorded in `failures` and the grid carries on.
pub fn run_grid(ctx: &GridContext, plans: &[ExperimentPlan], classes: &[ClassEntry]) -> Result<Report> {
    if ctx.evaluators.is_empty() {
        return Err(Error::Config("no evaluation embedders configured".into()));
    }
    let mut subsets = Vec::new();
    let prepared = plans
        .iter()
        .map(|p| prepare(ctx, p, &mut subsets))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|p| (0..classes.len()).map(move |c| (p, c)))
        .collect();
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = workers.install(|| {
        jobs.par_iter()
            .map(|&(p, c)| run_cell(ctx, &prepared[p], &classes[c]))
            .collect()
    });

    let metrics: Vec<EvalMetric> = ctx.evaluators.keys().copied().collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut pooled: BTreeMap<(usize, EvalMetric), Vec<f64>> = BTreeMap::new();
    for (&(p, c), result) in jobs.iter().zip(results) {
        let plan = &prepared[p].plan.name;
        let class = &classes[c];
        match result {
            Ok(values) => {
                for (metric, vs) in values {
                    let agg = imagerag_core::aggregate(vs.iter().copied())?;
                    cells.push(Cell {
                        plan: plan.clone(),
                        class_id: class.class_id.clone(),
                        metric,
                        mean: agg.mean,
                        sem: agg.sem,
                        n: agg.n,
                    });
                    let pool = pooled.entry((p, metric)).or_default();
                    match ctx.grouping {
                        SemGrouping::Images => pool.extend(vs),
                        SemGrouping::Classes => pool.push(agg.mean),
                    }
                }
            }
            Err(e) => failures.push(CellFailure {
                plan: plan.clone(),
                class_id: class.class_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    let mut summary = Vec::new();
    for ((p, metric), vs) in pooled {
        let agg = imagerag_core::aggregate(vs)?;
        summary.push(SummaryCell {
            plan: prepared[p].plan.name.clone(),
            metric,
            mean: agg.mean,
            sem: agg.sem,
            n: agg.n,
        });
    }
    Ok(Report {
        plans: plans.to_vec(),
        metrics,
        cells,
        summary,
        failures,
        subsets,
    })
}

/// Plans for a dataset-size sweep of the full method. Sizes must be strictly ascending.
pub fn sweep_plans(sizes: &[usize], retrieval_set: Option<&str>) -> Result<Vec<ExperimentPlan>> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep sizes must be positive and strictly ascending".into()));
    }
    Ok(sizes
        .iter()
        .map(|&s| ExperimentPlan {
            name: format!("size-{s}"),
            variant: Variant::FullMethod,
            retrieval_set: retrieval_set.map(str::to_string),
            subset_size: Some(s),
            rerank: None,
            samples: 1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MockEmbedder;

    #[test]
    fn scores() {
        let e = MockEmbedder::new("m", 2, 0)
            .with_text("t", vec![1.0, 0.0])
            .with_image("x", vec![1.0, 0.0])
            .with_image("y", vec![0.0, 3.0])
            .with_image("z", vec![-2.0, 0.0]);
        assert_eq!(text_image_score(&e, "t", &"x".into()).unwrap(), 1.0);
        assert_eq!(text_image_score(&e, "t", &"y".into()).unwrap(), 0.0);
        assert_eq!(image_image_score(&e, &"x".into(), &"z".into()).unwrap(), -1.0);
        assert_eq!(image_image_score(&e, &"x".into(), &"x".into()).unwrap(), 1.0);
    }

    #[test]
    fn subsets_nest() {
        let s = nested_subsets(100, &[10, 50, 100], 4).unwrap();
        assert_eq!(s.iter().map(Vec::len).collect::<Vec<_>>(), [10, 50, 100]);
        assert!(s[0].iter().all(|p| s[1].contains(p)));
        assert_eq!(s, nested_subsets(100, &[10, 50, 100], 4).unwrap());
        assert!(nested_subsets(100, &[50, 10], 4).is_err());
        assert!(nested_subsets(100, &[101], 4).is_err());
    }

    #[test]
    fn csv_projection() {
        let r = Report {
            plans: vec![ExperimentPlan::new("a,b", Variant::Base)],
            metrics: vec![EvalMetric::ClipT2i],
            cells: vec![],
            summary: vec![SummaryCell {
                plan: "a,b".into(),
                metric: EvalMetric::ClipT2i,
                mean: 0.5,
                sem: 0.0,
                n: 1,
            }],
            failures: vec![],
            subsets: vec![],
        };
        assert_eq!(r.to_csv(), "plan,clip-t2i mean,clip-t2i sem\n\"a,b\",0.5,0\n");
    }
}
