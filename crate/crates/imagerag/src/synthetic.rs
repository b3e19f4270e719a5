//! A seeded toy world for offline end-to-end runs.
//!
//! Every class owns a unit "concept" direction. The index holds noisy images of
//! each class plus unrelated distractors. The mock generator renders a prompt
//! to a latent that is only weakly aligned with its class, and averages in the
//! embeddings of any reference images it is given. The rule-based VLM answers
//! the decision by measuring the generated latent against the class direction.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use imagerag_core::prompts;
use imagerag_core::{vector, EmbeddingIndex, EmbeddingRecord, ImageRef, Metric, RecordMetadata};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendProfile, LatentModel, MockT2i, T2iRequest};
use crate::chat::{ChatRequest, RuleVlm};
use crate::embed::{artifact_embedding, hash_vector, EmbedderClient};
use crate::error::{Error, Result};
use crate::eval::{ClassEntry, EvalMetric, GridContext, SemGrouping};
use crate::media;
use crate::pipeline::{Clients, PipelineConfig};
use crate::retrieval::RetrievalSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub classes: usize,
    pub dimension: usize,
    pub images_per_class: usize,
    pub distractors: usize,
    pub real_per_class: usize,
    /// Distance of indexed class images from their class direction.
    pub image_noise: f32,
    /// Cosine between a plain prompt's rendering and its class direction.
    pub prompt_alignment: f32,
    /// Cosine a generated image needs for the VLM to answer "yes".
    pub match_threshold: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 20,
            dimension: 32,
            images_per_class: 8,
            distractors: 200,
            real_per_class: 3,
            image_noise: 0.5,
            prompt_alignment: 0.2,
            match_threshold: 0.7,
        }
    }
}

/// A signed coordinate permutation: an orthogonal map into a second space.
#[derive(Debug, Clone)]
struct Space {
    perm: Vec<usize>,
    signs: Vec<f32>,
}

impl Space {
    fn random(dimension: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut perm: Vec<usize> = (0..dimension).collect();
        perm.shuffle(rng);
        let signs = (0..dimension).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Self { perm, signs }
    }

    fn apply(&self, v: &[f32]) -> Vec<f32> {
        self.perm.iter().zip(&self.signs).map(|(&p, s)| s * v[p]).collect()
    }
}

#[derive(Debug)]
struct WorldData {
    spec: WorldSpec,
    class_dirs: Vec<Vec<f32>>,
    /// Unit directions orthogonal to each class direction.
    off_dirs: Vec<Vec<f32>>,
    prompts: Vec<String>,
    texts: HashMap<String, Vec<f32>>,
    images: HashMap<String, Vec<f32>>,
}

impl WorldData {
    fn class_of_prompt(&self, text: &str) -> Option<usize> {
        self.prompts.iter().position(|p| text.ends_with(p.as_str()) || text == p)
    }
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    vector::normalize(&v).expect("synthetic vectors are non-zero")
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if let Ok(u) = vector::normalize(&v) {
            return u;
        }
    }
}

fn near(rng: &mut ChaCha8Rng, dir: &[f32], noise: f32) -> Vec<f32> {
    let r = random_unit(rng, dir.len());
    unit(dir.iter().zip(&r).map(|(a, b)| a + noise * b).collect())
}

fn class_name(c: usize, rng: &mut ChaCha8Rng) -> String {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ru", "te", "zo", "vi", "ne", "sa", "po", "gu", "fe"];
    let mut s: String = (0..3).map(|_| *SYL.choose(rng).expect("non-empty")).collect();
    s.push_str(&c.to_string());
    s
}

pub fn class_prompt(name: &str) -> String {
    format!("a photo of a {name}")
}

pub fn class_concept(name: &str) -> String {
    format!("a {name}")
}

pub fn class_caption(name: &str) -> String {
    format!("a clear photo of a single {name}")
}

/// The constructed world with its clients.
pub struct SyntheticWorld {
    data: Arc<WorldData>,
    pub names: Vec<String>,
    pub clip_index: Arc<EmbeddingIndex>,
    pub siglip_index: Arc<EmbeddingIndex>,
    siglip: Space,
    pub classes: Vec<ClassEntry>,
}

impl SyntheticWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        if spec.classes == 0 || spec.dimension < 2 {
            return Err(Error::Config("synthetic world needs classes and dimension >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.dimension;
        let mut class_dirs = Vec::with_capacity(spec.classes);
        let mut off_dirs = Vec::with_capacity(spec.classes);
        let mut names = Vec::with_capacity(spec.classes);
        let mut prompts_list = Vec::with_capacity(spec.classes);
        let mut texts = HashMap::new();
        let mut images = HashMap::new();
        let mut records = Vec::new();
        let mut classes = Vec::with_capacity(spec.classes);
        for c in 0..spec.classes {
            let u = random_unit(&mut rng, d);
            let r = random_unit(&mut rng, d);
            let proj = vector::dot(&u, &r) as f32;
            let off = unit(r.iter().zip(&u).map(|(b, a)| b - proj * a).collect());
            let name = class_name(c, &mut rng);
            let prompt = class_prompt(&name);
            for t in [prompt.clone(), class_concept(&name), class_caption(&name)] {
                texts.insert(t, u.clone());
            }
            for j in 0..spec.images_per_class {
                let id = format!("c{c:02}-{j:02}");
                let uri = format!("synthetic://index/{id}");
                let v = near(&mut rng, &u, spec.image_noise);
                images.insert(uri.clone(), v.clone());
                records.push(EmbeddingRecord {
                    id,
                    vector: v,
                    metadata: RecordMetadata {
                        uri,
                        caption: Some(format!("{name} photo number {j}")),
                    },
                });
            }
            let real_images = (0..spec.real_per_class)
                .map(|j| {
                    let uri = format!("synthetic://real/c{c:02}-{j:02}");
                    images.insert(uri.clone(), near(&mut rng, &u, spec.image_noise));
                    ImageRef::new(uri)
                })
                .collect();
            classes.push(ClassEntry {
                class_id: format!("c{c:02}"),
                prompt: prompt.clone(),
                real_images,
            });
            class_dirs.push(u);
            off_dirs.push(off);
            names.push(name);
            prompts_list.push(prompt);
        }
        for j in 0..spec.distractors {
            let id = format!("d{j:07}");
            let uri = format!("synthetic://index/{id}");
            let v = random_unit(&mut rng, d);
            images.insert(uri.clone(), v.clone());
            records.push(EmbeddingRecord {
                id,
                vector: v,
                metadata: RecordMetadata {
                    uri,
                    caption: Some(format!("unrelated scene {j}")),
                },
            });
        }
        let siglip = Space::random(d, &mut rng);
        let siglip_records = records
            .iter()
            .map(|r| EmbeddingRecord {
                vector: siglip.apply(&r.vector),
                ..r.clone()
            })
            .collect();
        let clip_index = Arc::new(EmbeddingIndex::new(d, records, "synthetic-clip")?);
        let siglip_index =
            Arc::new(EmbeddingIndex::new(d, siglip_records, "synthetic-siglip")?.with_metric(Metric::CosineSiglip));
        Ok(Self {
            data: Arc::new(WorldData {
                spec,
                class_dirs,
                off_dirs,
                prompts: prompts_list,
                texts,
                images,
            }),
            names,
            clip_index,
            siglip_index,
            siglip,
            classes,
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.data.spec
    }

    pub fn class_direction(&self, class: usize) -> &[f32] {
        &self.data.class_dirs[class]
    }

    pub fn clip_embedder(&self) -> Arc<dyn EmbedderClient> {
        Arc::new(WorldEmbedder {
            tag: "synthetic-clip".into(),
            data: self.data.clone(),
            space: None,
        })
    }

    pub fn siglip_embedder(&self) -> Arc<dyn EmbedderClient> {
        Arc::new(WorldEmbedder {
            tag: "synthetic-siglip".into(),
            data: self.data.clone(),
            space: Some(self.siglip.clone()),
        })
    }

    pub fn clip_source(&self) -> RetrievalSource {
        RetrievalSource::new(self.clip_index.clone(), self.clip_embedder())
    }

    pub fn siglip_source(&self) -> RetrievalSource {
        RetrievalSource::new(self.siglip_index.clone(), self.siglip_embedder())
    }

    /// VLM that answers from the world's ground truth.
    pub fn vlm(&self) -> RuleVlm {
        let data = self.data.clone();
        let names = self.names.clone();
        RuleVlm::new(move |req| answer(&data, &names, req))
    }

    pub fn t2i(&self) -> MockT2i {
        MockT2i::with_latent(WorldRenderer {
            data: self.data.clone(),
        })
    }

    pub fn clients(&self) -> Clients {
        Clients {
            vlm: Arc::new(self.vlm()),
            t2i: Arc::new(self.t2i()),
            sources: vec![self.clip_source()],
        }
    }

    /// Evaluation spaces: separate client instances from the retrieval ones.
    pub fn evaluators(&self) -> BTreeMap<EvalMetric, Arc<dyn EmbedderClient>> {
        BTreeMap::from([
            (EvalMetric::ClipT2i, self.clip_embedder()),
            (EvalMetric::SiglipT2i, self.siglip_embedder()),
            (EvalMetric::DinoI2i, self.clip_embedder()),
        ])
    }

    pub fn grid_context(&self, config: PipelineConfig, profile: BackendProfile, parallelism: usize) -> GridContext {
        GridContext {
            config,
            profile,
            vlm: Arc::new(self.vlm()),
            t2i: Arc::new(self.t2i()),
            retrieval_sets: vec![
                ("synthetic".into(), vec![self.clip_source()]),
                ("synthetic-two-space".into(), vec![self.clip_source(), self.siglip_source()]),
            ],
            evaluators: self.evaluators(),
            parallelism,
            subset_seed: self.data.spec.seed,
            grouping: SemGrouping::default(),
            seed: self.data.spec.seed,
        }
    }
}

/// Quoted prompt inside the decision question.
fn decision_prompt(text: &str) -> Option<&str> {
    let (head, tail) = prompts::DECISION_TEMPLATE.split_once("{prompt}")?;
    text.strip_prefix(head)?.strip_suffix(tail)
}

fn answer(data: &WorldData, names: &[String], req: &ChatRequest) -> Result<String> {
    let first = req
        .messages
        .first()
        .ok_or_else(|| Error::Protocol("empty conversation".into()))?;
    let first_text = first.texts().collect::<Vec<_>>().join("\n");
    let last = req.last_user_text();
    if let Some(prompt) = decision_prompt(&first_text) {
        let class = data.class_of_prompt(prompt);
        if last == prompts::MISSING_CONCEPTS {
            return Ok(class.map_or_else(|| "unable to respond".into(), |c| class_concept(&names[c])));
        }
        if last == prompts::CAPTION_GENERATION {
            return Ok(class.map_or_else(String::new, |c| class_caption(&names[c])));
        }
        let image = first.images().next().map(ImageRef::from);
        let score = match (class, image.and_then(|i| artifact_embedding(&i))) {
            (Some(c), Some(v)) => vector::cosine(&v, &data.class_dirs[c]).unwrap_or(0.0),
            _ => 0.0,
        };
        return Ok(if score >= data.spec.match_threshold { "yes" } else { "no" }.into());
    }
    if first_text.starts_with("Please rephrase") {
        // Synthetic prompts are already clear: hand them back unchanged.
        let start = first_text.rfind("rephrased: \"").map(|i| i + "rephrased: \"".len());
        if let Some(s) = start {
            return Ok(first_text[s..].trim_end_matches("\".").to_string());
        }
    }
    if first_text.starts_with("Rank the following") {
        let n = first_text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count();
        return Ok((1..=n).map(|i| i.to_string()).collect::<Vec<_>>().join(", "));
    }
    Ok("unable to respond".into())
}

struct WorldEmbedder {
    tag: String,
    data: Arc<WorldData>,
    space: Option<Space>,
}

impl WorldEmbedder {
    fn map(&self, v: Vec<f32>) -> Vec<f32> {
        match &self.space {
            Some(s) => s.apply(&v),
            None => v,
        }
    }
}

impl EmbedderClient for WorldEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_text_raw(&self, text: &str) -> Result<Vec<f32>> {
        let v = match self.data.texts.get(text) {
            Some(v) => v.clone(),
            None => hash_vector(self.data.spec.seed, text, self.data.spec.dimension),
        };
        Ok(self.map(v))
    }

    fn embed_image_raw(&self, image: &ImageRef) -> Result<Vec<f32>> {
        if let Some(v) = self.data.images.get(image.as_str()) {
            return Ok(self.map(v.clone()));
        }
        artifact_embedding(image)
            .map(|v| self.map(v))
            .ok_or_else(|| Error::Precondition(format!("synthetic embedder cannot read {}", preview(image))))
    }
}

fn preview(image: &ImageRef) -> &str {
    let s = image.as_str();
    if s.starts_with("data:") {
        "<data uri>"
    } else {
        s
    }
}

struct WorldRenderer {
    data: Arc<WorldData>,
}

impl LatentModel for WorldRenderer {
    fn render(&self, request: &T2iRequest) -> Result<Vec<f32>> {
        let d = &self.data;
        let dim = d.spec.dimension;
        let base = match d.class_of_prompt(&request.prompt) {
            Some(c) => {
                let a = d.spec.prompt_alignment;
                let b = (1.0 - a * a).max(0.0).sqrt();
                d.class_dirs[c].iter().zip(&d.off_dirs[c]).map(|(u, o)| a * u + b * o).collect()
            }
            None => unit(hash_vector(d.spec.seed, &request.prompt, dim)),
        };
        let mut sum = base;
        let mut count = 1.0f32;
        for img in &request.images {
            let v = d
                .images
                .get(img.as_str())
                .cloned()
                .or_else(|| media::read_image(img).ok().and_then(|_| artifact_embedding(img)));
            if let Some(v) = v {
                sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
                count += 1.0;
            }
        }
        let seed = request.params.seed.unwrap_or(0);
        let jitter = hash_vector(seed, &request.sha256(), dim);
        let mean: Vec<f32> = sum.iter().zip(&jitter).map(|(s, j)| s / count + 0.02 * j).collect();
        Ok(unit(mean))
    }
}
