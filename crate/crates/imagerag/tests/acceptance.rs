//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::fixture;
use imagerag::backend::{self, BackendProfile, MockT2i};
use imagerag::chat::ScriptedVlm;
use imagerag::embed::MockEmbedder;
use imagerag::eval::{self, run_grid, EvalMetric, ExperimentPlan, Variant};
use imagerag::pipeline::{Clients, Pipeline, PipelineConfig};
use imagerag::retrieval::RetrievalSource;
use imagerag::synthetic::{SyntheticWorld, WorldSpec};
use imagerag::vlm::{self, QueryMode};
use imagerag_core::bm25::{Bm25Corpus, Bm25Params};
use imagerag_core::rerank::{bm25_rerank, Candidate, CandidatePool};
use imagerag_core::template::{render_template, ConceptGroup, PlaceholderStyle};
use imagerag_core::{
    aggregate, EmbeddingIndex, EmbeddingRecord, Error as CoreError, ImageRef, Metric, RecordMetadata, RetrievalHit,
    RetryPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (f64::from(*x) / n) as f32).collect();
        }
    }
}

fn scan_oracle(index: &EmbeddingIndex, q: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = index
        .records()
        .iter()
        .map(|r| {
            let (mut s, mut qq, mut rr) = (0.0f64, 0.0f64, 0.0f64);
            for (a, b) in q.iter().zip(&r.vector) {
                let (a, b) = (f64::from(*a), f64::from(*b));
                s += a * b;
                qq += a * a;
                rr += b * b;
            }
            (r.id.clone(), s / (qq.sqrt() * rr.sqrt()))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn retrieval_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut queries = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=10_000);
        let dim = rng.random_range(8..=512);
        let records = (0..n)
            .map(|i| EmbeddingRecord {
                id: format!("r{i:05}"),
                vector: (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                metadata: RecordMetadata::default(),
            })
            .collect();
        let index = EmbeddingIndex::new(dim, records, "random").map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let q = random_unit(&mut rng, dim);
            let k = rng.random_range(1..=64);
            let got = index.top_k(&q, k).map_err(|e| e.to_string())?;
            let want = scan_oracle(&index, &q, k);
            ensure!(got.len() == want.len(), "case {case}: {} hits, want {}", got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                ensure!(g.id == w.0, "case {case}: id {} vs {}", g.id, w.0);
                ensure!((g.score - w.1).abs() <= 1e-9, "case {case}: score {} vs {}", g.score, w.1);
                ensure!(g.score.abs() <= 1.0 + 1e-9, "case {case}: score {} out of range", g.score);
            }
            queries += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("200 indices, {queries} queries, {:.1}s", elapsed.as_secs_f64()))
}

const TOY_DOCS: [&str; 5] = [
    "a red bird on a branch",
    "a blue car parked on the street",
    "red car and red bird",
    "small bird",
    "the street at night",
];

// Hand-computed for the query "red bird street" with
// IDF = ln(1 + (N - df + 0.5) / (df + 0.5)), k1 = 1.2, b = 0.75, N = 5, avgdl = 4.8.
const TOY_SCORES: [f64; 5] = [
    1.2832261953775224,
    0.7372368314559158,
    1.7197892774658299,
    0.7079357024548728,
    0.9395274254529659,
];

fn bm25_oracle() -> Check {
    let corpus = Bm25Corpus::from_documents(TOY_DOCS);
    let params = Bm25Params::default();
    ensure!((params.k1, params.b) == (1.2, 0.75), "defaults {params:?}");
    for (doc, want) in TOY_DOCS.iter().zip(TOY_SCORES) {
        let got = corpus.score("red bird street", doc, &params);
        ensure!((got - want).abs() <= 1e-9, "{doc:?}: {got} vs {want}");
    }
    const VOCAB: [&str; 10] = ["red", "bird", "car", "blue", "sky", "dog", "a", "the", "small", "night"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let caption =
        |rng: &mut ChaCha8Rng| (0..rng.random_range(1..8)).map(|_| VOCAB[rng.random_range(0..10)]).collect::<Vec<_>>().join(" ");
    for p in 0..100 {
        let n = rng.random_range(1..15);
        let candidates: Vec<Candidate> = (0..n)
            .map(|i| Candidate {
                hit: RetrievalHit { id: format!("c{i}"), score: rng.random_range(-1.0..1.0), metric: Metric::CosineClip },
                uri: format!("mem://c{i}"),
                caption: Some(caption(&mut rng)),
            })
            .collect();
        let pool = CandidatePool::merge("q", [candidates]);
        let query = caption(&mut rng);
        let hits = bm25_rerank(&pool, &query, &params, &pool.local_corpus().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let mut got: Vec<String> = hits.iter().map(|h| h.id.clone()).collect();
        let mut want: Vec<String> = pool.ids().into_iter().map(String::from).collect();
        got.sort();
        want.sort();
        ensure!(got == want, "pool {p}: not a permutation");
    }
    Ok("5-document oracle and 100 random pools".into())
}

fn prompt_fidelity() -> Check {
    let read = |name: &str| std::fs::read_to_string(fixture(&format!("prompts/{name}.txt"))).unwrap();
    let (decision, missing, caption, rephrase) =
        (read("decision"), read("missing_concepts"), read("caption_generation"), read("rephrase"));
    let prompts: Vec<String> = read("substitutions").lines().map(str::to_string).collect();
    ensure!(prompts.len() == 20, "{} prompts", prompts.len());
    let img = ImageRef::from("data:image/png;base64,AAAA");
    for p in &prompts {
        let vlm = ScriptedVlm::new(["no", "a sheep\nan oil painting", "A sheep\nAn oil painting", "short"]);
        vlm::decide_match(&vlm, p, &img, 0.0).map_err(|e| e.to_string())?;
        vlm::retrieval_caption_generation(&vlm, p, &img, &RetryPolicy::default(), 3, QueryMode::Captions)
            .map_err(|e| e.to_string())?;
        vlm::rephrase_prompt(&vlm, p, &img, 0.0).map_err(|e| e.to_string())?;
        let reqs = vlm.requests();
        let text = |r: usize, m: usize| reqs[r].messages[m].texts().collect::<String>();
        ensure!(text(0, 0) == decision.replace("{prompt}", p), "decision text for {p:?}");
        ensure!(text(1, 2) == missing, "missing-concepts text for {p:?}");
        ensure!(text(2, 4) == caption, "caption text for {p:?}");
        ensure!(text(3, 0) == rephrase.replace("{prompt}", p), "rephrase text for {p:?}");
    }
    Ok("4 request kinds x 20 prompts".into())
}

fn retry_machine() -> Check {
    let img = ImageRef::from("mem://x");
    let run = |script: &[&str], prompt: &str| {
        let vlm = ScriptedVlm::new(script.iter().copied());
        vlm::retrieval_caption_generation(&vlm, prompt, &img, &RetryPolicy::default(), 3, QueryMode::Captions)
            .map_err(|e| e.to_string())
    };
    let temps = |g: &vlm::CaptionGeneration| g.attempts.iter().map(|a| a.temperature).collect::<Vec<_>>();
    let a = run(&["a sheep", "A sheep"], "p")?;
    ensure!(temps(&a) == [0.0], "(a) {:?}", temps(&a));
    let b = run(&["I'm unable to respond", "", "a sheep", "A sheep"], "p")?;
    ensure!(temps(&b) == [0.0, 0.4, 0.7] && !b.fallback_used, "(b) {:?}", temps(&b));
    let c = run(&["I'm unable to respond"; 4], "a Geococcyx")?;
    ensure!(c.fallback_used, "(c) no fallback");
    ensure!(c.attempts.len() == 4, "(c) {} attempts", c.attempts.len());
    ensure!(
        c.captions.len() == 1 && c.captions[0].caption == "a Geococcyx",
        "(c) captions {:?}",
        c.captions
    );
    Ok("cases a, b, c".into())
}

fn templates() -> Check {
    let one = render_template(
        "a Chow",
        &[ConceptGroup::new("a Chow dog", vec![ImageRef::from("imgA")])],
        PlaceholderStyle::Indexed,
        1,
    )
    .map_err(|e| e.to_string())?;
    ensure!(one.text == "According to these examples of a Chow dog:<img1>, generate a Chow", "{}", one.text);
    let two = render_template(
        "a sheep by a car",
        &[ConceptGroup::new("a sheep", vec!["s".into()]), ConceptGroup::new("a car", vec!["c".into()])],
        PlaceholderStyle::Omnigen,
        3,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        two.text
            == "According to these examples of a sheep:<img><|image_1|></img>, a car:<img><|image_2|></img>, \
                generate a sheep by a car",
        "{}",
        two.text
    );
    let groups: Vec<ConceptGroup> =
        (0..4).map(|i| ConceptGroup::new(format!("c{i}"), vec![ImageRef::new(format!("r{i}"))])).collect();
    ensure!(
        render_template("p", &groups[..2], PlaceholderStyle::Indexed, 1) == Err(CoreError::OverCap { count: 2, cap: 1 }),
        "cap 1 accepted two images"
    );
    ensure!(
        render_template("p", &groups, PlaceholderStyle::Indexed, 3) == Err(CoreError::OverCap { count: 4, cap: 3 }),
        "cap 3 accepted four images"
    );
    for (name, cap) in [("sdxl-ip", 1), ("omnigen", 3)] {
        let profile = BackendProfile::builtin(name).unwrap();
        ensure!(profile.max_reference_images == cap, "{name} cap {}", profile.max_reference_images);
        let over: Vec<ImageRef> = (0..=cap).map(|i| ImageRef::new(format!("r{i}"))).collect();
        ensure!(backend::generate(&MockT2i::new(), &profile, "p", over, None).is_err(), "{name} sent {} images", cap + 1);
    }
    Ok("goldens, caps 1 and 3".into())
}

fn aggregation() -> Check {
    let cell = aggregate([0.2, 0.3, 0.4]).map_err(|e| e.to_string())?;
    ensure!((cell.mean - 0.3).abs() <= 1e-6 && (cell.sem - 0.057735).abs() <= 1e-6, "{cell:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sem = if n == 1 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        let got = aggregate(xs.iter().copied()).map_err(|e| e.to_string())?;
        ensure!((got.mean - mean).abs() <= 1e-12 && (got.sem - sem).abs() <= 1e-12, "{got:?} vs ({mean}, {sem})");
    }
    Ok(format!("mean {:.6}, sem {:.6}; 1000 lists", cell.mean, cell.sem))
}

fn end_to_end() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dim = 16;
    let records = (0..500)
        .map(|i| EmbeddingRecord {
            id: format!("img{i:03}"),
            vector: random_unit(&mut rng, dim),
            metadata: RecordMetadata { uri: format!("mem://img{i:03}"), caption: Some(format!("image {i}")) },
        })
        .collect();
    let index = Arc::new(EmbeddingIndex::new(dim, records, "clip").map_err(|e| e.to_string())?);
    let embedder = Arc::new(
        MockEmbedder::new("clip", dim, 0)
            .with_text("caption a", random_unit(&mut rng, dim))
            .with_text("caption b", random_unit(&mut rng, dim)),
    );
    let run = || {
        let clients = Clients {
            vlm: Arc::new(ScriptedVlm::new(["no", "concept a\nconcept b", "caption a\ncaption b"])),
            t2i: Arc::new(MockT2i::new()),
            sources: vec![RetrievalSource::new(index.clone(), embedder.clone())],
        };
        let config = PipelineConfig { initial_seed: Some(1), final_seed: Some(1), ..PipelineConfig::default() };
        Pipeline::new(config, BackendProfile::builtin("omnigen").unwrap(), clients)
            .map_err(|e| e.to_string())?
            .run("a photo of a and b")
            .map_err(|f| f.error.to_string())
    };
    let first = run()?;
    let second = run()?;
    let stages = first.trace.stage_names();
    ensure!(stages == ["initial-gen", "decision", "vlm-loop", "retrieval", "final-gen"], "stages {stages:?}");
    let attached = first.trace.final_augmented().map(|a| a.images.len()).unwrap_or(0);
    ensure!(attached == 2, "{attached} attachments");
    let a = first.trace.without_timings().to_json().map_err(|e| e.to_string())?;
    let b = second.trace.without_timings().to_json().map_err(|e| e.to_string())?;
    ensure!(a == b, "traces differ");
    ensure!(
        first.artifacts.iter().zip(&second.artifacts).all(|(x, y)| x.result.artifact == y.result.artifact),
        "artifacts differ"
    );
    Ok(format!("run {}", first.trace.run_id))
}

fn synthetic_improvement() -> Check {
    let world = SyntheticWorld::new(WorldSpec::default()).map_err(|e| e.to_string())?;
    ensure!(world.classes.len() == 20, "{} classes", world.classes.len());
    let ctx = world.grid_context(PipelineConfig::default(), BackendProfile::builtin("omnigen").unwrap(), 4);
    let plans = [ExperimentPlan::new("base", Variant::Base), ExperimentPlan::new("full", Variant::FullMethod)];
    let report = run_grid(&ctx, &plans, &world.classes).map_err(|e| e.to_string())?;
    ensure!(report.failures.is_empty(), "failures {:?}", report.failures);
    let base = report.summary_for("base", EvalMetric::ClipT2i).ok_or("no base cell")?;
    let full = report.summary_for("full", EvalMetric::ClipT2i).ok_or("no full cell")?;
    ensure!(base.n == 20 && full.n == 20, "n {} / {}", base.n, full.n);
    ensure!(full.mean > base.mean, "full {} <= base {}", full.mean, base.mean);
    Ok(format!("clip-t2i full {:.4} vs base {:.4}", full.mean, base.mean))
}

fn size_sweep() -> Check {
    let sizes = [1000, 10_000, 100_000];
    let spec = WorldSpec { distractors: 100_000, ..WorldSpec::default() };
    let world = SyntheticWorld::new(spec).map_err(|e| e.to_string())?;
    let ctx = world.grid_context(PipelineConfig::default(), BackendProfile::builtin("omnigen").unwrap(), 4);
    let plans = eval::sweep_plans(&sizes, None).map_err(|e| e.to_string())?;
    let report = run_grid(&ctx, &plans, &world.classes).map_err(|e| e.to_string())?;

    let positions = eval::nested_subsets(world.clip_index.len(), &sizes, ctx.subset_seed).map_err(|e| e.to_string())?;
    let id_sets: Vec<HashSet<&str>> = positions
        .iter()
        .map(|ps| ps.iter().map(|&p| world.clip_index.records()[p].id.as_str()).collect())
        .collect();
    for (w, s) in id_sets.windows(2).zip(sizes.windows(2)) {
        ensure!(w[0].len() == s[0] && w[1].len() == s[1], "subset sizes");
        ensure!(w[0].is_subset(&w[1]) && w[0].len() < w[1].len(), "{} not strictly inside {}", s[0], s[1]);
    }
    ensure!(report.subsets.len() == 3, "{} subset records", report.subsets.len());
    for (info, ps) in report.subsets.iter().zip(&positions) {
        let ids: Vec<&str> = ps.iter().map(|&p| world.clip_index.records()[p].id.as_str()).collect();
        let digest: String = Sha256::digest(ids.join("\n").as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        ensure!(info.size == ids.len() && info.ids_sha256 == digest, "subset record for {}", info.plan);
    }
    for plan in &plans {
        for m in &report.metrics {
            let n = report.summary.iter().filter(|c| c.plan == plan.name && c.metric == *m).count();
            ensure!(n == 1, "{} x {}: {n} summary cells", plan.name, m.as_str());
        }
    }
    ensure!(report.summary.len() == sizes.len() * report.metrics.len(), "{} summary cells", report.summary.len());
    Ok(format!("{} summary cells over {} metrics", report.summary.len(), report.metrics.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("retrieval oracle", retrieval_oracle),
        ("bm25 oracle", bm25_oracle),
        ("prompt fidelity", prompt_fidelity),
        ("retry state machine", retry_machine),
        ("template bit-exactness", templates),
        ("aggregation", aggregation),
        ("end-to-end mock run", end_to_end),
        ("synthetic improvement", synthetic_improvement),
        ("dataset-size sweep", size_sweep),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
