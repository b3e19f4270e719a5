#![allow(dead_code)]

use std::path::PathBuf;

/// Hand-rolled IRAG writer, independent of the library encoder.
pub fn irag_bytes(dim: usize, records: &[(&str, Vec<f32>)]) -> Vec<u8> {
    let mut b = b"IRAG".to_vec();
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&(dim as u32).to_le_bytes());
    b.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (id, v) in records {
        b.extend_from_slice(&(id.len() as u16).to_le_bytes());
        b.extend_from_slice(id.as_bytes());
        for x in v {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

pub fn meta_jsonl(entries: &[(&str, Option<&str>)], tag: Option<&str>) -> String {
    let mut out = String::new();
    for (id, caption) in entries {
        let mut o = serde_json::json!({ "id": id, "uri": format!("images/{id}.png") });
        if let Some(c) = caption {
            o["caption"] = (*c).into();
        }
        if let Some(t) = tag {
            o["model_tag"] = t.into();
        }
        out.push_str(&o.to_string());
        out.push('\n');
    }
    out
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn unit(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Cosine in f64 over the given f32 values.
pub fn cos64(a: &[f32], b: &[f32]) -> f64 {
    dot64(a, b) / (dot64(a, a).sqrt() * dot64(b, b).sqrt())
}
