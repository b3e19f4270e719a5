//! Loading and writing index files: the `IRAG` binary plus its JSON-lines
//! metadata sidecar.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use imagerag_core::format;
use imagerag_core::{EmbeddingIndex, EmbeddingRecord, Metric, RecordMetadata};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag used when no metadata line names the embedding model.
pub const UNSPECIFIED_TAG: &str = "unspecified";

/// One line of the metadata sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataLine {
    pub id: String,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Embedding model that produced the vectors (written by the exporter).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Metadata {
    pub entries: BTreeMap<String, RecordMetadata>,
    pub model_tag: Option<String>,
}

pub fn parse_metadata<R: Read>(reader: R) -> Result<Metadata> {
    let mut meta = Metadata::default();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Metadata {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MetadataLine = serde_json::from_str(&line).map_err(|e| Error::Metadata {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(tag) = parsed.model_tag {
            match &meta.model_tag {
                Some(existing) if *existing != tag => {
                    return Err(Error::Metadata {
                        line: line_no,
                        message: format!("model_tag \"{tag}\" conflicts with \"{existing}\""),
                    })
                }
                _ => meta.model_tag = Some(tag),
            }
        }
        let record = RecordMetadata {
            uri: parsed.uri,
            caption: parsed.caption,
        };
        if meta.entries.insert(parsed.id.clone(), record).is_some() {
            return Err(Error::Metadata {
                line: line_no,
                message: format!("duplicate id \"{}\"", parsed.id),
            });
        }
    }
    Ok(meta)
}

/// Builds a normalized index from raw `IRAG` bytes and parsed metadata.
pub fn ingest_bytes(bytes: &[u8], metadata: &Metadata) -> Result<EmbeddingIndex> {
    let raw = format::decode(bytes)?;
    let mut seen = HashSet::with_capacity(raw.entries.len());
    let mut records = Vec::with_capacity(raw.entries.len());
    for (id, vector) in raw.entries {
        if !seen.insert(id.clone()) {
            return Err(imagerag_core::Error::DuplicateId(id).into());
        }
        let meta = metadata
            .entries
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::MissingMetadata(id.clone()))?;
        records.push(EmbeddingRecord {
            id,
            vector,
            metadata: meta,
        });
    }
    let tag = metadata.model_tag.clone().unwrap_or_else(|| UNSPECIFIED_TAG.into());
    let metric = metric_for_tag(&tag);
    Ok(EmbeddingIndex::new(raw.dimension, records, tag)?.with_metric(metric))
}

/// Which cosine space a model tag names.
pub fn metric_for_tag(tag: &str) -> Metric {
    if tag.to_ascii_lowercase().contains("siglip") {
        Metric::CosineSiglip
    } else {
        Metric::CosineClip
    }
}

pub fn ingest(records_file: &Path, metadata_file: &Path) -> Result<EmbeddingIndex> {
    let bytes = fs::read(records_file).map_err(|e| Error::io(records_file, e))?;
    let meta_file = fs::File::open(metadata_file).map_err(|e| Error::io(metadata_file, e))?;
    let metadata = parse_metadata(meta_file)?;
    ingest_bytes(&bytes, &metadata)
}

/// Sidecar location for an index file: same path with a `.jsonl` extension.
pub fn sidecar_path(index_file: &Path) -> PathBuf {
    index_file.with_extension("jsonl")
}

/// Loads an index whose metadata lives in the conventional sidecar.
pub fn load_index(index_file: &Path) -> Result<EmbeddingIndex> {
    ingest(index_file, &sidecar_path(index_file))
}

pub fn encode_index(index: &EmbeddingIndex) -> Result<Vec<u8>> {
    Ok(format::encode(
        index.dimension(),
        index.records().iter().map(|r| (r.id.as_str(), r.vector.as_slice())),
    )?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn metadata_jsonl(index: &EmbeddingIndex) -> Result<String> {
    let tag = (index.embedder_tag() != UNSPECIFIED_TAG).then(|| index.embedder_tag().to_string());
    let mut out = String::new();
    for r in index.records() {
        let line = MetadataLine {
            id: r.id.clone(),
            uri: r.metadata.uri.clone(),
            caption: r.metadata.caption.clone(),
            model_tag: tag.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes the index binary to `path` and its sidecar next to it.
pub fn write_index(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    write_atomic(path, &encode_index(index)?)?;
    write_atomic(&sidecar_path(path), metadata_jsonl(index)?.as_bytes())
}
