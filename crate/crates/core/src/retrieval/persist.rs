//! On-disk index layout: a directory holding `manifest.json`
//! (dimension, count, label counts), `vectors.f32` (packed little-endian
//! float32, one row per record) and `records.jsonl` (per-record metadata,
//! same row order).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EmbeddingVector, ReferenceIndex, ReferenceRecord, RetrievalError};
use crate::volume::load_volume;

pub const MANIFEST: &str = "manifest.json";
pub const VECTORS: &str = "vectors.f32";
pub const RECORDS: &str = "records.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dimension: usize,
    pub count: usize,
    pub with_pathology: usize,
    pub without_pathology: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: u64,
    pub patient_id: String,
    pub slice_index: usize,
    pub has_pathology: bool,
    #[serde(default)]
    pub thumbnail_ref: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RetrievalError + '_ {
    move |e| RetrievalError::Io(path.display().to_string(), e)
}

pub fn save(index: &ReferenceIndex, dir: &Path) -> Result<(), RetrievalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (with_pathology, without_pathology) = index.label_counts();
    let manifest = Manifest {
        dimension: index.dimension(),
        count: index.len(),
        with_pathology,
        without_pathology,
    };
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest).unwrap()).map_err(io_err(&mpath))?;

    let mut packed = Vec::with_capacity(index.len() * index.dimension() * 4);
    for r in index.records() {
        for v in r.vector.values() {
            packed.extend_from_slice(&v.to_le_bytes());
        }
    }
    let vpath = dir.join(VECTORS);
    fs::write(&vpath, packed).map_err(io_err(&vpath))?;

    let rpath = dir.join(RECORDS);
    let mut out = fs::File::create(&rpath).map_err(io_err(&rpath))?;
    for r in index.records() {
        let meta = RecordMeta {
            record_id: r.record_id,
            patient_id: r.patient_id.clone(),
            slice_index: r.slice_index,
            has_pathology: r.has_pathology,
            thumbnail_ref: r.thumbnail_ref.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&meta).unwrap()).map_err(io_err(&rpath))?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<ReferenceIndex, RetrievalError> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
    let index = ingest_packed(&dir.join(VECTORS), &dir.join(RECORDS), manifest.dimension)?;
    let (p, n) = index.label_counts();
    if index.len() != manifest.count || p != manifest.with_pathology || n != manifest.without_pathology {
        return Err(RetrievalError::Malformed(format!(
            "manifest counts {}/{}/{} disagree with payload {}/{p}/{n}",
            manifest.count,
            manifest.with_pathology,
            manifest.without_pathology,
            index.len()
        )));
    }
    Ok(index)
}

/// Builds an index from a packed vector file and a JSON-lines metadata
/// file with one row per vector.
pub fn ingest_packed(
    vectors: &Path,
    metadata: &Path,
    dimension: usize,
) -> Result<ReferenceIndex, RetrievalError> {
    if dimension == 0 {
        return Err(RetrievalError::Malformed("dimension 0".into()));
    }
    let bytes = fs::read(vectors).map_err(io_err(vectors))?;
    if bytes.len() % (dimension * 4) != 0 {
        return Err(RetrievalError::Malformed(format!(
            "{} bytes is not a whole number of {dimension}-dim rows",
            bytes.len()
        )));
    }
    let file = fs::File::open(metadata).map_err(io_err(metadata))?;
    let mut metas = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(metadata))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: RecordMeta =
            serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        metas.push(meta);
    }
    let rows = bytes.len() / (dimension * 4);
    if rows != metas.len() {
        return Err(RetrievalError::Malformed(format!(
            "{rows} vectors but {} metadata rows",
            metas.len()
        )));
    }
    let mut records = Vec::with_capacity(rows);
    for (meta, row) in metas.into_iter().zip(bytes.chunks_exact(dimension * 4)) {
        let values = row
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(ReferenceRecord {
            record_id: meta.record_id,
            patient_id: meta.patient_id,
            slice_index: meta.slice_index,
            has_pathology: meta.has_pathology,
            vector: EmbeddingVector::new(values)?,
            thumbnail_ref: meta.thumbnail_ref,
        });
    }
    ReferenceIndex::build(records)
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    volume: String,
    slice_index: usize,
    has_pathology: String,
    #[serde(default)]
    patient_id: Option<String>,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Embeds labelled slices of volumes under `volumes_dir`. The labels file
/// is CSV with header `volume,slice_index,has_pathology[,patient_id]`;
/// `volume` is a path relative to `volumes_dir`, and `patient_id` defaults
/// to the volume's file stem.
pub fn build_from_labels(
    volumes_dir: &Path,
    labels: &Path,
    embedder: &dyn EmbeddingProvider,
) -> Result<ReferenceIndex, RetrievalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(labels)
        .map_err(|e| RetrievalError::Malformed(format!("{}: {e}", labels.display())))?;
    let mut cache: Option<(PathBuf, crate::volume::Volume)> = None;
    let mut records = Vec::new();
    for (row_no, row) in reader.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        let has_pathology = parse_flag(&row.has_pathology).ok_or_else(|| {
            RetrievalError::Malformed(format!("row {}: bad has_pathology {:?}", row_no + 1, row.has_pathology))
        })?;
        let path = volumes_dir.join(&row.volume);
        if cache.as_ref().is_none_or(|(p, _)| p != &path) {
            let vol = load_volume(&path)
                .map_err(|e| RetrievalError::Malformed(format!("{}: {e}", path.display())))?;
            cache = Some((path.clone(), vol));
        }
        let vol = &cache.as_ref().unwrap().1;
        let slice = vol
            .slice_at(row.slice_index)
            .map_err(|e| RetrievalError::Malformed(format!("row {}: {e}", row_no + 1)))?;
        records.push(ReferenceRecord {
            record_id: row_no as u64,
            patient_id: row.patient_id.unwrap_or_else(|| vol.source_id().to_string()),
            slice_index: row.slice_index,
            has_pathology,
            vector: embedder.embed(&slice)?,
            thumbnail_ref: format!("{}#{}", row.volume, row.slice_index),
        });
    }
    ReferenceIndex::build(records)
}
