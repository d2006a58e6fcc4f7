//! Exact cosine top-k index over chunk embeddings with metadata filtering.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::chunker::{Chunk, ChunkMetadata};
use crate::embedding::{cosine, normalize};
use crate::error::{Error, Result};
use crate::taxonomy::NoteType;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENTRIES_FILE: &str = "entries.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk: Chunk,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub dimension: usize,
    pub provider_id: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
}

/// Conjunctive metadata predicate; `None` fields do not constrain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetadataFilter {
    pub subject_id: Option<u64>,
    pub hadm_ids: Option<BTreeSet<u64>>,
    pub note_types: Option<BTreeSet<NoteType>>,
    pub sections: Option<BTreeSet<String>>,
    pub date_from: Option<NaiveDate>,
    pub date_to: Option<NaiveDate>,
    /// (hadm_id, note_type) pairs that must never match.
    pub exclude: Vec<(u64, NoteType)>,
}

impl MetadataFilter {
    pub fn matches(&self, m: &ChunkMetadata) -> bool {
        self.subject_id.is_none_or(|s| s == m.subject_id)
            && self.hadm_ids.as_ref().is_none_or(|h| h.contains(&m.hadm_id))
            && self.note_types.as_ref().is_none_or(|t| t.contains(&m.note_type))
            && self.sections.as_ref().is_none_or(|s| s.contains(&m.section))
            && self.date_from.is_none_or(|d| m.chartdate >= d)
            && self.date_to.is_none_or(|d| m.chartdate <= d)
            && !self.exclude.iter().any(|&(h, t)| h == m.hadm_id && t == m.note_type)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    provider_id: String,
    entries: Vec<IndexEntry>,
    by_id: HashMap<String, usize>,
    by_subject: HashMap<u64, Vec<usize>>,
}

impl VectorIndex {
    pub fn new(dimension: usize, provider_id: &str) -> Self {
        VectorIndex {
            dimension,
            provider_id: provider_id.to_string(),
            entries: Vec::new(),
            by_id: HashMap::new(),
            by_subject: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.by_id.get(chunk_id).map(|&i| &self.entries[i])
    }

    /// Inserts chunks with their vectors (normalized on insert). Re-adding an
    /// identical entry is a no-op; the whole batch is rejected on any conflict.
    pub fn add(&mut self, chunks: &[Chunk], vectors: &[Vec<f32>]) -> Result<usize> {
        if chunks.len() != vectors.len() {
            return Err(Error::InconsistentChunks(format!("{} chunks but {} vectors", chunks.len(), vectors.len())));
        }
        let mut staged: Vec<IndexEntry> = Vec::new();
        let mut staged_ids: HashMap<&str, usize> = HashMap::new();
        for (chunk, v) in chunks.iter().zip(vectors) {
            if v.len() != self.dimension {
                return Err(Error::DimensionMismatch { expected: self.dimension, actual: v.len() });
            }
            let mut v = v.clone();
            if !normalize(&mut v) {
                return Err(Error::DegenerateVector(chunk.chunk_id.clone()));
            }
            let existing = self
                .get(&chunk.chunk_id)
                .or_else(|| staged_ids.get(chunk.chunk_id.as_str()).map(|&i| &staged[i]));
            match existing {
                Some(e) if e.vector == v => continue,
                Some(_) => return Err(Error::ConflictingVector(chunk.chunk_id.clone())),
                None => {
                    staged_ids.insert(&chunk.chunk_id, staged.len());
                    staged.push(IndexEntry { chunk: chunk.clone(), vector: v });
                }
            }
        }
        let added = staged.len();
        for e in staged {
            self.insert_unchecked(e);
        }
        Ok(added)
    }

    fn insert_unchecked(&mut self, e: IndexEntry) {
        let pos = self.entries.len();
        self.by_id.insert(e.chunk.chunk_id.clone(), pos);
        self.by_subject.entry(e.chunk.metadata.subject_id).or_default().push(pos);
        self.entries.push(e);
    }

    /// Top-k by cosine similarity, ties broken by ascending chunk id.
    pub fn query_topk(&self, query: &[f32], k: usize, filter: Option<&MetadataFilter>) -> Result<Vec<Hit>> {
        let subject = filter.and_then(|f| f.subject_id);
        self.query_scan(query, k, subject, |m| filter.is_none_or(|f| f.matches(m)))
    }

    /// Top-k restricted by an arbitrary predicate over chunk metadata.
    pub fn query_topk_by(&self, query: &[f32], k: usize, pred: impl Fn(&ChunkMetadata) -> bool) -> Result<Vec<Hit>> {
        self.query_scan(query, k, None, pred)
    }

    fn query_scan(&self, query: &[f32], k: usize, subject: Option<u64>, pred: impl Fn(&ChunkMetadata) -> bool) -> Result<Vec<Hit>> {
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, actual: query.len() });
        }
        let candidates: Box<dyn Iterator<Item = &IndexEntry>> = match subject {
            Some(s) => Box::new(self.by_subject.get(&s).into_iter().flatten().map(|&i| &self.entries[i])),
            None => Box::new(self.entries.iter()),
        };
        let mut hits: Vec<Hit> = candidates
            .filter(|e| pred(&e.chunk.metadata))
            .map(|e| Hit {
                chunk_id: e.chunk.chunk_id.clone(),
                score: cosine(query, &e.vector),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            dimension: self.dimension,
            provider_id: self.provider_id.clone(),
            count: self.entries.len(),
        }
    }

    /// Writes `manifest.json` and `entries.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ENTRIES_FILE);
        let mut w = BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        crate::io::write_json(&dir.join(MANIFEST_FILE), &self.manifest())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: IndexManifest = crate::io::read_json(&dir.join(MANIFEST_FILE))?;
        let mut index = VectorIndex::new(manifest.dimension, &manifest.provider_id);
        let path = dir.join(ENTRIES_FILE);
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: IndexEntry = serde_json::from_str(&line).map_err(|err| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: err.to_string(),
            })?;
            if e.vector.len() != index.dimension {
                return Err(Error::DimensionMismatch { expected: index.dimension, actual: e.vector.len() });
            }
            if index.by_id.contains_key(&e.chunk.chunk_id) {
                return Err(Error::ConflictingVector(e.chunk.chunk_id));
            }
            index.insert_unchecked(e);
        }
        if index.len() != manifest.count {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 0,
                message: format!("manifest lists {} entries, found {}", manifest.count, index.len()),
            });
        }
        Ok(index)
    }
}
