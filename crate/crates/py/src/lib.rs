//! Python bindings for the dense pipeline.

use std::path::PathBuf;

use dense_core::chunker::{window_spans, ChunkParams};
use dense_core::embedding::HashingEmbedder;
use dense_core::evaluation;
use dense_core::generator::parse_soap;
use dense_core::io::write_notes_csv_file;
use dense_core::pipeline::{Pipeline, PipelineConfig, Stage};
use dense_core::preprocess::{clean_generic, preprocess_text, HeaderCatalog};
use dense_core::synth::{generate_synthetic_corpus, SyntheticCorpusSpec};
use dense_core::taxonomy::{NoteType, RuleSet};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(dense, DenseError, PyException);

fn err(e: dense_core::Error) -> PyErr {
    DenseError::new_err(e.to_string())
}

fn note_type(name: &str) -> PyResult<NoteType> {
    name.parse().map_err(err)
}

/// Canonical note type for a (category, description) label pair.
#[pyfunction]
#[pyo3(signature = (category, description, rules=None))]
pub fn classify_label(category: &str, description: &str, rules: Option<PathBuf>) -> PyResult<String> {
    let rules = match rules {
        Some(p) => RuleSet::load(&p).map_err(err)?,
        None => RuleSet::default_rules(),
    };
    Ok(rules.classify_labels(category, description).as_str().to_string())
}

#[pyfunction]
pub fn note_types() -> Vec<&'static str> {
    NoteType::ALL.iter().map(|t| t.as_str()).collect()
}

#[pyfunction]
pub fn clean_text(text: &str) -> String {
    clean_generic(text)
}

/// Cleaned note as `(header, body)` pairs.
#[pyfunction]
pub fn preprocess_note(text: &str, note_type_name: &str) -> PyResult<Vec<(String, String)>> {
    let t = note_type(note_type_name)?;
    let sections = preprocess_text(text, t, &HeaderCatalog::default_catalog());
    Ok(sections.into_iter().map(|s| (s.header, s.body)).collect())
}

/// Overlapping windows of `text` as `(char_start, char_end, text)`.
#[pyfunction]
#[pyo3(signature = (text, window_size=3000, overlap=300))]
pub fn chunk_text(text: &str, window_size: usize, overlap: usize) -> PyResult<Vec<(usize, usize, String)>> {
    let chars: Vec<char> = text.chars().collect();
    let spans = window_spans(chars.len(), ChunkParams { window_size, overlap }).map_err(err)?;
    Ok(spans.into_iter().map(|(s, e)| (s, e, chars[s..e].iter().collect())).collect())
}

#[pyfunction]
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    evaluation::bleu(candidate, reference)
}

#[pyfunction]
#[pyo3(signature = (candidate, reference, n=1))]
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    evaluation::rouge_n(candidate, reference, n)
}

#[pyfunction]
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    evaluation::rouge_l(candidate, reference)
}

/// Number of non-empty SOAP sections (0 to 4) after parsing `text`.
#[pyfunction]
pub fn soap_completeness(text: &str) -> u8 {
    evaluation::soap_completeness(&parse_soap(text).sections)
}

/// Offline hashing embeddings, L2-normalized.
#[pyfunction]
#[pyo3(signature = (texts, dimension=384))]
pub fn embed(texts: Vec<String>, dimension: usize) -> PyResult<Vec<Vec<f32>>> {
    if dimension == 0 {
        return Err(DenseError::new_err("dimension must be positive"));
    }
    let e = HashingEmbedder::new("python", dimension);
    Ok(texts.iter().map(|t| e.embed_one(t)).collect())
}

/// Writes a seeded synthetic corpus CSV; returns the number of notes.
#[pyfunction]
#[pyo3(signature = (out, patients=56, min_visits=10, max_visits=57, seed=1))]
pub fn synth_corpus(out: PathBuf, patients: usize, min_visits: usize, max_visits: usize, seed: u64) -> PyResult<usize> {
    let spec = SyntheticCorpusSpec {
        patient_count: patients,
        visits_per_patient: (min_visits, max_visits),
        seed,
        ..SyntheticCorpusSpec::default()
    };
    let notes = generate_synthetic_corpus(&spec).map_err(err)?;
    write_notes_csv_file(&out, &notes).map_err(err)?;
    Ok(notes.len())
}

/// Runs pipeline stages from a TOML config; returns `(stage, ran, summary)` per stage.
#[pyfunction]
#[pyo3(signature = (config, stages=None, offline=false, force=false))]
pub fn run_pipeline(
    py: Python<'_>,
    config: PathBuf,
    stages: Option<Vec<String>>,
    offline: bool,
    force: bool,
) -> PyResult<Vec<(String, bool, String)>> {
    let stages: Vec<Stage> = match stages {
        Some(names) => names.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(err)?,
        None => Stage::ALL.to_vec(),
    };
    py.detach(|| {
        let mut cfg = PipelineConfig::load(&config)?;
        cfg.apply_env();
        if offline {
            cfg.force_offline();
        }
        let mut p = Pipeline::new(cfg)?;
        p.force = force;
        p.run(&stages)
    })
    .map(|out| out.into_iter().map(|o| (o.stage.name().to_string(), o.ran, o.summary)).collect())
    .map_err(err)
}

#[pymodule]
fn dense(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DenseError", m.py().get_type::<DenseError>())?;
    m.add_function(wrap_pyfunction!(classify_label, m)?)?;
    m.add_function(wrap_pyfunction!(note_types, m)?)?;
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_note, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_text, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(soap_completeness, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
