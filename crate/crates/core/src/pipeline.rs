//! Staged, resumable pipeline driven by one TOML config file.
//!
//! Every stage reads its inputs from the work directory and records a
//! checkpoint in `manifest.json`: the digest of its inputs and parameters and
//! the digests of the files it wrote. A stage is skipped when the recorded
//! input digest matches and its outputs are still intact.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunker::{chunk_visit, Chunk, ChunkParams};
use crate::corpus::{build_timelines, filter_cohort, pivot_notes, PatientTimeline, VisitKey, VisitRecord};
use crate::embedding::{embed_texts, EmbeddingProvider, HashingEmbedder, HttpEmbedder, EVALUATION_DIM, RETRIEVAL_DIM};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_report, embed_unique, score_pair, sequences_by_patient, temporal_from_vectors, write_pair_scores_csv, NotePairScores, TemporalReport};
use crate::generator::{run_patient, GeneratedNote, GenerationContext, GenerationFailure, GenerationProvider, HttpGenerator, MockGenerator, ResponseCache, DEFAULT_MAX_PROMPT_CHARS};
use crate::index::VectorIndex;
use crate::io::{read_json, read_jsonl, read_notes_csv_file, write_json, write_jsonl, write_text};
use crate::preprocess::{clean_generic, preprocess_visit, CleanNote, HeaderCatalog};
use crate::provider::{RetryPolicy, API_KEY_ENV};
use crate::retriever::{default_queries, load_queries, PreparedQueries, RetrievalParams};
use crate::taxonomy::{classify_all, validate_rules, ClassifiedNote, NoteType, RawNoteRecord, RuleSet, FIXTURES};

pub const EMBED_URL_ENV: &str = "DENSE_EMBED_URL";
pub const GEN_URL_ENV: &str = "DENSE_GEN_URL";
pub const MANIFEST: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input_csv: PathBuf,
    pub workdir: PathBuf,
    pub taxonomy_rules: Option<PathBuf>,
    pub header_catalog: Option<PathBuf>,
    pub retrieval_queries: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            input_csv: PathBuf::from("notes.csv"),
            workdir: PathBuf::from("work"),
            taxonomy_rules: None,
            header_catalog: None,
            retrieval_queries: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub offline: bool,
    pub url: String,
    /// Defaults to 384 for retrieval and 768 for evaluation.
    pub dimension: Option<usize>,
    pub batch_limit: usize,
    pub timeout_secs: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            offline: true,
            url: String::new(),
            dimension: None,
            batch_limit: 64,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub offline: bool,
    pub url: String,
    pub max_prompt_chars: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            offline: true,
            url: String::new(),
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
            max_tokens: 1024,
            temperature: 0.0,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub embed_retrieval: EmbedConfig,
    pub embed_eval: EmbedConfig,
    pub generate: GenerateConfig,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        ProvidersConfig {
            embed_retrieval: EmbedConfig::default(),
            embed_eval: EmbedConfig::default(),
            generate: GenerateConfig::default(),
            retry_attempts: 3,
            retry_base_delay_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub min_visits: usize,
    pub require_type: Option<NoteType>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            min_visits: 1,
            require_type: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Default seed for `synth`; every pipeline stage is itself deterministic.
    pub seed: u64,
    pub paths: PathsConfig,
    pub chunking: ChunkParams,
    pub retrieval: RetrievalParams,
    pub providers: ProvidersConfig,
    pub cohort: CohortConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            paths: PathsConfig::default(),
            chunking: ChunkParams::default(),
            retrieval: RetrievalParams::default(),
            providers: ProvidersConfig::default(),
            cohort: CohortConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(String::new, |s| {
                let line = text[..s.start].lines().count().max(1);
                format!("line {line}")
            });
            Error::config(&field, e.message().to_string())
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.input_csv);
        fix(&mut paths.workdir);
        for p in [&mut paths.taxonomy_rules, &mut paths.header_catalog, &mut paths.retrieval_queries].into_iter().flatten() {
            fix(p);
        }
    }

    /// Endpoint and credential overrides from the environment.
    pub fn apply_env(&mut self) {
        self.apply_overrides(std::env::var(EMBED_URL_ENV).ok(), std::env::var(GEN_URL_ENV).ok());
    }

    pub fn apply_overrides(&mut self, embed_url: Option<String>, gen_url: Option<String>) {
        if let Some(u) = embed_url.filter(|u| !u.is_empty()) {
            self.providers.embed_retrieval.url = u.clone();
            self.providers.embed_eval.url = u;
        }
        if let Some(u) = gen_url.filter(|u| !u.is_empty()) {
            self.providers.generate.url = u;
        }
    }

    pub fn force_offline(&mut self) {
        self.providers.embed_retrieval.offline = true;
        self.providers.embed_eval.offline = true;
        self.providers.generate.offline = true;
    }

    pub fn validate(&self) -> Result<()> {
        self.chunking.validate().map_err(|e| Error::config("chunking", e.to_string()))?;
        self.retrieval.validate()?;
        for (name, e) in [("embed_retrieval", &self.providers.embed_retrieval), ("embed_eval", &self.providers.embed_eval)] {
            if e.dimension.is_some_and(|d| d == 0 || d > 65_536) {
                return Err(Error::config(&format!("providers.{name}.dimension"), "must lie in 1..=65536"));
            }
            if e.batch_limit == 0 {
                return Err(Error::config(&format!("providers.{name}.batch_limit"), "must be at least 1"));
            }
            if !e.offline && e.url.trim().is_empty() {
                return Err(Error::config(&format!("providers.{name}.url"), format!("required when offline = false (or set {EMBED_URL_ENV})")));
            }
        }
        let g = &self.providers.generate;
        if g.max_prompt_chars < 1000 {
            return Err(Error::config("providers.generate.max_prompt_chars", "must be at least 1000"));
        }
        if !(0.0..=2.0).contains(&g.temperature) {
            return Err(Error::config("providers.generate.temperature", "must lie in [0, 2]"));
        }
        if g.max_tokens == 0 {
            return Err(Error::config("providers.generate.max_tokens", "must be at least 1"));
        }
        if !g.offline && g.url.trim().is_empty() {
            return Err(Error::config("providers.generate.url", format!("required when offline = false (or set {GEN_URL_ENV})")));
        }
        if self.providers.retry_attempts == 0 {
            return Err(Error::config("providers.retry_attempts", "must be at least 1"));
        }
        if self.cohort.min_visits == 0 {
            return Err(Error::config("cohort.min_visits", "must be at least 1"));
        }
        if self.paths.workdir.as_os_str().is_empty() {
            return Err(Error::config("paths.workdir", "must not be empty"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_bytes(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.providers.retry_attempts,
            base_delay: Duration::from_millis(self.providers.retry_base_delay_ms),
        }
    }

    fn api_key() -> Option<String> {
        std::env::var(API_KEY_ENV).ok()
    }

    pub fn retrieval_embedder(&self) -> Box<dyn EmbeddingProvider> {
        embedder("retrieval", &self.providers.embed_retrieval, RETRIEVAL_DIM)
    }

    pub fn evaluation_embedder(&self) -> Box<dyn EmbeddingProvider> {
        embedder("evaluation", &self.providers.embed_eval, EVALUATION_DIM)
    }

    pub fn generator(&self) -> Box<dyn GenerationProvider> {
        let g = &self.providers.generate;
        if g.offline {
            Box::new(MockGenerator {
                max_prompt_chars: g.max_prompt_chars,
                ..MockGenerator::default()
            })
        } else {
            Box::new(HttpGenerator::new(&g.url, Self::api_key(), g.max_prompt_chars, g.max_tokens, g.temperature, Duration::from_secs(g.timeout_secs)))
        }
    }
}

fn embedder(profile: &str, e: &EmbedConfig, default_dim: usize) -> Box<dyn EmbeddingProvider> {
    let dim = e.dimension.unwrap_or(default_dim);
    if e.offline {
        Box::new(HashingEmbedder::new(profile, dim))
    } else {
        Box::new(HttpEmbedder::new(profile, &e.url, PipelineConfig::api_key(), dim, e.batch_limit, Duration::from_secs(e.timeout_secs)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Classify,
    Pivot,
    Preprocess,
    Chunk,
    Index,
    Generate,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Classify,
        Stage::Pivot,
        Stage::Preprocess,
        Stage::Chunk,
        Stage::Index,
        Stage::Generate,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Classify => "classify",
            Stage::Pivot => "pivot",
            Stage::Preprocess => "preprocess",
            Stage::Chunk => "chunk",
            Stage::Index => "index",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Work-directory artifacts this stage writes.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["notes.jsonl"],
            Stage::Classify => &["classified.jsonl", "classification_summary.json"],
            Stage::Pivot => &["visits.jsonl", "timelines.jsonl", "rejects.csv"],
            Stage::Preprocess => &["clean_notes.jsonl"],
            Stage::Chunk => &["chunks.jsonl"],
            Stage::Index => &["index"],
            Stage::Generate => &["generated.jsonl", "generation_failures.jsonl"],
            Stage::Evaluate => &["scores.json", "pair_scores.csv", "temporal.json"],
            Stage::Report => &["report.json", "report.txt"],
        }
    }

    /// Upstream artifacts this stage reads, with the stage producing each.
    fn upstream(self) -> &'static [(Stage, &'static str)] {
        match self {
            Stage::Ingest => &[],
            Stage::Classify => &[(Stage::Ingest, "notes.jsonl")],
            Stage::Pivot => &[(Stage::Classify, "classified.jsonl")],
            Stage::Preprocess => &[(Stage::Pivot, "timelines.jsonl")],
            Stage::Chunk => &[(Stage::Preprocess, "clean_notes.jsonl")],
            Stage::Index => &[(Stage::Chunk, "chunks.jsonl")],
            Stage::Generate => &[(Stage::Pivot, "timelines.jsonl"), (Stage::Index, "index")],
            Stage::Evaluate => &[(Stage::Pivot, "timelines.jsonl"), (Stage::Generate, "generated.jsonl")],
            Stage::Report => &[(Stage::Evaluate, "scores.json"), (Stage::Evaluate, "temporal.json")],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("stage", format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCheckpoint {
    pub inputs_digest: String,
    pub outputs: BTreeMap<String, String>,
    pub completed_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_digest: String,
    pub stages: BTreeMap<Stage, StageCheckpoint>,
}

impl RunManifest {
    fn empty(config_digest: String) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            stages: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub ran: bool,
    pub summary: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub stage: Option<Stage>,
    pub kind: String,
    pub message: String,
}

fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content digest of a file, or of a directory's files (names and contents, sorted).
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        names.sort();
        let mut h = Sha256::new();
        for p in names {
            h.update(p.file_name().unwrap_or_default().to_string_lossy().as_bytes());
            h.update(b"\0");
            h.update(digest_path(&p)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(digest_bytes(&bytes))
    }
}

fn text_digest(path: Option<&Path>, default: &str) -> Result<String> {
    match path {
        Some(p) => digest_path(p),
        None => Ok(digest_bytes(default.as_bytes())),
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub force: bool,
    pub jobs: Option<usize>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            force: false,
            jobs: None,
        })
    }

    pub fn workdir(&self) -> &Path {
        &self.config.paths.workdir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.workdir().join(rel)
    }

    pub fn load_manifest(&self) -> Result<RunManifest> {
        let p = self.path(MANIFEST);
        if p.exists() {
            read_json(&p)
        } else {
            Ok(RunManifest::empty(self.config.digest()))
        }
    }

    /// Runs the given stages in order. On failure an `error.json` is written to
    /// the work directory before the error is returned.
    pub fn run(&self, stages: &[Stage]) -> Result<Vec<StageOutcome>> {
        std::fs::create_dir_all(self.workdir()).map_err(|e| Error::io(self.workdir(), e))?;
        let error_path = self.path(ERROR_FILE);
        let mut current = None;
        let result = self.with_pool(|| {
            let mut manifest = self.load_manifest()?;
            manifest.config_digest = self.config.digest();
            manifest.version = env!("CARGO_PKG_VERSION").to_string();
            let mut outcomes = Vec::new();
            for &stage in stages {
                current = Some(stage);
                outcomes.push(self.run_stage(stage, &mut manifest)?);
            }
            Ok(outcomes)
        });
        match &result {
            Ok(_) => {
                if error_path.exists() {
                    std::fs::remove_file(&error_path).map_err(|e| Error::io(&error_path, e))?;
                }
            }
            Err(e) => {
                let report = ErrorReport {
                    stage: current,
                    kind: error_kind(e).to_string(),
                    message: e.to_string(),
                };
                // The original error matters more than a failure to record it.
                let _ = write_json(&error_path, &report);
            }
        }
        result
    }

    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        self.run(&Stage::ALL)
    }

    fn with_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        match self.jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config("jobs", e.to_string()))?
                .install(f),
            None => f(),
        }
    }

    fn inputs_digest(&self, stage: Stage) -> Result<String> {
        let cfg = &self.config;
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        for &(up, rel) in stage.upstream() {
            let p = self.path(rel);
            if !p.exists() {
                return Err(Error::MissingStage {
                    stage: stage.name().to_string(),
                    missing: up.name().to_string(),
                    path: p,
                });
            }
            h.update(rel.as_bytes());
            h.update(digest_path(&p)?.as_bytes());
        }
        let params = match stage {
            Stage::Ingest => {
                let p = &cfg.paths.input_csv;
                if !p.exists() {
                    return Err(Error::config("paths.input_csv", format!("{} does not exist", p.display())));
                }
                digest_path(p)?
            }
            Stage::Classify => text_digest(cfg.paths.taxonomy_rules.as_deref(), crate::taxonomy::DEFAULT_RULES)?,
            Stage::Pivot => serde_json::to_string(&cfg.cohort)?,
            Stage::Preprocess => text_digest(cfg.paths.header_catalog.as_deref(), crate::preprocess::DEFAULT_HEADERS)?,
            Stage::Chunk => serde_json::to_string(&cfg.chunking)?,
            Stage::Index => cfg.retrieval_embedder().id().to_string(),
            Stage::Generate => {
                let queries = match &cfg.paths.retrieval_queries {
                    Some(p) => digest_path(p)?,
                    None => String::new(),
                };
                format!(
                    "{}|{}|{}|{}|{}|{}",
                    serde_json::to_string(&cfg.retrieval)?,
                    queries,
                    cfg.retrieval_embedder().id(),
                    cfg.generator().id(),
                    serde_json::to_string(&cfg.providers.generate)?,
                    env!("CARGO_PKG_VERSION"),
                )
            }
            Stage::Evaluate => cfg.evaluation_embedder().id().to_string(),
            Stage::Report => String::new(),
        };
        h.update(b"\0");
        h.update(params.as_bytes());
        Ok(hex::encode(h.finalize()))
    }

    fn outputs_intact(&self, cp: &StageCheckpoint, stage: Stage) -> bool {
        stage.outputs().iter().all(|rel| {
            let p = self.path(rel);
            p.exists() && cp.outputs.get(*rel).is_some_and(|d| digest_path(&p).ok().as_ref() == Some(d))
        })
    }

    /// Runs one stage unless its checkpoint is current; updates the manifest on disk.
    pub fn run_stage(&self, stage: Stage, manifest: &mut RunManifest) -> Result<StageOutcome> {
        let inputs_digest = self.inputs_digest(stage)?;
        if !self.force {
            if let Some(cp) = manifest.stages.get(&stage) {
                if cp.inputs_digest == inputs_digest && self.outputs_intact(cp, stage) {
                    log::info!("{stage}: up to date, skipped");
                    return Ok(StageOutcome {
                        stage,
                        ran: false,
                        summary: "up to date".into(),
                    });
                }
            }
        }
        log::info!("{stage}: running");
        manifest.stages.remove(&stage);
        write_json(&self.path(MANIFEST), manifest)?;
        let summary = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Classify => self.classify()?,
            Stage::Pivot => self.pivot()?,
            Stage::Preprocess => self.preprocess()?,
            Stage::Chunk => self.chunk()?,
            Stage::Index => self.index()?,
            Stage::Generate => self.generate()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Report => self.report()?,
        };
        let outputs = stage
            .outputs()
            .iter()
            .map(|rel| Ok((rel.to_string(), digest_path(&self.path(rel))?)))
            .collect::<Result<_>>()?;
        manifest.stages.insert(
            stage,
            StageCheckpoint {
                inputs_digest,
                outputs,
                completed_at: chrono::Utc::now().to_rfc3339(),
            },
        );
        write_json(&self.path(MANIFEST), manifest)?;
        log::info!("{stage}: {summary}");
        Ok(StageOutcome { stage, ran: true, summary })
    }

    fn ingest(&self) -> Result<String> {
        let notes = read_notes_csv_file(&self.config.paths.input_csv)?;
        write_jsonl(&self.path("notes.jsonl"), &notes)?;
        Ok(format!("{} notes", notes.len()))
    }

    fn classify(&self) -> Result<String> {
        let rules = match &self.config.paths.taxonomy_rules {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::default_rules(),
        };
        let validation = validate_rules(&rules, FIXTURES);
        if !validation.errors.is_empty() {
            return Err(Error::InvalidRules(format!("{:?}", validation.errors)));
        }
        let notes: Vec<RawNoteRecord> = read_jsonl(&self.path("notes.jsonl"))?;
        let classified = classify_all(notes, &rules);
        let mut counts: BTreeMap<NoteType, usize> = NoteType::ALL.into_iter().map(|t| (t, 0)).collect();
        for c in &classified {
            *counts.entry(c.note_type).or_default() += 1;
        }
        write_jsonl(&self.path("classified.jsonl"), &classified)?;
        write_json(
            &self.path("classification_summary.json"),
            &serde_json::json!({ "counts": counts, "rule_warnings": validation.warnings.iter().map(|w| format!("{w:?}")).collect::<Vec<_>>() }),
        )?;
        Ok(format!("{} notes classified", classified.len()))
    }

    fn pivot(&self) -> Result<String> {
        let classified: Vec<ClassifiedNote> = read_jsonl(&self.path("classified.jsonl"))?;
        let out = pivot_notes(classified);
        write_jsonl(&self.path("visits.jsonl"), &out.visits)?;
        let all = build_timelines(out.visits);
        let patients = all.len();
        let cohort = filter_cohort(all, self.config.cohort.min_visits, self.config.cohort.require_type);
        write_jsonl(&self.path("timelines.jsonl"), &cohort)?;
        let path = self.path("rejects.csv");
        let mut w = csv::Writer::from_writer(crate::io::create(&path)?);
        w.write_record(["row_id", "reason"])?;
        for r in &out.rejects {
            w.write_record([r.row_id.to_string(), r.reason.clone()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(format!(
            "{} of {} patients in cohort, {} visits, {} rejected rows",
            cohort.len(),
            patients,
            cohort.iter().map(PatientTimeline::len).sum::<usize>(),
            out.rejects.len()
        ))
    }

    fn timelines(&self) -> Result<Vec<PatientTimeline>> {
        read_jsonl(&self.path("timelines.jsonl"))
    }

    fn preprocess(&self) -> Result<String> {
        let catalog = match &self.config.paths.header_catalog {
            Some(p) => HeaderCatalog::load(p)?,
            None => HeaderCatalog::default_catalog(),
        };
        let timelines = self.timelines()?;
        let visits: Vec<&VisitRecord> = timelines.iter().flat_map(|t| &t.visits).collect();
        let notes: Vec<CleanNote> = visits.par_iter().flat_map_iter(|v| preprocess_visit(v, &catalog)).collect();
        write_jsonl(&self.path("clean_notes.jsonl"), &notes)?;
        Ok(format!("{} notes cleaned", notes.len()))
    }

    fn chunk(&self) -> Result<String> {
        let notes: Vec<CleanNote> = read_jsonl(&self.path("clean_notes.jsonl"))?;
        let mut groups: Vec<(VisitKey, Vec<CleanNote>)> = Vec::new();
        for n in notes {
            let key = VisitKey { subject_id: n.subject_id, hadm_id: n.hadm_id };
            match groups.last_mut() {
                Some((k, g)) if *k == key => g.push(n),
                _ => groups.push((key, vec![n])),
            }
        }
        let params = self.config.chunking;
        let per_visit: Vec<Vec<Chunk>> = groups.par_iter().map(|(_, g)| chunk_visit(g, params)).collect::<Result<_>>()?;
        let chunks: Vec<Chunk> = per_visit.into_iter().flatten().collect();
        write_jsonl(&self.path("chunks.jsonl"), &chunks)?;
        Ok(format!("{} chunks from {} visits", chunks.len(), groups.len()))
    }

    fn index(&self) -> Result<String> {
        let chunks: Vec<Chunk> = read_jsonl(&self.path("chunks.jsonl"))?;
        let provider = self.config.retrieval_embedder();
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embed_texts(provider.as_ref(), &texts, &self.config.retry())?;
        let mut index = VectorIndex::new(provider.dimension(), provider.id());
        index.add(&chunks, &vectors)?;
        let dir = self.path("index");
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        index.save(&dir)?;
        Ok(format!("{} vectors of dimension {} ({})", index.len(), index.dimension(), index.provider_id()))
    }

    fn generate(&self) -> Result<String> {
        let cfg = &self.config;
        let index = VectorIndex::load(&self.path("index"))?;
        let embedder = cfg.retrieval_embedder();
        if index.provider_id() != embedder.id() {
            return Err(Error::ProviderMismatch {
                expected: index.provider_id().to_string(),
                actual: embedder.id().to_string(),
            });
        }
        let queries = match &cfg.paths.retrieval_queries {
            Some(p) => load_queries(p)?,
            None => default_queries(),
        };
        let retry = cfg.retry();
        let prepared = PreparedQueries::new(embedder.as_ref(), queries, &retry)?;
        let provider = cfg.generator();
        let cache = if provider.deterministic() && cfg.providers.generate.offline {
            None
        } else {
            Some(ResponseCache::open(&self.path("cache"))?)
        };
        let ctx = GenerationContext {
            provider: provider.as_ref(),
            index: &index,
            queries: &prepared,
            retrieval: &cfg.retrieval,
            cache: cache.as_ref(),
            retry,
        };
        let timelines = self.timelines()?;
        let runs: Vec<_> = timelines.par_iter().map(|t| run_patient(&ctx, t)).collect::<Result<_>>()?;
        let mut notes: Vec<GeneratedNote> = Vec::new();
        let mut failures: Vec<GenerationFailure> = Vec::new();
        for r in runs {
            notes.extend(r.notes);
            failures.extend(r.failures);
        }
        write_jsonl(&self.path("generated.jsonl"), &notes)?;
        write_jsonl(&self.path("generation_failures.jsonl"), &failures)?;
        Ok(format!("{} notes generated, {} failures", notes.len(), failures.len()))
    }

    fn evaluate(&self) -> Result<String> {
        let timelines = self.timelines()?;
        let gold: BTreeMap<VisitKey, String> = timelines
            .iter()
            .flat_map(|t| &t.visits)
            .filter(|v| v.has(NoteType::ProgressNotes))
            .map(|v| (v.key(), clean_generic(v.gold_note())))
            .filter(|(_, g)| !g.is_empty())
            .collect();
        let notes: Vec<GeneratedNote> = read_jsonl(&self.path("generated.jsonl"))?;
        let pairs: Vec<(&GeneratedNote, &str)> = notes.iter().filter_map(|n| gold.get(&n.key).map(|g| (n, g.as_str()))).collect();
        let texts: Vec<String> = pairs.iter().map(|(n, _)| n.text()).collect();
        let all: Vec<&str> = texts.iter().map(String::as_str).chain(pairs.iter().map(|(_, g)| *g)).collect();
        let provider = self.config.evaluation_embedder();
        let vectors = embed_unique(provider.as_ref(), &all, &self.config.retry())?;
        let scores: Vec<NotePairScores> = pairs.par_iter().map(|(n, g)| score_pair(n, g, &vectors)).collect();
        let temporal = temporal_from_vectors(&sequences_by_patient(pairs.iter().copied()), &vectors);
        write_json(&self.path("scores.json"), &scores)?;
        write_pair_scores_csv(&self.path("pair_scores.csv"), &scores)?;
        write_json(&self.path("temporal.json"), &temporal)?;
        Ok(format!(
            "{} visit pairs scored, {} patients in temporal analysis ({} excluded)",
            scores.len(),
            temporal.patients.len(),
            temporal.excluded.len()
        ))
    }

    fn report(&self) -> Result<String> {
        let scores: Vec<NotePairScores> = read_json(&self.path("scores.json"))?;
        let temporal: TemporalReport = read_json(&self.path("temporal.json"))?;
        let report = aggregate_report(&scores, &temporal)?;
        write_json(&self.path("report.json"), &report)?;
        let table = report.render_table();
        write_text(&self.path("report.txt"), &table)?;
        Ok(format!("report over {} pairs", report.pairs))
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Csv(_) | Error::Json(_) | Error::Parse { .. } => "parse",
        Error::Config { .. } => "config",
        Error::MissingStage { .. } => "missing_stage",
        Error::Provider(_) | Error::Generation { .. } => "provider",
        Error::InvalidRules(_) | Error::UnknownNoteType(_) => "taxonomy",
        Error::EmptyReport | Error::EmptyGold => "evaluation",
        _ => "pipeline",
    }
}
