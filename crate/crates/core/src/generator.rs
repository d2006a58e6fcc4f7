//! Prompt construction, generation providers and SOAP parsing.
//!
//! The first visit of a patient is prompted in enrichment mode (current
//! evidence only); every later visit adds a summary of the previous generated
//! note (temporal mode).

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{PatientTimeline, VisitKey};
use crate::error::{Error, ProviderError, Result};
use crate::index::VectorIndex;
use crate::provider::{JsonClient, RetryPolicy};
use crate::retriever::{retrieve_for_visit, EvidenceBundle, PreparedQueries, RetrievalParams, SoapFacet};
use crate::taxonomy::NoteType;

pub const NO_PRIOR_SUMMARY: &str = "No prior note content available.";
pub const SUMMARY_CAP: usize = 800;
pub const FOLLOW_UP_CUES: [&str; 4] = ["follow up", "follow-up", "continue", "monitor"];
pub const DEFAULT_MAX_PROMPT_CHARS: usize = 24_000;

pub const INSTRUCTIONS: &str = "You are writing a daily physician progress note for the visit described below. \
Use only the evidence provided. Write exactly four sections, each starting on its own line with its header: \
Subjective:, Objective:, Assessment:, Plan:.";

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Enrichment,
    Temporal,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Enrichment => "enrichment",
            PromptMode::Temporal => "temporal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBlock {
    pub note_type: NoteType,
    pub chartdate: NaiveDate,
    pub section: String,
    pub facet: SoapFacet,
    pub score: f64,
    pub text: String,
}

impl EvidenceBlock {
    fn render(&self) -> String {
        format!("[{} | {} | {}]\n{}", self.note_type, self.chartdate, self.section, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub key: VisitKey,
    pub visit_index: usize,
    /// Chronological evidence that survived the length budget.
    pub evidence: Vec<EvidenceBlock>,
    pub previous_summary: Option<String>,
    pub instructions: String,
    /// Evidence items removed to respect the length budget.
    pub dropped_evidence: usize,
}

const EVIDENCE_HEADER: &str = "Evidence:";
const NO_EVIDENCE: &str = "(no evidence was retrieved for this visit)";

impl PromptSpec {
    pub fn render(&self) -> String {
        let mut parts = vec![self.instructions.clone()];
        if let Some(s) = &self.previous_summary {
            parts.push(format!("Prior visit summary:\n{s}"));
        }
        parts.push(EVIDENCE_HEADER.to_string());
        if self.evidence.is_empty() {
            parts.push(NO_EVIDENCE.to_string());
        }
        parts.extend(self.evidence.iter().map(EvidenceBlock::render));
        parts.join("\n\n")
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.render())
    }
}

/// Builds the prompt for one visit. Evidence that does not fit `max_chars`
/// is dropped lowest score first (oldest first among equal scores).
pub fn build_prompt(bundle: &EvidenceBundle, previous_summary: Option<&str>, max_chars: usize) -> Result<PromptSpec> {
    let visit_index = bundle.visit_index;
    let mode = match (visit_index, previous_summary) {
        (0, None) => PromptMode::Enrichment,
        (0, Some(_)) => return Err(Error::UnexpectedSummary),
        (_, None) => return Err(Error::MissingSummary { visit_index }),
        (_, Some(_)) => PromptMode::Temporal,
    };
    let blocks: Vec<EvidenceBlock> = bundle
        .items
        .iter()
        .map(|i| EvidenceBlock {
            note_type: i.chunk.metadata.note_type,
            chartdate: i.chunk.metadata.chartdate,
            section: i.chunk.metadata.section.clone(),
            facet: i.facet,
            score: i.score,
            text: i.chunk.text.clone(),
        })
        .collect();
    let mut spec = PromptSpec {
        mode,
        key: bundle.key,
        visit_index,
        evidence: Vec::new(),
        previous_summary: previous_summary.map(str::to_string),
        instructions: INSTRUCTIONS.to_string(),
        dropped_evidence: 0,
    };
    let base = spec.render().chars().count();
    if base > max_chars {
        return Err(Error::PromptTooLong { budget: max_chars, required: base });
    }
    // Each block adds its own length plus a "\n\n" separator; the placeholder
    // line disappears once any block is present.
    let placeholder = NO_EVIDENCE.chars().count() + 2;
    let lens: Vec<usize> = blocks.iter().map(|b| b.render().chars().count() + 2).collect();
    let mut total = base - placeholder + lens.iter().sum::<usize>();
    let mut drop_order: Vec<usize> = (0..blocks.len()).collect();
    drop_order.sort_by(|&a, &b| {
        blocks[a]
            .score
            .total_cmp(&blocks[b].score)
            .then(blocks[a].chartdate.cmp(&blocks[b].chartdate))
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; blocks.len()];
    let mut kept = blocks.len();
    for &i in &drop_order {
        if total <= max_chars && kept > 0 {
            break;
        }
        if kept == 0 {
            break;
        }
        keep[i] = false;
        kept -= 1;
        total -= lens[i];
    }
    spec.dropped_evidence = blocks.len() - kept;
    spec.evidence = blocks.into_iter().zip(keep).filter_map(|(b, k)| k.then_some(b)).collect();
    debug_assert!(spec.render().chars().count() <= max_chars);
    Ok(spec)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoapSections {
    pub subjective: String,
    pub objective: String,
    pub assessment: String,
    pub plan: String,
}

impl SoapSections {
    pub fn get(&self, facet: SoapFacet) -> &str {
        match facet {
            SoapFacet::Subjective => &self.subjective,
            SoapFacet::Objective => &self.objective,
            SoapFacet::Assessment => &self.assessment,
            SoapFacet::Plan => &self.plan,
        }
    }

    fn get_mut(&mut self, facet: SoapFacet) -> &mut String {
        match facet {
            SoapFacet::Subjective => &mut self.subjective,
            SoapFacet::Objective => &mut self.objective,
            SoapFacet::Assessment => &mut self.assessment,
            SoapFacet::Plan => &mut self.plan,
        }
    }

    pub fn render(&self) -> String {
        SoapFacet::ALL
            .iter()
            .map(|&f| format!("{}:\n{}", f, self.get(f)))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSoap {
    pub sections: SoapSections,
    pub warnings: Vec<String>,
}

static SOAP_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[\s#*_]*(assessment\s*(?:and|&)\s*plan|a/p|subjective|objective|assessment|plan|s|o|a|p)[\s*_]*(:)?[\s*_]*(.*)$")
        .expect("soap header regex")
});

fn soap_header(line: &str) -> Option<(SoapFacet, &str)> {
    let c = SOAP_HEADER.captures(line)?;
    let name = c.get(1)?.as_str().to_lowercase();
    let colon = c.get(2).is_some();
    let rest = c.get(3).map_or("", |m| m.as_str());
    let single = name.len() == 1;
    if (single && !colon) || (!colon && !rest.is_empty()) {
        return None;
    }
    let facet = match name.as_str() {
        "subjective" | "s" => SoapFacet::Subjective,
        "objective" | "o" => SoapFacet::Objective,
        "plan" | "p" => SoapFacet::Plan,
        _ => SoapFacet::Assessment,
    };
    Some((facet, rest.trim()))
}

/// Splits provider text on line-initial SOAP headers (full words with or
/// without a colon, single letters with one). Text before the first header is
/// discarded with a warning.
pub fn parse_soap(text: &str) -> ParsedSoap {
    let mut sections = SoapSections::default();
    let mut warnings = Vec::new();
    let mut current: Option<SoapFacet> = None;
    let mut preamble = String::new();
    let mut seen = [false; 4];
    for line in text.lines() {
        if let Some((facet, rest)) = soap_header(line) {
            current = Some(facet);
            seen[facet as usize] = true;
            let body = sections.get_mut(facet);
            if !body.is_empty() && !rest.is_empty() {
                body.push('\n');
            }
            body.push_str(rest);
            continue;
        }
        match current {
            Some(f) => {
                let body = sections.get_mut(f);
                body.push('\n');
                body.push_str(line);
            }
            None => {
                preamble.push_str(line);
                preamble.push('\n');
            }
        }
    }
    for f in SoapFacet::ALL {
        let body = sections.get_mut(f);
        *body = body.trim().to_string();
    }
    if current.is_none() {
        warnings.push("no SOAP headers found".to_string());
    } else if !preamble.trim().is_empty() {
        warnings.push(format!("discarded {} characters before the first header", preamble.trim().chars().count()));
    }
    if current.is_some() {
        for f in SoapFacet::ALL.into_iter().filter(|f| !seen[*f as usize]) {
            warnings.push(format!("missing {f} section"));
        }
    }
    ParsedSoap { sections, warnings }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLineage {
    pub mode: PromptMode,
    pub prompt_digest: String,
    /// Digest of the previous-note summary carried by a temporal prompt.
    pub previous_summary_digest: Option<String>,
    /// Visit whose generated note produced that summary; `None` for the
    /// placeholder summary.
    pub predecessor_visit_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedNote {
    pub key: VisitKey,
    pub visit_index: usize,
    pub chartdate: NaiveDate,
    #[serde(flatten)]
    pub sections: SoapSections,
    pub raw_output: String,
    pub parse_warnings: Vec<String>,
    pub lineage: PromptLineage,
    pub provider_id: String,
}

impl GeneratedNote {
    pub fn text(&self) -> String {
        self.sections.render()
    }
}

/// Sentences split at `.`, `!` or `?` followed by whitespace, and at line breaks.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' {
            out.push(std::mem::take(&mut cur));
            continue;
        }
        cur.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            out.push(std::mem::take(&mut cur));
        }
    }
    out.push(cur);
    out.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

/// Extractive summary of a generated note for the next visit's prompt.
pub fn summarize_previous_note(sections: &SoapSections) -> String {
    let assessment = split_sentences(&sections.assessment);
    let plan = split_sentences(&sections.plan);
    if assessment.is_empty() && plan.is_empty() {
        return NO_PRIOR_SUMMARY.to_string();
    }
    let mut picked: Vec<&str> = assessment.iter().take(2).map(String::as_str).collect();
    picked.extend(plan.iter().take(2).map(String::as_str));
    picked.extend(plan.iter().skip(2).filter(|s| {
        let l = s.to_lowercase();
        FOLLOW_UP_CUES.iter().any(|c| l.contains(c))
    }).map(String::as_str));
    let mut summary = String::new();
    for s in picked {
        let extra = usize::from(!summary.is_empty()) + s.chars().count();
        if summary.chars().count() + extra > SUMMARY_CAP {
            if summary.is_empty() {
                summary = s.chars().take(SUMMARY_CAP).collect();
            }
            break;
        }
        if !summary.is_empty() {
            summary.push(' ');
        }
        summary.push_str(s);
    }
    summary
}

pub trait GenerationProvider: Send + Sync {
    fn id(&self) -> &str;
    fn max_prompt_chars(&self) -> usize;
    fn deterministic(&self) -> bool;
    fn generate(&self, prompt: &PromptSpec) -> Result<String, ProviderError>;
}

/// Offline provider: a templated SOAP note built from the first sentences of
/// the facet-tagged evidence.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    pub max_prompt_chars: usize,
    /// Evidence sentences quoted per section.
    pub sentences_per_facet: usize,
}

impl Default for MockGenerator {
    fn default() -> Self {
        MockGenerator {
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
            sentences_per_facet: 2,
        }
    }
}

fn fallback_sentence(f: SoapFacet) -> &'static str {
    match f {
        SoapFacet::Subjective => "No new complaints were documented.",
        SoapFacet::Objective => "No objective findings were retrieved for this visit.",
        SoapFacet::Assessment => "Clinical status remains under evaluation.",
        SoapFacet::Plan => "Continue current management and monitor.",
    }
}

impl GenerationProvider for MockGenerator {
    fn id(&self) -> &str {
        "mock"
    }

    fn max_prompt_chars(&self) -> usize {
        self.max_prompt_chars
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn generate(&self, prompt: &PromptSpec) -> Result<String, ProviderError> {
        let mut out = Vec::new();
        for f in SoapFacet::ALL {
            let mut sentences: Vec<String> = prompt
                .evidence
                .iter()
                .filter(|b| b.facet == f)
                .filter_map(|b| split_sentences(&b.text).into_iter().next())
                .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
                .take(self.sentences_per_facet)
                .collect();
            if f == SoapFacet::Assessment {
                if let Some(first) = prompt.previous_summary.as_deref().and_then(|s| split_sentences(s).into_iter().next()) {
                    sentences.insert(0, format!("Interval history: {first}"));
                }
            }
            if sentences.is_empty() {
                sentences.push(fallback_sentence(f).to_string());
            }
            out.push(format!("{}: {}", f, sentences.join(" ")));
        }
        Ok(out.join("\n"))
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Remote provider speaking `POST /generate {"prompt", "max_tokens", "temperature"}` → `{"text"}`.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    id: String,
    client: JsonClient,
    pub max_prompt_chars: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl HttpGenerator {
    pub fn new(url: &str, api_key: Option<String>, max_prompt_chars: usize, max_tokens: u32, temperature: f64, timeout: Duration) -> Self {
        let client = JsonClient::new(url, api_key, timeout);
        HttpGenerator {
            id: format!("http-generate@{}", client.base_url()),
            client,
            max_prompt_chars,
            max_tokens,
            temperature,
        }
    }
}

impl GenerationProvider for HttpGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn max_prompt_chars(&self) -> usize {
        self.max_prompt_chars
    }

    fn deterministic(&self) -> bool {
        self.temperature == 0.0
    }

    fn generate(&self, prompt: &PromptSpec) -> Result<String, ProviderError> {
        let rendered = prompt.render();
        let resp: GenerateResponse = self.client.post(
            "/generate",
            &GenerateRequest {
                prompt: &rendered,
                max_tokens: self.max_tokens,
                temperature: self.temperature,
            },
        )?;
        Ok(resp.text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedResponse {
    provider_id: String,
    prompt_digest: String,
    text: String,
}

/// Content-addressed response store: one JSON file per (provider, prompt digest).
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    pub fn key(provider_id: &str, prompt_digest: &str) -> String {
        sha256_hex(&format!("{provider_id}\n{prompt_digest}"))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, provider_id: &str, prompt_digest: &str) -> Option<String> {
        let text = std::fs::read_to_string(self.path(&Self::key(provider_id, prompt_digest))).ok()?;
        let cached: CachedResponse = serde_json::from_str(&text).ok()?;
        (cached.provider_id == provider_id && cached.prompt_digest == prompt_digest).then_some(cached.text)
    }

    pub fn put(&self, provider_id: &str, prompt_digest: &str, text: &str) -> Result<()> {
        let key = Self::key(provider_id, prompt_digest);
        let path = self.path(&key);
        let body = serde_json::to_string(&CachedResponse {
            provider_id: provider_id.to_string(),
            prompt_digest: prompt_digest.to_string(),
            text: text.to_string(),
        })?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let tmp = self.dir.join(format!("{key}.tmp"));
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Runs the provider (or replays the cache) and parses the result.
pub fn generate_note(
    provider: &dyn GenerationProvider,
    prompt: &PromptSpec,
    chartdate: NaiveDate,
    predecessor_visit_index: Option<usize>,
    cache: Option<&ResponseCache>,
    retry: &RetryPolicy,
) -> Result<GeneratedNote> {
    let rendered = prompt.render();
    let length = rendered.chars().count();
    if length > provider.max_prompt_chars() {
        return Err(Error::PromptTooLong { budget: provider.max_prompt_chars(), required: length });
    }
    let digest = sha256_hex(&rendered);
    let cached = cache.and_then(|c| c.get(provider.id(), &digest));
    let raw = match cached {
        Some(text) => text,
        None => {
            let text = retry
                .run(provider.id(), || provider.generate(prompt))
                .map_err(|source| Error::Generation { key: prompt.key, source })?;
            if let Some(c) = cache {
                c.put(provider.id(), &digest, &text)?;
            }
            text
        }
    };
    let parsed = parse_soap(&raw);
    Ok(GeneratedNote {
        key: prompt.key,
        visit_index: prompt.visit_index,
        chartdate,
        sections: parsed.sections,
        raw_output: raw,
        parse_warnings: parsed.warnings,
        lineage: PromptLineage {
            mode: prompt.mode,
            prompt_digest: digest,
            previous_summary_digest: prompt.previous_summary.as_deref().map(sha256_hex),
            predecessor_visit_index,
        },
        provider_id: provider.id().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub key: VisitKey,
    pub visit_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientRun {
    pub notes: Vec<GeneratedNote>,
    pub failures: Vec<GenerationFailure>,
}

pub struct GenerationContext<'a> {
    pub provider: &'a dyn GenerationProvider,
    pub index: &'a VectorIndex,
    pub queries: &'a PreparedQueries,
    pub retrieval: &'a RetrievalParams,
    pub cache: Option<&'a ResponseCache>,
    pub retry: RetryPolicy,
}

/// Generates one note per visit in order. A failed visit is recorded and the
/// next visit reuses the summary of the last successful note.
pub fn run_patient(ctx: &GenerationContext<'_>, timeline: &PatientTimeline) -> Result<PatientRun> {
    let mut run = PatientRun::default();
    let mut last: Option<(usize, String)> = None;
    for (i, visit) in timeline.visits.iter().enumerate() {
        let bundle = retrieve_for_visit(ctx.index, timeline, i, ctx.queries, ctx.retrieval)?;
        let (summary, predecessor) = match (i, &last) {
            (0, _) => (None, None),
            (_, Some((p, s))) => (Some(s.as_str()), Some(*p)),
            (_, None) => (Some(NO_PRIOR_SUMMARY), None),
        };
        let prompt = build_prompt(&bundle, summary, ctx.provider.max_prompt_chars())?;
        match generate_note(ctx.provider, &prompt, visit.chartdate, predecessor, ctx.cache, &ctx.retry) {
            Ok(note) => {
                last = Some((i, summarize_previous_note(&note.sections)));
                run.notes.push(note);
            }
            Err(Error::Generation { key, source }) => {
                log::warn!("generation failed for visit {key} (index {i}): {source}");
                run.failures.push(GenerationFailure {
                    key,
                    visit_index: i,
                    error: source.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::{Chunk, ChunkMetadata};
    use crate::retriever::{EvidenceItem, RetrievalMode};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn item(text: &str, score: f64, day: u32, facet: SoapFacet) -> EvidenceItem {
        EvidenceItem {
            chunk: Chunk {
                chunk_id: format!("{day}-{score}"),
                text: text.into(),
                metadata: ChunkMetadata {
                    subject_id: 1,
                    hadm_id: 10,
                    chartdate: NaiveDate::from_ymd_opt(2130, 1, day).unwrap(),
                    charttime: None,
                    note_type: NoteType::RadiologyReports,
                    section: "Findings".into(),
                    section_index: 0,
                    char_start: 0,
                    char_end: text.chars().count(),
                    seq_index: 0,
                },
            },
            facet,
            score,
            priority: score,
            mode: RetrievalMode::Global,
        }
    }

    fn bundle(visit_index: usize, items: Vec<EvidenceItem>) -> EvidenceBundle {
        EvidenceBundle {
            key: VisitKey { subject_id: 1, hadm_id: 10 },
            visit_index,
            items,
        }
    }

    fn sections(a: &str, p: &str) -> SoapSections {
        SoapSections {
            assessment: a.into(),
            plan: p.into(),
            ..Default::default()
        }
    }

    #[test]
    fn mode_follows_visit_index() {
        let p = build_prompt(&bundle(0, vec![]), None, 10_000).unwrap();
        assert_eq!(p.mode, PromptMode::Enrichment);
        assert!(!p.render().contains("Prior visit summary"));
        let p = build_prompt(&bundle(3, vec![item("x.", 0.5, 1, SoapFacet::Plan)]), Some("prior."), 10_000).unwrap();
        assert_eq!(p.mode, PromptMode::Temporal);
        let r = p.render();
        assert!(r.find("Prior visit summary").unwrap() < r.find("[radiology_reports | 2130-01-01 | Findings]").unwrap());
        assert!(matches!(build_prompt(&bundle(2, vec![]), None, 10_000), Err(Error::MissingSummary { visit_index: 2 })));
        assert!(matches!(build_prompt(&bundle(0, vec![]), Some("x"), 10_000), Err(Error::UnexpectedSummary)));
    }

    #[test]
    fn truncation_drops_lowest_scores_first() {
        let items: Vec<EvidenceItem> = [0.9, 0.1, 0.5, 0.3, 0.7]
            .iter()
            .enumerate()
            .map(|(i, &s)| item(&"e".repeat(100), s, 1 + i as u32, SoapFacet::Objective))
            .collect();
        let full = build_prompt(&bundle(1, items.clone()), Some("summary."), 100_000).unwrap();
        let full_len = full.render().chars().count();
        let block = 100 + "[radiology_reports | 2130-01-01 | Findings]\n".len() + 2;
        // Oracle: remove items in ascending score order until the budget holds.
        let budget = full_len - 2 * block - 5;
        let p = build_prompt(&bundle(1, items), Some("summary."), budget).unwrap();
        assert!(p.render().chars().count() <= budget);
        let scores: Vec<f64> = p.evidence.iter().map(|b| b.score).collect();
        assert_eq!(scores, vec![0.9, 0.7]);
        assert_eq!(p.dropped_evidence, 3);
        assert_eq!(p.previous_summary.as_deref(), Some("summary."));
    }

    #[test]
    fn prompt_too_long_without_evidence() {
        assert!(matches!(build_prompt(&bundle(0, vec![]), None, 10), Err(Error::PromptTooLong { budget: 10, .. })));
    }

    #[test]
    fn summary_rules() {
        assert_eq!(summarize_previous_note(&sections("Stable CHF.", "Diurese.")), "Stable CHF. Diurese.");
        assert_eq!(summarize_previous_note(&SoapSections::default()), NO_PRIOR_SUMMARY);
        let plan: Vec<String> = (1..=10)
            .map(|i| if i == 7 { "continue lisinopril.".to_string() } else { format!("Step {i}.") })
            .collect();
        let s = summarize_previous_note(&sections("A one. A two. A three.", &plan.join(" ")));
        assert_eq!(s, "A one. A two. Step 1. Step 2. continue lisinopril.");
        let long = "word ".repeat(400);
        assert_eq!(summarize_previous_note(&sections(&long, "")).chars().count(), SUMMARY_CAP);
    }

    #[test]
    fn parse_full_and_short_headers() {
        let a = parse_soap("Subjective: a\nObjective: b\nAssessment: c\nPlan: d");
        let b = parse_soap("S: a\nO: b\nA: c\nP: d");
        assert_eq!(a, b);
        assert_eq!(a.sections, SoapSections { subjective: "a".into(), objective: "b".into(), assessment: "c".into(), plan: "d".into() });
        assert!(a.warnings.is_empty());
        let c = parse_soap("**SUBJECTIVE**\nfeels well\n## Plan\nhome\nPlan to discharge\n");
        assert_eq!(c.sections.subjective, "feels well");
        assert_eq!(c.sections.plan, "home\nPlan to discharge");
    }

    #[test]
    fn headerless_text_warns() {
        let p = parse_soap("The patient is doing well overall.");
        assert_eq!(p.sections, SoapSections::default());
        assert_eq!(p.warnings, vec!["no SOAP headers found".to_string()]);
        let p = parse_soap("Sure, here is the note.\nS: ok\nP: go");
        assert_eq!(p.sections.subjective, "ok");
        assert!(p.warnings.iter().any(|w| w.starts_with("discarded")));
        assert!(p.warnings.iter().any(|w| w == "missing Objective section"));
    }

    #[test]
    fn mock_fills_every_section() {
        let b = bundle(0, vec![item("Clear lungs. No effusion.", 0.4, 1, SoapFacet::Objective)]);
        let p = build_prompt(&b, None, 10_000).unwrap();
        let note = generate_note(&MockGenerator::default(), &p, NaiveDate::from_ymd_opt(2130, 1, 1).unwrap(), None, None, &RetryPolicy::default()).unwrap();
        assert_eq!(note.sections.objective, "Clear lungs.");
        for f in SoapFacet::ALL {
            assert!(!note.sections.get(f).is_empty());
        }
        assert!(note.parse_warnings.is_empty());
    }

    struct Counting(AtomicUsize);

    impl GenerationProvider for Counting {
        fn id(&self) -> &str {
            "counting"
        }
        fn max_prompt_chars(&self) -> usize {
            100_000
        }
        fn deterministic(&self) -> bool {
            false
        }
        fn generate(&self, _: &PromptSpec) -> Result<String, ProviderError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("S: call {n}\nO: x\nA: y\nP: z"))
        }
    }

    #[test]
    fn cache_replays_identical_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let p = build_prompt(&bundle(0, vec![]), None, 10_000).unwrap();
        let provider = Counting(AtomicUsize::new(0));
        let d = NaiveDate::from_ymd_opt(2130, 1, 1).unwrap();
        let a = generate_note(&provider, &p, d, None, Some(&cache), &RetryPolicy::default()).unwrap();
        let b = generate_note(&provider, &p, d, None, Some(&cache), &RetryPolicy::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(provider.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("BP 120/80. HR 3.5 ok! Next\nline"), vec!["BP 120/80.", "HR 3.5 ok!", "Next", "line"]);
        assert!(split_sentences("  ").is_empty());
    }
}
