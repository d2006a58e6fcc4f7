//! Per-visit evidence retrieval: SOAP-facet global queries over the patient's
//! recent visits plus note-type-local queries over the current visit.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chunker::Chunk;
use crate::corpus::{PatientTimeline, VisitKey};
use crate::embedding::{cosine, embed_texts, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::index::VectorIndex;
use crate::provider::RetryPolicy;
use crate::taxonomy::NoteType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SoapFacet {
    Subjective,
    Objective,
    Assessment,
    Plan,
}

impl SoapFacet {
    pub const ALL: [SoapFacet; 4] = [SoapFacet::Subjective, SoapFacet::Objective, SoapFacet::Assessment, SoapFacet::Plan];

    pub fn as_str(self) -> &'static str {
        match self {
            SoapFacet::Subjective => "Subjective",
            SoapFacet::Objective => "Objective",
            SoapFacet::Assessment => "Assessment",
            SoapFacet::Plan => "Plan",
        }
    }
}

impl fmt::Display for SoapFacet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SoapFacet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SoapFacet::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config("retrieval.queries", format!("unknown SOAP facet '{s}'")))
    }
}

/// The facet a note type's local evidence most naturally supports.
pub fn facet_for(t: NoteType) -> SoapFacet {
    use NoteType::*;
    match t {
        NursingOtherNotes | NursingShiftNotes | NutritionNotes | MiscNotes => SoapFacet::Subjective,
        RadiologyReports | EcgReports | EchoReports | ProcedureNotes | EventNotes => SoapFacet::Objective,
        AdmissionNotes | ConsultNotes | ProgressNotes | DischargeSummary | TransferNotes => SoapFacet::Assessment,
        DischargePlanning | PharmacyNotes => SoapFacet::Plan,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub facet: SoapFacet,
    pub text: String,
    pub mode: RetrievalMode,
    pub target_note_type: Option<NoteType>,
    pub k: usize,
}

impl RetrievalQuery {
    pub fn global(facet: SoapFacet, text: &str, k: usize) -> Self {
        RetrievalQuery {
            facet,
            text: text.to_string(),
            mode: RetrievalMode::Global,
            target_note_type: None,
            k,
        }
    }

    pub fn local(facet: SoapFacet, text: &str, target: NoteType, k: usize) -> Self {
        RetrievalQuery {
            facet,
            text: text.to_string(),
            mode: RetrievalMode::Local,
            target_note_type: Some(target),
            k,
        }
    }
}

pub fn default_queries() -> Vec<RetrievalQuery> {
    let k = RetrievalParams::default().k_global;
    vec![
        RetrievalQuery::global(SoapFacet::Subjective, "What symptoms and complaints did the patient report?", k),
        RetrievalQuery::global(SoapFacet::Objective, "What were the vital signs, examination and test findings?", k),
        RetrievalQuery::global(SoapFacet::Assessment, "What diagnoses and clinical assessments were made?", k),
        RetrievalQuery::global(SoapFacet::Plan, "What treatments were provided?", k),
    ]
}

/// Reads `facet <TAB> query` lines; facets not mentioned keep their default text.
pub fn load_queries(path: &Path) -> Result<Vec<RetrievalQuery>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_queries(&text, &path.display().to_string())
}

pub fn parse_queries(text: &str, file: &str) -> Result<Vec<RetrievalQuery>> {
    let mut queries = default_queries();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            file: file.to_string(),
            line: i + 1,
            message,
        };
        let (facet, query) = line.split_once('\t').ok_or_else(|| err("expected 'facet<TAB>query'".into()))?;
        let facet: SoapFacet = facet.parse().map_err(|e: Error| err(e.to_string()))?;
        let query = query.trim();
        if query.is_empty() {
            return Err(err(format!("empty query for {facet}")));
        }
        for q in queries.iter_mut().filter(|q| q.facet == facet) {
            q.text = query.to_string();
        }
    }
    Ok(queries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalParams {
    pub k_global: usize,
    pub k_local: usize,
    /// Number of prior visits, besides the current one, that global queries may reach.
    pub recency_horizon: usize,
    /// Added to the priority of Objective evidence from allowlisted sections.
    pub objective_section_bonus: f64,
    pub objective_sections: Vec<String>,
    /// Optional semantic near-duplicate removal (cosine at or above the threshold).
    pub near_duplicate_threshold: Option<f64>,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            k_global: 4,
            k_local: 2,
            recency_horizon: 3,
            objective_section_bonus: 0.05,
            objective_sections: [
                "Findings",
                "Impression",
                "Physical Exam",
                "Vital Signs",
                "Objective",
                "Labs",
                "Interpretation",
                "Measurements",
            ]
            .map(String::from)
            .to_vec(),
            near_duplicate_threshold: None,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_global == 0 {
            return Err(Error::config("retrieval.k_global", "must be at least 1"));
        }
        if self.k_local == 0 {
            return Err(Error::config("retrieval.k_local", "must be at least 1"));
        }
        if !self.objective_section_bonus.is_finite() || !(0.0..=1.0).contains(&self.objective_section_bonus) {
            return Err(Error::config("retrieval.objective_section_bonus", "must lie in [0, 1]"));
        }
        if let Some(t) = self.near_duplicate_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::config("retrieval.near_duplicate_threshold", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Queries with their embeddings, computed once per run.
#[derive(Debug, Clone)]
pub struct PreparedQueries {
    pub queries: Vec<RetrievalQuery>,
    vectors: HashMap<String, Vec<f32>>,
}

impl PreparedQueries {
    pub fn new(provider: &dyn EmbeddingProvider, queries: Vec<RetrievalQuery>, retry: &RetryPolicy) -> Result<Self> {
        let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let vectors = embed_texts(provider, &texts, retry)?;
        Ok(PreparedQueries {
            queries,
            vectors: texts.into_iter().zip(vectors).collect(),
        })
    }

    pub fn vector(&self, text: &str) -> Option<&[f32]> {
        self.vectors.get(text).map(Vec::as_slice)
    }

    fn facet_query(&self, facet: SoapFacet) -> Option<&RetrievalQuery> {
        self.queries.iter().find(|q| q.facet == facet && q.mode == RetrievalMode::Global)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub chunk: Chunk,
    pub facet: SoapFacet,
    /// Cosine similarity to the query that retrieved the chunk.
    pub score: f64,
    /// Score plus any section-relevance bonus.
    pub priority: f64,
    pub mode: RetrievalMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub key: VisitKey,
    pub visit_index: usize,
    pub items: Vec<EvidenceItem>,
}

fn normalized_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn chrono_key(i: &EvidenceItem) -> (chrono::NaiveDate, u64, usize, &str) {
    let m = &i.chunk.metadata;
    (m.chartdate, m.hadm_id, m.seq_index, i.chunk.chunk_id.as_str())
}

/// Drops items whose normalized text repeats a higher-scored item, then sorts
/// chronologically by (chartdate, visit, seq_index).
pub fn dedup_and_order(items: Vec<EvidenceItem>) -> Vec<EvidenceItem> {
    let mut ranked = items;
    // Stable: among equal scores the earlier occurrence wins.
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut seen = BTreeSet::new();
    let mut kept: Vec<EvidenceItem> = ranked.into_iter().filter(|i| seen.insert(normalized_text(&i.chunk.text))).collect();
    kept.sort_by(|a, b| chrono_key(a).cmp(&chrono_key(b)));
    kept
}

pub fn retrieve_for_visit(
    index: &VectorIndex,
    timeline: &PatientTimeline,
    visit_index: usize,
    queries: &PreparedQueries,
    params: &RetrievalParams,
) -> Result<EvidenceBundle> {
    let visit = timeline.visits.get(visit_index).ok_or(Error::VisitOutOfRange {
        index: visit_index,
        len: timeline.len(),
    })?;
    let current = visit.hadm_id;
    let window: BTreeSet<u64> = timeline.visits[visit_index.saturating_sub(params.recency_horizon)..=visit_index]
        .iter()
        .map(|v| v.hadm_id)
        .collect();
    let subject = timeline.subject_id;
    let allow: BTreeSet<&str> = params.objective_sections.iter().map(String::as_str).collect();

    let mut items = Vec::new();
    let mut push_hits = |q: &RetrievalQuery, pred: &dyn Fn(&crate::chunker::ChunkMetadata) -> bool| -> Result<()> {
        let v = queries
            .vector(&q.text)
            .ok_or_else(|| Error::config("retrieval.queries", format!("query '{}' was not embedded", q.text)))?;
        for hit in index.query_topk_by(v, q.k, |m| m.subject_id == subject && pred(m))? {
            let chunk = index.get(&hit.chunk_id).expect("hit refers to an indexed chunk").chunk.clone();
            let bonus = if q.facet == SoapFacet::Objective && allow.contains(chunk.metadata.section.as_str()) {
                params.objective_section_bonus
            } else {
                0.0
            };
            items.push(EvidenceItem {
                chunk,
                facet: q.facet,
                score: hit.score,
                priority: hit.score + bonus,
                mode: q.mode,
            });
        }
        Ok(())
    };

    let not_target = |m: &crate::chunker::ChunkMetadata| !(m.hadm_id == current && m.note_type == NoteType::ProgressNotes);
    for q in queries.queries.iter().filter(|q| q.mode == RetrievalMode::Global) {
        let q = RetrievalQuery { k: params.k_global, ..q.clone() };
        push_hits(&q, &|m| window.contains(&m.hadm_id) && not_target(m))?;
    }
    for t in visit.present_types().filter(|&t| t != NoteType::ProgressNotes) {
        let facet = facet_for(t);
        let Some(base) = queries.facet_query(facet) else { continue };
        let q = RetrievalQuery::local(facet, &base.text, t, params.k_local);
        push_hits(&q, &|m| m.hadm_id == current && m.note_type == t)?;
    }

    let mut items = dedup_and_order(items);
    if let Some(threshold) = params.near_duplicate_threshold {
        items = drop_near_duplicates(index, items, threshold);
    }
    Ok(EvidenceBundle {
        key: visit.key(),
        visit_index,
        items,
    })
}

fn drop_near_duplicates(index: &VectorIndex, items: Vec<EvidenceItem>, threshold: f64) -> Vec<EvidenceItem> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].score.total_cmp(&items[a].score).then(a.cmp(&b)));
    let mut keep = vec![false; items.len()];
    let mut kept_vectors: Vec<&[f32]> = Vec::new();
    for i in order {
        let Some(v) = index.get(&items[i].chunk.chunk_id).map(|e| e.vector.as_slice()) else {
            keep[i] = true;
            continue;
        };
        if kept_vectors.iter().all(|k| cosine(k, v) < threshold) {
            keep[i] = true;
            kept_vectors.push(v);
        }
    }
    items.into_iter().zip(keep).filter_map(|(item, k)| k.then_some(item)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkMetadata;
    use chrono::NaiveDate;

    fn item(id: &str, text: &str, score: f64, day: u32, seq: usize) -> EvidenceItem {
        EvidenceItem {
            chunk: Chunk {
                chunk_id: id.into(),
                text: text.into(),
                metadata: ChunkMetadata {
                    subject_id: 1,
                    hadm_id: 100 + u64::from(day),
                    chartdate: NaiveDate::from_ymd_opt(2130, 1, day).unwrap(),
                    charttime: None,
                    note_type: NoteType::RadiologyReports,
                    section: "Findings".into(),
                    section_index: 0,
                    char_start: 0,
                    char_end: text.chars().count(),
                    seq_index: seq,
                },
            },
            facet: SoapFacet::Objective,
            score,
            priority: score,
            mode: RetrievalMode::Global,
        }
    }

    #[test]
    fn defaults_have_four_distinct_facets() {
        let q = default_queries();
        assert_eq!(q.len(), 4);
        let facets: BTreeSet<SoapFacet> = q.iter().map(|q| q.facet).collect();
        assert_eq!(facets.len(), 4);
        assert_eq!(q[3].text, "What treatments were provided?");
        assert!(q.iter().all(|q| q.mode == RetrievalMode::Global && q.target_note_type.is_none()));
    }

    #[test]
    fn override_file_replaces_text() {
        let q = parse_queries("# comment\nsubjective\tHow does the patient feel?\n", "x").unwrap();
        assert_eq!(q[0].text, "How does the patient feel?");
        assert_eq!(q[3].text, "What treatments were provided?");
        assert!(parse_queries("vitals\tx\n", "x").is_err());
    }

    #[test]
    fn dedup_keeps_highest_score() {
        let out = dedup_and_order(vec![item("a", "Clear  lungs.", 0.6, 2, 0), item("b", "clear lungs.", 0.8, 3, 0)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].chunk.chunk_id, "b");
        assert_eq!(out[0].score, 0.8);
        assert!(dedup_and_order(vec![]).is_empty());
    }

    #[test]
    fn ordering_is_chronological_and_idempotent() {
        let mut items: Vec<EvidenceItem> = (0..10)
            .map(|i| item(&format!("c{i}"), &format!("text {i}"), 0.1 * i as f64, 1 + (7 * i as u32) % 5, (3 * i) % 4))
            .collect();
        items.reverse();
        let once = dedup_and_order(items.clone());
        let mut want: Vec<(NaiveDate, usize)> = items.iter().map(|i| (i.chunk.metadata.chartdate, i.chunk.metadata.seq_index)).collect();
        want.sort();
        let got: Vec<(NaiveDate, usize)> = once.iter().map(|i| (i.chunk.metadata.chartdate, i.chunk.metadata.seq_index)).collect();
        assert_eq!(got, want);
        assert_eq!(dedup_and_order(once.clone()), once);
    }

    #[test]
    fn facet_mapping_is_total() {
        for t in NoteType::ALL {
            let _ = facet_for(t);
        }
        assert_eq!(facet_for(NoteType::RadiologyReports), SoapFacet::Objective);
    }
}
