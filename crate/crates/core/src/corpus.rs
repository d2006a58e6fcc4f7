//! Visit-level pivoting and per-patient timelines.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::taxonomy::{ClassifiedNote, NoteType};

/// Separator placed between notes of the same type within one visit.
pub const NOTE_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VisitKey {
    pub subject_id: u64,
    pub hadm_id: u64,
}

impl fmt::Display for VisitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.subject_id, self.hadm_id)
    }
}

/// One hospital admission with one text column per canonical note type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub subject_id: u64,
    pub hadm_id: u64,
    /// Earliest chartdate among the admission's notes.
    pub chartdate: NaiveDate,
    /// All sixteen types are always present; absent types hold "".
    pub notes: BTreeMap<NoteType, String>,
    /// Earliest charttime per type, where any note of that type had one.
    #[serde(default)]
    pub charttimes: BTreeMap<NoteType, NaiveDateTime>,
    pub source_row_ids: Vec<u64>,
}

impl VisitRecord {
    pub fn key(&self) -> VisitKey {
        VisitKey {
            subject_id: self.subject_id,
            hadm_id: self.hadm_id,
        }
    }

    pub fn text(&self, t: NoteType) -> &str {
        self.notes.get(&t).map_or("", String::as_str)
    }

    pub fn has(&self, t: NoteType) -> bool {
        !self.text(t).trim().is_empty()
    }

    /// Types with non-empty text, in enumeration order.
    pub fn present_types(&self) -> impl Iterator<Item = NoteType> + '_ {
        NoteType::ALL.into_iter().filter(|t| self.has(*t))
    }

    /// The gold reference: all progress-note text of the visit, in time order.
    pub fn gold_note(&self) -> &str {
        self.text(NoteType::ProgressNotes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub row_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PivotOutput {
    pub visits: Vec<VisitRecord>,
    pub rejects: Vec<Reject>,
}

fn effective_time(n: &ClassifiedNote) -> NaiveDateTime {
    n.record
        .charttime
        .unwrap_or_else(|| n.record.chartdate.and_hms_opt(0, 0, 0).expect("midnight"))
}

/// Groups classified notes into one record per `(subject_id, hadm_id)`.
///
/// Notes without an admission id or with blank text go to the rejects
/// report. Output visits are sorted by `(subject_id, hadm_id)`.
pub fn pivot_notes(notes: impl IntoIterator<Item = ClassifiedNote>) -> PivotOutput {
    let mut groups: BTreeMap<VisitKey, Vec<ClassifiedNote>> = BTreeMap::new();
    let mut rejects = Vec::new();
    for n in notes {
        let Some(hadm_id) = n.record.hadm_id else {
            rejects.push(Reject {
                row_id: n.record.row_id,
                reason: "missing HADM_ID".into(),
            });
            continue;
        };
        if n.record.text.trim().is_empty() {
            rejects.push(Reject {
                row_id: n.record.row_id,
                reason: "empty TEXT".into(),
            });
            continue;
        }
        let key = VisitKey {
            subject_id: n.record.subject_id,
            hadm_id,
        };
        groups.entry(key).or_default().push(n);
    }

    let visits = groups
        .into_iter()
        .map(|(key, mut members)| {
            members.sort_by_key(|n| (effective_time(n), n.record.row_id));
            let mut notes: BTreeMap<NoteType, String> =
                NoteType::ALL.iter().map(|t| (*t, String::new())).collect();
            let mut charttimes: BTreeMap<NoteType, NaiveDateTime> = BTreeMap::new();
            for n in &members {
                let column = notes.get_mut(&n.note_type).expect("all types present");
                if !column.is_empty() {
                    column.push_str(NOTE_SEPARATOR);
                }
                column.push_str(&n.record.text);
                if let Some(t) = n.record.charttime {
                    charttimes
                        .entry(n.note_type)
                        .and_modify(|e| *e = (*e).min(t))
                        .or_insert(t);
                }
            }
            VisitRecord {
                subject_id: key.subject_id,
                hadm_id: key.hadm_id,
                chartdate: members.iter().map(|n| n.record.chartdate).min().expect("non-empty group"),
                notes,
                charttimes,
                source_row_ids: members.iter().map(|n| n.record.row_id).collect(),
            }
        })
        .collect();
    PivotOutput { visits, rejects }
}

/// Chronologically ordered visits of one patient; a visit's index is its position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTimeline {
    pub subject_id: u64,
    pub visits: Vec<VisitRecord>,
}

impl PatientTimeline {
    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn visit_index_of(&self, hadm_id: u64) -> Option<usize> {
        self.visits.iter().position(|v| v.hadm_id == hadm_id)
    }
}

/// One timeline per patient, visits ordered by `(chartdate, hadm_id)`.
/// Timelines are returned sorted by `subject_id`.
pub fn build_timelines(visits: Vec<VisitRecord>) -> Vec<PatientTimeline> {
    let mut by_subject: HashMap<u64, Vec<VisitRecord>> = HashMap::new();
    for v in visits {
        by_subject.entry(v.subject_id).or_default().push(v);
    }
    let mut timelines: Vec<PatientTimeline> = by_subject
        .into_iter()
        .map(|(subject_id, mut visits)| {
            visits.sort_by_key(|v| (v.chartdate, v.hadm_id));
            PatientTimeline { subject_id, visits }
        })
        .collect();
    timelines.sort_by_key(|t| t.subject_id);
    timelines
}

pub fn filter_cohort(
    timelines: Vec<PatientTimeline>,
    min_visits: usize,
    require_type: Option<NoteType>,
) -> Vec<PatientTimeline> {
    timelines
        .into_iter()
        .filter(|t| t.len() >= min_visits.max(1))
        .filter(|t| require_type.is_none_or(|rt| t.visits.iter().all(|v| v.has(rt))))
        .collect()
}
