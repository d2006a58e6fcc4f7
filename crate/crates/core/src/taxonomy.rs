//! Canonical note types and the deterministic remapping of noisy
//! `CATEGORY` / `DESCRIPTION` labels onto them.
//!
//! Classification is a pure function of `(category, description)`:
//! description patterns are tried in priority order, then category-level
//! defaults (rules whose pattern is `*`), and finally the `misc_notes`
//! fallback. A description match always beats a category default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The sixteen standardized note types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteType {
    AdmissionNotes,
    ConsultNotes,
    DischargePlanning,
    DischargeSummary,
    EcgReports,
    EchoReports,
    EventNotes,
    MiscNotes,
    NursingOtherNotes,
    NursingShiftNotes,
    NutritionNotes,
    PharmacyNotes,
    ProcedureNotes,
    ProgressNotes,
    RadiologyReports,
    TransferNotes,
}

impl NoteType {
    pub const ALL: [NoteType; 16] = [
        NoteType::AdmissionNotes,
        NoteType::ConsultNotes,
        NoteType::DischargePlanning,
        NoteType::DischargeSummary,
        NoteType::EcgReports,
        NoteType::EchoReports,
        NoteType::EventNotes,
        NoteType::MiscNotes,
        NoteType::NursingOtherNotes,
        NoteType::NursingShiftNotes,
        NoteType::NutritionNotes,
        NoteType::PharmacyNotes,
        NoteType::ProcedureNotes,
        NoteType::ProgressNotes,
        NoteType::RadiologyReports,
        NoteType::TransferNotes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoteType::AdmissionNotes => "admission_notes",
            NoteType::ConsultNotes => "consult_notes",
            NoteType::DischargePlanning => "discharge_planning",
            NoteType::DischargeSummary => "discharge_summary",
            NoteType::EcgReports => "ecg_reports",
            NoteType::EchoReports => "echo_reports",
            NoteType::EventNotes => "event_notes",
            NoteType::MiscNotes => "misc_notes",
            NoteType::NursingOtherNotes => "nursing_other_notes",
            NoteType::NursingShiftNotes => "nursing_shift_notes",
            NoteType::NutritionNotes => "nutrition_notes",
            NoteType::PharmacyNotes => "pharmacy_notes",
            NoteType::ProcedureNotes => "procedure_notes",
            NoteType::ProgressNotes => "progress_notes",
            NoteType::RadiologyReports => "radiology_reports",
            NoteType::TransferNotes => "transfer_notes",
        }
    }
}

impl fmt::Display for NoteType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoteType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoteType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| Error::UnknownNoteType(s.to_string()))
    }
}

/// One row of the source note table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNoteRecord {
    pub row_id: u64,
    pub subject_id: u64,
    /// Missing admission ids are carried through and rejected at pivot time.
    pub hadm_id: Option<u64>,
    pub chartdate: NaiveDate,
    pub charttime: Option<NaiveDateTime>,
    pub category: String,
    pub description: String,
    pub text: String,
}

/// A raw note together with its canonical type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedNote {
    #[serde(flatten)]
    pub record: RawNoteRecord,
    pub note_type: NoteType,
}

/// Lowercase, collapse punctuation and whitespace runs to single spaces, trim.
pub fn normalize_label(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RemapRule {
    pub priority: i64,
    /// `None` means "any description" (a category-level default).
    pub pattern: Option<Regex>,
    pub category_guard: Option<Regex>,
    pub target: NoteType,
}

impl RemapRule {
    pub fn new(priority: i64, pattern: &str, guard: Option<&str>, target: NoteType) -> Result<Self> {
        let pattern = match pattern.trim() {
            "" | "*" => None,
            p => Some(compile(p)?),
        };
        let category_guard = match guard.map(str::trim) {
            None | Some("") => None,
            Some(g) => Some(compile(g)?),
        };
        Ok(RemapRule {
            priority,
            pattern,
            category_guard,
            target,
        })
    }

    fn is_category_default(&self) -> bool {
        self.pattern.is_none()
    }

    /// Whether this rule fires on an already-normalized (category, description) pair.
    pub fn matches(&self, category: &str, description: &str) -> bool {
        let guard_ok = self
            .category_guard
            .as_ref()
            .is_none_or(|g| g.is_match(category));
        let pattern_ok = self.pattern.as_ref().is_none_or(|p| p.is_match(description));
        guard_ok && pattern_ok
    }

    fn pattern_str(&self) -> &str {
        self.pattern.as_ref().map_or("*", |p| p.as_str())
    }
}

fn compile(p: &str) -> Result<Regex> {
    RegexBuilder::new(p)
        .case_insensitive(true)
        .build()
        .map_err(|e| Error::InvalidRules(format!("bad pattern '{p}': {e}")))
}

pub(crate) const DEFAULT_RULES: &str = include_str!("../data/remap_rules.tsv");

/// An ordered rule set. Rules are kept sorted by priority (stable on file order).
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<RemapRule>,
}

impl RuleSet {
    pub fn new(mut rules: Vec<RemapRule>) -> Self {
        rules.sort_by_key(|r| r.priority);
        RuleSet { rules }
    }

    /// The shipped rule set.
    pub fn default_rules() -> Self {
        Self::parse(DEFAULT_RULES, "remap_rules.tsv").expect("shipped rule file parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `priority <TAB> pattern <TAB> guard <TAB> target` lines.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                file: file.to_string(),
                line: i + 1,
                message,
            };
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let priority = fields[0]
                .trim()
                .parse::<i64>()
                .map_err(|e| parse_err(format!("bad priority '{}': {e}", fields[0])))?;
            let target = fields[3]
                .parse::<NoteType>()
                .map_err(|_| parse_err(format!("target '{}' is not a canonical note type", fields[3])))?;
            let guard = Some(fields[2]).filter(|g| !g.trim().is_empty());
            let rule = RemapRule::new(priority, fields[1], guard, target)
                .map_err(|e| parse_err(e.to_string()))?;
            rules.push(rule);
        }
        Ok(RuleSet::new(rules))
    }

    pub fn rules(&self) -> &[RemapRule] {
        &self.rules
    }

    /// Index of the rule that fires for this pair, if any.
    pub fn firing_rule(&self, category: &str, description: &str) -> Option<usize> {
        let category = normalize_label(category);
        let description = normalize_label(description);
        let by_description = self
            .rules
            .iter()
            .position(|r| !r.is_category_default() && r.matches(&category, &description));
        by_description.or_else(|| {
            self.rules
                .iter()
                .position(|r| r.is_category_default() && r.matches(&category, &description))
        })
    }

    pub fn classify_labels(&self, category: &str, description: &str) -> NoteType {
        self.firing_rule(category, description)
            .map_or(NoteType::MiscNotes, |i| self.rules[i].target)
    }

    pub fn classify(&self, record: &RawNoteRecord) -> NoteType {
        self.classify_labels(&record.category, &record.description)
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::default_rules()
    }
}

pub fn classify_note(record: &RawNoteRecord, rules: &RuleSet) -> NoteType {
    rules.classify(record)
}

pub fn classify_all(records: Vec<RawNoteRecord>, rules: &RuleSet) -> Vec<ClassifiedNote> {
    records
        .into_iter()
        .map(|record| {
            let note_type = rules.classify(&record);
            ClassifiedNote { record, note_type }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleIssue {
    /// Two rules share a priority and both match the same fixture.
    DuplicatePriority {
        priority: i64,
        fixture: String,
    },
    /// Two rules share a priority but no fixture matches both.
    SharedPriority { priority: i64 },
    /// A rule never fired on the fixture corpus.
    Unreachable { priority: i64, pattern: String },
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub errors: Vec<RuleIssue>,
    pub warnings: Vec<RuleIssue>,
    /// Firing count per rule, in rule order.
    pub firings: Vec<usize>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// `(category, description)` fixtures covering every label cited for the
/// taxonomy plus the common MIMIC-III category defaults.
pub const FIXTURES: &[(&str, &str)] = &[
    ("Nursing/other", "Report"),
    ("Nursing", "Nursing Progress Note 0700-1900"),
    ("Nursing", "Nursing Shift Note"),
    ("Physician ", "Progress Note"),
    ("Physician ", "Progress note - MICU"),
    ("Physician ", "Physician Resident Progress Note"),
    ("Physician ", "MICU Resident Progres Note"),
    ("Physician ", "Attending PN"),
    ("Physician ", "Daily note"),
    ("Physician ", "SOAP"),
    ("Nursing", "Nursong Progress Note"),
    ("Case Management ", "DC Plan"),
    ("Case Management ", "Discharge Plan"),
    ("Case Management ", "Discharge Plan Note"),
    ("Case Management ", "Dischaarge Planning Update"),
    ("Case Management ", "Dischaarge Plan"),
    ("Case Management ", "Hospice Referral"),
    ("Case Management ", "Report"),
    ("Consult", "Report"),
    ("Nursing", "Report"),
    ("Discharge summary", "Discharge Summary"),
    ("Discharge summary", "Report"),
    ("Physician ", "Dishcarge"),
    ("Consult", "Cardiology Consult"),
    ("General", "GI Consult"),
    ("Physician ", "Critical Care Consult"),
    ("General", "Family Meeting"),
    ("Physician ", "Code Discussion"),
    ("Physician ", "Death  Note"),
    ("General", "Event Note"),
    ("Physician ", "--error--"),
    ("General", "Generic Note"),
    ("General", ""),
    ("Physician ", "thoracentesis"),
    ("Physician ", "intubation"),
    ("Physician ", "Admission Note"),
    ("Physician ", "Transfer Note"),
    ("Echo", "Report"),
    ("Echo", "Echocardiogram"),
    ("ECG", "Report"),
    ("General", "EKG interpretation"),
    ("Radiology", "CHEST (PORTABLE AP)"),
    ("Radiology", "Report"),
    ("Nutrition", "Nutrition Assessment"),
    ("Nutrition", "Report"),
    ("Pharmacy", "Pharmacy Note"),
    ("Pharmacy", "Report"),
    ("Rehab Services", "Physical Therapy Evaluation"),
    ("Social Work", "Social Work Note"),
    ("General", "Nursing Note"),
    ("Physician ", "Flumazenil Challenge"),
    ("Physician ", "Phone call to wife"),
];

/// Checks priorities and reachability of a rule set over a fixture corpus.
pub fn validate_rules(rules: &RuleSet, fixtures: &[(&str, &str)]) -> ValidationReport {
    let rs = rules.rules();
    let mut report = ValidationReport {
        firings: vec![0; rs.len()],
        ..Default::default()
    };
    for (category, description) in fixtures {
        if let Some(i) = rules.firing_rule(category, description) {
            report.firings[i] += 1;
        }
    }

    let mut by_priority: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in rs.iter().enumerate() {
        by_priority.entry(r.priority).or_default().push(i);
    }
    for (priority, members) in by_priority.iter().filter(|(_, m)| m.len() > 1) {
        let overlap = fixtures.iter().find(|(c, d)| {
            let (c, d) = (normalize_label(c), normalize_label(d));
            members.iter().filter(|&&i| rs[i].matches(&c, &d)).count() > 1
        });
        match overlap {
            Some((c, d)) => report.errors.push(RuleIssue::DuplicatePriority {
                priority: *priority,
                fixture: format!("{c} / {d}"),
            }),
            None => report.warnings.push(RuleIssue::SharedPriority { priority: *priority }),
        }
    }

    for (i, r) in rs.iter().enumerate() {
        if report.firings[i] == 0 {
            report.warnings.push(RuleIssue::Unreachable {
                priority: r.priority,
                pattern: r.pattern_str().to_string(),
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(category: &str, description: &str) -> NoteType {
        RuleSet::default_rules().classify_labels(category, description)
    }

    #[test]
    fn normalizes_cited_variants() {
        assert_eq!(normalize_label("Progress Note - MICU"), "progress note micu");
        assert_eq!(normalize_label(""), "");
        assert_eq!(normalize_label("  DC   Plan!! "), "dc plan");
        assert_eq!(normalize_label("--error--"), "error");
    }

    #[test]
    fn normalize_matches_char_oracle() {
        // Character-level oracle: map punctuation/space to a separator, split, rejoin.
        for s in ["  DC   Plan!! ", "A/B\tC--d", "Ünïcode  ÄB!"] {
            let mapped: String = s
                .chars()
                .map(|c| if c.is_alphanumeric() { c } else { ' ' })
                .collect::<String>()
                .to_lowercase();
            let expected = mapped.split_whitespace().collect::<Vec<_>>().join(" ");
            assert_eq!(normalize_label(s), expected);
        }
    }

    #[test]
    fn table_examples_map_to_stated_targets() {
        assert_eq!(classify("Case Management ", "DC Plan"), NoteType::DischargePlanning);
        assert_eq!(classify("General", "--error--"), NoteType::MiscNotes);
        assert_eq!(classify("Consult", "Cardiology Consult"), NoteType::ConsultNotes);
        assert_eq!(classify("Physician ", "thoracentesis"), NoteType::ProcedureNotes);
    }

    #[test]
    fn misspellings_are_covered() {
        assert_eq!(classify("Case Management ", "Dischaarge Planning Update"), NoteType::DischargePlanning);
        assert_eq!(classify("Nursing", "Nursong Progress Note"), NoteType::ProgressNotes);
        assert_eq!(classify("Physician ", "MICU Resident Progres Note"), NoteType::ProgressNotes);
    }

    #[test]
    fn shift_times_go_to_shift_notes() {
        assert_eq!(classify("Nursing", "Nursing Progress Note 7a-7p"), NoteType::NursingShiftNotes);
        assert_eq!(classify("Nursing", "Nursing 0700-1900"), NoteType::NursingShiftNotes);
    }

    #[test]
    fn description_beats_category_default() {
        assert_eq!(classify("Radiology", "Cardiology Consult"), NoteType::ConsultNotes);
        assert_eq!(classify("Radiology", "Report"), NoteType::RadiologyReports);
        assert_eq!(classify("ECG", "Report"), NoteType::EcgReports);
        assert_eq!(classify("Nursing/other", "Report"), NoteType::NursingOtherNotes);
    }

    #[test]
    fn unknown_labels_fall_back_to_misc() {
        assert_eq!(classify("", ""), NoteType::MiscNotes);
        assert_eq!(classify("Physician ", "Flumazenil Challenge"), NoteType::MiscNotes);
        assert_eq!(classify("zzz", "qqq"), NoteType::MiscNotes);
    }

    #[test]
    fn default_rules_validate_cleanly() {
        let report = validate_rules(&RuleSet::default_rules(), FIXTURES);
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    }

    #[test]
    fn duplicate_priority_on_overlap_is_an_error() {
        let rules = RuleSet::parse(
            "5\tconsult\t\tconsult_notes\n5\tcardiology\t\tecg_reports\n",
            "inline",
        )
        .unwrap();
        let report = validate_rules(&rules, &[("General", "Cardiology Consult")]);
        assert_eq!(
            report.errors,
            vec![RuleIssue::DuplicatePriority {
                priority: 5,
                fixture: "General / Cardiology Consult".into()
            }]
        );
    }

    #[test]
    fn never_firing_rule_is_unreachable() {
        let rules = RuleSet::parse("1\tconsult\t\tconsult_notes\n2\tzebra\t\tmisc_notes\n", "inline").unwrap();
        let report = validate_rules(&rules, &[("General", "GI Consult"), ("General", "Report")]);
        assert_eq!(report.firings, vec![1, 0]);
        assert!(report.is_ok());
        assert!(matches!(report.warnings[..], [RuleIssue::Unreachable { priority: 2, .. }]));
    }

    #[test]
    fn parse_rejects_unknown_targets_and_bad_regex() {
        let err = RuleSet::parse("1\tfoo\t\tlab_results\n", "f").unwrap_err();
        assert!(err.to_string().contains("lab_results"), "{err}");
        let err = RuleSet::parse("1\t(unclosed\t\tmisc_notes\n", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = RuleSet::parse("1\tfoo\tmisc_notes\n", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn note_type_round_trips_through_str() {
        for t in NoteType::ALL {
            assert_eq!(t.as_str().parse::<NoteType>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{t}\""));
        }
    }
}
