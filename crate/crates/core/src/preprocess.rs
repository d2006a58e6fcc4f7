//! Generic note cleaning and note-type-specific section header standardization.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use chrono::{NaiveDate, NaiveDateTime};
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::VisitRecord;
use crate::error::{Error, Result};
use crate::taxonomy::NoteType;

pub const PREAMBLE: &str = "Preamble";

/// Closed placeholder vocabulary for de-identification spans.
pub const PLACEHOLDERS: [&str; 4] = ["<DATE>", "<NAME>", "<LOC>", "<PHI>"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanStats {
    pub phi_spans: usize,
    /// `[**` spans with no closing `**]`, closed at end of text.
    pub unterminated_spans: usize,
}

static BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[-*•·‣▪–]|\d{1,3}[.)])\s+(\S.*)$").expect("bullet regex"));
static KEY_VALUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z][A-Za-z0-9 ()/]{0,23}:\s*[0-9+\-]").expect("kv regex"));
static TABULAR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*([A-Za-z][A-Za-z()/]*(?: [A-Za-z()/]+){0,3})(?:\t+| {2,})\s*(\d.*)$").expect("tabular regex")
});

fn placeholder_for(content: &str) -> &'static str {
    let c = content.trim();
    let lower = c.to_lowercase();
    let date_like = c.chars().any(|ch| ch.is_ascii_digit())
        && c.chars().all(|ch| ch.is_ascii_digit() || matches!(ch, '-' | '/' | ':' | ' '));
    if date_like || ["month", "year", "date", "day"].iter().any(|w| lower.contains(w)) {
        return "<DATE>";
    }
    let titled = ["dr ", "dr.", "mr ", "mr.", "mrs", "ms ", "ms.", "miss ", "prof"]
        .iter()
        .any(|p| lower.starts_with(p));
    if titled || lower.contains("name") {
        return "<NAME>";
    }
    if ["hospital", "location", "ward", "street", "address", "city", "state", "country"]
        .iter()
        .any(|w| lower.contains(w))
    {
        return "<LOC>";
    }
    "<PHI>"
}

fn replace_phi(text: &str, stats: &mut CleanStats) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("[**") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 3..];
        stats.phi_spans += 1;
        match after.find("**]") {
            Some(end) => {
                out.push_str(placeholder_for(&after[..end]));
                rest = &after[end + 3..];
            }
            None => {
                stats.unterminated_spans += 1;
                out.push_str(placeholder_for(after));
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn collapse_ws(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn terminate(s: &str) -> String {
    if s.ends_with(['.', '!', '?']) {
        s.to_string()
    } else {
        format!("{s}.")
    }
}

fn bullet_content(line: &str) -> Option<&str> {
    let mut content = BULLET.captures(line)?.get(1)?.as_str();
    while let Some(inner) = BULLET.captures(content).and_then(|c| c.get(1)) {
        content = inner.as_str();
    }
    Some(content.trim())
}

/// Unicode NFC, de-identification placeholders, bullet-to-paragraph and
/// key/value consolidation, whitespace normalization.
pub fn clean_generic(text: &str) -> String {
    clean_generic_with_stats(text).0
}

pub fn clean_generic_with_stats(text: &str) -> (String, CleanStats) {
    let mut stats = CleanStats::default();
    let text: String = text.nfc().collect();
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let text = replace_phi(&text, &mut stats);

    let lines: Vec<String> = text
        .split('\n')
        .map(|raw| match TABULAR.captures(raw) {
            Some(c) => format!("{}: {}", &c[1], collapse_ws(&c[2])),
            None => collapse_ws(raw),
        })
        .collect();

    // Consecutive bullet items become one prose paragraph.
    let mut merged: Vec<String> = Vec::with_capacity(lines.len());
    let mut paragraph: Vec<String> = Vec::new();
    for line in lines {
        if let Some(content) = bullet_content(&line) {
            paragraph.push(terminate(content));
            continue;
        }
        if !paragraph.is_empty() {
            merged.push(paragraph.join(" "));
            paragraph.clear();
        }
        merged.push(line);
    }
    if !paragraph.is_empty() {
        merged.push(paragraph.join(" "));
    }

    // Runs of two or more `key: value` lines are joined into one sentence line.
    let mut consolidated: Vec<String> = Vec::with_capacity(merged.len());
    let mut i = 0;
    while i < merged.len() {
        let mut j = i;
        while j < merged.len() && KEY_VALUE.is_match(&merged[j]) {
            j += 1;
        }
        if j - i >= 2 {
            let joined = merged[i..j].iter().map(|l| terminate(l)).collect::<Vec<_>>().join(" ");
            consolidated.push(joined);
            i = j;
        } else {
            consolidated.push(merged[i].clone());
            i += 1;
        }
    }

    let mut out: Vec<&str> = Vec::with_capacity(consolidated.len());
    for line in &consolidated {
        if line.is_empty() && out.last().is_none_or(|l| l.is_empty()) {
            continue;
        }
        out.push(line);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    (out.join("\n"), stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderDef {
    pub canonical: String,
    pub aliases: Vec<String>,
}

/// Canonical section headers per note type with their surface aliases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderCatalog {
    entries: BTreeMap<NoteType, Vec<HeaderDef>>,
    // (alias, canonical) per type, longest alias first.
    lookup: BTreeMap<NoteType, Vec<(String, String)>>,
}

pub(crate) const DEFAULT_HEADERS: &str = include_str!("../data/note_headers.tsv");

impl HeaderCatalog {
    pub fn default_catalog() -> Self {
        Self::parse(DEFAULT_HEADERS, "note_headers.tsv").expect("shipped header catalog parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `note_type <TAB> canonical_header <TAB> alias1|alias2|...`.
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut entries: BTreeMap<NoteType, Vec<HeaderDef>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                file: file.to_string(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let note_type: NoteType = fields[0].parse().map_err(|e: Error| err(e.to_string()))?;
            let canonical = fields[1].trim().to_string();
            if canonical.is_empty() {
                return Err(err("empty canonical header".into()));
            }
            let defs = entries.entry(note_type).or_default();
            if defs.iter().any(|d| d.canonical.eq_ignore_ascii_case(&canonical)) {
                return Err(err(format!("duplicate canonical header '{canonical}' for {note_type}")));
            }
            let mut aliases: Vec<String> = fields
                .get(2)
                .map(|a| a.split('|').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect())
                .unwrap_or_default();
            let own = canonical.to_lowercase();
            if !aliases.contains(&own) {
                aliases.push(own);
            }
            defs.push(HeaderDef { canonical, aliases });
        }
        for t in NoteType::ALL {
            if !entries.contains_key(&t) {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line: 0,
                    message: format!("no headers declared for {t}"),
                });
            }
        }
        let lookup = entries
            .iter()
            .map(|(t, defs)| {
                let mut pairs: Vec<(String, String)> = defs
                    .iter()
                    .flat_map(|d| d.aliases.iter().map(move |a| (a.clone(), d.canonical.clone())))
                    .collect();
                pairs.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then(a.0.cmp(&b.0)));
                (*t, pairs)
            })
            .collect();
        Ok(HeaderCatalog { entries, lookup })
    }

    pub fn headers(&self, t: NoteType) -> &[HeaderDef] {
        self.entries.get(&t).map_or(&[], Vec::as_slice)
    }

    /// Detects a header at the start of `line`. Returns the canonical header and
    /// any inline content following the colon.
    pub fn detect<'a>(&self, t: NoteType, line: &'a str) -> Option<(&str, &'a str)> {
        let line = line.trim();
        for (alias, canonical) in self.lookup.get(&t)? {
            let Some(rest) = strip_prefix_ci(line, alias) else {
                continue;
            };
            if rest.is_empty() {
                return Some((canonical, ""));
            }
            if let Some(inline) = rest.trim_start().strip_prefix(':') {
                return Some((canonical, inline.trim()));
            }
        }
        None
    }
}

impl Default for HeaderCatalog {
    fn default() -> Self {
        Self::default_catalog()
    }
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let mut chars = s.char_indices();
    for p in prefix.chars() {
        let (_, c) = chars.next()?;
        if !c.to_lowercase().eq(p.to_lowercase()) {
            return None;
        }
    }
    Some(chars.next().map_or("", |(i, _)| &s[i..]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub header: String,
    pub body: String,
}

/// A cleaned, section-tagged note of one type within one visit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanNote {
    pub note_type: NoteType,
    pub subject_id: u64,
    pub hadm_id: u64,
    pub chartdate: NaiveDate,
    pub charttime: Option<NaiveDateTime>,
    pub sections: Vec<Section>,
}

impl CleanNote {
    /// Text form: the preamble body, then `Header:` lines each followed by their body.
    pub fn render(&self) -> String {
        render_sections(&self.sections)
    }
}

fn render_sections(sections: &[Section]) -> String {
    let mut parts = Vec::with_capacity(sections.len());
    for s in sections {
        if s.header == PREAMBLE {
            parts.push(s.body.clone());
        } else if s.body.is_empty() {
            parts.push(format!("{}:", s.header));
        } else {
            parts.push(format!("{}:\n{}", s.header, s.body));
        }
    }
    parts.join("\n")
}

/// Splits cleaned text into sections keyed by canonical header. Text before
/// the first header goes to a `Preamble` section (omitted when empty).
pub fn standardize_headers(text: &str, note_type: NoteType, catalog: &HeaderCatalog) -> Vec<Section> {
    let mut sections: Vec<Section> = Vec::new();
    let mut header = PREAMBLE.to_string();
    let mut lines: Vec<&str> = Vec::new();
    let flush = |sections: &mut Vec<Section>, header: &str, lines: &mut Vec<&str>| {
        let body = lines.join("\n").trim().to_string();
        lines.clear();
        if header != PREAMBLE || !body.is_empty() {
            sections.push(Section {
                header: header.to_string(),
                body,
            });
        }
    };
    for line in text.split('\n') {
        let mut current = line;
        let mut detected = false;
        // An inline remainder may itself open another section ("A: P: ...").
        while let Some((canonical, inline)) = catalog.detect(note_type, current) {
            if detected || !current.is_empty() {
                flush(&mut sections, &header, &mut lines);
            }
            header = canonical.to_string();
            detected = true;
            current = inline;
            if inline.is_empty() {
                break;
            }
        }
        if !detected || !current.is_empty() {
            lines.push(current);
        }
    }
    flush(&mut sections, &header, &mut lines);
    sections
}

/// Full preprocessing of one note column: generic cleaning then header
/// standardization, iterated to a fixed point so that re-running on the
/// rendered output is a no-op.
pub fn preprocess_text(text: &str, note_type: NoteType, catalog: &HeaderCatalog) -> Vec<Section> {
    let mut sections = standardize_headers(&clean_generic(text), note_type, catalog);
    for _ in 0..4 {
        let again = standardize_headers(&clean_generic(&render_sections(&sections)), note_type, catalog);
        if again == sections {
            break;
        }
        sections = again;
    }
    sections
}

/// Cleans every non-empty note column of a visit.
pub fn preprocess_visit(visit: &VisitRecord, catalog: &HeaderCatalog) -> Vec<CleanNote> {
    visit
        .present_types()
        .map(|t| CleanNote {
            note_type: t,
            subject_id: visit.subject_id,
            hadm_id: visit.hadm_id,
            chartdate: visit.chartdate,
            charttime: visit.charttimes.get(&t).copied(),
            sections: preprocess_text(visit.text(t), t, catalog),
        })
        .filter(|n| !n.sections.is_empty())
        .collect()
}
