//! Header-scoped chunking with overlapping character windows.

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::CleanNote;
use crate::taxonomy::NoteType;

pub const DEFAULT_WINDOW: usize = 3000;
pub const DEFAULT_OVERLAP: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkParams {
    pub window_size: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            window_size: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.overlap >= self.window_size {
            return Err(Error::InvalidWindow {
                window: self.window_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMetadata {
    pub subject_id: u64,
    pub hadm_id: u64,
    pub chartdate: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charttime: Option<NaiveDateTime>,
    pub note_type: NoteType,
    pub section: String,
    /// Position of the section within its note; disambiguates repeated headers.
    pub section_index: usize,
    /// Character (not byte) offsets into the section body.
    pub char_start: usize,
    pub char_end: usize,
    pub seq_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub text: String,
    pub metadata: ChunkMetadata,
}

/// Window spans `[start, end)` over a section of `len` characters.
pub fn window_spans(len: usize, params: ChunkParams) -> Result<Vec<(usize, usize)>> {
    params.validate()?;
    let ChunkParams { window_size: w, overlap: o } = params;
    let mut spans = Vec::new();
    if len == 0 {
        return Ok(spans);
    }
    let mut start = 0;
    while start + w < len {
        spans.push((start, start + w));
        start += w - o;
    }
    spans.push((start, len));
    Ok(spans)
}

pub fn chunk_id(subject_id: u64, hadm_id: u64, note_type: NoteType, section_index: usize, section: &str, char_start: usize) -> String {
    let key = format!("{subject_id}|{hadm_id}|{note_type}|{section_index}:{section}|{char_start}");
    hex::encode(&Sha256::digest(key.as_bytes())[..16])
}

/// Chunks every section of one note. `seq_index` counts from zero within the note.
pub fn chunk_note(note: &CleanNote, params: ChunkParams) -> Result<Vec<Chunk>> {
    params.validate()?;
    let mut out = Vec::new();
    for (section_index, section) in note.sections.iter().enumerate() {
        let offsets: Vec<usize> = section
            .body
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(section.body.len()))
            .collect();
        let len = offsets.len() - 1;
        for (start, end) in window_spans(len, params)? {
            out.push(Chunk {
                chunk_id: chunk_id(note.subject_id, note.hadm_id, note.note_type, section_index, &section.header, start),
                text: section.body[offsets[start]..offsets[end]].to_string(),
                metadata: ChunkMetadata {
                    subject_id: note.subject_id,
                    hadm_id: note.hadm_id,
                    chartdate: note.chartdate,
                    charttime: note.charttime,
                    note_type: note.note_type,
                    section: section.header.clone(),
                    section_index,
                    char_start: start,
                    char_end: end,
                    seq_index: out.len(),
                },
            });
        }
    }
    Ok(out)
}

/// Chunks all notes of one visit and assigns a visit-wide chronological
/// `seq_index`: notes with a charttime first (ascending), then by type name,
/// then section order and window position.
pub fn chunk_visit(notes: &[CleanNote], params: ChunkParams) -> Result<Vec<Chunk>> {
    let mut ordered: Vec<&CleanNote> = notes.iter().collect();
    ordered.sort_by(|a, b| {
        let ta = (a.charttime.is_none(), a.charttime);
        let tb = (b.charttime.is_none(), b.charttime);
        ta.cmp(&tb).then_with(|| a.note_type.as_str().cmp(b.note_type.as_str()))
    });
    let mut out = Vec::new();
    for note in ordered {
        for mut c in chunk_note(note, params)? {
            c.metadata.seq_index = out.len();
            out.push(c);
        }
    }
    Ok(out)
}

/// Inverse of windowing for one section; chunks must be sorted by `char_start`.
pub fn reconstruct_section(chunks: &[Chunk]) -> Result<String> {
    let Some(first) = chunks.first() else {
        return Ok(String::new());
    };
    let same_section = |c: &Chunk| {
        let (a, b) = (&c.metadata, &first.metadata);
        (a.subject_id, a.hadm_id, a.note_type, a.section_index) == (b.subject_id, b.hadm_id, b.note_type, b.section_index)
    };
    let mut out: Vec<char> = Vec::new();
    for c in chunks {
        if !same_section(c) {
            return Err(Error::InconsistentChunks(format!("chunk {} belongs to another section", c.chunk_id)));
        }
        let m = &c.metadata;
        let text: Vec<char> = c.text.chars().collect();
        if m.char_end < m.char_start || m.char_end - m.char_start != text.len() {
            return Err(Error::InconsistentChunks(format!("chunk {} offsets disagree with its text length", c.chunk_id)));
        }
        let end = out.len();
        if m.char_start > end {
            return Err(Error::ChunkGap { prev_end: end, start: m.char_start });
        }
        let shared = (end - m.char_start).min(text.len());
        if out[m.char_start..m.char_start + shared] != text[..shared] {
            return Err(Error::InconsistentChunks(format!("chunk {} disagrees with the overlapping text", c.chunk_id)));
        }
        out.extend_from_slice(&text[shared..]);
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Section;
    use proptest::prelude::*;

    fn note(bodies: &[&str]) -> CleanNote {
        CleanNote {
            note_type: NoteType::RadiologyReports,
            subject_id: 1,
            hadm_id: 2,
            chartdate: NaiveDate::from_ymd_opt(2130, 1, 1).unwrap(),
            charttime: None,
            sections: bodies
                .iter()
                .map(|b| Section { header: "Findings".into(), body: b.to_string() })
                .collect(),
        }
    }

    // Independent window arithmetic: starts are multiples of the stride up to
    // the first window that reaches the end.
    fn oracle_spans(len: usize, w: usize, o: usize) -> Vec<(usize, usize)> {
        if len == 0 {
            return vec![];
        }
        let stride = w - o;
        let mut v = vec![];
        for k in 0.. {
            let s = k * stride;
            let e = (s + w).min(len);
            v.push((s, e));
            if e == len {
                break;
            }
        }
        v
    }

    #[test]
    fn six_thousand_chars_gives_three_windows() {
        let spans = window_spans(6000, ChunkParams::default()).unwrap();
        assert_eq!(spans, vec![(0, 3000), (2700, 5700), (5400, 6000)]);
        assert_eq!(spans, oracle_spans(6000, 3000, 300));
    }

    #[test]
    fn short_and_empty_sections() {
        let n = note(&["x".repeat(100).as_str(), ""]);
        let chunks = chunk_note(&n, ChunkParams::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].metadata.char_start, chunks[0].metadata.char_end), (0, 100));
    }

    #[test]
    fn rejects_bad_overlap() {
        let p = ChunkParams { window_size: 10, overlap: 10 };
        assert!(matches!(chunk_note(&note(&["abc"]), p), Err(Error::InvalidWindow { .. })));
    }

    #[test]
    fn reconstructs_six_thousand() {
        let body: String = (0..6000).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let chunks = chunk_note(&note(&[&body]), ChunkParams::default()).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(reconstruct_section(&chunks).unwrap(), body);
    }

    #[test]
    fn gap_is_rejected() {
        let body = "y".repeat(50);
        let p = ChunkParams { window_size: 20, overlap: 5 };
        let mut chunks = chunk_note(&note(&[&body]), p).unwrap();
        chunks[1].metadata.char_start += 10;
        chunks[1].metadata.char_end += 10;
        let err = reconstruct_section(&chunks[..2]).unwrap_err();
        assert!(matches!(err, Error::ChunkGap { prev_end: 20, start: 25 }), "{err}");
    }

    #[test]
    fn chunk_ids_are_unique_and_stable() {
        let n = note(&["same body", "same body"]);
        let a = chunk_note(&n, ChunkParams::default()).unwrap();
        let b = chunk_note(&n, ChunkParams::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].chunk_id, a[1].chunk_id);
        assert_eq!(a[0].chunk_id.len(), 32);
    }

    #[test]
    fn visit_sequence_puts_timed_notes_first() {
        let mut timed = note(&["later type name"]);
        timed.note_type = NoteType::TransferNotes;
        timed.charttime = timed.chartdate.and_hms_opt(9, 0, 0);
        let untimed = note(&["untimed"]);
        let mut ecg = note(&["ecg"]);
        ecg.note_type = NoteType::EcgReports;
        let chunks = chunk_visit(&[untimed, ecg, timed], ChunkParams::default()).unwrap();
        let order: Vec<NoteType> = chunks.iter().map(|c| c.metadata.note_type).collect();
        assert_eq!(order, vec![NoteType::TransferNotes, NoteType::EcgReports, NoteType::RadiologyReports]);
        assert_eq!(chunks.iter().map(|c| c.metadata.seq_index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn windows_match_oracle(len in 0usize..20_000, w in 1usize..4000, o_frac in 0.0f64..1.0) {
            let o = ((w as f64) * o_frac) as usize % w;
            let spans = window_spans(len, ChunkParams { window_size: w, overlap: o }).unwrap();
            prop_assert_eq!(&spans, &oracle_spans(len, w, o));
            for (i, &(s, e)) in spans.iter().enumerate() {
                prop_assert!(s < e && e - s <= w);
                if i + 1 < spans.len() {
                    prop_assert_eq!(e - s, w);
                    prop_assert_eq!(e - spans[i + 1].0, o);
                }
            }
        }

        #[test]
        fn round_trip_with_multibyte_text(body in "[a-zé\u{4e2d} \n]{0,7000}") {
            let chunks = chunk_note(&note(&[&body]), ChunkParams::default()).unwrap();
            for c in &chunks {
                prop_assert_eq!(c.text.chars().count(), c.metadata.char_end - c.metadata.char_start);
            }
            prop_assert_eq!(reconstruct_section(&chunks).unwrap(), body);
        }
    }
}
