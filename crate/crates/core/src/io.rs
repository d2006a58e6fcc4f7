//! Note-table CSV and JSONL helpers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::taxonomy::RawNoteRecord;

pub const NOTE_HEADER: [&str; 8] = [
    "ROW_ID",
    "SUBJECT_ID",
    "HADM_ID",
    "CHARTDATE",
    "CHARTTIME",
    "CATEGORY",
    "DESCRIPTION",
    "TEXT",
];

const DATE_FMT: &str = "%Y-%m-%d";
const TIME_FMT: &str = "%Y-%m-%d %H:%M:%S";

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, DATE_FMT)
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(s, TIME_FMT).ok().map(|t| t.date()))
}

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIME_FMT)
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").ok())
}

/// Reads the note table. Columns are located by header name; a missing
/// `HADM_ID` is kept as `None`.
pub fn read_notes_csv<R: Read>(reader: R, source: &str) -> Result<Vec<RawNoteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                file: source.to_string(),
                line: 1,
                message: format!("missing column {name}"),
            })
    };
    let idx: Vec<usize> = NOTE_HEADER.iter().map(|n| col(n)).collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let bad = |what: &str, v: &str| Error::Parse {
            file: source.to_string(),
            line,
            message: format!("invalid {what} '{v}'"),
        };
        let row_id = field(0).trim().parse().map_err(|_| bad("ROW_ID", field(0)))?;
        let subject_id = field(1).trim().parse().map_err(|_| bad("SUBJECT_ID", field(1)))?;
        let hadm_id = match field(2).trim() {
            "" => None,
            v => Some(
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.fract() == 0.0 && *x >= 0.0)
                    .map(|x| x as u64)
                    .ok_or_else(|| bad("HADM_ID", v))?,
            ),
        };
        let chartdate = parse_date(field(3)).ok_or_else(|| bad("CHARTDATE", field(3)))?;
        let charttime = match field(4).trim() {
            "" => None,
            v => Some(parse_time(v).ok_or_else(|| bad("CHARTTIME", v))?),
        };
        out.push(RawNoteRecord {
            row_id,
            subject_id,
            hadm_id,
            chartdate,
            charttime,
            category: field(5).to_string(),
            description: field(6).to_string(),
            text: field(7).to_string(),
        });
    }
    Ok(out)
}

pub fn read_notes_csv_file(path: &Path) -> Result<Vec<RawNoteRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_notes_csv(BufReader::new(f), &path.display().to_string())
}

pub fn write_notes_csv<W: Write>(writer: W, notes: &[RawNoteRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(writer);
    w.write_record(NOTE_HEADER)?;
    for n in notes {
        w.write_record([
            n.row_id.to_string(),
            n.subject_id.to_string(),
            n.hadm_id.map(|h| h.to_string()).unwrap_or_default(),
            n.chartdate.format(DATE_FMT).to_string(),
            n.charttime.map(|t| t.format(TIME_FMT).to_string()).unwrap_or_default(),
            n.category.clone(),
            n.description.clone(),
            n.text.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_notes_csv_file(path: &Path, notes: &[RawNoteRecord]) -> Result<()> {
    let f = create(path)?;
    write_notes_csv(BufWriter::new(f), notes)
}

pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(row_id: u64, hadm: Option<u64>, text: &str) -> RawNoteRecord {
        RawNoteRecord {
            row_id,
            subject_id: 7,
            hadm_id: hadm,
            chartdate: NaiveDate::from_ymd_opt(2131, 4, 2).unwrap(),
            charttime: NaiveDate::from_ymd_opt(2131, 4, 2).unwrap().and_hms_opt(14, 5, 0),
            category: "Nursing/other".into(),
            description: "Report, \"quoted\"".into(),
            text: text.into(),
        }
    }

    #[test]
    fn csv_round_trip_with_quoting() {
        let notes = vec![
            note(1, Some(100), "line one\nline, two \"q\""),
            note(2, None, ""),
        ];
        let mut buf = Vec::new();
        write_notes_csv(&mut buf, &notes).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ROW_ID,SUBJECT_ID,HADM_ID,CHARTDATE,CHARTTIME,CATEGORY,DESCRIPTION,TEXT\r\n"));
        assert!(text.contains("\"Report, \"\"quoted\"\"\""));
        let back = read_notes_csv(&buf[..], "mem").unwrap();
        assert_eq!(back, notes);
    }

    #[test]
    fn reads_mimic_style_fields() {
        let csv = "ROW_ID,SUBJECT_ID,HADM_ID,CHARTDATE,CHARTTIME,CATEGORY,DESCRIPTION,TEXT\n\
                   5,9,123.0,2131-04-02 00:00:00,,ECG,Report,Sinus rhythm\n";
        let notes = read_notes_csv(csv.as_bytes(), "mem").unwrap();
        assert_eq!(notes[0].hadm_id, Some(123));
        assert_eq!(notes[0].charttime, None);
        assert_eq!(notes[0].chartdate, NaiveDate::from_ymd_opt(2131, 4, 2).unwrap());
    }

    #[test]
    fn bad_date_reports_line() {
        let csv = "ROW_ID,SUBJECT_ID,HADM_ID,CHARTDATE,CHARTTIME,CATEGORY,DESCRIPTION,TEXT\n\
                   5,9,1,yesterday,,ECG,Report,x\n";
        let err = read_notes_csv(csv.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
