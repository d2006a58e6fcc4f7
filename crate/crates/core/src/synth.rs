//! Seeded generator of pseudo-clinical note tables.
//!
//! Bodies are template-driven, carry section headers for their type, and
//! include `[** ... **]` de-identification spans, bullets and key/value runs
//! so every preprocessing path is exercised. Each patient draws from its own
//! RNG stream derived from the corpus seed.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{NoteType, RawNoteRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub patient_count: usize,
    /// Inclusive `(min, max)` visits per patient.
    pub visits_per_patient: (usize, usize),
    /// Fraction of visits containing each type. Types absent from the map use
    /// [`default_coverage`].
    pub coverage: BTreeMap<NoteType, f64>,
    pub seed: u64,
}

/// Visit-level coverage per type, following the observed ICU-stay coverage
/// profile (progress notes at 8.56%).
pub fn default_coverage() -> BTreeMap<NoteType, f64> {
    use NoteType::*;
    BTreeMap::from([
        (NursingOtherNotes, 0.98),
        (RadiologyReports, 0.92),
        (ProgressNotes, 0.0856),
        (EcgReports, 0.80),
        (EchoReports, 0.20),
        (DischargeSummary, 0.60),
        (TransferNotes, 0.35),
        (ProcedureNotes, 0.10),
        (AdmissionNotes, 0.12),
        (ConsultNotes, 0.05),
        (EventNotes, 0.02),
        (DischargePlanning, 0.01),
        (PharmacyNotes, 0.005),
        (NursingShiftNotes, 0.003),
        (MiscNotes, 0.65),
        (NutritionNotes, 0.05),
    ])
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            patient_count: 56,
            visits_per_patient: (10, 57),
            coverage: default_coverage(),
            seed: 1,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patient_count == 0 {
            return Err(Error::InvalidSpec("patient_count must be at least 1".into()));
        }
        let (lo, hi) = self.visits_per_patient;
        if lo < 1 || hi > 100 || lo > hi {
            return Err(Error::InvalidSpec(format!(
                "visits_per_patient ({lo}, {hi}) must satisfy 1 <= min <= max <= 100"
            )));
        }
        for (t, p) in &self.coverage {
            if !(0.0..=1.0).contains(p) || !p.is_finite() {
                return Err(Error::InvalidSpec(format!("coverage for {t} is {p}, outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn coverage_of(&self, t: NoteType) -> f64 {
        self.coverage
            .get(&t)
            .copied()
            .unwrap_or_else(|| default_coverage()[&t])
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn patient_seed(seed: u64, patient: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ patient as u64)
}

struct Problem {
    name: &'static str,
    meds: &'static [&'static str],
    findings: &'static [&'static str],
    symptoms: &'static [&'static str],
}

const PROBLEMS: &[Problem] = &[
    Problem {
        name: "congestive heart failure",
        meds: &["furosemide", "lisinopril", "metoprolol"],
        findings: &["bilateral pleural effusions", "pulmonary vascular congestion", "cardiomegaly"],
        symptoms: &["dyspnea on exertion", "orthopnea", "lower extremity swelling"],
    },
    Problem {
        name: "community acquired pneumonia",
        meds: &["ceftriaxone", "azithromycin", "albuterol nebulizers"],
        findings: &["right lower lobe consolidation", "patchy opacities", "small effusion"],
        symptoms: &["productive cough", "fever", "pleuritic chest pain"],
    },
    Problem {
        name: "COPD exacerbation",
        meds: &["prednisone", "ipratropium", "albuterol nebulizers"],
        findings: &["hyperinflated lungs", "flattened diaphragms", "no focal consolidation"],
        symptoms: &["wheezing", "shortness of breath", "chest tightness"],
    },
    Problem {
        name: "sepsis",
        meds: &["vancomycin", "piperacillin tazobactam", "norepinephrine"],
        findings: &["lactate elevation", "leukocytosis", "no free air"],
        symptoms: &["rigors", "confusion", "fever"],
    },
    Problem {
        name: "acute kidney injury",
        meds: &["intravenous fluids", "sodium bicarbonate", "renal dosing of antibiotics"],
        findings: &["echogenic kidneys", "no hydronephrosis", "rising creatinine"],
        symptoms: &["decreased urine output", "fatigue", "nausea"],
    },
    Problem {
        name: "atrial fibrillation",
        meds: &["diltiazem", "apixaban", "metoprolol"],
        findings: &["irregularly irregular rhythm", "left atrial enlargement", "rapid ventricular response"],
        symptoms: &["palpitations", "lightheadedness", "fatigue"],
    },
    Problem {
        name: "upper gastrointestinal bleed",
        meds: &["pantoprazole infusion", "packed red blood cells", "octreotide"],
        findings: &["hemoglobin drop", "no active extravasation", "gastric ulcer"],
        symptoms: &["melena", "hematemesis", "dizziness"],
    },
    Problem {
        name: "diabetic ketoacidosis",
        meds: &["insulin infusion", "potassium repletion", "intravenous fluids"],
        findings: &["anion gap acidosis", "hyperglycemia", "ketonuria"],
        symptoms: &["polyuria", "abdominal pain", "vomiting"],
    },
];

fn labels(t: NoteType) -> &'static [(&'static str, &'static str)] {
    use NoteType::*;
    match t {
        AdmissionNotes => &[("Physician ", "Admission Note"), ("General", "ICU Admission Note")],
        ConsultNotes => &[
            ("Consult", "Cardiology Consult"),
            ("General", "GI Consult"),
            ("Physician ", "Critical Care Consult"),
        ],
        DischargePlanning => &[
            ("Case Management ", "DC Plan"),
            ("Case Management ", "Discharge Plan Note"),
            ("Case Management ", "Dischaarge Planning Update"),
        ],
        DischargeSummary => &[("Discharge summary", "Report"), ("Discharge summary", "Addendum")],
        EcgReports => &[("ECG", "Report")],
        EchoReports => &[("Echo", "Report")],
        EventNotes => &[
            ("General", "Family Meeting"),
            ("Physician ", "Code Discussion"),
            ("Physician ", "Event Note"),
        ],
        MiscNotes => &[
            ("General", "Generic Note"),
            ("Physician ", "--error--"),
            ("Social Work", "Social Work Note"),
        ],
        NursingOtherNotes => &[("Nursing/other", "Report")],
        NursingShiftNotes => &[
            ("Nursing", "Nursing Progress Note 0700-1900"),
            ("Nursing", "Nursing Shift Note"),
        ],
        NutritionNotes => &[("Nutrition", "Nutrition Assessment"), ("Nutrition", "Dietitian Follow-up")],
        PharmacyNotes => &[("Pharmacy", "Pharmacy Note"), ("Pharmacy", "Medication Reconciliation")],
        ProcedureNotes => &[
            ("Physician ", "Thoracentesis"),
            ("Physician ", "Intubation Procedure Note"),
            ("General", "Central Line Placement"),
        ],
        ProgressNotes => &[
            ("Physician ", "Physician Resident Progress Note"),
            ("Physician ", "Progress note - MICU"),
            ("Physician ", "Attending PN"),
            ("Nursing", "Nursong Progress Note"),
        ],
        RadiologyReports => &[
            ("Radiology", "CHEST (PORTABLE AP)"),
            ("Radiology", "CT HEAD W/O CONTRAST"),
            ("Radiology", "Report"),
        ],
        TransferNotes => &[("Physician ", "Transfer Note"), ("Nursing", "Nursing Transfer Note")],
    }
}

fn max_notes(t: NoteType) -> usize {
    match t {
        NoteType::NursingOtherNotes => 4,
        NoteType::RadiologyReports => 3,
        _ => 2,
    }
}

struct Ctx<'a> {
    rng: &'a mut ChaCha8Rng,
    problems: [&'static Problem; 2],
    date: NaiveDate,
}

impl Ctx<'_> {
    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        *xs.choose(self.rng).expect("non-empty pool")
    }

    fn problem(&mut self) -> &'static Problem {
        let i = self.rng.random_range(0..2);
        self.problems[i]
    }

    fn phi_date(&self) -> String {
        format!("[**{}**]", self.date.format("%Y-%-m-%-d"))
    }

    fn phi_name(&mut self) -> String {
        let n = self.rng.random_range(100..9999);
        let kind = self.pick(&["Last Name (NamePattern1)", "First Name8 (NamePattern2)", "Known lastname"]);
        format!("[**{kind} {n}**]")
    }

    fn phi_loc(&mut self) -> String {
        let kind = self.pick(&["Hospital1 18", "Location (un) 620", "Hospital Ward Name 121"]);
        format!("[**{kind}**]")
    }

    fn vitals(&mut self) -> String {
        let hr = self.rng.random_range(58..128);
        let sbp = self.rng.random_range(88..168);
        let dbp = self.rng.random_range(48..96);
        let rr = self.rng.random_range(12..30);
        let spo2 = self.rng.random_range(88..101);
        format!("HR: {hr} bpm\nBP: {sbp}/{dbp}\nRR: {rr}\nSpO2: {spo2}%")
    }

    fn sentence(&mut self, kind: &str) -> String {
        let p = self.problem();
        let med = self.pick(p.meds);
        let finding = self.pick(p.findings);
        let symptom = self.pick(p.symptoms);
        let name = p.name;
        match kind {
            "symptom" => {
                let t = self.pick(&[
                    "Patient reports {s} over the past several days.",
                    "Complains of {s}, worse at night.",
                    "Family notes increasing {s} since the last visit.",
                    "Denies chest pain but endorses {s}.",
                ]);
                t.replace("{s}", symptom)
            }
            "finding" => {
                let t = self.pick(&[
                    "Imaging demonstrates {f}.",
                    "Exam notable for {f}.",
                    "There is {f} consistent with {n}.",
                    "Findings include {f}.",
                ]);
                t.replace("{f}", finding).replace("{n}", name)
            }
            "assessment" => {
                let t = self.pick(&[
                    "Presentation most consistent with {n}.",
                    "{N} remains the leading concern.",
                    "Clinically improving {n}.",
                    "Ongoing {n} with {f}.",
                ]);
                t.replace("{n}", name).replace("{N}", &capitalize(name)).replace("{f}", finding)
            }
            "plan" => {
                let t = self.pick(&[
                    "Continue {m} and monitor response.",
                    "Start {m} for {n}.",
                    "Follow up {n} in clinic in two weeks.",
                    "Monitor electrolytes daily while on {m}.",
                    "Titrate {m} as tolerated.",
                ]);
                t.replace("{m}", med).replace("{n}", name)
            }
            _ => {
                let t = self.pick(&[
                    "Patient was seen by {d} on {dt}.",
                    "Discussed care with {d}.",
                    "Transferred from {l} on {dt}.",
                ]);
                let d = self.phi_name();
                let l = self.phi_loc();
                let dt = self.phi_date();
                t.replace("{d}", &format!("Dr. {d}")).replace("{dt}", &dt).replace("{l}", &l)
            }
        }
    }

    fn sentences(&mut self, kind: &str, lo: usize, hi: usize) -> String {
        let n = self.rng.random_range(lo..=hi);
        (0..n).map(|_| self.sentence(kind)).collect::<Vec<_>>().join(" ")
    }

    fn bullets(&mut self, kind: &str, n: usize) -> String {
        (0..n)
            .map(|_| {
                let s = self.sentence(kind);
                format!("- {}", s.trim_end_matches('.'))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn section(header: &str, body: String) -> String {
    format!("{header}\n{body}")
}

fn note_body(t: NoteType, cx: &mut Ctx<'_>) -> String {
    use NoteType::*;
    let sections: Vec<String> = match t {
        AdmissionNotes => vec![
            cx.sentence("admin"),
            section("Chief Complaint:", cx.sentence("symptom")),
            section("HPI:", cx.sentences("symptom", 2, 4)),
            section("Physical Exam:", format!("{}\n{}", cx.vitals(), cx.sentences("finding", 1, 2))),
            section("Assessment and Plan:", format!("{} {}", cx.sentence("assessment"), cx.sentences("plan", 1, 3))),
        ],
        ConsultNotes => vec![
            section("Reason for Consultation:", cx.sentence("assessment")),
            section("Assessment:", cx.sentences("assessment", 1, 2)),
            section("Recommendations:", cx.bullets("plan", 3)),
        ],
        DischargePlanning => vec![
            section("Education:", cx.sentences("plan", 1, 2)),
            section("Home Needs:", "Requires home oxygen evaluation and visiting nurse services.".into()),
            section("Follow-up:", format!("{} Appointment with {} on {}.", cx.sentence("plan"), cx.phi_name(), cx.phi_date())),
        ],
        DischargeSummary => {
            let long = cx.rng.random_bool(0.3);
            let course = if long { cx.sentences("finding", 40, 60) } else { cx.sentences("assessment", 3, 6) };
            vec![
                cx.sentence("admin"),
                section("Brief Hospital Course:", format!("{course} {}", cx.sentences("plan", 2, 4))),
                section("Discharge Medications:", cx.bullets("plan", 3)),
            ]
        }
        EcgReports => vec![
            section("Findings:", cx.sentences("finding", 1, 2)),
            section("Rhythm Analysis:", cx.pick(&["Sinus rhythm.", "Atrial fibrillation with rapid ventricular response.", "Sinus tachycardia."]).to_string()),
        ],
        EchoReports => vec![
            section("Ejection Fraction:", format!("{}%", cx.rng.random_range(20..70))),
            section("Valve Assessment:", cx.pick(&["Mild mitral regurgitation.", "Moderate aortic stenosis.", "No significant valvular disease."]).to_string()),
        ],
        EventNotes => vec![
            section("Event Description:", format!("{} {}", cx.sentence("symptom"), cx.sentence("admin"))),
            section("Clinical Response:", cx.sentences("plan", 1, 2)),
        ],
        MiscNotes => vec![section("Free-text:", format!("{} {}", cx.sentence("admin"), cx.sentence("plan")))],
        NursingOtherNotes => vec![
            cx.sentence("symptom"),
            section("Fluid Balance:", format!("I/O: {} in, {} out", cx.rng.random_range(800..3000), cx.rng.random_range(400..2600))),
            section("Pain Assessment:", format!("Pain {}/10. {}", cx.rng.random_range(0..9), cx.sentence("symptom"))),
        ],
        NursingShiftNotes => vec![
            section("Physical Assessment:", format!("{}\n{}", cx.vitals(), cx.sentence("finding"))),
            section("Interventions:", cx.bullets("plan", 2)),
        ],
        NutritionNotes => vec![
            section("Diet:", cx.pick(&["NPO.", "Cardiac diet, tolerating well.", "Tube feeds at goal."]).to_string()),
            section("Weight:", format!("{} kg", cx.rng.random_range(45..130))),
            section("Recommendations:", cx.sentences("plan", 1, 2)),
        ],
        PharmacyNotes => vec![
            section("Medication List:", cx.bullets("plan", 3)),
            section("Dose:", "Renally adjusted where indicated.".into()),
            section("Route:", cx.pick(&["IV.", "PO.", "IV transitioning to PO."]).to_string()),
        ],
        ProcedureNotes => vec![
            section("Technique:", format!("Performed under sterile conditions by {}. {}", cx.phi_name(), cx.sentence("finding"))),
            section("Complications:", cx.pick(&["None.", "Minor bleeding, resolved with pressure.", "No immediate complications."]).to_string()),
        ],
        ProgressNotes => {
            let short = cx.rng.random_bool(0.5);
            let h = |long: &'static str, s: &'static str| if short { s } else { long };
            vec![
                section(h("Subjective:", "S:"), cx.sentences("symptom", 1, 3)),
                section(h("Objective:", "O:"), format!("{}\n{}", cx.vitals(), cx.sentences("finding", 1, 2))),
                section(h("Assessment:", "A:"), cx.sentences("assessment", 1, 3)),
                section(h("Plan:", "P:"), cx.sentences("plan", 2, 5)),
            ]
        }
        RadiologyReports => vec![
            cx.pick(&["PORTABLE AP CHEST.", "CT HEAD WITHOUT CONTRAST.", "ABDOMINAL ULTRASOUND."]).to_string(),
            section("FINDINGS:", cx.sentences("finding", 2, 4)),
            section("IMPRESSION:", cx.sentence("assessment")),
        ],
        TransferNotes => vec![
            section("Status:", format!("{} {}", cx.sentence("assessment"), cx.sentence("admin"))),
            section("Destination Unit:", format!("Transfer to {}.", cx.phi_loc())),
        ],
    };
    sections.join("\n")
}

/// Generates the note table for a spec. Deterministic under a fixed spec.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<RawNoteRecord>> {
    spec.validate()?;
    let mut out = Vec::new();
    for p in 0..spec.patient_count {
        generate_patient(spec, p, &mut out);
    }
    for (i, n) in out.iter_mut().enumerate() {
        n.row_id = i as u64 + 1;
    }
    Ok(out)
}

fn generate_patient(spec: &SyntheticCorpusSpec, p: usize, out: &mut Vec<RawNoteRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(patient_seed(spec.seed, p));
    let subject_id = 10_000 + p as u64;
    let (lo, hi) = spec.visits_per_patient;
    let n_visits = rng.random_range(lo..=hi);
    let first = rng.random_range(0..PROBLEMS.len());
    let second = (first + rng.random_range(1..PROBLEMS.len())) % PROBLEMS.len();
    let problems = [&PROBLEMS[first], &PROBLEMS[second]];
    let mut admit = NaiveDate::from_ymd_opt(2100, 1, 1).unwrap() + Duration::days(rng.random_range(0..30_000));

    for v in 0..n_visits {
        let hadm_id = 100_000 + (p as u64) * 100 + v as u64;
        let los = rng.random_range(1..=10);
        let mut picked: Vec<NoteType> = NoteType::ALL
            .into_iter()
            .filter(|t| rng.random_bool(spec.coverage_of(*t)))
            .collect();
        if picked.is_empty() {
            picked.push(NoteType::MiscNotes);
        }
        for t in picked {
            let count = rng.random_range(1..=max_notes(t));
            for _ in 0..count {
                let day = admit + Duration::days(rng.random_range(0..los));
                let charttime = if matches!(t, NoteType::DischargeSummary | NoteType::EcgReports | NoteType::EchoReports) {
                    None
                } else {
                    day.and_hms_opt(rng.random_range(0..24), rng.random_range(0..60), 0)
                };
                let (category, description) = *labels(t).choose(&mut rng).expect("labels");
                let mut cx = Ctx {
                    rng: &mut rng,
                    problems,
                    date: day,
                };
                let text = note_body(t, &mut cx);
                out.push(RawNoteRecord {
                    row_id: 0,
                    subject_id,
                    hadm_id: Some(hadm_id),
                    chartdate: day,
                    charttime,
                    category: category.to_string(),
                    description: description.to_string(),
                    text,
                });
            }
        }
        admit += Duration::days(los + rng.random_range(14..240));
    }
}
