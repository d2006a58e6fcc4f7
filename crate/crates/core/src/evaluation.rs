//! Lexical, semantic, structural, length and longitudinal scoring of
//! generated notes against the clinicians' progress notes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, embed_texts, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::generator::{GeneratedNote, SoapSections};
use crate::provider::RetryPolicy;
use crate::retriever::SoapFacet;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if n == 0 || tokens.len() < n {
        return m;
    }
    for w in tokens.windows(n) {
        *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap<T: AsRef<str>>(cand: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (overlap, c.values().sum(), r.values().sum())
}

/// Sentence BLEU over tokens: n = 1..4, uniform weights, brevity penalty.
///
/// A zero unigram match gives 0. A higher order with no matches contributes
/// `1 / (candidate n-grams + 1)` instead of zeroing the score.
pub fn bleu_tokens<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    let c = candidate.len();
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (matches, total, _) = clipped_overlap(candidate, reference, n);
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let r = reference.len();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

pub fn bleu(candidate: &str, reference: &str) -> f64 {
    bleu_tokens(&tokenize(candidate), &tokenize(reference))
}

fn f1(overlap: f64, cand_total: f64, ref_total: f64) -> f64 {
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / cand_total;
    let r = overlap / ref_total;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1. When neither side has an n-gram the score is 1 for equal token
/// sequences and 0 otherwise.
pub fn rouge_n_tokens<T: AsRef<str> + PartialEq>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    let (overlap, ct, rt) = clipped_overlap(candidate, reference, n);
    if ct == 0 && rt == 0 {
        return if candidate == reference { 1.0 } else { 0.0 };
    }
    f1(overlap as f64, ct as f64, rt as f64)
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n)
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    f1(lcs_length(candidate, reference) as f64, candidate.len() as f64, reference.len() as f64)
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

/// Cosine of whole-text embeddings; an empty side scores 0.
pub fn semantic_similarity(provider: &dyn EmbeddingProvider, a: &str, b: &str, retry: &RetryPolicy) -> Result<f64> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Ok(0.0);
    }
    let v = embed_texts(provider, &[a.to_string(), b.to_string()], retry)?;
    Ok(cosine(&v[0], &v[1]))
}

pub fn soap_completeness(sections: &SoapSections) -> u8 {
    SoapFacet::ALL.iter().filter(|&&f| !sections.get(f).trim().is_empty()).count() as u8
}

pub fn length_ratio(generated: &str, gold: &str) -> Result<f64> {
    let g = tokenize(gold).len();
    if g == 0 {
        return Err(Error::EmptyGold);
    }
    Ok(tokenize(generated).len() as f64 / g as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotePairScores {
    pub subject_id: u64,
    pub hadm_id: u64,
    pub visit_index: usize,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub semantic_similarity: f64,
    pub soap_score: u8,
    /// `None` when the gold note has no tokens.
    pub length_ratio: Option<f64>,
}

/// Scores one generated note against its gold text. `vectors` holds
/// precomputed evaluation embeddings keyed by text.
pub fn score_pair(note: &GeneratedNote, gold: &str, vectors: &HashMap<String, Vec<f32>>) -> NotePairScores {
    let generated = note.text();
    let cand = tokenize(&generated);
    let reference = tokenize(gold);
    let semantic = match (vectors.get(&generated), vectors.get(gold)) {
        (Some(a), Some(b)) => cosine(a, b),
        _ => 0.0,
    };
    NotePairScores {
        subject_id: note.key.subject_id,
        hadm_id: note.key.hadm_id,
        visit_index: note.visit_index,
        bleu: bleu_tokens(&cand, &reference),
        rouge1: rouge_n_tokens(&cand, &reference, 1),
        rouge2: rouge_n_tokens(&cand, &reference, 2),
        rouge_l: rouge_l_tokens(&cand, &reference),
        semantic_similarity: semantic,
        soap_score: soap_completeness(&note.sections),
        length_ratio: (!reference.is_empty()).then(|| cand.len() as f64 / reference.len() as f64),
    }
}

/// Embeds each distinct non-empty text once, so equal texts share one vector.
pub fn embed_unique(provider: &dyn EmbeddingProvider, texts: &[&str], retry: &RetryPolicy) -> Result<HashMap<String, Vec<f32>>> {
    let mut unique: Vec<String> = texts.iter().filter(|t| !t.trim().is_empty()).map(|t| t.to_string()).collect();
    unique.sort();
    unique.dedup();
    let vectors = embed_texts(provider, &unique, retry)?;
    Ok(unique.into_iter().zip(vectors).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSequences {
    pub subject_id: u64,
    /// Generated and gold texts of the same visits, in visit order.
    pub generated: Vec<String>,
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTemporal {
    pub subject_id: u64,
    pub visits: usize,
    pub consistency_generated: f64,
    pub consistency_gold: f64,
    /// Undefined when gold consistency is not positive.
    pub alignment_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalExclusion {
    pub subject_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalReport {
    pub patients: Vec<PatientTemporal>,
    pub excluded: Vec<TemporalExclusion>,
    pub undefined_ratio_count: usize,
    pub mean_consistency_generated: Option<f64>,
    pub mean_consistency_gold: Option<f64>,
    pub mean_alignment_ratio: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean cosine of adjacent notes.
pub fn adjacent_consistency(texts: &[String], vectors: &HashMap<String, Vec<f32>>) -> f64 {
    let zero: Vec<f32> = Vec::new();
    let v = |t: &String| vectors.get(t).unwrap_or(&zero);
    mean(texts.windows(2).map(|w| cosine(v(&w[0]), v(&w[1])))).unwrap_or(0.0)
}

/// Per-patient temporal consistency of generated and gold sequences and their ratio.
pub fn temporal_alignment(provider: &dyn EmbeddingProvider, sequences: &[PatientSequences], retry: &RetryPolicy) -> Result<TemporalReport> {
    let all: Vec<&str> = sequences
        .iter()
        .flat_map(|s| s.generated.iter().chain(&s.gold).map(String::as_str))
        .collect();
    let vectors = embed_unique(provider, &all, retry)?;
    Ok(temporal_from_vectors(sequences, &vectors))
}

pub fn temporal_from_vectors(sequences: &[PatientSequences], vectors: &HashMap<String, Vec<f32>>) -> TemporalReport {
    let mut report = TemporalReport::default();
    for s in sequences {
        if s.generated.len() != s.gold.len() {
            report.excluded.push(TemporalExclusion {
                subject_id: s.subject_id,
                reason: format!("{} generated vs {} gold notes", s.generated.len(), s.gold.len()),
            });
            continue;
        }
        if s.gold.len() < 2 {
            report.excluded.push(TemporalExclusion {
                subject_id: s.subject_id,
                reason: format!("{} visit(s) with paired notes; at least 2 required", s.gold.len()),
            });
            continue;
        }
        let g = adjacent_consistency(&s.generated, vectors);
        let r = adjacent_consistency(&s.gold, vectors);
        let ratio = (r > 0.0).then(|| g / r);
        if ratio.is_none() {
            report.undefined_ratio_count += 1;
        }
        report.patients.push(PatientTemporal {
            subject_id: s.subject_id,
            visits: s.gold.len(),
            consistency_generated: g,
            consistency_gold: r,
            alignment_ratio: ratio,
        });
    }
    report.mean_consistency_generated = mean(report.patients.iter().map(|p| p.consistency_generated));
    report.mean_consistency_gold = mean(report.patients.iter().map(|p| p.consistency_gold));
    report.mean_alignment_ratio = mean(report.patients.iter().filter_map(|p| p.alignment_ratio));
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub pairs: usize,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub semantic_similarity: f64,
    pub soap_completeness: f64,
    pub length_ratio: Option<f64>,
    pub length_ratio_excluded: usize,
    pub temporal_patients: usize,
    pub temporal_excluded: usize,
    pub temporal_undefined: usize,
    pub consistency_generated: Option<f64>,
    pub consistency_gold: Option<f64>,
    pub temporal_alignment_ratio: Option<f64>,
}

/// Unweighted means over scored pairs plus the temporal cohort values.
pub fn aggregate_report(pairs: &[NotePairScores], temporal: &TemporalReport) -> Result<CohortReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyReport);
    }
    let m = |f: fn(&NotePairScores) -> f64| mean(pairs.iter().map(f)).expect("non-empty");
    Ok(CohortReport {
        pairs: pairs.len(),
        bleu: m(|p| p.bleu),
        rouge1: m(|p| p.rouge1),
        rouge2: m(|p| p.rouge2),
        rouge_l: m(|p| p.rouge_l),
        semantic_similarity: m(|p| p.semantic_similarity),
        soap_completeness: m(|p| f64::from(p.soap_score)),
        length_ratio: mean(pairs.iter().filter_map(|p| p.length_ratio)),
        length_ratio_excluded: pairs.iter().filter(|p| p.length_ratio.is_none()).count(),
        temporal_patients: temporal.patients.len(),
        temporal_excluded: temporal.excluded.len(),
        temporal_undefined: temporal.undefined_ratio_count,
        consistency_generated: temporal.mean_consistency_generated,
        consistency_gold: temporal.mean_consistency_gold,
        temporal_alignment_ratio: temporal.mean_alignment_ratio,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl CohortReport {
    /// Plain-text table: metric, mean score, interpretation.
    pub fn render_table(&self) -> String {
        let rows: Vec<(&str, String, &str)> = vec![
            ("BLEU", format!("{:.4}", self.bleu), "exact n-gram overlap with the clinician note"),
            ("ROUGE-1", format!("{:.4}", self.rouge1), "unigram overlap (F1)"),
            ("ROUGE-2", format!("{:.4}", self.rouge2), "bigram overlap (F1)"),
            ("ROUGE-L", format!("{:.4}", self.rouge_l), "longest common subsequence (F1)"),
            ("Semantic Similarity", format!("{:.4}", self.semantic_similarity), "cosine of whole-note embeddings"),
            ("SOAP Completeness", format!("{:.2} / 4.0", self.soap_completeness), "sections present out of four"),
            ("Length Ratio", fmt_opt(self.length_ratio), "generated words per gold word"),
            ("Temporal Consistency (generated)", fmt_opt(self.consistency_generated), "mean adjacent-visit cosine"),
            ("Temporal Consistency (gold)", fmt_opt(self.consistency_gold), "mean adjacent-visit cosine"),
            ("Temporal Alignment Ratio", fmt_opt(self.temporal_alignment_ratio), "generated over gold consistency"),
        ];
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Metric".len());
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("Mean Score".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<w0$} | {:<w1$} | Interpretation", "Metric", "Mean Score");
        let _ = writeln!(out, "{}-+-{}-+-{}", "-".repeat(w0), "-".repeat(w1), "-".repeat(44));
        for (name, value, note) in rows {
            let _ = writeln!(out, "{name:<w0$} | {value:<w1$} | {note}");
        }
        let _ = writeln!(
            out,
            "\n{} scored visit pairs ({} without a usable length ratio); {} patients in the temporal analysis, {} excluded, {} with undefined ratio.",
            self.pairs, self.length_ratio_excluded, self.temporal_patients, self.temporal_excluded, self.temporal_undefined
        );
        out
    }
}

pub fn write_pair_scores_csv(path: &Path, pairs: &[NotePairScores]) -> Result<()> {
    let f = crate::io::create(path)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    w.write_record([
        "subject_id", "hadm_id", "visit_index", "bleu", "rouge1", "rouge2", "rouge_l", "semantic_similarity", "soap_score", "length_ratio",
    ])?;
    for p in pairs {
        w.write_record([
            p.subject_id.to_string(),
            p.hadm_id.to_string(),
            p.visit_index.to_string(),
            p.bleu.to_string(),
            p.rouge1.to_string(),
            p.rouge2.to_string(),
            p.rouge_l.to_string(),
            p.semantic_similarity.to_string(),
            p.soap_score.to_string(),
            p.length_ratio.map(|r| r.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Groups pair texts per patient, in visit order, for the temporal analysis.
pub fn sequences_by_patient<'a>(pairs: impl IntoIterator<Item = (&'a GeneratedNote, &'a str)>) -> Vec<PatientSequences> {
    let mut by: BTreeMap<u64, Vec<(usize, String, String)>> = BTreeMap::new();
    for (note, gold) in pairs {
        by.entry(note.key.subject_id).or_default().push((note.visit_index, note.text(), gold.to_string()));
    }
    by.into_iter()
        .map(|(subject_id, mut v)| {
            v.sort_by_key(|x| x.0);
            PatientSequences {
                subject_id,
                generated: v.iter().map(|x| x.1.clone()).collect(),
                gold: v.into_iter().map(|x| x.2).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    // Brute-force clipped n-gram matching over explicit lists.
    fn oracle_counts(c: &[String], r: &[String], n: usize) -> (usize, usize) {
        if c.len() < n {
            return (0, 0);
        }
        let cg: Vec<&[String]> = c.windows(n).collect();
        let mut rg: Vec<Option<&[String]>> = if r.len() >= n { r.windows(n).map(Some).collect() } else { vec![] };
        let mut m = 0;
        for g in &cg {
            if let Some(slot) = rg.iter_mut().find(|x| x.is_some_and(|x| x == *g)) {
                *slot = None;
                m += 1;
            }
        }
        (m, cg.len())
    }

    fn oracle_bleu(c: &[String], r: &[String]) -> f64 {
        if c.is_empty() {
            return 0.0;
        }
        let mut ps = vec![];
        for n in 1..=4 {
            let (m, t) = oracle_counts(c, r, n);
            if m == 0 && n == 1 {
                return 0.0;
            }
            ps.push(if m == 0 { 1.0 / (t as f64 + 1.0) } else { m as f64 / t as f64 });
        }
        let bp = if c.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len() as f64).exp() };
        bp * ps.iter().product::<f64>().powf(0.25)
    }

    fn oracle_lcs(a: &[String], b: &[String]) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        if a[0] == b[0] {
            1 + oracle_lcs(&a[1..], &b[1..])
        } else {
            oracle_lcs(&a[1..], b).max(oracle_lcs(a, &b[1..]))
        }
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("The cat, sat."), vec!["the", "cat", "sat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("BP 120/80"), vec!["bp", "120", "80"]);
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu("the cat sat on the mat", "the cat sat on the mat"), 1.0);
        assert!(bleu("alpha beta gamma delta", "one two three four") < 0.05);
        assert_eq!(bleu("", "x"), 0.0);
        let c = toks("the cat sat");
        let r = toks("the cat sat on the mat");
        // p1 = p2 = p3 = 1, no 4-grams so p4 = 1/(0+1); BP = exp(1 - 6/3)
        let want = (-1.0f64).exp();
        assert!((bleu_tokens(&c, &r) - want).abs() < 1e-12);
        assert!((oracle_bleu(&c, &r) - want).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        let a = toks("a b c d");
        let b = toks("a c b d");
        assert_eq!(lcs_length(&a, &b), 3);
        assert!((rouge_l_tokens(&a, &b) - 0.75).abs() < 1e-12);
        assert_eq!(rouge_n("same text here", "same text here", 1), 1.0);
        assert_eq!(rouge_n("same text here", "same text here", 2), 1.0);
        assert_eq!(rouge_l("same text here", "same text here"), 1.0);
        assert_eq!(rouge_n("x y", "p q", 1), 0.0);
        assert_eq!(rouge_l("x y", "p q"), 0.0);
        assert_eq!(rouge_n("", "", 1), 1.0);
        assert_eq!(rouge_n("", "a", 1), 0.0);
        assert_eq!(rouge_l("", ""), 1.0);
    }

    #[test]
    fn semantic_examples() {
        let e = HashingEmbedder::evaluation();
        let r = RetryPolicy::default();
        assert!((semantic_similarity(&e, "lungs clear", "lungs clear", &r).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(semantic_similarity(&e, "", "lungs clear", &r).unwrap(), 0.0);
        let a = e.embed_one("alpha beta");
        let b = e.embed_one("gamma delta");
        let hand: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((semantic_similarity(&e, "alpha beta", "gamma delta", &r).unwrap() - hand).abs() < 1e-9);
    }

    #[test]
    fn completeness_and_length() {
        let mut s = SoapSections { subjective: "a".into(), objective: "b".into(), assessment: "c".into(), plan: "d".into() };
        assert_eq!(soap_completeness(&s), 4);
        s.plan = "  ".into();
        assert_eq!(soap_completeness(&s), 3);
        assert_eq!(soap_completeness(&SoapSections::default()), 0);
        let gen = "w ".repeat(120);
        let gold = "w ".repeat(100);
        assert!((length_ratio(&gen, &gold).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(length_ratio("a b", "a b").unwrap(), 1.0);
        assert!(matches!(length_ratio("a", " "), Err(Error::EmptyGold)));
    }

    #[test]
    fn temporal_identity_and_exclusion() {
        let e = HashingEmbedder::evaluation();
        let seq = |id, v: &[&str]| PatientSequences {
            subject_id: id,
            generated: v.iter().map(|s| s.to_string()).collect(),
            gold: v.iter().map(|s| s.to_string()).collect(),
        };
        let rep = temporal_alignment(
            &e,
            &[seq(1, &["chest pain today", "chest pain improving", "no chest pain"]), seq(2, &["single visit"])],
            &RetryPolicy::default(),
        )
        .unwrap();
        assert_eq!(rep.patients.len(), 1);
        assert_eq!(rep.patients[0].alignment_ratio, Some(1.0));
        assert_eq!(rep.excluded.len(), 1);
        assert_eq!(rep.excluded[0].subject_id, 2);
    }

    #[test]
    fn temporal_matches_pairwise_oracle() {
        let e = HashingEmbedder::evaluation();
        let gen = ["fever and cough", "cough resolving", "discharged home"];
        let gold = ["fever cough noted", "cough better on antibiotics", "home today"];
        let s = PatientSequences {
            subject_id: 3,
            generated: gen.iter().map(|s| s.to_string()).collect(),
            gold: gold.iter().map(|s| s.to_string()).collect(),
        };
        let rep = temporal_alignment(&e, &[s], &RetryPolicy::default()).unwrap();
        let cos = |a: &str, b: &str| {
            let (x, y) = (e.embed_one(a), e.embed_one(b));
            x.iter().zip(&y).map(|(p, q)| f64::from(*p) * f64::from(*q)).sum::<f64>()
        };
        let g = (cos(gen[0], gen[1]) + cos(gen[1], gen[2])) / 2.0;
        let r = (cos(gold[0], gold[1]) + cos(gold[1], gold[2])) / 2.0;
        let p = &rep.patients[0];
        assert!((p.consistency_generated - g).abs() < 1e-6);
        assert!((p.consistency_gold - r).abs() < 1e-6);
        if r > 0.0 {
            assert!((p.alignment_ratio.unwrap() - g / r).abs() < 1e-5);
        }
    }

    fn pair(bleu: f64) -> NotePairScores {
        NotePairScores {
            subject_id: 1,
            hadm_id: 1,
            visit_index: 0,
            bleu,
            rouge1: 0.5,
            rouge2: 0.25,
            rouge_l: 0.4,
            semantic_similarity: 0.7,
            soap_score: 4,
            length_ratio: Some(1.1),
        }
    }

    #[test]
    fn aggregate_means() {
        let t = TemporalReport::default();
        let one = aggregate_report(&[pair(0.2)], &t).unwrap();
        assert_eq!(one.bleu, 0.2);
        assert_eq!(one.length_ratio, Some(1.1));
        let two = aggregate_report(&[pair(0.2), pair(0.4)], &t).unwrap();
        assert!((two.bleu - 0.3).abs() < 1e-12);
        assert_eq!(two.soap_completeness, 4.0);
        assert!(matches!(aggregate_report(&[], &t), Err(Error::EmptyReport)));
        assert!(two.render_table().contains("SOAP Completeness"));
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]).prop_map(String::from), 0..14)
    }

    proptest! {
        #[test]
        fn metrics_match_oracles(c in words(), r in words()) {
            prop_assert!((bleu_tokens(&c, &r) - oracle_bleu(&c, &r)).abs() < 1e-9);
            prop_assert_eq!(lcs_length(&c, &r), oracle_lcs(&c, &r));
            for n in 1..=2 {
                let (m, ct) = oracle_counts(&c, &r, n);
                let (_, rt) = oracle_counts(&r, &c, n);
                let want = if ct == 0 && rt == 0 {
                    if c == r { 1.0 } else { 0.0 }
                } else if m == 0 { 0.0 } else {
                    let (p, q) = (m as f64 / ct as f64, m as f64 / rt as f64);
                    2.0 * p * q / (p + q)
                };
                prop_assert!((rouge_n_tokens(&c, &r, n) - want).abs() < 1e-9);
                prop_assert!((rouge_n_tokens(&c, &r, n) - rouge_n_tokens(&r, &c, n)).abs() < 1e-12);
            }
            for v in [bleu_tokens(&c, &r), rouge_l_tokens(&c, &r), rouge_n_tokens(&c, &r, 1)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
