use dense::{bleu, chunk_text, classify_label, embed, note_types, preprocess_note, rouge_l, rouge_n, soap_completeness, synth_corpus};

#[test]
fn labels_and_types() {
    assert_eq!(note_types().len(), 16);
    assert_eq!(classify_label("Consult", "Cardiology Consult", None).unwrap(), "consult_notes");
    assert!(preprocess_note("x", "not_a_type").is_err());
}

#[test]
fn windows_cover_text() {
    let text: String = "abcdefghij".repeat(700);
    let w = chunk_text(&text, 3000, 300).unwrap();
    assert_eq!(w.first().unwrap().0, 0);
    assert_eq!(w.last().unwrap().1, 7000);
    assert!(w.windows(2).all(|p| p[1].0 == p[0].1 - 300));
    assert!(chunk_text(&text, 10, 10).is_err());
}

#[test]
fn metrics_and_embeddings() {
    assert_eq!(bleu("a b c d e", "a b c d e"), 1.0);
    assert_eq!(rouge_n("a b", "a b", 2), 1.0);
    assert_eq!(rouge_l("", ""), 1.0);
    assert_eq!(soap_completeness("S: a\nO: b\nA: c"), 3);
    let v = embed(vec!["heparin drip".into()], 16).unwrap();
    assert!((v[0].iter().map(|x| x * x).sum::<f32>() - 1.0).abs() < 1e-5);
    assert!(embed(vec![], 0).is_err());
}

#[test]
fn synth_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n.csv");
    let n = synth_corpus(out.clone(), 3, 2, 3, 9).unwrap();
    assert!(n > 0);
    let lines = std::fs::read_to_string(&out).unwrap().lines().count();
    assert!(lines > n);
}
