use std::path::Path;

use dense_core::evaluation::CohortReport;
use dense_core::io::{read_json, read_jsonl, write_notes_csv_file};
use dense_core::pipeline::{ErrorReport, Pipeline, PipelineConfig, Stage};
use dense_core::synth::{generate_synthetic_corpus, SyntheticCorpusSpec};
use dense_core::taxonomy::NoteType;
use dense_core::Error;

fn small_spec() -> SyntheticCorpusSpec {
    let mut spec = SyntheticCorpusSpec {
        patient_count: 6,
        visits_per_patient: (3, 5),
        seed: 11,
        ..SyntheticCorpusSpec::default()
    };
    spec.coverage.insert(NoteType::ProgressNotes, 0.6);
    spec
}

fn setup(dir: &Path) -> PipelineConfig {
    let notes = generate_synthetic_corpus(&small_spec()).unwrap();
    write_notes_csv_file(&dir.join("notes.csv"), &notes).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.resolve_paths(dir);
    cfg.chunking.window_size = 600;
    cfg.chunking.overlap = 60;
    cfg
}

fn ran(outcomes: &[dense_core::pipeline::StageOutcome]) -> Vec<Stage> {
    outcomes.iter().filter(|o| o.ran).map(|o| o.stage).collect()
}

#[test]
fn offline_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(setup(dir.path())).unwrap();
    let out = p.run_all().unwrap();
    assert_eq!(ran(&out), Stage::ALL.to_vec());
    for s in Stage::ALL {
        for rel in s.outputs() {
            assert!(p.path(rel).exists(), "{rel} missing");
        }
    }
    let report: CohortReport = read_json(&p.path("report.json")).unwrap();
    assert!(report.pairs > 0);
    assert_eq!(report.soap_completeness, 4.0);
    assert!(!p.path("error.json").exists());
    assert!(!p.path("cache").exists());
}

#[test]
fn rerun_skips_and_param_change_reruns_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    Pipeline::new(cfg.clone()).unwrap().run_all().unwrap();

    let again = Pipeline::new(cfg.clone()).unwrap().run_all().unwrap();
    assert!(ran(&again).is_empty());

    let mut changed = cfg.clone();
    changed.chunking.window_size = 900;
    let out = Pipeline::new(changed).unwrap().run_all().unwrap();
    assert_eq!(ran(&out)[0], Stage::Chunk);
    assert!(ran(&out).contains(&Stage::Index));
    assert!(ran(&out).contains(&Stage::Generate));
    assert!(!ran(&out).contains(&Stage::Preprocess));

    let mut forced = Pipeline::new(cfg).unwrap();
    forced.force = true;
    assert_eq!(ran(&forced.run_all().unwrap()).len(), Stage::ALL.len());
}

#[test]
fn deleted_output_reruns_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let p = Pipeline::new(cfg).unwrap();
    p.run_all().unwrap();
    std::fs::remove_dir_all(p.path("index")).unwrap();
    let out = p.run_all().unwrap();
    assert_eq!(ran(&out), vec![Stage::Index]);
    std::fs::remove_file(p.path("chunks.jsonl")).unwrap();
    let out = p.run_all().unwrap();
    // identical chunks give identical downstream digests
    assert_eq!(ran(&out), vec![Stage::Chunk]);
}

#[test]
fn missing_upstream_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(setup(dir.path())).unwrap();
    let err = p.run(&[Stage::Chunk]).unwrap_err();
    assert!(matches!(&err, Error::MissingStage { stage, missing, .. } if stage == "chunk" && missing == "preprocess"));
    let report: ErrorReport = read_json(&p.path("error.json")).unwrap();
    assert_eq!(report.stage, Some(Stage::Chunk));
    assert_eq!(report.kind, "missing_stage");
}

#[test]
fn index_provider_mismatch_blocks_generation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let p = Pipeline::new(cfg.clone()).unwrap();
    p.run(&Stage::ALL[..6]).unwrap();
    let mut other = cfg;
    other.providers.embed_retrieval.dimension = Some(128);
    let q = Pipeline::new(other).unwrap();
    let mut manifest = q.load_manifest().unwrap();
    let err = q.run_stage(Stage::Generate, &mut manifest).unwrap_err();
    assert!(matches!(err, Error::ProviderMismatch { .. }));
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = Pipeline::new(setup(a.path())).unwrap();
    let mut pb = Pipeline::new(setup(b.path())).unwrap();
    pb.jobs = Some(1);
    pa.run_all().unwrap();
    pb.run_all().unwrap();
    for rel in ["generated.jsonl", "scores.json", "pair_scores.csv", "temporal.json", "report.json", "report.txt"] {
        let x = std::fs::read(pa.path(rel)).unwrap();
        let y = std::fs::read(pb.path(rel)).unwrap();
        assert!(x == y, "{rel} differs");
    }
}

#[test]
fn generated_notes_cover_the_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(setup(dir.path())).unwrap();
    p.run_all().unwrap();
    let timelines: Vec<dense_core::corpus::PatientTimeline> = read_jsonl(&p.path("timelines.jsonl")).unwrap();
    let notes: Vec<dense_core::generator::GeneratedNote> = read_jsonl(&p.path("generated.jsonl")).unwrap();
    let visits: usize = timelines.iter().map(|t| t.len()).sum();
    assert_eq!(notes.len(), visits);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dense.toml");
    std::fs::write(
        &path,
        "seed = 3\n[paths]\ninput_csv = \"in.csv\"\nworkdir = \"w\"\n[retrieval]\nk_global = 6\n[providers.generate]\nmax_prompt_chars = 8000\n",
    )
    .unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.paths.input_csv, dir.path().join("in.csv"));
    assert_eq!(cfg.retrieval.k_global, 6);
    assert_eq!(cfg.providers.generate.max_prompt_chars, 8000);
    cfg.validate().unwrap();
    let err = Pipeline::new(cfg).unwrap().run_all().unwrap_err();
    assert!(matches!(err, Error::Config { field, .. } if field == "paths.input_csv"));
}

#[test]
fn example_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../dense.example.toml");
    let cfg = PipelineConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    let mut defaults = PipelineConfig::default();
    defaults.resolve_paths(path.parent().unwrap());
    assert_eq!(cfg, defaults);
}
