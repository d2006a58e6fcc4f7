"""End-to-end smoke test of the `dense` Python module (offline providers)."""

import json
import pathlib
import sys
import tempfile

import dense


def main() -> int:
    assert len(dense.note_types()) == 16
    assert dense.classify_label("Case Management ", "DC Plan") == "discharge_planning"
    assert dense.classify_label("Physician ", "--error--") == "misc_notes"

    assert "<DATE>" in dense.clean_text("Seen on [**2150-01-02**].")
    sections = dense.preprocess_note("HPI: chest pain\nPlan: aspirin", "progress_notes")
    assert sections and all(isinstance(h, str) and isinstance(b, str) for h, b in sections)

    text = "x" * 7000
    windows = dense.chunk_text(text)
    assert windows[0][:2] == (0, 3000)
    assert "".join(w[2][max(0, prev - w[0]):] for w, prev in zip(windows, [0] + [w[1] for w in windows])) == text

    assert dense.bleu("the patient is stable today", "the patient is stable today") == 1.0
    assert dense.rouge_n("a b c", "a b d", n=1) > 0.6
    assert dense.rouge_l("a b c", "") == 0.0
    assert dense.soap_completeness("Subjective: ok\nObjective: ok\nAssessment: ok\nPlan: ok") == 4

    vecs = dense.embed(["lasix given", "lasix given"], dimension=32)
    assert vecs[0] == vecs[1] and abs(sum(v * v for v in vecs[0]) - 1.0) < 1e-5

    try:
        dense.chunk_text("abc", window_size=10, overlap=10)
    except dense.DenseError:
        pass
    else:
        raise AssertionError("overlap >= window must raise")

    with tempfile.TemporaryDirectory() as tmp:
        root = pathlib.Path(tmp)
        n = dense.synth_corpus(str(root / "notes.csv"), patients=4, min_visits=3, max_visits=4, seed=2)
        assert n > 0
        (root / "dense.toml").write_text(
            '[paths]\ninput_csv = "notes.csv"\nworkdir = "work"\n'
            "[cohort]\nmin_visits = 1\n"
        )
        # the default corpus rarely has progress notes, so run up to evaluation
        stages = ["ingest", "classify", "pivot", "preprocess", "chunk", "index", "generate"]
        out = dense.run_pipeline(str(root / "dense.toml"), stages=stages, offline=True)
        assert [s for s, _, _ in out] == stages and all(ran for _, ran, _ in out)
        again = dense.run_pipeline(str(root / "dense.toml"), stages=stages, offline=True)
        assert not any(ran for _, ran, _ in again)
        notes = [json.loads(line) for line in (root / "work" / "generated.jsonl").read_text().splitlines()]
        assert notes and all(dense.soap_completeness(n["raw_output"]) == 4 for n in notes)
        try:
            dense.run_pipeline(str(root / "dense.toml"), stages=["nope"])
        except dense.DenseError:
            pass
        else:
            raise AssertionError("unknown stage must raise")

    print("smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
