"""End-to-end command-line runs against temporary directories."""

import csv
import json
import subprocess
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from gptopics.cli import main
from gptopics.data import generate_synthetic


def read_manifest(out: Path) -> dict:
    with open(out / "manifest.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def read_csv_rows(path: Path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def generated_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    rc = main(["generate", "--K", "2", "--D", "8", "--W", "10", "--N", "15",
               "--seed", "3", "--out", str(out)])
    assert rc == 0
    return out


def test_generate_outputs_and_manifest(generated_dir):
    for name in ("corpus.csv", "edges.csv", "ground_truth.json", "manifest.json"):
        assert (generated_dir / name).exists()
    manifest = read_manifest(generated_dir)
    assert manifest["command"] == "generate"
    assert manifest["status"] == "ok"
    assert set(manifest["outputs"]) == {"corpus.csv", "edges.csv",
                                        "ground_truth.json", "manifest.json"}
    assert manifest["dataset_fingerprint"]["generated"]
    assert manifest["finished"] >= manifest["started"]


def test_generate_round_trips_the_synthetic_corpus(generated_dir):
    corpus, network, _ = generate_synthetic(2, 8, 10, 15, 3)
    rows = read_csv_rows(generated_dir / "corpus.csv")
    assert len(rows) == corpus.num_cells
    got = [(int(r["doc"]), int(r["word"]), int(r["count"])) for r in rows]
    want = list(zip(corpus.cell_doc.tolist(), corpus.cell_word.tolist(),
                    corpus.cell_count.tolist()))
    assert got == want
    edge_rows = read_csv_rows(generated_dir / "edges.csv")
    assert len(edge_rows) == network.num_edges
    with open(generated_dir / "ground_truth.json", "r", encoding="utf-8") as fh:
        truth = json.load(fh)
    assert truth["K"] == 2 and truth["D"] == 8 and truth["W"] == 10
    assert len(truth["doc_lengths"]) == 8
    assert np.asarray(truth["topics"]).shape == (2, 10)


@pytest.mark.parametrize("sampler", ["truncated", "slice"])
def test_fit_on_synthetic_dir(generated_dir, tmp_path, sampler):
    out = tmp_path / f"fit_{sampler}"
    rc = main(["fit", "--synthetic-dir", str(generated_dir), "--sampler", sampler,
               "--iters", "30", "--burnin", "10", "--seed", "1",
               "--snapshot-every", "5", "--out", str(out)])
    assert rc == 0
    manifest = read_manifest(out)
    assert manifest["status"] == "ok"
    assert manifest["seed"] == 1
    assert len(manifest["dataset_fingerprint"]) == 2

    trace_rows = read_csv_rows(out / "trace.csv")
    assert len(trace_rows) == 30
    assert [int(r["iter"]) for r in trace_rows] == list(range(1, 31))
    assert all(np.isfinite(float(r["loglik"])) for r in trace_rows)

    # histogram must agree with the post-burn-in part of the trace
    post = Counter(int(r["k_active"]) for r in trace_rows if int(r["iter"]) > 10)
    hist_rows = read_csv_rows(out / "k_histogram.csv")
    got = {int(r["k_active"]): int(r["count"]) for r in hist_rows}
    assert got == dict(post)

    with open(out / "posterior_summary.json", "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    assert summary["sampler"] == sampler
    assert summary["k_active_final"] == len(summary["final_state"]["active_topics"])
    assert len(summary["snapshot_k_active"]) == 4  # iters 15, 20, 25, 30
    theta = np.asarray(summary["final_state"]["theta"])
    assert theta.shape[0] == summary["k_active_final"]
    np.testing.assert_allclose(theta.sum(axis=1), 1.0, rtol=1e-9)


def test_fit_records_hyper_flags(generated_dir, tmp_path):
    out = tmp_path / "fit_flags"
    rc = main(["fit", "--synthetic-dir", str(generated_dir), "--iters", "5",
               "--burnin", "0", "--trunc-K", "9", "--b0", "2.0", "--out", str(out)])
    assert rc == 0
    manifest = read_manifest(out)
    assert manifest["flags"]["trunc_K"] == 9
    assert manifest["flags"]["b0"] == 2.0


def test_fit_failure_writes_failed_manifest(tmp_path):
    missing = tmp_path / "nowhere"
    out = tmp_path / "fit_fail"
    rc = main(["fit", "--synthetic-dir", str(missing), "--iters", "5",
               "--burnin", "0", "--out", str(out)])
    assert rc == 1
    manifest = read_manifest(out)
    assert manifest["status"] == "failed"
    assert manifest["notes"]


def test_fit_data_without_cites_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--data", "whatever.content", "--iters", "5",
              "--burnin", "0", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def citation_files(tmp_path_factory):
    """Small citation-format dataset derived from a synthetic corpus."""
    root = tmp_path_factory.mktemp("cite")
    corpus, network, _ = generate_synthetic(2, 12, 8, 20, seed=1)
    dense = np.zeros((12, 8), dtype=int)
    dense[corpus.cell_doc, corpus.cell_word] = corpus.cell_count
    content = root / "toy.content"
    with open(content, "w", encoding="utf-8") as fh:
        for d in range(12):
            counts = " ".join(str(c) for c in dense[d])
            fh.write(f"doc{d} {counts} label{d % 2}\n")
    cites = root / "toy.cites"
    with open(cites, "w", encoding="utf-8") as fh:
        for i, j in network.edges:
            fh.write(f"doc{i} doc{j}\n")
    return content, cites


def test_eval_end_to_end(citation_files, tmp_path):
    content, cites = citation_files
    out = tmp_path / "eval"
    rc = main(["eval", "--data", str(content), "--cites", str(cites),
               "--folds", "2", "--iters", "30", "--burnin", "5",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    manifest = read_manifest(out)
    assert manifest["status"] == "ok"
    agg = read_csv_rows(out / "aggregate.csv")
    assert [int(r["fold"]) for r in agg] == [1, 2]
    for fold in (1, 2):
        with open(out / f"fold_{fold}_report.json", "r", encoding="utf-8") as fh:
            report = json.load(fh)
        assert report["fold"] == fold
        assert np.isfinite(report["link_score"])
        assert np.isfinite(report["word_score"])
        assert report["num_train_docs"] + report["num_test_docs"] == 12
        assert report["mean_k_active"] >= 1


def test_eval_failure_writes_failed_manifest(citation_files, tmp_path):
    content, _ = citation_files
    out = tmp_path / "eval_fail"
    rc = main(["eval", "--data", str(content), "--cites", str(tmp_path / "no.cites"),
               "--folds", "2", "--iters", "5", "--burnin", "0", "--out", str(out)])
    assert rc == 1
    assert read_manifest(out)["status"] == "failed"


def test_module_entry_point(generated_dir, tmp_path):
    out = tmp_path / "module_fit"
    proc = subprocess.run(
        [sys.executable, "-m", "gptopics", "fit", "--synthetic-dir",
         str(generated_dir), "--iters", "3", "--burnin", "0", "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "trace.csv").exists()
