"""Command-line front end: generate synthetic data, fit a sampler, cross-validate.

Every command writes its outputs plus a manifest.json into --out; the manifest
echoes the flags, fingerprints the inputs, and inventories every file written,
so a run can be reproduced from the manifest alone.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Corpus, DocumentNetwork, Hyperparameters, default_truncation
from .data import generate_synthetic, kfold_split, load_citation_dataset, subset_corpus, subset_network
from .evaluation import (EvalReport, link_prediction_score, topic_count_histogram,
                         word_prediction_score, word_topic_distribution)
from .samplers import SamplerConfig, doc_topic_proportions, run_slice, run_truncated

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    """Reproducibility record written alongside every command's outputs."""

    command: str
    version: str
    flags: dict
    started: str
    finished: str = ""
    seed: int | None = None
    dataset_fingerprint: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    status: str = "running"
    notes: list = field(default_factory=list)

    def write(self, out_dir: Path):
        path = out_dir / "manifest.json"
        if "manifest.json" not in self.outputs:
            self.outputs.append("manifest.json")
        payload = dict(self.__dict__)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        return path


def _flag_dict(args) -> dict:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    return flags


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()) + "Z"


def _fingerprint_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def _fingerprint_arrays(*arrays) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()[:16]


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(x) -> str:
    return repr(float(x))


def _hyper_from_args(args, num_docs: int) -> Hyperparameters:
    trunc = args.trunc_K if args.trunc_K is not None else default_truncation(num_docs)
    return Hyperparameters(a0=args.a0, c0=args.c0, b0=args.b0, alpha=args.alpha,
                           alpha0=args.alpha0, gamma_mass=args.gamma,
                           truncation_K=trunc)


def _add_hyper_flags(parser):
    parser.add_argument("--a0", type=float, default=1.0, help="beta prior shape on q")
    parser.add_argument("--c0", type=float, default=1.0, help="beta prior shape on 1 - q")
    parser.add_argument("--b0", type=float, default=1.0, help="gamma shape of the document scales")
    parser.add_argument("--alpha", type=float, default=1.0, help="gamma-process concentration")
    parser.add_argument("--alpha0", type=float, default=1.0, help="topic-word Dirichlet parameter")
    parser.add_argument("--gamma", type=float, default=1.0, help="gamma-process base mass")
    parser.add_argument("--trunc-K", type=int, default=None,
                        help="truncation level (default: 10 per document, capped at 2000)")


def _add_fit_flags(parser):
    parser.add_argument("--sampler", choices=("truncated", "slice"), default="truncated")
    parser.add_argument("--iters", type=int, default=1000)
    parser.add_argument("--burnin", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--snapshot-every", type=int, default=10)
    _add_hyper_flags(parser)


def _load_synthetic_dir(path: Path):
    """Read a corpus and network written by the generate command."""
    corpus_path = path / "corpus.csv"
    edges_path = path / "edges.csv"
    truth_path = path / "ground_truth.json"
    num_docs = vocab_size = None
    if truth_path.exists():
        with open(truth_path, "r", encoding="utf-8") as fh:
            truth = json.load(fh)
        num_docs = truth["D"]
        vocab_size = truth["W"]
    entries = []
    with open(corpus_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            entries.append((int(row["doc"]), int(row["word"]), int(row["count"])))
    pairs = []
    with open(edges_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            pairs.append((int(row["src"]), int(row["dst"])))
    if num_docs is None:
        num_docs = 1 + max([d for d, _, _ in entries] + [i for p in pairs for i in p])
        vocab_size = 1 + max(n for _, n, _ in entries)
    corpus = Corpus.from_entries(num_docs, vocab_size, entries)
    network = DocumentNetwork.from_edges(num_docs, pairs)
    return corpus, network


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="generate", version=__version__,
                           flags=_flag_dict(args), started=_now(), seed=args.seed)
    corpus, network, truth = generate_synthetic(args.K, args.D, args.W, args.N, args.seed)
    _write_csv(out / "corpus.csv", ["doc", "word", "count"],
               zip(corpus.cell_doc.tolist(), corpus.cell_word.tolist(),
                   corpus.cell_count.tolist()))
    manifest.outputs.append("corpus.csv")
    _write_csv(out / "edges.csv", ["src", "dst"],
               [(int(i), int(j)) for i, j in network.edges])
    manifest.outputs.append("edges.csv")
    payload = dict(K=args.K, D=args.D, W=args.W, N=args.N, seed=args.seed,
                   link_threshold=truth.link_threshold,
                   doc_lengths=truth.doc_lengths.tolist(),
                   topics=truth.topics.tolist(),
                   doc_interest=truth.doc_interest.tolist())
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    manifest.outputs.append("ground_truth.json")
    manifest.dataset_fingerprint["generated"] = _fingerprint_arrays(
        corpus.cell_doc, corpus.cell_word, corpus.cell_count, network.edges)
    manifest.status = "ok"
    manifest.finished = _now()
    manifest.write(out)
    logger.info("generated %d documents, %d links, %d vocabulary words",
                corpus.num_docs, network.num_edges, corpus.vocab_size)
    return 0


def _load_fit_inputs(args, manifest):
    if args.synthetic_dir:
        corpus, network = _load_synthetic_dir(Path(args.synthetic_dir))
        for name in ("corpus.csv", "edges.csv"):
            p = Path(args.synthetic_dir) / name
            manifest.dataset_fingerprint[str(p)] = _fingerprint_file(p)
    else:
        corpus, network = load_citation_dataset(args.data, args.cites)
        manifest.dataset_fingerprint[args.data] = _fingerprint_file(args.data)
        manifest.dataset_fingerprint[args.cites] = _fingerprint_file(args.cites)
    return corpus, network


def _run_sampler(corpus, network, hyper, config):
    runner = run_truncated if config.mode == "truncated" else run_slice
    return runner(corpus, network, hyper, config)


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="fit", version=__version__,
                           flags=_flag_dict(args), started=_now(), seed=args.seed)
    try:
        corpus, network = _load_fit_inputs(args, manifest)
        hyper = _hyper_from_args(args, corpus.num_docs)
        config = SamplerConfig(max_iter=args.iters, burnin=args.burnin, seed=args.seed,
                               mode=args.sampler, snapshot_every=args.snapshot_every)
        state, trace = _run_sampler(corpus, network, hyper, config)
        _write_csv(out / "trace.csv", ["iter", "loglik", "k_active"],
                   [(rec.iteration, _fmt(rec.log_likelihood), rec.k_active)
                    for rec in trace.records])
        manifest.outputs.append("trace.csv")
        if args.iters > 0:
            hist = topic_count_histogram(trace, args.burnin)
        else:
            hist = {}
        _write_csv(out / "k_histogram.csv", ["k_active", "count"], sorted(hist.items()))
        manifest.outputs.append("k_histogram.csv")
        act = sorted(int(k) for k in np.nonzero(state.alloc.topic_totals() > 0)[0])
        idx = np.array(act, dtype=np.int64)
        summary = dict(
            sampler=args.sampler,
            iterations=args.iters,
            burnin=args.burnin,
            seed=args.seed,
            k_active_final=len(act),
            snapshot_k_active=[dict(iteration=s.iteration, k_active=s.k_active)
                               for s in trace.snapshots],
            # topic labels switch between sweeps, so no cross-snapshot average
            # is reported; these are the final sweep's active topics
            final_state=dict(
                active_topics=act,
                pi=state.pi[idx].tolist(),
                theta=state.theta[idx].tolist(),
                doc_topic_proportions=doc_topic_proportions(state, idx).tolist()),
        )
        with open(out / "posterior_summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh)
            fh.write("\n")
        manifest.outputs.append("posterior_summary.json")
        manifest.status = "ok"
    except Exception as exc:
        manifest.status = "failed"
        manifest.notes.append(f"{type(exc).__name__}: {exc}")
        manifest.notes.append("outputs may be partial")
        manifest.finished = _now()
        manifest.write(out)
        logger.error("fit failed: %s", exc)
        return 1
    manifest.finished = _now()
    manifest.write(out)
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="eval", version=__version__,
                           flags=_flag_dict(args), started=_now(), seed=args.seed)
    try:
        corpus, network = load_citation_dataset(args.data, args.cites)
        manifest.dataset_fingerprint[args.data] = _fingerprint_file(args.data)
        manifest.dataset_fingerprint[args.cites] = _fingerprint_file(args.cites)
        split = kfold_split(corpus.num_docs, args.folds, args.seed)
        rows = []
        for fold in range(1, args.folds + 1):
            report = _evaluate_fold(corpus, network, split, fold, args)
            path = out / f"fold_{fold}_report.json"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(report.to_json())
                fh.write("\n")
            manifest.outputs.append(path.name)
            rows.append((fold, _fmt(report.link_score), _fmt(report.word_score),
                         _fmt(report.mean_k_active)))
        _write_csv(out / "aggregate.csv",
                   ["fold", "link_score", "word_score", "mean_k_active"], rows)
        manifest.outputs.append("aggregate.csv")
        manifest.status = "ok"
    except Exception as exc:
        manifest.status = "failed"
        manifest.notes.append(f"{type(exc).__name__}: {exc}")
        manifest.notes.append("outputs may be partial")
        manifest.finished = _now()
        manifest.write(out)
        logger.error("eval failed: %s", exc)
        return 1
    manifest.finished = _now()
    manifest.write(out)
    return 0


def _evaluate_fold(corpus, network, split, fold, args) -> EvalReport:
    train = split.train_docs(fold)
    test = split.test_docs(fold)
    sub_corpus = subset_corpus(corpus, train)
    sub_network = subset_network(network, train)
    hyper = _hyper_from_args(args, sub_corpus.num_docs)
    config = SamplerConfig(max_iter=args.iters, burnin=args.burnin,
                           seed=args.seed + fold, mode=args.sampler,
                           snapshot_every=args.snapshot_every)
    state, trace = _run_sampler(sub_corpus, sub_network, hyper, config)
    act = sorted(int(k) for k in np.nonzero(state.alloc.topic_totals() > 0)[0])
    idx = np.array(act, dtype=np.int64)
    train_interest = doc_topic_proportions(state, idx)
    interest = np.zeros((corpus.num_docs, len(act)))
    interest[train] = train_interest
    theta_active = state.theta[idx]
    word_topics = word_topic_distribution(theta_active)
    link = link_prediction_score(test, train, network, interest, word_topics, corpus)
    word = word_prediction_score(test, train, network, interest, theta_active, corpus)
    hist = topic_count_histogram(trace, args.burnin)
    post = [rec.k_active for rec in trace.records if rec.iteration > args.burnin]
    return EvalReport(fold=fold, link_score=link, word_score=word,
                      k_histogram=hist,
                      mean_k_active=float(np.mean(post)),
                      log_likelihoods=[rec.log_likelihood for rec in trace.records],
                      num_test_docs=int(test.size), num_train_docs=int(train.size))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gptopics",
        description="Gamma-process topic models on linked document collections")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a synthetic linked corpus")
    gen.add_argument("--K", type=int, required=True, help="number of topics")
    gen.add_argument("--D", type=int, required=True, help="number of documents")
    gen.add_argument("--W", type=int, required=True, help="vocabulary size")
    gen.add_argument("--N", type=int, required=True, help="maximum document length")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    fit = sub.add_parser("fit", help="fit one sampler to a dataset")
    src = fit.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="content file (id, counts, label per line)")
    src.add_argument("--synthetic-dir", help="directory written by the generate command")
    fit.add_argument("--cites", help="citation file (target source per line)")
    _add_fit_flags(fit)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    ev = sub.add_parser("eval", help="k-fold held-out evaluation")
    ev.add_argument("--data", required=True)
    ev.add_argument("--cites", required=True)
    ev.add_argument("--folds", type=int, default=5)
    _add_fit_flags(ev)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fit" and args.data and not args.cites:
        parser.error("--data requires --cites")
    try:
        return args.func(args)
    except Exception as exc:  # argparse handles its own errors with code 2
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
