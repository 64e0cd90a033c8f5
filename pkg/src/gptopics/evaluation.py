"""Held-out scoring of fitted models: link prediction, word prediction, topic counts."""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import ChainTrace, Corpus, DocumentNetwork

logger = logging.getLogger(__name__)

# Arguments of logarithms in the word score are floored here so a structurally
# impossible (document, word, topic) term stays finite instead of sinking the
# whole sum to -inf. Floored terms are counted and logged.
LOG_FLOOR_ARG = 1e-300


def word_topic_distribution(theta: np.ndarray) -> np.ndarray:
    """Per-word distribution over topics: column-normalized transpose of theta.

    Raises ValueError naming the word index if some word has zero mass under
    every topic.
    """
    theta = np.asarray(theta, dtype=np.float64)
    col = theta.sum(axis=0)
    dead = np.nonzero(col <= 0)[0]
    if dead.size:
        raise ValueError(f"word {int(dead[0])} has zero mass under every topic")
    return theta.T / col[:, None]


def _doc_cells(corpus: Corpus, d: int):
    mask = corpus.cell_doc == d
    return corpus.cell_word[mask], corpus.cell_count[mask]


def link_prediction_score(test_docs, train_docs, network: DocumentNetwork,
                          doc_interest: np.ndarray, word_topics: np.ndarray,
                          corpus: Corpus) -> float:
    """Log cosine affinity between linked test and train documents.

    For every link between a test document and a train document, each test
    word contributes its count times the log cosine similarity between the
    train document's topic interests and the word's topic distribution.
    Zero-length vectors in a cosine are skipped with a counted warning.
    """
    test_docs = np.asarray(test_docs, dtype=np.int64)
    train_set = set(int(d) for d in np.asarray(train_docs, dtype=np.int64))
    interest = np.asarray(doc_interest, dtype=np.float64)
    wt = np.asarray(word_topics, dtype=np.float64)
    wt_norm = np.linalg.norm(wt, axis=1)
    score = 0.0
    skipped = 0
    for d in test_docs:
        words, counts = _doc_cells(corpus, int(d))
        if words.size == 0:
            continue
        partners = [l for l in network.neighbors(int(d)) if int(l) in train_set]
        for l in partners:
            t_vec = interest[int(l)]
            t_norm = np.linalg.norm(t_vec)
            if t_norm == 0.0:
                skipped += words.size
                continue
            ok = wt_norm[words] > 0
            if not ok.all():
                skipped += int((~ok).sum())
            cos = (wt[words[ok]] @ t_vec) / (wt_norm[words[ok]] * t_norm)
            cos = np.maximum(cos, LOG_FLOOR_ARG)
            score += float(counts[ok] @ np.log(cos))
    if skipped:
        logger.warning("link score skipped %d term(s) with a zero-length vector", skipped)
    return score


def word_prediction_score(test_docs, train_docs, network: DocumentNetwork,
                          doc_interest: np.ndarray, theta: np.ndarray,
                          corpus: Corpus) -> float:
    """Log score of held-out words under neighbor-averaged topic interests.

    Each test document's interest vector is the mean of its train neighbors'
    interests; a test word then contributes its count times
    sum_k log(interest[k] * theta[k, word]). Test documents without any train
    neighbor are excluded and counted. Zero log arguments are floored at
    LOG_FLOOR_ARG, also with a counted warning.
    """
    test_docs = np.asarray(test_docs, dtype=np.int64)
    train_set = set(int(d) for d in np.asarray(train_docs, dtype=np.int64))
    interest = np.asarray(doc_interest, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    score = 0.0
    no_neighbor = 0
    floored = 0
    for d in test_docs:
        partners = [l for l in network.neighbors(int(d)) if int(l) in train_set]
        if not partners:
            no_neighbor += 1
            continue
        t_vec = interest[np.array(partners, dtype=np.int64)].mean(axis=0)
        words, counts = _doc_cells(corpus, int(d))
        if words.size == 0:
            continue
        args = t_vec[None, :] * theta[:, words].T  # (n_words, K)
        low = args < LOG_FLOOR_ARG
        if low.any():
            floored += int(low.any(axis=1).sum())
        score += float(counts @ np.log(np.maximum(args, LOG_FLOOR_ARG)).sum(axis=1))
    if no_neighbor:
        logger.warning("word score excluded %d test document(s) with no train neighbor",
                       no_neighbor)
    if floored:
        logger.warning("word score floored log arguments for %d (document, word) term(s)",
                       floored)
    return score


def topic_count_histogram(trace: ChainTrace, burnin: int) -> dict:
    """Histogram {k_active: sweeps} over post-burn-in trace records."""
    records = [rec for rec in trace.records if rec.iteration > burnin]
    if not records:
        raise ValueError("burnin leaves no trace records")
    return dict(sorted(Counter(rec.k_active for rec in records).items()))


@dataclass
class EvalReport:
    """Held-out scores and chain summaries for one cross-validation fold."""

    fold: int
    link_score: float
    word_score: float
    k_histogram: dict
    mean_k_active: float
    log_likelihoods: list = field(default_factory=list)
    num_test_docs: int = 0
    num_train_docs: int = 0

    def to_json(self) -> str:
        payload = dict(fold=self.fold, link_score=self.link_score,
                       word_score=self.word_score,
                       k_histogram={str(k): v for k, v in self.k_histogram.items()},
                       mean_k_active=self.mean_k_active,
                       log_likelihoods=list(self.log_likelihoods),
                       num_test_docs=self.num_test_docs,
                       num_train_docs=self.num_train_docs)
        return json.dumps(payload, indent=2)
