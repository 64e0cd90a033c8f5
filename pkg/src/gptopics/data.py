"""Dataset ingestion, synthetic corpus generation, and cross-validation splits."""

import logging
from dataclasses import dataclass

import numpy as np

from .core import Corpus, DocumentNetwork

logger = logging.getLogger(__name__)

# Inner-product cutoff above which two synthetic documents are linked.
LINK_THRESHOLD = 0.2


class DatasetFormatError(ValueError):
    """A dataset file does not parse; the message names the offending line."""


def load_citation_dataset(content_path, cites_path):
    """Load a whitespace-separated citation dataset.

    The content file holds one document per line: an identifier, a fixed-width
    block of integer word counts, and a trailing label kept as opaque
    metadata. The cites file holds one directed reference per line as a
    (target, source) identifier pair; links are made undirected, deduplicated,
    and stripped of self-loops, and references to unknown identifiers are
    dropped with a logged count. Returns (Corpus, DocumentNetwork).
    """
    doc_ids, labels = [], []
    cell_doc, cell_word, cell_count = [], [], []
    width = None
    with open(content_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise DatasetFormatError(
                    f"{content_path}: line {lineno}: expected id, counts, label")
            if width is None:
                width = len(fields) - 2
            elif len(fields) - 2 != width:
                raise DatasetFormatError(
                    f"{content_path}: line {lineno}: expected {width} word fields, "
                    f"found {len(fields) - 2}")
            d = len(doc_ids)
            doc_ids.append(fields[0])
            labels.append(fields[-1])
            for n, raw in enumerate(fields[1:-1]):
                try:
                    value = int(raw)
                except ValueError:
                    raise DatasetFormatError(
                        f"{content_path}: line {lineno}: non-integer count {raw!r}") from None
                if value < 0:
                    raise DatasetFormatError(
                        f"{content_path}: line {lineno}: negative count {value}")
                if value:
                    cell_doc.append(d)
                    cell_word.append(n)
                    cell_count.append(value)
    if width is None:
        raise DatasetFormatError(f"{content_path}: no documents")
    if len(set(doc_ids)) != len(doc_ids):
        dupe = next(i for i in doc_ids if doc_ids.count(i) > 1)
        raise DatasetFormatError(f"{content_path}: duplicate document id {dupe!r}")
    corpus = Corpus(num_docs=len(doc_ids), vocab_size=width,
                    cell_doc=np.array(cell_doc, dtype=np.int64),
                    cell_word=np.array(cell_word, dtype=np.int64),
                    cell_count=np.array(cell_count, dtype=np.int64),
                    doc_ids=doc_ids, doc_labels=labels)
    index = {ident: i for i, ident in enumerate(doc_ids)}
    pairs = []
    unknown = 0
    with open(cites_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise DatasetFormatError(
                    f"{cites_path}: line {lineno}: expected a target and a source id")
            target, source = fields
            if target not in index or source not in index:
                unknown += 1
                continue
            pairs.append((index[target], index[source]))
    if unknown:
        logger.info("dropped %d reference(s) to unknown document ids from %s",
                    unknown, cites_path)
    network = DocumentNetwork.from_edges(len(doc_ids), pairs)
    dropped = len(pairs) - network.num_edges
    if dropped:
        logger.info("dropped %d duplicate or self-referential link(s) from %s",
                    dropped, cites_path)
    return corpus, network


@dataclass
class SyntheticGroundTruth:
    """Generating quantities of a synthetic linked corpus."""

    topics: np.ndarray        # (K, W) rows on the simplex
    doc_interest: np.ndarray  # (D, K) rows on the simplex
    doc_lengths: np.ndarray   # (D,)
    link_threshold: float
    seed: int

    @property
    def num_topics(self) -> int:
        return int(self.topics.shape[0])


def generate_synthetic(K: int, D: int, W: int, N: int, seed: int):
    """Sample a linked corpus with known topics.

    Topics are flat-Dirichlet draws over W words and every document gets a
    flat-Dirichlet interest vector over the K topics. Document d holds a
    uniform number of tokens between ceil(N / 2) and N, each drawn by picking
    a topic from the interest vector and then a word from that topic.
    Documents are linked exactly when their interest vectors' inner product
    exceeds 0.2. Returns (Corpus, DocumentNetwork, SyntheticGroundTruth).
    """
    if min(K, D, W) < 1 or N < 2:
        raise ValueError("need K, D, W >= 1 and N >= 2")
    rng = np.random.default_rng(seed)
    topics = rng.dirichlet(np.ones(W), size=K)
    interest = rng.dirichlet(np.ones(K), size=D)
    lengths = rng.integers(int(np.ceil(N / 2)), N + 1, size=D)
    topic_cdf = np.cumsum(topics, axis=1)
    topic_cdf[:, -1] = 1.0
    cell_doc, cell_word, cell_count = [], [], []
    for d in range(D):
        z = rng.choice(K, size=int(lengths[d]), p=interest[d])
        u = rng.random(z.size)
        words = (topic_cdf[z] <= u[:, None]).sum(axis=1)
        counts = np.bincount(words, minlength=W)
        hit = np.nonzero(counts)[0]
        cell_doc.append(np.full(hit.size, d, dtype=np.int64))
        cell_word.append(hit)
        cell_count.append(counts[hit])
    corpus = Corpus(D, W, np.concatenate(cell_doc), np.concatenate(cell_word),
                    np.concatenate(cell_count))
    gram = interest @ interest.T
    ii, jj = np.nonzero(np.triu(gram > LINK_THRESHOLD, k=1))
    network = DocumentNetwork(D, np.stack([ii, jj], axis=1))
    truth = SyntheticGroundTruth(topics=topics, doc_interest=interest,
                                 doc_lengths=lengths, link_threshold=LINK_THRESHOLD,
                                 seed=seed)
    return corpus, network, truth


@dataclass
class FoldSplit:
    """Partition of documents into folds numbered 1..num_folds."""

    assignments: np.ndarray
    num_folds: int

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        if self.num_folds < 2:
            raise ValueError("need at least two folds")
        present = set(np.unique(self.assignments).tolist())
        if not present <= set(range(1, self.num_folds + 1)):
            raise ValueError("fold assignments out of range")

    def test_docs(self, fold: int) -> np.ndarray:
        if not 1 <= fold <= self.num_folds:
            raise ValueError(f"fold {fold} out of range")
        return np.nonzero(self.assignments == fold)[0]

    def train_docs(self, fold: int) -> np.ndarray:
        if not 1 <= fold <= self.num_folds:
            raise ValueError(f"fold {fold} out of range")
        return np.nonzero(self.assignments != fold)[0]


def kfold_split(num_docs: int, num_folds: int, seed: int) -> FoldSplit:
    """Seeded near-equal partition: shuffled documents dealt round-robin."""
    if num_folds < 2 or num_folds > num_docs:
        raise ValueError("num_folds must be between 2 and the document count")
    rng = np.random.default_rng(seed)
    order = rng.permutation(num_docs)
    assignments = np.empty(num_docs, dtype=np.int64)
    assignments[order] = 1 + np.arange(num_docs) % num_folds
    return FoldSplit(assignments=assignments, num_folds=num_folds)


def subset_corpus(corpus: Corpus, docs: np.ndarray) -> Corpus:
    """Corpus restricted to the given documents, renumbered in the given order."""
    docs = np.asarray(docs, dtype=np.int64)
    new_index = np.full(corpus.num_docs, -1, dtype=np.int64)
    new_index[docs] = np.arange(docs.size)
    mask = new_index[corpus.cell_doc] >= 0
    return Corpus(num_docs=docs.size, vocab_size=corpus.vocab_size,
                  cell_doc=new_index[corpus.cell_doc[mask]],
                  cell_word=corpus.cell_word[mask],
                  cell_count=corpus.cell_count[mask],
                  vocab=list(corpus.vocab),
                  doc_ids=[corpus.doc_ids[d] for d in docs] if corpus.doc_ids else None,
                  doc_labels=[corpus.doc_labels[d] for d in docs] if corpus.doc_labels else None)


def subset_network(network: DocumentNetwork, docs: np.ndarray) -> DocumentNetwork:
    """Induced subnetwork on the given documents, renumbered in the given order."""
    docs = np.asarray(docs, dtype=np.int64)
    new_index = np.full(network.num_docs, -1, dtype=np.int64)
    new_index[docs] = np.arange(docs.size)
    kept = []
    for i, j in network.edges:
        a, b = new_index[i], new_index[j]
        if a >= 0 and b >= 0:
            kept.append((a, b))
    return DocumentNetwork.from_edges(docs.size, kept)
