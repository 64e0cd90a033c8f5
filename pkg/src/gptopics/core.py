"""Model state, hyperparameters, and the Poisson observation model shared by both samplers.

Each document-word count w[d, n] is treated as Poisson with rate
sum_k theta[k, n] * r[d, k] * pi[k] * beta[d, k]: a global weighted topic set
(pi, theta) is thinned per document by binary keep-indicators r and rescaled by
per-document gamma weights beta. Conditional on the total count, the split of
w[d, n] across topics is multinomial in the per-topic rates, which is the form
both Gibbs samplers work with.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln

logger = logging.getLogger(__name__)

# Smallest admissible positive weight. Gamma draws with very small shape
# parameters underflow to exactly 0.0 in double precision; flooring keeps the
# strict-positivity invariants on pi and beta without changing anything the
# likelihood can resolve.
WEIGHT_FLOOR = 1e-300


class DegenerateRateError(ValueError):
    """An observed count sits on an all-zero Poisson rate."""


class InvariantViolation(RuntimeError):
    """A sampler state check failed (only raised in debug mode or tests)."""


@dataclass
class Hyperparameters:
    """Prior parameters shared by the truncated and slice samplers.

    a0, c0      beta prior on the per-document keep probabilities q
    b0          gamma shape of the per-document topic scale beta (unit scale)
    alpha       concentration of the gamma process over topic weights
    alpha0      symmetric Dirichlet parameter of the topic-word distributions
    gamma_mass  total mass of the gamma-process base measure
    truncation_K  fixed topic count for the truncated sampler (ignored by slice)
    zeta_base, zeta_ratio  define the slice ladder zeta_k = base * ratio**(-k),
        a fixed strictly decreasing positive sequence with limit 0
    """

    a0: float = 1.0
    c0: float = 1.0
    b0: float = 1.0
    alpha: float = 1.0
    alpha0: float = 1.0
    gamma_mass: float = 1.0
    truncation_K: int | None = None
    zeta_base: float = 1.0
    zeta_ratio: float = 1.5

    def __post_init__(self):
        for name in ("a0", "c0", "b0", "alpha", "alpha0", "gamma_mass", "zeta_base"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"hyperparameter {name} must be strictly positive, got {value!r}")
        if not np.isfinite(self.zeta_ratio) or self.zeta_ratio <= 1:
            raise ValueError(f"zeta_ratio must exceed 1, got {self.zeta_ratio!r}")
        if self.truncation_K is not None:
            if int(self.truncation_K) != self.truncation_K or self.truncation_K < 1:
                raise ValueError(f"truncation_K must be a positive integer, got {self.truncation_K!r}")
            self.truncation_K = int(self.truncation_K)

    def zeta_sequence(self, num_topics: int) -> np.ndarray:
        """First num_topics slice thresholds, 0-based: zeta[j] = base * ratio**-(j + 1)."""
        j = np.arange(1, num_topics + 1, dtype=np.float64)
        return self.zeta_base * self.zeta_ratio ** (-j)

    def slice_level_count(self, u: float) -> int:
        """Number of leading slice levels with zeta >= u (support size for slice value u)."""
        if u <= 0:
            raise ValueError("slice value must be positive")
        # zeta at 1-based level j is base * ratio**-j, so zeta_j >= u up to
        # j = log(base / u) / log(ratio); walk off any float rounding.
        count = max(int(np.floor(np.log(self.zeta_base / u) / np.log(self.zeta_ratio))), 0)
        while count >= 1 and self.zeta_base * self.zeta_ratio ** (-float(count)) < u:
            count -= 1
        while self.zeta_base * self.zeta_ratio ** (-float(count + 1)) >= u:
            count += 1
        return count


def default_truncation(num_docs: int) -> int:
    """Default truncation level: ten topics per document, capped at 2000."""
    return min(10 * num_docs, 2000)


@dataclass
class Corpus:
    """Bag-of-words corpus stored sparsely as (doc, word, count) cells.

    Cells are kept sorted by (doc, word) with strictly positive counts; zero
    counts are implicit. vocab holds one identifier per word index, doc_ids and
    doc_labels are optional opaque metadata carried along from loaders.
    """

    num_docs: int
    vocab_size: int
    cell_doc: np.ndarray
    cell_word: np.ndarray
    cell_count: np.ndarray
    vocab: list = field(default_factory=list)
    doc_ids: list | None = None
    doc_labels: list | None = None

    def __post_init__(self):
        self.cell_doc = np.asarray(self.cell_doc, dtype=np.int64)
        self.cell_word = np.asarray(self.cell_word, dtype=np.int64)
        self.cell_count = np.asarray(self.cell_count, dtype=np.int64)
        if not (self.cell_doc.shape == self.cell_word.shape == self.cell_count.shape):
            raise ValueError("cell arrays must have identical shapes")
        if self.num_docs < 1 or self.vocab_size < 1:
            raise ValueError("corpus must have at least one document slot and one word slot")
        if self.cell_doc.size:
            if self.cell_doc.min() < 0 or self.cell_doc.max() >= self.num_docs:
                raise ValueError("document index out of range")
            if self.cell_word.min() < 0 or self.cell_word.max() >= self.vocab_size:
                raise ValueError("word index out of range")
            if self.cell_count.min() < 1:
                raise ValueError("stored counts must be strictly positive")
            order = np.lexsort((self.cell_word, self.cell_doc))
            self.cell_doc = self.cell_doc[order]
            self.cell_word = self.cell_word[order]
            self.cell_count = self.cell_count[order]
            keys = self.cell_doc * self.vocab_size + self.cell_word
            if np.any(np.diff(keys) == 0):
                raise ValueError("duplicate (doc, word) cell")
        if not self.vocab:
            self.vocab = [f"w{i}" for i in range(self.vocab_size)]
        if len(self.vocab) != self.vocab_size:
            raise ValueError("vocab length must equal vocab_size")

    @classmethod
    def from_entries(cls, num_docs, vocab_size, entries, **kw):
        """Build from an iterable of (doc, word, count) or a {(doc, word): count} map."""
        if isinstance(entries, dict):
            entries = [(d, n, c) for (d, n), c in entries.items()]
        entries = list(entries)
        if entries:
            d, n, c = (np.array(col, dtype=np.int64) for col in zip(*entries))
        else:
            d = n = c = np.zeros(0, dtype=np.int64)
        return cls(num_docs, vocab_size, d, n, c, **kw)

    @classmethod
    def from_dense(cls, matrix, **kw):
        matrix = np.asarray(matrix)
        d, n = np.nonzero(matrix)
        return cls(matrix.shape[0], matrix.shape[1], d, n, matrix[d, n], **kw)

    @property
    def num_cells(self) -> int:
        return int(self.cell_doc.size)

    @cached_property
    def total_tokens(self) -> int:
        return int(self.cell_count.sum())

    @cached_property
    def counts(self) -> dict:
        """Dict view {(doc, word): count} of the nonzero cells."""
        return {
            (int(d), int(n)): int(c)
            for d, n, c in zip(self.cell_doc, self.cell_word, self.cell_count)
        }

    @cached_property
    def _cell_lookup(self) -> dict:
        return {
            (int(d), int(n)): i
            for i, (d, n) in enumerate(zip(self.cell_doc, self.cell_word))
        }

    def cell_index(self, d: int, n: int) -> int | None:
        """Index of cell (d, n) in the flat arrays, or None if the count is zero."""
        return self._cell_lookup.get((int(d), int(n)))

    @cached_property
    def doc_token_counts(self) -> np.ndarray:
        out = np.zeros(self.num_docs, dtype=np.int64)
        np.add.at(out, self.cell_doc, self.cell_count)
        return out

    def doc_word_vector(self, d: int) -> np.ndarray:
        """Dense count row for one document."""
        row = np.zeros(self.vocab_size, dtype=np.int64)
        mask = self.cell_doc == d
        row[self.cell_word[mask]] = self.cell_count[mask]
        return row


@dataclass
class DocumentNetwork:
    """Undirected link structure over the documents of a corpus.

    edges is an (E, 2) array of document index pairs with edge[0] < edge[1],
    deduplicated and free of self-loops.
    """

    num_docs: int
    edges: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size:
            lo = self.edges.min(axis=1)
            hi = self.edges.max(axis=1)
            if np.any(lo == hi):
                raise ValueError("self-loop in edge list")
            if lo.min() < 0 or hi.max() >= self.num_docs:
                raise ValueError("edge endpoint out of range")
            canon = np.stack([lo, hi], axis=1)
            canon = np.unique(canon, axis=0)
            self.edges = canon

    @classmethod
    def from_edges(cls, num_docs, pairs):
        """Canonicalize an iterable of (i, j) pairs: drop self-loops, dedupe both orders."""
        pairs = [(int(i), int(j)) for i, j in pairs]
        pairs = [(min(i, j), max(i, j)) for i, j in pairs if i != j]
        arr = np.array(sorted(set(pairs)), dtype=np.int64).reshape(-1, 2)
        return cls(num_docs, arr)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def neighbor_lists(self) -> list:
        """Sorted neighbor document indices, one array per document."""
        buckets = [[] for _ in range(self.num_docs)]
        for i, j in self.edges:
            buckets[i].append(j)
            buckets[j].append(i)
        return [np.array(sorted(b), dtype=np.int64) for b in buckets]

    def neighbors(self, d: int) -> np.ndarray:
        return self.neighbor_lists[d]

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_docs, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


class AllocationTable:
    """Sparse per-topic split w[d, n, k] of the corpus counts.

    Stored flat as parallel (cell, topic, count) arrays; aggregate count views
    are cached and invalidated on mutation. Conservation (the split of each
    cell sums to the observed count) is the caller's responsibility and can be
    verified with check_conservation.
    """

    def __init__(self, corpus: Corpus, num_topics: int,
                 entry_cell=None, entry_topic=None, entry_count=None):
        self.corpus = corpus
        self.num_topics = int(num_topics)
        empty = np.zeros(0, dtype=np.int64)
        self.entry_cell = empty if entry_cell is None else np.asarray(entry_cell, dtype=np.int64)
        self.entry_topic = empty if entry_topic is None else np.asarray(entry_topic, dtype=np.int64)
        self.entry_count = empty if entry_count is None else np.asarray(entry_count, dtype=np.int64)
        self._cache = {}

    def _invalidate(self):
        self._cache.clear()

    def set_all(self, entry_cell, entry_topic, entry_count):
        self.entry_cell = np.asarray(entry_cell, dtype=np.int64)
        self.entry_topic = np.asarray(entry_topic, dtype=np.int64)
        self.entry_count = np.asarray(entry_count, dtype=np.int64)
        self._invalidate()

    def set_cell(self, cell: int, counts: np.ndarray):
        """Replace the split of one cell with a dense length-num_topics count vector."""
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (self.num_topics,):
            raise ValueError("counts must be dense over the current topics")
        keep = self.entry_cell != cell
        topics = np.nonzero(counts)[0]
        self.entry_cell = np.concatenate([self.entry_cell[keep],
                                          np.full(topics.size, cell, dtype=np.int64)])
        self.entry_topic = np.concatenate([self.entry_topic[keep], topics])
        self.entry_count = np.concatenate([self.entry_count[keep], counts[topics]])
        self._invalidate()

    def cell_allocation(self, cell: int) -> np.ndarray:
        """Dense length-num_topics split of one cell."""
        out = np.zeros(self.num_topics, dtype=np.int64)
        mask = self.entry_cell == cell
        np.add.at(out, self.entry_topic[mask], self.entry_count[mask])
        return out

    def doc_topic_counts(self) -> np.ndarray:
        if "doc_topic" not in self._cache:
            flat = self.corpus.cell_doc[self.entry_cell] * self.num_topics + self.entry_topic
            agg = np.bincount(flat, weights=self.entry_count,
                              minlength=self.corpus.num_docs * self.num_topics)
            self._cache["doc_topic"] = agg.reshape(self.corpus.num_docs, self.num_topics)
        return self._cache["doc_topic"]

    def word_topic_counts(self) -> np.ndarray:
        if "word_topic" not in self._cache:
            flat = self.corpus.cell_word[self.entry_cell] * self.num_topics + self.entry_topic
            agg = np.bincount(flat, weights=self.entry_count,
                              minlength=self.corpus.vocab_size * self.num_topics)
            self._cache["word_topic"] = agg.reshape(self.corpus.vocab_size, self.num_topics)
        return self._cache["word_topic"]

    def topic_totals(self) -> np.ndarray:
        if "topic_totals" not in self._cache:
            self._cache["topic_totals"] = np.bincount(
                self.entry_topic, weights=self.entry_count, minlength=self.num_topics)
        return self._cache["topic_totals"]

    def cell_totals(self) -> np.ndarray:
        if "cell_totals" not in self._cache:
            self._cache["cell_totals"] = np.bincount(
                self.entry_cell, weights=self.entry_count, minlength=self.corpus.num_cells)
        return self._cache["cell_totals"]

    def as_dict(self) -> dict:
        """Dict view {(doc, word, topic): count}; zero entries omitted."""
        out = {}
        for cell, k, c in zip(self.entry_cell, self.entry_topic, self.entry_count):
            key = (int(self.corpus.cell_doc[cell]), int(self.corpus.cell_word[cell]), int(k))
            out[key] = out.get(key, 0) + int(c)
        return out

    def grow(self, new_num_topics: int):
        if new_num_topics < self.num_topics:
            raise ValueError("grow cannot shrink the topic count")
        self.num_topics = int(new_num_topics)
        self._invalidate()

    def remap_topics(self, keep: np.ndarray):
        """Drop topics where keep is False and renumber the remainder in order.

        Dropped topics must carry no allocated tokens.
        """
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.num_topics,):
            raise ValueError("keep mask must be dense over the current topics")
        if self.entry_topic.size and np.any(~keep[self.entry_topic]):
            raise InvariantViolation("cannot drop a topic that still holds tokens")
        new_index = np.cumsum(keep) - 1
        self.entry_topic = new_index[self.entry_topic]
        self.num_topics = int(keep.sum())
        self._invalidate()

    def check_conservation(self):
        """Raise InvariantViolation unless every cell's split sums to its observed count."""
        got = self.cell_totals()
        want = self.corpus.cell_count
        bad = np.nonzero(got != want)[0]
        if bad.size:
            cell = int(bad[0])
            raise InvariantViolation(
                f"allocation of cell (d={int(self.corpus.cell_doc[cell])}, "
                f"n={int(self.corpus.cell_word[cell])}) sums to {int(got[cell])}, "
                f"observed {int(want[cell])}")


@dataclass
class SliceAux:
    """Extra per-topic and per-token state carried by the slice sampler.

    Topic weights decompose as pi[k] = E[k] * exp(-T[k]) with E a gamma jump
    size and T an accumulated decay time whose round index is rounds[k]
    (positive, nondecreasing in k). Tokens carry their current topic and the
    slice value drawn on the last sweep.
    """

    rounds: np.ndarray
    E: np.ndarray
    T: np.ndarray
    token_cell: np.ndarray
    token_topic: np.ndarray
    token_slice: np.ndarray


@dataclass
class ModelState:
    """Full Gibbs state for either sampler.

    theta  (K, W) row-stochastic topic-word distributions
    pi     (K,)   strictly positive topic weights
    q      (D, K) keep probabilities in the open unit interval
    r      (D, K) binary keep indicators
    beta   (D, K) strictly positive per-document topic scales
    alloc  sparse per-topic split of the corpus counts
    hyper  prior parameters the conditional updates draw from
    slice_aux  present only in slice mode
    dormant_sweeps  per-topic count of consecutive token-free sweeps,
        maintained by the truncated chain's retirement step; None in slice
        mode, which retires token-free atoms at the end of every sweep
    """

    theta: np.ndarray
    pi: np.ndarray
    q: np.ndarray
    r: np.ndarray
    beta: np.ndarray
    alloc: AllocationTable
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    slice_aux: SliceAux | None = None
    dormant_sweeps: np.ndarray | None = None

    @property
    def num_topics(self) -> int:
        return int(self.pi.shape[0])

    @property
    def num_docs(self) -> int:
        return int(self.q.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(self.theta.shape[1])

    def thinned_mass(self) -> np.ndarray:
        """(D, K) per-document topic rates r * pi * beta (theta marginalized out)."""
        return self.r * self.pi[None, :] * self.beta


@dataclass
class TraceRecord:
    iteration: int
    log_likelihood: float
    k_active: int
    elapsed: float = 0.0


@dataclass
class Snapshot:
    """Thinned post-burn-in state summary.

    Topic identity is not aligned across snapshots (labels switch), so each
    snapshot carries its own active-topic list with matching theta rows.
    """

    iteration: int
    k_active: int
    active: list
    theta: np.ndarray
    pi: np.ndarray
    doc_topic: np.ndarray


@dataclass
class ChainTrace:
    """Per-iteration chain diagnostics plus optional thinned snapshots."""

    sampler: str
    seed: int
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def iterations(self) -> np.ndarray:
        return np.array([rec.iteration for rec in self.records], dtype=np.int64)

    def log_likelihoods(self) -> np.ndarray:
        return np.array([rec.log_likelihood for rec in self.records])

    def k_active(self) -> np.ndarray:
        return np.array([rec.k_active for rec in self.records], dtype=np.int64)

    def validate(self):
        its = self.iterations()
        if its.size and np.any(np.diff(its) <= 0):
            raise InvariantViolation("trace iterations must strictly increase")


# ---------------------------------------------------------------------------
# observation-model operations


def poisson_rate(state: ModelState, d: int, n: int) -> float:
    """Poisson rate of cell (d, n): sum_k theta[k, n] * r[d, k] * pi[k] * beta[d, k]."""
    if not (0 <= d < state.num_docs):
        raise IndexError(f"document index {d} out of range")
    if not (0 <= n < state.vocab_size):
        raise IndexError(f"word index {n} out of range")
    return float(state.theta[:, n] @ (state.r[d] * state.pi * state.beta[d]))


def xi(state: ModelState, d: int, n: int) -> np.ndarray:
    """Topic-allocation probabilities for cell (d, n), dense over current topics.

    Entries are proportional to theta[k, n] * r[d, k] * pi[k] * beta[d, k];
    thinned-out topics (r = 0) get exactly zero. Raises DegenerateRateError if
    every topic has zero weight, in which case the caller must first force an
    indicator back on.
    """
    weights = state.theta[:, n] * (state.r[d] * state.pi * state.beta[d])
    total = weights.sum()
    if not total > 0:
        raise DegenerateRateError(f"cell (d={d}, n={n}) has zero rate under every topic")
    return weights / total


def cell_rates(state: ModelState, corpus: Corpus, block: int = 8192) -> np.ndarray:
    """Poisson rates of every stored cell, computed in blocks to bound memory."""
    mass = state.thinned_mass()
    out = np.empty(corpus.num_cells)
    for lo in range(0, corpus.num_cells, block):
        hi = min(lo + block, corpus.num_cells)
        words = corpus.cell_word[lo:hi]
        docs = corpus.cell_doc[lo:hi]
        out[lo:hi] = np.einsum("ck,ck->c", mass[docs], state.theta[:, words].T)
    return out


def joint_log_likelihood(state: ModelState, corpus: Corpus) -> float:
    """Sum of Poisson log-pmfs over every (document, word) pair, zeros included.

    Raises DegenerateRateError when an observed positive count has rate zero
    (the log-pmf would be -inf).
    """
    if state.num_docs != corpus.num_docs or state.vocab_size != corpus.vocab_size:
        raise ValueError("state and corpus dimensions disagree")
    mass = state.thinned_mass()
    # sum of rates over all (d, n), including zero-count cells:
    # sum_d sum_n sum_k theta[k, n] * mass[d, k] = sum_k mass_col[k] * rowsum(theta)[k]
    total_rate = float(mass.sum(axis=0) @ state.theta.sum(axis=1))
    if corpus.num_cells == 0:
        return -total_rate
    rates = cell_rates(state, corpus)
    if np.any(rates <= 0):
        cell = int(np.nonzero(rates <= 0)[0][0])
        raise DegenerateRateError(
            f"observed count at (d={int(corpus.cell_doc[cell])}, "
            f"n={int(corpus.cell_word[cell])}) has zero rate")
    counts = corpus.cell_count
    return float(counts @ np.log(rates) - gammaln(counts + 1).sum()) - total_rate


def active_topics(state: ModelState) -> set:
    """Indices of topics holding at least one allocated token."""
    totals = state.alloc.topic_totals()
    return {int(k) for k in np.nonzero(totals > 0)[0]}


def validate_state(state: ModelState, corpus: Corpus):
    """Full invariant check; raises InvariantViolation on the first failure.

    Verifies count conservation, thinning consistency (tokens imply r = 1),
    theta rows summing to one, range constraints on q, positivity of pi and
    beta, and in slice mode the weight decomposition and round monotonicity.
    """
    state.alloc.check_conservation()
    doc_topic = state.alloc.doc_topic_counts()
    bad = np.nonzero((doc_topic > 0) & (state.r == 0))
    if bad[0].size:
        raise InvariantViolation(
            f"tokens allocated to thinned-out topic (d={int(bad[0][0])}, k={int(bad[1][0])})")
    row_err = np.abs(state.theta.sum(axis=1) - 1.0)
    if row_err.size and row_err.max() > 1e-10:
        raise InvariantViolation(f"theta row sums off by {row_err.max():.3e}")
    if np.any((state.q <= 0) | (state.q >= 1)):
        raise InvariantViolation("q outside the open unit interval")
    if np.any(state.pi <= 0):
        raise InvariantViolation("pi must be strictly positive")
    if np.any(state.beta <= 0):
        raise InvariantViolation("beta must be strictly positive")
    if np.any((state.r != 0) & (state.r != 1)):
        raise InvariantViolation("r must be binary")
    aux = state.slice_aux
    if aux is not None:
        if np.any(np.diff(aux.rounds) < 0) or (aux.rounds.size and aux.rounds[0] < 1):
            raise InvariantViolation("round indices must be positive and nondecreasing")
        if not np.allclose(state.pi, aux.E * np.exp(-aux.T), rtol=1e-12, atol=0):
            raise InvariantViolation("pi does not match E * exp(-T)")
        if np.any(aux.T < 0) or np.any(aux.E <= 0):
            raise InvariantViolation("slice weight components out of range")
        totals = state.alloc.cell_totals()
        token_totals = np.bincount(aux.token_cell, minlength=corpus.num_cells)
        if np.any(token_totals != totals):
            raise InvariantViolation("token list disagrees with allocation table")
