"""Network coupling of the per-document keep probabilities.

Linked documents pull their keep probabilities together, topic by topic: the
prior on q multiplies a beta density with exp(-sum over linked documents of
(q[d, k] - q[l, k])^2). Only same-topic coordinates of neighboring documents
interact, so the conditional of one site depends on its document's neighbors
at the same topic index and nothing else.
"""

import logging

import numpy as np
from scipy import sparse

from .core import DocumentNetwork, Hyperparameters

logger = logging.getLogger(__name__)

# Keep q strictly inside the open unit interval; rng.beta can round to the
# closed endpoints in double precision.
_Q_EPS = 1e-12


class NeighborhoodIndex:
    """Neighbor structure of a document network, precomputed for the q updates.

    Provides per-document neighbor lists, a sparse adjacency matrix for batch
    neighbor sums, and a greedy coloring of the documents. Documents in one
    color class share no link, so their q sites may be updated together;
    different topics never interact and need no scheduling.
    """

    def __init__(self, network: DocumentNetwork):
        self.num_docs = network.num_docs
        self.neighbor_lists = network.neighbor_lists
        self.degrees = network.degrees.astype(np.float64)
        rows, cols, vals = [], [], []
        for i, j in network.edges:
            rows += [i, j]
            cols += [j, i]
            vals += [1.0, 1.0]
        self.adjacency = sparse.csr_matrix(
            (vals, (rows, cols)), shape=(self.num_docs, self.num_docs))
        self.color_classes = self._greedy_color()

    def _greedy_color(self) -> list:
        order = sorted(range(self.num_docs), key=lambda d: (-self.neighbor_lists[d].size, d))
        color = np.full(self.num_docs, -1, dtype=np.int64)
        for d in order:
            taken = {int(color[l]) for l in self.neighbor_lists[d] if color[l] >= 0}
            c = 0
            while c in taken:
                c += 1
            color[d] = c
        classes = []
        for c in range(int(color.max()) + 1 if self.num_docs else 0):
            classes.append(np.nonzero(color == c)[0])
        return classes

    def neighbors(self, d: int) -> np.ndarray:
        return self.neighbor_lists[d]

    def neighbor_coordinates(self, d: int, k: int) -> list:
        """Coupled q coordinates of site (d, k): same topic, linked documents."""
        return [(int(l), int(k)) for l in self.neighbor_lists[d]]

    def neighbor_values(self, q: np.ndarray, d: int, k: int) -> np.ndarray:
        return q[self.neighbor_lists[d], k]


def mrf_energy(q_value: float, neighbor_values) -> float:
    """Quadratic disagreement sum_l (q_value - q_l)^2; zero for no neighbors."""
    arr = np.asarray(neighbor_values, dtype=np.float64)
    return float(((q_value - arr) ** 2).sum())


def rejection_sample_q(shape_a, shape_b, degree, neighbor_sum, neighbor_sq_sum,
                       rng, max_rejects: int = 10_000):
    """Vectorized rejection sampler for a batch of q sites.

    Each site's target is Beta(shape_a, shape_b) tilted by
    exp(-(degree * q^2 - 2 * neighbor_sum * q + neighbor_sq_sum)), the expanded
    quadratic disagreement with the site's neighbor values. Proposals come
    from the beta factor and are accepted with the tilt, which never exceeds
    one. Sites still unresolved after max_rejects rounds keep their last
    proposal; the number of such fallbacks is returned alongside the draws.
    """
    shape_a = np.asarray(shape_a, dtype=np.float64)
    out = np.empty(shape_a.shape)
    flat_a = shape_a.ravel()
    flat_b = np.broadcast_to(np.asarray(shape_b, dtype=np.float64), shape_a.shape).ravel()
    deg = np.broadcast_to(np.asarray(degree, dtype=np.float64), shape_a.shape).ravel()
    s1 = np.broadcast_to(np.asarray(neighbor_sum, dtype=np.float64), shape_a.shape).ravel()
    s2 = np.broadcast_to(np.asarray(neighbor_sq_sum, dtype=np.float64), shape_a.shape).ravel()
    flat_out = out.reshape(-1)
    active = np.arange(flat_a.size)
    for _ in range(max_rejects):
        prop = np.clip(rng.beta(flat_a[active], flat_b[active]), _Q_EPS, 1 - _Q_EPS)
        flat_out[active] = prop
        energy = deg[active] * prop * prop - 2.0 * s1[active] * prop + s2[active]
        rejected = rng.random(active.size) >= np.exp(-np.maximum(energy, 0.0))
        active = active[rejected]
        if active.size == 0:
            break
    if active.size:
        logger.warning("q rejection sampler hit the %d-round cap at %d site(s); "
                       "keeping the last proposal", max_rejects, active.size)
    return out, int(active.size)


def sample_q(d: int, k: int, r_dk: int, neighbor_values, hyper: Hyperparameters,
             rng, max_rejects: int = 10_000) -> float:
    """Draw one keep probability q[d, k] given its indicator and neighbor values.

    The beta factor is Beta(a0 + r, c0 + 1 - r); the network factor tilts it by
    exp(-energy) via rejection. With no neighbors this reduces to an exact
    conjugate beta draw.
    """
    nbr = np.asarray(neighbor_values, dtype=np.float64)
    draws, _ = rejection_sample_q(
        np.array([hyper.a0 + r_dk]),
        np.array([hyper.c0 + 1 - r_dk]),
        np.array([float(nbr.size)]),
        np.array([nbr.sum()]),
        np.array([(nbr ** 2).sum()]),
        rng, max_rejects)
    return float(draws[0])
