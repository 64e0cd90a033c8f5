"""Gibbs samplers: a fixed-truncation chain and an exact slice-augmented chain.

Both samplers share the conditional updates for the allocation split, the keep
probabilities q, the indicators r, the scales beta, and the topic-word rows
theta. They differ in how the topic weights pi are handled: the truncated
chain draws a fixed number of weights from their gamma conditionals, while the
slice chain represents each weight as a gamma jump damped by an accumulated
decay time, instantiates topics on demand to cover the per-token slice
variables, and retires topics that stay out of reach.

Sweep structure: the allocation split of every cell is redrawn once per sweep
as a joint multinomial, then q, r, beta, theta and the topic weights are
updated in that order. q sites are scheduled by graph color so linked
documents never update together; r sites within a document are scanned in
ascending topic order. Both chains keep their dense state at the active
width: the truncated chain treats its truncation level as an initial topic
budget and retires topics that lose all their tokens, the slice chain
retires topics that stay out of slice reach.
"""

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, gammaln, logit
from scipy.stats import poisson

from .core import (
    WEIGHT_FLOOR,
    AllocationTable,
    ChainTrace,
    Corpus,
    DegenerateRateError,
    DocumentNetwork,
    Hyperparameters,
    ModelState,
    SliceAux,
    Snapshot,
    TraceRecord,
    active_topics,
    default_truncation,
    joint_log_likelihood,
    validate_state,
    xi,
)
from .mrf import NeighborhoodIndex, rejection_sample_q

logger = logging.getLogger(__name__)

# Sweeps a truncated-chain topic may spend token-free before it is retired.
# The window has to outlast transient keep-probability consensus on dense
# networks, or early merges become permanent; the slice chain retires
# token-free topics immediately instead (it can re-grow them).
DORMANT_SWEEP_LIMIT = 100

# Numerical guard on decay-time draws: exp(-T) must stay representable. The
# proposal mass beyond this cap is far below float resolution for any round
# index the sampler can reach.
_DECAY_CAP = 600.0

_Q_EPS = 1e-12


@dataclass
class SamplerConfig:
    """Run-length, seeding, and bookkeeping knobs shared by both samplers."""

    max_iter: int = 1000
    burnin: int = 100
    seed: int = 0
    mode: str = "truncated"
    snapshot_every: int = 10
    debug: bool = False
    max_rejects: int = 10_000

    def __post_init__(self):
        if self.mode not in ("truncated", "slice"):
            raise ValueError(f"mode must be 'truncated' or 'slice', got {self.mode!r}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.burnin < 0:
            raise ValueError("burnin must be nonnegative")
        if self.max_iter > 0 and self.burnin >= self.max_iter:
            raise ValueError("burnin must be smaller than max_iter")
        if self.max_iter == 0 and self.burnin != 0:
            raise ValueError("burnin must be 0 when max_iter is 0")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be at least 1")


# ---------------------------------------------------------------------------
# gamma-process round structure (slice construction)


def round_prior(prev_round: int, count_at_prev: int, hyper: Hyperparameters):
    """Candidate round indices for the next topic and their log prior masses.

    Topics arrive in rounds that each hold a Poisson(gamma_mass) number of
    atoms. Given the previous topic sits in round prev_round with
    count_at_prev atoms already there, the next topic either stays (the round
    holds at least one more atom) or skips some geometrically distributed
    number of empty rounds. For the first topic there is no round to stay in
    and the law reduces to the first occupied round.
    """
    g = hyper.gamma_mass
    log_empty = -g
    empty = np.exp(log_empty)
    if prev_round >= 1:
        if count_at_prev < 1:
            raise ValueError("previous round must hold at least one atom")
        stay = poisson.sf(count_at_prev, g) / poisson.sf(count_at_prev - 1, g)
    else:
        stay = 0.0
    # extend the geometric tail until its residual mass is negligible
    tail = int(np.ceil(30.0 / max(g, 0.02)))
    tail = min(max(tail, 20), 2000)
    gaps = np.arange(1, tail + 1)
    with np.errstate(divide="ignore"):
        log_move = np.log1p(-stay) + np.log1p(-empty) + (gaps - 1) * log_empty
        if prev_round >= 1:
            candidates = np.concatenate([[prev_round], prev_round + gaps])
            log_mass = np.concatenate([[np.log(stay)], log_move])
        else:
            candidates = gaps.copy()
            log_mass = log_move
    return candidates, log_mass


def _sample_discrete_log(log_mass: np.ndarray, rng) -> int:
    w = np.exp(log_mass - log_mass.max())
    cdf = np.cumsum(w)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def _draw_round_from_prior(rounds_so_far: np.ndarray, hyper: Hyperparameters, rng) -> int:
    k = rounds_so_far.size
    prev = int(rounds_so_far[k - 1]) if k else 0
    count = int(np.sum(rounds_so_far == prev)) if k else 0
    candidates, log_mass = round_prior(prev, count, hyper)
    return int(candidates[_sample_discrete_log(log_mass, rng)])


def sample_dk(state: ModelState, k: int, rng) -> int:
    """Resample the round index of slice topic k from its discrete conditional.

    The conditional combines the sequential round prior given topics before k
    with the gamma density of the topic's decay time at each candidate round.
    The draw never falls below the previous topic's round.
    """
    aux = state.slice_aux
    if aux is None:
        raise ValueError("round indices exist only in slice mode")
    prev = int(aux.rounds[k - 1]) if k > 0 else 0
    count = int(np.sum(aux.rounds[:k] == prev)) if k > 0 else 0
    candidates, log_mass = round_prior(prev, count, state.hyper)
    scale = 1.0 / state.hyper.alpha
    t_k = float(aux.T[k])
    log_like = (candidates - 1) * np.log(t_k) - gammaln(candidates) - candidates * np.log(scale)
    choice = _sample_discrete_log(log_mass + log_like, rng)
    value = int(candidates[choice])
    aux.rounds[k] = value
    return value


# ---------------------------------------------------------------------------
# per-site conditional draws


def sample_r(state: ModelState, d: int, k: int, rates_zero_mass, rng) -> int:
    """Resample one keep indicator r[d, k].

    Rules, in order: if every other topic of the document is already thinned
    out the indicator stays on; if the topic holds any of the document's
    tokens it stays on; otherwise it is Bernoulli with odds
    q * prod_n Poisson(0; rate) versus (1 - q), where rates_zero_mass gives
    the per-word zero-count masses Poisson(0; theta[k, n] pi[k] beta[d, k])
    (computed from the state when None).
    """
    others = int(state.r[d].sum()) - int(state.r[d, k])
    if others == 0:
        value = 1
    elif state.alloc.doc_topic_counts()[d, k] > 0:
        value = 1
    else:
        if rates_zero_mass is None:
            log_zero = -float(state.theta[k].sum() * state.pi[k] * state.beta[d, k])
        else:
            rates_zero_mass = np.asarray(rates_zero_mass, dtype=np.float64)
            with np.errstate(divide="ignore"):
                log_zero = float(np.log(rates_zero_mass).sum())
        p_keep = expit(logit(state.q[d, k]) + log_zero)
        value = int(rng.random() < p_keep)
    state.r[d, k] = value
    return value


def sample_beta(state: ModelState, d: int, k: int, rng) -> float:
    """Resample one per-document topic scale from its gamma conditional."""
    shape = state.alloc.doc_topic_counts()[d, k] + state.hyper.b0
    scale = 1.0 / (state.r[d, k] * state.pi[k] + 1.0)
    value = max(float(rng.gamma(shape, scale)), WEIGHT_FLOOR)
    state.beta[d, k] = value
    return value


def sample_theta(state: ModelState, k: int, rng) -> np.ndarray:
    """Resample topic k's word distribution from its Dirichlet conditional."""
    conc = state.hyper.alpha0 + state.alloc.word_topic_counts()[:, k]
    g = np.maximum(rng.gamma(conc, 1.0), WEIGHT_FLOOR)
    row = g / g.sum()
    state.theta[k] = row
    return row


def sample_pi_truncated(state: ModelState, k: int, rng) -> float:
    """Resample one truncated topic weight from its gamma conditional.

    Shape is 1/truncation plus the topic's token total; the rate adds one to
    the summed scales of the documents currently keeping the topic, matching
    the scale draw that exposes beta to the weight only where r is on. The
    1/truncation prior shape is what keeps token-free columns small.
    """
    trunc = state.hyper.truncation_K or state.num_topics
    shape = 1.0 / trunc + state.alloc.topic_totals()[k]
    kept = float((state.r[:, k] * state.beta[:, k]).sum())
    scale = 1.0 / (kept + 1.0)
    value = max(float(rng.gamma(shape, scale)), WEIGHT_FLOOR)
    state.pi[k] = value
    return value


def sample_pi_slice(state: ModelState, k: int, rng) -> tuple:
    """Resample slice topic k's weight components (jump E, decay time T).

    E given T is a gamma draw; T then takes one Metropolis step with its
    gamma prior as independence proposal, accepted with the Poisson
    likelihood ratio of the topic's token total. The scale sum in the jump
    rate runs over every document, kept or not: materialized atoms carry
    shape at least one, so without that drag each token-free atom would
    recapture tokens often enough to pad the active count.
    Updates pi[k] = E * exp(-T) and returns the pair.
    """
    aux = state.slice_aux
    if aux is None:
        raise ValueError("weight components exist only in slice mode")
    w_k = float(state.alloc.topic_totals()[k])
    beta_sum = float(state.beta[:, k].sum())
    alpha = state.hyper.alpha
    rate = 1.0 / alpha + beta_sum * np.exp(-aux.T[k])
    energy = max(float(rng.gamma(w_k + 1.0, 1.0 / rate)), WEIGHT_FLOOR)
    aux.E[k] = energy
    t_old = float(aux.T[k])
    t_prop = min(float(rng.gamma(aux.rounds[k], 1.0 / alpha)), _DECAY_CAP)
    log_acc = w_k * (t_old - t_prop) - beta_sum * energy * (np.exp(-t_prop) - np.exp(-t_old))
    if np.log(rng.random()) < log_acc:
        aux.T[k] = t_prop
    state.pi[k] = aux.E[k] * np.exp(-aux.T[k])
    return float(aux.E[k]), float(aux.T[k])


def sample_allocations_truncated(state: ModelState, corpus: Corpus, d: int, n: int, rng) -> np.ndarray:
    """Redraw the topic split of cell (d, n) as one multinomial over xi."""
    cell = corpus.cell_index(d, n)
    if cell is None:
        return np.zeros(state.num_topics, dtype=np.int64)
    probs = xi(state, d, n)
    counts = rng.multinomial(int(corpus.cell_count[cell]), probs)
    state.alloc.set_cell(cell, counts)
    return counts


def sample_allocations_slice(state: ModelState, corpus: Corpus, d: int, n: int, rng):
    """Redraw slice variables and topics for every token of cell (d, n).

    Each token draws u uniform on (0, zeta of its current topic), the state is
    grown until the slice ladder drops below the smallest u, and the token
    then picks a topic among the supported prefix with probability
    proportional to xi / zeta. Returns the cell's new token topics and slice
    values.
    """
    aux = state.slice_aux
    if aux is None:
        raise ValueError("state is not in slice mode")
    cell = corpus.cell_index(d, n)
    if cell is None:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    lo = int(np.searchsorted(aux.token_cell, cell, side="left"))
    hi = int(np.searchsorted(aux.token_cell, cell, side="right"))
    hyper = state.hyper
    zeta = hyper.zeta_sequence(state.num_topics)
    u = rng.random(hi - lo) * zeta[aux.token_topic[lo:hi]]
    needed = hyper.slice_level_count(float(u.min()))
    if needed > state.num_topics:
        _grow_slice_state(state, needed, rng)
        zeta = hyper.zeta_sequence(state.num_topics)
    support = np.searchsorted(-zeta, -u, side="right")
    weights = state.theta[:, n] * state.r[d] * state.pi * state.beta[d] / zeta
    token_w = np.where(np.arange(state.num_topics)[None, :] < support[:, None],
                       weights[None, :], 0.0)
    cdf = np.cumsum(token_w, axis=1)
    totals = cdf[:, -1]
    if not np.all(totals > 0):
        raise DegenerateRateError(f"empty slice support at cell (d={d}, n={n})")
    targets = totals * (1.0 - rng.random(totals.size))
    z = (cdf < targets[:, None]).sum(axis=1)
    aux.token_topic[lo:hi] = z
    aux.token_slice[lo:hi] = u
    state.alloc.set_cell(cell, np.bincount(z, minlength=state.num_topics))
    return z.copy(), u.copy()


# ---------------------------------------------------------------------------
# batched sweep internals


def _draw_positive_gamma(rng, shape, scale=1.0, size=None):
    return np.maximum(rng.gamma(shape, scale, size=size), WEIGHT_FLOOR)


def _draw_dirichlet_rows(rng, conc):
    g = _draw_positive_gamma(rng, conc)
    return g / g.sum(axis=1, keepdims=True)


def _allocate_all_truncated(state: ModelState, corpus: Corpus, rng):
    """One joint multinomial redraw of every cell's split, in blocks."""
    if corpus.num_cells == 0:
        state.alloc.set_all([], [], [])
        return
    K = state.num_topics
    mass = state.thinned_mass()
    block = max(1, 8_000_000 // (8 * K))
    cells_out, topics_out, counts_out = [], [], []
    for lo in range(0, corpus.num_cells, block):
        hi = min(lo + block, corpus.num_cells)
        docs = corpus.cell_doc[lo:hi]
        words = corpus.cell_word[lo:hi]
        weights = mass[docs] * state.theta[:, words].T
        totals = weights.sum(axis=1)
        if not np.all(totals > 0):
            bad = int(np.nonzero(totals <= 0)[0][0]) + lo
            raise DegenerateRateError(
                f"cell (d={int(corpus.cell_doc[bad])}, n={int(corpus.cell_word[bad])}) "
                "has zero rate under every topic")
        cdf = np.cumsum(weights / totals[:, None], axis=1)
        cdf[:, -1] = 1.0
        flat = (cdf + np.arange(hi - lo)[:, None]).ravel()
        reps = np.repeat(np.arange(hi - lo), corpus.cell_count[lo:hi])
        targets = reps + rng.random(reps.size)
        z = np.searchsorted(flat, targets, side="right") - reps * K
        keys = (lo + reps) * K + z
        uniq, cnt = np.unique(keys, return_counts=True)
        cells_out.append(uniq // K)
        topics_out.append(uniq % K)
        counts_out.append(cnt)
    state.alloc.set_all(np.concatenate(cells_out), np.concatenate(topics_out),
                        np.concatenate(counts_out))


def _update_q_all(state: ModelState, nbr: NeighborhoodIndex, rng, max_rejects: int):
    hyper = state.hyper
    shape_a = hyper.a0 + state.r.astype(np.float64)
    shape_b = hyper.c0 + 1.0 - state.r.astype(np.float64)
    for cls in nbr.color_classes:
        if cls.size == 0:
            continue
        rows = nbr.adjacency[cls]
        s1 = rows @ state.q
        s2 = rows @ (state.q * state.q)
        draws, _ = rejection_sample_q(shape_a[cls], shape_b[cls],
                                      nbr.degrees[cls, None], s1, s2, rng, max_rejects)
        state.q[cls] = draws


def _update_r_all(state: ModelState, rng):
    """Exact ascending-topic scan of every indicator, vectorized per document.

    The Bernoulli part of each site's conditional does not involve the other
    indicators, so candidates for all sites are drawn at once; the keep-last-
    topic rule is then applied at the first scan position where a document
    would otherwise hold no active topic at all. That position is the first k
    with no candidate among topics before k and no currently-on indicator
    after k, which reproduces the sequential scan exactly.
    """
    doc_topic = state.alloc.doc_topic_counts()
    theta_sums = state.theta.sum(axis=1)
    log_zero = -(state.pi * theta_sums)[None, :] * state.beta
    p_keep = expit(logit(state.q) + log_zero)
    cand = (doc_topic > 0) | (rng.random(state.q.shape) < p_keep)
    old = state.r.astype(bool)
    suffix_on = np.fliplr(np.cumsum(np.fliplr(old), axis=1)) - old
    prefix_cand = np.cumsum(cand, axis=1) - cand
    trigger = (prefix_cand == 0) & (suffix_on == 0)
    new = cand.copy()
    rows = np.nonzero(trigger.any(axis=1))[0]
    if rows.size:
        new[rows, trigger[rows].argmax(axis=1)] = True
    state.r = new.astype(np.int8)


def _update_beta_all(state: ModelState, rng):
    shape = state.alloc.doc_topic_counts() + state.hyper.b0
    scale = 1.0 / (state.r * state.pi[None, :] + 1.0)
    state.beta = _draw_positive_gamma(rng, shape, scale)


def _update_theta_all(state: ModelState, rng):
    conc = state.hyper.alpha0 + state.alloc.word_topic_counts().T
    state.theta = _draw_dirichlet_rows(rng, conc)


def _update_pi_truncated_all(state: ModelState, rng):
    trunc = state.hyper.truncation_K or state.num_topics
    shape = 1.0 / trunc + state.alloc.topic_totals()
    scale = 1.0 / ((state.r * state.beta).sum(axis=0) + 1.0)
    state.pi = _draw_positive_gamma(rng, shape, scale)


def _compact_truncated_state(state: ModelState):
    """Retire topics that have held no tokens for DORMANT_SWEEP_LIMIT sweeps.

    The truncation level is the chain's initial topic budget, not a fixed
    width. A token-free topic keeps its column for a grace window in which a
    lucky weight draw may still win tokens back; early in a run this lets
    token mass spread back out before the budget hardens. Once the window
    passes, the column is dropped and never returns, so the dense arrays
    stay near the active width and dust-sized weights stop seeding a steady
    trickle of one-token topics. One column is always kept so the state
    stays well formed on an empty corpus.
    """
    clock = np.where(state.alloc.topic_totals() > 0, 0, state.dormant_sweeps + 1)
    keep = clock < DORMANT_SWEEP_LIMIT
    if not keep.any():
        keep[0] = True
        clock[0] = 0
    state.dormant_sweeps = clock[keep]
    if keep.all():
        return
    state.alloc.remap_topics(keep)
    state.theta = state.theta[keep]
    state.pi = state.pi[keep]
    state.q = state.q[:, keep]
    state.r = state.r[:, keep]
    state.beta = state.beta[:, keep]


def _sweep_truncated(state, corpus, nbr, rng, config):
    _allocate_all_truncated(state, corpus, rng)
    _compact_truncated_state(state)
    _update_q_all(state, nbr, rng, config.max_rejects)
    _update_r_all(state, rng)
    _update_beta_all(state, rng)
    _update_theta_all(state, rng)
    _update_pi_truncated_all(state, rng)
    if config.debug:
        validate_state(state, corpus)


# --- slice-specific internals ----------------------------------------------


def _grow_slice_state(state: ModelState, new_num_topics: int, rng):
    """Instantiate prior draws for topics up to new_num_topics."""
    aux = state.slice_aux
    hyper = state.hyper
    K = state.num_topics
    extra = new_num_topics - K
    if extra <= 0:
        return
    rounds = aux.rounds
    new_rounds = []
    for _ in range(extra):
        nxt = _draw_round_from_prior(rounds, hyper, rng)
        rounds = np.append(rounds, nxt)
        new_rounds.append(nxt)
    new_rounds = np.array(new_rounds, dtype=np.int64)
    new_T = np.minimum(rng.gamma(new_rounds.astype(np.float64), 1.0 / hyper.alpha), _DECAY_CAP)
    new_E = np.maximum(rng.exponential(hyper.alpha, extra), WEIGHT_FLOOR)
    new_pi = new_E * np.exp(-new_T)
    D = state.num_docs
    new_theta = _draw_dirichlet_rows(rng, np.full((extra, state.vocab_size), hyper.alpha0))
    new_q = np.clip(rng.beta(hyper.a0, hyper.c0, (D, extra)), _Q_EPS, 1 - _Q_EPS)
    new_r = (rng.random((D, extra)) < new_q).astype(np.int8)
    new_beta = _draw_positive_gamma(rng, hyper.b0, 1.0, (D, extra))
    state.theta = np.concatenate([state.theta, new_theta], axis=0)
    state.pi = np.concatenate([state.pi, new_pi])
    state.q = np.concatenate([state.q, new_q], axis=1)
    state.r = np.concatenate([state.r, new_r], axis=1)
    state.beta = np.concatenate([state.beta, new_beta], axis=1)
    aux.rounds = rounds
    aux.E = np.concatenate([aux.E, new_E])
    aux.T = np.concatenate([aux.T, new_T])
    state.alloc.grow(new_num_topics)


def _allocate_all_slice(state: ModelState, corpus: Corpus, rng):
    """Slice redraw for every token: u values, on-demand growth, topic picks."""
    aux = state.slice_aux
    hyper = state.hyper
    if aux.token_cell.size == 0:
        state.alloc.set_all([], [], [])
        return
    zeta = hyper.zeta_sequence(state.num_topics)
    u = rng.random(aux.token_cell.size) * zeta[aux.token_topic]
    needed = hyper.slice_level_count(float(u.min()))
    if needed > state.num_topics:
        _grow_slice_state(state, needed, rng)
        zeta = hyper.zeta_sequence(state.num_topics)
    K = state.num_topics
    support = np.searchsorted(-zeta, -u, side="right")
    boosted = state.thinned_mass() / zeta[None, :]
    cell_w = boosted[corpus.cell_doc] * state.theta[:, corpus.cell_word].T
    token_w = cell_w[aux.token_cell]
    token_w[np.arange(K)[None, :] >= support[:, None]] = 0.0
    cdf = np.cumsum(token_w, axis=1)
    totals = cdf[:, -1]
    if not np.all(totals > 0):
        tok = int(np.nonzero(totals <= 0)[0][0])
        cell = int(aux.token_cell[tok])
        raise DegenerateRateError(
            f"empty slice support at cell (d={int(corpus.cell_doc[cell])}, "
            f"n={int(corpus.cell_word[cell])})")
    targets = totals * (1.0 - rng.random(totals.size))
    z = (cdf < targets[:, None]).sum(axis=1)
    aux.token_topic = z.astype(np.int64)
    aux.token_slice = u
    keys = aux.token_cell * K + aux.token_topic
    uniq, cnt = np.unique(keys, return_counts=True)
    state.alloc.set_all(uniq // K, uniq % K, cnt)


def _update_pi_slice_all(state: ModelState, rng):
    aux = state.slice_aux
    alpha = state.hyper.alpha
    w_k = state.alloc.topic_totals().astype(np.float64)
    beta_sum = state.beta.sum(axis=0)
    rate = 1.0 / alpha + beta_sum * np.exp(-aux.T)
    aux.E = np.maximum(rng.gamma(w_k + 1.0, 1.0 / rate), WEIGHT_FLOOR)
    proposal = np.minimum(rng.gamma(aux.rounds.astype(np.float64), 1.0 / alpha), _DECAY_CAP)
    log_acc = w_k * (aux.T - proposal) - beta_sum * aux.E * (np.exp(-proposal) - np.exp(-aux.T))
    with np.errstate(divide="ignore"):
        accept = np.log(rng.random(aux.T.size)) < log_acc
    aux.T = np.where(accept, proposal, aux.T)
    state.pi = aux.E * np.exp(-aux.T)


def _update_rounds_all(state: ModelState, rng):
    for k in range(state.num_topics):
        sample_dk(state, k, rng)


def _prune_dormant(state: ModelState):
    """Retire slice topics left with no tokens at the end of the sweep.

    Unlike the truncated chain the slice chain can always re-materialize
    atoms through the growth step, so retirement needs no grace window.
    Keeping token-free atoms around would let their jump redraws recapture
    tokens every sweep, padding the active count. One atom is always kept so
    the state stays well formed on an empty corpus.
    """
    aux = state.slice_aux
    keep = state.alloc.topic_totals() > 0
    if keep.all():
        return
    if not keep.any():
        keep[0] = True
    state.alloc.remap_topics(keep)
    new_index = np.cumsum(keep) - 1
    aux.token_topic = new_index[aux.token_topic]
    state.theta = state.theta[keep]
    state.pi = state.pi[keep]
    state.q = state.q[:, keep]
    state.r = state.r[:, keep]
    state.beta = state.beta[:, keep]
    aux.rounds = aux.rounds[keep]
    aux.E = aux.E[keep]
    aux.T = aux.T[keep]


def _sweep_slice(state, corpus, nbr, rng, config):
    _allocate_all_slice(state, corpus, rng)
    _update_q_all(state, nbr, rng, config.max_rejects)
    _update_r_all(state, rng)
    _update_beta_all(state, rng)
    _update_theta_all(state, rng)
    _update_pi_slice_all(state, rng)
    _update_rounds_all(state, rng)
    _prune_dormant(state)
    if config.debug:
        validate_state(state, corpus)


# ---------------------------------------------------------------------------
# initialization


def _token_level_init_allocation(state: ModelState, corpus: Corpus, rng):
    """Single allocation pass with the initial xi; returns token topics."""
    K = state.num_topics
    mass = state.thinned_mass()
    if corpus.num_cells == 0:
        state.alloc.set_all([], [], [])
        return np.zeros(0, dtype=np.int64)
    weights = mass[corpus.cell_doc] * state.theta[:, corpus.cell_word].T
    totals = weights.sum(axis=1)
    if not np.all(totals > 0):
        raise DegenerateRateError("zero rate at initialization")
    cdf = np.cumsum(weights / totals[:, None], axis=1)
    cdf[:, -1] = 1.0
    reps = np.repeat(np.arange(corpus.num_cells), corpus.cell_count)
    flat = (cdf + np.arange(corpus.num_cells)[:, None]).ravel()
    targets = reps + rng.random(reps.size)
    z = np.searchsorted(flat, targets, side="right") - reps * K
    keys = reps * K + z
    uniq, cnt = np.unique(keys, return_counts=True)
    state.alloc.set_all(uniq // K, uniq % K, cnt)
    return z.astype(np.int64)


def init_truncated_state(corpus: Corpus, hyper: Hyperparameters, rng) -> ModelState:
    """Prior-style initialization of the fixed-truncation chain.

    Draws the full topic budget from the prior, splits every cell once with
    the initial allocation probabilities, then retires budget slots that
    caught no tokens. The resolved truncation level is recorded on the state
    so later weight updates keep their 1/truncation prior shape.
    """
    K = hyper.truncation_K or default_truncation(corpus.num_docs)
    hyper = replace(hyper, truncation_K=K)
    D, W = corpus.num_docs, corpus.vocab_size
    theta = _draw_dirichlet_rows(rng, np.full((K, W), hyper.alpha0))
    pi = _draw_positive_gamma(rng, 1.0 / K, 1.0, K)
    q = np.clip(rng.beta(hyper.a0, hyper.c0, (D, K)), _Q_EPS, 1 - _Q_EPS)
    r = np.ones((D, K), dtype=np.int8)
    beta = _draw_positive_gamma(rng, hyper.b0, 1.0, (D, K))
    state = ModelState(theta=theta, pi=pi, q=q, r=r, beta=beta,
                       alloc=AllocationTable(corpus, K), hyper=hyper,
                       dormant_sweeps=np.zeros(K, dtype=np.int64))
    _allocate_all_truncated(state, corpus, rng)
    _compact_truncated_state(state)
    return state


def init_slice_state(corpus: Corpus, hyper: Hyperparameters, rng,
                     initial_topics: int = 3) -> ModelState:
    """Slice-mode initialization with a few construction draws."""
    D, W = corpus.num_docs, corpus.vocab_size
    K = initial_topics
    rounds = np.zeros(0, dtype=np.int64)
    for _ in range(K):
        rounds = np.append(rounds, _draw_round_from_prior(rounds, hyper, rng))
    T = np.minimum(rng.gamma(rounds.astype(np.float64), 1.0 / hyper.alpha), _DECAY_CAP)
    E = np.maximum(rng.exponential(hyper.alpha, K), WEIGHT_FLOOR)
    theta = _draw_dirichlet_rows(rng, np.full((K, W), hyper.alpha0))
    q = np.clip(rng.beta(hyper.a0, hyper.c0, (D, K)), _Q_EPS, 1 - _Q_EPS)
    r = np.ones((D, K), dtype=np.int8)
    beta = _draw_positive_gamma(rng, hyper.b0, 1.0, (D, K))
    aux = SliceAux(rounds=rounds, E=E, T=T,
                   token_cell=np.repeat(np.arange(corpus.num_cells), corpus.cell_count),
                   token_topic=np.zeros(corpus.total_tokens, dtype=np.int64),
                   token_slice=np.zeros(corpus.total_tokens))
    state = ModelState(theta=theta, pi=E * np.exp(-T), q=q, r=r, beta=beta,
                       alloc=AllocationTable(corpus, K), hyper=hyper, slice_aux=aux)
    z = _token_level_init_allocation(state, corpus, rng)
    aux.token_topic = z
    zeta = hyper.zeta_sequence(K)
    aux.token_slice = rng.random(z.size) * zeta[z] if z.size else np.zeros(0)
    return state


# ---------------------------------------------------------------------------
# chain drivers


def doc_topic_proportions(state: ModelState, topics=None) -> np.ndarray:
    """Per-document topic proportions: r * pi * beta restricted to the given
    topics (default: all) and normalized per row; rows with no mass fall back
    to uniform."""
    if topics is None:
        topics = np.arange(state.num_topics)
    else:
        topics = np.asarray(list(topics), dtype=np.int64)
    mass = state.thinned_mass()[:, topics]
    totals = mass.sum(axis=1, keepdims=True)
    uniform = np.full_like(mass, 1.0 / max(topics.size, 1))
    with np.errstate(invalid="ignore"):
        out = np.where(totals > 0, mass / np.where(totals > 0, totals, 1.0), uniform)
    return out


def _take_snapshot(state: ModelState, iteration: int) -> Snapshot:
    act = sorted(active_topics(state))
    idx = np.array(act, dtype=np.int64)
    return Snapshot(iteration=iteration,
                    k_active=len(act),
                    active=act,
                    theta=state.theta[idx].copy(),
                    pi=state.pi[idx].copy(),
                    doc_topic=doc_topic_proportions(state, idx))


def _run(corpus, network, hyper, config, mode):
    if hyper is None:
        hyper = Hyperparameters()
    if config is None:
        config = SamplerConfig(mode=mode)
    if config.mode != mode:
        raise ValueError(f"config.mode is {config.mode!r} but the {mode} runner was called")
    if network.num_docs != corpus.num_docs:
        raise ValueError("network and corpus disagree on the number of documents")
    rng = np.random.default_rng(config.seed)
    nbr = NeighborhoodIndex(network)
    if mode == "truncated":
        state = init_truncated_state(corpus, hyper, rng)
        sweep = _sweep_truncated
    else:
        state = init_slice_state(corpus, hyper, rng)
        sweep = _sweep_slice
    trace = ChainTrace(sampler=mode, seed=config.seed)
    start = time.perf_counter()
    for it in range(1, config.max_iter + 1):
        sweep(state, corpus, nbr, rng, config)
        ll = joint_log_likelihood(state, corpus)
        k_act = len(active_topics(state))
        trace.records.append(TraceRecord(iteration=it, log_likelihood=ll,
                                         k_active=k_act,
                                         elapsed=time.perf_counter() - start))
        if it > config.burnin and (it - config.burnin) % config.snapshot_every == 0:
            trace.snapshots.append(_take_snapshot(state, it))
    trace.validate()
    return state, trace


def run_truncated(corpus: Corpus, network: DocumentNetwork,
                  hyper: Hyperparameters | None = None,
                  config: SamplerConfig | None = None):
    """Run the fixed-truncation Gibbs chain; returns (final state, trace)."""
    return _run(corpus, network, hyper, config, "truncated")


def run_slice(corpus: Corpus, network: DocumentNetwork,
              hyper: Hyperparameters | None = None,
              config: SamplerConfig | None = None):
    """Run the adaptive slice Gibbs chain; returns (final state, trace)."""
    return _run(corpus, network, hyper, config, "slice")
