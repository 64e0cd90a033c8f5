"""Moment and distribution checks for every conditional sampler.

Each draw family is compared against its closed form: empirical means and
variances within 3 sigma over large samples, KS tests where the closed form
is a standard distribution, and brute-force enumeration for the discrete
round conditional.
"""

import numpy as np
import pytest
from scipy.stats import beta as beta_dist
from scipy.stats import chisquare, kstest

from gptopics.core import (
    AllocationTable,
    Corpus,
    Hyperparameters,
    ModelState,
    SliceAux,
)
from gptopics.samplers import (
    round_prior,
    sample_beta,
    sample_dk,
    sample_pi_slice,
    sample_pi_truncated,
    sample_r,
    sample_theta,
)

N_DRAWS = 100_000


def moment_state(num_docs=3, vocab=4, topics=2, trunc=None, slice_mode=False):
    """Fixed small state with a known allocation; all r on."""
    entries = [(0, 0, 2), (0, 1, 1), (1, 2, 4), (2, 3, 3)]
    corpus = Corpus.from_entries(num_docs, vocab, entries)
    alloc = AllocationTable(corpus, topics)
    # cell splits: chosen by hand, conserve every cell
    alloc.set_all([0, 0, 1, 2, 3], [0, 1, 1, 0, 1], [1, 1, 1, 4, 3])
    hyper = Hyperparameters(truncation_K=trunc)
    theta = np.full((topics, vocab), 1.0 / vocab)
    pi = np.array([1.5, 0.75])
    q = np.full((num_docs, topics), 0.4)
    r = np.ones((num_docs, topics), dtype=np.int8)
    beta = np.array([[1.0, 0.5], [2.0, 1.0], [0.5, 2.0]])
    aux = None
    if slice_mode:
        aux = SliceAux(rounds=np.array([1, 2]),
                       E=pi / np.exp(-np.array([0.4, 1.1])),
                       T=np.array([0.4, 1.1]),
                       token_cell=np.repeat(np.arange(4), [2, 1, 4, 3]),
                       token_topic=np.array([0, 1, 1, 0, 0, 0, 0, 1, 1, 1]),
                       token_slice=np.full(10, 0.1))
    return ModelState(theta=theta, pi=pi, q=q, r=r, beta=beta,
                      alloc=alloc, hyper=hyper, slice_aux=aux), corpus


def check_gamma_moments(draws, shape, scale):
    n = draws.size
    mean, var = shape * scale, shape * scale ** 2
    # sampling error of the mean and of the variance estimate
    se_mean = np.sqrt(var / n)
    kurt_term = var ** 2 * (2 + 6 / shape)  # Var[x^2-ish] for gamma
    se_var = np.sqrt(kurt_term / n)
    assert abs(draws.mean() - mean) < 3 * se_mean, (draws.mean(), mean)
    assert abs(draws.var() - var) < 3 * se_var, (draws.var(), var)


# ---------------------------------------------------------------------------
# beta scale draws


def test_beta_conditional_moments_with_topic_kept():
    state, _ = moment_state()
    rng = np.random.default_rng(0)
    d, k = 0, 1
    # doc 0 holds 2 tokens of topic 1; scale 1/(pi + 1)
    draws = np.array([sample_beta(state, d, k, rng) for _ in range(N_DRAWS)])
    check_gamma_moments(draws, shape=2.0 + 1.0, scale=1.0 / (0.75 + 1.0))


def test_beta_conditional_moments_with_topic_dropped():
    state, _ = moment_state()
    state.r[2, 0] = 0
    state.alloc.set_all([0, 0, 1, 2, 3], [0, 1, 1, 0, 1], [1, 1, 1, 4, 3])
    rng = np.random.default_rng(1)
    # doc 2 dropped topic 0 and holds none of its tokens: pure prior Gamma(b0, 1)
    draws = np.array([sample_beta(state, 2, 0, rng) for _ in range(N_DRAWS)])
    check_gamma_moments(draws, shape=1.0, scale=1.0)


def test_beta_ks_against_closed_form():
    state, _ = moment_state()
    rng = np.random.default_rng(2)
    draws = np.array([sample_beta(state, 0, 0, rng) for _ in range(5000)])
    # doc 0, topic 0: 1 token, shape 2, rate pi + 1 = 2.5
    from scipy.stats import gamma as gamma_dist
    assert kstest(draws, gamma_dist(a=2.0, scale=1.0 / 2.5).cdf).pvalue > 0.01


# ---------------------------------------------------------------------------
# theta rows


def test_theta_conditional_moments():
    state, _ = moment_state()
    rng = np.random.default_rng(3)
    rows = np.array([sample_theta(state, 0, rng) for _ in range(N_DRAWS)])
    conc = 1.0 + state.alloc.word_topic_counts()[:, 0]  # [2, 1, 5, 1]
    np.testing.assert_array_equal(conc, [2.0, 1.0, 5.0, 1.0])
    total = conc.sum()
    mean = conc / total
    var = conc * (total - conc) / (total ** 2 * (total + 1))
    se_mean = np.sqrt(var / N_DRAWS)
    assert np.all(np.abs(rows.mean(axis=0) - mean) < 3.5 * se_mean)
    assert np.allclose(rows.var(axis=0), var, rtol=0.05)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, rtol=1e-12)


# ---------------------------------------------------------------------------
# truncated topic weights


def test_pi_truncated_moments_match_closed_form():
    state, _ = moment_state(trunc=50)
    rng = np.random.default_rng(4)
    k = 0
    draws = np.empty(N_DRAWS)
    for i in range(N_DRAWS):
        draws[i] = sample_pi_truncated(state, k, rng)
        state.pi[k] = 1.5  # keep the conditioning state fixed
    shape = 1.0 / 50 + 5.0  # topic 0 holds 5 tokens
    scale = 1.0 / (state.beta[:, 0].sum() + 1.0)
    check_gamma_moments(draws, shape, scale)


def test_pi_truncated_rate_sums_only_keeping_documents():
    # the weight rate must track the same exposure the scale draws see:
    # a document that dropped the topic contributes nothing
    state, _ = moment_state(trunc=50)
    state.r[2, 0] = 0  # doc 2 holds no topic-0 tokens, may drop it
    rng = np.random.default_rng(17)
    draws = np.empty(N_DRAWS)
    for i in range(N_DRAWS):
        draws[i] = sample_pi_truncated(state, 0, rng)
        state.pi[0] = 1.5
    shape = 1.0 / 50 + 5.0
    kept_sum = 1.0 + 2.0  # docs 0 and 1 only
    check_gamma_moments(draws, shape, 1.0 / (kept_sum + 1.0))


def test_pi_slice_rate_sums_every_document():
    # the jump rate keeps the full document scale sum even for dropped
    # documents; that drag is what holds token-free atoms down
    state, _ = moment_state(slice_mode=True)
    state.r[2, 0] = 0
    rng = np.random.default_rng(18)
    k, t_fixed = 0, 0.4
    draws = np.empty(N_DRAWS)
    for i in range(N_DRAWS):
        state.slice_aux.T[k] = t_fixed
        e, _ = sample_pi_slice(state, k, rng)
        draws[i] = e
    rate = 1.0 + 3.5 * np.exp(-t_fixed)  # all three document scales
    check_gamma_moments(draws, shape=6.0, scale=1.0 / rate)


def test_pi_truncated_uses_nominal_truncation_not_column_count():
    state, _ = moment_state(trunc=400)
    rng = np.random.default_rng(5)
    # strip all tokens from topic 1 so the draw is pure prior-shape
    state.alloc.set_all([0, 0, 1, 2, 3], [0, 0, 0, 0, 0], [1, 1, 1, 4, 3])
    draws = np.array([sample_pi_truncated(state, 1, rng) for _ in range(N_DRAWS)])
    scale = 1.0 / (state.beta[:, 1].sum() + 1.0)
    # mean of Gamma(1/400, scale); a 1/K_active=1/2 shape would be ~200x larger
    se = np.sqrt((1.0 / 400) * scale ** 2 / N_DRAWS)
    assert abs(draws.mean() - (1.0 / 400) * scale) < 4 * se


# ---------------------------------------------------------------------------
# slice weight components


def test_slice_energy_conditional_moments_at_fixed_decay():
    state, _ = moment_state(slice_mode=True)
    rng = np.random.default_rng(6)
    k, t_fixed = 0, 0.4
    draws = np.empty(N_DRAWS)
    for i in range(N_DRAWS):
        state.slice_aux.T[k] = t_fixed  # pin T so every draw is E | T
        e, _ = sample_pi_slice(state, k, rng)
        draws[i] = e
    w_k = 5.0
    rate = 1.0 + state.beta[:, 0].sum() * np.exp(-t_fixed)
    check_gamma_moments(draws, shape=w_k + 1.0, scale=1.0 / rate)


def tilted_decay_mean(tokens, beta_sum, round_idx):
    """Stationary mean of the decay time by numerical integration.

    Marginalizing the jump out of the joint leaves
    p(T) prop T^(round-1) exp(-T (1 + tokens)) / (1 + beta_sum exp(-T))^(tokens+1)
    at unit alpha.
    """
    from scipy.integrate import quad

    def dens(t):
        return (t ** (round_idx - 1) * np.exp(-t * (1.0 + tokens))
                / (1.0 + beta_sum * np.exp(-t)) ** (tokens + 1))

    num = quad(lambda t: t * dens(t), 0, 60)[0]
    den = quad(dens, 0, 60)[0]
    return num / den


def test_slice_decay_chain_hits_tilted_stationary_mean():
    # token-free topic: the decay prior is tilted up by the document-scale
    # exposure; the quad oracle integrates the exact marginal
    state, _ = moment_state(slice_mode=True)
    rng = np.random.default_rng(7)
    state.alloc.set_all([0, 0, 1, 2, 3], [0, 0, 0, 0, 0], [1, 1, 1, 4, 3])
    free_t = np.empty(30_000)
    for i in range(free_t.size):
        _, free_t[i] = sample_pi_slice(state, 1, rng)
    want_free = tilted_decay_mean(tokens=0, beta_sum=3.5, round_idx=2)
    assert abs(free_t.mean() - want_free) < 0.08, (free_t.mean(), want_free)

    state2, _ = moment_state(slice_mode=True)
    state2.alloc.set_all([0, 0, 1, 2, 3], [1, 1, 1, 1, 1], [1, 1, 1, 4, 3])
    heavy_t = np.empty(30_000)
    for i in range(heavy_t.size):
        _, heavy_t[i] = sample_pi_slice(state2, 1, rng)
    want_heavy = tilted_decay_mean(tokens=10, beta_sum=3.5, round_idx=2)
    assert abs(heavy_t.mean() - want_heavy) < 0.03, (heavy_t.mean(), want_heavy)


def test_pi_matches_energy_decay_product():
    state, _ = moment_state(slice_mode=True)
    rng = np.random.default_rng(8)
    e, t = sample_pi_slice(state, 1, rng)
    assert state.pi[1] == pytest.approx(e * np.exp(-t), rel=1e-12)


# ---------------------------------------------------------------------------
# keep indicators


def test_r_conditional_frequency_matches_closed_form():
    state, _ = moment_state()
    rng = np.random.default_rng(9)
    d, k = 2, 0  # doc 2 holds no topic-0 tokens but keeps topic 1 active
    state.alloc.set_all([0, 0, 1, 2, 3], [0, 1, 1, 0, 1], [1, 1, 1, 4, 3])
    from scipy.special import expit, logit
    p_keep = expit(logit(0.4) - state.pi[0] * state.beta[2, 0])
    n = N_DRAWS
    hits = 0
    for _ in range(n):
        state.r[2, 0] = 1
        hits += sample_r(state, d, k, None, rng)
    se = np.sqrt(p_keep * (1 - p_keep) / n)
    assert abs(hits / n - p_keep) < 3 * se


def test_r_stays_on_when_topic_holds_tokens():
    state, _ = moment_state()
    rng = np.random.default_rng(10)
    assert sample_r(state, 1, 0, None, rng) == 1  # doc 1 holds topic-0 tokens


def test_r_stays_on_for_last_active_topic():
    state, _ = moment_state()
    rng = np.random.default_rng(11)
    state.alloc.set_all([0, 0, 1, 2, 3], [0, 1, 1, 0, 1], [1, 1, 1, 4, 3])
    state.r[2, 1] = 0
    state.q[2, 0] = 1e-9  # would almost surely drop if allowed
    assert sample_r(state, 2, 0, None, rng) == 1


def test_r_uses_supplied_zero_masses():
    state, _ = moment_state()
    rng = np.random.default_rng(12)
    state.alloc.set_all([0, 0, 1, 2, 3], [0, 1, 1, 0, 1], [1, 1, 1, 4, 3])
    # zero-count mass 1 for every word makes the draw plain Bernoulli(q)
    n = 40_000
    hits = 0
    for _ in range(n):
        state.r[2, 0] = 1
        hits += sample_r(state, 2, 0, np.ones(4), rng)
    se = np.sqrt(0.4 * 0.6 / n)
    assert abs(hits / n - 0.4) < 3.5 * se


# ---------------------------------------------------------------------------
# round structure


def simulate_round_process(prev_round, count_at_prev, gamma_mass, rng, n):
    """Directly simulate the next atom's round: rounds hold Poisson(gamma_mass)
    atoms; given the previous atom's round and how many atoms it already has,
    draw the rest of that round's occupancy, then walk to the next occupied
    round if it is exhausted."""
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        if prev_round >= 1:
            # rejection: total atoms in prev_round must be >= count_at_prev
            while True:
                total = rng.poisson(gamma_mass)
                if total >= count_at_prev:
                    break
            if total > count_at_prev:
                out[i] = prev_round
                continue
            r = prev_round + 1
        else:
            r = 1
        while rng.poisson(gamma_mass) == 0:
            r += 1
        out[i] = r
    return out


@pytest.mark.parametrize("prev,count", [(0, 0), (1, 1), (3, 2)])
def test_round_prior_matches_direct_simulation(prev, count):
    hyper = Hyperparameters(gamma_mass=0.8)
    candidates, log_mass = round_prior(prev, count, hyper)
    probs = np.exp(log_mass - log_mass.max())
    probs /= probs.sum()
    rng = np.random.default_rng(13)
    sims = simulate_round_process(prev, count, 0.8, rng, 200_000)
    for idx in np.argsort(probs)[::-1][:4]:
        want = probs[idx]
        got = float(np.mean(sims == candidates[idx]))
        se = np.sqrt(want * (1 - want) / sims.size)
        assert abs(got - want) < 4 * se + 1e-4, (candidates[idx], got, want)


def test_round_prior_mass_is_normalized():
    hyper = Hyperparameters()
    for prev, count in ((0, 0), (2, 1), (5, 3)):
        _, log_mass = round_prior(prev, count, hyper)
        total = np.exp(log_mass - log_mass.max()).sum() * np.exp(log_mass.max())
        assert total == pytest.approx(1.0, rel=1e-6)


def test_round_conditional_matches_enumeration():
    state, _ = moment_state(slice_mode=True)
    rng = np.random.default_rng(14)
    k = 1
    t_k = float(state.slice_aux.T[k])
    candidates, log_mass = round_prior(1, 1, state.hyper)
    from scipy.special import gammaln
    log_like = (candidates - 1) * np.log(t_k) - gammaln(candidates)
    weights = np.exp(log_mass + log_like - (log_mass + log_like).max())
    want = weights / weights.sum()
    n = 100_000
    draws = np.empty(n, dtype=np.int64)
    for i in range(n):
        state.slice_aux.rounds[k] = 2
        draws[i] = sample_dk(state, k, rng)
    top = np.argsort(want)[::-1][:3]
    counts = np.array([np.sum(draws == candidates[i]) for i in top])
    expected = want[top] * n
    rest_c = n - counts.sum()
    rest_e = n - expected.sum()
    stat = chisquare(np.append(counts, rest_c), np.append(expected, rest_e))
    assert stat.pvalue > 0.01


def test_round_conditional_never_descends():
    state, _ = moment_state(slice_mode=True)
    rng = np.random.default_rng(15)
    state.slice_aux.rounds[0] = 2
    for _ in range(200):
        state.slice_aux.rounds[1] = 2
        assert sample_dk(state, 1, rng) >= 2


# ---------------------------------------------------------------------------
# q conditional (conjugate case lives here for the record; the tilted cases
# are exercised in the network coupling tests)


def test_q_conjugate_ks():
    from gptopics.mrf import sample_q
    rng = np.random.default_rng(16)
    hyper = Hyperparameters()
    draws = np.array([sample_q(0, 0, 1, [], hyper, rng) for _ in range(5000)])
    assert kstest(draws, beta_dist(2.0, 1.0).cdf).pvalue > 0.01
