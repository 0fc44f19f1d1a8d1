import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from linktrace.design import DesignParams, draw_sample, observe, reduce
from linktrace.population import Population
from linktrace.reorder import (
    ChainState,
    default_gammas,
    enumerate_reorderings,
    is_consistent,
    log_conditional_prob,
    mh_step,
    original_ordering,
    propose,
    run_chain,
    space_for,
)

from conftest import brute_log_prob, fig1_population, fig1_sample, four_sample, small_population


def _roles(d, ids):
    return space_for(d).make(d.mask(ids))


def test_original_ordering_always_consistent():
    pop = small_population(8, sizes=(15, 15))
    rng = np.random.default_rng(0)
    for _ in range(30):
        d0 = draw_sample(pop, DesignParams.uniform(2, 0.2, 0.4), rng)
        v = original_ordering(d0)
        assert is_consistent(v, reduce(d0))
        assert v.log_p > -math.inf


def test_four_node_consistency(four):
    dR = reduce(four)
    assert not is_consistent(_roles(four, [3, 4]), dR)
    assert is_consistent(_roles(four, [1, 3]), dR)
    assert not is_consistent(_roles(four, [1]), dR)


def test_four_node_probability(four):
    assert log_conditional_prob(original_ordering(four), reduce(four)) == pytest.approx(math.log(0.25))


def test_fig1_probabilities():
    d0 = fig1_sample(beta=0.3)
    b = 0.3
    # original: C nominated twice, D once, two untraced links out of {A, B}
    assert original_ordering(d0).log_p == pytest.approx(math.log((1 - (1 - b) ** 2) * b * (1 - b) ** 2))
    # reordering {C, B}: A and D each nominated once, one untraced link (B -> 6)
    assert _roles(d0, [3, 2]).log_p == pytest.approx(math.log(b**2 * (1 - b)))


@pytest.mark.parametrize("seed", range(6))
def test_log_prob_matches_full_graph_product(seed):
    pop = small_population(seed, sizes=(6, 6), mean_degree=2.5, reciprocated=seed % 2 == 0)
    beta = np.array([[0.3, 0.6], [0.5, 0.2]])
    rng = np.random.default_rng(seed)
    d0 = draw_sample(pop, DesignParams([0.3, 0.4], beta), rng)
    for v, lp in enumerate_reorderings(reduce(d0), cap=10**5):
        s0 = v.initial_units
        s1 = v.units[~v.initial]
        assert lp == pytest.approx(brute_log_prob(pop, s0, s1, beta), abs=1e-12)


def test_design_frequencies_match_conditional_probability():
    pop = fig1_population()
    beta = 0.3
    params = DesignParams([0.0], beta, certainty_units=[1, 2])
    rng = np.random.default_rng(1)
    counts = Counter()
    R = 20000
    for _ in range(R):
        d0 = draw_sample(pop, params, rng)
        counts[tuple(d0.units[~d0.initial])] += 1
    for s1, c in counts.items():
        p = math.exp(brute_log_prob(pop, [1, 2], s1, [[beta]]))
        d = observe(pop, [1, 2], list(s1), DesignParams([0.0], beta, [1, 2]))
        assert original_ordering(d).log_p == pytest.approx(math.log(p))
        assert abs(c / R - p) < 4 * math.sqrt(p * (1 - p) / R)
    total = sum(math.exp(brute_log_prob(pop, [1, 2], s1, [[beta]])) for s1 in counts)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_complete_snowball_equal_probabilities():
    pop = small_population(3, sizes=(10,), mean_degree=2.0)
    d0 = draw_sample(pop, DesignParams.uniform(1, 0.3, 1.0), np.random.default_rng(4))
    lps = [lp for _, lp in enumerate_reorderings(reduce(d0))]
    assert len(lps) >= 1
    assert all(lp == 0.0 for lp in lps)


def test_enumeration_counts(four):
    sp = space_for(reduce(four))
    assert sp.count_role_assignments() == math.comb(4, 2) == 6
    got = {tuple(v.initial_units) for v, _ in sp.enumerate()}
    assert got == {(1, 2), (1, 3), (1, 4), (2, 3), (2, 4)}
    with pytest.raises(ValueError, match="cap"):
        sp.enumerate(cap=5)


def test_no_wave_one_single_reordering():
    d0 = observe(fig1_population(), [1, 2, 3], [], DesignParams.uniform(1, 0.5, 0.5))
    reorderings = enumerate_reorderings(reduce(d0))
    assert len(reorderings) == 1
    assert reorderings[0][0].initial.all()


def test_default_gammas():
    assert default_gammas(1) == (1.0,)
    assert default_gammas(2) == (0.9, 0.1)
    assert sum(default_gammas(4)) == pytest.approx(1.0)


def test_k1_only_single_swaps(four):
    sp = space_for(four)
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = sp.propose(four.initial, (1.0,), rng)
        if not p.rejected:
            assert np.count_nonzero(p.candidate != four.initial) == 2


def test_double_swap_needed_for_fig1_two_strata():
    d0 = fig1_sample(two_strata=True)
    sp = space_for(d0)
    target = tuple(d0.mask([3, 4]))
    assert sp.is_consistent(np.array(target))
    rng = np.random.default_rng(0)
    singles = {tuple(p.candidate) for p in (sp.propose(d0.initial, (1.0, 0.0), rng) for _ in range(500))
               if not p.rejected and sp.counts_match(p.candidate)}
    assert target not in singles
    doubles = {tuple(p.candidate) for p in (sp.propose(d0.initial, (0.5, 0.5), rng) for _ in range(500))
               if not p.rejected}
    assert target in doubles


@pytest.mark.parametrize("seed", range(3))
def test_proposal_probabilities_match_frequencies(seed):
    pop = small_population(20 + seed, sizes=(5, 5), mean_degree=3.0)
    d0 = draw_sample(pop, DesignParams.uniform(2, 0.45, 0.6), np.random.default_rng(seed))
    sp = space_for(d0)
    x = d0.initial
    gammas = (0.6, 0.4)
    rng = np.random.default_rng(100 + seed)
    R = 40000
    counts, logq = Counter(), {}
    for _ in range(R):
        p = sp.propose(x, gammas, rng)
        if p.rejected:
            continue
        key = p.candidate.tobytes()
        counts[key] += 1
        logq.setdefault(key, (p.log_forward, p.log_reverse, p.candidate))
    assert counts
    for key, c in counts.items():
        q = math.exp(logq[key][0])
        assert abs(c / R - q) < 4.5 * math.sqrt(q * (1 - q) / R) + 1e-9
    # the reverse probability is the forward probability of the move back to x
    for key, (lf, lr, cand) in list(logq.items())[:3]:
        hits = sum(
            1 for _ in range(20000)
            if (p := sp.propose(cand, gammas, rng)).candidate is not None and np.array_equal(p.candidate, x)
        )
        q = math.exp(lr)
        assert abs(hits / 20000 - q) < 4.5 * math.sqrt(q * (1 - q) / 20000) + 1e-9


def test_module_propose_rejects_inconsistent(four):
    rng = np.random.default_rng(0)
    dR = reduce(four)
    for _ in range(50):
        p = propose(original_ordering(four), (1.0,), rng, dR)
        if not p.rejected:
            assert space_for(dR).is_consistent(p.candidate)


def test_mh_step_repeats_on_rejection(four):
    # directed example: every interchange lacks a reverse move
    v = original_ordering(four)
    state = ChainState(current=v, accepted=[False], log_p=[v.log_p], trace=[1.0])
    rng = np.random.default_rng(0)
    for _ in range(50):
        mh_step(state, four, (1.0,), rng, estimator=lambda d, x: 2.0)
    assert state.step == 50
    assert state.n_accepted == 0
    assert state.current is v
    assert state.trace == [1.0] * 51
    assert state.acceptance_rate == 0.0


def _chain_frequencies(d, n, seed, gammas):
    chain = run_chain(d, original_ordering(d), n, gammas, np.random.default_rng(seed))
    assert len(chain.log_p) == n
    return chain


def test_chain_matches_exact_distribution_tiny():
    d0 = four_sample(symmetrize=True)
    exact = enumerate_reorderings(d0)
    keys = [v.key for v, _ in exact]
    w = np.exp([lp for _, lp in exact])
    w /= w.sum()
    sp = space_for(d0)
    rng = np.random.default_rng(5)
    v = original_ordering(d0)
    visits = Counter()
    for m in range(100000):
        v, _ = sp.step(v, (1.0,), rng)
        if m % 5 == 0:
            visits[v.key] += 1
    obs = np.array([visits[k] for k in keys])
    assert obs.sum() == 20000
    assert stats.chisquare(obs, w * obs.sum()).pvalue > 0.01


def test_run_chain_rejects_bad_seed(four):
    with pytest.raises(ValueError, match="inconsistent"):
        run_chain(four, _roles(four, [3, 4]), 10, (1.0,), np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_chain(four, original_ordering(four), 0, (1.0,), np.random.default_rng(0))


def test_reordering_views(four):
    v = original_ordering(four)
    assert v.assignment == {1: "initial", 2: "initial", 3: "wave1", 4: "wave1"}
    assert v.initial_units.tolist() == [1, 2]
    assert v.n0.tolist() == [2]


def _stranded_sample():
    # Units 3 and 4 are nominated only by 5, so the roles S0={1,2,5},
    # S1={3,4} admit no interchange in or out.
    pop = Population.from_edges([1, 2, 3, 4, 5], [1] * 5, [(1, 2), (2, 5), (3, 5), (4, 5)], symmetrize=True)
    return observe(pop, [1, 4, 5], [2, 3], DesignParams.uniform(1, 0.5, 0.5))


def test_interchanges_can_strand_a_reordering():
    d = _stranded_sample()
    stranded = _roles(d, [1, 2, 5])
    assert is_consistent(stranded, d)
    assert stranded.key in {v.key for v, _ in enumerate_reorderings(d)}
    sp = space_for(d)
    rng = np.random.default_rng(0)
    for _ in range(200):
        prop = sp.propose(stranded.initial, (1.0,), rng)
        assert prop.rejected or not sp.is_consistent(prop.candidate)
    pure = run_chain(d, original_ordering(d), 3000, (1.0,), np.random.default_rng(1),
                     estimator=lambda _, x: x.tobytes())
    assert pure.n_accepted > 0
    assert stranded.initial.tobytes() not in set(pure.trace)


def test_swap_moves_restore_irreducibility():
    d = _stranded_sample()
    exact = enumerate_reorderings(d)
    keys = [v.key for v, _ in exact]
    w = np.exp([lp for _, lp in exact])
    w /= w.sum()
    sp = space_for(d)
    rng = np.random.default_rng(2)
    v = original_ordering(d)
    visits = Counter()
    for m in range(60000):
        v, _ = sp.step(v, (1.0,), rng, swap_prob=0.3)
        if m % 5 == 0:
            visits[v.key] += 1
    obs = np.array([visits[k] for k in keys])
    assert obs.sum() == 12000
    assert stats.chisquare(obs, w * obs.sum()).pvalue > 0.01


def test_swap_proposal_is_symmetric():
    d = _stranded_sample()
    sp = space_for(d)
    rng = np.random.default_rng(3)
    x = original_ordering(d).initial
    for _ in range(50):
        prop = sp.propose_swap(x, rng)
        assert prop.log_forward == prop.log_reverse == -math.log(2 * 3)
        assert np.bincount(sp.group[prop.candidate]).tolist() == [3]


def test_swap_prob_validated(four):
    with pytest.raises(ValueError, match="swap_prob"):
        run_chain(four, original_ordering(four), 10, (1.0,), np.random.default_rng(0), swap_prob=1.0)
