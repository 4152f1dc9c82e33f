import itertools
from collections import Counter

import numpy as np
import pytest
from scipy.special import logsumexp

from mtdisco.exact_engine import edge_posteriors_exact
from mtdisco.mcmc_engine import (
    McmcConfig,
    McmcError,
    OrderChain,
    edge_posteriors_given_order,
    order_log_score,
    run_order_mcmc,
)
from mtdisco.model_core import Order, TaskData, VariableTable, members_of
from mtdisco.scoring import FamilyScoreTable, ScoreConfig, build_score_tables, with_structure_prior

from oracles import brute_force_order_score, capped_subsets, random_data, random_tables


def tables_for(d, r=2):
    cfg = ScoreConfig(r)
    return with_structure_prior(build_score_tables(d, cfg), cfg)


def test_order_score_single_node():
    t = FamilyScoreTable(0, 1, 1, 1.0, np.full((1, 1), -1), np.array([-2.5]))
    assert order_log_score(Order((0,)), [t]) == -2.5


def test_order_score_matches_enumeration_n3():
    tabs = tables_for(random_data(3, 40, np.random.default_rng(0)))
    for perm in itertools.permutations(range(3)):
        assert order_log_score(Order(perm), tabs) == pytest.approx(
            brute_force_order_score(perm, tabs, 2), abs=1e-10)


def test_reversal_symmetric_data():
    # two identical columns: BDeu score equivalence makes both orders equal
    col = np.random.default_rng(1).integers(0, 2, 50)
    d = TaskData(np.stack([col, col], 1), VariableTable.default([2, 2]))
    tabs = tables_for(d, 1)
    assert order_log_score(Order((0, 1)), tabs) == pytest.approx(order_log_score(Order((1, 0)), tabs), abs=1e-12)
    d2 = random_data(4, 40, np.random.default_rng(2))
    tabs2 = tables_for(d2)
    assert order_log_score(Order((0, 1, 2, 3)), tabs2) != order_log_score(Order((3, 2, 1, 0)), tabs2)


def test_given_order_matches_enumeration():
    tabs = tables_for(random_data(3, 40, np.random.default_rng(3)), 2)
    lookups = [t.as_dict() for t in tabs]
    for perm in itertools.permutations(range(3)):
        o = Order(perm)
        post = edge_posteriors_given_order(o, tabs).values
        for v in range(3):
            sets = capped_subsets(o.predecessors(v), 2, 3)
            w = np.exp(np.array([lookups[v][m] for m in sets]) - logsumexp([lookups[v][m] for m in sets]))
            for u in range(3):
                expected = sum(wi for wi, m in zip(w, sets) if m >> u & 1)
                assert post[u, v] == pytest.approx(expected, abs=1e-12)
            size = sum(wi * len(members_of(m)) for wi, m in zip(w, sets))
            assert post[:, v].sum() == pytest.approx(size, abs=1e-12)
            for u in range(3):
                if o.positions()[u] > o.positions()[v]:
                    assert post[u, v] == 0.0


def test_single_sample_equals_first_order():
    tabs = tables_for(random_data(5, 40, np.random.default_rng(4)))
    cfg = McmcConfig(burn_in=0, total_samples=1, thin_interval=1, seed=7)
    first = next(OrderChain(tabs, cfg).recorded())
    expected = edge_posteriors_given_order(first.order, tabs).values
    np.testing.assert_allclose(run_order_mcmc(tabs, cfg).values, expected, atol=1e-15)
    assert first.log_score == pytest.approx(order_log_score(first.order, tabs), abs=1e-10)


def test_reproducible_and_seed_dependent():
    tabs = tables_for(random_data(6, 60, np.random.default_rng(5)))
    cfg = McmcConfig(burn_in=200, total_samples=3000, thin_interval=5, seed=1)
    a = run_order_mcmc(tabs, cfg).values
    assert np.array_equal(a, run_order_mcmc(tabs, cfg).values)
    b = run_order_mcmc(tabs, McmcConfig(200, 3000, 5, seed=2)).values
    assert not np.array_equal(a, b)
    np.testing.assert_allclose(a, b, atol=0.05)
    np.testing.assert_allclose(a, edge_posteriors_exact(tabs).values, atol=0.05)


def test_chain_order_distribution_n4():
    rng = np.random.default_rng(6)
    tabs = random_tables(4, 3, rng, scale=1.5)
    scores = {p: order_log_score(Order(p), tabs) for p in itertools.permutations(range(4))}
    z = logsumexp(list(scores.values()))
    target = {p: np.exp(s - z) for p, s in scores.items()}
    chain = OrderChain(tabs, McmcConfig(seed=3))
    counts = Counter()
    steps = chain.steps()
    for _ in range(10_000):
        next(steps)
    total = 1_000_000
    for _ in range(total):
        next(steps)
        counts[tuple(chain.perm)] += 1
    tv = 0.5 * sum(abs(counts[p] / total - target[p]) for p in target)
    assert tv < 0.02
    assert 0.0 < chain.acceptance_rate < 1.0


def test_incremental_score_matches_full_recomputation():
    tabs = random_tables(7, 3, np.random.default_rng(8))
    chain = OrderChain(tabs, McmcConfig(seed=4))
    steps = chain.steps()
    for _ in range(500):
        next(steps)
        assert chain.log_score == pytest.approx(chain.full_log_score(), abs=1e-10)


def test_adjacent_swap_touches_two_nodes():
    tabs = random_tables(6, 2, np.random.default_rng(9))
    chain = OrderChain(tabs, McmcConfig(seed=0))
    delta, perm, new_local = chain._propose(2, 3)
    assert set(new_local) == {chain.perm[2], chain.perm[3]}
    assert chain.log_score + delta == pytest.approx(order_log_score(Order(tuple(perm)), tabs), abs=1e-10)


def test_recorded_single_order_matrices_are_exclusive():
    tabs = tables_for(random_data(5, 40, np.random.default_rng(10)))
    for sample in OrderChain(tabs, McmcConfig(burn_in=10, total_samples=50, thin_interval=3)).recorded():
        m = edge_posteriors_given_order(sample.order, tabs).values
        assert m.min() >= 0.0 and m.max() <= 1.0
        assert not np.any((m > 0.95) & (m.T > 0.95))
        assert np.isfinite(sample.log_score)


def test_single_node_chain():
    t = FamilyScoreTable(0, 1, 1, 1.0, np.full((1, 1), -1), np.array([-1.0]))
    assert run_order_mcmc([t], McmcConfig(0, 5, 1)).values.shape == (1, 1)


@pytest.mark.parametrize("kwargs", [dict(burn_in=-1), dict(total_samples=0),
                                    dict(thin_interval=0), dict(p_adjacent=1.5)])
def test_config_validation(kwargs):
    with pytest.raises(McmcError):
        McmcConfig(**kwargs)
