import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from mtdisco.transfer_prior import (
    PriorError,
    bma_integrand,
    build_prior_table,
    hyp2f1_quarter,
    log_normalizer_truncated,
    log_prior_bma,
    log_prior_bma_truncated,
    log_prior_fixed_lambda,
    normalizer_closed_form,
)


def delta_counts(u_size: int, cap: int | None = None) -> np.ndarray:
    """Number of (pk, pj) pairs over a |U|-set with each delta, by enumeration."""
    masks = np.arange(1 << u_size, dtype=np.int64)
    if cap is not None:
        masks = masks[np.bitwise_count(masks) <= cap]
    d = np.bitwise_count(masks[:, None] & ~masks[None, :]).ravel()
    return np.bincount(d, minlength=u_size + 1)


def pair_sum(u_size: int, weight) -> float:
    return math.fsum(c * weight(d) for d, c in enumerate(delta_counts(u_size)) if c)


def quad_bma(delta: int, u_size: int) -> float:
    val, _ = integrate.quad(bma_integrand, 0.0, 1.0, args=(delta, u_size),
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def test_fixed_examples():
    assert log_prior_fixed_lambda(0, 0, 0.3) == 0.0
    assert log_prior_fixed_lambda(1, 1, 0.0) == pytest.approx(math.log(0.25))
    total = sum(math.exp(log_prior_fixed_lambda(d, 1, 0.5)) for d in (0, 0, 0, 1))
    assert total == pytest.approx(1.0, abs=1e-15)
    assert log_prior_fixed_lambda(1, 3, 1.0) == -math.inf
    assert math.isfinite(log_prior_fixed_lambda(0, 3, 1.0))
    with pytest.raises(PriorError):
        log_prior_fixed_lambda(0, 1, 1.5)
    with pytest.raises(PriorError):
        log_prior_fixed_lambda(2, 1, 0.5)


def test_normalizer_examples():
    assert normalizer_closed_form(0, 0.5) == 0.0
    assert normalizer_closed_form(1, 0.0) == pytest.approx(math.log(4))
    assert pair_sum(1, lambda d: 1.0 ** d) == 4
    assert normalizer_closed_form(3, 0.25) == pytest.approx(3 * math.log(3.75))
    assert pair_sum(3, lambda d: 0.75 ** d) == pytest.approx(3.75 ** 3, rel=1e-14)
    assert delta_counts(3).sum() == 64


@pytest.mark.parametrize("lam", [0.0, 0.25, 0.5, 0.9])
@pytest.mark.parametrize("u", range(11))
def test_fixed_normalisation_exhaustive(u, lam):
    total = pair_sum(u, lambda d: math.exp(log_prior_fixed_lambda(d, u, lam)))
    assert total == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("u", range(11))
def test_bma_normalisation_exhaustive(u):
    total = pair_sum(u, lambda d: math.exp(log_prior_bma(d, u)))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_lambda_zero_uniform():
    for u in range(8):
        vals = {log_prior_fixed_lambda(d, u, 0.0) for d in range(u + 1)}
        assert len(vals) == 1


def test_bma_examples():
    assert log_prior_bma(0, 0) == 0.0
    assert log_prior_bma(0, 1) == pytest.approx(math.log(math.log(4 / 3)), rel=1e-14)
    assert math.exp(log_prior_bma(2, 5)) == pytest.approx(quad_bma(2, 5), rel=1e-10)


def test_bma_matches_quadrature_full_grid():
    for u in range(21):
        for d in range(u + 1):
            assert math.exp(log_prior_bma(d, u)) == pytest.approx(quad_bma(d, u), rel=1e-10), (u, d)
            assert log_prior_bma(d, u) <= 0.0


def test_hyp2f1_examples():
    assert hyp2f1_quarter(0, 7) == 1.0
    assert hyp2f1_quarter(1, 2) == pytest.approx(4 * math.log(4 / 3), abs=1e-12)
    exact = Fraction(0)
    term = Fraction(1)
    for t in range(200):
        exact += term
        term *= Fraction((5 + t) * (1 + t), (4 + t) * (t + 1)) / 4
    assert hyp2f1_quarter(5, 4) == pytest.approx(float(exact), rel=1e-14)


@given(st.integers(0, 60), st.integers(2, 70))
def test_hyp2f1_against_rational_series(a, c):
    exact = Fraction(0)
    term = Fraction(1)
    for t in range(400):
        exact += term
        term *= Fraction(a + t, c + t) / 4
        if term == 0:
            break
    val = hyp2f1_quarter(a, c)
    assert val >= 1.0
    assert val == pytest.approx(float(exact), rel=1e-13)


def test_hyp2f1_rejects_bad_arguments():
    with pytest.raises(PriorError):
        hyp2f1_quarter(-1, 3)
    with pytest.raises(PriorError):
        hyp2f1_quarter(1, 1)


def test_table_shapes_and_entries():
    t = build_prior_table(2, "bma")
    assert sorted(t.entries()) == [(0, 0), (1, 0), (1, 1)]
    f = build_prior_table(8, "fixed", cap=3, lam=0.0)
    for u in range(8):
        row = f.row(u)[: min(3, u) + 1]
        assert np.all(row == row[0])
    assert f(7, 3) == log_prior_fixed_lambda(3, 7, 0.0)
    assert np.isnan(f.row(1)[2])


@pytest.mark.parametrize("mode,lam", [("bma", None), ("fixed", 0.3), ("fixed", 0.9)])
def test_table_strictly_decreasing_in_delta(mode, lam):
    t = build_prior_table(9, mode, cap=4, lam=lam)
    for u in range(1, 9):
        row = t.row(u)[: min(4, u) + 1]
        assert np.all(np.diff(row) < 0)
        assert np.all(np.isfinite(row))


def test_table_errors():
    with pytest.raises(PriorError):
        build_prior_table(3, "fixed")
    with pytest.raises(PriorError):
        build_prior_table(3, "other")
    with pytest.raises(PriorError):
        build_prior_table(0)


@pytest.mark.parametrize("lam", [0.0, 0.4, 1.0])
@pytest.mark.parametrize("u,cap", [(0, 0), (3, 1), (5, 2), (6, 6), (8, 3)])
def test_truncated_normaliser_by_enumeration(u, cap, lam):
    counts = delta_counts(u, cap)
    expected = math.fsum(c * (1.0 if d == 0 else (1 - lam) ** d) for d, c in enumerate(counts))
    assert log_normalizer_truncated(u, cap, lam) == pytest.approx(math.log(expected), rel=1e-13)


def test_strict_tables_normalise_over_capped_pairs():
    u, cap = 6, 2
    counts = delta_counts(u, cap)
    strict_fixed = build_prior_table(u + 1, "fixed", cap=cap, lam=0.4, strict=True)
    total = math.fsum(c * math.exp(strict_fixed(u, d)) for d, c in enumerate(counts) if c)
    assert total == pytest.approx(1.0, abs=1e-12)
    total = math.fsum(c * math.exp(log_prior_bma_truncated(d, u, cap)) for d, c in enumerate(counts) if c)
    assert total == pytest.approx(1.0, abs=1e-10)
