"""Pairwise transfer prior over parent sets of the same node in two tasks.

The prior penalises parents present in one task's set but absent from the
other's with a geometric factor ``(1 - lam) ** delta``.  ``lam`` is either
fixed or integrated out under a uniform prior on [0, 1], which yields a
Gauss hypergeometric closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

MAX_SERIES_TERMS = 10_000


class PriorError(ValueError):
    pass


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise PriorError(f"lambda must lie in [0, 1], got {lam}")


def log_prior_fixed_lambda(delta: int, u_size: int, lam: float) -> float:
    """log P(pk, pj | U, lam) = delta*log(1-lam) - |U|*log(4-lam).

    Returns ``-inf`` when ``lam == 1`` and ``delta > 0``.
    """
    _check_lambda(lam)
    if not 0 <= delta <= u_size:
        raise PriorError(f"need 0 <= delta <= |U|, got delta={delta}, |U|={u_size}")
    if delta == 0:
        penalty = 0.0  # 0**0 == 1 at lam == 1
    elif lam == 1.0:
        return -math.inf
    else:
        penalty = delta * math.log1p(-lam)
    return penalty - normalizer_closed_form(u_size, lam)


def normalizer_closed_form(u_size: int, lam: float) -> float:
    """log of sum over all parent-set pairs of (1-lam)**delta, i.e. |U|*log(4-lam)."""
    _check_lambda(lam)
    return u_size * math.log(4.0 - lam)


def log_normalizer_truncated(u_size: int, cap: int, lam: float) -> float:
    """log normaliser when both parent sets are limited to ``cap`` members.

    Counts pairs by (|pk|, |pk & pj|, |pj|): choosing pk of size a, keeping c
    of its members in pj and adding b - c from the remaining |U| - a gives
    C(|U|, a) * C(a, c) * C(|U| - a, b - c) pairs with delta = a - c.
    """
    _check_lambda(lam)
    cap = min(cap, u_size)
    total = 0.0
    for a in range(cap + 1):
        for c in range(a + 1):
            weight = 1.0 if a == c else (1.0 - lam) ** (a - c)
            if weight == 0.0:
                continue
            pairs = sum(math.comb(u_size - a, b - c) for b in range(c, cap + 1))
            total += math.comb(u_size, a) * math.comb(a, c) * pairs * weight
    return math.log(total)


def hyp2f1_quarter(a: int, c: int) -> float:
    """2F1(a, 1; c; 1/4) for integers a >= 0, c >= 2, by direct series summation."""
    if a < 0 or c < 2 or int(a) != a or int(c) != c:
        raise PriorError(f"need integers a >= 0 and c >= 2, got a={a}, c={c}")
    total = 1.0
    term = 1.0
    for t in range(MAX_SERIES_TERMS):
        # (1)_t / t! == 1, so the t+1 ratio reduces to (a+t)/(c+t)/4
        term *= (a + t) * (1 + t) / ((c + t) * (t + 1)) * 0.25
        total += term
        if abs(term) < 1e-16 * total:
            return total
    raise PriorError(f"2F1({a}, 1; {c}; 1/4) did not converge in {MAX_SERIES_TERMS} terms")


def log_prior_bma(delta: int, u_size: int) -> float:
    """log of the prior averaged over lam ~ Uniform[0, 1].

    Equals log( 2F1(|U|, 1; delta+2; 1/4) / (4**|U| * (delta+1)) ).
    """
    if not 0 <= delta <= u_size:
        raise PriorError(f"need 0 <= delta <= |U|, got delta={delta}, |U|={u_size}")
    return math.log(hyp2f1_quarter(u_size, delta + 2)) - u_size * math.log(4.0) - math.log(delta + 1)


def bma_integrand(lam: float, delta: int, u_size: int) -> float:
    return (1.0 - lam) ** delta / (4.0 - lam) ** u_size


def log_prior_bma_truncated(delta: int, u_size: int, cap: int) -> float:
    """BMA prior with the capped normaliser; no closed form, so integrate numerically."""
    def f(lam):
        return (1.0 - lam) ** delta * math.exp(-log_normalizer_truncated(u_size, cap, lam))
    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return math.log(val)


@dataclass(frozen=True, eq=False)
class TransferPriorTable:
    """Log prior values on the (|U|, delta) grid.

    ``values[u, d]`` holds the prior for |U| = u and delta = d; cells with
    d > min(cap, u) are NaN.  ``lam`` is None in BMA mode.
    """

    mode: str
    lam: float | None
    cap: int
    strict: bool
    values: np.ndarray

    def __call__(self, u_size: int, delta: int) -> float:
        return float(self.values[u_size, delta])

    def row(self, u_size: int) -> np.ndarray:
        """Prior values for every delta at a fixed |U| (NaN past the cap)."""
        return self.values[u_size]

    def entries(self) -> dict[tuple[int, int], float]:
        out = {}
        for u in range(self.values.shape[0]):
            for d in range(min(self.cap, u) + 1):
                out[(u, d)] = float(self.values[u, d])
        return out


def build_prior_table(n: int, mode: str = "bma", cap: int | None = None,
                      lam: float | None = None, strict: bool = False) -> TransferPriorTable:
    """Precompute the prior for |U| in 0..n-1 and delta in 0..min(cap, |U|).

    ``mode`` is "bma" or "fixed" (which needs ``lam``).  With ``strict`` the
    normaliser counts only parent sets within the cap instead of using the
    uncapped closed form.
    """
    if n < 1:
        raise PriorError("n must be at least 1")
    cap = n - 1 if cap is None else min(cap, n - 1)
    if mode == "fixed":
        if lam is None:
            raise PriorError("fixed mode needs a lambda value")
        _check_lambda(lam)
    elif mode == "bma":
        lam = None
    else:
        raise PriorError(f"unknown prior mode {mode!r}")

    values = np.full((n, cap + 1), np.nan)
    for u in range(n):
        for d in range(min(cap, u) + 1):
            if mode == "fixed":
                v = log_prior_fixed_lambda(d, u, lam)
                if strict:
                    v += normalizer_closed_form(u, lam) - log_normalizer_truncated(u, cap, lam)
            elif strict:
                v = log_prior_bma_truncated(d, u, cap)
            else:
                v = log_prior_bma(d, u)
            values[u, d] = v
    values.setflags(write=False)
    return TransferPriorTable(mode, lam, cap, strict, values)
