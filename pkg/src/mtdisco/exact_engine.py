"""Exact edge posteriors by dynamic programming over the subset lattice.

For each node ``i`` the truncated zeta transform turns family scores
beta_i(pi) into alpha_i(U) = sum over capped pi within U of beta_i(pi).  A
forward sweep accumulates, for every node set S, the total weight of all
orderings of S placed first; a backward sweep does the same for suffixes.
The numerator for an edge u -> v is then

    sum over capped pi containing u of beta_v(pi) * W_v(pi),

where W_v(pi) sums forward(U) * backward(U + v) over all U that contain pi
(a superset transform).  Everything is kept in natural-log space and the
order prior is uniform.

Node subsets are bitmasks.  Per-node tables over subsets of V - {i} use a
compressed index that drops bit ``i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._logspace import lse, lse_rows
from .model_core import EdgePosteriorMatrix

log = logging.getLogger(__name__)

DEFAULT_MAX_N = 25
_CHUNK = 1 << 16


class EngineCeilingError(RuntimeError):
    """Raised when the exact engine is asked to handle too many variables."""


@dataclass(frozen=True, eq=False)
class AlphaTable:
    node: int
    n: int
    alpha: np.ndarray  # indexed by compressed subsets of V - {node}

    def __getitem__(self, full_mask: int) -> float:
        return float(self.alpha[int(compress(np.int64(full_mask), self.node))])


@dataclass(frozen=True, eq=False)
class LatticeAccumulator:
    forward: np.ndarray
    backward: np.ndarray

    @property
    def log_evidence(self) -> float:
        return float(self.forward[-1])


def compress(masks, i):
    """Drop bit ``i`` from full-width masks (which must not contain it)."""
    masks = np.asarray(masks, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    low = (np.int64(1) << i) - 1
    return (masks & low) | ((masks >> (i + 1)) << i)


def expand(idx, i):
    """Inverse of `compress`: reinsert a zero at bit ``i``."""
    idx = np.asarray(idx, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    low = (np.int64(1) << i) - 1
    return (idx & low) | ((idx >> i) << (i + 1))


def _check_size(n: int, max_n: int) -> None:
    if n > max_n:
        raise EngineCeilingError(
            f"exact engine limited to n <= {max_n} (got n={n}); "
            "use the MCMC engine or raise max_n explicitly")


def zeta_transform_truncated(beta) -> AlphaTable:
    """alpha(U) = logsumexp of beta(pi) over capped pi within U, for every U.

    ``beta`` is a score table (``child``, ``n``, ``masks``, ``scores``); sets
    missing from it, in particular those above the cap, contribute nothing.
    """
    n, i = beta.n, beta.child
    size = 1 << (n - 1)
    alpha = np.full(size, -np.inf)
    alpha[compress(beta.masks.astype(np.int64), i)] = beta.scores
    for j in range(n - 1):
        view = alpha.reshape(-1, 2, 1 << j)
        np.logaddexp(view[:, 1, :], view[:, 0, :], out=view[:, 1, :])
    return AlphaTable(i, n, alpha)


def _levels(n: int) -> list[np.ndarray]:
    masks = np.arange(1 << n, dtype=np.int64)
    pc = np.bitwise_count(masks)
    order = np.argsort(pc, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(pc, minlength=n + 1))])
    return [order[bounds[k]:bounds[k + 1]] for k in range(n + 1)]


def lattice_sweeps(alpha: np.ndarray, n: int) -> LatticeAccumulator:
    """Forward and backward log-weights for every node set.

    ``forward[S]`` sums, over orderings of S, the product of alpha of each node
    given its predecessors.  ``backward[S]`` sums over orderings of the
    remaining nodes placed after S.  Both end-points equal the log evidence.
    """
    levels = _levels(n)
    bit = np.int64(1) << np.arange(n, dtype=np.int64)
    fwd = np.full(1 << n, -np.inf)
    fwd[0] = 0.0
    for k in range(1, n + 1):
        level = levels[k]
        for start in range(0, len(level), _CHUNK):
            S = level[start:start + _CHUNK]
            rows, nodes = np.nonzero(S[:, None] & bit[None, :])
            prev = S[rows] ^ bit[nodes]
            vals = fwd[prev] + alpha[nodes, compress(prev, nodes)]
            fwd[S] = lse_rows(vals.reshape(len(S), k))
    bwd = np.full(1 << n, -np.inf)
    bwd[-1] = 0.0
    for k in range(n - 1, -1, -1):
        level = levels[k]
        for start in range(0, len(level), _CHUNK):
            S = level[start:start + _CHUNK]
            rows, nodes = np.nonzero((S[:, None] & bit[None, :]) == 0)
            vals = alpha[nodes, compress(S[rows], nodes)] + bwd[S[rows] | bit[nodes]]
            bwd[S] = lse_rows(vals.reshape(len(S), n - k))
    return LatticeAccumulator(fwd, bwd)


def _alpha_matrix(tables: Sequence) -> np.ndarray:
    n = len(tables)
    for i, t in enumerate(tables):
        if t.child != i or t.n != n:
            raise ValueError(f"table {i} is for node {t.child} of an n={t.n} model")
    return np.stack([zeta_transform_truncated(t).alpha for t in tables])


def marginal_log_evidence(tables: Sequence, max_n: int = DEFAULT_MAX_N) -> float:
    """log of the sum over orders of P(D | order), order prior left unnormalised."""
    n = len(tables)
    _check_size(n, max_n)
    return lattice_sweeps(_alpha_matrix(tables), n).log_evidence


def _superset_sums(w: np.ndarray, width: int) -> np.ndarray:
    for j in range(width):
        view = w.reshape(-1, 2, 1 << j)
        np.logaddexp(view[:, 0, :], view[:, 1, :], out=view[:, 0, :])
    return w


def edge_posteriors_exact(tables: Sequence, max_n: int = DEFAULT_MAX_N,
                          return_evidence: bool = False):
    """Posterior probability of every directed edge, summed over all orders.

    ``tables[i]`` holds log beta_i for node i (marginal likelihood plus any
    structure or transfer prior).  Returns an `EdgePosteriorMatrix`, and the
    log evidence as well when ``return_evidence`` is set.
    """
    n = len(tables)
    _check_size(n, max_n)
    alpha = _alpha_matrix(tables)
    acc = lattice_sweeps(alpha, n)
    log_z = acc.log_evidence
    post = np.zeros((n, n))
    idx = np.arange(1 << (n - 1), dtype=np.int64)
    for v, t in enumerate(tables):
        full = expand(idx, v)
        w = acc.forward[full] + acc.backward[full | (np.int64(1) << v)]
        w = _superset_sums(w, n - 1)
        masks = t.masks.astype(np.int64)
        terms = t.scores + w[compress(masks, v)]
        check = lse(terms)
        if not np.isclose(check, log_z, rtol=0, atol=1e-8 * max(1.0, abs(log_z))):
            log.warning("node %d: feature-free sum %.12g differs from evidence %.12g", v, check, log_z)
        for u in range(n):
            if u == v:
                continue
            has_u = (masks >> u) & 1 == 1
            post[u, v] = np.exp(lse(terms[has_u]) - log_z)
    worst = post.max(initial=0.0)
    if worst > 1 + 1e-12:
        log.warning("edge posterior %.3g exceeds 1; clamping", worst)
    np.clip(post, 0.0, 1.0, out=post)
    np.fill_diagonal(post, 0.0)
    result = EdgePosteriorMatrix(post)
    return (result, log_z) if return_evidence else result
