"""Order-MCMC approximation of edge posteriors.

A Metropolis-Hastings chain walks over node orders using symmetric
transposition proposals.  Each recorded order contributes its exact
order-conditional edge posteriors; the estimate is their arithmetic mean.

Parent sets are handled as member lists rather than bitmasks, so the engine
is not bound by the 64-variable mask width.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import math

import numpy as np

from ._logspace import lse
from .model_core import EdgePosteriorMatrix, Order


class McmcError(ValueError):
    pass


@dataclass(frozen=True)
class McmcConfig:
    burn_in: int = 1000
    total_samples: int = 100
    thin_interval: int = 10
    seed: int = 0
    p_adjacent: float = 0.75

    def __post_init__(self):
        if self.burn_in < 0:
            raise McmcError("burn_in must be non-negative")
        if self.total_samples < 1:
            raise McmcError("total_samples must be positive")
        if self.thin_interval < 1:
            raise McmcError("thin_interval must be positive")
        if not 0.0 <= self.p_adjacent <= 1.0:
            raise McmcError("p_adjacent must be a probability")


@dataclass(frozen=True)
class OrderSample:
    order: Order
    log_score: float


class _LocalScorer:
    """Per-node sums over the capped parent sets that fit a predecessor set.

    Results are memoised on (node, predecessor mask).
    """

    def __init__(self, tables: Sequence):
        self.n = len(tables)
        self.members = [np.asarray(t.members) for t in tables]
        self.scores = [np.asarray(t.scores, dtype=float) for t in tables]
        self._sums: dict[tuple[int, int], float] = {}
        self._edges: dict[tuple[int, int], np.ndarray] = {}

    def _fits(self, v: int, pred_mask: int) -> np.ndarray:
        inside = np.zeros(self.n + 1, dtype=bool)
        inside[-1] = True  # padding entries (-1) always fit
        inside[[u for u in range(self.n) if pred_mask >> u & 1]] = True
        return inside[self.members[v]].all(axis=1)

    def local(self, v: int, pred_mask: int) -> float:
        key = (v, pred_mask)
        val = self._sums.get(key)
        if val is None:
            val = lse(self.scores[v][self._fits(v, pred_mask)])
            self._sums[key] = val
        return val

    def edge_probs(self, v: int, pred_mask: int) -> np.ndarray:
        """P(u in parents(v) | order) for every u."""
        key = (v, pred_mask)
        val = self._edges.get(key)
        if val is None:
            fits = self._fits(v, pred_mask)
            s = self.scores[v][fits]
            w = np.exp(s - lse(s))
            mem = self.members[v][fits]
            width = mem.shape[1]
            flat = mem.ravel()
            keep = flat >= 0
            val = np.bincount(flat[keep], weights=np.repeat(w, width)[keep], minlength=self.n)
            self._edges[key] = val
        return val


def _pos_ext(perm: Sequence[int]) -> np.ndarray:
    # trailing -1 lets padded member entries (-1) index a position below every node
    pos = np.empty(len(perm) + 1, dtype=np.int64)
    pos[np.asarray(perm)] = np.arange(len(perm))
    pos[-1] = -1
    return pos


def _prefix_masks(perm: Sequence[int]) -> list[int]:
    out = [0]
    for v in perm:
        out.append(out[-1] | (1 << int(v)))
    return out


def order_log_score(order: Order, tables: Sequence) -> float:
    """log P(D | order): sum over nodes of the log of their capped parent-set sums."""
    pos = _pos_ext(order.perm)
    total = 0.0
    for v, t in enumerate(tables):
        fits = pos[np.asarray(t.members)].max(axis=1) < pos[v]
        total += lse(np.asarray(t.scores)[fits])
    return total


def edge_posteriors_given_order(order: Order, tables: Sequence) -> EdgePosteriorMatrix:
    scorer = _LocalScorer(tables)
    prefix = _prefix_masks(order.perm)
    post = np.zeros((scorer.n, scorer.n))
    for p, v in enumerate(order.perm):
        post[:, v] = scorer.edge_probs(v, prefix[p])
    np.fill_diagonal(post, 0.0)
    return EdgePosteriorMatrix(np.clip(post, 0.0, 1.0))


class OrderChain:
    """Metropolis-Hastings chain over node orders.

    Proposals swap two adjacent positions with probability ``p_adjacent``
    and an arbitrary pair of positions otherwise; both are symmetric so the
    acceptance ratio is the score ratio.
    """

    _BATCH = 4096

    def __init__(self, tables: Sequence, cfg: McmcConfig, scorer: _LocalScorer | None = None):
        self.n = len(tables)
        self.tables = tables
        self.cfg = cfg
        self.scorer = scorer or _LocalScorer(tables)
        self.rng = np.random.default_rng(cfg.seed)
        self.perm = [int(x) for x in self.rng.permutation(self.n)]
        self.prefix = _prefix_masks(self.perm)
        self.local = [0.0] * self.n
        for p, v in enumerate(self.perm):
            self.local[v] = self.scorer.local(v, self.prefix[p])
        self.proposed = 0
        self.accepted = 0

    def _random_batches(self):
        n = self.n
        while True:
            b = self._BATCH
            kind = self.rng.random(b) < self.cfg.p_adjacent
            adj = self.rng.integers(0, n - 1, b)
            i = self.rng.integers(0, n, b)
            j = self.rng.integers(0, n - 1, b)
            j = j + (j >= i)
            acc = np.log(self.rng.random(b))
            yield from zip(kind.tolist(), adj.tolist(), i.tolist(), j.tolist(), acc.tolist())

    def _propose(self, lo: int, hi: int):
        """Score change and new local values from swapping positions lo < hi."""
        perm = self.perm[:]
        perm[lo], perm[hi] = perm[hi], perm[lo]
        prefix = self.prefix[:lo + 1]
        for p in range(lo, hi):
            prefix.append(prefix[-1] | (1 << perm[p]))
        new_local = {}
        delta = 0.0
        for p in range(lo, hi + 1):
            v = perm[p]
            new_local[v] = self.scorer.local(v, prefix[p])
            delta += new_local[v] - self.local[v]
        return delta, perm, new_local

    def steps(self) -> Iterator[None]:
        if self.n < 2:
            while True:
                yield
        for adjacent, a, i, j, log_u in self._random_batches():
            lo, hi = (a, a + 1) if adjacent else (min(i, j), max(i, j))
            delta, perm, new_local = self._propose(lo, hi)
            self.proposed += 1
            if log_u < delta:
                self.accepted += 1
                self.perm = perm
                self.prefix = _prefix_masks(perm)
                for v, val in new_local.items():
                    self.local[v] = val
            yield

    @property
    def log_score(self) -> float:
        return math.fsum(self.local)

    def recorded(self) -> Iterator[OrderSample]:
        """Yield the recorded states: one after burn-in, then every thin-th step."""
        it = self.steps()
        for _ in range(self.cfg.burn_in):
            next(it)
        for t in range(self.cfg.total_samples):
            if t:
                for _ in range(self.cfg.thin_interval):
                    next(it)
            yield OrderSample(Order(tuple(self.perm)), self.log_score)

    def full_log_score(self) -> float:
        return order_log_score(Order(tuple(self.perm)), self.tables)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


def run_order_mcmc(tables: Sequence, cfg: McmcConfig) -> EdgePosteriorMatrix:
    """Average order-conditional edge posteriors over the recorded chain states."""
    chain = OrderChain(tables, cfg)
    n = chain.n
    # tally (node, predecessor set) visits; each maps to one posterior column
    counts: dict[tuple[int, int], int] = {}
    recorded = 0
    for _ in chain.recorded():
        recorded += 1
        for p, v in enumerate(chain.perm):
            key = (v, chain.prefix[p])
            counts[key] = counts.get(key, 0) + 1
    post = np.zeros((n, n))
    for (v, pred), c in counts.items():
        post[:, v] += c * chain.scorer.edge_probs(v, pred)
    post /= recorded
    np.fill_diagonal(post, 0.0)
    return EdgePosteriorMatrix(np.clip(post, 0.0, 1.0))
