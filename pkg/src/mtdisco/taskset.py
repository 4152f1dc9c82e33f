"""Multitask learning: transfer-biased family scores and the STL/MTL/POOL modes.

For task k and node i the biased score of a parent set pi is

    log P(x_i^k | pi) + log sum_{j != k} sum_{pi'} P(x_i^j | pi') P(pi, pi' | U)

where pi' runs over task j's capped parent sets (or its top-h subset).  The
prior is looked up at |U| = n - 1 so that biased scores do not depend on the
order and can feed the same lattice engine as single-task scores.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._logspace import lse_rows
from .exact_engine import DEFAULT_MAX_N, edge_posteriors_exact
from .mcmc_engine import McmcConfig, run_order_mcmc
from .model_core import EdgePosteriorMatrix, TaskData, TaskSet, ValidationError
from .scoring import (
    FamilyScoreTable,
    ScoreConfig,
    build_score_tables,
    count_capped_sets,
    with_structure_prior,
)
from .transfer_prior import TransferPriorTable, build_prior_table

log = logging.getLogger(__name__)

THREADS_ENV = "MTDISCO_THREADS"
AUTO_H_THRESHOLD = 12
AUTO_H = 1000
_BLOCK = 1 << 22  # max cells in one (own sets x other sets) block


@dataclass(frozen=True, eq=False)
class BiasedScoreTable(FamilyScoreTable):
    task: int = 0
    prior_mode: str = "none"
    top_h: int | None = None


@dataclass(frozen=True, eq=False)
class TopHSet:
    """The ``h`` best-scoring parent sets of one node in one task.

    ``indices`` point into the source table and are sorted by descending
    score, ties broken by ascending mask.
    """

    task: int
    node: int
    indices: np.ndarray
    masks: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def top_h_set(table: FamilyScoreTable, h: int, task: int = 0) -> TopHSet:
    if h < 1:
        raise ValidationError("h must be at least 1")
    order = np.lexsort((table.masks, -table.scores))[:h]
    return TopHSet(task, table.child, order, table.masks[order], table.scores[order])


def _delta_matrix(own: np.ndarray, other: np.ndarray) -> np.ndarray:
    return np.bitwise_count(own[:, None] & ~other[None, :]).astype(np.intp)


def _cross_task_term(own_masks: np.ndarray, other: FamilyScoreTable, keep: np.ndarray | None,
                     prior_row: np.ndarray) -> np.ndarray:
    """log sum over the other task's (kept) sets of exp(score + log prior)."""
    masks, scores = other.masks, other.scores
    if keep is not None:
        masks, scores = masks[keep], scores[keep]
    out = np.empty(len(own_masks))
    step = max(1, _BLOCK // max(1, len(masks)))
    for start in range(0, len(own_masks), step):
        block = own_masks[start:start + step]
        terms = scores[None, :] + prior_row[_delta_matrix(block, masks)]
        out[start:start + step] = lse_rows(terms)
    return out


def build_biased_scores(tasks: TaskSet | None, scores: Sequence[Sequence[FamilyScoreTable]],
                        prior: TransferPriorTable, h: int | None = None,
                        cfg: ScoreConfig | None = None) -> list[list[BiasedScoreTable]]:
    """Transfer-biased family scores for every task and node.

    ``scores[k][i]`` is task k's raw log marginal likelihood table for node i.
    With ``h`` the inner sum over another task's parent sets is restricted to
    that task's top-h sets (kept in table order).  A single task gets no
    transfer term; its tables receive the uniform structure prior instead.
    """
    K = len(scores)
    if K < 1:
        raise ValidationError("no tasks given")
    n = len(scores[0])
    if tasks is not None and (tasks.K != K or tasks.n != n):
        raise ValidationError("score tables do not match the task set")
    for k, tabs in enumerate(scores):
        if len(tabs) != n:
            raise ValidationError(f"task {k} has {len(tabs)} tables, expected {n}")
        for i, t in enumerate(tabs):
            if not np.array_equal(t.masks, scores[0][i].masks):
                raise ValidationError(f"task {k}, node {i}: parent sets differ from task 0")

    out: list[list[BiasedScoreTable]] = []
    if K == 1:
        r = scores[0][0].max_parents if cfg is None else cfg.max_parents
        lp = -np.log(count_capped_sets(n - 1, r))
        return [[BiasedScoreTable(t.child, t.n, t.max_parents, t.ess, t.members, t.scores + lp,
                                  task=0, prior_mode="none", top_h=None) for t in scores[0]]]

    prior_row = np.asarray(prior.row(n - 1))
    keep = None
    if h is not None:
        keep = [[np.sort(top_h_set(t, h, k).indices) for t in tabs] for k, tabs in enumerate(scores)]
    for k in range(K):
        row = []
        for i in range(n):
            own = scores[k][i]
            parts = [
                _cross_task_term(own.masks, scores[j][i], None if keep is None else keep[j][i], prior_row)
                for j in range(K) if j != k
            ]
            bias = parts[0] if len(parts) == 1 else lse_rows(np.stack(parts, axis=1))
            row.append(BiasedScoreTable(own.child, own.n, own.max_parents, own.ess, own.members,
                                        own.scores + bias, task=k, prior_mode=prior.mode, top_h=h))
        out.append(row)
    return out


@dataclass(frozen=True)
class DiscoveryConfig:
    """Settings shared by the three learning modes.

    ``prior`` is "bma" or "fixed" (with ``lam``).  ``h`` is "auto" (top-1000
    sets when n > 12, full sums otherwise), None for full sums, or an int.
    """

    score: ScoreConfig = field(default_factory=ScoreConfig)
    engine: str = "exact"
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    max_n: int = DEFAULT_MAX_N
    prior: str = "bma"
    lam: float | None = None
    h: int | str | None = "auto"
    strict_prior: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.engine not in ("exact", "mcmc"):
            raise ValidationError(f"unknown engine {self.engine!r}")
        if self.prior not in ("bma", "fixed"):
            raise ValidationError(f"unknown prior mode {self.prior!r}")
        if self.prior == "fixed" and self.lam is None:
            raise ValidationError("fixed prior needs lam")

    def resolve_h(self, n: int) -> int | None:
        if self.h == "auto":
            return AUTO_H if n > AUTO_H_THRESHOLD else None
        return self.h

    def worker_count(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        return max(1, int(os.environ.get(THREADS_ENV, "1")))


def posteriors_from_scores(betas: Sequence, cfg: DiscoveryConfig) -> EdgePosteriorMatrix:
    if cfg.engine == "exact":
        return edge_posteriors_exact(betas, max_n=cfg.max_n)
    return run_order_mcmc(betas, cfg.mcmc)


def _map(fn, items, cfg: DiscoveryConfig) -> list:
    workers = cfg.worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def score_tasks(tasks: TaskSet, cfg: DiscoveryConfig) -> list[list[FamilyScoreTable]]:
    return _map(lambda t: build_score_tables(t, cfg.score), list(tasks), cfg)


def run_stl(tasks: TaskSet, cfg: DiscoveryConfig,
            scores: Sequence[Sequence[FamilyScoreTable]] | None = None) -> list[EdgePosteriorMatrix]:
    """Learn each task on its own data."""
    if scores is None:
        scores = score_tasks(tasks, cfg)
    betas = [with_structure_prior(tabs, cfg.score) for tabs in scores]
    return _map(lambda b: posteriors_from_scores(b, cfg), betas, cfg)


def pool_tasks(tasks: TaskSet) -> TaskData:
    rows = np.concatenate([t.rows for t in tasks], axis=0)
    return TaskData(rows, tasks.variables, task_id=0)


def run_pool(tasks: TaskSet, cfg: DiscoveryConfig) -> EdgePosteriorMatrix:
    """Concatenate every task's rows and learn one network."""
    pooled = pool_tasks(tasks)
    betas = with_structure_prior(build_score_tables(pooled, cfg.score), cfg.score)
    return posteriors_from_scores(betas, cfg)


def make_prior(n: int, cfg: DiscoveryConfig) -> TransferPriorTable:
    cap = cfg.score.cap(n)
    lam = cfg.lam if cfg.prior == "fixed" else None
    return build_prior_table(n, cfg.prior, cap=cap, lam=lam, strict=cfg.strict_prior)


def run_mtl(tasks: TaskSet, cfg: DiscoveryConfig,
            scores: Sequence[Sequence[FamilyScoreTable]] | None = None,
            prior: TransferPriorTable | None = None) -> list[EdgePosteriorMatrix]:
    """Learn every task with the transfer-biased scores."""
    if tasks.K < 2:
        log.warning("multitask learning with a single task has no transfer term")
    if scores is None:
        scores = score_tasks(tasks, cfg)
    if prior is None:
        prior = make_prior(tasks.n, cfg)
    biased = build_biased_scores(tasks, scores, prior, cfg.resolve_h(tasks.n), cfg.score)
    return _map(lambda b: posteriors_from_scores(b, cfg), biased, cfg)
