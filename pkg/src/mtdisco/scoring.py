"""BDeu family scores, per-node score tables and the on-disk score cache."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .model_core import (
    MAX_VARIABLES,
    ParentSet,
    TaskData,
    ValidationError,
    enumerate_parent_sets,
    mask_from_members,
)

CACHE_FORMAT = "mtdisco-scores/1"
# parent configurations above this count are tallied with a sparse map
DENSE_CONFIG_LIMIT = 4096


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreConfig:
    max_parents: int = 3
    ess: float = 1.0
    max_configs: int = 2**40

    def __post_init__(self):
        if int(self.max_parents) != self.max_parents or self.max_parents < 1:
            raise ValidationError("max_parents must be a positive integer")
        if not self.ess > 0:
            raise ValidationError("ess must be positive")

    def cap(self, n: int) -> int:
        """In-degree cap actually usable with ``n`` variables."""
        return min(self.max_parents, n - 1)


@dataclass(frozen=True, eq=False)
class FamilyScoreTable:
    """Log marginal likelihoods of one node for every capped parent set.

    Entries are ordered by parent-set size, then lexicographically by member
    indices.  ``members`` holds the parent indices padded with -1.
    """

    child: int
    n: int
    max_parents: int
    ess: float
    members: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        members = np.asarray(self.members, dtype=np.int64).reshape(len(self.scores), -1)
        scores = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(scores)):
            raise ScoreError(f"non-finite score in table for node {self.child}")
        members.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def masks(self) -> np.ndarray:
        if self.n > MAX_VARIABLES:
            raise ValidationError(f"bitmasks need n <= {MAX_VARIABLES}, got {self.n}")
        cached = self.__dict__.get("_masks")
        if cached is None:
            cached = np.array([mask_from_members(r[r >= 0]) for r in self.members], dtype=np.uint64)
            cached.setflags(write=False)
            object.__setattr__(self, "_masks", cached)
        return cached

    def parent_sets(self) -> list[tuple[int, ...]]:
        return [tuple(int(x) for x in r if x >= 0) for r in self.members]

    def as_dict(self) -> dict[int, float]:
        return {int(m): float(s) for m, s in zip(self.masks, self.scores)}

    def lookup(self, parents) -> float:
        mask = parents.mask if isinstance(parents, ParentSet) else int(parents)
        hits = np.nonzero(self.masks == np.uint64(mask))[0]
        if not len(hits):
            raise KeyError(mask)
        return float(self.scores[hits[0]])

    def with_scores(self, scores: np.ndarray) -> "FamilyScoreTable":
        return FamilyScoreTable(self.child, self.n, self.max_parents, self.ess, self.members, scores)

    def to_dict(self) -> dict:
        return {
            "child": self.child,
            "parent_sets": self.parent_sets(),
            "scores": [float(s) for s in self.scores],
        }


def _as_members(parents, n: int) -> tuple[int, ...]:
    if isinstance(parents, ParentSet):
        return parents.members
    if isinstance(parents, (int, np.integer)):
        return tuple(i for i in range(n) if int(parents) >> i & 1)
    return tuple(sorted(int(p) for p in parents))


def family_counts(rows: np.ndarray, arities: Sequence[int], child: int,
                  parents: Sequence[int], max_configs: int = 2**40) -> np.ndarray:
    """Contingency table of (observed parent configuration, child state) counts.

    Parent configurations are mixed-radix keys with the lowest-index parent
    most significant.  Only configurations seen in the data are returned.
    """
    r_child = int(arities[child])
    q = 1
    for p in parents:
        q *= int(arities[p])
    if q > max_configs:
        raise ScoreError(
            f"node {child}: {q} parent configurations exceed the limit of {max_configs}")
    key = np.zeros(rows.shape[0], dtype=np.int64)
    for p in parents:
        key = key * int(arities[p]) + rows[:, p]
    x = rows[:, child]
    if q <= DENSE_CONFIG_LIMIT:
        counts = np.bincount(key * r_child + x, minlength=q * r_child).reshape(q, r_child)
        return counts[counts.sum(axis=1) > 0]
    _, inverse = np.unique(key, return_inverse=True)
    counts = np.zeros((inverse.max() + 1, r_child), dtype=np.int64)
    np.add.at(counts, (inverse.ravel(), x), 1)
    return counts


def _bdeu(counts: np.ndarray, q: int, r_child: int, ess: float) -> float:
    a_j = ess / q
    a_jc = ess / (q * r_child)
    m_j = counts.sum(axis=1)
    total = np.sum(gammaln(a_j) - gammaln(a_j + m_j))
    total += np.sum(gammaln(a_jc + counts) - gammaln(a_jc))
    return float(total)


def family_log_marginal(data: TaskData, child: int, parents, cfg: ScoreConfig) -> float:
    """log BDeu marginal likelihood of column ``child`` given ``parents``."""
    members = _as_members(parents, data.n)
    if child in members:
        raise ScoreError(f"node {child} cannot be its own parent")
    if len(members) > cfg.max_parents:
        raise ScoreError(f"{len(members)} parents exceed the cap {cfg.max_parents}")
    if data.m < 1:
        raise ScoreError("cannot score an empty dataset")
    arities = data.variables.arities
    counts = family_counts(data.rows, arities, child, members, cfg.max_configs)
    q = math.prod(arities[p] for p in members)
    return _bdeu(counts, q, arities[child], cfg.ess)


def build_score_table(data: TaskData, child: int, cfg: ScoreConfig) -> FamilyScoreTable:
    n = data.n
    cap = cfg.cap(n)
    others = [i for i in range(n) if i != child]
    sets = list(enumerate_parent_sets(others, cap))
    width = max(cap, 1)
    members = np.full((len(sets), width), -1, dtype=np.int64)
    scores = np.empty(len(sets))
    for k, ps in enumerate(sets):
        members[k, :len(ps)] = ps
        scores[k] = family_log_marginal(data, child, ps, cfg)
    return FamilyScoreTable(child, n, cap, cfg.ess, members, scores)


def build_score_tables(data: TaskData, cfg: ScoreConfig) -> list[FamilyScoreTable]:
    return [build_score_table(data, i, cfg) for i in range(data.n)]


def count_capped_sets(universe_size: int, cap: int) -> int:
    return sum(math.comb(universe_size, s) for s in range(min(cap, universe_size) + 1))


def log_structure_prior(parents, universe_size: int, cfg: ScoreConfig) -> float:
    """Uniform prior over the capped parent sets of a universe."""
    if isinstance(parents, ParentSet):
        size = len(parents)
    elif isinstance(parents, (int, np.integer)):
        size = bin(int(parents)).count("1")
    else:
        size = len(tuple(parents))
    if size > min(cfg.max_parents, universe_size):
        raise ScoreError("parent set larger than the cap or the universe")
    return -math.log(count_capped_sets(universe_size, cfg.max_parents))


def with_structure_prior(tables: Iterable[FamilyScoreTable], cfg: ScoreConfig) -> list[FamilyScoreTable]:
    """Add the (constant) structure prior over the full candidate universe."""
    out = []
    for t in tables:
        lp = -math.log(count_capped_sets(t.n - 1, cfg.max_parents))
        out.append(t.with_scores(t.scores + lp))
    return out


# -- cache ---------------------------------------------------------------------

def data_hash(data: TaskData) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(list(data.variables.arities)).encode())
    h.update(np.ascontiguousarray(data.rows, dtype="<i8").tobytes())
    return h.hexdigest()


def save_score_cache(path, tables: Sequence[FamilyScoreTable], digest: str, cfg: ScoreConfig) -> None:
    doc = {
        "format": CACHE_FORMAT,
        "data_hash": digest,
        "max_parents": cfg.max_parents,
        "ess": cfg.ess,
        "n": tables[0].n,
        "tables": [t.to_dict() for t in tables],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_score_cache(path, digest: str | None = None, cfg: ScoreConfig | None = None) -> list[FamilyScoreTable]:
    """Read a cache file, rejecting it if its key does not match."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CACHE_FORMAT:
        raise ScoreError(f"{path}: not a score cache")
    if digest is not None and doc["data_hash"] != digest:
        raise ScoreError(f"{path}: cache was built from different data")
    if cfg is not None and (doc["max_parents"] != cfg.max_parents or doc["ess"] != cfg.ess):
        raise ScoreError(
            f"{path}: cache built with r={doc['max_parents']}, ess={doc['ess']}; "
            f"requested r={cfg.max_parents}, ess={cfg.ess}")
    n = doc["n"]
    cap = min(doc["max_parents"], n - 1)
    tables = []
    for t in doc["tables"]:
        sets = t["parent_sets"]
        members = np.full((len(sets), max(cap, 1)), -1, dtype=np.int64)
        for k, ps in enumerate(sets):
            members[k, :len(ps)] = ps
        tables.append(FamilyScoreTable(t["child"], n, cap, doc["ess"], members, np.array(t["scores"])))
    return tables
