"""Core domain types: variables, parent sets, DAGs, orders, tasks and posteriors.

Parent sets are bitmasks over 0-based variable indices.  Exact and multitask
computations are limited to ``MAX_VARIABLES`` variables so that every mask fits
in an unsigned 64-bit word.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, Sequence

import numpy as np

MAX_VARIABLES = 64


class ValidationError(ValueError):
    """Raised when a domain object violates one of its invariants."""


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def mask_from_members(members: Iterable[int]) -> int:
    mask = 0
    for m in members:
        mask |= 1 << int(m)
    return mask


def members_of(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def edit_delta(pk: int, pj: int) -> int:
    """Number of parents in ``pk`` that are absent from ``pj``.

    This is the one-directional set difference ``|pk \\ pj|``; it is not
    symmetric, so ``edit_delta(a, b) + edit_delta(b, a)`` is the size of the
    symmetric difference.
    """
    return popcount(int(pk) & ~int(pj))


def enumerate_parent_sets(universe: Sequence[int], max_size: int) -> Iterator[tuple[int, ...]]:
    """Yield every subset of ``universe`` with at most ``max_size`` members.

    Subsets come in order of increasing size, lexicographic within a size.
    """
    universe = sorted(universe)
    for s in range(min(max_size, len(universe)) + 1):
        yield from combinations(universe, s)


@dataclass(frozen=True)
class ParentSet:
    mask: int
    width: int

    def __post_init__(self):
        if self.mask < 0 or self.mask >> self.width:
            raise ValidationError(f"mask {self.mask:#x} does not fit width {self.width}")

    @classmethod
    def of(cls, members: Iterable[int], width: int) -> "ParentSet":
        return cls(mask_from_members(members), width)

    @property
    def members(self) -> tuple[int, ...]:
        return members_of(self.mask)

    def __len__(self) -> int:
        return popcount(self.mask)

    def __contains__(self, i: int) -> bool:
        return bool(self.mask >> i & 1)


@dataclass(frozen=True)
class VariableTable:
    names: tuple[str, ...]
    arities: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(x) for x in self.names))
        object.__setattr__(self, "arities", tuple(int(a) for a in self.arities))
        if len(self.names) < 1:
            raise ValidationError("at least one variable is required")
        if len(self.names) != len(self.arities):
            raise ValidationError("names and arities differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("variable names must be unique")
        for name, a in zip(self.names, self.arities):
            if a < 2:
                raise ValidationError(f"variable {name!r} has arity {a} < 2")

    @property
    def n(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls, arities: Sequence[int]) -> "VariableTable":
        return cls(tuple(f"X{i}" for i in range(len(arities))), tuple(arities))

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Dag:
    """A directed graph stored as one parent mask per node.

    Acyclicity is checked on construction unless ``check=False`` (used to build
    graphs that are deliberately cyclic, e.g. in tests of `topological_check`).
    """

    parents: tuple[int, ...]
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        for i, p in enumerate(self.parents):
            if p >> i & 1:
                raise ValidationError(f"node {i} is its own parent")
            if p >> self.n:
                raise ValidationError(f"node {i} has a parent outside 0..{self.n - 1}")
        if self.check and not topological_check(self):
            raise ValidationError("graph contains a directed cycle")

    @property
    def n(self) -> int:
        return len(self.parents)

    @classmethod
    def empty(cls, n: int) -> "Dag":
        return cls((0,) * n)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], check: bool = True) -> "Dag":
        parents = [0] * n
        for u, v in edges:
            if u == v:
                raise ValidationError(f"self loop on node {u}")
            parents[v] |= 1 << u
        return cls(tuple(parents), check=check)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for v, p in enumerate(self.parents) for u in members_of(p)]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for u, v in self.edges():
            a[u, v] = True
        return a

    def topological_order(self) -> list[int] | None:
        remaining = list(self.parents)
        placed = 0
        order = []
        progress = True
        while progress and len(order) < self.n:
            progress = False
            for i in range(self.n):
                if not (placed >> i & 1) and remaining[i] & ~placed == 0:
                    order.append(i)
                    placed |= 1 << i
                    progress = True
        return order if len(order) == self.n else None


def topological_check(g: Dag) -> bool:
    """True iff ``g`` admits a topological order (i.e. is acyclic)."""
    return g.topological_order() is not None


@dataclass(frozen=True)
class Order:
    """A node order; ``perm[p]`` is the variable at position ``p``."""

    perm: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "perm", tuple(int(x) for x in self.perm))
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValidationError(f"{self.perm} is not a permutation")

    @property
    def n(self) -> int:
        return len(self.perm)

    def positions(self) -> tuple[int, ...]:
        pos = [0] * self.n
        for p, v in enumerate(self.perm):
            pos[v] = p
        return tuple(pos)

    def predecessors(self, i: int) -> int:
        """Mask of the variables placed before ``i``."""
        mask = 0
        for v in self.perm:
            if v == i:
                return mask
            mask |= 1 << v
        raise ValidationError(f"variable {i} not in order")


def dag_consistent_with_order(g: Dag, o: Order) -> bool:
    if g.n != o.n:
        raise ValidationError("graph and order have different sizes")
    return all(p & ~o.predecessors(i) == 0 for i, p in enumerate(g.parents))


@dataclass(frozen=True)
class Feature:
    """Directed-edge feature u -> v."""

    parent: int
    child: int

    def __post_init__(self):
        if self.parent == self.child:
            raise ValidationError("edge feature needs two distinct nodes")

    def indicator(self, parents_of_child: int) -> bool:
        return bool(parents_of_child >> self.parent & 1)


@dataclass(frozen=True, eq=False)
class TaskData:
    rows: np.ndarray
    variables: VariableTable
    task_id: int = 0

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise ValidationError("task data must be a 2-D matrix")
        if not np.issubdtype(rows.dtype, np.integer):
            if rows.size and not np.all(np.equal(np.mod(rows, 1), 0)):
                raise ValidationError("task data must hold integer category indices")
        rows = rows.astype(np.int64)
        if rows.shape[0] < 1:
            raise ValidationError("task data has no rows")
        if rows.shape[1] != self.variables.n:
            raise ValidationError(
                f"task data has {rows.shape[1]} columns, expected {self.variables.n}")
        arities = np.asarray(self.variables.arities)
        bad = (rows < 0) | (rows >= arities[None, :])
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValidationError(
                f"row {r}, column {self.variables.names[c]!r}: value {rows[r, c]} "
                f"outside 0..{arities[c] - 1}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.variables.n


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple[TaskData, ...]

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise ValidationError("a task set needs at least one task")
        first = self.tasks[0].variables
        for k, t in enumerate(self.tasks):
            if t.variables.arities != first.arities:
                raise ValidationError(f"task {k} does not share the variable table of task 0")

    @property
    def K(self) -> int:
        return len(self.tasks)

    @property
    def variables(self) -> VariableTable:
        return self.tasks[0].variables

    @property
    def n(self) -> int:
        return self.variables.n

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, k):
        return self.tasks[k]


@dataclass(frozen=True, eq=False)
class EdgePosteriorMatrix:
    """``values[u, v]`` is the posterior probability of the edge u -> v."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError("posterior matrix must be square")
        if np.any(np.diag(v) != 0):
            raise ValidationError("diagonal entries must be 0")
        if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise ValidationError("posterior entries must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, key):
        return self.values[key]

    def off_diagonal(self) -> np.ndarray:
        return self.values[~np.eye(self.n, dtype=bool)]
