"""Discrete Bayesian networks, data simulation and related-task generation.

Network files are JSON documents::

    {"format": "mtdisco-network/1", "name": "asia",
     "variables": [{"name": "asia", "arity": 2, "states": ["yes", "no"]}, ...],
     "edges": [["asia", "tub"], ...],
     "cpts": {"tub": [[0.05, 0.95], [0.01, 0.99]], ...}}

Each CPT lists one row per parent configuration.  Configurations are in
mixed-radix order over the parents sorted by variable index, with the
lowest-index parent most significant.  Floats are written in shortest
round-trip form, so files reload bit-for-bit.

Task data files are CSV: a header of variable names, then one row of integer
category indices per sample.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .model_core import Dag, TaskData, TaskSet, ValidationError, VariableTable, members_of

NETWORK_FORMAT = "mtdisco-network/1"
BUNDLED = ("asia", "alarm")


class NetworkFormatError(ValidationError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteBayesNet:
    variables: VariableTable
    dag: Dag
    cpts: tuple[np.ndarray, ...]
    name: str = "network"
    states: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        n = self.variables.n
        if self.dag.n != n or len(self.cpts) != n:
            raise NetworkFormatError("variables, graph and CPTs disagree on the node count")
        cpts = []
        for i, cpt in enumerate(self.cpts):
            name = self.variables.names[i]
            cpt = np.array(cpt, dtype=float)
            q = math.prod(self.variables.arities[p] for p in self.parents(i))
            if cpt.shape != (q, self.variables.arities[i]):
                raise NetworkFormatError(
                    f"CPT of {name!r} has shape {cpt.shape}, expected {(q, self.variables.arities[i])}")
            if np.any(cpt < 0) or not np.all(np.isfinite(cpt)):
                raise NetworkFormatError(f"CPT of {name!r} has invalid probabilities")
            sums = cpt.sum(axis=1)
            bad = np.nonzero(np.abs(sums - 1.0) > 1e-9)[0]
            if len(bad):
                raise NetworkFormatError(
                    f"CPT of {name!r}, row {bad[0]}: probabilities sum to {sums[bad[0]]:.12g}")
            cpt.setflags(write=False)
            cpts.append(cpt)
        object.__setattr__(self, "cpts", tuple(cpts))

    @property
    def n(self) -> int:
        return self.variables.n

    def parents(self, i: int) -> tuple[int, ...]:
        return members_of(self.dag.parents[i])

    def factor(self, i: int) -> tuple[tuple[int, ...], np.ndarray]:
        """CPT of node i as an array with one axis per parent, then the node."""
        pa = self.parents(i)
        shape = [self.variables.arities[p] for p in pa] + [self.variables.arities[i]]
        return pa + (i,), self.cpts[i].reshape(shape)


# -- file I/O -----------------------------------------------------------------

def network_from_dict(doc: dict) -> DiscreteBayesNet:
    if doc.get("format", NETWORK_FORMAT) != NETWORK_FORMAT:
        raise NetworkFormatError(f"unsupported network format {doc.get('format')!r}")
    try:
        names = [v["name"] for v in doc["variables"]]
        arities = [int(v["arity"]) for v in doc["variables"]]
        states = tuple(tuple(v.get("states") or range(a)) for v, a in zip(doc["variables"], arities))
        variables = VariableTable(tuple(names), tuple(arities))
        edges = []
        for u, v in doc.get("edges", []):
            if u not in names or v not in names:
                raise NetworkFormatError(f"edge {u!r} -> {v!r} names an unknown variable")
            edges.append((names.index(u), names.index(v)))
        dag = Dag.from_edges(len(names), edges, check=False)
        if dag.topological_order() is None:
            raise NetworkFormatError("network graph contains a cycle")
        cpts = []
        for name in names:
            if name not in doc["cpts"]:
                raise NetworkFormatError(f"missing CPT for {name!r}")
            cpts.append(np.asarray(doc["cpts"][name], dtype=float))
    except (KeyError, TypeError) as exc:
        raise NetworkFormatError(f"malformed network document: {exc}") from exc
    return DiscreteBayesNet(variables, Dag(dag.parents), tuple(cpts), doc.get("name", "network"),
                            tuple(tuple(str(s) for s in st) for st in states))


def network_to_dict(net: DiscreteBayesNet) -> dict:
    names = net.variables.names
    states = net.states or tuple(tuple(str(s) for s in range(a)) for a in net.variables.arities)
    return {
        "format": NETWORK_FORMAT,
        "name": net.name,
        "variables": [{"name": nm, "arity": a, "states": list(st)}
                      for nm, a, st in zip(names, net.variables.arities, states)],
        "edges": [[names[u], names[v]] for u, v in sorted(net.dag.edges(), key=lambda e: (e[1], e[0]))],
        "cpts": {names[i]: net.cpts[i].tolist() for i in range(net.n)},
    }


def load_network(path) -> DiscreteBayesNet:
    """Load a network file, or a bundled network by name ("asia", "alarm")."""
    if str(path) in BUNDLED:
        text = resources.files("mtdisco").joinpath("data", f"{path}.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
    return network_from_dict(doc)


def save_network(net: DiscreteBayesNet, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def save_task_data(data: TaskData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(data.variables.names)
        w.writerows(data.rows.tolist())


def load_task_data(path, arities: Sequence[int] | None = None, task_id: int = 0) -> TaskData:
    """Read a CSV task file.  Arities default to (max observed value + 1, at least 2)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[int(x) for x in r] for r in reader if r]
    mat = np.array(rows, dtype=np.int64).reshape(len(rows), len(header))
    if arities is None:
        arities = [max(2, int(c.max()) + 1) if len(c) else 2 for c in mat.T]
    return TaskData(mat, VariableTable(tuple(header), tuple(arities)), task_id)


def save_dag(dag: Dag, names: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parent", "child"])
        for u, v in sorted(dag.edges(), key=lambda e: (e[1], e[0])):
            w.writerow([names[u], names[v]])


def load_dag(path, names: Sequence[str]) -> Dag:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        edges = [(names.index(u), names.index(v)) for u, v in reader]
    return Dag.from_edges(len(names), edges)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


# -- inference ------------------------------------------------------------------

def _ancestors(net: DiscreteBayesNet, nodes: Sequence[int]) -> set[int]:
    seen = set(nodes)
    stack = list(nodes)
    while stack:
        v = stack.pop()
        for p in net.parents(v):
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def joint_marginal(net: DiscreteBayesNet, nodes: Sequence[int]) -> np.ndarray:
    """Exact joint distribution of ``nodes`` (axes in the given order).

    Variable elimination over the ancestral sub-network with a greedy
    smallest-factor elimination order.
    """
    nodes = list(nodes)
    if not nodes:
        return np.ones(())
    relevant = _ancestors(net, nodes)
    factors = [net.factor(i) for i in sorted(relevant)]
    arity = net.variables.arities
    for var in _elimination_order(factors, relevant - set(nodes), arity):
        touching = [f for f in factors if var in f[0]]
        factors = [f for f in factors if var not in f[0]]
        scope = sorted({v for f in touching for v in f[0]} - {var})
        operands = []
        for vs, arr in touching:
            operands += [arr, list(vs)]
        factors.append((tuple(scope), np.einsum(*operands, scope)))
    operands = []
    for vs, arr in factors:
        operands += [arr, list(vs)]
    joint = np.einsum(*operands, nodes) if operands else np.ones(())
    return joint / joint.sum()


def _elimination_order(factors, to_eliminate: set[int], arity) -> list[int]:
    scopes = [set(vs) for vs, _ in factors]
    order = []
    remaining = set(to_eliminate)
    while remaining:
        def cost(v):
            merged = set().union(*[s for s in scopes if v in s]) - {v}
            return (math.prod(arity[u] for u in merged), v)
        best = min(remaining, key=cost)
        merged = set().union(*[s for s in scopes if best in s]) - {best}
        scopes = [s for s in scopes if best not in s] + [merged]
        order.append(best)
        remaining.discard(best)
    return order


def node_marginals(net: DiscreteBayesNet) -> list[np.ndarray]:
    return [joint_marginal(net, [i]) for i in range(net.n)]


# -- sampling -----------------------------------------------------------------

def forward_sample(net: DiscreteBayesNet, m: int, seed=None, task_id: int = 0) -> TaskData:
    """Draw ``m`` rows by ancestral sampling."""
    if m < 1:
        raise ValidationError("m must be at least 1")
    rng = np.random.default_rng(seed)
    arity = net.variables.arities
    rows = np.zeros((m, net.n), dtype=np.int64)
    u = rng.random((m, net.n))
    for i in net.dag.topological_order():
        key = np.zeros(m, dtype=np.int64)
        for p in net.parents(i):
            key = key * arity[p] + rows[:, p]
        cum = np.cumsum(net.cpts[i], axis=1)[key]
        x = (u[:, i][:, None] >= cum).sum(axis=1)
        rows[:, i] = np.minimum(x, arity[i] - 1)
    return TaskData(rows, net.variables, task_id)


@dataclass(frozen=True)
class PerturbSpec:
    p_del: float
    seed: int | None = None
    repeats: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p_del <= 1.0:
            raise ValidationError(f"p_del must be a probability, got {self.p_del}")
        if self.repeats < 1:
            raise ValidationError("repeats must be positive")


def marginalize_parents(net: DiscreteBayesNet, child: int, drop: Sequence[int]) -> np.ndarray:
    """CPT of ``child`` after removing the parents in ``drop``.

    The removed parents are averaged out under their joint marginal in the
    original network.  For a single removed parent this is its marginal.
    """
    pa = list(net.parents(child))
    drop = sorted(drop)
    keep = [p for p in pa if p not in drop]
    if not drop:
        return net.cpts[child]
    weights = joint_marginal(net, drop)
    _, table = net.factor(child)
    axes = list(range(len(pa) + 1))
    w_axes = [pa.index(d) for d in drop]
    out_axes = [pa.index(k) for k in keep] + [len(pa)]
    merged = np.einsum(table, axes, weights, w_axes, out_axes)
    merged = merged.reshape(-1, net.variables.arities[child])
    return merged / merged.sum(axis=1, keepdims=True)


def perturb_network(net: DiscreteBayesNet, spec: PerturbSpec | float, seed=None) -> DiscreteBayesNet:
    """Delete each edge independently with probability ``p_del``.

    The child's CPT is re-derived by marginalising the deleted parents out.
    Edges are visited in (child, parent) index order, one uniform draw each.
    """
    if not isinstance(spec, PerturbSpec):
        spec = PerturbSpec(float(spec), seed)
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    edges = sorted(net.dag.edges(), key=lambda e: (e[1], e[0]))
    draws = rng.random(len(edges))
    deleted: dict[int, list[int]] = {}
    for (u, v), d in zip(edges, draws):
        if d < spec.p_del:
            deleted.setdefault(v, []).append(u)
    if not deleted:
        return net
    parents = list(net.dag.parents)
    cpts = list(net.cpts)
    for v, drop in deleted.items():
        cpts[v] = marginalize_parents(net, v, drop)
        for u in drop:
            parents[v] &= ~(1 << u)
    return DiscreteBayesNet(net.variables, Dag(tuple(parents)), tuple(cpts), net.name, net.states)


@dataclass(frozen=True, eq=False)
class TaskFamily:
    tasks: TaskSet
    dags: tuple[Dag, ...]
    networks: tuple[DiscreteBayesNet, ...]


def make_task_family(net: DiscreteBayesNet, spec: PerturbSpec | float, K: int, m: int,
                     seed=None) -> TaskFamily:
    """K independently perturbed copies of ``net``, each sampled ``m`` times."""
    if not isinstance(spec, PerturbSpec):
        spec = PerturbSpec(float(spec), seed)
    root = as_seed_sequence(spec.seed if seed is None else seed)
    nets, data = [], []
    for k, child in enumerate(root.spawn(K)):
        perturb_seed, sample_seed = child.spawn(2)
        pnet = perturb_network(net, spec, seed=np.random.default_rng(perturb_seed))
        nets.append(pnet)
        data.append(forward_sample(pnet, m, np.random.default_rng(sample_seed), task_id=k))
    return TaskFamily(TaskSet(tuple(data)), tuple(n.dag for n in nets), tuple(nets))


# -- continuous ingestion -----------------------------------------------------

LEVELS = ("very low", "low", "high", "very high")


def detrend_discretize(series, window: int, names: Sequence[str] | None = None) -> TaskData:
    """Subtract a centred sliding-window mean, then cut each column at its quartiles.

    The window shrinks at the series boundaries.  Output categories are
    0..3 for very low, low, high and very high.
    """
    x = np.asarray(series)
    if np.issubdtype(x.dtype, np.integer) or x.dtype == bool:
        raise ValidationError("input looks categorical already; load it as task data instead")
    x = x.astype(float)
    if x.ndim != 2:
        raise ValidationError("series must be an m x n matrix")
    m, n = x.shape
    if window < 3 or window % 2 == 0 or window > m:
        raise ValidationError(f"window must be odd, >= 3 and <= {m}; got {window}")
    half = window // 2
    # anchoring at the first row makes a constant shift cancel before any rounding
    x = x - x[:1]
    csum = np.vstack([np.zeros((1, n)), np.cumsum(x, axis=0)])
    lo = np.maximum(np.arange(m) - half, 0)
    hi = np.minimum(np.arange(m) + half + 1, m)
    trend = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    resid = x - trend
    names = tuple(names) if names is not None else tuple(f"X{i}" for i in range(n))
    out = np.empty((m, n), dtype=np.int64)
    for c in range(n):
        col = resid[:, c]
        if np.ptp(col) <= 1e-12 * max(1.0, np.abs(x[:, c]).max()):
            raise ValidationError(f"column {names[c]!r} is constant after detrending")
        cuts = np.quantile(col, [0.25, 0.5, 0.75])
        out[:, c] = np.searchsorted(cuts, col, side="right")
    return TaskData(out, VariableTable(names, (4,) * n))
