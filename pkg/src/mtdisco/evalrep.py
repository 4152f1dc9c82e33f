"""Evaluation: ground truth, thresholded edge sets, ROC/AUC and paired t-tests.

Two rate conventions are supported.  "standard" is the usual
TPR = |E^ & E*| / |E*|, FPR = |E^ - E*| / |E - E*|.  The "paper" convention
is the precision-style variant TP = |E^ & E*| / |E^| and
FP = |E^ - E*| / (|E| - |E^|), with 0/0 taken as 0.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .model_core import Dag, EdgePosteriorMatrix

TAU_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)
GAP = "NA"
MODES = ("STL", "MTL", "POOL")


def _values(matrix) -> np.ndarray:
    return matrix.values if isinstance(matrix, EdgePosteriorMatrix) else np.asarray(matrix, dtype=float)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Reference posteriors and the edges whose posterior exceeds 0.5."""

    pstar: np.ndarray

    @classmethod
    def from_posteriors(cls, matrix) -> "GroundTruth":
        return cls(np.array(_values(matrix), dtype=float))

    @classmethod
    def from_dag(cls, dag: Dag) -> "GroundTruth":
        return cls(dag.adjacency().astype(float))

    @property
    def n(self) -> int:
        return self.pstar.shape[0]

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return threshold_edges(self.pstar, 0.5)


def threshold_edges(matrix, tau: float) -> frozenset[tuple[int, int]]:
    """Ordered pairs (u, v), u != v, whose posterior is strictly above ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    v = _values(matrix)
    hits = np.argwhere(v > tau)
    return frozenset((int(a), int(b)) for a, b in hits if a != b)


@dataclass(frozen=True)
class Rates:
    tp_rate: float
    fp_rate: float
    paper_tp_rate: float
    paper_fp_rate: float

    def pick(self, convention: str) -> tuple[float, float]:
        if convention == "standard":
            return self.tp_rate, self.fp_rate
        if convention == "paper":
            return self.paper_tp_rate, self.paper_fp_rate
        raise ValueError(f"unknown convention {convention!r}")


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def rates(est: Iterable[tuple[int, int]], truth: GroundTruth | Iterable[tuple[int, int]], n: int) -> Rates:
    est = frozenset(est)
    true = truth.edges if isinstance(truth, GroundTruth) else frozenset(truth)
    total = n * (n - 1)
    hit = len(est & true)
    false = len(est - true)
    return Rates(
        tp_rate=_ratio(hit, len(true)),
        fp_rate=_ratio(false, total - len(true)),
        paper_tp_rate=_ratio(hit, len(est)),
        paper_fp_rate=_ratio(false, total - len(est)),
    )


@dataclass(frozen=True)
class RocCurve:
    points: tuple[tuple[float, float, float], ...]  # (tau, fp_rate, tp_rate)
    auc: float
    convention: str = "standard"


def _trapezoid(points: Sequence[tuple[float, float]]) -> float:
    pts = sorted(points)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def roc_auc(matrix, truth: GroundTruth, convention: str = "standard") -> RocCurve:
    """ROC over tau in {0, 0.01, ..., 1} and its trapezoid area.

    In the standard convention (0, 0) and (1, 1) are added as end-points.
    The "paper" convention uses the swept points only.
    """
    return roc_auc_many([matrix], [truth], convention)


def roc_auc_many(matrices: Sequence, truths: Sequence[GroundTruth], convention: str = "standard") -> RocCurve:
    """ROC with edge counts pooled over several (estimate, truth) pairs."""
    if len(matrices) != len(truths):
        raise ValueError("need one truth per estimate")
    points = []
    for tau in TAU_GRID:
        hit = false = n_est = n_true = total = 0
        for m, t in zip(matrices, truths):
            if _values(m).shape != t.pstar.shape:
                raise ValueError("estimate and truth shapes differ")
            est = threshold_edges(m, tau)
            true = t.edges
            hit += len(est & true)
            false += len(est - true)
            n_est += len(est)
            n_true += len(true)
            total += t.n * (t.n - 1)
        if convention == "standard":
            tp, fp = _ratio(hit, n_true), _ratio(false, total - n_true)
        elif convention == "paper":
            tp, fp = _ratio(hit, n_est), _ratio(false, total - n_est)
        else:
            raise ValueError(f"unknown convention {convention!r}")
        points.append((float(tau), fp, tp))
    xy = [(fp, tp) for _, fp, tp in points]
    if convention == "standard":
        xy = [(0.0, 0.0)] + xy + [(1.0, 1.0)]
    return RocCurve(tuple(points), _trapezoid(xy), convention)


def ranking_auc(matrix, truth: GroundTruth) -> float:
    """P(score of a random true edge > score of a random non-edge), ties count 1/2."""
    v = _values(matrix)
    off = ~np.eye(v.shape[0], dtype=bool)
    is_true = (truth.pstar > 0.5) & off
    pos = v[is_true]
    neg = v[~is_true & off]
    if not len(pos) or not len(neg):
        return 0.5
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


@dataclass(frozen=True)
class TTestResult:
    verdict: str  # "first-wins" | "second-wins" | "no-difference"
    t: float
    p_value: float
    mean: float


def paired_t(deltas: Sequence[float], alpha: float = 0.05) -> TTestResult:
    """Two-sided one-sample t-test on paired differences (first minus second)."""
    d = np.asarray(deltas, dtype=float)
    if len(d) < 2:
        raise ValueError("paired t-test needs at least two trials")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult("no-difference", 0.0, 1.0, 0.0)
        return TTestResult("first-wins" if mean > 0 else "second-wins", math.copysign(math.inf, mean), 0.0, mean)
    t = mean / (sd / math.sqrt(len(d)))
    p = float(2.0 * stats.t.sf(abs(t), df=len(d) - 1))
    if p < alpha:
        verdict = "first-wins" if t > 0 else "second-wins"
    else:
        verdict = "no-difference"
    return TTestResult(verdict, float(t), p, mean)


# -- reports --------------------------------------------------------------------

@dataclass
class ComparisonRow:
    samples: int
    other: str
    pct_increase: float | None
    mean_delta: float | None
    verdict: str | None
    t: float | None
    p_value: float | None
    trials: int


@dataclass
class ExperimentReport:
    """AUC comparisons of MTL against each baseline, one row per sample size."""

    rows: list[ComparisonRow] = field(default_factory=list)
    mean_auc: dict[str, dict[str, float | None]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "mean_auc": self.mean_auc},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        doc = json.loads(text)
        return cls([ComparisonRow(**r) for r in doc["rows"]], doc["mean_auc"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["samples", "vs", "pct_incr", "mean_delta", "pair_t", "t", "p_value", "trials"])
        for r in self.rows:
            w.writerow([r.samples, r.other] + [GAP if x is None else x for x in
                       (r.pct_increase, r.mean_delta, r.verdict, r.t, r.p_value)] + [r.trials])
        return buf.getvalue()

    def to_text(self) -> str:
        by_m: dict[int, dict[str, ComparisonRow]] = {}
        for r in self.rows:
            by_m.setdefault(r.samples, {})[r.other] = r
        others = sorted({r.other for r in self.rows}, key=lambda o: MODES.index(o) if o in MODES else 9)
        head = f"{'samples':>8}" + "".join(f" | {'% incr vs ' + o:>16} | {'pair-t':>6}" for o in others)
        lines = [head, "-" * len(head)]
        for m in sorted(by_m):
            line = f"{m:>8}"
            for o in others:
                r = by_m[m].get(o)
                if r is None or r.pct_increase is None:
                    line += f" | {GAP:>16} | {GAP:>6}"
                else:
                    tag = {"first-wins": "MTL", "second-wins": o}.get(r.verdict, "-")
                    line += f" | {r.pct_increase:>16.2f} | {tag:>6}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def experiment_report(results: Mapping[int, Sequence[Mapping[str, float | None]]],
                      baselines: Sequence[str] = ("STL", "POOL"), alpha: float = 0.05) -> ExperimentReport:
    """Summarise per-trial AUCs as MTL-vs-baseline rows.

    ``results[m]`` lists one mapping per trial from mode name to AUC (None or
    a missing key marks a gap).  ``pct_increase`` is the mean over trials of
    100 * (AUC_MTL - AUC_other) / AUC_other; the t-test runs on the raw AUC
    differences.  Rows whose cells are incomplete are reported as gaps.
    """
    report = ExperimentReport()
    for m in sorted(results):
        trials = results[m]
        report.mean_auc[str(m)] = {}
        for mode in MODES:
            vals = [t.get(mode) for t in trials]
            report.mean_auc[str(m)][mode] = (None if not vals or any(v is None for v in vals)
                                             else float(np.mean(vals)))
        for other in baselines:
            pairs = [(t.get("MTL"), t.get(other)) for t in trials]
            if not pairs or any(a is None or b is None for a, b in pairs):
                report.rows.append(ComparisonRow(m, other, None, None, None, None, None, len(pairs)))
                continue
            deltas = [a - b for a, b in pairs]
            pct = float(np.mean([100.0 * (a - b) / b if b else 0.0 for a, b in pairs]))
            if len(deltas) >= 2:
                tt = paired_t(deltas, alpha)
                verdict, t, p = tt.verdict, tt.t, tt.p_value
            else:
                verdict = "no-difference" if deltas[0] == 0 else None
                t = p = None
            report.rows.append(ComparisonRow(m, other, pct, float(np.mean(deltas)), verdict, t, p, len(pairs)))
    return report
