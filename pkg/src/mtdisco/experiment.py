"""Benchmark protocol: simulate related tasks, learn them in every mode, score AUCs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datagen import DiscreteBayesNet, as_seed_sequence, forward_sample, make_task_family
from .evalrep import ExperimentReport, GroundTruth, experiment_report, roc_auc_many
from .model_core import EdgePosteriorMatrix, TaskSet
from .taskset import DiscoveryConfig, make_prior, run_mtl, run_pool, run_stl, score_tasks


@dataclass
class TrialResult:
    trial: int
    samples: int
    auc: dict[str, float]
    nonedge_mean: dict[str, float]
    edge_mean: dict[str, float]
    posteriors: dict[str, list[EdgePosteriorMatrix]] = field(repr=False, default_factory=dict)


@dataclass
class ProtocolResult:
    trials: list[TrialResult]
    truths: list[list[GroundTruth]]

    def auc_grid(self) -> dict[int, list[dict[str, float]]]:
        grid: dict[int, list[dict[str, float]]] = {}
        for t in self.trials:
            grid.setdefault(t.samples, []).append(t.auc)
        return grid

    def mean_auc(self, mode: str, samples: int) -> float:
        return float(np.mean([t.auc[mode] for t in self.trials if t.samples == samples]))

    def mean_nonedge(self, mode: str, samples: int) -> float:
        return float(np.mean([t.nonedge_mean[mode] for t in self.trials if t.samples == samples]))

    def report(self) -> ExperimentReport:
        return experiment_report(self.auc_grid())


def ground_truth(nets: Sequence[DiscreteBayesNet], samples: int, cfg: DiscoveryConfig,
                 seed) -> list[GroundTruth]:
    """Large-sample STL posteriors of every task network."""
    rngs = [np.random.default_rng(s) for s in as_seed_sequence(seed).spawn(len(nets))]
    data = TaskSet(tuple(forward_sample(net, samples, rng, task_id=k)
                         for k, (net, rng) in enumerate(zip(nets, rngs))))
    return [GroundTruth.from_posteriors(p) for p in run_stl(data, cfg)]


def _split_means(mats: Sequence[EdgePosteriorMatrix], truths: Sequence[GroundTruth]) -> tuple[float, float]:
    edge, non = [], []
    for m, t in zip(mats, truths):
        off = ~np.eye(t.n, dtype=bool)
        is_edge = (t.pstar > 0.5) & off
        edge.extend(m.values[is_edge])
        non.extend(m.values[~is_edge & off])
    return (float(np.mean(edge)) if edge else float("nan"), float(np.mean(non)) if non else float("nan"))


def run_protocol(net: DiscreteBayesNet, cfg: DiscoveryConfig, K: int = 2, p_del: float = 0.1,
                 trials: int = 10, sample_sizes: Sequence[int] = (10, 50), truth_samples: int = 5000,
                 seed: int = 0, convention: str = "standard", keep_posteriors: bool = False) -> ProtocolResult:
    """Run STL, MTL and POOL on simulated task families and score each trial.

    Every trial perturbs ``net`` into K related networks, computes ground
    truth from ``truth_samples`` rows per task, then draws fresh datasets of
    each size in ``sample_sizes``.  AUCs pool the K tasks' edges.
    """
    prior = None
    results, truths = [], []
    for trial, ss in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        fam_seed, truth_seed, data_seed = ss.spawn(3)
        family = make_task_family(net, p_del, K, 1, seed=fam_seed)
        truth = ground_truth(family.networks, truth_samples, cfg, truth_seed)
        truths.append(truth)
        for m, ms in zip(sample_sizes, data_seed.spawn(len(sample_sizes))):
            rngs = [np.random.default_rng(s) for s in ms.spawn(K)]
            tasks = TaskSet(tuple(forward_sample(pn, m, r, task_id=k)
                                  for k, (pn, r) in enumerate(zip(family.networks, rngs))))
            if prior is None:
                prior = make_prior(tasks.n, cfg)
            scores = score_tasks(tasks, cfg)
            post = {
                "STL": run_stl(tasks, cfg, scores),
                "MTL": run_mtl(tasks, cfg, scores, prior),
                "POOL": [run_pool(tasks, cfg)] * K,
            }
            auc, non, edge = {}, {}, {}
            for mode, mats in post.items():
                auc[mode] = roc_auc_many(mats, truth, convention).auc
                edge[mode], non[mode] = _split_means(mats, truth)
            results.append(TrialResult(trial, m, auc, non, edge, post if keep_posteriors else {}))
    return ProtocolResult(results, truths)
