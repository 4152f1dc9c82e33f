"""Command-line front end.

Subcommands::

    mtdisco simulate  --network asia --k 2 --pdel 0.1 --samples 50 --repeats 10 --seed 0 --out sim/
    mtdisco score     --data task0.csv --r 3 --ess 1 --cache task0.scores.json
    mtdisco discover  --mode mtl --data t0.csv t1.csv --prior bma --out post/
    mtdisco eval      --estimates grid/ --truth truth/ --out report/
    mtdisco replay    post/manifest.json

File layouts
------------
Posterior matrices are plain text, n lines of n space-separated values
(17 significant digits), named ``task<k>.txt``.

``simulate`` writes ``trial=<t>/task<k>.csv`` (data) and
``trial=<t>/dag<k>.csv`` (true graph, ``parent,child`` rows).

``eval --estimates`` takes either a flat directory of ``task<k>.txt`` files
or a grid ``mode=<M>/samples=<m>/trial=<t>/task<k>.txt``.  ``--truth`` is a
single matrix file (shared by every task) or a directory holding
``task<k>.txt`` / ``dag<k>.csv``, optionally below ``trial=<t>/``.
``--truth-dags`` lists one DAG file per task instead.

The score cache is a JSON document ``{"format": "mtdisco-scores/1",
"data_hash", "max_parents", "ess", "n", "tables": [{"child",
"parent_sets", "scores"}]}`` keyed by the SHA-256 of the data (arities plus
little-endian int64 rows), r and ess.

Every command writes a ``manifest.json`` (``<cache>.manifest.json`` for
``score``) recording argv, parsed flags, seeds, input hashes, the library
version and wall time.  ``mtdisco replay`` re-runs a manifest.

Exit codes: 0 success, 2 usage error, 3 data or validation error, 4 resource
ceiling.  ``MTDISCO_THREADS`` sets the worker count.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .datagen import (
    NetworkFormatError,
    PerturbSpec,
    load_dag,
    load_network,
    load_task_data,
    make_task_family,
    save_dag,
    save_task_data,
)
from .evalrep import GroundTruth, experiment_report, roc_auc_many
from .exact_engine import EngineCeilingError
from .mcmc_engine import McmcConfig, McmcError
from .model_core import EdgePosteriorMatrix, TaskData, TaskSet, ValidationError, VariableTable
from .scoring import ScoreConfig, ScoreError, build_score_tables, data_hash, load_score_cache, save_score_cache
from .taskset import DiscoveryConfig, run_mtl, run_pool, run_stl
from .transfer_prior import PriorError

log = logging.getLogger("mtdisco")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CEILING = 0, 2, 3, 4
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# -- file helpers ---------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_matrix(values, path) -> None:
    v = values.values if isinstance(values, EdgePosteriorMatrix) else np.asarray(values)
    np.savetxt(path, v, fmt="%.17g")


def load_matrix(path) -> np.ndarray:
    v = np.loadtxt(path, dtype=float, ndmin=2)
    if v.shape[0] != v.shape[1]:
        raise ValidationError(f"{path}: matrix is {v.shape[0]}x{v.shape[1]}, expected square")
    return v


def write_manifest(path, args: argparse.Namespace, argv: Sequence[str], started: float,
                   inputs: Sequence = (), seeds: dict | None = None, outputs: Sequence = ()) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "flags": flags,
        "seeds": seeds or {},
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    Path(path).write_text(json.dumps(doc, indent=1, default=str) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _parse_prior(text: str) -> tuple[str, float | None]:
    if text == "bma":
        return "bma", None
    m = re.fullmatch(r"fixed:([0-9.eE+-]+)", text)
    if not m:
        raise argparse.ArgumentTypeError("expected 'bma' or 'fixed:LAMBDA'")
    lam = float(m.group(1))
    if not 0.0 <= lam <= 1.0:
        raise argparse.ArgumentTypeError("lambda must lie in [0, 1]")
    return "fixed", lam


def _parse_h(text: str):
    if text in ("auto", "full"):
        return "auto" if text == "auto" else None
    try:
        h = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer, 'auto' or 'full'") from None
    if h < 1:
        raise argparse.ArgumentTypeError("h must be at least 1")
    return h


def _parse_arities(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def load_tasks(paths: Sequence, arities: Sequence[int] | None = None) -> TaskSet:
    """Load task CSVs with shared arities (the column-wise maximum when not given)."""
    raw = [load_task_data(p, arities, task_id=k) for k, p in enumerate(paths)]
    names = raw[0].variables.names
    for p, t in zip(paths, raw):
        if t.variables.names != names:
            raise ValidationError(f"{p}: header differs from {paths[0]}")
    if arities is None:
        shared = tuple(max(t.variables.arities[i] for t in raw) for i in range(len(names)))
        raw = [TaskData(t.rows, VariableTable(names, shared), t.task_id) for t in raw]
    return TaskSet(tuple(raw))


# -- commands -----------------------------------------------------------------------

def cmd_simulate(args, argv, started) -> int:
    net = load_network(args.network)
    out = _out_dir(args.out)
    spec = PerturbSpec(args.pdel, args.seed, args.repeats)
    outputs = []
    for t, ss in enumerate(np.random.SeedSequence(args.seed).spawn(args.repeats)):
        fam = make_task_family(net, spec, args.k, args.samples, seed=ss)
        d = _out_dir(out / f"trial={t}")
        for k, (data, dag) in enumerate(zip(fam.tasks, fam.dags)):
            save_task_data(data, d / f"task{k}.csv")
            save_dag(dag, net.variables.names, d / f"dag{k}.csv")
            outputs += [d / f"task{k}.csv", d / f"dag{k}.csv"]
    inputs = [args.network] if Path(args.network).is_file() else []
    write_manifest(out / MANIFEST, args, argv, started, inputs, {"seed": args.seed}, outputs)
    log.info("wrote %d trials of %d tasks to %s", args.repeats, args.k, out)
    return EXIT_OK


def _score_cfg(args) -> ScoreConfig:
    return ScoreConfig(max_parents=args.r, ess=args.ess)


def cmd_score(args, argv, started) -> int:
    data = load_tasks([args.data], args.arities)[0]
    cfg = _score_cfg(args)
    digest = data_hash(data)
    cache = Path(args.cache)
    if cache.exists() and not args.overwrite:
        load_score_cache(cache, digest, cfg)  # raises on a key mismatch
        log.info("reusing score cache %s", cache)
    else:
        save_score_cache(cache, build_score_tables(data, cfg), digest, cfg)
        log.info("wrote score cache %s", cache)
    write_manifest(f"{cache}.manifest.json", args, argv, started, [args.data], {}, [cache])
    return EXIT_OK


def cmd_discover(args, argv, started) -> int:
    if args.mode == "mtl" and len(args.data) < 2:
        raise UsageError("--mode mtl needs at least two --data files")
    if args.scores and len(args.scores) != len(args.data):
        raise UsageError("give one --scores cache per --data file")
    if args.bucket_size is not None:
        log.warning("--bucket-size is accepted for compatibility and ignored")
    tasks = load_tasks(args.data, args.arities)
    prior, lam = args.prior
    cfg = DiscoveryConfig(
        score=_score_cfg(args),
        engine=args.engine,
        mcmc=McmcConfig(args.mcmc_burnin, args.mcmc_samples, args.mcmc_thin, args.seed),
        max_n=args.max_n,
        prior=prior,
        lam=lam,
        h=args.h,
        strict_prior=args.strict_prior,
        threads=args.threads,
    )
    if args.engine == "exact" and tasks.n > args.max_n:
        raise EngineCeilingError(
            f"n={tasks.n} exceeds the exact-engine ceiling {args.max_n}; "
            "use --engine mcmc or raise --max-n")
    scores = None
    if args.scores:
        scores = [load_score_cache(p, data_hash(t), cfg.score) for p, t in zip(args.scores, tasks)]
        log.info("loaded %d score caches", len(scores))
    if args.mode == "stl":
        mats = run_stl(tasks, cfg, scores)
    elif args.mode == "mtl":
        mats = run_mtl(tasks, cfg, scores)
    else:
        mats = [run_pool(tasks, cfg)] * tasks.K
    out = _out_dir(args.out)
    outputs = []
    for k, m in enumerate(mats):
        save_matrix(m, out / f"task{k}.txt")
        outputs.append(out / f"task{k}.txt")
    write_manifest(out / MANIFEST, args, argv, started, list(args.data) + list(args.scores or []),
                   {"mcmc_seed": args.seed}, outputs)
    log.info("wrote %d posterior matrices to %s", len(mats), out)
    return EXIT_OK


_GRID = re.compile(r"mode=([^/]+)/samples=(\d+)/trial=(\d+)$")
_TASK = re.compile(r"task(\d+)\.txt$")


def _scan_estimates(root: Path) -> dict[tuple[str, int, int], dict[int, Path]]:
    """Map (mode, samples, trial) to {task index: file}; a flat directory is one cell."""
    cells: dict[tuple[str, int, int], dict[int, Path]] = {}
    for f in sorted(root.rglob("task*.txt")):
        m = _TASK.search(f.name)
        if not m:
            continue
        rel = f.parent.relative_to(root).as_posix()
        if rel == ".":
            key = ("estimate", 0, 0)
        else:
            g = _GRID.search(rel)
            if not g:
                continue
            key = (g.group(1), int(g.group(2)), int(g.group(3)))
        cells.setdefault(key, {})[int(m.group(1))] = f
    return cells


class _TruthSource:
    def __init__(self, args, names: Sequence[str] | None):
        self.matrix = self.root = None
        self.dags = args.truth_dags
        self.names = names
        if args.truth:
            p = Path(args.truth)
            if p.is_dir():
                self.root = p
            else:
                self.matrix = load_matrix(p)
        self._cache: dict[tuple[int, int], GroundTruth] = {}

    def _from_dag(self, path, n: int) -> GroundTruth:
        names = self.names or [str(i) for i in range(n)]
        return GroundTruth.from_dag(load_dag(path, list(names)))

    def get(self, trial: int, k: int, n: int) -> GroundTruth:
        key = (trial, k)
        if key in self._cache:
            return self._cache[key]
        if self.matrix is not None:
            truth = GroundTruth.from_posteriors(self.matrix)
        elif self.dags:
            if k >= len(self.dags):
                raise ValidationError(f"no --truth-dags file for task {k}")
            truth = self._from_dag(self.dags[k], n)
        else:
            for base in (self.root / f"trial={trial}", self.root):
                if (base / f"task{k}.txt").is_file():
                    truth = GroundTruth.from_posteriors(load_matrix(base / f"task{k}.txt"))
                    break
                if (base / f"dag{k}.csv").is_file():
                    truth = self._from_dag(base / f"dag{k}.csv", n)
                    break
            else:
                raise ValidationError(f"no ground truth for trial {trial}, task {k} under {self.root}")
        if truth.n != n:
            raise ValidationError(f"truth for trial {trial}, task {k} has n={truth.n}, estimates have n={n}")
        self._cache[key] = truth
        return truth


def cmd_eval(args, argv, started) -> int:
    if not args.truth and not args.truth_dags:
        raise UsageError("give --truth or --truth-dags")
    root = Path(args.estimates)
    if not root.is_dir():
        raise ValidationError(f"{root} is not a directory")
    cells = _scan_estimates(root)
    if not cells:
        raise ValidationError(f"no task<k>.txt estimates under {root}")
    names = None
    if args.variables:
        with open(args.variables) as fh:
            names = fh.readline().strip().split(",")
    truth = _TruthSource(args, names)
    out = _out_dir(args.out)

    auc_rows = []
    grid: dict[int, dict[int, dict[str, float]]] = {}
    pooled: dict[tuple[str, int], tuple[list, list]] = {}
    inputs = []
    for (mode, samples, trial), files in sorted(cells.items()):
        mats = [load_matrix(files[k]) for k in sorted(files)]
        truths = [truth.get(trial, k, m.shape[0]) for k, m in zip(sorted(files), mats)]
        inputs += [files[k] for k in sorted(files)]
        auc = roc_auc_many(mats, truths, args.convention).auc
        auc_rows.append((mode, samples, trial, auc))
        grid.setdefault(samples, {}).setdefault(trial, {})[mode] = auc
        acc = pooled.setdefault((mode, samples), ([], []))
        acc[0].extend(mats)
        acc[1].extend(truths)

    with open(out / "auc.csv", "w") as fh:
        fh.write("mode,samples,trial,auc\n")
        for mode, samples, trial, auc in auc_rows:
            fh.write(f"{mode},{samples},{trial},{auc!r}\n")
    outputs = [out / "auc.csv"]
    for (mode, samples), (mats, truths) in sorted(pooled.items()):
        curve = roc_auc_many(mats, truths, args.convention)
        path = out / f"roc_mode={mode}_samples={samples}.csv"
        with open(path, "w") as fh:
            fh.write("tau,fp_rate,tp_rate\n")
            for tau, fp, tp in curve.points:
                fh.write(f"{tau:.2f},{fp!r},{tp!r}\n")
        outputs.append(path)

    modes = {mode for mode, *_ in auc_rows}
    if "MTL" in modes:
        results = {m: [grid[m][t] for t in sorted(grid[m])] for m in sorted(grid)}
        baselines = [b for b in ("STL", "POOL") if b in modes]
        report = experiment_report(results, baselines or ("STL", "POOL"))
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.txt").write_text(report.to_text())
        outputs += [out / "report.json", out / "report.csv", out / "report.txt"]
        sys.stdout.write(report.to_text())
    else:
        for mode, samples, trial, auc in auc_rows:
            print(f"{mode}\tsamples={samples}\ttrial={trial}\tauc={auc:.6f}")
    if args.truth and Path(args.truth).is_file():
        inputs.append(args.truth)
    inputs += list(args.truth_dags or [])
    write_manifest(out / MANIFEST, args, argv, started, inputs, {}, outputs)
    return EXIT_OK


def cmd_replay(args, argv, started) -> int:
    doc = json.loads(Path(args.manifest).read_text())
    replay = list(doc["argv"])
    if args.out:
        flag = "--cache" if doc["command"] == "score" else "--out"
        if flag not in replay:
            raise ValidationError(f"manifest has no {flag} to redirect")
        replay[replay.index(flag) + 1] = args.out
    log.info("replaying: mtdisco %s", " ".join(replay))
    return main(replay)


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtdisco", description="Multitask Bayesian network edge discovery.")
    p.add_argument("--version", action="version", version=f"mtdisco {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate related task families from a network")
    s.add_argument("--network", required=True, help="network JSON file, or 'asia' / 'alarm'")
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--pdel", type=float, default=0.1)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    def add_score_flags(q):
        q.add_argument("--r", type=int, default=3, help="maximum parents per node")
        q.add_argument("--ess", type=float, default=1.0, help="BDeu equivalent sample size")
        q.add_argument("--arities", type=_parse_arities, default=None,
                       help="comma-separated arities (default: max observed value + 1)")

    s = sub.add_parser("score", parents=[common], help="compute and cache family scores")
    s.add_argument("--data", required=True)
    add_score_flags(s)
    s.add_argument("--cache", required=True)
    s.add_argument("--overwrite", action="store_true", help="replace a cache built with other settings")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("discover", parents=[common], help="edge posteriors in STL, MTL or POOL mode")
    s.add_argument("--mode", choices=("stl", "mtl", "pool"), required=True)
    s.add_argument("--data", nargs="+", required=True)
    add_score_flags(s)
    s.add_argument("--scores", nargs="+", default=None, help="score caches, one per data file")
    s.add_argument("--prior", type=_parse_prior, default=("bma", None), help="bma or fixed:LAMBDA")
    s.add_argument("--strict-prior", action="store_true", help="normalise the prior over capped sets")
    s.add_argument("--h", type=_parse_h, default="auto", help="top-h sets in the transfer sum, 'auto' or 'full'")
    s.add_argument("--engine", choices=("exact", "mcmc"), default="exact")
    s.add_argument("--max-n", type=int, default=DiscoveryConfig.max_n, help="exact-engine ceiling")
    s.add_argument("--mcmc-burnin", type=int, default=1000)
    s.add_argument("--mcmc-samples", type=int, default=100)
    s.add_argument("--mcmc-thin", type=int, default=10)
    s.add_argument("--bucket-size", type=int, default=None, help="ignored")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_discover)

    s = sub.add_parser("eval", parents=[common], help="ROC/AUC evaluation and MTL comparison report")
    s.add_argument("--estimates", required=True)
    s.add_argument("--truth", default=None, help="matrix file or directory")
    s.add_argument("--truth-dags", nargs="+", default=None, help="one DAG file per task")
    s.add_argument("--variables", default=None, help="CSV whose header names the variables of DAG files")
    s.add_argument("--convention", choices=("standard", "paper"), default="standard")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("replay", parents=[common], help="re-run the command recorded in a manifest")
    s.add_argument("manifest")
    s.add_argument("--out", default=None, help="redirect the output location")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="mtdisco: %(levelname)s: %(message)s")
    started = time.perf_counter()
    try:
        return args.func(args, argv, started)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mtdisco: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EngineCeilingError, MemoryError) as exc:
        print(f"mtdisco: resource ceiling: {exc}", file=sys.stderr)
        return EXIT_CEILING
    except (ValidationError, ScoreError, NetworkFormatError, PriorError, McmcError,
            ValueError, OSError, KeyError) as exc:
        print(f"mtdisco: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
