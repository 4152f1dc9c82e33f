import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mtdisco.cli import load_matrix, main, save_matrix
from mtdisco.datagen import forward_sample, load_dag, load_network, save_task_data
from mtdisco.scoring import load_score_cache

ASIA = load_network("asia")
NAMES = list(ASIA.variables.names)


def run(*argv) -> int:
    return main([str(a) for a in argv])


def tree(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


@pytest.fixture(scope="module")
def asia_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    for k in range(2):
        save_task_data(forward_sample(ASIA, 40, 100 + k), d / f"t{k}.csv")
    return d


def test_simulate_layout(tmp_path):
    assert run("simulate", "--network", "asia", "--k", 2, "--pdel", 0.1, "--samples", 50,
               "--repeats", 10, "--seed", 0, "--out", tmp_path) == 0
    data = sorted(tmp_path.glob("trial=*/task*.csv"))
    assert len(data) == 20 and len(list(tmp_path.glob("trial=*/dag*.csv"))) == 20
    for f in data:
        lines = f.read_text().splitlines()
        assert lines[0].split(",") == NAMES and len(lines) == 51
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seeds"] == {"seed": 0}


def test_simulate_no_deletion_and_reproducible(tmp_path):
    args = ["simulate", "--network", "asia", "--k", 2, "--pdel", 0, "--samples", 20, "--seed", 5]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for k in range(2):
        assert load_dag(tmp_path / "a" / "trial=0" / f"dag{k}.csv", NAMES) == ASIA.dag
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_discover_modes(tmp_path, asia_csv):
    t0, t1 = asia_csv / "t0.csv", asia_csv / "t1.csv"
    assert run("discover", "--mode", "stl", "--data", t0, t1, "--r", 2, "--out", tmp_path / "stl") == 0
    stl = load_matrix(tmp_path / "stl" / "task0.txt")
    assert stl.shape == (8, 8) and np.all(np.diag(stl) == 0)
    assert run("discover", "--mode", "mtl", "--data", t0, t1, "--r", 2, "--prior", "fixed:0",
               "--h", "full", "--out", tmp_path / "mtl") == 0
    for k in range(2):
        np.testing.assert_allclose(load_matrix(tmp_path / "mtl" / f"task{k}.txt"),
                                   load_matrix(tmp_path / "stl" / f"task{k}.txt"), atol=1e-9)


def test_pool_of_identical_files_equals_doubled_stl(tmp_path, asia_csv):
    lines = (asia_csv / "t0.csv").read_text().splitlines()
    doubled = tmp_path / "doubled.csv"
    doubled.write_text("\n".join(lines + lines[1:]) + "\n")
    t0 = asia_csv / "t0.csv"
    assert run("discover", "--mode", "pool", "--data", t0, t0, "--r", 2, "--out", tmp_path / "pool") == 0
    assert run("discover", "--mode", "stl", "--data", doubled, "--r", 2, "--out", tmp_path / "dbl") == 0
    ref = load_matrix(tmp_path / "dbl" / "task0.txt")
    for k in range(2):
        assert np.array_equal(load_matrix(tmp_path / "pool" / f"task{k}.txt"), ref)


def test_score_cache_reuse_and_rejection(tmp_path, asia_csv, caplog):
    cache = tmp_path / "c.json"
    assert run("score", "--data", asia_csv / "t0.csv", "--r", 2, "--cache", cache) == 0
    first = cache.read_bytes()
    with caplog.at_level("INFO"):
        assert run("score", "--data", asia_csv / "t0.csv", "--r", 2, "--cache", cache) == 0
    assert "reusing score cache" in caplog.text
    assert cache.read_bytes() == first
    assert run("score", "--data", asia_csv / "t0.csv", "--r", 3, "--cache", cache) == 3
    assert run("discover", "--mode", "stl", "--data", asia_csv / "t0.csv", "--r", 3,
               "--scores", cache, "--out", tmp_path / "p") == 3
    # a valid cache gives the same matrix as scoring from scratch
    assert run("discover", "--mode", "stl", "--data", asia_csv / "t0.csv", "--r", 2,
               "--scores", cache, "--out", tmp_path / "cached") == 0
    assert run("discover", "--mode", "stl", "--data", asia_csv / "t0.csv", "--r", 2,
               "--out", tmp_path / "fresh") == 0
    assert (tmp_path / "cached" / "task0.txt").read_bytes() == (tmp_path / "fresh" / "task0.txt").read_bytes()


def test_score_cache_counts(tmp_path):
    save_task_data(forward_sample(ASIA, 5000, 0), tmp_path / "big.csv")
    assert run("score", "--data", tmp_path / "big.csv", "--r", 3, "--cache", tmp_path / "s.json") == 0
    tables = load_score_cache(tmp_path / "s.json")
    assert len(tables) == 8 and all(len(t) == 64 for t in tables)


def test_eval_truth_gives_perfect_auc(tmp_path, capsys):
    est = tmp_path / "est"
    est.mkdir()
    truth = ASIA.dag.adjacency().astype(float)
    save_matrix(truth, est / "task0.txt")
    save_matrix(truth, tmp_path / "truth.txt")
    assert run("eval", "--estimates", est, "--truth", tmp_path / "truth.txt", "--out", tmp_path / "r") == 0
    rows = (tmp_path / "r" / "auc.csv").read_text().splitlines()
    assert rows[1].split(",")[-1] == "1.0"
    assert (tmp_path / "r" / "roc_mode=estimate_samples=0.csv").is_file()


def test_eval_conventions_differ(tmp_path):
    est = tmp_path / "est"
    est.mkdir()
    m = np.zeros((3, 3))
    m[0, 1], m[2, 1] = 0.9, 0.6
    save_matrix(m, est / "task0.txt")
    truth = np.zeros((3, 3))
    truth[0, 1] = 1.0
    save_matrix(truth, tmp_path / "truth.txt")
    rocs = {}
    for conv in ("standard", "paper"):
        assert run("eval", "--estimates", est, "--truth", tmp_path / "truth.txt",
                   "--convention", conv, "--out", tmp_path / conv) == 0
        lines = (tmp_path / conv / "roc_mode=estimate_samples=0.csv").read_text().splitlines()
        rocs[conv] = {ln.split(",")[0]: ln.split(",")[1:] for ln in lines[1:]}
    assert rocs["standard"]["0.50"] == ["0.2", "1.0"]
    assert rocs["paper"]["0.50"] == ["0.25", "0.5"]


def test_eval_grid_report(tmp_path):
    assert run("simulate", "--network", "asia", "--k", 2, "--samples", 15, "--repeats", 3,
               "--seed", 1, "--out", tmp_path / "sim") == 0
    for t in range(3):
        data = [tmp_path / "sim" / f"trial={t}" / f"task{k}.csv" for k in range(2)]
        for mode in ("stl", "mtl", "pool"):
            out = tmp_path / "grid" / f"mode={mode.upper()}" / "samples=15" / f"trial={t}"
            assert run("discover", "--mode", mode, "--data", *data, "--r", 2, "--out", out) == 0
    assert run("eval", "--estimates", tmp_path / "grid", "--truth", tmp_path / "sim",
               "--variables", tmp_path / "sim" / "trial=0" / "task0.csv", "--out", tmp_path / "rep") == 0
    doc = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert [(r["samples"], r["other"]) for r in doc["rows"]] == [(15, "STL"), (15, "POOL")]
    assert all(r["trials"] == 3 and r["verdict"] is not None for r in doc["rows"])
    assert "% incr vs STL" in (tmp_path / "rep" / "report.txt").read_text()
    assert len((tmp_path / "rep" / "auc.csv").read_text().splitlines()) == 1 + 9


def test_eval_shape_mismatch(tmp_path):
    est = tmp_path / "est"
    est.mkdir()
    save_matrix(np.zeros((3, 3)), est / "task0.txt")
    save_matrix(np.zeros((4, 4)), tmp_path / "truth.txt")
    assert run("eval", "--estimates", est, "--truth", tmp_path / "truth.txt", "--out", tmp_path / "r") == 3


def test_exit_codes(tmp_path, asia_csv):
    t0 = asia_csv / "t0.csv"
    assert run("discover", "--mode", "mtl", "--data", t0, "--out", tmp_path / "a") == 2
    assert run("discover", "--mode", "stl", "--data", t0, "--max-n", 5, "--out", tmp_path / "b") == 4
    assert run("discover", "--mode", "stl", "--data", tmp_path / "missing.csv", "--out", tmp_path / "c") == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n0,1\n1,x\n")
    assert run("discover", "--mode", "stl", "--data", bad, "--out", tmp_path / "d") == 3
    assert run("frobnicate") == 2
    assert run("simulate", "--network", "asia") == 2


def test_bucket_size_is_ignored_with_warning(tmp_path, asia_csv, caplog):
    t0 = asia_csv / "t0.csv"
    with caplog.at_level("WARNING"):
        assert run("discover", "--mode", "stl", "--data", t0, "--r", 2, "--bucket-size", 10,
                   "--out", tmp_path / "a") == 0
    assert "ignored" in caplog.text
    assert run("discover", "--mode", "stl", "--data", t0, "--r", 2, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "task0.txt").read_bytes() == (tmp_path / "b" / "task0.txt").read_bytes()


def test_mcmc_engine_from_cli(tmp_path, asia_csv):
    args = ["discover", "--mode", "mtl", "--data", asia_csv / "t0.csv", asia_csv / "t1.csv", "--r", 2,
            "--engine", "mcmc", "--mcmc-burnin", 100, "--mcmc-samples", 50, "--mcmc-thin", 2, "--seed", 3]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_manifest_replay(tmp_path, asia_csv):
    t0, t1 = asia_csv / "t0.csv", asia_csv / "t1.csv"
    inputs = {p: p.read_bytes() for p in (t0, t1)}
    assert run("discover", "--mode", "mtl", "--data", t0, t1, "--r", 2, "--out", tmp_path / "a") == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert set(manifest) >= {"command", "argv", "flags", "seeds", "inputs", "version", "wall_time_s"}
    assert len(manifest["inputs"]) == 2
    assert run("replay", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert all(p.read_bytes() == b for p, b in inputs.items())


def test_console_script_runs(tmp_path):
    out = subprocess.run([sys.executable, "-c", "import sys; from mtdisco.cli import main; sys.exit(main())",
                          "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "mtdisco" in out.stdout
