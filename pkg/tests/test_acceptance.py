"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest summary.
Criteria 7 and 8 run the full synthetic experiment twice (several minutes).
"""

import io
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from texbench.cli import cmd_inspect, cmd_run
from texbench.cnn import arch_path, avgpool, conv2d, fully_connected, load_arch, lrn, maxpool
from texbench.codebook import gmm_fit_em, kmeans_fit
from texbench.config import load_config
from texbench.encode import fisher_raw
from texbench.harness import PipelineSpec, report, run_cv, run_trials, stratified_kfold
from texbench.localfeat import DenseSamplingSpec
from texbench.svm import SvmTrainConfig, primal_objective, train_binary

from oracles import conv2d_loops, fc_loops, lrn_loops, pool_loops, random_conv_case, random_pool_case
from test_encode import fd_fisher, random_gmm
from test_harness import _fits_equal, _with_canary
from test_svm import random_instance, reference_primal

VERDICTS = {}
CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.yaml"


@contextmanager
def criterion(n, title):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        VERDICTS[n] = f"criterion {n}: FAIL  {title} ({type(exc).__name__}: {str(exc).splitlines()[0][:120]})"
        raise
    VERDICTS[n] = f"criterion {n}: PASS  {title} ({time.perf_counter() - t0:.1f}s)"


def small_pool_case(rng):
    case = random_pool_case(rng)
    case["x"] = case["x"][:, :16, :16]
    return case


def test_operator_oracles():
    with criterion(1, "conv/lrn/maxpool/avgpool/fc vs direct loops, 100 cases each, 1e-5"):
        t0 = time.perf_counter()
        worst = {}
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            case = random_conv_case(rng)
            worst["conv"] = max(worst.get("conv", 0), np.abs(conv2d(**case) - conv2d_loops(**case)).max())
            x = rng.uniform(-1, 1, (int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 17))))
            size = int(rng.choice([s for s in (1, 3, 5, 7) if s <= x.shape[0] or s == 1]))
            args = (size, rng.uniform(1e-4, 1), rng.uniform(0.5, 1), rng.uniform(0.5, 2))
            worst["lrn"] = max(worst.get("lrn", 0), np.abs(lrn(x, *args) - lrn_loops(x, *args)).max())
            case = small_pool_case(rng)
            worst["max"] = max(worst.get("max", 0), np.abs(maxpool(**case) - pool_loops(**case, mode="max")).max())
            worst["avg"] = max(worst.get("avg", 0), np.abs(avgpool(**case) - pool_loops(**case, mode="avg")).max())
            x = rng.uniform(-1, 1, (int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 5))))
            m = rng.uniform(-1, 1, (int(rng.integers(1, 9)), x.size))
            b = rng.uniform(-1, 1, len(m))
            worst["fc"] = max(worst.get("fc", 0), np.abs(fully_connected(x, m, b) - fc_loops(x, m, b)).max())
        elapsed = time.perf_counter() - t0
        assert max(worst.values()) <= 1e-5, worst
        assert elapsed < 30, elapsed


def test_fisher_vector_oracle():
    with criterion(2, "Fisher vector vs central differences, rtol 1e-4"):
        t0 = time.perf_counter()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            k, d, n = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 33))
            g = random_gmm(rng, k, d)
            x = g.means[rng.integers(k, size=n)] + rng.standard_normal((n, d))
            np.testing.assert_allclose(fisher_raw(g, x), fd_fisher(g, x), rtol=1e-4, atol=1e-8)
        assert time.perf_counter() - t0 < 10


def test_svm_oracle():
    with criterion(3, "SVM primal within 1e-3 of a conic reference on 20 instances; 2-point case"):
        t0 = time.perf_counter()
        for seed in range(20):
            x, y, C = random_instance(seed)
            w, b = train_binary(x, y, SvmTrainConfig(C=C, tolerance=1e-6, max_iter=20000))
            ref = reference_primal(x, y, C)
            assert abs(primal_objective(w, b, x, y, C) - ref) <= 1e-3 * abs(ref), seed
        w, b = train_binary([[-1.0], [1.0]], [-1, 1], SvmTrainConfig(C=10))
        assert abs(w[0] - 1) < 5e-2
        assert time.perf_counter() - t0 < 10


def test_em_kmeans_monotonicity():
    with criterion(4, "k-means objective non-increasing, GMM log-likelihood non-decreasing, 50 fits"):
        t0 = time.perf_counter()
        for seed in range(50):
            rng = np.random.default_rng(seed)
            d = int(rng.integers(1, 6))
            x = np.concatenate([rng.standard_normal((40, d)) * rng.uniform(0.3, 2) + rng.uniform(-5, 5, d)
                                for _ in range(int(rng.integers(2, 5)))])
            k = int(rng.integers(1, 8))
            cb = kmeans_fit(x, k, seed=seed, rel_tol=0, max_iter=50)
            assert np.all(np.diff(cb.objective_history) <= 0), seed
            g = gmm_fit_em(x, k, seed=seed, rel_tol=0, max_iter=40)
            assert np.all(np.diff(g.loglik_history) >= -1e-7), seed
        assert time.perf_counter() - t0 < 30


def test_harness_integrity(small_textures, tmp_path):
    with criterion(5, "fold partition, per-class balance, leakage canary, bitwise CSV"):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            labels = rng.permutation(np.repeat(np.arange(int(rng.integers(2, 6))), rng.integers(10, 30)))
            k = int(rng.integers(2, 11))
            plan = stratified_kfold(labels, k, seed)
            tests = [plan.test_indices(f) for f in range(k)]
            assert np.array_equal(np.sort(np.concatenate(tests)), np.arange(len(labels)))
            for c in np.unique(labels):
                per = [np.sum(labels[t] == c) for t in tests]
                assert max(per) - min(per) <= 1
        sampling = DenseSamplingSpec(16, (16, 32), 16)
        specs = [PipelineSpec("raw", size=(12, 12)), PipelineSpec("cnn", arch="smallnet", layer="conv2"),
                 PipelineSpec("vlad", k=4, sampling=sampling, kmeans_iter=10),
                 PipelineSpec("fisher", k=2, sampling=sampling, kmeans_iter=5, em_iter=5)]
        plan = stratified_kfold(small_textures.labels, 3, 2)
        victim = 7
        fold = plan.assignments[victim]
        planted_set = _with_canary(small_textures, victim)
        for spec in specs:
            base = run_cv(spec, small_textures, k=3, seed=2, keep_fits=True)
            planted = run_cv(spec, planted_set, k=3, seed=2, keep_fits=True)
            _fits_equal(base.fold_fits[fold], planted.fold_fits[fold])
        outs = []
        for i in range(2):
            res = [run_cv(specs[0], small_textures, k=3, seed=4), run_trials(specs[2], small_textures, 2, 3, 4)]
            report(res, tmp_path / f"{i}.csv", tmp_path / f"{i}.svg", timings=False)
            outs.append((tmp_path / f"{i}.csv").read_bytes())
        assert outs[0] == outs[1]


def test_shape_conformance():
    with criterion(6, "alexnet inventory and googlenet taps via inspect"):
        rows = {name: (kind, shape, dim) for name, kind, shape, dim in cmd_inspect("alexnet", io.StringIO())}
        kinds = lambda kind: [n for n, r in rows.items() if r[0] == kind]  # noqa: E731
        assert kinds("conv") == [f"conv{i}" for i in range(1, 6)]
        assert kinds("lrn") == ["norm1", "norm2"]
        assert kinds("maxpool") == ["pool1", "pool2", "pool5"]
        assert kinds("fc") == ["fc6", "fc7", "fc8"]
        assert kinds("softmax") == ["prob"]
        assert rows["fc6"][2] == rows["fc7"][2] == 4096 and rows["prob"][2] == 1000
        rows = {name: (kind, shape) for name, kind, shape, _ in cmd_inspect("googlenet", io.StringIO())}
        for tap in ("pool3/3x3_s2", "loss1/ave_pool", "loss2/ave_pool"):
            assert tap in rows
        g = load_arch(arch_path("googlenet"))
        concats = [n for n in g.nodes if n.kind == "concat"]
        assert concats
        for n in concats:
            assert rows[n.name][1][0] == sum(rows[i][1][0] for i in n.inputs)


def experiment_config(tmp_path, tag):
    cfg = load_config(CONFIG)
    return replace(cfg, dataset_dir=None, timings=False,
                   csv_path=tmp_path / f"{tag}.csv", svg_path=tmp_path / f"{tag}.svg")


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    cfg = experiment_config(tmp_path_factory.mktemp("exp"), "first")
    t0 = time.perf_counter()
    results = cmd_run(cfg, log=print)
    return cfg, results, time.perf_counter() - t0


@pytest.mark.slow
def test_synthetic_experiment(first_run):
    cfg, results, elapsed = first_run
    with criterion(7, f"synthetic experiment ordering and protocols ({elapsed:.0f}s run)"):
        by = {r.pipeline: r for r in results}
        assert set(by) == {"raw64x64", "smallnet:data", "smallnet:conv1", "smallnet:conv2", "smallnet:fc1",
                           "bovw256", "vlad64", "fisher32"}
        for name in ("bovw256", "vlad64", "fisher32"):
            assert by[name].mean_accuracy >= 0.90, (name, by[name].mean_accuracy)
            # one mean accuracy per trial, each trial its own seed
            assert by[name].protocol == "10-trial" and by[name].seeds == tuple(range(10))
            assert len(by[name].unit_accuracies) == 10
        for name in ("raw64x64", "smallnet:data", "smallnet:conv1", "smallnet:conv2", "smallnet:fc1"):
            # per-fold accuracies of a single 10-fold pass
            assert by[name].protocol == "single-trial" and by[name].seeds == (0,)
            assert len(by[name].unit_accuracies) == 10
        baseline = max(by["smallnet:data"].mean_accuracy, by["raw64x64"].mean_accuracy)
        assert max(by["smallnet:conv1"].mean_accuracy, by["smallnet:conv2"].mean_accuracy) > baseline
        assert elapsed < 600, elapsed


@pytest.mark.slow
def test_determinism(first_run, tmp_path):
    cfg, results, _ = first_run
    with criterion(8, "rerun reproduces every accuracy to 6 decimals"):
        again = cmd_run(experiment_config(tmp_path, "second"))
        assert [r.pipeline for r in again] == [r.pipeline for r in results]
        for a, b in zip(results, again):
            assert round(a.mean_accuracy, 6) == round(b.mean_accuracy, 6), a.pipeline
            assert round(a.std_accuracy, 6) == round(b.std_accuracy, 6), a.pipeline
        assert cfg.csv_path.read_bytes() == (tmp_path / "second.csv").read_bytes()
