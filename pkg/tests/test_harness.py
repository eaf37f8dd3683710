import math
from xml.etree import ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from texbench.dataset import Dataset, ImagePatch
from texbench.harness import (
    ExperimentResult, PipelineSpec, layer_sweep, read_csv, report, run_cv, run_trials, stratified_kfold,
    summarize, write_csv, write_svg,
)
from texbench.localfeat import DenseSamplingSpec

SAMPLING = DenseSamplingSpec(16, (16, 32), 16)


def test_fold_examples():
    plan = stratified_kfold(np.repeat([0, 1, 2], 3), 3, seed=1)
    for f in range(3):
        assert sorted(np.repeat([0, 1, 2], 3)[plan.test_indices(f)]) == [0, 1, 2]
    sizes = np.bincount(stratified_kfold(np.zeros(10, int), 3).assignments)
    assert sorted(sizes) == [3, 3, 4]
    plan = stratified_kfold(np.repeat(np.arange(5), 20), 10, seed=0)
    assert all(len(plan.test_indices(f)) == 10 for f in range(10))
    with pytest.raises(ValueError, match="'tiny'"):
        stratified_kfold(np.array([0, 0, 0, 1, 1]), 3, class_names=["big", "tiny"])


@given(st.lists(st.integers(0, 4), min_size=12, max_size=80), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_fold_partition_properties(labels, k, seed):
    labels = np.array(labels)
    counts = np.bincount(labels)
    if counts[counts > 0].min() < k:
        with pytest.raises(ValueError):
            stratified_kfold(labels, k, seed)
        return
    plan = stratified_kfold(labels, k, seed)
    tests = [plan.test_indices(f) for f in range(k)]
    assert np.array_equal(np.sort(np.concatenate(tests)), np.arange(len(labels)))
    for f, (tr, te) in enumerate(plan.splits()):
        assert not set(tr) & set(te) and len(tr) + len(te) == len(labels)
    for c in np.unique(labels):
        per_fold = [np.sum(labels[t] == c) for t in tests]
        assert max(per_fold) - min(per_fold) <= 1
    again = stratified_kfold(labels, k, seed)
    assert np.array_equal(again.assignments, plan.assignments)


def test_summarize_uses_sample_std():
    mean, std = summarize([0.8, 0.9, 1.0])
    assert mean == pytest.approx(0.9) and std == pytest.approx(0.1)
    mean, std = summarize([0.95, 0.97, 0.96])
    assert mean == pytest.approx(0.96) and std == pytest.approx(0.01)
    assert summarize([0.7]) == (0.7, 0.0)


def test_pipeline_spec_validation():
    with pytest.raises(ValueError):
        PipelineSpec("sift")
    with pytest.raises(ValueError):
        PipelineSpec("cnn", arch="smallnet")
    with pytest.raises(ValueError):
        PipelineSpec("bovw", k=0)
    assert PipelineSpec("vlad", k=16).name == "vlad16"
    assert PipelineSpec("raw", size=(32, 16)).name == "raw32x16"
    assert PipelineSpec("cnn", arch="smallnet", layer="fc1").name == "smallnet:fc1"


def test_raw_pixels_on_color_classes(color_dataset):
    r = run_cv(PipelineSpec("raw", size=(8, 8)), color_dataset, k=5, seed=0)
    assert r.mean_accuracy == 1.0 and r.std_accuracy == 0.0
    assert r.feature_dim == 192 and len(r.unit_accuracies) == 5
    assert r.protocol == "single-trial" and r.seeds == (0,)


def test_result_consistency(small_textures):
    r = run_cv(PipelineSpec("raw", size=(16, 16)), small_textures, k=5, seed=2)
    assert 0 <= r.mean_accuracy <= 1 and r.std_accuracy >= 0
    assert (r.mean_accuracy, r.std_accuracy) == pytest.approx(summarize(r.unit_accuracies))


def test_trials_protocol(color_dataset):
    spec = PipelineSpec("raw", size=(8, 8))
    one = run_trials(spec, color_dataset, trials=1, k=5, base_seed=4)
    assert one.mean_accuracy == run_cv(spec, color_dataset, k=5, seed=4).mean_accuracy
    assert one.std_accuracy == 0 and not one.std_defined
    three = run_trials(spec, color_dataset, trials=3, k=5, base_seed=4)
    assert three.seeds == (4, 5, 6) and len(set(three.seeds)) == 3
    assert three.std_defined and three.protocol == "3-trial"
    with pytest.raises(ValueError):
        run_trials(spec, color_dataset, trials=0)


def test_repeated_seed_gives_zero_spread(small_textures):
    spec = PipelineSpec("bovw", k=8, sampling=SAMPLING, kmeans_iter=10)
    means = [run_cv(spec, small_textures, k=3, seed=9).mean_accuracy for _ in range(3)]
    assert summarize(means)[1] == 0.0


def test_layer_sweep(color_dataset):
    res = layer_sweep("smallnet", None, ["data"], color_dataset, k=3, seed=0)
    assert len(res) == 1 and res[0].feature_dim == 3 * 64 * 64
    a, b = layer_sweep("smallnet", None, ["conv1", "conv1"], color_dataset, k=3, seed=0)
    assert a.unit_accuracies == b.unit_accuracies
    res = layer_sweep("smallnet", None, ["data", "conv1", "conv2", "fc1"], color_dataset, k=3, seed=0)
    assert [r.feature_dim for r in res] == [12288, 16 * 60 * 60, 32 * 30 * 30, 64]
    assert [r.pipeline for r in res] == ["smallnet:data", "smallnet:conv1", "smallnet:conv2", "smallnet:fc1"]
    single = run_cv(PipelineSpec("cnn", arch="smallnet", layer="conv2"), color_dataset, k=3, seed=0)
    assert single.unit_accuracies == res[2].unit_accuracies


def test_layer_sweep_rejects_unknown_layer_first(color_dataset, monkeypatch):
    import texbench.harness as h

    def boom(*a, **k):
        raise AssertionError("computation started")

    monkeypatch.setattr(h, "forward", boom)
    with pytest.raises(ValueError, match="conv7"):
        layer_sweep("smallnet", None, ["conv1", "conv7"], color_dataset, k=3)


def _with_canary(dataset, index):
    patches = list(dataset.patches)
    p = patches[index]
    px = np.zeros_like(p.pixels)
    px[::2] = 255  # striped outlier unlike anything else in the set
    patches[index] = ImagePatch(px, p.label, p.id)
    return Dataset(patches, dataset.class_names)


def _fits_equal(a, b):
    assert set(a) == set(b)
    for key in a:
        x, y = a[key], b[key]
        if key == "svm":
            assert np.array_equal(x.weights, y.weights) and np.array_equal(x.biases, y.biases)
        elif key == "model":
            for attr in ("centroids", "weights", "means", "variances"):
                if hasattr(x, attr):
                    assert np.array_equal(getattr(x, attr), getattr(y, attr))
        else:
            assert np.array_equal(np.asarray(x), np.asarray(y))


@pytest.mark.parametrize("spec", [
    PipelineSpec("raw", size=(12, 12)),
    PipelineSpec("cnn", arch="smallnet", layer="fc1"),
    PipelineSpec("bovw", k=8, sampling=SAMPLING, kmeans_iter=10),
    PipelineSpec("fisher", k=2, sampling=SAMPLING, kmeans_iter=5, em_iter=5),
], ids=lambda s: s.kind)
def test_canary_in_test_fold_changes_no_fit(spec, small_textures):
    k, seed = 3, 1
    plan = stratified_kfold(small_textures.labels, k, seed)
    victim = 4
    fold = plan.assignments[victim]
    base = run_cv(spec, small_textures, k=k, seed=seed, keep_fits=True)
    planted = run_cv(spec, _with_canary(small_textures, victim), k=k, seed=seed, keep_fits=True)
    assert victim not in base.fold_fits[fold]["train_indices"]
    _fits_equal(base.fold_fits[fold], planted.fold_fits[fold])
    # the canary is seen by the other folds' fits, which is what makes the check meaningful
    other = (fold + 1) % k
    if spec.kind == "raw":
        assert base.fold_fits[other]["mean_rgb"] != planted.fold_fits[other]["mean_rgb"]


def _result(name, mean, std, dim, t=1.25):
    return ExperimentResult(name, mean, std, dim, (), wall_time=t)


def test_csv_format_and_roundtrip(tmp_path):
    rs = [_result("label", 0.9, 0.05, 128), _result("smallnet:fc1", 2 / 3, 0.0, 64)]
    write_csv(rs, tmp_path / "r.csv", metadata={"base_seed": 7})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# base_seed: 7"
    assert "pipeline,mean_accuracy,std_accuracy,feature_dim,wall_time_s" in lines
    assert "label,0.900000,0.050000,128,1.250000" in lines
    back = read_csv(tmp_path / "r.csv")
    assert [r.pipeline for r in back] == ["label", "smallnet:fc1"]
    for a, b in zip(rs, back):
        assert b.mean_accuracy == pytest.approx(a.mean_accuracy, abs=5e-7)
        assert b.std_accuracy == pytest.approx(a.std_accuracy, abs=5e-7)
        assert b.feature_dim == a.feature_dim
    write_csv(rs, tmp_path / "n.csv", timings=False)
    assert "label,0.900000,0.050000,128,nan" in (tmp_path / "n.csv").read_text()
    assert math.isnan(read_csv(tmp_path / "n.csv")[0].wall_time)


def test_report_errors(tmp_path):
    with pytest.raises(ValueError):
        write_csv([], tmp_path / "x.csv")
    with pytest.raises(OSError):
        report([_result("a", 0.5, 0.1, 3)], tmp_path / "missing" / "x.csv", tmp_path / "x.svg")


def test_svg_structure(tmp_path):
    rs = [_result(f"p{i}", 0.5 + i / 10, 0.05, 10 ** (i + 1)) for i in range(4)]
    write_svg(rs, tmp_path / "c.svg")
    root = ET.parse(tmp_path / "c.svg").getroot()
    ns = {"s": "http://www.w3.org/2000/svg"}
    bars = root.findall(".//s:rect[@class='bar']", ns)
    assert len(bars) == 4
    heights = [float(b.get("height")) for b in bars]
    assert heights == sorted(heights)
    assert len(root.findall(".//s:g[@id='error-bars']/s:line", ns)) == 4
    dim_line = root.find(".//s:polyline[@class='dimension']", ns)
    ys = [float(p.split(",")[1]) for p in dim_line.get("points").split()]
    steps = np.diff(ys)
    assert np.all(steps < 0) and np.allclose(steps, steps[0], atol=0.15)  # equal decades on a log axis


def test_run_and_report_are_reproducible(tmp_path, small_textures):
    specs = [PipelineSpec("raw", size=(16, 16)), PipelineSpec("vlad", k=4, sampling=SAMPLING, kmeans_iter=10)]
    outs = []
    for i in range(2):
        res = [run_cv(specs[0], small_textures, k=3, seed=5), run_trials(specs[1], small_textures, 2, 3, 5)]
        report(res, tmp_path / f"{i}.csv", tmp_path / f"{i}.svg", timings=False, metadata={"seed": 5})
        outs.append((tmp_path / f"{i}.csv").read_bytes())
    assert outs[0] == outs[1]
    assert b"# vlad4: protocol=2-trial seeds=5,6" in outs[0]


def test_parallel_folds_match_serial(small_textures):
    spec = PipelineSpec("bovw", k=8, sampling=SAMPLING, kmeans_iter=10)
    a = run_cv(spec, small_textures, k=3, seed=3)
    b = run_cv(spec, small_textures, k=3, seed=3, jobs=3)
    assert a.unit_accuracies == b.unit_accuracies
    assert a.mean_accuracy == b.mean_accuracy
