import math

import numpy as np
import pytest

from texbench.cnn import (
    ArchError, arch_path, build_graph, check_weights, extract_feature, forward, init_weights, load_arch,
    load_network, parse_arch, read_weights, write_weights,
)
from texbench.cnn.weights import expected_param_shapes

SHIPPED = ["alexnet", "caffenet", "googlenet", "smallnet"]


def graph_of(text):
    shape, nodes = parse_arch(text)
    return build_graph(shape, nodes)


def test_single_relu_network():
    g = graph_of("input_shape=2,3,3\ndata data\nrelu1 relu\n")
    x = np.random.default_rng(0).uniform(-1, 1, (2, 3, 3)).astype(np.float32)
    out = forward(g, {}, x)
    assert set(out) == {"data", "relu1"}
    assert np.array_equal(out["data"], x)
    assert np.array_equal(out["relu1"], np.maximum(x, 0))


def test_parse_defaults_and_pairs():
    g = graph_of("""
        # comment
        input_shape=1,8,6
        data data
        c conv out=2 kernel=3x1 stride=1x2 pad=1x0   # trailing
        p maxpool kernel=2 stride=2 inputs=c
        m concat inputs=p,p
    """)
    assert g["c"].params["kernel"] == (3, 1)
    assert g.shapes["c"] == (2, 8, 3)
    assert g["p"].inputs == ("c",)
    assert g.shapes["m"] == (4, 4, 2)
    assert g.names[0] == "data"


@pytest.mark.parametrize("text, match", [
    ("data data\n", "input_shape"),
    ("input_shape=1,4,4\ndata data\nr relu inputs=convX\n", "convX"),
    ("input_shape=1,4,4\ndata data\nr bogus\n", "bogus"),
    ("input_shape=1,4,4\ndata data\nr relu\nr relu\n", "duplicate"),
    ("input_shape=1,4,4\ndata data\na relu inputs=b\nb relu inputs=a\n", "cycle"),
    ("input_shape=1,4,4\nd1 data\nd2 data\n", "one data"),
    ("input_shape=1,4,4\ndata data\nc conv kernel=3\n", "missing out"),
    ("input_shape=1,4,4\ndata data\nc conv out=2 kernel=3 color=red\n", "color"),
    ("input_shape=1,4,4\ndata data\nc conv out=2 kernel=9\n", "kernel"),
    ("input_shape=1,4,4\ndata data\nn lrn size=4\n", "odd"),
    ("input_shape=1,4,4\ndata data\nc conv out=2 kernel=3 expect=2,3,3\n", "annotated"),
    ("input_shape=1,4,4\ndata data\nc conv out=x kernel=3\n", "integers"),
])
def test_arch_errors(text, match):
    with pytest.raises(ArchError, match=match):
        graph_of(text)


def test_errors_carry_line_numbers():
    with pytest.raises(ArchError, match=r":4:"):
        graph_of("input_shape=1,4,4\ndata data\nr relu\nq relu inputs=missing\n")


def test_alexnet_inventory():
    g = load_arch(arch_path("alexnet"))
    names = g.names
    assert [n for n in names if g[n].kind == "conv"] == [f"conv{i}" for i in range(1, 6)]
    assert [n for n in names if g[n].kind == "lrn"] == ["norm1", "norm2"]
    assert [n for n in names if g[n].kind == "maxpool"] == ["pool1", "pool2", "pool5"]
    assert [n for n in names if g[n].kind == "fc"] == ["fc6", "fc7", "fc8"]
    assert g.feature_dim("fc6") == g.feature_dim("fc7") == 4096
    assert g.feature_dim("prob") == 1000
    assert names.index("norm1") < names.index("pool1")


def test_caffenet_switches_pool_and_norm():
    g = load_arch(arch_path("caffenet"))
    assert g.names.index("pool1") < g.names.index("norm1")
    assert g.names.index("pool2") < g.names.index("norm2")
    assert g.feature_dim("fc6") == 4096


def test_googlenet_taps_and_concats():
    g = load_arch(arch_path("googlenet"))
    concats = [n for n in g.nodes if n.kind == "concat"]
    assert len(concats) == 9
    for n in concats:
        assert g.shapes[n.name][0] == sum(g.shapes[i][0] for i in n.inputs)
    assert g.shapes["pool3/3x3_s2"] == (480, 14, 14)
    assert g.shapes["loss1/ave_pool"] == (512, 4, 4)
    assert g.shapes["loss2/ave_pool"] == (528, 4, 4)
    assert g.shapes["pool5/7x7_s1"] == (1024, 1, 1)
    assert g.feature_dim("prob") == 1000


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_archs_are_annotated(name):
    g = load_arch(arch_path(name))
    assert all(n.expect is not None for n in g.nodes)
    assert all(g.feature_dim(n) == math.prod(g.shapes[n]) for n in g.names)


def test_unknown_shipped_arch():
    with pytest.raises(ArchError, match="available"):
        arch_path("resnet")


def test_init_weights_glorot_and_seeded():
    g = load_arch(arch_path("smallnet"))
    w1 = init_weights(g, seed=3)
    w2 = init_weights(g, seed=3)
    assert all(np.array_equal(a, b) for k in w1 for a, b in zip(w1[k], w2[k]))
    assert not np.array_equal(init_weights(g, seed=4)["conv1"][0], w1["conv1"][0])
    k, b = w1["conv1"]
    s = math.sqrt(6 / (3 * 25 + 16 * 25))
    assert k.shape == (16, 3, 5, 5) and np.abs(k).max() <= s and not b.any()
    fc, _ = w1["fc1"]
    assert fc.shape == (64, 32 * 15 * 15)
    assert np.abs(fc).max() <= math.sqrt(6 / (7200 + 64))


def test_weight_mismatch_names_layer(tmp_path):
    g = load_arch(arch_path("smallnet"))
    w = init_weights(g)
    w["conv1"] = [np.zeros((16, 3, 3, 3), np.float32), w["conv1"][1]]
    with pytest.raises(ArchError, match="conv1"):
        check_weights(g, w)
    write_weights(tmp_path / "bad.cnnw", w)
    with pytest.raises(ArchError, match="conv1"):
        load_network(arch_path("smallnet"), tmp_path / "bad.cnnw")
    w = init_weights(g)
    del w["fc2"]
    with pytest.raises(ArchError, match="fc2"):
        check_weights(g, w)


def test_cnnw_layout_and_errors(tmp_path):
    w = {"a": [np.arange(6, dtype=np.float32).reshape(2, 3), np.ones(2, np.float32)]}
    write_weights(tmp_path / "w.cnnw", w)
    raw = (tmp_path / "w.cnnw").read_bytes()
    assert raw[:4] == b"CNNW"
    assert int.from_bytes(raw[4:8], "little") == 1 and int.from_bytes(raw[8:12], "little") == 1
    assert len(raw) == 12 + 2 + 1 + 1 + (1 + 8 + 24) + (1 + 4 + 8)
    back = read_weights(tmp_path / "w.cnnw")
    assert np.array_equal(back["a"][0], w["a"][0]) and np.array_equal(back["a"][1], w["a"][1])
    (tmp_path / "t.cnnw").write_bytes(raw[:-3])
    with pytest.raises(ArchError, match="offset"):
        read_weights(tmp_path / "t.cnnw")
    (tmp_path / "m.cnnw").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ArchError, match="magic"):
        read_weights(tmp_path / "m.cnnw")


def test_alexnet_random_weights_roundtrip(tmp_path):
    g = load_arch(arch_path("alexnet"))
    w = init_weights(g, seed=1)
    path = tmp_path / "alexnet.cnnw"
    write_weights(path, w)
    graph, back = load_network(arch_path("alexnet"), path)
    assert graph.feature_dim("fc6") == 4096
    assert set(back) == set(expected_param_shapes(g))
    assert np.array_equal(back["fc6"][0], w["fc6"][0])
    del w, back


@pytest.mark.parametrize("name", SHIPPED)
def test_forward_shapes_match_inference(name):
    graph, weights = load_network(arch_path(name), seed=0)
    x = np.random.default_rng(0).uniform(-50, 50, graph.input_shape).astype(np.float32)
    seen = []
    acts = forward(graph, weights, x, trace=seen.append)
    assert sorted(seen) == sorted(graph.names) and len(seen) == len(set(seen))
    for n in graph.names:
        assert acts[n].shape == graph.shapes[n]
        assert acts[n].dtype == np.float32 and np.all(np.isfinite(acts[n]))
    assert acts["prob"].sum() == pytest.approx(1.0, abs=1e-5)


def test_forward_is_deterministic_and_selective():
    graph, weights = load_network(arch_path("smallnet"), seed=2)
    x = np.random.default_rng(1).uniform(-1, 1, graph.input_shape).astype(np.float32)
    a = forward(graph, weights, x)
    b = forward(graph, weights, x)
    assert all(a[n].tobytes() == b[n].tobytes() for n in a)
    seen = []
    part = forward(graph, weights, x, outputs=["conv2"], trace=seen.append)
    assert list(part) == ["conv2"] and np.array_equal(part["conv2"], a["conv2"])
    assert seen == ["data", "conv1", "relu1", "pool1", "conv2"]
    with pytest.raises(ArchError, match="input shape"):
        forward(graph, weights, np.zeros((3, 32, 32), np.float32))


def test_extract_feature():
    graph, weights = load_network(arch_path("smallnet"), seed=0)
    x = np.random.default_rng(2).uniform(-1, 1, graph.input_shape).astype(np.float32)
    f = extract_feature(graph, weights, x, "data")
    assert f.provenance == "cnn:data" and np.array_equal(f.values, x.ravel())
    assert extract_feature(graph, weights, x, "fc1").dim == 64
    assert extract_feature(graph, weights, x, "pool2").dim == 32 * 15 * 15
    with pytest.raises(ArchError, match="available: data, conv1"):
        extract_feature(graph, weights, x, "conv9")


def test_conv_feature_dim_is_shape_product():
    g = graph_of("input_shape=3,15,15\ndata data\nc conv out=16 kernel=3\n")
    x = np.zeros((3, 15, 15), np.float32)
    assert extract_feature(g, init_weights(g), x, "c").dim == 2704
