"""Forward evaluation of a layer graph with a tap on every node."""

from pathlib import Path

import numpy as np

from ..encode import FeatureVector
from . import ops
from .graph import ArchError, load_arch
from .weights import check_weights, init_weights, read_weights


def load_network(arch_file, weights_file=None, seed=0):
    """Load and validate a network.

    Without ``weights_file`` the parameters are Glorot-initialized from
    ``seed``.  Returns ``(graph, weights)``.
    """
    graph = load_arch(arch_file)
    if weights_file is None:
        weights = init_weights(graph, seed)
    else:
        weights = read_weights(Path(weights_file))
    check_weights(graph, weights)
    return graph, weights


def _eval_node(node, args, weights):
    p = node.params
    kind = node.kind
    if kind == "conv":
        k, b = weights[node.name]
        return ops.conv2d(args[0], k, b, p.get("stride", 1), p.get("pad", 0), p.get("groups", 1))
    if kind == "relu":
        return ops.relu(args[0])
    if kind == "lrn":
        return ops.lrn(args[0], p.get("size", 5), p.get("alpha", 1e-4), p.get("beta", 0.75), p.get("k", 1.0))
    if kind == "maxpool":
        return ops.maxpool(args[0], p["kernel"], p.get("stride", 1), p.get("pad", 0))
    if kind == "avgpool":
        return ops.avgpool(args[0], p["kernel"], p.get("stride", 1), p.get("pad", 0))
    if kind == "fc":
        m, b = weights[node.name]
        return ops.fully_connected(args[0], m, b)
    if kind == "softmax":
        return ops.softmax(args[0])
    if kind == "concat":
        return ops.concat(args, p.get("axis", 0))
    if kind == "dropout":
        return args[0]
    raise ArchError(f"cannot evaluate node kind {kind!r}")


def forward(graph, weights, x, outputs=None, trace=None):
    """Evaluate the graph on one input; return ``{layer name: tensor}``.

    The map includes the data node.  With ``outputs`` only those layers
    and their ancestors are evaluated.  ``trace`` is called with each node
    name as it is evaluated.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.shape != tuple(graph.input_shape):
        raise ArchError(f"input shape {x.shape} does not match declared {tuple(graph.input_shape)}")
    wanted = None if outputs is None else set(graph.ancestors(outputs))
    acts = {}
    for node in graph.nodes:
        if wanted is not None and node.name not in wanted:
            continue
        if trace is not None:
            trace(node.name)
        if node.kind == "data":
            acts[node.name] = x
            continue
        try:
            out = _eval_node(node, [acts[i] for i in node.inputs], weights)
        except ops.ShapeError as exc:
            raise ArchError(f"node {node.name!r}: {exc}") from None
        if out.shape != graph.shapes[node.name]:
            raise ArchError(f"node {node.name!r} produced {out.shape}, inferred {graph.shapes[node.name]}")
        acts[node.name] = out
    if outputs is not None:
        return {n: acts[n] for n in outputs}
    return acts


def check_layers(graph, layer_names):
    unknown = [n for n in layer_names if n not in graph]
    if unknown:
        raise ArchError(f"unknown layer(s) {', '.join(map(repr, unknown))}; available: {', '.join(graph.names)}")


def extract_feature(graph, weights, x, layer_name):
    """Flattened activation of ``layer_name`` as a :class:`FeatureVector`."""
    check_layers(graph, [layer_name])
    act = forward(graph, weights, x, outputs=[layer_name])[layer_name]
    return FeatureVector(act.ravel(), f"cnn:{layer_name}")
