"""Layer parameters: shape checks, seeded initialization and the CNNW file format.

CNNW layout (all integers little-endian)::

    b"CNNW"  u32 version (=1)  u32 layer_count
    per layer:   u16 name_len, name (UTF-8), u8 tensor_count
    per tensor:  u8 ndim, ndim x u32 dims, prod(dims) float32 (LE, row-major)
"""

import math
import struct

import numpy as np

from ..rng import make_rng
from .graph import ArchError

MAGIC = b"CNNW"
VERSION = 1


def expected_param_shapes(graph):
    """``{layer: [kernel_shape, bias_shape]}`` for every conv and fc node."""
    out = {}
    for n in graph.nodes:
        if n.kind == "conv":
            c = graph.shapes[n.inputs[0]][0]
            kh, kw = n.params["kernel"]
            o = n.params["out"]
            out[n.name] = [(o, c // n.params.get("groups", 1), kh, kw), (o,)]
        elif n.kind == "fc":
            fan_in = math.prod(graph.shapes[n.inputs[0]])
            out[n.name] = [(n.params["out"], fan_in), (n.params["out"],)]
    return out


def check_weights(graph, weights):
    """Raise :class:`ArchError` unless ``weights`` matches every parametric layer."""
    expected = expected_param_shapes(graph)
    for name, shapes in expected.items():
        if name not in weights:
            raise ArchError(f"no weights for layer {name!r}")
        got = [tuple(np.shape(t)) for t in weights[name]]
        if got != [tuple(s) for s in shapes]:
            raise ArchError(f"weight shape mismatch for layer {name!r}: expected {shapes}, got {got}")
    extra = set(weights) - set(expected)
    if extra:
        raise ArchError(f"weights given for unknown or parameter-free layers: {', '.join(sorted(extra))}")


def init_weights(graph, seed=0):
    """Glorot-uniform kernels, zero biases, one Philox stream per layer."""
    weights = {}
    for i, (name, (kshape, bshape)) in enumerate(expected_param_shapes(graph).items()):
        if len(kshape) == 4:
            o, cg, kh, kw = kshape
            fan_in, fan_out = cg * kh * kw, o * kh * kw
        else:
            fan_out, fan_in = kshape
        s = math.sqrt(6.0 / (fan_in + fan_out))
        rng = make_rng(seed, i)
        k = rng.uniform(-s, s, size=kshape).astype(np.float32)
        weights[name] = [k, np.zeros(bshape, dtype=np.float32)]
    return weights


def write_weights(path, weights):
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(weights)))
        for name, tensors in weights.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(tensors)))
            for t in tensors:
                t = np.asarray(t, dtype="<f4")
                f.write(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
                f.write(t.tobytes())


def read_weights(path):
    with open(path, "rb") as f:
        data = f.read()

    def fail(msg, off):
        raise ArchError(f"{path}: {msg} at byte offset {off}")

    if data[:4] != MAGIC:
        fail("bad magic, not a CNNW file", 0)
    if len(data) < 12:
        fail("truncated header", len(data))
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        fail(f"unsupported version {version}", 4)
    off = 12
    weights = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (ntens,) = struct.unpack_from("<B", data, off)
            off += 1
            tensors = []
            for _ in range(ntens):
                (ndim,) = struct.unpack_from("<B", data, off)
                off += 1
                dims = struct.unpack_from(f"<{ndim}I", data, off)
                off += 4 * ndim
                size = math.prod(dims)
                if off + 4 * size > len(data):
                    fail(f"truncated tensor data for layer {name!r}", off)
                t = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
                tensors.append(t.astype(np.float32))
                off += 4 * size
            weights[name] = tensors
    except struct.error:
        fail("truncated record", off)
    if off != len(data):
        fail("trailing bytes", off)
    return weights
