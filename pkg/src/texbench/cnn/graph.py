"""Layer graphs read from ``.arch`` files, with static shape inference.

Arch file grammar (one statement per line, ``#`` starts a comment)::

    input_shape=3,227,227
    data   data
    conv1  conv   out=96 kernel=11 stride=4 expect=96,55,55
    relu1  relu
    pool1  maxpool kernel=3 stride=2 inputs=relu1

A node line is ``name kind key=value ...``.  ``inputs=a,b`` lists the
producers; when it is omitted the node reads the node on the previous line.
``expect=c,h,w`` is an optional shape annotation checked by shape
inference.  Recognised keys per kind:

=========  ===========================================================
conv       out, kernel, stride [1], pad [0], groups [1]
maxpool    kernel, stride [1], pad [0]   (also avgpool)
lrn        size [5], alpha [1e-4], beta [0.75], k [1]
fc         out
concat     axis [0]
dropout    ratio (ignored at inference)
=========  ===========================================================

``kernel``, ``stride`` and ``pad`` accept ``n`` or ``HxW``.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

from .ops import ShapeError, conv_output_size, pool_output_size

KINDS = ("data", "conv", "relu", "lrn", "maxpool", "avgpool", "fc", "softmax", "concat", "dropout")

_PARAM_KEYS = {
    "data": set(),
    "conv": {"out", "kernel", "stride", "pad", "groups"},
    "relu": set(),
    "lrn": {"size", "alpha", "beta", "k"},
    "maxpool": {"kernel", "stride", "pad"},
    "avgpool": {"kernel", "stride", "pad"},
    "fc": {"out"},
    "softmax": set(),
    "concat": {"axis"},
    "dropout": {"ratio"},
}
_REQUIRED = {"conv": {"out", "kernel"}, "maxpool": {"kernel"}, "avgpool": {"kernel"}, "fc": {"out"}}

ARCH_DIR = Path(__file__).parent / "archs"


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class LayerNode:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    inputs: tuple = ()
    expect: tuple = None
    line: int = 0


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Topologically ordered nodes plus the inferred output shape of each."""

    nodes: tuple
    input_shape: tuple
    shapes: dict
    source: str = "<memory>"

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.name: n for n in self.nodes})

    def __getitem__(self, name):
        return self._index[name]

    def __contains__(self, name):
        return name in self._index

    @property
    def names(self):
        return [n.name for n in self.nodes]

    @property
    def data_node(self):
        return next(n for n in self.nodes if n.kind == "data")

    def feature_dim(self, name):
        return math.prod(self.shapes[name])

    def ancestors(self, names):
        """Names needed to compute ``names``, in topological order."""
        need = set()
        stack = list(names)
        while stack:
            n = stack.pop()
            if n not in need:
                need.add(n)
                stack.extend(self[n].inputs)
        return [n.name for n in self.nodes if n.name in need]


def arch_path(name):
    """Path of a shipped architecture (``alexnet``, ``caffenet``, ``googlenet``, ``smallnet``)."""
    p = ARCH_DIR / f"{name}.arch"
    if not p.exists():
        shipped = sorted(f.stem for f in ARCH_DIR.glob("*.arch"))
        raise ArchError(f"no shipped architecture {name!r}; available: {', '.join(shipped)}")
    return p


def _ints(text, where):
    try:
        return tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError:
        raise ArchError(f"{where}: expected integers, got {text!r}") from None


def _parse_value(key, text, where):
    if key in ("kernel", "stride", "pad"):
        v = _ints(text, where)
        if len(v) == 1:
            v = v * 2
        if len(v) != 2:
            raise ArchError(f"{where}: {key} takes n or HxW, got {text!r}")
        return v
    if key in ("out", "groups", "size", "axis"):
        v = _ints(text, where)
        if len(v) != 1:
            raise ArchError(f"{where}: {key} takes one integer, got {text!r}")
        return v[0]
    try:
        return float(text)
    except ValueError:
        raise ArchError(f"{where}: {key} must be a number, got {text!r}") from None


def parse_arch(text, source="<string>"):
    """Parse arch text into ``(input_shape, [LayerNode])`` in file order."""
    input_shape = None
    nodes = []
    prev = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        tokens = line.split()
        if len(tokens) == 1 and tokens[0].startswith("input_shape="):
            input_shape = _ints(tokens[0].split("=", 1)[1], where)
            continue
        if len(tokens) < 2 or "=" in tokens[0] or "=" in tokens[1]:
            raise ArchError(f"{where}: expected 'name kind key=value...', got {line!r}")
        name, kind = tokens[0], tokens[1]
        if kind not in KINDS:
            raise ArchError(f"{where}: unknown layer kind {kind!r} for node {name!r}")
        params, inputs, expect = {}, None, None
        for tok in tokens[2:]:
            if "=" not in tok:
                raise ArchError(f"{where}: expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            if key == "inputs":
                inputs = tuple(v for v in val.split(",") if v)
            elif key == "expect":
                expect = _ints(val, where)
            elif key in _PARAM_KEYS[kind]:
                params[key] = _parse_value(key, val, where)
            else:
                raise ArchError(f"{where}: unknown parameter {key!r} for {kind} node {name!r}")
        missing = _REQUIRED.get(kind, set()) - params.keys()
        if missing:
            raise ArchError(f"{where}: {kind} node {name!r} is missing {', '.join(sorted(missing))}")
        if kind == "data":
            inputs = ()
        elif inputs is None:
            if prev is None:
                raise ArchError(f"{where}: node {name!r} has no inputs and no preceding node")
            inputs = (prev,)
        if kind == "lrn" and params.get("size", 5) % 2 == 0:
            raise ArchError(f"{where}: lrn size must be odd")
        nodes.append(LayerNode(name, kind, params, inputs, expect, lineno))
        prev = name
    if input_shape is None:
        raise ArchError(f"{source}: missing input_shape=c,h,w header")
    return input_shape, nodes


def _toposort(nodes, source):
    by_name = {}
    for n in nodes:
        if n.name in by_name:
            raise ArchError(f"{source}:{n.line}: duplicate node name {n.name!r}")
        by_name[n.name] = n
    for n in nodes:
        for i in n.inputs:
            if i not in by_name:
                raise ArchError(f"{source}:{n.line}: node {n.name!r} references unknown node {i!r}")
    data = [n for n in nodes if n.kind == "data"]
    if len(data) != 1:
        raise ArchError(f"{source}: expected exactly one data node, found {len(data)}")
    order, state = [], {}

    def visit(n, path):
        s = state.get(n.name)
        if s == 2:
            return
        if s == 1:
            cycle = path[path.index(n.name):] + [n.name]
            raise ArchError(f"{source}: cycle through {' -> '.join(cycle)}")
        state[n.name] = 1
        for i in n.inputs:
            visit(by_name[i], path + [n.name])
        state[n.name] = 2
        order.append(n)

    for n in nodes:
        visit(n, [])
    return order


def infer_shape(node, in_shapes):
    """Output shape of ``node`` given its input shapes."""
    p = node.params
    kind = node.kind
    if kind in ("relu", "lrn", "softmax", "dropout"):
        if len(in_shapes) != 1:
            raise ShapeError(f"{kind} takes one input")
        return in_shapes[0]
    if kind == "fc":
        if len(in_shapes) != 1:
            raise ShapeError("fc takes one input")
        return (p["out"],)
    if kind == "concat":
        axis = p.get("axis", 0)
        ref = in_shapes[0]
        for s in in_shapes[1:]:
            if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis):
                raise ShapeError(f"concat inputs {ref} and {s} differ off axis {axis}")
        out = list(ref)
        out[axis] = sum(s[axis] for s in in_shapes)
        return tuple(out)
    if len(in_shapes) != 1 or len(in_shapes[0]) != 3:
        raise ShapeError(f"{kind} takes one (C, H, W) input, got {in_shapes}")
    c, h, w = in_shapes[0]
    kh, kw = p["kernel"]
    sh, sw = p.get("stride", (1, 1))
    ph, pw = p.get("pad", (0, 0))
    if kind == "conv":
        g = p.get("groups", 1)
        if c % g or p["out"] % g:
            raise ShapeError(f"channels {c} -> {p['out']} not divisible by groups {g}")
        if kh > h + 2 * ph or kw > w + 2 * pw:
            raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
        return (p["out"], conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw))
    if ph >= kh or pw >= kw:
        raise ShapeError("pooling pad must be smaller than kernel")
    return (c, pool_output_size(h, kh, sh, ph), pool_output_size(w, kw, sw, pw))


def build_graph(input_shape, nodes, source="<memory>"):
    """Order ``nodes`` topologically and run shape inference over the DAG."""
    order = _toposort(nodes, source)
    shapes = {}
    for n in order:
        try:
            if n.kind == "data":
                s = tuple(input_shape)
            else:
                s = infer_shape(n, [shapes[i] for i in n.inputs])
        except ShapeError as exc:
            raise ArchError(f"{source}:{n.line}: node {n.name!r}: {exc}") from None
        if n.expect is not None and tuple(n.expect) != s:
            raise ArchError(f"{source}:{n.line}: node {n.name!r} has shape {s}, annotated {tuple(n.expect)}")
        shapes[n.name] = s
    return NetworkGraph(tuple(order), tuple(input_shape), shapes, source)


def load_arch(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ArchError(f"cannot read arch file {path}: {exc}") from exc
    input_shape, nodes = parse_arch(text, str(path))
    return build_graph(input_shape, nodes, str(path))
