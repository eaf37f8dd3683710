"""Forward-only CNN engine: operators, arch files, weights and layer taps."""

from .forward import check_layers, extract_feature, forward, load_network
from .graph import ArchError, LayerNode, NetworkGraph, arch_path, build_graph, load_arch, parse_arch
from .ops import ShapeError, avgpool, concat, conv2d, fully_connected, lrn, maxpool, relu, softmax
from .weights import check_weights, init_weights, read_weights, write_weights

__all__ = [
    "ArchError", "LayerNode", "NetworkGraph", "ShapeError",
    "arch_path", "avgpool", "build_graph", "check_layers", "check_weights", "concat", "conv2d",
    "extract_feature", "forward", "fully_connected", "init_weights", "load_arch", "load_network",
    "lrn", "maxpool", "parse_arch", "read_weights", "relu", "softmax", "write_weights",
]
