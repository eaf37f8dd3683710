"""Experiment configuration files.

A config is a single YAML document with these top-level sections (only
``pipelines`` and a dataset source are required)::

    dataset:
      directory: data/synth        # read by `run`, written by `generate`
      synthetic:                   # optional; used by `generate`, and by `run`
        num_classes: 3             #   when the directory holds no images
        patches_per_class: 30
        size_range: [150, 600]
        noise_sigma: 8.0
        seed: 1
        base_rgb: [150, 110, 120]
        class_names: [grating, checker, blobs]
        textures:                  # one entry per class
          - {family: oriented-grating, angle: 30, period: 14}
          - {family: checker, cell: 9, angle: 30}
          - {family: blob-noise, sigma: 3}
    cv:
      k: 10
      trials: 10                   # applied to bovw/vlad/fisher only
      base_seed: 0
    sampling:                      # dense SIFT defaults for codebook pipelines
      step: 8
      patch_sizes: [16, 24, 32]
      boundary_margin: 16
    svm:
      tolerance: 0.001
      max_iter: 1000
      c_grid: [0.01, 0.1, 1, 10, 100]
    pipelines:
      - {kind: raw, size: [64, 64]}
      - {kind: cnn, arch: smallnet, weight_seed: 0, layers: [data, conv1]}
      - {kind: bovw, k: 256, fit_descriptors: 5000}
    output:
      csv: results/results.csv
      svg: results/results.svg
      timings: true                # false writes `nan` wall times

A ``cnn`` entry takes either ``layer`` or a ``layers`` list; a list expands
into one result per layer computed from shared forward passes.  ``arch``
is a shipped arch name or a path, ``weights`` an optional CNNW file (else
``weight_seed`` draws random weights).  Codebook entries may override
``sampling``, ``kmeans_iter``, ``em_iter``, ``rel_tol``, ``variance_floor``
and ``fit_descriptors``.  Any entry may set ``label`` and an ``svm``
mapping.  Relative paths are resolved against the config file's folder.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .dataset import SyntheticSpec, TextureSpec
from .harness import CODEBOOK_KINDS, PipelineSpec
from .localfeat import DenseSamplingSpec
from .svm import DEFAULT_C_GRID, SvmTrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineEntry:
    """A configured pipeline; ``layers`` is set for multi-layer CNN sweeps."""

    spec: PipelineSpec
    layers: tuple = None

    @property
    def labels(self):
        if self.layers:
            stem = Path(self.spec.arch).stem
            return [f"{stem}:{name}" for name in self.layers]
        return [self.spec.name]

    @property
    def protocol(self):
        return "trials" if self.spec.kind in CODEBOOK_KINDS else "single"


@dataclass(frozen=True)
class ExperimentConfig:
    pipelines: tuple
    dataset_dir: Path = None
    synthetic: SyntheticSpec = None
    k: int = 10
    trials: int = 10
    base_seed: int = 0
    csv_path: Path = Path("results.csv")
    svg_path: Path = Path("results.svg")
    timings: bool = True
    source: Path = field(default=None, compare=False)

    def with_seed(self, seed):
        return replace(self, base_seed=int(seed))


def _mapping(value, where):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return value


def _reject_unknown(section, allowed, where):
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def _sampling(section, base=None):
    _reject_unknown(section, ("step", "patch_sizes", "boundary_margin"), "sampling")
    base = base or DenseSamplingSpec()
    try:
        return DenseSamplingSpec(
            int(section.get("step", base.step)),
            tuple(int(s) for s in section.get("patch_sizes", base.patch_sizes)),
            int(section.get("boundary_margin", base.boundary_margin)),
        )
    except ValueError as exc:
        raise ConfigError(f"sampling: {exc}") from None


def _svm(section, base):
    _reject_unknown(section, ("C", "tolerance", "max_iter", "seed", "c_grid"), "svm")
    grid = tuple(float(c) for c in section.get("c_grid", base[1]))
    try:
        cfg = SvmTrainConfig(
            float(section.get("C", base[0].C)), float(section.get("tolerance", base[0].tolerance)),
            int(section.get("max_iter", base[0].max_iter)), int(section.get("seed", base[0].seed)),
        )
    except ValueError as exc:
        raise ConfigError(f"svm: {exc}") from None
    return cfg, grid


def _synthetic(section):
    keys = ("num_classes", "patches_per_class", "textures", "size_range", "noise_sigma", "seed",
            "base_rgb", "class_names")
    _reject_unknown(section, keys, "dataset.synthetic")
    textures = []
    for i, t in enumerate(section.get("textures") or []):
        t = dict(_mapping(t, f"dataset.synthetic.textures[{i}]"))
        if "family" not in t:
            raise ConfigError(f"dataset.synthetic.textures[{i}] lacks 'family'")
        textures.append(TextureSpec(t.pop("family"), t))
    n = int(section.get("num_classes", len(textures)))
    names = section.get("class_names")
    spec = SyntheticSpec(
        n, int(section.get("patches_per_class", 30)), tuple(textures),
        size_range=tuple(int(v) for v in section.get("size_range", (150, 600))),
        noise_sigma=float(section.get("noise_sigma", 8.0)), seed=int(section.get("seed", 0)),
        base_rgb=tuple(float(v) for v in section.get("base_rgb", (150.0, 110.0, 120.0))),
        class_names=tuple(str(c) for c in names) if names else None,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"dataset.synthetic: {exc}") from None
    return spec


_PIPELINE_KEYS = ("kind", "label", "arch", "weights", "weight_seed", "layer", "layers", "size", "k",
                  "sampling", "fit_descriptors", "kmeans_iter", "em_iter", "rel_tol", "variance_floor", "svm")


def _pipeline(entry, i, sampling, svm_base, resolve):
    where = f"pipelines[{i}]"
    entry = _mapping(entry, where)
    _reject_unknown(entry, _PIPELINE_KEYS, where)
    if "kind" not in entry:
        raise ConfigError(f"{where} lacks 'kind'")
    svm_cfg, grid = _svm(_mapping(entry.get("svm"), f"{where}.svm"), svm_base)
    kw = dict(kind=str(entry["kind"]), svm=svm_cfg, c_grid=grid)
    if "label" in entry:
        kw["label"] = str(entry["label"])
    layers = None
    if kw["kind"] == "cnn":
        if "layers" in entry and "layer" in entry:
            raise ConfigError(f"{where}: give either 'layer' or 'layers'")
        layers = entry.get("layers")
        if layers is not None:
            layers = tuple(str(n) for n in layers)
            if not layers:
                raise ConfigError(f"{where}: empty 'layers'")
            if "label" in entry:
                raise ConfigError(f"{where}: 'label' cannot be combined with 'layers'")
        arch = str(entry.get("arch", ""))
        if arch.endswith(".arch") or "/" in arch:
            arch = str(resolve(arch))
        kw.update(arch=arch, layer=layers[0] if layers else entry.get("layer"),
                  weight_seed=int(entry.get("weight_seed", 0)))
        if entry.get("weights"):
            kw["weights"] = str(resolve(entry["weights"]))
    if "size" in entry:
        kw["size"] = tuple(int(v) for v in entry["size"])
    for key, conv in (("k", int), ("fit_descriptors", int), ("kmeans_iter", int), ("em_iter", int),
                      ("rel_tol", float), ("variance_floor", float)):
        if key in entry:
            kw[key] = conv(entry[key])
    kw["sampling"] = _sampling(_mapping(entry.get("sampling"), f"{where}.sampling"), sampling)
    try:
        return PipelineEntry(PipelineSpec(**kw), layers)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(doc, base_dir="."):
    """Build an :class:`ExperimentConfig` from a parsed YAML mapping."""
    doc = _mapping(doc, "config")
    _reject_unknown(doc, ("dataset", "cv", "sampling", "svm", "pipelines", "output"), "config")
    base_dir = Path(base_dir)

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else Path(os.path.normpath(base_dir / p))

    ds = _mapping(doc.get("dataset"), "dataset")
    _reject_unknown(ds, ("directory", "synthetic"), "dataset")
    directory = resolve(ds["directory"]) if ds.get("directory") else None
    synthetic = _synthetic(_mapping(ds["synthetic"], "dataset.synthetic")) if ds.get("synthetic") else None
    if directory is None and synthetic is None:
        raise ConfigError("dataset needs a 'directory' or a 'synthetic' section")

    cv = _mapping(doc.get("cv"), "cv")
    _reject_unknown(cv, ("k", "trials", "base_seed"), "cv")
    k, trials = int(cv.get("k", 10)), int(cv.get("trials", 10))
    if k < 2 or trials < 1:
        raise ConfigError("cv.k must be >= 2 and cv.trials >= 1")

    sampling = _sampling(_mapping(doc.get("sampling"), "sampling"))
    svm_base = _svm(_mapping(doc.get("svm"), "svm"), (SvmTrainConfig(), DEFAULT_C_GRID))
    raw = doc.get("pipelines")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("config needs a non-empty 'pipelines' list")
    pipelines = tuple(_pipeline(e, i, sampling, svm_base, resolve) for i, e in enumerate(raw))
    labels = [lab for p in pipelines for lab in p.labels]
    dup = {lab for lab in labels if labels.count(lab) > 1}
    if dup:
        raise ConfigError(f"duplicate pipeline label(s): {', '.join(sorted(dup))}")

    out = _mapping(doc.get("output"), "output")
    _reject_unknown(out, ("csv", "svg", "timings"), "output")
    csv_path = resolve(out.get("csv", "results.csv"))
    svg_path = resolve(out.get("svg", "results.svg"))
    paths = [csv_path.resolve(), svg_path.resolve()] + ([directory.resolve()] if directory else [])
    if len(set(paths)) != len(paths):
        raise ConfigError("output paths and dataset directory must be distinct")
    return ExperimentConfig(
        pipelines, directory, synthetic, k, trials, int(cv.get("base_seed", 0)),
        csv_path, svg_path, bool(out.get("timings", True)),
    )


def load_config(path):
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(doc, path.parent)
    return replace(cfg, source=path)
