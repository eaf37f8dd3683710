"""Cross-validation experiments over feature pipelines.

Every fold fits all data-dependent state (mean color, codebook or GMM, the
SVM parameter C and the SVM itself) on its training indices only, then
scores the held-out fold.  Features that need no fitting (resized images,
dense SIFT) are computed once per dataset and shared by all folds and
trials.
"""

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from xml.etree import ElementTree as ET

import numpy as np

from . import codebook as cbk
from . import encode
from .cnn import arch_path, check_layers, forward, load_network
from .dataset import compute_mean_rgb, resize_bilinear, subtract_mean
from .folds import FoldPlan, stratified_kfold
from .localfeat import DESC_DIM, DenseSamplingSpec, extract_dense_sift
from .rng import make_rng
from .svm import DEFAULT_C_GRID, SvmTrainConfig, predict_batch, select_C, train_ovr

__all__ = [
    "ExperimentResult", "FoldPlan", "PipelineSpec", "layer_sweep", "read_csv", "report",
    "run_cv", "run_trials", "stratified_kfold", "write_csv", "write_svg",
]

PIPELINE_KINDS = ("cnn", "raw", "bovw", "vlad", "fisher")
CODEBOOK_KINDS = ("bovw", "vlad", "fisher")
CSV_HEADER = ["pipeline", "mean_accuracy", "std_accuracy", "feature_dim", "wall_time_s"]


@dataclass(frozen=True)
class PipelineSpec:
    """One bar of a results chart: a feature source plus classifier settings.

    ``kind`` selects the source: ``cnn`` (``arch``, ``layer``, and either a
    ``weights`` file or ``weight_seed``), ``raw`` (``size`` = (w, h)), or one
    of the codebook encoders ``bovw``/``vlad``/``fisher`` with ``k`` words.
    """

    kind: str
    label: str = None
    arch: str = None
    weights: str = None
    weight_seed: int = 0
    layer: str = None
    size: tuple = (64, 64)
    k: int = 64
    sampling: DenseSamplingSpec = field(default_factory=DenseSamplingSpec)
    fit_descriptors: int = 20000
    kmeans_iter: int = 100
    em_iter: int = 100
    rel_tol: float = 1e-5
    variance_floor: float = 1e-4
    svm: SvmTrainConfig = field(default_factory=SvmTrainConfig)
    c_grid: tuple = DEFAULT_C_GRID

    def __post_init__(self):
        if self.kind not in PIPELINE_KINDS:
            raise ValueError(f"unknown pipeline kind {self.kind!r}; expected one of {PIPELINE_KINDS}")
        if self.kind == "cnn" and (not self.arch or not self.layer):
            raise ValueError("cnn pipelines need 'arch' and 'layer'")
        if self.kind in CODEBOOK_KINDS and self.k < 1:
            raise ValueError("codebook size k must be >= 1")
        if self.kind == "raw" and min(self.size) < 8:
            raise ValueError("raw-pixel size must be at least 8x8")
        if not self.c_grid:
            raise ValueError("empty C grid")

    @property
    def name(self):
        if self.label:
            return self.label
        if self.kind == "cnn":
            return f"{Path(self.arch).stem}:{self.layer}"
        if self.kind == "raw":
            return f"raw{self.size[0]}x{self.size[1]}"
        return f"{self.kind}{self.k}"


@dataclass
class ExperimentResult:
    """Mean/std accuracy of one pipeline over folds (or over trials)."""

    pipeline: str
    mean_accuracy: float
    std_accuracy: float
    feature_dim: int
    unit_accuracies: tuple
    wall_time: float = 0.0
    protocol: str = "single-trial"
    seeds: tuple = ()
    std_defined: bool = True
    fold_fits: list = field(default=None, repr=False)


def summarize(accuracies):
    """Mean and sample standard deviation (divisor n - 1; 0 for one value)."""
    a = np.asarray(accuracies, dtype=np.float64)
    mean = float(a.mean())
    std = float(a.std(ddof=1)) if len(a) > 1 else 0.0
    return mean, std


def _resolve_arch(arch):
    p = Path(arch)
    return p if p.suffix == ".arch" or p.exists() else arch_path(arch)


class _CnnSource:
    """Preprocessed layer activations; the mean color is fitted per fold."""

    def __init__(self, dataset, arch, weights, weight_seed, layers):
        self.graph, self.weights = load_network(_resolve_arch(arch), weights, seed=weight_seed)
        check_layers(self.graph, layers)
        self.layers = list(dict.fromkeys(layers))
        c, h, w = self.graph.input_shape
        if c != 3:
            raise ValueError(f"network expects {c} input channels; patches are RGB")
        self.size = (w, h)
        self.resized = [resize_bilinear(p, w, h) for p in dataset.patches]

    def dims(self):
        return {name: self.graph.feature_dim(name) for name in self.layers}

    def fold_features(self, train_idx, seed):
        mean = compute_mean_rgb([self.resized[i] for i in train_idx], *self.size)
        feats = {name: [] for name in self.layers}
        for p in self.resized:
            acts = forward(self.graph, self.weights, subtract_mean(p.pixels, mean), outputs=self.layers)
            for name in self.layers:
                feats[name].append(acts[name].ravel())
        fits = {"mean_rgb": mean}
        return {name: np.stack(v) for name, v in feats.items()}, fits


class _RawSource:
    def __init__(self, dataset, size):
        self.size = tuple(size)
        self.resized = [resize_bilinear(p, *self.size) for p in dataset.patches]
        self.layers = ["raw"]

    def dims(self):
        return {"raw": 3 * self.size[0] * self.size[1]}

    def fold_features(self, train_idx, seed):
        mean = compute_mean_rgb([self.resized[i] for i in train_idx], *self.size)
        x = np.stack([subtract_mean(p.pixels, mean).ravel() for p in self.resized])
        return {"raw": x}, {"mean_rgb": mean}


class _CodebookSource:
    """Dense SIFT once per dataset; codebook/GMM refitted on each training split."""

    def __init__(self, dataset, spec):
        self.spec = spec
        self.layers = [spec.kind]
        self.descriptors = [extract_dense_sift(p, spec.sampling).vectors for p in dataset.patches]

    def dims(self):
        k = self.spec.k
        return {self.spec.kind: {"bovw": k, "vlad": k * DESC_DIM, "fisher": 2 * k * DESC_DIM}[self.spec.kind]}

    def _training_sample(self, train_idx, seed):
        pool = np.concatenate([self.descriptors[i] for i in train_idx])
        if len(pool) > self.spec.fit_descriptors:
            pick = np.sort(make_rng(seed, 1).choice(len(pool), self.spec.fit_descriptors, replace=False))
            pool = pool[pick]
        return pool

    def fold_features(self, train_idx, seed):
        s = self.spec
        sample = self._training_sample(train_idx, seed)
        if s.kind == "fisher":
            model = cbk.gmm_fit_em(sample, s.k, seed=seed, max_iter=s.em_iter, rel_tol=s.rel_tol,
                                   variance_floor=s.variance_floor, init_iter=s.kmeans_iter)
            enc = encode.encode_fisher
        else:
            model = cbk.kmeans_fit(sample, s.k, seed=seed, max_iter=s.kmeans_iter, rel_tol=s.rel_tol)
            enc = encode.encode_bovw if s.kind == "bovw" else encode.encode_vlad
        x = np.stack([enc(model, d).values for d in self.descriptors])
        return {s.kind: x}, {"model": model}


def _make_source(pipeline, dataset, layers=None):
    if pipeline.kind == "cnn":
        return _CnnSource(dataset, pipeline.arch, pipeline.weights, pipeline.weight_seed, layers or [pipeline.layer])
    if pipeline.kind == "raw":
        return _RawSource(dataset, pipeline.size)
    return _CodebookSource(dataset, pipeline)


def _run_fold(source, pipeline, labels, train_idx, test_idx, fold_seed, keep_fits):
    feats, fits = source.fold_features(train_idx, fold_seed)
    out = {}
    for name, x in feats.items():
        xtr, ytr = x[train_idx], labels[train_idx]
        C = select_C(xtr, ytr, pipeline.c_grid, seed=fold_seed, config=pipeline.svm)
        model = train_ovr(xtr, ytr, replace(pipeline.svm, C=C))
        acc = float(np.mean(predict_batch(model, x[test_idx]) == labels[test_idx]))
        fit = None
        if keep_fits:
            fit = dict(fits, C=C, svm=model, train_indices=np.asarray(train_idx))
        out[name] = (acc, fit)
    return out


def _cv(source, pipeline, dataset, k, seed, keep_fits=False, jobs=1):
    """Per-fold accuracies for every layer the source produces."""
    labels = dataset.labels
    plan = stratified_kfold(labels, k, seed, dataset.class_names)
    splits = list(plan.splits())

    def one(f):
        tr, te = splits[f]
        return _run_fold(source, pipeline, labels, tr, te, _fold_seed(seed, f), keep_fits)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            per_fold = list(ex.map(one, range(k)))
    else:
        per_fold = [one(f) for f in range(k)]
    return per_fold, plan


def _fold_seed(seed, fold):
    return int(make_rng(seed, 7919, fold).integers(0, 2**63))


def run_cv(pipeline, dataset, k=10, seed=0, keep_fits=False, jobs=1, _source=None):
    """Stratified ``k``-fold CV of one pipeline with inner 3-fold C selection."""
    t0 = time.perf_counter()
    source = _source or _make_source(pipeline, dataset)
    name = source.layers[0]
    per_fold, _ = _cv(source, pipeline, dataset, k, seed, keep_fits, jobs)
    accs = [pf[name][0] for pf in per_fold]
    mean, std = summarize(accs)
    return ExperimentResult(
        pipeline.name, mean, std, source.dims()[name], tuple(accs),
        wall_time=time.perf_counter() - t0, protocol="single-trial", seeds=(seed,),
        fold_fits=[pf[name][1] for pf in per_fold] if keep_fits else None,
    )


def run_trials(pipeline, dataset, trials=10, k=10, base_seed=0, jobs=1):
    """``trials`` repetitions of :func:`run_cv` with seeds ``base_seed + t``.

    Mean and std are taken over the per-trial mean accuracies.  With one
    trial the std is reported as 0 and ``std_defined`` is False.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    t0 = time.perf_counter()
    source = _make_source(pipeline, dataset)
    seeds = tuple(base_seed + t for t in range(trials))
    means = [run_cv(pipeline, dataset, k, s, jobs=jobs, _source=source).mean_accuracy for s in seeds]
    mean, std = summarize(means)
    return ExperimentResult(
        pipeline.name, mean, std, source.dims()[source.layers[0]], tuple(means),
        wall_time=time.perf_counter() - t0, protocol=f"{trials}-trial", seeds=seeds,
        std_defined=trials > 1,
    )


def layer_sweep(arch, weights, layer_names, dataset, k=10, seed=0, weight_seed=0, pipeline=None, jobs=1):
    """One single-trial CV result per requested layer, in request order.

    All layers share the fold split and one forward pass per image per
    fold.  Unknown layer names fail before any computation.
    """
    base = pipeline or PipelineSpec("cnn", arch=str(arch), layer=layer_names[0])
    base = replace(base, kind="cnn", arch=str(arch), weights=weights, weight_seed=weight_seed)
    t0 = time.perf_counter()
    source = _CnnSource(dataset, base.arch, base.weights, base.weight_seed, layer_names)
    per_fold, _ = _cv(source, base, dataset, k, seed, jobs=jobs)
    elapsed = time.perf_counter() - t0
    dims = source.dims()
    results = []
    for name in layer_names:
        accs = [pf[name][0] for pf in per_fold]
        mean, std = summarize(accs)
        label = f"{Path(base.arch).stem}:{name}"
        results.append(ExperimentResult(label, mean, std, dims[name], tuple(accs),
                                        wall_time=elapsed, protocol="single-trial", seeds=(seed,)))
    return results


def write_csv(results, path, timings=True, metadata=None):
    """CSV report; ``#``-prefixed metadata rows come first.

    With ``timings=False`` the wall-time column is written as ``nan`` so
    that repeated runs produce byte-identical files.
    """
    if not results:
        raise ValueError("no results to report")
    path = Path(path)
    with open(path, "w", newline="") as f:
        for key, val in (metadata or {}).items():
            f.write(f"# {key}: {val}\n")
        for r in results:
            f.write(f"# {r.pipeline}: protocol={r.protocol} seeds={','.join(map(str, r.seeds))}"
                    f"{'' if r.std_defined else ' std=undefined'}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in results:
            t = f"{r.wall_time:.6f}" if timings else "nan"
            w.writerow([r.pipeline, f"{r.mean_accuracy:.6f}", f"{r.std_accuracy:.6f}", r.feature_dim, t])


def read_csv(path):
    """Parse a CSV written by :func:`write_csv` back into results."""
    rows = []
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    for row in reader:
        rows.append(ExperimentResult(
            row["pipeline"], float(row["mean_accuracy"]), float(row["std_accuracy"]),
            int(row["feature_dim"]), (), wall_time=float(row["wall_time_s"]),
        ))
    return rows


def write_svg(results, path, title="Recognition accuracy"):
    """Bar chart of mean accuracy with std error bars and a log-scale dimension line."""
    if not results:
        raise ValueError("no results to report")
    n = len(results)
    left, right, top, bottom = 70, 80, 40, 150
    bar_w = 36
    plot_w = max(n * bar_w * 1.6, 200)
    plot_h = 260
    width, height = left + plot_w + right, top + plot_h + bottom
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=f"{width:.0f}", height=f"{height:.0f}",
                     viewBox=f"0 0 {width:.0f} {height:.0f}", **{"font-family": "sans-serif", "font-size": "11"})
    ET.SubElement(svg, "text", x=f"{width / 2:.1f}", y="20", **{"text-anchor": "middle", "font-size": "14"}).text = title

    def y_acc(a):
        return top + plot_h * (1.0 - a)

    dims = [max(r.feature_dim, 1) for r in results]
    lo, hi = math.floor(math.log10(min(dims))), math.ceil(math.log10(max(dims)))
    if hi == lo:
        hi += 1

    def y_dim(d):
        return top + plot_h * (1.0 - (math.log10(d) - lo) / (hi - lo))

    axes = ET.SubElement(svg, "g", id="axes", stroke="black")
    ET.SubElement(axes, "line", x1=str(left), y1=str(top), x2=str(left), y2=str(top + plot_h))
    ET.SubElement(axes, "line", x1=str(left), y1=str(top + plot_h), x2=f"{left + plot_w}", y2=str(top + plot_h))
    ET.SubElement(axes, "line", x1=f"{left + plot_w}", y1=str(top), x2=f"{left + plot_w}", y2=str(top + plot_h))
    labels = ET.SubElement(svg, "g", id="tick-labels")
    for i in range(6):
        a = i / 5
        ET.SubElement(labels, "text", x=str(left - 6), y=f"{y_acc(a) + 4:.1f}", **{"text-anchor": "end"}).text = f"{a:.1f}"
    for e in range(lo, hi + 1):
        ET.SubElement(labels, "text", x=f"{left + plot_w + 6}", y=f"{y_dim(10 ** e) + 4:.1f}").text = f"1e{e}"
    ET.SubElement(labels, "text", x="16", y=f"{top + plot_h / 2:.1f}",
                  transform=f"rotate(-90 16 {top + plot_h / 2:.1f})", **{"text-anchor": "middle"}).text = "mean accuracy"
    ET.SubElement(labels, "text", x=f"{width - 14:.1f}", y=f"{top + plot_h / 2:.1f}",
                  transform=f"rotate(90 {width - 14:.1f} {top + plot_h / 2:.1f})",
                  **{"text-anchor": "middle"}).text = "feature dimension (log)"

    bars = ET.SubElement(svg, "g", id="bars")
    errs = ET.SubElement(svg, "g", id="error-bars", stroke="black")
    pts = []
    step = plot_w / n
    for i, r in enumerate(results):
        cx = left + step * (i + 0.5)
        rect = ET.SubElement(bars, "rect", {"class": "bar", "x": f"{cx - bar_w / 2:.1f}",
                                            "y": f"{y_acc(r.mean_accuracy):.1f}", "width": str(bar_w),
                                            "height": f"{plot_h * r.mean_accuracy:.1f}", "fill": "#4c78a8"})
        ET.SubElement(rect, "title").text = (f"{r.pipeline}: {r.mean_accuracy:.3f} +/- {r.std_accuracy:.3f}"
                                             f" (dim {r.feature_dim})")
        lo_a = max(r.mean_accuracy - r.std_accuracy, 0.0)
        hi_a = min(r.mean_accuracy + r.std_accuracy, 1.0)
        ET.SubElement(errs, "line", x1=f"{cx:.1f}", y1=f"{y_acc(lo_a):.1f}", x2=f"{cx:.1f}", y2=f"{y_acc(hi_a):.1f}")
        ET.SubElement(labels, "text", x=f"{cx:.1f}", y=f"{top + plot_h + 12}",
                      transform=f"rotate(45 {cx:.1f} {top + plot_h + 12})").text = r.pipeline
        pts.append(f"{cx:.1f},{y_dim(max(r.feature_dim, 1)):.1f}")
    ET.SubElement(svg, "polyline", {"class": "dimension", "points": " ".join(pts), "fill": "none",
                                    "stroke": "black", "stroke-width": "2"})
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)


def report(results, csv_path, svg_path, timings=True, metadata=None):
    """Write the CSV table and the SVG chart for ``results``."""
    write_csv(results, csv_path, timings=timings, metadata=metadata)
    write_svg(results, svg_path)
