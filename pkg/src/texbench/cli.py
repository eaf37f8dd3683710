"""Command-line front end: ``texbench {generate,run,inspect,report}``.

Exit status is 0 on success, 1 when a pipeline fails (the message names
it) and 2 for usage or configuration errors.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .cnn import check_layers, load_arch
from .config import ConfigError, load_config
from .dataset import IMAGE_SUFFIXES, generate_synthetic, load_dataset, save_dataset
from .harness import _resolve_arch, layer_sweep, read_csv, report, run_cv, run_trials, write_svg

MANIFEST = "manifest.json"


class PipelineError(RuntimeError):
    def __init__(self, label, cause):
        super().__init__(f"{label}: {cause}")
        self.label = label


def _has_images(directory):
    return directory is not None and directory.is_dir() and any(
        f.suffix.lower() in IMAGE_SUFFIXES for f in directory.rglob("*"))


def experiment_dataset(config):
    """The configured dataset: images on disk if present, else the synthetic spec rendered in memory."""
    if _has_images(config.dataset_dir):
        return load_dataset(config.dataset_dir)
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic)
    raise ConfigError(f"dataset directory {config.dataset_dir} holds no images and no synthetic spec is given")


def cmd_generate(config):
    """Render the synthetic dataset into ``dataset.directory`` with a manifest; returns the directory."""
    if config.synthetic is None:
        raise ConfigError("generate needs a dataset.synthetic section")
    if config.dataset_dir is None:
        raise ConfigError("generate needs dataset.directory")
    spec = config.synthetic
    root = config.dataset_dir
    paths = save_dataset(generate_synthetic(spec), root)
    files = {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest() for p in paths}
    manifest = {
        "seed": spec.seed,
        "num_classes": spec.num_classes,
        "patches_per_class": spec.patches_per_class,
        "size_range": list(spec.size_range),
        "noise_sigma": spec.noise_sigma,
        "base_rgb": list(spec.base_rgb),
        "textures": [{"family": t.family, **t.params} for t in spec.textures],
        "files": dict(sorted(files.items())),
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def _validate(config):
    # cheap checks that must fail before any training starts
    for entry in config.pipelines:
        spec = entry.spec
        if spec.kind != "cnn":
            continue
        label = entry.labels[0]
        try:
            graph = load_arch(_resolve_arch(spec.arch))
            check_layers(graph, entry.layers or [spec.layer])
            if spec.weights and not Path(spec.weights).is_file():
                raise FileNotFoundError(f"weights file {spec.weights} not found")
        except Exception as exc:
            raise PipelineError(label, exc) from exc


def cmd_run(config, jobs=1, log=None):
    """Run every configured pipeline in order and write the CSV and SVG; returns the results."""
    log = log or (lambda msg: None)
    _validate(config)
    dataset = experiment_dataset(config)
    results = []
    for entry in config.pipelines:
        spec = entry.spec
        try:
            if entry.layers:
                res = layer_sweep(spec.arch, spec.weights, list(entry.layers), dataset, config.k,
                                  config.base_seed, spec.weight_seed, pipeline=spec, jobs=jobs)
            elif entry.protocol == "trials":
                res = [run_trials(spec, dataset, config.trials, config.k, config.base_seed, jobs=jobs)]
            else:
                res = [run_cv(spec, dataset, config.k, config.base_seed, jobs=jobs)]
        except Exception as exc:
            raise PipelineError(entry.labels[0], exc) from exc
        for r in res:
            log(f"{r.pipeline}: {r.mean_accuracy:.4f} +/- {r.std_accuracy:.4f} (dim {r.feature_dim}, "
                f"{r.protocol}, {r.wall_time:.1f}s)")
        results.extend(res)
    config.csv_path.parent.mkdir(parents=True, exist_ok=True)
    config.svg_path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"dataset": len(dataset), "classes": ",".join(dataset.class_names), "k": config.k,
            "trials": config.trials, "base_seed": config.base_seed}
    if config.synthetic is not None and not _has_images(config.dataset_dir):
        meta["synthetic_seed"] = config.synthetic.seed
    report(results, config.csv_path, config.svg_path, timings=config.timings, metadata=meta)
    return results


def cmd_inspect(arch, out=None):
    """Print one row per node: name, kind, output shape and flattened dim.  Returns the rows."""
    out = out or sys.stdout
    graph = load_arch(_resolve_arch(arch))
    rows = [(n.name, n.kind, graph.shapes[n.name], graph.feature_dim(n.name)) for n in graph.nodes]
    width = max(len(r[0]) for r in rows)
    print(f"{'name':<{width}}  {'kind':<8}  {'shape':<16}  dim", file=out)
    for name, kind, shape, dim in rows:
        print(f"{name:<{width}}  {kind:<8}  {'x'.join(map(str, shape)):<16}  {dim}", file=out)
    return rows


def cmd_report(config):
    """Redraw the SVG chart from the CSV written by a previous run."""
    results = read_csv(config.csv_path)
    write_svg(results, config.svg_path)
    return results


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--jobs", type=int, default=1, help="parallel folds (default 1)")
    common.add_argument("--seed", type=int, help="override cv.base_seed")
    p = argparse.ArgumentParser(prog="texbench", description="Texture feature benchmark.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="render the synthetic dataset to disk")
    sub.add_parser("run", parents=[common], help="run all pipelines and write CSV + SVG")
    ins = sub.add_parser("inspect", parents=[common], help="print the layer table of an arch")
    ins.add_argument("arch", help="shipped arch name or .arch path")
    sub.add_parser("report", parents=[common], help="redraw the SVG from the CSV")
    return p


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        if args.command == "inspect":
            cmd_inspect(args.arch)
            return 0
        if args.config is None:
            parser.error(f"{args.command} requires --config")
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        if args.command == "generate":
            print(cmd_generate(config))
        elif args.command == "run":
            cmd_run(config, jobs=args.jobs, log=print)
            print(f"wrote {config.csv_path} and {config.svg_path}")
        else:
            cmd_report(config)
            print(f"wrote {config.svg_path}")
    except PipelineError as exc:
        print(f"texbench: pipeline {exc}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError) as exc:
        print(f"texbench: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
