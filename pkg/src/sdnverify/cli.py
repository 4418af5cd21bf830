"""Command-line entry point: ``sdnverify <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence or
an exhausted verification budget.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DataFormatError, Dataset, Synth2DConfig, default_mnist_dir,
                   gen_synth2d, load_dataset, load_mnist, save_dataset)
from .linrules import DimensionError
from .rgrv import Budgets, discover_populated_regions, extract_adversarial_examples, \
    verify_global
from .rulemap import ActivationPattern, enumerate_layer_patterns, region_rules, save_rules
from .sdn import (SDNetwork, TrainConfig, TrainingDivergence, accuracy, parse_arch, predict,
                  sat_rate, train, write_training_log)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3

log = logging.getLogger("sdnverify")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _load_data(spec: str, split: str, side: int, mnist_dir) -> Dataset:
    """``mnist`` (IDX files) or the stem of a cached dataset."""
    if spec == "mnist":
        directory = Path(mnist_dir) if mnist_dir else default_mnist_dir()
        if directory is None:
            raise FileNotFoundError("MNIST IDX files not found; pass --mnist-dir "
                                    "or run scripts/fetch_mnist.py")
        return load_mnist(directory, split, side)
    return load_dataset(spec)


def _budgets(args) -> Budgets:
    return Budgets(discover=args.budget_discover, region_samples=args.budget_region_samples,
                   ball_samples=args.budget_ball_samples, probes=args.budget_probes,
                   max_regions=args.budget_max_regions,
                   max_new_vertices=args.budget_new_vertices)


# -- subcommands ------------------------------------------------------------------

def cmd_synth2d(args) -> int:
    cfg = Synth2DConfig(n_points=args.n_points, blob_points=args.blob_points,
                        blob_radius=args.blob_radius, label_noise=args.noise_rate > 0,
                        noise_rate=args.noise_rate, seed=args.seed)
    ds = gen_synth2d(cfg)
    ds.meta.update({"config": _config(args), "version": __version__})
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} points to {args.out}.bin/.json "
          f"(class counts {np.bincount(ds.labels).tolist()})")
    return EXIT_OK


def cmd_train(args) -> int:
    counts, sizes = parse_arch(args.arch)
    tr = _load_data(args.data, "train", args.side, args.mnist_dir)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
                         lam=args.lam, loss_kind=args.loss, seed=args.seed)
    try:
        net, history = train(config, tr.inputs, tr.labels, counts, sizes, args.alpha,
                             n_classes=args.classes or None, input_bounds=tr.input_bounds)
    except TrainingDivergence as exc:
        print(f"training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    net.meta["config"] = _config(args)
    net.meta["data"] = tr.meta
    ev = tr
    if args.data == "mnist":
        ev = _load_data(args.data, "test", args.side, args.mnist_dir)
    acc, sat = accuracy(net, ev.inputs, ev.labels), sat_rate(net, ev.inputs)
    net.meta["evaluation"] = {"split": ev.split, "accuracy": acc, "sat_rate": sat}
    net.save(args.out)
    if args.log:
        write_training_log(history, args.log)
    print(f"{ev.split} accuracy {acc:.4f} sat-rate {sat:.4f}; model written to {args.out}")
    return EXIT_OK


def cmd_rules(args) -> int:
    net = SDNetwork.load(args.model)
    X = None
    if args.data:
        X = _load_data(args.data, "train", args.side, args.mnist_dir).inputs
    regions, truncated = discover_populated_regions(
        net, X, args.budget_discover, np.random.default_rng([args.seed, 0]),
        args.budget_max_regions)
    per_layer = [len(enumerate_layer_patterns(m)) for m in net.group_counts]
    meta = {"tool": "sdnverify", "version": __version__, "config": _config(args),
            "patterns_per_layer": per_layer,
            "patterns_per_class": int(np.prod(per_layer, dtype=object)),
            "populated": len(regions), "incomplete": truncated}
    save_rules(regions, args.out, meta)
    print(f"{len(regions)} populated regions out of {meta['patterns_per_class']} "
          f"patterns per class; rules written to {args.out}")
    return EXIT_BUDGET if truncated else EXIT_OK


def cmd_verify(args) -> int:
    net = SDNetwork.load(args.model)
    X = None
    if args.data:
        X = _load_data(args.data, "train", args.side, args.mnist_dir).inputs
    rep = verify_global(net, args.R, args.r, X, _budgets(args), args.seed, args.threads)
    out = rep.to_json({"config": _config(args)})
    _write_json(out, args.out)
    print(f"{rep.verdict}: {len(rep.findings)} findings, {len(rep.graph.vertices)} regions, "
          f"{len(rep.graph.edges)} edges, components per class {rep.component_counts()}")
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.figures:
        from .plotting import render_report, write_samples_csv
        paths = render_report(net, out, args.figures, args.resolution)
        write_samples_csv(rep.samples, rep.graph.vertices, Path(args.figures) / "samples.csv")
        print(f"figures: {', '.join(str(p) for p in paths)}")
    if rep.incomplete:
        print("verification incomplete: a budget was exhausted", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def _region_from_report(net: SDNetwork, report: dict, region: str, klass):
    """A vertex id from the report, or a door notation like [[4,10],[1,3]]
    together with --class."""
    if region.strip().lstrip("-").isdigit():
        vid = int(region)
        verts = report["vertices"]
        if not 0 <= vid < len(verts):
            raise UsageError(f"region id {vid} not in report (0..{len(verts) - 1})")
        v = verts[vid]
        return region_rules(net, v["class"], ActivationPattern.from_json(v["pattern"]))
    if klass is None:
        raise UsageError("a door-notation region also needs --class")
    pattern = ActivationPattern.from_list_notation(region)
    pattern.validate(net.group_counts)
    return region_rules(net, klass, pattern)


def cmd_attack(args) -> int:
    net = SDNetwork.load(args.model)
    report = json.loads(Path(args.report).read_text()) if args.report else {"vertices": []}
    region = _region_from_report(net, report, args.region, args.klass)
    pts = extract_adversarial_examples(net, region, args.count, args.seed)
    labels = predict(net, pts) if len(pts) else np.empty(0, dtype=int)
    from .plotting import plot_image_grid, write_points_csv
    write_points_csv(pts.reshape(len(pts), net.input_dim), labels, args.out)
    if args.image and len(pts):
        side = int(round(np.sqrt(net.input_dim)))
        plot_image_grid(pts, side, args.image, [f"class {k}" for k in labels])
    print(f"{len(pts)} of {args.count} points from region {region.pattern.list_notation()} "
          f"(class {region.class_label}) written to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .plotting import plot_training_curve, render_report
    net = SDNetwork.load(args.model)
    report = json.loads(Path(args.report).read_text())
    paths = render_report(net, report, args.out_dir, args.resolution)
    if args.log:
        with open(args.log) as fh:
            rows = list(csv.DictReader(fh))
        plot_training_curve(rows, Path(args.out_dir) / "training.svg")
        paths.append(Path(args.out_dir) / "training.svg")
    print(f"{report['verdict']}: {len(report['findings'])} findings; "
          f"class components {report['class_component_counts']}")
    for p in paths:
        print(p)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _count(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _arch(text):
    try:
        parse_arch(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return text


def _add_data(p, required=False):
    p.add_argument("--data", required=required,
                   help="'mnist' or the stem of a dataset written by synth2d")
    p.add_argument("--mnist-dir", help="directory holding the MNIST IDX files")
    p.add_argument("--side", type=int, default=28, help="downscale MNIST to side x side")


def _add_budgets(p):
    d = Budgets()
    p.add_argument("--budget-discover", type=_count, default=d.discover,
                   help="uniform samples added to the data points for region discovery")
    p.add_argument("--budget-region-samples", type=_count, default=d.region_samples)
    p.add_argument("--budget-ball-samples", type=_count, default=d.ball_samples)
    p.add_argument("--budget-probes", type=_count, default=d.probes)
    p.add_argument("--budget-max-regions", type=_count, default=None)
    p.add_argument("--budget-new-vertices", type=_count, default=d.max_new_vertices)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sdnverify", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sdnverify {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth2d", help="generate the planted-noise 2D dataset")
    p.add_argument("--out", required=True, help="output stem (.bin and .json are added)")
    p.add_argument("--n-points", type=_count, default=2000)
    p.add_argument("--blob-points", type=_count, default=150)
    p.add_argument("--blob-radius", type=float, default=0.08)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth2d)

    p = sub.add_parser("train", help="train a sliding-door network")
    _add_data(p, required=True)
    p.add_argument("--arch", type=_arch, required=True,
                   help="<groups>x<group size>[,<groups>x<group size>...], e.g. 16x4,12x2")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--epochs", type=_count, default=1500)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lam", type=float, default=0.01, help="door penalty weight")
    p.add_argument("--loss", choices=["cross_entropy", "squared_error"], default="cross_entropy")
    p.add_argument("--classes", type=int, default=0, help="class count (default: from labels)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--log", help="per-epoch CSV log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rules", help="map populated regions to input-space rules")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--budget-discover", type=_count, default=Budgets().discover)
    p.add_argument("--budget-max-regions", type=_count, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("verify", help="region-based global robustness verification")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--R", type=float, default=0.04, help="small-component radius threshold")
    p.add_argument("--r", type=float, default=0.2, help="protrusion fraction threshold")
    _add_budgets(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--figures", help="directory for figures and CSV tables")
    p.add_argument("--resolution", type=int, default=300)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="sample adversarial examples from a region")
    p.add_argument("--model", required=True)
    p.add_argument("--report", help="report JSON (needed for numeric region ids)")
    p.add_argument("--region", required=True,
                   help="vertex id from the report, or door notation [[act...],[inact...]]")
    p.add_argument("--class", dest="klass", type=int)
    p.add_argument("--count", type=_count, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="points CSV")
    p.add_argument("--image", help="image grid for square image inputs")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="render figures and tables from a report")
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--log", help="training log CSV to plot")
    p.add_argument("--resolution", type=int, default=300)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DimensionError) as exc:
        print(f"sdnverify: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataFormatError, json.JSONDecodeError, KeyError) as exc:
        print(f"sdnverify: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"sdnverify: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
