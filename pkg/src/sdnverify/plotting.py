"""Figures and delimited tables for trained networks and verification reports.

Everything renders through the non-interactive Agg backend to files. The
region map refuses inputs that are not two-dimensional.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .linrules import DimensionError  # noqa: E402
from .rgrv import classify  # noqa: E402
from .sdn import SDNetwork  # noqa: E402

CLASS_COLORS = ["#4c78a8", "#e8e8e8", "#54a24b", "#b279a2", "#9d755d",
                "#72b7b2", "#eeca3b", "#ff9da6", "#bab0ac", "#f58518"]
FINDING_COLOR = "#f58518"


def _style(ax):
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    ax.tick_params(direction="out", length=3)


def require_2d(net: SDNetwork) -> None:
    if net.input_dim != 2:
        raise DimensionError(f"region maps need 2 input dimensions, got {net.input_dim}")


def raster(net: SDNetwork, resolution: int = 300):
    """Class and pattern number at the centres of a resolution^2 grid.

    Returns ``(xs, ys, classes, patterns)`` with label arrays indexed
    ``[iy, ix]``.
    """
    require_2d(net)
    lo, hi = net.input_bounds.lower, net.input_bounds.upper
    xs = lo[0] + (np.arange(resolution) + 0.5) * (hi[0] - lo[0]) / resolution
    ys = lo[1] + (np.arange(resolution) + 0.5) * (hi[1] - lo[1]) / resolution
    gx, gy = np.meshgrid(xs, ys)
    cls, num = classify(net, np.column_stack([gx.ravel(), gy.ravel()]))
    return xs, ys, cls.reshape(gx.shape), num.reshape(gx.shape)


def write_grid_csv(path, xs, ys, classes, patterns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x0", "x1", "class", "pattern"])
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                w.writerow([f"{x:.9g}", f"{y:.9g}", int(classes[iy, ix]), int(patterns[iy, ix])])


def emit_region_svg(net: SDNetwork, report: Optional[dict], svg_path, csv_path,
                    resolution: int = 300) -> int:
    """Region map: class colours, pattern boundaries, graph edges between
    region centres, and one orange square per finding (its limiting ball).

    Writes the raw grid to ``csv_path``. Returns the number of finding
    overlays drawn.
    """
    xs, ys, cls, num = raster(net, resolution)
    write_grid_csv(csv_path, xs, ys, cls, num)
    fig, ax = plt.subplots(figsize=(5.2, 5.0))
    n_classes = max(net.n_classes, 1)
    cmap = ListedColormap([CLASS_COLORS[k % len(CLASS_COLORS)] for k in range(n_classes)])
    lo, hi = net.input_bounds.lower, net.input_bounds.upper
    extent = (lo[0], hi[0], lo[1], hi[1])
    ax.imshow(cls, origin="lower", extent=extent, cmap=cmap, vmin=-0.5,
              vmax=n_classes - 0.5, interpolation="nearest", aspect="auto")
    # pattern boundaries: cells whose right or upper neighbour differs
    _, codes = np.unique(np.stack([cls, num.astype(np.int64)], axis=-1).reshape(-1, 2),
                         axis=0, return_inverse=True)
    codes = codes.reshape(cls.shape)
    edge = np.zeros(cls.shape, dtype=bool)
    edge[:, :-1] |= codes[:, :-1] != codes[:, 1:]
    edge[:-1, :] |= codes[:-1, :] != codes[1:, :]
    ax.imshow(np.ma.masked_where(~edge, edge), origin="lower", extent=extent,
              cmap=ListedColormap(["#333333"]), alpha=0.35, interpolation="nearest",
              aspect="auto")
    drawn = 0
    if report is not None:
        centers = {v["id"]: v.get("center") for v in report.get("vertices", [])}
        for i, j in report.get("edges", []):
            a, b = centers.get(i), centers.get(j)
            if a is not None and b is not None:
                ax.plot([a[0], b[0]], [a[1], b[1]], color="#222222", lw=0.4, alpha=0.5)
        for f in report.get("findings", []):
            c, rad = f["ball"]["center"], f["ball"]["radius"]
            ax.add_patch(Rectangle((c[0] - rad, c[1] - rad), 2 * rad, 2 * rad, fill=False,
                                   ec=FINDING_COLOR, lw=1.6))
            drawn += 1
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_xlabel("$x_0$")
    ax.set_ylabel("$x_1$")
    _style(ax)
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)
    return drawn


def write_findings_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "class", "component", "radius", "evidence", "center", "vertices"])
        for f in report.get("findings", []):
            w.writerow([f["kind"], f["class"], f["component"], f"{f['ball']['radius']:.9g}",
                        f"{f['evidence']:.9g}",
                        " ".join(f"{c:.9g}" for c in f["ball"]["center"]),
                        " ".join(str(v) for v in f["vertices"])])


def write_components_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "class", "n_vertices", "radius"])
        for c in report.get("components", []):
            ball = c.get("ball")
            w.writerow([c["id"], c["class"], len(c["vertices"]),
                        "" if ball is None else f"{ball['radius']:.9g}"])


def write_samples_csv(samples: Sequence, vertices: Sequence, path) -> None:
    """Accepted sample points of every region, one row per point."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        d = None
        for i, (s, v) in enumerate(zip(samples, vertices)):
            if d is None and s.points.size:
                d = s.points.shape[1]
                w.writerow(["vertex", "class"] + [f"x{k}" for k in range(d)])
            for p in s.points:
                w.writerow([i, v.class_label] + [f"{x:.9g}" for x in p])
        if d is None:
            w.writerow(["vertex", "class"])


def plot_training_curve(rows: Sequence[dict], path) -> None:
    """Loss, accuracy and sat-rate against epoch, from training-log rows."""
    ep = np.array([float(r["epoch"]) for r in rows])
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.0, 3.0))
    a1.plot(ep, [float(r["loss"]) for r in rows], color="#4c78a8", lw=1.2)
    a1.set_xlabel("epoch")
    a1.set_ylabel("loss")
    a2.plot(ep, [float(r["accuracy"]) for r in rows], color="#54a24b", lw=1.2, label="accuracy")
    a2.plot(ep, [float(r["sat_rate"]) for r in rows], color="#f58518", lw=1.2, label="sat-rate")
    a2.set_xlabel("epoch")
    a2.set_ylim(0, 1.02)
    a2.legend(frameon=False, fontsize=8)
    for ax in (a1, a2):
        _style(ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_image_grid(points, side: int, path, titles: Optional[Sequence[str]] = None,
                    columns: int = 10) -> None:
    """Square grayscale images (one flattened image per row of ``points``)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] and pts.shape[1] != side * side:
        raise DimensionError(f"points have {pts.shape[1]} values, expected {side * side}")
    n = max(pts.shape[0], 1)
    cols = min(columns, n)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(1.1 * cols, 1.2 * rows), squeeze=False)
    for k, ax in enumerate(axes.ravel()):
        ax.axis("off")
        if k < pts.shape[0]:
            ax.imshow(pts[k].reshape(side, side), cmap="gray", vmin=0, vmax=1,
                      interpolation="nearest")
            if titles is not None:
                ax.set_title(titles[k], fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_points_csv(points, labels, path) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class"] + [f"x{k}" for k in range(pts.shape[1])])
        for lab, p in zip(labels, pts):
            w.writerow([int(lab)] + [f"{x:.9g}" for x in p])


def render_report(net: SDNetwork, report: dict, out_dir, resolution: int = 300) -> list:
    """Write every report figure and table that applies to ``net`` into
    ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    write_findings_csv(report, out / "findings.csv")
    write_components_csv(report, out / "components.csv")
    written += [out / "findings.csv", out / "components.csv"]
    if net.input_dim == 2:
        emit_region_svg(net, report, out / "regions.svg", out / "regions.csv", resolution)
        written += [out / "regions.svg", out / "regions.csv"]
    return written
