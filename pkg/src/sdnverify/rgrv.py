"""Region-based global robustness verification.

Pipeline: discover populated (class, pattern) regions by sampling, derive
their rules, estimate each region by rejection sampling in its bounding box,
link regions that share a boundary, group same-class regions into connected
components, and flag small isolated components and protruding regions using
limiting balls (L-infinity balls around the estimated centre of gravity).
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import __version__
from .linrules import Box
from .rulemap import (ActivationPattern, Region, pattern_from_number,
                      pattern_numbers, region_rules)
from .sdn import SDNetwork, forward_batch

log = logging.getLogger(__name__)

SMALL_ISOLATED = "small_isolated"
PROTRUDING = "protruding"

_CHUNK = 65536


@dataclass
class Budgets:
    discover: int = 4096          # uniform samples added to the dataset points
    region_samples: int = 4096    # rejection draws per region
    ball_samples: int = 4096      # draws per limiting ball for protrusion checks
    probes: int = 64              # boundary points per explicit inequality
    chords: int = 2               # chords walked along each boundary face
    chord_points: int = 1024      # uniform points per chord
    max_regions: Optional[int] = None
    max_new_vertices: int = 10000


def classify(net: SDNetwork, X) -> tuple[np.ndarray, np.ndarray]:
    """``(predicted class, pattern number)`` for each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cls = np.empty(X.shape[0], dtype=np.int64)
    keys = []
    for s in range(0, X.shape[0], _CHUNK):
        tr = forward_batch(net, X[s:s + _CHUNK])
        cls[s:s + _CHUNK] = tr.predictions
        keys.append(pattern_numbers(tr.doors, net.group_counts))
    num = np.concatenate(keys) if keys else np.empty(0, dtype=np.int64)
    return cls, num


def membership(net: SDNetwork, region: Region, X) -> np.ndarray:
    """Forward-pass membership: same class and same activation pattern."""
    cls, num = classify(net, X)
    return (cls == region.class_label) & (num == region.key.number)


# -- step 1: vertices --------------------------------------------------------

def discover_populated_regions(net: SDNetwork, X=None, n: int = 4096,
                               rng: Optional[np.random.Generator] = None,
                               max_regions: Optional[int] = None,
                               keep_witnesses: int = 16):
    """Regions realized by the dataset points plus ``n`` uniform samples.

    Returns regions sorted by ``(class, pattern number)``; each carries up
    to ``keep_witnesses`` of the points that realized it. A truncated list
    (``max_regions``) is signalled by the second return value.
    """
    if n < 1:
        raise ValueError("discovery needs at least one uniform sample")
    rng = rng or np.random.default_rng(0)
    pts = [net.input_bounds.sample(rng, n)]
    if X is not None and len(X):
        pts.insert(0, np.asarray(X, dtype=np.float64))
    pts = np.concatenate(pts)
    cls, num = classify(net, pts)
    order = np.lexsort((np.arange(len(cls)), num, cls)) if num.dtype != object else \
        np.array(sorted(range(len(cls)), key=lambda i: (cls[i], num[i], i)))
    regions = []
    start = 0
    while start < len(order):
        i0 = order[start]
        stop = start
        while stop < len(order) and cls[order[stop]] == cls[i0] and num[order[stop]] == num[i0]:
            stop += 1
        pattern = pattern_from_number(int(num[i0]), net.group_counts)
        reg = region_rules(net, int(cls[i0]), pattern)
        reg.populated = True
        reg.witnesses = pts[order[start:min(stop, start + keep_witnesses)]]
        regions.append(reg)
        start = stop
    truncated = max_regions is not None and len(regions) > max_regions
    if truncated:
        regions = regions[:max_regions]
    return regions, truncated


# -- sampling -------------------------------------------------------------------

@dataclass
class RegionSample:
    points: np.ndarray
    draws: int
    box_volume: float

    @property
    def accepted(self) -> int:
        return self.points.shape[0]

    @property
    def ratio(self) -> float:
        return self.accepted / self.draws if self.draws else 0.0

    @property
    def volume(self) -> float:
        return self.ratio * self.box_volume

    @property
    def thin(self) -> bool:
        return self.accepted == 0

    def ratio_sigma(self) -> float:
        p = self.ratio
        return float(np.sqrt(p * (1 - p) / self.draws)) if self.draws else float("inf")


def rejection_sample(box: Box, member, n: int, rng: np.random.Generator) -> RegionSample:
    """Uniform draws in ``box`` filtered by the ``member`` predicate."""
    draws = box.sample(rng, n)
    return RegionSample(draws[member(draws)], n, box.volume)


def sample_region(net: SDNetwork, region: Region, n: int,
                  rng: np.random.Generator, debug: bool = False) -> RegionSample:
    if region.box is None or region.box.is_empty:
        return RegionSample(np.empty((0, net.input_dim)), n, 0.0)
    res = rejection_sample(region.box, lambda P: membership(net, region, P), n, rng)
    if debug and res.accepted:
        assert region.explicit_rules.holds(res.points).all(), "explicit rules violated"
    if res.thin:
        log.warning("region %s of class %d is thin: no acceptances in %d draws",
                    region.pattern, region.class_label, n)
    return res


# -- step 1: edges -------------------------------------------------------------

def probe_epsilon(net: SDNetwork) -> float:
    return 1e-6 * net.input_bounds.diameter


def _boundary_terms(region: Region):
    terms = []
    seen = set()
    for t in region.explicit_rules:
        if t.is_degenerate:
            continue
        norm = np.linalg.norm(t.coeffs)
        key = tuple(np.round(np.append(t.coeffs, t.offset) / norm, 12))
        if key in seen:
            continue
        seen.add(key)
        terms.append(t)
    return terms


def _term_geometry(region: Region):
    """Stacked boundary hyperplanes of ``region`` with unit normals and a
    mask of coincident pairs (same hyperplane under either orientation)."""
    terms = _boundary_terms(region)
    if not terms:
        return None
    C = np.stack([t.coeffs for t in terms])
    b = np.array([t.offset for t in terms])
    norms = np.linalg.norm(C, axis=1)
    unit = C / norms[:, None]
    hyper = np.column_stack([unit, b / norms])
    same = ((np.abs(hyper[:, None, :] - hyper[None, :, :]).max(axis=2) < 1e-12)
            | (np.abs(hyper[:, None, :] + hyper[None, :, :]).max(axis=2) < 1e-12))
    return C, b, norms, unit, same


def boundary_probe_points(region: Region, interior, probes: int, rng, eps: float,
                          domain: Box, which: Optional[Sequence[int]] = None):
    """Points straddling each explicit boundary of ``region``.

    Candidate feet on each boundary hyperplane come from orthogonal
    projections of interior points and of uniform draws in the region's box
    (``probes`` of each). A foot is kept only if it lies in ``domain`` and
    at least ``2*eps`` away from every other boundary. Returns ``(term
    index, foot, inside, outside)`` arrays.
    """
    interior = np.atleast_2d(interior)
    d = domain.dim
    geo = _term_geometry(region)
    if geo is None or (interior.shape[0] == 0 and region.box is None):
        return np.empty(0, int), np.empty((0, d)), np.empty((0, d)), np.empty((0, d))
    C, b, norms, unit, same = geo
    idx_all, feet = [], []
    for k in (range(len(C)) if which is None else which):
        pick = []
        if interior.shape[0]:
            pick.append(interior[rng.integers(0, interior.shape[0], size=probes)])
        if region.box is not None:
            pick.append(region.box.sample(rng, probes))
        pick = np.concatenate(pick)
        dist = (pick @ C[k] + b[k]) / norms[k]
        feet.append(pick - dist[:, None] * unit[k])
        idx_all.append(np.full(pick.shape[0], k))
    idx = np.concatenate(idx_all)
    foot = np.concatenate(feet)
    # signed distances of every foot to every boundary
    sd = (foot @ C.T + b) / norms
    keep = domain.contains(foot, tol=-eps)
    for k in range(len(C)):
        rows = idx == k
        others = ~same[k]
        if others.any() and rows.any():
            keep[rows] &= np.all(sd[np.ix_(rows, others)] > 2 * eps, axis=1)
    idx, foot = idx[keep], foot[keep]
    inside = foot + eps * unit[idx]
    outside = foot - eps * unit[idx]
    return idx, foot, inside, outside


def facet_anchor(geometry, k: int, domain: Box, eps: float) -> Optional[np.ndarray]:
    """Deepest point of boundary ``k``'s face, or ``None`` if the face is
    thinner than ``2*eps``.

    The face is hyperplane ``k`` cut by the other boundaries and the input
    domain; the point maximises its smallest distance to all of those.
    """
    C, b, norms, unit, same = geometry
    d = C.shape[1]
    others = np.flatnonzero(~same[k])
    eye = np.eye(d)
    A = np.vstack([-unit[others], -eye, eye])
    rhs = np.concatenate([b[others] / norms[others], -domain.lower, domain.upper])
    A = np.column_stack([A, np.ones(A.shape[0])])
    res = linprog(np.append(np.zeros(d), -1.0), A_ub=A, b_ub=rhs,
                  A_eq=np.append(unit[k], 0.0)[None], b_eq=[-b[k] / norms[k]],
                  bounds=[(None, None)] * d + [(None, domain.diameter)], method="highs")
    if res.status != 0 or res.x[-1] <= 2 * eps:
        return None
    return res.x[:d]


def straddle_keys(net: SDNetwork, region: Region, foot, normal, eps: float):
    """Neighbor seen across the boundary at each foot, or ``None``.

    The point ``eps`` along the inward ``normal`` must lie in ``region``;
    the point ``eps`` against it gives the neighbor. Returns ``(keys,
    outside points)``.
    """
    foot = np.atleast_2d(foot)
    ok = membership(net, region, foot + eps * normal)
    outside = foot - eps * normal
    cls, num = classify(net, outside)
    return [(int(c), int(n)) if o else None for c, n, o in zip(cls, num, ok)], outside


def confirm_keys(net: SDNetwork, region: Region, foot, normal, tangent, keys,
                 eps: float) -> np.ndarray:
    """Check that each neighbor really shares a stretch of boundary.

    Where several regions meet at a point, two straddling points can land on
    opposite sides of a third hyperplane and report a region that touches
    only at that point. A neighbor is kept only if it is seen with a step of
    ``eps / 16`` at the foot and ``eps`` to either side of it along
    ``tangent`` (a direction within the boundary).
    """
    foot = np.atleast_2d(foot)
    good = np.array([k is not None for k in keys])
    for shift in (0.0, eps, -eps):
        got, _ = straddle_keys(net, region, foot + shift * tangent, normal, eps / 16)
        good &= np.array([g == k for g, k in zip(got, keys)])
    return good


def _tangents(normals, rng):
    r = rng.normal(size=normals.shape)
    r -= np.sum(r * normals, axis=1, keepdims=True) * normals
    n = np.linalg.norm(r, axis=1, keepdims=True)
    return r / np.where(n > 0, n, 1.0)


def _implicit_planes(region: Region):
    """All hyperplanes appearing in the region's implicit rules, stacked."""
    rules = [r for _, _, _, disj in region.implicit_rules.entries for r in disj
             if not r.is_degenerate]
    if not rules:
        return None
    return np.stack([r.coeffs for r in rules]), np.array([r.offset for r in rules])


def chord_probe(net: SDNetwork, region: Region, geometry, k: int, anchor, rng,
                eps: float, points: int = 64, tol: Optional[float] = None,
                cuts=None) -> dict:
    """Neighbors of ``region`` across boundary ``k`` found along one chord.

    The chord runs through ``anchor`` (a foot on boundary ``k``) in a random
    direction within that hyperplane, clipped to stay ``2*eps`` clear of the
    other boundaries and ``eps`` inside the input domain. Points are spread
    uniformly plus geometrically toward both chord ends, where the neighbor
    tends to change, and likewise around every crossing with a hyperplane in
    ``cuts`` (the region's implicit-rule planes, where membership can
    switch). Every interval whose ends see different neighbors is bisected
    down to ``tol``. Each run of equal neighbors along the chord
    is then confirmed at its centre. Returns ``{ident: outside point}``.
    """
    C, b, norms, unit, same = geometry
    domain = net.input_bounds
    d = domain.dim
    if d < 2:
        return {}
    if tol is None:
        tol = 1e-9 * domain.diameter
    r = _tangents(unit[k][None], rng)[0]
    if not np.any(r):
        return {}
    lo, hi = -np.inf, np.inf
    sd0 = (C @ anchor + b) / norms
    slope = unit @ r
    for j in np.flatnonzero(~same[k]):
        if abs(slope[j]) < 1e-15:
            continue
        t = (2 * eps - sd0[j]) / slope[j]
        if slope[j] > 0:
            lo = max(lo, t)
        else:
            hi = min(hi, t)
    for i in range(d):
        if abs(r[i]) < 1e-15:
            continue
        a = (domain.lower[i] + eps - anchor[i]) / r[i]
        c = (domain.upper[i] - eps - anchor[i]) / r[i]
        lo, hi = max(lo, min(a, c)), min(hi, max(a, c))
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        return {}
    half = 0.5 * (hi - lo)
    offs = 3 * eps * 2.0 ** np.arange(64)
    offs = offs[offs < half]
    extra = []
    if cuts is not None:
        Ci, bi = cuts
        v0, sl = Ci @ anchor + bi, Ci @ r
        live = np.abs(sl) > 1e-15
        tc = -v0[live] / sl[live]
        tc = tc[(tc > lo) & (tc < hi)]
        near = 3 * eps * 4.0 ** np.arange(8)
        extra = [tc, (tc[:, None] + near).ravel(), (tc[:, None] - near).ravel()]
    ts = np.unique(np.concatenate([[lo, hi, 0.0], lo + offs, hi - offs,
                                   rng.uniform(lo, hi, points)] + extra))
    ts = ts[(ts >= lo) & (ts <= hi)]
    normal = unit[k]

    def label(tv):
        return straddle_keys(net, region, anchor + tv[:, None] * r, normal, eps)[0]

    keys = label(ts)
    seen_t, seen_k = list(ts), list(keys)
    pending = [(ts[i], ts[i + 1], keys[i], keys[i + 1])
               for i in range(len(ts) - 1) if keys[i] != keys[i + 1]]
    while pending:
        pending = [p for p in pending if p[1] - p[0] > tol]
        if not pending:
            break
        mids = np.array([0.5 * (p[0] + p[1]) for p in pending])
        mk = label(mids)
        seen_t.extend(mids)
        seen_k.extend(mk)
        nxt = []
        for (ta, tb, ka, kb), tm, km in zip(pending, mids, mk):
            if km != ka:
                nxt.append((ta, tm, ka, km))
            if km != kb:
                nxt.append((tm, tb, km, kb))
        pending = nxt
    order = np.argsort(seen_t, kind="stable")
    found = {}
    start = 0
    for pos in range(1, len(order) + 1):
        if pos < len(order) and seen_k[order[pos]] == seen_k[order[start]]:
            continue
        key = seen_k[order[start]]
        t0, t1 = seen_t[order[start]], seen_t[order[pos - 1]]
        start = pos
        if key is None or key == region.ident or key in found or t1 <= t0:
            continue
        # A shared stretch keeps its length as the step shrinks; a run that
        # only exists because the straddling points reach around a point
        # where several regions meet shrinks with the step.
        tt = np.linspace(t0, t1, 17)
        feet = anchor + tt[:, None] * r
        fine, _ = straddle_keys(net, region, feet, normal, eps / 16)
        hits = np.array([f == key for f in fine])
        if hits.mean() >= 0.5:
            mid = np.flatnonzero(hits)[hits.sum() // 2]
            found[key] = feet[mid] - eps * normal
    return found


def boundary_cross(net: SDNetwork, region: Region, term_index: int, interior_point,
                   rng: Optional[np.random.Generator] = None):
    """Cross one explicit boundary from ``interior_point``.

    Returns ``(class, pattern)`` found just across the boundary, or ``None``
    when the foot of the perpendicular touches another boundary, leaves the
    input domain, or does not start inside ``region``.
    """
    rng = rng or np.random.default_rng(0)
    eps = probe_epsilon(net)
    if not membership(net, region, np.atleast_2d(interior_point))[0]:
        return None
    idx, _, inside, outside = boundary_probe_points(
        region, np.atleast_2d(interior_point), 1, rng, eps, net.input_bounds, [term_index])
    if not len(idx) or not membership(net, region, inside)[0]:
        return None
    cls, num = classify(net, outside)
    if cls[0] == region.class_label and num[0] == region.key.number:
        return None
    return int(cls[0]), pattern_from_number(int(num[0]), net.group_counts)


@dataclass
class ClassificationGraph:
    vertices: list
    edges: set
    component_of: list = field(default_factory=list)
    components: list = field(default_factory=list)   # [(class, [vertex ids])]

    def index_of(self, ident) -> int:
        return self._lookup[ident]

    def __post_init__(self):
        self._lookup = {v.ident: i for i, v in enumerate(self.vertices)}

    def edge_idents(self) -> set:
        return {frozenset((self.vertices[i].ident, self.vertices[j].ident))
                for i, j in self.edges}

    def class_components(self, k: int) -> list:
        return [c for cls, c in self.components if cls == k]


def _sample_all(net, regions, budget, seed, stage, threads, offset=0):
    def job(i):
        rng = np.random.default_rng([seed, stage, offset + i])
        return sample_region(net, regions[i], budget, rng)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(job, range(len(regions))))
    return [job(i) for i in range(len(regions))]


def build_graph(net: SDNetwork, regions: list, probes_per_boundary: int = 64,
                samples: Optional[list] = None, seed: int = 0,
                region_budget: int = 4096, add_new: bool = True,
                max_new_vertices: int = 10000, threads: int = 1, chords: int = 2,
                chord_points: int = 1024):
    """Link regions that share a boundary.

    Every vertex probes its own explicit boundaries, so each edge is seen
    from the lower-numbered side and usually from both. Neighbors that were
    not among ``regions`` are appended as new vertices when ``add_new``.
    Returns ``(graph, samples, incomplete)``.
    """
    vertices = list(regions)
    lookup = {v.ident: i for i, v in enumerate(vertices)}
    if samples is None:
        samples = _sample_all(net, vertices, region_budget, seed, 1, threads)
    samples = list(samples)
    eps = probe_epsilon(net)
    edges = set()
    incomplete = False
    i = 0
    while i < len(vertices):
        v = vertices[i]
        interior = samples[i].points
        if interior.shape[0] == 0 and v.witnesses is not None:
            interior = v.witnesses[membership(net, v, v.witnesses)]
        rng = np.random.default_rng([seed, 2, i])
        idx, foot, inside, outside = boundary_probe_points(
            v, interior, probes_per_boundary, rng, eps, net.input_bounds)
        seen = {}
        geo = _term_geometry(v)
        cuts = _implicit_planes(v)
        if len(inside):
            normals = geo[3][idx]
            keys, outside = straddle_keys(net, v, foot, normals, eps)
            keys = [None if key == v.ident else key for key in keys]
            good = confirm_keys(net, v, foot, normals, _tangents(normals, rng), keys, eps)
            for key, x, g in zip(keys, outside, good):
                if g:
                    seen.setdefault(key, x)
        for k in range(0 if geo is None else len(geo[0])):
            anchor = facet_anchor(geo, k, net.input_bounds, eps)
            if anchor is None:
                continue
            cand = foot[idx == k]
            cand = np.vstack([anchor[None], cand[rng.permutation(len(cand))[:chords - 1]]])
            for a in cand:
                for ident, x in chord_probe(net, v, geo, k, a, rng, eps, chord_points,
                                            cuts=cuts).items():
                    if ident != v.ident:
                        seen.setdefault(ident, x)
        if seen:
            for ident in sorted(seen):
                j = lookup.get(ident)
                if j is None:
                    if not add_new:
                        continue
                    if len(vertices) - len(regions) >= max_new_vertices:
                        incomplete = True
                        continue
                    reg = region_rules(net, ident[0], pattern_from_number(ident[1], net.group_counts))
                    reg.populated = True
                    reg.witnesses = seen[ident][None, :]
                    j = len(vertices)
                    vertices.append(reg)
                    lookup[ident] = j
                    samples.append(sample_region(net, reg, region_budget,
                                                 np.random.default_rng([seed, 1, j])))
                edges.add((min(i, j), max(i, j)))
        i += 1
    graph = ClassificationGraph(vertices, edges)
    _assign_components(graph)
    return graph, samples, incomplete


def _assign_components(graph: ClassificationGraph) -> None:
    n = len(graph.vertices)
    labels = np.array([v.class_label for v in graph.vertices], dtype=np.int64)
    same = [(i, j) for i, j in sorted(graph.edges) if labels[i] == labels[j]]
    rows = np.array([e[0] for e in same], dtype=np.int64)
    cols = np.array([e[1] for e in same], dtype=np.int64)
    adj = coo_matrix((np.ones(len(same)), (rows, cols)), shape=(n, n))
    _, comp = connected_components(adj, directed=False) if n else (0, np.empty(0, int))
    # renumber components in order of their first vertex
    remap, comps = {}, []
    component_of = []
    for i in range(n):
        c = comp[i]
        if c not in remap:
            remap[c] = len(comps)
            comps.append((int(labels[i]), []))
        comps[remap[c]][1].append(i)
        component_of.append(remap[c])
    graph.components = comps
    graph.component_of = component_of


# -- step 2: limiting balls ------------------------------------------------------

@dataclass
class LimitingBall:
    center: np.ndarray
    radius: float
    volume_estimate: float
    sample_count: int

    def box(self) -> Box:
        return Box(self.center - self.radius, self.center + self.radius)

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius,
                "volume_estimate": self.volume_estimate, "sample_count": self.sample_count}


def limiting_ball(samples: Sequence[RegionSample]) -> Optional[LimitingBall]:
    """Ball around the volume-weighted centre of the members' sample means,
    with radius the largest L-infinity distance to any accepted sample.
    Thin members are skipped; ``None`` if all are thin."""
    live = [s for s in samples if not s.thin]
    if not live:
        return None
    if len(live) == 1:
        center = live[0].points.mean(axis=0)
    else:
        vols = np.array([s.volume for s in live])
        centers = np.stack([s.points.mean(axis=0) for s in live])
        if vols.sum() > 0:
            center = (centers * vols[:, None]).sum(axis=0) / vols.sum()
        else:
            center = centers.mean(axis=0)
    pts = np.concatenate([s.points for s in live])
    radius = float(np.abs(pts - center).max())
    return LimitingBall(center, radius, float(sum(s.volume for s in live)), pts.shape[0])


# -- step 3: detection -----------------------------------------------------------

def detect_small_isolated(ball: LimitingBall, R: float) -> bool:
    return ball.radius < R


def same_class_fraction(net: SDNetwork, k: int, ball: LimitingBall, n: int,
                        rng: np.random.Generator, clip: bool = True) -> float:
    box = ball.box()
    if clip:
        box = box.intersect(net.input_bounds)
    if box.is_empty or n < 1:
        return 0.0
    cls, _ = classify(net, box.sample(rng, n))
    return float((cls == k).mean())


def detect_protruding(net: SDNetwork, region: Region, ball: LimitingBall, r: float,
                      n: int, rng: np.random.Generator):
    """``(flag, m/n)``: flag when fewer than a fraction ``r`` of uniform draws
    in the region's ball (clipped to the input domain) share its class."""
    frac = same_class_fraction(net, region.class_label, ball, n, rng)
    return frac < r, frac


@dataclass
class Finding:
    kind: str
    class_label: int
    component: int
    vertices: list
    ball: LimitingBall
    evidence: float

    def to_json(self) -> dict:
        return {"kind": self.kind, "class": self.class_label, "component": self.component,
                "vertices": self.vertices, "ball": self.ball.to_json(),
                "evidence": self.evidence}


@dataclass
class VerificationReport:
    R: float
    r: float
    seed: int
    budgets: Budgets
    graph: ClassificationGraph
    samples: list
    findings: list
    component_balls: list
    incomplete: bool = False
    warnings: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "not_globally_robust" if self.findings else "globally_robust"

    def component_counts(self) -> dict:
        counts = {}
        for cls, _ in self.graph.components:
            counts[cls] = counts.get(cls, 0) + 1
        return {str(k): counts[k] for k in sorted(counts)}

    def adversarial_vertices(self) -> set:
        return {v for f in self.findings for v in f.vertices}

    def to_json(self, extra: Optional[dict] = None) -> dict:
        g = self.graph
        verts = []
        for i, (v, s) in enumerate(zip(g.vertices, self.samples)):
            verts.append({
                "id": i, "class": v.class_label, "pattern": v.pattern.to_json(),
                "notation": v.pattern.list_notation(), "key": v.key.number,
                "component": g.component_of[i],
                "box": None if v.box is None else v.box.to_json(),
                "acceptance": s.ratio, "volume": s.volume, "thin": s.thin,
                "center": None if s.thin else s.points.mean(axis=0).tolist(),
            })
        comps = []
        for c, ((cls, members), ball) in enumerate(zip(g.components, self.component_balls)):
            comps.append({"id": c, "class": cls, "vertices": members,
                          "ball": None if ball is None else ball.to_json()})
        out = {
            "tool": "sdnverify", "version": __version__,
            "params": {"R": self.R, "r": self.r},
            "budgets": asdict(self.budgets), "seed": self.seed,
            "vertices": verts, "edges": [list(e) for e in sorted(g.edges)],
            "components": comps, "class_component_counts": self.component_counts(),
            "findings": [f.to_json() for f in self.findings],
            "verdict": self.verdict, "incomplete": self.incomplete,
            "warnings": self.warnings,
            "note": "regions never hit by discovery samples are not analysed",
        }
        if extra:
            out.update(extra)
        return out


def verify_global(net: SDNetwork, R: float, r: float, X=None,
                  budgets: Optional[Budgets] = None, seed: int = 0,
                  threads: int = 1, add_new: bool = True) -> VerificationReport:
    """Run discovery, graph building, limiting balls and both detections."""
    if R <= 0 or r <= 0:
        raise ValueError("R and r must be positive")
    budgets = budgets or Budgets()
    warnings = []
    regions, truncated = discover_populated_regions(
        net, X, budgets.discover, np.random.default_rng([seed, 0]), budgets.max_regions)
    if truncated:
        warnings.append(f"region budget exhausted: kept {budgets.max_regions} regions")
    graph, samples, graph_incomplete = build_graph(
        net, regions, budgets.probes, None, seed, budgets.region_samples, add_new,
        budgets.max_new_vertices, threads, budgets.chords, budgets.chord_points)
    if graph_incomplete:
        warnings.append("new-vertex budget exhausted during boundary probing")
    thin = [i for i, s in enumerate(samples) if s.thin]
    if thin:
        warnings.append(f"{len(thin)} thin regions excluded from ball statistics")

    findings = []
    balls = []
    small = set()
    for c, (cls, members) in enumerate(graph.components):
        ball = limiting_ball([samples[i] for i in members])
        balls.append(ball)
        if ball is None:
            warnings.append(f"component {c} (class {cls}) has only thin regions; manual review")
            continue
        if detect_small_isolated(ball, R):
            findings.append(Finding(SMALL_ISOLATED, cls, c, list(members), ball, ball.radius))
            small.add(c)
    for i, v in enumerate(graph.vertices):
        c = graph.component_of[i]
        if c in small:
            continue
        ball = limiting_ball([samples[i]])
        if ball is None:
            continue
        flag, frac = detect_protruding(net, v, ball, r, budgets.ball_samples,
                                       np.random.default_rng([seed, 3, i]))
        if flag:
            findings.append(Finding(PROTRUDING, v.class_label, c, [i], ball, frac))
    return VerificationReport(R, r, seed, budgets, graph, samples, findings, balls,
                              truncated or graph_incomplete, warnings)


def extract_adversarial_examples(net: SDNetwork, region: Region, count: int,
                                 seed: int = 0, max_draws: Optional[int] = None,
                                 chunk: int = 4096) -> np.ndarray:
    """Up to ``count`` uniform points of ``region``; fewer if it is thin."""
    if count <= 0:
        return np.empty((0, net.input_dim))
    if region.box is None or region.box.is_empty:
        return np.empty((0, net.input_dim))
    rng = np.random.default_rng([seed, 4, region.class_label, region.key.number])
    max_draws = max_draws or max(100 * count, 100_000)
    got, drawn = [], 0
    total = 0
    while total < count and drawn < max_draws:
        res = rejection_sample(region.box, lambda P: membership(net, region, P), chunk, rng)
        drawn += chunk
        got.append(res.points)
        total += res.accepted
    pts = np.concatenate(got)[:count] if got else np.empty((0, net.input_dim))
    if pts.shape[0] < count:
        log.warning("only %d of %d points found in region %s", pts.shape[0], count, region.pattern)
    return pts
