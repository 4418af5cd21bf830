"""Linear inequalities over one layer's coordinates.

Every rule is kept in the single normal form ``sum_i c_i * x_i + b > 0``.
A ``<`` rule is represented by negating coefficients and offset.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# numeric slack for the strict ">" on non-degenerate rules
STRICT_TOL = 1e-9


class DimensionError(ValueError):
    """Raised when vectors and rules disagree on their dimension."""


class EmptyBoxError(ValueError):
    """Raised when a rule set admits no point of the input box."""


def _vec(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class LinearInequality:
    """``coeffs . x + offset > 0`` over the activation layer ``layer``."""

    layer: int
    coeffs: np.ndarray
    offset: float

    def __post_init__(self):
        c = _vec(self.coeffs).copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def less_than(cls, layer: int, coeffs, offset: float) -> "LinearInequality":
        """Build ``coeffs . x + offset < 0`` in canonical form."""
        return cls(layer, -_vec(coeffs), -float(offset))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def is_degenerate(self) -> bool:
        return not np.any(self.coeffs)

    def constant_value(self) -> bool:
        """Truth value of a degenerate rule; ties count as false."""
        if not self.is_degenerate:
            raise ValueError("rule depends on its variables")
        return self.offset > 0.0

    def canonical(self) -> "LinearInequality":
        # normalizing -0.0 is the only rewrite left once the form is fixed
        return LinearInequality(self.layer, self.coeffs + 0.0, self.offset + 0.0)

    def negate(self) -> "LinearInequality":
        return LinearInequality(self.layer, -self.coeffs, -self.offset)

    def values(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape[-1] != self.dim:
            raise DimensionError(
                f"point dimension {pts.shape[-1]} != rule dimension {self.dim}")
        return pts @ self.coeffs + self.offset

    def holds(self, points) -> np.ndarray:
        """Vectorized :func:`evaluate` over the last axis of ``points``."""
        if self.is_degenerate:
            pts = np.asarray(points)
            if pts.shape[-1] != self.dim:
                raise DimensionError(
                    f"point dimension {pts.shape[-1]} != rule dimension {self.dim}")
            return np.full(pts.shape[:-1], self.constant_value())
        return self.values(points) > -STRICT_TOL

    def __eq__(self, other):
        if not isinstance(other, LinearInequality):
            return NotImplemented
        return (self.layer == other.layer and self.offset == other.offset
                and np.array_equal(self.coeffs, other.coeffs))

    def __hash__(self):
        return hash((self.layer, self.offset, self.coeffs.tobytes()))

    def __repr__(self):
        terms = " + ".join(f"{c:g}*x{i}" for i, c in enumerate(self.coeffs) if c)
        return f"<L{self.layer}: {terms or '0'} + {self.offset:g} > 0>"

    def to_json(self) -> dict:
        return {"layer": self.layer, "coeffs": self.coeffs.tolist(),
                "offset": self.offset}

    @classmethod
    def from_json(cls, obj: dict) -> "LinearInequality":
        return cls(int(obj["layer"]), obj["coeffs"], obj["offset"])


def evaluate(ineq: LinearInequality, point) -> bool:
    """Check ``point`` against ``ineq``; ``>`` is relaxed to ``> -STRICT_TOL``."""
    pt = _vec(point)
    return bool(ineq.holds(pt))


@dataclass(frozen=True)
class RuleConjunction:
    """A conjunction of inequalities on one layer; empty means always true."""

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        layers = {t.layer for t in terms}
        if len(layers) > 1:
            raise ValueError(f"mixed layers in conjunction: {sorted(layers)}")
        object.__setattr__(self, "terms", terms)

    @property
    def layer(self):
        return self.terms[0].layer if self.terms else None

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __and__(self, other: "RuleConjunction") -> "RuleConjunction":
        return RuleConjunction(self.terms + tuple(other.terms)).deduplicated()

    def deduplicated(self) -> "RuleConjunction":
        seen, out = set(), []
        for t in self.terms:
            if t not in seen:
                seen.add(t)
                out.append(t)
        return RuleConjunction(tuple(out))

    def holds(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for t in self.terms:
            ok &= t.holds(pts)
        return ok

    def is_trivially_false(self) -> bool:
        return any(t.is_degenerate and not t.constant_value() for t in self.terms)

    def to_json(self) -> list:
        return [t.to_json() for t in self.terms]

    @classmethod
    def from_json(cls, obj: list) -> "RuleConjunction":
        return cls(tuple(LinearInequality.from_json(t) for t in obj))


@dataclass(frozen=True)
class RuleDNF:
    """Disjunction of conjunctions sharing one layer."""

    clauses: tuple = ()

    def __post_init__(self):
        clauses = tuple(self.clauses)
        layers = {c.layer for c in clauses if c.layer is not None}
        if len(layers) > 1:
            raise ValueError(f"mixed layers in DNF: {sorted(layers)}")
        object.__setattr__(self, "clauses", clauses)

    def __len__(self):
        return len(self.clauses)

    def holds(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        ok = np.zeros(pts.shape[:-1], dtype=bool)
        for c in self.clauses:
            ok |= c.holds(pts)
        return ok

    def to_json(self) -> list:
        return [c.to_json() for c in self.clauses]

    @classmethod
    def from_json(cls, obj: list) -> "RuleDNF":
        return cls(tuple(RuleConjunction.from_json(c) for c in obj))


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``y = x @ weights + biases``; ``weights[t, i]`` connects source t to target i."""

    weights: np.ndarray
    biases: np.ndarray
    source: int
    target: int

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.biases, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or w.shape[1] != b.shape[0]:
            raise DimensionError(
                f"weights {w.shape} incompatible with biases {b.shape}")
        if self.target != self.source + 1:
            raise ValueError("affine maps connect consecutive layers")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weights + self.biases

    def neuron_rule(self, i: int, positive: bool = True) -> LinearInequality:
        """Rule stating that target neuron ``i`` is positive (or negative)."""
        rule = LinearInequality(self.source, self.weights[:, i], self.biases[i])
        return rule if positive else rule.negate()


def substitute_affine(ineq: LinearInequality, amap: AffineMap,
                      scale_per_var=None) -> LinearInequality:
    """Pull a rule at layer h back through ``amap`` (h-1 -> h).

    Each variable ``x_i`` of the rule is replaced by
    ``scale[i] * (amap.weights[:, i] . x + amap.biases[i])``; a zero scale
    deletes the variable.
    """
    if amap.target != ineq.layer:
        raise DimensionError(
            f"map targets layer {amap.target}, rule lives on layer {ineq.layer}")
    if amap.out_dim != ineq.dim:
        raise DimensionError(f"map width {amap.out_dim} != rule width {ineq.dim}")
    scale = np.ones(ineq.dim) if scale_per_var is None else _vec(scale_per_var)
    if scale.shape[0] != ineq.dim:
        raise DimensionError("scale vector length differs from rule width")
    c = scale * ineq.coeffs
    return LinearInequality(amap.source, amap.weights @ c,
                            float(c @ amap.biases) + ineq.offset).canonical()


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lower).copy(), _vec(self.upper).copy()
        if lo.shape != hi.shape:
            raise DimensionError("box bounds differ in length")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float) -> "Box":
        return cls(np.full(dim, lo), np.full(dim, hi))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lower > self.upper))

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return 0.0 if self.is_empty else float(np.prod(self.widths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=-1)

    def intersect(self, other: "Box") -> "Box":
        return Box(np.maximum(self.lower, other.lower),
                   np.minimum(self.upper, other.upper))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return (np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"

    def to_json(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Box":
        return cls(obj["lower"], obj["upper"])


def one_sided_bounds(ineq: LinearInequality, box: Box):
    """Per-dimension bound implied by ``ineq`` when all other coordinates
    range over ``box``.

    Returns ``(lower, upper)`` arrays with ``-inf``/``inf`` where the rule
    says nothing about that coordinate.
    """
    c = ineq.coeffs
    if c.shape[0] != box.dim:
        raise DimensionError("rule and box differ in dimension")
    best = np.maximum(c * box.lower, c * box.upper)
    total = best.sum()
    lower = np.full(box.dim, -np.inf)
    upper = np.full(box.dim, np.inf)
    nz = c != 0
    # c_k x_k > -b - max(sum_{i != k} c_i x_i)
    bound = np.zeros(box.dim)
    bound[nz] = (-ineq.offset - (total - best[nz])) / c[nz]
    pos, neg = c > 0, c < 0
    lower[pos] = bound[pos]
    upper[neg] = bound[neg]
    return lower, upper


def bounding_box(rules: Iterable[LinearInequality], input_bounds: Box,
                 max_passes: int = 50) -> Box:
    """Tightest box enclosing ``rules`` within ``input_bounds``.

    Each pass applies every rule's one-sided bounds; passes repeat on the
    shrunk box until it stops changing. Raises :class:`EmptyBoxError` when a
    dimension collapses or a constant rule is false.
    """
    rules = list(rules)
    for r in rules:
        if r.layer != 0:
            raise ValueError(f"bounding boxes need input-layer rules, got layer {r.layer}")
    box = input_bounds
    for r in rules:
        if r.is_degenerate and not r.constant_value():
            raise EmptyBoxError("constant-false rule in conjunction")
    live = [r for r in rules if not r.is_degenerate]
    for _ in range(max(1, max_passes)):
        lo, hi = box.lower.copy(), box.upper.copy()
        for r in live:
            l, u = one_sided_bounds(r, Box(lo, hi))
            np.maximum(lo, l, out=lo)
            np.minimum(hi, u, out=hi)
            if np.any(lo > hi):
                raise EmptyBoxError(
                    f"empty in dimension {int(np.argmax(lo > hi))}")
        new = Box(lo, hi)
        settled = (np.allclose(new.lower, box.lower, rtol=0, atol=1e-12)
                   and np.allclose(new.upper, box.upper, rtol=0, atol=1e-12))
        box = new
        if settled:
            break
    return box
