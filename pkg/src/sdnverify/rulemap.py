"""Rule back-propagation from output classes to input-space regions.

A region is a (class, activation pattern) pair. Its explicit rules are the
output comparisons pulled back through every hidden layer together with the
door sign conditions; its implicit rules encode door minimality.
"""
from __future__ import annotations

import bisect
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .linrules import (AffineMap, Box, EmptyBoxError, LinearInequality,
                       RuleConjunction, RuleDNF, bounding_box, substitute_affine)
from .sdn import ABSENT, SDNetwork, door_scales


class DuplicateKeyError(KeyError):
    pass


class TooManyNeurons(ValueError):
    pass


LayerDoors = tuple  # (active | None, inactive | None)


@dataclass(frozen=True)
class ActivationPattern:
    """Per hidden layer ``(active door, inactive door)``; ``None`` = absent."""

    layers: tuple

    def __post_init__(self):
        norm = []
        for pair in self.layers:
            g, gp = pair
            g = None if g is None or g == ABSENT else int(g)
            gp = None if gp is None or gp == ABSENT else int(gp)
            if g is not None and g == gp:
                raise ValueError(f"active and inactive door coincide at group {g}")
            norm.append((g, gp))
        object.__setattr__(self, "layers", tuple(norm))

    @classmethod
    def from_doors(cls, doors) -> "ActivationPattern":
        return cls(tuple((int(a), int(i)) for a, i in np.asarray(doors).reshape(-1, 2)))

    @classmethod
    def from_list_notation(cls, obj) -> "ActivationPattern":
        """Parse ``[[active doors...], [inactive doors...]]``, e.g. ``[[18,1],[1,15]]``."""
        if isinstance(obj, str):
            obj = json.loads(obj)
        actives, inactives = obj
        if len(actives) != len(inactives):
            raise ValueError("active and inactive lists differ in length")
        return cls(tuple(zip(actives, inactives)))

    def list_notation(self) -> list:
        return [[g for g, _ in self.layers], [gp for _, gp in self.layers]]

    def __len__(self):
        return len(self.layers)

    def validate(self, group_counts: Sequence[int]) -> None:
        if len(self.layers) != len(group_counts):
            raise ValueError("pattern depth differs from network depth")
        for (g, gp), m in zip(self.layers, group_counts):
            for d in (g, gp):
                if d is not None and not 0 <= d < m:
                    raise ValueError(f"door {d} outside 0..{m - 1}")

    def neuron_sets(self, h: int, group_size: int, group_count: int):
        """Neuron index sets (active, inactive, trivial) of hidden layer ``h`` (0-based)."""
        g, gp = self.layers[h]
        width = group_size * group_count
        act = list(range(g * group_size, (g + 1) * group_size)) if g is not None else []
        inact = list(range(gp * group_size, (gp + 1) * group_size)) if gp is not None else []
        rest = sorted(set(range(width)) - set(act) - set(inact))
        return act, inact, rest

    def to_json(self) -> list:
        return [list(p) for p in self.layers]

    @classmethod
    def from_json(cls, obj) -> "ActivationPattern":
        return cls(tuple(tuple(p) for p in obj))

    def __str__(self):
        return json.dumps(self.list_notation())


# -- numbering -------------------------------------------------------------

def layer_pattern_count(m: int) -> int:
    return m * (m - 1) + 2 * m + 1


def layer_code(g: Optional[int], gp: Optional[int], m: int) -> int:
    """Rank of ``(g, gp)`` among one layer's patterns.

    Absent doors take the sentinel index ``m``. With that sentinel each
    active-door row holds exactly ``m`` options, so the serial-number formula
    ``g*m + gp - [g < gp]`` becomes a bijection onto ``0..m(m-1)+2m``.
    """
    g = m if g is None else g
    gp = m if gp is None else gp
    return g * m + gp - (1 if g < gp else 0)


def layer_decode(code: int, m: int):
    if code >= m * m:
        g, gp = m, code - m * m
    else:
        g, rem = divmod(code, m)
        gp = rem + (1 if rem >= g else 0)
    return (None if g == m else g, None if gp == m else gp)


@dataclass(frozen=True, order=True)
class PatternKey:
    number: int


def pattern_number(pattern: ActivationPattern, group_counts: Sequence[int]) -> PatternKey:
    pattern.validate(group_counts)
    num = 0
    for (g, gp), m in zip(pattern.layers, group_counts):
        num = num * layer_pattern_count(m) + layer_code(g, gp, m)
    return PatternKey(num)


def pattern_from_number(number: int, group_counts: Sequence[int]) -> ActivationPattern:
    layers = []
    for m in reversed(group_counts):
        number, code = divmod(number, layer_pattern_count(m))
        layers.append(layer_decode(code, m))
    if number:
        raise ValueError("pattern number out of range")
    return ActivationPattern(tuple(reversed(layers)))


def pattern_numbers(doors: np.ndarray, group_counts: Sequence[int]) -> np.ndarray:
    """Vectorized numbering of ``(n, hidden, 2)`` door arrays (``-1`` = absent)."""
    doors = np.asarray(doors, dtype=np.int64)
    num = np.zeros(doors.shape[0], dtype=object if _too_wide(group_counts) else np.int64)
    for h, m in enumerate(group_counts):
        g = np.where(doors[:, h, 0] == ABSENT, m, doors[:, h, 0])
        gp = np.where(doors[:, h, 1] == ABSENT, m, doors[:, h, 1])
        code = g * m + gp - (g < gp)
        num = num * layer_pattern_count(m) + code
    return num


def _too_wide(group_counts) -> bool:
    total = 1
    for m in group_counts:
        total *= layer_pattern_count(m)
    return total >= 2 ** 62


def pattern_precedes(p1: ActivationPattern, p2: ActivationPattern, group_counts) -> bool:
    """Ordering predicate on patterns: the first differing layer decides,
    comparing active doors first, then inactive doors; absent sorts last."""
    for (g1, q1), (g2, q2), m in zip(p1.layers, p2.layers, group_counts):
        a1, a2 = (m if g1 is None else g1), (m if g2 is None else g2)
        b1, b2 = (m if q1 is None else q1), (m if q2 is None else q2)
        if (a1, b1) != (a2, b2):
            return a1 < a2 or (a1 == a2 and b1 < b2)
    return False


def enumerate_layer_patterns(m: int) -> list:
    """All ``(active, inactive)`` options of a layer with ``m`` groups, in key order."""
    if m < 1:
        raise ValueError("a layer needs at least one group")
    return [layer_decode(c, m) for c in range(layer_pattern_count(m))]


def enumerate_patterns(group_counts: Sequence[int]) -> Iterator[ActivationPattern]:
    per_layer = [enumerate_layer_patterns(m) for m in group_counts]
    for combo in itertools.product(*per_layer):
        yield ActivationPattern(tuple(combo))


# -- mapping -----------------------------------------------------------------

def map_out(k: int, output_map: AffineMap) -> RuleConjunction:
    """Rules over the last hidden layer under which logit ``k`` beats every other."""
    n_out = output_map.out_dim
    if not 0 <= k < n_out:
        raise ValueError(f"class {k} outside 0..{n_out - 1}")
    w, b = output_map.weights, output_map.biases
    return RuleConjunction(tuple(
        LinearInequality(output_map.source, w[:, k] - w[:, j], b[k] - b[j]).canonical()
        for j in range(n_out) if j != k))


def _layer_scale(doors: LayerDoors, group_count: int, group_size: int,
                 alpha: float) -> np.ndarray:
    g, gp = doors
    return door_scales([ABSENT if g is None else g], [ABSENT if gp is None else gp],
                       group_count, group_size, alpha)[0]


def door_conditions(doors: LayerDoors, layer_map: AffineMap, group_size: int) -> RuleConjunction:
    """Sign conditions of the door neurons, over the layer below."""
    g, gp = doors
    terms = []
    if g is not None:
        terms += [layer_map.neuron_rule(i, True)
                  for i in range(g * group_size, (g + 1) * group_size)]
    if gp is not None:
        terms += [layer_map.neuron_rule(i, False)
                  for i in range(gp * group_size, (gp + 1) * group_size)]
    return RuleConjunction(tuple(terms))


def map_fix(doors: LayerDoors, rule: LinearInequality, layer_map: AffineMap,
            alpha: float, group_size: int) -> RuleConjunction:
    """Pull one rule through a hidden layer with fixed doors.

    The result holds the inherited rule (active-door neurons scaled by
    ``alpha``, inactive-door neurons deleted), then the active-door and
    inactive-door sign conditions.
    """
    if rule.layer != layer_map.target:
        raise ValueError(f"rule on layer {rule.layer}, map targets {layer_map.target}")
    m = layer_map.out_dim // group_size
    scale = _layer_scale(doors, m, group_size, alpha)
    inherit = substitute_affine(rule, layer_map, scale)
    return RuleConjunction((inherit,)) & door_conditions(doors, layer_map, group_size)


def implicit_layer_rules(doors: LayerDoors, layer_map: AffineMap, group_size: int):
    """Door-minimality constraints of one hidden layer.

    Returns ``[(kind, group, disjunction)]`` where ``kind`` is ``"neg"``
    (some neuron of the group is negative) or ``"pos"``; each disjunction is
    a tuple of rules over the layer below.
    """
    g, gp = doors
    m = layer_map.out_dim // group_size
    out = []
    upto_a = m if g is None else g
    upto_i = m if gp is None else gp
    for j in range(upto_a):
        if j != gp:
            out.append(("neg", j, tuple(layer_map.neuron_rule(i, False)
                                         for i in range(j * group_size, (j + 1) * group_size))))
    for j in range(upto_i):
        if j != g:
            out.append(("pos", j, tuple(layer_map.neuron_rule(i, True)
                                         for i in range(j * group_size, (j + 1) * group_size))))
    return out


@dataclass
class ImplicitRules:
    """Existential door-minimality constraints, one disjunction per entry.

    ``entries`` holds ``(hidden layer, kind, group, disjuncts)`` with the
    disjuncts expressed over the input layer.
    """

    entries: list = field(default_factory=list)

    def holds(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        ok = np.ones(pts.shape[0], dtype=bool)
        for _, _, _, disj in self.entries:
            any_ = np.zeros(pts.shape[0], dtype=bool)
            for r in disj:
                any_ |= r.holds(pts)
            ok &= any_
        return ok

    def to_json(self) -> list:
        return [[r.to_json() for r in disj] for _, _, _, disj in self.entries]

    def describe(self) -> list:
        return [{"layer": h, "kind": kind, "group": j, "disjuncts": [r.to_json() for r in disj]}
                for h, kind, j, disj in self.entries]


@dataclass
class Region:
    class_label: int
    pattern: ActivationPattern
    explicit_rules: RuleConjunction
    implicit_rules: ImplicitRules
    key: PatternKey
    box: Optional[Box]
    populated: bool = False
    witnesses: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def ident(self) -> tuple:
        return (self.class_label, self.key.number)

    def holds(self, points) -> np.ndarray:
        """Symbolic membership: explicit and implicit rules."""
        pts = np.atleast_2d(points)
        return self.explicit_rules.holds(pts) & self.implicit_rules.holds(pts)

    def to_json(self) -> dict:
        return {
            "class": self.class_label,
            "pattern": self.pattern.to_json(),
            "key": self.key.number,
            "explicit": self.explicit_rules.to_json(),
            "implicit": self.implicit_rules.to_json(),
            "box": None if self.box is None else self.box.to_json(),
            "populated": self.populated,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Region":
        implicit = ImplicitRules([(None, None, None, tuple(LinearInequality.from_json(r) for r in d))
                                  for d in obj["implicit"]])
        return cls(int(obj["class"]), ActivationPattern.from_json(obj["pattern"]),
                   RuleConjunction.from_json(obj["explicit"]), implicit,
                   PatternKey(int(obj["key"])),
                   None if obj.get("box") is None else Box.from_json(obj["box"]),
                   bool(obj.get("populated", False)))


def _pull_to_input(rule: LinearInequality, net: SDNetwork, pattern: ActivationPattern) -> LinearInequality:
    """Inherit-only substitution of a rule from its layer down to the input."""
    for h in range(rule.layer, 0, -1):
        amap = net.layers[h - 1]
        scale = _layer_scale(pattern.layers[h - 1], net.group_counts[h - 1],
                             net.group_sizes[h - 1], net.alpha)
        rule = substitute_affine(rule, amap, scale)
    return rule


def region_rules(net: SDNetwork, k: int, pattern: ActivationPattern) -> Region:
    """Input-space rules of the region where ``net`` predicts ``k`` under ``pattern``."""
    pattern.validate(net.group_counts)
    rules = map_out(k, net.layers[-1])
    for h in range(net.n_hidden, 0, -1):
        amap = net.layers[h - 1]
        doors = pattern.layers[h - 1]
        g = net.group_sizes[h - 1]
        scale = _layer_scale(doors, net.group_counts[h - 1], g, net.alpha)
        inherited = RuleConjunction(tuple(substitute_affine(r, amap, scale) for r in rules))
        rules = inherited & door_conditions(doors, amap, g)

    implicit = ImplicitRules()
    for h in range(net.n_hidden):
        for kind, j, disj in implicit_layer_rules(pattern.layers[h], net.layers[h],
                                                  net.group_sizes[h]):
            implicit.entries.append(
                (h + 1, kind, j, tuple(_pull_to_input(r, net, pattern) for r in disj)))

    try:
        box = bounding_box(rules, net.input_bounds)
    except EmptyBoxError:
        box = None
    return Region(k, pattern, rules, implicit, pattern_number(pattern, net.group_counts), box)


def iter_regions(net: SDNetwork, classes: Optional[Iterable[int]] = None) -> Iterator[Region]:
    """Lazily generate every (class, pattern) region in key order."""
    classes = range(net.n_classes) if classes is None else classes
    for k in classes:
        for p in enumerate_patterns(net.group_counts):
            yield region_rules(net, k, p)


# -- index -------------------------------------------------------------------

class RegionIndex:
    """Ordered in-memory index of regions keyed by ``(class, pattern number)``."""

    def __init__(self):
        self._keys: list = []
        self._items: dict = {}

    def insert(self, key, value) -> None:
        key = _norm_key(key)
        if key in self._items:
            raise DuplicateKeyError(key)
        pos = bisect.bisect_left(self._keys, key)
        self._keys.insert(pos, key)
        self._items[key] = value

    def __getitem__(self, key):
        return self._items[_norm_key(key)]

    def get(self, key, default=None):
        return self._items.get(_norm_key(key), default)

    def __contains__(self, key) -> bool:
        return _norm_key(key) in self._items

    def __len__(self):
        return len(self._keys)

    def keys(self) -> list:
        return list(self._keys)

    def items(self):
        for k in self._keys:
            yield k, self._items[k]

    def __iter__(self):
        return iter(self._keys)

    def range(self, lo, hi):
        """Items with ``lo <= key < hi``."""
        i = bisect.bisect_left(self._keys, _norm_key(lo))
        j = bisect.bisect_left(self._keys, _norm_key(hi))
        for k in self._keys[i:j]:
            yield k, self._items[k]

    @classmethod
    def bulk(cls, pairs) -> "RegionIndex":
        """Build from ``(key, value)`` pairs in one sort (merge step)."""
        idx = cls()
        items = {}
        for k, v in pairs:
            k = _norm_key(k)
            if k in items:
                raise DuplicateKeyError(k)
            items[k] = v
        idx._items = items
        idx._keys = sorted(items)
        return idx


def _norm_key(key):
    if isinstance(key, PatternKey):
        return (0, key.number)
    cls_, num = key
    return (int(cls_), num.number if isinstance(num, PatternKey) else int(num))


def build_region_index(regions: Iterable[Region]) -> RegionIndex:
    return RegionIndex.bulk((r.ident, r) for r in regions)


def save_rules(regions: Iterable[Region], path, meta: Optional[dict] = None) -> None:
    payload = [r.to_json() for r in regions]
    with open(path, "w") as fh:
        json.dump({"meta": meta or {}, "regions": payload} if meta else payload, fh)


def load_rules(path) -> RegionIndex:
    with open(path) as fh:
        obj = json.load(fh)
    regions = obj["regions"] if isinstance(obj, dict) else obj
    return build_region_index(Region.from_json(r) for r in regions)


# -- toy ReLU reference ------------------------------------------------------

MAX_REFERENCE_NEURONS = 14


def dnn_map_reference(params, k: int) -> RuleDNF:
    """Full input-space rule DNF of class ``k`` for a small ReLU network.

    ``params`` is ``[(W, b), ...]`` with ReLU hidden layers and a softmax
    output. Every on/off neuron pattern is enumerated, so the total hidden
    width is capped at ``MAX_REFERENCE_NEURONS``.
    """
    maps = [AffineMap(w, b, h, h + 1) for h, (w, b) in enumerate(params)]
    hidden = [m.out_dim for m in maps[:-1]]
    if sum(hidden) > MAX_REFERENCE_NEURONS:
        raise TooManyNeurons(
            f"{sum(hidden)} hidden ReLU neurons exceed the cap of {MAX_REFERENCE_NEURONS}; "
            "pattern enumeration is exponential in the hidden width")
    out = map_out(k, maps[-1])
    clauses = []
    per_layer = [list(itertools.product((True, False), repeat=w)) for w in hidden]
    for combo in itertools.product(*per_layer):
        rules = out
        for h in range(len(hidden), 0, -1):
            amap = maps[h - 1]
            on = np.array(combo[h - 1], dtype=bool)
            inherited = RuleConjunction(tuple(substitute_affine(r, amap, on.astype(float))
                                              for r in rules))
            conds = RuleConjunction(tuple(amap.neuron_rule(i, bool(on[i]))
                                          for i in range(amap.out_dim)))
            rules = inherited & conds
        clauses.append(rules)
    return RuleDNF(tuple(clauses))


def relu_forward(params, X) -> np.ndarray:
    a = np.asarray(X, dtype=np.float64)
    for w, b in params[:-1]:
        a = np.maximum(a @ w + b, 0)
    w, b = params[-1]
    return a @ w + b
