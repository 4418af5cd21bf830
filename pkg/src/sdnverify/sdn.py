"""Sliding Door Networks: forward pass, door-regularized loss and training.

Hidden layers split their pre-activations into equal groups. The first
all-positive group (the active door) is amplified by ``alpha``, the first
all-negative group (the inactive door) is zeroed and every other neuron is
copied. Door indices are ``-1`` when absent in the batched helpers and
``None`` in the per-sample types.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .linrules import AffineMap, Box

log = logging.getLogger(__name__)

ABSENT = -1


class TrainingDivergence(RuntimeError):
    def __init__(self, message: str, epoch: Optional[int] = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class DoorAssignment:
    active: Optional[int] = None
    inactive: Optional[int] = None

    @property
    def complete(self) -> bool:
        return self.active is not None and self.inactive is not None


@dataclass
class TrainConfig:
    epochs: int = 1500
    batch_size: int = 256
    learning_rate: float = 1e-3
    lam: float = 0.01
    loss_kind: str = "cross_entropy"
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.loss_kind not in ("cross_entropy", "squared_error"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        self.betas = tuple(self.betas)


def parse_arch(text: str) -> tuple[list[int], list[int]]:
    """Parse ``"16x4,12x2"`` into group counts ``[16, 12]`` and sizes ``[4, 2]``."""
    counts, sizes = [], []
    text = text.strip()
    if not text:
        return counts, sizes
    for part in text.split(","):
        try:
            groups, size = part.lower().split("x")
            counts.append(int(groups))
            sizes.append(int(size))
        except ValueError:
            raise ValueError(f"bad layer spec {part!r}; expected <groups>x<group_size>")
        if counts[-1] < 1 or sizes[-1] < 1:
            raise ValueError(f"layer spec {part!r} must be positive")
    return counts, sizes


def format_arch(counts: Sequence[int], sizes: Sequence[int]) -> str:
    return ",".join(f"{m}x{g}" for m, g in zip(counts, sizes))


@dataclass(frozen=True, eq=False)
class SDNetwork:
    """Immutable SDN. ``layers[h-1]`` maps activation layer h-1 to pre-activation h."""

    layers: tuple
    group_sizes: tuple
    group_counts: tuple
    alpha: float = 2.0
    input_bounds: Optional[Box] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "group_sizes", tuple(int(g) for g in self.group_sizes))
        object.__setattr__(self, "group_counts", tuple(int(m) for m in self.group_counts))
        if len(self.group_sizes) != len(layers) - 1 or len(self.group_counts) != len(layers) - 1:
            raise ValueError("need one group spec per hidden layer")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        for h, amap in enumerate(layers):
            if amap.source != h or amap.target != h + 1:
                raise ValueError(f"layer {h} connects {amap.source}->{amap.target}")
            if h and amap.in_dim != layers[h - 1].out_dim:
                raise ValueError(f"layer {h} input width does not chain")
        for h, (m, g) in enumerate(zip(self.group_counts, self.group_sizes)):
            if layers[h].out_dim != m * g:
                raise ValueError(
                    f"hidden layer {h + 1} width {layers[h].out_dim} != {m}x{g}")
        if self.input_bounds is None:
            object.__setattr__(self, "input_bounds", Box.cube(self.input_dim, 0.0, 1.0))
        elif self.input_bounds.dim != self.input_dim:
            raise ValueError("input bounds dimension mismatch")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_hidden(self) -> int:
        return len(self.layers) - 1

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [a.out_dim for a in self.layers]

    @classmethod
    def from_params(cls, params, group_sizes, group_counts, alpha=2.0,
                    input_bounds=None, meta=None) -> "SDNetwork":
        layers = tuple(AffineMap(w, b, h, h + 1) for h, (w, b) in enumerate(params))
        return cls(layers, group_sizes, group_counts, alpha, input_bounds, meta or {})

    def params(self, dtype=np.float64) -> list:
        return [(np.array(a.weights, dtype=dtype), np.array(a.biases, dtype=dtype))
                for a in self.layers]

    # -- serialization -------------------------------------------------
    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "group_size": list(self.group_sizes),
            "group_count": list(self.group_counts),
            "layers": [{"weights": a.weights.tolist(), "biases": a.biases.tolist()}
                       for a in self.layers],
            "classes": self.n_classes,
            "input_bounds": self.input_bounds.to_json(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SDNetwork":
        params = [(np.asarray(l["weights"], dtype=np.float64).reshape(len(l["weights"]), -1),
                   l["biases"]) for l in obj["layers"]]
        net = cls.from_params(params, obj["group_size"], obj["group_count"],
                              obj["alpha"], Box.from_json(obj["input_bounds"]),
                              obj.get("meta", {}))
        if int(obj.get("classes", net.n_classes)) != net.n_classes:
            raise ValueError("'classes' disagrees with the output layer width")
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "SDNetwork":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def init_params(widths: Sequence[int], rng: np.random.Generator, dtype=np.float32):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        k = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-k, k, size=(fan_in, fan_out)).astype(dtype)
        b = rng.uniform(-k, k, size=fan_out).astype(dtype)
        params.append((w, b))
    return params


# -- doors ---------------------------------------------------------------

def door_indices(z: np.ndarray, group_size: int):
    """Batched door search over rows of ``z``; returns ``(active, inactive)``
    index arrays with ``ABSENT`` where no group qualifies."""
    z = np.atleast_2d(z)
    if z.shape[1] % group_size:
        raise ValueError(f"width {z.shape[1]} not divisible by group size {group_size}")
    grouped = z.reshape(z.shape[0], z.shape[1] // group_size, group_size)
    all_pos = np.all(grouped > 0, axis=2)
    all_neg = np.all(grouped < 0, axis=2)
    active = np.where(all_pos.any(axis=1), all_pos.argmax(axis=1), ABSENT)
    inactive = np.where(all_neg.any(axis=1), all_neg.argmax(axis=1), ABSENT)
    return active, inactive


def assign_doors(preactivations, group_size: int) -> DoorAssignment:
    z = np.asarray(preactivations, dtype=np.float64).reshape(1, -1)
    a, i = door_indices(z, group_size)
    return DoorAssignment(None if a[0] == ABSENT else int(a[0]),
                          None if i[0] == ABSENT else int(i[0]))


def door_scales(active, inactive, group_count: int, group_size: int,
                alpha: float, dtype=np.float64) -> np.ndarray:
    """Per-neuron SDA multipliers (``alpha``, ``0`` or ``1``) for each row."""
    active = np.atleast_1d(active)
    inactive = np.atleast_1d(inactive)
    groups = np.arange(group_count)
    s = np.ones((active.shape[0], group_count), dtype=dtype)
    s[groups[None, :] == active[:, None]] = alpha
    s[groups[None, :] == inactive[:, None]] = 0
    return np.repeat(s, group_size, axis=1)


def sda_forward(preactivations, doors: DoorAssignment, alpha: float,
                group_size: int) -> np.ndarray:
    z = np.asarray(preactivations, dtype=np.float64)
    m = z.shape[-1] // group_size
    a = ABSENT if doors.active is None else doors.active
    i = ABSENT if doors.inactive is None else doors.inactive
    return z * door_scales([a], [i], m, group_size, alpha)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardTrace:
    """Everything a batched forward pass produces."""

    logits: np.ndarray
    active: np.ndarray      # (batch, hidden layers)
    inactive: np.ndarray
    preacts: list
    acts: list
    scales: list

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=1)

    @property
    def doors(self) -> np.ndarray:
        """``(batch, hidden, 2)`` array of (active, inactive) door indices."""
        return np.stack([self.active, self.inactive], axis=2)


def forward_params(params, group_sizes, group_counts, alpha, X) -> ForwardTrace:
    a = np.asarray(X)
    n = a.shape[0]
    acts, preacts, scales = [a], [], []
    actives = np.empty((n, len(group_sizes)), dtype=np.int64)
    inactives = np.empty_like(actives)
    for h, (w, b) in enumerate(params[:-1]):
        z = a @ w + b
        act, inact = door_indices(z, group_sizes[h])
        s = door_scales(act, inact, group_counts[h], group_sizes[h], alpha, z.dtype)
        a = z * s
        actives[:, h], inactives[:, h] = act, inact
        preacts.append(z)
        scales.append(s)
        acts.append(a)
    w, b = params[-1]
    logits = a @ w + b
    if not np.all(np.isfinite(logits)):
        raise TrainingDivergence("non-finite activations in forward pass")
    return ForwardTrace(logits, actives, inactives, preacts, acts, scales)


def forward_batch(net: SDNetwork, X) -> ForwardTrace:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.input_dim:
        raise ValueError(f"input width {X.shape[1]} != network input {net.input_dim}")
    return forward_params(net.params(), net.group_sizes, net.group_counts, net.alpha, X)


def forward(net: SDNetwork, x):
    """Single-input forward pass: ``(softmax scores, pattern)``.

    The pattern is a tuple of ``(active, inactive)`` per hidden layer with
    ``None`` for a missing door.
    """
    from .rulemap import ActivationPattern

    tr = forward_batch(net, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return softmax(tr.logits)[0], ActivationPattern.from_doors(tr.doors[0])


def predict(net: SDNetwork, X) -> np.ndarray:
    return forward_batch(net, X).predictions


# -- loss ----------------------------------------------------------------

def door_penalty(z: np.ndarray, group_size: int, active, inactive):
    """Door-absence penalty per row and its gradient with respect to ``z``.

    When the active door is missing, the group with the most positive
    neurons has its negative neurons pushed up; symmetrically for a
    missing inactive door.
    """
    n = z.shape[0]
    grouped = z.reshape(n, z.shape[1] // group_size, group_size)
    rows = np.arange(n)
    grad = np.zeros_like(grouped)
    pen = np.zeros(n, dtype=z.dtype)

    miss_a = active == ABSENT
    if miss_a.any():
        g_alpha = (grouped > 0).sum(axis=2).argmax(axis=1)
        sel = grouped[rows, g_alpha]
        neg = (sel < 0) & miss_a[:, None]
        pen += np.where(neg, -sel, 0).sum(axis=1)
        grad[rows, g_alpha] -= neg
    miss_i = inactive == ABSENT
    if miss_i.any():
        g_beta = (grouped < 0).sum(axis=2).argmax(axis=1)
        sel = grouped[rows, g_beta]
        pos = (sel > 0) & miss_i[:, None]
        pen += np.where(pos, sel, 0).sum(axis=1)
        grad[rows, g_beta] += pos
    return pen, grad.reshape(z.shape)


def loss_and_grads(params, group_sizes, group_counts, alpha, X, y,
                   lam: float = 0.01, loss_kind: str = "cross_entropy"):
    """Batch-mean loss and analytic gradients ``[(dW, db), ...]``.

    Door assignments are held fixed inside a step, so the SDA derivative
    is ``alpha`` on the active door, ``0`` on the inactive door and ``1``
    elsewhere.
    """
    tr = forward_params(params, group_sizes, group_counts, alpha, X)
    n = X.shape[0]
    probs = softmax(tr.logits)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1
    if loss_kind == "cross_entropy":
        p_true = np.clip(probs[np.arange(n), y], 1e-300, None)
        data = -np.log(p_true).mean()
        dlogits = (probs - onehot) / n
    else:
        diff = probs - onehot
        data = (diff ** 2).sum(axis=1).mean()
        dp = 2 * diff / n
        dlogits = probs * (dp - (dp * probs).sum(axis=1, keepdims=True))

    reg = 0.0
    pen_grads = []
    for h, z in enumerate(tr.preacts):
        pen, g = door_penalty(z, group_sizes[h], tr.active[:, h], tr.inactive[:, h])
        reg += pen.mean()
        pen_grads.append(g)
    total = float(data + lam * reg)
    if not np.isfinite(total):
        raise TrainingDivergence("non-finite loss")

    grads = [None] * len(params)
    w, _ = params[-1]
    grads[-1] = (tr.acts[-1].T @ dlogits, dlogits.sum(axis=0))
    da = dlogits @ w.T
    for h in range(len(params) - 2, -1, -1):
        dz = da * tr.scales[h] + (lam / n) * pen_grads[h]
        grads[h] = (tr.acts[h].T @ dz, dz.sum(axis=0))
        if h:
            da = dz @ params[h][0].T
    return total, grads, tr


def loss(net: SDNetwork, X, y, config: Optional[TrainConfig] = None) -> float:
    config = config or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    total, _, _ = loss_and_grads(net.params(), net.group_sizes, net.group_counts,
                                 net.alpha, X, np.asarray(y), config.lam,
                                 config.loss_kind)
    return total


# -- training --------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for pair in params for p in pair]
        self.v = [np.zeros_like(p) for pair in params for p in pair]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        flat_p = [p for pair in params for p in pair]
        flat_g = [g for pair in grads for g in pair]
        for k, (p, g) in enumerate(zip(flat_p, flat_g)):
            self.m[k] *= self.b1
            self.m[k] += (1 - self.b1) * g
            self.v[k] *= self.b2
            self.v[k] += (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    sat_rate: float


def train(config: TrainConfig, X, y, group_counts, group_sizes, alpha: float = 2.0,
          n_classes: Optional[int] = None, input_bounds: Optional[Box] = None,
          callback=None):
    """Train an SDN with Adam; returns ``(network, epoch_records)``.

    Accuracy and sat-rate in the records are accumulated over each epoch's
    mini-batches. Deterministic for a fixed ``config.seed``.
    """
    dtype = np.dtype(config.dtype)
    X = np.asarray(X, dtype=dtype)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (n, d) array with n labels")
    n_classes = int(n_classes or y.max() + 1)
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels out of range")
    widths = [X.shape[1]] + [m * g for m, g in zip(group_counts, group_sizes)] + [n_classes]
    rng = np.random.default_rng(config.seed)
    params = init_params(widths, rng, dtype)
    opt = Adam(params, config.learning_rate, config.betas, config.eps)
    history = []
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        tot_loss = correct = sat = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                value, grads, tr = loss_and_grads(
                    params, group_sizes, group_counts, alpha, X[idx], y[idx],
                    config.lam, config.loss_kind)
            except TrainingDivergence as exc:
                raise TrainingDivergence(str(exc), epoch) from None
            opt.step(params, grads)
            tot_loss += value * len(idx)
            correct += (tr.predictions == y[idx]).sum()
            if group_counts:
                sat += ((tr.active != ABSENT) & (tr.inactive != ABSENT)).mean(axis=1).sum()
        rec = EpochRecord(epoch, tot_loss / n, correct / n,
                          sat / n if group_counts else 1.0)
        history.append(rec)
        if callback is not None:
            callback(rec)
        if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
            log.info("epoch %d loss %.4f acc %.4f sat %.4f", epoch, rec.loss,
                     rec.accuracy, rec.sat_rate)
    meta = {"train_config": asdict(config), "arch": format_arch(group_counts, group_sizes),
            "version": __version__}
    meta["train_config"]["betas"] = list(config.betas)
    net = SDNetwork.from_params([(w.astype(np.float64), b.astype(np.float64))
                                 for w, b in params],
                                group_sizes, group_counts, alpha, input_bounds, meta)
    return net, history


def write_training_log(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "accuracy", "sat_rate"])
        for r in history:
            w.writerow([r.epoch, f"{r.loss:.8g}", f"{r.accuracy:.8g}", f"{r.sat_rate:.8g}"])


# -- metrics ---------------------------------------------------------------

def sat_rate(net: SDNetwork, X, batch: int = 8192) -> float:
    """Fraction of (sample, hidden layer) pairs that have both doors."""
    X = np.atleast_2d(X)
    if net.n_hidden == 0 or X.shape[0] == 0:
        return 1.0 if net.n_hidden == 0 else 0.0
    hits = 0
    for s in range(0, X.shape[0], batch):
        tr = forward_batch(net, X[s:s + batch])
        hits += ((tr.active != ABSENT) & (tr.inactive != ABSENT)).sum()
    return float(hits / (X.shape[0] * net.n_hidden))


def accuracy(net: SDNetwork, X, y, batch: int = 8192) -> float:
    X = np.atleast_2d(X)
    y = np.asarray(y)
    correct = 0
    for s in range(0, X.shape[0], batch):
        correct += (forward_batch(net, X[s:s + batch]).predictions == y[s:s + batch]).sum()
    return float(correct / X.shape[0])
