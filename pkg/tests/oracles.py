"""Independent oracles shared by the test modules."""
import numpy as np

from sdnverify.sdn import forward_batch, loss_and_grads
from sdnverify.rulemap import pattern_numbers


def labels(net, X):
    """(class, pattern number) of each row, via a plain forward pass."""
    tr = forward_batch(net, X)
    return tr.predictions, pattern_numbers(tr.doors, net.group_counts)


def exact_ties(net, X):
    """Rows lying exactly on a zero pre-activation or a tied top logit.

    Such points carry measure-zero labels (a group that is neither positive
    nor negative, say) and are not evidence of a region.
    """
    tr = forward_batch(net, X)
    tie = np.zeros(len(X), dtype=bool)
    for z in tr.preacts:
        tie |= np.any(z == 0, axis=1)
    top = np.sort(tr.logits, axis=1)
    return tie | (top[:, -1] == top[:, -2])


def grid_points(box, res, nodes=False):
    """res x res lattice over a 2D box: cell centres, or with ``nodes`` an
    evenly spaced lattice that includes the box edges."""
    if nodes:
        xs = [np.linspace(box.lower[d], box.upper[d], res) for d in range(2)]
    else:
        xs = [box.lower[d] + (np.arange(res) + 0.5) * (box.upper[d] - box.lower[d]) / res
              for d in range(2)]
    gx, gy = np.meshgrid(xs[0], xs[1], indexing="ij")
    return np.stack([gx, gy], axis=-1)


def _bisect_changes(net, a, b, tol, edges, vertices, witnesses):
    """Bisect segments whose end labels differ until each change is pinned.

    ``a`` and ``b`` are rows ``(x, y, class, pattern, segment id)``. Returns
    the ids of segments on which some third label showed up in between.
    """
    sandwiched = set()
    while len(a):
        pa, pb = a[:, :2], b[:, :2]
        done = np.abs(pb - pa).max(axis=1) < tol
        for x, y, p in zip(a[done, 2:4].astype(np.int64), b[done, 2:4].astype(np.int64),
                           pa[done]):
            u, v = tuple(map(int, x)), tuple(map(int, y))
            vertices.update((u, v))
            edges.add(frozenset((u, v)))
            if witnesses is not None:
                witnesses.setdefault(frozenset((u, v)), []).append(p)
        a, b = a[~done], b[~done]
        if not len(a):
            break
        mid = 0.5 * (a[:, :2] + b[:, :2])
        tie = exact_ties(net, mid)
        if tie.any():
            # step off the exact boundary; the split stays strictly inside
            t = 0.5 + 1.0 / 1031
            mid[tie] = a[tie, :2] + t * (b[tie, :2] - a[tie, :2])
        mc, mn = labels(net, mid)
        ml = np.stack([mc, mn.astype(np.int64)], axis=1).astype(float)
        eq_a = np.all(ml == a[:, 2:4], axis=1)
        eq_b = np.all(ml == b[:, 2:4], axis=1)
        m_rows = np.concatenate([mid, ml, a[:, 4:]], axis=1)
        keep_b = eq_a                   # (mid, b)
        keep_a = ~eq_a & eq_b           # (a, mid)
        split = ~eq_a & ~eq_b           # (a, mid) and (mid, b)
        sandwiched.update(a[split, 4].astype(np.int64).tolist())
        a, b = (np.concatenate([m_rows[keep_b], a[keep_a], a[split], m_rows[split]]),
                np.concatenate([b[keep_b], m_rows[keep_a], m_rows[split], b[split]]))
    return sandwiched


def _lattice_pairs(G, lab):
    """Rows for every 4-neighbour pair of a (k, n, n, 2) lattice stack whose
    labels differ, plus for each row the (k, i, j) cells on both sides."""
    A, B, cells = [], [], []
    k, n = G.shape[0], G.shape[1]
    K, I, J = np.meshgrid(np.arange(k), np.arange(n), np.arange(n), indexing="ij")
    for axis in (1, 2):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
        lo3, hi3 = tuple(lo[:3]), tuple(hi[:3])
        la, lb = lab[tuple(lo)], lab[tuple(hi)]
        diff = np.any(la != lb, axis=-1)
        A.append(np.concatenate([G[tuple(lo)][diff], la[diff]], axis=1))
        B.append(np.concatenate([G[tuple(hi)][diff], lb[diff]], axis=1))
        kk, ii, jj = K[lo3][diff], I[lo3][diff], J[lo3][diff]
        # the segment from (i, j) along ``axis`` borders cells (i, j) and
        # (i, j-1) for axis 1, (i, j) and (i-1, j) for axis 2
        side = (ii, jj - 1) if axis == 1 else (ii - 1, jj)
        cells.append(np.stack([kk, ii, jj, kk, side[0], side[1]], axis=1))
    A, B, cells = np.concatenate(A), np.concatenate(B), np.concatenate(cells)
    ids = np.arange(len(A), dtype=float)[:, None]
    return np.hstack([A, ids]), np.hstack([B, ids]), cells


def _junctions(lab):
    """Mask of lattice cells whose four corners carry at least three labels."""
    code = lab[..., 0] + 1j * lab[..., 1]
    c = np.stack([code[..., :-1, :-1], code[..., 1:, :-1], code[..., :-1, 1:],
                  code[..., 1:, 1:]], axis=-1)
    distinct = 1 + sum(np.all(c[..., i:i + 1] != c[..., :i], axis=-1).astype(int)
                       for i in range(1, 4))
    return distinct >= 3


def _label_lattice(net, L, h):
    """Label a lattice stack, first nudging nodes that sit on an exact tie
    a small fraction of a cell into the lattice interior."""
    P = L.reshape(-1, 2).copy()
    tie = exact_ties(net, P)
    if tie.any():
        P[tie] += np.array([h[0] / 1031, h[1] / 1033])
        P[tie] = np.minimum(P[tie], net.input_bounds.upper)
        L = P.reshape(L.shape)
    cls, num = labels(net, P)
    lab = np.stack([cls, num.astype(np.int64)], axis=1).reshape(L.shape).astype(float)
    return L, lab


def grid_adjacency(net, res=500, tol=1e-10, witnesses=None, refine=True,
                   min_cell=1e-6, sub=5):
    """Region adjacency seen on a res x res lattice spanning the input box.

    Every pair of 4-neighbour cells with different (class, pattern) labels
    is refined by bisection on the segment joining them until each label
    change is pinned within ``tol``; only the label pairs that meet at such
    a pinned change become edges. With ``refine``, every grid cell whose
    corners carry three or more labels (where several boundaries meet and a
    shared stretch can be shorter than the grid spacing) is split into a
    ``sub`` x ``sub`` lattice and scanned the same way, recursively, until
    cells are smaller than ``min_cell``. Points on exact ties are moved
    off them. Only forward passes are used. Returns ``(vertex idents, edges)``.
    """
    G = grid_points(net.input_bounds, res, nodes=True)
    h = np.array([G[1, 0, 0] - G[0, 0, 0], G[0, 1, 1] - G[0, 0, 1]], dtype=float)
    L, lab = _label_lattice(net, G[None], h)
    vertices = {tuple(map(int, t)) for t in lab.reshape(-1, 2)}
    edges = set()
    frac = np.linspace(0.0, 1.0, sub)
    while True:
        a, b, cells = _lattice_pairs(L, lab)
        hit = _bisect_changes(net, a, b, tol, edges, vertices, witnesses)
        if not refine or h.max() < min_cell:
            break
        mask = _junctions(lab)
        n = L.shape[1]
        for row in cells[sorted(hit)] if hit else []:
            for kk, ii, jj in (row[:3], row[3:]):
                if 0 <= ii < n - 1 and 0 <= jj < n - 1:
                    mask[kk, ii, jj] = True
        corner = L[:, :-1, :-1][mask]
        if not len(corner):
            break
        gx, gy = np.meshgrid(frac * h[0], frac * h[1], indexing="ij")
        L = corner[:, None, None, :] + np.stack([gx, gy], axis=-1)[None]
        L, lab = _label_lattice(net, L, h / (sub - 1))
        vertices.update(tuple(map(int, t)) for t in lab.reshape(-1, 2))
        h = h / (sub - 1)
    return vertices, edges


def numeric_grads(params, sizes, counts, X, y, lam, kind, h=1e-6):
    """Central differences of the batch loss over every parameter entry."""
    out = []
    for w, b in params:
        gw, gb = np.zeros_like(w), np.zeros_like(b)
        for arr, g in ((w, gw), (b, gb)):
            for idx in np.ndindex(arr.shape):
                keep = arr[idx]
                arr[idx] = keep + h
                up, _, _ = loss_and_grads(params, sizes, counts, 2.0, X, y, lam, kind)
                arr[idx] = keep - h
                down, _, _ = loss_and_grads(params, sizes, counts, 2.0, X, y, lam, kind)
                arr[idx] = keep
                g[idx] = (up - down) / (2 * h)
        out.append((gw, gb))
    return out


def grad_relative_error(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(t) for pair in analytic for t in pair])
    n = np.concatenate([np.ravel(t) for pair in numeric for t in pair])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))
