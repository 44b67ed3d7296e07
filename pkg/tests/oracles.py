"""Independent brute-force reference implementations used by the tests.

Each oracle recomputes a quantity the straightforward way (explicit loops,
exhaustive sweeps, finite differences) without sharing code with the
package, so agreement is evidence that the fast paths are right.
"""

from __future__ import annotations

import itertools

import numba
import numpy as np

UNKNOWN, FREE, OCCUPIED = 0, 1, 2


# -- voxel filter convolution --------------------------------------------------

def box_offsets(boxes, joint, k):
    """Explicit offsets of inclusive boxes, joint-relative, turned ``k`` quarter turns."""
    cells = []
    for (x0, x1), (y0, y1), (z0, z1) in boxes:
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                for z in range(z0, z1 + 1):
                    cells.append((x - joint[0], y - joint[1], z - joint[2]))
    rot = np.linalg.matrix_power(np.array([[0, -1], [1, 0]]), k % 4)
    out = np.array(cells, dtype=np.int64).reshape(-1, 3)
    out[:, :2] = out[:, :2] @ rot.T
    return out


@numba.njit(cache=True)
def _state(cells, x, y, z):
    nx, ny, nz = cells.shape
    if x < 0 or y < 0 or z < 0 or x >= nx or y >= ny or z >= nz:
        return 0
    return cells[x, y, z]


@numba.njit(cache=True)
def _brute_convolve(cells, sup, surf, fs):
    nx, ny, nz = cells.shape
    resp = np.zeros((nx, ny, nz))
    unk = np.zeros((nx, ny, nz))
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                failed = False
                undecided = False
                for i in range(sup.shape[0]):
                    s = _state(cells, x + sup[i, 0], y + sup[i, 1], z + sup[i, 2])
                    if s == 1:
                        failed = True
                    elif s == 0:
                        undecided = True
                for i in range(surf.shape[0]):
                    s = _state(cells, x + surf[i, 0], y + surf[i, 1], z + surf[i, 2])
                    if s == 2:
                        failed = True
                    elif s == 0:
                        undecided = True
                if failed:
                    continue
                if undecided:
                    unk[x, y, z] = 1.0
                    continue
                n_free = 0
                n_unk = 0
                for i in range(fs.shape[0]):
                    s = _state(cells, x + fs[i, 0], y + fs[i, 1], z + fs[i, 2])
                    if s == 1:
                        n_free += 1
                    elif s == 0:
                        n_unk += 1
                resp[x, y, z] = n_free / fs.shape[0]
                unk[x, y, z] = n_unk / fs.shape[0]
    return resp, unk


def brute_force_filter(cells, pose, k):
    """(response, unknown_fraction) of ``pose`` turned ``k`` quarter turns, by direct lookup."""
    args = [box_offsets(getattr(pose, f"{kind}_boxes"), pose.contact_joint, k)
            for kind in ("support", "surface", "freespace")]
    return _brute_convolve(np.ascontiguousarray(cells, dtype=np.uint8), *args)


# -- occupancy fill ------------------------------------------------------------

def brute_force_fill(cells, seed):
    """Column fill from the top: UNKNOWN below a seed becomes OCCUPIED until a known cell."""
    out = np.array(cells, copy=True)
    nx, ny, nz = out.shape
    for x in range(nx):
        for y in range(ny):
            active = False
            for z in reversed(range(nz)):
                if seed[x, y, z]:
                    active = True
                elif out[x, y, z] == UNKNOWN:
                    if active:
                        out[x, y, z] = OCCUPIED
                else:
                    active = False
    return out


# -- evaluation ----------------------------------------------------------------

def brute_force_pr(scores, positive):
    """(thresholds descending, recall, precision) at every distinct score."""
    s = np.asarray(scores, float).ravel()
    y = np.asarray(positive, bool).ravel()
    thresholds = sorted(set(s.tolist()), reverse=True)
    n_pos = int(y.sum())
    rec, prec = [], []
    for t in thresholds:
        tp = fp = 0
        for v, lab in zip(s, y):
            if v >= t:
                if lab:
                    tp += 1
                else:
                    fp += 1
        rec.append(tp / n_pos)
        prec.append(tp / (tp + fp))
    return np.array(thresholds), np.array(rec), np.array(prec)


def brute_force_ap(scores, positive):
    """Sum over thresholds of recall gain times precision."""
    _, rec, prec = brute_force_pr(scores, positive)
    ap, last = 0.0, 0.0
    for r, p in zip(rec, prec):
        ap += (r - last) * p
        last = r
    return ap


def brute_force_jaccard_threshold(scores, positive):
    """Lowest observed score among those maximising |pred & truth| / |pred | truth|."""
    s = np.asarray(scores, float).ravel()
    y = np.asarray(positive, bool).ravel()
    best_t, best_j = None, -1.0
    for t in sorted(set(s.tolist())):
        pred = s >= t
        union = int(np.sum(pred | y))
        j = int(np.sum(pred & y)) / union if union else 0.0
        if j > best_j:
            best_t, best_j = t, j
    return best_t, best_j


# -- mid-level transfer --------------------------------------------------------

def brute_force_transfer(image_shape, levels, dets, g, cell):
    """Paste every detection's form pixel by pixel and take the weighted mean."""
    h, w = image_shape
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for li, lev in enumerate(levels):
        for el, maps in dets:
            S = maps[li]
            for i, j in zip(*np.nonzero(S)):
                for py in range(h):
                    r = int(np.floor((py + 0.5) * lev.scale)) // cell - i
                    if not 0 <= r < g:
                        continue
                    for px in range(w):
                        c = int(np.floor((px + 0.5) * lev.scale)) // cell - j
                        if 0 <= c < g:
                            num[py, px] += S[i, j] * el.F[r, c]
                            den[py, px] += S[i, j]
    out = np.full((h, w), 0.5)
    m = den > 0
    out[m] = num[m] / den[m]
    return out


# -- calculus ------------------------------------------------------------------

def central_difference(f, x, step=1e-4):
    """Numerical gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, float)
    grad = np.zeros_like(x)
    for idx in itertools.product(*map(range, x.shape)):
        e = np.zeros_like(x)
        e[idx] = step
        grad[idx] = (f(x + e) - f(x - e)) / (2 * step)
    return grad


def logistic_loss(X, w, b, target):
    """Summed cross-entropy over cells with target >= 0, written out term by term."""
    total = 0.0
    for x, t in zip(X.reshape(-1, X.shape[-1]), np.asarray(target).ravel()):
        if t < 0:
            continue
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        total -= np.log(p) if t == 1 else np.log(1.0 - p)
    return total
