"""Independent reference computations used by the tests.

Nothing here calls into the code under test except to evaluate a forward
function; gradients and metrics are recomputed from first principles.
"""

from __future__ import annotations

import numpy as np


def matmul_loops(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def pairwise_auc(scores, labels) -> float:
    """O(n_pos * n_neg) Mann-Whitney count with ties worth one half."""
    s = np.asarray(scores, float)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    # integer numerator keeps the division exact up to float rounding
    return float((2 * int(wins) + int(ties)) / (2 * len(pos) * len(neg)))


def central_difference(f, arrays: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """d f / d arrays[name][idx] for every element, by (f(x+h) - f(x-h)) / 2h.

    ``f`` takes no arguments and reads ``arrays`` in place. The result keeps
    the arrays' dtype, so extended-precision inputs give an extended-precision
    estimate.
    """
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor); the floor only matters for near-zero pairs."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
