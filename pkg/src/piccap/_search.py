"""Scalar maximization helpers shared by the solvers."""

import math

import numpy as np

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo, hi, tol=1e-10, max_iter=200):
    """Maximize a unimodal ``f`` on ``[lo, hi]`` by golden-section search.

    Returns ``(x, f(x))``.  The bracket ends are compared against the interior
    optimum, so a maximum sitting on the boundary is returned exactly.
    """
    a, b = float(lo), float(hi)
    fa, fb = f(a), f(b)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x, fx = (c, fc) if fc >= fd else (d, fd)
    # ties resolve to the smaller x
    if fa >= fx:
        x, fx = float(lo), fa
    if fb > fx:
        x, fx = float(hi), fb
    return x, fx


def grid_then_golden(values, grid, f, tol=1e-10):
    """Refine the best grid point of ``values`` with a golden-section search.

    ``values[i] = f(grid[i])``.  The bracket spans the two neighbouring grid
    cells.  The first (smallest-x) maximizer wins ties.
    """
    i = int(np.argmax(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    x, fx = golden_max(f, lo, hi, tol=tol)
    if values[i] >= fx:
        return float(grid[i]), float(values[i])
    return x, fx


def local_maxima(values):
    """Indices of the (weak) local maxima of a 1-D sequence, ends included."""
    v = np.asarray(values)
    left = np.r_[-np.inf, v[:-1]]
    right = np.r_[v[1:], -np.inf]
    idx = np.flatnonzero((v >= left) & (v > right))
    return idx
