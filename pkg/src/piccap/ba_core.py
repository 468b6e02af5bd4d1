"""Finite-support input distributions, mutual information and Blahut-Arimoto.

All public quantities are in bits.  Internally everything is computed in
nats and converted on the way out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._search import grid_then_golden
from .channels import ChannelLaw

LOG2E = 1.0 / math.log(2.0)


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    ``best`` holds whatever the solver had when it gave up.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SupportedDistribution:
    """Mass points ``locations`` (strictly increasing, in [0, 1]) with ``probs``."""

    locations: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).ravel()
        p = np.asarray(self.probs, dtype=float).ravel()
        if loc.shape != p.shape or loc.size == 0:
            raise ValueError("locations and probs must be non-empty and of equal length")
        if np.any(loc < 0.0) or np.any(loc > 1.0):
            raise ValueError("locations must lie in [0, 1]")
        if np.any(np.diff(loc) <= 0.0):
            raise ValueError("locations must be strictly increasing")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs must be a PMF (sum={p.sum()!r})")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "probs", p)

    @classmethod
    def normalized(cls, locations, probs):
        p = np.asarray(probs, dtype=float)
        return cls(locations, p / p.sum())

    @classmethod
    def uniform(cls, locations):
        loc = np.asarray(locations, dtype=float)
        return cls(loc, np.full(loc.size, 1.0 / loc.size))

    def __len__(self):
        return self.locations.size

    def as_pairs(self):
        return list(zip(self.locations.tolist(), self.probs.tolist()))


@dataclass(frozen=True)
class CapacityBounds:
    lower: float
    upper: float

    @property
    def gap(self) -> float:
        return self.upper - self.lower


# --------------------------------------------------------------------------
# Matrix-level kernels (nats)
# --------------------------------------------------------------------------

def _safe_log(q):
    with np.errstate(divide="ignore"):
        return np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), -np.inf)


def kl_rows(W, q, neg_entropy=None):
    """D(W[i] || q) in nats for every row of ``W``."""
    if neg_entropy is None:
        neg_entropy = special.xlogy(W, W).sum(axis=1)
    pos = q > 0
    d = neg_entropy - W[:, pos] @ np.log(q[pos])
    if not np.all(pos):
        unreachable = (W[:, ~pos] > 0).any(axis=1)
        d = np.where(unreachable, np.inf, d)
    return d


def _mi_nats(W, p):
    q = p @ W
    d = kl_rows(W, q)
    nz = p > 0
    return float(p[nz] @ d[nz])


# --------------------------------------------------------------------------
# Public information measures
# --------------------------------------------------------------------------

def output_distribution(channel: ChannelLaw, dist: SupportedDistribution) -> np.ndarray:
    return dist.probs @ channel.matrix(dist.locations)


def mutual_information(channel: ChannelLaw, dist: SupportedDistribution) -> float:
    """I(X; Y) in bits for a finite-support input."""
    return max(0.0, _mi_nats(channel.matrix(dist.locations), dist.probs) * LOG2E)


def kl_to_output(channel: ChannelLaw, x: float, q) -> float:
    """D(p(.|x) || q) in bits; ``inf`` when q misses an output reachable from x."""
    q = np.asarray(q, dtype=float)
    return float(kl_rows(channel.matrix([x]), q)[0] * LOG2E)


def blahut_arimoto_fixed_support(channel: ChannelLaw, locations, tol: float = 1e-9,
                                 max_iter: int = 100_000, init=None, history=None):
    """Blahut-Arimoto over a fixed set of input locations.

    Parameters
    ----------
    channel : ChannelLaw
    locations : array-like
        Input points; probabilities are optimized, locations are not.
    tol : float
        Stop once ``max_i D(p(.|x_i) || q) - I`` is below ``tol`` bits.  The
        left term upper-bounds the fixed-support capacity, so on return
        ``I`` is within ``tol`` of it.
    init : array-like, optional
        Starting PMF (uniform by default).  Entries equal to zero stay zero.
    history : list, optional
        If given, ``I`` (bits) at every iteration is appended.

    Returns
    -------
    probs : ndarray
    I : float
        Mutual information in bits at ``probs``.
    """
    loc = np.asarray(locations, dtype=float)
    W = channel.matrix(loc)
    if init is None:
        p0 = np.full(loc.size, 1.0 / loc.size)
    else:
        p0 = np.asarray(init, dtype=float)
    return ba_matrix(W, p0, tol, max_iter, history)


def ba_matrix(W, p0, tol=1e-9, max_iter=100_000, history=None):
    """Blahut-Arimoto on an explicit transition matrix (rows = inputs)."""
    neg_h = special.xlogy(W, W).sum(axis=1)
    tol_nats = tol / LOG2E
    p = np.asarray(p0, dtype=float)
    p = p / p.sum()
    live = p > 0
    gap = np.inf
    mi = 0.0
    for _ in range(max_iter):
        q = p @ W
        d = kl_rows(W, q, neg_h)
        mi = float(p[live] @ d[live])
        if history is not None:
            history.append(mi * LOG2E)
        d_top = float(np.max(d[live]))
        gap = d_top - mi
        if gap < tol_nats:
            return p, max(mi, 0.0) * LOG2E
        # multiplicative update p_i <- p_i exp(D_i) / Z, shifted for range
        p = p * np.exp(np.where(live, d - d_top, 0.0))
        p /= p.sum()
    raise ConvergenceError(f"Blahut-Arimoto did not converge in {max_iter} iterations "
                           f"(gap {gap * LOG2E:.3g} bits)", best=(p, mi * LOG2E))


def find_x_max(channel: ChannelLaw, q):
    """Maximize D(p(.|x) || q) over x in [0, 1].

    A 2001-point grid locates the best cell, golden-section search refines it
    to width 1e-10.  Returns ``(x_max, D_max)`` with ``D_max`` in bits, which
    upper-bounds the capacity for any valid output distribution ``q``.
    """
    q = np.asarray(q, dtype=float)
    values = kl_rows(channel.grid_matrix, q, channel.grid_neg_entropy)
    if not np.all(np.isfinite(values)):
        i = int(np.argmax(~np.isfinite(values)))
        return float(channel.grid[i]), math.inf

    def f(x):
        return float(kl_rows(channel.matrix([x]), q)[0])

    x, d = grid_then_golden(values, channel.grid, f)
    return x, d * LOG2E


def mi_gradient(channel: ChannelLaw, dist: SupportedDistribution) -> np.ndarray:
    """dI/dx_j for every mass point, in bits per unit of x.

    Uses dI/dx_j = p_j * sum_y dp(y|x_j)/dx * log(p(y|x_j) / q(y)), i.e. p_j
    times the slope of the marginal divergence at fixed q.  At x = 0 or 1 the
    value is a one-sided derivative and may be infinite.
    """
    x = dist.locations
    p = dist.probs
    W = channel.matrix(x)
    q = p @ W
    dW = channel.dmatrix(x)
    logq = _safe_log(q)
    # An exactly-zero p(y|x) is only genuine at x in {0, 1}; in the interior
    # it is an underflow whose contribution p log p vanishes.
    endpoint = ((x == 0.0) | (x == 1.0))[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = dW * (np.log(np.where(W > 0, W, 1.0)) - logq[None, :])
        edge = np.where(endpoint & (dW != 0.0), -np.sign(dW) * np.inf, 0.0)
        terms = np.where(W > 0, np.where(dW == 0.0, 0.0, inner), edge)
    # a massless point may see outputs that q cannot produce; its
    # derivative is zero regardless, so skip the undefined sum
    slope = np.where(p[:, None] > 0, terms, 0.0).sum(axis=1)
    return np.where(p > 0, p * slope, 0.0) * LOG2E


def mi_derivative(channel: ChannelLaw, dist: SupportedDistribution, j: int) -> float:
    return float(mi_gradient(channel, dist)[j])
