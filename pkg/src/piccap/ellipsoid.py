"""Capacity through its finite-dimensional convex dual, solved by the ellipsoid method.

With one multiplier ``z_y`` per output symbol the capacity is

    min_z  sum_y 2^{-z_y} / e  +  ln 2 * max_x { sum_y z_y P(y|x) - H(Y|X=x) }

where ``H`` is in bits.  That expression is in nats at the optimum (it is
the generalized divergence bound ``sum_y r_y - 1 + max_x D(P(.|x) || r)``
with ``r_y = 2^{-z_y} / e``), so :func:`dual_objective` multiplies it by
``log2(e)`` and reports bits.  At the minimizer ``q_y = 2^{-z_y} / e`` is the
capacity-achieving output distribution and the capacity-achieving inputs
are the maximizers of the inner problem.

This solver is a baseline for cross-checking :mod:`piccap.dab`; it is far
slower.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import nnls

from ._search import golden_max, local_maxima
from .ba_core import LOG2E, SupportedDistribution, mutual_information
from .channels import ChannelLaw

LN2 = math.log(2.0)
# Cold-start ellipsoid radius squared; |z*|^2 stays below this for n <= 25.
DEFAULT_R2 = 400.0
# Maximizers of the inner problem closer than this are one mass point.
CLUSTER_TOL = 1e-4
# The output law 2^{-z}/e is only as accurate as z, which converges like the
# square root of the objective error; an NNLS residual this small means the
# recovered input reproduces it.
CONSISTENCY_TOL = 1e-4
# Floor on pushed-through output probabilities when inverting them to z; an
# output the previous input never produces would otherwise map to z = inf.
Q_FLOOR = 1e-12


class EllipsoidError(RuntimeError):
    """The ellipsoid iteration broke down or hit its iteration cap."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class EllipsoidState:
    """Ellipsoid ``{z : (z - center)^T shape^{-1} (z - center) <= 1}``."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).ravel()
        P = np.asarray(self.shape, dtype=float)
        if P.shape != (c.size, c.size):
            raise ValueError("shape must be a square matrix matching center")
        if not np.all(np.isfinite(c)):
            raise ValueError("center must be finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", P)

    def contains(self, z) -> bool:
        d = np.asarray(z, dtype=float) - self.center
        return float(d @ np.linalg.solve(self.shape, d)) <= 1.0 + 1e-12


@dataclass
class DualSolution:
    z_opt: np.ndarray
    q: np.ndarray
    mass_points: np.ndarray
    input_probs: np.ndarray
    capacity: float
    dual_value: float
    iterations: int
    residual: float
    trace: list = field(default_factory=list)

    @property
    def dist(self) -> SupportedDistribution:
        return SupportedDistribution(self.mass_points, self.input_probs)

    @property
    def consistent(self) -> bool:
        """Whether the recovered input reproduces ``q`` up to :data:`CONSISTENCY_TOL`."""
        return self.residual <= CONSISTENCY_TOL


# --------------------------------------------------------------------------
# Dual function
# --------------------------------------------------------------------------

def _inner_values(channel: ChannelLaw, z):
    """sum_y z_y P(y|x) - H(Y|x) (bits) on the channel's grid."""
    return channel.grid_matrix @ z + channel.grid_neg_entropy * LOG2E


def _inner_at(channel: ChannelLaw, z, x):
    W = channel.matrix(np.atleast_1d(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_h = np.where(W > 0, W * np.log(np.where(W > 0, W, 1.0)), 0.0).sum(axis=1)
    return W @ z + neg_h * LOG2E


def _inner_max(channel: ChannelLaw, z, tol=1e-8):
    """Maximize sum_y z_y P(y|x) - H(Y|x) over x; smallest maximizer wins ties."""
    values = _inner_values(channel, z)
    grid = channel.grid
    i = int(np.argmax(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    x, v = golden_max(lambda t: float(_inner_at(channel, z, t)[0]), lo, hi, tol=tol)
    if values[i] >= v:
        return float(grid[i]), float(values[i])
    return x, v


def dual_objective(z, channel: ChannelLaw) -> float:
    """Dual function at ``z`` in bits; an upper bound on the capacity for every ``z``."""
    z = np.asarray(z, dtype=float)
    _, inner = _inner_max(channel, z)
    return float(np.exp2(-z).sum() / math.e * LOG2E + inner)


def dual_subgradient(z, channel: ChannelLaw) -> np.ndarray:
    """A subgradient of :func:`dual_objective` at ``z``: ``P(.|x*) - 2^{-z} / e``."""
    z = np.asarray(z, dtype=float)
    x_star, _ = _inner_max(channel, z)
    return channel.matrix([x_star])[0] - np.exp2(-z) / math.e


def _objective_and_subgradient(channel, z):
    x_star, inner = _inner_max(channel, z)
    r = np.exp2(-z) / math.e
    value = float(r.sum() * LOG2E + inner)
    return value, channel.matrix([x_star])[0] - r


# --------------------------------------------------------------------------
# Ellipsoid iteration
# --------------------------------------------------------------------------

def ellipsoid_step(state: EllipsoidState, g) -> EllipsoidState:
    """Central-cut update keeping the half ``{z : g^T (z - center) <= 0}``."""
    g = np.asarray(g, dtype=float)
    P = state.shape
    n = g.size
    if n < 2:
        raise ValueError("the ellipsoid method needs dimension at least 2")
    gPg = float(g @ P @ g)
    if not gPg > 0.0 or not math.isfinite(gPg):
        raise EllipsoidError(f"shape matrix lost positive definiteness (g'Pg = {gPg!r})")
    Pg = P @ g / math.sqrt(gPg)
    center = state.center - Pg / (n + 1)
    shape = (n * n / (n * n - 1.0)) * (P - (2.0 / (n + 1)) * np.outer(Pg, Pg))
    shape = 0.5 * (shape + shape.T)
    return EllipsoidState(center, shape)


def solve_dual(channel: ChannelLaw, z0=None, P0=None, tol: float = 1e-6,
               max_iter: int = 1_000_000, record_trace: bool = False) -> DualSolution:
    """Minimize the dual by the ellipsoid method and recover the optimal input.

    Parameters
    ----------
    channel : ChannelLaw
    z0, P0 : optional
        Initial center and shape.  Default to the origin and ``400 * I``.
    tol : float
        Stop once ``sqrt(g^T P g)``, which bounds the objective error, is
        below ``tol`` bits.
    record_trace : bool
        Keep ``(iteration, dual value, sqrt(g^T P g))`` for every step.

    Raises
    ------
    EllipsoidError
        On shape-matrix breakdown or when ``max_iter`` is reached.
    """
    dim = channel.n_outputs
    z = np.zeros(dim) if z0 is None else np.asarray(z0, dtype=float)
    P = DEFAULT_R2 * np.eye(dim) if P0 is None else np.asarray(P0, dtype=float)
    state = EllipsoidState(z, P)
    best_val, best_z = math.inf, state.center
    trace = []
    for k in range(1, max_iter + 1):
        value, g = _objective_and_subgradient(channel, state.center)
        if value < best_val:
            best_val, best_z = value, state.center
        width = math.sqrt(max(float(g @ state.shape @ g), 0.0))
        if record_trace:
            trace.append((k, value, width))
        if width < tol:
            return _recover(channel, best_z, best_val, k, trace)
        state = ellipsoid_step(state, g)
    raise EllipsoidError(f"ellipsoid method did not converge in {max_iter} iterations",
                         best=best_z)


def _maximizers(channel: ChannelLaw, z, slack):
    """All near-maximizers of the inner problem, refined and clustered."""
    values = _inner_values(channel, z)
    grid = channel.grid
    top = values.max()
    cands = []
    for i in local_maxima(values):
        if values[i] < top - slack:
            continue
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        x, v = golden_max(lambda t: float(_inner_at(channel, z, t)[0]), lo, hi, tol=1e-10)
        if values[i] >= v:
            x, v = float(grid[i]), float(values[i])
        cands.append((x, v))
    cands.sort()
    points = []
    for x, v in cands:
        if points and x - points[-1][-1][0] < CLUSTER_TOL:
            points[-1].append((x, v))
        else:
            points.append([(x, v)])
    out = []
    for cl in points:
        xs = np.array([c[0] for c in cl])
        vs = np.array([c[1] for c in cl])
        w = vs - vs.min() + 1e-300
        out.append(float(np.clip((xs * w).sum() / w.sum(), 0.0, 1.0)))
    return np.array(sorted(set(out)))


def _recover(channel, z, value, iterations, trace, slack=1e-3):
    q = np.exp2(-z) / math.e
    q_target = q / q.sum()
    A = _maximizers(channel, z, slack)
    W = channel.matrix(A)
    # overdetermined: one equation per output plus normalization
    M = np.vstack([W.T, np.ones(A.size)])
    rhs = np.r_[q_target, 1.0]
    p, residual = nnls(M, rhs)
    keep = p > 1e-9
    A, p = A[keep], p[keep] / p[keep].sum()
    dist = SupportedDistribution(A, p)
    return DualSolution(
        z_opt=z, q=q, mass_points=A, input_probs=p,
        capacity=mutual_information(channel, dist), dual_value=value,
        iterations=iterations, residual=float(residual), trace=trace)


def warm_start_z(previous: DualSolution, channel_next: ChannelLaw):
    """Initial ``(z0, P0)`` for the next channel of a family.

    The previous optimal input is pushed through the new channel and the
    resulting output law inverted via ``z_y = -log2(e q_y)``; the shape
    starts at the identity.  Outputs the previous input cannot produce are
    floored at :data:`Q_FLOOR`, which leaves the start far from the optimum
    in those coordinates; such starts should use a larger ``P0``.
    """
    q = previous.input_probs @ channel_next.matrix(previous.mass_points)
    q = np.maximum(q, Q_FLOOR)
    z0 = -np.log2(math.e * q)
    return z0, np.eye(z0.size)
