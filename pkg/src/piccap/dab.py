"""Dynamic Assignment Blahut-Arimoto.

The outer loop alternates a Blahut-Arimoto pass over the current mass-point
locations with a move of the locations along a chosen direction, adding a
mass point whenever the current count cannot close the gap.  Termination is
certified by the divergence upper bound: for the output distribution ``q``
induced by the current input, ``max_x D(p(.|x) || q)`` bounds the capacity
from above, while the Blahut-Arimoto value bounds it from below.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .ba_core import (
    LOG2E,
    CapacityBounds,
    ConvergenceError,
    SupportedDistribution,
    _mi_nats,
    blahut_arimoto_fixed_support,
    find_x_max,
    mi_gradient,
    mutual_information,
)
from .channels import ChannelLaw

logger = logging.getLogger(__name__)

STRATEGIES = ("proximity_to_xmax", "max_derivative", "round_robin", "gradient")
BIRTH_RULES = ("missing_mass_point", "minimum_derivative", "negligible_rate")
BIRTH_PLACEMENTS = ("auto", "center")


class DabError(RuntimeError):
    """DAB stopped without certifying the capacity.

    Carries the best bounds and distribution reached so far.
    """

    def __init__(self, message, bounds=None, dist=None, iterations=0):
        super().__init__(message)
        self.bounds = bounds
        self.dist = dist
        self.iterations = iterations


@dataclass(frozen=True)
class DabConfig:
    epsilon: float = 1e-6
    direction_strategy: str = "max_derivative"
    birth_rule: str = "negligible_rate"
    symmetric: bool = False
    max_support: int = 128
    line_search_tol: float = 1e-10
    merge_tol: float = 1e-7
    prob_floor: float = 1e-9
    max_iter: int = 5000
    ba_max_iter: int = 5000   # inner cap; a partial BA pass is still a valid lower bound
    ba_tol: Optional[float] = None  # defaults to min(1e-9, epsilon / 100)
    split_offset: float = 1e-3
    rate_fraction: float = 0.01     # negligible_rate: dI < rate_fraction * epsilon ...
    stall_fraction: float = 1e-2    # ... and dI < stall_fraction * gap**2
    derivative_fraction: float = 0.1  # minimum_derivative: max|dI/dx| < fraction * gap
    pin_endpoints: bool = True
    birth_placement: str = "auto"   # "auto" or "center"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.direction_strategy not in STRATEGIES:
            raise ValueError(f"unknown direction strategy {self.direction_strategy!r}")
        if self.birth_rule not in BIRTH_RULES:
            raise ValueError(f"unknown birth rule {self.birth_rule!r}")
        for name in ("line_search_tol", "merge_tol", "prob_floor", "split_offset"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.birth_placement not in BIRTH_PLACEMENTS:
            raise ValueError(f"unknown birth placement {self.birth_placement!r}")
        if self.max_support < 2:
            raise ValueError("max_support must be at least 2")

    @property
    def inner_tol(self) -> float:
        return self.ba_tol if self.ba_tol is not None else min(1e-9, self.epsilon / 100)


@dataclass(frozen=True)
class TraceRecord:
    k: int
    n_points: int
    mi_bits: float
    d_max_bits: float
    x_max: float
    lambda_star: float = 0.0
    event: str = ""

    def as_json(self):
        return {"k": self.k, "N": self.n_points, "I_bits": self.mi_bits,
                "D_max_bits": self.d_max_bits, "x_max": self.x_max,
                "lambda_star": self.lambda_star}


@dataclass
class DabResult:
    dist: SupportedDistribution
    bounds: CapacityBounds
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def capacity(self) -> float:
        return self.bounds.lower

    @property
    def gap(self) -> float:
        return self.bounds.gap


@dataclass(frozen=True)
class BirthDiagnostics:
    x_max: float
    gap: float
    max_derivative: float
    delta_mi: Optional[float]
    has_movable: bool
    epsilon: float
    settling: bool = False   # the last birth is too recent to judge


# --------------------------------------------------------------------------
# Directions
# --------------------------------------------------------------------------

def _movable(locations, pin_endpoints):
    if not pin_endpoints:
        return np.ones(locations.size, dtype=bool)
    return (locations > 0.0) & (locations < 1.0)


def _units(locations, symmetric, pin_endpoints):
    """Groups of indices that move together: singletons or mirrored pairs."""
    mov = _movable(locations, pin_endpoints)
    n = locations.size
    if not symmetric:
        return [(j,) for j in range(n) if mov[j]]
    return [(j, n - 1 - j) for j in range(n // 2) if mov[j] and mov[n - 1 - j]]


def _unit_vector(n, unit):
    d = np.zeros(n)
    d[unit[0]] = 1.0
    if len(unit) == 2:
        # mirrored partner moves the opposite way, which keeps the pair
        # symmetric about 1/2
        d[unit[1]] = -1.0
    return d


def _unit_slope(grad, unit):
    if len(unit) == 2:
        return grad[unit[0]] - grad[unit[1]]
    return grad[unit[0]]


def select_direction(channel: ChannelLaw, dist: SupportedDistribution, strategy: str,
                     x_max: Optional[float] = None, round_robin_state: int = 0,
                     symmetric: bool = False, pin_endpoints: bool = True,
                     grad: Optional[np.ndarray] = None) -> np.ndarray:
    """Direction along which the mass-point locations are moved.

    Single-point strategies return a unit vector ``e_j`` (or ``e_j - e_k``
    for a mirrored pair when ``symmetric``); ``gradient`` returns the MI
    gradient restricted to the movable points.  A zero vector means there
    is nothing left to move.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown direction strategy {strategy!r}")
    loc = dist.locations
    n = loc.size
    units = _units(loc, symmetric, pin_endpoints)
    if not units:
        return np.zeros(n)
    if grad is None and strategy in ("max_derivative", "gradient"):
        grad = mi_gradient(channel, dist)

    if strategy == "gradient":
        d = np.zeros(n)
        for u in units:
            s = _unit_slope(grad, u)
            if len(u) == 2:
                d[u[0]], d[u[1]] = s / 2, -s / 2
            else:
                d[u[0]] = s
        return d

    if strategy == "max_derivative":
        slopes = np.array([abs(_unit_slope(grad, u)) for u in units])
        if not np.any(slopes > 0):
            return np.zeros(n)
        return _unit_vector(n, units[int(np.argmax(slopes))])

    if strategy == "round_robin":
        return _unit_vector(n, units[round_robin_state % len(units)])

    # proximity_to_xmax
    if x_max is None:
        raise ValueError("proximity_to_xmax needs x_max")
    target = x_max
    lead = [u[0] for u in units]
    if symmetric and target > 0.5:
        target = 1.0 - target
    pts = loc[lead]
    lo, hi = sorted((target, 0.5))
    inside = [i for i, x in zip(lead, pts) if lo <= x <= hi and x != 0.5]
    pool = inside or lead
    best = min(pool, key=lambda i: (abs(loc[i] - target), i))
    return _unit_vector(n, next(u for u in units if u[0] == best))


# --------------------------------------------------------------------------
# Line search
# --------------------------------------------------------------------------

def feasible_interval(locations, direction, min_separation=1e-9):
    """Range of ``lam`` keeping ``locations + lam * direction`` ordered in [0, 1]."""
    x = np.asarray(locations, dtype=float)
    d = np.asarray(direction, dtype=float)
    lo, hi = -math.inf, math.inf
    for xi, di in zip(x, d):
        if di > 0:
            lo, hi = max(lo, -xi / di), min(hi, (1.0 - xi) / di)
        elif di < 0:
            lo, hi = max(lo, (1.0 - xi) / di), min(hi, -xi / di)
    # gap_i(lam) = (x[i+1] - x[i]) + lam * (d[i+1] - d[i]) >= min_separation
    gaps = np.diff(x)
    rel = np.diff(d)
    for g, r in zip(gaps, rel):
        slack = g - min_separation
        if r > 0:
            lo = max(lo, -slack / r)
        elif r < 0:
            hi = min(hi, slack / -r)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    return lo, hi


def line_search_lambda(channel: ChannelLaw, dist: SupportedDistribution, direction,
                       line_search_tol: float = 1e-10, min_separation: float = 1e-9):
    """Best step ``lam`` along ``direction`` at fixed probabilities.

    Returns ``(lam, I_new)`` with ``I_new`` in bits.  A coarse scan of the
    feasible interval picks the bracket, bounded Brent refines it, and the
    step is rejected (``lam = 0``) if it does not improve on staying put.
    """
    d = np.asarray(direction, dtype=float)
    x0 = dist.locations
    p = dist.probs
    live = p > 0
    W0 = channel.matrix(x0[live])
    base = _mi_nats(W0, p[live])
    if not np.any(d[live] != 0.0):
        return 0.0, base * LOG2E
    lo, hi = feasible_interval(x0, d, min_separation)
    if hi - lo <= 0.0:
        return 0.0, base * LOG2E
    xl, dl, pl = x0[live], d[live], p[live]

    def neg_mi(lam):
        return -_mi_nats(channel.matrix(np.clip(xl + lam * dl, 0.0, 1.0)), pl)

    scan = np.linspace(lo, hi, 9)
    vals = np.array([neg_mi(t) for t in scan])
    i = int(np.argmin(vals))
    a, b = scan[max(i - 1, 0)], scan[min(i + 1, len(scan) - 1)]
    res = minimize_scalar(neg_mi, bounds=(a, b), method="bounded",
                          options={"xatol": line_search_tol})
    lam, val = float(res.x), float(res.fun)
    if vals[i] < val:
        lam, val = float(scan[i]), float(vals[i])
    if -val <= base:
        return 0.0, base * LOG2E
    return lam, -val * LOG2E


def _apply_step(dist, direction, lam):
    loc = np.clip(dist.locations + lam * np.asarray(direction), 0.0, 1.0)
    return SupportedDistribution(loc, dist.probs)


# --------------------------------------------------------------------------
# Births
# --------------------------------------------------------------------------

def _birth_triggered(dist, rule, diag: BirthDiagnostics, config: DabConfig):
    if not diag.has_movable:
        return True
    if diag.settling and rule != "missing_mass_point":
        return False
    if rule == "negligible_rate":
        # Near a fixed-cardinality optimum the shortfall in I is quadratic in
        # the location error while the gap is linear in it, so healthy
        # progress keeps dI on the order of gap**2.  A support that is too
        # small instead stalls with the gap stuck and dI decaying to zero.
        if diag.delta_mi is None:
            return False
        return (diag.delta_mi < config.rate_fraction * diag.epsilon
                and diag.delta_mi < config.stall_fraction * diag.gap ** 2)
    if rule == "minimum_derivative":
        return diag.max_derivative < config.derivative_fraction * diag.gap
    # missing_mass_point: nothing between x_max and 1/2 (1/2 itself excluded)
    lo, hi = sorted((diag.x_max, 0.5))
    loc = dist.locations
    return not np.any((loc >= lo) & (loc <= hi) & (loc != 0.5))


def maybe_add_mass_point(dist: SupportedDistribution, rule: str, diagnostics: BirthDiagnostics,
                         config: DabConfig = DabConfig(), max_points: Optional[int] = None):
    """Insert a mass point if ``rule`` fires.

    With central placement an odd count splits the central point into two
    halves at ``center -/+ split_offset`` and an even count inserts a point
    midway between the two central points (exactly at 1/2 under the
    missing-mass-point rule) carrying probability ``1/N'``.

    Central placement presumes a support symmetric about 1/2.  Under
    ``birth_placement="auto"`` an asymmetric run instead puts the new point
    at ``x_max``, where the divergence bound says mass is missing, splitting
    the existing point there if one already sits within ``split_offset``.

    Returns ``(dist', added)``.
    """
    if rule not in BIRTH_RULES:
        raise ValueError(f"unknown birth rule {rule!r}")
    if not _birth_triggered(dist, rule, diagnostics, config):
        return dist, False
    n = len(dist)
    cap = config.max_support if max_points is None else min(config.max_support, max_points)
    if n >= cap:
        raise DabError(f"support-size cap {cap} reached")
    loc, p = dist.locations.copy(), dist.probs.copy()

    if n == 1:
        new = 1.0 if loc[0] < 0.5 else 0.0
        loc2 = np.sort(np.r_[loc, new])
        return SupportedDistribution(loc2, np.array([0.5, 0.5])), True

    central = config.birth_placement == "center" or config.symmetric
    if not central:
        return _birth_at(loc, p, diagnostics.x_max, config.split_offset), True

    if n % 2 == 1:
        return _split(loc, p, n // 2, config.split_offset), True
    c = n // 2
    left, right = loc[c - 1], loc[c]
    new = 0.5 * (left + right)
    if rule == "missing_mass_point" and left < 0.5 < right:
        new = 0.5
    return _insert(loc, p, new), True


def _split(loc, p, c, offset):
    """Replace point ``c`` by two halves at ``loc[c] -/+ offset``."""
    lo = loc[c] - loc[c - 1] if c > 0 else loc[c]
    hi = loc[c + 1] - loc[c] if c + 1 < loc.size else 1.0 - loc[c]
    off = min(offset, lo / 4 if lo > 0 else hi / 4, hi / 4 if hi > 0 else lo / 4)
    left, right = loc[c] - off, loc[c] + off
    if lo <= 0:   # point sits on 0: keep it and add one just inside
        return _insert(loc, p, loc[c] + off)
    if hi <= 0:   # point sits on 1
        return _insert(loc, p, loc[c] - off)
    loc2 = np.r_[loc[:c], left, right, loc[c + 1:]]
    p2 = np.r_[p[:c], p[c] / 2, p[c] / 2, p[c + 1:]]
    return SupportedDistribution.normalized(loc2, p2)


def _insert(loc, p, new):
    """Add a point at ``new`` with probability ``1/N'``, scaling the rest."""
    share = 1.0 / (loc.size + 1)
    c = int(np.searchsorted(loc, new))
    loc2 = np.r_[loc[:c], new, loc[c:]]
    p2 = np.r_[p[:c] * (1 - share), share, p[c:] * (1 - share)]
    return SupportedDistribution.normalized(loc2, p2)


def _birth_at(loc, p, x, offset):
    j = int(np.argmin(np.abs(loc - x)))
    if abs(loc[j] - x) < offset:
        return _split(loc, p, j, offset)
    return _insert(loc, p, x)


# --------------------------------------------------------------------------
# Reporting
# --------------------------------------------------------------------------

def _clean(dist: SupportedDistribution, prob_floor, merge_tol):
    """Drop negligible points and merge near-coincident ones."""
    keep = dist.probs >= prob_floor
    loc, p = dist.locations[keep], dist.probs[keep]
    out_l, out_p = [loc[0]], [p[0]]
    for x, w in zip(loc[1:], p[1:]):
        if x - out_l[-1] < merge_tol:
            tot = out_p[-1] + w
            # endpoints keep their exact location
            if out_l[-1] in (0.0, 1.0):
                pass
            elif x in (0.0, 1.0):
                out_l[-1] = x
            else:
                out_l[-1] = (out_l[-1] * out_p[-1] + x * w) / tot
            out_p[-1] = tot
        else:
            out_l.append(x)
            out_p.append(w)
    return SupportedDistribution.normalized(out_l, out_p)


def _certify(channel, dist):
    q = dist.probs @ channel.matrix(dist.locations)
    x_max, d_max = find_x_max(channel, q)
    mi = mutual_information(channel, dist)
    return CapacityBounds(mi, max(d_max, mi)), x_max


def _compact(channel, dist, bounds, config):
    """Greedily drop the lightest interior point while the support still certifies.

    Redundant points left behind by births can keep small but non-negligible
    mass.  Each candidate removal is followed by a Blahut-Arimoto pass on the
    reduced support and kept only if its gap stays below ``epsilon``.
    """
    while len(dist) > 2:
        loc, p = dist.locations, dist.probs
        interior = np.flatnonzero((loc > 0.0) & (loc < 1.0))
        if interior.size == 0:
            break
        j = int(interior[np.argmin(p[interior])])
        drop = {j, len(loc) - 1 - j} if config.symmetric else {j}
        keep = np.array([i for i in range(len(loc)) if i not in drop])
        try:
            probs, _ = blahut_arimoto_fixed_support(channel, loc[keep], tol=config.inner_tol,
                                                    init=p[keep], max_iter=config.ba_max_iter)
        except ConvergenceError:
            break
        trial = SupportedDistribution.normalized(loc[keep], probs)
        trial_bounds, _ = _certify(channel, trial)
        if trial_bounds.gap >= config.epsilon:
            break
        dist, bounds = trial, trial_bounds
    return dist, bounds


# --------------------------------------------------------------------------
# Main loop
# --------------------------------------------------------------------------

def default_initial() -> SupportedDistribution:
    return SupportedDistribution(np.array([0.0, 1.0]), np.array([0.5, 0.5]))


def dab_solve(channel: ChannelLaw, config: DabConfig = DabConfig(),
              initial: Optional[SupportedDistribution] = None,
              on_iteration: Optional[Callable[[TraceRecord], None]] = None) -> DabResult:
    """Capacity and a minimum-cardinality capacity-achieving input.

    Parameters
    ----------
    channel : ChannelLaw
    config : DabConfig
    initial : SupportedDistribution, optional
        Starting locations/probabilities; ``{0: 1/2, 1: 1/2}`` by default.
    on_iteration : callable, optional
        Receives a :class:`TraceRecord` after every outer iteration.

    Raises
    ------
    DabError
        If the support cap or the iteration cap is reached first.
    """
    dist = initial if initial is not None else default_initial()
    cap = min(config.max_support, channel.n_outputs)
    trace = []
    mi_prev = None
    rr = 0
    best = None
    moves_since_birth = 0

    def emit(rec):
        trace.append(rec)
        if on_iteration is not None:
            on_iteration(rec)

    for k in range(1, config.max_iter + 1):
        n = len(dist)
        # a tiny floor keeps freshly moved points alive in the multiplicative update
        init = dist.probs + 1e-12
        try:
            probs, mi = blahut_arimoto_fixed_support(channel, dist.locations,
                                                     tol=config.inner_tol, init=init,
                                                     max_iter=config.ba_max_iter)
        except ConvergenceError as err:
            probs, mi = err.best
        dist = SupportedDistribution.normalized(dist.locations, probs)
        q = dist.probs @ channel.matrix(dist.locations)
        x_max, d_max = find_x_max(channel, q)
        gap = d_max - mi
        if best is None or gap < best[0].gap:
            best = (CapacityBounds(mi, d_max), dist)

        if gap < config.epsilon:
            emit(TraceRecord(k, n, mi, d_max, x_max, 0.0, "converged"))
            final = _clean(dist, config.prob_floor, config.merge_tol)
            bounds, _ = _certify(channel, final)
            if bounds.gap >= config.epsilon:
                final, bounds = dist, CapacityBounds(mi, d_max)
            final, bounds = _compact(channel, final, bounds, config)
            return DabResult(final, bounds, k, trace)

        grad = mi_gradient(channel, dist)
        units = _units(dist.locations, config.symmetric, config.pin_endpoints)
        slopes = [abs(_unit_slope(grad, u)) for u in units]
        # a fresh point sits where I is flat in its location; give every
        # movable unit a couple of moves before judging the new support
        settling = moves_since_birth < 2 * len(units)
        diag = BirthDiagnostics(
            x_max=x_max, gap=gap,
            max_derivative=max(slopes) if slopes else 0.0,
            delta_mi=None if (mi_prev is None or settling) else mi - mi_prev,
            has_movable=bool(units), epsilon=config.epsilon, settling=settling)
        try:
            dist, added = maybe_add_mass_point(dist, config.birth_rule, diag, config, cap)
        except DabError as err:
            raise DabError(f"{err} (gap {gap:.3g} bits after {k} iterations)",
                           bounds=best[0], dist=best[1], iterations=k) from None
        if added:
            logger.debug("k=%d: mass point born, N=%d", k, len(dist))
            emit(TraceRecord(k, n, mi, d_max, x_max, 0.0, "birth"))
            mi_prev = None
            moves_since_birth = 0
            continue

        d = select_direction(channel, dist, config.direction_strategy, x_max, rr,
                             config.symmetric, config.pin_endpoints, grad)
        rr += 1
        lam, _ = line_search_lambda(channel, dist, d, config.line_search_tol,
                                    min_separation=config.merge_tol / 10)
        if lam != 0.0:
            dist = _apply_step(dist, d, lam)
        emit(TraceRecord(k, n, mi, d_max, x_max, lam, "move"))
        mi_prev = mi
        moves_since_birth += 1

    raise DabError(f"iteration cap {config.max_iter} reached (gap {best[0].gap:.3g} bits)",
                   bounds=best[0], dist=best[1], iterations=config.max_iter)


def warm_start_from(previous: DabResult, target_channel: Optional[ChannelLaw] = None):
    """Initial distribution for the next member of a channel family."""
    loc = np.clip(previous.dist.locations, 0.0, 1.0)
    p = previous.dist.probs
    loc, idx = np.unique(loc, return_index=True)
    return SupportedDistribution.normalized(loc, p[idx])
