"""Channel laws for the binomial channel and the particle-intensity channel.

Every channel maps an input ``x`` in ``[0, 1]`` to a distribution over a
finite set of output symbols.  The :class:`ChannelLaw` subclasses expose the
whole transition matrix for a batch of inputs, plus its derivative with
respect to ``x``, which is what the solvers consume.

The diffusive transport model (first arrival of a 3-D Brownian particle at
a spherical absorber) maps the arrival probability ``rho`` to the symbol
duration ``tau`` through the inverse CDF of a scaled Levy distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

# Outputs whose probability under the most spread-out input is below this
# are lumped into a single "at least K" symbol.
TAIL_MASS = 1e-15

GRID_POINTS = 2001


class ChannelDomainError(ValueError):
    """Raised when a channel function is evaluated outside its domain."""


# --------------------------------------------------------------------------
# Special functions
# --------------------------------------------------------------------------

_SQRT_PI = math.sqrt(math.pi)


def _erfcinv_guess(v):
    # Winitzki's closed-form erfinv approximation at y = 1 - v, good to ~2e-3.
    a = 0.147
    y = 1.0 - v
    ln = np.log(v * (2.0 - v))
    t = 2.0 / (math.pi * a) + 0.5 * ln
    return np.sign(y) * np.sqrt(np.sqrt(t * t - ln / a) - t)


def erfcinv(u):
    """Inverse of the complementary error function.

    Newton iteration on ``log erfc`` started from a rational approximation.
    The log form keeps the iteration well conditioned for tiny ``u`` where
    ``erfc`` underflows quickly.  Accepts scalars or arrays.
    """
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 2.0)):
        raise ChannelDomainError("erfcinv is defined on the open interval (0, 2)")

    # erfcinv(u) = -erfcinv(2 - u); iterate on the u <= 1 branch only.
    upper = arr > 1.0
    v = np.where(upper, 2.0 - arr, arr)
    t = _erfcinv_guess(v)
    log_v = np.log(v)
    for _ in range(50):
        ec = special.erfc(t)
        # d/dt log erfc(t) = -2/sqrt(pi) exp(-t^2) / erfc(t); use erfcx to
        # avoid 0/0 in the far tail.
        slope = -2.0 / (_SQRT_PI * special.erfcx(t))
        step = (np.log(ec) - log_v) / slope
        t = t - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(t))):
            break
    t = np.where(upper, -t, t)
    return float(t) if t.ndim == 0 else t


# --------------------------------------------------------------------------
# Scalar PMFs
# --------------------------------------------------------------------------

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _stirlerr(n):
    """log(n!) - log(sqrt(2 pi n) (n/e)^n), accurate for large n."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    small = n <= 15
    ns = np.where(small & (n > 0), n, 1.0)
    out = np.where(small, special.gammaln(ns + 1) - (ns + 0.5) * np.log(ns) + ns - _HALF_LOG_2PI, out)
    nl = np.where(small, 16.0, n)
    nn = nl * nl
    series = (1 / 12 - (1 / 360 - (1 / 1260 - (1 / 1680 - 1 / 1188 / nn) / nn) / nn) / nn) / nl
    return np.where(small, out, series)


_BD0_COEFS = tuple(1.0 / (2 * j + 1) for j in range(9, 0, -1))


def _bd0(x, m):
    """Deviance term x log(x/m) + m - x without cancellation near x = m."""
    x, m = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(m, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.array(special.xlogy(x, x / m) + m - x, dtype=float)
        diff = x - m
        close = np.abs(diff) < 0.1 * (x + m)
        if np.any(close):
            # x log(x/m) + m - x = (x - m) v + 2 x sum_j v^(2j+1) / (2j+1),
            # v = (x - m) / (x + m); |v| < 0.1, so nine terms are enough
            xc, dc = x[close], diff[close]
            v = dc / (x[close] + m[close])
            v2 = v * v
            series = _BD0_COEFS[0]
            for c in _BD0_COEFS[1:]:
                series = series * v2 + c
            out[close] = dc * v + 2.0 * xc * v * v2 * series
    return out


def _binomial_logpmf(n, s, y):
    """log Binomial(n, s) at y, Loader's saddle-point form.

    Plain log-gamma differences lose ~1e-12 relative accuracy once n is a
    few thousand; this form keeps full precision.
    """
    s, y = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(y, dtype=float))
    n = float(n)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        interior = (_stirlerr(n) - _stirlerr(y) - _stirlerr(n - y)
                    - _bd0(y, n * s) - _bd0(n - y, n * (1.0 - s))
                    + 0.5 * np.log(n / (2.0 * math.pi * y * (n - y))))
        at_zero = special.xlog1py(n, -s)
        at_n = special.xlogy(n, s)
    # degenerate s in {0, 1}: 0^0 = 1 convention
    out = np.where(y == 0, at_zero, np.where(y == n, at_n, interior))
    out = np.where((s == 0) & (y > 0), -np.inf, out)
    out = np.where((s == 1) & (y < n), -np.inf, out)
    if n == 0:
        out = np.zeros_like(out)
    return out


def _poisson_logpmf(a, y):
    return special.xlogy(y, a) - a - special.gammaln(y + 1)


def binomial_pmf(n: int, x: float, y: int) -> float:
    """P(Y = y | X = x) for ``n`` Bernoulli trials with success probability ``x``."""
    if n < 1:
        raise ChannelDomainError(f"number of trials must be >= 1, got {n}")
    if not 0.0 <= x <= 1.0:
        raise ChannelDomainError(f"x must lie in [0, 1], got {x}")
    if not 0 <= y <= n:
        raise ChannelDomainError(f"y must lie in 0..{n}, got {y}")
    return float(np.exp(_binomial_logpmf(n, x, y)))


def pic_pmf(state: "DerivedChannelState", x: float, y: int) -> float:
    """Particle-intensity channel law: Binomial(m_rho, x * theta_rho)."""
    if not 0.0 <= x <= 1.0:
        raise ChannelDomainError(f"x must lie in [0, 1], got {x}")
    if not 0 <= y <= state.m_rho:
        raise ChannelDomainError(f"y must lie in 0..{state.m_rho}, got {y}")
    return binomial_pmf(state.m_rho, x * state.theta_rho, y)


def poisson_pmf(state: "DerivedChannelState", x: float, y: int) -> float:
    """Poisson approximation of the PIC with mean ``x * theta_rho * m_rho``."""
    if not 0.0 <= x <= 1.0:
        raise ChannelDomainError(f"x must lie in [0, 1], got {x}")
    if y < 0:
        raise ChannelDomainError(f"y must be non-negative, got {y}")
    return float(np.exp(_poisson_logpmf(x * state.theta_rho * state.m_rho, y)))


# --------------------------------------------------------------------------
# Transport model and derived state
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportModel:
    """Diffusive transport to a spherical receiver.

    ``c = l**2 / (2 d)`` in seconds and ``eta = r / (l + r)`` is the total
    probability that a released particle ever arrives (1 in one dimension).
    """

    c: float
    eta: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ChannelDomainError(f"c must be positive, got {self.c}")
        if not 0 < self.eta <= 1:
            raise ChannelDomainError(f"eta must lie in (0, 1], got {self.eta}")


def levy_icdf(transport: TransportModel, rho: float) -> float:
    """Symbol duration ``tau`` at which a particle has arrived with probability ``rho``."""
    if not 0 < rho < transport.eta:
        raise ChannelDomainError(
            f"rho must lie in (0, eta={transport.eta}), got {rho}")
    e = erfcinv(rho / transport.eta)
    return transport.c / (2.0 * e * e)


@dataclass(frozen=True)
class PicParams:
    alpha: float
    beta: float
    lambda_gen: float
    transport: TransportModel

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ChannelDomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.beta <= 1:
            raise ChannelDomainError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.lambda_gen > 0:
            raise ChannelDomainError(f"lambda must be positive, got {self.lambda_gen}")


@dataclass(frozen=True)
class DerivedChannelState:
    rho: float
    tau: float
    m_rho: int
    theta_rho: float

    @property
    def poisson_mean(self) -> float:
        return self.m_rho * self.theta_rho


def derive_state(params: PicParams, rho: float) -> DerivedChannelState:
    tau = levy_icdf(params.transport, rho)
    m_rho = math.floor(params.lambda_gen * tau)
    if m_rho < 1:
        raise ChannelDomainError(
            f"symbol duration too short to generate any particle (rho={rho}, tau={tau:.6g})")
    return DerivedChannelState(rho=rho, tau=tau, m_rho=int(m_rho),
                               theta_rho=params.alpha * rho * params.beta)


# --------------------------------------------------------------------------
# Channel laws as matrices
# --------------------------------------------------------------------------

class ChannelLaw:
    """A memoryless channel with input in [0, 1] and outputs ``0..n_outputs-1``.

    Subclasses implement :meth:`matrix`; :meth:`dmatrix` falls back to
    central differences when no analytic derivative is provided.
    """

    n_outputs: int

    def matrix(self, x) -> np.ndarray:
        """Transition probabilities, shape ``(len(x), n_outputs)``."""
        raise NotImplementedError

    def dmatrix(self, x) -> np.ndarray:
        """Derivative of :meth:`matrix` with respect to ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h = 1e-6
        lo = np.clip(x - h, 0.0, 1.0)
        hi = np.clip(x + h, 0.0, 1.0)
        return (self.matrix(hi) - self.matrix(lo)) / (hi - lo)[:, None]

    def log_matrix(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.matrix(x))

    def pmf(self, x: float, y: int) -> float:
        if not 0 <= y < self.n_outputs:
            raise ChannelDomainError(f"y must lie in 0..{self.n_outputs - 1}, got {y}")
        return float(self.matrix([x])[0, y])

    # Quantities on the fixed search grid are reused by every x_max search
    # and every ellipsoid iteration, so they are computed once per channel.
    @cached_property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, GRID_POINTS)

    @cached_property
    def grid_matrix(self) -> np.ndarray:
        return self.matrix(self.grid)

    @cached_property
    def grid_neg_entropy(self) -> np.ndarray:
        """sum_y p log p (nats) at each grid input."""
        return special.xlogy(self.grid_matrix, self.grid_matrix).sum(axis=1)


def _as_inputs(x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ChannelDomainError("channel inputs must lie in [0, 1]")
    return x


_ROW_CACHE_MAX_BATCH = 64
_ROW_CACHE_SIZE = 4096


class BinomialFamilyChannel(ChannelLaw):
    """Binomial(trials, x * theta) output law.

    ``theta = 1`` is the binomial channel; ``theta < 1`` is the PIC.  When the
    upper tail beyond some count ``K`` carries less than :data:`TAIL_MASS`
    even at ``x = 1``, outputs ``>= K`` are merged into one symbol so large
    particle budgets stay cheap.  Merging outputs is a deterministic
    post-processing of ``Y`` and changes mutual information by a negligible
    amount.
    """

    def __init__(self, trials: int, theta: float = 1.0):
        if trials < 1:
            raise ChannelDomainError(f"number of trials must be >= 1, got {trials}")
        if not 0 < theta <= 1:
            raise ChannelDomainError(f"theta must lie in (0, 1], got {theta}")
        self.trials = int(trials)
        self.theta = float(theta)
        explicit = self.trials + 1
        if theta < 1.0:
            # smallest K with P(Y >= K | x = 1) < TAIL_MASS
            explicit = min(explicit, self._tail_cutoff())
        self.lumped = explicit < self.trials + 1
        self.n_outputs = explicit + 1 if self.lumped else explicit
        self._ys = np.arange(explicit, dtype=float)
        self._row_cache = {}
        # x-independent part of the saddle-point log-PMF for 0 < y < n
        n, ys = float(self.trials), self._ys
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            self._log_const = (_stirlerr(n) - _stirlerr(ys) - _stirlerr(n - ys)
                               + 0.5 * np.log(n / (2.0 * math.pi * ys * (n - ys))))

    def _tail_cutoff(self) -> int:
        n, th = self.trials, self.theta
        mean = n * th
        k = int(mean + 10.0 * math.sqrt(mean * (1 - th)) + 20)
        while k <= n and special.bdtrc(k - 1, n, th) >= TAIL_MASS:
            k += max(1, int(math.sqrt(mean)))
        if k > n:
            return n + 1
        # walk back to the smallest qualifying cutoff
        while k > 1 and special.bdtrc(k - 2, n, th) < TAIL_MASS:
            k -= 1
        return k

    def __repr__(self):
        return f"BinomialFamilyChannel(trials={self.trials}, theta={self.theta})"

    def _logpmf(self, s):
        """Same values as ``_binomial_logpmf`` using the cached constants."""
        n, ys = float(self.trials), self._ys[None, :]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = self._log_const[None, :] - _bd0(ys, n * s) - _bd0(n - ys, n * (1.0 - s))
            out[:, 0] = special.xlog1py(n, -s[:, 0])
            if ys.shape[1] == n + 1:
                out[:, -1] = special.xlogy(n, s[:, 0])
        out = np.where((s == 0) & (ys > 0), -np.inf, out)
        out = np.where((s == 1) & (ys < n), -np.inf, out)
        return out

    def matrix(self, x) -> np.ndarray:
        x = _as_inputs(x)
        if x.size > _ROW_CACHE_MAX_BATCH:
            return self._rows(x)
        # Solvers re-evaluate mostly unchanged mass-point locations, so rows
        # are memoized per input value.
        cache = self._row_cache
        if len(cache) > _ROW_CACHE_SIZE:
            cache.clear()
        missing = [v for v in dict.fromkeys(x.tolist()) if v not in cache]
        if missing:
            for v, row in zip(missing, self._rows(np.array(missing))):
                cache[v] = row
        return np.array([cache[v] for v in x.tolist()])

    def _rows(self, x) -> np.ndarray:
        s = x[:, None] * self.theta
        w = np.exp(self._logpmf(s))
        if self.lumped:
            k = len(self._ys)
            tail = special.bdtrc(k - 1, self.trials, s[:, 0])
            w = np.hstack([w, tail[:, None]])
        return w

    def dmatrix(self, x) -> np.ndarray:
        # d/ds Bin(n, s)(y) = n [Bin(n-1, s)(y-1) - Bin(n-1, s)(y)]
        s = _as_inputs(x)[:, None] * self.theta
        n = self.trials
        k = len(self._ys)
        ys_m1 = np.arange(min(k, n), dtype=float)
        b = np.exp(_binomial_logpmf(n - 1, s, ys_m1[None, :]))
        lower = np.zeros((s.shape[0], k))
        lower[:, 1:] = b[:, :k - 1]
        upper = np.zeros((s.shape[0], k))
        upper[:, :b.shape[1]] = b[:, :k]
        d = n * (lower - upper)
        if self.lumped:
            d = np.hstack([d, n * b[:, k - 1:k]])
        return self.theta * d

    def log_matrix(self, x) -> np.ndarray:
        s = _as_inputs(x)[:, None] * self.theta
        lw = self._logpmf(s)
        if self.lumped:
            with np.errstate(divide="ignore"):
                tail = np.log(special.bdtrc(len(self._ys) - 1, self.trials, s[:, 0]))
            lw = np.hstack([lw, tail[:, None]])
        return lw


class PoissonChannel(ChannelLaw):
    """Poisson(x * mean) output law truncated to a finite alphabet.

    Counts ``>= N`` are lumped into the last symbol, with ``N`` the smallest
    count whose upper tail at ``x = 1`` is below :data:`TAIL_MASS`.
    """

    def __init__(self, mean: float):
        if not mean > 0:
            raise ChannelDomainError(f"Poisson mean must be positive, got {mean}")
        self.mean = float(mean)
        n = 1
        while special.gammainc(n, self.mean) >= TAIL_MASS:
            n += 1
        self.cutoff = n
        self.n_outputs = n + 1
        self._ys = np.arange(n, dtype=float)

    def __repr__(self):
        return f"PoissonChannel(mean={self.mean})"

    def matrix(self, x) -> np.ndarray:
        a = _as_inputs(x) * self.mean
        w = np.exp(_poisson_logpmf(a[:, None], self._ys[None, :]))
        # P(Y >= N) = regularized lower incomplete gamma P(N, a)
        tail = special.gammainc(self.cutoff, a)
        return np.hstack([w, tail[:, None]])

    def dmatrix(self, x) -> np.ndarray:
        # d/da Pois(a)(y) = Pois(a)(y-1) - Pois(a)(y)
        a = _as_inputs(x) * self.mean
        p = np.exp(_poisson_logpmf(a[:, None], self._ys[None, :]))
        shifted = np.zeros_like(p)
        shifted[:, 1:] = p[:, :-1]
        d = np.hstack([shifted - p, p[:, -1:]])
        return self.mean * d


def binomial_channel(n: int) -> BinomialFamilyChannel:
    return BinomialFamilyChannel(n, 1.0)


def pic_channel(state: DerivedChannelState) -> BinomialFamilyChannel:
    return BinomialFamilyChannel(state.m_rho, state.theta_rho)


def poisson_channel(state: DerivedChannelState) -> PoissonChannel:
    return PoissonChannel(state.poisson_mean)
