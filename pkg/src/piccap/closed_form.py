"""Binary-input (on-off keying) capacity of the particle-intensity channel.

With inputs restricted to {0, 1}, only whether any particle was detected
matters, so the channel collapses to a Z-channel whose "on" input is read
as "off" with probability ``phi = (1 - theta) ** m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channels import DerivedChannelState, TransportModel

# Poisson-regime threshold on m * theta below which the binary input is optimal.
BINARY_OPTIMAL_MEAN = 3.3679


def _h2(p: float) -> float:
    """Binary entropy in bits with 0 log 0 = 0."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1.0 - p) * math.log2(1.0 - p))


def phi_of_state(state: DerivedChannelState) -> float:
    """Probability that the all-release input yields no detection."""
    if state.theta_rho >= 1.0:
        return 0.0
    return math.exp(state.m_rho * math.log1p(-state.theta_rho))


def binary_optimal_p1(phi: float) -> float:
    """Optimal P(X = 1) for the Z-channel with "on" erasure probability ``phi``."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    if phi == 0.0:
        return 0.5
    if phi == 1.0:
        return 1.0 / math.e
    # phi ** (phi / (phi - 1)) in log form
    power = math.exp(phi * math.log(phi) / (phi - 1.0))
    return 1.0 / (power - phi + 1.0)


def binary_mi(p1: float, phi: float) -> float:
    """I(X; Y) in bits of the Z-channel, ``H(p1 (1 - phi)) - p1 H(phi)``."""
    return _h2(p1 * (1.0 - phi)) - p1 * _h2(phi)


def binary_capacity_per_use(phi: float) -> float:
    """log2(1 + (1 - phi) phi^(phi / (1 - phi))), the Z-channel capacity."""
    if phi <= 0.0:
        return 1.0
    if phi >= 1.0:
        return 0.0
    return math.log2(1.0 + (1.0 - phi) * math.exp(phi * math.log(phi) / (1.0 - phi)))


def binary_capacity_rate(transport: TransportModel, state: DerivedChannelState) -> float:
    """Binary-input information rate in bits per second at symbol duration ``state.tau``.

    ``transport`` is accepted for interface symmetry; ``state.tau`` already
    holds its inverse CDF at ``rho``.
    """
    return binary_capacity_per_use(phi_of_state(state)) / state.tau


def poisson_binary_optimality_test(state: DerivedChannelState) -> bool:
    """Advisory check m * theta < 3.3679 (valid in the Poisson regime only)."""
    return state.m_rho * state.theta_rho < BINARY_OPTIMAL_MEAN


@dataclass(frozen=True)
class BinaryPicSummary:
    phi: float
    p1_star: float
    capacity_per_use: float
    capacity_rate: float
    poisson_mean: float
    binary_likely_optimal: bool


def summarize(transport: TransportModel, state: DerivedChannelState) -> BinaryPicSummary:
    phi = phi_of_state(state)
    return BinaryPicSummary(
        phi=phi,
        p1_star=binary_optimal_p1(phi),
        capacity_per_use=binary_capacity_per_use(phi),
        capacity_rate=binary_capacity_rate(transport, state),
        poisson_mean=state.m_rho * state.theta_rho,
        binary_likely_optimal=poisson_binary_optimality_test(state),
    )
