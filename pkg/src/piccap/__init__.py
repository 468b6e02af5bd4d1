"""Capacity of binomial and particle-intensity channels.

The main entry points are :func:`piccap.dab.dab_solve` (capacity and an
optimal finite-support input, certified by a divergence bound),
:func:`piccap.ellipsoid.solve_dual` (an independent dual baseline) and the
family sweeps in :mod:`piccap.sweep`.
"""

from .ba_core import CapacityBounds, SupportedDistribution, mutual_information
from .channels import (
    PicParams,
    PoissonChannel,
    TransportModel,
    binomial_channel,
    derive_state,
    pic_channel,
    poisson_channel,
)
from .dab import DabConfig, DabResult, dab_solve
from .ellipsoid import solve_dual
from .sweep import sweep_binomial, sweep_pic

__version__ = "0.1.0"

__all__ = [
    "CapacityBounds", "DabConfig", "DabResult", "PicParams", "PoissonChannel",
    "SupportedDistribution", "TransportModel", "binomial_channel", "dab_solve",
    "derive_state", "mutual_information", "pic_channel", "poisson_channel",
    "solve_dual", "sweep_binomial", "sweep_pic",
]
