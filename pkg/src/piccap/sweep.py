"""Capacity sweeps over channel families, optimal symbol duration, and export.

A binomial sweep walks ``n`` upward; a PIC sweep walks ``rho`` (the arrival
probability that fixes the symbol duration) across a grid and reports the
information rate ``C(rho) / tau(rho)`` in bits per second.  Consecutive
members are warm started from the previous solution.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._search import golden_max
from .ba_core import SupportedDistribution
from .channels import ChannelDomainError, PicParams, binomial_channel, derive_state, pic_channel
from .closed_form import binary_capacity_rate
from .dab import DabConfig, DabError, DabResult, dab_solve, warm_start_from

CSV_HEADER = ("family_index", "tau_seconds", "m_rho", "theta_rho", "capacity_bits_per_use",
              "rate_bits_per_sec", "binary_rate_bits_per_sec", "support_size", "gap_bits",
              "iterations")
SUPPORT_HEADER = ("family_index", "location", "probability")


class SweepError(RuntimeError):
    """A binomial sweep member failed; ``index`` is the offending ``n``."""

    def __init__(self, index, cause):
        super().__init__(f"solve failed at n={index}: {cause}")
        self.index = index
        self.cause = cause


@dataclass
class SweepRecord:
    family_index: float
    capacity_per_use: float
    support: SupportedDistribution
    iterations: int
    gap: float
    tau: Optional[float] = None
    m_rho: Optional[int] = None
    theta_rho: Optional[float] = None
    capacity_rate: Optional[float] = None
    binary_rate: Optional[float] = None

    @property
    def support_size(self) -> int:
        return len(self.support)


@dataclass
class SweepResult:
    kind: str                              # "binomial" or "pic"
    records: list = field(default_factory=list)
    # (family_index, kind, message); kind is "domain" when the symbol
    # duration admits no particle and "solver" when DAB failed
    failures: list = field(default_factory=list)

    @property
    def optimum(self) -> Optional[SweepRecord]:
        """Record with the largest information rate (PIC sweeps only)."""
        rated = [r for r in self.records if r.capacity_rate is not None]
        if not rated:
            return None
        return max(rated, key=lambda r: r.capacity_rate)

    @property
    def binary_transition_rho(self) -> Optional[float]:
        """Midpoint of the grid interval where the support first exceeds two points."""
        for i, r in enumerate(self.records):
            if r.support_size > 2:
                if i == 0:
                    return r.family_index
                return 0.5 * (self.records[i - 1].family_index + r.family_index)
        return None


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

def _trace_writer(trace, index):
    if trace is None:
        return None

    def write(rec):
        row = {"family_index": index, **rec.as_json()}
        if callable(trace):
            trace(row)
        else:
            trace.write(json.dumps(row) + "\n")
    return write


def sweep_binomial(n_min: int, n_max: int, config: DabConfig = DabConfig(symmetric=True),
                   trace=None) -> SweepResult:
    """Capacity of the binomial channel for ``n_min <= n <= n_max``.

    Each ``n`` is warm started from the solution at ``n - 1``.

    Raises
    ------
    SweepError
        When any member fails, carrying the failing ``n``.
    """
    if not 1 <= n_min <= n_max:
        raise ValueError(f"need 1 <= n_min <= n_max, got {n_min}, {n_max}")
    result = SweepResult("binomial")
    prev: Optional[DabResult] = None
    for n in range(n_min, n_max + 1):
        channel = binomial_channel(n)
        init = warm_start_from(prev, channel) if prev is not None else None
        try:
            sol = dab_solve(channel, config, init, on_iteration=_trace_writer(trace, n))
        except DabError as err:
            raise SweepError(n, err) from err
        result.records.append(SweepRecord(
            family_index=n, capacity_per_use=sol.capacity, support=sol.dist,
            iterations=sol.iterations, gap=sol.gap))
        prev = sol
    return result


def _pic_record(params: PicParams, rho: float, sol: DabResult, state) -> SweepRecord:
    return SweepRecord(
        family_index=float(rho), capacity_per_use=sol.capacity, support=sol.dist,
        iterations=sol.iterations, gap=sol.gap, tau=state.tau, m_rho=state.m_rho,
        theta_rho=state.theta_rho, capacity_rate=sol.capacity / state.tau,
        binary_rate=binary_capacity_rate(params.transport, state))


def _solve_pic_point(params: PicParams, rho: float, config: DabConfig, initial=None,
                     on_iteration=None):
    """Returns ``(record, solution)``; raises ChannelDomainError or DabError."""
    state = derive_state(params, rho)
    channel = pic_channel(state)
    sol = dab_solve(channel, config, initial, on_iteration=on_iteration)
    return _pic_record(params, rho, sol, state), sol


def _failure(rho, err):
    kind = "domain" if isinstance(err, ChannelDomainError) else "solver"
    return (float(rho), kind, str(err))


def _cold_point(args):
    params, rho, config = args
    try:
        rec, _ = _solve_pic_point(params, rho, config)
        return rec, None
    except (ChannelDomainError, DabError) as err:
        return None, _failure(rho, err)


def sweep_pic(params: PicParams, rho_grid: Sequence[float], config: DabConfig = DabConfig(),
              warm_start: bool = True, workers: Optional[int] = None, trace=None) -> SweepResult:
    """Information rate of the particle-intensity channel over a grid of ``rho``.

    Parameters
    ----------
    params : PicParams
    rho_grid : increasing values in ``(0, eta)``
    config : DabConfig
    warm_start : bool
        Solve sequentially, seeding each point with the previous solution.
        With ``False`` every point starts cold and, if ``workers > 1``, the
        points are solved in parallel processes.
    trace : file-like or callable, optional
        Receives one JSON-lines record per DAB iteration (sequential mode).

    A point whose symbol duration admits no particle, or whose solve fails,
    is listed in ``failures`` and the sweep goes on.
    """
    grid = np.asarray(rho_grid, dtype=float)
    eta = params.transport.eta
    if grid.size and (np.any(grid <= 0) or np.any(grid >= eta)):
        raise ValueError(f"rho values must lie in (0, {eta})")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("rho grid must be strictly increasing")
    result = SweepResult("pic")

    if not warm_start and workers is not None and workers > 1:
        jobs = [(params, float(rho), config) for rho in grid]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rho, (rec, err) in zip(grid, pool.map(_cold_point, jobs)):
                if err is None:
                    result.records.append(rec)
                else:
                    result.failures.append(err)
        return result

    prev = None
    for rho in grid:
        init = warm_start_from(prev) if (warm_start and prev is not None) else None
        try:
            rec, sol = _solve_pic_point(params, float(rho), config, init,
                                        _trace_writer(trace, float(rho)))
        except (ChannelDomainError, DabError) as err:
            result.failures.append(_failure(rho, err))
            continue
        result.records.append(rec)
        prev = sol
    return result


def find_optimal_rho(sweep: SweepResult, params: Optional[PicParams] = None,
                     config: Optional[DabConfig] = None, refine: bool = False,
                     tol: float = 1e-5):
    """``(rho_star, C_star)`` maximizing the information rate.

    The grid argmax is returned unless ``refine`` is set, in which case a
    golden-section search over the two neighbouring grid cells re-solves DAB
    at every probe.  Refinement never returns a rate below the grid argmax.
    """
    best = sweep.optimum
    if best is None:
        raise ValueError("sweep has no rated records")
    if not refine:
        return best.family_index, best.capacity_rate
    if params is None:
        raise ValueError("refinement needs the channel parameters")
    config = config or DabConfig()
    rhos = [r.family_index for r in sweep.records]
    i = rhos.index(best.family_index)
    lo = rhos[i - 1] if i > 0 else best.family_index
    hi = rhos[i + 1] if i + 1 < len(rhos) else best.family_index
    seed = best.support

    def rate(rho):
        try:
            rec, _ = _solve_pic_point(params, rho, config, seed)
        except (ChannelDomainError, DabError):
            return -math.inf
        return rec.capacity_rate

    if hi > lo:
        rho, val = golden_max(rate, lo, hi, tol=tol)
        if val > best.capacity_rate:
            return rho, val
    return best.family_index, best.capacity_rate


# --------------------------------------------------------------------------
# Export / import
# --------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.12g}"


def _row(rec: SweepRecord):
    return (rec.family_index, rec.tau, rec.m_rho, rec.theta_rho, rec.capacity_per_use,
            rec.capacity_rate, rec.binary_rate, rec.support_size, rec.gap, rec.iterations)


def support_path(path) -> str:
    return f"{os.fspath(path)}.support.csv"


def export(sweep: SweepResult, fmt: str, path) -> None:
    """Write ``sweep`` as CSV (plus ``<path>.support.csv``) or JSON."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for rec in sweep.records:
                w.writerow([_fmt(v) for v in _row(rec)])
        with open(support_path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUPPORT_HEADER)
            for rec in sweep.records:
                for x, p in rec.support.as_pairs():
                    w.writerow([_fmt(rec.family_index), _fmt(x), _fmt(p)])
    elif fmt == "json":
        doc = {"kind": sweep.kind, "records": [], "failures": [list(f) for f in sweep.failures]}
        for rec in sweep.records:
            entry = {k: (None if v is None else float(_fmt(v)) if not isinstance(v, (int, np.integer))
                         else int(v))
                     for k, v in zip(CSV_HEADER, _row(rec))}
            entry["support"] = [[float(_fmt(x)), float(_fmt(p))] for x, p in rec.support.as_pairs()]
            doc["records"].append(entry)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def _parse(value, kind):
    if value in ("", None):
        return None
    return kind(value)


def _record_from(fields, support) -> SweepRecord:
    return SweepRecord(
        family_index=_parse(fields["family_index"], float),
        tau=_parse(fields["tau_seconds"], float),
        m_rho=_parse(fields["m_rho"], int),
        theta_rho=_parse(fields["theta_rho"], float),
        capacity_per_use=float(fields["capacity_bits_per_use"]),
        capacity_rate=_parse(fields["rate_bits_per_sec"], float),
        binary_rate=_parse(fields["binary_rate_bits_per_sec"], float),
        support=support, gap=float(fields["gap_bits"]),
        iterations=int(fields["iterations"]))


def load(path, fmt: str) -> SweepResult:
    """Read back what :func:`export` wrote (values at printed precision)."""
    if fmt == "json":
        with open(path) as fh:
            doc = json.load(fh)
        result = SweepResult(doc.get("kind", "pic"),
                             failures=[tuple(f) for f in doc.get("failures", [])])
        for entry in doc["records"]:
            pts = np.array(entry["support"], dtype=float).reshape(-1, 2)
            result.records.append(_record_from(
                entry, SupportedDistribution.normalized(pts[:, 0], pts[:, 1])))
        return result
    if fmt != "csv":
        raise ValueError(f"unknown export format {fmt!r}")
    supports = {}
    with open(support_path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            supports.setdefault(row["family_index"], []).append(
                (float(row["location"]), float(row["probability"])))
    result = SweepResult("pic")
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pts = np.array(supports[row["family_index"]], dtype=float)
            result.records.append(_record_from(
                row, SupportedDistribution.normalized(pts[:, 0], pts[:, 1])))
    if result.records and result.records[0].tau is None:
        result.kind = "binomial"
    return result
