"""Explicit monotone scheme for the phase-field equation

    delta u_t = I1[u] - (1/delta) W'(u / eps).

Forward Euler with the batched I1 operator.  Under :func:`stable_dt` every
update is a nondecreasing function of the previous nodal values, so ordered
data stay ordered and constants ``k eps`` are stationary.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nonlocal_op import DIAGONAL_WEIGHT, GridField, i1_operator
from .potential import PotentialSpec, potential_eval

logger = logging.getLogger(__name__)

__all__ = ["PideState", "PideInstabilityError", "stable_dt", "solve_pide", "write_manifest"]


class PideInstabilityError(RuntimeError):
    """The solution left its comparison envelope."""

    def __init__(self, message, step, time, dt, excursion):
        super().__init__(f"{message} (step {step}, t = {time:.6g}, dt = {dt:.3g}, "
                         f"excursion {excursion:.3g})")
        self.step = step
        self.time = time
        self.dt = dt
        self.excursion = excursion


@dataclass(frozen=True)
class PideState:
    field: GridField
    time: float
    epsilon: float
    delta: float
    dt: float
    step: int


def stable_dt(epsilon: float, delta: float, h: float, spec: PotentialSpec | None = None,
              safety: float = 0.9) -> float:
    """``safety / (R_op + R_stiff)`` with ``R_op = 4 / (pi h delta)`` and
    ``R_stiff = max|W''| / (eps delta^2)``.

    Note that the diagonal of the discrete operator is ``(1 + pi^2/3) / (pi h)``,
    slightly above ``4 / (pi h)``; the update stays monotone for
    ``safety <= 4 / (1 + pi^2/3)``, about 0.93.
    """
    if not (epsilon > 0 and delta > 0 and h > 0):
        raise ValueError("epsilon, delta and h must be positive")
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    spec = PotentialSpec.cosine() if spec is None else spec
    r_op = 4.0 / (math.pi * h) / delta
    r_stiff = spec.max_abs_w2 / (epsilon * delta**2)
    return safety / (r_op + r_stiff)


def _envelope(u0: GridField, epsilon: float):
    lo = min(u0.values.min(), u0.left_limit, u0.right_limit)
    hi = max(u0.values.max(), u0.left_limit, u0.right_limit)
    # the nearest stationary states k eps bracketing the data
    return epsilon * math.floor(lo / epsilon + 1e-12), epsilon * math.ceil(hi / epsilon - 1e-12)


def solve_pide(u0: GridField, epsilon: float, delta: float, T: float, *,
               spec: PotentialSpec | None = None, safety: float = 0.9,
               snapshot_times=None, tol: float | None = None,
               max_steps: int | None = None) -> list[PideState]:
    """March the phase-field equation to time ``T``.

    Parameters
    ----------
    u0 : GridField
        Initial datum; its limits close the operator beyond the grid.
    epsilon, delta : float
    T : float
    spec : PotentialSpec, optional
        Cosine potential by default.
    safety : float
        Fraction of the stable step.
    snapshot_times : array_like, optional
        Times to record (default ``T/4, T/2, 3T/4, T``); the step is shortened
        to land on each exactly.  Time 0 is always included.
    tol : float, optional
        Envelope tolerance, default ``10 h^2 + dt``.

    Raises
    ------
    PideInstabilityError
        If the solution leaves ``[k1 eps, k2 eps]`` (the stationary states
        bracketing ``u0``) by more than ``10 tol``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    spec = PotentialSpec.cosine() if spec is None else spec
    h = u0.step
    dt = stable_dt(epsilon, delta, h, spec, safety)
    if snapshot_times is None:
        snapshot_times = [T / 4, T / 2, 3 * T / 4, T]
    targets = sorted({float(t) for t in snapshot_times if 0 < t <= T})
    if tol is None:
        tol = 10 * h * h + dt
    lo, hi = _envelope(u0, epsilon)
    op = i1_operator(u0)
    u = np.array(u0.values, dtype=float)
    t, step = 0.0, 0
    states = [PideState(u0, 0.0, epsilon, delta, dt, 0)]
    nsteps_est = int(math.ceil(T / dt))
    if max_steps is not None and nsteps_est > max_steps:
        raise ValueError(f"{nsteps_est} steps exceed max_steps = {max_steps}")
    logger.info("pide: eps=%g delta=%g h=%g dt=%.3g, about %d steps on %d nodes",
                epsilon, delta, h, dt, nsteps_est, u.size)
    for target in targets:
        while t < target - 1e-14 * max(1.0, target):
            k = min(dt, target - t)
            u = u + (k / delta) * (op.apply(u) - potential_eval(spec, u / epsilon, 1) / delta)
            t = target if k < dt else t + k
            step += 1
            if step % 500 == 0 or t == target:
                exc = max(lo - u.min(), u.max() - hi, 0.0)
                if exc > 10 * tol or not np.all(np.isfinite(u)):
                    raise PideInstabilityError("solution left its envelope", step, t, k, exc)
        states.append(PideState(u0.with_values(u), t, epsilon, delta, dt, step))
    return states


def write_manifest(states, directory, prefix: str = "pide") -> Path:
    """Write each state as a field file and a manifest ``(time, path, step, dt)``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in states:
        name = f"{prefix}_t{s.time:.6f}.txt"
        s.field.save(directory / name)
        rows.append((repr(float(s.time)), name, s.step, repr(float(s.dt))))
    path = directory / f"{prefix}_manifest.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "path", "step", "dt"])
        w.writerows(rows)
    return path


# diagonal bound used in the monotonicity statement of stable_dt
MONOTONE_SAFETY = 4.0 / DIAGONAL_WEIGHT
