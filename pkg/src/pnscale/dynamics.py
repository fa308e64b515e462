"""Particle dynamics: the interacting system with annihilation and the
constant-speed flow.

The interacting system is

    dy_i/dt = c0 * sum_{j != i} b_i b_j / (y_i - y_j).

Same-orientation neighbours repel and opposite ones attract.  An adjacent
opposite pair whose gap falls below the collision threshold is removed: the
remaining time to contact is taken from the local two-body model
``dg/dt = -2 c0 / g + d`` (``d`` the relative drift from all other
particles), the survivors are advanced over that time, and integration
restarts.  Simultaneous events are resolved one pair at a time, leftmost
first.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .particles import ParticleSystem

logger = logging.getLogger(__name__)

__all__ = [
    "CollisionEvent",
    "TrajectorySet",
    "DynamicsError",
    "StepUnderflowError",
    "OrderingError",
    "simulate_ddd",
    "constant_speed_flow",
    "pair_collision_time",
    "interaction_velocity",
]


class DynamicsError(RuntimeError):
    """Base class for particle-dynamics failures."""


class StepUnderflowError(DynamicsError):
    """The integrator could not advance; carries the state at failure."""

    def __init__(self, message, time, positions, orientations):
        super().__init__(f"{message} at t = {time:.6g}")
        self.time = time
        self.positions = np.array(positions)
        self.orientations = np.array(orientations)


class OrderingError(DynamicsError):
    """Two particles crossed."""

    def __init__(self, message, pair):
        super().__init__(message)
        self.pair = pair


@dataclass(frozen=True)
class CollisionEvent:
    """Annihilation of particles ``pair = (i, j)`` (ids into the initial system)."""

    time: float
    position: float
    pair: tuple


@dataclass
class TrajectorySet:
    """Sampled particle tracks.

    Attributes
    ----------
    times : ndarray, shape (T,)
    positions : ndarray, shape (T, N)
        NaN outside each particle's lifespan.
    orientations : ndarray, shape (N,)
    birth, death : ndarray, shape (N,)
        Lifespan ``[birth, death)``; ``death`` is ``inf`` for survivors.
    events : list of CollisionEvent
    """

    times: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    events: list = field(default_factory=list)
    epsilon: float = 1.0

    def alive(self, t: float) -> np.ndarray:
        if t >= 0:
            return (self.birth <= t) & (t < self.death)
        return (self.birth >= t) & (t > self.death)

    def final(self) -> ParticleSystem:
        """Survivors at the last sample time."""
        x = self.positions[-1]
        keep = np.isfinite(x)
        return ParticleSystem(x[keep], self.orientations[keep], self.epsilon)

    def at(self, k: int) -> ParticleSystem:
        x = self.positions[k]
        keep = np.isfinite(x)
        return ParticleSystem(x[keep], self.orientations[keep], self.epsilon)

    def write_csv(self, directory, stem: str = "trajectories") -> tuple[Path, Path]:
        """Write ``<stem>.csv`` (t, particle_id, position, alive) and
        ``<stem>_events.csv`` (time, position, left_id, right_id)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tpath = directory / f"{stem}.csv"
        epath = directory / f"{stem}_events.csv"
        with open(tpath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "particle_id", "position", "alive"])
            for k, t in enumerate(self.times):
                for i in range(self.positions.shape[1]):
                    x = self.positions[k, i]
                    alive = int(np.isfinite(x))
                    w.writerow([repr(float(t)), i, repr(float(x)) if alive else "nan", alive])
        with open(epath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "position", "left_id", "right_id"])
            for ev in self.events:
                w.writerow([repr(ev.time), repr(ev.position), ev.pair[0], ev.pair[1]])
        return tpath, epath


def pair_collision_time(g0: float, c0: float) -> float:
    """Collision time ``g0^2 / (4 c0)`` of an isolated opposite pair."""
    if not (g0 > 0 and c0 > 0):
        raise ValueError("gap and c0 must be positive")
    return g0 * g0 / (4.0 * c0)


def interaction_velocity(y, b, c0):
    """Right-hand side ``c0 sum_{j != i} b_i b_j / (y_i - y_j)``."""
    d = y[:, None] - y[None, :]
    np.fill_diagonal(d, np.inf)
    return c0 * b * np.sum(b[None, :] / d, axis=1)


def _local_contact_time(g, drift, c0):
    """Time for ``dg/dt = -2 c0 / g + drift`` to bring ``g`` to 0."""
    a = 2.0 * c0
    s = drift * g / a
    if abs(s) < 1e-3:
        # series of the closed form below
        return g * g / a * (0.5 + s / 3.0 + s * s / 4.0 + s**3 / 5.0)
    if s >= 1.0:
        return math.inf
    return -g / drift - a / drift**2 * math.log1p(-s)


def simulate_ddd(initial: ParticleSystem, c0: float, T: float, *, n_samples: int = 201,
                 sample_times=None, rtol: float = 1e-10, atol: float = 1e-12,
                 threshold: float | None = None) -> TrajectorySet:
    """Integrate the interacting particle system with annihilation.

    Parameters
    ----------
    initial : ParticleSystem
    c0 : float
        Mobility.
    T : float
        Horizon; negative values integrate backward in time.
    n_samples : int
        Number of uniformly spaced output times when ``sample_times`` is None.
    sample_times : array_like, optional
        Output times (monotone from 0 towards ``T``).
    rtol, atol : float
        Integrator tolerances (RK45).
    threshold : float, optional
        Collision gap; defaults to ``max(1e-6, 1e-3 * initial min gap)``.

    Raises
    ------
    StepUnderflowError
        If the integrator stalls away from a detected collision.
    """
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    y0 = np.array(initial.positions, dtype=float)
    b_all = np.array(initial.orientations, dtype=float)
    n = y0.size
    if sample_times is None:
        sample_times = np.linspace(0.0, T, n_samples)
    ts = np.asarray(sample_times, dtype=float)
    sgn = 1.0 if T >= 0 else -1.0
    if threshold is None:
        threshold = max(1e-6, 1e-3 * initial.min_gap()) if n > 1 else 1e-6

    out = np.full((ts.size, n), np.nan)
    death = np.full(n, math.inf * sgn)
    events = []
    ids = np.arange(n)
    y = y0.copy()
    t = 0.0

    def ahead(lo, hi, closed_hi=True):
        # sample rows with lo < t <= hi in the direction of integration
        st = sgn * ts
        upper = st <= sgn * hi if closed_hi else st < sgn * hi
        return np.flatnonzero((st > sgn * lo) & upper)

    out[np.flatnonzero(ts == 0.0)[:, None], ids[None, :]] = y

    while sgn * (T - t) > 0 and ids.size:
        b = b_all[ids]
        opp = np.flatnonzero(b[1:] != b[:-1])
        if ids.size == 1:
            rows = ahead(t, T)
            out[rows[:, None], ids[None, :]] = y
            break
        gaps = y[opp + 1] - y[opp]
        if not (gaps.size and gaps.min() <= threshold):
            def rhs(_t, yy, bb=b):
                return interaction_velocity(yy, bb, c0)

            def near(_t, yy, o=opp):
                return (np.min(yy[o + 1] - yy[o]) - threshold) if o.size else 1.0

            near.terminal = True
            near.direction = -1.0
            sol = solve_ivp(rhs, (t, T), y, method="RK45", rtol=rtol, atol=atol,
                            events=near, dense_output=True)
            if sol.status == -1:
                raise StepUnderflowError(sol.message, float(sol.t[-1]), sol.y[:, -1], b)
            t_end = float(sol.t[-1])
            rows = ahead(t, t_end)
            if rows.size:
                out[rows[:, None], ids[None, :]] = sol.sol(ts[rows]).T
            y, t = sol.y[:, -1].copy(), t_end
            _check_order(y, ids, t)
            if sol.status != 1:
                break
            gaps = y[opp + 1] - y[opp]

        # annihilate the closest opposite pair with the local two-body model
        k = int(opp[np.argmin(gaps)])
        v = interaction_velocity(y, b, c0)
        g = y[k + 1] - y[k]
        drift = (v[k + 1] - v[k]) + 2.0 * c0 / g
        dt = sgn * _local_contact_time(g, sgn * drift, c0)
        t_event = t + dt
        if sgn * (t_event - T) >= 0:
            rows = ahead(t, T)
            out[rows[:, None], ids[None, :]] = y + (ts[rows] - t)[:, None] * v
            break
        pos = 0.5 * (y[k] + y[k + 1]) + 0.5 * (v[k] + v[k + 1]) * dt
        events.append(CollisionEvent(float(t_event), float(pos), (int(ids[k]), int(ids[k + 1]))))
        logger.debug("annihilation of %d and %d at t = %.6g", ids[k], ids[k + 1], t_event)
        rows = ahead(t, t_event, closed_hi=False)
        out[rows[:, None], ids[None, :]] = y + (ts[rows] - t)[:, None] * v
        death[ids[k]] = death[ids[k + 1]] = t_event
        keep = np.ones(ids.size, dtype=bool)
        keep[[k, k + 1]] = False
        y, ids, t = (y + dt * v)[keep], ids[keep], t_event
        _check_order(y, ids, t)
        rows = np.flatnonzero(ts == t_event)
        out[rows[:, None], ids[None, :]] = y

    return TrajectorySet(ts, out, initial.orientations.copy(), np.zeros(n), death, events,
                         initial.epsilon)


def _check_order(y, ids, t):
    d = np.diff(y)
    if np.any(d <= 0):
        i = int(np.argmin(d))
        raise OrderingError(f"particles {ids[i]} and {ids[i + 1]} crossed at t = {t:.6g}",
                            (int(ids[i]), int(ids[i + 1])))


def constant_speed_flow(initial: ParticleSystem, c0: float, L: float, t: float) -> ParticleSystem:
    """Positions ``x_i - b_i c0 L t`` with orientations unchanged.

    Raises
    ------
    OrderingError
        If two particles have crossed, naming the first such pair.
    """
    x = initial.positions - initial.orientations * c0 * L * t
    d = np.diff(x)
    if np.any(d <= 0):
        i = int(np.flatnonzero(d <= 0)[0])
        raise OrderingError(f"particles {i} and {i + 1} crossed by t = {t}", (i, i + 1))
    return ParticleSystem(x, initial.orientations, initial.epsilon, initial.base_level)
