"""Level-set particles of a field: extraction, reconstruction and the
corrector ansatz.

A field ``v`` is cut by the levels ``k * eps``.  Every crossing of a level
bounds two connected components of the bands ``{k eps <= v < (k+1) eps}``.
Components whose oscillation is below ``eps`` (both ends on the same level)
and the two unbounded components are discarded; the remaining boundary
points become particles.  The orientation of a particle is the signed level
step ``b_i = (v(x_i) - v(x_{i-1})) / eps``; points with ``b_i = 0`` are
dropped and the steps recomputed over the survivors, so that
``v(x_i) = eps * (base_level + sum_{j <= i} b_j)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .layer import CorrectorProfile, LayerProfile, default_layer, phi_eval, psi_eval
from .nonlocal_op import GridField

__all__ = [
    "ParticleSystem",
    "ExtractionError",
    "ExtractionReport",
    "SignedCounts",
    "extract",
    "reconstruct",
    "ansatz",
    "signed_counts",
]


class ExtractionError(ValueError):
    """Raised for constant fields or an invalid level spacing."""


@dataclass(frozen=True)
class ParticleSystem:
    """Oriented particles ``x_1 < ... < x_N`` at level spacing ``epsilon``."""

    positions: np.ndarray
    orientations: np.ndarray
    epsilon: float
    base_level: int = 0

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).reshape(-1)
        b = np.array(self.orientations, dtype=int).reshape(-1)
        if x.shape != b.shape:
            raise ValueError("positions and orientations differ in length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("particle positions must be strictly increasing")
        if not np.all(np.isin(b, (-1, 1))):
            raise ValueError("orientations must be +1 or -1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        x.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "orientations", b)
        object.__setattr__(self, "base_level", int(self.base_level))

    def __len__(self) -> int:
        return self.positions.size

    @property
    def levels(self) -> np.ndarray:
        """``base_level + cumsum(b)``: the level index reached at each particle."""
        return self.base_level + np.cumsum(self.orientations)

    def min_gap(self) -> float:
        return float(np.min(np.diff(self.positions))) if len(self) > 1 else math.inf

    def save_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write(f"# epsilon = {self.epsilon!r}\n# base_level = {self.base_level}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "position", "orientation"])
            for i, (x, b) in enumerate(zip(self.positions, self.orientations), start=1):
                w.writerow([i, repr(float(x)), int(b)])
        return path

    @classmethod
    def load_csv(cls, path) -> "ParticleSystem":
        meta, rows = {}, []
        with open(path, newline="") as fh:
            lines = [ln for ln in fh]
        for ln in lines:
            if ln.startswith("#"):
                k, v = ln[1:].split("=", 1)
                meta[k.strip()] = v.strip()
        body = [ln for ln in lines if not ln.startswith("#")]
        for row in csv.DictReader(body):
            rows.append((float(row["position"]), int(row["orientation"])))
        x = [r[0] for r in rows]
        b = [r[1] for r in rows]
        return cls(np.array(x), np.array(b, dtype=int), float(meta["epsilon"]),
                   int(meta.get("base_level", 0)))


@dataclass
class ExtractionReport:
    """Diagnostics of one extraction.

    Attributes
    ----------
    crossings : int
        Number of level crossings found (after dropping tangencies).
    tangencies : list of (position, level)
        Points where the field touches a level without crossing it.
    removed_components : list of (left, right, level)
        Bounded components discarded for oscillation below ``eps``.
    boundary_points, boundary_orientations : ndarray
        Boundary set and orientations before zero removal.
    """

    crossings: int = 0
    tangencies: list = field(default_factory=list)
    removed_components: list = field(default_factory=list)
    boundary_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    boundary_orientations: np.ndarray = field(default_factory=lambda: np.empty(0, int))


def _bands(v, eps):
    """Largest ``m`` with ``m * eps <= v`` (exact floating comparison)."""
    m = np.floor(v / eps)
    m = m + ((m + 1) * eps <= v) - (m * eps > v)
    return m.astype(np.int64)


def _crossings(field: GridField, eps: float):
    """Level crossings as arrays (position, level, direction), in order."""
    v = field.values
    x = field.x
    band = _bands(v, eps)
    pos, lev, dirn = [], [], []
    for k in np.flatnonzero(band[1:] != band[:-1]):
        b0, b1 = band[k], band[k + 1]
        dv = v[k + 1] - v[k]
        if b1 > b0:
            levels, d = range(b0 + 1, b1 + 1), 1
        else:
            levels, d = range(b0, b1, -1), -1
        for m in levels:
            t = (m * eps - v[k]) / dv
            pos.append(x[k] + min(max(t, 0.0), 1.0) * field.step)
            lev.append(m)
            dirn.append(d)
    return np.array(pos), np.array(lev, dtype=np.int64), np.array(dirn, dtype=np.int64)


def extract(field: GridField, epsilon: float, report: bool = False):
    """Oriented level-set particles of ``field`` at spacing ``epsilon``.

    Parameters
    ----------
    field : GridField
    epsilon : float
        Level spacing in ``(0, 1)``.
    report : bool
        Also return an :class:`ExtractionReport`.

    Raises
    ------
    ExtractionError
        If the field is constant or ``epsilon`` is outside ``(0, 1)``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ExtractionError(f"epsilon must lie in (0, 1), got {epsilon}")
    v = field.values
    if np.ptp(v) == 0.0 and field.left_limit == field.right_limit == v[0]:
        raise ExtractionError("cannot extract particles from a constant field")
    rep = ExtractionReport()
    pos, lev, dirn = _crossings(field, epsilon)

    # a level touched without being crossed shows up as an up/down pair at one point
    keep = np.ones(pos.size, dtype=bool)
    i = 0
    while i < pos.size - 1:
        if (keep[i] and lev[i] == lev[i + 1] and dirn[i] == -dirn[i + 1]
                and abs(pos[i + 1] - pos[i]) <= 1e-12 * max(1.0, abs(pos[i]))):
            keep[i] = keep[i + 1] = False
            rep.tangencies.append((float(pos[i]), int(lev[i])))
            i += 2
        else:
            i += 1
    pos, lev = pos[keep], lev[keep]
    rep.crossings = int(pos.size)

    # bounded components sit between consecutive crossings; one spanning two
    # different levels has oscillation exactly eps and is kept
    chosen = np.zeros(pos.size, dtype=bool)
    for k in range(pos.size - 1):
        if lev[k] != lev[k + 1]:
            chosen[k] = chosen[k + 1] = True
        else:
            rep.removed_components.append((float(pos[k]), float(pos[k + 1]), int(lev[k])))
    pts, plev = pos[chosen], lev[chosen]
    if pts.size > 1:
        distinct = np.concatenate([[True], np.diff(pts) > 0])
        pts, plev = pts[distinct], plev[distinct]

    base = int(-_bands(np.array([-field.left_limit]), epsilon)[0])
    b = np.diff(np.concatenate([[base], plev]))
    rep.boundary_points = pts.copy()
    rep.boundary_orientations = b.copy()
    nz = b != 0
    pts, plev = pts[nz], plev[nz]
    b = np.diff(np.concatenate([[base], plev]))
    if np.any(np.abs(b) != 1):
        raise ExtractionError(f"level steps other than +-1 after relabelling: {b}")
    system = ParticleSystem(pts, b, epsilon, base)
    return (system, rep) if report else system


def _layer_terms(particles: ParticleSystem, delta: float, x, layer: LayerProfile):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    b = particles.orientations
    z = (x[:, None] - particles.positions[None, :]) / (particles.epsilon * delta)
    bz = z * b[None, :]
    return x, bz, phi_eval(layer, bz) - (b[None, :] == -1)


def reconstruct(particles: ParticleSystem, delta: float, x,
                layer: LayerProfile | None = None):
    """``sum_i eps phi((x - x_i)/(eps delta), b_i) + eps * base_level``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    layer = default_layer() if layer is None else layer
    eps = particles.epsilon
    xa, _, terms = _layer_terms(particles, delta, x, layer)
    out = eps * terms.sum(axis=1) + eps * particles.base_level
    return float(out[0]) if np.ndim(x) == 0 else out


def ansatz(particles: ParticleSystem, delta: float, corrector: CorrectorProfile, L: float, x,
           layer: LayerProfile | None = None):
    """Reconstruction plus ``sum eps delta psi(z_i, b_i) + eps delta L / alpha``."""
    if abs(corrector.L - L) > 1e-12 * max(1.0, abs(L)):
        raise ValueError(f"corrector was solved at L = {corrector.L}, not {L}")
    layer = default_layer() if layer is None else layer
    eps = particles.epsilon
    xa, bz, terms = _layer_terms(particles, delta, x, layer)
    psi = psi_eval(corrector, bz)
    out = (eps * terms.sum(axis=1) + eps * particles.base_level
           + eps * delta * psi.sum(axis=1) + eps * delta * L / corrector.alpha)
    return float(out[0]) if np.ndim(x) == 0 else out


class SignedCounts(NamedTuple):
    n_plus: int
    n_minus: int
    n: int


def signed_counts(particles: ParticleSystem, M: int, N: int) -> SignedCounts:
    """Counts of ``b = +1`` and ``b = -1`` among particles ``M..N`` (1-based,
    inclusive) and their difference."""
    if not 1 <= M <= N <= len(particles):
        raise IndexError(f"need 1 <= M <= N <= {len(particles)}, got M={M}, N={N}")
    b = particles.orientations[M - 1:N]
    n_plus = int(np.sum(b == 1))
    n_minus = int(np.sum(b == -1))
    return SignedCounts(n_plus, n_minus, n_plus - n_minus)
