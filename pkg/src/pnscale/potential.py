"""Periodic multi-well potentials W with period 1.

Two kinds are supported: the closed-form cosine potential
``W(u) = (1 - cos 2 pi u) / (4 pi^2)`` and a custom potential given by one
period of uniform samples of ``W`` (optionally with ``W'`` and ``W''``).
Missing derivative tables are built spectrally from the ``W`` samples.  Custom
tables are evaluated with periodic cubic splines (interpolation order 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "PotentialSpec",
    "ClauseResult",
    "ValidationReport",
    "potential_eval",
    "validate_potential",
    "load_potential",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PotentialSpec:
    """A 1-periodic potential.

    Use :meth:`cosine` or :meth:`from_samples` rather than the constructor.

    Attributes
    ----------
    kind : {"cosine", "custom-sampled"}
    u : ndarray or None
        Sample nodes ``k / n`` for ``k = 0..n-1`` (custom kind).
    tables : tuple of ndarray
        ``(W, W', W'')`` on ``u`` (custom kind).
    """

    kind: str = "cosine"
    u: np.ndarray | None = field(default=None, repr=False)
    tables: tuple = field(default=(), repr=False)

    @classmethod
    def cosine(cls) -> "PotentialSpec":
        return cls("cosine")

    @classmethod
    def from_samples(cls, w, dw=None, ddw=None) -> "PotentialSpec":
        """Custom potential from ``n`` uniform samples of one period.

        Parameters
        ----------
        w : array_like
            ``W(k/n)`` for ``k = 0..n-1``.
        dw, ddw : array_like, optional
            Derivative tables on the same nodes; computed by spectral
            differentiation when omitted.
        """
        w = np.asarray(w, dtype=float)
        n = w.size
        if n < 8:
            raise ValueError("need at least 8 samples of W")
        k = np.fft.rfftfreq(n, d=1.0 / n)
        if n % 2 == 0:
            k[-1] = 0.0  # drop the unresolved Nyquist mode from derivatives
        wh = np.fft.rfft(w)
        if dw is None:
            dw = np.fft.irfft(1j * TWO_PI * k * wh, n)
        if ddw is None:
            ddw = np.fft.irfft(-(TWO_PI * k) ** 2 * wh, n)
        u = np.arange(n) / n
        tabs = tuple(np.array(t, dtype=float) for t in (w, dw, ddw))
        for t in tabs:
            if t.shape != (n,):
                raise ValueError("derivative tables must match the W samples")
            t.setflags(write=False)
        u.setflags(write=False)
        return cls("custom-sampled", u, tabs)

    @classmethod
    def from_function(cls, func, n: int = 1024) -> "PotentialSpec":
        """Sample ``func`` on one period and tabulate spectrally."""
        return cls.from_samples(func(np.arange(n) / n))

    @cached_property
    def _splines(self):
        uu = np.append(self.u, 1.0)
        return tuple(CubicSpline(uu, np.append(t, t[0]), bc_type="periodic")
                     for t in self.tables)

    def __call__(self, u, order: int = 0):
        return potential_eval(self, u, order)

    @property
    def alpha(self) -> float:
        """``W''(0)``."""
        return float(potential_eval(self, 0.0, 2))

    @property
    def w3_at_zero(self) -> float:
        """Third derivative of W at 0; sets the ``1/z`` far field of the corrector."""
        if self.kind == "cosine":
            return 0.0
        return float(self._splines[2](0.0, 1))

    @property
    def max_abs_w2(self) -> float:
        """``max |W''|`` over one period."""
        if self.kind == "cosine":
            return 1.0
        return float(np.max(np.abs(self.tables[2])))


def potential_eval(spec: PotentialSpec, u, order: int = 0):
    """``W``, ``W'`` or ``W''`` at ``u`` (scalar or array)."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    u = np.asarray(u, dtype=float)
    if spec.kind == "cosine":
        if order == 0:
            out = (1.0 - np.cos(TWO_PI * u)) / (TWO_PI**2)
        elif order == 1:
            out = np.sin(TWO_PI * u) / TWO_PI
        else:
            out = np.cos(TWO_PI * u)
    elif spec.kind == "custom-sampled":
        out = spec._splines[order](u - np.floor(u))
    else:
        raise ValueError(f"unknown potential kind {spec.kind!r}")
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ClauseResult:
    name: str
    passed: bool
    detail: str = ""
    point: float | None = None


@dataclass(frozen=True)
class ValidationReport:
    clauses: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.clauses)

    def failed(self) -> list:
        return [c.name for c in self.clauses if not c.passed]

    def __getitem__(self, name) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_potential(spec: PotentialSpec, periodic_tol: float = 1e-8,
                       zero_tol: float = 1e-10, curvature_tol: float = 1e-8,
                       n_check: int = 2048) -> ValidationReport:
    """Check the sample-testable assumptions on ``W``.

    Clauses: ``"periodic"`` (W(u+1) = W(u)), ``"W(0) = 0"``,
    ``"W > 0 off integers"`` and ``"W''(0) > 0"``.  Failures carry the
    offending sample point.
    """
    if spec.kind == "custom-sampled":
        u = np.asarray(spec.u)
        w = np.asarray(spec.tables[0])
    else:
        u = np.arange(n_check) / n_check
        w = potential_eval(spec, u, 0)
    clauses = []

    shifted = potential_eval(spec, u + 1.0, 0)
    dev = np.abs(shifted - w)
    i = int(np.argmax(dev))
    clauses.append(ClauseResult("periodic", bool(dev[i] <= periodic_tol),
                                f"max |W(u+1) - W(u)| = {dev[i]:.3g}", float(u[i])))

    w0 = float(potential_eval(spec, 0.0, 0))
    clauses.append(ClauseResult("W(0) = 0", abs(w0) <= zero_tol, f"W(0) = {w0:.3g}", 0.0))

    off = u > 0
    bad = np.flatnonzero(w[off] <= 0.0)
    if bad.size:
        j = bad[np.argmin(w[off][bad])]
        clauses.append(ClauseResult("W > 0 off integers", False,
                                    f"W = {w[off][j]:.3g}", float(u[off][j])))
    else:
        clauses.append(ClauseResult("W > 0 off integers", True,
                                    f"min W = {w[off].min():.3g}"))

    a = spec.alpha
    clauses.append(ClauseResult("W''(0) > 0", a > curvature_tol, f"W''(0) = {a:.3g}", 0.0))
    return ValidationReport(tuple(clauses))


def load_potential(path) -> PotentialSpec:
    """Load a custom potential from a two-column text file ``u W(u)``.

    The ``u`` column must be a uniform partition of ``[0, 1)``, optionally
    closed by a ``u = 1`` row, which must repeat the ``u = 0`` value.
    """
    data = np.loadtxt(Path(path), comments="#", ndmin=2)
    u, w = data[:, 0], data[:, 1]
    if abs(u[-1] - 1.0) < 1e-12:
        if abs(w[-1] - w[0]) > 1e-8:
            raise ValueError(f"{path}: W(1) = {w[-1]} differs from W(0) = {w[0]}")
        u, w = u[:-1], w[:-1]
    n = u.size
    if abs(u[0]) > 1e-12 or np.max(np.abs(u - np.arange(n) / n)) > 1e-9:
        raise ValueError(f"{path}: u must be uniform samples k/n of [0, 1)")
    return PotentialSpec.from_samples(w)
