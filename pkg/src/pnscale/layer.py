"""Layer profile phi, corrector psi and the mobility constant c0.

The layer solves ``I1[phi] = W'(phi)`` with ``phi(-inf) = 0``,
``phi(+inf) = 1`` and ``phi(0) = 1/2``.  Beyond the truncated grid
``[-Z, Z]`` it is modelled by ``H(z) - 1/(alpha pi z)``.

The corrector at driving level ``L`` solves

    I1[psi] - W''(phi) psi = (L/alpha) (W''(phi) - alpha) + c0 L phi'

with ``psi -> 0`` at infinity and far-field model ``psi ~ K2 / z``.  The
homogeneous problem has the translation mode ``phi'`` in its kernel, so the
discrete solution is normalised by ``<psi, phi'> = 0``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from .nonlocal_op import GridField, I1Operator
from .potential import PotentialSpec, potential_eval

logger = logging.getLogger(__name__)

__all__ = [
    "LayerProfile",
    "CorrectorProfile",
    "LayerSolveError",
    "CorrectorSolveError",
    "solve_layer",
    "solve_corrector",
    "phi_eval",
    "phi_prime",
    "psi_eval",
    "compute_c0",
    "layer_residual",
    "save_profile",
    "load_profile",
    "default_layer",
]

PROFILE_FORMAT_VERSION = 1


class LayerSolveError(RuntimeError):
    """The layer iteration did not reach the requested residual."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class CorrectorSolveError(RuntimeError):
    """The bordered corrector system is singular or ill-conditioned."""


def _symmetric_grid(Z: float, h: float) -> tuple[float, float, int]:
    m = int(round(Z / h))
    step = Z / m
    return -Z, step, 2 * m + 1


def _outer_quarter(z, Z):
    return np.abs(z) >= 0.75 * Z


@dataclass(frozen=True)
class LayerProfile:
    """Tabulated layer on a symmetric grid plus its far-field model.

    Attributes
    ----------
    origin, step : float
        Grid ``z_k = origin + k * step``, symmetric about 0.
    values : ndarray
        Samples of phi.
    alpha : float
        ``W''(0)`` of the potential the layer was solved for.
    tail_constant : float
        ``1/(alpha pi)``; ``phi ~ H(z) - tail_constant / z`` for large ``|z|``.
    k1 : float
        Least-squares coefficient of the ``1/z^2`` remainder on the outer quarter.
    residual : float
        ``max |I1[phi] - W'(phi)|`` over the inner half of the grid.
    """

    origin: float
    step: float
    values: np.ndarray = field(repr=False)
    alpha: float
    tail_constant: float
    k1: float = 0.0
    residual: float = math.nan

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def z(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.values.size)

    @property
    def truncation(self) -> float:
        return -self.origin

    def as_field(self) -> GridField:
        tc = self.tail_constant
        return GridField(self.origin, self.step, self.values, 0.0, 1.0, -tc, -tc,
                         limit_tol=math.inf)

    @cached_property
    def _pchip(self):
        return PchipInterpolator(self.z, self.values, extrapolate=False)

    @cached_property
    def _dpchip(self):
        return self._pchip.derivative()


@dataclass(frozen=True)
class CorrectorProfile:
    """Tabulated corrector psi with far-field model ``K / z``.

    ``tail_coefficient`` is the asymptotic ``K = L W3 / (alpha^3 pi)``, with
    ``W3`` the third derivative of W at 0, used to close the operator beyond
    the grid; ``k2`` and ``k3`` are the least-squares fit
    ``psi ~ K2/z + K3/z^2`` on the outer quarter.  ``multiplier`` is the
    coefficient of ``phi'`` needed to make the discrete system solvable; it
    acts as a correction to ``c0 L`` and shows up in ``residual``.
    """

    origin: float
    step: float
    values: np.ndarray = field(repr=False)
    L: float
    alpha: float
    k2: float = 0.0
    k3: float = 0.0
    tail_coefficient: float = 0.0
    multiplier: float = 0.0
    residual: float = math.nan

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def z(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.values.size)

    @property
    def truncation(self) -> float:
        return -self.origin

    def scaled(self, L: float) -> "CorrectorProfile":
        """Corrector at another level, by linearity in ``L``."""
        if self.L == 0.0:
            if L != 0.0:
                raise ValueError("cannot rescale a corrector solved at L = 0")
            return self
        s = L / self.L
        return replace(self, values=s * self.values, L=L, k2=s * self.k2, k3=s * self.k3,
                       tail_coefficient=s * self.tail_coefficient,
                       multiplier=s * self.multiplier, residual=abs(s) * self.residual)

    def as_field(self) -> GridField:
        k = self.tail_coefficient
        return GridField(self.origin, self.step, self.values, 0.0, 0.0, k, k,
                         limit_tol=math.inf)

    @cached_property
    def _pchip(self):
        return PchipInterpolator(self.z, self.values, extrapolate=False)


# ---------------------------------------------------------------------------
# evaluation


def phi_eval(profile: LayerProfile, z, b: int = 1):
    """``phi(z)`` for ``b = +1`` and ``phi(-z) - 1`` for ``b = -1``."""
    if b not in (1, -1):
        raise ValueError("orientation must be +1 or -1")
    z = np.asarray(z, dtype=float)
    zz = z if b == 1 else -z
    Z = profile.truncation
    inside = np.abs(zz) <= Z
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(zz > 0, 1.0, 0.0) - profile.tail_constant / zz
    out = np.where(inside, profile._pchip(np.clip(zz, -Z, Z)), tail)
    if b == -1:
        out = out - 1.0
    return float(out) if out.ndim == 0 else out


def phi_prime(profile: LayerProfile, z):
    """``phi'(z)`` from the interpolant inside the grid and the tail outside."""
    z = np.asarray(z, dtype=float)
    Z = profile.truncation
    inside = np.abs(z) <= Z
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = profile.tail_constant / z**2
    out = np.where(inside, profile._dpchip(np.clip(z, -Z, Z)), tail)
    return float(out) if out.ndim == 0 else out


def psi_eval(profile: CorrectorProfile, z, b: int = 1):
    """``psi(b z)``; beyond the grid ``K2 / (b z)`` from the fitted tail."""
    if b not in (1, -1):
        raise ValueError("orientation must be +1 or -1")
    z = np.asarray(z, dtype=float)
    zz = z if b == 1 else -z
    Z = profile.truncation
    inside = np.abs(zz) <= Z
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = profile.k2 / zz
    out = np.where(inside, profile._pchip(np.clip(zz, -Z, Z)), tail)
    return float(out) if out.ndim == 0 else out


def _derivative(values, step):
    """Fourth-order centred differences, second order near the ends."""
    d = np.gradient(values, step)
    v = values
    d[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * step)
    return d


def compute_c0(layer: LayerProfile) -> float:
    """``1 / int (phi')^2 dz``.

    Fourth-order differences and the trapezoid rule on the grid, plus the
    exact integral of the ``c / z^2`` model of ``phi'`` beyond it, with ``c``
    matched to the end slopes.
    """
    d = _derivative(layer.values, layer.step)
    inner = np.trapezoid(d**2, dx=layer.step)
    Z = layer.truncation
    # tail model matched to the end slopes
    cl = d[0] * Z**2
    cr = d[-1] * Z**2
    outer = (cl**2 + cr**2) / (3.0 * Z**3)
    return float(1.0 / (inner + outer))


# ---------------------------------------------------------------------------
# solvers


def layer_residual(spec: PotentialSpec, layer: LayerProfile) -> np.ndarray:
    """``I1[phi] - W'(phi)`` at every node."""
    f = layer.as_field()
    op = I1Operator(f.n, f.step, 0.0, 1.0, f.left_tail, f.right_tail, f.origin)
    return op.apply(f.values) - potential_eval(spec, f.values, 1)


def _fit_tail(z, d, powers):
    """Least-squares coefficients of ``d ~ sum c_p / z^p``."""
    M = np.column_stack([1.0 / z**p for p in powers])
    coef, *_ = np.linalg.lstsq(M, d, rcond=None)
    return coef


def solve_layer(spec: PotentialSpec, Z: float = 100.0, h: float = 0.05, tol: float = 1e-5,
                max_iter: int = 300, newton_iter: int = 12) -> LayerProfile:
    """Solve the layer equation on ``[-Z, Z]``.

    Starts at ``1/2 + arctan(z)/pi`` and runs the damped pseudo-time
    iteration ``phi <- phi + tau (I1[phi] - W'(phi))`` with
    ``tau (|diag I1| + max|W''|) < 1``.  If the inner-half residual is still
    above ``tol`` after ``max_iter`` sweeps, Newton steps with ``phi(0) = 1/2``
    pinned finish the solve.

    Raises
    ------
    LayerSolveError
        If the residual target is not met.
    """
    if Z < 50 or h > 0.1 or tol <= 0:
        raise ValueError("solve_layer requires Z >= 50, h <= 0.1 and tol > 0")
    alpha = spec.alpha
    if not alpha > 0:
        raise ValueError("potential must have W''(0) > 0")
    tc = 1.0 / (alpha * math.pi)
    origin, step, n = _symmetric_grid(Z, h)
    z = origin + step * np.arange(n)
    inner = np.abs(z) <= 0.5 * Z
    centre = n // 2
    op = I1Operator(n, step, 0.0, 1.0, -tc, -tc, origin)

    def residual(phi):
        return op.apply(phi) - potential_eval(spec, phi, 1)

    phi = 0.5 + np.arctan(alpha * z) / math.pi
    tau = 0.9 / (abs(op.diagonal) + spec.max_abs_w2)
    t0 = time.perf_counter()
    r = residual(phi)
    err = float(np.max(np.abs(r[inner])))
    it = 0
    while err > tol and it < max_iter:
        phi = phi + tau * r
        r = residual(phi)
        err = float(np.max(np.abs(r[inner])))
        it += 1
    logger.debug("layer pseudo-time: %d sweeps, residual %.3e", it, err)

    if err > tol or abs(phi[centre] - 0.5) > tol:
        dphi = np.gradient(phi, step)
        for k in range(newton_iter):
            J = op.matrix()
            J[np.diag_indices(n)] -= potential_eval(spec, phi, 2)
            M = np.zeros((n + 1, n + 1))
            M[:n, :n] = J
            M[:n, n] = dphi
            M[n, centre] = 1.0
            rhs = np.concatenate([-r, [0.5 - phi[centre]]])
            try:
                sol = np.linalg.solve(M, rhs)
            except LinAlgError as exc:
                raise LayerSolveError("singular Newton system", err, it + k) from exc
            phi = phi + sol[:n]
            dphi = np.gradient(phi, step)
            r = residual(phi)
            err = float(np.max(np.abs(r[inner])))
            logger.debug("layer Newton %d: residual %.3e", k, err)
            if err < 0.01 * tol or np.max(np.abs(sol[:n])) < 1e-12:
                break
        it += k + 1
    if err > tol or not np.all(np.diff(phi) > 0):
        raise LayerSolveError("layer solve did not converge", err, it)
    logger.info("layer solved in %.2fs, residual %.2e", time.perf_counter() - t0, err)

    outer = _outer_quarter(z, Z)
    zo = z[outer]
    dev = phi[outer] - (zo > 0) + tc / zo
    k1 = float(_fit_tail(zo, dev, [2])[0])
    return LayerProfile(origin, step, phi, alpha, tc, k1, err)


def solve_corrector(spec: PotentialSpec, layer: LayerProfile, L: float,
                    Z: float | None = None, h: float | None = None,
                    tol: float = 1e-2, c0: float | None = None) -> CorrectorProfile:
    """Solve the corrector equation at level ``L``.

    Beyond the grid psi is closed with its asymptotic tail ``K / z``,
    ``K = L W3 / (alpha^3 pi)`` (``W3`` the third derivative of W at 0),
    which balances ``alpha psi`` against the ``1/z`` part of
    ``W''(phi) - alpha``.  The dense system is bordered by a ``phi'`` column
    (the multiplier) and the row ``<psi, phi'> = 0`` removing the
    translation mode.

    The residual checked against ``tol`` is that of the equation with the
    given ``c0``, so it includes ``|multiplier| max phi'``.

    Raises
    ------
    CorrectorSolveError
        On a singular or ill-conditioned system, or a residual above ``tol``.
    """
    alpha = layer.alpha
    if abs(alpha - spec.alpha) > 1e-8 * max(1.0, abs(alpha)):
        raise ValueError("layer was solved for a different potential")
    if Z is None:
        Z = layer.truncation
    if h is None:
        h = layer.step
    origin, step, n = _symmetric_grid(Z, h)
    z = origin + step * np.arange(n)
    if n == layer.values.size and abs(step - layer.step) < 1e-14:
        phi = np.array(layer.values)
    else:
        phi = phi_eval(layer, z)
    if c0 is None:
        c0 = compute_c0(layer)
    dphi = _derivative(phi, step)
    w2 = potential_eval(spec, phi, 2)
    forcing = (L / alpha) * (w2 - alpha) + c0 * L * dphi
    K = L * spec.w3_at_zero / (alpha**3 * math.pi)

    op = I1Operator(n, step, 0.0, 0.0, K, K, origin)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = op.matrix()
    M[np.arange(n), np.arange(n)] -= w2
    M[:n, n] = dphi
    M[n, :n] = dphi * step
    rhs = np.zeros(n + 1)
    rhs[:n] = forcing - op.affine
    try:
        lu = lu_factor(M, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise CorrectorSolveError(f"corrector system is singular: {exc}") from exc
    piv = np.abs(np.diag(lu[0]))
    if piv.min() < 1e-13 * piv.max():
        raise CorrectorSolveError(
            f"corrector system is ill-conditioned (pivot ratio {piv.min() / piv.max():.2e})")
    sol = lu_solve(lu, rhs, check_finite=False)
    psi, mu = sol[:n], float(sol[n])
    res = op.apply(psi) - w2 * psi - forcing
    inner = np.abs(z) <= 0.5 * Z
    err = float(np.max(np.abs(res[inner])))
    if not np.isfinite(err) or err > tol:
        raise CorrectorSolveError(f"corrector residual {err:.3e} exceeds tol {tol:.1e}")
    logger.debug("corrector L=%g: residual %.2e, multiplier %.2e", L, err, mu)

    outer = _outer_quarter(z, Z)
    k2, k3 = (float(c) for c in _fit_tail(z[outer], psi[outer], [1, 2]))
    return CorrectorProfile(origin, step, psi, float(L), alpha, k2, k3, K, mu, err)


_DEFAULT_LAYERS: dict = {}


def default_layer(spec: PotentialSpec | None = None, Z: float = 100.0,
                  h: float = 0.05) -> LayerProfile:
    """Layer for ``spec`` (cosine by default), solved once per process."""
    spec = PotentialSpec.cosine() if spec is None else spec
    key = (id(spec) if spec.kind != "cosine" else "cosine", Z, h)
    if key not in _DEFAULT_LAYERS:
        _DEFAULT_LAYERS[key] = solve_layer(spec, Z, h)
    return _DEFAULT_LAYERS[key]


# ---------------------------------------------------------------------------
# serialization


_LAYER_META = ("origin", "step", "alpha", "tail_constant", "k1", "residual")
_CORR_META = ("origin", "step", "L", "alpha", "k2", "k3", "tail_coefficient", "multiplier",
              "residual")


def save_profile(profile, path) -> Path:
    """Write a layer or corrector profile as columnar text ``z value``.

    Floats are written with 17 significant digits so that loading restores
    every value bit for bit.
    """
    path = Path(path)
    if isinstance(profile, LayerProfile):
        kind, keys = "layer", _LAYER_META
    elif isinstance(profile, CorrectorProfile):
        kind, keys = "corrector", _CORR_META
    else:
        raise TypeError(f"cannot save {type(profile).__name__}")
    lines = [f"profile v{PROFILE_FORMAT_VERSION}", f"kind = {kind}", f"n = {profile.values.size}"]
    lines += [f"{k} = {float(getattr(profile, k))!r}" for k in keys]
    lines.append("columns = z value")
    np.savetxt(path, np.column_stack([profile.z, profile.values]), fmt="%.17g",
               header="\n".join(lines), comments="# ")
    return path


def load_profile(path):
    """Read a profile written by :func:`save_profile`."""
    meta = {}
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# profile v"):
            raise ValueError(f"{path}: not a profile file")
        version = int(first.split("v")[-1])
        if version > PROFILE_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported profile version {version}")
        for line in fh:
            if not line.startswith("#"):
                break
            if "=" in line:
                k, v = line[1:].split("=", 1)
                meta[k.strip()] = v.strip()
    data = np.loadtxt(path, comments="#", ndmin=2)
    values = data[:, 1]
    if int(meta["n"]) != values.size:
        raise ValueError(f"{path}: expected {meta['n']} rows, found {values.size}")
    if meta["kind"] == "layer":
        return LayerProfile(values=values, **{k: float(meta[k]) for k in _LAYER_META})
    return CorrectorProfile(values=values, **{k: float(meta[k]) for k in _CORR_META})
