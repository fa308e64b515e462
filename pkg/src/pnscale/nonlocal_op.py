"""Half-Laplacian I1 on uniform grids, its short/long-range split, the
discrete particle sum and the Hilbert transform.

Conventions
-----------
``I1[v](x) = (1/pi) PV int (v(y) - v(x)) / (y - x)^2 dy``.

On a uniform grid the integral is written over the half-line ``s > 0`` with
the even integrand ``g(s) = (v(x+s) + v(x-s) - 2 v(x)) / s^2`` and integrated
with the trapezoid rule; ``g(0)`` is the centred second difference.  Samples
beyond the grid ends are replaced by the declared far-field limits, whose
contribution is summed in closed form with the trigamma function.  Fields
with a ``c / y`` far-field correction (layer profiles) add its exact integral
beyond the half-cell past each end.

All operator weights are nonnegative off the diagonal, so explicit schemes
built on top of the batched form are monotone.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve
from scipy.special import polygamma

logger = logging.getLogger(__name__)

__all__ = [
    "GridField",
    "GridError",
    "I1Operator",
    "i1_operator",
    "i1_apply",
    "i1_apply_all",
    "i1_short",
    "i1_long",
    "particle_sum",
    "hilbert",
    "DIAGONAL_WEIGHT",
]

# Full row sum of the unscaled weights: 2 * (1/2 + sum 1/k^2).
DIAGONAL_WEIGHT = 1.0 + math.pi**2 / 3.0

FIELD_FORMAT_VERSION = 1

# Grids above this size apply the Toeplitz operators by FFT convolution
# instead of a cached dense matrix.
DENSE_LIMIT = 4096


class GridError(ValueError):
    """Raised for evaluation points or grids that violate a precondition."""


@dataclass(frozen=True)
class GridField:
    """A bounded function sampled on a uniform grid with far-field limits.

    Parameters
    ----------
    origin : float
        Position of the first node.
    step : float
        Grid spacing ``h > 0``.
    values : ndarray
        Samples, at least 4.
    left_limit, right_limit : float
        Limits of the function as ``x -> -inf`` and ``x -> +inf``.
    left_tail, right_tail : float
        Optional coefficients ``c`` of a far-field model ``limit + c / x``.
    """

    origin: float
    step: float
    values: np.ndarray
    left_limit: float = 0.0
    right_limit: float = 0.0
    left_tail: float = 0.0
    right_tail: float = 0.0
    limit_tol: float = dc_field(default=1e-2, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if not self.step > 0:
            raise GridError(f"grid step must be positive, got {self.step}")
        if vals.ndim != 1 or vals.size < 4:
            raise GridError("a GridField needs at least 4 samples")
        if not np.all(np.isfinite(vals)):
            raise GridError("GridField samples must be finite")
        if (abs(vals[0] - self.left_limit) > self.limit_tol
                or abs(vals[-1] - self.right_limit) > self.limit_tol):
            logger.warning(
                "end samples (%.4g, %.4g) are far from declared limits (%.4g, %.4g)",
                vals[0], vals[-1], self.left_limit, self.right_limit)

    @classmethod
    def from_function(cls, f, a, b, h, left_limit=None, right_limit=None, **kw):
        """Sample ``f`` on ``[a, b]`` with spacing close to ``h``.

        The node count is rounded so that both ends are nodes. Limits default
        to the end samples.
        """
        n = int(round((b - a) / h)) + 1
        x = np.linspace(a, b, n)
        v = np.asarray(f(x), dtype=float)
        if left_limit is None:
            left_limit = float(v[0])
        if right_limit is None:
            right_limit = float(v[-1])
        return cls(float(a), float(x[1] - x[0]), v, left_limit, right_limit, **kw)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.n)

    @property
    def a(self) -> float:
        return self.origin

    @property
    def b(self) -> float:
        return self.origin + self.step * (self.n - 1)

    def with_values(self, values) -> "GridField":
        return replace(self, values=np.asarray(values, dtype=float))

    def interp(self, x):
        """Piecewise-linear interpolation, limits outside the grid."""
        return np.interp(x, self.x, self.values,
                         left=self.left_limit, right=self.right_limit)

    def lipschitz(self) -> float:
        """Largest absolute divided difference between neighbouring nodes."""
        return float(np.max(np.abs(np.diff(self.values))) / self.step)

    def c11_norm(self) -> float:
        """Discrete ``||v''||_inf`` from centred second differences."""
        v = self.values
        return float(np.max(np.abs(v[2:] - 2 * v[1:-1] + v[:-2])) / self.step**2)

    def save(self, path) -> Path:
        """Write as two-column text ``x v`` with header lines for the limits."""
        path = Path(path)
        header = "\n".join([
            f"gridfield v{FIELD_FORMAT_VERSION}",
            f"origin = {self.origin!r}",
            f"step = {self.step!r}",
            f"left_limit = {self.left_limit!r}",
            f"right_limit = {self.right_limit!r}",
            f"left_tail = {self.left_tail!r}",
            f"right_tail = {self.right_tail!r}",
            "columns = x v",
        ])
        np.savetxt(path, np.column_stack([self.x, self.values]),
                   fmt="%.17g", header=header, comments="# ")
        return path

    @classmethod
    def load(cls, path) -> "GridField":
        """Read a file written by :meth:`save` and validate the grid."""
        meta = {}
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
        data = np.loadtxt(path, comments="#", ndmin=2)
        x, v = data[:, 0], data[:, 1]
        dx = np.diff(x)
        if np.any(dx <= 0):
            raise GridError(f"{path}: grid is not strictly increasing")
        h = float(meta.get("step", dx.mean()))
        if np.max(np.abs(dx - h)) > 1e-9 * max(1.0, abs(h)) * x.size:
            raise GridError(f"{path}: grid is not uniform")
        return cls(float(meta.get("origin", x[0])), h, v,
                   float(meta.get("left_limit", v[0])),
                   float(meta.get("right_limit", v[-1])),
                   float(meta.get("left_tail", 0.0)),
                   float(meta.get("right_tail", 0.0)))


# ---------------------------------------------------------------------------
# weights and far-field closure


def _pair_weights(kmax: int) -> np.ndarray:
    """Unscaled trapezoid weights for offsets ``k = 0..kmax``."""
    k = np.arange(kmax + 1, dtype=float)
    w = np.zeros(kmax + 1)
    w[1:] = 1.0 / k[1:] ** 2
    if kmax >= 1:
        w[1] += 0.5
    return w


@functools.lru_cache(maxsize=4)
def _i1_toeplitz(n: int) -> np.ndarray:
    mat = toeplitz(_i1_column(n))
    mat.setflags(write=False)
    return mat


def _i1_column(n: int) -> np.ndarray:
    col = _pair_weights(n - 1)
    col[0] = -DIAGONAL_WEIGHT
    return col


def _toeplitz_apply(kernel: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out_i = sum_j kernel[i - j + n - 1] values_j`` by FFT convolution."""
    n = values.size
    return fftconvolve(values, kernel)[n - 1:2 * n - 1]


def _ghost_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Weights of the left and right limits in each node's row."""
    i = np.arange(n, dtype=float)
    wl = polygamma(1, i + 1.0)
    wr = polygamma(1, n - i)
    wl[0] += 0.5
    wr[-1] += 0.5
    return wl, wr


def _tail_q(s):
    """``q(s) = 1/(s(1-s)) + log(1-s)/s^2`` for ``s < 1``, series near 0."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = np.abs(s) < 0.05
    ss = s[small]
    acc = np.zeros_like(ss)
    for n in range(29, -1, -1):
        acc = acc * ss + (n + 1.0) / (n + 2.0)
    out[small] = acc
    sb = s[~small]
    out[~small] = 1.0 / (sb * (1.0 - sb)) + np.log1p(-sb) / sb**2
    return out


def _tail_right(c, x, lo):
    """``int_lo^inf c / (y (y - x)^2) dy`` for ``lo > max(x, 0)``."""
    if c == 0.0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return c / lo**2 * _tail_q(np.asarray(x, dtype=float) / lo)


def _tail_right_between(c, x, lo, hi):
    if c == 0.0 or hi <= lo:
        return 0.0 * np.asarray(x, dtype=float)
    upper = _tail_right(c, x, hi) if np.isfinite(hi) else 0.0
    return _tail_right(c, x, lo) - upper


def _tail_terms(f: GridField, x, lo_dist=0.0, hi_dist=math.inf):
    """Far-field ``c/y`` corrections restricted to ``lo_dist <= |y-x| < hi_dist``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    if f.right_tail != 0.0:
        B = f.b + 0.5 * f.step
        lo = np.maximum(B, x + lo_dist)
        hi = x + hi_dist
        upper = np.where(np.isfinite(hi), hi, 0.0)
        val = _tail_right(f.right_tail, x, lo)
        val = val - np.where(np.isfinite(hi) & (hi > lo),
                             _tail_right(f.right_tail, x, np.maximum(upper, lo)), 0.0)
        out += np.where(hi > lo, val, 0.0)
    if f.left_tail != 0.0:
        A = -(f.a - 0.5 * f.step)
        xm = -x
        lo = np.maximum(A, xm + lo_dist)
        hi = xm + hi_dist
        upper = np.where(np.isfinite(hi), hi, 0.0)
        val = _tail_right(f.left_tail, xm, lo)
        val = val - np.where(np.isfinite(hi) & (hi > lo),
                             _tail_right(f.left_tail, xm, np.maximum(upper, lo)), 0.0)
        out -= np.where(hi > lo, val, 0.0)
    return out / math.pi


# ---------------------------------------------------------------------------
# batched form


class I1Operator:
    """Dense matrix form ``I1[v] = A v + c`` on a fixed grid geometry.

    The affine part ``c`` carries the far-field limits and tails, so one
    instance can be reused for every field sharing those.
    """

    def __init__(self, n: int, step: float, left_limit=0.0, right_limit=0.0,
                 left_tail=0.0, right_tail=0.0, origin=0.0):
        self.n = n
        self.step = step
        self.scale = 1.0 / (math.pi * step)
        if n <= DENSE_LIMIT:
            self._mat = _i1_toeplitz(n)
        else:
            col = _i1_column(n)
            self._mat = None
            self._kernel = np.concatenate([col[:0:-1], col])
        wl, wr = _ghost_weights(n)
        x = origin + step * np.arange(n)
        probe = GridField(origin, step, np.zeros(n), left_limit, right_limit,
                          left_tail, right_tail, limit_tol=math.inf)
        self.affine = (left_limit * wl + right_limit * wr) * self.scale + _tail_terms(probe, x)

    @property
    def diagonal(self) -> float:
        """The (constant, negative) diagonal entry."""
        return -DIAGONAL_WEIGHT * self.scale

    def matrix(self) -> np.ndarray:
        """Scaled dense matrix (a fresh copy)."""
        mat = self._mat if self._mat is not None else toeplitz(_i1_column(self.n))
        return mat * self.scale

    def apply(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self._mat is not None:
            return (self._mat @ values) * self.scale + self.affine
        return _toeplitz_apply(self._kernel, values) * self.scale + self.affine


def i1_operator(field: GridField) -> I1Operator:
    return I1Operator(field.n, field.step, field.left_limit, field.right_limit,
                      field.left_tail, field.right_tail, field.origin)


def i1_apply_all(field: GridField) -> np.ndarray:
    """I1 of ``field`` at every node (dense matrix, or FFT on large grids)."""
    return i1_operator(field).apply(field.values)


# ---------------------------------------------------------------------------
# pointwise form


def _locate(field: GridField, x: float) -> tuple[int, float]:
    """Bracketing node index and fractional offset; error outside the grid."""
    t = (x - field.origin) / field.step
    if not (-1e-9 <= t <= field.n - 1 + 1e-9):
        raise GridError(f"x = {x} is outside the grid span [{field.a}, {field.b}]")
    j = min(max(int(math.floor(t)), 0), field.n - 2)
    return j, min(max(t - j, 0.0), 1.0)


def _node_profile(field: GridField, j: int):
    """Symmetric integrand samples ``g_k``, ``k = 0..K`` at node ``j``.

    ``K`` is the first offset at which both neighbours are ghost limits.
    """
    v = field.values
    n = field.n
    K = max(j, n - 1 - j) + 1
    k = np.arange(K + 1)
    right = np.where(j + k <= n - 1, v[np.minimum(j + k, n - 1)], field.right_limit)
    left = np.where(j - k >= 0, v[np.maximum(j - k, 0)], field.left_limit)
    num = right + left - 2.0 * v[j]
    g = np.empty(K + 1)
    g[1:] = num[1:] / (k[1:] * field.step) ** 2
    g[0] = num[1] / field.step**2
    # beyond K every term equals the ghost value
    ghost = field.left_limit + field.right_limit - 2.0 * v[j]
    return g, ghost


def _node_split(field: GridField, j: int, r: float | None):
    """Short and long parts at node ``j`` (``r=None``: all in long)."""
    h = field.step
    g, ghost = _node_profile(field, j)
    K = g.size - 1
    gh = ghost / h**2

    def G(k):
        return g[k] if k <= K else gh / k**2

    def gsum(lo, hi=None):
        # sum of G(k) for lo <= k <= hi (hi=None: to infinity), lo >= 1
        if hi is not None and hi < lo:
            return 0.0
        top = K if hi is None else min(hi, K)
        total = float(np.sum(g[lo:top + 1])) if lo <= top else 0.0
        first_ghost = max(lo, K + 1)
        if hi is None:
            total += gh * polygamma(1, float(first_ghost))
        elif hi >= first_ghost:
            total += gh * (polygamma(1, float(first_ghost)) - polygamma(1, hi + 1.0))
        return total

    xj = field.origin + j * h
    if r is None:
        full = h * (0.5 * g[0] + gsum(1)) + math.pi * _tail_terms(field, xj)
        return 0.0, float(full) / math.pi

    m = int(math.floor(r / h))
    theta = r / h - m
    g_m, g_m1 = G(m), G(m + 1)
    g_r = g_m + theta * (g_m1 - g_m)
    short = 0.5 * theta * h * (g_m + g_r)
    if m >= 1:
        short += h * (0.5 * g[0] + gsum(1, m - 1) + 0.5 * g_m)
    long_ = 0.5 * (1.0 - theta) * h * (g_r + g_m1) + h * (0.5 * g_m1 + gsum(m + 2))
    short += math.pi * _tail_terms(field, xj, 0.0, r)
    long_ += math.pi * _tail_terms(field, xj, r, math.inf)
    return float(short) / math.pi, float(long_) / math.pi


def _pointwise(field, x, r, part):
    j, t = _locate(field, float(x))
    a = _node_split(field, j, r)[part]
    if t == 0.0:
        return float(a)
    b = _node_split(field, j + 1, r)[part]
    return float((1.0 - t) * a + t * b)


def i1_apply(field: GridField, x: float) -> float:
    """I1 of ``field`` at ``x``.

    Off-node points interpolate linearly between the two bracketing node
    values, which keeps the second-order accuracy of the node rule.
    """
    return _pointwise(field, x, None, 1)


def i1_short(field: GridField, x: float, r: float) -> float:
    """Contribution of ``|y - x| < r`` to I1 at ``x``."""
    if not r > 0:
        raise ValueError("r must be positive")
    return _pointwise(field, x, r, 0)


def i1_long(field: GridField, x: float, r: float) -> float:
    """Contribution of ``|y - x| >= r`` to I1 at ``x``."""
    if not r > 0:
        raise ValueError("r must be positive")
    return _pointwise(field, x, r, 1)


# ---------------------------------------------------------------------------
# particle sum and Hilbert transform


def particle_sum(particles, xbar: float) -> float:
    """``(1/pi) sum_{i != i0} eps b_i / (x_i - xbar)`` with ``i0`` the closest
    particle (ties go to the larger index)."""
    x = np.asarray(particles.positions, dtype=float)
    b = np.asarray(particles.orientations, dtype=float)
    if x.size == 0:
        raise ValueError("particle_sum needs at least one particle")
    d = np.abs(x - xbar)
    i0 = int(np.flatnonzero(d == d.min())[-1])
    mask = np.ones(x.size, dtype=bool)
    mask[i0] = False
    return float(particles.epsilon * np.sum(b[mask] / (x[mask] - xbar)) / math.pi)


@functools.lru_cache(maxsize=2)
def _hilbert_kernel(n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    col = np.zeros(n)
    col[1:] = 1.0 / k[1:]
    col[1] += 0.5
    # row i: coefficient of f_{i-k} is +col[k], of f_{i+k} is -col[k]
    kern = np.concatenate([-col[:0:-1], col]) / math.pi
    kern.setflags(write=False)
    return kern


def hilbert(field: GridField) -> GridField:
    """Hilbert transform ``(1/pi) PV int f(y) / (x - y) dy`` at every node.

    The left limit is subtracted first; both limits should agree.  The
    output has zero limits.
    """
    base = field.left_limit
    if abs(field.right_limit - base) > 1e-12 * max(1.0, abs(base)):
        logger.warning("hilbert: unequal limits %.4g and %.4g; subtracting the left one",
                       field.left_limit, field.right_limit)
    out = _toeplitz_apply(_hilbert_kernel(field.n), field.values - base)
    return GridField(field.origin, field.step, out, 0.0, 0.0, limit_tol=math.inf)
