"""Scenarios, regime checks, convergence studies and the command line.

Configuration files are plain text, one ``key = value`` per line.  ``#``
starts a comment, blank lines are ignored, and comma-separated values form
lists.  Recognised keys are the fields of :class:`SimConfig`; ``domain`` and
``window`` take two numbers, ``epsilons``, ``deltas`` and ``C0`` take lists.
The built-in scenario named by ``scenario`` supplies defaults for every key
the file leaves out.

Example::

    scenario = monotone-step
    epsilons = 0.2, 0.1, 0.05
    delta_rule = eps
    T = 0.2
    window = -1.5, 1.5
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DynamicsError, constant_speed_flow, simulate_ddd
from .layer import (CorrectorSolveError, LayerProfile, LayerSolveError, compute_c0,
                    default_layer, phi_eval, phi_prime, psi_eval, solve_corrector)
from .limit import LimitStepError, solve_limit
from .nonlocal_op import GridError, GridField, i1_apply_all
from .particles import ExtractionError, ParticleSystem, extract
from .pide import PideInstabilityError, solve_pide, write_manifest
from .potential import PotentialSpec, load_potential, potential_eval

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "RegimeError",
    "PreconditionError",
    "SimConfig",
    "SCENARIOS",
    "parse_config",
    "load_config",
    "make_config",
    "initial_field",
    "RegimeReport",
    "validate_regime",
    "run_scenario",
    "comparison_error",
    "convergence_study",
    "supersolution_lambda",
    "SupersolutionReport",
    "supersolution_residual",
    "supersolution_sweep",
    "main",
]


class ConfigError(ValueError):
    """Invalid configuration, raised before any computation."""


class RegimeError(RuntimeError):
    """The scale-separation check failed; carries the report."""

    def __init__(self, report):
        super().__init__(f"regime check failed at eps = {report.epsilon}: "
                         f"delta A = {report.delta_A:.4g} >= {report.threshold}")
        self.report = report


class PreconditionError(ValueError):
    """A hypothesis of the supersolution construction does not hold."""

    def __init__(self, message, pair=None, gap=None):
        super().__init__(message)
        self.pair = pair
        self.gap = gap


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SimConfig:
    """One experiment.

    Attributes
    ----------
    scenario : str
        Name used for output files.
    initial : {"smoothstep", "bump", "flat-bottom", "tanh", "file"}
        Family of the initial datum.
    amplitude, width, center : float
        Shape parameters of the family.
    sigma : float
        Half-width of the flat part (``flat-bottom``).
    field_file : str
        GridField file for ``initial = file``.
    epsilons : tuple of float
        Decreasing level spacings in ``(0, 1)``.
    deltas : tuple of float
        Explicit ``delta`` per epsilon; overrides ``delta_rule``.
    delta_rule : str
        ``"eps"`` or ``"eps^p"``.
    domain : (float, float)
    h_factor : float
        Phase-field grid step ``h = h_factor * eps * delta``.
    limit_h : float
        Grid step of the limit solver.
    T : float
    pide_safety, limit_safety : float
    window : (float, float)
        Compact set on which errors are measured.
    regime_threshold : float
    C0 : tuple of float
        Speed constants swept by the supersolution check.
    samples : int
        Number of sample points of the supersolution check.
    sample_times : int
        Number of sample times of the supersolution check.
    potential : str
        Optional two-column potential file; cosine when empty.
    """

    scenario: str = "monotone-step"
    initial: str = "smoothstep"
    amplitude: float = 1.0
    width: float = 1.0
    center: float = 0.0
    sigma: float = 0.5
    field_file: str = ""
    epsilons: tuple = (0.2, 0.1, 0.05)
    deltas: tuple = ()
    delta_rule: str = "eps"
    domain: tuple = (-2.5, 2.5)
    h_factor: float = 0.5
    limit_h: float = 0.005
    T: float = 0.2
    pide_safety: float = 0.9
    limit_safety: float = 0.9
    window: tuple = (-1.5, 1.5)
    regime_threshold: float = 0.25
    C0: tuple = (0.5, 1.0, 2.0, 4.0, 8.0)
    samples: int = 4001
    sample_times: int = 5
    potential: str = ""

    def __post_init__(self):
        eps = self.epsilons
        if not eps:
            raise ConfigError("epsilons must not be empty")
        if any(not 0.0 < e < 1.0 for e in eps):
            raise ConfigError(f"every epsilon must lie in (0, 1), got {eps}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"epsilons must be strictly decreasing, got {eps}")
        if self.deltas and len(self.deltas) != len(eps):
            raise ConfigError("deltas must have one entry per epsilon")
        if any(d <= 0 for d in self.delta_values()):
            raise ConfigError("delta values must be positive")
        a, b = self.domain
        if not a < b:
            raise ConfigError(f"domain must be an interval, got {self.domain}")
        lo, hi = self.window
        if not a <= lo < hi <= b:
            raise ConfigError(f"window {self.window} must lie inside the domain {self.domain}")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        for name in ("pide_safety", "limit_safety"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in (0, 1]")
        for name in ("h_factor", "limit_h", "width", "sigma", "regime_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.initial not in INITIAL_FAMILIES:
            raise ConfigError(f"unknown initial family {self.initial!r}; "
                              f"choose from {sorted(INITIAL_FAMILIES)}")
        if self.initial == "file" and not self.field_file:
            raise ConfigError("initial = file needs field_file")
        if any(c <= 0 for c in self.C0):
            raise ConfigError("C0 values must be positive")
        if self.samples < 2 or self.sample_times < 1:
            raise ConfigError("samples must be >= 2 and sample_times >= 1")

    def delta_values(self) -> tuple:
        if self.deltas:
            return tuple(float(d) for d in self.deltas)
        rule = self.delta_rule.replace(" ", "")
        if rule == "eps":
            return tuple(self.epsilons)
        if rule.startswith("eps^"):
            try:
                p = float(rule[4:])
            except ValueError:
                raise ConfigError(f"bad delta_rule {self.delta_rule!r}") from None
            return tuple(e**p for e in self.epsilons)
        raise ConfigError(f"unknown delta_rule {self.delta_rule!r}; use 'eps' or 'eps^p'")

    def snapshot_times(self) -> list:
        return [self.T * k / 4 for k in (1, 2, 3, 4)]

    def potential_spec(self) -> PotentialSpec:
        return load_potential(self.potential) if self.potential else PotentialSpec.cosine()


INITIAL_FAMILIES = {"smoothstep", "bump", "flat-bottom", "tanh", "file"}

SCENARIOS = {
    "monotone-step": dict(initial="smoothstep", amplitude=1.0, width=1.0,
                          domain=(-2.5, 2.5), T=0.2, window=(-1.5, 1.5),
                          epsilons=(0.2, 0.1, 0.05)),
    "bump-collision": dict(initial="bump", amplitude=0.45, width=1.0,
                           domain=(-2.5, 2.5), T=0.5, window=(-1.5, 1.5),
                           epsilons=(0.2, 0.1, 0.05)),
    "flat-bottom": dict(initial="flat-bottom", amplitude=0.475, width=1.0, sigma=0.5,
                        domain=(-3.0, 3.0), window=(-2.5, 2.5), epsilons=(0.05,)),
    "tanh": dict(initial="tanh", amplitude=1.0, width=1.0, domain=(-15.0, 15.0),
                 window=(-5.0, 5.0), epsilons=(0.25,)),
}
SCENARIOS["flat-top"] = SCENARIOS["flat-bottom"]

_TUPLE_KEYS = {"epsilons", "deltas", "domain", "window", "C0"}
_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def _convert(key, raw):
    if key in _TUPLE_KEYS:
        try:
            return tuple(float(p) for p in raw.split(",") if p.strip())
        except ValueError:
            raise ConfigError(f"{key}: expected numbers, got {raw!r}") from None
    kind = _FIELDS[key].type
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into typed values (no defaults applied)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _convert(key, raw)
    return out


def make_config(**overrides) -> SimConfig:
    """Scenario defaults updated by ``overrides``."""
    name = overrides.get("scenario", "monotone-step")
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    merged = dict(SCENARIOS[name], scenario=name)
    merged.update(overrides)
    for key in ("epsilons", "deltas", "domain", "window", "C0"):
        if key in merged:
            merged[key] = tuple(float(v) for v in np.atleast_1d(merged[key]))
    for key in ("domain", "window"):
        if len(merged.get(key, (0, 1))) != 2:
            raise ConfigError(f"{key} takes exactly two numbers")
    return SimConfig(**merged)


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return make_config(**parse_config(text))


# ---------------------------------------------------------------------------
# initial data


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def initial_field(config: SimConfig, h: float) -> GridField:
    """Sample the configured initial datum on the domain with step ``h``.

    ``smoothstep`` rises from 0 to ``amplitude`` over ``|x - center| <= width``;
    ``bump`` is ``amplitude (1 - r^2)^2`` for ``r = (x - center)/width`` in
    ``[-1, 1]``; ``flat-bottom`` is 0 on ``|x - center| <= sigma`` and rises to
    ``amplitude`` over a further ``width`` on both sides; ``tanh`` is
    ``amplitude (1 + tanh((x - center)/width)) / 2``.  All are C^{1,1}.
    """
    A, w, c = config.amplitude, config.width, config.center
    a, b = config.domain
    kind = config.initial
    if kind == "smoothstep":
        return GridField.from_function(lambda x: A * _smoothstep((x - c + w) / (2 * w)),
                                       a, b, h, 0.0, A)
    if kind == "bump":
        def f(x):
            r = np.clip((x - c) / w, -1.0, 1.0)
            return A * (1.0 - r * r) ** 2
        return GridField.from_function(f, a, b, h, 0.0, 0.0)
    if kind == "flat-bottom":
        s = config.sigma
        return GridField.from_function(lambda x: A * _smoothstep((np.abs(x - c) - s) / w),
                                       a, b, h, A, A)
    if kind == "tanh":
        return GridField.from_function(lambda x: A * (1.0 + np.tanh((x - c) / w)) / 2,
                                       a, b, h, 0.0, A)
    src = GridField.load(config.field_file)
    return GridField.from_function(src.interp, a, b, h, src.left_limit, src.right_limit)


# ---------------------------------------------------------------------------
# regime


@dataclass(frozen=True)
class RegimeReport:
    """Scale-separation quantities for one ``(eps, delta)``.

    ``A = eps * K`` and ``delta_A = delta * A``; the verdict is ``"pass"``
    iff ``delta_A < threshold``.
    """

    epsilon: float
    delta: float
    K: float
    N0: int
    A: float
    delta_A: float
    threshold: float
    verdict: str
    monotone: bool


def _first_crossing(x, dev, thr):
    """Interpolated position where ``dev`` first reaches ``thr`` (scanning right)."""
    bad = np.flatnonzero(dev >= thr)
    if bad.size == 0:
        return math.inf
    j = int(bad[0])
    if j == 0:
        return -math.inf
    t = (thr - dev[j - 1]) / (dev[j] - dev[j - 1])
    return float(x[j - 1] + t * (x[j] - x[j - 1]))


def validate_regime(u0: GridField, epsilon: float, delta: float,
                    threshold: float = 0.25) -> RegimeReport:
    """Locate the tails of ``u0`` and report ``A = eps K`` and ``delta A``.

    ``K`` is the smallest value with ``|u0 - left_limit| < eps/4`` for
    ``x < -K`` and ``|u0 - right_limit| < eps/4`` for ``x > K``.

    Raises
    ------
    ConfigError
        If a tail does not settle inside the sampled domain.
    """
    x, v = u0.x, u0.values
    thr = epsilon / 4.0
    left = _first_crossing(x, np.abs(v - u0.left_limit), thr)
    right = -_first_crossing(-x[::-1], np.abs(v[::-1] - u0.right_limit), thr)
    if left == -math.inf or right == math.inf:
        raise ConfigError("the eps/4 tail window reaches the end of the sampled domain; "
                          "enlarge the domain")
    K = max(-left if math.isfinite(left) else 0.0,
            right if math.isfinite(right) else 0.0, 0.0)
    N0 = len(extract(u0, epsilon))
    A = epsilon * K
    dA = delta * A
    d = np.diff(v)
    monotone = bool(np.all(d >= 0) or np.all(d <= 0))
    return RegimeReport(epsilon, delta, K, N0, A, dA, threshold,
                        "pass" if dA < threshold else "fail", monotone)


# ---------------------------------------------------------------------------
# runs


def _c0(spec: PotentialSpec) -> float:
    return compute_c0(default_layer(spec))


def _eps_tag(eps: float) -> str:
    return f"eps{eps:.6g}"


class _Manifest:
    def __init__(self, out: Path):
        self.out = out
        self.rows = []

    def add(self, path: Path, kind: str, epsilon="", time_=""):
        rel = str(Path(path).relative_to(self.out))
        if any(r[0] == rel for r in self.rows):
            raise RuntimeError(f"artifact {rel} listed twice")
        self.rows.append((rel, kind, epsilon, time_))

    def write(self, name="manifest.csv") -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "kind", "epsilon", "time"])
            w.writerows(self.rows)
        return path


def _add_states(man: _Manifest, states, directory: Path, prefix: str, kind: str, eps=""):
    mpath = write_manifest(states, directory, prefix)
    for s in states:
        man.add(directory / f"{prefix}_t{s.time:.6f}.txt", kind, eps, repr(float(s.time)))
    man.add(mpath, f"{kind}-manifest", eps)


def run_scenario(config: SimConfig, out, pipelines=("pide", "limit", "ddd")) -> Path:
    """Run the requested pipelines and write artifacts plus ``manifest.csv``.

    The limit solver runs once on its own grid; the phase-field and particle
    pipelines run for every ``(eps, delta)``.  Particles move in ``x`` with
    mobility ``c0 eps / pi``.
    """
    unknown = set(pipelines) - {"pide", "limit", "ddd"}
    if unknown:
        raise ConfigError(f"unknown pipelines {sorted(unknown)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.potential_spec()
    c0 = _c0(spec)
    snaps = config.snapshot_times()
    man = _Manifest(out)

    if "limit" in pipelines:
        u0 = initial_field(config, config.limit_h)
        try:
            states = solve_limit(u0, c0, config.T, safety=config.limit_safety,
                                 snapshot_times=snaps)
        except LimitStepError as exc:
            raise LimitStepError(f"{config.scenario}: {exc}") from exc
        _add_states(man, states, out / "limit", "limit", "limit")

    for eps, delta in zip(config.epsilons, config.delta_values()):
        tag = _eps_tag(eps)
        d = out / tag
        d.mkdir(exist_ok=True)
        h = config.h_factor * eps * delta
        u0 = initial_field(config, h)
        if "ddd" in pipelines:
            particles = extract(u0, eps)
            man.add(particles.save_csv(d / "particles_initial.csv"), "particles", eps)
            traj = simulate_ddd(particles, c0 * eps / math.pi, config.T,
                                sample_times=[0.0] + snaps)
            for p in traj.write_csv(d, "trajectories"):
                man.add(p, "trajectories", eps)
            logger.info("%s %s: %d particles, %d annihilations", config.scenario, tag,
                        len(particles), len(traj.events))
        if "pide" in pipelines:
            try:
                states = solve_pide(u0, eps, delta, config.T, spec=spec,
                                    safety=config.pide_safety, snapshot_times=snaps)
            except PideInstabilityError as exc:
                raise PideInstabilityError(f"{config.scenario} {tag}: {exc}", exc.step,
                                           exc.time, exc.dt, exc.excursion) from exc
            _add_states(man, states, d, "pide", "pide", eps)
    return man.write()


def comparison_error(micro: GridField, macro: GridField, window) -> float:
    """``max |micro - macro|`` over the nodes of ``micro`` inside ``window``,
    with ``macro`` interpolated linearly."""
    x = micro.x
    inside = (x >= window[0]) & (x <= window[1])
    return float(np.max(np.abs(micro.values[inside] - macro.interp(x[inside]))))


_CONVERGENCE_HEADER = ["epsilon", "delta", "h", "A_eps", "delta_A", "error",
                       "particles_pide_T", "particles_limit_T", "particles_ddd_T"]


def _count(field: GridField, eps: float) -> int:
    try:
        return len(extract(field, eps))
    except ExtractionError:
        return 0


def convergence_study(config: SimConfig, out=None):
    """Error ``e(eps) = max over window x snapshots |u_eps - u_bar|`` per level.

    Writes ``convergence.csv`` (deterministic) and ``timings.csv`` (wall
    time) into ``out`` when given.

    Returns
    -------
    rows : list of dict
        One per ``(eps, delta)`` with the keys of the CSV header.

    Raises
    ------
    ConfigError
        With fewer than 3 epsilon levels.
    RegimeError
        If the regime check fails at any level (before any solve).
    """
    if len(config.epsilons) < 3:
        raise ConfigError("a convergence study needs at least 3 epsilon levels")
    spec = config.potential_spec()
    c0 = _c0(spec)
    snaps = config.snapshot_times()
    pairs = list(zip(config.epsilons, config.delta_values()))

    reports = []
    for eps, delta in pairs:
        u0 = initial_field(config, config.h_factor * eps * delta)
        rep = validate_regime(u0, eps, delta, config.regime_threshold)
        if rep.verdict != "pass":
            raise RegimeError(rep)
        reports.append(rep)

    ubar = initial_field(config, config.limit_h)
    limit_states = solve_limit(ubar, c0, config.T, safety=config.limit_safety,
                               snapshot_times=snaps)
    rows, timings = [], []
    for (eps, delta), rep in zip(pairs, reports):
        h = config.h_factor * eps * delta
        u0 = initial_field(config, h)
        start = time.perf_counter()
        states = solve_pide(u0, eps, delta, config.T, spec=spec, safety=config.pide_safety,
                            snapshot_times=snaps)
        wall = time.perf_counter() - start
        err = max(comparison_error(s.field, m.field, config.window)
                  for s, m in zip(states[1:], limit_states[1:]))
        traj = simulate_ddd(extract(u0, eps), c0 * eps / math.pi, config.T,
                            sample_times=[0.0, config.T])
        rows.append(dict(epsilon=eps, delta=delta, h=states[0].field.step, A_eps=rep.A,
                         delta_A=rep.delta_A, error=err,
                         particles_pide_T=_count(states[-1].field, eps),
                         particles_limit_T=_count(limit_states[-1].field, eps),
                         particles_ddd_T=len(traj.final())))
        timings.append((eps, delta, wall))
        logger.info("eps=%g delta=%g: error %.4g (%.1f s)", eps, delta, err, wall)

    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_CONVERGENCE_HEADER)
            for r in rows:
                w.writerow([repr(float(r[k])) if isinstance(r[k], float) else r[k]
                            for k in _CONVERGENCE_HEADER])
        with open(out / "timings.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "delta", "wall_seconds"])
            w.writerows((repr(e), repr(d), f"{t:.3f}") for e, d, t in timings)
    return rows


# ---------------------------------------------------------------------------
# supersolution residual


class _ProfileTables:
    """``I1[phi]`` and ``I1[psi]`` tabulated on the profile grids."""

    def __init__(self, spec: PotentialSpec, layer: LayerProfile):
        self.spec = spec
        self.layer = layer
        self.c0 = compute_c0(layer)
        self.i1_phi = i1_apply_all(layer.as_field())
        self.corrector = solve_corrector(spec, layer, 1.0, c0=self.c0)
        self.i1_psi = i1_apply_all(self.corrector.as_field())


_TABLES: dict = {}


def _tables(spec: PotentialSpec) -> _ProfileTables:
    key = "cosine" if spec.kind == "cosine" else id(spec)
    if key not in _TABLES:
        _TABLES[key] = _ProfileTables(spec, default_layer(spec))
    return _TABLES[key]


def _ansatz_values(tab, particles, delta, L, x, t):
    p = constant_speed_flow(particles, tab.c0, L, t)
    eps = particles.epsilon
    b = p.orientations[None, :]
    bz = (x[:, None] - p.positions[None, :]) / (eps * delta) * b
    corr = tab.corrector.scaled(L)
    H = (eps * (phi_eval(tab.layer, bz) - (b == -1)).sum(axis=1) + eps * p.base_level
         + eps * delta * psi_eval(corr, bz).sum(axis=1) + eps * delta * L / tab.layer.alpha)
    return H, bz


def supersolution_lambda(particles: ParticleSystem, delta: float, L: float, x, t: float,
                         spec: PotentialSpec | None = None, tau: float | None = None):
    """``delta dH/dt - I1[H] + W'(H/eps)/delta`` for the moving ansatz ``H``.

    Particles follow the constant-speed flow at level ``L``.  ``I1[H]`` is
    summed term by term using the scaling of the operator: each layer
    contributes ``I1[phi](b z_i)/delta`` and each corrector
    ``I1[psi](b z_i)``, read from tables for ``|z| <= Z/2`` and from the
    profile equations beyond.  The time derivative is a centred difference
    with step ``tau``.
    """
    spec = PotentialSpec.cosine() if spec is None else spec
    tab = _tables(spec)
    eps = particles.epsilon
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if tau is None:
        tau = 1e-7
    H, bz = _ansatz_values(tab, particles, delta, L, x, t)
    if L != 0.0:
        dH = (_ansatz_values(tab, particles, delta, L, x, t + tau)[0]
              - _ansatz_values(tab, particles, delta, L, x, t - tau)[0]) / (2 * tau)
    else:
        dH = np.zeros_like(H)
    layer = tab.layer
    alpha = layer.alpha
    zg = layer.z
    inner = np.abs(bz) <= 0.5 * layer.truncation
    phi = phi_eval(layer, bz)
    w2 = potential_eval(spec, phi, 2)
    i1_phi = np.where(inner, np.interp(bz, zg, tab.i1_phi), potential_eval(spec, phi, 1))
    if L != 0.0:
        psi = psi_eval(tab.corrector.scaled(L), bz)
        eq = w2 * psi + (L / alpha) * (w2 - alpha) + tab.c0 * L * phi_prime(layer, bz)
        i1_psi = np.where(inner, np.interp(bz, tab.corrector.z, L * tab.i1_psi), eq)
    else:
        i1_psi = np.zeros_like(bz)
    I1H = (i1_phi / delta + i1_psi).sum(axis=1)
    return delta * dH - I1H + potential_eval(spec, H / eps, 1) / delta


@dataclass(frozen=True)
class SupersolutionReport:
    C0: float
    L: float
    t_max: float
    min_lambda: float
    argmin_t: float
    argmin_x: float
    n_particles: int


def _check_pairs(particles: ParticleSystem, sigma: float):
    b, x = particles.orientations, particles.positions
    for i in range(len(particles) - 1):
        if b[i] == -1 and b[i + 1] == 1 and x[i + 1] - x[i] < 2 * sigma:
            gap = float(x[i + 1] - x[i])
            raise PreconditionError(
                f"opposite particles {i + 1} and {i + 2} are {gap:.4g} apart, "
                f"below 2 sigma = {2 * sigma:.4g}", (i + 1, i + 2), gap)


def supersolution_residual(v: GridField, sigma: float, epsilon: float, delta: float,
                           C0: float, samples=None, n_times: int = 5,
                           spec: PotentialSpec | None = None) -> SupersolutionReport:
    """Minimum of the supersolution residual over a sample battery.

    Particles are extracted from ``v`` and moved at speed ``c0 L`` with
    ``L = C0 / sqrt(sigma)``; the residual is sampled at ``samples`` (default
    4001 points spanning ``v``'s grid) and ``n_times`` equally spaced times in
    ``(0, sigma / (2 c0 L)]``.

    Raises
    ------
    PreconditionError
        If a ``(-1, +1)`` neighbour pair is closer than ``2 sigma``.
    """
    spec = PotentialSpec.cosine() if spec is None else spec
    particles = extract(v, epsilon)
    _check_pairs(particles, sigma)
    tab = _tables(spec)
    L = C0 / math.sqrt(sigma)
    t_max = sigma / (2 * tab.c0 * L)
    xs = np.linspace(v.a, v.b, 4001) if samples is None else np.asarray(samples, float)
    best = (math.inf, 0.0, 0.0)
    for t in t_max * np.arange(1, n_times + 1) / n_times:
        lam = supersolution_lambda(particles, delta, L, xs, float(t), spec)
        k = int(np.argmin(lam))
        if lam[k] < best[0]:
            best = (float(lam[k]), float(t), float(xs[k]))
    return SupersolutionReport(C0, L, t_max, best[0], best[1], best[2], len(particles))


def supersolution_sweep(config: SimConfig, out=None) -> list:
    """Supersolution residual for every ``C0`` at the first ``(eps, delta)``."""
    eps, delta = config.epsilons[0], config.delta_values()[0]
    spec = config.potential_spec()
    v = initial_field(config, min(config.limit_h, eps * delta / 2))
    xs = np.linspace(config.window[0], config.window[1], config.samples)
    reports = [supersolution_residual(v, config.sigma, eps, delta, C0, xs,
                                      config.sample_times, spec) for C0 in config.C0]
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "supersolution.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["C0", "L", "t_max", "min_lambda", "argmin_t", "argmin_x"])
            for r in reports:
                w.writerow([repr(r.C0), repr(r.L), repr(r.t_max), repr(r.min_lambda),
                            repr(r.argmin_t), repr(r.argmin_x)])
    return reports


# ---------------------------------------------------------------------------
# command line


_SOLVER_ERRORS = (PideInstabilityError, LimitStepError, DynamicsError, LayerSolveError,
                  CorrectorSolveError, RegimeError, ExtractionError, GridError)


def _cmd_regime(config, out):
    rows = []
    for eps, delta in zip(config.epsilons, config.delta_values()):
        u0 = initial_field(config, config.h_factor * eps * delta)
        rows.append(validate_regime(u0, eps, delta, config.regime_threshold))
    with open(out / "regime.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = [f.name for f in dataclasses.fields(RegimeReport)]
        w.writerow(names)
        for r in rows:
            w.writerow([getattr(r, k) if not isinstance(getattr(r, k), float)
                        else repr(getattr(r, k)) for k in names])
    for r in rows:
        print(f"eps={r.epsilon:g} delta={r.delta:g} K={r.K:.4f} N0={r.N0} "
              f"A={r.A:.4f} deltaA={r.delta_A:.4f} {r.verdict}")


def _cmd_converge(config, out):
    for r in convergence_study(config, out):
        print(f"eps={r['epsilon']:g} delta={r['delta']:g} error={r['error']:.4g}")


def _cmd_super(config, out):
    for r in supersolution_sweep(config, out):
        print(f"C0={r.C0:g} L={r.L:.4g} min_lambda={r.min_lambda:.4g}")


_COMMANDS = {
    "simulate-pide": lambda c, o: print(run_scenario(c, o, ("pide",))),
    "simulate-particles": lambda c, o: print(run_scenario(c, o, ("ddd",))),
    "solve-limit": lambda c, o: print(run_scenario(c, o, ("limit",))),
    "validate-regime": _cmd_regime,
    "converge": _cmd_converge,
    "supersolution-check": _cmd_super,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnscale", description="Multiscale one-dimensional dislocation experiments.")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    """Entry point; returns 0 on success, 2 on configuration errors and 3 on
    solver errors."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](config, out)
    except (ConfigError, PreconditionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except _SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
