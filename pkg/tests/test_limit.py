import math

import numpy as np
import pytest

from pnscale.dynamics import simulate_ddd
from pnscale.limit import (LimitStepError, gb_density_residual, solve_limit, total_variation,
                           upwind_update)
from pnscale.nonlocal_op import GridField
from pnscale.particles import extract

C0 = 2 * math.pi


def smoothstep(h, a=-2.5, b=2.5):
    def f(x):
        s = np.clip((x + 1) / 2, 0, 1)
        return s * s * (3 - 2 * s)
    return GridField.from_function(f, a, b, h, 0.0, 1.0)


def bump(h, amp=0.45):
    def f(x):
        r = np.clip(x, -1, 1)
        return amp * (1 - r * r) ** 2
    return GridField.from_function(f, -2.5, 2.5, h, 0.0, 0.0)


def test_constant_is_stationary():
    u0 = GridField.from_function(lambda x: np.full_like(x, 0.3), -1, 1, 0.01, 0.3, 0.3)
    states = solve_limit(u0, C0, 0.5)
    for s in states:
        assert np.array_equal(s.field.values, u0.values)


@pytest.mark.parametrize("make", [smoothstep, bump])
def test_envelope(make):
    h = 0.01
    u0 = make(h)
    states = solve_limit(u0, C0, 0.2)
    lo, hi = u0.values.min(), u0.values.max()
    for s in states:
        tol = 10 * h * h + s.dt
        assert s.field.values.min() >= lo - tol
        assert s.field.values.max() <= hi + tol


def test_total_variation_decreases_on_bump():
    states = solve_limit(bump(0.01), C0, 0.5)
    tv = [total_variation(s.field) for s in states]
    assert tv[-1] < tv[0]
    assert np.all(np.diff(tv) <= 1e-12)


def test_total_variation_counts_limit_jumps():
    f = GridField(0.0, 1.0, np.ones(4), 0.0, 0.0, limit_tol=math.inf)
    assert total_variation(f) == 2.0


def test_plateau_has_zero_update():
    u = np.array([0.0, 0.5, 1.0, 1.0, 1.0, 0.5, 0.0])
    for sign in (1.0, -1.0):
        du = upwind_update(u, np.full(u.size, sign), 0.1, 0.0, 0.0)
        assert np.all(du[3] == 0.0)
    # a strict maximum only moves down, a strict minimum only up
    peak = np.array([0.0, 1.0, 0.0])
    assert upwind_update(peak, np.ones(3), 0.1, 0.0, 0.0)[1] == 0.0
    assert upwind_update(peak, -np.ones(3), 0.1, 0.0, 0.0)[1] < 0.0


def test_ordered_data_stay_ordered():
    rng = np.random.default_rng(3)
    h = 0.02
    for _ in range(5):
        c, w, a = rng.uniform(-1, 1), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4)
        u0 = smoothstep(h)
        v0 = u0.with_values(u0.values + a * np.exp(-((u0.x - c) / w) ** 2))
        # a common step keeps both runs on the same time grid
        us = solve_limit(u0, C0, 0.1, max_dt=1e-4)
        vs = solve_limit(v0, C0, 0.1, max_dt=1e-4)
        for p, q in zip(us, vs):
            assert np.all(p.field.values <= q.field.values + 1e-14)


def test_far_field_limits_preserved():
    states = solve_limit(smoothstep(0.01, -4, 4), C0, 0.2)
    for s in states:
        assert abs(s.field.values[0] - s.field.left_limit) < 0.02
        assert abs(s.field.values[-1] - s.field.right_limit) < 0.02


def test_snapshots_and_step_error():
    states = solve_limit(smoothstep(0.05), C0, 0.2)
    assert [s.time for s in states] == pytest.approx([0, 0.05, 0.1, 0.15, 0.2])
    with pytest.raises(LimitStepError):
        solve_limit(smoothstep(0.05), C0, 0.2, min_dt=1.0)
    with pytest.raises(ValueError):
        solve_limit(smoothstep(0.05), C0, -1.0)


def test_level_crossings_track_particles():
    # levels strictly between the far-field limits, compared with particle
    # dynamics at mobility c0 eps / pi
    T = 0.1
    ubar = smoothstep(0.005, -4, 4)
    final = solve_limit(ubar, C0, T, snapshot_times=[T])[-1].field
    errors = []
    for eps in (0.2, 0.1, 0.05):
        p = extract(ubar, eps)
        q = simulate_ddd(p, C0 * eps / math.pi, T, sample_times=[0.0, T]).final()
        interior = p.levels * eps < 1.0
        xs = np.interp(p.levels[interior] * eps, final.values, final.x)
        errors.append(np.max(np.abs(xs - q.positions[interior])))
    assert errors[0] > errors[1] > errors[2]


def test_density_residual_constant():
    u0 = GridField.from_function(lambda x: np.full_like(x, 0.3), -1, 1, 0.01, 0.3, 0.3)
    rep = gb_density_residual(solve_limit(u0, C0, 0.1))
    assert rep.max_plus == 0.0 and rep.max_minus == 0.0
    assert rep.times.size == 3


def test_density_residual_monotone_has_no_negative_part():
    rep = gb_density_residual(solve_limit(smoothstep(0.02), C0, 0.1))
    assert rep.max_minus == 0.0
    assert rep.max_plus > 0.0


def test_density_residual_refines():
    norms = []
    for h in (0.02, 0.01, 0.005):
        states = solve_limit(smoothstep(h, -4, 4), C0, 0.05, safety=0.5,
                             snapshot_times=np.linspace(0, 0.05, 11)[1:])
        norms.append(gb_density_residual(states[1:]).max_plus)
    assert norms[0] > norms[1] > norms[2]


def test_density_residual_needs_three_snapshots():
    states = solve_limit(smoothstep(0.05), C0, 0.1, snapshot_times=[0.1])
    with pytest.raises(ValueError):
        gb_density_residual(states)
