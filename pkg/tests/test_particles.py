import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnscale.layer import solve_corrector
from pnscale.nonlocal_op import GridField
from pnscale.particles import (ExtractionError, ParticleSystem, ansatz, extract, reconstruct,
                               signed_counts)

from conftest import tanh_field


def gauss_field():
    return GridField.from_function(lambda x: np.exp(-x * x), -6, 6, 0.001, 0.0, 0.0)


def test_tanh_extraction():
    p = extract(tanh_field(), 0.25)
    expected = np.arctanh(2 * np.array([0.25, 0.5, 0.75]) - 1)
    np.testing.assert_allclose(p.positions, expected, atol=1e-5)
    assert list(p.orientations) == [1, 1, 1]
    assert p.base_level == 0


def test_gauss_extraction_with_zero_removal():
    p, rep = extract(gauss_field(), 0.4, report=True)
    r1, r2 = math.sqrt(-math.log(0.4)), math.sqrt(-math.log(0.8))
    np.testing.assert_allclose(rep.boundary_points, [-r1, -r2, r2, r1], atol=1e-5)
    assert list(rep.boundary_orientations) == [1, 1, 0, -1]
    np.testing.assert_allclose(p.positions, [-r1, -r2, r1], atol=1e-5)
    assert list(p.orientations) == [1, 1, -1]
    # the top band {v > 0.8} oscillates by 0.2 < eps and is discarded
    [(a, b, lev)] = rep.removed_components
    assert (a, b, lev) == (pytest.approx(-r2, abs=1e-5), pytest.approx(r2, abs=1e-5), 2)


def test_signed_counts_bump():
    p = extract(gauss_field(), 0.4)
    counts = signed_counts(p, 1, 3)
    assert counts == (2, 1, 1)
    assert 0.4 * counts.n == pytest.approx(0.4)
    assert signed_counts(extract(tanh_field(), 0.25), 1, 3).n_minus == 0
    with pytest.raises(IndexError):
        signed_counts(p, 2, 5)


def test_levels_identity():
    f = gauss_field()
    p = extract(f, 0.1)
    np.testing.assert_allclose(0.1 * p.levels, f.interp(p.positions), atol=1e-9)


def test_constant_field_rejected():
    f = GridField.from_function(lambda x: 0 * x + 0.3, -1, 1, 0.1, 0.3, 0.3)
    with pytest.raises(ExtractionError):
        extract(f, 0.1)


@pytest.mark.parametrize("eps", [0.0, 1.0, 1.5, -0.1])
def test_bad_epsilon(eps):
    with pytest.raises(ExtractionError):
        extract(tanh_field(), eps)


def test_tangency_reported():
    # max value exactly on the level 0.5: touched, not crossed, so the band
    # below it oscillates by less than eps and nothing survives
    f = GridField.from_function(lambda x: 0.5 * np.exp(-x * x), -5, 5, 0.01, 0.0, 0.0)
    p, rep = extract(f, 0.25, report=True)
    assert [lev for _, lev in rep.tangencies] == [2]
    assert len(p) == 0
    assert [c[2] for c in rep.removed_components] == [1]


def random_field(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=4)
    c = rng.uniform(-2, 2, size=4)

    def f(x):
        return sum(ai * np.exp(-(x - ci) ** 2) for ai, ci in zip(a, c))
    return GridField.from_function(f, -8, 8, 0.002, 0.0, 0.0, limit_tol=1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.05, 0.1, 0.2]))
def test_extraction_laws(seed, eps):
    f = random_field(seed)
    if np.ptp(f.values) < 2 * eps:
        return
    p = extract(f, eps)
    if len(p) < 2:
        return
    lip = f.lipschitz()
    # gap law
    assert p.min_gap() >= eps / lip * (1 - 1e-6)
    # oscillation between consecutive particles stays below 2 eps
    x = f.x
    for a, b in zip(p.positions[:-1], p.positions[1:]):
        seg = f.values[(x > a) & (x < b)]
        if seg.size:
            assert np.ptp(np.concatenate([seg, f.interp([a, b])])) <= 2 * eps + 1e-9
    # inverse-square sum bound
    for xbar in p.positions:
        d = p.positions[p.positions != xbar] - xbar
        assert np.sum(eps**2 / d**2) <= 4 * lip**2


def test_reconstruct_single_particle(layer):
    p = ParticleSystem(np.array([0.0]), np.array([1]), 0.2)
    assert reconstruct(p, 0.1, 0.0, layer) == pytest.approx(0.1, abs=1e-6)


def test_reconstruct_far_left(layer):
    p = extract(tanh_field(), 0.1)
    val = reconstruct(p, 0.1, -14.0, layer)
    # tail bound: each layer contributes at most eps * eps delta /(pi |x - x_i|)
    bound = sum(0.1 * 0.01 / (math.pi * abs(-14.0 - xi)) for xi in p.positions)
    assert abs(val - 0.1 * p.base_level) <= bound * 1.01


def test_reconstruct_gap_decreases(layer):
    f = tanh_field()
    x = np.linspace(-3, 3, 1201)
    gaps = []
    for eps in (0.2, 0.1, 0.05):
        p = extract(f, eps)
        gaps.append(np.max(np.abs(reconstruct(p, eps, x, layer) - f.interp(x))))
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.parametrize("b", [[1, 1, 1, 1], [-1, -1, -1]])
def test_round_trip(layer, b):
    # reconstruction plateaus sit on the levels k eps and each layer passes
    # the half level at its particle, so extraction runs on the field raised
    # by eps/2.  The base level is the ceiling of the left limit, so for a
    # rising start the lift is ramped in from a left limit on level 0.
    eps, delta = 0.1, 0.1
    b = np.array(b)
    x = np.linspace(-2.0, 2.5, b.size)
    p = ParticleSystem(x, b, eps)
    if b[0] > 0:
        def lift(y):
            return eps / 4 * (1 + np.tanh((y - x[0] + 1) / 0.1))
        left = 0.0
    else:
        def lift(y):
            return eps / 2
        left = eps / 2
    right = eps * (b.sum() + 0.5)
    f = GridField.from_function(lambda y: reconstruct(p, delta, y, layer) + lift(y),
                                -6, 6, 0.0005, left, right, limit_tol=0.01)
    q = extract(f, eps)
    assert list(q.orientations) == list(p.orientations)
    assert np.max(np.abs(q.positions - p.positions)) < 5 * eps * delta


def test_csv_round_trip(tmp_path):
    p = extract(gauss_field(), 0.1)
    q = ParticleSystem.load_csv(p.save_csv(tmp_path / "p.csv"))
    assert np.array_equal(q.positions, p.positions)
    assert np.array_equal(q.orientations, p.orientations)
    assert (q.epsilon, q.base_level) == (p.epsilon, p.base_level)
