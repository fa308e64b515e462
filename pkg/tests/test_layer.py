import math
import time

import numpy as np
import pytest

from pnscale.layer import (CorrectorProfile, LayerProfile, LayerSolveError, compute_c0,
                           layer_residual, load_profile, phi_eval, phi_prime, psi_eval,
                           save_profile, solve_corrector, solve_layer)
from pnscale.potential import PotentialSpec


def arctan_layer(z):
    return 0.5 + np.arctan(z) / math.pi


def test_cosine_layer_matches_closed_form(layer):
    z = layer.z
    inner = np.abs(z) <= 50
    assert np.max(np.abs(layer.values[inner] - arctan_layer(z[inner]))) < 1e-4


def test_layer_values(layer):
    assert phi_eval(layer, 0.0) == pytest.approx(0.5, abs=1e-5)
    assert phi_eval(layer, 0.0, -1) == pytest.approx(-0.5, abs=1e-5)
    assert phi_eval(layer, 1.0) == pytest.approx(0.75, abs=1e-3)
    assert phi_eval(layer, 100.0) == pytest.approx(1 - 1 / (100 * math.pi), abs=1e-4)


def test_layer_invariants(layer):
    assert np.all(np.diff(layer.values) > 0)
    assert 0 < layer.values.min() and layer.values.max() < 1
    assert layer.tail_constant == pytest.approx(1 / math.pi)
    assert math.isfinite(layer.k1)


def test_layer_residual(cosine, layer):
    res = layer_residual(cosine, layer)
    inner = np.abs(layer.z) <= 50
    assert np.max(np.abs(res[inner])) < 1e-5


def test_seam_continuity(layer):
    Z = layer.truncation
    assert phi_eval(layer, Z * (1 - 1e-12)) == pytest.approx(phi_eval(layer, Z * (1 + 1e-9)),
                                                             abs=1e-5)


def test_derivative_shape(layer):
    z = np.linspace(-100, 100, 801)
    s = phi_prime(layer, z) * (1 + z * z)
    assert s.min() > 0.2 and s.max() < 0.5


def test_c0_cosine(layer):
    assert compute_c0(layer) == pytest.approx(2 * math.pi, abs=1e-3)


def test_c0_homogeneity(layer):
    doubled = LayerProfile(layer.origin, layer.step, 2 * layer.values, layer.alpha,
                           2 * layer.tail_constant)
    assert compute_c0(doubled) == pytest.approx(compute_c0(layer) / 4, rel=1e-12)


def test_residual_halves_with_step(cosine):
    def err(h):
        lay = solve_layer(cosine, Z=60.0, h=h, tol=1e-3)
        res = layer_residual(cosine, lay)
        return np.max(np.abs(res[np.abs(lay.z) <= 30]))

    assert err(0.05) <= err(0.1) / 2


def test_asymmetric_layer(asymmetric, asym_layer):
    assert asym_layer.residual < 1e-5
    assert phi_eval(asym_layer, 0.0) == pytest.approx(0.5, abs=1e-5)
    assert np.all(np.diff(asym_layer.values) > 0)


def test_layer_preconditions(cosine):
    with pytest.raises(ValueError):
        solve_layer(cosine, Z=20.0)
    with pytest.raises(ValueError):
        solve_layer(cosine, h=0.2)


def test_layer_budget_error(asymmetric):
    with pytest.raises(LayerSolveError) as info:
        solve_layer(asymmetric, Z=60.0, h=0.1, tol=1e-14, max_iter=5, newton_iter=1)
    assert info.value.residual > 1e-14


def test_corrector_zero_level(cosine, layer):
    psi = solve_corrector(cosine, layer, 0.0)
    assert np.max(np.abs(psi.values)) < 1e-12


def test_corrector_cosine_is_small(cosine, layer):
    psi = solve_corrector(cosine, layer, 1.0)
    assert np.max(np.abs(psi.values)) < 1e-3
    outer = np.abs(psi.z) > 50
    assert np.max(np.abs(psi.values[outer])) <= 2 * abs(psi.k2) / 50 + 1e-5


def test_corrector_linear_in_level(asymmetric, asym_layer, asym_corrector):
    two = solve_corrector(asymmetric, asym_layer, 2.0)
    np.testing.assert_allclose(two.values, 2 * asym_corrector.values,
                               atol=10 * asym_corrector.residual)
    scaled = asym_corrector.scaled(2.0)
    np.testing.assert_allclose(scaled.values, two.values, atol=1e-10)


def test_corrector_tail(asymmetric, asym_corrector):
    c = asym_corrector
    K = asymmetric.w3_at_zero / (asymmetric.alpha**3 * math.pi)
    assert c.tail_coefficient == pytest.approx(K, rel=1e-12)
    assert c.k2 == pytest.approx(K, rel=0.05)
    z = c.z
    outer = np.abs(z) >= 0.75 * c.truncation
    dev = np.abs(c.values[outer] - c.k2 / z[outer]) * z[outer] ** 2
    assert np.max(dev) < 10 * max(abs(c.k3), 1.0)
    assert abs(c.values[0]) < 0.05 and abs(c.values[-1]) < 0.05


def test_psi_eval(asym_corrector):
    c = asym_corrector
    z = np.linspace(-80, 80, 33)
    np.testing.assert_array_equal(psi_eval(c, z, -1), psi_eval(c, -z, 1))
    assert psi_eval(c, c.z[123]) == c.values[123]
    assert psi_eval(c, 200.0) == pytest.approx(c.k2 / 200.0)


def test_profile_round_trip(tmp_path, layer, asym_corrector):
    for prof in (layer, asym_corrector):
        path = save_profile(prof, tmp_path / "p.txt")
        back = load_profile(path)
        assert type(back) is type(prof)
        assert np.array_equal(back.values, prof.values)
        assert back.origin == prof.origin and back.step == prof.step


def test_layer_runtime(cosine):
    start = time.perf_counter()
    solve_layer(cosine, Z=100.0, h=0.05)
    assert time.perf_counter() - start < 10
