import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnscale.potential import (PotentialSpec, load_potential, potential_eval,
                               validate_potential)


@pytest.mark.parametrize("u,order,expected", [
    (0.0, 0, 0.0),
    (0.5, 0, 1 / (2 * math.pi**2)),
    (0.0, 2, 1.0),
    (0.25, 1, 1 / (2 * math.pi)),
])
def test_cosine_values(cosine, u, order, expected):
    assert potential_eval(cosine, u, order) == pytest.approx(expected, abs=1e-12)


def test_bad_order(cosine):
    with pytest.raises(ValueError):
        potential_eval(cosine, 0.1, 3)


def test_cosine_alpha(cosine):
    assert cosine.alpha == 1.0


def test_cosine_derivative_consistency(cosine):
    u = np.linspace(-2, 2, 37)
    errs = []
    for h in (1e-2, 5e-3):
        fd = (potential_eval(cosine, u + h, 0) - potential_eval(cosine, u - h, 0)) / (2 * h)
        errs.append(np.max(np.abs(fd - potential_eval(cosine, u, 1))))
    assert errs[1] < errs[0] / 3.5


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.sampled_from([0, 1, 2]))
def test_periodicity(u, order):
    cos = PotentialSpec.cosine()
    assert potential_eval(cos, u + 1, order) == pytest.approx(
        potential_eval(cos, u, order), abs=1e-9)


def test_custom_matches_closed_form(cosine):
    spec = PotentialSpec.from_function(lambda u: (1 - np.cos(2 * math.pi * u))
                                       / (4 * math.pi**2), n=512)
    u = np.linspace(-1.3, 2.7, 101)
    for order in (0, 1, 2):
        np.testing.assert_allclose(spec(u, order), cosine(u, order), atol=1e-6)
    assert spec.alpha == pytest.approx(1.0, abs=1e-6)
    assert abs(spec.w3_at_zero) < 1e-3


def test_custom_periodic(asymmetric):
    u = np.linspace(0, 1, 53)
    for order in (0, 1, 2):
        np.testing.assert_allclose(asymmetric(u + 1, order), asymmetric(u, order), atol=1e-10)


def test_asymmetric_third_derivative(asymmetric):
    # (1 - cos 2 pi u)(1 + g sin 2 pi u)/(4 pi^2) has W'''(0) = 6 pi g
    assert asymmetric.w3_at_zero == pytest.approx(6 * math.pi * 0.3, rel=1e-3)


def test_validate_cosine(cosine):
    rep = validate_potential(cosine)
    assert rep.ok and rep.failed() == []


def test_validate_sign_change():
    spec = PotentialSpec.from_function(lambda u: np.sin(2 * math.pi * u) / (4 * math.pi**2))
    rep = validate_potential(spec)
    assert not rep.ok
    assert "W > 0 off integers" in rep.failed()
    assert 0.5 < rep["W > 0 off integers"].point < 1.0


def test_validate_flat_well():
    spec = PotentialSpec.from_function(
        lambda u: (1 - np.cos(2 * math.pi * u)) ** 2 / (16 * math.pi**4))
    rep = validate_potential(spec)
    assert "W''(0) > 0" in rep.failed()


def test_load_potential(tmp_path, cosine):
    u = np.arange(257) / 256
    np.savetxt(tmp_path / "w.txt", np.column_stack([u, cosine(u)]))
    spec = load_potential(tmp_path / "w.txt")
    assert spec.kind == "custom-sampled"
    assert spec(0.3, 1) == pytest.approx(cosine(0.3, 1), abs=1e-6)


def test_load_potential_rejects_nonuniform(tmp_path):
    u = np.sort(np.random.default_rng(0).random(20))
    np.savetxt(tmp_path / "w.txt", np.column_stack([u, u * 0]))
    with pytest.raises(ValueError):
        load_potential(tmp_path / "w.txt")
