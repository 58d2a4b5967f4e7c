import math

import numpy as np
import pytest

from brwlab.model import (LawError, closed_form_moments, custom_law, make_builtin_law, sample_offspring,
                          verify_conditions, weighted_functional)
from brwlab.rng import Stream


@pytest.mark.parametrize("kind", ["binary_gaussian", "lattice_bernoulli"])
def test_closed_form_boundary_case(kind):
    cf = closed_form_moments(make_builtin_law(kind))
    assert abs(cf["m1"] - 1) < 1e-12
    assert abs(cf["drift"]) < 1e-12
    assert cf["mean_offspring"] > 1


def test_closed_form_values():
    g = closed_form_moments(make_builtin_law("binary_gaussian"))
    assert g["sigma2"] == pytest.approx(2 * math.log(2), abs=1e-12)
    lat = closed_form_moments(make_builtin_law("lattice_bernoulli"))
    assert lat["sigma2"] == pytest.approx(1.0, abs=1e-12)
    assert lat["mean_offspring"] == pytest.approx(1 / (2 * math.e) + math.e / 2, abs=1e-12)


def test_overrides_breaking_calibration():
    with pytest.raises(LawError):
        make_builtin_law("binary_gaussian", {"m": 1.0})
    law = make_builtin_law("binary_gaussian", {"m": 1.0}, strict=False)
    assert not law.calibrated
    with pytest.raises(LawError):
        make_builtin_law("binary_gaussian", {"mu": 1.0})
    with pytest.raises(LawError):
        make_builtin_law("poisson")


def test_lattice_offspring_support(lattice_law):
    counts, disp = lattice_law.sample_many(Stream(0).generator(), 50_000)
    assert set(np.unique(counts)) <= {1, 2, 3}
    assert set(np.unique(disp)) == {-1.0, 1.0}
    assert counts.sum() == disp.size
    assert abs(counts.mean() - 1.5431) < 0.01


def test_sample_offspring_realization(gauss_law):
    r = sample_offspring(gauss_law, Stream(1).generator())
    assert r.positions.shape == (2,)


@pytest.mark.parametrize("kind", ["binary_gaussian", "lattice_bernoulli"])
def test_empirical_gate(kind):
    rep = verify_conditions(make_builtin_law(kind), 200_000, seed=3)
    assert rep.gate()
    assert not rep.nonfinite
    assert rep.sigma2.within(closed_form_moments(make_builtin_law(kind))["sigma2"], 4)


def test_verify_conditions_min_draws(gauss_law):
    with pytest.raises(ValueError):
        verify_conditions(gauss_law, 100, seed=0)


def test_custom_law_supercritical_check():
    with pytest.raises(LawError):
        custom_law(lambda rng: np.array([rng.normal()]))
    law = custom_law(lambda rng: rng.normal(2 * math.log(2), math.sqrt(2 * math.log(2)), 2))
    counts, disp = law.sample_many(Stream(0).generator(), 10)
    assert counts.tolist() == [2] * 10 and disp.size == 20


def test_weighted_functional_matches_tilt(gauss_law):
    # E sum e^{-X} X^2 = sigma2 of the tilted spine
    v, se = weighted_functional(gauss_law, lambda x: x**2, 200_000, Stream(2).generator())
    assert abs(v - 2 * math.log(2)) < 4 * se
