import math

import numpy as np
import pytest

from brwlab.potential import (CoverageError, GridFunction, NotDRI, SpikeTrain, constant, dri_classify, exp_decay,
                              exp_dominated, hard_cutoff, indicator, occupation_expectation, parse_function,
                              power_decay, renewal_identity_check, subharmonic_residual, three_term_representation,
                              zero)
from brwlab.rng import Stream
from brwlab.walk import renewal_tables

BOX = indicator(0, 5)


def green_occupation(x, lo, hi):
    """sum over lattice sites y in [lo, hi], y >= 1, of 2 min(x, y)."""
    return sum(2 * min(x, y) for y in range(max(1, math.ceil(lo)), math.floor(hi) + 1))


@pytest.mark.parametrize("x", [1, 2, 3, 7, 12])
def test_lattice_dp_matches_green_function(lattice, x):
    v = occupation_expectation(lattice, BOX, x, "lattice_dp")
    assert abs(v.value - green_occupation(x, 0, 5)) < 1e-8


def test_box_at_three_is_24(lattice):
    chk = renewal_identity_check(lattice, BOX, 3.0)
    assert abs(chk.lhs.value - 24) < 1e-8
    assert abs(chk.rhs.value - 24) < 1e-8
    assert abs(chk.gap) < 1e-8


def test_half_open_box(lattice):
    # 1_[0,5) drops the site y = 5
    v = occupation_expectation(lattice, indicator(0, 5, right_open=True), 3.0, "lattice_dp")
    assert abs(v.value - 18) < 1e-8


def test_monte_carlo_route(lattice):
    v = occupation_expectation(lattice, BOX, 3.0, "monte_carlo", draws=20_000, rng=Stream(1).generator())
    assert abs(v.value - 24) < 3 * v.se


def test_renewal_route_gaussian_agrees_with_mc(gauss):
    rng = Stream(2).generator()
    p = exp_decay(1.0)
    mc = occupation_expectation(gauss, p, 2.0, "monte_carlo", draws=20_000, rng=rng)
    table = renewal_tables(gauss, [2.0], "empirical", n_ladders=100_000, rng=rng, x_max=p.upper + 1)
    ri = occupation_expectation(gauss, p, 2.0, "renewal_double_integral", table=table)
    assert abs(mc.value - ri.value) < 3.5 * math.hypot(mc.se, ri.se)


def test_nonpositive_start_is_zero(lattice):
    assert occupation_expectation(lattice, BOX, -1.0, "lattice_dp").value == 0.0
    assert occupation_expectation(lattice, BOX, 0.0).value == 0.0


def test_dp_requires_lattice(gauss):
    with pytest.raises(ValueError):
        occupation_expectation(gauss, BOX, 1.0, "lattice_dp")


def test_three_term_lattice(lattice):
    xs = [1.0, 2.0, 3.0, 10.0, 20.0]
    rep = three_term_representation(lattice, BOX, zero(), "mu", xs)
    assert np.allclose(rep.f, [-9, -16, -21, -20, -10], atol=1e-8)
    assert np.allclose(rep.term1, [1, 2, 3, 10, 20])


def test_three_term_boundary_values(lattice):
    rep = three_term_representation(lattice, zero(), constant(2.0), 0.0, [-1.0, 0.0, 2.5])
    assert rep.f.tolist() == [2.0, 2.0, 2.0]


def test_subharmonic_residual_vanishes(lattice):
    xs = np.arange(1.0, 30.0)
    grid = np.arange(-2.0, 33.0)
    rep = three_term_representation(lattice, BOX, zero(), "mu", grid)
    f = GridFunction(grid, np.where(grid <= 0, 0.0, rep.f))
    res = subharmonic_residual(f, lattice, BOX, xs)
    assert np.max(np.abs(res.residual)) < 1e-8


def test_renewal_function_is_harmonic(lattice):
    # U(x) = 2 ceil(x) is harmonic for the killed walk on the positive sites
    xs = np.arange(1.0, 15.0)
    res = subharmonic_residual(lambda v: np.where(np.asarray(v) > 0, 2 * np.ceil(v), 0.0), lattice, zero(), xs)
    assert np.all(res.residual == 0)


def test_grid_coverage_enforced(lattice):
    f = GridFunction(np.arange(0.0, 10.0), np.zeros(10))
    with pytest.raises(CoverageError):
        subharmonic_residual(f, lattice, zero(), [1.0, 9.0])


def test_dri_exponential():
    hs = [1.0, 0.5, 0.25, 0.125]
    rep = dri_classify(exp_decay(1.0), hs, 40.0, exp_dominated(0.0))
    assert rep.verdict == "dri"
    assert np.allclose(rep.gap, rep.h, atol=1e-12)


def test_dri_spike_train():
    t = SpikeTrain(30.0)
    rep = dri_classify(t.as_test_function(), [1.0, 0.5, 0.25, 0.125], 30.0, hard_cutoff())
    assert rep.verdict == "not_dri"
    assert t.area < 2.0
    assert np.all(rep.upper > 20)


@pytest.mark.parametrize("fn", [power_decay(3.0), BOX])
def test_dri_regular_functions(fn):
    rule = hard_cutoff() if fn.support is not None else exp_dominated(0.0)
    assert dri_classify(fn, [1.0, 0.5, 0.25, 0.125], 50.0, rule).verdict == "dri"


def test_not_dri_source_rejected(lattice):
    spike = SpikeTrain(10.0).as_test_function()
    with pytest.raises(NotDRI):
        three_term_representation(lattice, spike, zero(), "mu", [1.0])


def test_parse_function():
    assert parse_function("indicator:0:5")(np.array([0.0, 5.0, 5.1])).tolist() == [1.0, 1.0, 0.0]
    assert parse_function("exp:2")(np.array([0.0]))[0] == 1.0
    assert parse_function("zero").is_zero
    assert parse_function("const:3")(np.array([7.0]))[0] == 3.0
    with pytest.raises(ValueError):
        parse_function("cosine:1")
