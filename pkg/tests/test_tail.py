import math
import warnings

import numpy as np
import pytest
from scipy.special import exp1

from brwlab.rng import Stream
from brwlab.tail import (EULER_GAMMA, DTable, G_profile, SortedSample, TailWarning, _defect_terms, estimate_c,
                         harmonic_check, laplace_profile, tail_curves, tauberian_check)


@pytest.fixture(scope="module")
def pareto():
    # P{Z > z} = 1/z on z >= 1: H(x) = log x, x P{Z > x} = 1
    u = Stream(21).generator().random(1_000_000)
    return 1.0 / u


def pareto_one_minus_phi(s):
    return 1 - np.exp(-s) + s * exp1(s)


def test_tail_curves_on_pareto(pareto):
    x = np.geomspace(2, 200, 15)
    rep = tail_curves(pareto, x, bootstrap_reps=50, seed=1)
    assert np.all(np.abs(rep.tail_product - 1) < 4 * rep.se["tail_product"] + 1e-12)
    assert np.all(np.abs(rep.H - np.log(x)) < 4 * rep.se["H"] + 1e-12)
    assert abs(rep.h_slope(10, 50) - 1) < 0.1
    assert np.max(np.abs(rep.identity_defect())) < 1e-9
    assert rep.negative_fraction == 0


def test_tail_curves_drops_points_past_max():
    z = np.linspace(0, 10, 20_000)
    rep = tail_curves(z, [1.0, 5.0, 20.0], bootstrap_reps=0)
    assert rep.dropped.tolist() == [20.0]
    assert rep.x.tolist() == [1.0, 5.0]


def test_tail_curves_minimum_size():
    with pytest.raises(ValueError):
        tail_curves(np.ones(10), [1.0])


def test_gstar_is_mean_of_clipped():
    z = Stream(2).generator().normal(1, 3, 5000)
    ss = SortedSample(z)
    for x in (0.5, 2.0, 7.0):
        assert ss.Gstar(x) == pytest.approx(np.clip(z, 0, x).mean(), rel=1e-12)


def test_c_estimate_on_pareto(pareto):
    c = estimate_c(pareto, (5, 50), bootstrap_reps=50, seed=3)
    assert c.ci[0] - 0.05 < 0 < c.ci[1] + 0.05
    assert not c.warning


def test_c_estimate_warns_when_not_flat():
    z = Stream(4).generator().standard_exponential(50_000) * 10
    with pytest.warns(TailWarning):
        c = estimate_c(z, (2, 40), bootstrap_reps=0)
    assert c.warning


def test_laplace_profile_pareto(pareto):
    x = np.array([2.0, 4.0, 6.0])
    lp = laplace_profile(pareto, x, np.array([0.01, 0.1, 1.0]))
    exact = np.exp(x) * pareto_one_minus_phi(np.exp(-x))
    assert np.all(np.abs(lp.D - exact) < 4 * lp.se["D"])
    assert np.all(np.abs(lp.phi - (1 - pareto_one_minus_phi(lp.s))) < 4 * lp.se["phi"])


def test_tauberian_offset_pareto(pareto):
    t = np.array([10.0, 100.0])
    tt = tauberian_check(pareto, t)
    exact_psi = t * pareto_one_minus_phi(1 / t)
    assert np.allclose(tt.psi_star, exact_psi, rtol=0.02)
    # psi*(1/t) = log t + 1 - gamma + o(1) and G*(t) = log t + 1
    assert np.all(np.abs(tt.offset) < 0.1)
    with pytest.raises(ValueError):
        tauberian_check(pareto, [0.5])


def test_defect_terms_direct():
    rng = Stream(5).generator()
    counts = np.array([0, 1, 2, 3, 4])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    a = rng.random(counts.sum())
    got = _defect_terms((counts, starts), a)
    want = [np.prod(1 - a[s:s + c]) - 1 + a[s:s + c].sum() for s, c in zip(starts, counts)]
    assert np.allclose(got, want, atol=1e-14)


def test_G_vanishes_for_degenerate_sample(gauss_law):
    z = np.zeros(1000)
    g = G_profile(gauss_law, z, [1.0, 2.0], draws=1000)
    assert np.all(g.G == 0)
    hc = harmonic_check(gauss_law, z, [1.0, 2.0], draws=1000, splits=3)
    assert np.all(hc.residual == 0)


def test_dtable_range():
    tab = DTable(np.ones(10))
    with pytest.raises(ValueError):
        tab(50.0)
    with pytest.raises(ValueError):
        DTable(np.array([-1e4, 1.0]))
