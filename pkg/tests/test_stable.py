import math

import numpy as np
import pytest
from scipy.stats import levy_stable

from brwlab.stable import (EULER_GAMMA, StableError, StableTriple, cf, cdf, fit, fluctuation_experiment,
                           ks_to_triple, sample, scale_shift, target_triple)

TRIPLES = [StableTriple(0, 1, 0), StableTriple(0, 1, 1), StableTriple(2, 1, 0),
           StableTriple(1, 2, 0.5), StableTriple(-1, 0.5, 1)]


def test_cauchy_special_case():
    T = StableTriple(0, 1, 0)
    assert cf(T, 1.0) == pytest.approx(math.exp(-1))
    assert cdf(T, [0.0, 1.0]) == pytest.approx([0.5, 0.75], abs=1e-8)


@pytest.mark.parametrize("T", TRIPLES)
def test_cdf_matches_scipy(T):
    x = T.a + T.b * np.array([-5.0, -1.0, 0.0, 0.7, 3.0, 20.0])
    ref = levy_stable.cdf(x, 1.0, T.beta, loc=T.a, scale=T.b)
    assert np.allclose(cdf(T, x), ref, atol=1e-6)


def test_cdf_far_tail_asymptotics():
    T = StableTriple(0, 1, 0.3)
    x = np.array([-5e3, 5e3])
    F = cdf(T, x)
    assert F[0] == pytest.approx(0.7 / (math.pi * 5e3), rel=1e-9)
    assert 1 - F[1] == pytest.approx(1.3 / (math.pi * 5e3), rel=1e-9)


@pytest.mark.parametrize("T", TRIPLES)
def test_sampler_matches_cf(T):
    x = sample(T, 200_000, seed=1)
    t = np.linspace(-5, 5, 21)
    emp = np.array([np.exp(1j * s * x).mean() for s in t])
    assert np.max(np.abs(emp - cf(T, t))) < 0.012


def test_sampler_ks():
    T = StableTriple(1, 2, 0.5)
    assert ks_to_triple(sample(T, 200_000, seed=2), T) < 0.006


def test_scale_shift():
    assert scale_shift(1.0, 1.0) == 0.0
    assert scale_shift(math.e, 1.0) == pytest.approx(2 * math.e / math.pi)


@pytest.mark.parametrize("T", TRIPLES)
def test_fit_covers_truth(T):
    r = fit(sample(T, 100_000, seed=3), seed=4)
    assert r.covers(T)
    assert not r.poor_fit


def test_fit_flags_gaussian():
    r = fit(np.random.default_rng(0).normal(size=50_000), bootstrap_reps=3)
    assert r.poor_fit


def test_fit_needs_data():
    with pytest.raises(StableError):
        fit(np.zeros(100))


def test_triple_validation():
    with pytest.raises(StableError):
        StableTriple(0, 0, 0)
    with pytest.raises(StableError):
        StableTriple(0, 1, 1.5)


def test_target_triple_decomposition():
    s2 = 2 * math.log(2)
    tri, d = target_triple(s2, 0.3)
    assert tri.beta == 1.0
    assert tri.b == pytest.approx(math.sqrt(math.pi / (2 * s2)))
    assert d["c_plus_1_minus_gamma"] == pytest.approx(1.3 - EULER_GAMMA)
    assert tri.a == pytest.approx((1.3 - EULER_GAMMA) * math.sqrt(2 / (math.pi * s2)))


def test_fluctuation_rejects_lattice(lattice_law):
    with pytest.raises(StableError, match="nonarithmetic"):
        fluctuation_experiment(lattice_law, [4, 8], 1000)


def test_fluctuation_small_run(gauss_law):
    rep = fluctuation_experiment(gauss_law, [4, 8], 1000, deep_factor=4, seed=5, c_hat=0.0,
                                 sensitivity_replicas=50)
    assert [r.n for r in rep.rows] == [4, 8]
    assert rep.deep_generation == 32
    assert "c_plus_1_minus_gamma" in rep.decomposition
    assert all(0 <= r.ks <= 1 for r in rep.rows)
