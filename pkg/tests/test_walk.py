import math

import numpy as np
import pytest

from brwlab.rng import Stream
from brwlab.walk import (escape_estimate, first_exit, gaussian_spine, ladder_decompose, many_to_one_check,
                         passage_times, renewal_tables, walk_path)


def test_exact_lattice_renewal(lattice):
    t = renewal_tables(lattice, [0.5, 1.0, 3.0, 10.0], "exact_lattice")
    assert t.U.tolist() == [2.0, 2.0, 6.0, 20.0]
    assert t.V.tolist() == [1.0, 2.0, 4.0, 11.0]
    assert t.R.tolist() == t.V.tolist()
    assert (t.mu, t.nu, t.m) == (0.5, 1.0, 1.0)


def test_exact_mode_rejects_gaussian(gauss):
    with pytest.raises(ValueError):
        renewal_tables(gauss, [1.0], "exact_lattice")


def test_renewal_measure_refuses_beyond_range(lattice):
    t = renewal_tables(lattice, [1.0], "exact_lattice", x_max=5)
    with pytest.raises(ValueError):
        t.U_measure(6.0)


def test_empirical_lattice_U(lattice):
    xs = np.arange(1.0, 11.0)
    t = renewal_tables(lattice, xs, "empirical", n_ladders=200_000, rng=Stream(4).generator(), x_max=10)
    assert np.all(np.abs(t.U / (2 * np.ceil(xs)) - 1) < 0.03)
    assert np.all(np.abs(t.V - (np.floor(xs) + 1)) < 4 * t.se["V"] + 1e-9)


def test_ladder_means_lattice(lattice):
    st = ladder_decompose(lattice, 100_000, Stream(6).generator())
    assert abs(st.mu - 0.5) < 0.01
    assert st.nu == 1.0 and st.m == 1.0


def test_ladder_means_gaussian(gauss):
    # for a symmetric continuous step the three ladder means agree
    st = ladder_decompose(gauss, 50_000, Stream(7).generator())
    assert abs(st.mu - st.nu) < 0.03 and abs(st.nu - st.m) < 0.03
    assert abs(st.m - math.sqrt(math.log(2))) < 0.03


def test_first_exit_lattice_overshoot(lattice):
    res = first_exit(lattice, np.full(1000, 2.5), Stream(8).generator(), lower=0.0)
    assert np.all(res.value[res.steps >= 0] == -0.5)


def test_first_exit_occupation_counts_steps(lattice):
    res = first_exit(lattice, np.full(500, 3.0), Stream(9).generator(), lower=0.0,
                     weight=lambda s: np.ones_like(s))
    done = res.steps >= 0
    assert np.array_equal(res.occupation[done], res.steps[done].astype(float))


def test_passage_needs_y_above_x(lattice):
    with pytest.raises(ValueError):
        passage_times(lattice, 3.0, 2.0, 10, Stream(0).generator())


def test_passage_records(lattice):
    rec = passage_times(lattice, 3.0, 9.0, 2000, Stream(10).generator())
    esc = rec.escaped
    assert np.all(rec.S_sigma[esc] == 10.0)
    assert np.all(rec.overshoot[esc] == 1.0)
    assert np.all(rec.S_tau[rec.tau >= 0] == 0.0)


@pytest.mark.parametrize("y", [9.0, 19.0])
def test_gamblers_ruin(lattice, y):
    v, se = escape_estimate(lattice, 3.0, y, 100_000, Stream(11).generator())
    assert abs(v - 3 * y / (y + 1)) < 3 * se


def test_walk_path_shape(gauss):
    p = walk_path(gauss, 1.0, 50, Stream(12).generator())
    assert p.shape == (51,) and p[0] == 1.0


@pytest.mark.parametrize("n", [1, 2])
def test_many_to_one_small(gauss_law, n):
    r = many_to_one_check(gauss_law, n, lambda p: np.cos(p[:, -1]) + (p.min(axis=1) > -1),
                          100_000, Stream(13).generator())
    assert abs(r.gap) < 3.5 * r.se


def test_many_to_one_range(gauss_law):
    with pytest.raises(ValueError):
        many_to_one_check(gauss_law, 4, lambda p: p[:, -1], 10, 0)


def test_gaussian_spine_variance():
    s = gaussian_spine(2.0)
    x = s.sample(Stream(0).generator(), 100_000)
    assert abs(x.var() - 2.0) < 0.05
