import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from brwlab import io
from brwlab.lambert import PreconditionError, check_preconditions, solve_roots
from brwlab.potential import indicator, occupation_expectation
from brwlab.rng import Stream
from brwlab.stable import StableTriple, cf, scale_shift
from brwlab.tail import SortedSample, _defect_terms
from brwlab.walk import lattice_spine, renewal_tables

LATTICE = lattice_spine()


@st.composite
def admissible(draw):
    a = draw(st.floats(1.0, 50.0))
    b = draw(st.floats(0.0, a * math.log(a)))
    eps = draw(st.floats(1e-12, 1 / math.e - 1e-6))
    try:
        check_preconditions(a, b, eps)
    except PreconditionError:
        assume(False)
    return a, b, eps


@settings(max_examples=200, deadline=None)
@given(admissible())
def test_lambert_roots(args):
    a, b, eps = args
    r = solve_roots(a, b, eps)
    assert max(r.residual1, r.residual2) < 1e-10
    assert r.y1 <= r.y2
    assert b / a <= r.y1 < b / a + 1
    assert max(r.canonical_defect()) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 15), st.integers(0, 8), st.integers(0, 8))
def test_dp_equals_green_function(x, lo, width):
    hi = lo + width
    v = occupation_expectation(LATTICE, indicator(lo, hi), float(x), "lattice_dp").value
    want = sum(2 * min(x, y) for y in range(max(lo, 1), hi + 1))
    assert abs(v - want) < 1e-8 * max(1, want)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 40.0))
def test_lattice_renewal_closed_forms(x):
    t = renewal_tables(LATTICE, [x], "exact_lattice", x_max=41)
    assert t.U[0] == 2 * math.ceil(x)
    assert t.V[0] == math.floor(x) + 1 == t.R[0]


@given(st.floats(-5, 5), st.floats(0.05, 20), st.floats(-1, 1), st.floats(-10, 10))
def test_affine_map_of_standard_law(a, b, beta, t):
    # b X + a + (2/pi) beta b log b has law (a, b, beta) when X ~ (0, 1, beta)
    lhs = cf(StableTriple(a, b, beta), t)
    rhs = np.exp(1j * t * (a + scale_shift(b, beta))) * cf(StableTriple(0, 1, beta), b * t)
    assert abs(lhs - rhs) < 1e-9


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(0, 500))
def test_gstar_identity(values, x):
    ss = SortedSample(values)
    z = np.asarray(values)
    assert math.isclose(float(ss.Gstar(x)), float(np.clip(z, 0, x).mean()), rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(float(ss.H(x) + x * ss.survival(x) - z[z < 0].sum() / z.size), float(ss.Gstar(x)),
                        rel_tol=1e-9, abs_tol=1e-7)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=20), st.integers(0, 2**32 - 1))
def test_defect_terms(counts, seed):
    counts = np.array(counts)
    a = np.random.default_rng(seed).random(counts.sum())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    got = _defect_terms((counts, starts), a)
    for g, s, c in zip(got, starts, counts):
        assert abs(g - (np.prod(1 - a[s:s + c]) - 1 + a[s:s + c].sum())) < 1e-12


@given(st.integers(0, 2**64 - 1), st.lists(st.integers(0, 2**64 - 1), max_size=4))
def test_stream_key_deterministic(seed, path):
    s = Stream(seed, tuple(path))
    assert s.key == Stream(seed, tuple(path)).key
    assert s.child(0).key != s.child(1).key


json_values = st.recursive(st.none() | st.booleans() | st.integers(-10**9, 10**9) | st.text(max_size=8)
                           | st.floats(allow_nan=False, allow_infinity=False),
                           lambda c: st.lists(c, max_size=4) | st.dictionaries(st.text(max_size=5), c, max_size=4),
                           max_leaves=12)


@given(json_values)
def test_json_roundtrip(obj):
    import json

    assert json.loads(io.dumps(obj)) == obj
