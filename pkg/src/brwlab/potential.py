"""Potential theory of the spine walk killed on entering (-inf, 0].

Covers the occupation expectation E_x sum_{k<tau} p(S_k) by three routes
(Monte Carlo, exact lattice linear system, renewal double integral), the
three-term representation of subharmonic functions, direct Riemann
integrability checks and residuals of the Poisson equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .rng import as_generator
from .walk import RenewalTable, SpineLaw, first_exit, renewal_tables


class NotDRI(ValueError):
    """The source term failed the direct Riemann integrability check."""


class CoverageError(ValueError):
    """A grid function is evaluated outside the range it was tabulated on."""


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class TestFunction:
    """A vectorized nonnegative function with the metadata numerics need.

    ``support`` is (lo, hi) when the function vanishes outside [lo, hi];
    ``truncation`` is a point beyond which it may be treated as zero;
    ``critical_points`` lists discontinuities or spikes for cell sampling;
    ``decay_rate`` is set when f(x) e^{rate x} is nonincreasing.
    """

    name: str
    fn: Callable
    support: tuple | None = None
    truncation: float | None = None
    critical_points: tuple = ()
    decay_rate: float | None = None
    nonnegative: bool = True

    __test__ = False  # keep pytest from collecting this class

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    @property
    def upper(self) -> float | None:
        if self.support is not None:
            return float(self.support[1])
        return self.truncation

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


def indicator(a: float, b: float, *, right_open: bool = False) -> TestFunction:
    if b < a:
        raise ValueError("indicator needs a <= b")

    def f(x):
        return (((x >= a) & (x < b)) if right_open else ((x >= a) & (x <= b))).astype(float)

    br = ")" if right_open else "]"
    return TestFunction(f"1[{a:g},{b:g}{br}", f, (a, b), b, (a, b))


def exp_decay(rate: float = 1.0) -> TestFunction:
    if not rate > 0:
        raise ValueError("rate must be positive")

    def f(x):
        return np.where(x >= 0, np.exp(-rate * np.maximum(x, 0.0)), 0.0)

    return TestFunction(f"exp(-{rate:g}w)", f, None, 40.0 / rate, (0.0,), rate)


def power_decay(k: float = 3.0) -> TestFunction:
    if not k > 2:
        raise ValueError("power decay needs k > 2 for a finite occupation")

    def f(x):
        return np.where(x >= 0, (1.0 + np.maximum(x, 0.0)) ** (-k), 0.0)

    return TestFunction(f"(1+w)^-{k:g}", f, None, 1e4, (0.0,), 0.0)


def zero() -> TestFunction:
    return TestFunction("zero", lambda x: np.zeros(np.shape(x)), (0.0, 0.0), 0.0)


def constant(c: float) -> TestFunction:
    return TestFunction(f"const:{c:g}", lambda x: np.full(np.shape(x), float(c)), None, None, (), None, c >= 0)


def parse_function(text: str) -> TestFunction:
    """indicator:a:b, exp:rate, power:k, const:c or zero."""
    parts = text.strip().split(":")
    head = parts[0]
    try:
        if head == "indicator" and len(parts) == 3:
            return indicator(float(parts[1]), float(parts[2]))
        if head == "exp" and len(parts) in (1, 2):
            return exp_decay(float(parts[1]) if len(parts) == 2 else 1.0)
        if head == "power" and len(parts) in (1, 2):
            return power_decay(float(parts[1]) if len(parts) == 2 else 3.0)
        if head == "const" and len(parts) == 2:
            return constant(float(parts[1]))
        if head == "zero" and len(parts) == 1:
            return zero()
    except ValueError as exc:
        raise ValueError(f"bad function description {text!r}: {exc}") from None
    raise ValueError(f"bad function description {text!r}; expected indicator:a:b, exp:rate, power:k, const:c or zero")


def _as_tf(p) -> TestFunction:
    if isinstance(p, TestFunction):
        return p
    if isinstance(p, str):
        return parse_function(p)
    if callable(p):
        return TestFunction(getattr(p, "__name__", "custom"), p)
    raise TypeError("expected a TestFunction, a description string or a callable")


@dataclass(frozen=True)
class Value:
    value: float
    se: float = 0.0
    censored: int = 0


# ---------------------------------------------------------------- occupation

def _lattice_dp_values(p: TestFunction, xs: np.ndarray, extra: int = 50) -> np.ndarray:
    """Exact occupation for the simple symmetric walk killed at (-inf, 0].

    For each fractional offset the states f, f+1, ... form a birth-death
    chain; the system h = p + P h is solved up to a far state beyond the
    support, where h is continued as a constant (the minimal solution is
    flat beyond the support because the killed Green function
    2 min(x, y) is flat in x for x > y).
    """
    top = p.upper
    if top is None:
        raise ValueError(f"function {p.name} has no compact support and no truncation")
    out = np.zeros(xs.size)
    for frac in np.unique(np.round(np.mod(xs[xs > 0], 1.0), 12)):
        i0 = 1 if frac == 0.0 else 0
        sel = np.flatnonzero((xs > 0) & (np.abs(np.mod(xs, 1.0) - frac) < 1e-9))
        i_max = int(math.ceil(max(xs[sel].max(), top) + extra))
        idx = np.arange(i0, i_max + 1)
        w = frac + idx
        n = idx.size
        ab = np.zeros((3, n))
        ab[1, :] = 1.0
        ab[0, 1:] = -0.5   # coefficient of h_{i+1} in row i
        ab[2, :-1] = -0.5  # coefficient of h_{i-1} in row i
        ab[1, -1] = 0.5    # h_{imax+1} := h_{imax}
        h = solve_banded((1, 1), ab, p(w))
        out[sel] = h[np.rint(xs[sel] - frac).astype(int) - i0]
    return out


def _renewal_double_integral(table: RenewalTable, p: TestFunction, x: float, measures=None) -> float:
    """sum over U atoms a < x and V atoms b of U{a} V{b} p(x - a + b)."""
    if x <= 0:
        return 0.0
    Um, Vm = measures if measures is not None else (table.U_measure, table.V_measure)
    top = p.upper
    if top is None:
        raise ValueError(f"function {p.name} has no compact support and no truncation")
    ua, um = Um.restrict(0.0, x, hi_open=True)
    reach = top - (x - ua.max()) if ua.size else 0.0
    if reach > Vm.x_max:
        raise ValueError("renewal table is too short for this function")
    va, vm = Vm.restrict(0.0, max(reach, 0.0))
    if table.mode == "exact_lattice" or (ua.size * va.size <= 4_000_000):
        vals = p(x - ua[:, None] + va[None, :])
        return float(um @ vals @ vm)
    # bin both measures on a fine grid to keep the double sum affordable
    delta = 0.002
    ub = np.bincount(np.floor(ua / delta).astype(int), weights=um)
    vb = np.bincount(np.floor(va / delta).astype(int), weights=vm)
    uc = (np.arange(ub.size) + 0.5) * delta
    vc = (np.arange(vb.size) + 0.5) * delta
    tot = 0.0
    for start in range(0, uc.size, 256):
        u = uc[start:start + 256]
        tot += float(ub[start:start + 256] @ p(x - u[:, None] + vc[None, :]) @ vb)
    return tot


def occupation_expectation(spine: SpineLaw, p, x, method: str = "monte_carlo", *, draws: int = 100_000,
                           rng=None, table: RenewalTable | None = None, horizon: int = 10**6,
                           budget: int | None = 3 * 10**8) -> Value:
    """E_x sum_{k=0}^{tau-1} p(S_k), tau = first entrance time of (-inf, 0]."""
    p = _as_tf(p)
    x = float(x)
    if x <= 0:
        return Value(0.0)
    if method == "lattice_dp":
        if not spine.is_unit_lattice:
            raise ValueError("lattice_dp needs the simple symmetric lattice spine")
        return Value(float(_lattice_dp_values(p, np.array([x]))[0]))
    if method == "renewal_double_integral":
        top = p.upper
        if top is None:
            raise ValueError(f"function {p.name} has no compact support and no truncation")
        if table is None:
            mode = "exact_lattice" if spine.is_unit_lattice else "empirical"
            table = renewal_tables(spine, [x], mode, x_max=max(x, top) + 1.0, rng=rng)
        val = _renewal_double_integral(table, p, x)
        se = 0.0
        batches = getattr(table, "batches", None)
        if table.mode == "empirical" and batches:
            reps = [_renewal_double_integral(table, p, x, (bu, bv)) for bu, bv in zip(batches["U"], batches["V"])]
            se = float(np.std(reps, ddof=1) / math.sqrt(len(reps)))
        return Value(val, se)
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    if p.is_zero:
        return Value(0.0)
    rng = as_generator(0 if rng is None else rng)
    res = first_exit(spine, np.full(draws, x), rng, lower=0.0, weight=p, horizon=horizon, budget=budget)
    occ = res.occupation
    return Value(float(occ.mean()), float(occ.std(ddof=1) / math.sqrt(draws)), res.censored)


@dataclass
class IdentityCheck:
    lhs: Value
    rhs: Value

    @property
    def gap(self) -> float:
        return self.lhs.value - self.rhs.value

    @property
    def se(self) -> float:
        return math.hypot(self.lhs.se, self.rhs.se)


def renewal_identity_check(spine: SpineLaw, p, x: float, *, lhs_method: str | None = None, draws: int = 100_000,
                           rng=None, table: RenewalTable | None = None, n_ladders: int = 10**5) -> IdentityCheck:
    """Occupation expectation against the renewal double integral."""
    p = _as_tf(p)
    rng = as_generator(0 if rng is None else rng)
    if lhs_method is None:
        lhs_method = "lattice_dp" if spine.is_unit_lattice else "monte_carlo"
    lhs = occupation_expectation(spine, p, x, lhs_method, draws=draws, rng=rng)
    if table is None and x > 0 and not p.is_zero:
        mode = "exact_lattice" if spine.is_unit_lattice else "empirical"
        table = renewal_tables(spine, [x], mode, x_max=max(x, p.upper or 0.0) + 1.0, rng=rng, n_ladders=n_ladders)
    if p.is_zero:
        rhs = Value(0.0)
    else:
        rhs = occupation_expectation(spine, p, x, "renewal_double_integral", table=table, rng=rng)
    return IdentityCheck(lhs, rhs)


# ---------------------------------------------------------------- dRi

@dataclass
class DriReport:
    h: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    verdict: str
    tail: np.ndarray
    second_half_ratio: float
    notes: list = field(default_factory=list)

    @property
    def gap(self) -> np.ndarray:
        return self.upper - self.lower


def exp_dominated(a: float = 0.0) -> tuple:
    """Tail rule: x -> e^{-a x} t(x) is nonincreasing beyond x_max."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    return ("exp_dominated", float(a))


def hard_cutoff() -> tuple:
    """Tail rule: t vanishes beyond x_max."""
    return ("hard_cutoff", 0.0)


def _parse_rule(rule):
    if isinstance(rule, tuple):
        return rule
    if rule == "hard_cutoff":
        return hard_cutoff()
    if isinstance(rule, str) and rule.startswith("exp_dominated"):
        arg = rule[len("exp_dominated"):].strip("():")
        return exp_dominated(float(arg) if arg else 0.0)
    raise ValueError(f"unknown tail rule {rule!r}")


def _cell_extrema(t, h, n_cells, samples, crit):
    """Sampled sup and inf of t over [nh, (n+1)h) for n < n_cells."""
    sup = np.empty(n_cells)
    inf = np.empty(n_cells)
    frac = np.arange(samples - 1) / (samples - 1)
    chunk = max(1, 2_000_000 // samples)
    for start in range(0, n_cells, chunk):
        n = np.arange(start, min(n_cells, start + chunk))
        left = n * h
        right = np.nextafter((n + 1) * h, -np.inf)
        pts = np.concatenate([left[:, None] + h * frac[None, :], right[:, None]], axis=1)
        vals = t(pts)
        sup[n] = vals.max(axis=1)
        inf[n] = vals.min(axis=1)
    if len(crit):
        c = np.asarray(crit, dtype=float)
        c = c[(c >= 0) & (c < n_cells * h)]
        for pts in (c, np.nextafter(c, -np.inf), np.nextafter(c, np.inf)):
            pts = pts[(pts >= 0) & (pts < n_cells * h)]
            cell = np.minimum((pts // h).astype(int), n_cells - 1)
            v = t(pts)
            np.maximum.at(sup, cell, v)
            np.minimum.at(inf, cell, v)
    return sup, inf


def dri_classify(t, h_list: Sequence[float], x_max: float, tail_rule="hard_cutoff", *, samples: int = 64,
                 critical_points=None, tail_factor: float = 10.0, gap_tol: float = 0.1) -> DriReport:
    """Upper and lower Riemann sums per cell width, with a verdict.

    Cells inside [0, x_max) are sampled densely (``samples`` points each,
    including the left limit at the right end plus any critical points).
    Beyond x_max the tail rule decides: ``hard_cutoff`` adds nothing;
    ``exp_dominated(a)`` bounds cell extrema by e^{+-a h} times endpoint
    values, summed out to ``tail_factor * x_max``.
    """
    tf = _as_tf(t)
    kind, a = _parse_rule(tail_rule)
    crit = tuple(critical_points) if critical_points is not None else tuple(tf.critical_points)
    hs = np.asarray(sorted(h_list, reverse=True), dtype=float)
    if np.any(hs <= 0):
        raise ValueError("cell widths must be positive")
    up = np.empty(hs.size)
    lo = np.empty(hs.size)
    tails = np.empty(hs.size)
    ratios = np.empty(hs.size)
    notes = []
    for i, h in enumerate(hs):
        n_cells = int(math.ceil(x_max / h))
        sup, inf = _cell_extrema(tf, h, n_cells, samples, crit)
        if np.any(inf > sup) or np.any(inf < 0):
            notes.append(f"h={h:g}: negative or inconsistent cell values")
        half = n_cells // 2
        first = math.fsum(sup[:half]) * h
        second = math.fsum(sup[half:]) * h
        ratios[i] = second / first if first > 0 else (math.inf if second > 0 else 0.0)
        tail_up = tail_lo = 0.0
        if kind == "exp_dominated":
            n_tail = int(math.ceil(tail_factor * x_max / h)) - n_cells
            if n_tail > 0:
                nodes = tf((n_cells + np.arange(n_tail + 1)) * h)
                tail_up = h * math.exp(a * h) * math.fsum(nodes[:-1])
                tail_lo = h * math.exp(-a * h) * math.fsum(nodes[1:])
        up[i] = math.fsum(sup) * h + tail_up
        lo[i] = math.fsum(inf) * h + tail_lo
        tails[i] = tail_up
    gaps = up - lo
    shrinking = bool(np.all(np.diff(gaps) <= 1e-12 * np.maximum(1.0, up[:-1])))
    if not np.all(np.isfinite(up)):
        verdict = "not_dri"
    elif shrinking and (gaps[-1] <= gap_tol * up[-1]
                        or gaps[-1] <= math.sqrt(hs[-1] / hs[0]) * gaps[0]):
        verdict = "dri"
    elif np.max(ratios) > 0.5:
        verdict = "not_dri"
        notes.append("upper sums keep growing with the range while the gap stays open")
    else:
        verdict = "inconclusive"
    return DriReport(hs, up, lo, verdict, tails, float(np.max(ratios)), notes)


class SpikeTrain:
    """Unit-height triangles centred at the renewal points of a two-valued walk.

    The walk steps take the values alpha and 1 - alpha (alpha irrational), so
    the renewal points k1*alpha + k2*(1 - alpha) fill the half-line ever more
    densely. Bases shrink fast enough that the total area is finite, yet every
    small cell near a renewal point has supremum one, so the function is
    Riemann integrable on each interval but not directly Riemann integrable.
    """

    def __init__(self, x_max: float, alpha: float = (math.sqrt(5) - 1) / 2, scale: float = 1.0):
        k = int(math.ceil(x_max / min(alpha, 1 - alpha))) + 1
        k1, k2 = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
        pts = (k1 * alpha + k2 * (1 - alpha)).ravel()
        pts = np.unique(pts[(pts > 0) & (pts <= x_max)])
        gaps = np.diff(pts)
        room = np.minimum(np.concatenate([[pts[0]], gaps]), np.concatenate([gaps, [np.inf]]))
        n = np.arange(1, pts.size + 1)
        self.centers = pts
        self.widths = np.minimum(0.5 * room, scale / n**2)
        self.x_max = x_max
        self.critical_points = tuple(pts)

    @property
    def area(self) -> float:
        return 0.5 * float(self.widths.sum())

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.centers, x), 1, self.centers.size - 1)
        out = np.zeros(x.shape)
        for j in (i - 1, i):
            d = np.abs(x - self.centers[j])
            half = 0.5 * self.widths[j]
            out = np.maximum(out, np.where(d < half, 1.0 - d / half, 0.0))
        return out

    def as_test_function(self) -> TestFunction:
        return TestFunction("spike_train", self, (0.0, self.x_max), self.x_max, self.critical_points)


# ---------------------------------------------------------------- representation

@dataclass
class RepresentationResult:
    x: np.ndarray
    kappa: float
    term1: np.ndarray
    term2: np.ndarray
    term3: np.ndarray
    se1: np.ndarray
    se2: np.ndarray
    se3: np.ndarray
    dri: DriReport | None = None

    @property
    def f(self) -> np.ndarray:
        return self.term1 + self.term2 - self.term3

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.se1**2 + self.se2**2 + self.se3**2)

    def rows(self):
        for i, x in enumerate(self.x):
            yield {"x": float(x), "term1": float(self.term1[i]), "term2": float(self.term2[i]),
                   "term3": float(self.term3[i]), "f": float(self.f[i]), "se": float(self.se[i])}


def _default_dri(g: TestFunction) -> DriReport:
    top = g.upper
    if g.support is not None:
        return dri_classify(g, [1.0, 0.5, 0.25, 0.125], max(top, 1.0) + 1.0, hard_cutoff())
    if g.decay_rate is not None:
        return dri_classify(g, [1.0, 0.5, 0.25, 0.125], 20.0 / max(g.decay_rate, 0.05), exp_dominated(0.0))
    return dri_classify(g, [1.0, 0.5, 0.25, 0.125], 50.0, exp_dominated(0.0))


def three_term_representation(spine: SpineLaw, g, h, kappa, x_grid, *, draws: int = 100_000, rng=None,
                              table: RenewalTable | None = None, allow_not_dri: bool = False,
                              n_ladders: int = 10**5, horizon: int = 10**6) -> RepresentationResult:
    """f(x) = kappa U(x) + E_x h(S_tau) - E_x sum_{k<tau} g(S_k) on a grid.

    ``kappa`` is a number or "mu" for the weak descending ladder mean. A
    source g that is classified not directly Riemann integrable raises
    ``NotDRI`` unless ``allow_not_dri`` is set.
    """
    g = _as_tf(g)
    h = _as_tf(h)
    xs = np.asarray(x_grid, dtype=float)
    rng = as_generator(0 if rng is None else rng)
    report = None
    if not g.is_zero:
        report = _default_dri(g)
        if report.verdict == "not_dri" and not allow_not_dri:
            raise NotDRI(f"source term {g.name} is not directly Riemann integrable")
    lattice = spine.is_unit_lattice
    if table is None:
        table = renewal_tables(spine, xs, "exact_lattice" if lattice else "empirical",
                               x_max=max(xs.max(), 1.0), rng=rng, n_ladders=n_ladders)
    k = table.mu if kappa == "mu" else float(kappa)
    U = table.U_measure(xs)
    term1 = k * U
    se1 = np.abs(k) * np.interp(xs, table.x, table.se["U"]) if "U" in table.se else np.zeros(xs.size)
    term2 = np.zeros(xs.size)
    term3 = np.zeros(xs.size)
    se2 = np.zeros(xs.size)
    se3 = np.zeros(xs.size)
    neg = xs <= 0
    term2[neg] = h(xs[neg])
    pos = ~neg
    if lattice:
        # from x > 0 the walk lives on x + Z and is killed at x - ceil(x)
        term2[pos] = h(xs[pos] - np.ceil(xs[pos]))
        if not g.is_zero:
            term3[pos] = _lattice_dp_values(g, xs[pos])
    else:
        for i in np.flatnonzero(pos):
            res = first_exit(spine, np.full(draws, xs[i]), rng, lower=0.0,
                             weight=None if g.is_zero else g, horizon=horizon)
            ok = res.steps >= 0
            hv = h(res.value[ok])
            term2[i] = hv.mean()
            se2[i] = hv.std(ddof=1) / math.sqrt(ok.sum())
            if not g.is_zero:
                term3[i] = res.occupation.mean()
                se3[i] = res.occupation.std(ddof=1) / math.sqrt(draws)
    return RepresentationResult(xs, k, term1, term2, term3, se1, se2, se3, report)


# ---------------------------------------------------------------- residuals

@dataclass
class ResidualProfile:
    x: np.ndarray
    residual: np.ndarray
    se: np.ndarray

    def rows(self):
        for i, x in enumerate(self.x):
            yield {"x": float(x), "residual": float(self.residual[i]), "se": float(self.se[i])}


class GridFunction:
    """Linear interpolation of tabulated values, refusing to extrapolate."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.domain = (float(self.x[0]), float(self.x[-1]))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.domain[0]) or np.any(t > self.domain[1]):
            raise CoverageError(f"grid function evaluated outside {self.domain}")
        return np.interp(t, self.x, self.y)


def subharmonic_residual(f, spine: SpineLaw, g, x_grid, draws: int = 100_000, rng=None) -> ResidualProfile:
    """f(x) - (E f(x + xi) - g(x)) per grid point.

    Exact for finite-support steps; otherwise the expectation uses one set
    of step draws shared across the grid. Functions carrying a ``domain``
    must cover every x + xi used, which is checked up front.
    """
    g = _as_tf(g)
    xs = np.asarray(x_grid, dtype=float)
    if spine.atoms is not None:
        vals, probs = spine.atoms
        steps = np.asarray(vals, dtype=float)
        weights = np.asarray(probs, dtype=float)
    else:
        rng = as_generator(0 if rng is None else rng)
        steps = spine.sample(rng, draws)
        weights = None
    dom = getattr(f, "domain", None)
    if dom is not None:
        lo = xs.min() + steps.min()
        hi = xs.max() + steps.max()
        if lo < dom[0] or hi > dom[1]:
            raise CoverageError(f"grid [{dom[0]:g}, {dom[1]:g}] does not cover the step reach [{lo:g}, {hi:g}]")
    res = np.empty(xs.size)
    se = np.zeros(xs.size)
    fx = np.asarray(f(xs), dtype=float)
    gx = g(xs)
    for i, x in enumerate(xs):
        v = np.asarray(f(x + steps), dtype=float)
        if weights is not None:
            mean = float(weights @ v)
        else:
            mean = float(v.mean())
            se[i] = float(v.std(ddof=1) / math.sqrt(v.size))
        res[i] = fx[i] - (mean - gx[i])
    return ResidualProfile(xs, res, se)
