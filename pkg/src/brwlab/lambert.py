"""Real roots of a y - b = eps e^y.

With c = log a - b/a >= 0 and eps in (0, 1/e) the equation has exactly two
real roots. The substitution z = -(y - b/a) turns it into z e^z = -eps e^{-c},
whose two real solutions are the principal and lower branches of the
Lambert W function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

RESIDUAL_TOL = 1e-10


class PreconditionError(ValueError):
    """The inputs violate one of the hypotheses guaranteeing two roots."""

    def __init__(self, inequality: str, detail: str = ""):
        self.inequality = inequality
        super().__init__(f"precondition violated: {inequality}" + (f" ({detail})" if detail else ""))


def check_preconditions(a: float, b: float, eps: float) -> float:
    """Return c = log a - b/a after validating every hypothesis."""
    if not a > 0:
        raise PreconditionError("a > 0", f"a = {a!r}")
    if not b >= 0:
        raise PreconditionError("b >= 0", f"b = {b!r}")
    c = math.log(a) - b / a
    if not c >= 0:
        raise PreconditionError("c = log a - b/a >= 0", f"c = {c!r}")
    if not 0 < eps < 1 / math.e:
        raise PreconditionError("0 < eps < 1/e", f"eps = {eps!r}")
    if not eps * math.exp(-c) < 1 / math.e:
        raise PreconditionError("eps e^{-c} < 1/e")
    return c


@dataclass(frozen=True)
class LambertRoots:
    a: float
    b: float
    eps: float
    y1: float
    y2: float
    residual1: float
    residual2: float
    asymptotic_y2: float

    @property
    def gap(self) -> float:
        return abs(self.y2 - self.asymptotic_y2)

    def canonical_defect(self) -> tuple[float, float]:
        """|z e^z + eps e^{-c}| at both roots, z = -(y - b/a)."""
        target = -(self.eps / self.a) * math.exp(self.b / self.a)
        out = []
        for y in (self.y1, self.y2):
            z = -(y - self.b / self.a)
            out.append(abs(z * math.exp(z) - target))
        return out[0], out[1]


def _residual(a, b, eps, y):
    return abs(a * y - b - eps * math.exp(y))


def asymptotic_y2(a: float, b: float, eps: float) -> float:
    """Large root without its vanishing correction."""
    lead = -math.log(eps) + math.log(a)
    return lead + math.log(lead - b / a)


def _newton_bracketed(f, df, lo, hi, x0, tol=1e-15, maxit=200):
    """Newton iteration kept inside a sign-change bracket (bisection fallback)."""
    flo = f(lo)
    x = x0
    for _ in range(maxit):
        fx = f(x)
        if fx == 0:
            return x
        if (fx < 0) == (flo < 0):
            lo, flo = x, fx
        else:
            hi = x
        d = df(x)
        step = x - fx / d if d != 0 else None
        x_new = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def solve_roots(a: float, b: float, eps: float) -> LambertRoots:
    """Both roots; y1 by Brent's bisection method, y2 by bracketed Newton."""
    check_preconditions(a, b, eps)
    ba = b / a
    ystar = math.log(a / eps)  # unique maximum of a y - b - eps e^y

    def f(y):
        return a * y - b - eps * math.exp(y)

    def df(y):
        return a - eps * math.exp(y)

    if not f(ystar) > 0:
        raise PreconditionError("eps e^{-c} < 1/e", "no interior maximum above zero")
    hi1 = min(ba + 1.0, ystar)
    y1 = brentq(f, ba, hi1, xtol=1e-15, rtol=1e-15, maxiter=500) if f(hi1) != 0 else hi1
    hi2 = ystar + 2.0 * math.log(1.0 / eps) + 10.0
    while f(hi2) > 0:  # pragma: no cover - the bracket is wide by construction
        hi2 += 10.0
    seed = -math.log(eps) + math.log(a)
    seed = min(max(seed, ystar + 1e-12), hi2)
    y2 = _newton_bracketed(f, df, ystar, hi2, seed)
    r1, r2 = _residual(a, b, eps, y1), _residual(a, b, eps, y2)
    if y1 >= y2:
        y1 = y2 = 0.5 * (y1 + y2)
    return LambertRoots(a, b, eps, y1, y2, r1, r2, asymptotic_y2(a, b, eps))


@dataclass
class GapTable:
    eps: np.ndarray
    gap: np.ndarray

    @property
    def strictly_decreasing(self) -> bool:
        order = np.argsort(-self.eps)
        g = self.gap[order]
        return bool(np.all(np.diff(g) < 0))


def asymptotic_gap(a: float, b: float, eps_list) -> GapTable:
    eps = np.asarray(eps_list, dtype=float)
    gaps = np.array([solve_roots(a, b, e).gap for e in eps])
    return GapTable(eps, gaps)


def random_admissible(n: int, rng) -> list[tuple[float, float, float]]:
    """Random (a, b, eps) satisfying every precondition."""
    out = []
    while len(out) < n:
        a = float(np.exp(rng.uniform(0.0, 4.0)))
        b = float(rng.uniform(0.0, a * math.log(a)))
        eps = float(rng.uniform(1e-8, 1 / math.e) ** rng.uniform(1, 6))
        try:
            check_preconditions(a, b, eps)
        except PreconditionError:
            continue
        out.append((a, b, eps))
    return out
