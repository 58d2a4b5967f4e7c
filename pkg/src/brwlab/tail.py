"""Tail and Laplace-transform analysis of a sample of martingale limits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .rng import TAG_BOOT, Stream, as_generator

EULER_GAMMA = 0.5772156649015329
FLATNESS_LIMIT = 0.5


class TailWarning(UserWarning):
    pass


def _values(sample) -> np.ndarray:
    z = getattr(sample, "Z_hat", sample)
    z = np.asarray(z, dtype=float).ravel()
    return z[np.isfinite(z)]


class SortedSample:
    """Sorted values with prefix sums for fast truncated moments."""

    def __init__(self, values):
        self.z = np.sort(np.asarray(values, dtype=float))
        self.n = self.z.size
        self.c1 = np.concatenate([[0.0], np.cumsum(self.z)])
        self.c2 = np.concatenate([[0.0], np.cumsum(self.z**2)])

    def below(self, x):
        """Number of values <= x."""
        return np.searchsorted(self.z, x, side="right")

    def H(self, x):
        return self.c1[self.below(x)] / self.n

    def H2(self, x):
        return self.c2[self.below(x)] / self.n

    def survival(self, x):
        return 1.0 - self.below(x) / self.n

    def Gstar(self, x):
        """Exact integral of the empirical survival over [0, x]: mean of clip(Z, 0, x)."""
        x = np.asarray(x, dtype=float)
        k0 = np.searchsorted(self.z, 0.0, side="right")
        kx = self.below(x)
        inner = self.c1[kx] - self.c1[k0]
        return (inner + x * (self.n - kx)) / self.n


def _bootstrap_counts(n, reps, rng):
    for _ in range(reps):
        yield rng.multinomial(n, np.full(n, 1.0 / n))


@dataclass
class TailReport:
    x: np.ndarray
    H: np.ndarray
    H2: np.ndarray
    Gstar: np.ndarray
    tail_product: np.ndarray
    se: dict
    negative_fraction: float
    negative_part: float
    n: int
    dropped: np.ndarray = field(default_factory=lambda: np.empty(0))
    c: "CEstimate | None" = None

    def identity_defect(self) -> np.ndarray:
        """Gstar - (H + x P{Z > x}) after removing the negative part of H."""
        return self.Gstar - (self.H - self.negative_part + self.tail_product)

    def h_slope(self, lo: float, hi: float) -> float:
        """Least-squares slope of H against log x on the grid points in [lo, hi]."""
        sel = (self.x >= lo) & (self.x <= hi)
        if sel.sum() < 2:
            raise ValueError("fewer than two grid points in the slope window")
        return float(np.polyfit(np.log(self.x[sel]), self.H[sel], 1)[0])

    def rows(self, name: str):
        vals = {"H": self.H, "H2": self.H2, "Gstar": self.Gstar, "tail_product": self.tail_product}[name]
        se = self.se[name]
        for i, x in enumerate(self.x):
            yield {"x": float(x), "value": float(vals[i]), "se": float(se[i])}


def tail_curves(sample, x_grid, bootstrap_reps: int = 200, seed: int = 0, min_size: int = 10_000) -> TailReport:
    """H, H2, Gstar and x P{Z > x} on a grid with bootstrap standard errors.

    Negative values are kept in H as they are; their share is reported.
    Grid points at or beyond the sample maximum are dropped and listed.
    """
    z = _values(sample)
    if z.size < min_size:
        raise ValueError(f"tail_curves needs at least {min_size} values")
    x = np.asarray(x_grid, dtype=float)
    if np.any(x <= 0) or np.any(np.diff(x) <= 0):
        raise ValueError("x_grid must be positive and increasing")
    ss = SortedSample(z)
    keep = x < ss.z[-1]
    dropped = x[~keep]
    x = x[keep]
    curves = {"H": ss.H(x), "H2": ss.H2(x), "Gstar": ss.Gstar(x), "tail_product": x * ss.survival(x)}
    se = {k: np.zeros(x.size) for k in curves}
    if bootstrap_reps > 1:
        rng = Stream(seed).child(TAG_BOOT).generator()
        idx = ss.below(x)
        k0 = np.searchsorted(ss.z, 0.0, side="right")
        zc = np.clip(ss.z, 0.0, None)
        acc = {k: [] for k in curves}
        for w in _bootstrap_counts(ss.n, bootstrap_reps, rng):
            cw = np.concatenate([[0], np.cumsum(w)])
            c1 = np.concatenate([[0.0], np.cumsum(w * ss.z)])
            c2 = np.concatenate([[0.0], np.cumsum(w * ss.z**2)])
            cz = np.concatenate([[0.0], np.cumsum(w * zc)])
            surv = 1.0 - cw[idx] / ss.n
            acc["H"].append(c1[idx] / ss.n)
            acc["H2"].append(c2[idx] / ss.n)
            acc["tail_product"].append(x * surv)
            acc["Gstar"].append((cz[idx] - cz[k0]) / ss.n + x * surv)
        se = {k: np.std(np.array(v), axis=0, ddof=1) for k, v in acc.items()}
    neg = z < 0
    return TailReport(x, curves["H"], curves["H2"], curves["Gstar"], curves["tail_product"], se,
                      float(neg.mean()), float(z[neg].sum() / z.size), int(z.size), dropped)


# ---------------------------------------------------------------- constant c

@dataclass
class CEstimate:
    c_hat: float
    ci: tuple
    se: float
    flatness: float
    warning: bool
    window: np.ndarray


def default_window(sample, points: int = 20) -> np.ndarray:
    """Log-spaced x with empirical P{Z > x} between 0.01 and 0.1."""
    z = _values(sample)
    lo, hi = np.quantile(z, [0.9, 0.99])
    if not (lo > 0 and hi > lo):
        raise ValueError("sample quantiles do not span a usable window")
    return np.geomspace(lo, hi, points)


def estimate_c(sample, window=None, bootstrap_reps: int = 200, seed: int = 0, points: int = 20) -> CEstimate:
    """Mean of H(x) - log x over the window with a percentile bootstrap CI."""
    z = _values(sample)
    if window is None:
        w = default_window(z, points)
    elif len(window) == 2:
        w = np.geomspace(float(window[0]), float(window[1]), points)
    else:
        w = np.asarray(window, dtype=float)
    if w.size < 5 or np.any(w <= 0):
        raise ValueError("window needs at least 5 positive points")
    ss = SortedSample(z)
    diff = ss.H(w) - np.log(w)
    c_hat = float(diff.mean())
    flat = float(diff.max() - diff.min())
    boots = []
    if bootstrap_reps > 1:
        rng = Stream(seed).child(TAG_BOOT, 1).generator()
        idx = ss.below(w)
        for cnt in _bootstrap_counts(ss.n, bootstrap_reps, rng):
            c1 = np.concatenate([[0.0], np.cumsum(cnt * ss.z)])
            boots.append(float((c1[idx] / ss.n - np.log(w)).mean()))
    if boots:
        ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
        se = float(np.std(boots, ddof=1))
    else:
        ci, se = (c_hat, c_hat), 0.0
    warn = flat > FLATNESS_LIMIT
    if warn:
        warnings.warn(f"H(x) - log x varies by {flat:.3f} over the window", TailWarning, stacklevel=2)
    return CEstimate(c_hat, ci, se, flat, warn, w)


# ---------------------------------------------------------------- Laplace transform

def _one_minus_phi(z: np.ndarray, s: np.ndarray, chunk: int = 2_000_000) -> np.ndarray:
    """1 - E e^{-sZ} per s, via -expm1 for accuracy at small s."""
    out = np.empty(s.size)
    step = max(1, chunk // max(z.size, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(0, s.size, step):
            ss = s[i:i + step]
            out[i:i + step] = -np.expm1(-np.outer(ss, z)).mean(axis=1)
    return out


@dataclass
class LaplaceProfile:
    s: np.ndarray
    phi: np.ndarray
    psi_star: np.ndarray
    x: np.ndarray
    D: np.ndarray
    se: dict

    @property
    def D_over_x(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.D / self.x


def laplace_profile(sample, x_grid, s_grid=None) -> LaplaceProfile:
    """phi(s) = E e^{-sZ}, psi*(s) = (1 - phi(s))/s and D(x) = e^x (1 - phi(e^{-x}))."""
    z = _values(sample)
    if z.size == 0:
        raise ValueError("empty sample")
    x = np.asarray(x_grid, dtype=float)
    s = np.geomspace(1e-3, 10.0, 41) if s_grid is None else np.asarray(s_grid, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    n = z.size
    omp_s = _one_minus_phi(z, s)
    phi = 1.0 - omp_s
    phi[s == 0] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        psi = np.where(s > 0, omp_s / np.where(s > 0, s, 1.0), np.mean(z))
    ex = np.exp(-x)
    omp_x = _one_minus_phi(z, ex)
    with np.errstate(over="ignore", invalid="ignore"):
        D = np.exp(x) * omp_x
        # Var e^{-sZ} = phi(2s) - phi(s)^2
        var_x = (1 - _one_minus_phi(z, 2 * ex)) - (1 - omp_x) ** 2
        se_D = np.exp(x) * np.sqrt(np.maximum(var_x, 0.0) / n)
        se_phi = np.sqrt(np.maximum((1 - _one_minus_phi(z, 2 * s)) - phi**2, 0.0) / n)
    return LaplaceProfile(s, phi, psi, x, D, {"phi": se_phi, "D": se_D})


class DTable:
    """Monotone (PCHIP) interpolation of D on a fixed t range."""

    def __init__(self, sample, t_min: float = -30.0, t_max: float = 40.0, step: float = 0.1):
        z = _values(sample)
        self.t = np.arange(t_min, t_max + step / 2, step)
        with np.errstate(over="ignore", invalid="ignore"):
            self.D = np.exp(self.t) * _one_minus_phi(z, np.exp(-self.t))
        if not np.all(np.isfinite(self.D)):
            raise ValueError("D is not finite on the table range (sample has large negative values)")
        self._f = PchipInterpolator(self.t, self.D, extrapolate=False)
        self.domain = (float(self.t[0]), float(self.t[-1]))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.domain[0]) or np.any(t > self.domain[1]):
            raise ValueError(f"phi interpolation range exceeded: D table covers {self.domain}")
        return self._f(t)

    def one_minus_phi(self, t):
        """1 - phi(e^{-t})."""
        return np.exp(-np.asarray(t, dtype=float)) * self(t)


def _defect_terms(a_counts, a):
    """prod(1 - a_i) - 1 + sum a_i per draw, via elementary symmetric sums."""
    counts, owner_start = a_counts
    out = np.zeros(counts.size)
    for c in np.unique(counts):
        if c < 2:
            continue
        rows = np.flatnonzero(counts == c)
        block = a[owner_start[rows][:, None] + np.arange(c)[None, :]]
        e = np.zeros((rows.size, c + 1))
        e[:, 0] = 1.0
        for j in range(c):
            e[:, 1:j + 2] = e[:, 1:j + 2] + block[:, j:j + 1] * e[:, 0:j + 1]
        sign = (-1.0) ** np.arange(c + 1)
        out[rows] = (e[:, 2:] * sign[2:]).sum(axis=1)
    return out


@dataclass
class GProfile:
    x: np.ndarray
    G: np.ndarray
    se: np.ndarray

    @property
    def scaled(self) -> np.ndarray:
        """e^{-x} G(x)."""
        return np.exp(-self.x) * self.G

    def nonnegative(self, k: float = 3.0) -> bool:
        return bool(np.all(self.G >= -k * self.se))

    def monotone(self, k: float = 3.0) -> bool:
        sc = self.scaled
        sse = np.exp(-self.x) * self.se
        return bool(np.all(np.diff(sc) <= k * np.hypot(sse[1:], sse[:-1])))


def G_profile(law, sample, x_grid, draws: int = 100_000, seed: int = 0, table: DTable | None = None,
              rng=None) -> GProfile:
    """G(x) = e^x E[prod phi(e^{-x-X_i}) - 1 + sum (1 - phi(e^{-x-X_i}))].

    phi comes from the sample through the D table; the expectation over the
    offspring is Monte Carlo with draws shared by all grid points.
    """
    x = np.asarray(x_grid, dtype=float)
    table = DTable(sample) if table is None else table
    rng = Stream(seed).child(TAG_BOOT, 2).generator() if rng is None else as_generator(rng)
    counts, disp = law.sample_many(rng, draws)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    G = np.empty(x.size)
    se = np.empty(x.size)
    for i, xi in enumerate(x):
        a = table.one_minus_phi(xi + disp)
        v = _defect_terms((counts, starts), a)
        G[i] = math.exp(xi) * v.mean()
        se[i] = math.exp(xi) * v.std(ddof=1) / math.sqrt(draws)
    return GProfile(x, G, se)


@dataclass
class HarmonicCheck:
    x: np.ndarray
    residual: np.ndarray
    se: np.ndarray
    D: np.ndarray
    G: np.ndarray


def harmonic_check(law, sample, x_grid, draws: int = 100_000, splits: int = 10, seed: int = 0) -> HarmonicCheck:
    """Residual D(x) - E D(x + xi) + G(x) with batch-means standard errors.

    The sample is cut into ``splits`` parts; each part gives its own D table
    and residual with the same offspring and step draws, so the spread of
    the parts measures the sampling error of the whole.
    """
    from .potential import subharmonic_residual

    z = _values(sample)
    x = np.asarray(x_grid, dtype=float)
    spine = law.spine
    parts = np.array_split(as_generator(Stream(seed).child(TAG_BOOT, 3)).permutation(z), splits)

    def one(vals):
        tab = DTable(vals)
        g = G_profile(law, vals, x, draws, table=tab, rng=Stream(seed).child(TAG_BOOT, 4).generator())
        gfun = _GridLookup(x, g.G)
        prof = subharmonic_residual(tab, spine, gfun, x, draws, rng=Stream(seed).child(TAG_BOOT, 5).generator())
        return prof.residual, tab(x), g.G

    whole_r, whole_D, whole_G = one(z)
    reps = np.array([one(p)[0] for p in parts])
    se = reps.std(axis=0, ddof=1) / math.sqrt(splits)
    return HarmonicCheck(x, whole_r, se, whole_D, whole_G)


class _GridLookup:
    """Exact lookup of values tabulated at the grid points."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.x, t)
        i = np.clip(i, 0, self.x.size - 1)
        if not np.allclose(self.x[i], t):
            raise ValueError("source term requested off its grid")
        return self.y[i]


# ---------------------------------------------------------------- Tauberian links

@dataclass
class TauberianTable:
    t: np.ndarray
    psi_star: np.ndarray
    Gstar: np.ndarray
    Hstar: np.ndarray

    @property
    def log_t(self) -> np.ndarray:
        return np.log(self.t)

    @property
    def ratios(self) -> dict:
        return {"psi_star": self.psi_star / self.log_t, "Gstar": self.Gstar / self.log_t,
                "Hstar": self.Hstar / self.log_t}

    @property
    def offset(self) -> np.ndarray:
        """psi*(1/t) - (G*(t) - gamma)."""
        return self.psi_star - (self.Gstar - EULER_GAMMA)

    def rows(self):
        r = self.ratios
        for i, t in enumerate(self.t):
            yield {"t": float(t), "psi_star": float(self.psi_star[i]), "Gstar": float(self.Gstar[i]),
                   "Hstar": float(self.Hstar[i]), "log_t": float(self.log_t[i]),
                   "ratio_psi": float(r["psi_star"][i]), "ratio_G": float(r["Gstar"][i]),
                   "ratio_H": float(r["Hstar"][i]), "offset": float(self.offset[i])}


def tauberian_check(sample, t_grid) -> TauberianTable:
    """psi*(1/t), G*(t) and H*(t) side by side with log t."""
    z = _values(sample)
    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 1) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be increasing and above 1")
    ss = SortedSample(z)
    with np.errstate(over="ignore", invalid="ignore"):
        psi = t * _one_minus_phi(z, 1.0 / t)
    return TauberianTable(t, psi, ss.Gstar(t), ss.H(t))
