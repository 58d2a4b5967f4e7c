"""1-stable laws in the (a, b, beta) parametrization and the fluctuation experiment.

The characteristic function is exp(i a t - b|t| (1 + i beta sgn(t) (2/pi) log|t|)).
For b = 1, a = 0 this is the standard alpha = 1 law produced by the
Chambers-Mallows-Stuck transform. Scaling by b shifts the location:
if X ~ (0, 1, beta) then b X + a + (2/pi) beta b log b ~ (a, b, beta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy import stats as _stats

from .rng import TAG_BOOT, TAG_STABLE, Stream, as_generator

EULER_GAMMA = 0.5772156649015329
_ASYMPTOTIC_RANGE = 1000.0


class StableError(ValueError):
    pass


@dataclass(frozen=True)
class StableTriple:
    a: float
    b: float
    beta: float

    def __post_init__(self):
        if not self.b > 0:
            raise StableError("scale b must be positive")
        if not abs(self.beta) <= 1:
            raise StableError("|beta| must not exceed 1")

    def as_dict(self):
        return {"a": self.a, "b": self.b, "beta": self.beta}


def cf(triple: StableTriple, t):
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(at > 0, np.log(np.where(at > 0, at, 1.0)), 0.0)
    expo = 1j * triple.a * t - triple.b * at * (1 + 1j * triple.beta * np.sign(t) * (2 / math.pi) * lg)
    return np.exp(expo)


def scale_shift(b: float, beta: float) -> float:
    """Location added when mapping b X (X ~ (0, 1, beta)) back to location 0."""
    return (2 / math.pi) * beta * b * math.log(b)


def standard_sample(beta: float, n: int, rng) -> np.ndarray:
    """Chambers-Mallows-Stuck draws of the (0, 1, beta) law."""
    rng = as_generator(rng)
    V = rng.uniform(-math.pi / 2, math.pi / 2, n)
    E = rng.standard_exponential(n)
    h = math.pi / 2 + beta * V
    return (2 / math.pi) * (h * np.tan(V) - beta * np.log((math.pi / 2) * E * np.cos(V) / h))


def sample(triple: StableTriple, n: int, seed=0) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = Stream(seed).child(TAG_STABLE).generator() if isinstance(seed, (int, np.integer)) else as_generator(seed)
    x = standard_sample(triple.beta, n, rng)
    return triple.b * x + triple.a + scale_shift(triple.b, triple.beta)


def _tail_cdf(triple, x):
    """Leading-order tails: P{X > x} ~ (1 + beta) b / (pi x), P{X < -x} ~ (1 - beta) b / (pi x)."""
    d = x - triple.a
    return np.where(d > 0, 1 - (1 + triple.beta) * triple.b / (math.pi * d),
                    (1 - triple.beta) * triple.b / (math.pi * np.abs(d)))


def cdf(triple: StableTriple, x, *, epsabs: float = 1e-7) -> np.ndarray:
    """Gil-Pelaez inversion of the characteristic function.

    F(x) = 1/2 - (1/pi) int_0^inf Im(e^{-itx} cf(t)) / t dt. Points farther
    than 1000 b from a use the leading tail asymptotics instead.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(x.shape)
    far = np.abs(x - triple.a) > _ASYMPTOTIC_RANGE * triple.b
    out[far] = _tail_cdf(triple, x[far])
    near = ~far
    if near.any():
        xs = x[near]
        top = 45.0 / triple.b

        def integrand(t):
            c = cf(triple, t)
            return np.imag(np.exp(-1j * t * xs) * c) / t

        val, err = integrate.quad_vec(integrand, 0.0, top, epsabs=epsabs, epsrel=1e-9, limit=20000)
        if not np.all(np.isfinite(val)) or err > 1e-5:
            raise StableError(f"CDF inversion did not converge (error estimate {err:.2e})")
        out[near] = 0.5 - val / math.pi
    return np.clip(out, 0.0, 1.0)


class CDFTable:
    """The CDF tabulated on a grid, with linear interpolation and tail asymptotics."""

    def __init__(self, triple: StableTriple, lo: float, hi: float, n: int = 4001):
        self.triple = triple
        self.x = np.linspace(lo, hi, n)
        self.F = np.maximum.accumulate(cdf(triple, self.x))

    def __call__(self, x, shift: float = 0.0):
        x = np.asarray(x, dtype=float) - shift
        inside = (x >= self.x[0]) & (x <= self.x[-1])
        out = np.empty(x.shape)
        out[inside] = np.interp(x[inside], self.x, self.F)
        if (~inside).any():
            out[~inside] = cdf(self.triple, x[~inside])
        return out


def ks_distance(values, F, points: int = 10_000) -> float:
    """Kolmogorov distance between the empirical law of ``values`` and F.

    F is evaluated at up to ``points`` order statistics; with n values the
    skipped points add at most n/points/n of error.
    """
    z = np.sort(np.asarray(values, dtype=float))
    n = z.size
    if n == 0:
        return math.nan
    idx = np.unique(np.linspace(0, n - 1, min(points, n)).astype(np.int64))
    Fz = F(z[idx])
    return float(max(np.max((idx + 1) / n - Fz), np.max(Fz - idx / n)))


def ks_to_triple(values, triple: StableTriple, points: int = 10_000) -> float:
    z = np.asarray(values, dtype=float)
    lo, hi = np.quantile(z, [0.001, 0.999])
    span = max(hi - lo, triple.b)
    table = CDFTable(triple, lo - 0.1 * span, hi + 0.1 * span)
    return ks_distance(z, table, points)


# ---------------------------------------------------------------- fitting

_FIT_T = np.linspace(0.1, 1.0, 10)


def _ecf_fit(x: np.ndarray, t=_FIT_T) -> tuple[float, float, float, float]:
    """(a, b, beta, misfit) for data already centred and scaled."""
    phi = np.exp(1j * np.outer(t, x)).mean(axis=1)
    mod = np.abs(phi)
    if np.any(mod <= 0):
        raise StableError("empirical characteristic function vanishes on the fit grid")
    y = -np.log(mod)
    b = float(np.dot(t, y) / np.dot(t, t))
    misfit = float(np.max(np.abs(y - b * t)) / max(b * t.max(), 1e-300))
    ang = np.unwrap(np.angle(phi))
    slope, inter = np.polyfit(np.log(t), ang / t, 1)
    beta = float(-slope * math.pi / (2 * b)) if b > 0 else 0.0
    return float(inter), b, beta, misfit


@dataclass
class FitResult:
    triple: StableTriple
    se: dict
    misfit: float
    poor_fit: bool
    raw_beta: float

    def ci(self, name: str, k: float = 3.0) -> tuple:
        v = getattr(self.triple, name)
        return (v - k * self.se[name], v + k * self.se[name])

    def covers(self, truth: StableTriple, k: float = 3.0) -> bool:
        return all(self.ci(n, k)[0] <= getattr(truth, n) <= self.ci(n, k)[1] for n in ("a", "b", "beta"))


def _fit_once(x):
    med = float(np.median(x))
    q1, q3 = np.quantile(x, [0.25, 0.75])
    s = float((q3 - q1) / 2)
    if not s > 0:
        raise StableError("sample has zero dispersion")
    a1, b1, beta, misfit = _ecf_fit((x - med) / s)
    b = s * b1
    a = med + s * a1 - (2 / math.pi) * beta * s * b1 * math.log(s)
    return a, b, beta, misfit


def fit(samples, bootstrap_reps: int = 30, seed: int = 0, misfit_limit: float = 0.05) -> FitResult:
    """Empirical characteristic function regression.

    On standardized data, -log|phi(t)| = b t gives b, and arg phi(t) / t =
    a - (2/pi) b beta log t gives a and beta. Standard errors come from a
    bootstrap; ``poor_fit`` flags curvature in -log|phi| (non-stable data).
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 10_000:
        raise StableError("fit needs at least 10**4 samples")
    a, b, beta, misfit = _fit_once(x)
    rng = Stream(seed).child(TAG_BOOT, 7).generator()
    boots = np.array([_fit_once(x[rng.integers(0, x.size, x.size)])[:3] for _ in range(bootstrap_reps)])
    sd = boots.std(axis=0, ddof=1) if bootstrap_reps > 1 else np.zeros(3)
    clipped = float(np.clip(beta, -1.0, 1.0))
    return FitResult(StableTriple(a, b, clipped), {"a": float(sd[0]), "b": float(sd[1]), "beta": float(sd[2])},
                     misfit, misfit > misfit_limit, beta)


# ---------------------------------------------------------------- fluctuation experiment

def target_triple(sigma2: float, c_hat: float) -> tuple[StableTriple, dict]:
    """Limit law of the normalized fluctuations and its location decomposition."""
    scale = math.sqrt(2 / (math.pi * sigma2))
    loc_factor = c_hat + 1 - EULER_GAMMA
    tri = StableTriple(loc_factor * scale, math.sqrt(math.pi / (2 * sigma2)), 1.0)
    return tri, {"c_hat": c_hat, "one_minus_gamma": 1 - EULER_GAMMA, "c_plus_1_minus_gamma": loc_factor,
                 "sqrt_2_over_pi_sigma2": scale, "a": tri.a}


@dataclass
class FluctuationRow:
    n: int
    replicas: int
    surviving: int
    ks: float
    ks_locfree: float
    shift: float
    skew: float
    fit: FitResult | None

    def as_dict(self):
        f = self.fit.triple if self.fit is not None else None
        return {"n": self.n, "ks": self.ks, "ks_locfree": self.ks_locfree, "shift": self.shift,
                "skew": self.skew, "a_fit": f.a if f else math.nan, "b_fit": f.b if f else math.nan,
                "beta_fit": f.beta if f else math.nan, "replicas": self.replicas, "surviving": self.surviving}


@dataclass
class FluctuationReport:
    rows: list
    target: StableTriple
    decomposition: dict
    deep_generation: int
    sensitivity: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict, repr=False)

    def ks_decreasing(self) -> bool:
        ks = [r.ks for r in self.rows]
        return all(np.isfinite(ks)) and all(b < a for a, b in zip(ks, ks[1:]))

    def skew_positive(self) -> bool:
        return all(np.isfinite(r.skew) and r.skew > 0 for r in self.rows)


def _fluct_stats(rec, gens, n_list, deep_idx):
    """Theta_n and Theta_n / Z_n per n from raw records."""
    from . import _kernels as K

    zdeep = rec[:, deep_idx, K.F_Z]
    out = {}
    for n in n_list:
        j = gens.index(n)
        Zn = rec[:, j, K.F_Z]
        Wn = rec[:, j, K.F_W]
        theta = math.sqrt(n) * (zdeep - Zn + 0.5 * math.log(n) * Wn)
        alive = (rec[:, deep_idx, K.F_STATUS] == K.STATUS_OK) & (Zn > 0)
        out[n] = (theta, theta[alive] / Zn[alive])
    return out


def fluctuation_experiment(law, n_list, replicas: int, deep_factor: int = 8, seed: int = 0, pruning=None,
                           c_hat: float | None = None, sensitivity_replicas: int = 1000,
                           fit_min: int = 10_000) -> FluctuationReport:
    """Normalized fluctuations of Z_n around the deep value on the same trajectory."""
    from .brw import simulate
    from .model import closed_form_moments
    from .tail import estimate_c

    if law.arithmetic_span > 0:
        raise StableError("the fluctuation limit needs a nonarithmetic law; lattice laws are rejected")
    if replicas < 1000:
        raise StableError("fluctuation_experiment needs at least 10**3 replicas")
    if deep_factor < 4:
        raise StableError("deep_factor must be at least 4")
    n_list = sorted(int(n) for n in n_list)
    deep = deep_factor * n_list[-1]
    gens = sorted(set(n_list) | {deep})
    rec = simulate(law, np.arange(replicas), deep, gens, pruning, seed)
    stats_ = _fluct_stats(rec, gens, n_list, gens.index(deep))
    if law.kernel_code is not None:
        sigma2 = closed_form_moments(law)["sigma2"]
    else:
        sigma2 = law.spine.sigma2
    if c_hat is None:
        from . import _kernels as K

        c_hat = estimate_c(rec[:, gens.index(deep), K.F_Z], bootstrap_reps=0).c_hat
    target, decomp = target_triple(sigma2, c_hat)
    rows = []
    for n in n_list:
        _, norm = stats_[n]
        if norm.size >= 2:
            ks = ks_to_triple(norm, target)
            lo, hi = np.quantile(norm, [0.001, 0.999])
            span = max(hi - lo, target.b)
            table = CDFTable(target, lo - 5 * span, hi + 5 * span)
            res = optimize.minimize_scalar(lambda d: ks_distance(norm, lambda v: table(v, d)),
                                           bounds=(-5 * target.b, 5 * target.b), method="bounded")
            ks_lf, shift = float(res.fun), float(res.x)
            skew = float(_stats.skew(norm))
            ft = fit(norm, bootstrap_reps=10, seed=seed) if norm.size >= fit_min else None
        else:
            ks = ks_lf = shift = skew = math.nan
            ft = None
        rows.append(FluctuationRow(n, replicas, int(norm.size), ks, ks_lf, shift, skew, ft))
    sens = {}
    m = min(sensitivity_replicas, replicas)
    if m:
        from . import _kernels as K

        rec2 = simulate(law, np.arange(m), 2 * deep, [deep, 2 * deep], pruning, seed)
        z1 = rec2[:, 0, K.F_Z]
        z2 = rec2[:, 1, K.F_Z]
        ok = z1 != 0
        sens = {"replicas": m, "deep": deep, "double_deep": 2 * deep,
                "median_abs_change": float(np.median(np.abs(z2 - z1))),
                "median_rel_change": float(np.median(np.abs(z2[ok] - z1[ok]) / np.abs(z1[ok]))) if ok.any() else math.nan,
                "alive_deep": int((rec2[:, 0, K.F_STATUS] == K.STATUS_OK).sum()),
                "alive_double_deep": int((rec2[:, 1, K.F_STATUS] == K.STATUS_OK).sum())}
    return FluctuationReport(rows, target, decomp, deep, sens, {n: stats_[n][1] for n in n_list})
