"""Offspring point-process laws calibrated to the boundary case."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .rng import TAG_OFFSPRING, Stream, as_generator
from .walk import SpineLaw, gaussian_spine, lattice_spine

BUILTIN_KINDS = ("binary_gaussian", "lattice_bernoulli")
DEFAULT_C0 = 10.0
_CAL_TOL = 1e-10

# codes understood by the compiled population kernels
KERNEL_GAUSSIAN = 0
KERNEL_LATTICE = 1


class LawError(ValueError):
    """An offspring law that is malformed or violates the boundary case."""


@dataclass(frozen=True)
class OffspringRealization:
    positions: np.ndarray

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """A point-process law with calibration metadata.

    Built-in laws are sampled in closed form. Custom laws carry a per-draw
    ``sampler(rng) -> positions`` and optionally a vectorized
    ``batch_sampler(rng, n) -> (counts, positions)`` plus a spine tilt.
    """

    kind: str
    params: dict
    arithmetic_span: float = 0.0
    c0: float = DEFAULT_C0
    calibrated: bool = True
    sampler: Callable | None = None
    batch_sampler: Callable | None = None
    tilt: SpineLaw | None = None
    evaluator: bool = True
    max_offspring: int | None = None

    @property
    def kernel_code(self) -> int | None:
        return {"binary_gaussian": KERNEL_GAUSSIAN, "lattice_bernoulli": KERNEL_LATTICE}.get(self.kind)

    @property
    def kernel_params(self) -> np.ndarray:
        p = self.params
        if self.kind == "binary_gaussian":
            return np.array([p["m"], math.sqrt(p["s2"])])
        if self.kind == "lattice_bernoulli":
            return np.array([p["p_A"], p["p_B"]])
        raise LawError("custom laws have no compiled kernel")

    @property
    def spine(self) -> SpineLaw:
        return spine_law(self)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": {k: float(v) for k, v in self.params.items()},
                "arithmetic_span": self.arithmetic_span, "c0": self.c0}

    def sample_many(self, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        """n independent draws as (counts, concatenated positions)."""
        rng = as_generator(rng)
        if self.kind == "binary_gaussian":
            m, s2 = self.params["m"], self.params["s2"]
            return np.full(n, 2, dtype=np.int64), m + math.sqrt(s2) * rng.standard_normal(2 * n)
        if self.kind == "lattice_bernoulli":
            u = rng.random((n, 2))
            a = (u[:, 0] < self.params["p_A"]).astype(np.int64)
            b = 1 + (u[:, 1] < self.params["p_B"]).astype(np.int64)
            counts = a + b
            # per parent: the -1 children first, then the +1 children
            owner = np.repeat(np.arange(n), counts)
            first = np.concatenate([[0], np.cumsum(counts)[:-1]])
            rank = np.arange(owner.size) - first[owner]
            disp = np.where(rank < a[owner], -1.0, 1.0)
            return counts, disp
        if self.batch_sampler is not None:
            counts, disp = self.batch_sampler(rng, n)
            counts = np.asarray(counts, dtype=np.int64)
            disp = np.asarray(disp, dtype=float)
            if counts.shape != (n,) or counts.sum() != disp.size:
                raise LawError("batch sampler returned inconsistent shapes")
            return counts, disp
        draws = [np.asarray(self.sampler(rng), dtype=float).ravel() for _ in range(n)]
        counts = np.array([d.size for d in draws], dtype=np.int64)
        return counts, (np.concatenate(draws) if draws else np.empty(0))


def _check_boundary(kind, params):
    m1, drift = closed_form_moments_raw(kind, params)[:2]
    bad = []
    if abs(m1 - 1) > _CAL_TOL:
        bad.append(f"E sum e^-X = {m1:.12g} != 1")
    if abs(drift) > _CAL_TOL:
        bad.append(f"E sum X e^-X = {drift:.12g} != 0")
    return bad


def closed_form_moments_raw(kind, p):
    """(m1, drift, sigma2, mean_offspring) in closed form for a builtin kind."""
    if kind == "binary_gaussian":
        m, s2 = p["m"], p["s2"]
        base = 2.0 * math.exp(-m + s2 / 2)
        return base, (m - s2) * base, ((m - s2) ** 2 + s2) * base, 2.0
    if kind == "lattice_bernoulli":
        pa, pb = p["p_A"], p["p_B"]
        down, up = pa * math.e, (1 + pb) / math.e
        return down + up, up - down, down + up, pa + 1 + pb
    raise LawError(f"no closed form for kind {kind!r}")


def closed_form_moments(law: OffspringLaw) -> dict:
    m1, drift, s2, en = closed_form_moments_raw(law.kind, law.params)
    return {"m1": m1, "drift": drift, "sigma2": s2, "mean_offspring": en}


def make_builtin_law(kind: str, overrides: dict | None = None, *, c0: float = DEFAULT_C0,
                     strict: bool = True) -> OffspringLaw:
    """Closed-form boundary-case law.

    binary_gaussian: two i.i.d. N(m, s2) children with m = s2 = 2 log 2.
    lattice_bernoulli: A children at -1 and B at +1, A ~ Bernoulli(p_A),
    B ~ 1 + Bernoulli(p_B), with p_A = 1/(2e) and p_B = e/2 - 1.
    Overrides that break the calibration raise ``LawError`` unless
    ``strict`` is false.
    """
    overrides = dict(overrides or {})
    if kind == "binary_gaussian":
        params = {"m": 2 * math.log(2), "s2": 2 * math.log(2)}
        span = 0.0
    elif kind == "lattice_bernoulli":
        params = {"p_A": 1 / (2 * math.e), "p_B": math.e / 2 - 1}
        span = 1.0
    else:
        raise LawError(f"unknown builtin kind {kind!r}; expected one of {BUILTIN_KINDS}")
    unknown = set(overrides) - set(params)
    if unknown:
        raise LawError(f"unknown parameters for {kind}: {sorted(unknown)}")
    params.update({k: float(v) for k, v in overrides.items()})
    if kind == "binary_gaussian" and not params["s2"] > 0:
        raise LawError("s2 must be positive")
    if kind == "lattice_bernoulli" and not all(0 <= params[k] <= 1 for k in ("p_A", "p_B")):
        raise LawError("p_A and p_B must be probabilities")
    if not c0 > 0:
        raise LawError("c0 must be positive")
    bad = _check_boundary(kind, params)
    if bad and strict:
        raise LawError(f"{kind} overrides break the boundary case: " + "; ".join(bad))
    return OffspringLaw(kind, params, span, float(c0), calibrated=not bad,
                        max_offspring=2 if kind == "binary_gaussian" else 3)


def custom_law(sampler: Callable | None = None, *, batch_sampler: Callable | None = None,
               tilt: SpineLaw | None = None, evaluator: bool = True, arithmetic_span: float = 0.0,
               c0: float = DEFAULT_C0, params: dict | None = None, check_draws: int = 10_000,
               seed: int = 0) -> OffspringLaw:
    """Wrap a user sampler as an offspring law.

    ``evaluator=False`` declines the weighted-functional spine evaluator;
    such a law needs an explicit ``tilt``. Supercriticality is checked on
    ``check_draws`` draws.
    """
    if sampler is None and batch_sampler is None:
        raise LawError("custom law needs a sampler")
    law = OffspringLaw("custom", dict(params or {}), float(arithmetic_span), float(c0), True,
                       sampler, batch_sampler, tilt, evaluator)
    counts, _ = law.sample_many(Stream(seed).child(TAG_OFFSPRING).generator(), check_draws)
    en = counts.mean()
    se = counts.std(ddof=1) / math.sqrt(check_draws) if check_draws > 1 else 0.0
    if not en - 3 * se > 1 or np.all(counts == 1):
        raise LawError(f"custom law is not supercritical (mean offspring {en:.4f})")
    return law


def sample_offspring(law: OffspringLaw, rng) -> OffspringRealization:
    _, disp = law.sample_many(rng, 1)
    return OffspringRealization(disp)


# ---------------------------------------------------------------- spine

def spine_law(law: OffspringLaw) -> SpineLaw:
    if law.kind == "binary_gaussian":
        if not law.calibrated:
            raise LawError("spine law requires a calibrated law")
        return gaussian_spine(law.params["s2"])
    if law.kind == "lattice_bernoulli":
        if not law.calibrated:
            raise LawError("spine law requires a calibrated law")
        return lattice_spine()
    if law.tilt is not None:
        return law.tilt
    if not law.evaluator:
        raise LawError("custom law has neither a tilt nor a functional evaluator")

    def evaluate(fn, draws, rng):
        return weighted_functional(law, fn, draws, rng)

    s2, _ = weighted_functional(law, np.square, 100_000, Stream(0).child(TAG_OFFSPRING, 1).generator())
    return SpineLaw("custom", float(s2), evaluator=evaluate, span=law.arithmetic_span)


def weighted_functional(law: OffspringLaw, fn: Callable, draws: int, rng,
                        chunk: int = 100_000) -> tuple[float, float]:
    """E sum_i e^{-X_i} fn(X_i) with its standard error."""
    rng = as_generator(rng)
    s1 = s2 = 0.0
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        counts, disp = law.sample_many(rng, k)
        owner = np.repeat(np.arange(k), counts)
        per = np.bincount(owner, weights=np.exp(-disp) * fn(disp), minlength=k)
        s1 += per.sum()
        s2 += np.dot(per, per)
        done += k
    mean = s1 / draws
    return float(mean), float(math.sqrt(max(s2 / draws - mean**2, 0.0) / max(draws - 1, 1)))


# ---------------------------------------------------------------- conditions

@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.se

    def as_dict(self):
        return {"value": self.value, "se": self.se}


def _log_plus(x):
    return np.log(np.maximum(x, 1.0))


@dataclass
class BoundaryReport:
    m1: Estimate
    drift: Estimate
    sigma2: Estimate
    mean_offspring: Estimate
    integrability: dict
    sstar: dict
    draws: int
    seed: int
    c0: float
    nonfinite: list = field(default_factory=list)

    def gate(self, k: float = 3.0) -> bool:
        """Normalization and zero drift both within k standard errors."""
        return self.m1.within(1.0, k) and self.drift.within(0.0, k) and self.mean_offspring.value > 1

    def as_dict(self) -> dict:
        return {
            "m1": self.m1.as_dict(), "drift": self.drift.as_dict(), "sigma2": self.sigma2.as_dict(),
            "mean_offspring": self.mean_offspring.as_dict(),
            "integrability": {k: v.as_dict() for k, v in self.integrability.items()},
            "sstar": {k: v.as_dict() for k, v in self.sstar.items()},
            "draws": self.draws, "seed": self.seed, "c0": self.c0, "nonfinite": list(self.nonfinite),
            "gate": self.gate(),
        }


def draw_functionals(counts: np.ndarray, disp: np.ndarray, c0: float) -> dict:
    """Per-draw values of every moment functional, keyed by name."""
    n = counts.size
    owner = np.repeat(np.arange(n), counts)
    e = np.exp(-disp)

    def total(w):
        return np.bincount(owner, weights=w, minlength=n)

    W = total(e)
    Wt = total(e * np.maximum(disp, 0.0))
    Wp = total(e * (disp >= 0))
    neg = disp < 0
    Wm = total(e * neg)
    xmin = np.full(n, np.inf)
    np.minimum.at(xmin, owner, disp)
    spread = total(np.where(neg, (1 + disp - xmin[owner]) * np.exp(xmin[owner] - disp), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        lw = np.where(Wm > 0, np.log(np.where(Wm > 0, Wm, 1.0)), 0.0)
    return {
        "count": counts.astype(float),
        "m1": W,
        "drift": total(e * disp),
        "sigma2": total(e * disp**2),
        "W1_log2": W * _log_plus(W) ** 2,
        "Wtilde_log": Wt * _log_plus(Wt),
        "Wplus_log3": Wp * _log_plus(Wp) ** 3,
        "Wtilde_log2": Wt * _log_plus(Wt) ** 2,
        "Wminus_log3_ind": Wm * lw**3 * (spread > c0),
        "neg_moment3": total(e * np.maximum(-disp, 0.0) ** 3),
    }


def verify_conditions(law: OffspringLaw, draws: int, seed: int, c0: float | None = None,
                      chunk: int = 200_000) -> BoundaryReport:
    """Monte Carlo estimates of the Condition S and S* functionals.

    All functionals come from one stream of draws. Non-finite values are
    reported in ``nonfinite`` rather than raised.
    """
    if draws < 10_000:
        raise ValueError("verify_conditions needs draws >= 10**4")
    c0 = law.c0 if c0 is None else float(c0)
    rng = Stream(seed).child(TAG_OFFSPRING).generator()
    s1: dict = {}
    s2: dict = {}
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        counts, disp = law.sample_many(rng, k)
        with np.errstate(over="ignore", invalid="ignore"):
            vals = draw_functionals(counts, disp, c0)
        for name, v in vals.items():
            s1[name] = s1.get(name, 0.0) + math.fsum(v)
            s2[name] = s2.get(name, 0.0) + float(np.dot(v, v))
        done += k
    est = {}
    bad = []
    for name in s1:
        mean = s1[name] / draws
        var = max(s2[name] / draws - mean * mean, 0.0) if math.isfinite(s2[name]) else math.inf
        e = Estimate(mean, math.sqrt(var / (draws - 1)))
        if not (math.isfinite(e.value) and math.isfinite(e.se)):
            bad.append(name)
        est[name] = e
    return BoundaryReport(
        est["m1"], est["drift"], est["sigma2"], est["count"],
        {k: est[k] for k in ("W1_log2", "Wtilde_log")},
        {k: est[k] for k in ("Wplus_log3", "Wtilde_log2", "Wminus_log3_ind", "neg_moment3")},
        draws, seed, c0, bad,
    )
