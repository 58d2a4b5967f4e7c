"""The spine random walk: paths, ladder heights, renewal functions, passages.

Walks are advanced in vectorized blocks: all still-running walks receive a
block of increments at once and the first crossing inside the block is
located with ``argmax``. Block length doubles as walks finish, which keeps
the heavy-tailed ladder epochs of a centred walk affordable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import as_generator


@dataclass(frozen=True)
class SpineLaw:
    """Law of the spine step.

    ``sampler(rng, shape)`` returns i.i.d. steps. Laws with finite support
    also carry ``atoms = (values, probs)`` so expectations are exact. Custom
    laws may only provide ``evaluator(t, draws, rng) -> (value, se)``, the
    weighted offspring functional, in which case path sampling is unavailable.
    """

    name: str
    sigma2: float
    sampler: Callable | None = None
    mean: float = 0.0
    span: float = 0.0
    atoms: tuple | None = None
    evaluator: Callable | None = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("spine variance must be positive")
        if self.sampler is None and self.evaluator is None:
            raise ValueError("spine law needs a sampler or a functional evaluator")

    @property
    def arithmetic(self) -> bool:
        return self.span > 0

    @property
    def is_unit_lattice(self) -> bool:
        if self.atoms is None:
            return False
        vals, probs = self.atoms
        return (len(vals) == 2 and set(np.round(vals, 14)) == {-1.0, 1.0}
                and abs(probs[0] - 0.5) < 1e-12 and abs(probs[1] - 0.5) < 1e-12)

    def sample(self, rng, shape) -> np.ndarray:
        if self.sampler is None:
            raise ValueError(f"spine law {self.name!r} has no sampler; only functionals are available")
        return self.sampler(rng, shape)

    def expectation(self, fn: Callable, draws: int = 100_000, rng=None) -> tuple[float, float]:
        """E fn(xi) with its standard error (zero when computed exactly)."""
        if self.atoms is not None:
            vals, probs = self.atoms
            return float(np.dot(probs, fn(np.asarray(vals, dtype=float)))), 0.0
        rng = as_generator(0 if rng is None else rng)
        if self.sampler is not None:
            v = fn(self.sample(rng, draws))
            return float(v.mean()), float(v.std(ddof=1) / math.sqrt(draws))
        return self.evaluator(fn, draws, rng)


def gaussian_spine(sigma2: float) -> SpineLaw:
    sd = math.sqrt(sigma2)

    def sampler(rng, shape):
        return sd * rng.standard_normal(shape)

    return SpineLaw("gaussian", sigma2, sampler)


def lattice_spine() -> SpineLaw:
    """Simple symmetric walk on the integers."""

    def sampler(rng, shape):
        return 2.0 * rng.integers(0, 2, size=shape) - 1.0

    return SpineLaw("simple_lattice", 1.0, sampler, span=1.0, atoms=((-1.0, 1.0), (0.5, 0.5)))


def walk_path(spine: SpineLaw, x0: float, horizon: int, rng) -> np.ndarray:
    """S_0 = x0, ..., S_horizon."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rng = as_generator(rng)
    out = np.empty(horizon + 1)
    out[0] = x0
    if horizon:
        out[1:] = x0 + np.cumsum(spine.sample(rng, horizon))
    return out


# ---------------------------------------------------------------- exit engine

@dataclass
class ExitResult:
    steps: np.ndarray        # exit epoch, -1 when censored
    value: np.ndarray        # position at exit (last position when censored)
    occupation: np.ndarray | None
    censored: int
    work: int


def first_exit(spine: SpineLaw, x0, rng, *, lower=None, lower_closed=True, upper=None,
               upper_closed=False, check_start=False, weight: Callable | None = None,
               horizon: int = 10**8, budget: int | None = None, block: int = 32,
               max_block: int = 8192, chunk_elems: int = 1 << 22) -> ExitResult:
    """Run independent walks from ``x0`` until they leave (lower, upper).

    Exit below means S <= lower (S < lower if not ``lower_closed``); exit
    above means S > upper (S >= upper if ``upper_closed``). With
    ``check_start`` the starting point itself may already be an exit (epoch
    0). ``weight`` accumulates sum_{0 <= k < exit} weight(S_k). Walks still
    running after ``horizon`` steps or once ``budget`` simulated steps are
    spent are censored.
    """
    if lower is None and upper is None:
        raise ValueError("at least one exit boundary is required")
    rng = as_generator(rng)
    pos = np.array(x0, dtype=float, copy=True).ravel()
    m = pos.size
    steps = np.full(m, -1, dtype=np.int64)
    value = pos.copy()
    occ = np.zeros(m) if weight is not None else None

    def exit_mask(s):
        mask = np.zeros(s.shape, dtype=bool)
        if lower is not None:
            mask |= (s <= lower) if lower_closed else (s < lower)
        if upper is not None:
            mask |= (s >= upper) if upper_closed else (s > upper)
        return mask

    alive = np.arange(m)
    if check_start and m:
        hit0 = exit_mask(pos)
        steps[hit0] = 0
        alive = alive[~hit0]
    if weight is not None and alive.size:
        occ[alive] += weight(pos[alive])

    t = 0
    work = 0
    b = block
    while alive.size and t < horizon:
        if budget is not None and work >= budget:
            break
        b = min(b, horizon - t)
        rows = max(1, chunk_elems // b)
        keep = []
        for start in range(0, alive.size, rows):
            sub = alive[start:start + rows]
            path = np.cumsum(spine.sample(rng, (sub.size, b)), axis=1)
            path += pos[sub, None]
            hit = exit_mask(path)
            anyhit = hit.any(axis=1)
            first = np.where(anyhit, hit.argmax(axis=1), b)
            if weight is not None:
                w = weight(path)
                w[np.arange(b)[None, :] >= first[:, None]] = 0.0
                occ[sub] += w.sum(axis=1)
            done = sub[anyhit]
            steps[done] = t + first[anyhit] + 1
            value[done] = path[anyhit, first[anyhit]]
            pos[sub] = path[:, -1]
            keep.append(sub[~anyhit])
        work += alive.size * b
        t += b
        alive = np.concatenate(keep) if keep else alive[:0]
        b = min(2 * b, max_block)
    value[alive] = pos[alive]
    return ExitResult(steps, value, occ, int(alive.size), work)


# ---------------------------------------------------------------- ladders

LADDER_KINDS = ("weak_descending", "strict_ascending", "strict_descending")


@dataclass
class LadderStats:
    """Independent samples of the first ladder height of each kind."""

    weak_descending: np.ndarray = field(default_factory=lambda: np.empty(0))
    strict_ascending: np.ndarray = field(default_factory=lambda: np.empty(0))
    strict_descending: np.ndarray = field(default_factory=lambda: np.empty(0))
    censored: dict = field(default_factory=dict)
    partial: bool = False

    def _m(self, a):
        return float(a.mean()) if a.size else float("nan")

    @property
    def mu(self) -> float:
        return self._m(self.weak_descending)

    @property
    def nu(self) -> float:
        return self._m(self.strict_ascending)

    @property
    def m(self) -> float:
        return self._m(self.strict_descending)


def ladder_decompose(spine: SpineLaw, n_ladders: int, rng, safety_horizon: int = 10**8,
                     kinds: Sequence[str] = LADDER_KINDS) -> LadderStats:
    """Sample first ladder heights from independent excursions started at 0.

    Heights are returned as nonnegative numbers: -S_tau for the weak
    descending ladder, S_sigma for the strict ascending one and -S_tau* for
    the strict descending one. ``safety_horizon`` caps the simulated steps
    per ladder kind; excursions still open at that point are dropped and the
    result is flagged partial.
    """
    if n_ladders < 1:
        raise ValueError("n_ladders must be positive")
    rng = as_generator(rng)
    out = LadderStats()
    zeros = np.zeros(n_ladders)
    for kind in kinds:
        if kind == "weak_descending":
            r = first_exit(spine, zeros, rng, lower=0.0, lower_closed=True, budget=safety_horizon)
            h = -r.value
        elif kind == "strict_ascending":
            r = first_exit(spine, zeros, rng, upper=0.0, upper_closed=False, budget=safety_horizon)
            h = r.value
        elif kind == "strict_descending":
            r = first_exit(spine, zeros, rng, lower=0.0, lower_closed=False, budget=safety_horizon)
            h = -r.value
        else:
            raise ValueError(f"unknown ladder kind {kind!r}")
        ok = r.steps >= 0
        setattr(out, kind, h[ok])
        out.censored[kind] = int(r.censored)
        out.partial |= r.censored > 0
    return out


# ---------------------------------------------------------------- renewal measures

@dataclass
class RenewalMeasure:
    """A renewal measure stored as atoms with masses.

    Calling it returns the cumulative function: mass of atoms < x when
    ``left_continuous`` is set, mass of atoms <= x otherwise.
    """

    atoms: np.ndarray
    masses: np.ndarray
    left_continuous: bool
    x_max: float

    def __post_init__(self):
        order = np.argsort(self.atoms, kind="stable")
        self.atoms = np.asarray(self.atoms, dtype=float)[order]
        self.masses = np.asarray(self.masses, dtype=float)[order]
        self._cum = np.concatenate([[0.0], np.cumsum(self.masses)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x > self.x_max):
            raise ValueError(f"renewal table covers x <= {self.x_max:g} only")
        side = "left" if self.left_continuous else "right"
        return self._cum[np.searchsorted(self.atoms, x, side=side)]

    def restrict(self, lo, hi, *, hi_open=False):
        """Atoms and masses with lo <= atom <= hi (atom < hi if ``hi_open``)."""
        sel = (self.atoms >= lo) & ((self.atoms < hi) if hi_open else (self.atoms <= hi))
        return self.atoms[sel], self.masses[sel]


def _lattice_measure(mass: float, x_max: float, left: bool) -> RenewalMeasure:
    pts = np.arange(0, math.floor(x_max) + 2, dtype=float)
    return RenewalMeasure(pts, np.full(pts.size, mass), left, x_max)


def _empirical_measure(heights: np.ndarray, x_max: float, left: bool, rng, n_batches=20):
    """Renewal measure sum_k P(H_1 + ... + H_k in .) from i.i.d. heights.

    Heights are cut into chains long enough to pass ``x_max``; the measure is
    the average counting measure of the chain partial sums (k = 0 included).
    Returns the measure and per-batch measures for standard errors.
    """
    h = np.asarray(heights, dtype=float)
    if h.size < 100:
        raise ValueError("too few ladder heights for an empirical renewal table")
    mu = h.mean()
    if not mu > 0:
        raise ValueError("ladder heights have nonpositive mean")
    var = h.var()
    length = int(math.ceil(x_max / mu + 8.0 * math.sqrt(max(x_max, 1.0) * var / mu**3) + 10))
    n_chains = h.size // length
    if n_chains < n_batches:
        raise ValueError("too few ladder heights for the requested range; raise n_ladders")
    h = as_generator(rng).permutation(h)
    chains = h[: n_chains * length].reshape(n_chains, length)
    partial = np.concatenate([np.zeros((n_chains, 1)), np.cumsum(chains, axis=1)], axis=1)
    reach = partial[:, -1].min()
    if reach <= x_max:
        raise ValueError("ladder chains do not reach x_max; raise n_ladders")
    vals = partial.ravel()
    vals = vals[vals <= reach]
    atoms, counts = np.unique(vals, return_counts=True)
    full = RenewalMeasure(atoms, counts / n_chains, left, float(reach))
    batches = []
    for idx in np.array_split(np.arange(n_chains), n_batches):
        v = partial[idx].ravel()
        v = v[v <= reach]
        a, c = np.unique(v, return_counts=True)
        batches.append(RenewalMeasure(a, c / idx.size, left, float(reach)))
    return full, batches


@dataclass
class RenewalTable:
    """U (weak descending), V (strict ascending), R (strict descending)."""

    x: np.ndarray
    U: np.ndarray
    V: np.ndarray
    R: np.ndarray
    mode: str
    U_measure: RenewalMeasure
    V_measure: RenewalMeasure
    R_measure: RenewalMeasure
    mu: float
    nu: float
    m: float
    se: dict = field(default_factory=dict)
    partial: bool = False
    batches: dict = field(default_factory=dict, repr=False)

    def rows(self):
        for i, x in enumerate(self.x):
            yield {"x": float(x), "U": float(self.U[i]), "V": float(self.V[i]),
                   "R": float(self.R[i]), "mode": self.mode}


def renewal_tables(spine: SpineLaw, x_grid, mode: str = "empirical", *, n_ladders: int = 10**5,
                   rng=None, stats: LadderStats | None = None, x_max: float | None = None,
                   safety_horizon: int = 10**8) -> RenewalTable:
    """Tabulate the three renewal functions on ``x_grid``.

    ``mode="exact_lattice"`` uses the closed forms of the simple symmetric
    walk: U(x) = 2*ceil(x), V(x) = R(x) = floor(x) + 1 for x >= 0.
    """
    x = np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or x.size == 0 or np.any(np.diff(x) < 0):
        raise ValueError("x_grid must be a nondecreasing 1-d array")
    top = float(max(x.max(), 0.0) if x_max is None else x_max)
    if mode == "exact_lattice":
        if not spine.is_unit_lattice:
            raise ValueError("exact_lattice mode needs the simple symmetric lattice spine")
        U = _lattice_measure(2.0, top, True)
        V = _lattice_measure(1.0, top, False)
        R = _lattice_measure(1.0, top, False)
        return RenewalTable(x, U(x), V(x), R(x), mode, U, V, R, 0.5, 1.0, 1.0)
    if mode != "empirical":
        raise ValueError(f"unknown renewal mode {mode!r}")
    rng = as_generator(0 if rng is None else rng)
    if stats is None:
        stats = ladder_decompose(spine, n_ladders, rng, safety_horizon=safety_horizon)
    U, Ub = _empirical_measure(stats.weak_descending, top, True, rng)
    V, Vb = _empirical_measure(stats.strict_ascending, top, False, rng)
    R, Rb = _empirical_measure(stats.strict_descending, top, False, rng)
    se = {}
    for name, batches in (("U", Ub), ("V", Vb), ("R", Rb)):
        vals = np.array([b(x) for b in batches])
        se[name] = vals.std(axis=0, ddof=1) / math.sqrt(len(batches))
    return RenewalTable(x, U(x), V(x), R(x), mode, U, V, R, stats.mu, stats.nu, stats.m,
                        se=se, partial=stats.partial, batches={"U": Ub, "V": Vb, "R": Rb})


# ---------------------------------------------------------------- passages

@dataclass
class PassageRecord:
    """Per replica: killing time tau = inf{n >= 0: S_n <= 0} and sigma(y).

    ``sigma_y`` is the first n with S_n > y when that happens before tau,
    otherwise -1. ``tau`` is -1 when the walk was still alive at the horizon.
    """

    x: float
    y: float
    tau: np.ndarray
    S_tau: np.ndarray
    sigma_y: np.ndarray
    S_sigma: np.ndarray

    @property
    def escaped(self) -> np.ndarray:
        return self.sigma_y >= 0

    @property
    def overshoot(self) -> np.ndarray:
        """S_sigma(y) - y on escaped replicas, NaN elsewhere."""
        return self.S_sigma - self.y


def passage_times(spine: SpineLaw, x: float, y: float, replicas: int, rng,
                  horizon: int = 10**6, follow_tau: bool = True) -> PassageRecord:
    rng = as_generator(rng)
    if y < 0 or (x > 0 and y <= x):
        raise ValueError("passage_times needs y > x when x > 0 and y >= 0")
    start = np.full(replicas, float(x))
    first = first_exit(spine, start, rng, lower=0.0, upper=float(y), check_start=True, horizon=horizon)
    up = (first.steps >= 0) & (first.value > 0)
    down = (first.steps >= 0) & ~up
    tau = np.where(down, first.steps, -1)
    S_tau = np.where(down, first.value, np.nan)
    sigma = np.where(up, first.steps, -1)
    S_sigma = np.where(up, first.value, np.nan)
    if follow_tau and up.any():
        cont = first_exit(spine, first.value[up], rng, lower=0.0, horizon=horizon)
        ok = cont.steps >= 0
        idx = np.flatnonzero(up)
        tau[idx[ok]] = first.steps[up][ok] + cont.steps[ok]
        S_tau[idx[ok]] = cont.value[ok]
    return PassageRecord(float(x), float(y), tau, S_tau, sigma, S_sigma)


def escape_estimate(spine: SpineLaw, x: float, y: float, replicas: int, rng) -> tuple[float, float]:
    """y * P_x(sigma(y) < tau) with its standard error."""
    rec = passage_times(spine, x, y, replicas, rng, follow_tau=False)
    p = rec.escaped.mean()
    return float(y * p), float(y * math.sqrt(p * (1 - p) / replicas))


# ---------------------------------------------------------------- many-to-one

@dataclass
class ManyToOneResult:
    n: int
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs

    @property
    def se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)


def many_to_one_check(law, n: int, functional: Callable, draws: int, rng,
                      chunk: int = 100_000) -> ManyToOneResult:
    """Compare E sum_{|u|=n} e^{-S(u)} t(path of u) with E t(S_1, ..., S_n).

    ``functional`` maps an array of paths with shape (k, n) to k values.
    ``law`` needs ``sample_many(rng, count)`` and ``spine``.
    """
    if not 1 <= n <= 3:
        raise ValueError("many-to-one check supports 1 <= n <= 3")
    rng = as_generator(rng)
    s1 = s2 = 0.0
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        owner = np.arange(k)
        paths = np.zeros((k, 0))
        for _ in range(n):
            counts, disp = law.sample_many(rng, owner.size)
            parent = np.repeat(np.arange(owner.size), counts)
            last = paths[parent, -1] if paths.shape[1] else np.zeros(parent.size)
            paths = np.column_stack([paths[parent], last + disp])
            owner = owner[parent]
        vals = np.exp(-paths[:, -1]) * functional(paths) if paths.shape[0] else np.zeros(0)
        per = np.bincount(owner, weights=vals, minlength=k)
        s1 += per.sum()
        s2 += np.dot(per, per)
        done += k
    lhs = s1 / draws
    lhs_se = math.sqrt(max(s2 / draws - lhs**2, 0.0) / draws)
    spine = law.spine
    if spine.sampler is None:
        if n != 1:
            raise ValueError("path functionals need a spine sampler")
        rhs, rhs_se = spine.expectation(lambda v: functional(v[:, None]), draws, rng)
    else:
        vals = np.empty(draws)
        for start in range(0, draws, chunk):
            k = min(chunk, draws - start)
            vals[start:start + k] = functional(np.cumsum(spine.sample(rng, (k, n)), axis=1))
        rhs, rhs_se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws))
    return ManyToOneResult(n, float(lhs), float(lhs_se), rhs, rhs_se)
