"""Branching random walk populations and their martingales.

Built-in laws run in compiled kernels (parallel over replicas); custom laws
use a numpy loop with the same stream layout. A replica is identified by
(seed, replica_id) and its generation g draws from the stream
(seed, TAG_BRW, replica_id, g), so any replica can be recomputed alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as _stats

from . import _kernels as K
from . import io
from .model import LawError, OffspringLaw
from .rng import TAG_BRW, TAG_FRONT, ZIG_F, ZIG_K, ZIG_W, Stream
from .walk import RenewalMeasure, renewal_tables

DEFAULT_BARRIER = 15.0
DEFAULT_CAP = 10**7


class PopulationCapError(RuntimeError):
    """The particle count exceeded the configured hard limit."""


@dataclass(frozen=True)
class Pruning:
    """Particles above ``barrier`` are dropped; ``cap`` bounds the population."""

    barrier: float = DEFAULT_BARRIER
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if math.isnan(self.barrier):
            raise ValueError("barrier must be a number or inf")
        if self.cap < 1:
            raise ValueError("cap must be positive")

    def describe(self) -> dict:
        return {"barrier": self.barrier, "cap": self.cap}


@dataclass(frozen=True)
class GenerationState:
    n: int
    particles: np.ndarray


@dataclass(frozen=True)
class MartingaleRecord:
    n: int
    W: float
    Z: float
    min_pos: float
    particle_count: int
    pruned_mass_bound: float
    status: int = K.STATUS_OK

    @property
    def extinct(self) -> bool:
        return self.status == K.STATUS_EXTINCT


@dataclass(frozen=True)
class TruncatedRecord:
    n: int
    D: float
    alive: bool
    particle_count: int
    Z: float


def _pruning(p) -> Pruning:
    if p is None:
        return Pruning()
    if isinstance(p, Pruning):
        return p
    return Pruning(float(p))


def _base_key(seed: int, tag: int = TAG_BRW):
    k0, k1 = Stream(seed).child(tag).key
    return np.uint64(k0), np.uint64(k1)


def _python_replica(law, seed, tag, rid, n_max, gens, barrier, cap, alpha, kill, r_measure, want_d):
    """Numpy twin of the compiled replica loop, for custom laws."""
    out = np.empty((len(gens), K.N_FIELDS))
    pos = np.zeros(1)
    pruned = 0.0
    killed = 0
    status = K.STATUS_OK
    base = Stream(seed).child(tag, rid)

    def fill(row):
        e = np.exp(-pos)
        out[row, K.F_W] = math.fsum(e)
        out[row, K.F_Z] = math.fsum(e * pos)
        out[row, K.F_MIN] = pos.min() if pos.size else np.inf
        out[row, K.F_COUNT] = pos.size
        out[row, K.F_PRUNED] = pruned
        out[row, K.F_D] = math.fsum(e * r_measure(pos + alpha)) if want_d and pos.size else 0.0
        out[row, K.F_KILLED] = killed
        out[row, K.F_STATUS] = status

    gi = {g: i for i, g in enumerate(gens)}
    if 0 in gi:
        fill(gi[0])
    for g in range(n_max):
        if pos.size:
            counts, disp = law.sample_many(base.child(g).generator(), pos.size)
            y = np.repeat(pos, counts) + disp
            over = y > barrier
            pruned += math.fsum(np.exp(-y[over]) * (1 + np.abs(y[over])))
            under = (y < -alpha) if kill else np.zeros(y.size, bool)
            killed += int(under.sum())
            pos = y[~over & ~under]
            if pos.size == 0:
                status = K.STATUS_EXTINCT
            elif pos.size > cap:
                out[:, :] = np.nan
                out[:, K.F_STATUS] = K.STATUS_CAP
                return out, pos
        if g + 1 in gi:
            fill(gi[g + 1])
    return out, pos


def simulate(law: OffspringLaw, replica_ids, n_max: int, record_gens=None, pruning=None,
             seed: int = 0, *, alpha: float = 0.0, kill: bool = False,
             r_measure: RenewalMeasure | None = None, tag: int = TAG_BRW) -> np.ndarray:
    """Raw records, shape (replicas, len(record_gens), N_FIELDS)."""
    pr = _pruning(pruning)
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    gens = np.arange(n_max + 1) if record_gens is None else np.asarray(record_gens, dtype=np.int64)
    if gens.size and (np.any(np.diff(gens) <= 0) or gens[0] < 0 or gens[-1] > n_max):
        raise ValueError("record_gens must be increasing within [0, n_max]")
    ids = np.asarray(replica_ids, dtype=np.uint64).ravel()
    want_d = r_measure is not None
    if ids.size == 0:
        return np.empty((0, gens.size, K.N_FIELDS))
    if law.kernel_code is not None:
        if want_d:
            atoms = np.ascontiguousarray(r_measure.atoms, dtype=float)
            cum = np.ascontiguousarray(r_measure._cum, dtype=float)
        else:
            atoms = cum = np.zeros(1)
        k0, k1 = _base_key(seed, tag)
        out = K.run_batch(law.kernel_code, law.kernel_params, k0, k1, ids, n_max, gens.astype(np.int64),
                          float(pr.barrier), int(pr.cap), float(alpha), bool(kill), atoms, cum, want_d,
                          ZIG_K, ZIG_W, ZIG_F)
    else:
        out = np.stack([_python_replica(law, seed, tag, int(r), n_max, list(gens), pr.barrier, pr.cap,
                                        alpha, kill, r_measure, want_d)[0] for r in ids])
    capped = out[:, :, K.F_STATUS] == K.STATUS_CAP
    if capped.any():
        bad = int(ids[np.flatnonzero(capped.any(axis=1))[0]])
        first = int(gens[np.flatnonzero(capped.any(axis=0))[0]])
        raise PopulationCapError(
            f"replica {bad} exceeded {pr.cap} particles by generation {first}; "
            f"lower the barrier (now {pr.barrier}) or n_max ({n_max})")
    return out


def _to_records(rows, gens):
    return [MartingaleRecord(int(g), float(r[K.F_W]), float(r[K.F_Z]), float(r[K.F_MIN]),
                             int(r[K.F_COUNT]), float(r[K.F_PRUNED]), int(r[K.F_STATUS]))
            for g, r in zip(gens, rows)]


def evolve(law: OffspringLaw, n_max: int, pruning=None, seed: int = 0, replica_id: int = 0):
    """Martingale records for generations 0..n_max of one replica."""
    out = simulate(law, [replica_id], n_max, None, pruning, seed)
    return _to_records(out[0], range(n_max + 1))


def generation_state(law: OffspringLaw, n: int, pruning=None, seed: int = 0, replica_id: int = 0,
                     tag: int = TAG_BRW) -> GenerationState:
    """Positions of generation n of one replica (same stream as ``evolve``)."""
    pr = _pruning(pruning)
    if law.kernel_code is not None:
        k0, k1 = _base_key(seed, tag)
        pos, status, _ = K.final_positions(law.kernel_code, law.kernel_params, k0, k1, np.uint64(replica_id),
                                           n, float(pr.barrier), int(pr.cap), ZIG_K, ZIG_W, ZIG_F)
    else:
        out, pos = _python_replica(law, seed, tag, replica_id, n, [n], pr.barrier, pr.cap, 0.0, False, None, False)
        status = out[0, K.F_STATUS]
    if status == K.STATUS_CAP:
        raise PopulationCapError(f"replica {replica_id} exceeded {pr.cap} particles")
    return GenerationState(n, np.asarray(pos).copy())


# ---------------------------------------------------------------- samples

SAMPLE_FIELDS = ("replica_id", "seed", "n_stop", "Z_hat", "W_n", "Z_n", "min_pos",
                 "particle_count", "pruned_mass_bound", "status")


@dataclass
class EmpiricalSample:
    """Terminal values of independent replicas (Z_hat is Z at n_stop)."""

    replica_id: np.ndarray
    W_n: np.ndarray
    Z_n: np.ndarray
    min_pos: np.ndarray
    particle_count: np.ndarray
    pruned_mass_bound: np.ndarray
    status: np.ndarray
    seed: int
    n_stop: int
    law: dict = field(default_factory=dict)
    pruning: dict = field(default_factory=dict)

    @property
    def Z_hat(self) -> np.ndarray:
        return self.Z_n

    def __len__(self):
        return int(self.replica_id.size)

    def records(self):
        for i in range(len(self)):
            yield {"replica_id": int(self.replica_id[i]), "seed": self.seed, "n_stop": self.n_stop,
                   "Z_hat": float(self.Z_n[i]), "W_n": float(self.W_n[i]), "Z_n": float(self.Z_n[i]),
                   "min_pos": float(self.min_pos[i]), "particle_count": int(self.particle_count[i]),
                   "pruned_mass_bound": float(self.pruned_mass_bound[i]), "status": int(self.status[i])}

    def meta(self) -> dict:
        from . import __version__

        return {"law": self.law, "pruning": self.pruning, "seed": self.seed, "n_stop": self.n_stop,
                "code_version": __version__, "negative_Z_kept": True}

    def save(self, path) -> None:
        io.write_jsonl(path, self.records(), self.meta())

    @classmethod
    def from_records(cls, recs, meta) -> "EmpiricalSample":
        recs = sorted(recs, key=lambda r: r["replica_id"])

        def col(name, dtype=float):
            return np.array([float(r[name]) if dtype is float else r[name] for r in recs], dtype=dtype)

        return cls(col("replica_id", np.int64), col("W_n"), col("Z_n"), col("min_pos"),
                   col("particle_count", np.int64), col("pruned_mass_bound"), col("status", np.int64),
                   int(meta["seed"]), int(meta["n_stop"]), meta.get("law", {}), meta.get("pruning", {}))

    @classmethod
    def load(cls, path) -> "EmpiricalSample":
        return cls.from_records(io.read_jsonl(path), io.read_json(io.meta_path(path)))

    @classmethod
    def from_rows(cls, ids, rows, seed, n_stop, law, pruning) -> "EmpiricalSample":
        return cls(np.asarray(ids, dtype=np.int64), rows[:, K.F_W].copy(), rows[:, K.F_Z].copy(),
                   rows[:, K.F_MIN].copy(), rows[:, K.F_COUNT].astype(np.int64),
                   rows[:, K.F_PRUNED].copy(), rows[:, K.F_STATUS].astype(np.int64),
                   seed, n_stop, law, pruning)


def estimate_Z(law: OffspringLaw, n_stop: int, replicas: int, pruning=None, seed: int = 0, *,
               path=None, resume: bool = True, chunk: int = 20_000, first_id: int = 0,
               progress=None, extra_meta: dict | None = None) -> EmpiricalSample:
    """Z at generation n_stop for replicas first_id .. first_id + replicas - 1.

    Negative values (possible at finite n) are kept. With ``path`` the sample
    is persisted as JSON lines; on resume, replica ids already in the file
    are not recomputed.
    """
    pr = _pruning(pruning)
    if replicas < 0:
        raise ValueError("replicas must be nonnegative")
    ids = np.arange(first_id, first_id + replicas, dtype=np.int64)
    meta = {"law": law.describe(), "pruning": pr.describe(), "seed": seed, "n_stop": n_stop}
    done: dict[int, dict] = {}
    if path is not None:
        path = Path(path)
        if resume and path.exists():
            old_meta = io.read_json(io.meta_path(path))
            for k in ("law", "pruning", "seed", "n_stop"):
                if io.dumps(old_meta.get(k)) != io.dumps(meta[k]):
                    raise ValueError(f"cannot resume {path}: stored {k} differs from the request")
            done = {int(r["replica_id"]): r for r in io.read_jsonl(path)}
        else:
            empty = EmpiricalSample.from_rows([], np.empty((0, K.N_FIELDS)), seed, n_stop, meta["law"], meta["pruning"])
            io.write_jsonl(path, [], {**empty.meta(), **(extra_meta or {})})
    todo = ids[~np.isin(ids, np.fromiter(done.keys(), dtype=np.int64, count=len(done)))]
    parts = []
    for start in range(0, todo.size, chunk):
        sub = todo[start:start + chunk]
        rows = simulate(law, sub, n_stop, [n_stop], pr, seed)[:, 0, :]
        part = EmpiricalSample.from_rows(sub, rows, seed, n_stop, meta["law"], meta["pruning"])
        if path is not None:
            io.append_jsonl(path, part.records())
        parts.append(part)
        if progress is not None:
            progress(start + sub.size, todo.size)
    recs = [r for r in done.values() if first_id <= r["replica_id"] < first_id + replicas]
    for p in parts:
        recs.extend(p.records())
    return EmpiricalSample.from_records(recs, meta)


# ---------------------------------------------------------------- truncated martingale

def default_r_measure(law: OffspringLaw, x_max: float, seed: int = 0, n_ladders: int = 10**5) -> RenewalMeasure:
    spine = law.spine
    if spine.is_unit_lattice:
        return renewal_tables(spine, [0.0], "exact_lattice", x_max=x_max).R_measure
    return renewal_tables(spine, [0.0], "empirical", x_max=x_max, n_ladders=n_ladders,
                          rng=Stream(seed).child(TAG_FRONT, 99)).R_measure


def truncated_trajectory(law: OffspringLaw, alpha: float, n_max: int, seed: int = 0, replica_id: int = 0,
                         r_measure: RenewalMeasure | None = None, pruning=math.inf):
    """Records of D_n = sum over never-killed particles of e^{-S} R(S + alpha).

    Particles are killed, with their descendants, once below -alpha.
    """
    rows = truncated_batch(law, alpha, n_max, [replica_id], seed, r_measure, pruning)[0]
    return [TruncatedRecord(n, float(r[K.F_D]), r[K.F_KILLED] == 0, int(r[K.F_COUNT]), float(r[K.F_Z]))
            for n, r in enumerate(rows)]


def truncated_batch(law, alpha, n_max, replica_ids, seed=0, r_measure=None, pruning=math.inf,
                    record_gens=None):
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if r_measure is None:
        top = alpha + (_pruning(pruning).barrier if math.isfinite(_pruning(pruning).barrier) else 3.0 * n_max + 30.0)
        r_measure = default_r_measure(law, top, seed)
    return simulate(law, replica_ids, n_max, record_gens, pruning, seed, alpha=float(alpha), kill=True,
                    r_measure=r_measure)


# ---------------------------------------------------------------- fixed point

@dataclass
class FixpointResult:
    ks: float
    pvalue: float
    n1: int
    n2: int
    k: int


def fixpoint_check(law: OffspringLaw, k: int, n_stop: int, replicas: int, seed: int = 0,
                   pruning=None, front_pruning=math.inf, exact_finite_n: bool = False) -> FixpointResult:
    """Two-sample KS distance between Z_hat and sum_{|u|=k} e^{-S(u)} Z_hat(u).

    The generation-k fronts are drawn on their own streams and the attached
    copies Z_hat(u) are resampled from a second, independent Z_hat sample.

    The limit identity carries a finite-n bias. With ``exact_finite_n`` the
    copies run n_stop - k generations and contribute Z(u) + S(u) W(u), which
    matches Z_{n_stop} in law exactly when nothing is pruned.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if exact_finite_n and n_stop <= k:
        raise ValueError("exact_finite_n needs n_stop > k")
    if replicas < 1000:
        raise ValueError("fixpoint_check needs at least 10**3 replicas")
    if law.kernel_code is None and law.sample_many(Stream(seed).generator(), 1000)[0].mean() <= 1:
        raise LawError("law is not supercritical")
    s1 = estimate_Z(law, n_stop, replicas, pruning, seed).Z_hat
    copies = estimate_Z(law, n_stop - k if exact_finite_n else n_stop, replicas, pruning, seed, first_id=replicas)
    pool, pool_w = copies.Z_hat, copies.W_n
    rng = Stream(seed).child(TAG_FRONT, 1).generator()
    s2 = np.empty(replicas)
    for i in range(replicas):
        front = generation_state(law, k, front_pruning, seed, i, tag=TAG_FRONT).particles
        j = rng.integers(0, replicas, front.size)
        attached = pool[j] + front * pool_w[j] if exact_finite_n else pool[j]
        s2[i] = math.fsum(np.exp(-front) * attached)
    res = _stats.ks_2samp(s1, s2)
    return FixpointResult(float(res.statistic), float(res.pvalue), s1.size, s2.size, k)
