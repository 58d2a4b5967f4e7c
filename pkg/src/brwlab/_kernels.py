"""Compiled population kernels for the built-in offspring laws.

A replica's randomness for generation g comes from a xoshiro state seeded by
the replica key and g, so any generation of any replica can be regenerated
on its own and threads never share state.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .rng import fill_normals, fold_key, next_uniform, seed_state

STATUS_OK = 0
STATUS_EXTINCT = 1
STATUS_CAP = 2

# columns of the per-generation record array
F_W, F_Z, F_MIN, F_COUNT, F_PRUNED, F_D, F_KILLED, F_STATUS = range(8)
N_FIELDS = 8


@nb.njit(cache=True)
def _renewal(atoms, cum, x):
    return cum[np.searchsorted(atoms, x, side="right")]


@nb.njit(cache=True)
def step(kind, params, st, pos, barrier, kill_below, kn, wn, fn, zbuf):
    """One generation. Returns (children, pruned bound increment, killed count).

    Children above ``barrier`` are pruned; children below ``kill_below`` are
    killed. Children of a parent stay contiguous and in draw order.
    """
    npar = pos.shape[0]
    pruned = 0.0
    killed = 0
    if kind == 0:
        m = params[0]
        s = params[1]
        z = zbuf[: 2 * npar]
        fill_normals(st, z, kn, wn, fn)
        new = np.empty(2 * npar)
        cnt = 0
        for i in range(npar):
            p = pos[i] + m
            for j in range(2):
                y = p + s * z[2 * i + j]
                if y > barrier:
                    pruned += math.exp(-y) * (1.0 + abs(y))
                elif y < kill_below:
                    killed += 1
                else:
                    new[cnt] = y
                    cnt += 1
        return new[:cnt], pruned, killed
    pa = params[0]
    pb = params[1]
    new = np.empty(3 * npar)
    cnt = 0
    for i in range(npar):
        a = 1 if next_uniform(st) < pa else 0
        b = 2 if next_uniform(st) < pb else 1
        for j in range(a + b):
            y = pos[i] - 1.0 if j < a else pos[i] + 1.0
            if y > barrier:
                pruned += math.exp(-y) * (1.0 + abs(y))
            elif y < kill_below:
                killed += 1
            else:
                new[cnt] = y
                cnt += 1
    return new[:cnt], pruned, killed


@nb.njit(cache=True)
def _record(out, row, pos, pruned_total, killed_total, alpha, r_atoms, r_cum, want_d, status):
    # Neumaier-compensated sums so records do not depend on summation luck
    w = 0.0
    cw = 0.0
    z = 0.0
    cz = 0.0
    d = 0.0
    cd = 0.0
    mn = np.inf
    for y in pos:
        e = math.exp(-y)
        t = w + e
        if abs(w) >= abs(e):
            cw += (w - t) + e
        else:
            cw += (e - t) + w
        w = t
        v = e * y
        t = z + v
        if abs(z) >= abs(v):
            cz += (z - t) + v
        else:
            cz += (v - t) + z
        z = t
        if want_d:
            v = e * _renewal(r_atoms, r_cum, y + alpha)
            t = d + v
            if abs(d) >= abs(v):
                cd += (d - t) + v
            else:
                cd += (v - t) + d
            d = t
        if y < mn:
            mn = y
    out[row, F_W] = w + cw
    out[row, F_Z] = z + cz
    out[row, F_MIN] = mn
    out[row, F_COUNT] = pos.shape[0]
    out[row, F_PRUNED] = pruned_total
    out[row, F_D] = d + cd
    out[row, F_KILLED] = killed_total
    out[row, F_STATUS] = status


@nb.njit(cache=True)
def run_replica(kind, params, k0, k1, n_max, record_gens, barrier, cap, alpha, kill,
                r_atoms, r_cum, want_d, out, kn, wn, fn):
    """Evolve one replica to generation n_max, filling ``out`` rows for
    the generations listed (sorted) in ``record_gens``."""
    pos = np.zeros(1)
    st = np.empty(4, dtype=np.uint64)
    zbuf = np.empty(1024)
    kill_below = -alpha if kill else -np.inf
    pruned_total = 0.0
    killed_total = 0
    status = STATUS_OK
    row = 0
    nrec = record_gens.shape[0]
    while row < nrec and record_gens[row] == 0:
        _record(out, row, pos, 0.0, 0, alpha, r_atoms, r_cum, want_d, status)
        row += 1
    for g in range(n_max):
        if row >= nrec:
            break
        if pos.shape[0] > 0:
            seed_state(st, k0, k1, g)
            if kind == 0 and zbuf.shape[0] < 2 * pos.shape[0]:
                zbuf = np.empty(4 * pos.shape[0])
            pos, pr, kl = step(kind, params, st, pos, barrier, kill_below, kn, wn, fn, zbuf)
            pruned_total += pr
            killed_total += kl
            if pos.shape[0] == 0:
                status = STATUS_EXTINCT
            elif pos.shape[0] > cap:
                status = STATUS_CAP
        while row < nrec and record_gens[row] == g + 1:
            if status == STATUS_CAP:
                for f in range(N_FIELDS):
                    out[row, f] = np.nan
                out[row, F_STATUS] = STATUS_CAP
                out[row, F_PRUNED] = pruned_total
            else:
                _record(out, row, pos, pruned_total, killed_total, alpha, r_atoms, r_cum, want_d, status)
            row += 1
        if status == STATUS_CAP:
            while row < nrec:
                for f in range(N_FIELDS):
                    out[row, f] = np.nan
                out[row, F_STATUS] = STATUS_CAP
                row += 1
            break
    return pos


@nb.njit(cache=True, parallel=True)
def run_batch(kind, params, k0, k1, replica_ids, n_max, record_gens, barrier, cap, alpha, kill,
              r_atoms, r_cum, want_d, kn, wn, fn):
    """Records of shape (replicas, len(record_gens), N_FIELDS)."""
    nr = replica_ids.shape[0]
    out = np.empty((nr, record_gens.shape[0], N_FIELDS))
    for i in nb.prange(nr):
        rk0, rk1 = fold_key(k0, k1, replica_ids[i], 1)
        run_replica(kind, params, rk0, rk1, n_max, record_gens, barrier, cap, alpha, kill,
                    r_atoms, r_cum, want_d, out[i], kn, wn, fn)
    return out


@nb.njit(cache=True)
def final_positions(kind, params, k0, k1, replica_id, n_max, barrier, cap, kn, wn, fn):
    """Positions of one replica at generation n_max (for front retention)."""
    rk0, rk1 = fold_key(k0, k1, replica_id, 1)
    out = np.empty((1, N_FIELDS))
    gens = np.array([n_max], dtype=np.int64)
    empty = np.zeros(1)
    pos = run_replica(kind, params, rk0, rk1, n_max, gens, barrier, cap, 0.0, False,
                      empty, empty, False, out, kn, wn, fn)
    return pos, out[0, F_STATUS], out[0, F_PRUNED]
