"""Counter-based random streams.

Every random quantity in the package is drawn from a stream identified by a
master seed and a path of integer words (purpose tag, replica id, generation,
...). Keys are derived with Philox4x32-10 used as a keyed hash, so a replica
can be regenerated in isolation and results never depend on how work is
scheduled across threads.

Inside numba kernels a per-(replica, generation) key seeds a xoshiro256**
state and normals come from a 128-layer ziggurat. Outside kernels the same
keys feed ``numpy.random.Philox``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_U0 = np.uint64(0)
_U1 = np.uint64(1)

# purpose tags (first word of a stream path)
TAG_BRW = 1
TAG_FRONT = 2
TAG_WALK = 3
TAG_BOOT = 4
TAG_OFFSPRING = 5
TAG_STABLE = 6
TAG_MISC = 7


@nb.njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds. All arguments are 32-bit words."""
    c0 = np.uint64(c0) & _MASK32
    c1 = np.uint64(c1) & _MASK32
    c2 = np.uint64(c2) & _MASK32
    c3 = np.uint64(c3) & _MASK32
    k0 = np.uint64(k0) & _MASK32
    k1 = np.uint64(k1) & _MASK32
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = (p1 >> _S32) ^ c1 ^ k0
        n1 = p1 & _MASK32
        n2 = (p0 >> _S32) ^ c3 ^ k1
        n3 = p0 & _MASK32
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@nb.njit(cache=True)
def fold_key(k0, k1, word, depth):
    """Derive a child key from (k0, k1) and a 64-bit word."""
    w = np.uint64(word)
    r0, r1, _, _ = philox4x32(w & _MASK32, w >> _S32, np.uint64(depth), np.uint64(0x5EED), k0, k1)
    return r0, r1


def master_key(seed: int) -> tuple[int, int]:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise TypeError("seed must be an integer")
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must lie in [0, 2**64)")
    return seed & 0xFFFFFFFF, seed >> 32


@dataclass(frozen=True)
class Stream:
    """A named random stream: master seed plus a path of integer words."""

    seed: int
    path: tuple = ()

    def child(self, *words) -> "Stream":
        return Stream(self.seed, self.path + tuple(int(w) for w in words))

    @property
    def key(self) -> tuple[int, int]:
        k0, k1 = master_key(self.seed)
        for depth, w in enumerate(self.path):
            if w < 0 or w >= 2**64:
                raise ValueError("stream words must lie in [0, 2**64)")
            k0, k1 = fold_key(np.uint64(k0), np.uint64(k1), np.uint64(w), depth)
        return int(k0), int(k1)

    def generator(self) -> np.random.Generator:
        k0, k1 = self.key
        return np.random.Generator(np.random.Philox(key=[k0 | (k1 << 32), len(self.path)]))


def as_generator(rng) -> np.random.Generator:
    """Accept a Stream, a Generator or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Stream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return Stream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


# ---------------------------------------------------------------- xoshiro256**

@nb.njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(cache=True, inline="always")
def next_u64(st):
    s0 = st[0]
    s1 = st[1]
    s2 = st[2]
    s3 = st[3]
    res = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    st[0] = s0
    st[1] = s1
    st[2] = s2
    st[3] = s3
    return res


@nb.njit(cache=True, inline="always")
def next_uniform(st):
    """Uniform on (0, 1) with 53 random bits."""
    return (float(next_u64(st) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def seed_state(st, k0, k1, word):
    """Fill a 4-word xoshiro state from the key (k0, k1) and a counter word."""
    w = np.uint64(word)
    a0, a1, a2, a3 = philox4x32(w & _MASK32, w >> _S32, 1, 0, k0, k1)
    b0, b1, b2, b3 = philox4x32(w & _MASK32, w >> _S32, 2, 0, k0, k1)
    st[0] = (a0 << _S32) | a1
    st[1] = (a2 << _S32) | a3
    st[2] = (b0 << _S32) | b1
    st[3] = (b2 << _S32) | b3
    if st[0] == _U0 and st[1] == _U0 and st[2] == _U0 and st[3] == _U0:
        st[0] = _U1


# ---------------------------------------------------------------- ziggurat

_ZIG_R = 3.442619855899


def _ziggurat_tables(n=128, dn=_ZIG_R, vn=9.91256303526217e-3):
    m1 = 2147483648.0
    kn = np.zeros(n)
    wn = np.zeros(n)
    fn = np.zeros(n)
    tn = dn
    q = vn / math.exp(-0.5 * dn * dn)
    kn[0] = math.floor(dn / q * m1)
    kn[1] = 0.0
    wn[0] = q / m1
    wn[n - 1] = dn / m1
    fn[0] = 1.0
    fn[n - 1] = math.exp(-0.5 * dn * dn)
    for i in range(n - 2, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        kn[i + 1] = math.floor(dn / tn * m1)
        tn = dn
        fn[i] = math.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


ZIG_K, ZIG_W, ZIG_F = _ziggurat_tables()


@nb.njit(cache=True)
def fill_normals(st, out, kn, wn, fn):
    """Overwrite ``out`` with standard normal draws."""
    n = out.shape[0]
    i = 0
    while i < n:
        u = next_u64(st)
        iz = np.intp(u & np.uint64(127))
        mag = float((u >> np.uint64(8)) & np.uint64(0x7FFFFFFF))
        x = mag * wn[iz]
        if mag >= kn[iz]:
            if iz == 0:
                while True:
                    xx = -math.log(next_uniform(st)) / _ZIG_R
                    yy = -math.log(next_uniform(st))
                    if yy + yy >= xx * xx:
                        break
                x = _ZIG_R + xx
            elif fn[iz] + next_uniform(st) * (fn[iz - 1] - fn[iz]) >= math.exp(-0.5 * x * x):
                continue
        if (u >> np.uint64(7)) & np.uint64(1):
            x = -x
        out[i] = x
        i += 1


@nb.njit(cache=True)
def _normals_from_key(k0, k1, word, n, kn, wn, fn):
    st = np.empty(4, dtype=np.uint64)
    seed_state(st, k0, k1, word)
    out = np.empty(n)
    fill_normals(st, out, kn, wn, fn)
    return out


def kernel_normals(stream: Stream, word: int, n: int) -> np.ndarray:
    """Normals exactly as the simulation kernels draw them (testing aid)."""
    k0, k1 = stream.key
    return _normals_from_key(np.uint64(k0), np.uint64(k1), np.uint64(word), n, ZIG_K, ZIG_W, ZIG_F)
