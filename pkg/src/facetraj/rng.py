"""Seeded, platform-independent random streams.

The bit generator is xoshiro256** (Blackman & Vigna) with its 256-bit state
filled from four consecutive splitmix64 outputs of the 64-bit seed. Derived
floats use the top 53 bits; normals use the Box-Muller transform. The
algorithm is pinned so that identical seeds give identical streams on every
platform and with either kernel backend.
"""
import math

import numpy as np

from . import _backend

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One splitmix64 step. Returns ``(new_state, output)``."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def derive_seed(seed, *keys):
    """Mix integer keys into a seed, giving independent child seeds."""
    s = int(seed) & _MASK
    for key in keys:
        s, out = splitmix64(s ^ (int(key) & _MASK))
        s = out
    return s


class Xoshiro256:
    def __init__(self, seed, backend=None):
        self.seed = int(seed) & _MASK
        self._k = _backend.get(backend)
        s = self.seed
        words = []
        for _ in range(4):
            s, out = splitmix64(s)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)

    def spawn(self, *keys):
        return Xoshiro256(derive_seed(self.seed, *keys))

    def next_uint64(self, n):
        out = np.empty(int(n), dtype=np.uint64)
        if n:
            self._k.xoshiro_fill(self.state, out)
        return out

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def integers(self, low, high, size=None):
        """Integers in [low, high). The modulo bias is below 2**-40 for spans < 2**13."""
        n = 1 if size is None else int(np.prod(size))
        span = high - low
        v = (self.next_uint64(n) % np.uint64(span)).astype(np.int64) + low
        return int(v[0]) if size is None else v.reshape(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1]
        u2 = self.random(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = rad * np.cos(ang)
        z[1::2] = rad * np.sin(ang)
        z = loc + scale * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def exponential(self, scale=1.0, size=None):
        u = 1.0 - self.random(size)
        if size is None:
            return -scale * math.log(u)
        return -scale * np.log(u)

    def choice_sign(self, size=None):
        return np.where(self.random(size) < 0.5, -1.0, 1.0)

    def permutation(self, n):
        # random sort keys; 53-bit keys collide with negligible probability
        # and the stable sort keeps even that case deterministic
        return np.argsort(self.random(n), kind="stable")
