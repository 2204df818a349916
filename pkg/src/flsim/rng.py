"""Counter-based pseudo-random streams.

All randomness in a simulation comes from :class:`Stream` objects. A stream
is named by a 64-bit key derived from the run seed plus a path of labels::

    key = little-endian uint64 of sha256("/".join(str(p) for p in (seed, *path)))[:8]

and its i-th raw output (i = 1, 2, ...) is the SplitMix64 output function
applied to a counter::

    z = (key + i * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    out = z ^ (z >> 31)

Derived quantities:

* ``uniform``: ``(out >> 11) * 2**-53`` in [0, 1).
* ``uniform_open``: ``((out >> 11) + 1) * 2**-53`` in (0, 1].
* ``normal``: Box-Muller from two consecutive outputs ``a, b``:
  ``sqrt(-2 ln uniform_open(a)) * cos(2 pi uniform(b))``. Only the cosine
  branch is used, so every normal costs exactly two outputs.
* ``permutation(n)``: Fisher-Yates, for ``i = n-1 .. 1`` swap ``i`` with
  ``j = ((out >> 11) * (i + 1)) >> 53`` (exact integer arithmetic).
* ``log_gamma(alpha)``: Marsaglia-Tsang squeeze with the ``alpha < 1`` boost
  ``G(alpha) = G(alpha + 1) * U**(1/alpha)``, evaluated in log space so tiny
  shapes never underflow. The boost uniform is drawn after the accepted
  Marsaglia-Tsang sample.

Nothing here touches a platform RNG, so a draw is fully reproducible from
(seed, path, counter).
"""

from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_NEG_53 = 2.0**-53


def mix64(z: int) -> int:
    """SplitMix64 output function on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_key(seed: int, *path: object) -> int:
    text = "/".join(str(p) for p in (seed, *path))
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def derive_seed(seed: int, *path: object) -> int:
    """A 63-bit child seed, for handing a sub-seed to another component."""
    return derive_key(seed, *path) >> 1


class Stream:
    """A reproducible random stream addressed by ``(seed, *path)``."""

    def __init__(self, seed: int, *path: object):
        self.key = derive_key(seed, *path)
        self.counter = 0

    # -- raw outputs -------------------------------------------------------

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.key + self.counter * GOLDEN)

    def u64(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        start = self.counter + 1
        self.counter += n
        with np.errstate(over="ignore"):
            ctr = np.arange(start, start + n, dtype=np.uint64)
            z = np.uint64(self.key) + ctr * np.uint64(GOLDEN)
            return _mix64_array(z)

    # -- floats ------------------------------------------------------------

    def next_uniform(self) -> float:
        return (self.next_u64() >> 11) * _TWO_NEG_53

    def next_uniform_open(self) -> float:
        return ((self.next_u64() >> 11) + 1) * _TWO_NEG_53

    def uniform(self, n: int) -> np.ndarray:
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def next_normal(self) -> float:
        u1 = self.next_uniform_open()
        u2 = self.next_uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal(self, n: int) -> np.ndarray:
        # Scalar libm calls keep the values identical to next_normal().
        raw = (self.u64(2 * n) >> np.uint64(11)).tolist()
        out = np.empty(n, dtype=np.float64)
        log, cos, sqrt, tau = math.log, math.cos, math.sqrt, 2.0 * math.pi
        for i in range(n):
            u1 = (raw[2 * i] + 1) * _TWO_NEG_53
            u2 = raw[2 * i + 1] * _TWO_NEG_53
            out[i] = sqrt(-2.0 * log(u1)) * cos(tau * u2)
        return out

    # -- combinatorics -----------------------------------------------------

    def permutation(self, n: int) -> np.ndarray:
        perm = list(range(n))
        if n < 2:
            return np.asarray(perm, dtype=np.int64)
        draws = (self.u64(n - 1) >> np.uint64(11)).tolist()
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = (draws[k] * (i + 1)) >> 53
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def shuffled(self, items: Sequence) -> list:
        return [items[i] for i in self.permutation(len(items))]

    # -- continuous distributions ------------------------------------------

    def log_gamma(self, alpha: float) -> float:
        """Log of a Gamma(alpha, 1) variate."""
        if not alpha > 0:
            raise ValueError(f"gamma shape must be > 0, got {alpha}")
        a = alpha + 1.0 if alpha < 1.0 else alpha
        d = a - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.next_normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = self.next_uniform_open()
            if u < 1.0 - 0.0331 * (x * x) * (x * x):
                break
            if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                break
        out = math.log(d) + math.log(v)
        if alpha < 1.0:
            out += math.log(self.next_uniform_open()) / alpha
        return out

    def gamma(self, alpha: float) -> float:
        return math.exp(self.log_gamma(alpha))

    def dirichlet(self, alpha: float, k: int) -> list[float]:
        """Symmetric Dirichlet(alpha * 1_k) via normalized Gamma draws."""
        logs = [self.log_gamma(alpha) for _ in range(k)]
        top = max(logs)
        weights = [math.exp(v - top) for v in logs]
        total = 0.0
        for w in weights:
            total += w
        return [w / total for w in weights]
