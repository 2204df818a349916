"""Independent reference implementations used to check the library.

Everything here is written in plain Python (ints, floats, Fractions) from the
algorithm descriptions, without calling into flsim's numeric code.
"""

from __future__ import annotations

import hashlib
import math
from fractions import Fraction

M64 = 2**64


def key_for(seed, *path) -> int:
    text = "/".join([str(seed)] + [str(p) for p in path])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


class RefStream:
    """SplitMix64 evaluated at counters 1, 2, 3, ... from a 64-bit key."""

    def __init__(self, key: int):
        self.key = key
        self.i = 0

    def raw(self) -> int:
        self.i += 1
        z = (self.key + self.i * 0x9E3779B97F4A7C15) % M64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % M64
        return z ^ (z >> 31)

    def unif(self) -> float:
        return (self.raw() >> 11) / 2**53

    def unif_open(self) -> float:
        return ((self.raw() >> 11) + 1) / 2**53

    def gauss(self) -> float:
        r = math.sqrt(-2.0 * math.log(self.unif_open()))
        return r * math.cos(2.0 * math.pi * self.unif())

    def perm(self, n: int) -> list[int]:
        a = list(range(n))
        i = n - 1
        while i >= 1:
            j = ((self.raw() >> 11) * (i + 1)) >> 53
            a[i], a[j] = a[j], a[i]
            i -= 1
        return a

    def log_gamma(self, alpha: float) -> float:
        boost = alpha < 1.0
        shape = alpha + 1.0 if boost else alpha
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.gauss()
            v = 1.0 + c * x
            if v <= 0:
                continue
            v = v * v * v
            u = self.unif_open()
            if u < 1.0 - 0.0331 * x**4 or math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
                break
        result = math.log(d) + math.log(v)
        if boost:
            result += math.log(self.unif_open()) / alpha
        return result


def exact_weighted_mean(vectors, weights) -> list[float]:
    """sum_i w_i v_i / sum_i w_i computed in exact rational arithmetic, rounded once."""
    total = sum(Fraction(w) for w in weights)
    dim = len(vectors[0])
    out = []
    for k in range(dim):
        acc = sum(Fraction(w) * Fraction(float(v[k])) for w, v in zip(weights, vectors))
        out.append(float(acc / total))
    return out


def softmax_xent(W, b, X, y) -> float:
    """Mean cross-entropy of a linear softmax model, pure Python."""
    total = 0.0
    for row, label in zip(X, y):
        logits = [sum(wk * xk for wk, xk in zip(Wc, row)) + bc for Wc, bc in zip(W, b)]
        top = max(logits)
        lse = top + math.log(sum(math.exp(z - top) for z in logits))
        total += lse - logits[label]
    return total / len(y)


def central_difference(f, x, h: float = 1e-6) -> list[float]:
    """Gradient of scalar f at list x by central differences."""
    grad = []
    for i in range(len(x)):
        up = list(x)
        dn = list(x)
        up[i] += h
        dn[i] -= h
        grad.append((f(up) - f(dn)) / (2 * h))
    return grad


def reference_dirichlet_manifest(labels, clients, alpha, seed) -> dict[str, list[int]]:
    """Per-class split: shuffle the class, draw Dir(alpha) over clients, largest remainder."""
    out = {c: [] for c in clients}
    for cls in sorted(set(int(v) for v in labels)):
        members = [i for i, v in enumerate(labels) if int(v) == cls]
        order = RefStream(key_for(seed, "dirichlet", cls, "shuffle")).perm(len(members))
        members = [members[i] for i in order]
        s = RefStream(key_for(seed, "dirichlet", cls, "proportions"))
        logs = [s.log_gamma(alpha) for _ in clients]
        m = max(logs)
        w = [math.exp(v - m) for v in logs]
        tot = 0.0
        for v in w:
            tot += v
        props = [v / tot for v in w]
        raw = [p * len(members) for p in props]
        counts = [math.floor(r) for r in raw]
        leftover = len(members) - sum(counts)
        ranked = sorted(range(len(clients)), key=lambda i: (counts[i] - raw[i], i))
        for i in ranked[:leftover]:
            counts[i] += 1
        pos = 0
        for c, n in zip(clients, counts):
            out[c].extend(members[pos : pos + n])
            pos += n
    return out
