"""Regenerates the frozen reference values used by the Rust tests.

Samples are produced with splitmix64 so the Rust side can rebuild them
bit-for-bit; statistics come from scipy, which is independent of the crate.
"""
import math

import numpy as np
from scipy import stats

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self):
        return (self.next_u64() >> 11) * 2.0 ** -53


def sample(index):
    n = 10 + 10 * index
    rng = SplitMix64(1000 + index)
    out = []
    for _ in range(n):
        kind = index % 4
        if kind in (0, 1):
            u1 = 1.0 - rng.uniform()
            u2 = rng.uniform()
            z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
            out.append(z if kind == 0 else math.exp(z))
        elif kind == 2:
            out.append(rng.uniform())
        else:
            out.append(-math.log(1.0 - rng.uniform()))
    return out


print("// shapiro: (index, n, W, p)")
for i in range(20):
    x = sample(i)
    w, p = stats.shapiro(x)
    print(f"({i}, {len(x)}, {w!r}, {p!r}),")

n = 50
grid = [stats.norm.ppf((i - 0.5) / n) for i in range(1, n + 1)]
w, p = stats.shapiro(grid)
print("// normal grid n=50:", repr(w), repr(p))

x = np.array([1.0, 2.0, 3.0, 4.0])
y = np.array([1.0, 3.0, 2.0, 4.0])
x = x - x.mean()
y = y - y.mean()
w = 0.9
cov, vx, vy = x[0] * y[0], x[0] ** 2, y[0] ** 2
for t in range(1, 4):
    cov = w * cov + (1 - w) * x[t] * y[t]
    vx = w * vx + (1 - w) * x[t] ** 2
    vy = w * vy + (1 - w) * y[t] ** 2
print("// ewma [1,2,3,4] vs [1,3,2,4]:", repr(cov / math.sqrt(vx * vy)))
print("// Phi(-0.1):", repr(stats.norm.cdf(-0.1)))
print("// 1.005^10:", repr(1.005 ** 10))
print("// OU var:", repr(0.01 * (1 - math.exp(-5.0)) / 0.5), "mean", repr(math.exp(-2.5)))
