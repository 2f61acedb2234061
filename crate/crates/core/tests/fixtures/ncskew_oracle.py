"""Regenerates ncskew_oracle.txt: NCSKEW of 1000 splitmix64 vectors by the
direct moment formula. Run from this directory with numpy installed."""
import numpy as np

M = (1 << 64) - 1


def splitmix(state):
    state = (state + 0x9E3779B97F4A7C15) & M
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return state, z ^ (z >> 31)


def vector(k):
    s = (k * 1000003 + 17) & M
    s, r = splitmix(s)
    n = 5 + r % 196
    out = []
    for _ in range(n):
        s, a = splitmix(s)
        s, b = splitmix(s)
        s, c = splitmix(s)
        u, v, w = ((x >> 11) * 2.0**-53 for x in (a, b, c))
        x = 0.1 * (u - 0.5)
        if v < 0.1:
            x -= 0.3 * w
        out.append(x)
    return np.array(out)


def ncskew(w):
    n = len(w)
    d = w - w.mean()
    return -(n * (n - 1) ** 1.5 * np.sum(d**3)) / ((n - 1) * (n - 2) * np.sum(d**2) ** 1.5)


with open("ncskew_oracle.txt", "w") as f:
    for k in range(1000):
        v = vector(k)
        f.write(f"{len(v)} {float(ncskew(v))!r}\n")
