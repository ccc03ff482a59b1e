"""Independent reference implementations shared by the unit and acceptance tests."""

import mpmath
import numpy as np

mpmath.mp.dps = 40


def zoh_oracle(a, delta, b):
    a, delta, b = mpmath.mpf(a), mpmath.mpf(delta), mpmath.mpf(b)
    z = a * delta
    a_bar = mpmath.exp(z)
    b_bar = delta * b if z == 0 else (mpmath.expm1(z) / z) * delta * b
    return float(a_bar), float(b_bar)


def dense_oracle(x, a_log, d, delta, b, c, prompt=None):
    """y_t = sum_{s<=t} (c_t + p_t)^T (prod_{r=s+1..t} a_bar_r) b_bar_s x_s + d x_t, channel by channel."""
    T, E = x.shape
    A = -np.exp(a_log)
    gate = c if prompt is None else c + prompt
    y = np.zeros((T, E))
    for e in range(E):
        a_e = A if A.ndim == 1 else A[e]
        dt = delta if delta.ndim == 1 else delta[:, e]
        z = dt[:, None] * a_e[None, :]
        a_bar = np.exp(z)
        b_bar = np.expm1(z) / z * dt[:, None] * b
        for t in range(T):
            acc = d[e] * x[t, e]
            for s in range(t + 1):
                decay = np.prod(a_bar[s + 1:t + 1], axis=0)
                acc += gate[t] @ (decay * b_bar[s]) * x[s, e]
            y[t, e] = acc
    return y


def assign_oracle(p):
    """Straight re-statement of the nearest-free-bin rule, written without numpy tricks."""
    m, s = len(p), len(p[0])
    prefs = [max(range(s), key=lambda j: (p[i][j], -j)) for i in range(m)]
    queue = sorted(range(m), key=lambda i: (-p[i][prefs[i]], i))
    owner = {}
    for tok in queue:
        for b in sorted(range(s), key=lambda j: (abs(j - prefs[tok]), j)):
            if b not in owner:
                owner[b] = tok
                break
    return [owner[b] for b in sorted(owner)]


def assign_oracle_fast(p):
    """Same rule as assign_oracle with the bin search vectorised, for large M."""
    p = np.asarray(p)
    m = len(p)
    pref = [int(np.flatnonzero(row == row.max())[0]) for row in p]
    free = np.ones(p.shape[1], dtype=bool)
    owner = {}
    for tok in sorted(range(m), key=lambda i: (-p[i, pref[i]], i)):
        cand = np.flatnonzero(free)
        # distance first, then the lower bin
        b = int(cand[np.argmin(2 * np.abs(cand - pref[tok]) + (cand > pref[tok]))])
        free[b] = False
        owner[b] = tok
    return [owner[b] for b in sorted(owner)]


def fps_oracle(pts, m, seed):
    chosen = [seed]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for i in range(len(pts)):
            d = min(float(np.sum((pts[i] - pts[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def knn_oracle(pts, q, k):
    keyed = sorted(range(len(pts)), key=lambda i: (float(np.sum((pts[i] - pts[q]) ** 2)), i))
    return keyed[:k]
