"""Point-set algorithms: FPS, KNN, axis and space-filling-curve orderings."""

from __future__ import annotations

import numpy as np

MAX_BITS = 21
AXES = {"x": 0, "y": 1, "z": 2}


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"expected an (N, 3) point array with N >= 1, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("point coordinates must be finite")
    return pts


def _sq_dists(pts: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = pts - q
    return np.einsum("ij,ij->i", d, d)


def farthest_point_sample(points, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min selection; ties go to the lowest index."""
    pts = as_points(points)
    n = len(pts)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    if not 0 <= seed_index < n:
        raise IndexError(f"seed index {seed_index} out of range for {n} points")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed_index
    mind = _sq_dists(pts, pts[seed_index])
    for i in range(1, m):
        nxt = int(np.argmax(mind))  # first occurrence == lowest index
        chosen[i] = nxt
        np.minimum(mind, _sq_dists(pts, pts[nxt]), out=mind)
    return chosen


def knn(points, query_index: int, k: int) -> np.ndarray:
    """k nearest points to ``points[query_index]``, self included, sorted by (distance, index)."""
    pts = as_points(points)
    if k > len(pts) or k < 1:
        raise ValueError(f"k={k} invalid for {len(pts)} points")
    d = _sq_dists(pts, pts[query_index])
    return np.argsort(d, kind="stable")[:k]


def knn_all(points, k: int, queries=None) -> np.ndarray:
    """Neighbour table: row i holds knn of query i (default: every point)."""
    pts = as_points(points)
    if k > len(pts) or k < 1:
        raise ValueError(f"k={k} invalid for {len(pts)} points")
    q = pts if queries is None else np.asarray(queries, dtype=np.float64)
    diff = q[:, None, :] - pts[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def is_permutation(perm) -> bool:
    p = np.asarray(perm)
    return p.ndim == 1 and np.array_equal(np.sort(p), np.arange(len(p)))


def invert(perm) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


def axis_order(points, axis: str) -> np.ndarray:
    pts = as_points(points)
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    return np.argsort(pts[:, AXES[axis]], kind="stable")


# ---------------------------------------------------------------------------
# space-filling curves


def _check_cells(cells: np.ndarray, bits: int) -> None:
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits_per_axis must be in [1, {MAX_BITS}]")
    if (cells < 0).any() or (cells >= (1 << bits)).any():
        raise OverflowError(f"cell coordinate outside [0, 2^{bits})")


def morton_code(cell, bits: int):
    """Interleave bits: bit j of x -> 3j, of y -> 3j+1, of z -> 3j+2.

    ``cell`` may be a single (x, y, z) triple or an (N, 3) array.
    """
    c = np.asarray(cell, dtype=np.int64)
    _check_cells(c, bits)
    c = c.astype(np.uint64)
    code = np.zeros(c.shape[:-1], dtype=np.uint64)
    for j in range(bits):
        for axis in range(3):
            bit = (c[..., axis] >> np.uint64(j)) & np.uint64(1)
            code |= bit << np.uint64(3 * j + axis)
    return int(code) if code.ndim == 0 else code


def morton_decode(code, bits: int) -> np.ndarray:
    code = np.asarray(code, dtype=np.uint64)
    cell = np.zeros(code.shape + (3,), dtype=np.int64)
    for j in range(bits):
        for axis in range(3):
            bit = (code >> np.uint64(3 * j + axis)) & np.uint64(1)
            cell[..., axis] |= bit.astype(np.int64) << j
    return cell


def hilbert_code(cell, bits: int):
    """Index along the 3D Hilbert curve of order ``bits`` (Skilling's transpose method)."""
    c = np.asarray(cell, dtype=np.int64)
    _check_cells(c, bits)
    x = [c[..., i].copy() for i in range(3)]
    top = 1 << (bits - 1)
    # inverse undo of the excess work
    q = top
    while q > 1:
        p = q - 1
        for i in range(3):
            hit = (x[i] & q) != 0
            x[0] = np.where(hit, x[0] ^ p, x[0])
            t = np.where(hit, 0, (x[0] ^ x[i]) & p)
            x[0] ^= t
            x[i] ^= t
        q >>= 1
    # gray encode
    for i in range(1, 3):
        x[i] ^= x[i - 1]
    t = np.zeros_like(x[0])
    q = top
    while q > 1:
        t = np.where((x[2] & q) != 0, t ^ (q - 1), t)
        q >>= 1
    for i in range(3):
        x[i] ^= t
    code = np.zeros(c.shape[:-1], dtype=np.uint64)
    for j in range(bits - 1, -1, -1):
        for i in range(3):
            code = (code << np.uint64(1)) | ((x[i] >> j) & 1).astype(np.uint64)
    return int(code) if code.ndim == 0 else code


def hilbert_decode(code, bits: int) -> np.ndarray:
    code = np.asarray(code, dtype=np.uint64)
    x = [np.zeros(code.shape, dtype=np.int64) for _ in range(3)]
    pos = 3 * bits - 1
    for j in range(bits - 1, -1, -1):
        for i in range(3):
            x[i] |= ((code >> np.uint64(pos)) & np.uint64(1)).astype(np.int64) << j
            pos -= 1
    n = 2 << (bits - 1)
    # gray decode
    t = x[2] >> 1
    for i in range(2, 0, -1):
        x[i] ^= x[i - 1]
    x[0] ^= t
    # undo excess work
    q = 2
    while q != n:
        p = q - 1
        for i in range(2, -1, -1):
            hit = (x[i] & q) != 0
            x[0] = np.where(hit, x[0] ^ p, x[0])
            t = np.where(hit, 0, (x[0] ^ x[i]) & p)
            x[0] ^= t
            x[i] ^= t
        q <<= 1
    return np.stack(x, axis=-1)


def quantize(points, bits: int) -> np.ndarray:
    """Bounding-box normalise into [0, 1] per axis and bin into 2^bits cells.

    Zero-extent axes map every point to cell 0.
    """
    pts = as_points(points)
    lo = pts.min(axis=0)
    ext = pts.max(axis=0) - lo
    safe = np.where(ext > 0, ext, 1.0)
    unit = np.where(ext > 0, (pts - lo) / safe, 0.0)
    n = 1 << bits
    return np.clip(np.floor(unit * n).astype(np.int64), 0, n - 1)


def curve_order(points, curve: str = "hilbert", bits: int = 10) -> np.ndarray:
    cells = quantize(points, bits)
    if curve == "morton":
        codes = morton_code(cells, bits)
    elif curve == "hilbert":
        codes = hilbert_code(cells, bits)
    else:
        raise ValueError(f"unknown curve {curve!r}")
    return np.argsort(np.atleast_1d(codes), kind="stable")


def static_order(points, mode: str, bits: int = 10) -> np.ndarray:
    """Dispatch for the rule-based orderings: x, y, z, hilbert, morton."""
    if mode in AXES:
        return axis_order(points, mode)
    return curve_order(points, mode, bits)
