"""Geometry-constrained gate prompt generator, shared across backbone layers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .geometry import knn_all
from .numcore import Parameter, Tensor


class SharedParameterError(RuntimeError):
    pass


def assign_unique_indices(distribution) -> np.ndarray:
    """Turn an (M, S) row-stochastic matrix into a token order.

    Each token prefers its argmax bin. Tokens are served in descending order
    of their argmax probability (ties: lower token first) and take the nearest
    free bin (ties: lower bin). The order lists tokens by ascending bin.
    """
    p = np.asarray(distribution.data if isinstance(distribution, Tensor) else distribution)
    m, s = p.shape
    if s < m:
        raise ValueError(f"need at least as many bins as tokens ({s} < {m})")
    pref = np.argmax(p, axis=1)
    conf = p[np.arange(m), pref]
    serve = np.lexsort((np.arange(m), -conf))
    taken = np.zeros(s, dtype=bool)
    assigned = np.empty(m, dtype=np.int64)
    for tok in serve:
        b = pref[tok]
        if taken[b]:
            for dist in range(1, s):
                lo, hi = b - dist, b + dist
                if lo >= 0 and not taken[lo]:
                    b = lo
                    break
                if hi < s and not taken[hi]:
                    b = hi
                    break
        taken[b] = True
        assigned[tok] = b
    return np.argsort(assigned, kind="stable")


@dataclass
class G2pgOutput:
    distribution: Tensor  # (..., M, S_prompt)
    order: np.ndarray  # (..., M) permutation per sample
    prompt: Tensor  # (..., M, S_state)


class G2PG:
    """KNN max-pool over a down projection, up projection + softmax, order and prompt heads."""

    def __init__(
        self,
        d_tok: int,
        s_prompt: int,
        s_state: int,
        k: int = 4,
        d_hid: int | None = None,
        rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        d_hid = d_hid or max(1, d_tok // 4)
        self.k = k
        self.d_tok, self.d_hid, self.s_prompt, self.s_state = d_tok, d_hid, s_prompt, s_state
        self.down_w = Parameter(rng.normal(0, 1 / math.sqrt(d_tok), (d_tok, d_hid)), name="down_w")
        self.down_b = Parameter(np.zeros(d_hid), name="down_b")
        self.up_w = Parameter(rng.normal(0, 1 / math.sqrt(d_hid), (d_hid, s_prompt)), name="up_w")
        self.up_b = Parameter(np.zeros(s_prompt), name="up_b")
        self.prompt_w = Parameter(rng.normal(0, 1 / math.sqrt(s_prompt), (s_prompt, s_state)), name="prompt_w")
        self.prompt_b = Parameter(np.zeros(s_state), name="prompt_b")

    def parameters(self) -> dict[str, Parameter]:
        return {n: getattr(self, n) for n in ("down_w", "down_b", "up_w", "up_b", "prompt_w", "prompt_b")}

    def version(self) -> tuple[int, ...]:
        return tuple(p.version for p in self.parameters().values())

    def neighbors(self, centers: np.ndarray) -> np.ndarray:
        centers = np.asarray(centers, dtype=np.float64)
        m = centers.shape[-2]
        if not 1 <= self.k <= m:
            raise ValueError(f"k={self.k} invalid for {m} tokens")
        if centers.ndim == 2:
            return knn_all(centers, self.k)
        flat = centers.reshape(-1, m, 3)
        return np.stack([knn_all(c, self.k) for c in flat]).reshape(centers.shape[:-2] + (m, self.k))

    def prompt_projection(self, distribution) -> Tensor:
        return nc.linear(distribution, self.prompt_w, self.prompt_b)

    def __call__(self, tokens, centers, neighbors=None, expected_version=None) -> G2pgOutput:
        if expected_version is not None and self.version() != expected_version:
            raise SharedParameterError("G2PG parameters changed between layers of one forward pass")
        tokens = nc.as_tensor(tokens)
        if neighbors is None:
            neighbors = self.neighbors(centers)
        m = tokens.shape[-2]
        if self.s_prompt < m:
            raise ValueError(f"S_prompt={self.s_prompt} < M={m}: unique indices impossible")
        agg = nc.neighbor_max_pool(nc.linear(tokens, self.down_w, self.down_b), neighbors)
        dist = nc.softmax_rows(nc.linear(agg, self.up_w, self.up_b))
        flat = dist.data.reshape(-1, m, self.s_prompt)
        order = np.stack([assign_unique_indices(d) for d in flat]).reshape(dist.shape[:-2] + (m,))
        nc.mark_discrete(order, dist)
        return G2pgOutput(dist, order, self.prompt_projection(dist))


def g2pg_forward(tokens, centers, params: G2PG) -> G2pgOutput:
    return params(tokens, centers)
