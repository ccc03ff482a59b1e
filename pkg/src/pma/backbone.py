"""Frozen toy point transformer: patchify, embed, run layers, harvest every layer."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .geometry import as_points, farthest_point_sample, knn_all
from .numcore import Parameter, Tensor

MAGIC = b"PMAF"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHHHHH")


class FeatureFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class PatchSet:
    centers: np.ndarray  # (M, 3)
    group_indices: np.ndarray  # (M, k_patch)
    neighborhoods: np.ndarray  # (M, k_patch, 3), re-centred
    embeddings: np.ndarray | None = None  # (M, D_tok)


@dataclass
class LayerHarvest:
    tokens: list[Tensor]  # L x (..., M, D)
    cls: list[Tensor]  # L x (..., D)
    centers: np.ndarray  # (..., M, 3)

    @property
    def n_layers(self) -> int:
        return len(self.tokens)


@dataclass
class BackboneConfig:
    n_layers: int = 4
    d_tok: int = 48
    n_heads: int = 4
    n_patches: int = 32
    k_patch: int = 16
    mlp_ratio: int = 4
    encoder_widths: tuple[int, int, int] = (128, 256, 512)
    pos_hidden: int = 128


def patchify(points, m: int, k_patch: int, seed_index: int = 0) -> PatchSet:
    pts = as_points(points)
    n = len(pts)
    if m > n or k_patch > n:
        raise ValueError(f"cannot form {m} patches of {k_patch} points from {n} points")
    center_idx = farthest_point_sample(pts, m, seed_index)
    centers = pts[center_idx]
    groups = knn_all(pts, k_patch, queries=centers)
    return PatchSet(centers, groups, pts[groups] - centers[:, None, :])


def _frozen(value, name: str) -> Parameter:
    return Parameter(value, trainable=False, name=name)


@dataclass
class _Layer:
    ln1_w: Parameter
    ln1_b: Parameter
    qkv_w: Parameter
    qkv_b: Parameter
    proj_w: Parameter
    proj_b: Parameter
    ln2_w: Parameter
    ln2_b: Parameter
    fc1_w: Parameter
    fc1_b: Parameter
    fc2_w: Parameter
    fc2_b: Parameter

    def parameters(self) -> dict[str, Parameter]:
        return dict(vars(self))


class Backbone:
    """Seeded random weights stand in for a pre-trained, frozen checkpoint.

    Only ``cls`` is trainable.
    """

    def __init__(self, cfg: BackboneConfig | None = None, seed: int = 0):
        self.cfg = cfg = cfg or BackboneConfig()
        if cfg.d_tok % cfg.n_heads:
            raise ValueError("d_tok must be divisible by n_heads")
        rng = np.random.default_rng(seed)
        D = cfg.d_tok

        def w(fan_in, fan_out, name, gain=1.0):
            return _frozen(rng.normal(0.0, gain / math.sqrt(fan_in), (fan_in, fan_out)), name)

        def zeros(n, name):
            return _frozen(np.zeros(n), name)

        c1, c2, c3 = cfg.encoder_widths
        # mini-PointNet: shared MLP, group max, concat global feature, MLP, group max
        self.encoder = {
            "e1_w": w(3, c1, "e1_w", math.sqrt(2)), "e1_b": zeros(c1, "e1_b"),
            "e2_w": w(c1, c2, "e2_w", math.sqrt(2)), "e2_b": zeros(c2, "e2_b"),
            "e3_w": w(2 * c2, c3, "e3_w", math.sqrt(2)), "e3_b": zeros(c3, "e3_b"),
            "e4_w": w(c3, D, "e4_w"), "e4_b": zeros(D, "e4_b"),
        }
        self.pos = {
            "p1_w": w(3, cfg.pos_hidden, "p1_w", 2.0), "p1_b": zeros(cfg.pos_hidden, "p1_b"),
            "p2_w": w(cfg.pos_hidden, D, "p2_w"), "p2_b": zeros(D, "p2_b"),
        }
        H = cfg.mlp_ratio * D
        self.layers = [
            _Layer(
                _frozen(np.ones(D), "ln1_w"), zeros(D, "ln1_b"),
                w(D, 3 * D, "qkv_w"), zeros(3 * D, "qkv_b"),
                w(D, D, "proj_w"), zeros(D, "proj_b"),
                _frozen(np.ones(D), "ln2_w"), zeros(D, "ln2_b"),
                w(D, H, "fc1_w"), zeros(H, "fc1_b"),
                w(H, D, "fc2_w"), zeros(D, "fc2_b"),
            )
            for _ in range(cfg.n_layers)
        ]
        self.cls = Parameter(rng.normal(0.0, 0.02, D), trainable=True, name="cls")

    # -- parameter bookkeeping -------------------------------------------------

    def frozen_parameters(self) -> dict[str, Parameter]:
        out = {f"encoder.{k}": p for k, p in self.encoder.items()}
        out.update({f"pos.{k}": p for k, p in self.pos.items()})
        for i, layer in enumerate(self.layers):
            out.update({f"layer{i}.{k}": p for k, p in layer.parameters().items()})
        return out

    def parameters(self) -> dict[str, Parameter]:
        return {"cls": self.cls, **self.frozen_parameters()}

    # -- patch embedding (frozen, so plain numpy) --------------------------------

    def embed(self, neighborhoods: np.ndarray) -> np.ndarray:
        """(..., M, k, 3) re-centred groups -> (..., M, D_tok) patch embeddings."""
        e = {k: p.data for k, p in self.encoder.items()}
        f = np.maximum(neighborhoods @ e["e1_w"] + e["e1_b"], 0.0)
        f = f @ e["e2_w"] + e["e2_b"]
        glob = f.max(axis=-2, keepdims=True)
        f = np.concatenate([np.broadcast_to(glob, f.shape), f], axis=-1)
        f = np.maximum(f @ e["e3_w"] + e["e3_b"], 0.0)
        f = f @ e["e4_w"] + e["e4_b"]
        return f.max(axis=-2)

    def patchify(self, points, seed_index: int = 0) -> PatchSet:
        ps = patchify(points, self.cfg.n_patches, self.cfg.k_patch, seed_index)
        ps.embeddings = self.embed(ps.neighborhoods)
        return ps

    def positional_encode(self, centers) -> Tensor:
        p = self.pos
        h = nc.gelu(nc.linear(nc.Tensor(centers), p["p1_w"], p["p1_b"]))
        return nc.linear(h, p["p2_w"], p["p2_b"])

    # -- transformer --------------------------------------------------------------

    def _attention(self, x: Tensor, layer: _Layer) -> Tensor:
        *lead, n, D = x.shape
        heads = self.cfg.n_heads
        dh = D // heads
        qkv = nc.linear(x, layer.qkv_w, layer.qkv_b)

        def split(t):
            return t.reshape(tuple(lead) + (n, heads, dh)).swapaxes(-3, -2)

        q, k, v = split(qkv[..., :D]), split(qkv[..., D:2 * D]), split(qkv[..., 2 * D:])
        att = nc.softmax_rows(nc.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh)))
        out = nc.matmul(att, v).swapaxes(-3, -2).reshape(tuple(lead) + (n, D))
        return nc.linear(out, layer.proj_w, layer.proj_b)

    def _ffn(self, x: Tensor, layer: _Layer) -> Tensor:
        return nc.linear(nc.gelu(nc.linear(x, layer.fc1_w, layer.fc1_b)), layer.fc2_w, layer.fc2_b)

    def forward(self, embeddings, centers) -> LayerHarvest:
        """Run all layers on (..., M, D) embeddings; record every layer's tokens and CLS."""
        emb = np.asarray(embeddings, dtype=nc.current_dtype())
        centers = np.asarray(centers, dtype=np.float64)
        lead = emb.shape[:-2]
        D = self.cfg.d_tok
        pos = self.positional_encode(centers)
        pos = nc.concat([np.zeros(lead + (1, D)), pos], axis=-2)
        cls = nc.reshape(self.cls, (1,) * (len(lead) + 1) + (D,)) + np.zeros(lead + (1, D))
        x = nc.concat([cls, emb], axis=-2)
        tokens, cls_out = [], []
        for layer in self.layers:
            x = x + pos
            x = x + self._attention(nc.layer_norm(x, layer.ln1_w, layer.ln1_b), layer)
            x = x + self._ffn(nc.layer_norm(x, layer.ln2_w, layer.ln2_b), layer)
            tokens.append(x[..., 1:, :])
            cls_out.append(x[..., 0, :])
        return LayerHarvest(tokens, cls_out, centers)

    def __call__(self, points, seed_index: int = 0) -> LayerHarvest:
        ps = self.patchify(points, seed_index)
        return self.forward(ps.embeddings, ps.centers)


# ---------------------------------------------------------------------------
# feature files


def dump_features(harvest: LayerHarvest, path) -> None:
    """Write a single-cloud harvest as little-endian float32 (see README for the layout)."""
    tokens = np.stack([np.asarray(t.data) for t in harvest.tokens])
    cls = np.stack([np.asarray(c.data) for c in harvest.cls])
    centers = np.asarray(harvest.centers)
    if tokens.ndim != 3:
        raise ValueError("dump_features takes an unbatched harvest (L, M, D)")
    L, M, D = tokens.shape
    if max(L, M, D) > 0xFFFF:
        raise FeatureFormatError(f"dimension overflow L={L} M={M} D={D}", 0)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, 0, L, M, D, 0))
        for arr in (tokens, cls, centers):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_features(path) -> LayerHarvest:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FeatureFormatError(f"truncated header: {len(raw)} of {HEADER.size} bytes", len(raw))
    magic, version, _, L, M, D, _ = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"unsupported version {version}", 4)
    if L == 0 or M == 0 or D == 0:
        raise FeatureFormatError(f"empty dimension L={L} M={M} D={D}", 8)
    counts = (L * M * D, L * D, M * 3)
    expected = HEADER.size + 4 * sum(counts)
    if len(raw) != expected:
        raise FeatureFormatError(f"payload size {len(raw)} != expected {expected}", min(len(raw), expected))
    offset = HEADER.size
    arrays = []
    for n in counts:
        arrays.append(np.frombuffer(raw, dtype="<f4", count=n, offset=offset).astype(np.float64))
        offset += 4 * n
    tokens = arrays[0].reshape(L, M, D)
    cls = arrays[1].reshape(L, D)
    return LayerHarvest([Tensor(t) for t in tokens], [Tensor(c) for c in cls], arrays[2].reshape(M, 3))


def feature_file_size(L: int, M: int, D: int) -> int:
    return HEADER.size + 4 * (L * M * D + L * D + M * 3)
