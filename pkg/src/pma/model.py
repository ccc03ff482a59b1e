"""The Point Mamba Adapter: per-layer G2PG, ordered multi-layer sequence, prompted adapter, head."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .backbone import Backbone, BackboneConfig, LayerHarvest
from .g2pg import G2PG
from .geometry import static_order
from .numcore import Parameter, Tensor
from .sscan import MambaBlock

ORDERINGS = ("learned", "x", "y", "z", "hilbert", "morton")
GROUPS = ("cls", "g2pg", "adapter", "head")


@dataclass
class PmaConfig:
    n_layers: int = 4
    n_patches: int = 32
    d_tok: int = 48
    n_heads: int = 4
    k_patch: int = 16
    s_state: int = 16
    s_prompt: int | None = None  # defaults to n_patches
    k: int = 4
    d_hid: int | None = None  # defaults to d_tok // 4
    expand: int = 2
    adapter_depth: int = 1
    head_hidden: int = 64
    n_classes: int = 4
    ordering: str = "learned"
    adapter_enabled: bool = True
    gate_prompt_enabled: bool = True
    reorder_enabled: bool = True
    curve_bits: int = 10
    euler_b: bool = False

    def __post_init__(self):
        if self.s_prompt is None:
            self.s_prompt = self.n_patches
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        if self.ordering == "learned" and self.reorder_enabled and self.s_prompt < self.n_patches:
            raise ValueError("learned ordering needs s_prompt >= n_patches")
        if not 1 <= self.k <= self.n_patches:
            raise ValueError(f"k={self.k} must lie in [1, n_patches]")
        if self.n_layers < 1 or self.adapter_depth < 1:
            raise ValueError("n_layers and adapter_depth must be >= 1")

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            n_layers=self.n_layers, d_tok=self.d_tok, n_heads=self.n_heads,
            n_patches=self.n_patches, k_patch=self.k_patch,
        )

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def pool_rows(y: Tensor) -> Tensor:
    """concat(max, mean) over the row axis."""
    return nc.concat([nc.reduce_max(y, axis=-2), nc.reduce_mean(y, axis=-2)], axis=-1)


def identity_orders(n_layers: int, lead: tuple[int, ...], m: int) -> list[np.ndarray]:
    ident = np.broadcast_to(np.arange(m), lead + (m,))
    return [ident] * n_layers


def build_sequence(tokens, prompts, orders):
    """Reorder each layer's rows by its permutation and stack layers in ascending order.

    Returns (sequence, prompt or None, layer_ranges).
    """
    seq_parts, prompt_parts, ranges = [], [], []
    start = 0
    for i, t in enumerate(tokens):
        seq_parts.append(nc.gather_rows(t, orders[i]))
        if prompts is not None:
            prompt_parts.append(nc.gather_rows(prompts[i], orders[i]))
        m = t.shape[-2]
        ranges.append((start, start + m))
        start += m
    seq = nc.concat_rows(seq_parts)
    prompt = nc.concat_rows(prompt_parts) if prompts is not None else None
    return seq, prompt, ranges


class PointMambaAdapter:
    def __init__(self, cfg: PmaConfig | None = None, backbone_seed: int = 0, model_seed: int = 0):
        self.cfg = cfg = cfg or PmaConfig()
        self.backbone_seed, self.model_seed = backbone_seed, model_seed
        self.backbone = Backbone(cfg.backbone_config(), seed=backbone_seed)
        rng = np.random.default_rng(model_seed)
        self.g2pg = G2PG(cfg.d_tok, cfg.s_prompt, cfg.s_state, k=cfg.k, d_hid=cfg.d_hid, rng=rng)
        self.blocks = [
            MambaBlock(cfg.d_tok, cfg.s_state, cfg.expand, rng=rng, euler=cfg.euler_b)
            for _ in range(cfg.adapter_depth)
        ]
        D = cfg.d_tok
        self.head_in = D + 4 * D  # [C_N; F_last; F_pre], each pool is max||mean
        self.head = {
            "fc1_w": Parameter(rng.normal(0, 1 / math.sqrt(self.head_in), (self.head_in, cfg.head_hidden)), name="fc1_w"),
            "fc1_b": Parameter(np.zeros(cfg.head_hidden), name="fc1_b"),
            "fc2_w": Parameter(rng.normal(0, 1 / math.sqrt(cfg.head_hidden), (cfg.head_hidden, cfg.n_classes)), name="fc2_w"),
            "fc2_b": Parameter(np.zeros(cfg.n_classes), name="fc2_b"),
        }
        # components an ablation switches off are frozen so they do not inflate the trainable count;
        # without the adapter the CLS token is frozen too, leaving a head on frozen features
        if not cfg.adapter_enabled:
            self.set_group_trainable("adapter", False)
            self.set_group_trainable("cls", False)
        if not self.uses_g2pg():
            self.set_group_trainable("g2pg", False)

    def uses_g2pg(self) -> bool:
        c = self.cfg
        prompt = c.adapter_enabled and c.gate_prompt_enabled
        return prompt or (c.reorder_enabled and c.ordering == "learned")

    # -- parameters ---------------------------------------------------------------

    def groups(self) -> dict[str, dict[str, Parameter]]:
        adapter = {}
        for i, blk in enumerate(self.blocks):
            adapter.update({f"block{i}.{k}": p for k, p in blk.parameters().items()})
        return {
            "cls": {"cls": self.backbone.cls},
            "g2pg": self.g2pg.parameters(),
            "adapter": adapter,
            "head": dict(self.head),
            "backbone": self.backbone.frozen_parameters(),
        }

    def named_parameters(self) -> dict[str, Parameter]:
        return {f"{g}.{k}": p for g, ps in self.groups().items() for k, p in ps.items()}

    def trainable_parameters(self) -> dict[str, Parameter]:
        return {k: p for k, p in self.named_parameters().items() if p.trainable}

    def set_group_trainable(self, group: str, flag: bool) -> None:
        for p in self.groups()[group].values():
            p.set_trainable(flag)

    # -- forward ---------------------------------------------------------------------

    def layer_orders(self, centers: np.ndarray, g2pg_orders=None) -> list[np.ndarray]:
        c = self.cfg
        centers = np.asarray(centers)
        lead, m = centers.shape[:-2], centers.shape[-2]
        if not c.reorder_enabled:
            return identity_orders(c.n_layers, lead, m)
        if c.ordering == "learned":
            return g2pg_orders
        flat = centers.reshape(-1, m, 3)
        order = np.stack([static_order(p, c.ordering, c.curve_bits) for p in flat]).reshape(lead + (m,))
        return [order] * c.n_layers

    def forward(
        self,
        embeddings=None,
        centers=None,
        *,
        harvest: LayerHarvest | None = None,
        orders=None,
        neighbors=None,
    ) -> Tensor:
        """Class logits. Pass patch embeddings + centers, or a precomputed harvest.

        ``orders`` overrides the per-layer permutations; ``neighbors`` lets the
        caller reuse a cached KNN table over the centers.
        """
        c = self.cfg
        if harvest is None:
            harvest = self.backbone.forward(embeddings, centers)
        centers = np.asarray(harvest.centers)
        L = harvest.n_layers
        if L != c.n_layers:
            raise ValueError(f"harvest stage: {L} layers, config expects {c.n_layers}")
        m, d = harvest.tokens[0].shape[-2:]
        if (m, d) != (c.n_patches, c.d_tok):
            raise ValueError(f"harvest stage: tokens are {m}x{d}, config expects {c.n_patches}x{c.d_tok}")
        lead = harvest.tokens[0].shape[:-2]

        outs = None
        need_prompt = c.adapter_enabled and c.gate_prompt_enabled
        need_order = orders is None and c.reorder_enabled and c.ordering == "learned"
        if need_prompt or need_order:
            if neighbors is None:
                neighbors = self.g2pg.neighbors(centers)
            version = self.g2pg.version()
            outs = [self.g2pg(t, centers, neighbors, expected_version=version) for t in harvest.tokens]
        if orders is None:
            orders = self.layer_orders(centers, [o.order for o in outs] if outs else None)
        if len(orders) != L:
            raise ValueError(f"sequence stage: {len(orders)} orders for {L} layers")

        prompts = None
        if c.adapter_enabled:
            if c.gate_prompt_enabled:
                prompts = [o.prompt for o in outs]
            else:
                prompts = [Tensor(np.zeros(lead + (m, c.s_state)))] * L
        seq, prompt, ranges = build_sequence(harvest.tokens, prompts, orders)

        y = seq
        if c.adapter_enabled:
            for blk in self.blocks:
                y = blk(y, prompt)

        last_start = ranges[-1][0]
        f_last = pool_rows(y[..., last_start:, :])
        if L > 1 and c.adapter_enabled:
            f_pre = pool_rows(y[..., :last_start, :])
        else:
            # no adapter means no fused earlier-layer features: the head sees the final layer only
            f_pre = Tensor(np.zeros(lead + (2 * d,)))
        head_in = nc.concat([harvest.cls[-1], f_last, f_pre], axis=-1)
        if head_in.shape[-1] != self.head_in:
            raise ValueError(f"head stage: input width {head_in.shape[-1]} != {self.head_in}")
        single = head_in.ndim == 1
        if single:
            head_in = nc.reshape(head_in, (1, self.head_in))
        h = nc.gelu(nc.linear(head_in, self.head["fc1_w"], self.head["fc1_b"]))
        out = nc.linear(h, self.head["fc2_w"], self.head["fc2_b"])
        return nc.reshape(out, (c.n_classes,)) if single else out

    __call__ = forward

    def loss(self, embeddings, centers, labels, **kw) -> Tensor:
        return nc.cross_entropy(self.forward(embeddings, centers, **kw), labels)

    # -- persistence -------------------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        """Store trainable parameters, config and seeds; the frozen backbone is rebuilt from its seed."""
        meta = {
            "config": asdict(self.cfg),
            "backbone_seed": self.backbone_seed,
            "model_seed": self.model_seed,
            **(extra or {}),
        }
        arrays = {k: p.data for k, p in self.named_parameters().items() if not k.startswith("backbone.")}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> tuple[PointMambaAdapter, dict]:
        with np.load(Path(path)) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            model = cls(PmaConfig(**meta["config"]), meta["backbone_seed"], meta["model_seed"])
            params = model.named_parameters()
            for k in z.files:
                if k != "__meta__":
                    params[k].assign(z[k])
        return model, meta


def count_trainable(model: PointMambaAdapter) -> dict[str, int]:
    """Scalar counts per group; ``trainable_total`` excludes the frozen backbone."""
    report = {}
    total = 0
    for group, params in model.groups().items():
        n_all = sum(p.data.size for p in params.values())
        n_train = sum(p.data.size for p in params.values() if p.trainable)
        if group == "backbone":
            report["frozen_backbone"] = n_all - n_train
            report["backbone_trainable"] = n_train
        else:
            report[group] = n_train
        total += n_train
    report["trainable_total"] = total
    return report


def pma_forward(inputs, model: PointMambaAdapter) -> Tensor:
    """Logits from a point cloud (N x 3) or a LayerHarvest."""
    if isinstance(inputs, LayerHarvest):
        return model.forward(harvest=inputs)
    ps = model.backbone.patchify(inputs)
    return model.forward(ps.embeddings, ps.centers)
