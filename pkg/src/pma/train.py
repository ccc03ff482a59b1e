"""Run configuration, feature caching, and the fine-tuning / evaluation loops."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .data import SyntheticDataset, generate_dataset
from .model import PmaConfig, PointMambaAdapter, count_trainable, pool_rows

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass
class RunConfig:
    # model (mirrors PmaConfig)
    n_layers: int = 4
    n_patches: int = 32
    d_tok: int = 48
    n_heads: int = 4
    k_patch: int = 16
    s_state: int = 16
    s_prompt: int | None = None
    k: int = 4
    d_hid: int | None = None
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
    # optimisation
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # data and seeds
    n_train: int = 400
    n_test: int = 100
    n_points: int = 512
    noise: float = 0.02
    rotate: bool = True
    keep: float = 1.0
    dataset_seed: int = 0
    backbone_seed: int = 0
    model_seed: int = 1
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])

    def pma_config(self) -> PmaConfig:
        names = PmaConfig.field_names()
        return PmaConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def validate(self) -> RunConfig:
        try:
            self.pma_config()
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None
        if self.epochs < 0 or self.batch_size < 1 or self.n_train < 1 or self.n_test < 1:
            raise ConfigError("epochs must be >= 0; batch_size, n_train, n_test >= 1")
        if self.noise < 0 or self.lr <= 0:
            raise ConfigError("noise must be >= 0 and lr > 0")
        if not 0.0 < self.keep <= 1.0:
            raise ConfigError("keep must be in (0, 1]")
        if self.n_patches > self.n_points or self.k_patch > self.n_points:
            raise ConfigError("n_patches and k_patch must not exceed n_points")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        return self

    def replace(self, **changes) -> RunConfig:
        return RunConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**raw).validate()
        except TypeError as err:
            raise ConfigError(str(err)) from None

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        return cls.from_dict(raw)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))


@dataclass
class Features:
    """Frozen per-cloud inputs: patch embeddings, centers, and the center KNN table."""

    embeddings: np.ndarray  # (n, M, D)
    centers: np.ndarray  # (n, M, 3)
    neighbors: np.ndarray  # (n, M, k)
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx):
        return self.embeddings[idx], self.centers[idx], self.neighbors[idx], self.labels[idx]


@dataclass
class MetricsRecord:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    trainable_params: int = 0

    @property
    def final_test_acc(self) -> float:
        return self.test_acc[-1]

    def csv_rows(self) -> list[list]:
        # wall time stays out of the CSV so reruns are byte-identical
        return [
            [e, f"{l:.10f}", f"{a:.6f}", f"{t:.6f}"]
            for e, l, a, t in zip(self.epoch, self.train_loss, self.train_acc, self.test_acc)
        ]


CSV_HEADER = ["epoch", "train_loss", "train_acc", "test_acc"]

_feature_cache: dict = {}


def featurize(model: PointMambaAdapter, ds: SyntheticDataset) -> Features:
    """Patchify and embed every cloud once; the encoder is frozen so this is reusable."""
    key = (model.backbone_seed, repr(model.cfg.backbone_config()), model.cfg.k, ds.clouds.shape,
           hash(ds.clouds.tobytes()))
    if key in _feature_cache:
        emb, cen, nbr = _feature_cache[key]
    else:
        patches = [model.backbone.patchify(c) for c in ds.clouds]
        emb = np.stack([p.embeddings for p in patches])
        cen = np.stack([p.centers for p in patches])
        nbr = model.g2pg.neighbors(cen)
        _feature_cache[key] = (emb, cen, nbr)
    return Features(emb, cen, nbr, np.asarray(ds.labels))


def make_datasets(cfg: RunConfig) -> tuple[SyntheticDataset, SyntheticDataset]:
    opts = dict(n_points=cfg.n_points, noise=cfg.noise, rotate=cfg.rotate, keep=cfg.keep)
    train = generate_dataset(cfg.n_train, cfg.dataset_seed, "train", **opts)
    test = generate_dataset(cfg.n_test, cfg.dataset_seed, "test", **opts)
    return train, test


def evaluate(model: PointMambaAdapter, feats: Features, batch_size: int = 50) -> tuple[float, float]:
    """(mean loss, accuracy) without recording a graph."""
    total_loss, correct = 0.0, 0
    for s in range(0, len(feats), batch_size):
        emb, cen, nbr, y = feats.batch(slice(s, s + batch_size))
        logits = model.forward(emb, cen, neighbors=nbr).data
        total_loss += float(nc.cross_entropy(logits, y).data) * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    return total_loss / len(feats), correct / len(feats)


def _check_finite(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss during {where}")


def fit(
    model: PointMambaAdapter,
    train: Features,
    test: Features,
    cfg: RunConfig,
    seed: int,
    max_steps: int | None = None,
) -> MetricsRecord:
    """Adam on the model's trainable partition. Epoch 0 is the untrained evaluation."""
    rng = np.random.default_rng([seed, 7])
    params = list(model.trainable_parameters().values())
    rec = MetricsRecord(trainable_params=count_trainable(model)["trainable_total"])
    start = time.perf_counter()

    loss0, acc0 = evaluate(model, train)
    _check_finite(loss0, "initial evaluation")
    rec.epoch.append(0)
    rec.train_loss.append(loss0)
    rec.train_acc.append(acc0)
    rec.test_acc.append(evaluate(model, test)[1])
    rec.wall_time.append(time.perf_counter() - start)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(train))
        total, correct, n_seen = 0.0, 0, 0
        for s in range(0, len(perm), cfg.batch_size):
            emb, cen, nbr, y = train.batch(perm[s:s + cfg.batch_size])
            with nc.Graph() as graph:
                logits = model.forward(emb, cen, neighbors=nbr)
                loss = nc.cross_entropy(logits, y)
            _check_finite(float(loss.data), f"epoch {epoch}")
            graph.backward(loss)
            step += 1
            nc.adam_step(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, step)
            total += float(loss.data) * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            n_seen += len(y)
            if max_steps is not None and step >= max_steps:
                break
        rec.epoch.append(epoch)
        rec.train_loss.append(total / n_seen)
        rec.train_acc.append(correct / n_seen)
        rec.test_acc.append(evaluate(model, test)[1])
        rec.wall_time.append(time.perf_counter() - start)
        log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, rec.train_loss[-1], rec.train_acc[-1], rec.test_acc[-1])
        if max_steps is not None and step >= max_steps:
            break
    return rec


def train(cfg: RunConfig, seed: int | None = None, data=None) -> tuple[PointMambaAdapter, MetricsRecord]:
    cfg.validate()
    seed = cfg.model_seed if seed is None else seed
    model = PointMambaAdapter(cfg.pma_config(), backbone_seed=cfg.backbone_seed, model_seed=seed)
    train_ds, test_ds = data if data is not None else make_datasets(cfg)
    rec = fit(model, featurize(model, train_ds), featurize(model, test_ds), cfg, seed)
    return model, rec


# ---------------------------------------------------------------------------
# head-only probes on frozen features


class MlpHead:
    def __init__(self, d_in: int, hidden: int, n_classes: int, seed: int):
        rng = np.random.default_rng(seed)
        self.params = {
            "fc1_w": nc.Parameter(rng.normal(0, 1 / np.sqrt(d_in), (d_in, hidden)), name="fc1_w"),
            "fc1_b": nc.Parameter(np.zeros(hidden), name="fc1_b"),
            "fc2_w": nc.Parameter(rng.normal(0, 1 / np.sqrt(hidden), (hidden, n_classes)), name="fc2_w"),
            "fc2_b": nc.Parameter(np.zeros(n_classes), name="fc2_b"),
        }

    def __call__(self, x):
        p = self.params
        return nc.linear(nc.gelu(nc.linear(x, p["fc1_w"], p["fc1_b"])), p["fc2_w"], p["fc2_b"])


def fit_head(x_train, y_train, x_test, y_test, cfg: RunConfig, seed: int) -> float:
    """Train only a task head on fixed features; returns final test accuracy."""
    head = MlpHead(x_train.shape[-1], cfg.head_hidden, cfg.n_classes, seed)
    params = list(head.params.values())
    rng = np.random.default_rng([seed, 7])
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(y_train))
        for s in range(0, len(perm), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            with nc.Graph() as graph:
                loss = nc.cross_entropy(head(x_train[idx]), y_train[idx])
            _check_finite(float(loss.data), "head training")
            graph.backward(loss)
            step += 1
            nc.adam_step(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, step)
    pred = head(x_test).data.argmax(axis=1)
    return float((pred == y_test).mean())


def layer_features(model: PointMambaAdapter, feats: Features, n: int, batch_size: int = 100) -> np.ndarray:
    """Pooled (max || mean) tokens after the first ``n`` frozen layers; n = 0 is the raw patch embedding."""
    if n == 0:
        return pool_rows(nc.Tensor(feats.embeddings)).data
    out = []
    for s in range(0, len(feats), batch_size):
        harvest = model.backbone.forward(feats.embeddings[s:s + batch_size], feats.centers[s:s + batch_size])
        out.append(pool_rows(harvest.tokens[n - 1]).data)
    return np.concatenate(out)
