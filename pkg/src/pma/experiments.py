"""Layer probe, component ablation and ordering benchmark, plus their CSV/JSON reports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import ORDERINGS, PointMambaAdapter, count_trainable
from .train import RunConfig, featurize, fit_head, layer_features, make_datasets, train

log = logging.getLogger(__name__)

ABLATION_ROWS = (
    ("none", dict(adapter_enabled=False, gate_prompt_enabled=False, reorder_enabled=False)),
    ("adapter", dict(adapter_enabled=True, gate_prompt_enabled=False, reorder_enabled=False)),
    ("adapter+prompt", dict(adapter_enabled=True, gate_prompt_enabled=True, reorder_enabled=False)),
    ("adapter+prompt+reorder", dict(adapter_enabled=True, gate_prompt_enabled=True, reorder_enabled=True)),
)
BENCH_ORDERINGS = ("x", "y", "z", "hilbert", "morton", "learned")


def _seed_columns(cfg: RunConfig) -> list[str]:
    return [f"acc_seed{s}" for s in cfg.seeds]


def _row(key: dict, accs: list[float], cfg: RunConfig, **extra) -> dict:
    row = dict(key)
    row["mean_acc"] = float(np.mean(accs))
    row.update({c: float(a) for c, a in zip(_seed_columns(cfg), accs)})
    row.update(extra)
    return row


def _frozen_features(cfg: RunConfig, data=None):
    data = data if data is not None else make_datasets(cfg)
    model = PointMambaAdapter(cfg.pma_config(), backbone_seed=cfg.backbone_seed, model_seed=cfg.model_seed)
    return model, featurize(model, data[0]), featurize(model, data[1])


def layer_probe(cfg: RunConfig, data=None) -> list[dict]:
    """Head-only accuracy on pooled tokens after the first n frozen layers, n = 0..L."""
    model, tr, te = _frozen_features(cfg, data)
    rows = []
    for n in range(cfg.n_layers + 1):
        x_tr, x_te = layer_features(model, tr, n), layer_features(model, te, n)
        accs = [fit_head(x_tr, tr.labels, x_te, te.labels, cfg, seed) for seed in cfg.seeds]
        log.info("layer probe n=%d: %.3f", n, np.mean(accs))
        rows.append(_row({"n_layers": n}, accs, cfg))
    return rows


def linear_probe(cfg: RunConfig, seed: int, data=None) -> float:
    """The no-adapter baseline: a task head trained on pooled final-layer frozen tokens."""
    model, tr, te = _frozen_features(cfg, data)
    n = cfg.n_layers
    return fit_head(layer_features(model, tr, n), tr.labels, layer_features(model, te, n), te.labels, cfg, seed)


def _train_rows(cfg: RunConfig, variants, key_name: str, data=None) -> list[dict]:
    data = data if data is not None else make_datasets(cfg)
    rows = []
    for name, changes in variants:
        run_cfg = cfg.replace(**changes)
        accs, n_params = [], 0
        for seed in cfg.seeds:
            model, rec = train(run_cfg, seed, data)
            accs.append(rec.final_test_acc)
            n_params = count_trainable(model)["trainable_total"]
        log.info("%s=%s: %.3f", key_name, name, np.mean(accs))
        rows.append(_row({key_name: name}, accs, cfg, trainable_params=n_params))
    return rows


def ablate(cfg: RunConfig, data=None) -> list[dict]:
    """The four component rows: none, adapter, +gate prompt, +learned reorder."""
    variants = [(name, {**ch, "ordering": "learned"}) for name, ch in ABLATION_ROWS]
    return _train_rows(cfg, variants, "components", data)


def order_bench(cfg: RunConfig, data=None) -> list[dict]:
    """One row per ordering strategy; adapter and gate prompt stay on."""
    assert set(BENCH_ORDERINGS) == set(ORDERINGS)
    variants = [
        (o, dict(ordering=o, adapter_enabled=True, gate_prompt_enabled=True, reorder_enabled=True))
        for o in BENCH_ORDERINGS
    ]
    return _train_rows(cfg, variants, "ordering", data)


def desk_learning(cfg: RunConfig, data=None) -> dict:
    """Full PMA against the linear probe on shared data, per seed."""
    data = data if data is not None else make_datasets(cfg)
    full = cfg.replace(adapter_enabled=True, gate_prompt_enabled=True, reorder_enabled=True, ordering="learned")
    pma = [train(full, seed, data)[1].final_test_acc for seed in cfg.seeds]
    probe = [linear_probe(cfg, seed, data) for seed in cfg.seeds]
    return {
        "seeds": list(cfg.seeds),
        "pma_acc": pma,
        "probe_acc": probe,
        "pma_mean": float(np.mean(pma)),
        "probe_mean": float(np.mean(probe)),
        "gap_points": 100.0 * (float(np.mean(pma)) - float(np.mean(probe))),
    }


# ---------------------------------------------------------------------------
# reports


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])


def write_summary(name: str, rows: list[dict], cfg: RunConfig, path) -> None:
    doc = {"experiment": name, "config": asdict(cfg), "rows": rows}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
