"""Finite-difference gradient suites used by ``pma gradcheck`` and the tests."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .g2pg import G2PG
from .model import PmaConfig, PointMambaAdapter
from .sscan import MambaBlock, SelectiveInputs, SsmParams, selective_scan

TOY = dict(n_layers=2, n_patches=8, d_tok=16, n_heads=2, k_patch=8, s_state=8, k=3, head_hidden=16)


def toy_model(seed: int = 0, **overrides) -> PointMambaAdapter:
    return PointMambaAdapter(PmaConfig(**{**TOY, **overrides}), backbone_seed=seed, model_seed=seed + 1)


def toy_batch(model: PointMambaAdapter, n: int = 2, n_points: int = 64, seed: int = 0):
    rng = np.random.default_rng(seed)
    patches = [model.backbone.patchify(rng.uniform(-0.5, 0.5, (n_points, 3))) for _ in range(n)]
    emb = np.stack([p.embeddings for p in patches])
    centers = np.stack([p.centers for p in patches])
    labels = np.arange(n) % model.cfg.n_classes
    return emb, centers, labels


def full_model_check(seed: int = 0, step: float = 1e-5, tol: float = 1e-4) -> list[nc.ParamCheck]:
    """Every trainable parameter of a small end-to-end model against central differences."""
    model = toy_model(seed)
    emb, centers, labels = toy_batch(model, seed=seed)
    neighbors = model.g2pg.neighbors(centers)
    return nc.grad_check(
        lambda: model.loss(emb, centers, labels, neighbors=neighbors),
        model.trainable_parameters(),
        step=step,
        tol=tol,
    )


def component_checks(seed: int = 0, tol: float = 1e-4) -> dict[str, list[nc.ParamCheck]]:
    rng = np.random.default_rng(seed)
    out = {}

    T, E, S = 6, 3, 4
    scan_params = {
        "x": rng.normal(size=(T, E)), "a_log": rng.uniform(-1, 1, S), "d": rng.normal(size=E),
        "delta": rng.uniform(0.05, 1.0, T), "b": rng.normal(size=(T, S)), "c": rng.normal(size=(T, S)),
        "prompt": rng.normal(size=(T, S)),
    }
    sp = {k: nc.Parameter(v, name=k) for k, v in scan_params.items()}
    w = rng.normal(size=(T, E))

    def scan_loss():
        y = selective_scan(sp["x"], SsmParams(sp["a_log"], sp["d"]),
                           SelectiveInputs(sp["delta"], sp["b"], sp["c"]), sp["prompt"])
        return (y * w).sum()

    out["selective_scan"] = nc.grad_check(scan_loss, sp, tol=tol)

    block = MambaBlock(8, d_state=4, prompt_width=5, rng=rng)
    x, p = rng.normal(size=(6, 8)), rng.normal(size=(6, 5))
    wb = rng.normal(size=(6, 8))
    out["mamba_block"] = nc.grad_check(lambda: (block(x, p) * wb).sum(), block.parameters(), tol=tol)

    g = G2PG(16, 8, 8, k=3, rng=rng)
    tokens, centers = rng.normal(size=(8, 16)), rng.uniform(size=(8, 3))
    wd, wp = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))

    def g2pg_loss():
        o = g(tokens, centers)
        return (o.distribution * wd).sum() + (o.prompt * wp).sum()

    out["g2pg"] = nc.grad_check(g2pg_loss, g.parameters(), tol=tol)
    return out


def format_report(title: str, report: list[nc.ParamCheck]) -> list[str]:
    lines = [f"[{title}]"]
    for r in report:
        extra = f" skipped={r.skipped_discrete}" if r.skipped_discrete else ""
        lines.append(f"  {r.name:<28} {r.status:<17} max_rel_err={r.max_rel_err:.2e} n={r.checked}{extra}")
    return lines
