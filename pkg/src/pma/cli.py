"""Command-line entry point: ``pma <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checks, experiments
from .data import DataError, generate_dataset, load_dataset, save_dataset
from .model import PointMambaAdapter, count_trainable
from .train import CSV_HEADER, ConfigError, NumericError, RunConfig, evaluate, featurize, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("pma")


def _config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig().validate()


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _config(args.config)
    seed = cfg.model_seed if args.seed is None else args.seed
    out = _outdir(args.out)
    model, rec = train(cfg, seed)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        w.writerows(rec.csv_rows())
    summary = {
        "seed": seed,
        "final_test_acc": rec.final_test_acc,
        "final_train_loss": rec.train_loss[-1],
        "trainable_params": count_trainable(model),
        "wall_time_s": rec.wall_time[-1],
        "config": asdict(cfg),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    model.save(out / "model.npz", extra={"run_config": asdict(cfg)})
    print(f"test accuracy {rec.final_test_acc:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, meta = PointMambaAdapter.load(args.model)
    except (OSError, KeyError, ValueError) as err:
        raise DataError(f"cannot load model {args.model}: {err}") from None
    ds = load_dataset(args.data)
    if ds.clouds.shape[1] < max(model.cfg.n_patches, model.cfg.k_patch):
        raise DataError(f"clouds have {ds.clouds.shape[1]} points, too few for the model's patching")
    if ds.labels.min() < 0 or ds.labels.max() >= model.cfg.n_classes:
        raise DataError(f"labels outside [0, {model.cfg.n_classes})")
    loss, acc = evaluate(model, featurize(model, ds))
    if not np.isfinite(loss):
        raise NumericError("non-finite evaluation loss")
    result = {"model": str(args.model), "data": str(args.data), "n": len(ds), "loss": loss, "accuracy": acc}
    print(json.dumps(result, indent=2))
    if args.out:
        (_outdir(args.out) / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ok = True
    for title, report in checks.component_checks().items():
        print("\n".join(checks.format_report(title, report)))
        ok &= all(r.passed for r in report)
    if args.full:
        report = checks.full_model_check()
        print("\n".join(checks.format_report("full model (L=2, M=8, D_tok=16, S_state=8)", report)))
        ok &= all(r.passed for r in report)
    print("gradcheck", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def _experiment(name: str, fn, args) -> int:
    cfg = _config(args.config)
    rows = fn(cfg)
    out = _outdir(args.out)
    experiments.write_csv(rows, out / f"{name}.csv")
    experiments.write_summary(name, rows, cfg, out / f"{name}.json")
    for r in rows:
        print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _config(args.config)
    ds = generate_dataset(args.n, args.seed, args.split, cfg.n_points, cfg.noise, cfg.rotate, cfg.keep)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} {args.split} clouds to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pma", description="Point Mamba Adapter on synthetic point clouds")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune the trainable partition and save it")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="pma_out/train")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved model on a dataset directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--full", action="store_true", help="also check the whole toy model end to end")
    p.set_defaults(fn=cmd_gradcheck)

    for name, fn, help_ in (
        ("probe", experiments.layer_probe, "head-only accuracy vs number of frozen layers"),
        ("ablate", experiments.ablate, "component ablation rows"),
        ("order-bench", experiments.order_bench, "ordering strategy rows"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.add_argument("--out", default=f"pma_out/{name}")
        p.set_defaults(fn=lambda a, n=name.replace("-", "_"), f=fn: _experiment(n, f, a))

    p = sub.add_parser("gen-data", help="write a synthetic dataset as .xyz files + labels.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_gen_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
