import json

import numpy as np

from pma.experiments import ABLATION_ROWS, BENCH_ORDERINGS, layer_probe, linear_probe, write_csv, write_summary
from pma.train import RunConfig, make_datasets, train

SMALL = dict(
    n_layers=2, n_patches=8, d_tok=16, n_heads=2, k_patch=8, s_state=8, k=3, head_hidden=16,
    n_train=16, n_test=8, n_points=64, batch_size=8, epochs=2, seeds=[1, 2],
)


def test_probe_at_final_layer_is_the_linear_probe():
    cfg = RunConfig(**SMALL)
    data = make_datasets(cfg)
    rows = layer_probe(cfg, data)
    for seed in cfg.seeds:
        assert rows[-1][f"acc_seed{seed}"] == linear_probe(cfg, seed, data)


def test_probe_rows_are_accuracies():
    rows = layer_probe(RunConfig(**SMALL))
    assert len(rows) == 3
    for r in rows:
        assert all(0.0 <= r[k] <= 1.0 for k in r if k.startswith("acc") or k == "mean_acc")
        assert np.isclose(r["mean_acc"], np.mean([r["acc_seed1"], r["acc_seed2"]]))


def test_zero_epochs_is_evaluation_only():
    cfg = RunConfig(**{**SMALL, "epochs": 0})
    model, rec = train(cfg, 1)
    assert rec.epoch == [0] and len(rec.test_acc) == 1


def test_row_definitions():
    assert [name for name, _ in ABLATION_ROWS] == ["none", "adapter", "adapter+prompt", "adapter+prompt+reorder"]
    assert ABLATION_ROWS[0][1] == dict(adapter_enabled=False, gate_prompt_enabled=False, reorder_enabled=False)
    assert len(BENCH_ORDERINGS) == 6


def test_reports(tmp_path):
    rows = [{"ordering": "x", "mean_acc": 0.5, "acc_seed1": 0.5, "trainable_params": 10}]
    write_csv(rows, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == [
        "ordering,mean_acc,acc_seed1,trainable_params", "x,0.500000,0.500000,10",
    ]
    write_summary("order_bench", rows, RunConfig(**SMALL), tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["rows"] == rows and doc["config"]["n_layers"] == 2
