import copy
import json

import numpy as np
import pytest

from cel.harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    SeedResult,
    aggregate,
    compare,
    format_comparison,
    load_data,
    run_cel,
    run_normal,
)
from cel.trainer import Checkpoint

BASE = {
    "data": {
        "source": "blobs",
        "blobs": {"num_classes": 4, "per_class_count": 30, "feature_dim": 3, "overlap_pairs": [[1, 3]], "seed": 2},
        "test_fraction": 0.3,
    },
    "scorer": {"hidden": [6], "train": {"batch_size": 16, "initial_lr": 0.05}},
    "model": {"hidden": [8], "train": {"batch_size": 16, "initial_lr": 0.05}},
    "order": "distance",
    "num_stages": 2,
    "final_epochs": 4,
    "lambda": 2,
    "seeds": [0, 1],
}


def make(**overrides):
    raw = copy.deepcopy(BASE)
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        make(epochz=3)
    raw = copy.deepcopy(BASE)
    raw["data"]["blobs"]["colour"] = 1
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict(raw)
    raw = copy.deepcopy(BASE)
    raw["model"]["train"]["momentun"] = 0.5
    cfg = ExperimentConfig.from_dict(raw)
    with pytest.raises(ConfigError, match="unknown"):
        cfg.model.train_config(1, 0)


@pytest.mark.parametrize("bad", [dict(seeds=[]), dict(order="sideways"), dict(num_stages=0),
                                 dict(final_epochs=0), {"lambda": 0.5}, dict(normal_epochs="lots")])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        make(**bad)


def test_load_from_file_resolves_paths(tmp_path):
    csv = tmp_path / "d.csv"
    rows = ["label,a,b"] + [f"{'xy'[i % 2]},{i % 2 + 0.01 * i},{-(i % 2)}" for i in range(20)]
    csv.write_text("\n".join(rows) + "\n")
    (tmp_path / "c.json").write_text(json.dumps({**BASE, "data": {"source": "csv", "csv_path": "d.csv"}}))
    cfg = ExperimentConfig.load(tmp_path / "c.json")
    train, test = load_data(cfg)
    assert train.class_names == ("x", "y") and len(train) + len(test) == 20
    # centered on the training split
    np.testing.assert_allclose(train.features.mean(axis=0), 0.0, atol=1e-12)


def test_k1_cel_equals_normal():
    cfg = make(num_stages=1)
    a, b = run_normal(cfg), run_cel(cfg)
    assert [r.outcome() for r in a.runs] == [r.outcome() for r in b.runs]
    assert a.aggregate == b.aggregate


def test_reports_are_reproducible(tmp_path):
    cfg = make()
    run_cel(cfg, tmp_path / "a")
    run_cel(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    for rel in ["seed_0/ordering.csv", "seed_0/schedule.json", "seed_1/stage_2/metrics.jsonl",
                "seed_1/stage_2/checkpoint.json"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_output_layout_and_warm_start(tmp_path):
    report = run_cel(make(), tmp_path)
    seed_dir = tmp_path / "seed_1"
    lines = (seed_dir / "stage_1" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2  # round(4 / 2) early-stage epochs
    assert set(json.loads(lines[0])) == {"epoch", "train_loss", "val_loss", "accuracy", "per_class_error"}
    sched = json.loads((seed_dir / "schedule.json").read_text())
    assert [s["epochs"] for s in sched["stages"]] == [2, 4]
    ck1 = Checkpoint.load(seed_dir / "stage_1" / "checkpoint.json")
    ck2 = Checkpoint.load(seed_dir / "stage_2" / "checkpoint.json")
    assert (ck1.stage, ck1.epoch, ck2.stage, ck2.epoch) == (1, 2, 2, 6)
    loaded = ExperimentReport.load(tmp_path / "report.json")
    assert loaded.to_dict() == json.loads(report.to_json())


def test_measured_cost_and_orderings():
    cfg = make(num_stages=4, **{"lambda": 4}, final_epochs=8)
    rep = run_cel(cfg)
    for r in rep.runs:
        assert r.measured_cost == pytest.approx((4 - 1) / (2 * 4) + 1, abs=1e-9)
        assert r.stage_epochs == [2, 2, 2, 8]
    assert run_cel(make(order="natural")).runs[0].ordering == [0, 1, 2, 3]
    r0 = run_cel(make(order="random")).runs
    assert sorted(r0[0].ordering) == [0, 1, 2, 3]
    assert r0[0].ordering == run_cel(make(order="random")).runs[0].ordering


def test_entropy_ordering_runs():
    rep = run_cel(make(order="entropy", seeds=[3]))
    assert sorted(rep.runs[0].ordering) == [0, 1, 2, 3]


def test_equal_cost_normal_ablation():
    cfg = make(num_stages=4, **{"lambda": 4}, final_epochs=8, normal_epochs="match_cel", seeds=[0])
    rep = run_normal(cfg)
    assert rep.runs[0].stage_epochs == [11]  # 1.375 * 8
    assert rep.runs[0].measured_cost == pytest.approx(11 / 8)


def test_aggregate_statistics():
    cfg = make()
    rep = run_cel(cfg)
    errs = [r.test_error for r in rep.runs]
    assert abs(rep.aggregate["mean_test_error"] - sum(errs) / len(errs)) <= 1e-12
    assert rep.aggregate["best_test_error"] == min(errs)
    assert rep.aggregate["std_test_error"] == pytest.approx(np.std(errs, ddof=1))
    for r in rep.runs:
        counts = np.array([9, 9, 9, 9])  # 30 per class, 0.3 to test
        assert abs(np.dot(r.per_class_error, counts) / counts.sum() - r.test_error) <= 1e-12


def _fake(mode, per_class, seed=0, ordering=(2, 0, 1, 3), counts=(2, 4)):
    err = float(np.mean(per_class))
    run = SeedResult(seed, list(ordering), list(counts), [1, 1], err, list(per_class), 1.0, "x", [])
    return ExperimentReport(mode, "distance", ["a", "b", "c", "d"], [run], aggregate([run]))


def test_compare_identity_and_injected_delta():
    a = _fake("normal", [0.1, 0.2, 0.3, 0.4], counts=(4,))
    c = compare(a, a)
    assert c.overall_delta == 0 and c.per_class_delta == [0, 0, 0, 0]
    b = _fake("cel", [0.1, 0.2, 0.25, 0.4])
    c = compare(a, b)
    np.testing.assert_allclose(c.per_class_delta, [0, 0, -0.05, 0], atol=1e-15)
    assert c.overall_delta == pytest.approx(-0.0125)
    assert c.preferred_classes == [0, 2]
    assert c.per_seed[0]["preferred_classes"] == [2, 0]
    text = format_comparison(a, b, c)
    assert "c*" in text and "overall" in text


def test_compare_rejects_mismatched_vocabularies():
    a = _fake("normal", [0.1] * 4)
    b = _fake("cel", [0.1] * 4)
    b.class_names = ["a", "b", "c", "e"]
    with pytest.raises(ValueError, match="vocabular"):
        compare(a, b)
