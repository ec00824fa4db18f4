"""
Tests for the experiment runner, seed aggregation, variant table, config
files and report generation.
"""
import io
import json
import os
import sys
import tempfile
from contextlib import redirect_stdout
from pathlib import Path

import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config_loader import apply_overrides, config_from_dict, load_config, save_config
from errors import ConfigError
from experiment import _init_worker, _worker_task, checkpoint_path, run_experiment, summarize
from har_fixture import write_har_tree
from har_loader import prepare_splits
from models import ExperimentConfig, ExperimentSummary, ModelConfig, RunRecord, TokenizerConfig, TrainConfig
from report_generator import FAIL, PASS, SKIP, WARN, ReportGenerator, acceptance_checks, summary_csv
from variant_mappings import PUBLISHED_RESULTS, VARIANT_MAP, all_variants, get_variant, variant_name

SMALL_MODEL = ModelConfig(d_model=16, n_heads=2, n_layers=1, ffn_dim=32)


def _record(variant: str, seed: int, acc: float, p=None) -> RunRecord:
    return RunRecord(variant=variant, seed=seed, test_accuracy=acc, final_test_accuracy=acc,
                     param_count=164430, learned_p={"3": p} if p else {})


def _summary(means) -> ExperimentSummary:
    """Two seeds per variant spread +/- 0.001 around the given means."""
    records = []
    for name, mean in means.items():
        p = [3.0] * 8 if name.endswith("gem") else None
        records += [_record(name, 0, mean - 0.001, p), _record(name, 1, mean + 0.001, p)]
    return summarize(records, order=list(means))


def test_variant_table():
    """Seven named variants, each resolving to a valid tokenizer."""
    assert len(all_variants()) == 7
    assert set(PUBLISHED_RESULTS) == set(VARIANT_MAP)
    for name in all_variants():
        spec = get_variant(name)
        assert variant_name(spec.tokenizer) == name, name
    assert get_variant("hybrid-pyramid-db2-gem").tokenizer.depth_set == (1, 2, 3)
    assert get_variant("hybrid-L3-db2-gem", gem_init=2.0).tokenizer.gem_init == 2.0
    with pytest.raises(ConfigError):
        get_variant("hybrid-L9-haar-gem")
    print("[PASS] Variant table")


def test_custom_depth_set_name():
    assert variant_name(TokenizerConfig(depth_set=(1, 3))) == "hybrid-L1+L3-db2-gem"
    print("[PASS] Derived variant name")


def test_summarize_mean_and_sample_std():
    """Sample std uses N-1; a single seed reports std 0."""
    records = [_record("a", s, acc) for s, acc in enumerate([0.90, 0.92, 0.94])]
    records.append(_record("b", 0, 0.8))
    summary = summarize(records)
    row = summary.row("a")
    assert abs(row.mean_acc - 0.92) < 1e-12
    assert abs(row.std_acc - 0.02) < 1e-12
    assert row.n_seeds == 3
    assert summary.row("b").std_acc == 0.0
    print("[PASS] Mean and sample std")


def test_summarize_mean_p():
    records = [_record("g", 0, 0.9, [2.0] * 8), _record("g", 1, 0.9, [4.0] * 8)]
    assert summarize(records).row("g").mean_p == [3.0] * 8
    print("[PASS] Mean learned p")


def test_run_experiment_by_name():
    """Names resolve through the variant table; every seed yields one record."""
    data = prepare_splits(write_har_tree(n_train=12, n_test=6))
    cfg = TrainConfig(epochs=1, batch_size=6, seeds=[0, 1])
    out = Path(tempfile.mkdtemp())
    summary = run_experiment(["baseline", "hybrid-L3-db2-avg"], cfg, data, model_cfg=SMALL_MODEL,
                             checkpoint_dir=out, progress=None)
    assert [row.variant for row in summary.rows] == ["baseline", "hybrid-L3-db2-avg"]
    assert [(r.variant, r.seed) for r in summary.records] == [
        ("baseline", 0), ("baseline", 1), ("hybrid-L3-db2-avg", 0), ("hybrid-L3-db2-avg", 1),
    ]
    assert checkpoint_path(out, "baseline", 1).exists()
    payload = json.loads(checkpoint_path(out, "baseline", 1).read_text())
    assert payload["extra"]["stats"]["source_split"] == "train"
    print("[PASS] run_experiment")


def test_parallel_matches_serial():
    """Two worker processes give the same records, in the same order, as one."""
    data = prepare_splits(write_har_tree(n_train=12, n_test=6))
    cfg = TrainConfig(epochs=1, batch_size=6, seeds=[0, 1])
    names = ["baseline", "hybrid-L3-db2-gem"]
    serial = run_experiment(names, cfg, data, jobs=1, model_cfg=SMALL_MODEL, progress=None)
    parallel = run_experiment(names, cfg, data, jobs=2, model_cfg=SMALL_MODEL, progress=None,
                              checkpoint_dir=Path(tempfile.mkdtemp()))
    assert [(r.variant, r.seed) for r in parallel.records] == [(r.variant, r.seed) for r in serial.records]
    for a, b in zip(serial.records, parallel.records):
        assert a.same_metrics(b), (a.variant, a.seed)
    assert [row.mean_acc for row in parallel.rows] == [row.mean_acc for row in serial.rows]
    print("[PASS] Parallel matches serial")


def test_quiet_worker_prints_nothing():
    """A worker task started without progress writes nothing to stdout."""
    data = prepare_splits(write_har_tree(n_train=6, n_test=6))
    spec = get_variant("baseline", SMALL_MODEL)
    cfg = TrainConfig(epochs=1, batch_size=6, seeds=[0])
    _init_worker(data)
    quiet = io.StringIO()
    with redirect_stdout(quiet):
        record = _worker_task(spec, cfg, 0, None, False)
    assert quiet.getvalue() == ""
    loud = io.StringIO()
    with redirect_stdout(loud):
        _worker_task(spec, cfg, 0, None, True)
    assert "test_acc=" in loud.getvalue()
    assert record.variant == "baseline"
    print("[PASS] Quiet worker prints nothing")


def test_run_experiment_unknown_variant():
    data = prepare_splits(write_har_tree(n_train=6, n_test=6))
    with pytest.raises(ConfigError):
        run_experiment(["nope"], TrainConfig(epochs=1, seeds=[0]), data, progress=None)
    print("[PASS] Unknown variant rejected")


def test_acceptance_all_pass():
    means = {
        "baseline": 0.926, "hybrid-L3-db2-gem": 0.934, "replacement-L3-db2-gem": 0.911,
        "hybrid-L2-db2-gem": 0.930, "hybrid-pyramid-db2-gem": 0.932,
        "hybrid-L3-db4-gem": 0.929, "hybrid-L3-db2-avg": 0.928,
    }
    checks = {c.name: c.status for c in acceptance_checks(_summary(means))}
    assert all(status == PASS for status in checks.values()), checks
    print("[PASS] Acceptance all pass")


def test_acceptance_warn_and_fail():
    """Pyramid beating the champion is a warn (published gap < pooled std); baseline winning fails."""
    means = {
        "baseline": 0.940, "hybrid-L3-db2-gem": 0.934,
        "hybrid-pyramid-db2-gem": 0.936,
    }
    checks = {c.name: c.status for c in acceptance_checks(_summary(means))}
    assert checks["champion beats baseline"] == FAIL
    assert checks["champion is best ablation"] == WARN
    assert checks["hybrid beats wavelet replacement"] == SKIP
    assert checks["baseline within ±0.01 of published mean"] == FAIL
    print("[PASS] Acceptance warn and fail")


def test_acceptance_p_band():
    records = [_record("hybrid-L3-db2-gem", 0, 0.93, [3.0] * 7 + [4.5])]
    checks = {c.name: c for c in acceptance_checks(summarize(records))}
    assert checks["learned p within [2, 4]"].status == FAIL
    assert "4.500" in checks["learned p within [2, 4]"].detail
    print("[PASS] p band check")


def test_report_files():
    """CSV columns, JSON tables, p-values and the Markdown report are written."""
    summary = _summary({"baseline": 0.926, "hybrid-L3-db2-gem": 0.934})
    out = Path(tempfile.mkdtemp())
    ReportGenerator(str(out)).generate_all(summary)

    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "variant,mean_acc,std_acc,n_seeds,param_count"
    assert lines[1].startswith("baseline,0.926000,")
    assert len(json.loads((out / "p_values.json").read_text())) == 2
    assert len(json.loads((out / "summary.json").read_text())["variants"]) == 2
    report = (out / "report.md").read_text()
    assert "| hybrid-L3-db2-gem |" in report
    assert "0.9338 ± 0.0043" in report
    assert summary_csv(summary) == (out / "summary.csv").read_text()
    print("[PASS] Report files")


def test_config_defaults_are_champion():
    cfg = load_config(None)
    assert variant_name(cfg.tokenizer) == "hybrid-L3-db2-gem"
    assert cfg.train.seeds == [0, 1, 2, 3, 4] and cfg.train.epochs == 30
    print("[PASS] Config defaults")


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"train": {"epoch": 3}})
    assert "train.epoch" in str(exc.value)
    with pytest.raises(ConfigError):
        config_from_dict({"trainer": {}})
    print("[PASS] Unknown config keys rejected")


def test_config_wrong_types_rejected():
    """Values of the wrong JSON type are config errors, not crashes in validation."""
    cases = [
        ({"train": {"epochs": "30"}}, "train.epochs"),
        ({"train": {"seeds": [0, "1"]}}, "train.seeds"),
        ({"model": {"dropout": "0.1"}}, "model.dropout"),
        ({"model": {"n_heads": 4.0}}, "model.n_heads"),
        ({"tokenizer": {"depth_set": 3}}, "tokenizer.depth_set"),
        ({"data": {"standardize": "yes"}}, "data.standardize"),
    ]
    for payload, key in cases:
        with pytest.raises(ConfigError) as exc:
            config_from_dict(payload)
        assert key in str(exc.value), str(exc.value)
    cfg = config_from_dict({"train": {"lr": 1, "clip": None}, "model": {"token_dim": None}})
    assert cfg.train.lr == 1 and cfg.train.clip is None
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"train.batch_size": "64"})
    print("[PASS] Wrong config types rejected")


def test_config_overrides_and_round_trip():
    """Flags beat file values; the saved effective config reloads identically."""
    path = Path(tempfile.mkdtemp()) / "cfg.json"
    path.write_text(json.dumps({"train": {"epochs": 5, "lr": 0.001}, "tokenizer": {"depth_set": [2]}}))
    cfg = apply_overrides(load_config(str(path)), {"train.epochs": 2, "train.lr": None})
    assert cfg.train.epochs == 2 and cfg.train.lr == 0.001
    assert cfg.tokenizer.depth_set == (2,)
    saved = path.with_name("effective.json")
    save_config(cfg, saved)
    assert load_config(str(saved)) == cfg
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"train.momentum": 0.9})
    print("[PASS] Config overrides and round trip")


def test_shipped_configs_load():
    root = Path(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))) / "configs"
    champion = load_config(str(root / "champion.json"))
    baseline = load_config(str(root / "baseline.json"))
    assert champion.tokenizer == ExperimentConfig().tokenizer
    assert baseline.tokenizer.variant == "baseline"
    print("[PASS] Shipped configs load")


def run_all_tests():
    """Run all tests."""
    print("Testing experiment runner and reports...\n")

    test_variant_table()
    test_custom_depth_set_name()
    test_summarize_mean_and_sample_std()
    test_summarize_mean_p()
    test_run_experiment_by_name()
    test_parallel_matches_serial()
    test_quiet_worker_prints_nothing()
    test_run_experiment_unknown_variant()
    test_acceptance_all_pass()
    test_acceptance_warn_and_fail()
    test_acceptance_p_band()
    test_report_files()
    test_config_defaults_are_champion()
    test_config_unknown_key_rejected()
    test_config_wrong_types_rejected()
    test_config_overrides_and_round_trip()
    test_shipped_configs_load()

    print("\n" + "=" * 50)
    print("All experiment tests passed!")
    print("=" * 50)


if __name__ == '__main__':
    run_all_tests()
