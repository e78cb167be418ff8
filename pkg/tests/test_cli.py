from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from dinmp.cli import main
from dinmp.config import RunConfig, load_checkpoint, save_checkpoint
from dinmp.kvb import read_kvb
from dinmp.model import InterestModel
from dinmp.synth import EVENTS, SAMPLES

FAST = {
    "model": {"mlp_layers": [16, 8]},
    "train": {"epochs": 1, "batch_size": 128},
    "generator": {"n_users": 150, "n_keys": 400},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Generated data, converted train/test files and the config used."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(FAST))
    assert main(["generate", "--config", str(cfg), "--out", str(root / "data")]) == 0
    split = json.loads((root / "data" / "manifest.json").read_text())["split_time"]
    assert main(["convert", str(root / "data" / EVENTS), str(root / "data" / SAMPLES), "--config", str(cfg), "--split-time", str(split), "--out", str(root / "kvb")]) == 0
    return root, cfg


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


EVENT_HEADER = ["user_id", "key_id", "category_id", "timestamp", "event_type"]
SAMPLE_HEADER = ["user_id", "target_key", "target_category", "label", "reference_time", "other_features"]


class TestConvert:
    def test_tiny_fixture_stats(self, tmp_path, capsys):
        # user 0: keys 1,1,2 -> 2 keys / 3 behaviors; user 1: 3,3,3,4 -> 2 / 4; user 2: 5,6 -> 2 / 2
        events = [(0, 1, 0, 10, "click"), (0, 1, 0, 20, "click"), (0, 2, 1, 30, "click"),
                  (1, 3, 0, 10, "click"), (1, 3, 0, 11, "click"), (1, 3, 0, 12, "click"), (1, 4, 1, 13, "click"),
                  (2, 5, 1, 40, "click"), (2, 6, 0, 50, "click")]
        write_csv(tmp_path / "e.csv", EVENT_HEADER, events)
        write_csv(tmp_path / "s.csv", SAMPLE_HEADER, [(u, 1, 0, u % 2, 100, "0") for u in range(3)])
        code, out, _ = run(capsys, "convert", tmp_path / "e.csv", tmp_path / "s.csv", "--out", tmp_path / "o")
        assert code == 0
        stats = out["batch"]["stats"]
        assert stats["avg_key"] == pytest.approx(2.0)
        assert stats["avg_behavior"] == pytest.approx(3.0)
        assert stats["avg_key"] < stats["avg_behavior"]
        assert json.loads((tmp_path / "o" / "batch_stats.json").read_text()) == stats
        assert read_kvb(tmp_path / "o" / "batch.kvb").batch.n_samples == 3

    def test_malformed_csv_reports_line(self, tmp_path, capsys):
        write_csv(tmp_path / "e.csv", EVENT_HEADER, [(0, 1, 0, 10, "click"), (0, "x", 0, 10, "click")])
        write_csv(tmp_path / "s.csv", SAMPLE_HEADER, [(0, 1, 0, 1, 100, "0")])
        code, _, err = run(capsys, "convert", tmp_path / "e.csv", tmp_path / "s.csv", "--out", tmp_path / "o")
        assert code != 0
        msg = json.loads(err.strip().splitlines()[-1])["error"]
        assert msg["code"] == "IngestError"
        assert ":3:" in msg["message"]

    def test_split_files(self, corpus):
        root, _ = corpus
        assert (root / "kvb" / "train.kvb").exists() and (root / "kvb" / "test.kvb").exists()
        train = read_kvb(root / "kvb" / "train.kvb")
        assert train.meta["vocab"]["n_keys"] >= 1
        assert train.sequences is not None

    def test_stats_command(self, corpus, capsys):
        root, cfg = corpus
        code, out, _ = run(capsys, "stats", root / "kvb" / "train.kvb")
        assert code == 0
        assert out == json.loads((root / "kvb" / "train_stats.json").read_text())

    def test_unknown_config_field(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"train": {"epochz": 3}}))
        code, _, err = run(capsys, "generate", "--config", tmp_path / "c.json", "--out", tmp_path / "g")
        assert code != 0
        assert json.loads(err)["error"]["code"] == "ConfigError"


class TestTrainEval:
    def test_train_writes_checkpoint_and_log(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        code, out, _ = run(capsys, "train", root / "kvb" / "train.kvb", "--valid", root / "kvb" / "test.kvb", "--config", cfg, "--variant", "EDIN", "--out", tmp_path)
        assert code == 0
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 1
        rec = json.loads(lines[0])
        assert np.isfinite(rec["train_loss"]) and "valid_auc" in rec
        model, run_cfg, _ = load_checkpoint(tmp_path / "checkpoint.json")
        assert model.config.variant == "EDIN"
        assert run_cfg.train.epochs == 1

    def test_deterministic_checkpoints(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        for d in ("a", "b"):
            assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cfg, "--variant", "DINMP", "--seed", 4, "--out", tmp_path / d)[0] == 0
        assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()

    def test_zero_lr_keeps_initial_params(self, corpus, tmp_path, capsys):
        root, _ = corpus
        c = tmp_path / "c.json"
        c.write_text(json.dumps({**FAST, "train": {"epochs": 1, "lr": 0.0}}))
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", c, "--variant", "DINTP", "--out", tmp_path)[0] == 0
        model, run_cfg, _ = load_checkpoint(tmp_path / "checkpoint.json")
        fresh = InterestModel(model.config)
        for name in fresh.store:
            np.testing.assert_array_equal(model.store[name], fresh.store[name])

    def test_din_truncation_flag(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cfg, "--variant", "DIN", "--truncate-len", 5, "--out", tmp_path)[0] == 0
        _, run_cfg, _ = load_checkpoint(tmp_path / "checkpoint.json")
        assert run_cfg.train.truncate_len == 5

    def test_round_trip_eval_identical(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cfg, "--variant", "DINMP", "--interaction", "self_attention", "--out", tmp_path)[0] == 0
        _, r1, _ = run(capsys, "eval", tmp_path / "checkpoint.json", root / "kvb" / "test.kvb")
        model, run_cfg, extra = load_checkpoint(tmp_path / "checkpoint.json")
        save_checkpoint(tmp_path / "again.json", model, run_cfg, extra)
        _, r2, _ = run(capsys, "eval", tmp_path / "again.json", root / "kvb" / "test.kvb")
        assert r1 == r2
        assert (tmp_path / "again.json").read_bytes() == (tmp_path / "checkpoint.json").read_bytes()

    def test_eval_beats_untrained_on_train_data(self, corpus, tmp_path, capsys):
        root, _ = corpus
        for name, lr in (("untrained", 0.0), ("trained", 1e-3)):
            cc = tmp_path / f"{name}.json"
            cc.write_text(json.dumps({**FAST, "train": {"epochs": 3, "batch_size": 64, "lr": lr}}))
            assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cc, "--variant", "DINSKV", "--out", tmp_path / name)[0] == 0
        _, before, _ = run(capsys, "eval", tmp_path / "untrained" / "checkpoint.json", root / "kvb" / "train.kvb")
        _, after, _ = run(capsys, "eval", tmp_path / "trained" / "checkpoint.json", root / "kvb" / "train.kvb")
        assert after["auc"] >= before["auc"]

    def test_eval_report_and_baseline(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        for v in ("DIN", "DINSKV"):
            assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cfg, "--variant", v, "--out", tmp_path / v)[0] == 0
        _, base, _ = run(capsys, "eval", tmp_path / "DIN" / "checkpoint.json", root / "kvb" / "test.kvb", "--out", tmp_path / "din.json")
        _, rep, _ = run(capsys, "eval", tmp_path / "DINSKV" / "checkpoint.json", root / "kvb" / "test.kvb", "--baseline", tmp_path / "din.json")
        assert rep["baseline"]["model"] == "DIN"
        assert rep["rela_impr"] == pytest.approx(round(((rep["auc"] - 0.5) / (base["auc"] - 0.5) - 1) * 100, 2))
        assert rep["samples"] == base["samples"] and rep["positives"] == base["positives"]
        assert np.isfinite(rep["log_loss"])

    def test_constant_model_auc_is_zero_and_flagged(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cfg, "--variant", "EDIN", "--out", tmp_path)[0] == 0
        model, run_cfg, extra = load_checkpoint(tmp_path / "checkpoint.json")
        for name in model.store:
            if name.startswith("mlp."):
                model.store.set_value(name, np.zeros_like(model.store[name]))
        save_checkpoint(tmp_path / "zero.json", model, run_cfg, extra)
        code, rep, _ = run(capsys, "eval", tmp_path / "zero.json", root / "kvb" / "test.kvb")
        assert code == 0
        assert rep["auc"] == 0.0
        assert rep["warnings"]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_loss_names_step(self, corpus, tmp_path, capsys):
        root, _ = corpus
        c = tmp_path / "c.json"
        c.write_text(json.dumps({**FAST, "train": {"epochs": 1, "lr": 1e300}}))
        code, _, err = run(capsys, "train", root / "kvb" / "train.kvb", "--config", c, "--variant", "DINSKV", "--out", tmp_path)
        assert code != 0
        e = json.loads(err.strip().splitlines()[-1])["error"]
        assert e["code"] in ("nan_loss", "NonFiniteGradientError")
        assert "step" in e["message"]


class TestAblateExport:
    def test_ablate_table(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        code, out, _ = run(capsys, "ablate", root / "data", "--config", cfg, "--out", tmp_path)
        assert code == 0
        assert [r["model"] for r in out["rows"]] == ["DIN", "DINSKV", "EDIN", "DINTP", "DINMP"]
        assert out["rows"][0]["rela_impr"] == 0.0
        with open(tmp_path / "ablation.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 5 and rows[0]["rela_impr"] == "0.00"
        assert (tmp_path / "DINMP.ckpt.json").exists()

    def test_export_time_factors(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cfg, "--variant", "DINMP", "--out", tmp_path, "--seed", 1)[0] == 0
        code, out, _ = run(capsys, "export-time-factors", tmp_path / "checkpoint.json", "--data", root / "kvb" / "train.kvb", "--out", tmp_path / "tf.csv")
        assert code == 0
        with open(tmp_path / "tf.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 10
        assert rows[0]["label"] == "[0,1d)" and rows[-1]["label"] == ">=180d"
        assert [int(r["bucket"]) for r in rows] == list(range(10))

    def test_export_needs_data_in_theta_mode(self, corpus, tmp_path, capsys):
        root, cfg = corpus
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", cfg, "--variant", "EDIN", "--out", tmp_path)[0] == 0
        code, _, err = run(capsys, "export-time-factors", tmp_path / "checkpoint.json", "--out", tmp_path / "tf.csv")
        assert code != 0 and json.loads(err)["error"]["code"] == "need_data"

    def test_untrained_scalar_factors_at_init(self, corpus, tmp_path, capsys):
        root, _ = corpus
        c = tmp_path / "c.json"
        c.write_text(json.dumps({**FAST, "model": {"mlp_layers": [8], "time_factor_mode": "scalar"}, "train": {"epochs": 0}}))
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", c, "--variant", "DINMP", "--out", tmp_path)[0] == 0
        code, out, _ = run(capsys, "export-time-factors", tmp_path / "checkpoint.json", "--out", tmp_path / "tf.csv")
        assert code == 0
        assert [r["factor"] for r in out["rows"]] == [1.0] * 10

    def test_untrained_theta_factors_near_init_scale(self, corpus, tmp_path, capsys):
        root, _ = corpus
        c = tmp_path / "c.json"
        c.write_text(json.dumps({**FAST, "train": {"epochs": 0}}))
        assert run(capsys, "train", root / "kvb" / "train.kvb", "--config", c, "--variant", "EDIN", "--out", tmp_path)[0] == 0
        _, out, _ = run(capsys, "export-time-factors", tmp_path / "checkpoint.json", "--data", root / "kvb" / "train.kvb", "--out", tmp_path / "tf.csv")
        # |theta_j . theta_k| <= |theta_j| |theta_k|; both are O(1) at init
        assert all(abs(r["factor"]) < 1.0 for r in out["rows"])


def test_separable_task_reaches_high_train_auc(tmp_path, capsys):
    # the label is a function of the target key alone, which the model embeds directly
    rng = np.random.default_rng(0)
    events = [(u, int(rng.integers(50)), 0, int(t), "click") for u in range(200) for t in rng.integers(1, 1000, size=5)]
    samples = [(u, k, 0, int(k % 2), 2000, "0") for u in range(200) for k in rng.integers(50, size=4)]
    write_csv(tmp_path / "e.csv", EVENT_HEADER, events)
    write_csv(tmp_path / "s.csv", SAMPLE_HEADER, samples)
    c = tmp_path / "c.json"
    c.write_text(json.dumps({"model": {"mlp_layers": [16]}, "train": {"epochs": 20, "batch_size": 64, "lr": 0.01}}))
    assert run(capsys, "convert", tmp_path / "e.csv", tmp_path / "s.csv", "--out", tmp_path / "kvb")[0] == 0
    assert run(capsys, "train", tmp_path / "kvb" / "batch.kvb", "--config", c, "--variant", "DINSKV", "--out", tmp_path / "m")[0] == 0
    _, rep, _ = run(capsys, "eval", tmp_path / "m" / "checkpoint.json", tmp_path / "kvb" / "batch.kvb")
    assert rep["auc"] > 0.95
