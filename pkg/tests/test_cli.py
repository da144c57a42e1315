import csv
import io
import json
from dataclasses import replace

import pytest

from biosent.cli import cmd_ablate, cmd_encode, cmd_eval, cmd_synth, cmd_train, main
from biosent.config import MaskConfig, default_config_dict, load_config, parse_config
from biosent.errors import ConfigError

SMALL = {
    "tokenizer": {"rate_hz": 50.0, "token_len_s": 1.0, "overlap_s": 0.5},
    "encoder": {"embed_dim": 16, "n_heads": 2, "n_layers": 1, "rank": 4, "max_tokens": 64, "fcn_hidden": 16},
    "train": {"max_epochs": 1, "batch_size": 4},
    "task": {"n_classes": 3},
    "synth": {"n_classes": 3, "n_channels": 2, "duration_s": 10.0, "rate_hz": 50.0,
              "n_train": 8, "n_val": 4, "n_test": 4},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = parse_config(SMALL)
    cmd_synth(cfg, root / "corpus")
    cmd_train(cfg, root / "corpus", root / "model")
    return root, cfg


def test_config_errors_enumerated():
    with pytest.raises(ConfigError) as err:
        parse_config({"schema_version": 2, "nope": 1, "encoder": {"bogus": 3}, "train": {"lr": -1}})
    details = err.value.details
    assert "schema_version: expected 1, got 2" in details
    assert "unknown key: nope" in details and "unknown key: encoder.bogus" in details
    assert any(d.startswith("train:") for d in details)


def test_default_config_round_trips():
    cfg = parse_config(default_config_dict())
    assert cfg.mask.spec.a == 0 and cfg.mask.spec.b == 0  # identity mask
    assert replace(cfg, mask=MaskConfig()) == parse_config({})


def test_toml_and_json_load_identically(tmp_path):
    (tmp_path / "c.toml").write_text('[train]\nmax_epochs = 3\nlr = 0.002\n\n[task]\nmetrics = ["auroc"]\n')
    (tmp_path / "c.json").write_text(json.dumps({"train": {"max_epochs": 3, "lr": 0.002},
                                                 "task": {"metrics": ["auroc"]}}))
    assert load_config(tmp_path / "c.toml") == load_config(tmp_path / "c.json")
    (tmp_path / "bad.toml").write_text("[train\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_synth_layout(workspace):
    root, _ = workspace
    for split, n in (("train", 8), ("val", 4), ("test", 4)):
        assert len(list((root / "corpus" / split).glob("*.bsr.json"))) == n
    doc = json.loads((root / "model.metrics.json").read_text())
    assert doc["command"] == "train" and len(doc["history"]) == 1


def test_eval_identity_mask_equals_no_mask(workspace):
    root, cfg = workspace
    plain = cmd_eval(root / "model", root / "corpus", cfg)
    masked = cmd_eval(root / "model", root / "corpus",
                      parse_config({**SMALL, "mask": {"a": 0, "b": 0, "strategy": "zero_impute"}}))
    assert plain == masked
    doc = json.loads(plain)
    assert set(doc["metrics"]) == {"balanced_accuracy", "cohen_kappa", "weighted_f1"} and doc["n_samples"] == 4


def test_eval_csv_format(workspace):
    root, cfg = workspace
    rows = list(csv.reader(io.StringIO(cmd_eval(root / "model", root / "corpus", cfg, fmt="csv"))))
    assert rows[0] == ["metric", "value", "n_samples", "n_classes"] and len(rows) == 4


def test_encode_row_width(tmp_path):
    cfg = dict(SMALL, encoder={**SMALL["encoder"], "embed_dim": 256, "n_heads": 4})
    cfg["synth"] = {**SMALL["synth"], "n_train": 4, "n_val": 2, "n_test": 0, "duration_s": 3.0}
    run = parse_config(cfg)
    cmd_synth(run, tmp_path / "c")
    cmd_train(run, tmp_path / "c", tmp_path / "m")
    files = sorted((tmp_path / "c" / "val").glob("*.bsr.json"))
    rows = list(csv.reader(io.StringIO(cmd_encode(tmp_path / "m", files))))
    assert len(rows) == 3
    assert all(len(r) == 257 for r in rows)
    assert all(float(v) == float(v) for v in rows[1][1:])


def test_ablate_overlap_token_counts(workspace):
    root, cfg = workspace
    out = cmd_ablate(cfg, root / "corpus", "overlap", [0.0, 0.25, 0.5])
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [int(r["tokens_per_channel"]) for r in rows] == [10, 13, 19]
    assert [float(r["mean_sentence_length"]) for r in rows] == [20.0, 26.0, 38.0]
    assert all(0 <= float(r["balanced_accuracy"]) <= 1 for r in rows)


def test_main_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1, "encoder": {"bogus": 2}}))
    rc = main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert "unknown key: nope" in err["details"] and "unknown key: encoder.bogus" in err["details"]


def test_main_missing_checkpoint(tmp_path, capsys):
    rc = main(["eval", "--ckpt", str(tmp_path / "none"), "--corpus", str(tmp_path)])
    assert rc == 1
    assert "error" in json.loads(capsys.readouterr().err)


def test_main_eval_to_file(workspace, tmp_path):
    root, _ = workspace
    out = tmp_path / "r.json"
    assert main(["eval", "--ckpt", str(root / "model"), "--corpus", str(root / "corpus"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["n_samples"] == 4


def test_main_config_prints_every_section(capsys):
    assert main(["config"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"schema_version", "tokenizer", "encoder", "train", "task", "synth", "pretrain", "mask"}


@pytest.mark.parametrize("sub,flag", [("train", "--metrics-out"), ("eval", "--format"),
                                      ("ablate", "--axis"), ("encode", "--ckpt"), ("pretrain", "--out")])
def test_help_lists_flags(sub, flag, capsys):
    with pytest.raises(SystemExit) as ex:
        main([sub, "--help"])
    assert ex.value.code == 0
    assert flag in capsys.readouterr().out
