import json

import numpy as np
import pandas as pd
import pytest

from midlstm.cli import main
from midlstm.config import RunConfig, load_config, parse_config
from midlstm.errors import ConfigError

TINY = {
    "data": {"synth": {"kind": "factor", "days": 300, "n_stocks": 3, "period": 90}},
    "window_length": 20,
    "split_fraction": 0.6,
    "lstm": {"hidden_dims": [4], "dropout_after": [0], "epochs": 1},
    "portfolio": {"threshold": 1.0, "frontier_samples": 20, "restarts": 2},
    "jobs": 1,
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_defaults_mirror_model_constants():
    c = parse_config({"data": {"synth": {}}})
    assert c.window_length == 60 and c.split_fraction == 0.85
    assert c.hmm.n_states == 4 and c.hmm.iterations == 10
    assert c.portfolio.risk_free == 0.015
    assert c.model_params()["hidden_dims"] == (64, 64, 32)


def test_unknown_keys_rejected_with_path():
    with pytest.raises(ConfigError, match=r"lstm\.epoch"):
        parse_config({"data": {"synth": {}}, "lstm": {"epoch": 3}})
    with pytest.raises(ConfigError, match=r"portfolio\.mode"):
        parse_config({"data": {"synth": {}}, "portfolio": {"mode": "top"}})


def test_data_source_must_be_unique():
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config({"data": {}})
    with pytest.raises(ConfigError):
        parse_config({"data": {"csv": "a.csv", "synth": {}}})


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_overrides():
    c = parse_config(TINY).with_overrides(seed=7, jobs=None, output_dir="x")
    assert isinstance(c, RunConfig) and c.seed == 7 and c.output_dir == "x" and c.jobs == 1


def test_all_writes_every_artifact(tmp_path):
    out = tmp_path / "out"
    assert main(["all", "--config", str(_write(tmp_path, TINY)), "--out", str(out)]) == 0
    for name in ("data.csv", "predictions.csv", "metrics.json", "mpa_daily.csv",
                 "allocations.json", "frontier.csv", "backtest.json", "backtest.csv",
                 "report.json", "S00/model.json"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    for method in ("mid-lstm", "lstm", "linear", "ridge"):
        entry = metrics["methods"][method]
        assert {"mean_mpa", "midterm_mean_mpa", "ta", "hc_mean_mpa", "hc_ta"} <= set(entry)
        assert np.isfinite(entry["midterm_mean_mpa"])
    preds = pd.read_csv(out / "predictions.csv")
    assert list(preds.columns) == ["date", "ticker", "method", "window", "day", "predicted",
                                   "real", "state"]
    report = json.loads((out / "report.json").read_text())
    assert set(report["stocks"]["S01"]["fusion"]) >= {"alpha", "lambda", "eta", "gamma", "c"}


def test_stages_compose_to_all(tmp_path):
    cfg = _write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["all", "--config", str(cfg), "--out", str(a)]) == 0
    for stage in ("synth", "train", "predict", "evaluate", "allocate", "backtest", "report"):
        assert main([stage, "--config", str(cfg), "--out", str(b)]) == 0
    for name in ("metrics.json", "predictions.csv", "backtest.json", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_csv_source(tmp_path):
    cfg = _write(tmp_path, TINY)
    src = tmp_path / "src"
    assert main(["synth", "--config", str(cfg), "--out", str(src)]) == 0
    csv_cfg = dict(TINY, data={"csv": str(src / "data.csv")})
    out = tmp_path / "o"
    assert main(["all", "--config", str(_write(tmp_path, csv_cfg, "c2.json")),
                 "--out", str(out)]) == 0
    assert not (out / "data.csv").exists()


def test_series_too_short_names_stock(tmp_path, capsys):
    cfg = dict(TINY, window_length=10,
               data={"synth": {"kind": "sine", "days": 15, "amplitude": 1.0}})
    rc = main(["all", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "SeriesTooShort"
    assert "SINE" in err["message"]


def test_config_error_is_structured(tmp_path, capsys):
    cfg = dict(TINY, extra_field=1)
    assert main(["train", "--config", str(_write(tmp_path, cfg))]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "extra_field" in err["message"]


def test_stage_without_prior_artifacts(tmp_path, capsys):
    assert main(["evaluate", "--config", str(_write(tmp_path, TINY)),
                 "--out", str(tmp_path / "empty")]) == 2
    assert "predictions.csv" in capsys.readouterr().err
