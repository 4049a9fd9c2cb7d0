import json
from pathlib import Path

import pytest

from auxnas import archnet, config
from auxnas.cli import main
from auxnas.exceptions import ConfigurationError, SchemaError

QUICKSTART = Path(__file__).resolve().parents[1] / "configs" / "quickstart.json"
FAST = ["--set", "train.epochs=2", "--set", "data.n_samples=120"]


@pytest.fixture
def doc():
    return json.loads(QUICKSTART.read_text())


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


# --- config ----------------------------------------------------------------


def test_quickstart_config_loads():
    cfg = config.load(QUICKSTART, env={})
    assert cfg.mode == "aux_nas" and cfg.K == 1 and cfg.train.lambda_end == 100.0
    assert cfg.task_family().shared_head


@pytest.mark.parametrize("path,value", [("", "mystery"), ("train", "lr"), ("data", "rows"),
                                        ("data.family", "depth"), ("primary", "units")])
def test_unknown_keys_are_named(doc, path, value):
    node = doc
    for part in filter(None, path.split(".")):
        node = node[part]
    node[value] = 1
    with pytest.raises(ConfigurationError, match=f"unknown config key {path + '.' if path else ''}{value}"):
        config.from_dict(doc)


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d.update(mode="joint"), "mode"),
    (lambda d: d.update(K=2), "K"),
    (lambda d: d.update(auxiliaries=[]), "auxiliaries"),
    (lambda d: d["data"].update(csv="x.csv"), "exactly one"),
    (lambda d: d["data"]["family"].update(n_aux=2, noise_std=[1, 1, 1], kinds=["regression"] * 3,
                                          out_dims=[1, 1, 1]), "n_aux"),
    (lambda d: d.update(seed=-1), "seed"),
    (lambda d: d["data"].update(split_fractions=[0.5, 0.5]), "split_fractions"),
    (lambda d: d.update(window=0), "window"),
    (lambda d: d["train"].update(optimizer="lbfgs"), "optimizer"),
    (lambda d: d["protocol"].update(methods=["single", "oracle"]), "oracle"),
    (lambda d: d.pop("primary"), "primary"),
])
def test_invalid_configs(doc, mutate, match):
    mutate(doc)
    with pytest.raises(ConfigurationError, match=match):
        config.from_dict(doc)


def test_overrides_and_seed_env(tmp_path, doc):
    p = _write(tmp_path, doc)
    cfg = config.load(p, ["train.lr_w=0.5", "auxiliaries.0.layer_widths=[8, 8]", "output_dir=elsewhere"],
                      env={config.SEED_ENV: "17"})
    assert cfg.train.lr_w == 0.5 and cfg.auxiliaries[0].layer_widths == (8, 8)
    assert cfg.output_dir == "elsewhere" and cfg.seed == 17 and cfg.train.seed == 17
    with pytest.raises(ConfigurationError):
        config.load(p, ["novalue"], env={})
    with pytest.raises(ConfigurationError):
        config.load(p, ["auxiliaries.5.layer_widths=[1]"], env={})
    with pytest.raises(ConfigurationError):
        config.load(p, env={config.SEED_ENV: "abc"})


def test_file_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        config.load(tmp_path / "missing.json", env={})
    (tmp_path / "bad.json").write_text('{"mode":\n  oops}')
    with pytest.raises(SchemaError, match="line 2"):
        config.load(tmp_path / "bad.json", env={})


def test_csv_data_paths_resolve_relative_to_config(tmp_path, doc):
    (tmp_path / "d.csv").write_text("a,y0,y1\n1,2,3\n")
    doc["data"] = {"csv": "d.csv", "schema": {"inputs": ["a"], "labels": [["y0"], ["y1"]],
                                              "kinds": ["regression", "regression"], "split": None}}
    cfg = config.load(_write(tmp_path, doc), env={})
    assert cfg.data.csv == str(tmp_path / "d.csv")
    doc["data"]["csv"] = "nope.csv"
    with pytest.raises(ConfigurationError, match="file not found"):
        config.load(_write(tmp_path, doc), env={})


# --- cli -------------------------------------------------------------------


@pytest.fixture
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", str(QUICKSTART), "--out", str(out), *FAST]) == 0
    return out


def test_train_writes_artifacts(trained):
    for name in ("model.json", "steps.csv", "report.json", "dataset.csv", "schema.json", "manifest.json"):
        assert (trained / name).is_file(), name
    assert json.loads((trained / "report.json").read_text())["wall_time_s"] is None


def test_rerun_is_byte_identical(trained, tmp_path):
    assert main(["train", str(QUICKSTART), "--out", str(tmp_path), *FAST]) == 0
    for name in ("model.json", "steps.csv", "report.json", "dataset.csv"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes(), name


def test_prune_then_eval_matches_full_model(trained, tmp_path, capsys):
    assert main(["prune", str(trained / "model.json"), "--out", str(tmp_path / "p.json")]) == 0
    assert archnet.load(tmp_path / "p.json").mode == "pruned"
    capsys.readouterr()
    args = [str(trained / "dataset.csv"), "--schema", str(trained / "schema.json")]
    assert main(["eval", str(tmp_path / "p.json"), *args, "--out", str(tmp_path / "a.json")]) == 0
    assert main(["eval", str(trained / "model.json"), *args, "--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert json.loads((tmp_path / "a.json").read_text())["metrics"]["mse"] > 0


def test_eval_schema_mismatch_is_a_config_error(trained, tmp_path, capsys):
    schema = json.loads((trained / "schema.json").read_text())
    schema["inputs"] = schema["inputs"][:-1]
    (tmp_path / "s.json").write_text(json.dumps(schema))
    code = main(["eval", str(trained / "model.json"), str(trained / "dataset.csv"),
                 "--schema", str(tmp_path / "s.json")])
    assert code == 2 and "input columns" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, doc, capsys):
    doc["train"]["warmup"] = 5
    assert main(["train", str(_write(tmp_path, doc))]) == 2
    assert "unknown config key train.warmup" in capsys.readouterr().err


def test_divergence_exits_3_with_snapshot(tmp_path, capsys):
    code = main(["train", str(QUICKSTART), "--out", str(tmp_path), *FAST, "--set", "train.lr_w=1e300"])
    assert code == 3 and "diverged" in capsys.readouterr().err
    assert archnet.load(tmp_path / "snapshot.json").mode == "aux_nas"


def test_symmetric_eval_exits_4(tmp_path, capsys):
    out = tmp_path / "sym"
    assert main(["train", str(QUICKSTART), "--out", str(out), *FAST, "--set", "mode=symmetric"]) == 0
    code = main(["eval", str(out / "model.json"), str(out / "dataset.csv"), "--schema", str(out / "schema.json")])
    assert code == 4 and "invariant violated: evaluation purity" in capsys.readouterr().err


def test_flops_symbolic_and_measured(trained, capsys):
    assert main(["flops", "--N", "100", "--M", "10", "--K", "1"]) == 0
    table = json.loads(capsys.readouterr().out)["table"]
    assert (table["ours"], table["soft_mtl"], table["hard_attention"]) == (100, 210, 110)
    assert main(["flops", "--model", str(trained / "model.json"), "--batch", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["measured"]["total"] > 0
    assert main(["flops", "--N", "1"]) == 2


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--seed", "3", "--out", str(tmp_path / "g.json")]) == 0
    assert "PASS" in capsys.readouterr().out
    assert json.loads((tmp_path / "g.json").read_text())["passed"] is True


def test_protocol_command(tmp_path, capsys):
    code = main(["protocol", str(QUICKSTART), "--out", str(tmp_path), *FAST,
                 "--set", "protocol.seeds=[0, 1, 2]"])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["aggregate"]) == {"single", "aux_g_layer", "aux_nas"}
    assert summary["paired_vs_single"]["aux_nas"]["n"] == 3
    assert (tmp_path / "results.csv").read_text().startswith("method,seed,metric")


def test_missing_model_file(tmp_path, capsys):
    assert main(["prune", str(tmp_path / "none.json")]) == 2
