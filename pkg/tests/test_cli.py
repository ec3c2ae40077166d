import json

import numpy as np
import pytest

from backdoor_diffusion.cli import main, parse_do, parse_int_list, read_wide_csv, write_wide_csv
from backdoor_diffusion.data import load_dataset
from backdoor_diffusion.errors import QueryParseError
from backdoor_diffusion.scmodel import CausalDiffusionModel, FitConfig, fit, sample_interventional

FAST = ["--epochs", "3", "--hidden", "8"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--n", "4", "--J", "3", "--seed", "5", "--out", str(root / "data")]) == 0
    assert main(["fit", "--data", str(root / "data"), "--seed", "2", "--out", str(root / "model.json"), *FAST]) == 0
    return root


def test_parse_do():
    do = parse_do(["X1=0.5,X3=[1 2]", "4=-2"])
    assert do[1] == 0.5 and list(do[3]) == [1.0, 2.0] and do[4] == -2.0
    for bad in ["X1=", "X1=abc", "Y=1", "X1=[1 2", "X1=nan"]:
        with pytest.raises(QueryParseError):
            parse_do([bad])
    assert parse_int_list("1-3,7") == [1, 2, 3, 7]


def test_generate_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["generate", "--n", "3", "--J", "2", "--seed", "9", "--out", str(tmp_path / d)]) == 0
    for f in ("dataset.csv", "dataset.json", "dataset_curves.csv", "scm.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["generate", "--benchmark", "nope", "--out", str(tmp_path / "c")]) == 1
    assert "pfst33" in capsys.readouterr().err


def test_config_file_and_env(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 2, "J": 2, "seed": 1}))
    monkeypatch.setenv("BACKDOOR_DIFFUSION_OUT", str(tmp_path / "env"))
    assert main(["generate", "--config", str(cfg)]) == 0
    ds = load_dataset(str(tmp_path / "env"))
    assert (ds.n, ds.J) == (2, 2)
    cfg.write_text(json.dumps({"n": 2, "bogus": 1}))
    assert main(["generate", "--config", str(cfg)]) == 1


def test_fit_reload_matches_in_memory(workspace):
    loaded = CausalDiffusionModel.load(str(workspace / "model.json"))
    ds = load_dataset(str(workspace / "data"))
    mem = fit(ds, ds.graph, "bdcm", FitConfig(epochs=3, hidden=(8,)), seed=2)
    a = sample_interventional(loaded, {1: 0.5}, 50, 3)
    b = sample_interventional(mem, {1: 0.5}, 50, 3)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_fit_modes_report_dims(workspace, capsys):
    out = {}
    for mode in ("bdcm", "dcm"):
        assert main(["fit", "--data", str(workspace / "data"), "--mode", mode,
                     "--out", str(workspace / f"m_{mode}.json"), *FAST]) == 0
        text = capsys.readouterr().out
        out[mode] = int(text.split("total conditioning dim ")[1].split()[0])
    assert out["bdcm"] > out["dcm"]


def test_fit_workers_invariant(workspace):
    for w in ("1", "3"):
        assert main(["fit", "--data", str(workspace / "data"), "--workers", w,
                     "--out", str(workspace / f"w{w}.json"), *FAST]) == 0
    assert (workspace / "w1.json").read_bytes() == (workspace / "w3.json").read_bytes()


def test_query_interventional(workspace):
    out = workspace / "q.csv"
    model = CausalDiffusionModel.load(str(workspace / "model.json"))
    assert main(["query", "--checkpoint", str(workspace / "model.json"), "--do", "X1=0.5",
                 "--count", "200", "--out", str(out)]) == 0
    rec = read_wide_csv(str(out), model.graph)
    assert rec[1].shape == (200, 1) and np.all(rec[1] == 0.5)
    first = out.read_bytes()
    assert main(["query", "--checkpoint", str(workspace / "model.json"), "--do", "X1=0.5",
                 "--count", "200", "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_query_counterfactual(workspace):
    model = CausalDiffusionModel.load(str(workspace / "model.json"))
    ds = load_dataset(str(workspace / "data"))
    factual = {k: ds.node_rows(k)[:3] for k in model.graph.observed_ids()}
    fpath, out = workspace / "factual.csv", workspace / "cf.csv"
    write_wide_csv(str(fpath), model.graph, factual)
    assert main(["query", "--checkpoint", str(workspace / "model.json"), "--counterfactual",
                 "--factual", str(fpath), "--do", "X2=0", "--out", str(out)]) == 0
    cf = read_wide_csv(str(out), model.graph)
    desc = set(model.graph.descendants(2))
    assert np.all(cf[2] == 0.0)
    for k in factual:
        if k != 2 and k not in desc:
            np.testing.assert_array_equal(cf[k], factual[k])
    assert any(not np.array_equal(cf[k], factual[k]) for k in desc)


def test_query_errors(workspace, tmp_path, capsys):
    ck = str(workspace / "model.json")
    assert main(["query", "--checkpoint", ck, "--do", "X1=abc", "--out", str(tmp_path / "x.csv")]) == 1
    assert "X1=abc" in capsys.readouterr().err
    doc = json.loads((workspace / "model.json").read_text())
    key = sorted(doc["node_models"], key=int)[0]
    doc["node_models"][key]["net"]["params"] = "garbage"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["query", "--checkpoint", str(bad), "--out", str(tmp_path / "x.csv")]) == 1
    assert f"$.node_models.{key}.net" in capsys.readouterr().err
    assert main(["query", "--checkpoint", ck, "--counterfactual", "--out", str(tmp_path / "x.csv")]) == 1
    assert main(["fit", "--data", str(tmp_path / "missing")]) == 1


def test_evaluate(tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["evaluate", "--n", "5", "--J", "3", "--seeds", "1-2", "--methods", "bdcm,dcm",
                 "--n-query", "50", "--out", str(out), *FAST]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["methods"] == ["bdcm", "dcm"] and rep["seeds"] == [1, 2]
    for metric in ("obs_mmd2", "int_mmd2", "cf_mse"):
        assert set(rep["summary"][metric]) == {"bdcm", "dcm"}
        assert rep["summary"][metric]["bdcm"]["n"] == 2
    assert "cf_mse" in capsys.readouterr().out
    assert main(["evaluate", "--methods", "magic", "--out", str(out)]) == 1
