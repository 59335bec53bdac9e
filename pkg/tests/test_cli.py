import json

import pytest
from click.testing import CliRunner

from gbtpp.cli import main


def run(*args, ok=True):
    res = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    if ok:
        assert res.exit_code == 0, res.output
    return res


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    run("simulate", "--out", d / "c.jsonl", "--nodes", 6, "--sequences", 40, "--max-events", 8,
        "--seed", 7, "--quiet")
    run("embed", "--cascades", d / "c.jsonl", "--out", d / "e.csv", "--dim", 3, "--epochs", 20,
        "--quiet")
    return d


def test_simulate_outputs_and_determinism(work, tmp_path):
    run("simulate", "--out", tmp_path / "c.jsonl", "--nodes", 6, "--sequences", 40,
        "--max-events", 8, "--seed", 7, "--quiet")
    for name in ("c.jsonl", "c.params.json"):
        assert (tmp_path / name).read_bytes() == (work / name).read_bytes()

    def settings(d):
        lines = (d / "c.jsonl.config").read_text().splitlines()
        return [x for x in lines if not x.startswith(("out ", "out_dir "))]
    assert settings(tmp_path) == settings(work)
    assert "seed = 7" in (work / "c.jsonl.config").read_text()


def test_simulate_seed_changes_output(work, tmp_path):
    run("simulate", "--out", tmp_path / "c.jsonl", "--nodes", 6, "--sequences", 40,
        "--max-events", 8, "--seed", 8, "--quiet")
    assert (tmp_path / "c.jsonl").read_bytes() != (work / "c.jsonl").read_bytes()


def test_missing_out_is_usage_error():
    res = run("simulate", "--nodes", 5, ok=False)
    assert res.exit_code == 2 and "--out" in res.output


def test_explosive_radius_rejected(tmp_path):
    res = run("simulate", "--out", tmp_path / "x.jsonl", "--radius", 1.5, ok=False)
    assert res.exit_code == 2


def test_config_file_and_flag_override(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nnodes = 6\nsequences = 40\nmax-events = 8\nseed = 7\nquiet = true\n")
    run("simulate", "--config", cfg, "--out", tmp_path / "a.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (work / "c.jsonl").read_bytes()
    run("simulate", "--config", cfg, "--out", tmp_path / "b.jsonl", "--seed", 8)
    assert "seed = 8" in (tmp_path / "b.jsonl.config").read_text()
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    res = run("simulate", "--config", bad, "--out", tmp_path / "c.jsonl", ok=False)
    assert res.exit_code == 2 and "colour" in res.output


def test_embed_deterministic(work, tmp_path):
    run("embed", "--cascades", work / "c.jsonl", "--out", tmp_path / "e.csv", "--dim", 3,
        "--epochs", 20, "--quiet")
    assert (tmp_path / "e.csv").read_bytes() == (work / "e.csv").read_bytes()


def test_train_predict_and_rerun(work):
    args = ("train", "--cascades", work / "c.jsonl", "--embeddings", work / "e.csv",
            "--hidden", 4, "--input-dim", 3, "--epochs", 1, "--quiet")
    run(*args, "--out", work / "g1.json")
    run(*args, "--out", work / "g2.json")
    a = (work / "g1.json").read_bytes()
    assert a.replace(b"g1.json", b"") == (work / "g2.json").read_bytes().replace(b"g2.json", b"")
    res = run("predict", "--checkpoint", work / "g1.json", "--prefix", "0:0,2:1.5", "--topk", 3,
              "--quiet")
    doc = json.loads(res.output)
    assert doc["model"] == "gbtpp" and doc["time"] > 1.5 and len(doc["topk"]) == 3
    assert doc["node"] == doc["topk"][0][0]


def test_untrained_checkpoint_and_length_one_prefix(work):
    run("train", "--cascades", work / "c.jsonl", "--embeddings", work / "e.csv", "--hidden", 4,
        "--input-dim", 3, "--epochs", 0, "--out", work / "g0.json", "--quiet")
    res = run("predict", "--checkpoint", work / "g0.json", "--cascades", work / "c.jsonl",
              "--length", 1, "--out", work / "p.json", "--quiet")
    doc = json.loads(res.output)
    assert doc["node"] is not None and len(doc["topk"]) == 5
    assert (work / "p.json").read_text().strip() == res.output.strip()
    run("predict", "--checkpoint", work / "g0.json", "--cascades", work / "c.jsonl",
        "--length", 1, "--out", work / "p2.json", "--quiet")
    assert (work / "p2.json").read_bytes() == (work / "p.json").read_bytes()


@pytest.mark.parametrize("model", ["mc2", "poisson", "hawkes", "scp", "ctmc", "rmtpp"])
def test_train_and_predict_every_kind(work, model):
    run("train", "--cascades", work / "c.jsonl", "--model", model, "--hidden", 3,
        "--input-dim", 3, "--epochs", 1, "--out", work / f"{model}.json", "--quiet")
    res = run("predict", "--checkpoint", work / f"{model}.json", "--prefix", "1:0.5", "--quiet")
    doc = json.loads(res.output)
    assert doc["model"] == model
    assert (doc["time"] is None) == model.startswith("mc")


def test_v_mismatch_names_both_values(work, tmp_path):
    run("simulate", "--out", tmp_path / "big.jsonl", "--nodes", 9, "--sequences", 5, "--quiet")
    res = run("predict", "--checkpoint", work / "g0.json" if (work / "g0.json").exists()
              else work / "g1.json", "--cascades", tmp_path / "big.jsonl", ok=False)
    assert res.exit_code == 1
    assert "V=9" in res.output and "V=6" in res.output
    res = run("train", "--cascades", tmp_path / "big.jsonl", "--embeddings", work / "e.csv",
              "--out", tmp_path / "m.json", ok=False)
    assert "V=6" in res.output and "V=9" in res.output


def test_gbtpp_requires_embeddings(work, tmp_path):
    res = run("train", "--cascades", work / "c.jsonl", "--out", tmp_path / "m.json", ok=False)
    assert res.exit_code == 2 and "--embeddings" in res.output


def test_bad_prefix_reported(work):
    res = run("predict", "--checkpoint", work / "g1.json", "--prefix", "0-1", ok=False)
    assert res.exit_code == 2
    res = run("predict", "--checkpoint", work / "g1.json", "--prefix", "50:1", ok=False)
    assert res.exit_code == 1 and "V=6" in res.output


def test_evaluate_full_roster(work, tmp_path):
    args = ("evaluate", "--cascades", work / "c.jsonl",
            "--models", "mc1,mc2,mc3,ctmc,poisson,hawkes,scp,rmtpp,nrpp,gbtpp",
            "--folds", 2, "--epochs", 1, "--hidden", 4, "--embed-dim", 2, "--quiet")
    res = run(*args, "--out-dir", tmp_path / "a")
    run(*args, "--out-dir", tmp_path / "b")
    rep = json.loads((tmp_path / "a" / "benchmark.report.json").read_text())
    assert set(rep["metrics"]) == {"mc1", "mc2", "mc3", "ctmc", "poisson", "hawkes", "scp",
                                   "rmtpp", "nrpp", "gbtpp"}
    assert "gbtpp" in res.output
    for name in ("report.json", "records.csv", "folds.csv", "assignment.csv", "topk.csv"):
        a = (tmp_path / "a" / f"benchmark.{name}").read_bytes()
        assert a == (tmp_path / "b" / f"benchmark.{name}").read_bytes()
