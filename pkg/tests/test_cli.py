import json

import pytest

from xmodal import cli

TINY = {
    "corpus": {"n_pieces": 8, "segments_per_piece": 6},
    "epochs": 2,
    "batch_size": 8,
    "val_fraction": 0.5,
    "pool": {"pool_size": 12, "n_queries": 16, "n_hard": 3, "n_semihard": 2},
}
POOL = {"pool_size": 12, "n_queries": 16, "n_hard": 3, "n_semihard": 2, "seed": 5}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """gen-data then train d4a4 once for the whole module."""
    root = tmp_path_factory.mktemp("run")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY))
    (root / "pool.json").write_text(json.dumps(POOL))
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(root)]) == 0
    assert cli.main(["train", "--config", str(cfg), "--arm", "d4a4", "--out", str(root), "--quiet"]) == 0
    return root


def test_gen_data_outputs(run_dir, capsys):
    assert (run_dir / "corpus" / "manifest.jsonl").exists()
    man = json.loads((run_dir / "manifests" / "gen-data.json").read_text())
    assert man["command"] == "gen-data" and len(man["outputs"]) == 3


def test_train_outputs(run_dir):
    for name in ("best.xmck", "last.xmck", "history.jsonl"):
        assert (run_dir / "ckpt" / name).exists()
    assert len((run_dir / "ckpt" / "history.jsonl").read_text().splitlines()) == 2
    man = json.loads((run_dir / "manifests" / "train.json").read_text())
    assert man["seed"] == 0 and len(man["config_hash"]) == 16


def test_eval_writes_valid_report(run_dir, capsys):
    ck = str(run_dir / "ckpt" / "best.xmck")
    assert cli.main(["eval", "--checkpoint", ck, "--pool-config", str(run_dir / "pool.json")]) == 0
    printed = json.loads(capsys.readouterr().out)
    on_disk = json.loads((run_dir / "reports" / "eval_d4a4_pool5.json").read_text())
    assert printed == on_disk
    assert on_disk["metrics"]["s"] == min(on_disk["metrics"]["r10_am"], on_disk["metrics"]["r10_ma"])


def test_eval_is_deterministic(run_dir, capsys):
    ck = str(run_dir / "ckpt" / "best.xmck")
    outs = []
    for _ in range(2):
        cli.main(["eval", "--checkpoint", ck, "--pool-config", str(run_dir / "pool.json"), "--seed", "9"])
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]


def test_canonical_pool_does_not_fit_toy_corpus(run_dir, capsys):
    code = cli.main(["eval", "--checkpoint", str(run_dir / "ckpt" / "best.xmck")])
    assert code == cli.EXIT_CONFIG
    assert "does not fit" in capsys.readouterr().err


def test_validate_subset(run_dir, capsys):
    ck = str(run_dir / "ckpt" / "best.xmck")
    code = cli.main(["validate", "--checkpoint", ck, "--tests", "t01,t04,t10", "--pool-config",
                     str(run_dir / "pool.json")])
    assert code == 0
    rep = json.loads((run_dir / "reports" / "t01_d4a4.json").read_text())
    assert set(rep["metrics"]) == {f"{d}_{m}" for d in ("a4", "d4") for m in ("zero", "noise", "shuffle")}
    assert (run_dir / "reports" / "embeddings_d4a4.csv").exists()
    dash = json.loads((run_dir / "reports" / "dashboard_d4a4.json").read_text())
    assert set(dash["tests"]) == {"t01", "t04", "t10"}


def test_validate_not_applicable_is_reported(tmp_path, run_dir, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**TINY, "epochs": 1}))
    out = tmp_path / "d0"
    assert cli.main(["train", "--config", str(cfg), "--arm", "d0", "--corpus", str(run_dir / "corpus"),
                     "--out", str(out), "--quiet"]) == 0
    code = cli.main(["validate", "--checkpoint", str(out / "ckpt" / "best.xmck"), "--tests", "t08",
                     "--corpus", str(run_dir / "corpus"), "--pool-config", str(run_dir / "pool.json")])
    assert code == 0
    rep = json.loads((out / "reports" / "t08_d0.json").read_text())
    assert rep["status"] == "not-applicable"


def test_report_table(run_dir, capsys):
    path = run_dir / "reports" / "eval_d4a4_pool5.json"
    if not path.exists():
        cli.main(["eval", "--checkpoint", str(run_dir / "ckpt" / "best.xmck"), "--pool-config",
                  str(run_dir / "pool.json")])
    capsys.readouterr()
    assert cli.main(["report", "--inputs", str(path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("| Arm | Seed | S (%)")
    assert lines[2].startswith("| d4a4 | 5 |")


def test_report_rejects_mixed_versions(run_dir, tmp_path, capsys):
    d = json.loads((run_dir / "reports" / "eval_d4a4_pool5.json").read_text())
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**d, "schema_version": 2}))
    assert cli.main(["report", "--inputs", str(bad)]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("argv, code, msg", [
    (["train", "--arm", "zz", "--out", "{tmp}"], 2, "valid arms"),
    (["train", "--out", "{tmp}"], 3, "gen-data"),
    (["eval", "--checkpoint", "{tmp}/missing.xmck"], 3, "cannot read checkpoint"),
    (["gen-data", "--config", "{tmp}/nope.json", "--out", "{tmp}"], 2, "cannot read config"),
    (["validate", "--checkpoint", "x", "--tests", "t99"], 2, "valid tests"),
])
def test_error_exit_codes(argv, code, msg, tmp_path, capsys):
    argv = [a.replace("{tmp}", str(tmp_path)) for a in argv]
    assert cli.main(argv) == code
    assert msg in capsys.readouterr().err


def test_bad_config_field(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochz": 1}))
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "unknown field" in capsys.readouterr().err


def test_unknown_pool_field(run_dir, tmp_path, capsys):
    pool = tmp_path / "p.json"
    pool.write_text(json.dumps({"poolsize": 3}))
    code = cli.main(["eval", "--checkpoint", str(run_dir / "ckpt" / "best.xmck"), "--pool-config", str(pool)])
    assert code == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as err:
        cli.main(["train"])
    assert err.value.code == 2
