import csv
import json
from pathlib import Path

import pytest

from pgope.cli import main
from pgope.suites import ConfigError, ExperimentConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _config(tmp_path, mdp, **extra):
    cfg = {"mdp": str(mdp), "seed": 0, "samples": 20000}
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_all_on_deterministic_tree(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["all", "--config", str(CONFIGS / "deterministic_tree.json"), "--out", str(out)]) == 0
    rows = _rows(out / "crbound.csv")
    assert rows and all(abs(float(r["drpg_variance"])) < 1e-18 for r in rows)
    checks = _rows(out / "checks.csv")
    assert {c["suite"] for c in checks} == {"correspondence", "unbiasedness", "variance", "crbound"}
    assert all(c["passed"] == "True" for c in checks)
    assert "failed: 0" in capsys.readouterr().out


def test_same_seed_gives_identical_csv(tmp_path):
    cfg = _config(tmp_path, CONFIGS / "mdps" / "stochastic_dag.json")
    for name in ("a", "b"):
        assert main(["variance", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("checks.csv", "variance_table.csv", "monte_carlo.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["variance", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "1"]) == 0
    assert (tmp_path / "a" / "monte_carlo.csv").read_bytes() != (tmp_path / "c" / "monte_carlo.csv").read_bytes()


def test_failing_check_gives_nonzero_exit(tmp_path, monkeypatch):
    import pgope.suites as suites
    monkeypatch.setattr(suites, "UNBIASED_TOL", -1.0)
    cfg = _config(tmp_path, CONFIGS / "mdps" / "chain.json")
    assert main(["unbiasedness", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "FAIL" in (tmp_path / "o" / "summary.txt").read_text()


def test_malformed_probability_names_state_action(tmp_path, capsys):
    data = json.loads((CONFIGS / "mdps" / "stochastic_dag.json").read_text())
    entry = data["transitions"][2]
    entry["next"][0]["p"] = entry["next"][0]["p"] + 0.25
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    cfg = _config(tmp_path, bad)
    assert main(["correspondence", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert f"(s={entry['s']}, a={entry['a']})" in capsys.readouterr().err


def test_config_validation(tmp_path):
    mdp = CONFIGS / "mdps" / "chain.json"
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.load(_config(tmp_path, mdp, colour="red"))
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.load(_config(tmp_path, tmp_path / "missing.json"))
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig.load(_config(tmp_path, mdp, seed=None, suite="variance"))
    cfg = ExperimentConfig.load(_config(tmp_path, mdp, seed=None, suite="correspondence"))
    assert cfg.seed is None
    with pytest.raises(ConfigError, match="logits file"):
        ExperimentConfig.load(_config(tmp_path, mdp, policy={"logits_file": "nope.json"}))


def test_inline_and_file_logits(tmp_path):
    mdp = CONFIGS / "mdps" / "chain.json"
    logits = [[0.1 * i, -0.1 * i] for i in range(4)]
    (tmp_path / "logits.json").write_text(json.dumps(logits))
    a = ExperimentConfig.load(_config(tmp_path, mdp, policy={"logits": logits}))
    b = ExperimentConfig.load(_config(tmp_path, mdp, policy={"logits_file": "logits.json"}))
    from pgope.mdp import TabularMdp
    m = TabularMdp.load(mdp)
    assert (a.build_policy(m).logits == b.build_policy(m).logits).all()


def test_verify_correspondence_command(tmp_path):
    out = tmp_path / "dev.csv"
    rc = main(["verify-correspondence", "--pair", "dr-constant", "--mdp",
               str(CONFIGS / "mdps" / "stochastic_dag.json"), "--eps", "1e-5", "--out", str(out)])
    assert rc == 0
    rows = _rows(out)
    assert len(rows) == 6912
    assert max(float(r["deviation"]) for r in rows) <= 1e-6


def test_variance_table_command(tmp_path):
    out = tmp_path / "vt.csv"
    rc = main(["variance-table", "--mdp", str(CONFIGS / "mdps" / "deterministic_dag.json"),
               "--config", str(CONFIGS / "stochastic_dag.json"), "--out", str(out)])
    assert rc == 0
    rows = _rows(out)
    assert list(rows[0]) == ["estimator", "model", "trace", "reduction_vs_vanilla"]
    exact = [r for r in rows if r["estimator"] == "drpg" and r["model"] == "exact"]
    assert abs(float(exact[0]["reduction_vs_vanilla"]) - 1.0) <= 1e-9


def test_cr_bound_command(tmp_path, capsys):
    out = tmp_path / "cr.csv"
    mdp = str(CONFIGS / "mdps" / "stochastic_tree.json")
    assert main(["cr-bound", "--mdp", mdp, "--all", "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 42
    assert all(abs(float(r["gap"])) <= 1e-8 for r in rows)
    assert main(["cr-bound", "--mdp", mdp, "--coord", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "coordinate,bound,drpg_variance,gap" and lines[1].startswith("5,")
    assert main(["cr-bound", "--mdp", mdp, "--coord", "99"]) == 2


def test_generate_mdp_command(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(["generate-mdp", "--kind", "random-dag", "--seed", "3", "--param", "states_per_layer=2",
                     "--param", "horizon=2", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["generate-mdp", "--kind", "chain", "--param", "horizon=3"]) == 0
    assert json.loads(capsys.readouterr().out)["num_states"] == 4
    assert main(["generate-mdp", "--kind", "tree", "--param", "depth=2"]) == 2
