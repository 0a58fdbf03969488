import json
from pathlib import Path

import pytest

from twosource import harness as hs
from twosource.cli import main

ROOT = Path(__file__).resolve().parents[1]


def small_config(epsilons=(0.4, 0.2)):
    cfg = hs.reference_config()
    cfg["scenario"]["epsilons"] = list(epsilons)
    cfg["experiments"] = [
        {"functional": "a_pairing", "targets": ["v0", "v1"]},
        {"functional": "mu", "targets": ["near0"]},
        {"functional": "source_limit", "targets": ["src"]},
        {"functional": "source", "targets": ["src"]},
    ]
    return cfg


def test_shipped_config_is_the_reference():
    shipped = json.loads((ROOT / "configs" / "reference.json").read_text())
    assert shipped == json.loads(json.dumps(hs.reference_config()))
    cfg = hs.load_config(ROOT / "configs" / "reference.json")
    assert cfg.scenario.epsilons == (0.4, 0.2, 0.1, 0.05, 0.025)


def test_config_errors():
    bad = hs.reference_config()
    bad["experiments"].append({"functional": "nope", "targets": []})
    with pytest.raises(hs.ConfigError):
        hs.load_config(bad)
    bad = hs.reference_config()
    bad["criteria"]["cross"] = "missing"
    with pytest.raises(hs.ConfigError):
        hs.load_config(bad)
    bad = hs.reference_config()
    bad["scenario"]["N"] = 1.0
    with pytest.raises(hs.ConfigError, match="weight"):
        hs.load_config(bad)


def test_csv_schema_and_precision():
    row = hs.ResultRow("s", 0.1, "wigner", "a", 1 / 3, -2 / 7, 1e-17, 0, 0, 5)
    text = hs.rows_to_csv([row])
    header, line = text.strip().split("\n")
    assert header.split(",") == hs.FIELD_NAMES
    assert "0.33333333333333331" in line
    assert hs.rows_from_csv(text) == [row]


def test_rerun_is_byte_identical_and_cache_is_exact(tmp_path):
    cfg = hs.load_config(small_config())
    rows1, rep1 = hs.run(cfg, tmp_path, ids=())
    csv1 = (tmp_path / "results.csv").read_text()
    rows2, _ = hs.run(cfg, tmp_path, ids=())
    assert (tmp_path / "results.csv").read_text() == csv1
    fresh, _ = hs.run(cfg, None, ids=())
    strip = lambda rows: [(r.functional, r.observable_id, r.epsilon, r.value_re, r.value_im, r.error) for r in rows]
    assert strip(fresh) == strip(rows1)
    assert len(rows1) == 2 * 2 + 1 + 1 + 2


def test_parallel_matches_serial():
    cfg = hs.load_config(small_config())
    a, _ = hs.run(cfg, None, jobs=1, ids=())
    b, _ = hs.run(cfg, None, jobs=2, ids=())
    assert [r.value for r in a] == [r.value for r in b]


def test_empty_sweep():
    cfg = hs.load_config(small_config(()))
    rows, rep = hs.run(cfg, None)
    assert rows == []
    assert rep["all_pass"]
    assert sorted(c["id"] for c in rep["criteria"]) == list(range(1, 14))
    assert all(c["status"] == "skipped" for c in rep["criteria"])


def test_report_lists_every_criterion_once():
    cfg = hs.load_config(small_config())
    runner = hs.Runner(cfg)
    res = hs.evaluate_criteria(hs.Context(cfg, runner), hs.SUITES["oscillatory"])
    rep = hs.build_report(cfg, res, runner)
    ids = [c["id"] for c in rep["criteria"]]
    assert ids == list(range(1, 14))
    assert {c["status"] for c in rep["criteria"]} == {"pass", "skipped"}


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["verify", "--suite", "oscillatory"]) == 0
    assert main(["verify", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["wigner", "--eps", "0.4", "--observable", "nope"]) == 2
    bad = small_config()
    bad["scenario"]["gamma"] = -1.0
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["verify", "--config", str(p)]) == 2


def test_cli_commands(tmp_path, capsys):
    assert main(["solve", "--eps", "0.2", "--point", "0", "0", "0", "--point", "1", "0", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["values"]) == 2
    assert main(["pair", "--eps", "0.2", "--field", "v0"]) == 0
    assert "value" in json.loads(capsys.readouterr().out)
    assert main(["mu", "--observable", "near0"]) == 0
    assert json.loads(capsys.readouterr().out)["value"][0] == pytest.approx(0.5531622065356105, rel=1e-10)
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(small_config()))
    out = tmp_path / "run"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--criteria", "13"]) == 0
    assert main(["export", "--out", str(out), "--format", "csv", "--path", str(tmp_path / "x.csv")]) == 0
    assert (tmp_path / "x.csv").read_text() == (out / "results.csv").read_text()
    assert main(["export", "--out", str(out), "--format", "json-report", "--path", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["all_pass"]
