import json

import pytest

from covdrive import DATA_DIR
from covdrive.cli import main


def test_generate(tmp_path, capsys):
    assert main(["generate", "--catalog", str(DATA_DIR / "example_catalog.json"), "--k", "2", "--num", "full",
                 "--out", str(tmp_path)]) == 0
    cov = json.loads((tmp_path / "coverage.json").read_text())
    assert cov["covered"] == cov["feasible"] == 20
    assert len(list(tmp_path.glob("abstract_*.json"))) == 9
    assert {tuple(s["categories"]): (s["covered"], s["feasible"]) for s in cov["subsets"]}[("road", "ego-action")] == (5, 5)


def test_pipeline(tmp_path, capsys):
    d = DATA_DIR
    assert main(["generate", "--catalog", str(d / "town_catalog.json"), "--num", "2", "--out", str(tmp_path / "g")]) == 0
    assert main(["instantiate", "--abstract", str(tmp_path / "g" / "abstract_001.json"), "--catalog",
                 str(d / "town_catalog.json"), "--map", "town", "--parameters", str(d / "town_parameters.json"),
                 "--seed", "3", "--out", str(tmp_path / "s.json")]) == 0
    assert main(["simulate", "--scenario", str(tmp_path / "s.json"), "--controller", "baseline:late-braking",
                 "--budget", "20", "--trace-out", str(tmp_path / "t.jsonl")]) == 0
    assert main(["evaluate", "--trace", str(tmp_path / "t.jsonl"), "--scenario", str(tmp_path / "s.json"),
                 "--thresholds", str(d / "thresholds.json"), "--report-out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert list(rep) == ["scenario", "termination", "safety_critical", "performance", "kpis"]
    assert main(["perturb", "--scenario", str(tmp_path / "s.json"), "--controller", "baseline:late-braking",
                 "--budget", "6", "--out", str(tmp_path / "p")]) == 0
    log = (tmp_path / "p" / "search.log").read_text().splitlines()
    assert log[0].split("\t") == ["point", "d", "t_npc", "t_ego", "outcome"]
    assert len(log) >= 2


def test_campaign_cli(tmp_path, capsys):
    cfg = json.loads((DATA_DIR / "campaign.json").read_text())
    cfg.update(num_abstract=1, instantiations=1, perturb_budget=2, figures=False, thresholds=None)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["campaign", "--config", str(p)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[1].split()[:2] == ["base", "1"]


def test_campaign_abort_exit_code(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"catalog": "nope.json"}))
    assert main(["campaign", "--config", str(p)]) != 0
    assert "error" in capsys.readouterr().err


def test_bad_catalog_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["generate", "--catalog", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_num_validation():
    with pytest.raises(SystemExit):
        main(["generate", "--catalog", "x", "--num", "0", "--out", "y"])
