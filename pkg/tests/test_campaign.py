import filecmp
import json
from pathlib import Path

import pytest

from covdrive import DATA_DIR
from covdrive.campaign import CampaignConfig, count_rows, recount_from_disk, run_campaign


def _tree(d):
    return sorted(str(p.relative_to(d)) for p in Path(d).rglob("*") if p.is_file())


def test_base_total(default_campaign):
    _, (rep, _) = default_campaign
    assert rep.rows["base"]["total"] == 45
    assert not rep.failures


def test_byte_identical(default_campaign):
    (a, b), _ = default_campaign
    files = _tree(a)
    assert files == _tree(b)
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert not mismatch and not errors


def test_counts_match_persisted_reports(default_campaign):
    (a, _), (rep, _) = default_campaign
    assert recount_from_disk(a) == rep.rows


def test_row_invariants(default_campaign):
    _, (rep, _) = default_campaign
    for row in rep.rows.values():
        assert row["problematic"] <= row["total"]
        assert row["safety-critical"] + row["performance"] >= row["problematic"]


def test_artifacts_exist(default_campaign):
    (a, _), (rep, _) = default_campaign
    manifest = json.loads((Path(a) / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    for e in rep.scenarios:
        for rel in (e.scenario, e.trace, e.report):
            assert (Path(a) / rel).is_file()
    assert (Path(a) / "counts.png").stat().st_size > 0
    assert {e.set for e in rep.scenarios} == {"base", "perturbed"}
    assert [e.id for e in rep.scenarios] == sorted(e.id for e in rep.scenarios if e.set == "base") + \
        sorted(e.id for e in rep.scenarios if e.set == "perturbed")


def test_text_and_csv(default_campaign):
    (a, _), (rep, _) = default_campaign
    text = (Path(a) / "report.txt").read_text()
    assert text.splitlines()[1].split()[:2] == ["base", "45"]
    csv = (Path(a) / "report.csv").read_text().splitlines()
    assert csv[0] == "set,total,problematic,safety-critical,performance"


def test_blocked_abstract_scenarios_replaced(default_campaign):
    _, (rep, _) = default_campaign
    assert len(rep.abstract) == 15
    assert not set(rep.blocked) & set(rep.abstract)


def test_single_scenario_campaign(tmp_path):
    cfg = CampaignConfig(num_abstract=1, instantiations=1, perturb_budget=2, output_dir=str(tmp_path), figures=False)
    rep = run_campaign(cfg)
    assert rep.rows["base"]["total"] == 1
    assert rep.rows["perturbed"]["total"] <= 2


def test_abort_writes_manifest(tmp_path):
    cfg = CampaignConfig(catalog="missing.json", output_dir=str(tmp_path / "out"), base_dir=str(tmp_path))
    with pytest.raises(FileNotFoundError):
        run_campaign(cfg)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "aborted"


@pytest.mark.parametrize("bad", [{"k": 0}, {"num_abstract": 0}, {"sim_budget": 0}, {"colour": "red"}])
def test_config_validation(bad):
    with pytest.raises((ValueError, TypeError)):
        CampaignConfig.from_dict(bad)


def test_count_rows_double_counting():
    from covdrive.campaign import ScenarioEntry

    e = [ScenarioEntry("a", "base", "", None, True, True, [], "", "", "", ""),
         ScenarioEntry("b", "base", "", None, False, False, [], "", "", "", "")]
    rows = count_rows(e)
    assert rows["base"] == {"total": 2, "problematic": 1, "safety-critical": 1, "performance": 1}
    assert rows["perturbed"]["total"] == 0


def test_bundled_config_loads():
    cfg = CampaignConfig.load(DATA_DIR / "campaign.json")
    assert (cfg.num_abstract, cfg.instantiations, cfg.k) == (15, 3, 2)
    assert cfg.resolve(cfg.thresholds).is_file()
