import time

import pytest

from covdrive import DATA_DIR
from covdrive.catalog import load_catalog
from covdrive.simcore import resolve_map

CAMPAIGN_SECONDS = []


@pytest.fixture(scope="session")
def example_catalog():
    return load_catalog(DATA_DIR / "example_catalog.json")


@pytest.fixture(scope="session")
def town_catalog():
    return load_catalog(DATA_DIR / "town_catalog.json")


@pytest.fixture(scope="session")
def town():
    return resolve_map("town")


@pytest.fixture(scope="session")
def straight_map():
    return resolve_map("two_lane_straight")


@pytest.fixture(scope="session")
def default_campaign(tmp_path_factory):
    """The bundled default campaign, run twice into separate directories."""
    from covdrive.campaign import CampaignConfig, run_campaign

    dirs, reports = [], []
    for name in ("first", "second"):
        cfg = CampaignConfig.load(DATA_DIR / "campaign.json")
        cfg.output_dir = str(tmp_path_factory.mktemp(name))
        t0 = time.perf_counter()
        reports.append(run_campaign(cfg))
        CAMPAIGN_SECONDS.append(time.perf_counter() - t0)
        dirs.append(cfg.output_dir)
    return dirs, reports


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
