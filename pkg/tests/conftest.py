import numpy as np
import pytest

from cyclofrag.ingest import interpolate_track, write_towers, write_track
from cyclofrag.synthetic import make_scenario


@pytest.fixture(scope="session")
def small_scenario():
    return make_scenario(n_towers=600, seed=3)


@pytest.fixture(scope="session")
def small_track(small_scenario):
    return interpolate_track(small_scenario.track, 15)


@pytest.fixture()
def scenario_files(tmp_path, small_scenario):
    towers = tmp_path / "towers.csv"
    track = tmp_path / "track.csv"
    write_towers(towers, small_scenario.towers)
    write_track(track, small_scenario.track)
    return towers, track


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
