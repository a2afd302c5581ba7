import pytest

from warpflow.mesh import build_mesh

# Lines appended by the acceptance tests; echoed after the run so the
# per-criterion verdicts are visible even with output capture on.
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _isolated_out(tmp_path, monkeypatch):
    # keep scenario artifacts out of the working tree unless a test opts in
    monkeypatch.setenv("WARPFLOW_OUT", str(tmp_path / "warpflow_out"))


@pytest.fixture(scope="session")
def square16():
    return build_mesh("square", 1.0 / 16.0)


@pytest.fixture(scope="session")
def disk16():
    return build_mesh("disk", 1.0 / 16.0)


@pytest.fixture(scope="session")
def annulus8():
    return build_mesh("annulus", 1.0 / 8.0, r_in=0.5, r_out=1.0)
