import numpy as np
import pytest

from contrag.synthetic import make_series, write_csv

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and fail the test on FAIL."""

    def record(n: int, ok: bool, detail: str):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        request.config.stash[_VERDICTS].append(line)
        print(line)
        if not ok:
            pytest.fail(line, pytrace=False)

    return record


@pytest.fixture(scope="session")
def synth_csv(tmp_path_factory):
    return write_csv(tmp_path_factory.mktemp("data") / "synth.csv", make_series(900, 2, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
