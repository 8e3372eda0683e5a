import os

import pytest

# keep BLAS single-threaded so timings and results do not depend on the host
os.environ.setdefault("OMP_NUM_THREADS", "1")

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture(scope="session")
def criterion(request):
    """``criterion(k, ok, detail)`` records a PASS/FAIL line and asserts ``ok``."""
    lines = request.config.stash[_LINES]

    def report(k, ok, detail=""):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append((k, line))
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(line)
