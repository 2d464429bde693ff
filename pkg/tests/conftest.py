import pytest

from sawsynth.dataset import SingerConfig, generate_synthetic_singer

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def singer_dir(tmp_path_factory):
    """3.3 minutes of synthetic singing, rendered once per session."""
    out = tmp_path_factory.mktemp("singer")
    generate_synthetic_singer(seed=0, minutes=3.3, out_dir=out)
    return out


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    """Twelve seconds of synthetic singing in two 6 s files."""
    out = tmp_path_factory.mktemp("tiny")
    generate_synthetic_singer(seed=3, minutes=0.2, out_dir=out, config=SingerConfig(file_seconds=6.0))
    return out


# ---------------------------------------------------------------------------
# acceptance report
# ---------------------------------------------------------------------------


@pytest.fixture
def record_criterion(request):
    """Store one PASS/FAIL line per numbered criterion for the session summary."""
    results = request.config.stash.setdefault(_CRITERIA, {})

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
        results[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
