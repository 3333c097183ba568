import pytest

_CRITERIA: list[str] = []


class CriterionReport:
    """Records one PASS/FAIL line per acceptance criterion and echoes it."""

    def __init__(self, key: str):
        self.key = key

    def __call__(self, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {self.key}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return CriterionReport(marker.args[0] if marker else request.node.name)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key): acceptance criterion identifier")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: s.split("criterion ")[1]):
            terminalreporter.write_line(line)
