"""Collects acceptance results and prints one PASS/FAIL line per criterion."""
import pytest

RESULTS = {}


class Criterion:
    def __init__(self, number):
        self.number = number
        self.checks = []

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    def verify(self):
        failed = [f"{n} ({d})" if d else n for n, ok, d in self.checks if not ok]
        assert self.checks, "no checks recorded"
        assert not failed, "failed: " + "; ".join(failed)

    def summary(self):
        return "; ".join(f"{n}{' ' + d if d else ''}: {'ok' if ok else 'FAIL'}" for n, ok, d in self.checks)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    crit = Criterion(marker.args[0] if marker else None)
    request.node._criterion = crit
    return crit


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = getattr(item, "_criterion", None)
    if crit is None or crit.number is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        RESULTS[crit.number] = (rep.passed, crit.summary() or str(rep.longrepr).splitlines()[-1])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(RESULTS):
        passed, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
