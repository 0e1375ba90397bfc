import pytest

_RESULTS = pytest.StashKey[dict]()


class Recorder:
    """Collects clause outcomes per acceptance criterion."""

    def __init__(self, store: dict):
        self.store = store

    def __call__(self, criterion: int, clause: str, passed: bool, detail: str = "") -> bool:
        self.store.setdefault(criterion, []).append((clause, bool(passed), detail))
        return bool(passed)


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def record(request):
    return Recorder(request.config.stash[_RESULTS])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        clauses = results[n]
        ok = all(p for _, p, _ in clauses)
        failed = [c for c, p, _ in clauses if not p]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += f"  (failing: {', '.join(failed)})"
        terminalreporter.write_line(line)
        for clause, p, detail in clauses:
            terminalreporter.write_line(f"    {'ok  ' if p else 'FAIL'} {clause}: {detail}")
