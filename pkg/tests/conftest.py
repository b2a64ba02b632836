import time

import pytest

_CRITERIA: list[str] = []


class Criterion:
    """Times a block, records one PASS/FAIL line and enforces the runtime budget."""

    def __init__(self, number, title, budget=None):
        self.number, self.title, self.budget = number, title, budget
        self.detail = ""

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self._t0
        over = self.budget is not None and elapsed >= self.budget
        ok = exc_type is None and not over
        limit = f" < {self.budget:g} s" if self.budget is not None else ""
        note = f"; {self.detail}" if self.detail else ""
        if exc_type is not None:
            note += f"; {exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number:>2}: {'PASS' if ok else 'FAIL'}  {self.title} [{elapsed:.2f} s{limit}{note}]"
        _CRITERIA.append(line)
        print(line)
        if exc_type is None and over:
            raise AssertionError(f"runtime {elapsed:.2f} s exceeds the {self.budget:g} s budget")
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
