"""Collects the acceptance-criterion verdicts and prints them after the run."""
from __future__ import annotations

import contextlib
import time

import pytest

VERDICTS: list[str] = []


@pytest.fixture
def criterion():
    """``with criterion(n, text):`` records PASS/FAIL (and elapsed time) for criterion n."""
    @contextlib.contextmanager
    def _record(number: int, text: str):
        start = time.perf_counter()
        try:
            yield
        except pytest.skip.Exception as exc:
            VERDICTS.append(f"criterion {number}: SKIP  {text} ({exc})")
            raise
        except BaseException:
            VERDICTS.append(f"criterion {number}: FAIL  {text} [{time.perf_counter() - start:.1f}s]")
            raise
        VERDICTS.append(f"criterion {number}: PASS  {text} [{time.perf_counter() - start:.1f}s]")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
