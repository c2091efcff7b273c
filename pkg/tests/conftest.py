import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS: dict = {}


@pytest.fixture
def criterion():
    """Context manager that records a PASS/FAIL line for one acceptance criterion."""

    @contextmanager
    def check(number: int, title: str):
        try:
            yield
        except BaseException as exc:
            line = f"criterion {number:>2} FAIL  {title}  ({type(exc).__name__}: {exc})".splitlines()[0]
            _VERDICTS[number] = line
            print(line)
            raise
        line = f"criterion {number:>2} PASS  {title}"
        _VERDICTS[number] = line
        print(line)

    return check


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[k])
