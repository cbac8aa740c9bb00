import contextlib
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_results: dict[int, tuple[str, str, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS or FAIL for one acceptance criterion; failures still raise."""
    detail: dict[str, str] = {}
    try:
        yield detail
    except BaseException:
        _results[number] = ("FAIL", title, detail.get("note", ""))
        raise
    _results[number] = ("PASS", title, detail.get("note", ""))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        status, title, note = _results[n]
        line = f"criterion {n:>2}: {status}  {title}"
        terminalreporter.write_line(f"{line}  ({note})" if note else line)
