import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import _runs  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not _runs.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_runs.ACCEPTANCE):
        terminalreporter.write_line(_runs.ACCEPTANCE[n])
