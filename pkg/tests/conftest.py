import re

import pytest

_LINES = []


@pytest.fixture(scope="session")
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(number, name, passed, detail=""):
        line = f"criterion {str(number):<3} {'PASS' if passed else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        _LINES.append(line)
        print(line)
        return passed

    return record


def _order(line):
    num = line.split()[1]
    return int(re.match(r"\d+", num).group()), num


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=_order):
            terminalreporter.write_line(line)
