import os

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ORACLE_MAIN = os.path.join(ROOT, "oracles", "zeta-main.bin")
ORACLE_ALT = os.path.join(ROOT, "oracles", "zeta-alt.bin")

_criteria: list[tuple[int, bool, str]] = []


def record_criterion(n: int, ok: bool, detail: str):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    _criteria.append((n, ok, detail))
    return ok


@pytest.fixture(scope="session")
def oracle():
    from driftmle.limitlaws import read_oracle
    return read_oracle(ORACLE_MAIN)[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_criteria, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
