import numpy as np
import pytest

# acceptance outcomes, criterion -> list of (part, ok, detail)
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name}: {d}" if name else d for name, _, d in parts)
        tr.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
