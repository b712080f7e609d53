import json
import warnings
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    warnings.filterwarnings("ignore", message="Cannot cache compiled function")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}: {detail}")


@pytest.fixture(scope="session")
def golden():
    data = json.loads((DATA / "golden_tables.json").read_text())
    rows = {int(k): int(v) for k, v in data["row_of_circuit"].items()}

    def row(table: int, circuit: int) -> np.ndarray:
        return np.array(data[f"table{table}"][str(rows[circuit])], dtype=float)

    return row
