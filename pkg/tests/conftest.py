import datetime as dt

import numpy as np
import pytest

from fqra.synthetic import SyntheticSpec, generate_synthetic


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def hourly_rows(start: dt.datetime, n_hours: int, *columns):
    rows = []
    for i in range(n_hours):
        ts = start + dt.timedelta(hours=i)
        rows.append([ts.strftime("%Y-%m-%d %H:%M")] + [col[i] for col in columns])
    return rows


@pytest.fixture(scope="session")
def synth_panel():
    """A 260-day synthetic market shared by the point and probabilistic tests."""
    return generate_synthetic(SyntheticSpec(n_days=260), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion; the block's exception decides."""

    class Recorder:
        def __init__(self):
            self.label = None

        def __call__(self, number: int, text: str):
            self.label = f"criterion {number}: {text}"
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            line = f"{'FAIL' if exc_type else 'PASS'} {self.label}"
            ACCEPTANCE_LINES.append(line)
            print(line)
            return False

    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
