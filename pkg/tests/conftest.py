import numpy as np
import pytest

from impairsim.videomodel import RawFrame


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_frame(pixels, index=0, ts=0):
    return RawFrame(np.ascontiguousarray(pixels, dtype=np.uint8), index, ts)


CRITERIA_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
