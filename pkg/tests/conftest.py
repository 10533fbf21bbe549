import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from segmeta import volume_io


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion, printed unconditionally."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(rep, "when", "call") == "call":
                name = nodeid.split("::")[-1].replace("test_", "")
                lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in lines:
            terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240901))


@pytest.fixture
def tiny_store(tmp_path):
    """Five small random volumes on disk under one dataset."""
    gen = np.random.Generator(np.random.PCG64(5))
    paths = []
    for k in range(5):
        vox = gen.normal(2.0, 1.0, size=(4, 6, 5)).astype("<f4")
        p = tmp_path / f"v{k}.mlvol"
        volume_io.write_volume(volume_io.volume_from_array(vox), p)
        paths.append(str(p))
    return volume_io.DatasetStore("tiny", tuple(paths))
