import numpy as np
import pytest

from rbmvad.config import RunConfig
from rbmvad.detector import train_detector
from rbmvad.synth import BackgroundSpec, render

SMALL_SPEC = BackgroundSpec(height=48, width=72, texture_seed=3, mean=0.3, contrast=0.2, cell=12)
SMALL_CONFIG = RunConfig(scales=(1.0, 0.5), resize_h=48, resize_w=72, epochs=15, cluster_epochs=10,
                         batch_size=32, k_detect=40, gamma=3, chunk_length=10, update_epochs=5, seed=7)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_scene():
    frames, _, _ = render(60, SMALL_SPEC, seed=1)
    return frames


@pytest.fixture(scope="session")
def small_model(small_scene):
    return train_detector(small_scene, SMALL_CONFIG)


def flood_fill_components(z):
    """Brute-force 26-connected components as a set of frozensets."""
    z = np.asarray(z, dtype=bool)
    seen = np.zeros_like(z)
    comps = set()
    dims = z.shape
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)
               if (a, b, c) != (0, 0, 0)]
    for start in zip(*np.nonzero(z)):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            p = stack.pop()
            comp.append(tuple(int(x) for x in p))
            for o in offsets:
                q = (p[0] + o[0], p[1] + o[1], p[2] + o[2])
                if all(0 <= q[k] < dims[k] for k in range(3)) and z[q] and not seen[q]:
                    seen[q] = True
                    stack.append(q)
        comps.add(frozenset(comp))
    return comps
