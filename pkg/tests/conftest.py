import math
import os

import numpy as np
import pytest
from hypothesis import settings

from vsfscan.scene import Box, Pose, SceneSpec, rasterize

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def room_spec(size=4.0, res=0.1, height=2.0, furniture=(), start=None, labels=("wall", "floor", "sofa", "table")):
    """Closed square room with 0.1 m walls, a floor slab and optional furniture boxes."""
    t = 0.1
    n = int(round(size / res))
    nz = int(round(height / res))
    walls = [
        Box((0, 0, 0), (size, t, height), 0, True),
        Box((0, size - t, 0), (size, size, height), 0, True),
        Box((0, 0, 0), (t, size, height), 0, True),
        Box((size - t, 0, 0), (size, size, height), 0, True),
        Box((0, 0, 0), (size, size, res), 1, True),
    ]
    start = start or Pose(size / 2, size / 2, 0.0)
    return SceneSpec(res, (n, n, nz), tuple(labels), tuple(walls) + tuple(furniture), start)


@pytest.fixture
def room():
    sofa = Box((0.1, 1.2, 0.1), (0.9, 2.8, 0.8), 2)
    return room_spec(furniture=(sofa,))


@pytest.fixture
def room_gt(room):
    return rasterize(room)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def angle_close(a, b, tol=1e-9):
    d = (a - b + math.pi) % (2 * math.pi) - math.pi
    return abs(d) <= tol


# one pass/fail line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
