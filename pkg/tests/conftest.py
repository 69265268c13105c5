import numpy as np
import pytest

from psido.geometry import Frame
from psido.linearizations import ManifoldModel, make_model

ACCEPTANCE_LINES: list[str] = []


class CubicShear(ManifoldModel):
    """Flat exponential structure ``exp_p(v) = p + (v1, v2 + v1^3)``.

    Chart transitions between frames at different base points grow
    quadratically, so the bounded-geometry verifier must reject it.
    """

    kind = "cubic_shear"
    euclidean_charts = False

    def __init__(self):
        super().__init__(2)

    def exp(self, p, v):
        p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
        return p + np.stack([v[..., 0], v[..., 1] + v[..., 0] ** 3], -1)

    def log(self, p, q):
        d = np.asarray(q, float) - np.asarray(p, float)
        return np.stack([d[..., 0], d[..., 1] - d[..., 0] ** 3], -1)


@pytest.fixture
def cubic_shear():
    return CubicShear()


@pytest.fixture
def euclid1():
    m = make_model("euclidean_standard", dim=1)
    return m, Frame(m, [0.0])


@pytest.fixture
def euclid2():
    m = make_model("euclidean_standard", dim=2)
    return m, Frame(m, [0.0, 0.0])


@pytest.fixture
def hyperbolic():
    m = make_model("hyperbolic_exp")
    return m, Frame(m, [0.0, 0.0])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
