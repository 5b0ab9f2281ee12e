import math

import numpy as np
import pytest

from wittenlab.forms import Grid
from wittenlab.manifold import ClosedOneForm, SampleManifold, find_zeros, make_field
from wittenlab.morse import build_morse_complex

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE[number] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


CONFIGS = {
    "circle-cos": ("circle", "cos-sum"),
    "circle-double-well": ("circle", "circle-double-well"),
    "torus-cos": ("torus", "cos-sum"),
}


def make_alpha(name: str) -> ClosedOneForm:
    kind, field = CONFIGS[name]
    M = SampleManifold.circle() if kind == "circle" else SampleManifold.torus(2)
    return ClosedOneForm.from_field(make_field(M, field))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def circle():
    return SampleManifold.circle()


@pytest.fixture(scope="session")
def torus():
    return SampleManifold.torus(2)


@pytest.fixture(scope="session")
def circle_grid(circle):
    return Grid(circle, 65)


@pytest.fixture(scope="session")
def torus_grid(torus):
    return Grid(torus, (33, 33))


_COMPLEXES = {}


def morse_complex_for(name: str):
    """Session cache: the torus complex takes a few seconds to shoot."""
    if name not in _COMPLEXES:
        alpha = make_alpha(name)
        points = find_zeros(alpha)
        _COMPLEXES[name] = (alpha, points, build_morse_complex(alpha, points))
    return _COMPLEXES[name]


@pytest.fixture(scope="session")
def complexes():
    return morse_complex_for


TWO_PI = 2 * math.pi
