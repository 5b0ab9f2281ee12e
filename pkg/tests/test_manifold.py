import math

import numpy as np
import pytest

from wittenlab.errors import DegenerateCritical
from wittenlab.manifold import (ClosedOneForm, SampleManifold, count_by_index, euler_characteristic,
                                find_critical_points, find_zeros, make_field, parse_field)

S = math.asin(0.075)

# hand-solved critical sets: (coordinates, value, index)
CIRCLE_COS = [((math.pi,), -1.0, 0), ((0.0,), 1.0, 1)]
DOUBLE_WELL = [
    ((math.pi / 2,), -0.7, 0),
    ((3 * math.pi / 2,), -1.3, 0),
    ((S,), 1.01125, 1),
    ((math.pi - S,), 1.01125, 1),
]
TORUS_COS = [((math.pi, math.pi), -2.0, 0), ((0.0, math.pi), 0.0, 1),
             ((math.pi, 0.0), 0.0, 1), ((0.0, 0.0), 2.0, 2)]
TORUS_TILTED = [((math.pi, math.pi), -1.7, 0), ((0.0, math.pi), -0.3, 1),
                ((math.pi, 0.0), -0.3, 1), ((0.0, 0.0), 2.3, 2)]


@pytest.mark.parametrize("n, name, expected", [
    (1, "cos-sum", CIRCLE_COS),
    (1, "circle-double-well", DOUBLE_WELL),
    (2, "cos-sum", TORUS_COS),
    (2, "torus-tilted", TORUS_TILTED),
])
def test_critical_points_match_hand_solution(n, name, expected):
    M = SampleManifold.torus(n)
    pts = find_critical_points(make_field(M, name))
    assert len(pts) == len(expected)
    for coords, value, index in expected:
        match = [p for p in pts if M.distance(p.x, coords) < 1e-9]
        assert len(match) == 1, coords
        assert match[0].value == pytest.approx(value, abs=1e-12)
        assert match[0].index == index


@pytest.mark.parametrize("n, name, counts", [
    (1, "cos-sum", (1, 1)),
    (1, "circle-double-well", (2, 2)),
    (2, "cos-sum", (1, 2, 1)),
    (2, "torus-tilted", (1, 2, 1)),
])
def test_counts_and_euler_characteristic(n, name, counts):
    pts = find_critical_points(make_field(SampleManifold.torus(n), name))
    assert count_by_index(pts, n) == counts
    assert euler_characteristic(counts) == 0


def test_points_sorted_by_index():
    pts = find_critical_points(make_field(SampleManifold.torus(2), "cos-sum"))
    assert [p.index for p in pts] == sorted(p.index for p in pts)


def test_hessian_eigenvectors_are_orthonormal():
    pts = find_critical_points(make_field(SampleManifold.torus(2), "torus-tilted"))
    for p in pts:
        V = p.hess_vectors
        np.testing.assert_allclose(V.T @ V, np.eye(2), atol=1e-12)
        assert sum(e < 0 for e in p.hess_eigs) == p.index


def test_field_derivatives_against_finite_differences(rng):
    M = SampleManifold.torus(2)
    h = make_field(M, "torus-tilted", [0.4])
    x = rng.uniform(0, 2 * math.pi, 2)
    eps = 1e-6
    fd = [(h.value(x + eps * e) - h.value(x - eps * e)) / (2 * eps) for e in np.eye(2)]
    np.testing.assert_allclose(h.grad(x), fd, atol=1e-8)
    fd_h = np.array([(h.grad(x + eps * e) - h.grad(x - eps * e)) / (2 * eps) for e in np.eye(2)])
    np.testing.assert_allclose(h.hess(x), fd_h, atol=1e-8)


def test_parse_field_round_trip():
    M = SampleManifold.torus(2)
    h = parse_field(M, "trig:1,0,1,0;0.5,0.25,1,-1")
    again = parse_field(M, h.describe())
    x = np.array([[0.3, 1.1], [2.0, 5.5]])
    np.testing.assert_array_equal(h.value(x), again.value(x))
    assert parse_field(M, "torus-tilted:0.2").params == (0.2,)


@pytest.mark.parametrize("spec", ["nope", "circle-double-well", "cos-sum:1"])
def test_bad_field_specs_rejected(spec):
    with pytest.raises(ValueError):
        parse_field(SampleManifold.torus(2), spec)


def test_wrap_and_displacement():
    M = SampleManifold.circle()
    assert M.wrap([-0.1])[0] == pytest.approx(2 * math.pi - 0.1)
    assert M.displacement([0.1], [2 * math.pi - 0.1])[0] == pytest.approx(-0.2)
    assert M.distance([0.0], [math.pi]) == pytest.approx(math.pi)


def test_harmonic_form_without_zeros():
    M = SampleManifold.circle()
    alpha = ClosedOneForm(M, None, (0.5,))
    assert not alpha.is_exact
    assert find_zeros(alpha) == []


def test_zero_form_is_degenerate():
    M = SampleManifold.circle()
    with pytest.raises(DegenerateCritical):
        find_zeros(ClosedOneForm.from_field(parse_field(M, "trig:0,0,1")))


def test_shifted_zeros_of_closed_form():
    # alpha = -sin(theta) d theta + 0.5 d theta vanishes where sin(theta) = 0.5
    M = SampleManifold.circle()
    alpha = ClosedOneForm(M, make_field(M, "cos-sum"), (0.5,))
    zs = find_zeros(alpha)
    got = sorted(z.coordinates[0] for z in zs)
    assert got == pytest.approx([math.pi / 6, 5 * math.pi / 6], abs=1e-10)
