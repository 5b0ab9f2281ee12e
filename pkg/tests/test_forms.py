import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wittenlab.errors import BottomDegree, NonClosedForm, ShapeMismatch, TopDegree
from wittenlab.forms import (DiscreteForm, Grid, assemble_witten_laplacian, codifferential,
                             constant_form, exterior_d, hodge_star, inner_product,
                             interior_product, lie_derivative, one_form, random_trig_form,
                             volume_form, wedge, witten_d, write_coo)
from wittenlab.manifold import ClosedOneForm, SampleManifold, make_field


def rel(a, b):
    return (a - b).norm() / max(a.norm(), b.norm(), 1e-300)


@pytest.fixture(scope="module")
def grids():
    return {1: Grid(SampleManifold.circle(), 64), 2: Grid(SampleManifold.torus(2), (32, 32))}


@pytest.fixture(scope="module")
def alphas():
    return {1: ClosedOneForm.from_field(make_field(SampleManifold.circle(), "circle-double-well")),
            2: ClosedOneForm.from_field(make_field(SampleManifold.torus(2), "torus-tilted"))}


def pairs(n):
    return [(n, q) for q in range(n + 1)]


@pytest.mark.parametrize("n, q", pairs(1) + pairs(2))
def test_star_star_sign(grids, rng, q, n):
    w = random_trig_form(grids[n], q, rng)
    np.testing.assert_array_equal(hodge_star(hodge_star(w)).data, (-1) ** (q * (n - q)) * w.data)


def test_d_squared_vanishes(grids, rng):
    w = random_trig_form(grids[2], 0, rng)
    assert exterior_d(exterior_d(w)).norm() < 1e-12 * exterior_d(w).norm()


@pytest.mark.parametrize("t", [1.0, 3.0, 10.0])
def test_witten_d_squared_vanishes(grids, alphas, rng, t):
    w = random_trig_form(grids[2], 0, rng)
    dw = witten_d(w, t, alphas[2])
    assert witten_d(dw, t, alphas[2]).norm() < 1e-11 * dw.norm()


def test_witten_d_at_zero_is_exterior_d(grids, alphas, rng):
    w = random_trig_form(grids[2], 1, rng)
    np.testing.assert_array_equal(witten_d(w, 0.0, alphas[2]).data, exterior_d(w).data)


def test_witten_d_kills_boltzmann_factor():
    grid = Grid(SampleManifold.circle(), 128)
    h = make_field(grid.manifold, "cos-sum")
    t = 2.0
    f = DiscreteForm.from_components(grid, 0, {(): lambda x: np.exp(-t * h.value(x))})
    out = witten_d(f, t, ClosedOneForm.from_field(h))
    assert out.norm() < 1e-12 * f.norm()


@pytest.mark.parametrize("n, q", [(1, 0), (2, 0), (2, 1)])
@pytest.mark.parametrize("t", [0.0, 1.0, 7.5])
def test_codifferential_is_adjoint(grids, alphas, rng, n, q, t):
    g = grids[n]
    w, e = random_trig_form(g, q, rng), random_trig_form(g, q + 1, rng)
    lhs = inner_product(witten_d(w, t, alphas[n]), e)
    rhs = inner_product(w, codifferential(e, t, alphas[n]))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_codifferential_in_one_dimension():
    # delta(t)(g d theta) = -g' + t h' g
    grid = Grid(SampleManifold.circle(), 64)
    h = make_field(grid.manifold, "cos-sum")
    x = grid.points[..., 0]
    g = np.sin(2 * x) + 0.5
    out = codifferential(DiscreteForm(grid, 1, g[None]), 3.0, ClosedOneForm.from_field(h))
    expected = -2 * np.cos(2 * x) + 3.0 * (-np.sin(x)) * g
    np.testing.assert_allclose(out.data[0], expected, atol=1e-12)


def test_scalar_witten_laplacian_in_one_dimension():
    # -f'' + t cos(theta) f + t^2 sin^2(theta) f for h = cos(theta)
    grid = Grid(SampleManifold.circle(), 64)
    alpha = ClosedOneForm.from_field(make_field(grid.manifold, "cos-sum"))
    x = grid.points[..., 0]
    f = np.cos(3 * x) + np.sin(x)
    t = 4.0
    expected = 9 * np.cos(3 * x) + np.sin(x) + (t * np.cos(x) + t * t * np.sin(x) ** 2) * f
    for route in ("composition", "direct"):
        op = assemble_witten_laplacian(grid, 0, t, alpha, route)
        np.testing.assert_allclose(op.matvec(f.ravel()), expected.ravel(), atol=1e-10)


@pytest.mark.parametrize("n, q", pairs(1) + pairs(2))
@pytest.mark.parametrize("t", [0.0, 1.0, 10.0])
def test_routes_agree(grids, alphas, rng, n, q, t):
    g = grids[n]
    a = assemble_witten_laplacian(g, q, t, alphas[n], "composition")
    b = assemble_witten_laplacian(g, q, t, alphas[n], "direct")
    v = random_trig_form(g, q, rng).vector()
    x, y = a.matvec(v), b.matvec(v)
    assert np.linalg.norm(x - y) <= 1e-8 * np.linalg.norm(x)


def test_sparse_assembly_matches_apply(grids, alphas, rng):
    for route in ("composition", "direct"):
        op = assemble_witten_laplacian(grids[2], 1, 2.0, alphas[2], route)
        v = rng.standard_normal(op.dimension)
        np.testing.assert_allclose(op.to_sparse() @ v, op.matvec(v), atol=1e-9 * op.scale)


def test_operator_is_symmetric(grids, alphas):
    A = assemble_witten_laplacian(grids[1], 1, 3.0, alphas[1]).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-10 * np.abs(A).max())


def test_interior_product_of_area_form(grids):
    g = grids[2]
    f = np.cos(g.points[..., 0]) * np.sin(2 * g.points[..., 1])
    w = DiscreteForm(g, 2, f[None])
    out = interior_product([1.0, 0.0], w)
    np.testing.assert_array_equal(out.data[0], 0 * f)
    np.testing.assert_array_equal(out.data[1], f)


def random_field(grid, rng):
    return random_trig_form(grid, 1, rng, bandwidth=2).data


@pytest.mark.parametrize("p, r", [(0, 1), (1, 0), (1, 1), (0, 2), (2, 0)])
def test_interior_product_leibniz(grids, rng, p, r):
    g = grids[2]
    a, b = random_trig_form(g, p, rng), random_trig_form(g, r, rng)
    X = random_field(g, rng)
    lhs = interior_product(X, wedge(a, b))
    rhs = DiscreteForm(g, p + r - 1)
    if p:
        rhs = rhs + wedge(interior_product(X, a), b)
    if r:
        rhs = rhs + (-1) ** p * wedge(a, interior_product(X, b))
    assert (lhs - rhs).norm() <= 1e-11 * lhs.norm()


def test_interior_product_squares_to_zero(grids, rng):
    X = random_field(grids[2], rng)
    w = random_trig_form(grids[2], 2, rng)
    assert interior_product(X, interior_product(X, w)).norm() <= 1e-14 * w.norm()


def test_interior_product_adjoint_of_wedge(grids, rng):
    g = grids[2]
    X = random_field(g, rng)
    w, e = random_trig_form(g, 2, rng), random_trig_form(g, 1, rng)
    lhs = inner_product(interior_product(X, w), e)
    rhs = inner_product(w, wedge(DiscreteForm(g, 1, X), e))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_lie_derivative_on_functions(grids, rng):
    g = grids[2]
    X = random_field(g, rng)
    f = random_trig_form(g, 0, rng)
    expected = X[0] * g.diff(f.data[0], 0) + X[1] * g.diff(f.data[0], 1)
    np.testing.assert_allclose(lie_derivative(X, f).data[0], expected, atol=1e-11 * np.abs(expected).max())


@pytest.mark.parametrize("p, r", [(0, 0), (0, 1), (1, 1), (0, 2), (1, 0)])
def test_lie_derivative_product_rule(grids, rng, p, r):
    g = grids[2]
    a, b = random_trig_form(g, p, rng), random_trig_form(g, r, rng)
    X = random_field(g, rng)
    lhs = lie_derivative(X, wedge(a, b))
    rhs = wedge(lie_derivative(X, a), b) + wedge(a, lie_derivative(X, b))
    assert (lhs - rhs).norm() <= 1e-10 * lhs.norm()


@settings(max_examples=25, deadline=None)
@given(p=st.integers(0, 2), r=st.integers(0, 2), seed=st.integers(0, 2 ** 32 - 1))
def test_wedge_graded_commutativity(p, r, seed):
    g = Grid(SampleManifold.torus(2), (16, 16))
    if p + r > 2:
        return
    rng = np.random.default_rng(seed)
    a, b = random_trig_form(g, p, rng, bandwidth=2), random_trig_form(g, r, rng, bandwidth=2)
    np.testing.assert_allclose(wedge(a, b).data, (-1) ** (p * r) * wedge(b, a).data, atol=1e-12)


def test_interpolation_is_exact_on_trig_data(grids, rng):
    g = grids[2]
    f = random_trig_form(g, 0, rng)
    pts = rng.uniform(0, 2 * math.pi, (50, 2))
    # reconstruct the same field from its Fourier series directly
    C = np.fft.fftn(f.data[0]) / g.size
    k = np.fft.fftfreq(32, d=1 / 32)
    direct = np.real(np.einsum("ab,pa,pb->p", C, np.exp(1j * np.outer(pts[:, 0], k)),
                               np.exp(1j * np.outer(pts[:, 1], k))))
    np.testing.assert_allclose(g.interpolate(f.data[0], pts), direct, atol=1e-12)
    np.testing.assert_allclose(g.interpolate(f.data[0], g.points.reshape(-1, 2)),
                               f.data[0].ravel(), atol=1e-12)


def test_volume_form_integrates_to_area(grids):
    vol = volume_form(grids[2])
    assert grids[2].integrate(vol.data[0]) == pytest.approx(4 * math.pi ** 2)
    assert constant_form(grids[2], 1, [1.0, 2.0]).data[1].mean() == 2.0


def test_degree_errors(grids, rng):
    g = grids[2]
    with pytest.raises(TopDegree):
        exterior_d(random_trig_form(g, 2, rng))
    with pytest.raises(TopDegree):
        wedge(random_trig_form(g, 1, rng), random_trig_form(g, 2, rng))
    with pytest.raises(BottomDegree):
        codifferential(random_trig_form(g, 0, rng))
    with pytest.raises(BottomDegree):
        interior_product([1.0, 0.0], random_trig_form(g, 0, rng))


def test_shape_errors(grids, rng):
    with pytest.raises(ShapeMismatch):
        inner_product(random_trig_form(grids[2], 0, rng), random_trig_form(grids[2], 1, rng))
    with pytest.raises(ShapeMismatch):
        DiscreteForm(grids[2], 1, np.zeros((3, 5)))
    with pytest.raises(ValueError):
        Grid(SampleManifold.circle(), 8)


def test_non_closed_alpha_rejected(grids):
    g = grids[2]
    x, y = g.points[..., 0], g.points[..., 1]
    beta = DiscreteForm(g, 1, np.stack([np.cos(y), np.zeros_like(x)]))
    with pytest.raises(NonClosedForm):
        assemble_witten_laplacian(g, 0, 1.0, beta)
    with pytest.raises(NonClosedForm):
        assemble_witten_laplacian(g, 0, 1.0, "dx")


def test_discrete_alpha_matches_analytic(grids, alphas, rng):
    g = grids[2]
    a = assemble_witten_laplacian(g, 1, 2.0, alphas[2])
    b = assemble_witten_laplacian(g, 1, 2.0, one_form(g, alphas[2]))
    v = random_trig_form(g, 1, rng).vector()
    np.testing.assert_allclose(a.matvec(v), b.matvec(v), atol=1e-9 * a.scale)


def test_write_coo(tmp_path, grids, alphas):
    op = assemble_witten_laplacian(grids[1], 0, 1.0, alphas[1], "direct")
    path = tmp_path / "op.txt"
    write_coo(op, path)
    rows = np.loadtxt(path, comments="#")
    A = np.zeros(op.shape)
    A[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
    np.testing.assert_allclose(A, op.toarray(), atol=1e-12 * op.scale)
