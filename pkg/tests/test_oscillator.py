import itertools

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from wittenlab.errors import DegreeMismatch
from wittenlab.oscillator import (OscillatorModel, epsilon_shift, ground_state_form,
                                  oscillator_spectrum)


def finite_difference_levels(t, sign, count, L=8.0, points=800):
    """-f'' + t^2 x^2 f + sign * t f on [-L, L], fourth-order stencil, Dirichlet ends."""
    x = np.linspace(-L, L, points + 2)[1:-1]
    h = x[1] - x[0]
    stencil = np.array([-1, 16, -30, 16, -1]) / (12 * h * h)
    D2 = sp.diags([np.full(points - abs(k), c) for k, c in zip(range(-2, 3), stencil)],
                  range(-2, 3)).toarray()
    H = -D2 + np.diag(t * t * x * x + sign * t)
    return la.eigvalsh(H, subset_by_index=[0, count - 1])


@pytest.mark.parametrize("k, q, sign", [(0, 0, -1), (0, 1, +1), (1, 0, +1), (1, 1, -1)])
@pytest.mark.parametrize("t", [1.0, 5.0])
def test_one_dimensional_against_finite_differences(k, q, sign, t):
    spec = oscillator_spectrum(OscillatorModel(1, k, q, t), 4)
    fd = finite_difference_levels(t, sign, 4)
    exact = np.array(spec.eigenvalues)
    assert np.all(np.abs(fd - exact) <= 1e-3 * np.maximum(exact, 2 * t))


def test_lowest_values_at_t5():
    spec = oscillator_spectrum(OscillatorModel(1, 0, 0, 5.0), 4)
    assert spec.eigenvalues == (0.0, 10.0, 20.0, 30.0)
    assert spec.multiplicities == (1, 1, 1, 1)


@pytest.mark.parametrize("n, k, q, expected", [
    (2, 0, 0, [(0, 1), (1, 2), (2, 3)]),
    (2, 0, 1, [(1, 2), (2, 4), (3, 6)]),
    (2, 1, 1, [(0, 1), (1, 2), (2, 4)]),
    (2, 0, 2, [(2, 1), (3, 2), (4, 3)]),
])
def test_two_dimensional_levels(n, k, q, expected):
    # each component carries a 2D ladder 2t|m|, offset by the Hessian terms of its index set
    assert list(oscillator_spectrum(OscillatorModel(n, k, q, 1.0), 3).levels) == expected


@pytest.mark.parametrize("n", [1, 2, 3])
def test_kernel_iff_degree_equals_index(n):
    for k, q in itertools.product(range(n + 1), repeat=2):
        dim = oscillator_spectrum(OscillatorModel(n, k, q, 2.0), 2).kernel_dimension()
        assert dim == (1 if q == k else 0)


def test_epsilon_shift_values():
    assert epsilon_shift(1, 0, 0, ()) == -1
    assert epsilon_shift(1, 0, 1, (1,)) == 1
    assert epsilon_shift(2, 1, 1, (1,)) == -2
    assert epsilon_shift(2, 1, 1, (2,)) == 2
    with pytest.raises(ValueError):
        epsilon_shift(2, 0, 2, (2, 1))


def test_ground_state_is_normalized():
    g = ground_state_form(OscillatorModel(2, 1, 1, 3.0))
    x = np.linspace(-6, 6, 601)
    X = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
    mass = np.sum(g.evaluate(X) ** 2) * (x[1] - x[0]) ** 2
    assert mass == pytest.approx(1.0, rel=1e-10)
    assert g.components == (1,)


def test_ground_state_requires_matching_degree():
    with pytest.raises(DegreeMismatch):
        ground_state_form(OscillatorModel(2, 1, 0, 1.0))


@pytest.mark.parametrize("args", [(0, 0, 0, 1.0), (1, 2, 0, 1.0), (1, 0, 0, 0.0)])
def test_invalid_models(args):
    with pytest.raises(ValueError):
        OscillatorModel(*args)
