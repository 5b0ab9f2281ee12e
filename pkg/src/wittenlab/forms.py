"""Discrete de Rham calculus on uniform periodic grids.

Forms are stored collocated: a degree-q form on an n-torus is an array of
shape ``(C(n, q),) + grid.shape`` whose leading index runs over the strictly
increasing index subsets I in lexicographic order.  Derivatives are Fourier
spectral; for even grid sizes the Nyquist mode is dropped from first
derivatives so that the differentiation matrix is real and antisymmetric.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .errors import BottomDegree, NonClosedForm, ShapeMismatch, TopDegree
from .manifold import ClosedOneForm, SampleManifold

ROUTES = ("composition", "direct")
DEFAULT_GRID = {1: (257,), 2: (97, 97)}


# ---------------------------------------------------------------------------
# exterior algebra bookkeeping


@lru_cache(maxsize=None)
def subsets(n: int, q: int) -> tuple[tuple[int, ...], ...]:
    """0-based strictly increasing index subsets of size q, lexicographic."""
    return tuple(itertools.combinations(range(n), q))


@lru_cache(maxsize=None)
def _subset_position(n: int, q: int) -> dict[tuple[int, ...], int]:
    return {I: pos for pos, I in enumerate(subsets(n, q))}


def permutation_sign(seq: Sequence[int]) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def wedge_basis(n: int, q: int, i: int) -> np.ndarray:
    """Matrix of dx_i ^ . from Lambda^q to Lambda^{q+1}."""
    rows, cols = subsets(n, q + 1), subsets(n, q)
    pos = _subset_position(n, q + 1)
    E = np.zeros((len(rows), len(cols)))
    for c, I in enumerate(cols):
        if i in I:
            continue
        J = tuple(sorted(I + (i,)))
        E[pos[J], c] = (-1) ** sum(1 for j in I if j < i)
    return E


@lru_cache(maxsize=None)
def star_basis(n: int, q: int) -> np.ndarray:
    """Hodge star on constant forms, Lambda^q -> Lambda^{n-q}, flat oriented metric."""
    rows, cols = subsets(n, n - q), subsets(n, q)
    pos = _subset_position(n, n - q)
    R = np.zeros((len(rows), len(cols)))
    for c, I in enumerate(cols):
        comp = tuple(j for j in range(n) if j not in I)
        R[pos[comp], c] = permutation_sign(I + comp)
    return R


@lru_cache(maxsize=None)
def commutator_basis(n: int, q: int, i: int, j: int) -> np.ndarray:
    """[dx_i ^ , iota_j] = dx_i ^ iota_j - iota_j dx_i ^ on Lambda^q."""
    m = len(subsets(n, q))
    out = np.zeros((m, m))
    if q >= 1:
        out += wedge_basis(n, q - 1, i) @ wedge_basis(n, q - 1, j).T
    if q < n:
        out -= wedge_basis(n, q, j).T @ wedge_basis(n, q, i)
    return out


# ---------------------------------------------------------------------------
# grid


class Grid:
    """Uniform periodic collocation grid over a SampleManifold."""

    def __init__(self, manifold: SampleManifold, shape: Sequence[int] | int | None = None):
        n = manifold.dimension
        if shape is None:
            shape = DEFAULT_GRID.get(n, (33,) * n)
        if isinstance(shape, (int, np.integer)):
            shape = (int(shape),) * n
        shape = tuple(int(s) for s in shape)
        if len(shape) != n:
            raise ValueError(f"grid needs {n} sizes, got {shape}")
        if any(s < 16 for s in shape):
            raise ValueError("grids need at least 16 points per axis")
        self.manifold = manifold
        self.shape = shape
        self.n = n
        self.spacing = tuple(L / N for L, N in zip(manifold.periods, shape))
        self.axes = tuple(np.arange(N) * h for N, h in zip(shape, self.spacing))
        self.cell_volume = float(np.prod(self.spacing))

    def __eq__(self, other):
        return isinstance(other, Grid) and other.manifold == self.manifold and other.shape == self.shape

    def __hash__(self):
        return hash((self.manifold, self.shape))

    def __repr__(self):
        return f"Grid(periods={self.manifold.periods}, shape={self.shape})"

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers per axis with the Nyquist entry set to zero."""
        out = []
        for N, L in zip(self.shape, self.manifold.periods):
            k = np.fft.fftfreq(N, d=1.0 / N) * (2 * np.pi / L)
            if N % 2 == 0:
                k[N // 2] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def symbol_laplacian(self) -> np.ndarray:
        """Fourier symbol of -sum_i D_i D_i on the full grid."""
        ks = np.meshgrid(*[k ** 2 for k in self.wavenumbers], indexing="ij")
        return np.sum(ks, axis=0)

    def diff_matrix(self, axis: int) -> np.ndarray:
        return _diff_matrix(self.shape[axis], self.manifold.periods[axis])

    @cached_property
    def _sparse_diff(self) -> tuple[sp.csr_matrix, ...]:
        mats = []
        for a in range(self.n):
            before = int(np.prod(self.shape[:a]))
            after = int(np.prod(self.shape[a + 1:]))
            D = sp.csr_matrix(self.diff_matrix(a))
            mats.append(sp.kron(sp.kron(sp.identity(before), D), sp.identity(after), format="csr"))
        return tuple(mats)

    def sparse_diff(self, axis: int) -> sp.csr_matrix:
        """Spectral derivative along ``axis`` acting on raveled grid functions."""
        return self._sparse_diff[axis]

    def diff(self, u: np.ndarray, axis: int) -> np.ndarray:
        """Spectral derivative of u along grid axis ``axis`` (grid axes are the trailing ones)."""
        ax = u.ndim - self.n + axis
        k = self.wavenumbers[axis]
        shape = [1] * u.ndim
        shape[ax] = k.size
        return np.real(np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(u, axis=ax), axis=ax))

    def neg_laplacian(self, u: np.ndarray) -> np.ndarray:
        axes = tuple(range(u.ndim - self.n, u.ndim))
        return np.real(np.fft.ifftn(self.symbol_laplacian * np.fft.fftn(u, axes=axes), axes=axes))

    def integrate(self, f: np.ndarray) -> np.ndarray:
        axes = tuple(range(f.ndim - self.n, f.ndim))
        return np.sum(f, axis=axes) * self.cell_volume

    def evaluate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return fn(self.points)

    def interpolate(self, f: np.ndarray, pts, chunk: int = 4096) -> np.ndarray:
        """Trigonometric interpolant of grid data f (leading batch dims allowed) at points (P, n)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        axes = tuple(range(f.ndim - self.n, f.ndim))
        batch = f.shape[: f.ndim - self.n]
        C = np.fft.fftn(f, axes=axes) / self.size
        C = C.reshape((-1,) + self.shape)
        if pts.shape[0] > chunk:
            parts = [self._interp_coeffs(C, pts[i:i + chunk]) for i in range(0, pts.shape[0], chunk)]
            return np.concatenate(parts, axis=-1).reshape(batch + (pts.shape[0],))
        return self._interp_coeffs(C, pts).reshape(batch + (pts.shape[0],))

    def _interp_coeffs(self, C: np.ndarray, pts: np.ndarray) -> np.ndarray:
        factors = []
        for a, (N, L) in enumerate(zip(self.shape, self.manifold.periods)):
            k = np.fft.fftfreq(N, d=1.0 / N) * (2 * np.pi / L)
            factors.append(np.exp(1j * np.outer(pts[:, a], k)))  # (P, N_a)
        # contract the last axis first, keeping P as a running diagonal index
        out = np.einsum("b...k,pk->b...p", C, factors[-1])
        for a in range(self.n - 2, -1, -1):
            out = np.einsum("b...kp,pk->b...p", out, factors[a])
        return np.real(out)


@lru_cache(maxsize=32)
def _diff_matrix(N: int, L: float) -> np.ndarray:
    k = np.fft.fftfreq(N, d=1.0 / N) * (2 * np.pi / L)
    if N % 2 == 0:
        k[N // 2] = 0.0
    D = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(np.eye(N), axis=0), axis=0))
    D = 0.5 * (D - D.T)
    D.setflags(write=False)
    return D


# ---------------------------------------------------------------------------
# discrete forms


class DiscreteForm:
    """A degree-q form on a Grid; ``data`` has shape (C(n, q),) + grid.shape."""

    __array_priority__ = 1000

    def __init__(self, grid: Grid, degree: int, data=None):
        if not 0 <= degree <= grid.n:
            raise ValueError(f"degree must lie in [0, {grid.n}]")
        m = len(subsets(grid.n, degree))
        if data is None:
            data = np.zeros((m,) + grid.shape)
        data = np.asarray(data, dtype=float)
        if data.shape != (m,) + grid.shape:
            if data.size == m * grid.size:
                data = data.reshape((m,) + grid.shape)
            else:
                raise ShapeMismatch(f"expected component array {(m,) + grid.shape}, got {data.shape}")
        self.grid = grid
        self.degree = degree
        self.data = data

    @classmethod
    def from_components(cls, grid: Grid, degree: int, comps: dict) -> "DiscreteForm":
        """Build from {I (0-based tuple): array or callable on grid points}."""
        form = cls(grid, degree)
        pos = _subset_position(grid.n, degree)
        for I, val in comps.items():
            I = tuple(sorted(I))
            arr = val(grid.points) if callable(val) else val
            form.data[pos[I]] = np.broadcast_to(arr, grid.shape)
        return form

    @classmethod
    def from_vector(cls, grid: Grid, degree: int, v) -> "DiscreteForm":
        return cls(grid, degree, np.asarray(v, dtype=float).reshape((-1,) + grid.shape))

    def component(self, I) -> np.ndarray:
        return self.data[_subset_position(self.grid.n, self.degree)[tuple(I)]]

    def items(self):
        return zip(subsets(self.grid.n, self.degree), self.data)

    def vector(self) -> np.ndarray:
        return self.data.ravel()

    def copy(self) -> "DiscreteForm":
        return DiscreteForm(self.grid, self.degree, self.data.copy())

    def norm(self) -> float:
        return math.sqrt(max(inner_product(self, self), 0.0))

    def _check(self, other):
        if not isinstance(other, DiscreteForm):
            return NotImplemented
        if other.grid != self.grid or other.degree != self.degree:
            raise ShapeMismatch("forms live on different grids or have different degrees")
        return other

    def __add__(self, other):
        other = self._check(other)
        return DiscreteForm(self.grid, self.degree, self.data + other.data)

    def __sub__(self, other):
        other = self._check(other)
        return DiscreteForm(self.grid, self.degree, self.data - other.data)

    def __neg__(self):
        return DiscreteForm(self.grid, self.degree, -self.data)

    def __mul__(self, c):
        c = np.asarray(c, dtype=float)
        if c.ndim not in (0, self.grid.n) or (c.ndim and c.shape != self.grid.shape):
            return NotImplemented
        return DiscreteForm(self.grid, self.degree, self.data * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return DiscreteForm(self.grid, self.degree, self.data / c)

    def __repr__(self):
        return f"DiscreteForm(degree={self.degree}, grid={self.grid.shape})"


def one_form(grid: Grid, alpha: ClosedOneForm) -> DiscreteForm:
    return DiscreteForm(grid, 1, np.moveaxis(alpha.components(grid.points), -1, 0))


def constant_form(grid: Grid, degree: int, values: Sequence[float] | float) -> DiscreteForm:
    vals = np.atleast_1d(np.asarray(values, dtype=float))
    form = DiscreteForm(grid, degree)
    form.data[...] = vals.reshape((-1,) + (1,) * grid.n)
    return form


def volume_form(grid: Grid) -> DiscreteForm:
    return constant_form(grid, grid.n, 1.0)


def random_trig_form(grid: Grid, degree: int, rng: np.random.Generator,
                     bandwidth: int = 4) -> DiscreteForm:
    """Random real trigonometric form with modes |k_i| <= bandwidth in every component."""
    m = len(subsets(grid.n, degree))
    coeffs = np.zeros((m,) + grid.shape, dtype=complex)
    sl = []
    for N in grid.shape:
        if 2 * bandwidth + 1 > N // 2:
            raise ValueError("bandwidth too large for the grid")
        sl.append(np.r_[0: bandwidth + 1, N - bandwidth: N])
    idx = np.ix_(*sl)
    for c in range(m):
        block = rng.standard_normal(tuple(len(s) for s in sl)) + 1j * rng.standard_normal(tuple(len(s) for s in sl))
        coeffs[(c,) + idx] = block
    data = np.real(np.fft.ifftn(coeffs, axes=tuple(range(1, grid.n + 1)))) * grid.size / (2 * bandwidth + 1) ** grid.n
    return DiscreteForm(grid, degree, data)


def _vector_field(grid: Grid, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape == (grid.n,):
        X = X.reshape((grid.n,) + (1,) * grid.n) * np.ones(grid.shape)
    if X.shape != (grid.n,) + grid.shape:
        raise ShapeMismatch(f"vector field must have shape {(grid.n,) + grid.shape}")
    return X


# ---------------------------------------------------------------------------
# pointwise and differential operations


def exterior_d(omega: DiscreteForm) -> DiscreteForm:
    g, q = omega.grid, omega.degree
    if q >= g.n:
        raise TopDegree(f"d is zero on top-degree forms (q={q}, n={g.n})")
    out = DiscreteForm(g, q + 1)
    pos = _subset_position(g.n, q)
    for r, J in enumerate(subsets(g.n, q + 1)):
        for p, i in enumerate(J):
            out.data[r] += (-1) ** p * g.diff(omega.data[pos[J[:p] + J[p + 1:]]], i)
    return out


def wedge(a: DiscreteForm, b: DiscreteForm) -> DiscreteForm:
    g = a.grid
    if b.grid != g:
        raise ShapeMismatch("wedge of forms on different grids")
    p, r = a.degree, b.degree
    if p + r > g.n:
        raise TopDegree("wedge product degree exceeds the manifold dimension")
    out = DiscreteForm(g, p + r)
    pa, pb = _subset_position(g.n, p), _subset_position(g.n, r)
    for k, K in enumerate(subsets(g.n, p + r)):
        for A in itertools.combinations(K, p):
            B = tuple(j for j in K if j not in A)
            out.data[k] += permutation_sign(A + B) * a.data[pa[A]] * b.data[pb[B]]
    return out


def hodge_star(omega: DiscreteForm) -> DiscreteForm:
    g, q = omega.grid, omega.degree
    R = star_basis(g.n, q)
    return DiscreteForm(g, g.n - q, np.tensordot(R, omega.data, axes=(1, 0)))


def interior_product(X, omega: DiscreteForm) -> DiscreteForm:
    g, q = omega.grid, omega.degree
    if q == 0:
        raise BottomDegree("interior product of a 0-form")
    X = _vector_field(g, X)
    out = DiscreteForm(g, q - 1)
    for i in range(g.n):
        E = wedge_basis(g.n, q - 1, i)  # iota_i = E^T
        out.data += np.tensordot(E.T, omega.data, axes=(1, 0)) * X[i]
    return out


def lie_derivative(X, omega: DiscreteForm) -> DiscreteForm:
    g, q = omega.grid, omega.degree
    out = DiscreteForm(g, q)
    if q >= 1:
        out = out + exterior_d(interior_product(X, omega))
    if q < g.n:
        out = out + interior_product(X, exterior_d(omega))
    return out


def _alpha_form(grid: Grid, alpha) -> DiscreteForm:
    if alpha is None:
        return DiscreteForm(grid, 1)
    if isinstance(alpha, DiscreteForm):
        if alpha.degree != 1 or alpha.grid != grid:
            raise ShapeMismatch("alpha must be a 1-form on the same grid")
        return alpha
    return one_form(grid, alpha)


def witten_d(omega: DiscreteForm, t: float, alpha) -> DiscreteForm:
    """d(t) omega = d omega + t alpha ^ omega."""
    if omega.degree >= omega.grid.n:
        raise TopDegree("d(t) is zero on top-degree forms")
    out = exterior_d(omega)
    if t:
        out = out + t * wedge(_alpha_form(omega.grid, alpha), omega)
    return out


def codifferential(omega: DiscreteForm, t: float = 0.0, alpha=None) -> DiscreteForm:
    """Formal adjoint of d(t): (-1)^{n(q-1)+1} R d(-t) R on degree-q forms.

    The deformation parameter enters the middle factor with a flipped sign,
    which is what adjointness with respect to the L2 product requires.
    """
    g, q = omega.grid, omega.degree
    if q == 0:
        raise BottomDegree("codifferential of a 0-form")
    inner = hodge_star(omega)
    inner = witten_d(inner, -t, alpha)
    return (-1) ** (g.n * (q - 1) + 1) * hodge_star(inner)


def inner_product(a: DiscreteForm, b: DiscreteForm) -> float:
    if a.grid != b.grid or a.degree != b.degree:
        raise ShapeMismatch("inner product needs equal degrees and grids")
    return float(np.sum(a.data * b.data) * a.grid.cell_volume)


# ---------------------------------------------------------------------------
# Witten Laplacian


def _alpha_fields(grid: Grid, alpha):
    """Components (n,)+shape and Jacobian (n, n)+shape of alpha on the grid."""
    n = grid.n
    if alpha is None:
        z = np.zeros((n,) + grid.shape)
        return z, np.zeros((n, n) + grid.shape)
    if isinstance(alpha, ClosedOneForm):
        if alpha.manifold != grid.manifold:
            raise ShapeMismatch("alpha lives on another manifold")
        comps = np.moveaxis(alpha.components(grid.points), -1, 0)
        jac = np.moveaxis(alpha.jacobian(grid.points), (-2, -1), (0, 1))
        return comps, jac
    if isinstance(alpha, DiscreteForm):
        a = _alpha_form(grid, alpha)
        if n > 1:
            da = exterior_d(a)
            scale = np.max(np.abs(a.data)) * max(np.max(np.abs(k)) for k in grid.wavenumbers) + 1.0
            if np.max(np.abs(da.data)) > 1e-9 * scale:
                raise NonClosedForm(f"d alpha has size {np.max(np.abs(da.data)):.3e}")
        jac = np.stack([np.stack([grid.diff(a.data[j], i) for j in range(n)]) for i in range(n)])
        jac = 0.5 * (jac + np.swapaxes(jac, 0, 1))
        return a.data, jac
    raise NonClosedForm(f"cannot interpret {type(alpha).__name__} as a closed 1-form")


def d_matrix(grid: Grid, q: int, t: float, alpha) -> sp.csr_matrix:
    """Sparse matrix of d^q(t) on stacked components."""
    if q >= grid.n:
        raise TopDegree("d(t) is zero on top-degree forms")
    comps, _ = _alpha_fields(grid, alpha)
    blocks = None
    for i in range(grid.n):
        op = grid.sparse_diff(i)
        if t:
            op = op + sp.diags(t * comps[i].ravel())
        term = sp.kron(sp.csr_matrix(wedge_basis(grid.n, q, i)), op, format="csr")
        blocks = term if blocks is None else blocks + term
    return blocks.tocsr()


def star_matrix(grid: Grid, q: int) -> sp.csr_matrix:
    return sp.kron(sp.csr_matrix(star_basis(grid.n, q)), sp.identity(grid.size), format="csr")


def codiff_matrix(grid: Grid, q: int, t: float, alpha) -> sp.csr_matrix:
    """Sparse matrix of delta^q(t): Omega^q -> Omega^{q-1}, assembled as R d(-t) R."""
    if q == 0:
        raise BottomDegree("codifferential of a 0-form")
    n = grid.n
    sign = (-1) ** (n * (q - 1) + 1)
    mid = d_matrix(grid, n - q, -t, alpha)
    return (sign * (star_matrix(grid, n - q + 1) @ mid @ star_matrix(grid, q))).tocsr()


@dataclass
class WittenOperator:
    """Delta_q(t) for a closed 1-form alpha on a grid, with a matrix-free apply."""

    grid: Grid
    q: int
    t: float
    alpha: object
    route: str
    _apply: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    scale: float = 1.0
    _factors: tuple | None = field(default=None, repr=False)
    _sparse: Callable[[], sp.spmatrix] | None = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return len(subsets(self.grid.n, self.q)) * self.grid.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dimension, self.dimension)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._apply(np.asarray(v, dtype=float))

    def matmat(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        return np.column_stack([self._apply(V[:, j]) for j in range(V.shape[1])]) if V.ndim == 2 else self._apply(V)

    def apply(self, omega: DiscreteForm) -> DiscreteForm:
        if omega.degree != self.q or omega.grid != self.grid:
            raise ShapeMismatch("operator and form disagree on degree or grid")
        return DiscreteForm.from_vector(self.grid, self.q, self.matvec(omega.vector()))

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, matmat=self.matmat, dtype=float)

    def factors(self):
        """(d_q(t), delta_q(t)) sparse matrices with Delta = delta d + d delta; None entries at the ends."""
        if self._factors is None:
            g, q = self.grid, self.q
            d = d_matrix(g, q, self.t, self.alpha) if q < g.n else None
            dl = codiff_matrix(g, q, self.t, self.alpha) if q > 0 else None
            self._factors = (d, dl)
        return self._factors

    def to_sparse(self) -> sp.csr_matrix:
        if self._sparse is not None:
            return self._sparse().tocsr()
        g, q = self.grid, self.q
        d, dl = self.factors()
        out = sp.csr_matrix(self.shape)
        if d is not None:
            out = out + codiff_matrix(g, q + 1, self.t, self.alpha) @ d
        if dl is not None:
            out = out + d_matrix(g, q - 1, self.t, self.alpha) @ dl
        return out.tocsr()

    def toarray(self) -> np.ndarray:
        if self.dimension > 6000:
            raise MemoryError("operator too large for a dense copy")
        return self.to_sparse().toarray()


def _zeroth_order(grid: Grid, q: int, jac: np.ndarray) -> np.ndarray:
    """Pointwise endomorphism sum_ij H_ij [dx_i ^, iota_j], shape (m, m) + grid.shape."""
    n = grid.n
    m = len(subsets(n, q))
    Z = np.zeros((m, m) + grid.shape)
    for i in range(n):
        for j in range(n):
            C = commutator_basis(n, q, i, j)
            if np.any(C):
                Z += C.reshape((m, m) + (1,) * n) * jac[i, j]
    return Z


def assemble_witten_laplacian(grid: Grid, q: int, t: float, alpha,
                              route: str = "composition") -> WittenOperator:
    """Delta_q(t) by composition (delta d + d delta) or by the explicit Weitzenbock-type formula.

    The direct route is Delta_q + t * Z + t^2 |alpha|^2 where Z is the pointwise
    endomorphism L_{-grad alpha} + its adjoint, i.e. sum_ij Hess_ij [dx_i ^, iota_j].
    """
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not 0 <= q <= grid.n:
        raise ValueError("degree out of range")
    if alpha is not None and not isinstance(alpha, (ClosedOneForm, DiscreteForm)):
        raise NonClosedForm(f"cannot interpret {type(alpha).__name__} as a closed 1-form")
    comps, jac = _alpha_fields(grid, alpha)
    n, m = grid.n, len(subsets(grid.n, q))
    shape = (m,) + grid.shape
    Z = _zeroth_order(grid, q, jac)
    pot = t * t * np.sum(comps ** 2, axis=0)
    z_norm = 0.0
    if t and m:
        zz = np.moveaxis(Z.reshape(m, m, -1), -1, 0)
        z_norm = float(np.max(np.linalg.norm(zz, ord=2, axis=(1, 2))))
    lap_norm = float(np.max(grid.symbol_laplacian))
    scale = lap_norm + t * z_norm + float(np.max(pot))

    if route == "direct":
        def apply(v):
            u = v.reshape(shape)
            out = grid.neg_laplacian(u) + pot * u
            if t:
                out = out + t * np.einsum("ij...,j...->i...", Z, u)
            return out.ravel()

        def sparse_matrix():
            lap = None
            for a in range(n):
                D = grid.sparse_diff(a)
                term = -(D @ D)
                lap = term if lap is None else lap + term
            out = sp.kron(sp.identity(m), lap) + sp.kron(sp.identity(m), sp.diags(pot.ravel()))
            if t:
                blocks = [[sp.diags(t * Z[r, c].ravel()) for c in range(m)] for r in range(m)]
                out = out + sp.bmat(blocks)
            return out.tocsr()

        return WittenOperator(grid, q, float(t), alpha, route, apply, scale, None, sparse_matrix)

    op = WittenOperator(grid, q, float(t), alpha, route, lambda v: v, scale)
    d, dl = op.factors()
    d_up = codiff_matrix(grid, q + 1, t, alpha) if d is not None else None
    d_dn = d_matrix(grid, q - 1, t, alpha) if dl is not None else None

    def apply(v):
        out = np.zeros_like(v)
        if d is not None:
            out += d_up @ (d @ v)
        if dl is not None:
            out += d_dn @ (dl @ v)
        return out

    op._apply = apply
    return op


def write_coo(op: WittenOperator, path) -> None:
    """Debug dump of an assembled operator as 'row col value' lines."""
    A = op.to_sparse().tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# Delta_{op.q}(t={op.t}) route={op.route} shape={A.shape[0]}x{A.shape[1]}\n")
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
