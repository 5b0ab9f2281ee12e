"""Integration over unstable cells, cutoff Gaussian quasimodes and the comparison map L(t).

L(t) sends a small eigenform U to the cochain x -> S(x) * int_{W_x} e^{th} U.  The
factor e^{th} is never formed on its own: it is combined with the e^{-th(x)} of the
scaling so that only exp(t (h - h(x))) <= 1 appears on the cell of x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .errors import CellNotConverged, SingularGram, SupportOverlap
from .forms import DiscreteForm, Grid, inner_product, subsets
from .manifold import ClosedOneForm
from .morse import MorseComplex, OrientationChoice, as_one_form
from .spectra import SmallSubspace, small_subspace

INT_TOL = 1e-8
CHAIN_TOL = 1e-6
ETA_FACTOR = 0.4
GRAM_COND = 1e8
CONVENTIONS = ("pi-over-t", "t-over-pi")

_GL8 = np.polynomial.legendre.leggauss(8)


def _panels(a: float, b: float, count: int):
    """Composite 8-point Gauss-Legendre nodes and weights on [a, b]."""
    x, w = _GL8
    edges = np.linspace(a, b, count + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _form_values(form, pts: np.ndarray, degree: int, n: int) -> np.ndarray:
    """Components of ``form`` at points, shape (P, C(n, q))."""
    m = len(subsets(n, degree))
    if isinstance(form, DiscreteForm):
        if form.degree != degree:
            raise ValueError(f"form has degree {form.degree}, cell has dimension {degree}")
        vals = form.grid.interpolate(form.data, form.grid.manifold.wrap(pts))
        return np.asarray(vals).T.reshape(len(pts), m)
    vals = np.asarray(form(pts), dtype=float)
    return vals.reshape(len(pts), m)


@dataclass
class UnstableCell:
    """Quadrature for the compactified unstable cell of a critical point.

    kind is 'point' (index 0), 'curve' (index 1: the two flow rays), 'top' (the single
    index-n point, whose cell is M up to measure zero) or 'fan' (an index-2 point among
    several maxima on a surface, integrated through its lifted boundary).  ``weights`` carry orientation and Jacobian factors;
    for curves they are tangent vectors, shape (P, n).
    """

    point: int
    degree: int
    kind: str
    nodes: np.ndarray | None
    weights: np.ndarray | None
    sign: int
    reference: float = 0.0
    quad_grid: Grid | None = field(default=None, repr=False)
    pieces: list = field(default_factory=list, repr=False)

    def integrate(self, form, weight: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
        n = self.quad_grid.n
        if self.kind == "fan":
            if isinstance(form, DiscreteForm):
                g, vals = form.grid, form.data[0]
            else:
                g = self.quad_grid
                vals = _form_values(form, g.points.reshape(-1, n), n, n)[:, 0].reshape(g.shape)
            if weight is not None:
                vals = vals * weight(g.points)
            total = 0.0
            for curve, shift, eps in self.pieces:
                F = _x_antiderivative(g, vals, curve.nodes + shift)
                total += eps * float(np.sum(F * curve.weights[:, 1]))
            return total
        if self.kind == "top":
            if isinstance(form, DiscreteForm):
                g, vals = form.grid, form.data[0]
            else:
                g = self.quad_grid
                vals = _form_values(form, g.points.reshape(-1, n), n, n)[:, 0].reshape(g.shape)
            if weight is not None:
                vals = vals * weight(g.points)
            return float(self.sign * g.integrate(vals))
        vals = _form_values(form, self.nodes, self.degree, n)
        if weight is not None:
            vals = vals * np.asarray(weight(self.nodes)).reshape(-1, 1)
        if self.kind == "curve":
            return float(np.sum(vals * self.weights))
        return float(np.sum(vals[:, 0] * self.weights))


def _flow_rhs(alpha: ClosedOneForm):
    def rhs(_, x):
        return -alpha.components(x)
    return rhs


def _curve_cell(alpha, cx: MorseComplex, xi: int, quad_grid: Grid, int_tol: float) -> UnstableCell:
    x = cx.points[xi]
    o = cx.orientation
    ends = []
    for orb in cx.orbits[xi]:
        tr = orb.trajectory
        ends.append((orb.ray, tr))
    exact_ref = sum(s * (tr.lift - x.x) for s, tr in ends) * o.signs[xi]
    rhs = _flow_rhs(alpha)
    for refine in range(4):
        nodes, vecs = [], []
        for s, tr in ends:
            fac = s * o.signs[xi]
            # straight piece from x to the seed, the flow line, then into the limit point
            u, w = _panels(0.0, 1.0, 1)
            seg = tr.start - x.x
            nodes.append(x.x + u[:, None] * seg)
            vecs.append(fac * w[:, None] * seg)
            T = tr.duration
            count = (2 ** refine) * max(4, int(math.ceil(2 * T)))
            tau, w = _panels(0.0, T, count)
            pts = tr.solution(tau).T
            nodes.append(pts)
            vecs.append(fac * w[:, None] * np.array([rhs(0, p) for p in pts]))
            end = tr.path[-1]
            seg = tr.lift - end
            u, w = _panels(0.0, 1.0, 1)
            nodes.append(end + u[:, None] * seg)
            vecs.append(fac * w[:, None] * seg)
        nodes, vecs = np.vstack(nodes), np.vstack(vecs)
        err = float(np.max(np.abs(vecs.sum(axis=0) - exact_ref)))
        if err <= int_tol:
            return UnstableCell(xi, 1, "curve", nodes, vecs, o.signs[xi], err, quad_grid)
    raise CellNotConverged(f"curve cell of point {xi}: reference integral off by {err:.3e}")


def _x_antiderivative(grid: Grid, f: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """F(x, y) with dF/dx = f on the universal cover of a 2-torus, evaluated at lifted points.

    The mean-in-x part of f contributes x * f_0(y), which is not periodic; everything
    else is integrated mode by mode.
    """
    C = np.fft.fft2(f) / grid.size
    N0, N1 = grid.shape
    L0, L1 = grid.manifold.periods
    kx = np.fft.fftfreq(N0, d=1.0 / N0) * (2 * np.pi / L0)
    ky = np.fft.fftfreq(N1, d=1.0 / N1) * (2 * np.pi / L1)
    D = np.zeros_like(C)
    nz = kx != 0
    D[nz] = C[nz] / (1j * kx[nz, None])
    out = np.empty(len(pts))
    for i in range(0, len(pts), 4096):
        p = pts[i:i + 4096]
        ex = np.exp(1j * np.outer(p[:, 0], kx))
        ey = np.exp(1j * np.outer(p[:, 1], ky))
        periodic = np.einsum("pk,kl,pl->p", ex, D, ey)
        zero = ey @ C[0]
        out[i:i + 4096] = np.real(periodic) + p[:, 0] * np.real(zero)
    return out


def _fan_cell(alpha, cx: MorseComplex, xi: int, cells: dict, quad_grid: Grid) -> UnstableCell:
    """2-cell of one of several maxima on a surface, integrated through its boundary.

    On the universal cover the closed cell is a disc whose boundary is the chain
    sum_gamma eps(gamma) W_y, each saddle curve translated to the lift reached by gamma.
    Green's theorem with F = x-antiderivative of the integrand turns the area integral
    into curve quadratures over those lifted saddle curves.
    """
    pieces = []
    for orb in cx.orbits[xi]:
        y = orb.lower
        shift = orb.trajectory.lift - cx.points[y].x
        pieces.append((cells[y], shift, orb.sign))
    if not pieces:
        raise CellNotConverged(f"point {xi} has no separatrices; use a top cell")
    cell = UnstableCell(xi, 2, "fan", None, None, cx.orientation.sign(xi), 0.0, quad_grid, pieces)
    area = cell.integrate(lambda z: np.ones((len(z), 1)))
    cell.reference = area
    return cell


def build_cells(alpha, cx: MorseComplex, quad_grid: Grid | None = None,
                int_tol: float = INT_TOL) -> dict[int, UnstableCell]:
    """One UnstableCell per critical point of the complex."""
    alpha = as_one_form(alpha)
    M = alpha.manifold
    n = M.dimension
    quad_grid = quad_grid or Grid(M, (128,) * n if n > 1 else (512,))
    cells = {}
    o = cx.orientation
    for q, gens in enumerate(cx.generators):
        for xi in gens:
            x = cx.points[xi]
            if q == 0:
                cells[xi] = UnstableCell(xi, 0, "point", x.x[None, :], np.ones(1) * o.sign(xi),
                                         o.sign(xi), 0.0, quad_grid)
            elif q == n and len(gens) == 1:
                cells[xi] = UnstableCell(xi, n, "top", None, None, o.sign(xi), M.volume, quad_grid)
            elif q == 1:
                cells[xi] = _curve_cell(alpha, cx, xi, quad_grid, int_tol)
            elif q == 2 and n == 2:
                cells[xi] = _fan_cell(alpha, cx, xi, cells, quad_grid)
            else:
                raise ValueError(f"no cell construction for index {q} in dimension {n}")
    return cells


def integrate_over_unstable_cell(form, cell: UnstableCell, weight=None) -> float:
    if isinstance(form, DiscreteForm) and form.degree != cell.degree:
        raise ValueError(f"form degree {form.degree} differs from cell dimension {cell.degree}")
    return cell.integrate(form, weight)


def int_vector(form, cx: MorseComplex, cells: dict[int, UnstableCell], q: int) -> np.ndarray:
    return np.array([cells[xi].integrate(form) for xi in cx.generators[q]])


def int_chain_map_check(form: DiscreteForm, cx: MorseComplex, cells: dict[int, UnstableCell]) -> float:
    """max_x |Int(d omega)(x) - sum_y I(x, y) Int(omega)(y)| for a degree q-1 form omega."""
    from .forms import exterior_d

    q = form.degree + 1
    if q not in cx.incidence:
        raise ValueError(f"no incidence matrix in degree {q}")
    lhs = int_vector(exterior_d(form), cx, cells, q)
    rhs = cx.incidence[q] @ int_vector(form, cx, cells, q - 1)
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


# ---------------------------------------------------------------------------
# quasimodes


def default_eta(points, manifold) -> float:
    dmin = min((manifold.distance(a.x, b.x) for i, a in enumerate(points)
                for b in points[i + 1:]), default=min(manifold.periods))
    return ETA_FACTOR * dmin


def _smooth_step(s):
    """0 for s <= 0, 1 for s >= 1, C-infinity in between."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        g = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return f / (f + g)


def cutoff(r, eta: float):
    """gamma_eta: 1 on r <= eta/2, 0 on r >= eta."""
    return _smooth_step((eta - np.asarray(r)) / (0.5 * eta))


def _frame_coefficients(frame: np.ndarray, n: int) -> np.ndarray:
    """Components of dxi_1 ^ ... ^ dxi_q on dx_I for xi = frame^T x."""
    q = frame.shape[1]
    return np.array([np.linalg.det(frame[list(I), :]) if q else 1.0 for I in subsets(n, q)])


def build_cutoff_quasimode(grid: Grid, points, yi: int, t: float, eta: float,
                           orientation: OrientationChoice | None = None) -> DiscreteForm:
    """Cutoff Gaussian q-form at points[yi], normalized in L2 on the grid."""
    if t <= 0:
        raise ValueError("t must be positive")
    M = grid.manifold
    for i, a in enumerate(points):
        for b in points[i + 1:]:
            if M.distance(a.x, b.x) < 2 * eta:
                raise SupportOverlap(f"balls of radius {eta:.4g} around {a.label()} and {b.label()} meet")
    o = orientation or OrientationChoice.default(points)
    y = points[yi]
    q, n = y.index, grid.n
    disp = M.displacement(y.x, grid.points)
    xi = disp @ y.hess_vectors
    mu = np.abs(np.asarray(y.hess_eigs))
    expo = -0.5 * t * np.sum(mu * xi ** 2, axis=-1)
    amp = np.exp(expo) * cutoff(np.linalg.norm(disp, axis=-1), eta)
    coeffs = _frame_coefficients(o.frames[yi], n) * o.signs[yi]
    form = DiscreteForm(grid, q, coeffs.reshape((-1,) + (1,) * n) * amp)
    norm = form.norm()
    if norm == 0:
        raise ValueError("quasimode vanishes on the grid; refine the grid")
    return form / norm


def model_ground_state(grid: Grid, points, yi: int, t: float,
                       orientation: OrientationChoice | None = None) -> DiscreteForm:
    """The uncut anisotropic Gaussian at points[yi] with the analytic normalization."""
    M = grid.manifold
    o = orientation or OrientationChoice.default(points)
    y = points[yi]
    disp = M.displacement(y.x, grid.points)
    xi = disp @ y.hess_vectors
    mu = np.abs(np.asarray(y.hess_eigs))
    amp = np.prod((t * mu / math.pi) ** 0.25) * np.exp(-0.5 * t * np.sum(mu * xi ** 2, axis=-1))
    coeffs = _frame_coefficients(o.frames[yi], grid.n) * o.signs[yi]
    return DiscreteForm(grid, y.index, coeffs.reshape((-1,) + (1,) * grid.n) * amp)


@dataclass
class JRResult:
    q: int
    t: float
    generators: list[int]
    J: list[DiscreteForm]
    R: list[DiscreteForm]
    gram: np.ndarray             # J^T J
    projected_gram: np.ndarray   # (QJ)^T (QJ)
    residual: float              # max_y ||Q J_y - J_y||


def build_J_R(grid: Grid, points, generators: Sequence[int], t: float, small: SmallSubspace,
              eta: float, orientation: OrientationChoice | None = None) -> JRResult:
    """Quasimodes J and the isometry R = QJ ((QJ)^T QJ)^{-1/2} onto the small subspace."""
    if not generators:
        raise ValueError("no generators in this degree")
    q = points[generators[0]].index
    J = [build_cutoff_quasimode(grid, points, y, t, eta, orientation) for y in generators]
    gram = np.array([[inner_product(a, b) for b in J] for a in J])
    C = np.array([[inner_product(b, j) for j in J] for b in small.basis]).reshape(len(small.basis), len(J))
    G = C.T @ C
    cond = np.linalg.cond(G) if G.size else math.inf
    if not np.isfinite(cond) or cond > GRAM_COND:
        raise SingularGram(f"projected Gram matrix has condition number {cond:.3e}")
    w, V = la.eigh(G)
    G_inv_half = V @ np.diag(w ** -0.5) @ V.T
    coef = C @ G_inv_half
    R = []
    for col in coef.T:
        u = DiscreteForm(grid, q)
        for c, b in zip(col, small.basis):
            u = u + c * b
        R.append(u)
    resid = 0.0
    for j, c in zip(J, C.T):
        proj = DiscreteForm(grid, q)
        for cc, b in zip(c, small.basis):
            proj = proj + cc * b
        resid = max(resid, (proj - j).norm())
    return JRResult(q, float(t), list(generators), J, R, gram, G, resid)


def scaling_matrix(q: int, t: float, values: Sequence[float], n: int,
                   convention: str = "pi-over-t") -> np.ndarray:
    """Diagonal of S^q(t): base^{(n-2q)/4} e^{-t h(x)}, base = pi/t or t/pi."""
    if t <= 0:
        raise ValueError("t must be positive")
    base = _base(t, convention)
    return np.diag([base ** ((n - 2 * q) / 4) * math.exp(-t * v) for v in values])


def _base(t, convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"scaling convention must be one of {CONVENTIONS}")
    return math.pi / t if convention == "pi-over-t" else t / math.pi


# ---------------------------------------------------------------------------
# comparison


@dataclass
class WHSDegree:
    q: int
    L: np.ndarray            # L(t) R(t), rows x', columns y
    deviation: float
    exterior_mass: np.ndarray   # L2 mass of U_y outside the eta-ball
    exterior_sup: np.ndarray    # sup |U_y| outside the eta-ball on the grid
    quasimode_distance: np.ndarray  # ||U_y - J_y||
    projection_residual: float
    matched: bool
    determinant: float
    chart_limit: np.ndarray = None   # large-t limit of diag(L) when the Hessian is not +-Id
    corrected_deviation: float = math.nan   # ||diag(chart_limit)^{-1} L - Id||


@dataclass
class WHSPoint:
    t: float
    degrees: dict[int, WHSDegree]

    @property
    def deviation(self) -> float:
        return max(d.deviation for d in self.degrees.values())

    @property
    def corrected_deviation(self) -> float:
        return max(d.corrected_deviation for d in self.degrees.values())


@dataclass
class WHSReport:
    convention: str
    eta: float
    points: list
    results: list[WHSPoint]

    @property
    def t_grid(self) -> list[float]:
        return [r.t for r in self.results]

    @property
    def deviations(self) -> list[float]:
        return [r.deviation for r in self.results]

    @property
    def corrected_deviations(self) -> list[float]:
        return [r.corrected_deviation for r in self.results]

    @property
    def standard_charts(self) -> bool:
        return all(is_standard_chart(p) for p in self.points)


def chart_factor(point) -> float:
    """Limit of L_xx for a Hessian with eigenvalues mu: prod |mu_s|^{1/4} prod |mu_u|^{-1/4}.

    It is 1 exactly when h is -|x_u|^2/2 + |x_s|^2/2 in Euclidean coordinates near the point.
    """
    mu = np.asarray(point.hess_eigs)
    return float(np.prod(np.abs(mu) ** (np.sign(mu) / 4)))


def is_standard_chart(point, tol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(np.abs(np.asarray(point.hess_eigs)) - 1) <= tol))


def _exterior(grid: Grid, y, form: DiscreteForm, eta: float):
    M = grid.manifold
    r = np.linalg.norm(M.displacement(y.x, grid.points), axis=-1)
    outside = r > eta
    dens = np.sum(form.data ** 2, axis=0)
    mass = math.sqrt(float(np.sum(dens[outside]) * grid.cell_volume))
    sup = float(np.sqrt(dens[outside].max())) if np.any(outside) else 0.0
    return mass, sup


def whs_degree(alpha, grid: Grid, cx: MorseComplex, cells, q: int, t: float, eta: float,
               small: SmallSubspace | None = None, convention: str = "pi-over-t",
               seed: int = 42) -> WHSDegree:
    alpha = as_one_form(alpha)
    if alpha.exact is None or not alpha.is_exact:
        raise ValueError("the comparison map needs an exact 1-form dh")
    gens = cx.generators[q]
    n = grid.n
    small = small or small_subspace(alpha, grid, q, t, seed=seed)
    jr = build_J_R(grid, cx.points, gens, t, small, eta, cx.orientation)
    h = alpha.potential
    base = _base(t, convention) ** ((n - 2 * q) / 4)
    L = np.zeros((len(gens), len(gens)))
    for r, xi in enumerate(gens):
        hx = cx.points[xi].value
        weight = (lambda z, hx=hx: np.exp(t * (h(z) - hx)))
        for c, U in enumerate(jr.R):
            L[r, c] = base * cells[xi].integrate(U, weight)
    # localization centers should reproduce the generator order
    centers = []
    for U in jr.R:
        dens = np.sum(U.data ** 2, axis=0)
        k = np.unravel_index(np.argmax(dens), grid.shape)
        p = grid.points[k]
        centers.append(int(np.argmin([grid.manifold.distance(p, cx.points[g].x) for g in gens])))
    matched = centers == list(range(len(gens)))
    mass, sup = zip(*[_exterior(grid, cx.points[y], U, eta) for y, U in zip(gens, jr.R)])
    qd = np.array([(U - J).norm() for U, J in zip(jr.R, jr.J)])
    dev = float(np.linalg.norm(L - np.eye(len(gens)), 2))
    limit = np.array([chart_factor(cx.points[g]) for g in gens])
    corrected = float(np.linalg.norm(L / limit[:, None] - np.eye(len(gens)), 2))
    return WHSDegree(q, L, dev, np.array(mass), np.array(sup), qd, jr.residual, matched,
                     float(np.linalg.det(L)), limit, corrected)


def whs_compare(alpha, grid: Grid, cx: MorseComplex, t_grid, degrees=None, eta: float | None = None,
                convention: str = "pi-over-t", cells=None, seed: int = 42) -> WHSReport:
    """Deviation ||L(t)R(t) - Id|| (max over degrees) and localization data over a t-grid."""
    alpha = as_one_form(alpha)
    eta = eta if eta is not None else default_eta(cx.points, grid.manifold)
    cells = cells or build_cells(alpha, cx)
    degrees = list(range(grid.n + 1)) if degrees is None else list(degrees)
    results = []
    for t in t_grid:
        per = {q: whs_degree(alpha, grid, cx, cells, q, float(t), eta, None, convention, seed)
               for q in degrees if cx.generators[q]}
        results.append(WHSPoint(float(t), per))
    return WHSReport(convention, eta, cx.points, results)
