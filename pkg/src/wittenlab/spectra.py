"""Low-lying spectrum of the Witten Laplacian: eigensolver, small subspaces, gap sweeps."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import LinearOperator, lobpcg

from .errors import ClusterCardinalityChanged, GapNotOpen, NoConvergence
from .forms import (DiscreteForm, Grid, WittenOperator, assemble_witten_laplacian,
                    inner_product, subsets, witten_d)

SEED = 42
DENSE_LIMIT = 2500
RESIDUAL_TOL = 1e-8
SMALL_THRESHOLD = 1.0
GAP_RATIO = 1e-3
LEAKAGE_TOL = 1e-6


@dataclass
class SpectrumResult:
    q: int
    t: float
    eigenvalues: np.ndarray
    eigenvectors: list[DiscreteForm]
    residuals: np.ndarray
    scale: float
    method: str
    floor: float = 0.0

    def __len__(self):
        return len(self.eigenvalues)


def _to_forms(grid: Grid, q: int, V: np.ndarray) -> list[DiscreteForm]:
    w = 1.0 / math.sqrt(grid.cell_volume)
    return [DiscreteForm.from_vector(grid, q, V[:, j] * w) for j in range(V.shape[1])]


def _residuals(op: WittenOperator, lam: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.array([np.linalg.norm(op.matvec(V[:, j]) - lam[j] * V[:, j]) for j in range(V.shape[1])])


def _dense(op: WittenOperator, k: int):
    if op.route == "composition":
        # squared singular values of K = [d; delta] resolve eigenvalues down to (eps ||K||)^2, not eps ||Delta||
        d, dl = op.factors()
        blocks = [m.toarray() for m in (d, dl) if m is not None]
        K = np.vstack(blocks)
        # only the right singular vectors are needed; economy mode when K is tall
        _, s, Vt = la.svd(K, full_matrices=K.shape[0] < K.shape[1])
        s = np.concatenate([s, np.zeros(op.dimension - s.size)])
        order = np.argsort(s)[:k]
        lam = s[order] ** 2
        V = Vt[order].T
        floor = 100.0 * (np.finfo(float).eps * s.max()) ** 2
        return lam, V, floor
    A = op.toarray()
    lam, V = la.eigh(0.5 * (A + A.T), subset_by_index=[0, k - 1])
    return lam, V, 100.0 * np.finfo(float).eps * op.scale


def _preconditioner(op: WittenOperator, shift: float) -> LinearOperator:
    grid = op.grid
    m = len(subsets(grid.n, op.q))
    symbol = grid.symbol_laplacian + shift
    axes = tuple(range(1, grid.n + 1))

    def apply(v):
        v = np.asarray(v)
        cols = v.reshape(op.dimension, -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            u = cols[:, j].reshape((m,) + grid.shape)
            out[:, j] = np.real(np.fft.ifftn(np.fft.fftn(u, axes=axes) / symbol, axes=axes)).ravel()
        return out.reshape(v.shape)

    return LinearOperator(op.shape, matvec=apply, matmat=apply, dtype=float)


def _iterative(op: WittenOperator, k: int, seed: int, maxiter: int):
    rng = np.random.default_rng(seed)
    block = k + max(2, k // 2)
    X = rng.standard_normal((op.dimension, block))
    tol = 1e-2 * RESIDUAL_TOL * op.scale
    A = op.as_linear_operator()
    M = _preconditioner(op, max(op.t, 1.0))
    with warnings.catch_warnings():
        # convergence is judged below from true residuals
        warnings.simplefilter("ignore", UserWarning)
        lam, V = lobpcg(A, X, M=M, tol=tol, maxiter=maxiter, largest=False)
    # Rayleigh-Ritz on the final block for orthonormality and ordering
    Q, _ = np.linalg.qr(V)
    AQ = op.matmat(Q)
    H = Q.T @ AQ
    mu, W = la.eigh(0.5 * (H + H.T))
    V = Q @ W
    return mu[:k], V[:, :k], 1e-2 * RESIDUAL_TOL * op.scale


def eigensolve(op: WittenOperator, k: int, seed: int = SEED, maxiter: int = 400,
               method: str = "auto") -> SpectrumResult:
    """k smallest eigenpairs of a Witten Laplacian, ascending, with residual check."""
    if not 1 <= k <= op.dimension:
        raise ValueError(f"k must lie in [1, {op.dimension}]")
    if method == "auto":
        method = "dense" if op.dimension <= DENSE_LIMIT else "lobpcg"
    if method == "dense":
        lam, V, floor = _dense(op, k)
    elif method == "lobpcg":
        if 3 * (k + max(2, k // 2)) >= op.dimension:
            lam, V, floor = _dense(op, k)
            method = "dense"
        else:
            lam, V, floor = _iterative(op, k, seed, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = _residuals(op, lam, V)
    worst = float(res.max())
    if worst > RESIDUAL_TOL * op.scale:
        raise NoConvergence(maxiter if method == "lobpcg" else 1, worst)
    return SpectrumResult(op.q, op.t, np.asarray(lam), _to_forms(op.grid, op.q, V), res,
                          op.scale, method, floor)


def low_spectrum(alpha, grid: Grid, q: int, t: float, threshold: float = SMALL_THRESHOLD,
                 route: str = "composition", seed: int = SEED, k0: int = 6) -> SpectrumResult:
    """Smallest eigenpairs of Delta_q(t), enough to include at least one value above threshold."""
    return _spectrum_to_threshold(grid, alpha, q, t, threshold, route, seed, k0)[1]


def _spectrum_to_threshold(grid, alpha, q, t, threshold, route, seed, k0=6):
    op = assemble_witten_laplacian(grid, q, t, alpha, route=route)
    k = min(k0, op.dimension)
    while True:
        res = eigensolve(op, k, seed=seed)
        if res.eigenvalues[-1] >= threshold or k == op.dimension:
            return op, res
        k = min(2 * k, op.dimension)


def gap_ratio(eigenvalues, threshold: float = SMALL_THRESHOLD) -> float:
    lam = np.asarray(eigenvalues)
    small, large = lam[lam < threshold], lam[lam >= threshold]
    if large.size == 0:
        return math.inf
    if small.size == 0:
        return 0.0
    return float(max(small.max(), 0.0) / large.min())


def small_count(alpha, grid: Grid, q: int, t: float, threshold: float = SMALL_THRESHOLD,
                route: str = "composition", seed: int = SEED) -> int:
    """Number of eigenvalues of Delta_q(t) below threshold, refusing when the gap is not open."""
    _, res = _spectrum_to_threshold(grid, alpha, q, t, threshold, route, seed)
    ratio = gap_ratio(res.eigenvalues, threshold)
    if ratio >= GAP_RATIO:
        raise GapNotOpen(f"largest small / smallest large = {ratio:.3e} at t={t}")
    return int(np.sum(res.eigenvalues < threshold))


@dataclass
class SmallSubspace:
    q: int
    t: float
    basis: list[DiscreteForm]
    eigenvalues: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def project(self, omega: DiscreteForm) -> DiscreteForm:
        out = DiscreteForm(omega.grid, omega.degree)
        for b in self.basis:
            out = out + inner_product(omega, b) * b
        return out

    def gram(self) -> np.ndarray:
        return np.array([[inner_product(a, b) for b in self.basis] for a in self.basis])


def small_subspace(alpha, grid: Grid, q: int, t: float, threshold: float = SMALL_THRESHOLD,
                   route: str = "composition", seed: int = SEED) -> SmallSubspace:
    _, res = _spectrum_to_threshold(grid, alpha, q, t, threshold, route, seed)
    ratio = gap_ratio(res.eigenvalues, threshold)
    if ratio >= GAP_RATIO:
        raise GapNotOpen(f"largest small / smallest large = {ratio:.3e} at t={t}")
    keep = res.eigenvalues < threshold
    basis = [f for f, k in zip(res.eigenvectors, keep) if k]
    return SmallSubspace(q, t, basis, res.eigenvalues[keep])


def chain_leakage(lower: SmallSubspace, upper: SmallSubspace, alpha, scale: float = 1.0) -> float:
    """Worst excess of ||(I - P_{q+1}) d(t) w|| over the bound 1e-6 ||d(t) w|| + floor, as a ratio.

    The floor 1e-8 * sqrt(scale) absorbs eigensolver noise when d(t) w itself vanishes
    to working accuracy (a kernel vector).  A return value <= 1 means the check passes.
    """
    worst = 0.0
    floor = 1e-8 * math.sqrt(scale)
    for w in lower.basis:
        dw = witten_d(w, lower.t, alpha)
        leak = (dw - upper.project(dw)).norm()
        worst = max(worst, leak / (LEAKAGE_TOL * dw.norm() + floor))
    return worst


@dataclass
class GapReport:
    q: int
    t_grid: np.ndarray
    small: list[np.ndarray]
    first_large: np.ndarray
    decay_slope: float
    decay_intercept: float
    decay_r2: float
    growth_slope: float
    growth_intercept: float
    growth_r2: float
    decay_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def cluster_size(self) -> int:
        return len(self.small[0]) if self.small else 0


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2:
        return math.nan, math.nan, math.nan
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - A @ [slope, icpt]) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icpt), r2


def gap_sweep(alpha, grid: Grid, q: int, t_grid, threshold: float = SMALL_THRESHOLD,
              route: str = "composition", seed: int = SEED, workers: int = 1) -> GapReport:
    """Small cluster and first large eigenvalue over t, with decay and growth fits."""
    ts = np.asarray(t_grid, dtype=float)
    if ts.size < 4 or np.any(np.diff(ts) <= 0):
        raise ValueError("t_grid must be ascending with at least 4 values")

    def one(t):
        _, res = _spectrum_to_threshold(grid, alpha, q, t, threshold, route, seed)
        lam = res.eigenvalues
        return lam[lam < threshold], float(lam[lam >= threshold].min()), res.floor

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, ts))
    else:
        rows = [one(t) for t in ts]
    small = [r[0] for r in rows]
    sizes = {len(s) for s in small}
    if len(sizes) != 1:
        raise ClusterCardinalityChanged(f"small-cluster sizes over the sweep: {[len(s) for s in small]}")
    first_large = np.array([r[1] for r in rows])

    pts = []
    for t, s, (_, _, floor) in zip(ts, small, rows):
        nonzero = s[s > max(floor, 0.0)]
        if nonzero.size:
            pts.append((t, math.log(nonzero.max())))
    pts = np.array(pts).reshape(-1, 2)
    if len(pts) >= 2:
        ds, di, dr = linear_fit(pts[:, 0], pts[:, 1])
    else:
        ds = di = dr = math.nan
    gs, gi, gr = linear_fit(ts, first_large)
    return GapReport(q, ts, small, first_large, ds, di, dr, gs, gi, gr, pts)
