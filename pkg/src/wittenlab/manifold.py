"""Flat periodic model manifolds and closed-form Morse data on them.

Every scalar field is stored as a real trigonometric polynomial

    h(x) = sum_j a_j cos(phi_j(x)) + b_j sin(phi_j(x)),   phi_j(x) = sum_i K_ji 2 pi x_i / L_i,

so values, gradients and Hessians are exact and periodic.  The named catalog
entries are thin constructors on top of that representation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateCritical, ScanTooCoarse

GRAD_TOL = 1e-10
DEGENERACY_TOL = 1e-6
MERGE_TOL_FACTOR = 1e-6

CATALOG = ("cos-sum", "circle-double-well", "torus-tilted", "trig")


@dataclass(frozen=True)
class SampleManifold:
    """Flat torus R^n / (periods * Z^n); n = 1 is the circle."""

    periods: tuple[float, ...]

    def __post_init__(self):
        periods = tuple(float(p) for p in self.periods)
        if len(periods) < 1:
            raise ValueError("manifold dimension must be at least 1")
        if any(not math.isfinite(p) or p <= 0 for p in periods):
            raise ValueError(f"periods must be positive, got {periods}")
        object.__setattr__(self, "periods", periods)

    @classmethod
    def circle(cls, period: float = 2 * math.pi) -> "SampleManifold":
        return cls((period,))

    @classmethod
    def torus(cls, n: int = 2, period: float = 2 * math.pi) -> "SampleManifold":
        return cls((period,) * n)

    @property
    def dimension(self) -> int:
        return len(self.periods)

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @property
    def merge_tol(self) -> float:
        return MERGE_TOL_FACTOR * min(self.periods)

    def wrap(self, x):
        """Canonical representative in [0, period) per axis."""
        L = np.asarray(self.periods)
        y = np.mod(np.asarray(x, dtype=float), L)
        # mod can return exactly L for tiny negative inputs
        return np.where(y >= L, y - L, y)

    def displacement(self, a, b):
        """Shortest periodic displacement b - a."""
        L = np.asarray(self.periods)
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        return d - L * np.round(d / L)

    def distance(self, a, b) -> float:
        return float(np.linalg.norm(self.displacement(a, b), axis=-1))


class ScalarField:
    """Periodic trigonometric polynomial on a flat torus.

    ``amplitudes`` is an (m, 2) array of (cos, sin) coefficients and
    ``wavevectors`` an (m, n) integer array.
    """

    def __init__(self, manifold: SampleManifold, amplitudes, wavevectors,
                 name: str = "trig", params: Sequence[float] = ()):
        amps = np.atleast_2d(np.asarray(amplitudes, dtype=float))
        waves = np.atleast_2d(np.asarray(wavevectors))
        if amps.shape[1] != 2 or waves.shape != (amps.shape[0], manifold.dimension):
            raise ValueError("amplitudes must be (m, 2) and wavevectors (m, n)")
        if not np.all(np.equal(np.mod(waves, 1), 0)):
            raise ValueError("wavevectors must be integers for periodicity")
        self.manifold = manifold
        self.name = name
        self.params = tuple(float(p) for p in params)
        self.amplitudes = amps
        self.wavevectors = waves.astype(int)
        # phase_j(x) = x @ freqs[j]
        self._freqs = 2 * np.pi * self.wavevectors / np.asarray(manifold.periods)

    def __repr__(self):
        return f"ScalarField({self.name!r}, params={self.params}, n={self.manifold.dimension})"

    def _phases(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self._freqs.T  # (..., m)

    def value(self, x):
        ph = self._phases(x)
        return np.cos(ph) @ self.amplitudes[:, 0] + np.sin(ph) @ self.amplitudes[:, 1]

    def grad(self, x):
        ph = self._phases(x)
        c = -np.sin(ph) * self.amplitudes[:, 0] + np.cos(ph) * self.amplitudes[:, 1]
        return c @ self._freqs

    def hess(self, x):
        ph = self._phases(x)
        c = -np.cos(ph) * self.amplitudes[:, 0] - np.sin(ph) * self.amplitudes[:, 1]
        return np.einsum("...m,mi,mj->...ij", c, self._freqs, self._freqs)

    def laplacian(self, x):
        return np.trace(self.hess(x), axis1=-2, axis2=-1)

    def describe(self) -> str:
        """Round-trippable ``name:params`` string used by the CLI."""
        if self.name == "trig":
            terms = []
            for (a, b), k in zip(self.amplitudes, self.wavevectors):
                terms.append(",".join([repr(float(a)), repr(float(b))] + [str(int(v)) for v in k]))
            return "trig:" + ";".join(terms)
        if not self.params:
            return self.name
        return self.name + ":" + ",".join(repr(p) for p in self.params)


def trig_polynomial(manifold: SampleManifold, terms) -> ScalarField:
    """Build a field from ``[(a, b, k_1, ..., k_n), ...]`` meaning a cos(k.theta) + b sin(k.theta)."""
    terms = [tuple(t) for t in terms]
    n = manifold.dimension
    if not terms or any(len(t) != 2 + n for t in terms):
        raise ValueError(f"each trig term needs 2 + {n} entries")
    amps = [(float(t[0]), float(t[1])) for t in terms]
    waves = [[int(round(v)) for v in t[2:]] for t in terms]
    if any(abs(v - round(v)) > 0 for t in terms for v in t[2:]):
        raise ValueError("trig wavevector entries must be integers")
    return ScalarField(manifold, amps, waves, name="trig", params=())


def make_field(manifold: SampleManifold, name: str, params: Sequence[float] = ()) -> ScalarField:
    """Catalog constructor.

    ``cos-sum``              sum_i cos(theta_i)
    ``circle-double-well``   cos(2 theta) + c sin(theta)            (n = 1, params = [c])
    ``torus-tilted``         cos x + cos y + c cos x cos y          (n = 2, params = [c])
    """
    n = manifold.dimension
    params = tuple(float(p) for p in params)
    if name == "cos-sum":
        if params:
            raise ValueError("cos-sum takes no parameters")
        amps = [(1.0, 0.0)] * n
        waves = np.eye(n, dtype=int)
    elif name == "circle-double-well":
        if n != 1:
            raise ValueError("circle-double-well lives on the circle")
        c = params[0] if params else 0.3
        params = (c,)
        amps = [(1.0, 0.0), (0.0, c)]
        waves = [[2], [1]]
    elif name == "torus-tilted":
        if n != 2:
            raise ValueError("torus-tilted lives on the 2-torus")
        c = params[0] if params else 0.3
        params = (c,)
        # cos x cos y = (cos(x + y) + cos(x - y)) / 2
        amps = [(1.0, 0.0), (1.0, 0.0), (c / 2, 0.0), (c / 2, 0.0)]
        waves = [[1, 0], [0, 1], [1, 1], [1, -1]]
    else:
        raise ValueError(f"unknown field {name!r}; catalog is {CATALOG}")
    return ScalarField(manifold, amps, waves, name=name, params=params)


def parse_field(manifold: SampleManifold, spec: str) -> ScalarField:
    """Parse ``name:params`` (comma separated) or ``trig:a,b,k..;a,b,k..``."""
    name, _, rest = spec.strip().partition(":")
    name = name.strip()
    if name == "trig":
        terms = [[float(v) for v in term.split(",")] for term in rest.split(";") if term.strip()]
        return trig_polynomial(manifold, terms)
    params = [float(v) for v in rest.split(",") if v.strip()] if rest else []
    return make_field(manifold, name, params)


@dataclass(frozen=True)
class ClosedOneForm:
    """alpha = dh + sum_i c_i dx_i with h optional and c constant (harmonic part)."""

    manifold: SampleManifold
    exact: ScalarField | None = None
    harmonic: tuple[float, ...] = ()

    def __post_init__(self):
        n = self.manifold.dimension
        harmonic = tuple(float(c) for c in self.harmonic) or (0.0,) * n
        if len(harmonic) != n or not all(math.isfinite(c) for c in harmonic):
            raise ValueError(f"harmonic part needs {n} finite coefficients")
        if self.exact is not None and self.exact.manifold != self.manifold:
            raise ValueError("exact part lives on a different manifold")
        object.__setattr__(self, "harmonic", harmonic)

    @classmethod
    def from_field(cls, h: ScalarField) -> "ClosedOneForm":
        return cls(h.manifold, h, ())

    @property
    def is_exact(self) -> bool:
        return not any(self.harmonic)

    def components(self, x):
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(np.asarray(self.harmonic), x.shape).copy()
        if self.exact is not None:
            out += self.exact.grad(x)
        return out

    def jacobian(self, x):
        """d alpha_j / d x_i, the (symmetric) Hessian of the exact part."""
        x = np.asarray(x, dtype=float)
        n = self.manifold.dimension
        if self.exact is None:
            return np.zeros(x.shape[:-1] + (n, n))
        return self.exact.hess(x)

    def potential(self, x):
        """h(x), or 0 when there is no exact part."""
        if self.exact is None:
            return np.zeros(np.asarray(x).shape[:-1])
        return self.exact.value(x)


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    coordinates: tuple[float, ...]
    value: float
    index: int
    hess_eigs: tuple[float, ...]
    # columns are unit eigenvectors matching hess_eigs
    hess_vectors: np.ndarray = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.coordinates)

    def label(self) -> str:
        return "(" + ", ".join(f"{c:.6g}" for c in self.coordinates) + ")"


def _newton(alpha: ClosedOneForm, x0, grad_tol, max_iter=60):
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        g = alpha.components(x)
        if np.linalg.norm(g) < grad_tol:
            return x, True
        H = alpha.jacobian(x)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return x, False
        # damp huge steps from seeds far from a zero
        limit = 0.25 * min(alpha.manifold.periods)
        norm = np.linalg.norm(step)
        if norm > limit:
            step *= limit / norm
        x = x - step
    return x, np.linalg.norm(alpha.components(x)) < grad_tol


def _classify(alpha: ClosedOneForm, x) -> CriticalPoint:
    H = alpha.jacobian(x)
    eigs, vecs = np.linalg.eigh(H)
    if np.min(np.abs(eigs)) <= DEGENERACY_TOL:
        raise DegenerateCritical(f"zero at {x} has Hessian eigenvalues {eigs}")
    return CriticalPoint(
        coordinates=tuple(float(c) for c in alpha.manifold.wrap(x)),
        value=float(alpha.potential(x)),
        index=int(np.sum(eigs < 0)),
        hess_eigs=tuple(float(e) for e in eigs),
        hess_vectors=vecs,
    )


def find_zeros(alpha: ClosedOneForm, scan_resolution: int = 64,
               grad_tol: float = GRAD_TOL) -> list[CriticalPoint]:
    """All nondegenerate zeros of a closed 1-form, by grid scan and Newton polishing."""
    M = alpha.manifold
    n = M.dimension
    if scan_resolution < 16:
        raise ValueError("scan_resolution must be at least 16 per axis")
    if alpha.exact is None:
        if alpha.is_exact:
            raise DegenerateCritical("alpha = 0 vanishes identically")
        return []
    axes = [np.arange(scan_resolution) * L / scan_resolution for L in M.periods]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    g2 = np.sum(alpha.components(mesh) ** 2, axis=-1)
    # seeds: periodic discrete local minima of |alpha|^2
    is_min = np.ones_like(g2, dtype=bool)
    for shift in itertools.product((-1, 0, 1), repeat=n):
        if any(shift):
            is_min &= g2 <= np.roll(g2, shift, axis=tuple(range(n)))
    seeds = mesh[is_min]

    found: list[np.ndarray] = []
    for seed in seeds:
        x, ok = _newton(alpha, seed, grad_tol)
        if ok:
            found.append(M.wrap(x))
    # deterministic merge: sort by coordinates first
    found.sort(key=lambda p: tuple(np.round(p, 12)))
    merged: list[np.ndarray] = []
    for p in found:
        dup = [q for q in merged if M.distance(p, q) < M.merge_tol]
        if dup:
            v_p, v_q = float(alpha.potential(p)), float(alpha.potential(dup[0]))
            if abs(v_p - v_q) > 1e3 * grad_tol * (1 + abs(v_q)):
                raise ScanTooCoarse(f"zeros {p} and {dup[0]} merge but have values {v_p}, {v_q}")
            continue
        merged.append(p)
    points = [_classify(alpha, p) for p in merged]
    points.sort(key=lambda c: (c.index, c.coordinates))
    return points


def find_critical_points(field: ScalarField, scan_resolution: int = 64,
                         grad_tol: float = GRAD_TOL) -> list[CriticalPoint]:
    return find_zeros(ClosedOneForm.from_field(field), scan_resolution, grad_tol)


def count_by_index(points: Sequence[CriticalPoint], n: int | None = None) -> tuple[int, ...]:
    if n is None:
        n = max((len(p.coordinates) for p in points), default=0)
    counts = [0] * (n + 1)
    for p in points:
        counts[p.index] += 1
    return tuple(counts)


def euler_characteristic(counts: Sequence[int]) -> int:
    return sum((-1) ** q * m for q, m in enumerate(counts))
