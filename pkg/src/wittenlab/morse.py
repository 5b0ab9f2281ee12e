"""Gradient-flow trajectories and the Morse cochain complex on flat tori of dimension <= 2."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NoCapture, NonTransversal
from .manifold import ClosedOneForm, CriticalPoint, ScalarField, count_by_index

ODE_TOL = 1e-10
CAPTURE_FACTOR = 1e-4
MAX_TIME = 1e3
ANGLE_TOL = 1e-10
SCAN_RESOLUTION = 64


def as_one_form(obj) -> ClosedOneForm:
    if isinstance(obj, ScalarField):
        return ClosedOneForm.from_field(obj)
    if isinstance(obj, ClosedOneForm):
        return obj
    raise TypeError(f"expected a ScalarField or ClosedOneForm, got {type(obj).__name__}")


@dataclass
class Trajectory:
    """A flow line of -alpha (forward) or +alpha (backward) in unwrapped coordinates."""

    start: np.ndarray
    direction: str
    limit: CriticalPoint
    limit_index: int
    lift: np.ndarray          # position of the limit point on the universal cover
    times: np.ndarray
    path: np.ndarray          # (len(times), n), unwrapped
    arrival_distance: float
    solution: object = field(default=None, repr=False)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def offset(self) -> tuple[int, ...]:
        """Integer lattice offset of the limit lift relative to its wrapped coordinates."""
        return tuple(int(v) for v in np.round((self.lift - self.limit.x) / self._periods))

    _periods: np.ndarray = field(default=None, repr=False)

    def ode_residual(self, alpha: ClosedOneForm, samples: int = 50) -> float:
        """max ||gamma' -+ alpha(gamma)|| / (1 + ||alpha||) over interior samples."""
        sol = self.solution
        sgn = -1.0 if self.direction == "forward" else 1.0
        ts = np.linspace(self.times[0], self.times[-1], samples + 2)[1:-1]
        h = 1e-5 * max(self.duration, 1.0)
        worst = 0.0
        for s in ts:
            vel = (sol(s + h) - sol(s - h)) / (2 * h)
            a = alpha.components(sol(s))
            worst = max(worst, float(np.linalg.norm(vel - sgn * a) / (1 + np.linalg.norm(a))))
        return worst


def capture_radius(alpha: ClosedOneForm) -> float:
    return CAPTURE_FACTOR * min(alpha.manifold.periods)


def shoot(alpha, start, points: Sequence[CriticalPoint], direction: str = "forward",
          ode_tol: float = ODE_TOL, radius: float | None = None, max_time: float = MAX_TIME,
          exclude: Sequence[int] = ()) -> Trajectory:
    """Integrate the (reversed) gradient flow from ``start`` until it enters a capture ball."""
    alpha = as_one_form(alpha)
    M = alpha.manifold
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    r = capture_radius(alpha) if radius is None else radius
    sgn = -1.0 if direction == "forward" else 1.0
    targets = [i for i in range(len(points)) if i not in set(exclude)]
    if not targets:
        raise ValueError("no capture targets")
    centers = np.array([points[i].x for i in targets])
    periods = np.asarray(M.periods)

    def rhs(_, x):
        return sgn * alpha.components(x)

    def dist(x):
        d = x[None, :] - centers
        d -= periods * np.round(d / periods)
        return np.sqrt(np.sum(d * d, axis=1))

    def event(_, x):
        return float(dist(x).min() - r)

    event.terminal = True
    event.direction = -1
    start = np.asarray(start, dtype=float)
    sol = solve_ivp(rhs, (0.0, max_time), start, method="DOP853", rtol=ode_tol,
                    atol=ode_tol * 1e-2, events=event, dense_output=True)
    if sol.status != 1 or not len(sol.t_events[0]):
        raise NoCapture(max_time)
    end = sol.y[:, -1]
    dd = dist(end)
    j = int(np.argmin(dd))
    cp = points[targets[j]]
    delta = end - cp.x
    lift = cp.x + periods * np.round(delta / periods)
    traj = Trajectory(start, direction, cp, targets[j], lift, sol.t, sol.y.T.copy(),
                      float(dd[j]), sol.sol)
    traj._periods = periods
    return traj


# ---------------------------------------------------------------------------
# orientations and orbits


@dataclass(frozen=True)
class OrientationChoice:
    """Per critical point an orthonormal unstable frame and a sign; frames[i] has shape (n, index)."""

    frames: tuple[np.ndarray, ...]
    signs: tuple[int, ...]

    @classmethod
    def default(cls, points: Sequence[CriticalPoint]) -> "OrientationChoice":
        frames = []
        for p in points:
            cols = []
            for c in range(p.index):  # eigh sorts ascending: unstable directions first
                v = np.array(p.hess_vectors[:, c], dtype=float)
                nz = np.flatnonzero(np.abs(v) > 1e-12)
                if nz.size and v[nz[0]] < 0:
                    v = -v
                cols.append(v)
            n = len(p.coordinates)
            frames.append(np.column_stack(cols) if cols else np.zeros((n, 0)))
        return cls(tuple(frames), (1,) * len(points))

    def flipped(self, i: int) -> "OrientationChoice":
        signs = list(self.signs)
        signs[i] = -signs[i]
        return replace(self, signs=tuple(signs))

    def sign(self, i: int) -> int:
        """Orientation sign of O_i relative to the standard orientation of its span."""
        F = self.frames[i]
        base = 1
        if F.shape[1] == F.shape[0] and F.shape[1] > 0:
            base = int(np.sign(np.linalg.det(F)))
        return base * self.signs[i]


@dataclass
class ConnectingOrbit:
    upper: int            # index into the point list
    lower: int
    sign: int
    trajectory: Trajectory
    angle: float | None = None   # unstable-circle angle for index-2 sources
    ray: int | None = None       # +1 / -1: side of the unstable vector for index-1 sources

    def __repr__(self):
        return f"ConnectingOrbit({self.upper}->{self.lower}, sign={self.sign:+d})"


def _separation(alpha, points) -> float:
    M = alpha.manifold
    return min((M.distance(a.x, b.x) for a in points for b in points if a is not b), default=1.0)


def _verify_backward(alpha, points, orbit_traj: Trajectory, source: int) -> None:
    k = len(orbit_traj.times) // 2
    p = orbit_traj.path[k]
    # backward flow into a saddle amplifies errors by (1/radius)^(stable/unstable),
    # so the check captures in a ball sized by the point separation
    back = shoot(alpha, p, points, direction="backward", radius=0.1 * _separation(alpha, points))
    if back.limit_index != source:
        raise NonTransversal(f"backward flow from orbit sample does not return to point {source}")


def _seed_radius(alpha) -> float:
    return 4.0 * capture_radius(alpha)


def _orbits_index1(alpha, points, o: OrientationChoice, xi: int) -> list[ConnectingOrbit]:
    x = points[xi]
    u = o.frames[xi][:, 0]
    rho = _seed_radius(alpha)
    out = []
    for s in (1.0, -1.0):
        tr = shoot(alpha, x.x + s * rho * u, points, exclude=(xi,))
        y = points[tr.limit_index]
        if y.index != 0:
            raise NonTransversal(f"flow from {x.label()} reaches index-{y.index} point {y.label()}")
        _verify_backward(alpha, points, tr, xi)
        eps = int(np.sign(s)) * o.signs[xi] * o.sign(tr.limit_index)
        out.append(ConnectingOrbit(xi, tr.limit_index, eps, tr, ray=int(s)))
    return out


def _orbits_index2(alpha, points, o: OrientationChoice, xi: int,
                   scan_resolution: int, angle_tol: float) -> list[ConnectingOrbit]:
    x = points[xi]
    F = o.frames[xi]
    rho = _seed_radius(alpha)
    M = alpha.manifold
    periods = np.asarray(M.periods)
    saddles = [i for i, p in enumerate(points) if p.index == 1]
    sep = _separation(alpha, points)

    # capture only at minima so that passing close to a saddle never ends a bisection early
    skip = tuple(i for i, p in enumerate(points) if p.index != 0)

    def run(phi):
        d = F @ np.array([math.cos(phi), math.sin(phi)])
        return shoot(alpha, x.x + rho * d, points, exclude=skip)

    def label(tr):
        return (tr.limit_index, tr.offset)

    # an irrational phase keeps symmetric separatrices off the scan directions
    step = 2 * math.pi / scan_resolution
    phis = [step * (j + 1 / math.pi) for j in range(scan_resolution)]
    scans = [run(p) for p in phis]
    stack = []
    for j in range(scan_resolution):
        a, b = phis[j], phis[j + 1] if j + 1 < scan_resolution else phis[0] + 2 * math.pi
        ta, tb = scans[j], scans[(j + 1) % scan_resolution]
        if label(ta) != label(tb):
            stack.append((a, ta, b, tb))

    orbits = []
    while stack:
        a, ta, b, tb = stack.pop()
        while b - a > angle_tol:
            m = 0.5 * (a + b)
            tm = run(m)
            if label(tm) == label(ta):
                a, ta = m, tm
            elif label(tm) == label(tb):
                b, tb = m, tm
            else:
                stack.append((m, tm, b, tb))
                b, tb = m, tm
        y, Y, k_in, tr = _closest_saddle(points, saddles, periods, ta, tb, sep)
        phi = 0.5 * (a + b)
        p_in = tr.path[k_in]
        s_y = points[y].hess_vectors[:, 1]
        u_y = o.frames[y][:, 0]
        arrive = -np.sign(np.dot(p_in - Y, s_y)) * s_y
        eps = o.sign(xi) * int(np.sign(np.linalg.det(np.column_stack([arrive, u_y])))) * o.signs[y]
        k_end = _closest_index(tr.path, Y)
        rep = Trajectory(tr.start, "forward", points[y], y, Y, tr.times[: k_end + 1],
                         tr.path[: k_end + 1], float(np.linalg.norm(tr.path[k_end] - Y)), tr.solution)
        rep._periods = periods
        _verify_backward(alpha, points, rep, xi)
        orbits.append(ConnectingOrbit(xi, y, eps, rep, angle=phi % (2 * math.pi)))
    orbits.sort(key=lambda c: c.angle)
    return orbits


def _closest_index(path, Y):
    return int(np.argmin(np.sum((path - Y) ** 2, axis=1)))


def _entry_index(path, Y, radius):
    d = np.sqrt(np.sum((path - Y) ** 2, axis=1))
    inside = np.flatnonzero(d < radius)
    if not inside.size:
        raise NonTransversal("separatrix does not enter the saddle neighbourhood")
    return int(inside[0])


def _closest_saddle(points, saddles, periods, ta, tb, sep):
    """Saddle lift approached by both bracketing trajectories of a bisected separatrix."""
    found = []
    for tr in (ta, tb):
        cands = []
        for s in saddles:
            c = points[s].x
            d = tr.path - c
            lifts = c + periods * np.round(d / periods)
            dist = np.sqrt(np.sum((tr.path - lifts) ** 2, axis=1))
            k = int(np.argmin(dist))
            cands.append((dist[k], s, lifts[k]))
        cands.sort(key=lambda c: c[0])
        # slow saddles (small |stable / unstable| ratio) are only approached to
        # about (angle error)^(ratio / (1 + ratio)), so demand unambiguity rather than closeness
        runner_up = cands[1][0] if len(cands) > 1 else math.inf
        if cands[0][0] > 0.5 * sep or 2 * cands[0][0] > runner_up:
            raise NonTransversal("bisected separatrix does not single out one saddle")
        found.append(cands[0])
    (da, sa, La), (db, sb, Lb) = found
    if sa != sb or np.linalg.norm(La - Lb) > 1e-6:
        raise NonTransversal("bisected separatrix does not single out one saddle")
    return sa, La, _entry_index(ta.path, La, 0.5 * sep), ta


def connecting_orbits(alpha, points: Sequence[CriticalPoint], xi: int,
                      orientation: OrientationChoice | None = None,
                      scan_resolution: int = SCAN_RESOLUTION,
                      angle_tol: float = ANGLE_TOL) -> list[ConnectingOrbit]:
    """All signed flow lines leaving point ``xi`` towards points of index one lower."""
    alpha = as_one_form(alpha)
    n = alpha.manifold.dimension
    if n > 2:
        raise ValueError("trajectory counting is implemented for dimension <= 2")
    o = orientation or OrientationChoice.default(points)
    k = points[xi].index
    if k == 0:
        return []
    if k == 1:
        return _orbits_index1(alpha, points, o, xi)
    return _orbits_index2(alpha, points, o, xi, scan_resolution, angle_tol)


# ---------------------------------------------------------------------------
# the complex


@dataclass
class MorseComplex:
    points: list[CriticalPoint]
    generators: list[list[int]]                   # per degree, indices into points
    incidence: dict[int, np.ndarray]              # q -> (m_q, m_{q-1}) integer matrix
    orbits: dict[int, list[ConnectingOrbit]]      # source point -> orbits
    orientation: OrientationChoice

    @property
    def dimension(self) -> int:
        return len(self.generators) - 1

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.generators)

    def boundary_squared(self) -> dict[int, np.ndarray]:
        return {q: self.incidence[q + 1] @ self.incidence[q]
                for q in range(1, self.dimension)}

    def to_dict(self) -> dict:
        return {
            "generators": [[{"coordinates": list(self.points[i].coordinates),
                             "value": self.points[i].value} for i in g] for g in self.generators],
            "incidence": {str(q): m.tolist() for q, m in self.incidence.items()},
            "betti": list(cohomology(self)),
        }


def build_morse_complex(alpha, points: Sequence[CriticalPoint],
                        orientation: OrientationChoice | None = None,
                        scan_resolution: int = SCAN_RESOLUTION,
                        angle_tol: float = ANGLE_TOL) -> MorseComplex:
    alpha = as_one_form(alpha)
    points = list(points)
    n = alpha.manifold.dimension
    o = orientation or OrientationChoice.default(points)
    generators = [[i for i, p in enumerate(points) if p.index == q] for q in range(n + 1)]
    pos = {i: r for g in generators for r, i in enumerate(g)}
    orbits, incidence = {}, {}
    for q in range(1, n + 1):
        mat = np.zeros((len(generators[q]), len(generators[q - 1])), dtype=np.int64)
        for xi in generators[q]:
            orbits[xi] = connecting_orbits(alpha, points, xi, o, scan_resolution, angle_tol)
            for orb in orbits[xi]:
                mat[pos[xi], pos[orb.lower]] += orb.sign
        incidence[q] = mat
    if n == 2:
        # each saddle has a two-branch stable manifold, so two orbits must arrive
        arrivals = {y: 0 for y in generators[1]}
        for xi in generators[2]:
            for orb in orbits[xi]:
                arrivals[orb.lower] += 1
        bad = [y for y, c in arrivals.items() if c != 2]
        if bad:
            raise NonTransversal(f"saddles {bad} are not reached by exactly two separatrices")
    cx = MorseComplex(points, generators, incidence, orbits, o)
    for q, sq in cx.boundary_squared().items():
        if np.any(sq):
            raise NonTransversal(f"boundary squared is nonzero in degree {q}: {sq.tolist()}")
    return cx


def integer_rank(mat) -> int:
    """Rank of an integer matrix by fraction-free (Bareiss) elimination."""
    A = [[int(v) for v in row] for row in np.asarray(mat).tolist()]
    if not A or not A[0]:
        return 0
    rows, cols = len(A), len(A[0])
    rank, prev = 0, 1
    for c in range(cols):
        piv = next((r for r in range(rank, rows) if A[r][c] != 0), None)
        if piv is None:
            continue
        A[rank], A[piv] = A[piv], A[rank]
        for r in range(rank + 1, rows):
            for cc in range(c + 1, cols):
                A[r][cc] = (A[r][cc] * A[rank][c] - A[r][c] * A[rank][cc]) // prev
            A[r][c] = 0
        prev = A[rank][c]
        rank += 1
        if rank == rows:
            break
    return rank


def betti_from_incidence(counts: Sequence[int], incidence: dict[int, np.ndarray]) -> tuple[int, ...]:
    n = len(counts) - 1
    ranks = {q: integer_rank(incidence[q]) if q in incidence else 0 for q in range(n + 2)}
    return tuple(counts[q] - ranks.get(q + 1, 0) - ranks.get(q, 0) for q in range(n + 1))


def cohomology(complex_: MorseComplex) -> tuple[int, ...]:
    """beta_q = dim ker d^q - rank d^{q-1}."""
    return betti_from_incidence(complex_.counts, complex_.incidence)


@dataclass
class InequalityReport:
    counts: tuple[int, ...]
    betti: tuple[int, ...]
    rows: list[dict]
    euler_equal: bool
    strong: bool
    total_bound: bool

    @property
    def passed(self) -> bool:
        return all(r["holds"] for r in self.rows) and self.euler_equal and self.strong and self.total_bound


def check_morse_inequalities(counts: Sequence[int], betti: Sequence[int]) -> InequalityReport:
    """Per-N table of (-1)^N sum_{i<=N} (-1)^i (m_i - beta_i) >= 0, with the Euler equality."""
    m, b = tuple(int(v) for v in counts), tuple(int(v) for v in betti)
    if len(m) != len(b):
        raise ValueError("counts and betti numbers must have equal length")
    rows = []
    for N in range(len(m)):
        lhs = (-1) ** N * sum((-1) ** i * m[i] for i in range(N + 1))
        rhs = (-1) ** N * sum((-1) ** i * b[i] for i in range(N + 1))
        rows.append({"N": N, "lhs": lhs, "rhs": rhs, "slack": lhs - rhs,
                     "holds": lhs >= rhs, "equality": lhs == rhs})
    chi_m = sum((-1) ** i * v for i, v in enumerate(m))
    chi_b = sum((-1) ** i * v for i, v in enumerate(b))
    return InequalityReport(m, b, rows, chi_m == chi_b,
                            all(x >= y for x, y in zip(m, b)), sum(m) >= sum(b))


def hopf_index_sum(points: Sequence[CriticalPoint]) -> int:
    """Sum over the zeros of sign det Hess, the Hopf index of grad h."""
    return sum((-1) ** p.index for p in points)


def counts_of(points: Sequence[CriticalPoint], n: int) -> tuple[int, ...]:
    return count_by_index(points, n)
