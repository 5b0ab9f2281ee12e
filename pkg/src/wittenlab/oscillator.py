"""Harmonic-oscillator model of the Witten Laplacian near a critical point.

For h = -(x_1^2 + ... + x_k^2)/2 + (x_{k+1}^2 + ... + x_n^2)/2 on R^n the
deformed Laplacian on q-forms decouples into one-dimensional oscillators,
so its spectrum and ground state are known in closed form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegreeMismatch


@dataclass(frozen=True)
class OscillatorModel:
    n: int
    k: int
    q: int
    t: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 <= self.k <= self.n or not 0 <= self.q <= self.n:
            raise ValueError(f"need 0 <= k, q <= n, got n={self.n} k={self.k} q={self.q}")
        if not self.t > 0:
            raise ValueError("t must be positive")


@dataclass(frozen=True)
class OscillatorSpectrum:
    """Sorted (eigenvalue, multiplicity) pairs; ``levels`` are eigenvalue / (2t)."""

    t: float
    levels: tuple[tuple[int, int], ...]

    @property
    def eigenvalues(self) -> tuple[float, ...]:
        return tuple(2 * self.t * lv for lv, _ in self.levels)

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return tuple(m for _, m in self.levels)

    def pairs(self) -> list[tuple[float, int]]:
        return [(2 * self.t * lv, m) for lv, m in self.levels]

    def kernel_dimension(self) -> int:
        return sum(m for lv, m in self.levels if lv == 0)


def epsilon_shift(n: int, k: int, q: int, I) -> int:
    """-n + 2k - 2q + 4 #{j : i_j >= k + 1} for a 1-based increasing index set I."""
    I = tuple(I)
    if len(I) != q or any(b <= a for a, b in zip(I, I[1:])) or any(not 1 <= i <= n for i in I):
        raise ValueError(f"I must be a strictly increasing subset of 1..{n} of size {q}")
    return -n + 2 * k - 2 * q + 4 * sum(1 for i in I if i >= k + 1)


def _level_offsets(n: int, k: int, q: int) -> list[int]:
    # eigenvalue = t (sum_i (2 m_i + 1) + eps_I) = 2t (|m| + (n + eps_I) / 2)
    offs = []
    for I in itertools.combinations(range(1, n + 1), q):
        e = epsilon_shift(n, k, q, I)
        assert (n + e) % 2 == 0 and n + e >= 0
        offs.append((n + e) // 2)
    return offs


def oscillator_spectrum(model: OscillatorModel, count: int) -> OscillatorSpectrum:
    """Lowest ``count`` distinct eigenvalues, by enumerating (m_1..m_n, I)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    offsets = _level_offsets(model.n, model.k, model.q)
    cutoff = count + max(offsets)
    while True:
        tally: dict[int, int] = {}
        for m in itertools.product(range(cutoff + 1), repeat=model.n):
            s = sum(m)
            if s > cutoff:
                continue
            for off in offsets:
                level = s + off
                if level <= cutoff:
                    tally[level] = tally.get(level, 0) + 1
        levels = sorted(tally.items())
        # every level below the cutoff is complete; grow until enough of them
        if len(levels) >= count:
            return OscillatorSpectrum(model.t, tuple(levels[:count]))
        cutoff *= 2


@dataclass(frozen=True)
class GroundState:
    """omega = constant * exp(exponent * |x|^2) dx_{components}."""

    n: int
    t: float
    constant: float
    exponent: float
    components: tuple[int, ...]

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return self.constant * np.exp(self.exponent * np.sum(x * x, axis=-1))


def ground_state_form(model: OscillatorModel) -> GroundState:
    """Normalized generator (t/pi)^{n/4} e^{-t|x|^2/2} dx_1 ^ ... ^ dx_q of the kernel."""
    if model.q != model.k:
        raise DegreeMismatch(f"kernel is trivial unless q == k (q={model.q}, k={model.k})")
    return GroundState(
        n=model.n,
        t=model.t,
        constant=(model.t / math.pi) ** (model.n / 4),
        exponent=-model.t / 2,
        components=tuple(range(1, model.q + 1)),
    )
