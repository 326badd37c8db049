"""Quasispin pair operators for the single-shell pairing model.

Everything lives in the seniority-zero space spanned by the unnormalized
states ``|m> = (Δ†)^m |0>``, ``m = 0..Ω``.  In that basis the raising
operator is a unit subdiagonal and all combinatorics sit in the lowering
operator, ``Δ|m> = m(Ω-m+1)|m-1>``.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dual import Dual


@dataclass(frozen=True)
class ModelParams:
    """Shell degeneracy ``omega``, pairing strength ``g`` and target particle number ``n0``."""

    omega: int
    g: float = 1.0
    n0: float = 0.0

    def __post_init__(self):
        _check_omega(self.omega)
        if not math.isfinite(self.g) or self.g < 0:
            raise ValueError(f"pairing strength must be finite and >= 0, got {self.g}")
        if not (0.0 <= self.n0 <= 2 * self.omega):
            raise ValueError(f"n0={self.n0} outside [0, 2*omega={2 * self.omega}]")

    def with_n0(self, n0: float) -> "ModelParams":
        # continuation may step marginally outside the physical window
        return _unchecked(self.omega, self.g, float(n0))


def _unchecked(omega: int, g: float, n0: float) -> ModelParams:
    p = object.__new__(ModelParams)
    object.__setattr__(p, "omega", omega)
    object.__setattr__(p, "g", g)
    object.__setattr__(p, "n0", n0)
    return p


def _check_omega(omega) -> None:
    if isinstance(omega, bool) or not isinstance(omega, numbers.Integral):
        raise ValueError(f"omega must be an integer, got {omega!r}")
    if omega < 1:
        raise ValueError(f"omega must be >= 1, got {omega}")


@dataclass(frozen=True)
class PairOperatorSet:
    """Matrices of Δ†, Δ and the pair count in the unnormalized pair basis."""

    omega: int
    raising: np.ndarray
    lowering: np.ndarray
    npairs: np.ndarray

    @property
    def dim(self) -> int:
        return self.omega + 1

    @property
    def number(self) -> np.ndarray:
        """Particle (or quasiparticle) number, two per pair."""
        return 2.0 * self.npairs

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim)

    def hamiltonian(self, g: float) -> np.ndarray:
        """``H = -G (Δ†Δ - N/2)``."""
        return -g * (self.raising @ self.lowering - 0.5 * self.number)


def build_pair_operators(params: ModelParams | int) -> PairOperatorSet:
    omega = params.omega if isinstance(params, ModelParams) else params
    _check_omega(omega)
    return _pair_operators(int(omega))


@lru_cache(maxsize=64)
def _pair_operators(omega: int) -> PairOperatorSet:
    dim = omega + 1
    up = np.zeros((dim, dim))
    down = np.zeros((dim, dim))
    for m in range(omega):
        up[m + 1, m] = 1.0
    for m in range(1, dim):
        down[m - 1, m] = float(m * (omega - m + 1))
    npairs = np.diag(np.arange(dim, dtype=float))
    for a in (up, down, npairs):
        a.setflags(write=False)
    return PairOperatorSet(omega, up, down, npairs)


def _strict_triangle(a: np.ndarray) -> bool:
    return not np.any(np.triu(a)) or not np.any(np.tril(a))


def expm_nilpotent(a):
    """Exponential of a strictly triangular matrix as a terminating power series.

    Accepts plain arrays or :class:`Dual` matrices; the series
    ``sum_{k<dim} A^k/k!`` is evaluated by Horner's rule and is exact because
    ``A^dim = 0``.
    """
    val = a.val if isinstance(a, Dual) else np.asarray(a, dtype=float)
    if val.ndim != 2 or val.shape[0] != val.shape[1]:
        raise ValueError("expected a square matrix")
    if np.any(np.diag(val)):
        raise ValueError("matrix has a nonzero diagonal; the series does not terminate")
    if not _strict_triangle(val):
        raise ValueError("matrix is not strictly triangular")
    dim = val.shape[0]
    eye = np.eye(dim)
    out = eye
    for k in range(dim - 1, 0, -1):
        out = eye + (a @ out) * (1.0 / k)
    return out


def apply_exp(a, vec):
    """``exp(A) @ vec`` for strictly triangular ``A`` without forming the exponential."""
    term = vec
    out = vec
    dim = (a.val if isinstance(a, Dual) else a).shape[0]
    for k in range(1, dim):
        term = (a @ term) * (1.0 / k)
        out = out + term
    return out


def moment(params: ModelParams | int, m: int) -> float:
    """``<0| Δ^m (Δ†)^m |0>`` by repeated application of the lowering matrix."""
    ops = build_pair_operators(params)
    if m < 0:
        raise ValueError("m must be non-negative")
    if m > ops.omega:
        return 0.0
    vec = np.zeros(ops.dim)
    vec[m] = 1.0
    for _ in range(m):
        vec = ops.lowering @ vec
    return float(vec[0])
