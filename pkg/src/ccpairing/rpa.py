"""Harmonic (RPA) dynamics about a stationary point.

The time-dependent variational principle for a bi-variational CCM state
gives the action ``∫ (i θ_j(x) ẋ_j - E_c(x)) dt`` with the kinetic one-form
``θ_j = <ψ~| ∂_j ψ>``.  Linearizing about a stationary point yields the
pencil ``A a = ω Ω a`` where ``A`` is the Hessian of the constrained energy
and ``Ω`` the exterior derivative of ``θ``.

For the quasiparticle schemes the SUB(1) pair also moves the quasiparticle
vacuum, so ``∂_s`` and ``∂_s~`` act on the frame as well as on the cluster
amplitudes.  With the frame ``V = exp(sΔ†) exp(-s~Δ)`` the generators are
``V⁻¹ ∂_s V = δ† + s~(Ω - n) - s~² δ`` and ``V⁻¹ ∂_s~ V = -δ``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dual import Dual
from .functional import (
    AmplitudeVector,
    Scheme,
    SchemeConfig,
    _monomials,
    _pair_powers,
    build_bistate,
    observable_jets,
)
from .quasispin import ModelParams, build_pair_operators

ZERO_RTOL = 1e-6
IMAG_RTOL = 1e-8


class NoDynamicsError(ValueError):
    """The kinetic form vanishes identically, so there is no RPA problem."""


@dataclass
class KineticForm:
    theta: np.ndarray
    omega_matrix: np.ndarray
    null_space: np.ndarray

    @property
    def rank(self) -> int:
        return self.omega_matrix.shape[0] - self.null_space.shape[1]


@dataclass
class RpaSpectrum:
    frequencies: np.ndarray
    zero_modes: int = 0
    unstable: bool = False
    pairing: list[tuple[int, int]] = field(default_factory=list)
    classes: list[str] = field(default_factory=list)
    structural_zero_modes: int = 0
    scale: float = 0.0

    @property
    def nonzero(self) -> np.ndarray:
        return np.array([w for w, c in zip(self.frequencies, self.classes) if c != "zero"])


def _generators(params: ModelParams, scheme: SchemeConfig, seeds: list):
    """Matrices ``T_j`` with ``∂_j |ψ> = V T_j |χ>`` (``None`` where ``∂_j`` acts on the bra only)."""
    ops = build_pair_operators(params)
    up_pows, _ = _pair_powers(ops)
    b = scheme.block
    gens: list = [None] * (2 * b)
    if scheme.scheme is Scheme.PARTICLE_ECCM:
        for i, n in enumerate(range(1, scheme.order + 1)):
            gens[i] = up_pows[n]
        return gens
    orders = range(2, scheme.order + 1)
    offset = 0
    if scheme.scheme is not Scheme.MAX_OVERLAP:
        m = _monomials(ops)
        st = seeds[b]
        gens[0] = m.R + st * m.On - (st * st) * m.L
        gens[b] = -1.0 * m.L
        offset = 1
    for i, n in enumerate(orders):
        gens[offset + i] = up_pows[n] / math.factorial(n)
    return gens


def build_kinetic_form(params: ModelParams, scheme: SchemeConfig, point) -> KineticForm:
    """θ at the point and ``Ω_ij = ∂_j θ_i - ∂_i θ_j`` (so ``Ω_{s,s~} > 0`` at SUB(1))."""
    amps = _amplitudes(point)
    seeds = Dual.variables(amps, order=1)
    state = build_bistate(params, scheme, seeds)
    gens = _generators(params, scheme, seeds)
    k = amps.size
    theta = np.zeros(k)
    d_theta = np.zeros((k, k))  # d_theta[i, j] = ∂_j θ_i
    for i, gen in enumerate(gens):
        if gen is None:
            continue
        val = (state.bra @ (gen @ state.ket))[0, 0]
        if isinstance(val, Dual):
            theta[i] = float(val.val)
            d_theta[i] = val.gradient()
        else:
            theta[i] = float(val)
    omega = d_theta - d_theta.T
    return KineticForm(theta, omega, _null_space(omega))


def _null_space(mat: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    u, sv, vt = np.linalg.svd(mat)
    if sv.size == 0 or sv[0] == 0:
        return np.eye(mat.shape[1])
    rank = int(np.sum(sv > rtol * sv[0]))
    return vt[rank:].T


def _amplitudes(point) -> np.ndarray:
    if isinstance(point, AmplitudeVector):
        return point.amplitudes.copy()
    if hasattr(point, "amps"):
        return point.amps.amplitudes.copy()
    return np.asarray(point, dtype=float)


def _lam(point) -> float:
    if isinstance(point, AmplitudeVector):
        return point.lam
    if hasattr(point, "amps"):
        return point.amps.lam
    raise TypeError("need an AmplitudeVector or SolutionPoint to read λ")


def build_hessian(params: ModelParams, scheme: SchemeConfig, point) -> np.ndarray:
    """Hessian of ``E - λ(<N> - N0)`` over the amplitudes at fixed λ."""
    amps = _amplitudes(point)
    jets = observable_jets(params, scheme, amps, 2)
    hess = jets.energy.hessian() - _lam(point) * jets.number.hessian()
    return 0.5 * (hess + hess.T)


def gauge_generator(scheme: SchemeConfig, point) -> np.ndarray | None:
    """Tangent of the pair-number orbit ``s_n -> α^n s_n``, ``s~_n -> α^-n s~_n`` at ``α = 1``.

    Its complex continuation is the number-phase rotation, i.e. the Goldstone
    direction.  Max-overlap freezes the SUB(1) pair and has no such orbit.
    """
    if scheme.scheme is Scheme.MAX_OVERLAP:
        return None
    amps = _amplitudes(point)
    b = scheme.block
    w = scheme.gauge_weights()
    return np.concatenate([w * amps[:b], -w * amps[b:]])


def _goldstone_complement(a: np.ndarray, om: np.ndarray, g: np.ndarray | None) -> np.ndarray | None:
    """Basis of the symplectic complement of ``g`` modulo ``g`` itself, if ``g`` is a symmetry."""
    if g is None:
        return None
    gn = np.linalg.norm(g)
    if gn == 0:
        return None
    og = om @ g
    if np.linalg.norm(og) <= 1e-8 * np.linalg.norm(om, 2) * gn:
        return None
    if np.linalg.norm(a @ g) > 1e-7 * max(1.0, np.linalg.norm(a, 2)) * gn:
        return None
    w = _null_space(og[None, :])
    inner = _null_space((w.T @ g)[None, :])
    return w @ inner


def solve_rpa(hessian: np.ndarray, kinetic: KineticForm, zero_rtol: float = ZERO_RTOL,
              imag_rtol: float = IMAG_RTOL, goldstone: np.ndarray | None = None) -> RpaSpectrum:
    """Frequencies of ``A a = ω Ω a`` on the image of ``Ω``.

    Kernel directions of ``Ω`` carry no dynamics; they are projected out and
    counted as structural zero modes.  If ``goldstone`` is a direction with
    ``A g = 0`` (checked), the pencil is reduced symplectically by it and the
    Goldstone pair is reported as two exact zeros; the reduction avoids the
    square-root loss of accuracy of the zero-frequency Jordan block.
    """
    a = np.asarray(hessian, dtype=float)
    om = kinetic.omega_matrix
    if a.shape != om.shape:
        raise ValueError(f"Hessian {a.shape} and kinetic form {om.shape} disagree")
    if not np.any(om):
        raise NoDynamicsError("kinetic form is identically zero")
    null = kinetic.null_space
    extra = np.zeros(0)
    if null.shape[1]:
        q = _null_space(null.T)  # orthonormal complement of the kernel
        a_r = q.T @ a @ q
        om_r = q.T @ om @ q
    else:
        a_r, om_r = a, om
        q = _goldstone_complement(a, om, goldstone)
        if q is not None:
            a_r = q.T @ a @ q
            om_r = q.T @ om @ q
            extra = np.zeros(2)
    if a_r.shape[0]:
        freqs = np.linalg.eigvals(np.linalg.solve(om_r, a_r))
    else:
        freqs = np.zeros(0)
    scale = _frequency_scale(freqs, a, om)
    freqs = np.concatenate([extra, freqs])
    spec = RpaSpectrum(freqs.astype(complex), structural_zero_modes=null.shape[1], scale=scale)
    return classify_modes(spec, zero_rtol * scale, imag_rtol * scale)


def _frequency_scale(freqs: np.ndarray, a: np.ndarray, om: np.ndarray) -> float:
    """Spectral radius, or the natural ``|A|/|Ω|`` scale when every mode is (nearly) zero."""
    radius = float(np.max(np.abs(freqs))) if freqs.size else 0.0
    nat = float(np.linalg.norm(a, 2) / np.linalg.norm(om, 2)) if a.size else 0.0
    return max(radius, nat) if radius < 1e-4 * nat else radius


def classify_modes(spectrum: RpaSpectrum, zero_tol: float, imag_tol: float) -> RpaSpectrum:
    """Label modes zero/real/complex, set the instability flag and pair ``ω`` with ``-ω``."""
    w = np.asarray(spectrum.frequencies, dtype=complex)
    classes = []
    for z in w:
        if abs(z) <= zero_tol:
            classes.append("zero")
        elif abs(z.imag) > imag_tol:
            classes.append("complex")
        else:
            classes.append("real")
    spectrum.classes = classes
    spectrum.zero_modes = classes.count("zero")
    spectrum.unstable = "complex" in classes
    spectrum.pairing = pair_modes(w)
    return spectrum


def pair_modes(w: np.ndarray) -> list[tuple[int, int]]:
    """Greedy matching of each frequency with its closest ``-ω`` partner."""
    left = list(range(len(w)))
    pairs = []
    while len(left) > 1:
        i = left.pop(0)
        j = min(left, key=lambda k: abs(w[i] + w[k]))
        left.remove(j)
        pairs.append((i, j))
    return pairs


def pairing_defect(spectrum: RpaSpectrum) -> float:
    w = spectrum.frequencies
    return max((abs(w[i] + w[j]) for i, j in spectrum.pairing), default=0.0)


def nccm_block_frequencies(hessian: np.ndarray, kinetic: KineticForm, s_idx, st_idx) -> np.ndarray:
    """``±eig(C⁻¹ Q)`` for an NCCM-shaped problem.

    Requires the Hessian to vanish on the bra block and the kinetic form to
    couple the ket and bra blocks only; ``Q`` and ``C`` are the bra-ket blocks
    of the Hessian and kinetic form.
    """
    s_idx, st_idx = list(s_idx), list(st_idx)
    a, om = np.asarray(hessian), kinetic.omega_matrix
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a[np.ix_(st_idx, st_idx)]).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("Hessian has a bra-bra block; not an NCCM-shaped problem")
    if max(np.abs(om[np.ix_(s_idx, s_idx)]).max(initial=0.0),
           np.abs(om[np.ix_(st_idx, st_idx)]).max(initial=0.0)) > 1e-10 * max(1.0, np.abs(om).max()):
        raise ValueError("kinetic form is not block off-diagonal")
    q = a[np.ix_(st_idx, s_idx)]
    c = om[np.ix_(st_idx, s_idx)]
    half = np.linalg.eigvals(np.linalg.solve(c, q))
    return np.concatenate([half, -half])


def rpa_at(params: ModelParams, point, zero_rtol: float = ZERO_RTOL, imag_rtol: float = IMAG_RTOL,
           reduce_goldstone: bool = True) -> RpaSpectrum:
    """Hessian, kinetic form and spectrum for a :class:`SolutionPoint`."""
    scheme = point.amps.scheme
    p = point.params if hasattr(point, "params") else params
    hess = build_hessian(p, scheme, point)
    kin = build_kinetic_form(p, scheme, point)
    g = gauge_generator(scheme, point) if reduce_goldstone else None
    return solve_rpa(hess, kin, zero_rtol, imag_rtol, goldstone=g)


def restrict(hessian: np.ndarray, kinetic: KineticForm, idx) -> tuple[np.ndarray, KineticForm]:
    """Sub-problem on a subset of unknowns (the rest frozen)."""
    idx = list(idx)
    a = hessian[np.ix_(idx, idx)]
    om = kinetic.omega_matrix[np.ix_(idx, idx)]
    return a, KineticForm(kinetic.theta[idx], om, _null_space(om))


@dataclass
class Breakdown:
    """First N0 along a branch where the RPA spectrum turns complex."""

    n0: float
    bracket: tuple[float, float]
    index: int  # first unstable point on the branch


def branch_stability(points, zero_rtol: float = ZERO_RTOL, imag_rtol: float = IMAG_RTOL) -> list[bool | None]:
    """``unstable`` flag per point (``None`` where the RPA cannot be formed)."""
    out: list[bool | None] = []
    for pt in points:
        try:
            out.append(bool(rpa_at(pt.params, pt, zero_rtol, imag_rtol).unstable))
        except (NoDynamicsError, np.linalg.LinAlgError):
            out.append(None)
    return out


def locate_breakdown(points, tol: float = 1e-6, settings=None, flags=None) -> Breakdown | None:
    """Bisect in N0 between the last stable and first unstable branch points.

    Midpoints are re-solved by Newton from the linear interpolation of the
    bracketing amplitudes.  Returns ``None`` if the branch never turns
    unstable after a stable point.
    """
    from .solver import SolverSettings, newton_solve

    settings = settings or SolverSettings()
    flags = flags if flags is not None else branch_stability(points)
    for i in range(1, len(points)):
        if flags[i - 1] is False and flags[i] is True:
            break
    else:
        return None
    lo, hi = points[i - 1], points[i]
    while abs(hi.n0 - lo.n0) > tol:
        mid_n0 = 0.5 * (lo.n0 + hi.n0)
        t = (mid_n0 - lo.n0) / (hi.n0 - lo.n0)
        guess = lo.amps.x + t * (hi.amps.x - lo.amps.x)
        mid = newton_solve(lo.params.with_n0(mid_n0), lo.scheme, guess, settings)
        if not mid.converged:
            break
        if rpa_at(mid.params, mid).unstable:
            hi = mid
        else:
            lo = mid
    return Breakdown(0.5 * (lo.n0 + hi.n0), (lo.n0, hi.n0), i)
