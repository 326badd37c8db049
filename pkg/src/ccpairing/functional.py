"""Coupled-cluster energy functionals for the single-shell pairing model.

Four schemes share one evaluation path.  Each builds a bra row vector and a
ket column vector in the pair basis and contracts them with observable
matrices:

``particle-eccm``
    ``<0| e^{S~} e^{-S} O e^{S} |0>`` with ``S = sum_n s_n (Δ†)^n`` and
    ``S~ = sum_n s~_n Δ^n`` (no factorials).
``qp-eccm`` / ``qp-nccm``
    Brueckner form: the SUB(1) pair ``(s, s~)`` defines quasiparticle pair
    operators ``δ†, δ`` and the higher amplitudes enter as
    ``S = sum_{n>=2} s^(n)/n! (δ†)^n``.  The bra is ``e^{S~}`` (ECCM) or
    ``1 + S~`` (NCCM).
``max-overlap``
    As ``qp-eccm`` but with ``(s, s~)`` frozen at the SUB(1) mean-field
    values for the target particle number.

Derivatives with respect to the amplitudes are exact (see :mod:`.dual`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dual import Dual, value
from .quasispin import ModelParams, PairOperatorSet, apply_exp, build_pair_operators


class Scheme(enum.Enum):
    PARTICLE_ECCM = "particle-eccm"
    QP_ECCM = "qp-eccm"
    QP_NCCM = "qp-nccm"
    MAX_OVERLAP = "max-overlap"


class Gauge(enum.Enum):
    SCALING_FIX = "scaling-fix"
    DELTA_SYMMETRIC = "delta-symmetric"
    NONE = "none"


@dataclass(frozen=True)
class SchemeConfig:
    """Which functional, its SUB(M) order and how the bi-variational gauge is fixed.

    ``gauge=None`` picks the default: no gauge for max-overlap (the frozen
    SUB(1) pair already breaks the scaling orbit), Δ-symmetric at SUB(1)
    and scaling-fix otherwise.
    """

    scheme: Scheme
    order: int
    gauge: Gauge | None = None

    def __post_init__(self):
        scheme = Scheme(self.scheme)
        object.__setattr__(self, "scheme", scheme)
        if isinstance(self.order, bool) or int(self.order) != self.order:
            raise ValueError(f"order must be an integer, got {self.order!r}")
        object.__setattr__(self, "order", int(self.order))
        min_order = 1 if scheme is Scheme.PARTICLE_ECCM else 2
        if self.order < min_order:
            raise ValueError(f"{scheme.value} needs order >= {min_order}, got {self.order}")
        gauge = self.gauge
        if gauge is None:
            if scheme is Scheme.MAX_OVERLAP:
                gauge = Gauge.NONE
            elif self.order == 1:
                gauge = Gauge.DELTA_SYMMETRIC
            else:
                gauge = Gauge.SCALING_FIX
        object.__setattr__(self, "gauge", Gauge(gauge))

    @property
    def block(self) -> int:
        """Length of the s-block (equal to the s~-block)."""
        return self.order - 1 if self.scheme is Scheme.MAX_OVERLAP else self.order

    @property
    def n_amplitudes(self) -> int:
        return 2 * self.block

    @property
    def n_unknowns(self) -> int:
        return self.n_amplitudes + 1

    @property
    def n_equations(self) -> int:
        return self.n_unknowns + (self.gauge is not Gauge.NONE)

    @property
    def is_quasiparticle(self) -> bool:
        return self.scheme is not Scheme.PARTICLE_ECCM

    def gauge_weights(self) -> np.ndarray:
        """Pair-number weight of each s-block amplitude under the scaling orbit."""
        if self.scheme is Scheme.PARTICLE_ECCM:
            return np.arange(1, self.order + 1, dtype=float)
        if self.scheme is Scheme.MAX_OVERLAP:
            return np.arange(2, self.order + 1, dtype=float)
        return np.concatenate([[1.0], np.arange(2, self.order + 1, dtype=float)])

    def labels(self) -> list[str]:
        if self.scheme is Scheme.PARTICLE_ECCM:
            s = [f"s{n}" for n in range(1, self.order + 1)]
        elif self.scheme is Scheme.MAX_OVERLAP:
            s = [f"s({n})" for n in range(2, self.order + 1)]
        else:
            s = ["s"] + [f"s({n})" for n in range(2, self.order + 1)]
        return s + [name.replace("s", "st", 1) for name in s] + ["lambda"]


@dataclass
class AmplitudeVector:
    """Flattened unknowns ordered (s-block, s~-block, λ)."""

    x: np.ndarray
    scheme: SchemeConfig

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float).reshape(-1)
        if self.x.size != self.scheme.n_unknowns:
            raise ValueError(
                f"{self.scheme.scheme.value} SUB({self.scheme.order}) needs "
                f"{self.scheme.n_unknowns} unknowns, got {self.x.size}"
            )

    @property
    def amplitudes(self) -> np.ndarray:
        return self.x[:-1]

    @property
    def lam(self) -> float:
        return float(self.x[-1])

    def copy(self) -> "AmplitudeVector":
        return AmplitudeVector(self.x.copy(), self.scheme)


@dataclass(frozen=True)
class Observables:
    energy: float
    n_mean: float
    n2_mean: float
    dn2: float
    delta_expect: float
    delta_dag_expect: float

    def fingerprint(self) -> tuple[float, ...]:
        """Gauge-invariant summary used to identify distinct solutions."""
        return (self.energy, self.n_mean, self.n2_mean, self.delta_expect * self.delta_dag_expect)


class Parts(NamedTuple):
    s1: object
    st1: object
    s: list
    st: list


def split_amplitudes(scheme: SchemeConfig, x) -> Parts:
    """Split an amplitude sequence (λ optional) into SUB(1) and higher blocks.

    For particle ECCM ``s``/``st`` hold every order and ``s1``/``st1`` repeat
    the first entries; for the quasiparticle schemes they hold orders 2..M.
    """
    b = scheme.block
    s_blk = list(x[:b])
    st_blk = list(x[b : 2 * b])
    if scheme.scheme is Scheme.PARTICLE_ECCM:
        return Parts(s_blk[0], st_blk[0], s_blk, st_blk)
    if scheme.scheme is Scheme.MAX_OVERLAP:
        return Parts(None, None, s_blk, st_blk)
    return Parts(s_blk[0], st_blk[0], s_blk[1:], st_blk[1:])


def sub1_closed_form(params: ModelParams) -> tuple[float, float, float]:
    """Δ-symmetric SUB(1) stationary point ``(s, s~, λ)`` at ``params.n0``."""
    om, n0, g = params.omega, params.n0, params.g
    if n0 >= 2 * om:
        raise ValueError("SUB(1) amplitudes diverge at the full shell")
    s = math.sqrt(n0 / (2 * om - n0))
    st = math.sqrt(n0 * (2 * om - n0)) / (2 * om)
    lam = -g * (om - 1) * (1 - n0 / om) / 2
    return s, st, lam


def sub1_energy(params: ModelParams) -> float:
    om, n0 = params.omega, params.n0
    return -params.g * (n0 / 2) * ((om - 1) / om) * (om - n0 / 2)


def frozen_sub1(params: ModelParams) -> tuple[float, float]:
    """Mean-field pair held fixed by the max-overlap scheme."""
    s, st, _ = sub1_closed_form(params)
    return s, st


# -- quasiparticle operators --------------------------------------------------


class _Monomials:
    """Constant matrices the quasiparticle operators are built from."""

    def __init__(self, ops: PairOperatorSet):
        om = ops.omega
        eye = ops.identity
        up, down = ops.raising, ops.lowering
        on = om * eye - ops.number  # Ω - n
        self.I = eye
        self.On = on
        self.On2 = on @ on
        self.RL = up @ down
        self.RR = up @ up
        self.LL = down @ down
        self.R_On1 = up @ (on - eye)
        self.On1_L = (on - eye) @ down
        self.R = up
        self.L = down


_MONO_CACHE: dict[int, _Monomials] = {}


def _monomials(ops: PairOperatorSet) -> _Monomials:
    mono = _MONO_CACHE.get(ops.omega)
    if mono is None:
        mono = _MONO_CACHE[ops.omega] = _Monomials(ops)
    return mono


def qp_operator_terms(omega: int, g: float, s, st) -> dict[str, list]:
    """Quasiparticle-basis expansions as ``name -> [(coefficient, matrix), ...]``.

    Coefficients may be floats or :class:`Dual` scalars; the matrices are
    monomials in ``δ†``, ``δ`` and the quasiparticle number ``n``.
    """
    m = _monomials(build_pair_operators(omega))
    x = s * st
    one_x = 1 - x
    one_2x = 1 - 2 * x
    w = one_x * one_x + x * x
    stq = st * one_x
    ham = [
        (0.5 * omega * g, m.I),
        (-g * (one_x * x), m.On2),
        (-g * w, m.RL),
        (-0.5 * g * w, m.On),
        (g * (s * s), m.RR),
        (g * (stq * stq), m.LL),
        (-g * (s * one_2x), m.R_On1),
        (-g * (stq * one_2x), m.On1_L),
    ]
    number = [
        (-one_2x, m.On),
        (float(omega), m.I),
        (2 * s, m.R),
        (2 * stq, m.L),
    ]
    number2 = [
        (float(omega * omega), m.I),
        (4 * omega * s, m.R),
        (4 * omega * stq, m.L),
        (8 * (one_x * x), m.RL),
        (one_2x * one_2x, m.On2),
        (2 * (2 * x * one_x - one_2x * omega), m.On),
        (4 * (s * s), m.RR),
        (4 * (stq * stq), m.LL),
        (-4 * (s * one_2x), m.R_On1),
        (-4 * (stq * one_2x), m.On1_L),
    ]
    delta = [(one_x * one_x, m.L), (-(s * s), m.R), (s * one_x, m.On)]
    delta_dag = [(1.0, m.R), (-(st * st), m.L), (st, m.On)]
    return {"H": ham, "N": number, "N2": number2, "Delta": delta, "Delta_dag": delta_dag}


def _assemble(terms) -> np.ndarray:
    out = 0.0
    for coef, mat in terms:
        out = out + float(value(coef)) * mat
    return np.asarray(out)


def build_qp_hamiltonian(params: ModelParams, s1: float, s1t: float) -> np.ndarray:
    """Matrix of H in the quasiparticle pair basis ``(δ†)^m |->``."""
    return _assemble(qp_operator_terms(params.omega, params.g, s1, s1t)["H"])


def build_qp_number(params: ModelParams, s1: float, s1t: float) -> tuple[np.ndarray, np.ndarray]:
    terms = qp_operator_terms(params.omega, params.g, s1, s1t)
    return _assemble(terms["N"]), _assemble(terms["N2"])


def particle_operator_terms(ops: PairOperatorSet, g: float) -> dict[str, list]:
    n = ops.number
    return {
        "H": [(1.0, ops.hamiltonian(g))],
        "N": [(1.0, n)],
        "N2": [(1.0, n @ n)],
        "Delta": [(1.0, ops.lowering)],
        "Delta_dag": [(1.0, ops.raising)],
    }


# -- bra/ket construction -----------------------------------------------------


@dataclass
class BiState:
    """Bra row ``(1, dim)`` and ket column ``(dim, 1)`` plus the operators they sandwich."""

    bra: object
    ket: object
    terms: dict[str, list]

    def expect(self, name: str):
        out = 0.0
        for coef, mat in self.terms[name]:
            out = out + coef * (self.bra @ (mat @ self.ket))[0, 0]
        return out


def _power_sum(coefs, mats):
    out = 0.0
    for c, m in zip(coefs, mats):
        out = out + c * m
    return out


def build_bistate(params: ModelParams, scheme: SchemeConfig, amps) -> BiState:
    """Bra and ket for the amplitude block ``amps`` (floats or Duals, λ excluded)."""
    ops = build_pair_operators(params)
    dim = ops.dim
    e0 = np.zeros((dim, 1))
    e0[0, 0] = 1.0
    parts = split_amplitudes(scheme, amps)
    up_pows, down_pows = _pair_powers(ops)
    if scheme.scheme is Scheme.PARTICLE_ECCM:
        orders = range(1, scheme.order + 1)
        s_coef, st_coef = parts.s, parts.st
        terms = particle_operator_terms(ops, params.g)
    else:
        orders = range(2, scheme.order + 1)
        fact = [1.0 / math.factorial(n) for n in orders]
        s_coef = [c * f for c, f in zip(parts.s, fact)]
        st_coef = [c * f for c, f in zip(parts.st, fact)]
        if scheme.scheme is Scheme.MAX_OVERLAP:
            s1, st1 = frozen_sub1(params)
        else:
            s1, st1 = parts.s1, parts.st1
        terms = qp_operator_terms(ops.omega, params.g, s1, st1)
    big_s = _power_sum(s_coef, [up_pows[n] for n in orders])
    big_st_t = _power_sum(st_coef, [down_pows[n].T for n in orders])
    ket = apply_exp(big_s, e0)
    if scheme.scheme is Scheme.QP_NCCM:
        bra_t = e0 + big_st_t @ e0
    else:
        bra_t = apply_exp(big_st_t, e0)
    bra_t = apply_exp(-1.0 * _transpose(big_s), bra_t)
    return BiState(_transpose(bra_t), ket, terms)


def _transpose(a):
    return a.T


_POW_CACHE: dict[int, tuple[list, list]] = {}


def _pair_powers(ops: PairOperatorSet):
    pows = _POW_CACHE.get(ops.omega)
    if pows is None:
        up = [np.eye(ops.dim)]
        down = [np.eye(ops.dim)]
        for _ in range(ops.omega + 1):
            up.append(up[-1] @ ops.raising)
            down.append(down[-1] @ ops.lowering)
        pows = _POW_CACHE[ops.omega] = (up, down)
    return pows


# -- observables --------------------------------------------------------------


def _check_order(params: ModelParams, scheme: SchemeConfig) -> None:
    if scheme.order > params.omega:
        raise ValueError(
            f"SUB({scheme.order}) exceeds the shell capacity omega={params.omega}; "
            "higher amplitudes would be redundant"
        )


def _as_vector(amps: AmplitudeVector) -> tuple[SchemeConfig, np.ndarray]:
    return amps.scheme, amps.x


def _observables_from(state: BiState) -> Observables:
    e = float(value(state.expect("H")))
    n = float(value(state.expect("N")))
    n2 = float(value(state.expect("N2")))
    d = float(value(state.expect("Delta")))
    dd = float(value(state.expect("Delta_dag")))
    return Observables(e, n, n2, n2 - n * n, d, dd)


def eval_particle_eccm(params: ModelParams, amps: AmplitudeVector) -> Observables:
    scheme, x = _as_vector(amps)
    if scheme.scheme is not Scheme.PARTICLE_ECCM:
        raise ValueError("eval_particle_eccm needs the particle-eccm scheme")
    _check_order(params, scheme)
    return _observables_from(build_bistate(params, scheme, x[:-1]))


def eval_qp_functional(params: ModelParams, amps: AmplitudeVector) -> Observables:
    scheme, x = _as_vector(amps)
    if not scheme.is_quasiparticle:
        raise ValueError("eval_qp_functional needs a quasiparticle scheme")
    _check_order(params, scheme)
    return _observables_from(build_bistate(params, scheme, x[:-1]))


def evaluate(params: ModelParams, amps: AmplitudeVector) -> Observables:
    if amps.scheme.scheme is Scheme.PARTICLE_ECCM:
        return eval_particle_eccm(params, amps)
    return eval_qp_functional(params, amps)


# -- stationarity system ------------------------------------------------------


@dataclass
class Derivatives:
    """Observables of one point with exact amplitude derivatives."""

    energy: Dual
    number: Dual
    delta: Dual | None
    delta_dag: Dual | None


def observable_jets(params: ModelParams, scheme: SchemeConfig, amps: np.ndarray, order: int,
                    with_delta: bool = False) -> Derivatives:
    seeds = Dual.variables(amps, order=order)
    state = build_bistate(params, scheme, seeds)
    delta = state.expect("Delta") if with_delta else None
    delta_dag = state.expect("Delta_dag") if with_delta else None
    return Derivatives(_dualize(state.expect("H"), seeds), _dualize(state.expect("N"), seeds),
                       _dualize(delta, seeds), _dualize(delta_dag, seeds))


def _dualize(v, seeds):
    if v is None or isinstance(v, Dual):
        return v
    return Dual.constant(v, seeds[0].nslots if seeds else 0, seeds[0].order if seeds else 1)


def gauge_residual(scheme: SchemeConfig, amps: np.ndarray, jets: Derivatives | None = None):
    """Gauge condition value and gradient over the amplitude block."""
    b = scheme.block
    s, st = amps[:b], amps[b : 2 * b]
    if scheme.gauge is Gauge.SCALING_FIX:
        w = scheme.gauge_weights()
        val = float(np.sum(w * (s * s - st * st)))
        grad = np.concatenate([2 * w * s, -2 * w * st])
        return val, grad
    if scheme.gauge is Gauge.DELTA_SYMMETRIC:
        diff = jets.delta - jets.delta_dag
        return float(diff.val), diff.gradient()
    return None, None


def residuals(params: ModelParams, amps: AmplitudeVector, jacobian: bool = False):
    """Stationarity residual of ``E - λ(<N> - N0)`` plus the gauge condition.

    Returns ``[dE_c/ds-block, dE_c/ds~-block, <N> - N0, gauge]``; the gauge
    row is present unless the scheme has gauge ``none``.  With
    ``jacobian=True`` also returns the exact Jacobian over
    ``(amplitudes, λ)``.
    """
    scheme, x = _as_vector(amps)
    _check_order(params, scheme)
    a, lam = x[:-1], x[-1]
    need_delta = scheme.gauge is Gauge.DELTA_SYMMETRIC
    jets = observable_jets(params, scheme, a, 2 if jacobian else 1, with_delta=need_delta)
    grad_e = jets.energy.gradient()
    grad_n = jets.number.gradient()
    n_mean = float(jets.number.val)
    rows = [grad_e - lam * grad_n, [n_mean - params.n0]]
    g_val, g_grad = gauge_residual(scheme, a, jets)
    if g_val is not None:
        rows.append([g_val])
    f = np.concatenate(rows)
    if not np.all(np.isfinite(f)):
        raise EvaluationDomainError("non-finite residual")
    if not jacobian:
        return f
    na = scheme.n_amplitudes
    jac = np.zeros((f.size, na + 1))
    jac[:na, :na] = jets.energy.hessian() - lam * jets.number.hessian()
    jac[:na, na] = -grad_n
    jac[na, :na] = grad_n
    if g_val is not None:
        jac[na + 1, :na] = g_grad
    return f, jac


def stationarity_gradient(params: ModelParams, amps: AmplitudeVector) -> np.ndarray:
    """Full gradient of ``E_c`` over (amplitudes, λ); zero at a stationary point."""
    f = residuals(params, amps)
    na = amps.scheme.n_amplitudes
    return np.concatenate([f[:na], [-f[na]]])


class EvaluationDomainError(ArithmeticError):
    pass


# -- SUB(1) generalized density -----------------------------------------------


@dataclass(frozen=True)
class GeneralizedDensity:
    rho: float
    kappa: float
    kappa_conj: float
    reduced: np.ndarray  # coupled (k particle, k-bar hole) sector
    full: np.ndarray  # per-mode block over (k, k-bar) particle and hole indices

    def projector_defect(self) -> float:
        return float(max(np.abs(self.reduced @ self.reduced - self.reduced).max(),
                         np.abs(self.full @ self.full - self.full).max()))


def build_generalized_density(s1: float, s1t: float) -> GeneralizedDensity:
    """Normal and abnormal SUB(1) densities for one time-reversed pair of modes.

    The abnormal density is antisymmetric in the pair spin labels, which is
    what turns ``rho^2 - kappa kappa*`` into ``rho`` in the full block.
    """
    x = s1 * s1t
    kappa = s1 * (1 - x)
    kappa_conj = s1t
    reduced = np.array([[x, kappa], [kappa_conj, 1 - x]])
    eye = np.eye(2)
    spin = np.array([[0.0, 1.0], [-1.0, 0.0]])
    full = np.block([[x * eye, kappa * spin], [-kappa_conj * spin, (1 - x) * eye]])
    return GeneralizedDensity(x, kappa, kappa_conj, reduced, full)
