"""Independent reference values for the pairing model.

Nothing here touches :mod:`ccpairing.quasispin`.  Exact energies come from
a dense diagonalization in the normalized seniority-zero basis, and CCM
expectation values are expanded term by term: a state is a mapping
``m -> coefficient of (Δ†)^m |0>`` and operators act through the integer
rules ``Δ†: m -> m+1`` and ``Δ: m -> m(Ω-m+1) (m-1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functional import AmplitudeVector, Scheme, frozen_sub1, split_amplitudes
from .quasispin import ModelParams

OBSERVABLES = ("H", "N", "N2", "Delta", "Delta_dag")
BRUTEFORCE_MAX_OMEGA = 8


class OracleBudgetError(ValueError):
    pass


def exact_ground_energy(params: ModelParams, n_particles: int) -> float:
    """Lowest seniority-zero energy at even particle number."""
    if n_particles % 2:
        raise ValueError("only even particle numbers live in the seniority-zero sector")
    if not 0 <= n_particles <= 2 * params.omega:
        raise ValueError(f"particle number {n_particles} outside [0, {2 * params.omega}]")
    half = n_particles // 2
    return -params.g * (params.omega - half) * half


@dataclass
class ExactSpectrum:
    omega: int
    g: float
    energies_by_pairnumber: dict[int, float]
    eigenvectors: dict[int, np.ndarray] = field(repr=False)

    def closed_form(self, m: int) -> float:
        return -self.g * (self.omega - m) * m

    def ground_energy(self, n_particles: int) -> float:
        return self.energies_by_pairnumber[n_particles // 2]


def exact_spectrum(params: ModelParams, rtol: float = 1e-12) -> ExactSpectrum:
    omega, g = params.omega, params.g
    if omega > 200:
        raise OracleBudgetError("dense diagonalization limited to omega <= 200")
    dim = omega + 1
    # normalized basis: <m+1|Δ†|m> = sqrt((m+1)(Ω-m))
    up = np.zeros((dim, dim))
    for m in range(omega):
        up[m + 1, m] = math.sqrt((m + 1) * (omega - m))
    number = np.diag(2.0 * np.arange(dim))
    ham = -g * (up @ up.T - 0.5 * number)
    evals, evecs = np.linalg.eigh(ham)
    energies: dict[int, float] = {}
    vectors: dict[int, np.ndarray] = {}
    for j in range(dim):
        m = int(np.argmax(np.abs(evecs[:, j])))
        energies[m] = float(evals[j])
        vectors[m] = evecs[:, j]
    spec = ExactSpectrum(omega, g, dict(sorted(energies.items())), vectors)
    for m, e in spec.energies_by_pairnumber.items():
        ref = spec.closed_form(m)
        if abs(e - ref) > rtol * max(1.0, abs(ref)) * dim:
            raise AssertionError(f"diagonal energy {e} at m={m} disagrees with closed form {ref}")
    return spec


def interpolated_exact_energy(params: ModelParams, n0: float) -> float:
    """Exact ground energy linearly interpolated between neighbouring even N."""
    lo = 2 * math.floor(n0 / 2)
    lo = min(lo, 2 * params.omega - 2) if params.omega > 0 else 0
    lo = max(lo, 0)
    hi = min(lo + 2, 2 * params.omega)
    e_lo = exact_ground_energy(params, lo)
    if hi == lo:
        return e_lo
    e_hi = exact_ground_energy(params, hi)
    t = (n0 - lo) / (hi - lo)
    return (1 - t) * e_lo + t * e_hi


# -- term-by-term expansion ---------------------------------------------------

State = dict


def _raise(state: State, omega: int) -> State:
    return {m + 1: c for m, c in state.items() if m + 1 <= omega}


def _lower(state: State, omega: int) -> State:
    return {m - 1: c * m * (omega - m + 1) for m, c in state.items() if m > 0}


def _number(state: State) -> State:
    return {m: 2 * m * c for m, c in state.items()}


def _axpy(a: float, x: State, y: State) -> State:
    out = dict(y)
    for m, c in x.items():
        out[m] = out.get(m, 0.0) + a * c
    return out


def _series_coefficients(amps: dict[int, float], omega: int) -> list[float]:
    """Power-series coefficients of exp(sum_n a_n t^n) up to t^omega.

    Uses the convolution recurrence m c_m = sum_n n a_n c_{m-n}.
    """
    c = [0.0] * (omega + 1)
    c[0] = 1.0
    for m in range(1, omega + 1):
        acc = 0.0
        for n, a in amps.items():
            if 1 <= n <= m:
                acc += n * a * c[m - n]
        c[m] = acc / m
    return c


def _exp_raising(amps: dict[int, float], state: State, omega: int) -> State:
    """exp(sum_n a_n (Δ†)^n) applied to a state: a truncated polynomial product."""
    c = _series_coefficients(amps, omega)
    out: State = {}
    for m, cm in state.items():
        for j, cj in enumerate(c):
            if m + j > omega:
                break
            if cj:
                out[m + j] = out.get(m + j, 0.0) + cm * cj
    return out


def _poly_lowering(amps: dict[int, float], state: State, omega: int) -> State:
    """sum_n a_n Δ^n applied to a state."""
    out: State = {}
    power = dict(state)
    for n in range(1, omega + 1):
        power = _lower(power, omega)
        if not power:
            break
        if amps.get(n):
            out = _axpy(amps[n], power, out)
    return out


def _exp_lowering(amps: dict[int, float], state: State, omega: int) -> State:
    out = dict(state)
    term = dict(state)
    for k in range(1, omega + 1):
        term = {m: c / k for m, c in _poly_lowering(amps, term, omega).items()}
        if not term:
            break
        out = _axpy(1.0, term, out)
    return out


def _apply_observable(name: str, state: State, params: ModelParams) -> State:
    omega, g = params.omega, params.g
    if name == "N":
        return _number(state)
    if name == "N2":
        return _number(_number(state))
    if name == "Delta":
        return _lower(state, omega)
    if name == "Delta_dag":
        return _raise(state, omega)
    if name == "H":
        pair = _raise(_lower(state, omega), omega)
        return _axpy(0.5 * g, _number(state), {m: -g * c for m, c in pair.items()})
    raise ValueError(f"unknown observable {name!r}")


def expectation_bruteforce(
    params: ModelParams, scheme, amps: AmplitudeVector | np.ndarray, observable: str
) -> float:
    """Expectation value of one observable, expanded without matrices."""
    omega = params.omega
    if omega > BRUTEFORCE_MAX_OMEGA:
        raise OracleBudgetError(f"term expansion limited to omega <= {BRUTEFORCE_MAX_OMEGA}")
    x = amps.x if isinstance(amps, AmplitudeVector) else np.asarray(amps, dtype=float)
    parts = split_amplitudes(scheme, x)
    vac: State = {0: 1.0}

    if scheme.scheme is Scheme.PARTICLE_ECCM:
        s = {n + 1: v for n, v in enumerate(parts.s)}
        st = {n + 1: v for n, v in enumerate(parts.st)}
        ket = _exp_raising(s, vac, omega)
        state = _apply_observable(observable, ket, params)
        state = _exp_raising({n: -v for n, v in s.items()}, state, omega)
        state = _exp_lowering(st, state, omega)
        return float(state.get(0, 0.0))

    if scheme.scheme is Scheme.MAX_OVERLAP:
        s1, st1 = frozen_sub1(params)
    else:
        s1, st1 = parts.s1, parts.st1
    hi = {n: v / math.factorial(n) for n, v in zip(range(2, scheme.order + 1), parts.s)}
    hit = {n: v / math.factorial(n) for n, v in zip(range(2, scheme.order + 1), parts.st)}
    # particle-frame ket: e^{sΔ†} e^{-s~Δ} e^{S(Δ†)} |0>
    ket = _exp_raising(hi, vac, omega)
    ket = _exp_lowering({1: -st1}, ket, omega)
    ket = _exp_raising({1: s1}, ket, omega)
    state = _apply_observable(observable, ket, params)
    # bra: <0| e^{S~(Δ)} e^{-S(Δ†)} e^{s~Δ} e^{-sΔ†}
    state = _exp_raising({1: -s1}, state, omega)
    state = _exp_lowering({1: st1}, state, omega)
    state = _exp_raising({n: -v for n, v in hi.items()}, state, omega)
    if scheme.scheme is Scheme.QP_NCCM:
        state = _axpy(1.0, _poly_lowering(hit, state, omega), state)
    else:
        state = _exp_lowering(hit, state, omega)
    return float(state.get(0, 0.0))


def bruteforce_moment(omega: int, m: int) -> float:
    """``<0|Δ^m (Δ†)^m|0>`` by the action rules alone."""
    state: State = {m: 1.0} if m <= omega else {}
    for _ in range(m):
        state = _lower(state, omega)
    return float(state.get(0, 0.0))
