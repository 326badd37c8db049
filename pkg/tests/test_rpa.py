from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import expm

from ccpairing.functional import (
    AmplitudeVector,
    Scheme,
    SchemeConfig,
    evaluate,
    frozen_sub1,
    split_amplitudes,
    sub1_closed_form,
)
from ccpairing.quasispin import ModelParams, build_pair_operators
from ccpairing.rpa import (
    KineticForm,
    NoDynamicsError,
    RpaSpectrum,
    branch_stability,
    build_hessian,
    build_kinetic_form,
    classify_modes,
    locate_breakdown,
    nccm_block_frequencies,
    pairing_defect,
    restrict,
    rpa_at,
    solve_rpa,
)
from ccpairing.solver import initial_guess, natural_sweep, newton_solve


def _explicit_states(params, sc, x):
    """Bra and ket built from dense matrix exponentials."""
    ops = build_pair_operators(params)
    up, down = ops.raising, ops.lowering
    e0 = np.zeros(ops.dim)
    e0[0] = 1
    parts = split_amplitudes(sc, x)
    mp = np.linalg.matrix_power
    if sc.scheme is Scheme.PARTICLE_ECCM:
        s = sum(c * mp(up, n) for n, c in enumerate(parts.s, 1))
        st = sum(c * mp(down, n) for n, c in enumerate(parts.st, 1))
        frame = np.eye(ops.dim)
    else:
        s1, st1 = frozen_sub1(params) if sc.scheme is Scheme.MAX_OVERLAP else (parts.s1, parts.st1)
        s = sum(c / math.factorial(n) * mp(up, n) for n, c in enumerate(parts.s, 2))
        st = sum(c / math.factorial(n) * mp(down, n) for n, c in enumerate(parts.st, 2))
        frame = expm(s1 * up) @ expm(-st1 * down)
    ket = frame @ expm(s) @ e0
    bra_q = e0 @ (np.eye(ops.dim) + st) if sc.scheme is Scheme.QP_NCCM else e0 @ expm(st)
    bra = bra_q @ expm(-s) @ np.linalg.inv(frame)
    return bra, ket


@pytest.mark.parametrize("name,order", [("particle-eccm", 2), ("qp-eccm", 3), ("qp-nccm", 3), ("max-overlap", 3)])
def test_kinetic_form_matches_explicit_states(name, order):
    params = ModelParams(6, 1.0, 5.0)
    sc = SchemeConfig(Scheme(name), order)
    x = np.random.default_rng(3).uniform(-0.6, 0.6, sc.n_amplitudes)
    bra, _ = _explicit_states(params, sc, x)
    h = 1e-6
    theta = []
    for j in range(x.size):
        d = np.zeros_like(x)
        d[j] = h
        theta.append(bra @ (_explicit_states(params, sc, x + d)[1] - _explicit_states(params, sc, x - d)[1]) / (2 * h))
    kin = build_kinetic_form(params, sc, x)
    assert np.allclose(kin.theta, theta, atol=1e-7)
    assert np.array_equal(kin.omega_matrix, -kin.omega_matrix.T)


def test_sub1_kinetic_sign():
    params = ModelParams(10, 1.0, 10.0)
    sc = SchemeConfig(Scheme.PARTICLE_ECCM, 1)
    s, st, _ = sub1_closed_form(params)
    kin = build_kinetic_form(params, sc, [s, st])
    assert kin.omega_matrix[0, 1] > 0


def test_sub1_goldstone_pair():
    params = ModelParams(10, 1.0, 10.0)
    sc = SchemeConfig(Scheme.PARTICLE_ECCM, 1)
    pt = newton_solve(params, sc, initial_guess(params, sc))
    spec = rpa_at(params, pt)
    assert len(spec.frequencies) == 2
    assert spec.zero_modes == 2
    assert np.all(np.abs(spec.frequencies) < 1e-8)
    assert not spec.unstable


@pytest.mark.parametrize("name,order", [("particle-eccm", 2), ("qp-eccm", 2), ("qp-nccm", 3)])
def test_hessian_matches_finite_differences(name, order):
    params = ModelParams(5, 1.3, 4.0)
    sc = SchemeConfig(Scheme(name), order)
    rng = np.random.default_rng(11)
    x = rng.uniform(-0.5, 0.5, sc.n_amplitudes) + 0.3
    lam = -0.7

    def lagr(v):
        obs = evaluate(params, AmplitudeVector(np.append(v, lam), sc))
        return obs.energy - lam * obs.n_mean

    h = 1e-4
    k = x.size
    fd = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            di = np.zeros(k)
            dj = np.zeros(k)
            di[i] = h
            dj[j] = h
            fd[i, j] = (lagr(x + di + dj) - lagr(x + di - dj) - lagr(x - di + dj) + lagr(x - di - dj)) / (4 * h * h)
    hess = build_hessian(params, sc, AmplitudeVector(np.append(x, lam), sc))
    assert np.allclose(hess, fd, atol=1e-6 * max(1.0, np.abs(hess).max()))


def test_free_vacuum_has_only_zero_modes():
    params = ModelParams(4, 0.0, 0.0)
    sc = SchemeConfig(Scheme.PARTICLE_ECCM, 2)
    point = AmplitudeVector(np.zeros(5), sc)
    assert not np.any(build_hessian(params, sc, point))
    spec = solve_rpa(build_hessian(params, sc, point), build_kinetic_form(params, sc, point))
    assert set(spec.classes) == {"zero"}
    assert not spec.unstable


def test_zero_kinetic_form_raises():
    kin = KineticForm(np.zeros(2), np.zeros((2, 2)), np.eye(2))
    with pytest.raises(NoDynamicsError):
        solve_rpa(np.eye(2), kin)


def test_classification_of_synthetic_spectrum():
    spec = classify_modes(RpaSpectrum(np.array([0, 3, 0, -3], dtype=complex)), 1e-9, 1e-9)
    assert spec.classes == ["zero", "real", "zero", "real"]
    assert spec.zero_modes == 2
    assert not spec.unstable
    assert pairing_defect(spec) == 0
    spec = classify_modes(RpaSpectrum(np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])), 1e-9, 1e-9)
    assert spec.unstable and spec.classes.count("complex") == 4


def test_harmonic_oscillator_pencil():
    # A = diag(k, m), Ω = [[0, 1], [-1, 0]] gives ω = ±i sqrt(k m); with k m < 0 the pair is real
    kin = KineticForm(np.zeros(2), np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros((2, 0)))
    spec = solve_rpa(np.diag([2.0, -8.0]), kin)
    assert sorted(spec.frequencies.real) == pytest.approx([-4.0, 4.0])
    assert spec.classes == ["real", "real"]


def test_nccm_blocks_match_full_restricted_spectrum():
    params = ModelParams(8, 1.0, 6.0)
    sc = SchemeConfig(Scheme.QP_NCCM, 3)
    pt = newton_solve(params, sc, initial_guess(params, sc))
    assert pt.converged
    b = sc.block
    s_idx, st_idx = list(range(1, b)), list(range(b + 1, 2 * b))
    hess = build_hessian(params, sc, pt)
    kin = build_kinetic_form(params, sc, pt)
    a_r, kin_r = restrict(hess, kin, s_idx + st_idx)
    half = len(s_idx)
    blocks = nccm_block_frequencies(a_r, kin_r, range(half), range(half, 2 * half))
    full = solve_rpa(a_r, kin_r).frequencies
    key = lambda z: (round(z.real, 6), round(z.imag, 6))
    assert np.allclose(sorted(blocks, key=key), sorted(full, key=key), atol=1e-9)


def test_nccm_blocks_reject_bra_bra_coupling():
    kin = KineticForm(np.zeros(2), np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros((2, 0)))
    with pytest.raises(ValueError):
        nccm_block_frequencies(np.eye(2), kin, [0], [1])


def test_spectrum_is_paired():
    params = ModelParams(10, 1.0, 8.0)
    for order in (2, 3):
        sc = SchemeConfig(Scheme.QP_ECCM, order)
        pt = newton_solve(params, sc, initial_guess(params, sc))
        spec = rpa_at(params, pt)
        assert pairing_defect(spec) <= 1e-8 * max(1.0, spec.scale)


def test_complex_quartets_need_odd_truncation():
    params = ModelParams(10, 1.0, 8.0)
    even = SchemeConfig(Scheme.QP_ECCM, 2)
    odd = SchemeConfig(Scheme.QP_ECCM, 3)
    s_even = rpa_at(params, newton_solve(params, even, initial_guess(params, even)))
    s_odd = rpa_at(params, newton_solve(params, odd, initial_guess(params, odd)))
    assert s_even.classes.count("complex") == 0
    assert s_odd.classes.count("complex") >= 4


def test_breakdown_bisection():
    sc = SchemeConfig(Scheme.QP_ECCM, 3)
    pts = natural_sweep(ModelParams(10, 1.0), sc, np.arange(3.0, 7.01, 0.5))
    flags = branch_stability(pts)
    bd = locate_breakdown(pts, tol=1e-4, flags=flags)
    assert bd is not None
    lo, hi = bd.bracket
    assert hi - lo <= 1e-4
    assert pts[bd.index - 1].n0 <= lo < hi <= pts[bd.index].n0
    assert flags[bd.index] is True and flags[bd.index - 1] is False


def test_no_breakdown_on_stable_branch():
    sc = SchemeConfig(Scheme.QP_ECCM, 2)
    pts = natural_sweep(ModelParams(10, 1.0), sc, np.arange(3.0, 7.01, 1.0))
    assert locate_breakdown(pts) is None
