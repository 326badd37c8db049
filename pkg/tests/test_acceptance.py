"""Acceptance criteria 1-14, one test each.

Every test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports what was measured.
"""

from __future__ import annotations

import numpy as np
import pytest

from ccpairing import cli
from ccpairing.functional import (
    AmplitudeVector,
    Scheme,
    SchemeConfig,
    build_generalized_density,
    evaluate,
    residuals,
)
from ccpairing.oracle import exact_ground_energy, exact_spectrum, expectation_bruteforce
from ccpairing.quasispin import ModelParams
from ccpairing.rpa import branch_stability, build_hessian, locate_breakdown, rpa_at
from ccpairing.solver import (
    SolverSettings,
    certify_no_solution,
    continuation_trace,
    initial_guess,
    multistart_scan,
    natural_sweep,
    newton_solve,
)

ALL_SCHEMES = [
    SchemeConfig(Scheme.PARTICLE_ECCM, 1),
    SchemeConfig(Scheme.PARTICLE_ECCM, 2),
    SchemeConfig(Scheme.PARTICLE_ECCM, 3),
    SchemeConfig(Scheme.QP_ECCM, 2),
    SchemeConfig(Scheme.QP_ECCM, 3),
    SchemeConfig(Scheme.QP_NCCM, 2),
    SchemeConfig(Scheme.QP_NCCM, 3),
    SchemeConfig(Scheme.MAX_OVERLAP, 2),
    SchemeConfig(Scheme.MAX_OVERLAP, 3),
]
OBSERVABLE_FIELDS = {"H": "energy", "N": "n_mean", "N2": "n2_mean", "Delta": "delta_expect",
                     "Delta_dag": "delta_dag_expect"}


def _name(sc: SchemeConfig) -> str:
    return f"{sc.scheme.value} SUB({sc.order})"


def _random_amps(rng, sc: SchemeConfig, scale: float = 0.5) -> AmplitudeVector:
    x = rng.uniform(-scale, scale, sc.n_unknowns)
    x[-1] = rng.uniform(-3, 3)
    return AmplitudeVector(x, sc)


def _physical_branch(params, sc, n0_start=0.5, max_points=400):
    start_params = params.with_n0(n0_start)
    start = newton_solve(start_params, sc, initial_guess(start_params, sc))
    assert start.converged, f"{_name(sc)} does not converge at N0={n0_start}"
    settings = SolverSettings(max_points=max_points, max_step=0.2)
    return continuation_trace(params, sc, start, (0.3, 2 * params.omega - 0.3), settings)


def test_criterion_01_exact_oracle(record):
    worst = 0.0
    for omega in range(1, 21):
        params = ModelParams(omega, 1.0)
        spec = exact_spectrum(params)
        for n in range(0, 2 * omega + 1, 2):
            ref = -(omega - n / 2) * (n / 2)
            for e in (spec.ground_energy(n), exact_ground_energy(params, n)):
                worst = max(worst, abs(e - ref) / max(1.0, abs(ref)))
    ok = worst <= 1e-12
    record(1, ok, f"max relative deviation {worst:.2e} over omega=1..20 (tol 1e-12)")
    assert ok


def test_criterion_02_sub1_closed_forms(record):
    params = ModelParams(10, 1.0, 10.0)
    sc = SchemeConfig(Scheme.PARTICLE_ECCM, 1)
    pt = newton_solve(params, sc, np.array([0.9, 0.45, 0.1]))
    s, st = pt.amps.x[0], pt.amps.x[1]
    errs = {"E": abs(pt.obs.energy + 22.5), "<N>": abs(pt.obs.n_mean - 10), "lambda": abs(pt.amps.lam),
            "s": abs(s - 1.0), "s~": abs(st - 0.5)}
    ok = pt.converged and max(errs.values()) <= 1e-9
    record(2, ok, "gauge delta-symmetric, errors " + ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))
    assert ok


def test_criterion_03_energy_number_identity(record):
    params = ModelParams(10, 1.0)
    grid = np.arange(1.0, 20.0)
    settings = SolverSettings(multistart_count=20)
    worst, count, empty = 0.0, 0, []
    for sc in ALL_SCHEMES:
        pts = [p for p in natural_sweep(params, sc, grid, settings) if p.converged]
        if not pts and sc.scheme is not Scheme.MAX_OVERLAP:
            empty.append(_name(sc))
        for p in pts:
            o = p.obs
            worst = max(worst, abs(o.energy - params.g * (0.25 * o.n2_mean - 0.5 * params.omega * o.n_mean)))
            count += 1
    ok = worst <= 1e-9 and not empty
    record(3, ok, f"{count} converged points over {len(ALL_SCHEMES)} schemes, max deviation {worst:.2e}"
           + (f"; no converged points for {empty}" if empty else ""))
    assert ok


def test_criterion_04_projector_identity(record):
    rng = np.random.default_rng(4)
    worst = max(build_generalized_density(*rng.uniform(-1, 1, 2)).projector_defect() for _ in range(100))
    ok = worst <= 1e-12
    record(4, ok, f"max |R^2-R| = {worst:.2e} at 100 random (s, s~)")
    assert ok


@pytest.mark.slow
def test_criterion_05_exact_point_recovery(record):
    params = ModelParams(4, 1.0)
    settings = SolverSettings(multistart_count=500, seed=1)
    missing, notes = [], []
    for n in range(0, 9, 2):
        pts = multistart_scan(params, SchemeConfig(Scheme.PARTICLE_ECCM, 4), float(n), settings)
        e = exact_ground_energy(params, n)
        if not any(abs(p.obs.energy - e) <= 1e-7 and abs(p.obs.dn2) <= 1e-8 for p in pts):
            missing.append(f"SUB(4) N={n}")
    pts2 = multistart_scan(params, SchemeConfig(Scheme.PARTICLE_ECCM, 2), 4.0, settings)
    closest = min(pts2, key=lambda p: abs(p.obs.energy + 4.0))
    if abs(closest.obs.energy + 4.0) > 1e-7:
        missing.append("SUB(2) N0=4 E=-4")
    notes.append(f"SUB(2) N0=4 energies {[round(p.obs.energy, 6) for p in pts2]}")
    ok = not missing
    record(5, ok, ("all exact points found" if ok else f"missing {missing}") + "; " + "; ".join(notes))
    assert ok


def test_criterion_06_oracle_equivalence(record):
    rng = np.random.default_rng(6)
    worst, count = 0.0, 0
    for sc in ALL_SCHEMES:
        for _ in range(50):
            omega = int(rng.integers(max(sc.order, 2), 7))
            params = ModelParams(omega, float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2 * omega - 0.5)))
            amps = _random_amps(rng, sc)
            obs = evaluate(params, amps)
            for name, field_name in OBSERVABLE_FIELDS.items():
                ref = expectation_bruteforce(params, sc, amps, name)
                worst = max(worst, abs(getattr(obs, field_name) - ref) / max(1.0, abs(ref)))
            count += 1
    ok = worst <= 1e-11
    record(6, ok, f"{count} amplitude sets, 5 observables each, max relative deviation {worst:.2e}")
    assert ok


def test_criterion_07_scaling_gauge_invariance(record):
    rng = np.random.default_rng(7)
    params = ModelParams(6, 1.0, 5.0)
    worst = 0.0
    for i in range(20):
        sc = SchemeConfig(Scheme.PARTICLE_ECCM, 1 + i % 4)
        amps = _random_amps(rng, sc)
        alpha = float(rng.uniform(0.5, 2.0))
        w = np.arange(1, sc.order + 1)
        y = amps.x.copy()
        y[: sc.order] *= alpha ** w
        y[sc.order : 2 * sc.order] *= alpha ** (-w)
        a, b = evaluate(params, amps), evaluate(params, AmplitudeVector(y, sc))
        pairs = [(a.energy, b.energy), (a.n_mean, b.n_mean), (a.n2_mean, b.n2_mean),
                 (a.delta_expect * a.delta_dag_expect, b.delta_expect * b.delta_dag_expect),
                 # the pair expectations themselves are covariant, not invariant
                 (alpha * a.delta_expect, b.delta_expect), (a.delta_dag_expect / alpha, b.delta_dag_expect)]
        for u, v in pairs:
            worst = max(worst, abs(u - v) / max(1.0, abs(u)))
    ok = worst <= 1e-11
    record(7, ok, f"max relative change of E, <N>, <N^2>, <D><D+> along the scaling orbit {worst:.2e} "
                  "(20 points; <D>, <D+> scale as alpha^+-1)")
    assert ok


def _fd_jacobian(fun, x, h=1e-6):
    cols = []
    for j in range(x.size):
        d = np.zeros_like(x)
        d[j] = h
        cols.append((fun(x + d) - fun(x - d)) / (2 * h))
    return np.array(cols).T


def test_criterion_08_derivative_exactness(record):
    rng = np.random.default_rng(8)
    params = ModelParams(6, 1.0, 5.0)
    worst = 0.0
    for sc in ALL_SCHEMES:
        na = sc.n_amplitudes
        for _ in range(20):
            amps = _random_amps(rng, sc)
            _, jac = residuals(params, amps, jacobian=True)
            jac_fd = _fd_jacobian(lambda x: residuals(params, AmplitudeVector(x, sc)), amps.x)
            hess = build_hessian(params, sc, amps)
            lam = amps.lam

            def grad(a, lam=lam):
                return residuals(params, AmplitudeVector(np.r_[a, lam], sc))[:na]

            hess_fd = _fd_jacobian(grad, amps.amplitudes)
            for exact, approx in ((jac, jac_fd), (hess, hess_fd)):
                worst = max(worst, np.abs(exact - approx).max() / max(1.0, np.abs(exact).max()))
    ok = worst <= 1e-6
    record(8, ok, f"max relative Jacobian/Hessian vs finite differences {worst:.2e} ({len(ALL_SCHEMES)} schemes x 20)")
    assert ok


def test_criterion_09_goldstone_modes(record):
    params = ModelParams(10, 1.0)
    grid = np.arange(1.0, 20.0)
    settings = SolverSettings(multistart_count=50)
    bad, checked = [], 0
    schemes = [SchemeConfig(Scheme.PARTICLE_ECCM, m) for m in (1, 2, 3)] + [SchemeConfig(Scheme.QP_NCCM, 2)]
    for sc in schemes:
        pts = [p for p in natural_sweep(params, sc, grid, settings) if p.converged]
        if not pts:
            bad.append(f"{_name(sc)}: no converged points")
        for p in pts:
            if abs(p.obs.delta_expect * p.obs.delta_dag_expect) <= 1e-6:
                continue  # number symmetry unbroken
            spec = rpa_at(params, p)
            radius = max(np.abs(spec.frequencies).max(), spec.scale)
            zeros = int(np.sum(np.abs(spec.frequencies) < 1e-6 * radius))
            checked += 1
            if zeros != 2:
                bad.append(f"{_name(sc)} N0={p.n0:g}: {zeros} zero modes")
    ok = not bad and checked > 0
    record(9, ok, f"{checked} symmetry-broken points checked" + (f"; failures {bad}" if bad else ", 2 zero modes each"))
    assert ok


def test_criterion_10_rpa_vacuum_limit(record):
    params = ModelParams(10, 1.0, 0.0)
    sc = SchemeConfig(Scheme.PARTICLE_ECCM, 2)
    pt = newton_solve(params, sc, np.array([0.0, 0.0, 0.0, 0.0, -1.0]))
    spec = rpa_at(params, pt)
    lam = pt.amps.lam
    exact = exact_spectrum(params).energies_by_pairnumber
    gaps = sorted(abs(exact[m] - exact[0] - 2 * m * lam) for m in (1, 2))
    got = sorted(abs(w.real) for w, c in zip(spec.frequencies, spec.classes) if c != "zero" and w.real > 0)
    err = max(abs(a - b) for a, b in zip(got, gaps)) if len(got) == len(gaps) else np.inf
    ok = pt.converged and err <= 1e-7
    record(10, ok, f"lambda={lam:g}: frequencies {np.round(got, 9).tolist()} vs gaps {gaps}, max error {err:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_11_breakdown(record):
    params = ModelParams(10, 1.0)
    eccm = _physical_branch(params, SchemeConfig(Scheme.QP_ECCM, 2))
    n0 = eccm.n0_values()
    dn2 = np.array([p.obs.dn2 for p in eccm.points])
    flips = [float(n0[i]) for i in range(1, len(n0)) if dn2[i - 1] > 0 >= dn2[i] and n0[i] < params.omega]
    flags = branch_stability(eccm.points)
    breakdown = locate_breakdown(eccm.points, flags=flags)

    nccm = _physical_branch(params, SchemeConfig(Scheme.QP_NCCM, 2))
    nflags = branch_stability(nccm.points)
    stable_to = nccm.points[0].n0
    for p, f in zip(nccm.points, nflags):
        if f is not False:
            break
        stable_to = p.n0

    parts = [f"dn2 sign change at N0~{flips[0]:.4f}" if flips else "no dn2 sign change before N0=omega"]
    if breakdown is not None:
        parts.append(f"complex pair from N0={breakdown.n0:.6f}")
    else:
        parts.append(f"no complex pair along the qp-eccm SUB(2) branch (N0 {n0.min():.3f}..{n0.max():.3f}, "
                     f"{len(n0)} points, {sum(f is True for f in flags)} unstable)")
    parts.append(f"qp-nccm SUB(2) real up to N0={stable_to:.3f}")
    ok = bool(flips) and breakdown is not None and stable_to > breakdown.n0
    record(11, ok, "; ".join(parts))
    assert ok


def test_criterion_12_fold_traversal(record):
    params = ModelParams(10, 1.0)
    branch = _physical_branch(params, SchemeConfig(Scheme.QP_NCCM, 4))
    worst = max(float(np.abs(residuals(p.params, p.amps)).max()) for p in branch.points)
    folds = [round(branch.points[i].n0, 4) for i in branch.turning_points]
    # cross-check: between two folds a fixed N0 meets the branch several times
    sheets = 0
    if len(folds) >= 2:
        target = 0.5 * (folds[0] + folds[1])
        energies = []
        n0 = branch.n0_values()
        for i in range(1, len(n0)):
            if (n0[i - 1] - target) * (n0[i] - target) <= 0:
                a, b = branch.points[i - 1], branch.points[i]
                t = (target - a.n0) / (b.n0 - a.n0)
                p = newton_solve(params.with_n0(target), a.scheme, a.amps.x + t * (b.amps.x - a.amps.x))
                if p.converged and all(abs(p.obs.energy - e) > 1e-6 for e in energies):
                    energies.append(p.obs.energy)
        sheets = len(energies)
    ok = len(folds) >= 1 and worst <= 1e-8 and branch.status != "step underflow" and (len(folds) < 2 or sheets >= 3)
    record(12, ok, f"{len(branch.points)} points, folds at N0={folds}, {sheets} distinct solutions between the "
                   f"folds, max raw residual {worst:.1e}, status '{branch.status}'")
    assert ok


@pytest.mark.slow
def test_criterion_13_max_overlap_nonexistence(record):
    params = ModelParams(10, 1.0)
    sc = SchemeConfig(Scheme.MAX_OVERLAP, 2)
    settings = SolverSettings(multistart_count=200, seed=0)
    summary, failures = [], []
    for n0 in range(2, 19, 2):
        rep = certify_no_solution(params.with_n0(float(n0)), sc, settings)
        if rep.holds(1e-3):
            summary.append(f"{n0}:floor {rep.residual_floor:.1e}")
        else:
            energies = [round(p.obs.energy, 4) for p in rep.solutions]
            failures.append(f"N0={n0}: {len(rep.solutions)} converged (E={energies}), floor {rep.residual_floor:.1e}")
    ok = not failures
    record(13, ok, "no solutions at " + ", ".join(summary) + (f"; FOUND {failures}" if failures else ""))
    assert ok


def test_criterion_14_determinism(record, tmp_path):
    runs = {
        "branches": ["branches", "--omega", "4", "--scheme", "particle-eccm", "--order", "2", "--n0", "4",
                     "--multistart", "40", "--seed", "3", "--format", "json"],
        "sweep": ["sweep", "--omega", "10", "--scheme", "qp-nccm", "--order", "2", "--n0-min", "1",
                  "--n0-max", "19", "--n0-steps", "10"],
    }
    same = {}
    for name, argv in runs.items():
        blobs = []
        for k in range(2):
            out = tmp_path / f"{name}{k}.out"
            assert cli.main(argv + ["--output", str(out)]) == 0
            blobs.append(out.read_bytes())
        same[name] = blobs[0] == blobs[1]
    ok = all(same.values())
    record(14, ok, ", ".join(f"{k} byte-identical={v}" for k, v in same.items()))
    assert ok
