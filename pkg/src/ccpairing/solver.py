"""Stationary points of the constrained CCM functionals.

Newton steps are minimum-norm least-squares solutions of the linearized
system, so gauge orbits and the degenerate solution families of high
truncation orders do not stall the iteration.  Branches are followed in the
extended space ``(amplitudes, λ, N0)`` by pseudo-arclength continuation,
which walks through folds where the energy is multivalued in ``N0``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .functional import (
    AmplitudeVector,
    EvaluationDomainError,
    Observables,
    Scheme,
    SchemeConfig,
    evaluate,
    residuals,
    sub1_closed_form,
)
from .quasispin import ModelParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-11
    max_iter: int = 100
    damping: float = 1.0
    arclength_step: float = 0.05
    max_step: float = 0.4
    min_step: float = 1e-7
    multistart_count: int = 200
    seed: int = 0
    dedup_tol: float = 1e-7
    rank_rtol: float = 1e-10
    box: float = 2.0
    max_points: int = 4000
    workers: int = 1
    step_cap: float = 1.0
    shells: int = 4
    stall_window: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.min_step < self.arclength_step <= self.max_step:
            raise ValueError("need min_step < arclength_step <= max_step")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be >= 1")
        if self.box <= 0:
            raise ValueError("box must be positive")


@dataclass
class SolutionPoint:
    params: ModelParams
    amps: AmplitudeVector
    obs: Observables
    residual_norm: float
    converged: bool
    iterations: int = 0
    branch_id: int | None = None
    message: str = ""

    @property
    def n0(self) -> float:
        return self.params.n0

    @property
    def scheme(self) -> SchemeConfig:
        return self.amps.scheme


@dataclass
class Branch:
    points: list[SolutionPoint]
    parameter: str = "arclength"
    turning_points: list[int] = field(default_factory=list)
    status: str = "complete"

    def n0_values(self) -> np.ndarray:
        return np.array([p.n0 for p in self.points])


def _norm(f: np.ndarray) -> float:
    return float(np.max(np.abs(f))) if f.size else 0.0


def scaled_norm(f: np.ndarray, jac: np.ndarray) -> float:
    """Residual ∞-norm relative to the row-sum norm of the Jacobian.

    The stationarity equations cancel terms whose size grows like the pair
    moments, so their roundoff floor scales with ``|J|``.
    """
    return _norm(f) / max(1.0, float(np.abs(jac).sum(axis=1).max()))


def _lstsq(jac: np.ndarray, rhs: np.ndarray, rtol: float) -> np.ndarray:
    return np.linalg.lstsq(jac, rhs, rcond=rtol)[0]


def newton_solve(
    params: ModelParams,
    scheme: SchemeConfig,
    x0: AmplitudeVector | np.ndarray,
    settings: SolverSettings = SolverSettings(),
) -> SolutionPoint:
    """Damped Newton with backtracking on the residual norm.

    Convergence is judged on :func:`scaled_norm`.  Raises
    :class:`EvaluationDomainError` if the residual at an accepted
    iterate is not finite; failing to converge is reported on the returned
    point instead.
    """
    x = np.array(x0.x if isinstance(x0, AmplitudeVector) else x0, dtype=float)
    amps = AmplitudeVector(x, scheme)
    f, jac = residuals(params, amps, jacobian=True)
    norm2 = float(f @ f)
    it = 0
    history = [norm2]
    message = "max_iter reached"
    while scaled_norm(f, jac) > settings.tol:
        if it >= settings.max_iter:
            break
        # a start drifting into a nonzero minimum of |f| will not converge
        if it >= settings.stall_window and norm2 > 0.81 * history[it - settings.stall_window]:
            message = "stagnated"
            break
        it += 1
        dx = _lstsq(jac, -f, settings.rank_rtol)
        size = np.linalg.norm(dx)
        if size > settings.step_cap:
            dx *= settings.step_cap / size
        t = settings.damping
        accepted = False
        while t >= 1e-10:
            trial = x + t * dx
            try:
                f_new = residuals(params, AmplitudeVector(trial, scheme))
            except EvaluationDomainError:
                t *= 0.5
                continue
            if float(f_new @ f_new) < (1 - 1e-4 * t) * norm2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            message = "line search stalled"
            break
        x = trial
        f, jac = residuals(params, AmplitudeVector(x, scheme), jacobian=True)
        norm2 = float(f @ f)
        history.append(norm2)
    if scaled_norm(f, jac) <= settings.tol:
        x, f, jac = _polish(params, scheme, x, f, jac, settings)
    amps = AmplitudeVector(x, scheme)
    res = scaled_norm(f, jac)
    converged = res <= settings.tol
    if converged:
        message = "converged"
    try:
        obs = evaluate(params, amps)
    except (FloatingPointError, OverflowError):
        raise EvaluationDomainError("observables not finite")
    return SolutionPoint(params, amps, obs, res, converged, it, None, message)


def _polish(params, scheme, x, f, jac, settings: SolverSettings, steps: int = 3):
    """Extra full Newton steps, kept only while the raw residual keeps dropping."""
    for _ in range(steps):
        trial = x + _lstsq(jac, -f, settings.rank_rtol)
        try:
            f_new, jac_new = residuals(params, AmplitudeVector(trial, scheme), jacobian=True)
        except EvaluationDomainError:
            break
        if not _norm(f_new) < _norm(f):
            break
        x, f, jac = trial, f_new, jac_new
    return x, f, jac


def initial_guess(params: ModelParams, scheme: SchemeConfig) -> AmplitudeVector:
    """SUB(1) mean-field amplitudes with all higher orders zero."""
    s, st, lam = sub1_closed_form(params.with_n0(min(params.n0, 2 * params.omega - 1e-6)))
    x = np.zeros(scheme.n_unknowns)
    b = scheme.block
    if scheme.scheme is not Scheme.MAX_OVERLAP:
        x[0], x[b] = s, st
    x[-1] = lam
    return AmplitudeVector(x, scheme)


# -- multistart ---------------------------------------------------------------


def _fingerprint_close(a: Observables, b: Observables, tol: float) -> bool:
    return all(abs(u - v) <= tol * max(1.0, abs(u), abs(v)) for u, v in zip(a.fingerprint(), b.fingerprint()))


def dedup_points(points: list[SolutionPoint], tol: float) -> list[SolutionPoint]:
    unique: list[SolutionPoint] = []
    for p in points:
        if not any(_fingerprint_close(p.obs, q.obs, tol) for q in unique):
            unique.append(p)
    return unique


def multistart_starts(params: ModelParams, scheme: SchemeConfig, settings: SolverSettings) -> np.ndarray:
    """Scrambled Halton points in the amplitude box; λ spans ``[-GΩ, GΩ]``.

    Successive starts cycle through nested sub-boxes of half-widths
    ``box, box/2, box/4, ...`` so that solutions with small amplitudes get
    starts nearby; every start still lies in the full box.
    """
    dim = scheme.n_unknowns
    sampler = qmc.Halton(d=dim, scramble=True, seed=np.random.default_rng(settings.seed))
    u = 2.0 * sampler.random(settings.multistart_count) - 1.0
    shrink = 0.5 ** (np.arange(settings.multistart_count) % max(1, settings.shells))
    lam_span = params.g * params.omega if params.g > 0 else 1.0
    out = u * settings.box * shrink[:, None]
    out[:, -1] = u[:, -1] * lam_span
    return out


def _solve_one(args) -> SolutionPoint | None:
    params, scheme, x0, settings = args
    try:
        return newton_solve(params, scheme, x0, settings)
    except (EvaluationDomainError, np.linalg.LinAlgError, FloatingPointError):
        return None


def run_starts(params, scheme, starts, settings: SolverSettings) -> list[SolutionPoint | None]:
    jobs = [(params, scheme, np.asarray(x0, dtype=float), settings) for x0 in starts]
    if settings.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(_solve_one, jobs, chunksize=max(1, len(jobs) // (4 * settings.workers))))
    with np.errstate(over="ignore", invalid="ignore"):
        return [_solve_one(job) for job in jobs]


def multistart_scan(
    params: ModelParams,
    scheme: SchemeConfig,
    n0: float | None = None,
    settings: SolverSettings = SolverSettings(),
    starts: list | np.ndarray | None = None,
) -> list[SolutionPoint]:
    """Newton from many quasi-random starts; converged points deduplicated by observables.

    The result is ordered by energy (then particle number) and depends only
    on the seed and settings.
    """
    if n0 is not None:
        params = params.with_n0(n0)
    if starts is None:
        starts = multistart_starts(params, scheme, settings)
    else:
        starts = [s.x if isinstance(s, AmplitudeVector) else s for s in starts]
    results = run_starts(params, scheme, starts, settings)
    found = [p for p in results if p is not None and p.converged]
    unique = dedup_points(found, settings.dedup_tol)
    unique.sort(key=lambda p: (round(p.obs.energy, 9), round(p.obs.n_mean, 9)))
    for i, p in enumerate(unique):
        p.branch_id = i
    return unique


# -- pseudo-arclength continuation -------------------------------------------


def _extended(params: ModelParams, scheme: SchemeConfig, y: np.ndarray, jacobian: bool):
    """Residual over ``y = (amplitudes, λ, N0)`` and its Jacobian."""
    p = params.with_n0(y[-1])
    amps = AmplitudeVector(y[:-1], scheme)
    if not jacobian:
        return residuals(p, amps)
    f, jac = residuals(p, amps, jacobian=True)
    col = np.zeros((f.size, 1))
    col[scheme.n_amplitudes, 0] = -1.0  # d(<N> - N0)/dN0
    return f, np.hstack([jac, col])


def _tangent(jac: np.ndarray, previous: np.ndarray | None, direction: float) -> np.ndarray:
    _, _, vt = np.linalg.svd(jac)
    t = vt[-1]
    if previous is not None:
        if t @ previous < 0:
            t = -t
    elif t[-1] * direction < 0 or (t[-1] == 0 and direction < 0):
        t = -t
    return t / np.linalg.norm(t)


def _correct(params, scheme, y_pred, tangent, settings, max_iter=12):
    """Newton on the residual plus the hyperplane orthogonal to the tangent."""
    y = y_pred.copy()
    for it in range(max_iter + 1):
        try:
            f, jac = _extended(params, scheme, y, True)
        except EvaluationDomainError:
            return None, it
        g = np.concatenate([f, [tangent @ (y - y_pred)]])
        if scaled_norm(f, jac) <= settings.tol and abs(g[-1]) <= 1e-12 * max(1.0, np.linalg.norm(y)):
            # polish while the raw residual keeps dropping
            for _ in range(3):
                trial = y + _lstsq(np.vstack([jac, tangent]), -g, settings.rank_rtol)
                try:
                    f_t, jac_t = _extended(params, scheme, trial, True)
                except EvaluationDomainError:
                    break
                g_t = np.concatenate([f_t, [tangent @ (trial - y_pred)]])
                if not _norm(g_t) < _norm(g):
                    break
                y, f, jac, g = trial, f_t, jac_t, g_t
            return y, it
        if it == max_iter:
            return None, it
        big = np.vstack([jac, tangent])
        y = y + _lstsq(big, -g, settings.rank_rtol)
        if not np.all(np.isfinite(y)):
            return None, it
    return None, max_iter


def continuation_trace(
    params: ModelParams,
    scheme: SchemeConfig,
    start: SolutionPoint,
    n0_range: tuple[float, float],
    settings: SolverSettings = SolverSettings(),
    direction: float = 1.0,
) -> Branch:
    """Trace the branch through ``start`` until ``N0`` leaves ``n0_range``.

    Steps halve when the corrector fails and double after quick
    convergence.  Turning points are the indices where ``dN0/ds`` changes
    sign.  Stops at the range end, on step underflow or at the point budget.
    """
    if not start.converged:
        raise ValueError("continuation needs a converged start point")
    if scheme.scheme is Scheme.MAX_OVERLAP:
        raise ValueError("max-overlap freezes N0-dependent amplitudes; trace it point by point")
    lo, hi = min(n0_range), max(n0_range)
    y = np.concatenate([start.amps.x, [start.n0]])
    _, jac = _extended(params, scheme, y, True)
    tan = _tangent(jac, None, direction)
    points = [start]
    turning: list[int] = []
    ds = settings.arclength_step
    status = "budget"
    while len(points) < settings.max_points:
        y_new, iters = _correct(params, scheme, y + ds * tan, tan, settings)
        if y_new is None:
            ds *= 0.5
            if ds < settings.min_step:
                status = "step underflow"
                break
            continue
        if not (lo <= y_new[-1] <= hi):
            end = hi if y_new[-1] > hi else lo
            frac = (end - y[-1]) / (y_new[-1] - y[-1])
            guess = y + frac * (y_new - y)
            p_end = params.with_n0(end)
            last = newton_solve(p_end, scheme, AmplitudeVector(guess[:-1], scheme), settings)
            if last.converged:
                points.append(last)
            status = "range end"
            break
        _, jac = _extended(params, scheme, y_new, True)
        tan_new = _tangent(jac, tan, direction)
        if tan_new[-1] * tan[-1] < 0:
            turning.append(len(points) - 1)
        y, tan = y_new, tan_new
        p = params.with_n0(y[-1])
        amps = AmplitudeVector(y[:-1].copy(), scheme)
        f, jac = residuals(p, amps, jacobian=True)
        res = scaled_norm(f, jac)
        points.append(SolutionPoint(p, amps, evaluate(p, amps), res, True, iters))
        if iters <= 3:
            ds = min(2 * ds, settings.max_step)
    for p in points:
        p.branch_id = 0
    return Branch(points, "arclength", turning, status)


def natural_sweep(
    params: ModelParams,
    scheme: SchemeConfig,
    n0_grid,
    settings: SolverSettings = SolverSettings(),
    start: AmplitudeVector | None = None,
    fallback_multistart: bool = True,
) -> list[SolutionPoint]:
    """Solve at each grid value, warm-starting from the previous solution.

    The first point starts from ``start`` or the SUB(1) mean-field guess; a
    failed warm start falls back to a multistart scan and keeps the candidate
    closest to the previous solution.
    """
    out: list[SolutionPoint] = []
    prev: SolutionPoint | None = None
    prev2: SolutionPoint | None = None
    for n0 in n0_grid:
        p = params.with_n0(float(n0))
        if prev is None:
            guess = start if start is not None else initial_guess(p, scheme)
        elif prev2 is not None and prev.n0 != prev2.n0:
            # secant extrapolation along the grid
            t = (n0 - prev.n0) / (prev.n0 - prev2.n0)
            guess = AmplitudeVector(prev.amps.x + t * (prev.amps.x - prev2.amps.x), scheme)
        else:
            guess = prev.amps
        try:
            pt = newton_solve(p, scheme, guess, settings)
        except EvaluationDomainError:
            pt = None
        if (pt is None or not pt.converged) and prev is not None:
            try:
                pt = newton_solve(p, scheme, prev.amps, settings)
            except EvaluationDomainError:
                pt = None
        if (pt is None or not pt.converged) and fallback_multistart:
            cands = multistart_scan(p, scheme, None, settings)
            if cands:
                ref = prev.obs.energy if prev is not None else 0.0
                pt = min(cands, key=lambda c: abs(c.obs.energy - ref))
        if pt is None:
            pt = _failed_point(p, guess)
        out.append(pt)
        if pt.converged:
            prev2, prev = prev, pt
    return out


def _failed_point(params: ModelParams, guess: AmplitudeVector) -> SolutionPoint:
    nan = math.nan
    return SolutionPoint(params, guess.copy(), Observables(nan, nan, nan, nan, nan, nan), math.inf, False,
                         0, None, "evaluation failed")


# -- nonexistence evidence ----------------------------------------------------


@dataclass
class NoSolutionReport:
    """Operational evidence that a system has no real root in the start box.

    ``solutions`` are the converged multistart points (empty when nothing was
    found); ``residual_floor`` is the smallest residual ∞-norm reached by
    bounded least squares from the best sampled points.  This is evidence, not
    a proof: a root with a tiny basin could still be missed.
    """

    n0: float
    solutions: list[SolutionPoint]
    residual_floor: float
    starts: int
    samples: int

    @property
    def status(self) -> str:
        return "found" if self.solutions else "no-solution"

    def holds(self, floor: float = 1e-3) -> bool:
        return not self.solutions and self.residual_floor >= floor


def start_box(params: ModelParams, scheme: SchemeConfig, settings: SolverSettings) -> tuple[np.ndarray, np.ndarray]:
    lam = params.g * params.omega if params.g > 0 else 1.0
    hi = np.full(scheme.n_unknowns, settings.box)
    hi[-1] = lam
    return -hi, hi


def residual_floor(params: ModelParams, scheme: SchemeConfig, settings: SolverSettings = SolverSettings(),
                   samples: int = 1000, polish: int = 10) -> float:
    """Minimum residual ∞-norm over the start box, by sampling then bounded least squares."""
    from scipy.optimize import least_squares

    lo, hi = start_box(params, scheme, settings)
    pts = qmc.scale(qmc.Halton(d=scheme.n_unknowns, scramble=True,
                               seed=np.random.default_rng(settings.seed)).random(samples), lo, hi)

    def fun(x):
        return residuals(params, AmplitudeVector(x, scheme))

    vals = []
    with np.errstate(over="ignore", invalid="ignore"):
        for x in pts:
            try:
                vals.append(_norm(fun(x)))
            except EvaluationDomainError:
                vals.append(math.inf)
        best = math.inf
        for i in np.argsort(vals)[:polish]:
            try:
                res = least_squares(fun, pts[i], bounds=(lo, hi))
            except (EvaluationDomainError, ValueError):
                continue
            best = min(best, _norm(res.fun))
    return best


def certify_no_solution(params: ModelParams, scheme: SchemeConfig, settings: SolverSettings = SolverSettings(),
                        samples: int = 1000, polish: int = 10) -> NoSolutionReport:
    """Multistart plus a sampled residual floor; see :class:`NoSolutionReport`."""
    found = multistart_scan(params, scheme, None, settings)
    floor = 0.0 if found else residual_floor(params, scheme, settings, samples, polish)
    return NoSolutionReport(params.n0, found, floor, settings.multistart_count, samples)
