"""Weighted l1 inner solvers and the two outer algorithms for the sorted penalty.

``algorithm1_sorted_irl1`` alternates between assigning the weight set by
magnitude rank and solving a weighted l1 problem.  ``algorithm2_sorted_ist``
is proximal gradient with the sorted-thresholding prox.
"""
from __future__ import annotations

import enum
import logging
import time
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .model import INF, Problem, SolveTrace, Termination, WeightSequence, validate_weights
from .penalty import (
    Schedule,
    ScheduleKind,
    eval_sorted_l1,
    optimal_permutation,
    schedule_weights,
    support_size,
)
from .prox import sorted_threshold

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    Constrained = "constrained"
    Unconstrained = "unconstrained"


class DescentError(RuntimeError):
    """Sorted thresholding increased the energy; the step size is too large."""


@dataclass(frozen=True)
class SolverOptions:
    max_outer: int = 10
    max_inner: int = 2000
    inner_tol: float = 1e-6
    step_safety: float = 0.99
    fixed_point_tol: float = 1e-6
    admm_rho: float = 1.0
    mode: Mode = Mode.Constrained
    admm_relax: float = 1.6
    check_every: int = 10
    inner_solver: str = "admm"
    lp_fallback: bool = True

    def __post_init__(self):
        if self.inner_tol <= 0 or self.fixed_point_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_safety < 1:
            raise ValueError("step_safety must lie in (0, 1)")
        if self.admm_rho <= 0:
            raise ValueError("admm_rho must be positive")
        if not 0 < self.admm_relax < 2:
            raise ValueError("admm_relax must lie in (0, 2)")
        if self.max_outer < 1 or self.max_inner < 1 or self.check_every < 1:
            raise ValueError("iteration limits must be positive")
        if self.inner_solver not in ("admm", "lp"):
            raise ValueError("inner_solver must be 'admm' or 'lp'")


@dataclass(frozen=True)
class Energy:
    value: float
    penalty_part: float
    loss_part: float
    feasibility: float = 0.0


@dataclass(frozen=True)
class InnerInfo:
    """Outcome of one weighted l1 solve."""

    iterations: int
    converged: bool
    how: str
    feasibility: float
    warm: Optional[tuple] = None


# -- helpers ----------------------------------------------------------------


def soft_threshold(x: np.ndarray, t) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _weighted_norm(u: np.ndarray, weights: np.ndarray) -> float:
    inf = np.isinf(weights)
    if np.any(u[inf] != 0):
        return INF
    return float(np.dot(weights[~inf], np.abs(u[~inf])))


def spectral_norm_sq(a, tol: float = 1e-6, max_iter: int = 500) -> float:
    """Estimate sigma_max(A)^2 by power iteration on A^T A.

    The start vector comes from ``default_rng(0)``, so the estimate is
    reproducible.  Converges from below; callers add their own margin.
    """
    a = np.asarray(a, dtype=float)
    if not np.any(a):
        raise ValueError("spectral norm estimate needs a nonzero matrix")
    v = np.random.default_rng(0).standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    sig2 = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            # start vector in the null space; restart from a basis direction
            v = np.zeros(a.shape[1])
            v[int(np.argmax(np.linalg.norm(a, axis=0)))] = 1.0
            continue
        v = w / new
        done = abs(new - sig2) <= tol * new
        sig2 = new
        if done:
            break
    return sig2


def lipschitz_estimate(a, alpha: float = 1.0, tol: float = 1e-6, max_iter: int = 500) -> float:
    """Upper bound on the Lipschitz constant of grad alpha ||Au - b||^2.

    Returns 2 alpha sigma^2 inflated by 1%, with sigma^2 from
    :func:`spectral_norm_sq`.
    """
    return 2.0 * alpha * spectral_norm_sq(a, tol, max_iter) * 1.01


def default_alpha(a) -> float:
    """Loss weight 10 / sigma^2 for unconstrained solves."""
    return 10.0 / spectral_norm_sq(a)


def energy(u, problem: Problem, w: Optional[WeightSequence] = None, mode: Mode = Mode.Constrained,
           assigned=None) -> Energy:
    """R_lambda(u) + loss, or F1 with a fixed weight vector ``assigned``.

    Constrained mode has no loss term and reports ||Au - b||_inf as
    feasibility; unconstrained mode adds alpha ||Au - b||^2.
    """
    u = np.asarray(u, dtype=float).ravel()
    if assigned is not None:
        pen = _weighted_norm(u, np.asarray(assigned, dtype=float))
    elif w is not None:
        pen = eval_sorted_l1(u, w)
    else:
        pen = 0.0
    r = problem.a @ u - problem.b
    feas = float(np.max(np.abs(r), initial=0.0))
    loss = problem.alpha * float(np.dot(r, r)) if mode is Mode.Unconstrained else 0.0
    return Energy(pen + loss, pen, loss, feas)


# -- weighted basis pursuit -------------------------------------------------


class AffineProjector:
    """Projection onto {u : Au = b}, factored once per matrix."""

    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        self.a = a
        m, n = a.shape
        try:
            cho = scipy.linalg.cho_factor(a @ a.T)
            self.pinv = scipy.linalg.cho_solve(cho, a).T
        except np.linalg.LinAlgError:
            self.pinv = np.linalg.pinv(a)
        self.proj = np.eye(n) - self.pinv @ a

    def min_norm(self, b: np.ndarray) -> np.ndarray:
        return self.pinv @ b


def _certify(a: np.ndarray, b: np.ndarray, w: np.ndarray, z: np.ndarray, nu: np.ndarray,
             dual_tol: float) -> Optional[np.ndarray]:
    """Snap ``z`` to its support and return it if a KKT certificate exists.

    The point is accepted only if it is feasible, keeps the signs of ``z``
    and a dual vector with A_S^T nu = w_S sign(z_S), |A_j^T nu| <= w_j
    off the support can be found near ``nu``.
    """
    S = np.flatnonzero(z)
    m = a.shape[0]
    if S.size == 0 or S.size > m:
        return None
    aS = a[:, S]
    uS, *_ = np.linalg.lstsq(aS, b, rcond=None)
    if np.max(np.abs(aS @ uS - b)) > 1e-9 * (1.0 + np.max(np.abs(b))):
        return None
    sig = np.sign(z[S])
    if np.any(np.sign(uS) != sig):
        return None
    gram = aS.T @ aS
    try:
        corr = np.linalg.solve(gram, aS.T @ nu - w[S] * sig)
    except np.linalg.LinAlgError:
        return None
    nu = nu - aS @ corr
    g = a.T @ nu
    off = np.ones(a.shape[1], dtype=bool)
    off[S] = False
    if np.all(np.abs(g[off]) <= w[off] + dual_tol):
        u = np.zeros_like(z)
        u[S] = uS
        return u
    return None


def _bp_linprog(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> Optional[np.ndarray]:
    n = a.shape[1]
    res = linprog(np.concatenate([weights, weights]), A_eq=np.hstack([a, -a]), b_eq=b,
                  bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    return res.x[:n] - res.x[n:]


def weighted_bp(a, b, weights, opts: Optional[SolverOptions] = None, *, warm=None,
                projector: Optional[AffineProjector] = None):
    """min sum_i w_i |u_i| subject to Au = b.

    ADMM on the splitting u = z, with u projected onto the affine set and
    z soft-thresholded.  b is scaled so the minimum-norm solution has unit
    RMS and the weights so their maximum is 1, which keeps ``admm_rho = 1``
    well matched across problem scales.  Every ``check_every`` iterations
    with a settled support, the iterate is snapped to that support and
    accepted if a KKT certificate exists.  If neither the certificate nor
    the tolerance test succeeds within ``max_inner`` iterations, the LP is
    handed to HiGHS (``lp_fallback``).

    Returns ``(u, InnerInfo)``.
    """
    opts = opts or SolverOptions()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    m, n = a.shape
    if w.size != n:
        raise ValueError(f"weights have length {w.size}, expected {n}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")

    if opts.inner_solver == "lp":
        u = _bp_linprog(a, b, w)
        if u is None:
            return np.zeros(n), InnerInfo(0, False, "lp-failed", float(np.max(np.abs(b))))
        return u, InnerInfo(0, True, "lp", float(np.max(np.abs(a @ u - b))))

    proj = projector if projector is not None else AffineProjector(a)
    q0 = proj.min_norm(b)
    scale = float(np.linalg.norm(q0)) / np.sqrt(n)
    if scale == 0.0:
        return np.zeros(n), InnerInfo(0, True, "zero", float(np.max(np.abs(b), initial=0.0)))
    wmax = float(w.max())
    if wmax == 0.0:
        # every feasible point is optimal
        return q0, InnerInfo(0, True, "unweighted", float(np.max(np.abs(a @ q0 - b))))

    rho = opts.admm_rho
    relax = opts.admm_relax
    ww = w / wmax
    thr = ww / rho
    bb = b / scale
    q = q0 / scale
    P = proj.proj
    tol = opts.inner_tol
    bnorm = float(np.max(np.abs(bb)))
    dual_tol = 1e-8

    if warm is not None:
        z = np.asarray(warm[0], dtype=float) / scale
        y = np.asarray(warm[1], dtype=float) / (rho * wmax)
        y = np.clip(y, -thr, thr)
    else:
        z = np.zeros(n)
        y = np.zeros(n)

    def finish(u_scaled, k, converged, how):
        u_out = u_scaled * scale
        feas = float(np.max(np.abs(a @ u_out - b)))
        return u_out, InnerInfo(k, converged, how, feas, (u_out, y * rho * wmax))

    if warm is not None and np.any(z):
        cert = _certify(a, bb, ww, z, proj.pinv.T @ (rho * y), dual_tol)
        if cert is not None:
            return finish(cert, 0, True, "certified")

    last_support = z != 0
    z_prev = z
    for k in range(1, opts.max_inner + 1):
        u = P @ (z - y) + q
        uh = relax * u + (1.0 - relax) * z
        z_prev = z
        z = soft_threshold(uh + y, thr)
        y = y + uh - z
        if k % opts.check_every:
            continue
        support = z != 0
        if np.array_equal(support, last_support):
            cert = _certify(a, bb, ww, z, proj.pinv.T @ (rho * y), dual_tol)
            if cert is not None:
                return finish(cert, k, True, "certified")
        last_support = support
        if (np.max(np.abs(z - z_prev)) <= tol
                and np.max(np.abs(a @ z - bb)) <= tol * (1.0 + bnorm)):
            return finish(z, k, True, "tolerance")

    if opts.lp_fallback:
        u = _bp_linprog(a, b, w)
        if u is not None:
            log.debug("ADMM hit max_inner=%d; used LP fallback", opts.max_inner)
            return u, InnerInfo(opts.max_inner, True, "lp-fallback",
                                float(np.max(np.abs(a @ u - b))), (u, y * rho * wmax))
    warnings.warn(f"weighted_bp did not converge in {opts.max_inner} iterations", RuntimeWarning)
    return finish(z, opts.max_inner, False, "max-iterations")


# -- weighted lasso ---------------------------------------------------------


def weighted_lasso(a, b, weights, alpha: float, opts: Optional[SolverOptions] = None, *,
                   warm=None, lipschitz: Optional[float] = None):
    """min sum_i w_i |u_i| + alpha ||Au - b||^2 by proximal gradient.

    Step size is ``step_safety / L``; stops when the fixed-point residual
    ||u - prox(u - step * grad)||_inf drops to ``inner_tol``.  Returns
    ``(u, InnerInfo)``.
    """
    opts = opts or SolverOptions()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    n = a.shape[1]
    if w.size != n:
        raise ValueError(f"weights have length {w.size}, expected {n}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    L = lipschitz if lipschitz is not None else lipschitz_estimate(a, alpha)
    step = opts.step_safety / L
    u = np.zeros(n) if warm is None else np.asarray(warm[0], dtype=float).copy()
    thr = step * w
    for k in range(1, opts.max_inner + 1):
        grad = 2.0 * alpha * (a.T @ (a @ u - b))
        nxt = soft_threshold(u - step * grad, thr)
        res = float(np.max(np.abs(nxt - u), initial=0.0))
        u = nxt
        if res <= opts.inner_tol:
            return u, InnerInfo(k, True, "fixed-point", float(np.max(np.abs(a @ u - b))), (u, None))
    warnings.warn(f"weighted_lasso did not converge in {opts.max_inner} iterations", RuntimeWarning)
    return u, InnerInfo(opts.max_inner, False, "max-iterations",
                        float(np.max(np.abs(a @ u - b))), (u, None))


# -- algorithm 1: sorted reweighted l1 --------------------------------------


def resolve_schedule(sched: Schedule, u0, m: int) -> Schedule:
    """Fill in K = floor(||u0||_0 / 3) and the ISD cap floor(m / 2) when unset."""
    changes = {}
    if sched.k is None:
        k = support_size(u0) // 3
        if sched.kind is ScheduleKind.ISD:
            k = min(k, m // 2)
        changes["k"] = k
    if sched.kind is ScheduleKind.ISD and sched.k_cap is None:
        changes["k_cap"] = m // 2
    return replace(sched, **changes) if changes else sched


class _InnerSolver:
    """Weighted l1 solves for one problem, sharing factorizations and warm starts."""

    def __init__(self, problem: Problem, opts: SolverOptions):
        self.problem = problem
        self.opts = opts
        self.constrained = opts.mode is Mode.Constrained
        if self.constrained:
            self.projector = AffineProjector(problem.a) if opts.inner_solver == "admm" else None
        else:
            self.lipschitz = lipschitz_estimate(problem.a, problem.alpha)
        self.warm = None

    def __call__(self, weights: np.ndarray):
        p = self.problem
        if self.constrained:
            u, info = weighted_bp(p.a, p.b, weights, self.opts, warm=self.warm, projector=self.projector)
        else:
            u, info = weighted_lasso(p.a, p.b, weights, p.alpha, self.opts, warm=self.warm,
                                     lipschitz=self.lipschitz)
        self.warm = info.warm
        return u, info


def algorithm1_sorted_irl1(problem: Problem, sched: Schedule, opts: Optional[SolverOptions] = None,
                           u0=None):
    """Iteratively reweighted l1 with weights assigned by magnitude rank.

    Starts from the plain l1 solution (or ``u0``).  Each outer step assigns
    the schedule's weights to the current iterate's magnitude ranks and
    solves the weighted problem.  Stops when the assigned weight vector was
    already used, when the energy stops changing, or after ``max_outer``
    steps.  ``ValueIRL1`` schedules compute per-index weights from values
    instead and skip the repeat check.

    Returns ``(u, SolveTrace)``.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    n = problem.n
    inner = _InnerSolver(problem, opts)
    solved = {}
    ones = np.ones(n)
    converged = True
    if u0 is None:
        u0, info = inner(ones)
        converged = info.converged
        solved[ones.tobytes()] = (u0, info)
    u = np.asarray(u0, dtype=float).copy()
    sched = resolve_schedule(sched, u, problem.m)
    tol = opts.inner_tol

    energies, history, feas, times, inner_its = [], [], [], [], []
    seen = set()
    termination = Termination.MaxIterations
    for l in range(1, opts.max_outer + 1):
        lam = schedule_weights(sched, n, u, l)
        if sched.kind.sorted:
            weights = np.empty(n)
            weights[optimal_permutation(u).order] = lam
            key = weights.tobytes()
            if key in seen:
                termination = Termination.PermutationExhausted
                break
            seen.add(key)
        else:
            weights = lam
            key = weights.tobytes()
        if key in solved:
            u_new, info = solved[key]
        else:
            u_new, info = inner(weights)
            solved[key] = (u_new, info)
        converged &= info.converged
        e = energy(u_new, problem, mode=opts.mode, assigned=weights)
        energies.append(e.value)
        history.append(weights)
        feas.append(e.feasibility)
        inner_its.append(info.iterations)
        times.append(time.perf_counter() - t0)
        u = u_new
        if len(energies) >= 2 and abs(energies[-2] - energies[-1]) <= tol * (1.0 + abs(energies[-2])):
            termination = Termination.EnergyStationary
            break

    trace = SolveTrace(
        energies=tuple(energies),
        weight_history=tuple(history),
        termination=termination,
        iterations=len(energies),
        wall_time=time.perf_counter() - t0,
        feasibility=tuple(feas),
        times=tuple(times),
        converged=converged,
        energy_tolerance=10.0 * tol,
        inner_iterations=tuple(inner_its),
    )
    return u, trace


# -- algorithm 2: iterative sorted thresholding -----------------------------


def ist_weights(kind: ScheduleKind, n: int, k: Optional[int] = None, level: int = 10) -> WeightSequence:
    """Fixed weight shape for sorted thresholding, K = floor(n / 5) by default.

    ``level`` is the schedule stage whose omega or r gets frozen.
    """
    k = n // 5 if k is None else k
    return validate_weights(schedule_weights(Schedule(kind, k=k, k_cap=k), n, None, level))


def keep_k_weights(n: int, k: int) -> WeightSequence:
    """(0, ..., 0, inf, ..., inf): the prox keeps the k largest entries."""
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    return validate_weights([0.0] * k + [INF] * (n - k))


def algorithm2_sorted_ist(problem: Problem, w: WeightSequence, opts: Optional[SolverOptions] = None,
                          u0=None, callback: Optional[Callable[[int, np.ndarray], None]] = None):
    """Iterative sorted thresholding for R_lambda(u) + alpha ||Au - b||^2.

    u <- prox_{step R}(u - step * grad L(u)) with step = step_safety / L_L.
    Stops once the fixed-point residual ||u - next||_inf is at most
    ``fixed_point_tol`` and returns that certified point.  Raises
    :class:`DescentError` if an update raises the energy by more than
    1e-10 (1 + |E|).  ``callback(l, u)`` sees every accepted iterate.

    Returns ``(u, SolveTrace)``.
    """
    opts = opts or SolverOptions(mode=Mode.Unconstrained)
    a, b, alpha = problem.a, problem.b, problem.alpha
    n = problem.n
    if len(w) != n:
        raise ValueError(f"weights have length {len(w)}, expected {n}")
    t0 = time.perf_counter()
    step = opts.step_safety / lipschitz_estimate(a, alpha)
    u = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float).copy()

    lam = np.ascontiguousarray(w.finite)
    scaled = step * lam
    r = a @ u - b
    e_cur = eval_sorted_l1(u, w) + alpha * float(np.dot(r, r))
    energies, feas, times = [], [], []
    termination = Termination.MaxIterations
    clock = time.perf_counter
    for l in range(1, opts.max_inner + 1):
        grad = 2.0 * alpha * (a.T @ r)
        nxt, pen = sorted_threshold(u - step * grad, lam, scaled)
        step_change = nxt - u
        if np.abs(step_change, out=step_change).max(initial=0.0) <= opts.fixed_point_tol:
            termination = Termination.FixedPoint
            break
        r_nxt = a @ nxt - b
        e_nxt = pen + alpha * float(np.dot(r_nxt, r_nxt))
        if e_nxt > e_cur + 1e-10 * (1.0 + abs(e_cur)):
            raise DescentError(
                f"energy rose from {e_cur!r} to {e_nxt!r} at step {l} (step size {step!r})")
        u, r, e_cur = nxt, r_nxt, e_nxt
        energies.append(e_cur)
        feas.append(np.abs(r).max() if r.size else 0.0)
        times.append(clock())
        if callback is not None:
            callback(l, u)

    trace = SolveTrace(
        energies=tuple(energies),
        weight_history=(),
        termination=termination,
        iterations=len(energies),
        wall_time=time.perf_counter() - t0,
        feasibility=tuple(float(f) for f in feas),
        times=tuple(t - t0 for t in times),
        converged=termination is Termination.FixedPoint,
        energy_tolerance=1e-10,
    )
    return u, trace
