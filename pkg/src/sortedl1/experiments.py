"""Random Gaussian instances, recovery metrics and the benchmark protocols.

Randomness
----------
Every trial owns its seed, derived from the run's base seed and the
trial coordinates::

    seed = first 8 bytes (little endian) of sha256("{base}:{n}:{m}:{s}:{trial}")

The method name is not part of the key, so every method solves the same
instance.  The seed drives numpy's PCG64 bit generator.  Standard normal
draws use the inverse CDF: ``k = integers(0, 2**52)`` then
``ndtri((k + 0.5) / 2**52)``; both steps are exact in IEEE doubles.
Draw order for one instance: A row by row, the support by a partial
Fisher-Yates shuffle (``j = integers(i, n)`` for i = 0..s-1), the nonzero
values, then the noise vector (always drawn, scaled by ``noise_std``).
"""
from __future__ import annotations

import hashlib
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .model import Problem, SuccessGrid
from .penalty import Schedule, ScheduleKind
from .solvers import (
    Mode,
    SolverOptions,
    algorithm1_sorted_irl1,
    algorithm2_sorted_ist,
    default_alpha,
    ist_weights,
    keep_k_weights,
)

log = logging.getLogger(__name__)

SUCCESS_TOL = 1e-3
UNIFORM_BITS = 52

METHOD_KINDS = {
    "l1": ScheduleKind.PlainL1,
    "irl1": ScheduleKind.ValueIRL1,
    "2level": ScheduleKind.TwoLevel,
    "mlevel": ScheduleKind.MultiLevel,
    "isd": ScheduleKind.ISD,
    "smap": ScheduleKind.SMAP,
}
ALG2_METHODS = ("l1", "2level", "mlevel", "isd", "smap", "keepk")
DEFAULT_METHODS = ("l1", "irl1", "2level", "mlevel", "isd")
IRL1_MAX_OUTER = 3
ALGOS = ("alg1", "alg2")


def valid_methods(algo: str = "alg1") -> tuple:
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGOS)}")
    return tuple(METHOD_KINDS) if algo == "alg1" else ALG2_METHODS


def parse_methods(methods, algo: str = "alg1") -> tuple:
    """Normalize a comma list or sequence of method names, rejecting unknown ones."""
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    methods = tuple(methods)
    allowed = valid_methods(algo)
    if not methods:
        raise ValueError(f"no methods given; valid methods: {', '.join(allowed)}")
    bad = [m for m in methods if m not in allowed]
    if bad:
        raise ValueError(f"unknown method {bad[0]!r} for {algo}; valid methods: {', '.join(allowed)}")
    if len(set(methods)) != len(methods):
        raise ValueError("duplicate method names")
    return methods


# -- instances ---------------------------------------------------------------


@dataclass(frozen=True)
class TrialSpec:
    """One randomized instance.  ``s = 0`` gives the all-zero signal."""

    n: int
    m: int
    s: int
    seed: int
    method: str = "l1"
    mode: Mode = Mode.Constrained
    noise_std: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 < self.m <= self.n:
            raise ValueError(f"m={self.m} must lie in [1, n={self.n}]")
        if not 0 <= self.s <= self.n:
            raise ValueError(f"s={self.s} must lie in [0, n={self.n}]")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ValueError("noise_std must be finite and nonnegative")
        if self.method not in METHOD_KINDS and self.method not in ALG2_METHODS:
            raise ValueError(f"unknown method {self.method!r}")


def trial_seed(base_seed: int, n: int, m: int, s: int, trial: int) -> int:
    key = f"{base_seed}:{n}:{m}:{s}:{trial}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Inverse-CDF normals from 52-bit uniform integers."""
    k = rng.integers(0, 2**UNIFORM_BITS, size=size, dtype=np.int64)
    return ndtri((k + 0.5) / 2.0**UNIFORM_BITS)


def random_support(rng: np.random.Generator, n: int, s: int) -> np.ndarray:
    """First s entries of a partial Fisher-Yates shuffle of 0..n-1."""
    idx = np.arange(n)
    for i in range(s):
        j = int(rng.integers(i, n))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:s]


def gen_gaussian_problem(spec: TrialSpec, alpha: Optional[float] = None) -> Problem:
    """Gaussian A, s-sparse Gaussian truth, b = A truth + noise_std * noise.

    Unconstrained specs get ``alpha`` or, by default, 10 / sigma_max(A)^2.
    """
    rng = make_rng(spec.seed)
    a = standard_normal(rng, (spec.m, spec.n))
    support = random_support(rng, spec.n, spec.s)
    truth = np.zeros(spec.n)
    truth[support] = standard_normal(rng, spec.s)
    noise = standard_normal(rng, spec.m)
    b = a @ truth + spec.noise_std * noise
    if spec.mode is Mode.Unconstrained:
        alpha = default_alpha(a) if alpha is None else alpha
    else:
        alpha = 1.0 if alpha is None else alpha
    return Problem(a, b, truth, alpha)


def recovery_success(u_hat, truth, tol: float = SUCCESS_TOL) -> bool:
    u_hat = np.asarray(u_hat, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if u_hat.shape != truth.shape:
        raise ValueError(f"length mismatch: {u_hat.size} vs {truth.size}")
    return bool(np.max(np.abs(u_hat - truth), initial=0.0) < tol)


# -- running methods on one instance -----------------------------------------


@dataclass(frozen=True)
class MethodOutcome:
    method: str
    u: Optional[np.ndarray]
    time_s: float
    failed: bool = False
    converged: bool = True


def _alg1_options(name: str, opts: SolverOptions) -> SolverOptions:
    return replace(opts, max_outer=IRL1_MAX_OUTER) if name == "irl1" else opts


def solve_methods(problem: Problem, methods: Sequence[str], opts: SolverOptions,
                  algo: str = "alg1", k: Optional[int] = None) -> dict:
    """Run each method on ``problem`` and return ``{name: MethodOutcome}``.

    Algorithm 1 methods share one plain l1 solve as their starting point;
    its time is charged to every method.  ``k`` is the keep-K size for the
    ``keepk`` thresholding method.  Exceptions become failed outcomes.
    """
    out = {}
    if algo == "alg1":
        t0 = time.perf_counter()
        try:
            u0, trace0 = algorithm1_sorted_irl1(problem, Schedule(ScheduleKind.PlainL1), opts)
        except Exception as exc:  # noqa: BLE001 - any solver error is a failed trial
            log.warning("plain l1 start failed: %s", exc)
            dt = time.perf_counter() - t0
            return {name: MethodOutcome(name, None, dt, failed=True, converged=False) for name in methods}
        t_init = time.perf_counter() - t0
        for name in methods:
            if name == "l1":
                out[name] = MethodOutcome(name, u0, t_init, converged=trace0.converged)
                continue
            t1 = time.perf_counter()
            try:
                u, trace = algorithm1_sorted_irl1(problem, Schedule(METHOD_KINDS[name]),
                                                  _alg1_options(name, opts), u0=u0)
                out[name] = MethodOutcome(name, u, t_init + time.perf_counter() - t1,
                                          converged=trace.converged)
            except Exception as exc:  # noqa: BLE001
                log.warning("method %s failed: %s", name, exc)
                out[name] = MethodOutcome(name, None, t_init + time.perf_counter() - t1, True, False)
        return out

    for name in methods:
        t1 = time.perf_counter()
        try:
            if name == "keepk":
                if k is None:
                    raise ValueError("keepk needs k")
                w = keep_k_weights(problem.n, k)
            else:
                w = ist_weights(METHOD_KINDS[name], problem.n)
            u, trace = algorithm2_sorted_ist(problem, w, opts)
            out[name] = MethodOutcome(name, u, time.perf_counter() - t1, converged=trace.converged)
        except Exception as exc:  # noqa: BLE001
            log.warning("method %s failed: %s", name, exc)
            out[name] = MethodOutcome(name, None, time.perf_counter() - t1, True, False)
    return out


@dataclass(frozen=True)
class _Task:
    n: int
    m: int
    s: int
    trial: int
    base_seed: int
    methods: tuple
    opts: SolverOptions
    algo: str = "alg1"
    noise_std: float = 0.0
    alpha: Optional[float] = None


def _run_task(task: _Task) -> tuple:
    """Solve one trial; returns ((m, s, trial), {name: (success, sq_error, time, failed)})."""
    seed = trial_seed(task.base_seed, task.n, task.m, task.s, task.trial)
    spec = TrialSpec(task.n, task.m, task.s, seed, task.methods[0], task.opts.mode, task.noise_std)
    problem = gen_gaussian_problem(spec, task.alpha)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        outcomes = solve_methods(problem, task.methods, task.opts, task.algo, k=task.s)
    for w in caught:
        log.info("m=%d s=%d trial=%d: %s", task.m, task.s, task.trial, w.message)
    stats = {}
    for name, oc in outcomes.items():
        if oc.failed:
            stats[name] = (False, math.nan, oc.time_s, True)
            continue
        err = oc.u - problem.truth
        stats[name] = (recovery_success(oc.u, problem.truth), float(np.dot(err, err)), oc.time_s, False)
    return (task.m, task.s, task.trial), stats


def _execute(tasks: list, jobs: int) -> dict:
    """Run tasks serially or on a process pool; results keyed by (m, s, trial)."""
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    if jobs == 1 or len(tasks) <= 1:
        results = map(_run_task, tasks)
        return dict(results)
    chunk = max(1, len(tasks) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return dict(pool.map(_run_task, tasks, chunksize=chunk))


def _check_grid(n: int, m_values: Iterable[int], s_values: Iterable[int], trials: int):
    m_values = [int(m) for m in m_values]
    s_values = [int(s) for s in s_values]
    if n < 1:
        raise ValueError("n must be positive")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not m_values or not s_values:
        raise ValueError("grid needs at least one m and one s")
    for m in m_values:
        if not 0 < m <= n:
            raise ValueError(f"m={m} must lie in [1, n={n}]")
    for s in s_values:
        if not 0 <= s <= n:
            raise ValueError(f"s={s} must lie in [0, n={n}]")
    if len(set(m_values)) != len(m_values) or len(set(s_values)) != len(s_values):
        raise ValueError("grid values must be distinct")
    return m_values, s_values


def _log_failures(results: dict, methods: Sequence[str]) -> None:
    for key in sorted(results):
        for name in methods:
            if results[key][name][3]:
                log.warning("solver failure: method=%s m=%d s=%d trial=%d", name, *key)


# -- protocols ---------------------------------------------------------------


def run_phase_transition(n: int, m_values, s_values, trials: int, methods=DEFAULT_METHODS,
                         base_seed: int = 0, jobs: int = 1, opts: Optional[SolverOptions] = None
                         ) -> list:
    """Success fractions over an (m, s) grid, one :class:`SuccessGrid` per method."""
    methods = parse_methods(methods)
    m_values, s_values = _check_grid(n, m_values, s_values, trials)
    opts = opts or SolverOptions()
    tasks = [_Task(n, m, s, t, base_seed, methods, opts)
             for m in m_values for s in s_values for t in range(trials)]
    results = _execute(tasks, jobs)
    _log_failures(results, methods)
    grids = []
    for name in methods:
        succ = np.zeros((len(m_values), len(s_values)), dtype=int)
        fail = np.zeros_like(succ)
        for i, m in enumerate(m_values):
            for j, s in enumerate(s_values):
                for t in range(trials):
                    ok, _, _, failed = results[(m, s, t)][name]
                    succ[i, j] += ok
                    fail[i, j] += failed
        grids.append(SuccessGrid(m_values, s_values, succ, trials, name, base_seed, fail))
    return grids


@dataclass(frozen=True)
class CurveRow:
    method: str
    s: int
    trials: int
    successes: int
    mean_time_s: float
    failures: int = 0

    @property
    def success_pct(self) -> float:
        return 100.0 * self.successes / self.trials


def run_recovery_curve(n: int, m: int, s_values, trials: int, methods=DEFAULT_METHODS,
                       base_seed: int = 0, jobs: int = 1, opts: Optional[SolverOptions] = None
                       ) -> list:
    """Success percentage and mean time per (s, method) at fixed (n, m)."""
    methods = parse_methods(methods)
    _, s_values = _check_grid(n, [m], s_values, trials)
    opts = opts or SolverOptions()
    tasks = [_Task(n, m, s, t, base_seed, methods, opts) for s in s_values for t in range(trials)]
    results = _execute(tasks, jobs)
    _log_failures(results, methods)
    rows = []
    for s in s_values:
        for name in methods:
            stats = [results[(m, s, t)][name] for t in range(trials)]
            rows.append(CurveRow(name, s, trials, sum(x[0] for x in stats),
                                 float(np.mean([x[2] for x in stats])), sum(x[3] for x in stats)))
    return rows


@dataclass(frozen=True)
class DenoiseRow:
    method: str
    m: int
    trials: int
    mean_mse: float
    mean_time_s: float
    failures: int = 0


def run_denoise_benchmark(n: int, m_values, s: int, noise_std: float, trials: int,
                          methods=("l1", "2level", "mlevel", "isd"), base_seed: int = 0,
                          algo: str = "alg1", jobs: int = 1, alpha: Optional[float] = None,
                          opts: Optional[SolverOptions] = None) -> list:
    """Mean squared error ||u - truth||^2 / n of unconstrained solves.

    A failed trial contributes NaN, so its row's mean is NaN.
    """
    methods = parse_methods(methods, algo)
    if isinstance(m_values, (int, np.integer)):
        m_values = [m_values]
    m_values, _ = _check_grid(n, m_values, [s], trials)
    if not (noise_std >= 0 and math.isfinite(noise_std)):
        raise ValueError("noise_std must be finite and nonnegative")
    if alpha is not None and not alpha > 0:
        raise ValueError("alpha must be positive")
    opts = replace(opts or SolverOptions(), mode=Mode.Unconstrained)
    tasks = [_Task(n, m, s, t, base_seed, methods, opts, algo, float(noise_std), alpha)
             for m in m_values for t in range(trials)]
    results = _execute(tasks, jobs)
    _log_failures(results, methods)
    rows = []
    for m in m_values:
        for name in methods:
            stats = [results[(m, s, t)][name] for t in range(trials)]
            rows.append(DenoiseRow(name, m, trials, float(np.mean([x[1] for x in stats])) / n,
                                   float(np.mean([x[2] for x in stats])), sum(x[3] for x in stats)))
    return rows


# -- CSV output ----------------------------------------------------------------


def _time_field(t: float, timing: bool) -> str:
    return f"{t:.6f}" if timing else ""


def format_phase_csv(grid: SuccessGrid) -> str:
    rows = ["method,m,s,trials,successes,fraction"]
    for i, m in enumerate(grid.m_values):
        for j, s in enumerate(grid.s_values):
            rows.append(f"{grid.method},{m},{s},{grid.trials},{grid.successes[i, j]},"
                        f"{float(grid.fractions[i, j])!r}")
    return "\n".join(rows) + "\n"


def format_curve_csv(rows: Sequence[CurveRow], timing: bool = True) -> str:
    """``timing=False`` leaves ``mean_time_s`` empty so the file is reproducible."""
    out = ["method,s,trials,success_pct,mean_time_s"]
    for r in rows:
        out.append(f"{r.method},{r.s},{r.trials},{r.success_pct!r},{_time_field(r.mean_time_s, timing)}")
    return "\n".join(out) + "\n"


def format_denoise_csv(rows: Sequence[DenoiseRow], timing: bool = True) -> str:
    out = ["method,m,trials,mean_mse,mean_time_s"]
    for r in rows:
        out.append(f"{r.method},{r.m},{r.trials},{r.mean_mse!r},{_time_field(r.mean_time_s, timing)}")
    return "\n".join(out) + "\n"
