"""The nonconvex sorted l1 penalty, its equivalent lifted forms, and the
weight schedules used by the reweighted solver.

The penalty pairs the smallest weight with the largest magnitude::

    R(u) = lam[0] * |u|_(1) + lam[1] * |u|_(2) + ...,   |u|_(1) >= |u|_(2) >= ...

Magnitude sorts are stable: ties go to the lower index first.  Penalty
values are summed in exact rational arithmetic and rounded once, so the
lifted forms reproduce R(u) to the last bit at their optimal arguments.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Optional

import numpy as np

from .model import INF, Permutation, WeightSequence, apply_permutation

ZERO_TOL = 1e-6


def _check_len(u: np.ndarray, n: int) -> None:
    if u.size != n:
        raise ValueError(f"vector length {u.size} != weight length {n}")


def _exact_dot(weights, values) -> Fraction:
    return sum((Fraction(a) * Fraction(b) for a, b in zip(weights, values) if a and b), Fraction(0))


def _exact_l1(r) -> Fraction:
    return sum((Fraction(x) for x in np.abs(r) if x), Fraction(0))


def optimal_permutation(u, w: Optional[WeightSequence] = None) -> Permutation:
    """Order indices by decreasing magnitude (stable, ascending index on ties)."""
    mags = np.abs(np.asarray(u, dtype=float).ravel())
    if w is not None:
        _check_len(mags, len(w))
    return Permutation(np.argsort(-mags, kind="stable"))


def eval_sorted_l1(u, w: WeightSequence) -> float:
    """Evaluate R_lambda(u); ``inf`` if a component under an infinite weight is nonzero."""
    u = np.asarray(u, dtype=float).ravel()
    _check_len(u, len(w))
    mags = np.sort(np.abs(u))[::-1]
    t = w.infinite_tail_start
    if t is not None:
        if np.any(mags[t:] != 0):
            return INF
        mags = mags[:t]
    return float(_exact_dot(w.finite, mags))


def f1_eval(u, p: Permutation, w: WeightSequence) -> float:
    """sum_i (P lam)_i |u_i| for a fixed assignment ``p``."""
    u = np.asarray(u, dtype=float).ravel()
    _check_len(u, len(w))
    weights = apply_permutation(p, w)
    mags = np.abs(u)
    inf = np.isinf(weights)
    if np.any(mags[inf] != 0):
        return INF
    return float(_exact_dot(weights[~inf], mags[~inf]))


def _level_steps(w: WeightSequence):
    """Yield exact steps lam_{k+1} - lam_k for k = 1..n-1, stopping after the infinite jump.

    Differences between two infinite weights are zero: infinite weights are
    interchangeable.
    """
    lam = w.values
    for k in range(1, len(lam)):
        if math.isinf(lam[k]):
            yield INF
            return
        yield Fraction(lam[k]) - Fraction(lam[k - 1])


def _lifted_value(u: np.ndarray, w: WeightSequence, residuals) -> float:
    lam0 = w.values[0]
    if math.isinf(lam0):
        return INF if np.any(u != 0) else 0.0
    total = Fraction(lam0) * _exact_l1(u)
    for step, r in zip(_level_steps(w), residuals):
        if step == INF:
            if np.any(r != 0):
                return INF
            break
        if step:
            total += step * _exact_l1(r)
    return float(total)


@dataclass(frozen=True)
class SparseVectorSet:
    """n-1 vectors with at most one nonzero entry each, stored as rows."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float, copy=True)
        if v.ndim != 2:
            raise ValueError("vectors must be a 2-d array (n-1 rows)")
        if np.any(np.count_nonzero(v, axis=1) > 1):
            raise ValueError("every vector must have at most one nonzero entry")
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)


@dataclass(frozen=True)
class MaskSet:
    """n-1 masks with entries in [0, 1], each summing to at least n-1."""

    masks: np.ndarray

    def __post_init__(self):
        mk = np.array(self.masks, dtype=float, copy=True)
        if mk.ndim != 2:
            raise ValueError("masks must be a 2-d array (n-1 rows)")
        n = mk.shape[1]
        if np.any(mk < 0) or np.any(mk > 1):
            raise ValueError("mask entries must lie in [0, 1]")
        if mk.shape[0] and np.any(mk.sum(axis=1) < n - 1):
            raise ValueError("every mask must sum to at least n-1")
        mk.flags.writeable = False
        object.__setattr__(self, "masks", mk)


def f2_eval(u, vs: SparseVectorSet, w: WeightSequence) -> float:
    """lam_1 ||u||_1 + sum_k (lam_k - lam_{k-1}) ||u - v^1 - ... - v^{k-1}||_1."""
    u = np.asarray(u, dtype=float).ravel()
    n = len(w)
    _check_len(u, n)
    if vs.vectors.shape != (n - 1, n):
        raise ValueError(f"expected {n - 1} vectors of length {n}")
    residuals = u - np.cumsum(vs.vectors, axis=0) if n > 1 else np.empty((0, n))
    return _lifted_value(u, w, residuals)


def f3_eval(u, ms: MaskSet, w: WeightSequence) -> float:
    """lam_1 ||u||_1 + sum_k (lam_k - lam_{k-1}) ||u * L^1 * ... * L^{k-1}||_1."""
    u = np.asarray(u, dtype=float).ravel()
    n = len(w)
    _check_len(u, n)
    if ms.masks.shape != (n - 1, n):
        raise ValueError(f"expected {n - 1} masks of length {n}")
    residuals = u * np.cumprod(ms.masks, axis=0) if n > 1 else np.empty((0, n))
    return _lifted_value(u, w, residuals)


def construct_optimal_v(u) -> SparseVectorSet:
    """v^j keeps u's entry at the j-th largest magnitude and is zero elsewhere."""
    u = np.asarray(u, dtype=float).ravel()
    n = u.size
    order = optimal_permutation(u).order
    v = np.zeros((max(n - 1, 0), n))
    rows = np.arange(n - 1)
    v[rows, order[: n - 1]] = u[order[: n - 1]]
    return SparseVectorSet(v)


def construct_optimal_mask(p: Permutation) -> MaskSet:
    """Mask j is column j of J - P: a single zero at ``order[j]``."""
    n = len(p)
    masks = np.ones((max(n - 1, 0), n))
    masks[np.arange(n - 1), p.order[: n - 1]] = 0.0
    return MaskSet(masks)


def support_size(u, rel_tol: float = ZERO_TOL) -> int:
    """Count entries with |u_i| > rel_tol * ||u||_inf."""
    u = np.abs(np.asarray(u, dtype=float))
    top = u.max(initial=0.0)
    if top == 0:
        return 0
    return int(np.count_nonzero(u > rel_tol * top))


# -- weight schedules -------------------------------------------------------


class ScheduleKind(enum.Enum):
    TwoLevel = "2level"
    MultiLevel = "mlevel"
    ISD = "isd"
    SMAP = "smap"
    ValueIRL1 = "irl1"
    PlainL1 = "l1"

    @property
    def sorted(self) -> bool:
        return self is not ScheduleKind.ValueIRL1


@dataclass(frozen=True)
class Schedule:
    """Weight-shape parameters.

    ``omega1`` and ``rate`` left as ``None`` follow the per-iteration
    updates (omega_l = max(0.1, 0.5 * 0.9**(l-1)), r_l = min(10, 0.15 l));
    a number pins them.  ``k`` left as ``None`` is filled in by the solver
    from the l1 solution; ``k_cap`` bounds ISD support growth (m // 2).
    """

    kind: ScheduleKind
    k: Optional[int] = None
    omega1: Optional[float] = None
    rate: Optional[float] = None
    smap_w1: float = 0.0
    smap_w2: float = 1.0
    k_cap: Optional[int] = None
    isd_growth: float = 1.5
    iteration: int = 1

    def __post_init__(self):
        if self.k is not None and self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.omega1 is not None and not 0 < self.omega1 <= 1:
            raise ValueError("omega1 must lie in (0, 1]")
        if self.rate is not None and self.rate < 0:
            raise ValueError("rate must be nonnegative")
        if self.kind is ScheduleKind.SMAP and not (self.smap_w1 >= 0 and self.smap_w2 > 0):
            raise ValueError("SMAP needs w1 >= 0 and w2 > 0")

    def to_text(self) -> str:
        """Serialize as ``key=value`` lines."""
        out = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, ScheduleKind):
                val = val.value
            out.append(f"{f.name}={val}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Schedule":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in types:
                raise ValueError(f"unknown schedule key {key!r}")
            if key == "kind":
                kw[key] = ScheduleKind(raw)
            elif raw == "None":
                kw[key] = None
            elif key in ("k", "k_cap", "iteration"):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        return cls(**kw)


def two_level_omega(l: int) -> float:
    return max(0.1, 0.5 * 0.9 ** (l - 1))


def multi_level_rate(l: int) -> float:
    return min(10.0, 0.15 * l)


def isd_support(k1: int, l: int, cap: Optional[int], n: int, growth: float = 1.5) -> int:
    """K_l for ISD: K_1 = k1, K_{l+1} = min(floor(growth * K_l) + 1, cap)."""
    limit = n if cap is None else min(cap, n)
    k = min(k1, limit)
    for _ in range(l - 1):
        k = min(int(math.floor(growth * k)) + 1, limit)
    return k


def schedule_weights(sched: Schedule, n: int, u_prev=None, l: Optional[int] = None) -> np.ndarray:
    """Weights for outer iteration ``l`` (1-based).

    Sorted kinds return the nondecreasing sequence lambda, to be assigned by
    magnitude rank.  ``ValueIRL1`` returns per-index weights computed from
    ``u_prev`` directly.
    """
    l = sched.iteration if l is None else l
    if n < 1:
        raise ValueError("n must be at least 1")
    if l < 1:
        raise ValueError("iteration counter starts at 1")
    k = sched.k
    if k is None:
        if sched.kind in (ScheduleKind.PlainL1, ScheduleKind.SMAP, ScheduleKind.ValueIRL1):
            k = 0
        else:
            raise ValueError("K is unset; resolve it from the initial iterate first")
    if k > n:
        raise ValueError(f"K={k} exceeds n={n}")
    kind = sched.kind

    if kind is ScheduleKind.PlainL1:
        return np.ones(n)
    if kind is ScheduleKind.TwoLevel:
        omega = two_level_omega(l) if sched.omega1 is None else sched.omega1
        lam = np.ones(n)
        lam[:k] = omega
        return lam
    if kind is ScheduleKind.MultiLevel:
        r = multi_level_rate(l) if sched.rate is None else sched.rate
        lam = np.ones(n)
        if k > 0:
            i = np.arange(1, k + 1)
            lam[:k] = np.exp(-r * (k - i) / k)
        return lam
    if kind is ScheduleKind.ISD:
        kl = isd_support(k, l, sched.k_cap, n, sched.isd_growth)
        lam = np.ones(n)
        lam[:kl] = 0.0
        return lam
    if kind is ScheduleKind.SMAP:
        return sched.smap_w1 + sched.smap_w2 * np.arange(n)
    if kind is ScheduleKind.ValueIRL1:
        if u_prev is None:
            raise ValueError("ValueIRL1 needs the previous iterate")
        u_prev = np.asarray(u_prev, dtype=float).ravel()
        if u_prev.size != n:
            raise ValueError(f"u_prev has length {u_prev.size}, expected {n}")
        eps = max(0.5 ** (l - 1), 0.5 ** 8)
        return 1.0 / (np.abs(u_prev) + eps)
    raise ValueError(f"unknown schedule kind {kind}")
