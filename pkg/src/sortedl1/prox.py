"""Proximal operator of beta * R_lambda by sorted thresholding."""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import Permutation, WeightSequence, apply_permutation
from .penalty import eval_sorted_l1, optimal_permutation

ORACLE_MAX_N = 8


@dataclass(frozen=True)
class ProxResult:
    u: np.ndarray
    permutation: Permutation
    objective: float


def _threshold(x: np.ndarray, weights: np.ndarray, beta: float) -> np.ndarray:
    # infinite weights zero their component before any arithmetic touches them
    inf = np.isinf(weights)
    u = np.zeros_like(x)
    fin = ~inf
    xf = x[fin]
    u[fin] = np.sign(xf) * np.maximum(np.abs(xf) - beta * weights[fin], 0.0)
    return u


def prox_sorted_l1(x, w: WeightSequence, beta: float = 1.0) -> ProxResult:
    """Return the canonical minimizer of ``beta R(u) + 0.5 ||u - x||^2``.

    The smallest weights go to the largest entries of ``|x|`` (ties to the
    lower index), then each component is soft-thresholded by its own
    weight.  The operator is multi-valued when ties straddle two different
    weights; this picks the representative given by the stable sort.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float).ravel()
    if x.size != len(w):
        raise ValueError(f"x has length {x.size}, weights have length {len(w)}")
    p = optimal_permutation(x, w)
    u = _threshold(x, apply_permutation(p, w), beta)
    obj = beta * eval_sorted_l1(u, w) + 0.5 * float(np.dot(u - x, u - x))
    return ProxResult(u, p, obj)


def sorted_threshold(x: np.ndarray, lam: np.ndarray, scaled: np.ndarray):
    """Bare sorted thresholding for hot loops.

    ``lam`` holds the finite weights and ``scaled`` the matching
    ``beta * lam``; components past ``len(lam)`` have infinite weight.
    Returns ``(u, penalty)`` with ``penalty = R_lambda(u)`` as a plain float
    dot product.  ``u`` has the same bits as :func:`prox_sorted_l1` but
    validation is skipped.
    """
    ax = np.abs(x)
    idx = np.argsort(-ax, kind="stable")[: lam.size]
    shrunk = ax[idx] - scaled
    np.maximum(shrunk, 0.0, out=shrunk)
    # thresholding keeps the magnitude order, so shrunk is already sorted
    penalty = float(np.dot(lam, shrunk))
    u = np.zeros_like(x)
    u[idx] = np.multiply(np.sign(x[idx]), shrunk, out=shrunk)
    return u, penalty


def scalar_threshold_value(x: float, lam: float) -> float:
    """min_u lam |u| + (u - x)^2 / 2, i.e. the Huber function of x.

    Equals x^2/2 when |x| < lam and lam |x| - lam^2/2 otherwise; an
    infinite ``lam`` gives x^2/2.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    ax = abs(x)
    if ax < lam:
        return 0.5 * x * x
    return lam * ax - 0.5 * lam * lam


def _huber(x: np.ndarray, lam: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    quad = ax < lam
    out = 0.5 * x * x
    lin = ~quad
    out[lin] = lam[lin] * ax[lin] - 0.5 * lam[lin] ** 2
    return out


@functools.lru_cache(maxsize=ORACLE_MAX_N)
def _all_orders(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp).reshape(-1, n)


def prox_oracle(x, w: WeightSequence, beta: float = 1.0) -> float:
    """Brute-force minimum of the prox objective over all n! weight assignments.

    For a fixed assignment the problem separates, and each component's
    minimum is the Huber value.  Used to check :func:`prox_sorted_l1`.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n != len(w):
        raise ValueError(f"x has length {n}, weights have length {len(w)}")
    if n > ORACLE_MAX_N:
        raise ValueError(f"oracle enumerates n! assignments; n={n} > {ORACLE_MAX_N}")
    if not beta > 0:
        raise ValueError("beta must be positive")
    fin = ~np.isinf(w.values)
    scaled = np.full(n, math.inf)
    scaled[fin] = beta * w.values[fin]
    lam = scaled[_all_orders(n)]
    xs = np.broadcast_to(x, lam.shape)
    return float(np.min(np.sum(_huber(xs, lam), axis=1)))


def fixed_point_residual(u, w: WeightSequence, beta: float, grad) -> float:
    """||u - prox(u - beta * grad)||_inf with the canonical prox."""
    u = np.asarray(u, dtype=float).ravel()
    grad = np.asarray(grad, dtype=float).ravel()
    nxt = prox_sorted_l1(u - beta * grad, w, beta).u
    return float(np.max(np.abs(u - nxt), initial=0.0))
