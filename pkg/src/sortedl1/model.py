"""Domain types shared by the penalty, solvers and experiment code.

Infinite weights are represented by ``math.inf`` entries in the weight
arrays.  Every consumer masks them with ``np.isinf`` before doing any
arithmetic, so ``beta * lam`` or ``lam * 0`` never reaches a NaN.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

INF = math.inf


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class WeightSequence:
    """Nondecreasing nonnegative weights, optionally with an infinite tail.

    ``values`` has one entry per component.  Entries at or beyond
    ``infinite_tail_start`` are ``inf``; everything before is finite.
    Use :func:`validate_weights` to build one.
    """

    values: np.ndarray
    infinite_tail_start: Optional[int] = None

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightSequence):
            return NotImplemented
        return self.infinite_tail_start == other.infinite_tail_start and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash((self.values.tobytes(), self.infinite_tail_start))

    @property
    def finite(self) -> np.ndarray:
        """The finite prefix of the weights."""
        t = self.infinite_tail_start
        return self.values if t is None else self.values[:t]

    @property
    def has_infinite_tail(self) -> bool:
        return self.infinite_tail_start is not None


def validate_weights(values, infinite_tail_start: Optional[int] = None) -> WeightSequence:
    """Check the weight invariants and return a :class:`WeightSequence`.

    ``values`` is full length; trailing ``inf`` entries form the infinite
    tail.  A given ``infinite_tail_start`` must agree with where they begin.
    """
    lam = np.array(values, dtype=float, copy=True).ravel()
    n = lam.size
    if n == 0:
        raise ValueError("weight sequence must be non-empty")
    if np.any(np.isnan(lam)):
        raise ValueError("weights must not be NaN")

    inf_mask = np.isinf(lam)
    if np.any(lam[inf_mask] < 0):
        raise ValueError("weights must be nonnegative")
    first_inf = int(np.argmax(inf_mask)) if inf_mask.any() else n
    if inf_mask.any() and not inf_mask[first_inf:].all():
        raise ValueError("infinite weights must form a contiguous tail")

    if infinite_tail_start is not None:
        t = int(infinite_tail_start)
        if not 0 <= t <= n:
            raise ValueError(f"infinite_tail_start={t} outside [0, {n}]")
        if t < first_inf:
            raise ValueError(f"finite weights stored at or beyond the infinite tail start {t}")
        if t > first_inf:
            raise ValueError(f"infinite weight at index {first_inf} precedes tail start {t}")
    t = first_inf if first_inf < n else None

    fin = lam if t is None else lam[:t]
    if np.any(fin < 0):
        raise ValueError("weights must be nonnegative")
    if np.any(np.diff(fin) < 0):
        raise ValueError("weights must be nondecreasing")
    if t is None and not fin[-1] > 0:
        raise ValueError("the last weight must be strictly positive")
    return WeightSequence(_frozen(lam), t)


@dataclass(frozen=True, eq=False)
class Permutation:
    """``order[k]`` is the index of the component receiving the (k+1)-th weight."""

    order: np.ndarray

    def __post_init__(self):
        order = np.array(self.order, dtype=np.intp, copy=True).ravel()
        n = order.size
        if n and (order.min() < 0 or order.max() >= n or np.unique(order).size != n):
            raise ValueError("order must be a bijection on 0..n-1")
        order.flags.writeable = False
        object.__setattr__(self, "order", order)

    def __len__(self) -> int:
        return self.order.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.order, other.order)

    def __hash__(self) -> int:
        return hash(self.order.tobytes())

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.size)
        return Permutation(inv)


def apply_permutation(p: Permutation, w: WeightSequence) -> np.ndarray:
    """Return the per-index weight vector ``P lambda``.

    ``out[order[k]] = lambda[k]``; infinite weights come through as ``inf``.
    """
    if len(p) != len(w):
        raise ValueError(f"permutation length {len(p)} != weight length {len(w)}")
    out = np.empty(len(w))
    out[p.order] = w.values
    return out


@dataclass(frozen=True)
class Problem:
    """Measurement matrix ``a`` (m x n), observation ``b`` and optional truth."""

    a: np.ndarray
    b: np.ndarray
    truth: Optional[np.ndarray] = None
    alpha: float = 1.0

    def __post_init__(self):
        a = _frozen(self.a)
        if a.ndim != 2:
            raise ValueError("a must be a 2-d matrix")
        b = _frozen(self.b).ravel()
        if b.size != a.shape[0]:
            raise ValueError(f"b has length {b.size}, expected {a.shape[0]}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.truth is not None:
            truth = _frozen(self.truth).ravel()
            if truth.size != a.shape[1]:
                raise ValueError(f"truth has length {truth.size}, expected {a.shape[1]}")
            object.__setattr__(self, "truth", truth)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]


class Termination(enum.Enum):
    PermutationExhausted = "permutation_exhausted"
    EnergyStationary = "energy_stationary"
    MaxIterations = "max_iterations"
    FixedPoint = "fixed_point"


@dataclass(frozen=True)
class SolveTrace:
    """Per-iteration record of a solver run.

    ``energies[k]`` is the objective after iteration ``k + 1``; for the
    reweighted solver it is E1 evaluated with the weights that produced
    that iterate (``weight_history[k]``).
    """

    energies: tuple
    weight_history: tuple
    termination: Termination
    iterations: int
    wall_time: float
    feasibility: tuple = ()
    times: tuple = ()
    converged: bool = True
    energy_tolerance: float = 0.0
    inner_iterations: tuple = ()

    def to_csv(self) -> str:
        """One row per iteration: ``iteration,energy,feasibility,wall_time``."""
        rows = ["iteration,energy,feasibility,wall_time"]
        for k, e in enumerate(self.energies):
            feas = self.feasibility[k] if k < len(self.feasibility) else float("nan")
            t = self.times[k] if k < len(self.times) else float("nan")
            rows.append(f"{k + 1},{e!r},{feas!r},{t:.6f}")
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class SuccessGrid:
    """Success counts over an (m, s) grid for one method.

    ``failures`` counts trials where the solver raised; they are already
    included as non-successes.
    """

    m_values: np.ndarray
    s_values: np.ndarray
    successes: np.ndarray
    trials: int
    method: str
    seed: int
    failures: Optional[np.ndarray] = None
    fractions: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "m_values", _frozen(self.m_values, int))
        object.__setattr__(self, "s_values", _frozen(self.s_values, int))
        succ = _frozen(self.successes, int)
        if succ.shape != (self.m_values.size, self.s_values.size):
            raise ValueError("successes must have shape (len(m_values), len(s_values))")
        if np.any(succ < 0) or np.any(succ > self.trials):
            raise ValueError("success counts must lie in [0, trials]")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        fail = np.zeros_like(succ) if self.failures is None else _frozen(self.failures, int)
        if fail.shape != succ.shape or np.any(fail < 0) or np.any(fail + succ > self.trials):
            raise ValueError("failure counts must fit alongside the successes")
        object.__setattr__(self, "successes", succ)
        object.__setattr__(self, "failures", _frozen(fail, int))
        object.__setattr__(self, "fractions", _frozen(succ / self.trials))

    def fraction(self, m: int, s: int) -> float:
        i = int(np.flatnonzero(self.m_values == m)[0])
        j = int(np.flatnonzero(self.s_values == s)[0])
        return float(self.fractions[i, j])


# -- text formats -----------------------------------------------------------


class FormatError(ValueError):
    """Malformed problem or weight file; ``line`` is 1-based."""

    def __init__(self, message: str, line: int, column: Optional[int] = None):
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


def _parse_row(tokens: Sequence[str], lineno: int, expected: int) -> list:
    if len(tokens) != expected:
        raise FormatError(f"expected {expected} values, found {len(tokens)}", lineno)
    row = []
    for col, tok in enumerate(tokens, start=1):
        try:
            row.append(float(tok))
        except ValueError:
            raise FormatError(f"cannot parse {tok!r} as a real number", lineno, col) from None
    return row


def parse_problem(text: str) -> Problem:
    """Parse the plain-text problem format.

    Header ``m n``, then m rows of A, one row of b, and optionally one row
    holding the ground truth.  Blank lines are ignored.
    """
    lines = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise FormatError("empty problem file", 1)
    lineno, header = lines[0]
    if len(header) != 2:
        raise FormatError(f"header must be 'm n', found {len(header)} fields", lineno)
    try:
        m, n = int(header[0]), int(header[1])
    except ValueError:
        raise FormatError("header fields must be integers", lineno) from None
    if m <= 0 or n <= 0:
        raise FormatError("m and n must be positive", lineno)

    body = lines[1:]
    if len(body) < m + 1:
        last = body[-1][0] if body else lineno
        raise FormatError(f"expected at least {m + 1} data rows after the header, found {len(body)}", last)
    if len(body) > m + 2:
        raise FormatError("unexpected extra rows after the truth row", body[m + 2][0])
    a = np.array([_parse_row(toks, ln, n) for ln, toks in body[:m]])
    b = np.array(_parse_row(body[m][1], body[m][0], m))
    truth = None
    if len(body) == m + 2:
        truth = np.array(_parse_row(body[m + 1][1], body[m + 1][0], n))
    return Problem(a, b, truth)


def read_problem(path) -> Problem:
    return parse_problem(Path(path).read_text())


def format_problem(problem: Problem) -> str:
    def row(v):
        return " ".join(repr(float(x)) for x in v)

    parts = [f"{problem.m} {problem.n}"]
    parts += [row(r) for r in problem.a]
    parts.append(row(problem.b))
    if problem.truth is not None:
        parts.append(row(problem.truth))
    return "\n".join(parts) + "\n"


def write_problem(problem: Problem, path) -> None:
    Path(path).write_text(format_problem(problem))


def parse_weights(text: str, n: Optional[int] = None) -> WeightSequence:
    """Parse one weight per line with an optional final ``inf k`` line.

    ``inf k`` says weights from index k (0-based) on are infinite; the k
    finite weights must be listed above it and ``n`` gives the full length.
    """
    rows = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    finite = []
    tail = None
    for idx, (lineno, toks) in enumerate(rows):
        if toks[0].lower() == "inf":
            if idx != len(rows) - 1:
                raise FormatError("'inf k' must be the last line", lineno)
            if len(toks) != 2:
                raise FormatError("expected 'inf k'", lineno)
            try:
                tail = int(toks[1])
            except ValueError:
                raise FormatError(f"tail start {toks[1]!r} is not an integer", lineno, 2) from None
            if tail != len(finite):
                raise FormatError(f"tail start {tail} but {len(finite)} finite weights listed", lineno)
            continue
        finite.extend(_parse_row(toks, lineno, 1))
    if tail is None:
        if n is not None and n != len(finite):
            raise ValueError(f"weight file lists {len(finite)} weights, expected {n}")
        return validate_weights(finite)
    if n is None:
        raise ValueError("a weight file with an infinite tail needs the signal length n")
    if n < tail:
        raise ValueError(f"tail start {tail} exceeds n={n}")
    return validate_weights(finite + [INF] * (n - tail), tail if tail < n else None)


def read_weights(path, n: Optional[int] = None) -> WeightSequence:
    return parse_weights(Path(path).read_text(), n)


def format_weights(w: WeightSequence) -> str:
    lines = [repr(float(x)) for x in w.finite]
    if w.has_infinite_tail:
        lines.append(f"inf {w.infinite_tail_start}")
    return "\n".join(lines) + "\n"
