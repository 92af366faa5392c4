"""Command-line front end: ``sortedl1 {recover,phase,curve,denoise}``.

Exit codes: 0 success, 1 usage or input error, 2 solver non-convergence.
Each command writes its outputs and a ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .experiments import (
    ALG2_METHODS,
    DEFAULT_METHODS,
    METHOD_KINDS,
    format_curve_csv,
    format_denoise_csv,
    format_phase_csv,
    parse_methods,
    recovery_success,
    run_denoise_benchmark,
    run_phase_transition,
    run_recovery_curve,
)
from .model import FormatError, Problem, read_problem, read_weights
from .penalty import Schedule, ScheduleKind
from .solvers import (
    DescentError,
    Mode,
    SolverOptions,
    algorithm1_sorted_irl1,
    algorithm2_sorted_ist,
    default_alpha,
    ist_weights,
    keep_k_weights,
)

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2

log = logging.getLogger("sortedl1")


class UsageError(Exception):
    """Bad flags or config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    parameters: dict
    base_seed: int
    tool_version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    outputs: list = field(default_factory=list)
    exit_code: Optional[int] = None

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _range_list(start: int, stop: int, step: int) -> str:
    return ",".join(str(v) for v in range(start, stop + 1, step))


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _add_common(p: argparse.ArgumentParser, methods_default: str, trials_default: Optional[int]):
    p.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    if trials_default is not None:
        p.add_argument("--trials", type=_positive_int, default=trials_default, help="trials per cell")
    p.add_argument("--methods", default=methods_default, help="comma-separated method names")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.Constrained.value)
    p.add_argument("--inner", choices=["admm", "lp"], default="admm", help="weighted basis pursuit solver")
    p.add_argument("--max-outer", type=_positive_int, default=10)
    p.add_argument("--max-inner", type=_positive_int, default=2000)
    p.add_argument("--config", type=Path, help="key=value file of defaults; flags override")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_timing(p: argparse.ArgumentParser):
    p.add_argument("--timing", choices=["wall", "none"], default="wall",
                   help="'none' leaves mean_time_s empty so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sortedl1", description="Sparse recovery with the nonconvex sorted l1 penalty.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    rec = sub.add_parser("recover", help="solve one problem file")
    rec.add_argument("problem_file", type=Path)
    rec.add_argument("--method", default="l1", help="method name (see --methods of other commands)")
    rec.add_argument("--algo", choices=["alg1", "alg2"], default="alg1")
    rec.add_argument("--alpha", type=float, help="loss weight for unconstrained mode (default 10/sigma^2)")
    rec.add_argument("--k", type=int, help="K for keepk, or K for the alg2 weight shapes (default n//5)")
    rec.add_argument("--weights", type=Path, help="weight file for alg2 (overrides --method)")
    _add_common(rec, "", None)
    rec.set_defaults(methods=None)

    ph = sub.add_parser("phase", help="phase-transition grid, one CSV per method")
    ph.add_argument("--n", type=_positive_int, default=100)
    ph.add_argument("--m", type=_int_list, default=_range_list(10, 100, 10))
    ph.add_argument("--s", type=_int_list, default=_range_list(2, 50, 2))
    ph.add_argument("--full", action="store_true", help="100 trials per cell")
    _add_common(ph, ",".join(DEFAULT_METHODS), 20)

    cu = sub.add_parser("curve", help="success percentage against sparsity at fixed m")
    cu.add_argument("--n", type=_positive_int, default=256)
    cu.add_argument("--m", type=_positive_int, default=100)
    cu.add_argument("--s", type=_int_list, default="10,20,30,40,50")
    cu.add_argument("--full", action="store_true", help="100 trials per sparsity level")
    _add_common(cu, ",".join(DEFAULT_METHODS), 20)
    _add_timing(cu)

    de = sub.add_parser("denoise", help="mean squared error of unconstrained solves")
    de.add_argument("--n", type=_positive_int, default=256)
    de.add_argument("--m", type=_int_list, default="64,128")
    de.add_argument("--s", type=int, default=10)
    de.add_argument("--noise", type=float, default=0.05)
    de.add_argument("--algo", choices=["alg1", "alg2"], default="alg1")
    de.add_argument("--alpha", type=float, help="loss weight (default 10/sigma^2)")
    de.add_argument("--full", action="store_true", help="n=1024, m=128,256,512")
    _add_common(de, "l1,2level,mlevel,isd", 10)
    _add_timing(de)
    de.set_defaults(mode=Mode.Unconstrained.value)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise UsageError(f"unknown command {command!r}")


def _apply_config(parser: argparse.ArgumentParser, argv: list, args: argparse.Namespace):
    """Re-parse with defaults from the key=value config file, so flags still win."""
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "problem_file")}
    defaults = {}
    try:
        lines = args.config.read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        dest = key.strip().lstrip("-").replace("-", "_")
        if not sep or dest not in actions:
            raise UsageError(f"{args.config}:{lineno}: unknown or malformed entry {line!r}")
        action, raw = actions[dest], raw.strip()
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = raw.lower() in ("1", "true", "yes")
        elif action.type is not None:
            try:
                defaults[dest] = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{args.config}:{lineno}: {exc}") from None
        else:
            defaults[dest] = raw
        if action.choices is not None and defaults[dest] not in action.choices:
            raise UsageError(f"{args.config}:{lineno}: {dest} must be one of {', '.join(map(str, action.choices))}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _options(args) -> SolverOptions:
    return SolverOptions(max_outer=args.max_outer, max_inner=args.max_inner,
                         mode=Mode(args.mode), inner_solver=args.inner)


def _parameters(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("verbose",):
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


# -- commands ----------------------------------------------------------------


def cmd_recover(args, manifest: RunManifest) -> int:
    try:
        problem = read_problem(args.problem_file)
    except FormatError as exc:
        print(f"error: {args.problem_file}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: cannot read {args.problem_file}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    mode = Mode(args.mode)
    opts = _options(args)
    if mode is Mode.Unconstrained or args.algo == "alg2":
        alpha = args.alpha if args.alpha is not None else default_alpha(problem.a)
        if not alpha > 0:
            raise UsageError("--alpha must be positive")
        problem = Problem(problem.a, problem.b, problem.truth, alpha)
        manifest.parameters["alpha_used"] = alpha

    if args.algo == "alg1":
        if args.weights is not None:
            raise UsageError("--weights applies to --algo alg2 only")
        if args.method not in METHOD_KINDS:
            raise UsageError(f"unknown method {args.method!r}; valid methods: {', '.join(METHOD_KINDS)}")
        if args.method == "irl1":
            opts = replace(opts, max_outer=min(opts.max_outer, 3))
        sched = Schedule(METHOD_KINDS[args.method], k=args.k)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            u, trace = algorithm1_sorted_irl1(problem, sched, opts)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    else:
        if mode is not Mode.Unconstrained:
            raise UsageError("--algo alg2 solves the unconstrained problem; pass --mode unconstrained")
        if args.weights is not None:
            try:
                w = read_weights(args.weights, problem.n)
            except (FormatError, ValueError, OSError) as exc:
                print(f"error: {args.weights}: {exc}", file=sys.stderr)
                return EXIT_INPUT
        elif args.method == "keepk":
            if args.k is None:
                raise UsageError("--method keepk needs --k")
            w = keep_k_weights(problem.n, args.k)
        elif args.method in ALG2_METHODS:
            w = ist_weights(METHOD_KINDS[args.method], problem.n, args.k)
        else:
            raise UsageError(f"unknown method {args.method!r} for alg2; valid methods: {', '.join(ALG2_METHODS)}")
        try:
            u, trace = algorithm2_sorted_ist(problem, w, opts)
        except DescentError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGED

    args.out.mkdir(parents=True, exist_ok=True)
    sol = args.out / "solution.txt"
    sol.write_text("".join(f"{float(x)!r}\n" for x in u))
    tr = args.out / "trace.csv"
    tr.write_text(trace.to_csv())
    manifest.outputs += [sol.name, tr.name]
    manifest.parameters["termination"] = trace.termination.value
    manifest.parameters["iterations"] = trace.iterations
    if problem.truth is not None:
        ok = recovery_success(u, problem.truth)
        manifest.parameters["recovered"] = ok
        print(f"recovery {'succeeded' if ok else 'failed'}: "
              f"max error {float(np.max(np.abs(u - problem.truth))):.3e}")
    if not trace.converged:
        print("error: solver did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _methods(args, algo="alg1") -> tuple:
    try:
        return parse_methods(args.methods, algo)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_phase(args, manifest: RunManifest) -> int:
    methods = _methods(args)
    trials = 100 if args.full else args.trials
    manifest.parameters["trials"] = trials
    try:
        grids = run_phase_transition(args.n, args.m, args.s, trials, methods, args.seed, args.jobs,
                                     _options(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.out.mkdir(parents=True, exist_ok=True)
    for g in grids:
        path = args.out / f"phase_{g.method}.csv"
        path.write_text(format_phase_csv(g))
        manifest.outputs.append(path.name)
    manifest.parameters["failures"] = {g.method: int(g.failures.sum()) for g in grids}
    return EXIT_OK


def cmd_curve(args, manifest: RunManifest) -> int:
    methods = _methods(args)
    trials = 100 if args.full else args.trials
    manifest.parameters["trials"] = trials
    try:
        rows = run_recovery_curve(args.n, args.m, args.s, trials, methods, args.seed, args.jobs,
                                  _options(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "curve.csv"
    path.write_text(format_curve_csv(rows, timing=args.timing == "wall"))
    manifest.outputs.append(path.name)
    manifest.parameters["failures"] = sum(r.failures for r in rows)
    return EXIT_OK


def cmd_denoise(args, manifest: RunManifest) -> int:
    methods = _methods(args, args.algo)
    n, m_values = (1024, [128, 256, 512]) if args.full else (args.n, args.m)
    manifest.parameters.update(n=n, m=m_values)
    if Mode(args.mode) is not Mode.Unconstrained:
        raise UsageError("denoise solves the unconstrained problem; --mode must be unconstrained")
    try:
        rows = run_denoise_benchmark(n, m_values, args.s, args.noise, args.trials, methods,
                                     args.seed, args.algo, args.jobs, args.alpha, _options(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "denoise.csv"
    path.write_text(format_denoise_csv(rows, timing=args.timing == "wall"))
    manifest.outputs.append(path.name)
    failures = sum(r.failures for r in rows)
    manifest.parameters["failures"] = failures
    return EXIT_NONCONVERGED if failures else EXIT_OK


COMMANDS = {"recover": cmd_recover, "phase": cmd_phase, "curve": cmd_curve, "denoise": cmd_denoise}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config is not None:
            args = _apply_config(parser, argv, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = RunManifest(args.command, _parameters(args), args.seed, started_at=_now())
    try:
        code = COMMANDS[args.command](args, manifest)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    manifest.finished_at = _now()
    manifest.exit_code = code
    if code != EXIT_INPUT:
        args.out.mkdir(parents=True, exist_ok=True)
        manifest.outputs.append("manifest.json")
        manifest.write(args.out / "manifest.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
