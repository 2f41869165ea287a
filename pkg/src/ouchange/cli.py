"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or domain error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

from . import __version__, asymptotics
from .errors import DomainError, OUChangeError
from .experiments import STUDIES
from .inference import CandidateGrid, mle, run_test
from .io import (
    basis_from_config,
    dumps,
    experiment_from_config,
    model_from_config,
    read_json,
    read_path_csv,
    write_json,
    write_path_csv,
)
from .model import DriftParams
from .simulate import ChangeSpec, simulate_euler, simulate_exact, simulate_with_change
from .suffstats import DEFAULT_RULE, RULES, accumulate, estimate_sigma_sq

EXIT_USAGE = 1


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _provenance(config: dict, seed=None) -> dict:
    return {"tool": {"name": "ouchange", "version": __version__}, "config": config, "seed": seed}


def _echo(config: dict) -> None:
    print("resolved config: " + json.dumps(config, sort_keys=True), file=sys.stderr)


def _emit(obj: dict, out) -> None:
    if out:
        write_json(obj, out)
    else:
        sys.stdout.write(dumps(obj))


def cmd_simulate(args) -> int:
    cfg = read_json(args.config)
    model = model_from_config(cfg)
    resolved = {"model": model.describe(), "T": args.T, "dt": args.dt, "scheme": args.scheme, "change": None}
    if args.change:
        vals = args.change
        if len(vals) != model.basis.p + 2:
            raise UsageError(f"--change needs s followed by {model.basis.p} mu values and alpha")
        post = DriftParams(tuple(vals[1:-1]), vals[-1])
        change = ChangeSpec(model.theta, post, vals[0])
        resolved["change"] = {"s": change.s, "theta_post": list(post.vector)}
        _echo(resolved)
        path = simulate_with_change(model, change, args.T, args.dt, args.seed, args.scheme)
    else:
        _echo(resolved)
        sim = simulate_exact if args.scheme == "exact" else simulate_euler
        path = sim(model, args.T, args.dt, args.seed)
    sidecar = write_path_csv(path, args.out)
    meta = read_json(sidecar)
    meta["whole_periods"] = path.whole_periods
    meta["provenance"] = _provenance(resolved, args.seed)
    write_json(meta, sidecar)
    return 0


def _load_path(args):
    basis = basis_from_config(read_json(args.basis))
    return read_path_csv(args.path, basis.period), basis


def cmd_estimate(args) -> int:
    path, basis = _load_path(args)
    segment = tuple(args.segment) if args.segment else (0.0, path.T)
    if len(segment) != 2:
        raise UsageError("--segment expects a,b")
    resolved = {"path": str(args.path), "basis": basis.describe(), "segment": list(segment), "sigma": args.sigma,
                "rule": args.rule}
    _echo(resolved)
    stats = accumulate(path, basis, segment, args.rule)
    sigma = args.sigma if args.sigma is not None else math.sqrt(estimate_sigma_sq(path))
    fit = mle(stats, sigma)
    warnings = []
    if fit.alpha_nonpositive:
        warnings.append("alpha_hat is not positive; the estimate lies outside the parameter space")
        print("warning: " + warnings[-1], file=sys.stderr)
    report = fit.to_dict()
    report.update({
        "segment": [stats.t_a, stats.t_b],
        "sigma_used": sigma,
        "sigma_estimated": args.sigma is None,
        "rule": stats.rule,
        "warnings": warnings,
        "provenance": _provenance(resolved, path.seed),
    })
    _emit(report, args.out)
    return 0


def cmd_test(args) -> int:
    path, basis = _load_path(args)
    if args.sigma == "estimate":
        sigma = "estimate"
    else:
        try:
            sigma = float(args.sigma)
        except ValueError:
            raise UsageError(f"--sigma must be a number or 'estimate', got {args.sigma!r}") from None
    table = asymptotics.BridgeQuantileTable.load(args.critvals) if args.critvals else None
    window = (args.s1, args.s2)
    resolved = {
        "path": str(args.path), "basis": basis.describe(), "sigma": args.sigma, "mode": args.mode,
        "window": list(window) if args.mode == "window" else None, "level": args.level,
        "critvals": str(args.critvals) if args.critvals else None,
        "bridge": None if table else {"m": args.cv_grid, "reps": args.cv_reps, "seed": args.cv_seed},
        "stride": args.stride,
        "rule": args.rule,
    }
    _echo(resolved)
    report = run_test(
        path, basis, sigma, args.mode, window, args.level, table, CandidateGrid(stride=args.stride), args.rule,
        bridge_m=args.cv_grid, bridge_reps=args.cv_reps, bridge_seed=args.cv_seed,
        threads=args.threads, cache_dir=args.cache_dir,
    )
    out = report.to_dict()
    out["fit_pre"] = report.fit_pre.to_dict()
    out["fit_post"] = report.fit_post.to_dict()
    out["provenance"] = _provenance(resolved, path.seed)
    _emit(out, args.out)
    return 0


def cmd_critvals(args) -> int:
    levels = args.levels or list(asymptotics.DEFAULT_LEVELS)
    if args.mode == "gumbel":
        if args.T is None:
            raise UsageError("gumbel mode needs --T (and optionally --nu)")
        resolved = {"mode": "gumbel", "p": args.p, "T": args.T, "nu": args.nu, "levels": levels}
        _echo(resolved)
        norm = asymptotics.gumbel_norming(args.T, args.nu, args.p)
        table = {
            "mode": "gumbel", "p": args.p, "T": args.T, "nu": args.nu, "a_T": norm.a_T, "b_T": norm.b_T,
            "quantiles": [
                {"level": lv, "value": norm.a_T * asymptotics.gumbel_quantile(lv) + norm.b_T} for lv in sorted(levels)
            ],
        }
    else:
        resolved = {"mode": "bridge", "p": args.p, "s1": args.s1, "s2": args.s2, "m": args.grid,
                    "reps": args.reps, "seed": args.seed, "levels": levels}
        _echo(resolved)
        tab = asymptotics.simulate_bridge_sup(
            args.p, (args.s1, args.s2), args.grid, args.reps, args.seed, levels, args.threads, args.cache_dir
        )
        table = {"mode": "bridge", **tab.to_dict()}
    table["provenance"] = _provenance(resolved, args.seed if args.mode == "bridge" else None)
    _emit(table, args.out)
    return 0


def cmd_mc(args) -> int:
    raw = read_json(args.config)
    config = experiment_from_config(raw)
    if args.threads is not None:
        config = dataclasses.replace(config, threads=args.threads)
    resolved = config.describe()
    _echo(resolved)
    result = STUDIES[args.study](config)
    out = result.to_dict(include_timing=args.timing)
    out["provenance"] = _provenance(resolved, config.seed)
    _emit(out, args.out)
    if args.timing:
        print(f"elapsed: {result.timing['seconds']:.2f} s", file=sys.stderr)
    return 0


def build_parser() -> Parser:
    parser = Parser(prog="ouchange", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ouchange {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("simulate", help="simulate a path and write CSV + metadata JSON")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--T", required=True, type=float)
    p.add_argument("--dt", required=True, type=float)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--scheme", choices=("exact", "euler"), default="exact")
    p.add_argument("--change", type=_floats, help="s,mu_1,...,mu_p,alpha of the post-change drift")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="drift MLE over a segment")
    p.add_argument("--path", required=True, type=Path)
    p.add_argument("--basis", required=True, type=Path)
    p.add_argument("--segment", type=_floats, help="a,b")
    p.add_argument("--sigma", type=float, help="known sigma for the log-likelihood (default: estimated)")
    p.add_argument("--rule", choices=RULES, default=DEFAULT_RULE, help="discretisation of the dX integrals")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="likelihood-ratio change-point test")
    p.add_argument("--path", required=True, type=Path)
    p.add_argument("--basis", required=True, type=Path)
    p.add_argument("--sigma", required=True, help="known value or 'estimate'")
    p.add_argument("--mode", choices=("window", "full"), default="window")
    p.add_argument("--s1", type=float, default=0.1)
    p.add_argument("--s2", type=float, default=0.9)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--critvals", type=Path, help="bridge quantile table JSON")
    p.add_argument("--cv-grid", type=int, default=1000)
    p.add_argument("--cv-reps", type=int, default=10000)
    p.add_argument("--cv-seed", type=int, default=0)
    p.add_argument("--stride", type=int, help="candidate spacing in grid steps")
    p.add_argument("--rule", choices=RULES, default=DEFAULT_RULE, help="discretisation of the dX integrals")
    p.add_argument("--cache-dir", type=Path)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("critvals", help="tabulate critical values")
    p.add_argument("--mode", choices=("bridge", "gumbel"), required=True)
    p.add_argument("--p", required=True, type=int)
    p.add_argument("--s1", type=float, default=0.1)
    p.add_argument("--s2", type=float, default=0.9)
    p.add_argument("--grid", type=int, default=1000)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--T", type=float)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--levels", type=float, nargs="+", help="quantile probabilities, e.g. 0.95")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-dir", type=Path)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_critvals)

    p = sub.add_parser("mc", help="Monte Carlo studies")
    p.add_argument("study", choices=sorted(STUDIES))
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--threads", type=int)
    p.add_argument("--timing", action="store_true", help="include wall-clock timing in the output")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ouchange: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OUChangeError as exc:
        print(f"ouchange: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"ouchange: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DomainError.exit_code


if __name__ == "__main__":
    sys.exit(main())
