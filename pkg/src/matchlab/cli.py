"""Command-line entry point: ``matchlab {simulate,kernel-selftest,fit,report}``.

Exit codes: 0 success, 1 configuration error, 2 partial trial failure,
3 self-test failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import ConfigError
from .fitting import BIPARTITE_CONSTANT, interpolation_constant
from .geometry import Domain
from .rng import make_rng
from .selftest import BACKENDS, failed, run_selftest

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_SELFTEST = 0, 1, 2, 3
MODES = ("bipartite", "semidiscrete", "event", "contractivity", "oned")
DOMAINS = tuple(d.value for d in Domain)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="matchlab", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a Monte Carlo batch", formatter_class=fmt)
    sim.add_argument("--config", help="flat key=value file of defaults; flags win")
    sim.add_argument("--mode", choices=MODES, default="bipartite")
    sim.add_argument("--domain", choices=DOMAINS, default="torus")
    sim.add_argument("--n", type=_int_list, default=[100], help="comma-separated sample sizes")
    sim.add_argument("--trials", type=int, default=10)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--t", type=float, default=None, help="explicit smoothing time (default: gamma rule)")
    sim.add_argument("--gamma", type=float, default=1.0, help="t = gamma log(n)^3 / n")
    sim.add_argument("--q", type=int, default=1, help="replication ratio for semidiscrete mode")
    sim.add_argument("--xi", type=float, default=None, help="event threshold (default 1/log n)")
    sim.add_argument("--grid-factor", type=int, default=0,
                     help="exponential coupling on a grid of grid_factor*n nodes (0 = off)")
    sim.add_argument("--alphas", type=_float_list, default=None,
                     help="contractivity: t = alpha/n values (default 8,16,32,64 x log n)")
    sim.add_argument("--m", type=int, default=4, help="contractivity replication")
    sim.add_argument("--max-assignment", type=int, default=10_000, help="largest assignment size allowed")
    sim.add_argument("--workers", type=int, default=None, help="parallel workers (env MATCHLAB_WORKERS)")
    sim.add_argument("--out", help="output prefix; writes PREFIX.csv and PREFIX.json")
    sim.set_defaults(func=cmd_simulate, usage=sim.format_usage)
    parser.simulate_parser = sim

    st = sub.add_parser("kernel-selftest", help="run the kernel invariant checks", formatter_class=fmt)
    st.add_argument("--domain", choices=DOMAINS, default="torus")
    st.add_argument("--tmin", type=float, default=1e-4)
    st.add_argument("--tmax", type=float, default=1.0)
    st.add_argument("--backend", choices=BACKENDS, default="auto")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_kernel_selftest)

    fit = sub.add_parser("fit", help="fit a log(n)/n + b/n to a trial CSV", formatter_class=fmt)
    fit.add_argument("--in", dest="inp", required=True, help="trial CSV")
    fit.add_argument("--target", choices=("bipartite", "semidiscrete"), default="bipartite")
    fit.add_argument("--q", type=int, default=None,
                     help="replication ratio for the semidiscrete target (default: the q -> inf limit)")
    fit.set_defaults(func=cmd_fit)

    rep = sub.add_parser("report", help="per-n table of a trial CSV", formatter_class=fmt)
    rep.add_argument("--in", dest="inp", required=True, help="trial CSV")
    rep.add_argument("--out", help="also write the table as JSON here")
    rep.set_defaults(func=cmd_report)
    return parser


# -- config file -------------------------------------------------------------

def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse twice: config values become defaults, then the flags override them."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sim = parser.simulate_parser
        known = {a.dest: a for a in sim._actions}
        defaults = {}
        for key, raw in read_config_file(args.config).items():
            if key not in known or key in ("config", "help"):
                raise ConfigError(f"{args.config}: unknown key {key!r}")
            action = known[key]
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"{args.config}: bad value for {key}: {exc}") from None
            if action.choices and value not in action.choices:
                raise ConfigError(f"{args.config}: {key} must be one of {list(action.choices)}")
            defaults[key] = value
        sim.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# -- commands ------------------------------------------------------------------

def _write_outputs(prefix: str, records, summary) -> None:
    path = Path(prefix)
    path.parent.mkdir(parents=True, exist_ok=True)
    ex.write_csv(f"{prefix}.csv", records)
    ex.write_json(f"{prefix}.json", summary)


def _oned_records(args):
    """Interval matching by sorting; same streams as ``experiments.one_d_oracle``."""
    records = []
    for n in args.n:
        for k in range(args.trials):
            rng = make_rng(args.seed, n, k)
            X, Y = np.sort(rng.random(n)), np.sort(rng.random(n))
            records.append(ex.TrialRecord(trial=k, n=n, t=math.nan, seed=args.seed,
                                          cost_bip=float(np.mean((X - Y) ** 2))))
    per_n = []
    for row in ex.per_n_stats(records, "cost_bip"):
        row["expected"] = ex.one_d_expected(row["n"])
        row["z"] = (row["mean"] - row["expected"]) / row["se"] if row["se"] else math.nan
        per_n.append(row)
    return records, {"mode": "oned", "seed": args.seed, "trials": args.trials, "per_n": per_n}


def cmd_simulate(args) -> int:
    workers = ex.resolve_workers(args.workers)
    if args.mode == "oned":
        records, summary = _oned_records(args)
        if args.out:
            _write_outputs(args.out, records, summary)
        json.dump(summary, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return EXIT_OK
    if not args.out:
        raise ConfigError("--out is required for this mode")
    if args.mode == "contractivity":
        if len(args.n) != 1:
            raise ConfigError("contractivity takes a single --n")
        n = args.n[0]
        alphas = args.alphas or ex.default_alphas(n)
        rows, meta = ex.run_contractivity(n, alphas, args.trials, m=args.m, seed=args.seed,
                                          domain=args.domain, budget=args.max_assignment, workers=workers)
        summary = dict(meta, rows=[dataclasses.asdict(r) for r in rows])
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        ex.write_json(f"{args.out}.json", summary)
        print(json.dumps(summary, indent=2, default=float))
        return EXIT_OK
    config = ex.ExperimentConfig(mode=args.mode, domain=args.domain, n_list=tuple(args.n), trials=args.trials,
                                 seed=args.seed, t=args.t, gamma=args.gamma, q=args.q, xi=args.xi,
                                 grid_factor=args.grid_factor, max_assignment=args.max_assignment,
                                 workers=workers, out=args.out)
    if args.mode == "bipartite":
        records = ex.run_bipartite(config)
        summary = ex.summarize(records, config)
    elif args.mode == "semidiscrete":
        records = ex.run_semidiscrete(config)
        summary = ex.summarize(records, config)
    else:
        rows, records = ex.run_event_probability(config)
        summary = ex.summarize(records, config)
        summary["event_table"] = [dataclasses.asdict(r) for r in rows]
    _write_outputs(args.out, records, summary)
    n_failed = sum(r.failed for r in records)
    print(f"wrote {len(records)} records to {args.out}.csv ({n_failed} failed)")
    if n_failed:
        print(f"{n_failed} of {len(records)} trials failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_kernel_selftest(args) -> int:
    checks = run_selftest(args.domain, tmin=args.tmin, tmax=args.tmax, backend=args.backend, seed=args.seed)
    for c in checks:
        print(json.dumps(c.to_dict(), default=float, allow_nan=True))
    bad = failed(checks)
    if bad:
        print(f"failed checks: {', '.join(bad)}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


def cmd_fit(args) -> int:
    records = ex.read_csv(args.inp)
    column = ex.COST_COLUMN[args.target]
    usable = [r for r in records if math.isfinite(getattr(r, column))]
    if not usable:
        raise ConfigError(f"{args.inp}: column '{column}' holds no values")
    fit = ex.fit_records(usable, column)
    if args.target == "bipartite":
        target = BIPARTITE_CONSTANT
    else:
        target = interpolation_constant(args.q) if args.q else interpolation_constant(math.inf)
    out = dict(fit.to_dict(), target=target, rel_dev=abs(fit.a - target) / target,
               excluded_failed=len(records) - len(usable))
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    records = ex.read_csv(args.inp)
    table = {col: ex.per_n_stats(records, col) for col in ("cost_bip", "cost_semi", "cost_exp", "energy")
             if any(math.isfinite(getattr(r, col)) for r in records)}
    if args.out:
        ex.write_json(args.out, table)
    for col, rows in table.items():
        print(f"# {col}")
        print("n,trials,failed,mean,se,mean*n/log(n)")
        for r in rows:
            scaled = r["mean"] * r["n"] / math.log(r["n"]) if r["n"] > 1 else math.nan
            print(f"{r['n']},{r['trials']},{r['failed']},{r['mean']:.6g},{r['se']:.3g},{scaled:.6g}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = None
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        usage = getattr(args, "usage", None)
        if usage is not None:
            sys.stderr.write(usage())
        print(f"matchlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
