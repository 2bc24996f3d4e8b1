"""Monte Carlo harness for the matching-cost laws.

Every trial is a pure function of ``(config, n, trial index)``: its random
stream is keyed on those integers, so records do not depend on the worker
count and reruns reproduce them bit for bit (apart from ``wall_ms``).
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .fitting import (FitResult, fit_leading_constant, interpolation_constant, mean_and_se,
                      wilson_interval, BIPARTITE_CONSTANT)
from .geometry import Domain, fold, quadrature_grid, sample_uniform
from .heatkernel import FrequencyLattice, q_gradient_energy
from .potential import EventCheckConfig, build_potential, certified_sup_hessian, dirichlet_energy
from .rng import make_rng
from .transport import bipartite_cost, exp_pushforward_cost, replicated_cost

log = logging.getLogger(__name__)

CSV_COLUMNS = ("trial", "n", "t", "seed", "energy", "sup_hess", "event_ok",
               "cost_bip", "cost_semi", "cost_exp", "wall_ms")


@dataclass(frozen=True)
class ExperimentConfig:
    """Reproducible description of one batch of trials.

    ``t`` fixes the smoothing time; when it is ``None`` the rule
    ``t = gamma * log(n)^3 / n`` applies.  ``xi=None`` means ``1/log n``.
    ``grid_factor > 0`` adds the exponential coupling on a grid of
    ``grid_factor * n`` nodes.
    """

    mode: str = "bipartite"
    domain: Domain = Domain.TORUS2
    n_list: tuple = (100,)
    trials: int = 10
    seed: int = 0
    t: Optional[float] = None
    gamma: float = 1.0
    q: int = 1
    xi: Optional[float] = None
    grid_factor: int = 0
    tol: float = 1e-12
    max_assignment: int = 10_000
    workers: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not self.n_list or min(self.n_list) < 1:
            raise ConfigError(f"n values must be >= 1, got {self.n_list}")
        if self.t is None and not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.t is not None and not self.t > 0:
            raise ConfigError(f"t must be positive, got {self.t}")
        if int(self.q) != self.q or self.q < 1:
            raise ConfigError(f"q must be a positive integer, got {self.q}")
        if self.xi is not None and not self.xi > 0:
            raise ConfigError(f"xi must be positive, got {self.xi}")
        if self.grid_factor < 0:
            raise ConfigError("grid_factor must be >= 0")

    def time_for(self, n: int) -> float:
        t = self.t if self.t is not None else self.gamma * math.log(n) ** 3 / n
        if not t > 0:
            raise ConfigError(f"gamma rule gives t = {t:g} at n = {n}; pass an explicit t")
        return float(t)

    def xi_for(self, n: int) -> float:
        if self.xi is not None:
            return float(self.xi)
        return 1.0 / math.log(n) if n > 2 else 1.0

    def metadata(self) -> dict:
        d = dataclasses.asdict(self)
        d["domain"] = self.domain.value
        d["n_list"] = list(self.n_list)
        return d


@dataclass
class TrialRecord:
    trial: int
    n: int
    t: float
    seed: int
    energy: float = math.nan
    sup_hess: float = math.nan
    event_ok: Optional[bool] = None
    cost_bip: float = math.nan
    cost_semi: float = math.nan
    cost_exp: float = math.nan
    wall_ms: int = 0
    grid_max: float = math.nan
    exp_cost: float = math.nan
    assignment_cost: float = math.nan
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def csv_row(self) -> list:
        def num(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
        ev = "" if self.event_ok is None else str(int(self.event_ok))
        return [str(self.trial), str(self.n), num(self.t), str(self.seed), num(self.energy),
                num(self.sup_hess), ev, num(self.cost_bip), num(self.cost_semi), num(self.cost_exp),
                str(int(self.wall_ms))]


@functools.lru_cache(maxsize=32)
def _lattice(domain_value: str, t: float, tol: float) -> FrequencyLattice:
    return FrequencyLattice.for_time(domain_value, t, tol)


def lattice_for(config: ExperimentConfig, t: float) -> FrequencyLattice:
    return _lattice(config.domain.value, t, config.tol)


def _run_jobs(fn, jobs: Sequence, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _guarded(body):
    """Run a trial body, turning any failure into a marked record."""

    @functools.wraps(body)
    def wrapper(job):
        config, n, trial = job
        start = time.perf_counter()
        rec = TrialRecord(trial=trial, n=n, t=math.nan, seed=config.seed)
        try:
            rec.t = config.time_for(n)
            body(config, n, trial, rec)
        except Exception as exc:  # noqa: BLE001 - a failed trial must not stop the run
            rec.error = f"{type(exc).__name__}: {exc}"
            log.warning("trial %d (n=%d) failed: %s", trial, n, rec.error)
        rec.wall_ms = int(round(1000 * (time.perf_counter() - start)))
        return rec

    return wrapper


def _event(config: ExperimentConfig, n: int, *fields_):
    cfg = EventCheckConfig(xi=config.xi_for(n))
    checks = [certified_sup_hessian(f, cfg) for f in fields_]
    return (max(c.certified for c in checks), max(c.grid_max for c in checks),
            all(c.event for c in checks))


@_guarded
def _bipartite_trial(config, n, trial, rec):
    rng = make_rng(config.seed, n, trial)
    X = sample_uniform(config.domain, rng, n)
    Y = sample_uniform(config.domain, rng, n)
    lat = lattice_for(config, rec.t)
    f0 = build_potential(lat, X, rec.t)
    f1 = build_potential(lat, Y, rec.t)
    rec.energy = dirichlet_energy(f1 - f0)
    rec.sup_hess, rec.grid_max, rec.event_ok = _event(config, n, f0, f1)
    rec.cost_bip = bipartite_cost(config.domain, X, Y).cost


@_guarded
def _semidiscrete_trial(config, n, trial, rec):
    rng = make_rng(config.seed, n, trial)
    X = sample_uniform(config.domain, rng, n)
    Y = sample_uniform(config.domain, rng, config.q * n)
    lat = lattice_for(config, rec.t)
    f = build_potential(lat, X, rec.t)
    rec.energy = dirichlet_energy(f)
    rec.sup_hess, rec.grid_max, rec.event_ok = _event(config, n, f)
    rec.cost_semi = replicated_cost(config.domain, X, Y, config.q)
    if config.q == 1:
        rec.cost_bip = rec.cost_semi
    if config.grid_factor:
        grid = quadrature_grid(config.domain, config.grid_factor * n)
        ec = exp_pushforward_cost(config.domain, f, X, grid)
        rec.exp_cost, rec.assignment_cost, rec.cost_exp = ec.exp_cost, ec.assignment_cost, ec.end_to_end


@_guarded
def _event_trial(config, n, trial, rec):
    # shared stream across n: common random numbers for the decay comparison
    rng = make_rng(config.seed, trial)
    X = sample_uniform(config.domain, rng, n)
    f = build_potential(lattice_for(config, rec.t), X, rec.t)
    rec.energy = dirichlet_energy(f)
    rec.sup_hess, rec.grid_max, rec.event_ok = _event(config, n, f)


def _check_budget(config: ExperimentConfig, size_per_n) -> None:
    worst = max(size_per_n(n) for n in config.n_list)
    if worst > config.max_assignment:
        raise ConfigError(f"assignment size {worst} exceeds the budget {config.max_assignment}; "
                          f"raise max_assignment to at least {worst}")


def _jobs(config: ExperimentConfig) -> list:
    return [(config, n, trial) for n in config.n_list for trial in range(config.trials)]


def run_bipartite(config: ExperimentConfig) -> list[TrialRecord]:
    _check_budget(config, lambda n: n)
    return _run_jobs(_bipartite_trial, _jobs(config), config.workers)


def run_semidiscrete(config: ExperimentConfig) -> list[TrialRecord]:
    _check_budget(config, lambda n: max(config.q, config.grid_factor) * n)
    return _run_jobs(_semidiscrete_trial, _jobs(config), config.workers)


@dataclass(frozen=True)
class EventRow:
    n: int
    t: float
    xi: float
    trials: int
    failures: int
    frequency: float
    ci_low: float
    ci_high: float
    grid_failures: int
    mean_sup_hess: float


def run_event_probability(config: ExperimentConfig) -> tuple[list[EventRow], list[TrialRecord]]:
    """Frequency of certified-event failure per ``n`` with Wilson intervals.

    ``grid_failures`` counts trials whose plain grid maximum already reaches
    ``xi``; the certified count is an upper bound on the true failure count.
    """
    records = _run_jobs(_event_trial, _jobs(config), config.workers)
    rows = []
    for n in config.n_list:
        rs = [r for r in records if r.n == n and not r.failed]
        xi = config.xi_for(n)
        fails = sum(1 for r in rs if not r.event_ok)
        lo, hi = wilson_interval(fails, len(rs)) if rs else (math.nan, math.nan)
        rows.append(EventRow(n=n, t=config.time_for(n), xi=xi, trials=len(rs), failures=fails,
                             frequency=fails / len(rs) if rs else math.nan, ci_low=lo, ci_high=hi,
                             grid_failures=sum(1 for r in rs if r.grid_max >= xi),
                             mean_sup_hess=float(np.mean([r.sup_hess for r in rs])) if rs else math.nan))
    return rows, records


@dataclass(frozen=True)
class ContractivityRow:
    alpha: float
    t: float
    mean: float
    se: float


def _contractivity_trial(job):
    domain, n, t, m, seed, trial = job
    rng = make_rng(seed, trial)
    X = sample_uniform(domain, rng, n)
    G = rng.standard_normal((m * n, domain.dim))
    evolved = fold(domain, np.repeat(X, m, axis=0) + math.sqrt(2.0 * t) * G)
    return replicated_cost(domain, X, evolved, m)


def run_contractivity(n: int, alphas, trials: int, m: int = 4, seed: int = 0,
                      domain=Domain.TORUS2, budget: int = 10_000, workers: int = 1):
    """Proxy ``W2^2(μ^n, μ^{n,t})`` at ``t = α/n`` for each α.

    ``μ^{n,t}`` is represented by ``m`` heat-evolved copies ``X_i + √(2t) G``
    of every point, matched against the ``m``-fold replicated ``X``.  The
    same noise is reused across α.  Returns ``(rows, metadata)``.
    """
    domain = Domain.parse(domain)
    if m * n > budget:
        raise ConfigError(f"assignment size {m * n} exceeds the budget {budget}; raise it to at least {m * n}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rows = []
    for alpha in alphas:
        t = float(alpha) / n
        costs = _run_jobs(_contractivity_trial, [(domain, n, t, m, seed, k) for k in range(trials)], workers)
        mean, se = mean_and_se(costs)
        rows.append(ContractivityRow(alpha=float(alpha), t=t, mean=mean, se=se))
    meta = {"n": n, "m": m, "trials": trials, "seed": seed, "domain": domain.value,
            "alpha_over_log_n": [float(a) / math.log(n) for a in alphas],
            "note": "the constant in alpha >= C log n is unspecified; default grid starts at 8 log n"}
    return rows, meta


def default_alphas(n: int) -> list[float]:
    return [c * math.log(n) for c in (8, 16, 32, 64)]


def one_d_oracle(n: int, trials: int, seed: int = 0) -> tuple[float, float]:
    """Mean and standard error of the interval matching cost (sorted pairing)."""
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be >= 1")
    costs = np.empty(trials)
    for k in range(trials):
        rng = make_rng(seed, n, k)
        X = np.sort(rng.random(n))
        Y = np.sort(rng.random(n))
        costs[k] = np.mean((X - Y) ** 2)
    mean, se = mean_and_se(costs)
    return mean, se


def one_d_expected(n: int) -> float:
    return 1.0 / (3.0 * (n + 1))


# -- aggregation and files ------------------------------------------------

COST_COLUMN = {"bipartite": "cost_bip", "semidiscrete": "cost_semi"}


def per_n_stats(records: Sequence[TrialRecord], column: str) -> list[dict]:
    out = []
    for n in sorted({r.n for r in records}):
        rs = [r for r in records if r.n == n]
        ok = [getattr(r, column) for r in rs if not r.failed]
        mean, se = mean_and_se(ok)
        out.append({"n": n, "trials": len(rs), "failed": sum(r.failed for r in rs), "mean": mean, "se": se})
    return out


def fit_records(records: Sequence[TrialRecord], column: str) -> FitResult:
    stats = [s for s in per_n_stats(records, column) if math.isfinite(s["mean"])]
    ses = [s["se"] for s in stats]
    if not all(math.isfinite(v) and v > 0 for v in ses):
        ses = None
    return fit_leading_constant([s["n"] for s in stats], [s["mean"] for s in stats], ses)


def summarize(records: Sequence[TrialRecord], config: ExperimentConfig) -> dict:
    summary = {"config": config.metadata(), "failed_trials": sum(r.failed for r in records), "per_n": []}
    for n in sorted({r.n for r in records}):
        rs = [r for r in records if r.n == n and not r.failed]
        entry = {"n": n, "trials": sum(1 for r in records if r.n == n), "failed": sum(1 for r in records if r.n == n and r.failed)}
        if rs:
            t = config.time_for(n)
            entry["t"] = t
            for col in ("energy", "cost_bip", "cost_semi", "cost_exp", "sup_hess"):
                vals = [getattr(r, col) for r in rs]
                if np.any(np.isfinite(vals)):
                    mean, se = mean_and_se(vals)
                    entry[col] = {"mean": mean, "se": se}
            factor = 2.0 if config.mode == "bipartite" else 1.0
            entry["energy_closed_form"] = factor * q_gradient_energy(lattice_for(config, t), t) / n
            entry["event_frequency"] = sum(1 for r in rs if r.event_ok) / len(rs)
        summary["per_n"].append(entry)
    column = COST_COLUMN.get(config.mode)
    if column and len({r.n for r in records if not r.failed}) >= 3:
        fit = fit_records(records, column)
        target = BIPARTITE_CONSTANT if config.mode == "bipartite" else interpolation_constant(config.q)
        summary["fit"] = dict(fit.to_dict(), target=target, rel_dev=abs(fit.a - target) / target)
    summary["errors"] = [{"n": r.n, "trial": r.trial, "error": r.error} for r in records if r.failed]
    return summary


def write_csv(path, records: Sequence[TrialRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())


class SchemaError(ConfigError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


def read_csv(path) -> list[TrialRecord]:
    """Parse a trial CSV, rejecting any deviation from the fixed header."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected header {','.join(CSV_COLUMNS)}")
        for i, col in enumerate(CSV_COLUMNS):
            if i >= len(header) or header[i] != col:
                raise SchemaError(f"{path}: missing or misplaced column '{col}'", column=col)
        if len(header) != len(CSV_COLUMNS):
            raise SchemaError(f"{path}: unexpected column '{header[len(CSV_COLUMNS)]}'", column=header[len(CSV_COLUMNS)])
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            vals = dict(zip(CSV_COLUMNS, row))
            try:
                rec = TrialRecord(trial=int(vals["trial"]), n=int(vals["n"]), t=_num(vals["t"]),
                                  seed=int(vals["seed"]), energy=_num(vals["energy"]),
                                  sup_hess=_num(vals["sup_hess"]),
                                  event_ok=None if vals["event_ok"] == "" else bool(int(vals["event_ok"])),
                                  cost_bip=_num(vals["cost_bip"]), cost_semi=_num(vals["cost_semi"]),
                                  cost_exp=_num(vals["cost_exp"]), wall_ms=int(vals["wall_ms"] or 0))
            except ValueError as exc:
                bad = next((c for c in CSV_COLUMNS if not _parses(c, vals[c])), None)
                raise SchemaError(f"{path}:{lineno}: bad value in column '{bad}': {exc}", column=bad) from None
            records.append(rec)
    if not records:
        raise SchemaError(f"{path}: no data rows")
    return records


def _num(s: str) -> float:
    return math.nan if s == "" else float(s)


def _parses(col: str, s: str) -> bool:
    try:
        if col in ("trial", "n", "seed", "wall_ms"):
            int(s or 0)
        elif col == "event_ok":
            s == "" or int(s)
        else:
            _num(s)
        return True
    except ValueError:
        return False


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")


def _json_default(o):
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def resolve_workers(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("MATCHLAB_WORKERS")
    return max(1, int(env)) if env else 1
