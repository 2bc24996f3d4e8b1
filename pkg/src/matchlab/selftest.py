"""Invariant checks for the kernels, run by ``matchlab kernel-selftest``.

Each check returns a :class:`Check`; the suite passes iff every check does.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
import statsmodels.api as sm

from .errors import ConfigError
from .geometry import Domain, quadrature_grid, sample_uniform
from .heatkernel import (FrequencyLattice, heat_kernel, heat_kernel_images, heat_weights,
                         q_gradient_energy, q_weights, trace_deficit, trace_deficit_images)
from .rng import make_rng

BACKENDS = ("auto", "spectral", "images")

# sup over t in [1e-5, 1e-1] of |Σ e^{-2λt}/λ - |log t|/(4π)|, fitted once on
# a 9-point logarithmic grid (observed 0.328 and 0.154) and frozen here
ENERGY_LOG_CONSTANT = {Domain.TORUS2: 0.35, Domain.SQUARE2: 0.20}

SQRT_FIT_TIMES = (1e-2, 1e-3, 1e-4)
PROP_TIMES = (1e-4, 1e-3, 1e-2)


@dataclass
class Check:
    name: str
    ok: bool
    value: float = math.nan
    threshold: float = math.nan
    detail: dict = field(default_factory=dict)
    skipped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _skip(name: str, reason: str) -> Check:
    return Check(name, True, detail={"reason": reason}, skipped=True)


def _times(tmin: float, tmax: float, count: int = 5) -> np.ndarray:
    return np.geomspace(tmin, tmax, count) if tmax > tmin else np.array([tmin])


def _kernel(backend: str, domain: Domain, t: float, x, y):
    if backend == "images" or (backend == "auto" and t < 1 / (4 * math.pi ** 2)):
        return heat_kernel_images(domain, t, x, y)
    return heat_kernel(FrequencyLattice.for_time(domain, t), t, x, y)


def check_orthonormal(domain: Domain, pairs: int = 200, seed: int = 0) -> Check:
    lat = FrequencyLattice.for_time(domain, 0.05)
    pts, w = quadrature_grid(domain, 128 ** domain.dim)
    B = lat.basis(pts)
    rng = make_rng(seed, 1)
    idx = rng.integers(0, len(lat), size=(pairs, 2))
    idx[: min(len(lat), pairs // 4), 1] = idx[: min(len(lat), pairs // 4), 0]
    gram = np.einsum("n,ni,ni->i", w, np.conj(B[:, idx[:, 0]]), B[:, idx[:, 1]])
    err = float(np.max(np.abs(gram - (idx[:, 0] == idx[:, 1]))))
    return Check("basis_orthonormal", err <= 1e-8, err, 1e-8, {"modes": len(lat), "pairs": pairs})


def check_backend_agreement(domain: Domain, tmin: float, tmax: float, seed: int = 0) -> Check:
    hi = min(tmax, 1.0)
    lo = max(tmin, 1e-4)
    if lo > hi:
        return _skip("backend_agreement", "no overlap with the images range (0, 1]")
    rng = make_rng(seed, 2)
    x = sample_uniform(domain, rng, 12)
    y = np.concatenate([x[:4], sample_uniform(domain, rng, 8)])
    worst = 0.0
    for t in _times(lo, hi):
        lat = FrequencyLattice.for_time(domain, t)
        a = heat_kernel(lat, t, x, y)
        b = heat_kernel_images(domain, t, x, y)
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))))
    return Check("backend_agreement", worst <= 1e-10, worst, 1e-10, {"t_range": [lo, hi]})


def check_semigroup(domain: Domain, backend: str, tmin: float, tmax: float, seed: int = 0) -> Check:
    t = min(max(0.01, tmin), tmax / 2)
    rng = make_rng(seed, 3)
    x = sample_uniform(domain, rng, 3)
    y = sample_uniform(domain, rng, 3)
    z, w = quadrature_grid(domain, 96 ** domain.dim)
    left = _kernel(backend, domain, t, x[:, None, :], z[None, :, :])
    right = _kernel(backend, domain, t, z[None, :, :], y[:, None, :])
    composed = np.einsum("az,bz,z->ab", left, right, w)
    direct = _kernel(backend, domain, 2 * t, x[:, None, :], y[None, :, :])
    err = float(np.max(np.abs(composed - direct)))
    return Check("semigroup", err <= 1e-8, err, 1e-8, {"t": t, "s": t})


def check_diagonal(domain: Domain, backend: str, tmin: float, tmax: float, seed: int = 0) -> Check:
    rng = make_rng(seed, 4)
    x = sample_uniform(domain, rng, 16)
    worst = math.inf
    for t in _times(tmin, tmax):
        worst = min(worst, float(np.min(_kernel(backend, domain, t, x, x))))
    return Check("diagonal_lower_bound", worst >= 1 - 1e-12, worst, 1.0)


def check_q_identity(domain: Domain, tmin: float, tmax: float) -> Check:
    worst = 0.0
    for t in _times(max(tmin, 1e-3), max(tmax, 1e-3), 3):
        lat = FrequencyLattice.for_time(domain, t)
        lhs = lat.lam * q_weights(lat, t)
        rhs = heat_weights(lat, t)
        rhs[0] = 0.0
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(rhs, 1e-300))))
    return Check("q_poisson_identity", worst <= 4e-16, worst, 4e-16, {"kind": "relative, per coefficient"})


def trace_sqrt_fit(domain: Domain, times=SQRT_FIT_TIMES) -> dict:
    """Fit ``t * trace_deficit(t) - 1/(4π) = c sqrt(t)`` through the origin."""
    ts = np.asarray(times, dtype=float)
    resid = np.array([t * trace_deficit(FrequencyLattice.for_time(domain, t), t) for t in ts]) - 1 / (4 * math.pi)
    fit = sm.OLS(resid, np.sqrt(ts)).fit()
    two = sm.OLS(resid, np.column_stack([np.sqrt(ts), ts])).fit()
    return {"c": float(fit.params[0]), "c_se": float(fit.bse[0]), "r2": float(fit.rsquared),
            "c_two_term": float(two.params[0]), "residuals": resid.tolist(), "times": ts.tolist()}


def check_trace(domain: Domain, tmin: float, tmax: float) -> list[Check]:
    out = []
    lo = max(tmin, 1e-4)
    worst = 0.0
    for t in _times(lo, max(tmax, lo), 4):
        lat = FrequencyLattice.for_time(domain, t)
        a, b = trace_deficit(lat, t), trace_deficit_images(domain, t)
        worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    out.append(Check("trace_dual_agreement", worst <= 1e-10, worst, 1e-10))
    if domain is Domain.TORUS2:
        t = 1e-4
        val = trace_deficit(FrequencyLattice.for_time(domain, t), t)
        dev = abs(4 * math.pi * t * (val + 1) - 1)
        out.append(Check("trace_leading_term", dev < 1e-6, dev, 1e-6, {"t": t, "trace_deficit": val}))
    elif domain is Domain.SQUARE2:
        fit = trace_sqrt_fit(domain)
        out.append(Check("trace_sqrt_residual", fit["r2"] > 0.99, fit["r2"], 0.99, fit))
    else:
        out.append(_skip("trace_leading_term", "two-dimensional law"))
    return out


def prop_integral(domain: Domain, t: float) -> tuple[float, float]:
    """Spectral sum ``Σ e^{-2λt}/λ`` and the quadrature of ``∫_{2t}^∞`` of the trace."""
    lat = FrequencyLattice.for_time(domain, t)
    total = q_gradient_energy(lat, t)
    switch = max(0.05, 2 * t)
    lat_far = FrequencyLattice.for_time(domain, switch)
    near, _ = quad(lambda s: trace_deficit_images(domain, s), 2 * t, switch, epsabs=1e-13, epsrel=1e-13, limit=400)
    far, _ = quad(lambda s: trace_deficit(lat_far, s), switch, math.inf, epsabs=1e-13, epsrel=1e-13, limit=400)
    return total, near + far


def energy_log_deviation(domain: Domain, times) -> np.ndarray:
    return np.array([q_gradient_energy(FrequencyLattice.for_time(domain, t), t) - abs(math.log(t)) / (4 * math.pi)
                     for t in times])


def check_prop_identity(domain: Domain, tmin: float, tmax: float) -> list[Check]:
    ts = [t for t in PROP_TIMES if tmin <= t <= tmax] or [min(max(1e-3, tmin), tmax)]
    errs = {}
    for t in ts:
        total, integral = prop_integral(domain, t)
        errs[t] = abs(total - integral)
    worst = max(errs.values())
    out = [Check("energy_trace_integral", worst <= 1e-8, worst, 1e-8, {str(k): v for k, v in errs.items()})]
    if domain in ENERGY_LOG_CONSTANT:
        dev = float(np.max(np.abs(energy_log_deviation(domain, np.logspace(-5, -1, 17)))))
        C = ENERGY_LOG_CONSTANT[domain]
        out.append(Check("energy_log_bound", dev <= C, dev, C, {"t_range": [1e-5, 1e-1]}))
    else:
        out.append(_skip("energy_log_bound", "two-dimensional law"))
    return out


def run_selftest(domain, tmin: float = 1e-4, tmax: float = 1.0, backend: str = "auto",
                 seed: int = 0) -> list[Check]:
    domain = Domain.parse(domain)
    if backend not in BACKENDS:
        raise ConfigError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if not 0 < tmin <= tmax:
        raise ConfigError(f"need 0 < tmin <= tmax, got tmin={tmin}, tmax={tmax}")
    if backend == "images" and tmax > 1:
        raise ConfigError(f"the images backend supports t <= 1, got tmax={tmax}")
    checks = [check_orthonormal(domain, seed=seed),
              check_backend_agreement(domain, tmin, tmax, seed),
              check_semigroup(domain, backend, tmin, tmax, seed),
              check_diagonal(domain, backend, tmin, tmax, seed),
              check_q_identity(domain, tmin, tmax)]
    checks += check_trace(domain, tmin, tmax)
    checks += check_prop_identity(domain, tmin, tmax)
    return checks


def failed(checks) -> Optional[list[str]]:
    bad = [c.name for c in checks if not c.ok]
    return bad or None
