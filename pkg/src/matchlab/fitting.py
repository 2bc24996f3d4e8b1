"""Weighted regression of mean costs against ``a log(n)/n + b/n``."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from statsmodels.stats.proportion import proportion_confint

BIPARTITE_CONSTANT = 1.0 / (2.0 * math.pi)
SEMIDISCRETE_CONSTANT = 1.0 / (4.0 * math.pi)


def interpolation_constant(q: float) -> float:
    """Leading constant for matching ``n`` against ``q n`` points."""
    return SEMIDISCRETE_CONSTANT * (1.0 + 1.0 / q)


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    se_a: float
    se_b: float
    r2: float
    n_values: tuple
    weighted: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_values"] = list(self.n_values)
        return d


def fit_leading_constant(n_values, means, ses=None) -> FitResult:
    """Fit ``E_n = a log(n)/n + b/n``.

    With standard errors the fit is weighted by ``1/se^2`` and the covariance
    is ``(X^T W X)^{-1}`` (variances taken as known).  Without them, or if any
    is zero, the fit is unweighted and the covariance uses the residual
    variance.
    """
    n = np.asarray(n_values, dtype=float)
    y = np.asarray(means, dtype=float)
    if n.shape != y.shape or n.ndim != 1:
        raise ValueError("n_values and means must be 1D arrays of equal length")
    if len(np.unique(n)) < 3:
        raise ValueError(f"need at least 3 distinct n values, got {sorted(set(n.tolist()))}")
    X = np.column_stack([np.log(n) / n, 1.0 / n])
    weighted = ses is not None and np.all(np.asarray(ses, dtype=float) > 0)
    w = 1.0 / np.asarray(ses, dtype=float) ** 2 if weighted else np.ones_like(y)
    XtW = X.T * w
    gram = XtW @ X
    if np.linalg.matrix_rank(gram) < 2:
        raise ValueError("design matrix is rank deficient")
    coef = np.linalg.solve(gram, XtW @ y)
    resid = y - X @ coef
    if weighted:
        cov = np.linalg.inv(gram)
    else:
        dof = len(y) - 2
        cov = np.linalg.inv(gram) * (float(resid @ resid) / dof if dof > 0 else 0.0)
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(a=float(coef[0]), b=float(coef[1]),
                     se_a=float(math.sqrt(max(cov[0, 0], 0.0))), se_b=float(math.sqrt(max(cov[1, 1], 0.0))),
                     r2=float(min(max(r2, 0.0), 1.0)), n_values=tuple(int(v) for v in n), weighted=bool(weighted))


def mean_and_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        return math.nan, math.nan
    se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
    return float(np.mean(v)), se


def wilson_interval(successes: int, trials: int, alpha: float = 0.05) -> tuple[float, float]:
    lo, hi = proportion_confint(successes, trials, alpha=alpha, method="wilson")
    return float(lo), float(hi)
