"""Couplings between point clouds and densities, and their quadratic costs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, PreconditionError
from .geometry import Domain, _as_points, distance, exp_map, fold, sqdist_matrix
from .potential import SpectralField, eval_field

# -- discrete matching ----------------------------------------------------


@dataclass(frozen=True)
class Matching:
    """Permutation ``perm`` (0-based, row i -> column perm[i]) and its cost.

    ``total`` is the summed cost; ``cost`` is the mean, i.e. W2^2 of the two
    empirical measures when the matrix holds squared distances.
    """

    perm: np.ndarray
    total: float

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def cost(self) -> float:
        return self.total / self.n


def solve_assignment(cost) -> Matching:
    """Exact minimum-cost perfect matching of a square cost matrix."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise ValueError(f"assignment needs a nonempty square matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("assignment needs finite costs")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.intp)
    perm[rows] = cols
    return Matching(perm, float(cost[rows, cols].sum()))


def bipartite_cost(domain, X, Y) -> Matching:
    """Optimal matching of two equal-size clouds under squared distance."""
    domain = Domain.parse(domain)
    X = _as_points(domain, X).reshape(-1, domain.dim)
    Y = _as_points(domain, Y).reshape(-1, domain.dim)
    if len(X) != len(Y) or len(X) == 0:
        raise ValueError(f"bipartite_cost needs |X| = |Y| >= 1, got {len(X)} and {len(Y)}")
    return solve_assignment(sqdist_matrix(domain, X, Y))


def replicated_cost(domain, X, Y, q: int) -> float:
    """W2^2 between ``n`` atoms of mass 1/n and ``q n`` atoms of mass 1/(q n).

    Each ``X_i`` is split into ``q`` copies, which is exact: some optimal plan
    for these weights is a permutation of the replicated problem.
    """
    domain = Domain.parse(domain)
    X = _as_points(domain, X).reshape(-1, domain.dim)
    Y = _as_points(domain, Y).reshape(-1, domain.dim)
    q = int(q)
    if q < 1 or len(Y) != q * len(X):
        raise ValueError(f"replicated_cost needs |Y| = q|X| with integer q >= 1, got {len(X)}, {len(Y)}, q={q}")
    if q == 1:
        return bipartite_cost(domain, X, Y).cost
    return bipartite_cost(domain, np.repeat(X, q, axis=0), Y).cost


def w2_clouds(domain, A, B) -> float:
    """W2 between two equal-size uniform clouds."""
    return math.sqrt(bipartite_cost(domain, A, B).cost)


# -- flow schedules and the Benamou-Brenier bound ---------------------------


class FlowSchedule(NamedTuple):
    name: str
    theta: Callable[[np.ndarray], np.ndarray]
    dtheta: Callable[[np.ndarray], np.ndarray]


QUADRATIC = FlowSchedule("quadratic", lambda s: 1.0 - (1.0 - s) ** 2, lambda s: 2.0 * (1.0 - s))
LINEAR = FlowSchedule("linear", lambda s: s, lambda s: np.ones_like(s))
SCHEDULES = {"quadratic": QUADRATIC, "linear": LINEAR}


def check_schedule(schedule: FlowSchedule, samples: int = 257) -> None:
    s = np.linspace(0.0, 1.0, samples)
    th = schedule.theta(s)
    if abs(th[0]) > 1e-14 or abs(th[-1] - 1.0) > 1e-14 or np.any(np.diff(th) < 0):
        raise ValueError(f"schedule {schedule.name} must increase from 0 to 1")


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_GL_S = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


def schedule_integral(schedule: FlowSchedule, u0: np.ndarray, u1: np.ndarray) -> np.ndarray:
    """``∫_0^1 θ'(s)^2 / (u0 (1-θ) + u1 θ) ds`` pointwise.

    The linear schedule uses the closed form ``(log u1 - log u0)/(u1 - u0)``
    (its limit ``1/u0`` on the diagonal); other schedules use 64-point
    Gauss-Legendre.
    """
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    if schedule.name == "linear":
        delta = (u1 - u0) / u0
        small = np.abs(delta) < 1e-6
        safe = np.where(small, 1.0, delta)
        series = 1.0 - delta / 2 + delta * delta / 3
        return np.where(small, series, np.log1p(safe) / safe) / u0
    s = _GL_S[:, None]
    th, dth = schedule.theta(s), schedule.dtheta(s)
    integrand = dth ** 2 / (u0[None, :] * (1.0 - th) + u1[None, :] * th)
    return np.sum(_GL_W[:, None] * integrand, axis=0)


def _check_positive(domain: Domain, u: np.ndarray, pts: np.ndarray, name: str) -> None:
    bad = np.flatnonzero(~(u > 0))
    if len(bad):
        loc = pts[bad[0]]
        raise DomainError(f"{name} is nonpositive ({u[bad[0]]:.3g}) at {loc.tolist()}", location=loc)


def check_poisson_pair(field: SpectralField, u0: SpectralField, u1: SpectralField, tol: float = 1e-8) -> None:
    """Require ``-Δf = u1 - u0`` coefficientwise and equal masses."""
    lam = field.lattice.lam
    resid = lam * field.coef - (u1.coef - u0.coef)
    resid[0] = u1.coef[0] - u0.coef[0]
    if np.max(np.abs(resid)) > tol:
        raise PreconditionError(f"-Δf differs from u1 - u0 by {np.max(np.abs(resid)):.3g}")


def bb_cost_bound(field: SpectralField, u0: SpectralField, u1: SpectralField,
                  schedule: FlowSchedule, grid) -> float:
    """Benamou-Brenier upper bound ``∫ |∇f|^2 ∫ θ'^2/u_θ ds dm`` by quadrature.

    ``grid`` is a ``(points, weights)`` pair.
    """
    check_schedule(schedule)
    check_poisson_pair(field, u0, u1)
    pts, w = grid
    domain = field.lattice.domain
    a, b = eval_field(u0, pts), eval_field(u1, pts)
    _check_positive(domain, a, pts, "u0")
    _check_positive(domain, b, pts, "u1")
    g = eval_field(field, pts, 1)
    return float(np.sum(w * np.sum(g * g, axis=-1) * schedule_integral(schedule, a, b)))


def shallow_bound(field: SpectralField, u0: SpectralField, grid) -> float:
    """``4 ∫ |∇f|^2 / u0 dm``."""
    pts, w = grid
    a = eval_field(u0, pts)
    _check_positive(field.lattice.domain, a, pts, "u0")
    g = eval_field(field, pts, 1)
    return float(4.0 * np.sum(w * np.sum(g * g, axis=-1) / a))


# -- Dacorogna-Moser flow ---------------------------------------------------


@dataclass(frozen=True)
class FlowTrajectory:
    initial: np.ndarray
    arrival: np.ndarray
    positions: np.ndarray
    action: np.ndarray

    @property
    def steps(self) -> int:
        return self.positions.shape[0] - 1


def _rk4(velocity, p: np.ndarray, steps: int):
    """Classic RK4 from s=0 to 1; also integrates ``|v|^2`` with the same stages."""
    h = 1.0 / steps
    x = p.copy()
    action = np.zeros(len(p))
    path = [x.copy()]
    for i in range(steps):
        s = i * h
        k1 = velocity(x, s)
        k2 = velocity(x + 0.5 * h * k1, s + 0.5 * h)
        k3 = velocity(x + 0.5 * h * k2, s + 0.5 * h)
        k4 = velocity(x + h * k3, s + h)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        sq = [np.sum(k * k, axis=-1) for k in (k1, k2, k3, k4)]
        action += h / 6.0 * (sq[0] + 2 * sq[1] + 2 * sq[2] + sq[3])
        path.append(x.copy())
    return x, np.stack(path), action


def dm_velocity(field: SpectralField, u0: SpectralField, u1: SpectralField, schedule: FlowSchedule):
    """``v_s(x) = θ'(s) ∇f(x) / (u0(x)(1-θ(s)) + u1(x)θ(s))`` as a callable."""
    domain = field.lattice.domain

    def velocity(x, s):
        th = float(schedule.theta(np.float64(s)))
        dth = float(schedule.dtheta(np.float64(s)))
        dens = eval_field(u0, x) * (1.0 - th) + eval_field(u1, x) * th
        _check_positive(domain, dens, fold(domain, x), "interpolated density")
        return dth * eval_field(field, x, 1) / dens[:, None]

    return velocity


def dm_flow_map(field: SpectralField, u0: SpectralField, u1: SpectralField,
                schedule: FlowSchedule, p, steps: int = 64) -> FlowTrajectory:
    """Time-1 flow of the Dacorogna-Moser field for a batch of start points.

    Trajectories are integrated in unfolded coordinates (the spectral fields
    are periodic or mirror-symmetric) and folded on output.
    """
    if steps < 16:
        raise PreconditionError(f"dm_flow_map needs steps >= 16, got {steps}")
    check_schedule(schedule)
    domain = field.lattice.domain
    p = _as_points(domain, p).reshape(-1, domain.dim)
    end, path, action = _rk4(dm_velocity(field, u0, u1, schedule), p, steps)
    return FlowTrajectory(initial=p, arrival=fold(domain, end), positions=fold(domain, path), action=action)


# -- exponential coupling ---------------------------------------------------


class ExpCoupling(NamedTuple):
    exp_cost: float
    assignment_cost: float
    end_to_end: float


def exp_pushforward_cost(domain, field: SpectralField, target, grid) -> ExpCoupling:
    """Costs of coupling a quadrature measure to ``target`` through ``exp(∇f)``.

    * ``exp_cost``: ``(1/m) Σ |∇f(g_j)|^2``, the cost of the exponential map;
    * ``assignment_cost``: replicated W2^2 between the pushed grid and target;
    * ``end_to_end``: cost of the composed coupling ``g_j -> target_σ(j)``.
    """
    domain = Domain.parse(domain)
    pts = grid[0] if isinstance(grid, tuple) else grid
    pts = _as_points(domain, pts).reshape(-1, domain.dim)
    target = _as_points(domain, target).reshape(-1, domain.dim)
    m, n = len(pts), len(target)
    if m < n or m % n:
        raise PreconditionError(f"grid size {m} must be a multiple of the target size {n}")
    grad = eval_field(field, pts, 1).reshape(m, domain.dim)
    pushed = exp_map(domain, pts, grad)
    reps = np.repeat(target, m // n, axis=0)
    match = solve_assignment(sqdist_matrix(domain, pushed, reps))
    paired = reps[match.perm]
    end_to_end = float(np.mean(distance(domain, pts, paired) ** 2))
    return ExpCoupling(float(np.mean(np.sum(grad * grad, axis=-1))), match.cost, end_to_end)


# -- stability of flows against the exponential map -------------------------


class GapReport(NamedTuple):
    gap: np.ndarray
    budget: np.ndarray
    integrator_error: np.ndarray
    within_assumptions: bool
    exp_point: np.ndarray
    flow_point: np.ndarray


def flow_vs_exp_gap(domain, X, Y, p, xi: float, grad_sup: float,
                    steps: int = 64, strict: bool = True) -> GapReport:
    """Distance between ``exp_p(X(p))`` and the time-1 flow of ``Y_s`` from ``p``.

    ``X(x)`` returns vectors, ``Y(x, s)`` the perturbed time-dependent field
    with ``|Y_s - X| <= xi |X|``; ``grad_sup`` is an upper bound on
    ``sup |∇X|``.  The budget is ``4 xi |X|(p) + 8 sup|∇X| |X|(p)``.  The
    integrator error is the Richardson estimate from a step-halved rerun.

    With ``strict=False`` the standing assumption ``sup|∇X| < 1/2`` is
    reported instead of enforced.
    """
    domain = Domain.parse(domain)
    p = _as_points(domain, p).reshape(-1, domain.dim)
    ok = grad_sup < 0.5
    if strict and not ok:
        raise PreconditionError(f"flow_vs_exp_gap needs sup|∇X| < 1/2, got {grad_sup:.4g}")
    if not 0 <= xi < 1:
        raise PreconditionError(f"xi must lie in [0, 1), got {xi}")
    Xp = np.asarray(X(p), dtype=float).reshape(p.shape)
    target = exp_map(domain, p, Xp)
    coarse, _, _ = _rk4(Y, p, steps)
    fine, _, _ = _rk4(Y, p, 2 * steps)
    err = np.sqrt(np.sum((coarse - fine) ** 2, axis=-1)) * 16.0 / 15.0
    gap = distance(domain, target, fold(domain, fine))
    size = np.sqrt(np.sum(Xp * Xp, axis=-1))
    budget = 4.0 * xi * size + 8.0 * grad_sup * size
    return GapReport(gap, budget, err, ok, target, fold(domain, fine))


def pushforward_distance_bound(domain, f_pts, g_pts, weights=None) -> float:
    """``||d(f, g)||_{L^2}`` over a quadrature measure; bounds ``W2(f#m, g#m)``."""
    domain = Domain.parse(domain)
    d = distance(domain, f_pts, g_pts)
    w = np.full(d.shape, 1.0 / d.size) if weights is None else np.asarray(weights, dtype=float)
    return float(math.sqrt(np.sum(w * d * d)))
