"""Heat kernel and time-averaged kernel on the flat model domains.

Two backends are provided and cross-check each other:

* a truncated eigen-expansion over a :class:`FrequencyLattice`
  (complex exponentials on the torus, Neumann cosines on the square and the
  interval), and
* the Gaussian method of images, summing plane kernels over the translation
  group (torus) or the reflection group (square, interval).

The Laplacian convention is ``d/dt p = Δp`` so the plane kernel in dimension
``d`` is ``(4πt)^{-d/2} exp(-|x-y|^2 / 4t)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import PreconditionError, TruncationError
from .geometry import Domain, _as_points, distance

DEFAULT_TOL = 1e-12
IMAGES_T_SWITCH = 1.0 / (4.0 * math.pi ** 2)
_CHUNK = 2_000_000


def _eig_scale(domain: Domain) -> float:
    return 4.0 * math.pi ** 2 if domain.periodic else math.pi ** 2


def _count_le(domain: Domain, R: int) -> int:
    """Number of lattice modes with ``|k|^2 <= R``."""
    if R < 0:
        return 0
    if domain.dim == 1:
        return math.isqrt(R) + 1
    kmax = math.isqrt(R)
    if domain.periodic:
        k1 = np.arange(-kmax, kmax + 1)
        return int(np.sum(2 * np.floor(np.sqrt(R - k1 * k1)) + 1))
    k1 = np.arange(0, kmax + 1)
    return int(np.sum(np.floor(np.sqrt(R - k1 * k1)) + 1))


def _enumerate_modes(domain: Domain, R: int) -> np.ndarray:
    kmax = math.isqrt(R)
    rng1 = np.arange(-kmax, kmax + 1) if domain.periodic else np.arange(0, kmax + 1)
    if domain.dim == 1:
        ks = rng1[:, None]
    else:
        k1, k2 = np.meshgrid(rng1, rng1, indexing="ij")
        ks = np.column_stack([k1.ravel(), k2.ravel()])
    r2 = np.sum(ks * ks, axis=1)
    ks = ks[r2 <= R]
    r2 = r2[r2 <= R]
    order = np.lexsort(tuple(ks[:, a] for a in reversed(range(ks.shape[1]))) + (r2,))
    return ks[order]


@dataclass(frozen=True, eq=False)
class FrequencyLattice:
    """Eigenmodes with ``|k|^2 <= r2`` of the (Neumann) Laplacian.

    ``modes[0]`` is always ``k = 0`` with eigenvalue 0 and eigenfunction 1.
    ``amp`` holds ``sup |φ_k|`` (1 on the torus, up to 2 on the square).
    """

    domain: Domain
    r2: int
    modes: np.ndarray
    lam: np.ndarray
    amp: np.ndarray
    n_tail: int
    tol: float = DEFAULT_TOL
    _axis_k: tuple = field(default=(), repr=False)

    @classmethod
    def build(cls, domain, r2: int, tol: float = DEFAULT_TOL) -> "FrequencyLattice":
        domain = Domain.parse(domain)
        r2 = max(int(r2), 1)
        modes = _enumerate_modes(domain, r2)
        lam = _eig_scale(domain) * np.sum(modes * modes, axis=1).astype(float)
        if domain.periodic:
            amp = np.ones(len(modes))
        else:
            amp = np.sqrt(2.0) ** np.count_nonzero(modes, axis=1)
        n_tail = _count_le(domain, 4 * r2) - _count_le(domain, r2)
        axis_k = tuple(np.unique(modes[:, a]) for a in range(domain.dim))
        return cls(domain, r2, modes, lam, amp, n_tail, tol, axis_k)

    @classmethod
    def for_time(cls, domain, t: float, tol: float = DEFAULT_TOL) -> "FrequencyLattice":
        """Smallest lattice whose tail bound at time ``t`` is below ``tol``."""
        domain = Domain.parse(domain)
        if not t > 0:
            raise ValueError(f"time must be positive, got {t}")
        c = _eig_scale(domain)
        r2, n_tail = 1, 1
        for _ in range(50):
            need = max(1, math.ceil(math.log(max(n_tail, 1) / tol) / (c * t)) - 1)
            n_tail = _count_le(domain, 4 * need) - _count_le(domain, need)
            if need == r2:
                break
            r2 = need
        while math.exp(-c * (r2 + 1) * t) * n_tail > tol:
            r2 += 1
            n_tail = _count_le(domain, 4 * r2) - _count_le(domain, r2)
        return cls.build(domain, r2, tol)

    def __len__(self) -> int:
        return len(self.modes)

    def tail_bound(self, t: float) -> float:
        """``exp(-λ_first_discarded t) * N_tail``."""
        return math.exp(-_eig_scale(self.domain) * (self.r2 + 1) * t) * self.n_tail

    def check(self, t: float) -> None:
        if not t > 0:
            raise ValueError(f"time must be positive, got {t}")
        bound = self.tail_bound(t)
        if bound > self.tol:
            raise TruncationError(
                f"cutoff |k|^2 <= {self.r2} leaves tail bound {bound:.3g} > {self.tol:g} at t={t:g}; "
                f"use FrequencyLattice.for_time(..., t={t:g})")

    # -- basis evaluation -------------------------------------------------
    def _axis_table(self, coord: np.ndarray, ks: np.ndarray, r: int) -> np.ndarray:
        """``d^r/dy^r`` of the 1D factors at ``coord`` for every k in ``ks``."""
        if self.domain.periodic:
            w = 2j * math.pi * ks
            return (w ** r)[None, :] * np.exp(np.outer(coord, w))
        w = math.pi * ks.astype(float)
        norm = np.where(ks == 0, 1.0, math.sqrt(2.0))
        return (norm * w ** r)[None, :] * np.cos(np.outer(coord, w) + r * math.pi / 2)

    def basis(self, y, deriv=None) -> np.ndarray:
        """Matrix ``B[i, k] = ∂^deriv φ_k(y_i)`` of shape ``(N, M)``."""
        y = _as_points(self.domain, y).reshape(-1, self.domain.dim)
        deriv = (0,) * self.domain.dim if deriv is None else tuple(deriv)
        out = None
        for a in range(self.domain.dim):
            ks = self._axis_k[a]
            table = self._axis_table(y[:, a], ks, deriv[a])
            idx = np.searchsorted(ks, self.modes[:, a])
            col = table[:, idx]
            out = col if out is None else out * col
        return out

    def eval_series(self, coef: np.ndarray, y, deriv=None) -> np.ndarray:
        """``Re Σ_k coef_k ∂^deriv φ_k(y)`` for a batch of points."""
        y = _as_points(self.domain, y).reshape(-1, self.domain.dim)
        step = max(1, _CHUNK // max(len(self), 1))
        parts = [np.real(self.basis(y[i:i + step], deriv) @ coef) for i in range(0, len(y), step)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def derivative_tensor(self, coef: np.ndarray, y, order: int) -> np.ndarray:
        """All order-``order`` derivatives of the series as a symmetric tensor.

        Shape ``(N,)`` for order 0, ``(N, d)`` for 1, ``(N, d, d)`` for 2, ...
        """
        y = _as_points(self.domain, y).reshape(-1, self.domain.dim)
        d = self.domain.dim
        out = np.zeros((len(y),) + (d,) * order)
        cache = {}
        for idx in itertools.product(range(d), repeat=order):
            alpha = tuple(idx.count(a) for a in range(d))
            if alpha not in cache:
                cache[alpha] = self.eval_series(coef, y, alpha)
            out[(slice(None),) + idx] = cache[alpha]
        return out

    def coefficients_at(self, x) -> np.ndarray:
        """``conj φ_k(x)`` rows; pairing them with ``φ_k(y)`` gives kernels."""
        return np.conj(self.basis(x))


def _pairs(domain: Domain, x, y) -> tuple[np.ndarray, np.ndarray, tuple]:
    x, y = _as_points(domain, x), _as_points(domain, y)
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape[:-1]
    return x.reshape(-1, domain.dim), y.reshape(-1, domain.dim), shape


def _spectral_kernel(lattice: FrequencyLattice, weights: np.ndarray, x, y, deriv=None):
    xs, ys, shape = _pairs(lattice.domain, x, y)
    step = max(1, _CHUNK // max(len(lattice), 1))
    vals = []
    for i in range(0, len(xs), step):
        bx = np.conj(lattice.basis(xs[i:i + step]))
        by = lattice.basis(ys[i:i + step], deriv)
        vals.append(np.real(np.sum(bx * by * weights[None, :], axis=1)))
    return np.concatenate(vals).reshape(shape)


def heat_weights(lattice: FrequencyLattice, t: float) -> np.ndarray:
    lattice.check(t)
    return np.exp(-lattice.lam * t)


def q_weights(lattice: FrequencyLattice, t: float) -> np.ndarray:
    lattice.check(t)
    w = np.zeros(len(lattice))
    w[1:] = np.exp(-lattice.lam[1:] * t) / lattice.lam[1:]
    return w


def heat_kernel(lattice: FrequencyLattice, t: float, x, y) -> np.ndarray:
    """``p_t(x, y) = Σ_k e^{-λ_k t} φ_k(x) φ_k(y)`` (broadcasting)."""
    return _spectral_kernel(lattice, heat_weights(lattice, t), x, y)


def q_kernel(lattice: FrequencyLattice, t: float, x, y) -> np.ndarray:
    """Zero-mean solution of ``-Δ_y q_t(x, ·) = p_t(x, ·) - 1``."""
    return _spectral_kernel(lattice, q_weights(lattice, t), x, y)


def q_grad(lattice: FrequencyLattice, t: float, x, y) -> np.ndarray:
    """``∇_y q_t(x, y)``, differentiated termwise; trailing axis holds components."""
    w = q_weights(lattice, t)
    d = lattice.domain.dim
    comps = [_spectral_kernel(lattice, w, x, y, tuple(int(a == b) for b in range(d)))
             for a in range(d)]
    return np.stack(comps, axis=-1)


def q_derivative_tensor(lattice: FrequencyLattice, t: float, x, y, order: int) -> np.ndarray:
    """``∇^order_y q_t(x, y)`` for one source point ``x`` and many ``y``."""
    coef = q_weights(lattice, t) * lattice.coefficients_at(x)[0]
    return lattice.derivative_tensor(coef, y, order)


def heat_derivative_tensor(lattice: FrequencyLattice, t: float, x, y, order: int) -> np.ndarray:
    coef = heat_weights(lattice, t) * lattice.coefficients_at(x)[0]
    return lattice.derivative_tensor(coef, y, order)


def trace_deficit(lattice: FrequencyLattice, t: float) -> float:
    """``∫ (p_t(x,x) - 1) dm(x) = Σ_{k≠0} e^{-λ_k t}``."""
    return float(np.sum(heat_weights(lattice, t)[1:]))


def q_gradient_energy(lattice: FrequencyLattice, t: float) -> float:
    """``∫∫ |∇_y q_t(x,y)|^2 dm dm = Σ_{k≠0} e^{-2λ_k t} / λ_k``."""
    lattice.check(2 * t)
    lam = lattice.lam[1:]
    return float(np.sum(np.exp(-2 * lam * t) / lam))


# -- method of images -----------------------------------------------------

def _theta_dual(s: float, scale: float) -> float:
    """``Σ_{j∈Z} exp(-scale j^2 s)`` through its Poisson-dual Gaussian sum."""
    jmax = int(math.ceil(math.sqrt(45.0 * scale * s / math.pi ** 2))) + 1
    j = np.arange(-jmax, jmax + 1)
    return float(math.sqrt(math.pi / (scale * s)) * np.sum(np.exp(-(math.pi ** 2) * j * j / (scale * s))))


def trace_deficit_images(domain, t: float) -> float:
    """Trace deficit from the Gaussian (Poisson-dual) side of the theta series.

    Accurate for small ``t`` where the spectral sum needs many modes.
    """
    domain = Domain.parse(domain)
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")
    if domain.periodic:
        one_d = _theta_dual(t, 4 * math.pi ** 2)
    else:
        one_d = 0.5 * (1.0 + _theta_dual(t, math.pi ** 2))
    return one_d ** domain.dim - 1.0


def _group_elements(domain: Domain, radius: float):
    span = int(math.ceil(radius / 2.0)) + 1
    shifts = np.arange(-span, span + 1, dtype=float)
    d = domain.dim
    if domain.periodic:
        offsets = np.array(list(itertools.product(np.arange(-2 * span, 2 * span + 1, dtype=float), repeat=d)))
        signs = np.ones_like(offsets)
    else:
        combos = list(itertools.product(*([[(s, 2 * a) for s in (1.0, -1.0) for a in shifts]] * d)))
        signs = np.array([[c[0] for c in combo] for combo in combos])
        offsets = np.array([[c[1] for c in combo] for combo in combos])
    return signs, offsets


def _image_offsets(domain: Domain, t: float, x: np.ndarray, y: np.ndarray):
    """Displacements ``y - g x`` for every group element ``g`` near the cell."""
    radius = math.sqrt(4.0 * t * 45.0) + 1.5
    signs, offsets = _group_elements(domain, radius)
    images = x[:, None, :] * signs[None, :, :] + offsets[None, :, :]
    return y[:, None, :] - images


def heat_kernel_images(domain, t: float, x, y) -> np.ndarray:
    """Gaussian image sum; supported for ``0 < t <= 1``."""
    domain = Domain.parse(domain)
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")
    if t > 1:
        raise PreconditionError(f"images backend supports t <= 1, got t={t:g}")
    xs, ys, shape = _pairs(domain, x, y)
    r = _image_offsets(domain, t, xs, ys)
    g = np.exp(-np.sum(r * r, axis=-1) / (4 * t)) / (4 * math.pi * t) ** (domain.dim / 2)
    return g.sum(axis=1).reshape(shape)


def heat_kernel_images_derivs(domain, t: float, x, y, order: int) -> np.ndarray:
    """``∇^order_y`` of the image sum (plane-Gaussian derivatives, summed).

    Derivatives act on ``y`` only, so the image points stay fixed.
    """
    domain = Domain.parse(domain)
    if not 0 < t <= 1:
        raise PreconditionError(f"images backend supports 0 < t <= 1, got t={t:g}")
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be in 0..3")
    xs, ys, shape = _pairs(domain, x, y)
    r = _image_offsets(domain, t, xs, ys)
    d = domain.dim
    g = np.exp(-np.sum(r * r, axis=-1) / (4 * t)) / (4 * math.pi * t) ** (d / 2)
    eye = np.eye(d)
    if order == 0:
        out = g.sum(axis=1)
    elif order == 1:
        out = np.einsum("nia,ni->na", -r / (2 * t), g)
    elif order == 2:
        rr = np.einsum("nia,nib->niab", r, r) / (4 * t * t) - eye / (2 * t)
        out = np.einsum("niab,ni->nab", rr, g)
    else:
        rrr = -np.einsum("nia,nib,nic->niabc", r, r, r) / (8 * t ** 3)
        rrr += (np.einsum("ab,nic->niabc", eye, r) + np.einsum("ac,nib->niabc", eye, r)
                + np.einsum("bc,nia->niabc", eye, r)) / (4 * t * t)
        out = np.einsum("niabc,ni->nabc", rrr, g)
    return out.reshape(shape + (d,) * order)


def heat_kernel_auto(lattice: FrequencyLattice, t: float, x, y) -> np.ndarray:
    """Images backend below ``t = 1/(4π²)``, spectral above."""
    if t < IMAGES_T_SWITCH:
        return heat_kernel_images(lattice.domain, t, x, y)
    return heat_kernel(lattice, t, x, y)


# -- bound diagnostics ----------------------------------------------------

@dataclass(frozen=True)
class KernelBoundFit:
    """Fitted constants of the Gaussian and derivative bounds on a grid.

    ``a_hat`` and ``c0`` describe the envelope ``p_t <= c0 t^{-1} a^{-d^2/t}``;
    ``c_deriv[N]`` bounds ``|∇^N p_t| / ((t^{-N/2} + d^N/t^N) p_t)`` and
    ``c_q[N]`` bounds ``|∇^N_y q_t| (d^N + t^{N/2})``.  Tensor norms are
    Frobenius norms, which dominate the operator norm.
    """

    a_hat: float
    c0: float
    c_deriv: dict
    c_q: dict
    grid: str


def _envelope(w: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    """Lowest line ``z <= α - β w`` on average (a 2-variable LP)."""
    res = linprog(c=[1.0, -float(np.mean(w))],
                  A_ub=np.column_stack([-np.ones_like(w), w]), b_ub=-z,
                  bounds=[(None, None), (0.0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"envelope fit failed: {res.message}")
    alpha, beta = res.x
    return float(alpha), float(beta)


def verify_kernel_bounds(lattice: FrequencyLattice, t_grid, points, sources=None) -> KernelBoundFit:
    """Fit the constants of the heat-kernel bounds over ``t_grid x sources x points``.

    ``sources`` defaults to the first four entries of ``points``.
    """
    domain = lattice.domain
    t_grid = np.asarray(t_grid, dtype=float)
    points = _as_points(domain, points).reshape(-1, domain.dim)
    sources = points[:4] if sources is None else _as_points(domain, sources).reshape(-1, domain.dim)
    if len(t_grid) == 0 or len(points) == 0:
        raise ValueError("grids must be nonempty")
    if np.any(t_grid <= 0) or np.any(t_grid >= 1):
        raise ValueError("t values must lie in (0, 1)")

    ws, zs = [], []
    c_deriv = {1: 0.0, 2: 0.0, 3: 0.0}
    c_q = {1: 0.0, 2: 0.0, 3: 0.0}
    for t in t_grid:
        qlat = lattice
        for x in sources:
            d = distance(domain, x, points)
            p = heat_kernel_images(domain, t, x, points)
            ws.append(d * d / t)
            zs.append(np.log(t * p))
            for N in (1, 2, 3):
                grad = heat_kernel_images_derivs(domain, t, x, points, N).reshape(len(points), -1)
                ratio = np.linalg.norm(grad, axis=1) / ((t ** (-N / 2) + d ** N / t ** N) * p)
                c_deriv[N] = max(c_deriv[N], float(np.max(ratio)))
                qd = q_derivative_tensor(qlat, t, x, points, N).reshape(len(points), -1)
                c_q[N] = max(c_q[N], float(np.max(np.linalg.norm(qd, axis=1) * (d ** N + t ** (N / 2)))))
    alpha, beta = _envelope(np.concatenate(ws), np.concatenate(zs))
    grid = f"{len(t_grid)} times in [{t_grid.min():g}, {t_grid.max():g}] x {len(sources)} sources x {len(points)} points"
    return KernelBoundFit(a_hat=math.exp(beta), c0=math.exp(alpha), c_deriv=c_deriv, c_q=c_q, grid=grid)
