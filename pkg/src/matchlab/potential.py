"""The random potential f^{n,t} and spectral scalar fields in general.

A field is a coefficient vector over a :class:`FrequencyLattice`; index 0 is
the constant mode.  Potentials carry no constant term.  Evaluating any
derivative is a termwise-differentiated sum, so the cost of a field does not
depend on the number of sample points it was built from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import fft

from .errors import ConfigError
from .geometry import Domain, _as_points
from .heatkernel import FrequencyLattice, q_gradient_energy, q_weights


@dataclass(frozen=True, eq=False)
class SpectralField:
    lattice: FrequencyLattice
    coef: np.ndarray

    @property
    def const(self) -> float:
        return float(np.real(self.coef[0]))

    def __call__(self, y, order: int = 0) -> np.ndarray:
        return eval_field(self, y, order)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _same_lattice(self, other)
        return SpectralField(self.lattice, self.coef + other.coef)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _same_lattice(self, other)
        return SpectralField(self.lattice, self.coef - other.coef)

    def scaled(self, factor: float) -> "SpectralField":
        return replace(self, coef=self.coef * factor)


@dataclass(frozen=True, eq=False)
class PotentialField(SpectralField):
    """Zero-mean potential built from ``n`` points smoothed for time ``t``.

    For a difference of two potentials ``n`` is the size of each family.
    """

    n: int = 0
    t: float = 0.0

    def __post_init__(self):
        if self.coef[0] != 0:
            raise ValueError("a potential has no constant mode")

    def __sub__(self, other):
        _same_lattice(self, other)
        return PotentialField(self.lattice, self.coef - other.coef, n=self.n, t=self.t)

    def __add__(self, other):
        _same_lattice(self, other)
        return PotentialField(self.lattice, self.coef + other.coef, n=self.n, t=self.t)


def _same_lattice(a: SpectralField, b: SpectralField) -> None:
    if a.lattice is not b.lattice:
        raise ValueError("fields live on different lattices")


def zero_field(lattice: FrequencyLattice) -> PotentialField:
    return PotentialField(lattice, np.zeros(len(lattice), dtype=_dtype(lattice)))


def _dtype(lattice: FrequencyLattice):
    return complex if lattice.domain.periodic else float


def field_from_modes(lattice: FrequencyLattice, terms: dict, const: float = 0.0) -> SpectralField:
    """Field with prescribed coefficients, keyed by mode tuples."""
    coef = np.zeros(len(lattice), dtype=_dtype(lattice))
    coef[0] = const
    index = {tuple(int(v) for v in k): i for i, k in enumerate(lattice.modes)}
    for k, c in terms.items():
        k = (k,) if np.isscalar(k) else tuple(k)
        if k not in index:
            raise KeyError(f"mode {k} is outside the lattice cutoff")
        coef[index[k]] = c
    if const == 0.0:
        return PotentialField(lattice, coef)
    return SpectralField(lattice, coef)


def build_potential(lattice: FrequencyLattice, points, t: float) -> PotentialField:
    """``f^{n,t}(y) = (1/n) Σ_i q_t(X_i, y)`` in coefficient form."""
    points = _as_points(lattice.domain, points).reshape(-1, lattice.domain.dim)
    if len(points) == 0:
        raise ValueError("build_potential needs at least one point")
    w = q_weights(lattice, t)
    mean_phi = np.conj(lattice.basis(points)).mean(axis=0)
    coef = (w * mean_phi).astype(_dtype(lattice))
    coef[0] = 0
    return PotentialField(lattice, coef, n=len(points), t=float(t))


def eval_field(field: SpectralField, y, order: int = 0) -> np.ndarray:
    """Value, gradient, Hessian or third-derivative tensor at ``y``."""
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0, 1, 2 or 3")
    lattice = field.lattice
    y_arr = _as_points(lattice.domain, y)
    single = y_arr.ndim == 1
    out = lattice.derivative_tensor(field.coef, y_arr.reshape(-1, lattice.domain.dim), order)
    return out[0] if single else out.reshape(y_arr.shape[:-1] + out.shape[1:])


def density_from_potential(field: SpectralField, base: float = 1.0) -> SpectralField:
    """Density ``u = base - Δf``: coefficients ``λ_k c_k`` plus the constant."""
    coef = field.lattice.lam * field.coef
    coef = coef.astype(np.result_type(coef, float))
    coef[0] = base
    return SpectralField(field.lattice, coef)


def dirichlet_energy(field: SpectralField) -> float:
    """``∫|∇f|^2 dm = Σ λ_k |c_k|^2`` (Parseval)."""
    return float(np.sum(field.lattice.lam * np.abs(field.coef) ** 2))


def expected_energy_closed_form(lattice: FrequencyLattice, n: int, t: float) -> float:
    """Exact ``E ∫|∇f^{n,t}|^2`` for ``n`` i.i.d. uniform points."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return q_gradient_energy(lattice, t) / n


def hessian_opnorm(H: np.ndarray) -> np.ndarray:
    """Operator norm of symmetric ``(..., d, d)`` matrices, d in {1, 2}."""
    if H.shape[-1] == 1:
        return np.abs(H[..., 0, 0])
    a, b, c = H[..., 0, 0], 0.5 * (H[..., 0, 1] + H[..., 1, 0]), H[..., 1, 1]
    return np.abs(0.5 * (a + c)) + np.sqrt(0.25 * (a - c) ** 2 + b * b)


def third_derivative_lipschitz(field: SpectralField) -> float:
    """``Σ |c_k| sup|φ_k| λ_k^{3/2}``, a bound on ``sup |∇^3 f|``."""
    lat = field.lattice
    return float(np.sum(np.abs(field.coef[1:]) * lat.amp[1:] * lat.lam[1:] ** 1.5))


@dataclass(frozen=True)
class EventCheckConfig:
    """Threshold ``xi`` of the flatness event and the scan grid.

    ``spacing=None`` derives the grid from ``xi`` and the Lipschitz bound.
    """

    xi: float
    spacing: Optional[float] = None
    max_nodes_per_axis: int = 1024

    def __post_init__(self):
        if not self.xi > 0:
            raise ConfigError(f"xi must be positive, got {self.xi}")
        if self.spacing is not None and not self.spacing > 0:
            raise ConfigError(f"spacing must be positive, got {self.spacing}")


class SupHessian(NamedTuple):
    grid_max: float
    certified: float
    event: bool
    spacing: float


def _scan_grid(domain: Domain, nodes: int) -> np.ndarray:
    if domain.periodic:
        ax = np.arange(nodes) / nodes
    else:
        ax = np.arange(nodes + 1) / nodes
    if domain.dim == 1:
        return ax[:, None]
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _cos_sum(a: np.ndarray, nodes: int, axis: int) -> np.ndarray:
    """``Σ_k a_k cos(π k j / nodes)`` at ``j = 0..nodes`` along ``axis`` (DCT-I)."""
    a = np.moveaxis(a, axis, -1)
    pad = np.zeros(a.shape[:-1] + (nodes + 1,))
    pad[..., :a.shape[-1]] = a
    out = 0.5 * (fft.dct(pad, type=1, axis=-1) + pad[..., :1] + pad[..., -1:] * (-1.0) ** np.arange(nodes + 1))
    return np.moveaxis(out, -1, axis)


def _sin_sum(b: np.ndarray, nodes: int, axis: int) -> np.ndarray:
    """``Σ_k b_k sin(π k j / nodes)`` at ``j = 0..nodes`` along ``axis`` (DST-I)."""
    b = np.moveaxis(b, axis, -1)
    inner = np.zeros(b.shape[:-1] + (nodes - 1,))
    inner[..., :b.shape[-1] - 1] = b[..., 1:]
    out = np.zeros(b.shape[:-1] + (nodes + 1,))
    out[..., 1:-1] = 0.5 * fft.dst(inner, type=1, axis=-1)
    return np.moveaxis(out, -1, axis)


def grid_hessian(field: SpectralField, nodes: int) -> np.ndarray:
    """Hessian of ``field`` at every node of the scan grid, by fast transforms.

    Same nodes and ordering as a direct evaluation on the scan grid: periodic
    nodes ``j/nodes`` on the torus, inclusive nodes ``j/nodes, j=0..nodes``
    otherwise.  ``nodes`` must exceed twice the largest frequency.
    """
    lat = field.lattice
    d = lat.domain.dim
    kmax = int(np.max(np.abs(lat.modes))) if len(lat) > 1 else 0
    if nodes <= 2 * kmax:
        raise ValueError(f"grid of {nodes} nodes aliases frequency {kmax}")
    if lat.domain.periodic:
        C = np.zeros((nodes, nodes), dtype=complex)
        k1, k2 = lat.modes[:, 0], lat.modes[:, 1]
        w = (2j * math.pi * k1, 2j * math.pi * k2)
        H = np.empty((nodes, nodes, 2, 2))
        for a, b in ((0, 0), (0, 1), (1, 1)):
            C[:] = 0
            np.add.at(C, (k1 % nodes, k2 % nodes), field.coef * w[a] * w[b])
            H[..., a, b] = np.real(fft.ifft2(C)) * nodes * nodes
        H[..., 1, 0] = H[..., 0, 1]
        return H.reshape(nodes * nodes, 2, 2)
    norm = np.where(lat.modes > 0, math.sqrt(2.0), 1.0).prod(axis=1)
    k = lat.modes
    w = math.pi * k.astype(float)
    shape = tuple(int(np.max(k[:, a])) + 1 for a in range(d))
    if d == 1:
        A = np.zeros(shape)
        A[k[:, 0]] = field.coef.real * norm * -(w[:, 0] ** 2)
        return _cos_sum(A, nodes, 0)[:, None, None]
    H = np.empty((nodes + 1, nodes + 1, 2, 2))
    for a in range(2):
        A = np.zeros(shape)
        A[k[:, 0], k[:, 1]] = field.coef.real * norm * -(w[:, a] ** 2)
        H[..., a, a] = _cos_sum(_cos_sum(A, nodes, 0), nodes, 1)
    A = np.zeros(shape)
    A[k[:, 0], k[:, 1]] = field.coef.real * norm * w[:, 0] * w[:, 1]
    H[..., 0, 1] = H[..., 1, 0] = _sin_sum(_sin_sum(A, nodes, 0), nodes, 1)
    return H.reshape(-1, 2, 2)


def certified_sup_hessian(field: SpectralField, cfg: EventCheckConfig) -> SupHessian:
    """Grid maximum of ``|∇²f|`` and a certified upper bound on its supremum.

    The bound adds ``spacing * L`` to the grid maximum, where ``L`` bounds the
    third derivative; every point is within ``spacing`` of a node.  The event
    flag is the conservative test ``certified < xi``.
    """
    lat = field.lattice
    L = third_derivative_lipschitz(field)
    required = math.inf if L == 0 else cfg.xi / (2 * L)
    kmax = int(np.max(np.abs(lat.modes))) if len(lat) > 1 else 1
    min_nodes = max(16, 4 * kmax)
    if cfg.spacing is not None:
        if cfg.spacing > required:
            raise ConfigError(
                f"spacing {cfg.spacing:g} too coarse for xi={cfg.xi:g}: need spacing <= {required:.6g}")
        nodes = max(min_nodes, math.ceil(1.0 / cfg.spacing))
    else:
        want = 1 if math.isinf(required) else math.ceil(1.0 / required)
        # past the cap the bound stays sound but may not certify the event
        nodes = min(max(min_nodes, want), cfg.max_nodes_per_axis)
    spacing = 1.0 / nodes
    if not np.any(field.coef[1:]):
        return SupHessian(0.0, 0.0, cfg.xi > 0, spacing)
    H = grid_hessian(field, nodes)
    grid_max = float(np.max(hessian_opnorm(H)))
    certified = grid_max + spacing * L
    return SupHessian(grid_max, certified, bool(certified < cfg.xi), spacing)
