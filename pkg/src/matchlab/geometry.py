"""Flat model geometries: the torus, the Neumann square and the unit interval.

Points are stored as float arrays whose last axis holds the coordinates, so a
single point of the square is shape ``(2,)`` and a cloud of ``n`` points is
``(n, 2)``.  The interval uses a trailing axis of length one.

The square is the fundamental cell of the group generated by reflections
across the integer lines; folding a raw point applies that group action.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .rng import as_generator


class Domain(enum.Enum):
    TORUS2 = "torus"
    SQUARE2 = "square"
    INTERVAL1 = "interval"

    @property
    def dim(self) -> int:
        return 1 if self is Domain.INTERVAL1 else 2

    @property
    def periodic(self) -> bool:
        return self is Domain.TORUS2

    @classmethod
    def parse(cls, value) -> "Domain":
        if isinstance(value, cls):
            return value
        aliases = {"torus": cls.TORUS2, "torus2": cls.TORUS2,
                   "square": cls.SQUARE2, "square2": cls.SQUARE2,
                   "interval": cls.INTERVAL1, "interval1": cls.INTERVAL1}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown domain {value!r}") from None


Torus2 = Domain.TORUS2
Square2 = Domain.SQUARE2
Interval1 = Domain.INTERVAL1


def _as_points(domain: Domain, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if domain.dim == 1 and (p.ndim == 0 or p.shape[-1] != 1):
        p = p[..., None]
    if p.shape[-1] != domain.dim:
        raise ValueError(f"{domain.value} points need {domain.dim} coordinates, got shape {p.shape}")
    return p


def fold(domain: Domain, p) -> np.ndarray:
    """Map raw coordinates into the fundamental cell of ``domain``."""
    domain = Domain.parse(domain)
    p = _as_points(domain, p)
    if not np.all(np.isfinite(p)):
        raise ValueError("fold needs finite coordinates")
    if domain.periodic:
        r = np.mod(p, 1.0)
        # mod can round tiny negatives up to exactly 1.0
        return np.where(r >= 1.0, 0.0, r)
    r = np.mod(p, 2.0)
    return np.where(r > 1.0, 2.0 - r, r)


def _axis_gap(domain: Domain, dp: np.ndarray) -> np.ndarray:
    if domain.periodic:
        # round is odd-symmetric, so d(p, q) == d(q, p) bit for bit
        return np.abs(dp - np.round(dp))
    return np.abs(dp)


def distance(domain: Domain, p, q) -> np.ndarray:
    """Geodesic distance, broadcasting over leading axes.

    On the torus this is the minimum over the nine integer shifts, computed
    axis by axis (the shifts decouple on a square lattice).
    """
    domain = Domain.parse(domain)
    p, q = _as_points(domain, p), _as_points(domain, q)
    gap = _axis_gap(domain, p - q)
    return np.sqrt(np.sum(gap * gap, axis=-1))


def sqdist_matrix(domain: Domain, X, Y) -> np.ndarray:
    """Pairwise squared distances ``d(X_i, Y_j)^2`` as an ``(n, m)`` array."""
    domain = Domain.parse(domain)
    X, Y = _as_points(domain, X), _as_points(domain, Y)
    out = np.zeros((X.shape[0], Y.shape[0]))
    for a in range(domain.dim):
        gap = _axis_gap(domain, X[:, a, None] - Y[None, :, a])
        gap *= gap
        out += gap
        del gap
    return out


def exp_map(domain: Domain, p, v) -> np.ndarray:
    """Exponential map ``exp_p(v)``; affine on flat domains, then folded.

    On the square the fold is a billiard reflection, which agrees with the
    flow of any field tangent to the boundary.
    """
    domain = Domain.parse(domain)
    p, v = _as_points(domain, p), _as_points(domain, v)
    norms = np.sqrt(np.sum(v * v, axis=-1))
    if np.any(~np.isfinite(norms)) or np.any(norms >= 0.5):
        worst = float(np.max(norms))
        raise PreconditionError(f"exp_map needs |v| < 1/2, got max |v| = {worst:.6g}")
    return fold(domain, p + v)


def sample_uniform(domain: Domain, rng, n: int) -> np.ndarray:
    """``n`` i.i.d. uniform points; ``rng`` is a seed or a numpy Generator."""
    domain = Domain.parse(domain)
    if int(n) < 1:
        raise ValueError(f"sample_uniform needs n >= 1, got {n}")
    return as_generator(rng).random((int(n), domain.dim))


def quadrature_grid(domain: Domain, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint grid with ``m`` equal-weight nodes.

    In 2D the grid is ``a x b`` with ``a * b = m`` and ``a`` the largest
    divisor not exceeding ``sqrt(m)``.
    """
    domain = Domain.parse(domain)
    m = int(m)
    if m < 1:
        raise ValueError("quadrature grid needs m >= 1")
    if domain.dim == 1:
        pts = (np.arange(m) + 0.5)[:, None] / m
    else:
        a = max(d for d in range(1, math.isqrt(m) + 1) if m % d == 0)
        b = m // a
        gx = (np.arange(b) + 0.5) / b
        gy = (np.arange(a) + 0.5) / a
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
    return pts, np.full(m, 1.0 / m)


@dataclass(frozen=True)
class IsometryOrbit:
    base: np.ndarray
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.images)


def _dist_to_cell(z: np.ndarray) -> np.ndarray:
    out = np.maximum(np.maximum(-z, z - 1.0), 0.0)
    return np.sqrt(np.sum(out * out, axis=-1))


def orbit_images(domain: Domain, x, radius: float) -> IsometryOrbit:
    """Images of ``x`` that can lie within ``radius`` of some point of the cell.

    Square/interval: the reflection group ``(±x_i + 2a_i)``.  Torus: integer
    translates ``x + k``.  Images are listed once per group element, so a
    corner of the square contributes four coincident copies of itself.
    """
    domain = Domain.parse(domain)
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = _as_points(domain, x).reshape(domain.dim)
    span = int(math.ceil(radius)) + 2
    shifts = np.arange(-span, span + 1, dtype=float)
    if domain.periodic:
        lattice = np.array(list(itertools.product(shifts, repeat=domain.dim)))
        cand = x[None, :] + lattice
    else:
        # one image per group element: points on the boundary repeat
        per_axis = [np.concatenate([x[a] + 2 * shifts, -x[a] + 2 * shifts])
                    for a in range(domain.dim)]
        cand = np.array(list(itertools.product(*per_axis)))
    keep = _dist_to_cell(cand) <= radius
    return IsometryOrbit(base=x, images=cand[keep])
