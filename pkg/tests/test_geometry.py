import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from matchlab.errors import PreconditionError
from matchlab.geometry import (Domain, Interval1, Square2, Torus2, distance, exp_map, fold,
                               orbit_images, quadrature_grid, sample_uniform, sqdist_matrix)

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)
unit = st.floats(min_value=0, max_value=1, exclude_max=True)
pair = st.tuples(finite, finite)
DOMAINS = [Torus2, Square2, Interval1]


def test_parse_aliases():
    assert Domain.parse("torus") is Torus2
    assert Domain.parse("Square2") is Square2
    assert Domain.parse(Interval1) is Interval1
    with pytest.raises(ValueError):
        Domain.parse("sphere")


@pytest.mark.parametrize("domain, raw, expected", [
    (Torus2, (1.3, -0.25), (0.3, 0.75)),
    (Square2, (1.2, 0.4), (0.8, 0.4)),
    (Square2, (-0.1, 2.3), (0.1, 0.3)),
])
def test_fold_examples(domain, raw, expected):
    np.testing.assert_allclose(fold(domain, raw), expected, atol=1e-12)


def test_fold_rejects_nonfinite():
    with pytest.raises(ValueError):
        fold(Torus2, (np.nan, 0.1))
    with pytest.raises(ValueError):
        fold(Square2, (np.inf, 0.1))


@given(pair)
def test_fold_lands_in_cell_and_is_idempotent(p):
    for domain in (Torus2, Square2):
        f = fold(domain, p)
        assert np.all(f >= 0)
        assert np.all(f < 1) if domain is Torus2 else np.all(f <= 1)
        np.testing.assert_array_equal(fold(domain, f), f)


@given(pair)
def test_torus_fold_is_mod_one(p):
    f = fold(Torus2, p)
    frac = np.asarray(p) - f
    np.testing.assert_allclose(frac, np.round(frac), atol=1e-9)


def test_distance_examples():
    assert distance(Torus2, (0.1, 0.5), (0.9, 0.5)) == pytest.approx(0.2, abs=1e-15)
    assert distance(Square2, (0, 0), (1, 1)) == pytest.approx(math.sqrt(2), abs=1e-15)
    for domain in DOMAINS:
        p = np.full(domain.dim, 0.37)
        assert distance(domain, p, p) == 0


def _nine_shift(p, q):
    p, q = np.asarray(p), np.asarray(q)
    return min(np.linalg.norm(p - q + np.array(s)) for s in np.ndindex(3, 3) for s in [np.array(s) - 1])


@given(st.tuples(unit, unit), st.tuples(unit, unit))
def test_torus_distance_equals_nine_shift_minimum(p, q):
    assert distance(Torus2, p, q) == pytest.approx(_nine_shift(p, q), abs=1e-12)


@given(st.lists(st.tuples(unit, unit), min_size=3, max_size=3))
def test_distance_is_a_metric(pts):
    a, b, c = pts
    for domain in (Torus2, Square2):
        dab, dba = distance(domain, a, b), distance(domain, b, a)
        assert dab == dba
        assert dab >= 0
        assert dab <= distance(domain, a, c) + distance(domain, c, b) + 1e-12


def test_sqdist_matrix_matches_distance(rng):
    for domain in DOMAINS:
        X, Y = rng.random((7, domain.dim)), rng.random((5, domain.dim))
        M = sqdist_matrix(domain, X, Y)
        ref = distance(domain, X[:, None, :], Y[None, :, :]) ** 2
        np.testing.assert_allclose(M, ref, atol=1e-15)


def test_exp_map_examples():
    np.testing.assert_allclose(exp_map(Torus2, (0.95, 0.5), (0.1, 0)), (0.05, 0.5), atol=1e-12)
    np.testing.assert_allclose(exp_map(Square2, (0.98, 0.5), (0.05, 0)), (0.97, 0.5), atol=1e-12)
    for domain in DOMAINS:
        p = np.full(domain.dim, 0.2)
        np.testing.assert_array_equal(exp_map(domain, p, np.zeros(domain.dim)), p)


def test_exp_map_rejects_large_vectors():
    with pytest.raises(PreconditionError):
        exp_map(Torus2, (0.1, 0.1), (0.5, 0.0))
    with pytest.raises(PreconditionError):
        exp_map(Square2, (0.1, 0.1), (0.4, 0.4))


@given(st.tuples(st.floats(0.2, 0.8), st.floats(0.2, 0.8)),
       st.tuples(st.floats(-0.19, 0.19), st.floats(-0.19, 0.19)))
def test_exp_map_round_trip_in_interior(p, v):
    v = np.asarray(v)
    for domain in (Torus2, Square2):
        q = exp_map(domain, p, v)
        np.testing.assert_allclose(exp_map(domain, q, -v), p, atol=1e-12)


def test_sample_uniform_deterministic_and_checked():
    a = sample_uniform(Torus2, 5, 3)
    np.testing.assert_array_equal(a, sample_uniform(Torus2, 5, 3))
    assert sample_uniform(Square2, 1, 1).shape == (1, 2)
    with pytest.raises(ValueError):
        sample_uniform(Torus2, 0, 0)


def test_sample_uniform_mean_clt():
    x = sample_uniform(Square2, 11, 100_000)
    assert abs(x[:, 0].mean() - 0.5) < 3 / math.sqrt(12 * 100_000)
    assert np.all((x >= 0) & (x < 1))


def test_quadrature_grid_shape_and_weights():
    pts, w = quadrature_grid(Torus2, 12)
    assert pts.shape == (12, 2)
    assert w.sum() == pytest.approx(1.0)
    assert len(np.unique(pts[:, 0])) * len(np.unique(pts[:, 1])) == 12
    pts, _ = quadrature_grid(Interval1, 5)
    np.testing.assert_allclose(pts[:, 0], [0.1, 0.3, 0.5, 0.7, 0.9])


def test_orbit_examples():
    small = orbit_images(Square2, (0.3, 0.4), 0.01)
    assert any(np.allclose(im, (0.3, 0.4)) for im in small.images)
    big = orbit_images(Square2, (0.3, 0.4), 3)
    for want in [(-0.3, 0.4), (0.3, -0.4), (1.7, 0.4)]:
        assert any(np.allclose(im, want) for im in big.images)
    with pytest.raises(ValueError):
        orbit_images(Square2, (0.3, 0.4), 0)


@given(st.tuples(unit, unit), st.floats(0.1, 4))
def test_orbit_images_fold_back(x, radius):
    for domain in (Square2, Torus2):
        orb = orbit_images(domain, x, radius)
        np.testing.assert_allclose(fold(domain, orb.images), np.broadcast_to(orb.base, orb.images.shape), atol=1e-12)


def test_orbit_is_complete_within_radius():
    # every reflected image within the radius of the cell is listed
    x, radius = np.array([0.3, 0.4]), 2.5
    orb = orbit_images(Square2, x, radius)
    brute = [(sx * x[0] + 2 * a, sy * x[1] + 2 * b) for sx in (1, -1) for sy in (1, -1)
             for a in range(-6, 7) for b in range(-6, 7)]
    brute = np.array(brute)
    gap = np.maximum(np.maximum(-brute, brute - 1), 0)
    inside = brute[np.sqrt((gap ** 2).sum(1)) <= radius]
    assert len(orb) == len(inside)


def test_orbit_count_grows_like_area():
    counts = {r: len(orbit_images(Square2, (0.3, 0.4), r)) for r in (10, 20)}
    for r, c in counts.items():
        # images of density one in the plane around a cell of area one
        assert c == pytest.approx(math.pi * r * r + 4 * r + 1, rel=0.02)


def test_corner_orbit_keeps_multiplicity():
    orb = orbit_images(Square2, (0.0, 0.0), 0.01)
    assert sum(np.allclose(im, (0, 0)) for im in orb.images) == 4
