import math

import numpy as np
import pytest

from matchlab.errors import ConfigError
from matchlab.geometry import Interval1, Square2, Torus2, quadrature_grid, sample_uniform
from matchlab.heatkernel import FrequencyLattice, heat_kernel, q_kernel
from matchlab.potential import (EventCheckConfig, PotentialField, build_potential, certified_sup_hessian,
                                density_from_potential, dirichlet_energy, eval_field,
                                expected_energy_closed_form, field_from_modes, hessian_opnorm,
                                grid_hessian, third_derivative_lipschitz, zero_field)
from matchlab.potential import _scan_grid
from matchlab.rng import make_rng

T = 1e-2
DOMAINS = [Torus2, Square2, Interval1]


@pytest.fixture(scope="module")
def lat():
    return {d: FrequencyLattice.for_time(d, T) for d in DOMAINS}


@pytest.fixture(scope="module")
def fields(lat):
    return {d: build_potential(lat[d], sample_uniform(d, 5, 12), T) for d in DOMAINS}


def cos_mode(lattice, eps):
    """``eps cos(2π y1)`` on the torus."""
    return field_from_modes(lattice, {(1, 0): eps / 2, (-1, 0): eps / 2})


def test_build_requires_points(lat):
    with pytest.raises(ValueError):
        build_potential(lat[Torus2], np.zeros((0, 2)), T)


def test_identical_points_equal_single_point(lat):
    p = np.array([[0.3, 0.7]])
    one = build_potential(lat[Torus2], p, T)
    many = build_potential(lat[Torus2], np.repeat(p, 5, axis=0), T)
    np.testing.assert_allclose(many.coef, one.coef, atol=1e-15)
    assert many.n == 5 and one.n == 1


@pytest.mark.parametrize("domain", DOMAINS)
def test_field_equals_direct_kernel_average(domain, lat, fields):
    X = sample_uniform(domain, 5, 12)
    y = sample_uniform(domain, 6, 7)
    direct = np.mean(q_kernel(lat[domain], T, X[:, None, :], y[None, :, :]), axis=0)
    np.testing.assert_allclose(fields[domain](y), direct, atol=1e-10)


@pytest.mark.parametrize("domain", DOMAINS)
def test_field_has_zero_mean(domain, fields):
    pts, w = quadrature_grid(domain, 64 ** domain.dim)
    assert np.sum(w * fields[domain](pts)) == pytest.approx(0.0, abs=1e-10)
    assert fields[domain].coef[0] == 0


def test_torus_coefficients_conjugate_symmetric(lat, fields):
    L = lat[Torus2]
    index = {tuple(k): i for i, k in enumerate(L.modes)}
    c = fields[Torus2].coef
    for k, i in index.items():
        assert c[index[(-k[0], -k[1])]] == pytest.approx(np.conj(c[i]), abs=1e-15)
    assert np.isrealobj(fields[Square2].coef)


def test_potential_rejects_constant_mode(lat):
    coef = np.zeros(len(lat[Torus2]), dtype=complex)
    coef[0] = 1
    with pytest.raises(ValueError):
        PotentialField(lat[Torus2], coef)


def test_zero_field_all_orders(lat):
    for d in DOMAINS:
        z = zero_field(lat[d])
        y = sample_uniform(d, 1, 4)
        for order in range(4):
            assert np.all(eval_field(z, y, order) == 0)
    with pytest.raises(ValueError):
        eval_field(zero_field(lat[Torus2]), (0.1, 0.1), 4)


def test_single_point_shapes(fields):
    f = fields[Square2]
    assert np.shape(f((0.2, 0.3))) == ()
    assert f((0.2, 0.3), 1).shape == (2,)
    assert f((0.2, 0.3), 2).shape == (2, 2)
    assert f((0.2, 0.3), 3).shape == (2, 2, 2)
    assert f(np.zeros((4, 2)), 2).shape == (4, 2, 2)


@pytest.mark.parametrize("domain", [Torus2, Square2])
def test_gradient_and_hessian_vs_finite_differences(domain, fields):
    f = fields[domain]
    y = np.array([0.41, 0.63])
    h = 1e-5
    E = np.eye(2)
    fd_grad = np.array([(f(y + h * e) - f(y - h * e)) / (2 * h) for e in E])
    np.testing.assert_allclose(f(y, 1), fd_grad, rtol=1e-6, atol=1e-9)
    fd_hess = np.array([(f(y + h * e, 1) - f(y - h * e, 1)) / (2 * h) for e in E])
    np.testing.assert_allclose(f(y, 2), fd_hess, rtol=1e-5, atol=1e-7)
    fd_third = np.array([(f(y + h * e, 2) - f(y - h * e, 2)) / (2 * h) for e in E])
    np.testing.assert_allclose(f(y, 3), fd_third, rtol=1e-5, atol=1e-5)


def test_hessian_symmetric(fields):
    H = fields[Square2](sample_uniform(Square2, 2, 10), 2)
    np.testing.assert_array_equal(H, np.swapaxes(H, -1, -2))


def test_single_mode_hessian(lat):
    eps = 0.01
    f = cos_mode(lat[Torus2], eps)
    H = f((0.0, 0.37), 2)
    assert H[0, 0] == pytest.approx(-4 * math.pi ** 2 * eps, rel=1e-12)
    assert H[1, 1] == pytest.approx(0, abs=1e-15) and H[0, 1] == pytest.approx(0, abs=1e-15)


@pytest.mark.parametrize("domain", DOMAINS)
def test_laplacian_trace_identity(domain, fields):
    f = fields[domain]
    u = density_from_potential(f)
    y = sample_uniform(domain, 9, 11)
    lap = np.trace(f(y, 2), axis1=-2, axis2=-1)
    np.testing.assert_allclose(-lap, u(y) - 1, atol=1e-10)


def test_density_examples(lat):
    assert np.allclose(density_from_potential(zero_field(lat[Torus2]))(sample_uniform(Torus2, 3, 5)), 1.0)
    f = build_potential(lat[Torus2], [[0.2, 0.9]], 10.0)
    np.testing.assert_allclose(density_from_potential(f)(sample_uniform(Torus2, 3, 5)), 1.0, atol=1e-15)


@pytest.mark.parametrize("domain", DOMAINS)
def test_density_equals_heat_average(domain, lat, fields):
    X = sample_uniform(domain, 5, 12)
    y = sample_uniform(domain, 8, 6)
    u = density_from_potential(fields[domain])
    direct = np.mean(heat_kernel(lat[domain], T, X[:, None, :], y[None, :, :]), axis=0)
    np.testing.assert_allclose(u(y), direct, atol=1e-10)
    np.testing.assert_allclose(u.coef[1:], lat[domain].lam[1:] * fields[domain].coef[1:])


@pytest.mark.parametrize("domain", [Torus2, Square2])
def test_dirichlet_energy_quadrature(domain, fields):
    f = fields[domain]
    pts, w = quadrature_grid(domain, 96 ** 2)
    g = f(pts, 1)
    assert np.sum(w * np.sum(g * g, axis=-1)) == pytest.approx(dirichlet_energy(f), rel=1e-8)
    assert dirichlet_energy(zero_field(f.lattice)) == 0


def test_single_point_energy_is_location_free(lat):
    L = lat[Torus2]
    expected = expected_energy_closed_form(L, 1, T)
    for p in sample_uniform(Torus2, 12, 10):
        assert dirichlet_energy(build_potential(L, p[None], T)) == pytest.approx(expected, rel=1e-12)


def test_energy_monotone_in_time():
    X = sample_uniform(Square2, 4, 20)
    L = FrequencyLattice.for_time(Square2, 1e-3)
    energies = [dirichlet_energy(build_potential(L, X, t)) for t in (1e-3, 3e-3, 1e-2, 3e-2, 0.1)]
    assert all(a >= b for a, b in zip(energies, energies[1:]))


def test_closed_form_examples(lat):
    L = lat[Torus2]
    assert expected_energy_closed_form(L, 20, T) == pytest.approx(expected_energy_closed_form(L, 10, T) / 2, rel=1e-15)
    with pytest.raises(ValueError):
        expected_energy_closed_form(L, 0, T)
    # (1/n) 4 e^{-80π²}/(4π²) underflows double precision
    assert expected_energy_closed_form(L, 3, 10.0) == pytest.approx(0.0, abs=1e-300)
    consts = [4 * math.pi * 7 * expected_energy_closed_form(FrequencyLattice.for_time(Torus2, t), 7, t) - abs(math.log(t))
              for t in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)]
    assert max(abs(c) for c in consts) < 5


@pytest.mark.parametrize("domain", [Torus2, Square2])
def test_energy_expectation_identity(domain):
    n, t, trials = 20, 0.01, 400
    L = FrequencyLattice.for_time(domain, t)
    e = np.array([dirichlet_energy(build_potential(L, sample_uniform(domain, make_rng(9, k), n), t))
                  for k in range(trials)])
    se = e.std(ddof=1) / math.sqrt(trials)
    assert abs(e.mean() - expected_energy_closed_form(L, n, t)) < 4 * se


def test_hessian_opnorm_matches_eigvalsh(rng):
    A = rng.normal(size=(50, 2, 2))
    A = A + np.swapaxes(A, 1, 2)
    np.testing.assert_allclose(hessian_opnorm(A), np.max(np.abs(np.linalg.eigvalsh(A)), axis=1), rtol=1e-12)
    np.testing.assert_allclose(hessian_opnorm(A[:, :1, :1]), np.abs(A[:, 0, 0]))


def test_certified_sup_zero_field(lat):
    res = certified_sup_hessian(zero_field(lat[Torus2]), EventCheckConfig(xi=0.1))
    assert (res.grid_max, res.certified, res.event) == (0.0, 0.0, True)


def test_certified_sup_single_mode(lat):
    eps = 0.01
    f = cos_mode(lat[Torus2], eps)
    assert third_derivative_lipschitz(f) == pytest.approx(8 * math.pi ** 3 * eps, rel=1e-12)
    res = certified_sup_hessian(f, EventCheckConfig(xi=1.0))
    exact = 4 * math.pi ** 2 * eps
    assert res.grid_max <= exact + 1e-12
    assert exact <= res.certified <= exact + res.spacing * 8 * math.pi ** 3 * eps + 1e-12
    assert res.event


def test_certified_bound_dominates_grid(fields):
    for f in fields.values():
        res = certified_sup_hessian(f, EventCheckConfig(xi=0.5))
        assert res.certified >= res.grid_max
        fine = eval_field(f, sample_uniform(f.lattice.domain, 2, 4000), 2)
        assert np.max(hessian_opnorm(fine)) <= res.certified


def test_coarse_spacing_rejected(fields):
    f = fields[Torus2]
    L = third_derivative_lipschitz(f)
    with pytest.raises(ConfigError, match="need spacing"):
        certified_sup_hessian(f, EventCheckConfig(xi=0.5, spacing=0.5 / L))
    ok = certified_sup_hessian(f, EventCheckConfig(xi=0.5, spacing=0.5 / (2 * L)))
    assert ok.spacing <= 0.5 / (2 * L)


def test_event_config_validation():
    with pytest.raises(ConfigError):
        EventCheckConfig(xi=0)
    with pytest.raises(ConfigError):
        EventCheckConfig(xi=0.1, spacing=-1)


def test_density_deviation_bounded_by_twice_hessian(fields):
    for d in (Torus2, Square2):
        f = fields[d]
        pts, _ = quadrature_grid(d, 64 ** 2)
        u = density_from_potential(f)(pts)
        assert np.max(np.abs(u - 1)) <= 2 * certified_sup_hessian(f, EventCheckConfig(xi=1e3)).certified


def test_sup_hessian_invariant_under_lattice_rotation(lat):
    X = sample_uniform(Torus2, 21, 15)
    rotated = np.column_stack([X[:, 1], (1 - X[:, 0]) % 1.0])
    cfg = EventCheckConfig(xi=1e3)
    a = certified_sup_hessian(build_potential(lat[Torus2], X, T), cfg)
    b = certified_sup_hessian(build_potential(lat[Torus2], rotated, T), cfg)
    assert a.grid_max == pytest.approx(b.grid_max, rel=1e-9)


@pytest.fixture(scope="module")
def smooth_field():
    return build_potential(FrequencyLattice.for_time(Torus2, 0.1), sample_uniform(Torus2, 3, 10), 0.1)


@pytest.mark.parametrize("xi", [1e-3, 3e-3, 1e-2, 3e-2, 0.1])
def test_event_nesting_in_xi(xi, smooth_field):
    small = certified_sup_hessian(smooth_field, EventCheckConfig(xi=xi))
    big = certified_sup_hessian(smooth_field, EventCheckConfig(xi=2 * xi))
    assert big.event or not small.event


@pytest.mark.parametrize("domain", [Torus2, Square2, Interval1])
@pytest.mark.parametrize("extra", [1, 17])
def test_fast_grid_hessian_matches_direct(domain, extra):
    lat = FrequencyLattice.for_time(domain, 0.01)
    field = build_potential(lat, sample_uniform(domain, make_rng(3, 1), 7), 0.01)
    nodes = 2 * int(np.max(np.abs(lat.modes))) + extra
    fast = grid_hessian(field, nodes)
    direct = eval_field(field, _scan_grid(domain, nodes), 2)
    assert fast.shape == direct.shape
    assert np.max(np.abs(fast - direct)) <= 1e-12 * np.max(np.abs(direct))
    with pytest.raises(ValueError, match="aliases"):
        grid_hessian(field, nodes - extra)
