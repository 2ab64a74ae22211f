"""Ball integrals, hierarchical potentials and their error bounds."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from siolab.cantor_geometry import default_schedule, node_from_path
from siolab.fractal_measure import LevelMeasure, sample_leaves
from siolab.potential_engine import (
    QuadratureSpec,
    TreecodeConfig,
    annulus_integral,
    annulus_uniform_oracle,
    ball_integral_estimate,
    ball_lebesgue_integral,
    kernel_deviation_bound,
    potential_direct,
    potential_treecode,
    reflectionless_closed_form,
    truncated_sio,
    uniform_node_annulus,
)
from siolab.sphere_kernel import (
    kernel_from_label,
    make_constant_kernel,
    moment_battery,
    moment_matrix,
    sphere_quadrature,
)

S = default_schedule()
MONO = kernel_from_label("monomial:1,2", 3)
EXAMPLE = kernel_from_label("example", 3)


def moments(k):
    return moment_matrix(k, sphere_quadrature(k.d, 1e-10, moment_battery(k)))


def ball_points(n, d, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random(n)[:, None] ** (1 / d)


@pytest.mark.parametrize("d", [3, 4])
def test_newton_kernel_inside_and_outside(d):
    k = make_constant_kernel(d)
    kappa = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    R = 0.7
    for D in (0.0, 0.2, 0.5, 0.69):
        x = np.zeros(d)
        x[0] = D
        exact = kappa * (d * R**2 / 2 - (d - 2) * D**2 / 2)
        assert ball_lebesgue_integral(k, np.zeros(d), R, x) == pytest.approx(exact, rel=1e-11)
    for D in (0.71, 1.0, 3.0, 40.0):
        x = np.zeros(d)
        x[-1] = D
        assert ball_lebesgue_integral(k, np.zeros(d), R, x) == pytest.approx(kappa * R**d / D ** (d - 2), rel=1e-11)


def test_monomial_ball_integral_at_fixed_point():
    # Monte Carlo oracle with 1e7 samples: 0.41907 +- 0.00053; closed form +2 pi / 15
    v = ball_lebesgue_integral(MONO, np.zeros(3), 1.0, np.array([0.5, 0.5, 0.0]))
    assert v == pytest.approx(2 * math.pi / 15, abs=1e-9)
    assert abs(v - 0.4190658569243636) < 4 * 0.0005264421062850267


def test_monomial_ball_integral_exterior_symmetric_point_vanishes():
    # Monte Carlo oracle: -2.4e-5 +- 1.4e-4
    assert abs(ball_lebesgue_integral(MONO, np.zeros(3), 1.0, np.array([2.0, 0.0, 0.0]))) < 1e-12


@pytest.mark.parametrize("label", ["example", "monomial:1,2", "monomial:1,3", "diff:1,2", "zero"])
def test_ball_integral_equals_moment_quadratic_form(label):
    k = kernel_from_label(label, 3)
    M = moments(k)
    for x in ball_points(12, 3, 5):
        est = ball_integral_estimate(k, np.zeros(3), 1.0, x)
        assert abs(est.value - reflectionless_closed_form(M, x)) <= 2e-6
        assert not est.statistical


@given(st.floats(0.2, 3.0), st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_ball_integral_independent_of_radius_once_point_is_inside(R, u):
    x = np.asarray(u) * R
    M = moments(MONO)
    assert ball_lebesgue_integral(MONO, np.zeros(3), R, x) == pytest.approx(M.quadratic_form(x), abs=1e-8)


def test_closed_form_rejects_exterior_points():
    with pytest.raises(ValueError):
        reflectionless_closed_form(moments(MONO), np.array([1.5, 0, 0]))


def test_annulus_uniform_oracle_matches_monte_carlo():
    # Monte Carlo oracle with 1e8 samples: 0.3440240 +- 5.8e-5
    z = 0.6 * np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    v = annulus_uniform_oracle(MONO, z, 1.0, 2.0)
    assert v == pytest.approx(0.3440044, abs=1e-6)
    assert abs(v - 0.3440239853498845) < 4 * 5.760089818567825e-05


def test_monte_carlo_fallback_is_flagged():
    est = ball_integral_estimate(MONO, np.zeros(3), 1.0, np.array([0.3, 0.2, 0.1]),
                                 QuadratureSpec(tolerance=1e-300, max_depth=0, mc_fallback_samples=20000))
    assert est.statistical and est.error_bound > 0


def test_deviation_bound_is_monotone_in_distance():
    b = [kernel_deviation_bound(1.0, 1.0, 1.0, 1, 0.01, r) for r in (0.1, 0.2, 0.4)]
    assert b[0] > b[1] > b[2] > 0


def test_treecode_config_validation():
    with pytest.raises(ValueError):
        TreecodeConfig(eta=0.1)
    with pytest.raises(ValueError):
        TreecodeConfig(safety=0.5)
    with pytest.raises(ValueError):
        TreecodeConfig(bound="loose")


@pytest.mark.parametrize("kernel", [MONO, EXAMPLE], ids=["monomial", "example"])
def test_treecode_within_bound_of_direct_sum(kernel):
    mu = LevelMeasure(S, 2)
    rng = np.random.default_rng(1)
    paths, _ = sample_leaves(mu, 8, 2)
    for p in paths:
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        x = node_from_path(S, tuple(p)).center_array + (S.radii[2] + 10 ** rng.uniform(-1.8, 0)) * u
        dr = potential_direct(kernel, mu, x)
        tc = potential_treecode(kernel, mu, x)
        assert abs(dr.value - tc.value) <= tc.error_bound
        assert tc.kernel_evals < dr.kernel_evals


def test_breakdown_sums_to_value():
    mu = LevelMeasure(S, 2)
    x = node_from_path(S, (3, 9)).center_array + np.array([0.0013, 0.0011, 0.0004])
    est = potential_direct(MONO, mu, x, eps=1e-3)
    assert math.fsum(est.breakdown.values()) == pytest.approx(est.value, abs=1e-15)
    assert set(est.breakdown) <= {"A1", "level_1", "level_2"}


def test_potential_refuses_points_on_the_support():
    mu = LevelMeasure(S, 1)
    with pytest.raises(ValueError):
        potential_direct(MONO, mu, node_from_path(S, (0,)).center_array)


def test_truncated_integral_limits():
    mu = LevelMeasure(S, 2)
    x = node_from_path(S, (3, 9)).center_array + np.array([0.0013, 0.0011, 0.0004])
    assert truncated_sio(MONO, mu, x, 10.0).value == 0.0
    direct = potential_direct(MONO, mu, x).value
    assert truncated_sio(MONO, mu, x, 1e-6).value == pytest.approx(direct, rel=1e-12)


def test_truncations_telescope_into_annuli():
    mu = LevelMeasure(S, 2)
    _, pts = sample_leaves(mu, 1, 3)
    x = pts[0]
    a, b, c = 1e-3, 1e-2, 1e-1
    t_a, t_b, t_c = (truncated_sio(MONO, mu, x, e) for e in (a, b, c))
    ann_ab = annulus_integral(MONO, mu, x, a, b)
    ann_bc = annulus_integral(MONO, mu, x, b, c)
    # cut leaves are integrated numerically, so agreement is up to the reported bounds
    slack = t_a.error_bound + t_c.error_bound + ann_ab.error_bound + ann_bc.error_bound
    assert abs((t_a.value - t_c.value) - (ann_ab.value + ann_bc.value)) <= slack + 1e-15
    slack = t_a.error_bound + t_b.error_bound + ann_ab.error_bound
    assert abs((t_a.value - t_b.value) - ann_ab.value) <= slack + 1e-15
    assert slack < 1e-4


def test_uniform_node_annulus_scales_with_density():
    c = node_from_path(S, (4,)).center_array
    r = S.radii[1]
    z = c + r * np.array([0.3, 0.3, 0.0])
    est = uniform_node_annulus(MONO, S, 1, c, z, r, 2 * r)
    # (d-2)-homogeneity: rescaling to the unit ball multiplies by r^2, density 1/(kappa r^2)
    assert est.value == pytest.approx(annulus_uniform_oracle(MONO, [0.3, 0.3, 0.0], 1.0, 2.0) / S.kappa, rel=1e-9)


def test_far_field_limit_is_angular_profile():
    mu = LevelMeasure(S, 2)
    e = np.array([0.6, 0.8, 0.0])
    x = 100.0 * e
    est = potential_treecode(MONO, mu, x)
    sup, hol = MONO.bounds()
    assert abs(100.0 * est.value - MONO(e)) <= 2 * (sup + hol) / 100.0
