"""Level measures, ball masses, growth and density profiles."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from siolab.cantor_geometry import default_schedule, node_from_path
from siolab.fractal_measure import (
    LevelMeasure,
    ball_mass,
    ball_mass_many,
    density_dip,
    density_profile,
    exact_total_mass,
    growth_scan,
    lens_volume,
    sample_leaves,
    sampled_total_mass,
    total_mass,
)

S = default_schedule()


def lens_closed_form_3d(a, b, dist):
    if dist >= a + b:
        return 0.0
    if dist <= abs(a - b):
        return 4 * math.pi / 3 * min(a, b) ** 3
    return math.pi * (a + b - dist) ** 2 * (
        dist**2 + 2 * dist * b - 3 * b**2 + 2 * dist * a + 6 * a * b - 3 * a**2
    ) / (12 * dist)


@given(st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(0.0, 4.5))
def test_lens_volume_matches_three_dimensional_closed_form(a, b, dist):
    assert float(lens_volume(a, b, dist, 3)) == pytest.approx(lens_closed_form_3d(a, b, dist), rel=1e-9, abs=1e-12)


def test_lens_volume_fixed_value():
    assert float(lens_volume(1.0, 0.8, 1.1, 3)) == pytest.approx(lens_closed_form_3d(1.0, 0.8, 1.1), rel=1e-13)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_total_mass_is_one(m):
    mu = LevelMeasure(S, m)
    assert exact_total_mass(mu) == Fraction(1)
    assert total_mass(mu) == 1.0
    assert sampled_total_mass(mu) == pytest.approx(1.0, abs=1e-14)


def test_leaf_mass_and_density():
    mu = LevelMeasure(S, 2)
    assert mu.leaf_count == 8192
    assert mu.leaf_mass == pytest.approx(S.radii[2], rel=1e-15)
    assert mu.density * (4 * math.pi / 3) * S.radii[2] ** 3 == pytest.approx(mu.leaf_mass, rel=1e-14)


@given(st.tuples(st.integers(0, 63), st.integers(0, 127), st.integers(0, 255)), st.integers(0, 3))
def test_ancestor_dilated_ball_carries_node_mass(path, k):
    mu = LevelMeasure(S, 3)
    c = node_from_path(S, path[:k]).center_array
    assert ball_mass(mu, c, S.dilated_radii[k]) == pytest.approx(S.radii[k] ** (S.d - 2), abs=1e-8)


def test_ball_mass_far_away_and_everything():
    mu = LevelMeasure(S, 2)
    assert ball_mass(mu, np.array([5.0, 0, 0]), 1.0) == 0.0
    assert ball_mass(mu, np.zeros(3), 10.0) == pytest.approx(1.0, abs=1e-13)


def test_ball_mass_cutting_one_leaf_uses_lens_volume():
    mu = LevelMeasure(S, 1)
    c = node_from_path(S, (7,)).center_array
    r = S.radii[1]
    q = c + np.array([r, 0.0, 0.0])
    expected = mu.density * lens_closed_form_3d(r, 0.5 * r, r)
    assert ball_mass(mu, q, 0.5 * r) == pytest.approx(expected, rel=1e-10)


def test_ball_mass_many_matches_single_queries():
    mu = LevelMeasure(S, 2)
    _, pts = sample_leaves(mu, 8, 4)
    radii = np.geomspace(1e-4, 0.5, 8)
    m, e = ball_mass_many(mu, pts, radii)
    for p, r, v in zip(pts, radii, m):
        assert ball_mass(mu, p, r) == v
    assert np.all(e < 1e-12)


@given(st.integers(0, 2**31 - 1))
def test_ball_mass_is_monotone_in_radius(seed):
    mu = LevelMeasure(S, 2)
    _, pts = sample_leaves(mu, 1, seed)
    radii = np.geomspace(1e-5, 2.0, 12)
    m, _ = ball_mass_many(mu, np.repeat(pts, 12, axis=0), radii)
    assert np.all(np.diff(m) >= -1e-15)


def test_samples_lie_in_their_leaves():
    mu = LevelMeasure(S, 3)
    paths, pts = sample_leaves(mu, 50, 2)
    for p, x in zip(paths, pts):
        assert np.linalg.norm(x - node_from_path(S, tuple(p)).center_array) <= S.radii[3] * (1 + 1e-12)
    again = sample_leaves(mu, 50, 2)
    assert np.array_equal(again[1], pts)


def test_growth_constants_stable_across_depths():
    consts = [growth_scan(LevelMeasure(S, m), 2000, m).constant for m in (1, 2, 3)]
    assert all(1.0 <= c <= 100.0 for c in consts)
    assert max(consts) / min(consts) <= 2.0


def test_density_profile_and_dip():
    mu = LevelMeasure(S, 2)
    paths, pts = sample_leaves(mu, 3, 9)
    for p, x in zip(paths, pts):
        prof = density_profile(mu, x, [S.radii[1], 0.5, 4.0])
        assert prof.ratios[-1] == pytest.approx(1.0 / 4.0, abs=1e-12)
        for rec in density_dip(mu, tuple(p), x):
            assert 0.0 < rec.relative <= 0.1
    with pytest.raises(ValueError):
        density_profile(mu, np.array([9.0, 0, 0]), [1.0])
