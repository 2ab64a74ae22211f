"""Acceptance criteria, one test per criterion at the stated tolerances.

Each test records a one-line PASS/FAIL summary (printed at the end of the
session) before asserting.  Criterion 2 has two tests: the sign as stated in
the build contract, which the ball integral does not satisfy, and the sign
the integral actually has.  See the README for the discussion.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from siolab.cantor_geometry import default_schedule, node_from_path, verify_geometry
from siolab.fractal_measure import (
    LevelMeasure,
    ball_mass,
    density_dip,
    exact_total_mass,
    growth_scan,
    sample_leaves,
    total_mass,
)
from siolab.lab_cli import cmd_bounded, cmd_moment, cmd_pv, cmd_unbounded, config_from_dict
from siolab.potential_engine import (
    ball_integral_estimate,
    potential_direct,
    potential_treecode,
    reflectionless_closed_form,
)
from siolab.sphere_kernel import kernel_from_label, moment_battery, moment_matrix, sphere_quadrature

S = default_schedule()
BATTERY = ["example", "monomial:1,2", "monomial:1,3", "monomial:2,3", "diff:1,2", "zero"]


def record(n, ok, detail, t0, suffix=""):
    line = f"criterion {n}{suffix}: {'PASS' if ok else 'FAIL'} ({detail}; {time.perf_counter() - t0:.1f}s)"
    ACCEPTANCE_LINES[f"{n}{suffix}"] = line
    print(line)
    return ok


def test_criterion_1_moment_condition():
    t0 = time.perf_counter()
    ex = cmd_moment(config_from_dict({"kernel": {"label": "example"}}))
    mono = cmd_moment(config_from_dict({"kernel": {"label": "monomial:1,2"}}))
    m_ex, mean_ex = ex.summary["max_abs_moment"], abs(ex.summary["mean"])
    m12 = mono.records[0]["moments"][0][1]
    ok = m_ex <= 1e-6 and mean_ex <= 1e-8 and abs(m12 - 4 * math.pi / 15) <= 1e-6 and ex.passed and mono.passed
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30
    record(1, ok, f"max|M|={m_ex:.2e}, |mean|={mean_ex:.2e}, |M12-4pi/15|={abs(m12 - 4 * math.pi / 15):.2e}", t0)
    assert ok


def _battery_discrepancies(sign):
    rng = np.random.default_rng(2)
    g = rng.standard_normal((100, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    xs = g * rng.random(100)[:, None] ** (1 / 3)
    worst = {}
    for label in BATTERY:
        k = kernel_from_label(label, 3)
        M = moment_matrix(k, sphere_quadrature(3, 1e-10, moment_battery(k)))
        worst[label] = max(
            abs(ball_integral_estimate(k, np.zeros(3), 1.0, x).value - sign * reflectionless_closed_form(M, x))
            for x in xs
        )
    mono = kernel_from_label("monomial:1,2", 3)
    at_half = ball_integral_estimate(mono, np.zeros(3), 1.0, np.array([0.5, 0.5, 0.0])).value
    return worst, at_half


def test_criterion_2_reflectionless_as_stated():
    """Literal contract: integral equals -x^T M x.  Fails for every kernel with M != 0."""
    t0 = time.perf_counter()
    worst, at_half = _battery_discrepancies(-1.0)
    ok = all(v <= 2e-6 for v in worst.values()) and abs(at_half + 2 * math.pi / 15) <= 1e-6
    bad = sorted(k for k, v in worst.items() if v > 2e-6)
    record(2, ok, f"stated sign -x^T M x; violated by {bad}; value at (1/2,1/2,0) = {at_half:.6f}", t0, "a")
    assert ok


def test_criterion_2_reflectionless_corrected_sign():
    t0 = time.perf_counter()
    worst, at_half = _battery_discrepancies(1.0)
    ok = all(v <= 2e-6 for v in worst.values()) and abs(at_half - 2 * math.pi / 15) <= 1e-6
    ok &= time.perf_counter() - t0 < 120
    record(2, ok, f"sign +x^T M x; worst discrepancy {max(worst.values()):.2e}; value at (1/2,1/2,0) = +2pi/15", t0, "b")
    assert ok


def test_criterion_3_construction_invariants():
    t0 = time.perf_counter()
    rep = verify_geometry(S, n_samples=10_000, seed=0)
    counts = [lv.expected_children for lv in rep.levels]
    enumerated = [lv.enumerated for lv in rep.levels]
    ok = rep.ok and rep.determinism_ok and counts == [64, 128, 256] and enumerated[:2] == [True, True]
    ok &= rep.levels[2].groups_checked >= min(10_000, S.node_count(2))
    ok &= time.perf_counter() - t0 < 120
    record(3, ok, f"groups checked {[lv.groups_checked for lv in rep.levels]}, all properties hold", t0)
    assert ok


def test_criterion_4_measure_laws():
    t0 = time.perf_counter()
    mu = LevelMeasure(S, 3)
    ok = exact_total_mass(mu) == 1 and total_mass(mu) == 1.0
    paths, pts = sample_leaves(mu, 100, 4)
    worst_mass = 0.0
    for p in paths:
        for k in range(4):
            c = node_from_path(S, tuple(p[:k])).center_array
            worst_mass = max(worst_mass, abs(ball_mass(mu, c, S.dilated_radii[k]) - S.radii[k]))
    consts = [growth_scan(LevelMeasure(S, m), 10_000, m).constant for m in (1, 2, 3)]
    worst_dip = 0.0
    for p, x in zip(paths[:20], pts[:20]):
        worst_dip = max(worst_dip, max(r.relative for r in density_dip(mu, tuple(p), x)))
    ok &= worst_mass <= 1e-8 and all(math.isfinite(c) for c in consts)
    ok &= max(consts) / min(consts) <= 2.0 and worst_dip <= 0.1
    ok &= time.perf_counter() - t0 < 180
    record(4, ok, f"mass err {worst_mass:.1e}, growth constants {[round(c, 4) for c in consts]}, worst dip {worst_dip:.3f}", t0)
    assert ok


def test_criterion_5_treecode_soundness_and_cost():
    t0 = time.perf_counter()
    mu = LevelMeasure(S, 2)
    sound, total, min_gain = 0, 0, math.inf
    for label in ("monomial:1,2", "example"):
        k = kernel_from_label(label, 3)
        rng = np.random.default_rng(5)
        paths, _ = sample_leaves(mu, 50, 11)
        for p in paths:
            u = rng.standard_normal(3)
            u /= np.linalg.norm(u)
            dist = math.exp(rng.uniform(math.log(2.0**-6), 0.0))
            x = node_from_path(S, tuple(p)).center_array + (S.radii[2] + dist) * u
            dr, tc = potential_direct(k, mu, x), potential_treecode(k, mu, x)
            total += 1
            sound += abs(dr.value - tc.value) <= tc.error_bound
            if dist >= 0.1:
                min_gain = min(min_gain, dr.kernel_evals / tc.kernel_evals)
    ok = sound == total and min_gain >= 10 and time.perf_counter() - t0 < 180
    record(5, ok, f"{sound}/{total} within bound, min cost reduction {min_gain:.1f}x at distance >= 0.1", t0)
    assert ok


def test_criterion_6_bounded_versus_unbounded():
    t0 = time.perf_counter()
    bnd = cmd_bounded(config_from_dict({"kernel": {"label": "example"}}))
    unb = cmd_unbounded(config_from_dict({"kernel": {"label": "monomial:1,2"}}))
    per = bnd.summary["per_depth"]
    c0 = unb.summary["c0"]
    incs = [v.value for v in unb.verdicts if v.name.startswith("increment_")]
    ok = bnd.passed and unb.passed and all(i >= c0 / 2 for i in incs) and sum(incs) >= 1.5 * c0
    ok &= time.perf_counter() - t0 < 300
    record(6, ok, f"sup depth1 {per[1]['sup_abs']:.3e} depth3 {per[3]['sup_abs']:.3e}; increments "
                  f"{[round(i, 4) for i in incs]} vs c0/2 = {c0 / 2:.4f}", t0)
    assert ok


def test_criterion_7_principal_value_failure():
    t0 = time.perf_counter()
    details, ok = [], True
    for label in ("monomial:1,2", "example"):
        rep = cmd_pv(config_from_dict({"kernel": {"label": label}}))
        ok &= rep.passed and rep.summary["median_ratio"] >= 0.5
        details.append(f"{label} ratio {rep.summary['median_ratio']:.3f}")
    ok &= time.perf_counter() - t0 < 300
    record(7, ok, ", ".join(details) + ", surrogate gap within C delta^alpha", t0)
    assert ok


def test_criterion_8_far_field_law():
    t0 = time.perf_counter()
    mu = LevelMeasure(S, 2)
    rng = np.random.default_rng(8)
    dirs = rng.standard_normal((20, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    worst, ok = 0.0, True
    for label in ("example", "monomial:1,2"):
        k = kernel_from_label(label, 3)
        sup, hol = k.bounds()
        for e in dirs:
            for R in (10.0, 100.0):
                est = potential_direct(k, mu, R * e)
                dev = abs(R * est.value - float(k(e))) + R * est.error_bound
                allow = 2 * (sup + hol) / R
                worst = max(worst, dev / allow)
                ok &= dev <= allow
    ok &= time.perf_counter() - t0 < 60
    record(8, ok, f"worst deviation {worst:.3f} of the allowance", t0)
    assert ok
