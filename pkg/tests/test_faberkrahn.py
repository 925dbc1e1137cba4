import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caplab.domain import GridDomain, embed, make_ball, make_ellipsoid, spiked_ball, translate
from caplab.faberkrahn import (
    HALL_C,
    ball_eigenvalue,
    c1_constant,
    c2_constant,
    cutoff,
    faber_krahn_check,
    fit_hall_constant,
    hall_deficit,
    isoperimetric_check,
    kappa_constant,
    scaled_deficit,
    stability_experiment,
    transplant,
    volume_bound_check,
    volume_bound_slope,
)
from caplab.spectral import solve_domain

import oracles


def test_ball_eigenvalue_constants():
    assert ball_eigenvalue(3, 4 * math.pi / 3) == pytest.approx(math.pi**2, rel=1e-12)
    assert ball_eigenvalue(2, math.pi) == pytest.approx(oracles.disk_eigenvalues()[0], rel=1e-9)
    # c_2(n) = lam_1(B) vol(B)^(2/n) is the same for every radius
    assert c2_constant(2) == pytest.approx(ball_eigenvalue(2, 7.0) * 7.0, rel=1e-12)
    assert c1_constant(3, 1.0) == 7.0


def test_hall_ball():
    assert hall_deficit(make_ball(2, 1, 1 / 256)).F <= 0.01


def test_hall_brute_force_oracle():
    dom = spiked_ball(2, 1, 1, 0.25, 1 / 16)
    hall = hall_deficit(dom)
    best, _ = oracles.best_overlap(dom.mask, hall.R / dom.h)
    assert hall.F == pytest.approx(1 - best / dom.n_active, abs=1e-12)


def test_hall_spike_fraction():
    dom = spiked_ball(2, 1, 3, 0.05, 1 / 256)
    core = make_ball(2, 1, 1 / 256).volume()
    v = (dom.volume() - core) / dom.volume()
    assert hall_deficit(dom).F == pytest.approx(v, abs=0.02)


def test_hall_two_balls():
    h = 1 / 64
    mask = np.zeros((200, 100), bool)
    ball = make_ball(2, 0.5, h).mask
    n = ball.shape[0]
    mask[5:5 + n, 20:20 + n] = ball
    mask[120:120 + n, 20:20 + n] = ball
    assert hall_deficit(GridDomain(mask, h)).F == pytest.approx(0.5, abs=0.03)


@settings(max_examples=15, deadline=None)
@given(st.integers(-6, 6), st.integers(-6, 6))
def test_hall_translation_invariant(dx, dy):
    dom = embed(spiked_ball(2, 0.5, 0.3, 0.125, 1 / 32), 7)
    assert hall_deficit(translate(dom, (dx, dy))).F == pytest.approx(hall_deficit(dom).F, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.05, 2.0), st.lists(st.floats(-4, 4), min_size=3, max_size=3),
       st.lists(st.floats(-4, 4), min_size=3, max_size=3))
def test_cutoff_lipschitz(s, gap, x, y):
    t = s + gap
    fx, fy = cutoff(s, t, x), cutoff(s, t, y)
    assert 0.0 <= fx <= 1.0
    assert abs(fx - fy) <= math.dist(x, y) / (t - s) + 1e-12


def test_cutoff_values():
    assert cutoff(1, 2, [0.5, 0, 0]) == 1.0
    assert cutoff(1, 2, 1.5) == pytest.approx(0.5)
    assert cutoff(1, 2, [0, 3.0]) == 0.0
    with pytest.raises(ValueError):
        cutoff(2, 1, 0.0)


def test_isoperimetric_ball():
    rep = isoperimetric_check(make_ball(3, 1, 1 / 32))
    assert rep.passed
    assert rep.rows[0]["F"] < 0.01


def test_isoperimetric_2d_is_informational():
    rep = isoperimetric_check(make_ellipsoid((1.5, 0.6), 1 / 64))
    assert rep.get("P_B(1+cF^4)<=P").status == "hypothesis-not-met"


def test_isoperimetric_spiked():
    dom = spiked_ball(3, 1, 1, 0.25, 1 / 16)
    rep = isoperimetric_check(dom)
    assert rep.passed
    assert rep.get("P_B(1+cF^4)<=P").margin > 0


def test_hall_fit_frozen():
    c, rows = fit_hall_constant(3, (1.5, 2.0), 1 / 16)
    assert all(r["ratio"] > 0 for r in rows)
    assert c == min(r["ratio"] for r in rows)
    assert HALL_C[3] > 0


def test_volume_bound_ball():
    dom = make_ball(3, 1, 1 / 16)
    eps = scaled_deficit(dom)
    assert abs(eps) < 1e-9
    rep = volume_bound_check(dom, max(eps, 1e-12))
    assert rep.rows[0]["excess"] == pytest.approx(0.0, abs=1e-12)


def test_volume_bound_eps_out_of_range():
    rep = volume_bound_check(make_ball(3, 1, 1 / 8), 1.5)
    assert rep.passed
    assert all(c.status == "hypothesis-not-met" for c in rep.checks)


def test_volume_bound_spike_sweep():
    rows = []
    for w in (4, 2, 1):
        dom = spiked_ball(3, 1, 0.5, w / 16, 1 / 16)
        eps = scaled_deficit(dom)
        rep = volume_bound_check(dom, eps)
        assert rep.passed
        rows.append(rep.rows[0])
    eps = [r["eps"] for r in rows]
    excess = [r["excess"] for r in rows]
    assert eps == sorted(eps, reverse=True)
    assert excess == sorted(excess, reverse=True)
    assert volume_bound_slope(eps, excess).passed


def test_transplant_identity():
    dom = make_ball(3, 1, 1 / 12)
    res = transplant(dom, (0.0, 0.0, 0.0), 1.0, 3)
    assert res.theta == 0.0
    assert res.report.passed
    lam = res.report.rows
    assert all(abs(r["energy"] - r["lambda_hat"]) <= 1e-7 * r["lambda_hat"] for r in lam)


def test_transplant_spiked():
    dom = spiked_ball(3, 1, 1, 0.1, 1 / 24)
    res = transplant(dom, (0.0, 0.0, 0.0), 1.0, 1)
    assert 0.005 < res.theta < 0.05
    assert res.report.passed
    assert res.slack[0] > 0
    assert res.gram_defect <= 1e-10


def test_transplant_theta_above_kappa():
    dom = make_ball(3, 1, 1 / 8)
    spec = solve_domain(dom, 1)
    kappa = kappa_constant(1, 3, spec.eigenvalues[0])
    res = transplant(dom, (0.0, 0.0, 0.0), 1.0, 1, spec_hat=spec, theta=1.1 * kappa)
    assert not res.hypothesis
    assert res.report.get("theta<kappa").status == "hypothesis-not-met"


def test_stability_refined_ball():
    family = [make_ball(3, 8 * h, h) for h in (1.0, 0.5, 0.25)]
    with pytest.raises(ValueError):
        stability_experiment(family[:2], 2)
    rep = stability_experiment(family, 2)
    assert rep.passed
    for row in rep.rows:
        assert row["gap_1"] < 1e-8 * ball_eigenvalue(3, 1.0)


def test_stability_translations_no_trend():
    base = embed(spiked_ball(3, 8, 2, 2, 1.0), 2)
    family = [base, translate(base, (1, 0, 0)), translate(base, (0, -1, 1))]
    rep = stability_experiment(family, 2)
    assert rep.passed
    assert rep.get("trend").details["verdict"] == "no trend"
    gaps = [r["gap_1"] for r in rep.rows]
    assert max(gaps) - min(gaps) <= 1e-8 * max(gaps)


def test_faber_krahn_continuum():
    rep = faber_krahn_check(lambda h: make_ellipsoid((1.2, 0.8), h), 1 / 64)
    assert rep.passed
    assert rep.rows[0]["lam_extrapolated"] > rep.rows[0]["lam_ball"]
