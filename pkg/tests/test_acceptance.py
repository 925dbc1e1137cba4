"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

Every run is registered with the callable that produced it so that
criterion 10 can repeat it and compare the JSON/CSV bytes.
"""

import math
import time

import numpy as np
import pytest

from caplab.bounds import proof_diagnostics
from caplab.capacity import dirichlet_capacity, verify_subadditivity
from caplab.cli import run_config
from caplab.domain import ball_region, empty_region, full_region, make_ball, make_box, random_region
from caplab.report import ExperimentReport
from caplab.spectral import SEED, assemble, ratio_bounds, solve_domain

import oracles

RUNS = {}


def _register(name, fn):
    rep = fn()
    RUNS[name] = (fn, rep.to_json(), rep.to_csv())
    return rep


def _cli(cfg):
    return lambda: run_config(cfg)[0]


def _verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


# -- 1 ------------------------------------------------------------------------------


def test_criterion_01_square_oracle(capsys):
    cfg = {"command": "spectrum", "geometry": {"type": "box", "sides": [1, 1]}, "h": "1/128", "k": 4}
    t0 = time.perf_counter()
    rep = _register("spectrum_square", _cli(cfg))
    elapsed = time.perf_counter() - t0
    lam = np.array(rep.params["eigenvalues"])
    exact = np.array(oracles.box_eigenvalues([127, 127], 1 / 128, 4))
    cont = np.array([2, 5, 5, 8]) * math.pi**2
    rel_d = float(np.max(np.abs(lam - exact) / exact))
    rel_c = float(np.max(np.abs(lam - cont) / cont))
    ok = rel_d <= 1e-8 and rel_c <= 0.01 and elapsed < 30 and rep.passed
    _verdict(capsys, 1, ok, f"discrete rel err {rel_d:.2e}, continuum rel err {rel_c:.2e}, {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_02_disk_ball(capsys):
    disk = _register("spectrum_disk", _cli({"command": "spectrum", "geometry": {"type": "ball", "radius": 1},
                                             "h": "1/256", "k": 1}))
    ball = _register("spectrum_ball3", _cli({"command": "spectrum",
                                             "geometry": {"type": "ball", "dim": 3, "radius": 1},
                                             "h": "1/48", "k": 1}))
    j01 = oracles.disk_eigenvalues()[0]
    e2 = abs(disk.params["eigenvalues"][0] - j01) / j01
    e3 = abs(ball.params["eigenvalues"][0] - math.pi**2) / math.pi**2
    ok = e2 <= 0.02 and e3 <= 0.03
    _verdict(capsys, 2, ok, f"disk rel err {e2:.4f} (<= 0.02), 3D ball rel err {e3:.4f} (<= 0.03)")


# -- 3 ------------------------------------------------------------------------------


def _capacity_identities(name, dom, n=100):
    spec = solve_domain(dom, 1)
    op = assemble(dom)
    lam1 = float(spec.eigenvalues[0])
    rep = ExperimentReport(f"capacity_identities[{name}]", {"domain": dom.name, "h": dom.h, "n": n})
    rep.check_le("Ca(empty)==0", abs(dirichlet_capacity(dom, empty_region(dom), spec, op).value), 0.0)
    rep.check_le("|Ca(Omega)-lam1|", abs(dirichlet_capacity(dom, full_region(dom), spec, op).value - lam1), 0.0,
                 10 * spec.tol * lam1)
    rng = np.random.default_rng(SEED)
    worst_below, worst_mono, worst_sub = math.inf, math.inf, math.inf
    for i in range(n):
        a = random_region(rng, dom)
        b = random_region(rng, dom)
        ra = dirichlet_capacity(dom, a, spec, op)
        gap = float(np.min(spec.phi1 + 1e-8 - ra.potential))
        worst_below = min(worst_below, gap)
        rab = dirichlet_capacity(dom, a | b, spec, op)
        worst_mono = min(worst_mono, rab.value - ra.value)
        sub = verify_subadditivity(dom, a, b, spec, op)
        worst_sub = min(worst_sub, sub.rows[0]["margin"])
    rep.check_le("min(phi1 + 1e-8 - f_A) >= 0", 0.0, worst_below)
    rep.check_le("monotone margin >= -1e-8", -1e-8, worst_mono)
    rep.check_le("subadditivity margin >= -1e-8", -1e-8, worst_sub)
    return rep


@pytest.mark.slow
def test_criterion_03_capacity_identities(capsys):
    doms = {"square": lambda: make_box(2, (1, 1), 1 / 32), "disk": lambda: make_ball(2, 1, 1 / 32),
            "ball3": lambda: make_ball(3, 1, 1 / 12)}
    reps = {k: _register(f"capacity_{k}", lambda b=b, k=k: _capacity_identities(k, b())) for k, b in doms.items()}
    ok = all(r.passed for r in reps.values())
    worst = min(c.rhs for r in reps.values() for c in r.checks[2:])
    ca_err = max(r.checks[1].lhs for r in reps.values())
    _verdict(capsys, 3, ok, f"3 geometries x 100 random regions; worst random-pair margin {worst:.3g}; "
             f"max |Ca(Omega)-lam1| {ca_err:.2g}")


# -- 4 ------------------------------------------------------------------------------


def _holes_2d(center, caps, annuli):
    holes = [{"type": "ball", "radius": r, "center": center} for r in (0.01, 0.02, 0.05, 0.1)]
    holes += [{"type": "ball", "radius": r, "center": c} for r, c in caps]
    holes += [{"type": "annulus", "r_in": a, "r_out": 3.0, "center": center} for a in annuli]
    return holes


THEOREM_SUITE = {
    "square": {"command": "theorem-check", "geometry": {"type": "box", "sides": [1, 1]}, "h": "1/128", "k": 4,
               "holes": _holes_2d([0.5, 0.5], [(0.01, [0.0, 0.5]), (0.02, [0.0, 0.5]), (0.05, [0.0, 0.5]),
                                               (0.1, [0.5, 0.0])], [0.45, 0.48])},
    "disk": {"command": "theorem-check", "geometry": {"type": "ball", "radius": 1}, "h": "1/128", "k": 4,
             "holes": _holes_2d([0.0, 0.0], [(0.01, [1.0, 0.0]), (0.02, [1.0, 0.0]), (0.05, [1.0, 0.0]),
                                             (0.1, [0.0, 1.0])], [0.9, 0.95, 0.98])},
    "ball3": {"command": "theorem-check", "geometry": {"type": "ball", "dim": 3, "radius": 1}, "h": "1/24", "k": 4,
              "holes": [{"type": "ball", "radius": r, "center": [0, 0, 0]} for r in (0.01, 0.05, 0.1)]
              + [{"type": "ball", "radius": r, "center": [1.0, 0, 0]} for r in (0.05, 0.1)]
              + [{"type": "annulus", "r_in": a, "r_out": 3.0, "center": [0, 0, 0]} for a in (0.85, 0.92)]},
}


@pytest.mark.slow
def test_criterion_04_theorem_suite(capsys):
    t0 = time.perf_counter()
    reps = {name: _register(f"theorem_{name}", _cli(cfg)) for name, cfg in THEOREM_SUITE.items()}
    elapsed = time.perf_counter() - t0
    lower = [c for r in reps.values() for c in r.checks if c.name.endswith("Ca<=B1*shift1")]
    upper = [c for r in reps.values() for c in r.checks if "shift<=C*sqrtCa" in c.name]
    asserted = [c for c in upper if c.status != "hypothesis-not-met"]
    ok = (all(r.passed for r in reps.values()) and all(c.status == "pass" for c in lower)
          and len(asserted) > 0 and elapsed < 600)
    _verdict(capsys, 4, ok, f"{len(lower)} lower-bound checks pass; {len(asserted)}/{len(upper)} upper-bound "
             f"checks in hypothesis, all pass; {elapsed:.0f}s")


# -- 5 ------------------------------------------------------------------------------

ANNULUS_WIDTHS = [2.0**-j for j in range(2, 10)]


@pytest.mark.slow
def test_criterion_05_counterexample(capsys):
    # ring [1 - 2w, 1 - w]: one ring width from the boundary, down to w = h/2
    cfg = {"command": "capacity", "geometry": {"type": "ball", "radius": 1}, "h": "1/256", "eigen_shift": True,
           "regions": [{"type": "annulus", "r_in": 1 - 2 * w, "r_out": 1 - w} for w in ANNULUS_WIDTHS]}
    rep = _register("annulus_family", _cli(cfg))
    es = [r["electrostatic"] for r in rep.rows]
    ca = [r["Ca"] for r in rep.rows]
    sh = [r["shift_1"] for r in rep.rows]
    es_up = all(b >= a for a, b in zip(es, es[1:]))
    ca_down = all(b < a for a, b in zip(ca, ca[1:]))
    sh_down = all(b < a for a, b in zip(sh, sh[1:]))
    ok = es_up and ca_down and sh_down and ca[-1] < 1e-2 * ca[0] and sh[-1] < 1e-2 * sh[0] and rep.passed
    _verdict(capsys, 5, ok, f"electrostatic {es[0]:.3g} -> {es[-1]:.4g}; Ca ratio {ca[-1] / ca[0]:.4f}; "
             f"shift ratio {sh[-1] / sh[0]:.4f}")


# -- 6 ------------------------------------------------------------------------------


def _diagnostics_suite():
    report = ExperimentReport("proof_diagnostics_suite")
    cases = {"square": (make_box(2, (1, 1), 1 / 64), (0.5, 0.5), (0.0, 0.5)),
             "disk": (make_ball(2, 1, 1 / 64), (0.0, 0.0), (1.0, 0.0))}
    for name, (dom, mid, edge) in cases.items():
        spec = solve_domain(dom, 3)
        for k in (1, 2, 3):
            ratios = ratio_bounds(spec, dom, k)
            holes = [ball_region(dom, r, edge) for r in (0.01, 0.02, 0.05, 0.1)]
            holes += [ball_region(dom, r, mid) for r in (0.02, 0.05)]
            for j, reg in enumerate(holes):
                cap = dirichlet_capacity(dom, reg, spec)
                report.extend(proof_diagnostics(dom, reg, spec, cap, k, ratios), prefix=f"{name}[k={k},{j}] ")
    return report


@pytest.mark.slow
def test_criterion_06_proof_diagnostics(capsys):
    rep = _register("proof_diagnostics", _diagnostics_suite)
    entry = [c for c in rep.checks if "<=X1" in c.name or "<=X2" in c.name]
    inside = [c for c in entry if c.status != "hypothesis-not-met"]
    ok = rep.passed and len(inside) > 0 and all(c.status == "pass" for c in inside)
    _verdict(capsys, 6, ok, f"{len(inside)}/{len(entry)} entrywise X1/X2 checks in hypothesis, all pass")


# -- 7 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_07_lemmas(capsys):
    rep = _register("lemma_suite", _cli({"command": "lemma-suite", "trials": 1000, "max_dim": 8, "seed": 0}))
    gs = rep.get("gram_schmidt: violations among in-hypothesis trials")
    comp = rep.get("comparison: violations among in-hypothesis trials")
    exact = rep.get("a_4 == 42").status == "pass" and rep.get("c_2(1,2,4) == 128").status == "pass"
    ok = rep.passed and exact and gs.details["in_hypothesis"] > 0 and comp.details["in_hypothesis"] > 0
    _verdict(capsys, 7, ok, f"GS {gs.details['in_hypothesis']}/1000 in hypothesis, comparison "
             f"{comp.details['in_hypothesis']}/1000 in hypothesis, 0 violations; a_4 = 42, c_2 = 128")


# -- 8 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_08_transplant(capsys):
    ident = _register("transplant_identity", _cli({"command": "faber-krahn", "mode": "transplant", "h": "1/16",
                                                   "geometry": {"type": "ball", "dim": 3, "radius": 1}, "k": 3}))
    spiked = _register("transplant_spiked", _cli({
        "command": "faber-krahn", "mode": "transplant", "h": "1/24", "k": 1,
        "geometry": {"type": "spiked_ball", "dim": 3, "R": 1, "spike_len": 1, "spike_width": 0.1}}))
    id_checks = [c for c in ident.checks if c.name.startswith("identity")]
    id_ok = ident.passed and len(id_checks) == 3 and all(c.status == "pass" for c in id_checks)
    slack = [r["slack"] for r in spiked.rows]
    theta, kappa = spiked.params["theta"], spiked.params["kappa"]
    ok = id_ok and spiked.passed and all(s > 0 for s in slack)
    _verdict(capsys, 8, ok, f"identity energies match lam_i(B0); spiked slack {slack[0]:.4g} > 0 "
             f"(theta={theta:.3g}, kappa={kappa:.2g}: hypothesis theta<kappa not met)")


# -- 9 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_09_stability(capsys):
    t0 = time.perf_counter()
    rep = _register("stability", _cli({"command": "faber-krahn", "mode": "stability", "k": 3}))
    elapsed = time.perf_counter() - t0
    eps = [r["eps"] for r in rep.rows]
    worst = [max(r[f"gap_{i}"] for i in (1, 2, 3)) for r in rep.rows]
    decomp = [c for c in rep.checks if "decomposition[" in c.name]
    ok = (all(b < a for a, b in zip(eps, eps[1:])) and worst[0] >= 3 * worst[-1]
          and len(decomp) == 9 and all(c.status == "pass" for c in decomp) and rep.passed and elapsed < 1800)
    _verdict(capsys, 9, ok, f"eps {', '.join(f'{e:.3g}' for e in eps)}; gap reduction x{worst[0] / worst[-1]:.1f}; "
             f"{len(decomp)} decomposition checks pass; {elapsed:.0f}s")


# -- 10 -----------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_determinism(capsys):
    if not RUNS:
        _register("spectrum_square", _cli({"command": "spectrum", "geometry": {"type": "box", "sides": [1, 1]},
                                           "h": "1/64", "k": 4}))
    mismatched = []
    for name, (fn, js, cs) in RUNS.items():
        rep = fn()
        if rep.to_json() != js or rep.to_csv() != cs:
            mismatched.append(name)
    _verdict(capsys, 10, not mismatched, f"{len(RUNS) - len(mismatched)}/{len(RUNS)} runs byte-identical on repeat"
             + (f"; differing: {mismatched}" if mismatched else ""))
