"""Config-driven experiment runner.

Usage::

    caplab run CONFIG.json --out-dir DIR [--threads N]

Writes ``<name>.json`` and ``<name>.csv`` (plus ``<name>.svg`` for sweeps)
and ``<name>.timings.json`` into ``DIR``. Exit codes: 0 all checks pass or
are hypothesis-not-met, 1 an inequality was violated, 2 invalid config,
3 solver failure. Nothing is written unless the run completes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .bounds import excision_experiment, lemma_suite, proof_diagnostics
from .capacity import CapacitySolverError, dirichlet_capacity, electrostatic_capacity
from .domain import (
    DomainError,
    GridDomain,
    Region,
    annulus_region,
    ball_region,
    box_region,
    empty_region,
    excise,
    load_dmask,
    make_ball,
    make_box,
    make_ellipsoid,
    measure,
    random_blob,
    spiked_ball,
)
from .faberkrahn import (
    faber_krahn_check,
    hall_deficit,
    isoperimetric_check,
    stability_experiment,
    stability_family,
    scaled_deficit,
    transplant,
    volume_bound_check,
)
from .plot import line_plot
from .report import ExperimentReport
from .spectral import EigensolverError, SEED, box_eigenvalues, ratio_bounds, solve_domain

__all__ = ["main", "run", "run_config", "convergence_study", "observed_orders", "CONFIG_SCHEMA", "ConfigError"]

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

_number_or_fraction = {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                                 {"type": "string", "pattern": r"^\s*\d+(\.\d*)?\s*(/\s*\d+\s*)?$"}]}
_vector = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 3}

_geometry = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["box", "ball", "ellipsoid", "spiked_ball", "blob", "dmask"]},
        "dim": {"enum": [2, 3]},
        "sides": _vector,
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "semi_axes": _vector,
        "R": {"type": "number", "exclusiveMinimum": 0},
        "spike_len": {"type": "number", "minimum": 0},
        "spike_width": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "path": {"type": "string"},
        "extent": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

_region = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["empty", "ball", "annulus", "box"]},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "r_in": {"type": "number", "minimum": 0},
        "r_out": {"type": "number", "exclusiveMinimum": 0},
        "center": _vector,
        "lower": _vector,
        "upper": _vector,
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["command"],
    "properties": {
        "command": {"enum": ["spectrum", "capacity", "theorem-check", "proof-diagnostics", "faber-krahn",
                             "lemma-suite", "convergence-study"]},
        "name": {"type": "string", "pattern": r"^[A-Za-z0-9_.-]+$"},
        "geometry": _geometry,
        "h": _number_or_fraction,
        "h_list": {"type": "array", "items": _number_or_fraction},
        "k": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "margin": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "hole": _region,
        "holes": {"type": "array", "items": _region},
        "regions": {"type": "array", "items": _region},
        "eigen_shift": {"type": "boolean"},
        "mode": {"enum": ["stability", "hall", "transplant", "continuum"]},
        "family": {
            "type": "object",
            "properties": {
                "widths": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3},
                "R_cells": {"type": "integer", "minimum": 4},
                "spike_cells": {"type": "integer", "minimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "ball": {"type": "object", "properties": {"center": _vector, "radius": {"type": "number"}},
                 "additionalProperties": False},
        "trials": {"type": "integer", "minimum": 1},
        "max_dim": {"type": "integer", "minimum": 1, "maximum": 8},
        "quantities": {"type": "array", "items": {"enum": ["lambda_1", "lambda_2", "volume", "perimeter",
                                                            "capacity"]}},
        "constants": {"type": "object", "properties": {"c_n": {"type": "number", "minimum": 0},
                                                       "c1_n": {"type": "number", "minimum": 0}},
                      "additionalProperties": False},
        "max_cells": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

# default cap on 3D grids (cells per axis)
MAX_CELLS_3D = 128


class ConfigError(ValueError):
    pass


def _h(value) -> float:
    return float(Fraction(value.replace(" ", ""))) if isinstance(value, str) else float(value)


def validate(config: dict) -> None:
    """Raise :class:`ConfigError` listing every schema violation with its field path."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
            lines.append(f"{path}: {e.message}")
        raise ConfigError("\n".join(lines))
    cmd = config["command"]
    needs = {"spectrum": ["geometry", "h"], "capacity": ["geometry", "h"], "theorem-check": ["geometry", "h"],
             "proof-diagnostics": ["geometry", "h", "hole"], "convergence-study": ["geometry", "h_list"]}
    for key in needs.get(cmd, []):
        if key not in config:
            raise ConfigError(f"$.{key}: required for command {cmd!r}")
    if cmd == "convergence-study" and len(config["h_list"]) < 3:
        raise ConfigError("$.h_list: convergence study needs at least 3 mesh sizes")
    if cmd == "faber-krahn" and config.get("mode", "stability") in ("hall", "transplant", "continuum"):
        for key in ("geometry", "h"):
            if key not in config:
                raise ConfigError(f"$.{key}: required for faber-krahn mode {config.get('mode')!r}")


def build_geometry(spec: dict, h: float, max_cells: int = MAX_CELLS_3D) -> GridDomain:
    kind = spec["type"]
    dim = spec.get("dim", 2)
    if kind == "box":
        dom = make_box(len(spec["sides"]), spec["sides"], h)
    elif kind == "ball":
        dom = make_ball(dim, spec["radius"], h, extent=spec.get("extent"))
    elif kind == "ellipsoid":
        dom = make_ellipsoid(spec["semi_axes"], h)
    elif kind == "spiked_ball":
        dom = spiked_ball(dim, spec["R"], spec["spike_len"], spec["spike_width"], h, extent=spec.get("extent"))
    elif kind == "blob":
        dom = random_blob(spec.get("seed", 0), dim, h)
    else:
        dom = load_dmask(spec["path"])
    if dom.dim == 3 and max(dom.shape) > max_cells:
        raise ConfigError(f"$.h: 3D grid {dom.shape} exceeds {max_cells} cells per axis (raise $.max_cells)")
    return dom


def build_region(spec: dict, domain: GridDomain) -> Region:
    kind = spec["type"]
    center = spec.get("center")
    if kind == "empty":
        return empty_region(domain)
    if kind == "ball":
        return ball_region(domain, spec["radius"], center)
    if kind == "annulus":
        return annulus_region(domain, spec["r_in"], spec["r_out"], center)
    return box_region(domain, spec["lower"], spec["upper"])


# -- commands ------------------------------------------------------------------------


def _cmd_spectrum(cfg, dom):
    k, tol = cfg.get("k", 4), cfg.get("tol", 1e-9)
    spec = solve_domain(dom, k, tol)
    report = ExperimentReport("spectrum", {"domain": dom.name, "h": dom.h, "k": k, "tol": tol,
                                           "n_dof": dom.n_active, "method": spec.method})
    exact = None
    if cfg["geometry"]["type"] == "box":
        counts = [int(round(L / dom.h)) - 1 for L in cfg["geometry"]["sides"]]
        exact = box_eigenvalues(counts, dom.h, k)
    G = spec.gram()
    report.check_le("orthonormality_defect", float(np.abs(G - np.eye(k)).max()), 10 * tol)
    rows = []
    for i, lam in enumerate(spec.eigenvalues):
        report.check_le(f"residual[{i + 1}]", spec.residuals[i], tol * lam)
        row = {"i": i + 1, "lambda": float(lam), "residual": float(spec.residuals[i])}
        if exact is not None:
            rel = abs(lam - exact[i]) / exact[i]
            report.check_le(f"exact_discrete[{i + 1}]", rel, 1e-8)
            row["exact_discrete"] = float(exact[i])
            row["rel_error"] = rel
        rows.append(row)
    sens = []
    for margin in (1, 2, 3):
        try:
            rb = ratio_bounds(spec, dom, k, margin)
            sens.append({"margin": margin, "m_k": rb.m_k, "M_k": rb.M_k})
        except (ValueError, DomainError) as exc:
            sens.append({"margin": margin, "error": str(exc)})
    report.params["ratio_bounds"] = sens
    report.params["eigenvalues"] = [float(x) for x in spec.eigenvalues]
    report.rows = rows
    return report


def _cmd_capacity(cfg, dom):
    specs = cfg.get("regions") or [cfg.get("hole", {"type": "empty"})]
    spec = solve_domain(dom, 1, cfg.get("tol", 1e-9))
    report = ExperimentReport("capacity", {"domain": dom.name, "h": dom.h})
    lam1 = float(spec.eigenvalues[0])
    rows = []
    for j, rs in enumerate(specs):
        reg = build_region(rs, dom)
        res = dirichlet_capacity(dom, reg, spec)
        es = electrostatic_capacity(dom, reg)
        tol = 10 * spec.tol * lam1 + 1e-10
        report.check_le(f"[{j}] 0<=Ca", 0.0, res.value, 1e-12)
        report.check_le(f"[{j}] Ca<=lam1", res.value, lam1, tol)
        report.check_le(f"[{j}] f_A<=phi1", float(np.max(res.potential - spec.phi1)), 0.0, 1e-8)
        report.check_le(f"[{j}] |flux-energy|", abs(res.flux_value - res.value), 0.0,
                        1e-10 * max(1.0, res.value) * 10)
        row = {"index": j, "region": reg.name, "Ca": res.value, "electrostatic": es, "residual": res.solver_residual}
        if cfg.get("eigen_shift"):
            if res.constrained_cells:
                lx = float(solve_domain(excise(dom, reg), 1, spec.tol).eigenvalues[0])
            else:
                lx = lam1
            row["shift_1"] = lx - lam1
        rows.append(row)
    report.rows = rows
    return report


def _holes(cfg):
    if "holes" in cfg:
        return cfg["holes"]
    return [cfg.get("hole", {"type": "empty"})]


def _cmd_theorem(cfg, dom):
    k = cfg.get("k", 4)
    tol = cfg.get("tol", 1e-9)
    spec = solve_domain(dom, max(k, 2), tol)
    report = ExperimentReport("theorem_check", {"domain": dom.name, "h": dom.h, "k": k})
    rows = []
    for j, hs in enumerate(_holes(cfg)):
        reg = build_region(hs, dom)
        rep, row = excision_experiment(dom, reg, k, spec, tol, cfg.get("margin", 1), cfg["geometry"]["type"])
        report.extend(rep, prefix=f"[{j}] ")
        rows.append(row)
        report.params.setdefault("constants", rep.params["constants"])
    report.rows = rows
    return report


def _cmd_proof(cfg, dom):
    k = cfg.get("k", 3)
    spec = solve_domain(dom, max(k, 2), cfg.get("tol", 1e-9))
    reg = build_region(cfg["hole"], dom)
    cap = dirichlet_capacity(dom, reg, spec)
    ratios = ratio_bounds(spec, dom, k, cfg.get("margin", 1))
    return proof_diagnostics(dom, reg, spec, cap, k, ratios)


def _c_n(cfg, dim):
    consts = cfg.get("constants", {})
    if "c1_n" in consts:
        return consts["c1_n"] - 2 * dim
    return consts.get("c_n")


def _no_rows(report):
    report.rows = []
    return report


def _cmd_faber_krahn(cfg, dom_builder):
    mode = cfg.get("mode", "stability")
    max_cells = cfg.get("max_cells", MAX_CELLS_3D)
    if mode == "stability":
        fam = cfg.get("family", {})
        family = stability_family(tuple(fam.get("widths", (4, 2, 1))), fam.get("R_cells", 20),
                                  fam.get("spike_cells", 10), fam.get("h", 1.0))
        for d in family:
            if max(d.shape) > max_cells:
                raise ConfigError(f"$.family: grid {d.shape} exceeds {max_cells} cells per axis")
        c_n = _c_n(cfg, 3)
        k = cfg.get("k", 3)
        report = stability_experiment(family, k, c_n)
        for i, (d, row) in enumerate(zip(family, report.rows)):
            hall = hall_deficit(d)
            report.extend(_no_rows(isoperimetric_check(d, c_n, hall)), prefix=f"[{i}] ")
            vb = volume_bound_check(d, row["eps"], c_n, hall)
            row["excess_volume"] = vb.rows[0]["excess"]
            report.extend(_no_rows(vb), prefix=f"[{i}] ")
        eps = [r["eps"] for r in report.rows]
        series = {f"gap_{i + 1}": (eps, [r[f"gap_{i + 1}"] for r in report.rows]) for i in range(k)}
        svg = line_plot(series, "eigenvalue gap vs eps", "eps", "|lambda_i(Omega) - lambda_i(B0)|")
        return report, svg
    if mode == "continuum":
        h = _h(cfg["h"])
        return faber_krahn_check(lambda hh: build_geometry(cfg["geometry"], hh, max_cells), h), None
    dom = dom_builder()
    c_n = _c_n(cfg, dom.dim)
    if mode == "hall":
        hall = hall_deficit(dom)
        report = isoperimetric_check(dom, c_n, hall)
        eps = scaled_deficit(dom, hall)
        vb = volume_bound_check(dom, eps, c_n, hall)
        report.rows[0].update(eps=eps, excess_volume=vb.rows[0]["excess"], bound_c1=vb.rows[0]["bound_c1"])
        report.extend(_no_rows(vb))
        report.params["hall"] = hall.to_record()
        return report, None
    ball = cfg.get("ball", {})
    geom = cfg["geometry"]
    center = ball.get("center", [0.0] * dom.dim)
    radius = ball.get("radius", geom.get("R", geom.get("radius", 1.0)))
    return transplant(dom, center, radius, cfg.get("k", 1)).report, None


def _cmd_lemmas(cfg, seed):
    return lemma_suite(cfg.get("trials", 1000), seed, cfg.get("max_dim", 8))


# -- convergence study ----------------------------------------------------------------


def observed_orders(hs, values, rtol: float = 1e-12) -> dict:
    """Richardson order estimates from consecutive mesh triples.

    Returns ``{"orders": [...], "order": last estimate or None, "converged": bool, "note": str}``.
    A quantity whose successive differences vanish (relative to its size) is
    reported as converged with an undefined order.
    """
    hs = [float(h) for h in hs]
    v = [float(x) for x in values]
    if len(v) < 3:
        raise ValueError("need at least 3 mesh sizes")
    scale = max(1.0, max(abs(x) for x in v))
    diffs = [v[i + 1] - v[i] for i in range(len(v) - 1)]
    if all(abs(d) <= rtol * scale for d in diffs):
        return {"orders": [], "order": None, "converged": True, "note": "constant: order undefined"}
    orders = []
    for i in range(len(diffs) - 1):
        d0, d1 = abs(diffs[i]), abs(diffs[i + 1])
        r = hs[i] / hs[i + 1]
        if d1 == 0 or d0 == 0:
            orders.append(float("inf") if d1 == 0 else float("nan"))
        else:
            orders.append(math.log(d0 / d1) / math.log(r))
    last = orders[-1]
    converged = bool(last >= 0.9) if not math.isnan(last) else False
    return {"orders": orders, "order": last, "converged": converged,
            "note": "" if converged else "not converging at order >= 0.9"}


def convergence_study(cfg: dict) -> ExperimentReport:
    hs = [_h(h) for h in cfg["h_list"]]
    if len(hs) < 3:
        raise ConfigError("$.h_list: convergence study needs at least 3 mesh sizes")
    qnames = cfg.get("quantities", ["lambda_1"])
    hole = cfg.get("hole")
    values = {q: [] for q in qnames}
    rows = []
    for h in hs:
        dom = build_geometry(cfg["geometry"], h, cfg.get("max_cells", MAX_CELLS_3D))
        need_eig = any(q in ("lambda_1", "lambda_2", "capacity") for q in qnames)
        spec = solve_domain(dom, 2, cfg.get("tol", 1e-9)) if need_eig else None
        row = {"h": h}
        for q in qnames:
            if q == "lambda_1":
                val = float(spec.eigenvalues[0])
            elif q == "lambda_2":
                val = float(spec.eigenvalues[1])
            elif q == "volume":
                val = dom.volume()
            elif q == "perimeter":
                val = measure(dom)[1]
            else:
                reg = build_region(hole or {"type": "empty"}, dom)
                val = dirichlet_capacity(dom, reg, spec).value
            values[q].append(val)
            row[q] = val
        rows.append(row)
    report = ExperimentReport("convergence_study", {"geometry": cfg["geometry"], "h_list": hs})
    for q in qnames:
        est = observed_orders(hs, values[q])
        report.params[f"order[{q}]"] = est
        order = est["order"]
        report.info(f"order[{q}]", float("nan") if order is None else order, converged=est["converged"],
                    note=est["note"])
    report.rows = rows
    return report


# -- runner ----------------------------------------------------------------------------


def _seed(cfg) -> int:
    env = os.environ.get("CAPLAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"CAPLAB_SEED must be an integer, got {env!r}") from exc
    return int(cfg.get("seed", SEED))


def run_config(cfg: dict, threads: int = None):
    """Validate and execute; returns ``(report, svg_or_None, timings)``."""
    validate(cfg)
    seed = _seed(cfg)
    t0 = time.perf_counter()
    cmd = cfg["command"]
    svg = None
    max_cells = cfg.get("max_cells", MAX_CELLS_3D)

    def dom():
        return build_geometry(cfg["geometry"], _h(cfg["h"]), max_cells)

    if cmd == "spectrum":
        report = _cmd_spectrum(cfg, dom())
    elif cmd == "capacity":
        report = _cmd_capacity(cfg, dom())
    elif cmd == "theorem-check":
        report = _cmd_theorem(cfg, dom())
    elif cmd == "proof-diagnostics":
        report = _cmd_proof(cfg, dom())
    elif cmd == "faber-krahn":
        report, svg = _cmd_faber_krahn(cfg, dom)
    elif cmd == "lemma-suite":
        report = _cmd_lemmas(cfg, seed)
    else:
        report = convergence_study(cfg)
        hs = [r["h"] for r in report.rows]
        series = {q: (hs, [r[q] for r in report.rows]) for q in cfg.get("quantities", ["lambda_1"])}
        svg = line_plot(series, "convergence", "h", "value", logy=False)
    report.params["config"] = cfg
    report.params["seed"] = seed
    report.params["version"] = __version__
    report.params["threads"] = threads
    timings = {"total_seconds": time.perf_counter() - t0}
    return report, svg, timings


def _atomic_write_all(out_dir: Path, files: dict) -> None:
    """Write every file to a temporary name first, then rename them all into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            staged.append((tmp, out_dir / name))
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


def run(config_path, out_dir, threads: int = None) -> int:
    """Run one config file; returns the process exit code."""
    try:
        cfg = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                report, svg, timings = run_config(cfg, threads)
        else:
            report, svg, timings = run_config(cfg, threads)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, ValueError) as exc:
        print(f"invalid experiment: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EigensolverError, CapacitySolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    name = cfg.get("name", cfg["command"])
    files = {f"{name}.json": report.to_json() + "\n", f"{name}.csv": report.to_csv(),
             f"{name}.timings.json": json.dumps(timings, indent=2, sort_keys=True) + "\n"}
    if svg is not None:
        files[f"{name}.svg"] = svg
    _atomic_write_all(Path(out_dir), files)
    status = report.statuses()
    print(f"{name}: " + ", ".join(f"{k}={v}" for k, v in sorted(status.items())))
    for c in report.failures:
        print(f"FAIL {c.name}: lhs={c.lhs!r} rhs={c.rhs!r} margin={c.margin!r}")
    return EXIT_OK if report.passed else EXIT_VIOLATION


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="caplab", description="Capacity and eigenvalue-stability experiments.")
    sub = parser.add_subparsers(dest="action", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to the JSON config")
    p_run.add_argument("--out-dir", required=True, help="directory for JSON/CSV/SVG outputs")
    p_run.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread limit")
    sub.add_parser("schema", help="print the config JSON schema")
    args = parser.parse_args(argv)
    if args.action == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_OK
    return run(args.config, args.out_dir, args.threads)


if __name__ == "__main__":
    sys.exit(main())
