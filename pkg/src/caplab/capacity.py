"""Dirichlet capacity of an excised set, and the electrostatic capacity for comparison.

The Dirichlet capacity of ``A`` in ``Omega`` is the least Dirichlet energy
of a function that equals the ground state ``phi_1`` on ``A`` and vanishes
on the boundary of ``Omega``. On the grid the constraint is imposed on the
cells of ``A`` that are active in ``Omega``; the minimizer is the discrete
harmonic extension of ``phi_1`` from those cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .domain import GridDomain, Region, _check_region
from .report import ExperimentReport
from .spectral import SparseOperator, SpectralData, assemble, pinned_global_rng, to_grid

__all__ = [
    "CapacityResult",
    "CapacitySolverError",
    "dirichlet_capacity",
    "electrostatic_capacity",
    "energy",
    "face_energy",
    "verify_choquet",
    "verify_subadditivity",
]

LINEAR_RTOL = 1e-10
DIRECT_LIMIT_3D = 30000


class CapacitySolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CapacityResult:
    """Capacity value with its minimizing potential (one value per active cell of the domain)."""

    value: float
    potential: np.ndarray
    region_id: str
    domain_id: str
    solver_residual: float
    flux_value: float  # energy recomputed from the boundary flux of the solve
    constrained_cells: int
    kind: str = "dirichlet"

    def to_record(self) -> dict:
        return {"value": self.value, "residual": self.solver_residual, "region_id": self.region_id,
                "domain_id": self.domain_id}


def energy(op: SparseOperator, f: np.ndarray) -> float:
    """Discrete Dirichlet energy ``f^T L f h^dim`` of a function on active cells."""
    return float(f @ (op.matrix @ f)) * op.h**op.dim


def face_energy(values: np.ndarray, h: float) -> float:
    """``sum over faces (f_p - f_q)^2 h^(dim-2)`` for a full-grid array (zero off the support)."""
    total = 0.0
    for ax in range(values.ndim):
        total += float((np.diff(values, axis=ax) ** 2).sum())
    return total * h ** (values.ndim - 2)


def _solve_spd(A, b, dim):
    n = A.shape[0]
    if dim == 2 or n <= DIRECT_LIMIT_3D:
        x = spla.spsolve(A.tocsc(), b)
    else:
        import pyamg

        with pinned_global_rng():
            ml = pyamg.smoothed_aggregation_solver(A.tocsr())
            x = ml.solve(b, tol=LINEAR_RTOL * 1e-2, accel="cg", maxiter=500)
    bn = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / bn if bn > 0 else 0.0
    if not np.all(np.isfinite(x)) or res > LINEAR_RTOL:
        raise CapacitySolverError(f"linear solve residual {res:.2e} exceeds {LINEAR_RTOL:g} (budget 500 iterations)")
    return x, res


def _harmonic_extension(op: SparseOperator, fixed: np.ndarray, data: np.ndarray):
    """Minimize ``f^T L f`` over ``f`` with ``f[fixed] = data[fixed]``."""
    n = op.n_dof
    f = np.zeros(n)
    if not fixed.any():
        return f, 0.0
    f[fixed] = data[fixed]
    free = ~fixed
    if free.any():
        L = op.matrix
        L_ff = L[free][:, free]
        rhs = -(L[free][:, fixed] @ f[fixed])
        f[free], res = _solve_spd(L_ff, rhs, op.dim)
    else:
        res = 0.0
    return f, res


def _fixed_cells(domain, region, dilate):
    _check_region(domain, region)
    if dilate:
        region = region.dilate(dilate)
    return region.mask[domain.mask]


def _capacity(domain, region, op, data, dilate, kind):
    op = assemble(domain) if op is None else op
    if op.domain_id != domain.domain_id:
        raise ValueError("operator does not belong to this domain")
    fixed = _fixed_cells(domain, region, dilate)
    f, res = _harmonic_extension(op, fixed, data)
    if not fixed.any():
        return CapacityResult(0.0, f, region.region_id, domain.domain_id, 0.0, 0.0, 0, kind)
    value = energy(op, f)
    # on free cells L f = 0, so the energy is carried by the constrained cells
    flux = float(f[fixed] @ (op.matrix @ f)[fixed]) * op.h**op.dim
    return CapacityResult(value, f, region.region_id, domain.domain_id, res, flux, int(fixed.sum()), kind)


def dirichlet_capacity(domain: GridDomain, region: Region, spec: SpectralData, op: SparseOperator = None,
                       dilate: int = 0) -> CapacityResult:
    """Dirichlet capacity of ``region`` in ``domain`` with its minimizer ``f_A``.

    ``spec`` must hold the ground state of ``domain``. ``dilate`` grows the
    constrained set by that many cells (sensitivity studies only).
    """
    if spec.domain_id != domain.domain_id:
        raise ValueError("spectral data does not belong to this domain")
    return _capacity(domain, region, op, spec.phi1, dilate, "dirichlet")


def electrostatic_capacity(domain: GridDomain, region: Region, op: SparseOperator = None, dilate: int = 0,
                           full: bool = False):
    """Classical condenser capacity: least energy of functions equal to 1 on the region.

    Returns the value, or the :class:`CapacityResult` when ``full`` is set.
    """
    result = _capacity(domain, region, op, np.ones(domain.n_active), dilate, "electrostatic")
    return result if full else result.value


def _cap_tol(values):
    return 1e-8 * max(1.0, max(abs(v) for v in values))


def verify_choquet(domain: GridDomain, regions, spec: SpectralData, op=None) -> ExperimentReport:
    """Monotonicity and finite-sequence continuity along a nested sequence of regions.

    ``regions`` must be increasing or decreasing under inclusion. The limit
    set is the union (increasing) or intersection (decreasing) of the sequence.
    """
    regions = list(regions)
    if len(regions) < 3:
        raise ValueError("need at least 3 nested regions")
    inc = all(a <= b for a, b in zip(regions, regions[1:]))
    dec = all(b <= a for a, b in zip(regions, regions[1:]))
    if not (inc or dec):
        raise ValueError("regions are not nested")
    op = assemble(domain) if op is None else op
    caps = [dirichlet_capacity(domain, r, spec, op).value for r in regions]
    limit = regions[0]
    for r in regions[1:]:
        limit = (limit | r) if inc else (limit & r)
    cap_limit = dirichlet_capacity(domain, limit, spec, op).value
    tol = _cap_tol(caps + [cap_limit])
    report = ExperimentReport("choquet", {"direction": "increasing" if inc else "decreasing", "n": len(regions)})
    for i, (a, b) in enumerate(zip(caps, caps[1:])):
        lo, hi = (a, b) if inc else (b, a)
        report.check_le(f"monotone[{i}]", lo, hi, tol)
    gaps = [abs(c - cap_limit) for c in caps]
    for i, (a, b) in enumerate(zip(gaps, gaps[1:])):
        report.check_le(f"approach[{i}]", b, a, tol)
    for c in caps:
        if inc:
            report.check_le("bounded_by_limit", c, cap_limit, tol)
        else:
            report.check_le("bounded_by_limit", cap_limit, c, tol)
    report.rows = [{"index": i, "Ca": c, "gap_to_limit": g} for i, (c, g) in enumerate(zip(caps, gaps))]
    report.params["Ca_limit"] = cap_limit
    return report


def verify_subadditivity(domain: GridDomain, region_a: Region, region_b: Region, spec: SpectralData,
                         op=None) -> ExperimentReport:
    """``Ca(A u B) <= Ca(A) + Ca(B)``, plus the barrier ``max(f_A, f_B)`` as a competitor for ``A u B``."""
    op = assemble(domain) if op is None else op
    ra = dirichlet_capacity(domain, region_a, spec, op)
    rb = dirichlet_capacity(domain, region_b, spec, op)
    rab = dirichlet_capacity(domain, region_a | region_b, spec, op)
    theta = np.maximum(ra.potential, rb.potential)
    theta_energy = energy(op, theta)
    union_cells = (region_a | region_b).mask[domain.mask]
    tol = _cap_tol([ra.value, rb.value, rab.value])
    report = ExperimentReport("subadditivity")
    report.check_le("Ca(AuB)<=Ca(A)+Ca(B)", rab.value, ra.value + rb.value, tol)
    report.check_le("barrier_energy<=Ca(A)+Ca(B)", theta_energy, ra.value + rb.value, tol)
    report.check_le("Ca(AuB)<=barrier_energy", rab.value, theta_energy, tol)
    mismatch = float(np.abs(theta[union_cells] - spec.phi1[union_cells]).max()) if union_cells.any() else 0.0
    report.check_le("barrier_admissible", mismatch, 0.0, 1e-12 * float(np.abs(spec.phi1).max()))
    report.rows = [{"Ca_A": ra.value, "Ca_B": rb.value, "Ca_AuB": rab.value, "barrier": theta_energy,
                    "margin": ra.value + rb.value - rab.value}]
    return report


def potential_grid(result: CapacityResult, domain: GridDomain) -> np.ndarray:
    return to_grid(result.potential, domain)
