"""Explicit constants of the capacity/eigenvalue stability theorem and the checks built on them.

For a base domain with eigenvalues ``lam_1 < lam_2 <= ...`` and ratio bounds
``m_k, M_k``::

    B1    = (lam_1 + lam_2) / (lam_2 - lam_1)
    eps_1 = lam_1 / 16,                 C_1 = 14 sqrt(lam_1)
    eps_k = lam_1^2 / (4 k^2 (m_k + sqrt(lam_1))^4)
    C_k   = 2k (2 lam_k (1 + m_k/sqrt(lam_1))^2 + (m_k + M_k/sqrt(lam_1) + sqrt(lam_k))^2)

and for every excised set ``A``::

    Ca(A) <= B1 (lam_1(Omega \\ A) - lam_1(Omega))
    Ca(A) < eps_k  =>  0 <= lam_k(Omega \\ A) - lam_k(Omega) <= C_k sqrt(Ca(A))

All checks run against the discrete operator's own spectrum; tolerances are
the propagated eigensolver and linear-solver tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .capacity import CapacityResult, dirichlet_capacity
from .domain import GridDomain, Region, excise
from .lemmas import a_sequence, c_constant, eigenvalue_comparison, q_gram_schmidt  # noqa: F401
from .report import ExperimentReport
from .spectral import RatioBounds, SpectralData, assemble, ratio_bounds

__all__ = [
    "TheoremConstants",
    "theorem_constants",
    "check_capacity_lower",
    "check_spectrum_upper",
    "proof_diagnostics",
    "excision_experiment",
    "lemma_suite",
    "q_gram_schmidt",
    "eigenvalue_comparison",
]

CAPACITY_RTOL = 1e-10


@dataclass(frozen=True)
class TheoremConstants:
    B1: float
    eps: tuple  # eps_1 .. eps_k
    C: tuple  # C_1 .. C_k
    C_displayed: tuple  # displayed closed form; kept for comparison, equal to C
    m: tuple  # running m_i, i = 1..k
    M: tuple
    lambdas: tuple
    margin: int = 1

    @property
    def k(self) -> int:
        return len(self.eps)

    @property
    def m_k(self) -> float:
        return self.m[-1]

    @property
    def M_k(self) -> float:
        return self.M[-1]

    def to_record(self) -> dict:
        return {"B1": self.B1, "eps": list(self.eps), "C": list(self.C), "m": list(self.m), "M": list(self.M),
                "lambdas": list(self.lambdas), "margin": self.margin}


def _eps_C(i, lam, m, M):
    """``eps_i`` and ``C_i`` for a 1-based index ``i``."""
    s1 = math.sqrt(lam[0])
    if i == 1:
        return lam[0] / 16, 14 * s1, 14 * s1
    li = lam[i - 1]
    eps = lam[0] ** 2 / (4 * i**2 * (m + s1) ** 4)
    # 4k lam_k X1 + 2k X2 from the proof's last step, per unit sqrt(Ca)
    C = 2 * i * (2 * li * (1 + m / s1) ** 2 + (m + M / s1 + math.sqrt(li)) ** 2)
    return eps, C, C


def theorem_constants(spec: SpectralData, ratios: RatioBounds, k: int) -> TheoremConstants:
    """Substitute the base domain's spectrum and ratio bounds into the constants."""
    if spec.k < max(k, 2):
        raise ValueError(f"need at least max(k, 2) = {max(k, 2)} eigenvalues, have {spec.k}")
    if ratios.k < k:
        raise ValueError("ratio bounds computed for fewer indices than k")
    lam = [float(x) for x in spec.eigenvalues]
    gap = lam[1] - lam[0]
    if gap <= 10 * spec.tol * lam[1]:
        raise ValueError("lambda_2 == lambda_1 within solver tolerance: the domain is not connected")
    B1 = (lam[0] + lam[1]) / gap
    eps, C, Cd, ms, Ms = [], [], [], [], []
    for i in range(1, k + 1):
        m_i, M_i = ratios.per_index[i - 1]
        e, c, cd = _eps_C(i, lam, m_i, M_i)
        eps.append(e)
        C.append(c)
        Cd.append(cd)
        ms.append(m_i)
        Ms.append(M_i)
    return TheoremConstants(B1, tuple(eps), tuple(C), tuple(Cd), tuple(ms), tuple(Ms), tuple(lam[:k]),
                            ratios.admissible_margin)


def _eig_err(spec: SpectralData, i: int) -> float:
    """Bound on the error of eigenvalue ``i`` (0-based) from its residual."""
    return max(float(spec.residuals[i]), 1e-14 * float(spec.eigenvalues[i]))


def check_capacity_lower(domain: GridDomain, region: Region, spec_base: SpectralData,
                         spec_excised: SpectralData, consts: TheoremConstants,
                         cap: CapacityResult = None) -> ExperimentReport:
    """``Ca(A) <= B1 (lam_1(Omega \\ A) - lam_1(Omega))``."""
    cap = dirichlet_capacity(domain, region, spec_base) if cap is None else cap
    report = ExperimentReport("capacity_lower", {"domain": domain.name, "region": region.name})
    if cap.constrained_cells == 0:
        report.check_le("Ca<=B1*shift1", 0.0, 0.0)
        return report
    shift = float(spec_excised.eigenvalues[0] - spec_base.eigenvalues[0])
    rhs = consts.B1 * shift
    tol = 2 * (consts.B1 * (_eig_err(spec_base, 0) + _eig_err(spec_excised, 0))
               + CAPACITY_RTOL * max(cap.value, spec_base.eigenvalues[0]))
    report.check_le("Ca<=B1*shift1", cap.value, rhs, tol, Ca=cap.value, shift=shift, B1=consts.B1)
    return report


def check_spectrum_upper(domain: GridDomain, region: Region, spec_base: SpectralData,
                         spec_excised: SpectralData, consts: TheoremConstants, k: int,
                         cap: CapacityResult = None) -> ExperimentReport:
    """Per-index ``0 <= lam_i(Omega \\ A) - lam_i(Omega) <= C_i sqrt(Ca(A))`` for ``i <= k``.

    Index ``i`` is the theorem applied with ``k = i``: its bound is asserted
    only when ``Ca(A) < eps_i`` and recorded as hypothesis-not-met otherwise.
    """
    if k > consts.k or k > spec_base.k or k > spec_excised.k:
        raise ValueError("k exceeds the available constants or eigenvalues")
    cap = dirichlet_capacity(domain, region, spec_base) if cap is None else cap
    ca = cap.value
    report = ExperimentReport("spectrum_upper", {"domain": domain.name, "region": region.name, "k": k,
                                                 "Ca": ca, "eps_k": consts.eps[k - 1]})
    if not ca < consts.eps[k - 1]:
        report.notes.append(f"hypothesis not met: Ca={ca:.6g} >= eps_{k}={consts.eps[k - 1]:.6g}")
    for i in range(k):
        lam, lam_x = float(spec_base.eigenvalues[i]), float(spec_excised.eigenvalues[i])
        shift = lam_x - lam
        tol = 2 * (_eig_err(spec_base, i) + _eig_err(spec_excised, i))
        report.check_le(f"shift_nonneg[{i + 1}]", 0.0, shift, tol)
        idx_hyp = ca < consts.eps[i]
        rhs = consts.C[i] * math.sqrt(max(ca, 0.0))
        cap_tol = consts.C[i] * math.sqrt(CAPACITY_RTOL * max(ca, 1e-300))
        report.check_le(f"shift<=C*sqrtCa[{i + 1}]", shift, rhs, tol + cap_tol, hypothesis=idx_hyp,
                        C=consts.C[i], eps=consts.eps[i])
    return report


def _psi_family(domain, spec_base, cap, k):
    phi1 = spec_base.phi1
    if (phi1 <= 1e-12 * float(phi1.max())).any():
        raise ValueError("ground state vanishes inside the domain; f_A/phi_1 is undefined")
    return spec_base.eigenfunctions[:k] * (1.0 - cap.potential / phi1)


def proof_diagnostics(domain: GridDomain, region: Region, spec_base: SpectralData, cap: CapacityResult,
                      k: int, ratios: RatioBounds = None, op=None) -> ExperimentReport:
    """Gram and energy matrices of ``psi_i = phi_i (1 - f_A/phi_1)`` against the proof's bounds.

    Checks, entrywise, ``|<psi_i,psi_j> - delta_ij| <= X1`` and
    ``|<grad psi_i, grad psi_j> - lam_i delta_ij| <= X2`` with
    ``X1 = (1 + m_k/sqrt(lam_1))^2 sqrt(Ca)`` and
    ``X2 = (m_k + M_k/sqrt(lam_1) + sqrt(lam_k))^2 sqrt(Ca)``, and that the
    family is linearly independent below the capacity threshold.
    """
    op = assemble(domain) if op is None else op
    ratios = ratio_bounds(spec_base, domain, k) if ratios is None else ratios
    m, M = ratios.per_index[k - 1]
    lam = np.asarray(spec_base.eigenvalues[:k], dtype=float)
    ca = cap.value
    s1 = math.sqrt(lam[0])
    X1 = (1 + m / s1) ** 2 * math.sqrt(ca)
    X2 = (m + M / s1 + math.sqrt(lam[-1])) ** 2 * math.sqrt(ca)
    threshold = lam[0] ** 2 / (4 * k**2 * (m + s1) ** 4)
    psi = _psi_family(domain, spec_base, cap, k)
    w = op.h**op.dim
    G = psi @ psi.T * w
    K = psi @ (op.matrix @ psi.T) * w
    dG = np.abs(G - np.eye(k))
    dK = np.abs(K - np.diag(lam))
    in_hyp = ca <= 1.0
    report = ExperimentReport("proof_diagnostics", {"domain": domain.name, "region": region.name, "k": k,
                                                    "Ca": ca, "X1": X1, "X2": X2, "threshold": threshold,
                                                    "m_k": m, "M_k": M})
    if not in_hyp:
        report.notes.append(f"hypothesis not met: Ca={ca:.6g} > 1")
    # Gram entries carry the eigenvector orthonormality defect
    gram_tol = 10 * spec_base.tol + 1e-12
    energy_tol = 10 * spec_base.tol * float(lam[-1]) + 1e-12
    report.check_le("max|G-I|<=X1", float(dG.max()), X1, gram_tol, hypothesis=in_hyp)
    report.check_le("max|K-diag(lam)|<=X2", float(dK.max()), X2, energy_tol, hypothesis=in_hyp)
    sv = float(np.linalg.svd(G, compute_uv=False).min())
    below = ca < threshold
    report.check_le("independent(min singular value of G > 0)", 0.0, sv, -1e-300, hypothesis=below and in_hyp,
                    strict_positive=sv > 0)
    if below and in_hyp:
        # proof intermediates: unit combinations have mass >= 1 - k X1 and energy <= lam_k + k X2
        gmin = float(np.linalg.eigvalsh(G).min())
        report.check_le("min eig G >= 1 - k X1", 1 - k * X1, gmin, gram_tol)
        # max Rayleigh quotient of span(psi): largest generalized eigenvalue of (K, G)
        from scipy.linalg import eigh

        rq = float(eigh(K, G, eigvals_only=True).max())
        report.check_le("maxRQ<=lam_k+4k lam_k X1+2k X2", rq, lam[-1] + 4 * k * lam[-1] * X1 + 2 * k * X2,
                        energy_tol)
    report.rows = [{"i": i + 1, "j": j + 1, "gram_dev": float(dG[i, j]), "energy_dev": float(dK[i, j]),
                    "X1": X1, "X2": X2} for i in range(k) for j in range(k)]
    return report


def excision_experiment(domain: GridDomain, region: Region, k: int, spec_base: SpectralData = None,
                        tol: float = 1e-9, margin: int = 1, geometry: str = "", method: str = "auto"):
    """Run both theorem inequalities for one excision; returns ``(report, row)``."""
    from .spectral import solve_domain

    kk = max(k, 2)
    if spec_base is None:
        spec_base = solve_domain(domain, kk, tol, method)
    ratios = ratio_bounds(spec_base, domain, k, margin)
    consts = theorem_constants(spec_base, ratios, k)
    op = assemble(domain)
    cap = dirichlet_capacity(domain, region, spec_base, op)
    excised = excise(domain, region)
    spec_x = solve_domain(excised, kk, tol, method)
    report = ExperimentReport("theorem_check", {"geometry": geometry or domain.name, "region": region.name,
                                                "h": domain.h, "k": k})
    report.extend(check_capacity_lower(domain, region, spec_base, spec_x, consts, cap))
    report.extend(check_spectrum_upper(domain, region, spec_base, spec_x, consts, k, cap))
    lower = report.get("Ca<=B1*shift1")
    row = {"geometry": geometry or domain.name, "region": region.name, "h": domain.h, "k": k, "Ca": cap.value,
           "eps_k": consts.eps[k - 1], "lhs": lower.lhs, "rhs": lower.rhs, "margin": lower.margin,
           "pass": report.passed}
    for i in range(k):
        c = report.get(f"shift<=C*sqrtCa[{i + 1}]")
        row[f"margin_{i + 1}"] = c.margin if c.status != "hypothesis-not-met" else float("nan")
    report.rows = [row]
    report.params["constants"] = consts.to_record()
    return report, row


def lemma_suite(n_trials: int = 1000, seed: int = 0, max_dim: int = 8) -> ExperimentReport:
    """Randomized trials of both finite-dimensional lemmas, one child seed per trial."""
    from .lemmas import random_comparison_trial, random_gs_trial

    report = ExperimentReport("lemma_suite", {"n_trials": n_trials, "seed": seed, "max_dim": max_dim})
    children = np.random.SeedSequence(seed).spawn(2 * n_trials)
    gs = [random_gs_trial(np.random.default_rng(s), max_dim) for s in children[:n_trials]]
    comp = [random_comparison_trial(np.random.default_rng(s), max_dim) for s in children[n_trials:]]
    for name, trials in (("gram_schmidt", gs), ("comparison", comp)):
        inside = [t for t in trials if t["hypothesis"]]
        bad = sum(not t["holds"] for t in inside)
        report.check_le(f"{name}: violations among in-hypothesis trials", bad, 0, in_hypothesis=len(inside),
                        total=len(trials))
    report.check_le("gram_schmidt: orthonormal output", sum(not t["orthonormal"] for t in gs), 0)
    report.check_le("a_4 == 42", abs(a_sequence(4)[-1] - 42), 0)
    report.check_le("c_2(1,2,4) == 128", abs(c_constant([1.0, 2.0, 4.0], 2) - 128.0), 0)
    report.rows = ([{"lemma": "gram_schmidt", "trial": i, "k": t["k"], "hypothesis": t["hypothesis"],
                     "holds": t["holds"]} for i, t in enumerate(gs)]
                   + [{"lemma": "comparison", "trial": i, "k": t["k"], "hypothesis": t["hypothesis"],
                       "holds": t["holds"]} for i, t in enumerate(comp)])
    return report
