"""Two finite-dimensional lemmas used to turn almost-orthonormal test families into eigenvalue bounds.

``q_gram_schmidt``: Gram-Schmidt on a family whose Gram matrix is within ``c``
of the identity, with a control of the quadratic form on the output.

``eigenvalue_comparison``: an orthonormal family with ``q(f_i) <= lam_i + eta``
forces the true eigenvalues ``mu_i`` of ``q`` to satisfy
``mu_i <= lam_i + c_{k+1} eta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LemmaGSResult",
    "LemmaCompResult",
    "PreconditionError",
    "a_sequence",
    "q_gram_schmidt",
    "next_distinct",
    "t_constant",
    "c_constant",
    "eigenvalue_comparison",
    "comparison_harness",
    "random_gs_trial",
    "random_comparison_trial",
]


class PreconditionError(ValueError):
    """An input violates a lemma hypothesis."""


def a_sequence(k: int) -> list:
    """``a_1 = 1``, ``a_s = 1 + sum_{i<s} a_i^2`` (exact integers)."""
    a = []
    for _ in range(k):
        a.append(1 + sum(x * x for x in a))
    return a


@dataclass
class LemmaGSResult:
    basis: list
    q_values: list
    a: list
    bound: list
    c: float
    hypothesis: bool
    gram_defect: float  # max |<F_i, F_j> - delta_ij|
    violations: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(q <= b for q, b in zip(self.q_values, self.bound))


def _gram(vectors, inner):
    k = len(vectors)
    G = [[None] * k for _ in range(k)]
    for i in range(k):
        for j in range(i, k):
            G[i][j] = G[j][i] = inner(vectors[i], vectors[j])
    return G


def q_gram_schmidt(vectors, inner, q, c: float, lambdas, strict: bool = True) -> LemmaGSResult:
    """Orthonormalize ``vectors`` in order and bound ``q`` on the result.

    Parameters
    ----------
    vectors : sequence
        ``f_1, ..., f_k`` (anything ``inner`` and ``q`` accept that supports
        ``+``, ``-`` and scalar ``*``).
    inner : callable
        Inner product ``inner(u, v)``.
    q : callable
        Quadratic form ``q(u)``.
    c : float
        Closeness constant: ``|<f_i,f_j> - delta_ij| <= c`` and ``q(f_i) <= lam_i + c``.
    lambdas : sequence of float
        Nondecreasing positive reals.
    strict : bool
        Reject violated hypotheses (default). Otherwise run anyway and list
        the violations in the result.

    Notes
    -----
    Scalars may be floats or any extended-precision type closed under the
    usual arithmetic (e.g. ``mpmath.mpf``); nothing is converted to float.
    For large ``k`` the hypothesis ``c a_k <= 1/4`` forces ``c`` far below
    double precision (``a_8 ~ 1e26``), so such cases need extended precision.
    """
    vectors = list(vectors)
    lambdas = list(lambdas)
    k = len(vectors)
    if len(lambdas) != k:
        raise PreconditionError("need one lambda per vector")
    if any(b < a for a, b in zip(lambdas, lambdas[1:])) or any(x <= 0 for x in lambdas):
        raise PreconditionError("lambdas must be positive and nondecreasing")
    a = a_sequence(k)
    G = _gram(vectors, inner)
    violations = []
    for i in range(k):
        for j in range(k):
            dev = abs(G[i][j] - (1 if i == j else 0))
            if dev > c:
                violations.append(f"|<f_{i + 1},f_{j + 1}> - delta| = {float(dev):.3g} > c = {float(c):.3g}")
        qi = q(vectors[i])
        if qi > lambdas[i] + c:
            violations.append(f"q(f_{i + 1}) = {float(qi):.6g} > lambda_{i + 1} + c = {float(lambdas[i] + c):.6g}")
    if c * a[-1] > 0.25:
        violations.append(f"c * a_k = {float(c * a[-1]):.3g} > 1/4")
    if violations and strict:
        raise PreconditionError("; ".join(violations))

    basis = []
    for i, f in enumerate(vectors):
        h = f
        # two passes of classical Gram-Schmidt; the second only removes rounding
        for _ in range(2):
            for F in basis:
                h = h - inner(F, h) * F
        norm = inner(h, h) ** 0.5
        if not norm > 0:
            raise PreconditionError(f"f_{i + 1} is linearly dependent on the previous vectors")
        basis.append(h * (1 / norm))
    q_values = [q(F) for F in basis]
    slack = 14 * k * a[-1] * max(lambdas[-1], 1) * c
    bound = [lam + slack for lam in lambdas]
    GF = _gram(basis, inner)
    defect = max(abs(GF[i][j] - (1 if i == j else 0)) for i in range(k) for j in range(k))
    return LemmaGSResult(basis, q_values, a, bound, c, not violations, defect, violations)


# -- eigenvalue comparison -------------------------------------------------------


def next_distinct(mu, i: int, rtol: float = 0.0) -> float:
    """``mu_i^+``: smallest entry larger than ``mu[i]`` (``inf`` if none).

    Entries within ``rtol * mu[i]`` of ``mu[i]`` count as equal, so that a
    numerically split multiple eigenvalue is treated as one value.
    """
    larger = [m for m in mu if m - mu[i] > rtol * abs(mu[i])]
    return min(larger) if larger else float("inf")


def t_constant(mu, k: int, rtol: float = 0.0) -> float:
    """``t_k = max(max_{i<=k} 1/(mu_i^+ - mu_i), 1)``."""
    gaps = [1.0 / (next_distinct(mu, i, rtol) - mu[i]) for i in range(k)]
    return max(max(gaps), 1.0)


def c_constant(mu, k: int, rtol: float = 0.0) -> float:
    """``c_k = (8 t_k mu_k)^k / mu_k``."""
    t = t_constant(mu, k, rtol)
    return (8 * t * mu[k - 1]) ** k / mu[k - 1]


@dataclass
class LemmaCompResult:
    t_k: float
    c: list  # c_1 .. c_{k+1}
    verified: list
    hypothesis: bool
    eta: float
    slack: list  # lam_i + c_{k+1} eta - mu_i
    premise: bool = True

    @property
    def holds(self) -> bool:
        return all(self.verified)


def eigenvalue_comparison(mu, lambdas, eta: float, k: int, rtol: float = 0.0) -> LemmaCompResult:
    """Evaluate the comparison lemma's constants and its conclusion.

    ``mu`` holds at least ``k + 1`` eigenvalues of the form in ascending order;
    entries beyond ``k + 1`` only serve to define ``mu_{k+1}^+``. With a
    finite list, the top value has no successor and contributes no gap term.
    ``rtol`` merges numerically split multiple values (see :func:`next_distinct`).
    """
    mu = [float(m) for m in mu]
    lambdas = [float(x) for x in lambdas]
    if len(mu) < k + 1:
        raise PreconditionError(f"need at least k+1 = {k + 1} eigenvalues of q")
    if any(b < a for a, b in zip(mu, mu[1:])) or mu[0] <= 0:
        raise PreconditionError("mu must be positive and ascending")
    if len(lambdas) < k:
        raise PreconditionError("need k lambdas")
    for i in range(k):
        if not 0 < lambdas[i] <= mu[i]:
            raise PreconditionError(f"need 0 < lambda_{i + 1} <= mu_{i + 1}")
    if eta < 0:
        raise PreconditionError("eta must be nonnegative")
    cs = [c_constant(mu, j, rtol) for j in range(1, k + 2)]
    hypothesis = eta * cs[k - 1] <= 0.5
    slack = [lambdas[i] + cs[k] * eta - mu[i] for i in range(k)]
    verified = [s >= -1e-12 * max(1.0, mu[i]) for i, s in enumerate(slack)]
    return LemmaCompResult(t_constant(mu, k, rtol), cs, verified, hypothesis, eta, slack)


def comparison_harness(q_matrix: np.ndarray, family: np.ndarray, lambdas, eta: float, k: int) -> LemmaCompResult:
    """Run the lemma end to end on an explicit symmetric matrix ``q``.

    ``family`` has the test vectors as rows. The premises (orthonormality and
    ``q(f_i) <= lambda_i + eta``) are checked and reported in ``premise``.
    """
    q_matrix = np.asarray(q_matrix, dtype=float)
    mu = np.linalg.eigvalsh((q_matrix + q_matrix.T) / 2)
    F = np.asarray(family, dtype=float)[:k]
    gram_ok = np.abs(F @ F.T - np.eye(k)).max() <= 1e-10
    qv = np.einsum("ij,jk,ik->i", F, q_matrix, F)
    premise = bool(gram_ok and np.all(qv <= np.asarray(lambdas[:k]) + eta + 1e-12))
    res = eigenvalue_comparison(mu, lambdas, eta, k)
    res.premise = premise
    return res


# -- randomized trials -------------------------------------------------------------


def random_gs_trial(rng: np.random.Generator, max_dim: int = 8, dps: int = 80) -> dict:
    """One randomized check of :func:`q_gram_schmidt` in ``R^k``, ``k <= max_dim``.

    ``q`` is a random PSD matrix, the family is a random orthonormal basis
    perturbed so that the Gram defect stays within ``c`` and ``c a_k <= 1/4``.
    Arithmetic runs in mpmath at ``dps`` digits.
    """
    import mpmath

    mp = mpmath.mp.clone() if hasattr(mpmath.mp, "clone") else mpmath.mp
    mp.dps = dps
    k = int(rng.integers(1, max_dim + 1))
    a_k = a_sequence(k)[-1]
    c = mp.mpf(float(rng.uniform(0.05, 1.0))) / (4 * a_k)
    M = rng.standard_normal((k, k))
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    Qm = mp.matrix(Q.tolist())
    # exact orthonormality in extended precision before perturbing
    Qm = _mp_orthonormal_rows(mp, Qm)
    E = mp.matrix(rng.standard_normal((k, k)).tolist())
    Qa = mp.matrix(M.tolist())
    qmat = Qa.T * Qa
    scale = c / (4 * k)
    f = [mp.matrix([[Qm[i, j] + scale * E[i, j] for j in range(k)]]) for i in range(k)]

    def inner(u, v):
        return mp.fsum(u[0, j] * v[0, j] for j in range(k))

    def q(u):
        return (u * qmat * u.T)[0, 0]

    qf = [q(u) for u in f]
    lam = []
    run = mp.mpf(0)
    for x in qf:
        run = max(run, x)
        lam.append(max(run, mp.mpf("1e-6")))
    res = q_gram_schmidt(f, inner, q, c, lam, strict=False)
    return {"k": k, "c": float(c), "hypothesis": res.hypothesis, "holds": res.holds,
            "orthonormal": float(res.gram_defect) <= 1e-10, "violations": res.violations}


def _mp_orthonormal_rows(mp, Q):
    rows = [Q[i, :] for i in range(Q.rows)]
    out = []
    for r in rows:
        for o in out:
            r = r - mp.fsum(r[0, j] * o[0, j] for j in range(Q.cols)) * o
        r = r / mp.sqrt(mp.fsum(r[0, j] ** 2 for j in range(Q.cols)))
        out.append(r)
    return mp.matrix([[out[i][0, j] for j in range(Q.cols)] for i in range(Q.rows)])


def random_comparison_trial(rng: np.random.Generator, max_dim: int = 8) -> dict:
    """One randomized check of :func:`eigenvalue_comparison` on a diagonal form in ``R^N``, ``N <= max_dim``.

    ``f_i`` are the first ``k`` eigenvectors mixed with tail mass and re-orthonormalized;
    ``lambda_i <= mu_i`` and ``eta = max(q(f_i) - lambda_i)``.
    """
    N = int(rng.integers(2, max_dim + 1))
    k = int(rng.integers(1, N))
    mu = np.sort(rng.uniform(0.5, 10.0, N))
    if rng.random() < 0.3:
        mu[1] = mu[0]  # a multiple eigenvalue
        mu = np.sort(mu)
    size = 10.0 ** rng.uniform(-8, -2)
    F = np.eye(N)[:k] + size * rng.standard_normal((k, N))
    F = np.linalg.qr(F.T)[0].T
    F *= np.sign(np.diag(F[:, :k]))[:, None]
    qv = np.einsum("ij,j,ij->i", F, mu, F)
    lambdas = mu[:k] - size * rng.uniform(0, 1, k)
    lambdas = np.maximum(lambdas, 0.5 * mu[:k])
    eta = float(max(0.0, np.max(qv - lambdas)))
    res = comparison_harness(np.diag(mu), F, lambdas, eta, k)
    return {"N": N, "k": k, "eta": eta, "hypothesis": res.hypothesis and res.premise, "holds": res.holds,
            "c_k1": res.c[k]}
