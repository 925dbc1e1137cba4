"""Discrete Dirichlet Laplacian on a cell mask and its lowest eigenpairs."""

from __future__ import annotations

import json
import logging
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import GridDomain, _face_structure

__all__ = [
    "SparseOperator",
    "SpectralData",
    "RatioBounds",
    "EigensolverError",
    "assemble",
    "lowest_eigenpairs",
    "solve_domain",
    "ratio_bounds",
    "admissible_cells",
    "box_eigenvalues",
    "to_grid",
    "save_eigenfunctions",
    "load_eigenfunctions",
]

log = logging.getLogger(__name__)

SEED = 20240917
DENSE_LIMIT = 64
SHIFT_INVERT_3D_LIMIT = 12000


class EigensolverError(RuntimeError):
    """Eigensolver did not reach the requested accuracy."""


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """``(1/h^2)`` times the ``2*dim``-point Dirichlet stencil on active cells.

    Unknowns are the active cells in row-major order; ``index`` maps a grid
    cell to its unknown (``-1`` when inactive).
    """

    matrix: sp.csr_matrix
    h: float
    dim: int
    index: np.ndarray
    domain_id: str

    @property
    def n_dof(self) -> int:
        return self.matrix.shape[0]


def _neighbor_pairs(index: np.ndarray):
    """Unknown-index pairs of face-adjacent active cells, one pair per face."""
    out = []
    for ax in range(index.ndim):
        lo = [slice(None)] * index.ndim
        hi = [slice(None)] * index.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        a = index[tuple(lo)]
        b = index[tuple(hi)]
        both = (a >= 0) & (b >= 0)
        out.append((a[both], b[both]))
    p = np.concatenate([a for a, _ in out])
    q = np.concatenate([b for _, b in out])
    return p, q


def cell_index(mask: np.ndarray) -> np.ndarray:
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    return index


def assemble(domain: GridDomain) -> SparseOperator:
    """Assemble the SPD finite-difference Dirichlet Laplacian of ``domain``."""
    index = cell_index(domain.mask)
    n = domain.n_active
    p, q = _neighbor_pairs(index)
    inv_h2 = 1.0 / domain.h**2
    rows = np.concatenate([np.arange(n), p, q])
    cols = np.concatenate([np.arange(n), q, p])
    vals = np.concatenate([np.full(n, 2 * domain.dim * inv_h2), np.full(2 * p.size, -inv_h2)])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    mat.sort_indices()
    index.setflags(write=False)
    return SparseOperator(mat, domain.h, domain.dim, index, domain.domain_id)


def box_eigenvalues(counts, h: float, how_many: int) -> np.ndarray:
    """Exact discrete eigenvalues of the box with ``counts`` interior cells per axis."""
    per_axis = [(2.0 / h**2) * (1 - np.cos(np.arange(1, n + 1) * np.pi / (n + 1))) for n in counts]
    total = per_axis[0]
    for ev in per_axis[1:]:
        total = np.add.outer(total, ev).ravel()
    return np.sort(total)[:how_many]


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Lowest ``k`` eigenpairs with eigenfunctions normalized so ``sum(phi^2) h^dim = 1``."""

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray  # shape (k, n_dof)
    residuals: np.ndarray
    domain_id: str
    h: float
    dim: int
    tol: float
    method: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def phi1(self) -> np.ndarray:
        return self.eigenfunctions[0]

    def gram(self) -> np.ndarray:
        V = self.eigenfunctions
        return V @ V.T * self.h**self.dim

    def to_record(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "h": self.h,
            "k": self.k,
            "tol": self.tol,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "residuals": [float(x) for x in self.residuals],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    V = V.copy()
    if V[0].sum() < 0:
        V[0] = -V[0]
    for i in range(1, len(V)):
        v = V[i]
        big = np.flatnonzero(np.abs(v) > 1e-8 * np.abs(v).max())
        if big.size and v[big[0]] < 0:
            V[i] = -v
    return V


def lowest_eigenpairs(op: SparseOperator, k: int, tol: float = 1e-9, method: str = "auto",
                      maxiter: int = 2000) -> SpectralData:
    """Compute the ``k`` smallest eigenpairs of ``op``.

    ``method`` is ``"dense"``, ``"shift-invert"`` (ARPACK with a sparse LU
    at zero shift), ``"lobpcg"`` (smoothed-aggregation preconditioned) or
    ``"auto"``. Every returned pair satisfies ``||L phi - lam phi|| <= tol*lam``
    for unit ``phi``; otherwise :class:`EigensolverError` is raised.
    """
    n = op.n_dof
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n_dof={n}, got k={k}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    A = op.matrix
    if method == "auto":
        if n <= max(DENSE_LIMIT, k + 2):
            method = "dense"
        elif op.dim == 2 or n <= SHIFT_INVERT_3D_LIMIT:
            method = "shift-invert"
        else:
            method = "lobpcg"
    rng = np.random.default_rng(SEED)
    meta = {}
    if method == "dense":
        w, V = la.eigh(A.toarray())
        w, V = w[:k], V[:, :k]
    elif method == "shift-invert":
        v0 = rng.standard_normal(n)
        ncv = min(n, max(2 * k + 1, 20))
        try:
            w, V = spla.eigsh(A.tocsc(), k=k, sigma=0.0, which="LM", tol=tol * 1e-2, v0=v0,
                              ncv=ncv, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise EigensolverError(f"ARPACK did not converge within maxiter={maxiter}") from exc
    elif method == "lobpcg":
        w, V, meta = _lobpcg(A, k, tol, rng, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(w)
    w = np.asarray(w)[order]
    V = np.asarray(V)[:, order].T
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    resid = np.linalg.norm(A @ V.T - V.T * w, axis=0)
    bad = resid > tol * np.abs(w)
    if bad.any():
        raise EigensolverError(
            f"{method}: residuals {resid[bad]} exceed tol*lambda (tol={tol}, budget maxiter={maxiter})")
    scale = op.h ** (-op.dim / 2)
    V = _fix_signs(V) * scale
    return SpectralData(w, V, resid, op.domain_id, op.h, op.dim, tol, method, meta)


@contextmanager
def pinned_global_rng(seed: int = SEED):
    """Seed numpy's global RNG for the duration of the block, then restore it.

    pyamg draws start vectors for its spectral-radius estimates from the
    global state, which would otherwise make AMG runs unrepeatable.
    """
    saved = np.random.get_state()
    np.random.seed(seed)
    try:
        yield
    finally:
        np.random.set_state(saved)


def _lobpcg(A, k, tol, rng, maxiter):
    import pyamg

    n = A.shape[0]
    # a generous block keeps degenerate clusters inside the iterated subspace
    block = min(max(2 * k, k + 6), n // 5)
    X = rng.standard_normal((n, block))
    chunk = 10
    iterations = 0
    with pinned_global_rng():
        ml = pyamg.smoothed_aggregation_solver(A.tocsr(), symmetry="symmetric")
        M = ml.aspreconditioner()
        while iterations < maxiter:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                # restart in chunks and stop on the first k residuals only
                w, X = spla.lobpcg(A, X, M=M, tol=1e-300, largest=False, maxiter=chunk)
            iterations += chunk
            order = np.argsort(w)
            w, X = w[order], X[:, order]
            resid = np.linalg.norm(A @ X[:, :k] - X[:, :k] * w[:k], axis=0)
            if (resid <= 0.5 * tol * w[:k]).all():
                break
    return w[:k], X[:, :k], {"iterations": iterations, "block": block}


def solve_domain(domain: GridDomain, k: int, tol: float = 1e-9, method: str = "auto") -> SpectralData:
    return lowest_eigenpairs(assemble(domain), min(k, domain.n_active), tol, method)


def to_grid(values: np.ndarray, domain: GridDomain) -> np.ndarray:
    """Scatter per-active-cell values onto the full grid (zero outside)."""
    out = np.zeros(domain.shape)
    out[domain.mask] = values
    return out


def admissible_cells(domain: GridDomain, margin: int) -> np.ndarray:
    """Active cells at least ``margin`` cells from the discrete boundary.

    ``margin=1`` keeps every active cell; each further unit peels one layer.
    """
    if margin < 1:
        raise ValueError("margin must be >= 1")
    if margin == 1:
        return domain.mask.copy()
    from scipy import ndimage

    return ndimage.binary_erosion(domain.mask, _face_structure(domain.dim), iterations=margin - 1,
                                  border_value=0)


def _ratio_gradient(ratio: np.ndarray, active: np.ndarray, h: float) -> np.ndarray:
    """Finite-difference gradient magnitude of a function defined on active cells.

    Centered where both neighbors are active, one-sided where only one is.
    """
    sq = np.zeros(ratio.shape)
    for ax in range(ratio.ndim):
        fwd = np.zeros(ratio.shape)
        bwd = np.zeros(ratio.shape)
        has_f = np.zeros(ratio.shape, bool)
        has_b = np.zeros(ratio.shape, bool)
        sl_lo = [slice(None)] * ratio.ndim
        sl_hi = [slice(None)] * ratio.ndim
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        sl_lo, sl_hi = tuple(sl_lo), tuple(sl_hi)
        diff = (ratio[sl_hi] - ratio[sl_lo]) / h
        ok = active[sl_hi] & active[sl_lo]
        fwd[sl_lo] = diff
        has_f[sl_lo] = ok
        bwd[sl_hi] = diff
        has_b[sl_hi] = ok
        d = np.where(has_f & has_b, (fwd + bwd) / 2, np.where(has_f, fwd, np.where(has_b, bwd, 0.0)))
        sq += d**2
    return np.sqrt(sq)


@dataclass(frozen=True)
class RatioBounds:
    """Discrete ``m_k = max |phi_i/phi_1|`` and ``M_k = max |grad(phi_i/phi_1)|`` over ``i <= k``."""

    m_k: float
    M_k: float
    k: int
    admissible_margin: int
    per_index: tuple  # ((m_i, M_i) for i = 1..k), running maxima
    sensitivity: dict  # margin -> (m_k, M_k)
    note: str = ("gradient sup is taken away from the boundary; the continuum value "
                 "up to the boundary may be larger")


def _ratio_maxima(spec, domain, k, margin):
    adm = admissible_cells(domain, margin)
    if not adm.any():
        raise ValueError(f"no admissible cells at margin {margin}")
    phi1 = to_grid(spec.eigenfunctions[0], domain)
    floor = 1e-12 * phi1.max()
    if (phi1[adm] <= floor).any():
        raise ValueError("ground state vanishes at an admissible cell; the domain is likely disconnected")
    active = domain.mask
    safe = np.where(active, phi1, 1.0)
    running = []
    m = M = 0.0
    for i in range(k):
        ratio = np.where(active, to_grid(spec.eigenfunctions[i], domain) / safe, 0.0)
        m = max(m, float(np.abs(ratio[adm]).max()))
        if i > 0:
            M = max(M, float(_ratio_gradient(ratio, active, domain.h)[adm].max()))
        running.append((m, M))
    return m, M, tuple(running)


def ratio_bounds(spec: SpectralData, domain: GridDomain, k: int, margin: int = 1) -> RatioBounds:
    """Ratio bounds with their sensitivity to the boundary margin (1, 2, 3)."""
    if k > spec.k:
        raise ValueError(f"k={k} exceeds the {spec.k} available eigenpairs")
    if spec.domain_id != domain.domain_id:
        raise ValueError("spectral data does not belong to this domain")
    m, M, running = _ratio_maxima(spec, domain, k, margin)
    sens = {}
    for mg in (1, 2, 3):
        try:
            mm, MM, _ = _ratio_maxima(spec, domain, k, mg)
            sens[mg] = (mm, MM)
        except ValueError:
            sens[mg] = (float("nan"), float("nan"))
    return RatioBounds(m, M, k, margin, running, sens)


# -- binary sidecar -------------------------------------------------------------


def save_eigenfunctions(path, spec: SpectralData) -> None:
    """Row-major little-endian float64 block preceded by a one-line header."""
    arr = np.ascontiguousarray(spec.eigenfunctions, dtype="<f8")
    header = f"DMASKREF {spec.domain_id} {arr.shape[0]} {arr.shape[1]}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def load_eigenfunctions(path) -> tuple:
    """Return ``(domain_id, array)`` from a sidecar written by :func:`save_eigenfunctions`."""
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if header[0] != "DMASKREF":
            raise ValueError("not an eigenfunction sidecar")
        rows, cols = int(header[2]), int(header[3])
        data = np.frombuffer(fh.read(), dtype="<f8")
    return header[1], data.reshape(rows, cols)
