import math

import numpy as np
import pytest

from caplab.domain import GridDomain, make_ball, make_box, random_blob, spiked_ball
from caplab.spectral import (
    EigensolverError,
    assemble,
    box_eigenvalues,
    load_eigenfunctions,
    lowest_eigenpairs,
    ratio_bounds,
    save_eigenfunctions,
    solve_domain,
    to_grid,
)

import oracles


def _grid(cells):
    mask = np.zeros((3, len(cells) + 2), bool)
    for j in cells:
        mask[1, j + 1] = True
    return mask


def test_single_cell_operator():
    h = 0.25
    op = assemble(GridDomain(_grid([0]), h))
    assert op.matrix.toarray().tolist() == [[4 / h**2]]


def test_two_cell_operator():
    h = 0.5
    A = assemble(GridDomain(_grid([0, 1]), h)).matrix.toarray()
    assert np.array_equal(A, np.array([[4, -1], [-1, 4]]) / h**2)


@pytest.mark.parametrize("builder", [lambda: make_ball(2, 1, 1 / 8), lambda: random_blob(3, 2, 1 / 16),
                                     lambda: make_ball(3, 1, 1 / 4), lambda: spiked_ball(2, 1, 0.5, 0.25, 1 / 8)])
def test_matches_dense_oracle(builder):
    dom = builder()
    A, _ = oracles.dense_laplacian(dom.mask, dom.h)
    assert np.allclose(assemble(dom).matrix.toarray(), A, rtol=0, atol=1e-12)
    spec = solve_domain(dom, 4)
    w = np.linalg.eigvalsh(A)[:4]
    assert np.allclose(spec.eigenvalues, w, rtol=1e-9)


def test_box_closed_form():
    h = 1 / 64
    lam = assemble(make_box(2, (1, 1), h))
    spec = lowest_eigenpairs(lam, 1)
    exact = oracles.box_eigenvalues([63, 63], h, 1)[0]
    assert spec.eigenvalues[0] == pytest.approx(exact, rel=1e-10)
    assert spec.eigenvalues[0] == pytest.approx(2 * math.pi**2, rel=0.01)
    assert box_eigenvalues([63, 63], h, 6) == pytest.approx(oracles.box_eigenvalues([63, 63], h, 6), rel=1e-13)


def test_unit_square_four():
    h = 1 / 128
    spec = solve_domain(make_box(2, (1, 1), h), 4)
    cont = np.array([2, 5, 5, 8]) * math.pi**2
    assert np.allclose(spec.eigenvalues, oracles.box_eigenvalues([127, 127], h, 4), rtol=1e-8)
    assert np.allclose(spec.eigenvalues, cont, rtol=0.01)


def test_disk_bessel():
    spec = solve_domain(make_ball(2, 1, 1 / 256), 2)
    j01, j11 = oracles.disk_eigenvalues()
    assert spec.eigenvalues[0] == pytest.approx(j01, rel=0.02)
    assert spec.eigenvalues[1] == pytest.approx(j11, rel=0.02)


def test_normalization_and_sign():
    dom = make_ball(2, 1, 1 / 32)
    spec = solve_domain(dom, 3)
    assert np.allclose(spec.gram(), np.eye(3), atol=1e-9)
    assert (spec.phi1 > 0).all()
    assert (spec.residuals <= spec.tol * spec.eigenvalues).all()


@pytest.mark.parametrize("method", ["dense", "shift-invert", "lobpcg"])
def test_methods_agree(method):
    dom = make_ball(3, 1, 1 / 8)
    ref = solve_domain(dom, 3, method="dense").eigenvalues
    assert np.allclose(solve_domain(dom, 3, method=method).eigenvalues, ref, rtol=1e-8)


def test_nonconvergence_is_reported():
    dom = make_ball(2, 1, 1 / 32)
    with pytest.raises(EigensolverError, match="maxiter"):
        lowest_eigenpairs(assemble(dom), 4, tol=1e-14, method="shift-invert", maxiter=1)


def test_bad_arguments():
    op = assemble(make_ball(2, 1, 1 / 8))
    with pytest.raises(ValueError):
        lowest_eigenpairs(op, 0)
    with pytest.raises(ValueError):
        lowest_eigenpairs(op, 2, method="power")


def test_deterministic():
    dom = make_ball(2, 1, 1 / 48)
    a, b = solve_domain(dom, 3), solve_domain(dom, 3)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenfunctions, b.eigenfunctions)


def test_ratio_bounds_ground_state():
    dom = make_ball(2, 1, 1 / 32)
    rb = ratio_bounds(solve_domain(dom, 2), dom, 1)
    assert rb.m_k == pytest.approx(1.0, abs=1e-12)
    assert rb.M_k == 0.0
    assert set(rb.sensitivity) == {1, 2, 3}


def test_ratio_bounds_running_maxima():
    dom = make_box(2, (1, 1), 1 / 32)
    rb = ratio_bounds(solve_domain(dom, 4), dom, 4)
    ms = [m for m, _ in rb.per_index]
    assert ms == sorted(ms)
    assert rb.m_k == ms[-1]


def test_ratio_bounds_disconnected():
    mask = np.zeros((12, 12), bool)
    mask[2:5, 2:5] = True
    mask[7:10, 7:10] = True
    dom = GridDomain(mask, 0.1)
    with pytest.raises(ValueError, match="disconnected"):
        ratio_bounds(solve_domain(dom, 2), dom, 2)


def test_to_grid_and_sidecar(tmp_path):
    dom = make_ball(2, 1, 1 / 16)
    spec = solve_domain(dom, 2)
    g = to_grid(spec.phi1, dom)
    assert g[~dom.mask].max() == 0.0
    path = tmp_path / "phi.bin"
    save_eigenfunctions(path, spec)
    did, arr = load_eigenfunctions(path)
    assert did == dom.domain_id
    assert np.array_equal(arr, spec.eigenfunctions)


def test_lobpcg_repeatable_and_leaves_global_rng_alone():
    dom = make_ball(3, 1, 1 / 16)
    np.random.seed(5)
    before = np.random.get_state()[1].copy()
    a = solve_domain(dom, 2, method="lobpcg")
    assert (np.random.get_state()[1] == before).all()
    np.random.rand(3)
    b = solve_domain(dom, 2, method="lobpcg")
    assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
    assert a.eigenfunctions.tobytes() == b.eigenfunctions.tobytes()
