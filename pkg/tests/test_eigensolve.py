import numpy as np
import pytest

from shapelab.coeffs import make_coefficients
from shapelab.eigensolve import cluster_ranges, residual_check, solve_lowest
from shapelab.errors import BadK
from shapelab.grid import build_grid
from shapelab.operator import assemble_mass, assemble_stiffness
from shapelab.oracle import rectangle_eigenvalues


def _system(nx, kind="identity", params=None, box=((0.0, 0.0), (1.0, 1.0))):
    g = build_grid(box[0], box[1], nx)
    cf = make_coefficients(g, kind, params)
    return g, assemble_stiffness(g, cf), assemble_mass(g, cf)


def test_square_eigenvalues_match_oracle_dense():
    g, k, m = _system(16)
    basis = solve_lowest(k, m, 4, method="dense")
    want = rectangle_eigenvalues(1.0, 1.0, 4)
    # discrete eigenvalues approximate the continuum ones to O(h^2)
    assert np.allclose(basis.lambdas, want, rtol=0.05)
    assert basis.lambdas[0] > 0
    assert np.all(np.diff(basis.lambdas) >= -1e-12)


def test_m_orthonormality_and_residuals():
    g, k, m = _system(10)
    basis = solve_lowest(k, m, 3)
    gram = basis.vectors.T @ (m.mat @ basis.vectors)
    assert np.allclose(gram, np.eye(3), atol=1e-8)
    rel = residual_check(k, m, basis)
    assert np.all(rel <= 1e-8)


def test_iterative_matches_dense_small_grids():
    for nx, kind, params in [
        (8, "identity", None),
        (10, "drift", {"phi": {"kind": "linear", "coeffs": [0.0, 0.8, -0.3]}}),
        (12, "anisotropic", {"ratio": 2.0, "angle": 0.5}),
    ]:
        g, k, m = _system(nx, kind, params)
        dense = solve_lowest(k, m, 4, method="dense")
        it = solve_lowest(k, m, 4, tol=1e-11, method="iterative")
        assert np.allclose(it.lambdas, dense.lambdas, rtol=1e-8), (nx, kind)
        assert it.method == "iterative"


def test_iterative_cg_inner_agrees():
    g, k, m = _system(10)
    dense = solve_lowest(k, m, 2, method="dense")
    it = solve_lowest(k, m, 2, tol=1e-11, method="iterative", inner="cg")
    assert np.allclose(it.lambdas, dense.lambdas, rtol=1e-8)


def test_degenerate_pair_returned_as_cluster():
    g, k, m = _system(14)
    basis = solve_lowest(k, m, 3, tol=1e-11, method="iterative")
    # modes (1,2) and (2,1) of the square are exactly degenerate
    assert basis.lambdas[1] == pytest.approx(basis.lambdas[2], rel=1e-9)
    ranges = cluster_ranges(basis.lambdas)
    assert (1, 3) in ranges
    gram = basis.vectors.T @ (m.mat @ basis.vectors)
    assert np.allclose(gram, np.eye(3), atol=1e-7)


def test_sign_convention_first_vector_positive_mass():
    for seed in range(5):
        g, k, m = _system(9)
        basis = solve_lowest(k, m, 1, seed=seed, method="iterative", tol=1e-10)
        assert float(np.sum(m.mat @ basis.vectors[:, 0])) > 0


def test_determinism_same_seed_same_bits():
    g, k, m = _system(16)
    a = solve_lowest(k, m, 3, seed=11, method="iterative", tol=1e-10)
    b = solve_lowest(k, m, 3, seed=11, method="iterative", tol=1e-10)
    assert np.array_equal(a.lambdas, b.lambdas)
    assert np.array_equal(a.vectors, b.vectors)


def test_warm_start_accepted():
    g, k, m = _system(12)
    first = solve_lowest(k, m, 2, method="iterative", tol=1e-10)
    again = solve_lowest(k, m, 2, method="iterative", tol=1e-10, x0=first.vectors)
    assert np.allclose(again.lambdas, first.lambdas, rtol=1e-10)


def test_bad_k_rejected():
    g, k, m = _system(8)
    with pytest.raises(BadK):
        solve_lowest(k, m, 0)
    with pytest.raises(BadK):
        solve_lowest(k, m, k.n)
    with pytest.raises(BadK):
        solve_lowest(k, m, 2, method="magic")


def test_lambda_next_reports_gap():
    g, k, m = _system(12)
    basis = solve_lowest(k, m, 2, method="dense")
    want = rectangle_eigenvalues(1.0, 1.0, 3)
    assert basis.lambda_next == pytest.approx(want[2], rel=0.05)
