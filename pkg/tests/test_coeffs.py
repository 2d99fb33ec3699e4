import math

import numpy as np
import pytest

from shapelab.coeffs import make_coefficients, spd_sqrt, validate_coefficients
from shapelab.errors import BadParams, NotSPD, UnknownKind
from shapelab.grid import build_grid


@pytest.fixture
def grid():
    return build_grid((0.0, 0.0), (1.0, 1.0), 8)


def test_identity_family(grid):
    cf = make_coefficients(grid, "identity")
    assert np.allclose(cf.a11.values, 1.0)
    assert np.allclose(cf.a12.values, 0.0)
    assert np.allclose(cf.b.values, 1.0)
    assert cf.lambdaA == 1.0 and cf.cA == 0.0 and cf.cb == 1.0


def test_drift_linear_exact_node_value():
    # Phi(x) = x1: at x = (ln 2, 0) all of a11, a22, b equal 1/2
    g = build_grid((math.log(2.0), 0.0), (1.0, 1.0), 8)
    cf = make_coefficients(g, "drift", {"phi": {"kind": "linear", "coeffs": [0.0, 1.0, 0.0]}})
    assert cf.a11.values[0, 0, 0] == pytest.approx(0.5, rel=1e-14)
    assert cf.a22.values[0, 0, 0] == pytest.approx(0.5, rel=1e-14)
    assert cf.b.values[0, 0, 0] == pytest.approx(0.5, rel=1e-14)
    assert np.allclose(cf.a12.values, 0.0)


def test_drift_constants_cover_range(grid):
    cf = make_coefficients(grid, "drift", {"phi": {"kind": "linear", "coeffs": [0.0, 1.0, 0.5]}})
    w = cf.a11.values[0]
    assert w.max() <= cf.lambdaA**2 * (1 + 1e-12)
    assert w.min() >= cf.lambdaA**-2 * (1 - 1e-12)
    assert cf.b.values[0].max() <= cf.cb * (1 + 1e-12)


def test_drift_gaussian_bump(grid):
    cf = make_coefficients(grid, "drift", {
        "phi": {"kind": "gaussian-bump", "amplitude": 0.8,
                "center": [0.5, 0.5], "sigma": 0.2}})
    # center node carries the full bump
    j = i = grid.ny // 2
    assert cf.b.values[0, j, i] == pytest.approx(math.exp(-0.8), rel=1e-12)
    rep = validate_coefficients(cf, n_samples=512, seed=3)
    assert rep["violations"] == []


def test_weight_keeps_identity_matrix(grid):
    cf = make_coefficients(grid, "weight", {
        "phi": {"kind": "gaussian-bump", "amplitude": 0.8,
                "center": [0.5, 0.5], "sigma": 0.2}})
    assert np.allclose(cf.a11.values, 1.0)
    assert np.allclose(cf.a22.values, 1.0)
    assert np.allclose(cf.a12.values, 0.0)
    assert cf.lambdaA == 1.0 and cf.cA == 0.0
    j = i = grid.ny // 2
    assert cf.b.values[0, j, i] == pytest.approx(math.exp(-0.8), rel=1e-12)
    assert cf.b.values[0].max() <= cf.cb * (1 + 1e-12)


def test_weight_rejects_extra_params(grid):
    with pytest.raises(BadParams):
        make_coefficients(grid, "weight", {"phi": {"kind": "constant", "value": 0.1},
                                           "ratio": 2.0})


def test_anisotropic_constant_angle(grid):
    cf = make_coefficients(grid, "anisotropic", {"ratio": 4.0, "angle": 0.0})
    assert np.allclose(cf.a11.values, 4.0)
    assert np.allclose(cf.a22.values, 0.25)
    assert np.allclose(cf.a12.values, 0.0)
    assert cf.lambdaA == pytest.approx(2.0)
    assert cf.cA == 0.0


def test_anisotropic_rotated_eigenvalues(grid):
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta = rng.uniform(0, math.pi)
        cf = make_coefficients(grid, "anisotropic", {"ratio": 3.0, "angle": theta})
        a = cf.matrix_at(np.array([0.5, 0.5]))
        w = np.linalg.eigvalsh(a)
        assert w[0] == pytest.approx(1.0 / 3.0, rel=1e-10)
        assert w[1] == pytest.approx(3.0, rel=1e-10)


def test_unknown_kind_and_bad_params(grid):
    with pytest.raises(UnknownKind):
        make_coefficients(grid, "periodic")
    with pytest.raises(UnknownKind):
        make_coefficients(grid, "drift", {"phi": {"kind": "quartic"}})
    with pytest.raises(BadParams):
        make_coefficients(grid, "identity", {"stray": 1})
    with pytest.raises(BadParams):
        make_coefficients(grid, "drift", {"phi": {"kind": "linear", "coeffs": [1.0, 2.0]}})
    with pytest.raises(BadParams):
        make_coefficients(grid, "drift", {"phi": {"kind": "gaussian-bump",
                                                  "amplitude": 1.0, "center": [0, 0],
                                                  "sigma": -0.1}})
    with pytest.raises(BadParams):
        make_coefficients(grid, "anisotropic", {"ratio": -2.0})
    with pytest.raises(BadParams):
        make_coefficients(grid, "anisotropic", {"ratio": 2.0, "angle": 0.1,
                                                "angle_field": {"kind": "linear",
                                                                "coeffs": [0, 1, 0]}})


def test_spd_sqrt_frozen_example():
    s = spd_sqrt(np.array([[2.0, 1.0], [1.0, 2.0]]))
    want = np.array([[1.3660254037844386, 0.3660254037844386],
                     [0.3660254037844386, 1.3660254037844386]])
    assert np.allclose(s, want, atol=1e-12)


def test_spd_sqrt_random_roundtrip():
    rng = np.random.default_rng(42)
    for _ in range(500):
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        w = rng.uniform(1e-2, 1e2, size=2)
        a = q @ np.diag(w) @ q.T
        a = 0.5 * (a + a.T)
        s = spd_sqrt(a)
        assert np.allclose(s @ s, a, rtol=1e-12, atol=1e-12 * abs(a).max())
        assert np.linalg.eigvalsh(s)[0] > 0


def test_spd_sqrt_rejects_bad_input():
    with pytest.raises(NotSPD):
        spd_sqrt(np.array([[1.0, 2.0], [0.5, 1.0]]))
    with pytest.raises(NotSPD):
        spd_sqrt(np.array([[1.0, 3.0], [3.0, 1.0]]))  # indefinite
    with pytest.raises(NotSPD):
        spd_sqrt(-np.eye(2))


def test_validate_reports_violations_without_raising(grid):
    cf = make_coefficients(grid, "drift", {"phi": {"kind": "linear", "coeffs": [0.0, 2.0, 0.0]}})
    cf.lambdaA = 1.0  # sabotage the declared constant
    rep = validate_coefficients(cf)
    assert any("lambdaA" in v or "eigenvalue" in v for v in rep["violations"])
    assert rep["min_eig"] > 0


def test_validate_clean_families(grid):
    for kind, params in [
        ("identity", None),
        ("drift", {"phi": {"kind": "constant", "value": 0.7}}),
        ("weight", {"phi": {"kind": "gaussian-bump", "amplitude": 0.4,
                            "center": [0.3, 0.6], "sigma": 0.25}}),
        ("anisotropic", {"ratio": 2.5, "angle": 0.3}),
        ("anisotropic", {"ratio": 2.0,
                         "angle_field": {"kind": "linear", "coeffs": [0.1, 0.5, -0.2]}}),
    ]:
        cf = make_coefficients(grid, kind, params)
        rep = validate_coefficients(cf, n_samples=256, seed=11)
        assert rep["violations"] == [], (kind, rep["violations"])
