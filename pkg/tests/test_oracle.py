import math

import numpy as np
import pytest

from shapelab.errors import BadParams
from shapelab.grid import build_grid
from shapelab.oracle import (BallOptimum, bessel_j01, halfplane_fixture,
                             optimal_ball, rectangle_eigenvalues)


def test_bessel_first_zero_value():
    # reference value of the first J0 zero
    assert bessel_j01() == pytest.approx(2.4048255576957728, abs=2e-10)


def test_optimal_ball_at_500():
    b = optimal_ball(500.0)
    assert b.radius == pytest.approx(0.24632688798423238, rel=1e-12)
    assert b.objective == pytest.approx(190.62221557567955, rel=1e-12)
    # first-order balance: eigenvalue part equals volume part at the optimum
    assert b.lambda1 == pytest.approx(500.0 * b.volume, rel=1e-10)


def test_optimal_ball_scaling_law():
    # R* ~ Lambda^(-1/4), J* ~ Lambda^(1/2)
    b1 = optimal_ball(100.0)
    b2 = optimal_ball(1600.0)
    assert b1.radius / b2.radius == pytest.approx(2.0, rel=1e-12)
    assert b2.objective / b1.objective == pytest.approx(4.0, rel=1e-12)
    with pytest.raises(BadParams):
        optimal_ball(0.0)


def test_rectangle_eigenvalues_unit_square():
    vals = rectangle_eigenvalues(1.0, 1.0, 6)
    pi2 = math.pi**2
    want = pi2 * np.array([2.0, 5.0, 5.0, 8.0, 10.0, 10.0])
    assert np.allclose(vals, want, rtol=1e-13)


def test_rectangle_eigenvalues_2x1():
    vals = rectangle_eigenvalues(2.0, 1.0, 5)
    pi2 = math.pi**2
    # modes (1,1), (2,1), (3,1), (1,2), (4,1) of pi^2 (m^2/4 + n^2)
    want = pi2 * np.array([1.25, 2.0, 3.25, 4.25, 5.0])
    assert np.allclose(vals, want, rtol=1e-13)


def test_rectangle_eigenvalues_deep_counts():
    # Weyl sanity: counting function N(lam) ~ area lam / (4 pi)
    vals = rectangle_eigenvalues(1.0, 1.0, 200)
    assert np.all(np.diff(vals) >= -1e-12)
    lam = vals[-1]
    weyl = lam / (4 * math.pi)
    assert 0.7 * weyl <= 200 <= 1.4 * weyl


def test_halfplane_fixture_values():
    g = build_grid((0.0, 0.0), (1.0, 1.0), 8)
    u, chi = halfplane_fixture(g, 4.0, 0.5)
    y = g.node_coords()[..., 1]
    assert np.allclose(u.values[0], 2.0 * np.maximum(y - 0.5, 0.0))
    assert set(np.unique(chi.values)) <= {0.0, 1.0}
    assert chi.values[0, -1, 0] == 1.0 and chi.values[0, 0, 0] == 0.0
    # offset exactly on a node line: that line is outside the positivity set
    assert chi.values[0, g.ny // 2, 3] == 0.0
    with pytest.raises(BadParams):
        halfplane_fixture(g, 4.0, 1.5)


def test_ball_optimum_is_frozen_dataclass():
    b = optimal_ball(500.0)
    assert isinstance(b, BallOptimum)
    with pytest.raises(Exception):
        b.radius = 1.0
