import numpy as np
import pytest

from shapelab.errors import BadResolution, NonSquareCells, OutOfDomain
from shapelab.grid import Field, bilinear_sample, build_grid, gradient_field


def test_build_grid_unit_box():
    g = build_grid((0.0, 0.0), (1.0, 1.0), 16)
    assert g.nx == 16 and g.ny == 16
    assert g.h == pytest.approx(1.0 / 16)
    assert g.nodes_shape == (17, 17)
    xs = g.node_xs()
    assert xs[0] == 0.0 and xs[-1] == pytest.approx(1.0)


def test_build_grid_rectangle_matches_aspect():
    g = build_grid((0.0, 0.0), (2.0, 1.0), 16)
    assert g.ny == 8
    assert g.h == pytest.approx(2.0 / 16)


def test_build_grid_rejects_non_square_cells():
    with pytest.raises(NonSquareCells):
        build_grid((0.0, 0.0), (1.0, 0.77), 10)


@pytest.mark.parametrize("nx", [3, 0, -4, 5000])
def test_build_grid_rejects_bad_resolution(nx):
    with pytest.raises(BadResolution):
        build_grid((0.0, 0.0), (1.0, 1.0), nx)


def test_build_grid_rejects_fractional_nx():
    with pytest.raises(BadResolution):
        build_grid((0.0, 0.0), (1.0, 1.0), 16.5)


def test_bilinear_exact_at_nodes_and_on_bilinear_functions():
    g = build_grid((0.0, 0.0), (1.0, 1.0), 8)
    xy = g.node_coords()
    # f(x, y) = 2 + 3x - y + 5xy is reproduced exactly by Q1 interpolation
    f = 2 + 3 * xy[..., 0] - xy[..., 1] + 5 * xy[..., 0] * xy[..., 1]
    fld = Field(g, f)
    rng = np.random.default_rng(7)
    pts = rng.random((200, 2))
    vals = bilinear_sample(fld, pts)[:, 0]
    want = 2 + 3 * pts[:, 0] - pts[:, 1] + 5 * pts[:, 0] * pts[:, 1]
    assert np.allclose(vals, want, rtol=0, atol=1e-13)
    node_vals = bilinear_sample(fld, xy.reshape(-1, 2))[:, 0]
    assert np.allclose(node_vals, f.reshape(-1), atol=1e-14)


def test_bilinear_midpoint_of_quadratic_section():
    # f(x) = x^2 sampled halfway between nodes 0 and h gives h^2 / 2
    g = build_grid((0.0, 0.0), (1.0, 1.0), 8)
    xy = g.node_coords()
    fld = Field(g, xy[..., 0] ** 2)
    h = g.h
    got = bilinear_sample(fld, np.array([h / 2, 0.5]))[0]
    assert got == pytest.approx(h * h / 2, abs=1e-15)


def test_bilinear_closed_box_edges_ok_outside_raises():
    g = build_grid((0.0, 0.0), (1.0, 1.0), 8)
    fld = Field(g, np.ones(g.nodes_shape))
    assert bilinear_sample(fld, np.array([1.0, 1.0]))[0] == pytest.approx(1.0)
    assert bilinear_sample(fld, np.array([0.0, 0.3]))[0] == pytest.approx(1.0)
    with pytest.raises(OutOfDomain):
        bilinear_sample(fld, np.array([1.0 + 1e-6, 0.5]))
    with pytest.raises(OutOfDomain):
        bilinear_sample(fld, np.array([0.5, -1e-6]))


def test_field_multicomponent_and_validation():
    g = build_grid((0.0, 0.0), (1.0, 1.0), 4)
    vals = np.stack([np.zeros(g.nodes_shape), np.ones(g.nodes_shape)])
    fld = Field(g, vals)
    assert fld.ncomp == 2
    out = bilinear_sample(fld, np.array([[0.5, 0.5], [0.25, 0.75]]))
    assert out.shape == (2, 2)
    assert np.allclose(out[:, 1], 1.0)
    bad = np.ones((3, 3))
    with pytest.raises(BadResolution):
        Field(g, bad)
    nan = np.full(g.nodes_shape, np.nan)
    with pytest.raises(BadResolution):
        Field(g, nan)


def test_gradient_field_linear_exact():
    g = build_grid((0.0, 0.0), (1.0, 1.0), 8)
    xy = g.node_coords()
    fld = Field(g, 3.0 * xy[..., 0] - 2.0 * xy[..., 1])
    grad = gradient_field(fld)
    assert np.allclose(grad.values[0], 3.0, atol=1e-12)
    assert np.allclose(grad.values[1], -2.0, atol=1e-12)


def test_boundary_distance():
    g = build_grid((0.0, 0.0), (1.0, 1.0), 8)
    assert g.boundary_distance(np.array([0.5, 0.5])) == pytest.approx(0.5)
    assert g.boundary_distance(np.array([0.1, 0.7])) == pytest.approx(0.1)
