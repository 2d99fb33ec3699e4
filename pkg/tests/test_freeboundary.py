"""Tests for level-set boundary extraction and distance fields."""

import math

import numpy as np
import pytest

from shapelab.errors import EmptyBoundary
from shapelab.freeboundary import (BoundaryPolyline, contour_length,
                                   distance_field, extract_boundary,
                                   segment_midpoints)
from shapelab.grid import Field, bilinear_sample, build_grid


def unit_grid(nx):
    return build_grid((0.0, 0.0), (1.0, 1.0), nx)


def vertical_interface(g, x0=0.5):
    xy = g.node_coords()
    vals = np.clip(0.5 + (x0 - xy[..., 0]) * 0.5 / g.h, 0.0, 1.0)
    return Field(g, vals)


def radial_ramp(g, center, radius):
    xy = g.node_coords()
    r = np.hypot(xy[..., 0] - center[0], xy[..., 1] - center[1])
    return Field(g, np.clip(0.5 + (radius - r) / (2 * g.h), 0.0, 1.0))


class TestExtractBoundary:
    def test_vertical_interface_points_and_normals(self):
        g = unit_grid(16)
        bd = extract_boundary(vertical_interface(g))
        assert len(bd) > 0
        assert np.max(np.abs(bd.points[:, 0] - 0.5)) <= 1e-9
        assert np.allclose(bd.normals, [1.0, 0.0], atol=1e-9)

    def test_normals_unit_length(self):
        g = unit_grid(32)
        bd = extract_boundary(radial_ramp(g, (0.5, 0.5), 0.3))
        norms = np.linalg.norm(bd.normals, axis=1)
        assert np.max(np.abs(norms - 1.0)) <= 1e-9

    def test_circle_radius_and_perimeter(self):
        g = unit_grid(64)
        R = 0.3
        bd = extract_boundary(radial_ramp(g, (0.5, 0.5), R))
        r = np.hypot(bd.points[:, 0] - 0.5, bd.points[:, 1] - 0.5)
        assert np.max(np.abs(r - R)) <= g.h
        assert bd.total_length() == pytest.approx(2 * math.pi * R, rel=0.02)

    def test_circle_outward_normals(self):
        g = unit_grid(64)
        bd = extract_boundary(radial_ramp(g, (0.5, 0.5), 0.3))
        radial = bd.points - np.array([0.5, 0.5])
        radial /= np.linalg.norm(radial, axis=1)[:, None]
        dots = (bd.normals * radial).sum(axis=1)
        assert np.min(dots) > 0.9

    def test_points_sit_on_level(self):
        g = unit_grid(48)
        phi = radial_ramp(g, (0.47, 0.55), 0.27)
        for level in (0.35, 0.5, 0.65):
            bd = extract_boundary(phi, level)
            sampled = bilinear_sample(phi, bd.points)[:, 0]
            assert np.max(np.abs(sampled - level)) <= 1e-9

    def test_closed_curve_topology(self):
        g = unit_grid(64)
        bd = extract_boundary(radial_ramp(g, (0.5, 0.5), 0.3))
        # a single closed loop: as many segments as points, every point used
        # exactly twice
        assert bd.segments.shape[0] == bd.points.shape[0]
        counts = np.bincount(bd.segments.ravel(), minlength=len(bd))
        assert np.all(counts == 2)

    def test_inside_d_flag(self):
        g = unit_grid(32)
        bd = extract_boundary(vertical_interface(g))
        dist_to_edge = np.minimum(bd.points[:, 1], 1.0 - bd.points[:, 1])
        assert np.array_equal(bd.inside_d, dist_to_edge > 2 * g.h)
        assert bd.inside_d.any() and (~bd.inside_d).any()

    def test_empty_boundary(self):
        g = unit_grid(16)
        with pytest.raises(EmptyBoundary):
            extract_boundary(Field(g, np.ones(g.nodes_shape)))

    def test_node_on_level_exact_crossing(self):
        # interface value hits the level exactly at x = 0.5 nodes; the
        # crossing points coincide with those nodes
        g = unit_grid(16)
        bd = extract_boundary(vertical_interface(g, x0=0.5))
        ys = bd.points[:, 1] / g.h
        assert np.allclose(ys, np.round(ys), atol=1e-9)


class TestContourLength:
    def test_vertical_interface_full_and_windowed(self):
        g = unit_grid(32)
        phi = vertical_interface(g)
        assert contour_length(phi, 0.5) == pytest.approx(1.0, abs=1e-9)
        assert contour_length(phi, 0.5, window=(0.0, 1.0, 0.25, 0.75)) == \
            pytest.approx(0.5, abs=2 * g.h)

    def test_level_not_crossed_gives_zero(self):
        g = unit_grid(16)
        phi = Field(g, np.full(g.nodes_shape, 0.2))
        assert contour_length(phi, 0.5) == 0.0

    def test_circle_levels_nested(self):
        g = unit_grid(64)
        phi = radial_ramp(g, (0.5, 0.5), 0.3)
        # ramp spans two cells; nearby levels map to nearby radii
        for level in (0.4, 0.5, 0.6):
            r_eff = 0.3 + (0.5 - level) * 2 * g.h
            assert contour_length(phi, level) == pytest.approx(
                2 * math.pi * r_eff, rel=0.02)


class TestDistanceField:
    def test_vertical_interface(self):
        g = unit_grid(32)
        bd = extract_boundary(vertical_interface(g))
        d = distance_field(g, bd).values[0]
        xy = g.node_coords()
        assert np.max(np.abs(d - np.abs(xy[..., 0] - 0.5))) <= g.h / 2

    def test_circle(self):
        g = unit_grid(64)
        R = 0.3
        bd = extract_boundary(radial_ramp(g, (0.5, 0.5), R))
        d = distance_field(g, bd).values[0]
        xy = g.node_coords()
        r = np.hypot(xy[..., 0] - 0.5, xy[..., 1] - 0.5)
        assert np.max(np.abs(d - np.abs(r - R))) <= g.h

    def test_zero_at_boundary_nodes(self):
        g = unit_grid(16)
        bd = extract_boundary(vertical_interface(g))
        d = distance_field(g, bd).values[0]
        # crossings coincide with the x = 0.5 node column
        i = round(0.5 / g.h)
        assert np.max(d[:, i]) <= 1e-12

    def test_nonnegative_and_lipschitz(self):
        g = unit_grid(48)
        bd = extract_boundary(radial_ramp(g, (0.4, 0.6), 0.25))
        d = distance_field(g, bd).values[0]
        assert np.min(d) >= 0.0
        lim = g.h * math.sqrt(2.0) + 1e-12
        for dj, di in ((0, 1), (1, 0), (1, 1), (1, -1)):
            a = d[max(dj, 0) or None: d.shape[0] + min(dj, 0) or None,
                  max(di, 0) or None: d.shape[1] + min(di, 0) or None]
            b = d[max(-dj, 0) or None: d.shape[0] + min(-dj, 0) or None,
                  max(-di, 0) or None: d.shape[1] + min(-di, 0) or None]
            assert np.max(np.abs(a - b)) <= lim


class TestSegmentMidpoints:
    def test_one_point_per_segment(self):
        g = unit_grid(48)
        bd = extract_boundary(radial_ramp(g, (0.5, 0.5), 0.3))
        mid = segment_midpoints(bd, g)
        assert len(mid) == len(bd.segments)
        a = bd.points[bd.segments[:, 0]]
        b = bd.points[bd.segments[:, 1]]
        assert np.allclose(mid.points, 0.5 * (a + b))

    def test_midpoints_avoid_lattice_bends(self):
        # On a binary indicator every contour vertex sits on a cell edge of
        # the staircase; midpoints must land strictly between two vertices.
        g = unit_grid(48)
        xy = g.node_coords()
        inside = np.hypot(xy[..., 0] - 0.5, xy[..., 1] - 0.5) < 0.3
        chi = Field(g, inside.astype(float))
        bd = extract_boundary(chi)
        mid = segment_midpoints(bd, g)
        d = np.min(np.linalg.norm(mid.points[:, None, :] - bd.points[None, :, :],
                                  axis=2), axis=1)
        seg_len = np.linalg.norm(bd.points[bd.segments[:, 0]]
                                 - bd.points[bd.segments[:, 1]], axis=1)
        assert np.min(d) >= 0.5 * np.min(seg_len[seg_len > 1e-12]) - 1e-12

    def test_unit_outward_normals_on_circle(self):
        g = unit_grid(64)
        mid = segment_midpoints(extract_boundary(radial_ramp(g, (0.5, 0.5), 0.3)), g)
        assert np.allclose(np.linalg.norm(mid.normals, axis=1), 1.0, atol=1e-9)
        radial = mid.points - np.array([0.5, 0.5])
        radial /= np.linalg.norm(radial, axis=1)[:, None]
        assert np.min((mid.normals * radial).sum(axis=1)) > 0.9

    def test_inside_d_excludes_wall_neighborhood(self):
        g = unit_grid(32)
        # disk pushed against the left wall: midpoints near x=0 flagged out
        mid = segment_midpoints(extract_boundary(radial_ramp(g, (0.1, 0.5), 0.25)), g)
        close = g.boundary_distance(mid.points) <= 2.0 * g.h
        assert np.any(close)
        assert not np.any(mid.inside_d & close)
        assert np.any(mid.inside_d)

    def test_requires_segments(self):
        g = unit_grid(16)
        bare = BoundaryPolyline(points=np.zeros((3, 2)),
                                normals=np.tile([1.0, 0.0], (3, 1)),
                                inside_d=np.ones(3, dtype=bool))
        with pytest.raises(EmptyBoundary):
            segment_midpoints(bare, g)

    def test_opposing_normals_fall_back(self):
        g = unit_grid(16)
        pts = np.array([[0.5, 0.4], [0.5, 0.6]])
        nrm = np.array([[1.0, 0.0], [-1.0, 0.0]])
        bd = BoundaryPolyline(points=pts, normals=nrm,
                              inside_d=np.ones(2, dtype=bool),
                              segments=np.array([[0, 1]]))
        mid = segment_midpoints(bd, g)
        assert mid.points.shape == (1, 2)
        assert np.allclose(np.linalg.norm(mid.normals, axis=1), 1.0)
        assert not mid.inside_d[0]
