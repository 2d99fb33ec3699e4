"""Level-set boundary extraction (marching squares) and distance fields."""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from .errors import EmptyBoundary
from .grid import Field, Grid, bilinear_sample, gradient_field

# segment table indexed by the 4-bit inside pattern SW | SE<<1 | NE<<2 | NW<<3;
# entries are pairs of local edge names, ambiguous saddles handled separately
_SEGMENTS: dict[int, list[tuple[str, str]]] = {
    0: [], 15: [],
    1: [("W", "S")], 14: [("W", "S")],
    2: [("S", "E")], 13: [("S", "E")],
    3: [("W", "E")], 12: [("W", "E")],
    4: [("E", "N")], 11: [("E", "N")],
    6: [("S", "N")], 9: [("S", "N")],
    8: [("W", "N")], 7: [("W", "N")],
}


@dataclass
class BoundaryPolyline:
    """Crossing points of a nodal level set, with outward normals."""

    points: np.ndarray
    normals: np.ndarray
    inside_d: np.ndarray
    segments: np.ndarray = dfield(repr=False, default=None)

    def __len__(self) -> int:
        return self.points.shape[0]

    def total_length(self) -> float:
        if self.segments is None or len(self.segments) == 0:
            return 0.0
        a = self.points[self.segments[:, 0]]
        b = self.points[self.segments[:, 1]]
        return float(np.linalg.norm(a - b, axis=1).sum())


def _contour(values: np.ndarray, grid: Grid, level: float):
    """Marching squares on nodal values; returns (points, segments) arrays."""
    inside = values > level
    sw = inside[:-1, :-1]
    se = inside[:-1, 1:]
    ne = inside[1:, 1:]
    nw = inside[1:, :-1]
    case = (sw.astype(int) + (se.astype(int) << 1)
            + (ne.astype(int) << 2) + (nw.astype(int) << 3))
    jj, ii = np.nonzero((case > 0) & (case < 15))

    h = grid.h
    ox, oy = grid.origin
    points: list[tuple[float, float]] = []
    index: dict[tuple[str, int, int], int] = {}
    segs: list[tuple[int, int]] = []

    def crossing(kind: str, i: int, j: int) -> int:
        key = (kind, i, j)
        got = index.get(key)
        if got is not None:
            return got
        if kind == "h":
            va, vb = values[j, i], values[j, i + 1]
            t = (level - va) / (vb - va)
            p = (ox + (i + t) * h, oy + j * h)
        else:
            va, vb = values[j, i], values[j + 1, i]
            t = (level - va) / (vb - va)
            p = (ox + i * h, oy + (j + t) * h)
        index[key] = len(points)
        points.append(p)
        return index[key]

    for j, i in zip(jj.tolist(), ii.tolist()):
        c = int(case[j, i])
        if c in (5, 10):
            center = 0.25 * (values[j, i] + values[j, i + 1]
                             + values[j + 1, i] + values[j + 1, i + 1])
            center_in = center > level
            if c == 5:  # SW and NE inside
                pairs = [("S", "E"), ("W", "N")] if center_in else [("W", "S"), ("E", "N")]
            else:       # SE and NW inside
                pairs = [("W", "S"), ("E", "N")] if center_in else [("S", "E"), ("W", "N")]
        else:
            pairs = _SEGMENTS[c]
        edge_ids = {}
        for name in {e for pair in pairs for e in pair}:
            if name == "S":
                edge_ids[name] = crossing("h", i, j)
            elif name == "N":
                edge_ids[name] = crossing("h", i, j + 1)
            elif name == "W":
                edge_ids[name] = crossing("v", i, j)
            else:
                edge_ids[name] = crossing("v", i + 1, j)
        for a, b in pairs:
            segs.append((edge_ids[a], edge_ids[b]))

    if not points:
        return np.zeros((0, 2)), np.zeros((0, 2), dtype=int)
    return np.asarray(points), np.asarray(segs, dtype=int)


def extract_boundary(phi: Field, level: float = 0.5) -> BoundaryPolyline:
    """Extract the level set of a scalar field as crossing points plus normals.

    Normals point outward (toward decreasing phi); points more than two cells
    away from the box edge are flagged inside_d.  Raises EmptyBoundary when
    the level set has no crossings.
    """
    values = phi.values[0]
    grid = phi.grid
    points, segments = _contour(values, grid, level)
    if points.shape[0] == 0:
        raise EmptyBoundary(f"level {level} not crossed by the field")

    grad = gradient_field(Field(grid, values))
    gvals = bilinear_sample(grad, points)
    norms = np.linalg.norm(gvals, axis=1)
    safe = np.where(norms > 1e-14, norms, 1.0)
    normals = -gvals / safe[:, None]
    normals[norms <= 1e-14] = (1.0, 0.0)

    inside = grid.boundary_distance(points) > 2.0 * grid.h
    return BoundaryPolyline(points=points, normals=normals,
                            inside_d=inside, segments=segments)


def segment_midpoints(boundary: BoundaryPolyline, grid: Grid) -> BoundaryPolyline:
    """Edge-centered resampling of a contour polyline.

    Marching vertices of an indicator field all sit where the staircase
    contour bends, and the small-radius area fraction seen from a convex
    corner tends to its opening angle over 2 pi instead of 1/2.  Segment
    midpoints lie on the flat stretches of the same polyline, which makes
    them the right anchors for pointwise boundary diagnostics.
    """
    segs = boundary.segments
    if segs is None or len(segs) == 0:
        raise EmptyBoundary("polyline has no segments")
    pts = 0.5 * (boundary.points[segs[:, 0]] + boundary.points[segs[:, 1]])
    nrm = boundary.normals[segs[:, 0]] + boundary.normals[segs[:, 1]]
    norms = np.linalg.norm(nrm, axis=1)
    ok = norms > 1e-9  # opposing endpoint normals leave no stable direction
    nrm = nrm / np.where(ok, norms, 1.0)[:, None]
    nrm[~ok] = (1.0, 0.0)
    inside = (grid.boundary_distance(pts) > 2.0 * grid.h) & ok
    return BoundaryPolyline(points=pts, normals=nrm, inside_d=inside)


_SMOOTH_PASSES = 2


def _chained_length(points: np.ndarray, segments: np.ndarray) -> float:
    """Length of the level polylines after two midpoint corner-cut passes.

    Marching-squares vertices are quantized to lattice edges, so the raw
    chord sum overestimates curved interfaces of indicator-valued fields by
    several percent (staircase zig-zag).  Chaining the segments and measuring
    the midpoint-smoothed polyline removes most of that bias while leaving
    straight polylines exactly unchanged and smooth ones unchanged to
    O(h^2); open chains keep their endpoints.
    """
    nbr: dict[int, list[int]] = {}
    for a, b in segments:
        nbr.setdefault(int(a), []).append(int(b))
        nbr.setdefault(int(b), []).append(int(a))

    visited: set[int] = set()
    total = 0.0

    def walk(start: int) -> tuple[list[int], bool]:
        chain = [start]
        visited.add(start)
        prev, cur = -1, start
        closed = False
        while True:
            step = next((n for n in nbr[cur] if n != prev and n not in visited),
                        None)
            if step is None:
                closed = len(chain) > 2 and chain[0] in nbr[cur]
                break
            visited.add(step)
            chain.append(step)
            prev, cur = cur, step
        return chain, closed

    starts = [v for v, ns in nbr.items() if len(ns) == 1]
    starts += [v for v in nbr if len(nbr[v]) != 1]
    for v0 in starts:
        if v0 in visited:
            continue
        chain, closed = walk(v0)
        if len(chain) < 2:
            continue
        v = points[np.asarray(chain)]
        for _ in range(_SMOOTH_PASSES):
            if closed:
                v = 0.5 * (v + np.roll(v, -1, axis=0))
            else:
                v = np.vstack([v[:1], 0.5 * (v[:-1] + v[1:]), v[-1:]])
        diffs = (np.diff(np.vstack([v, v[:1]]), axis=0) if closed
                 else np.diff(v, axis=0))
        total += float(np.linalg.norm(diffs, axis=1).sum())
    return total


def contour_length(phi: Field, level: float, window=None) -> float:
    """Total marching-squares length of a level set, optionally windowed.

    Zero when the level is not crossed (no exception), which is what the
    co-area style audits want when sweeping levels past the field maximum.
    """
    points, segments = _contour(phi.values[0], phi.grid, level)
    if len(segments) == 0:
        return 0.0
    if window is not None:
        xlo, xhi, ylo, yhi = window
        a = points[segments[:, 0]]
        b = points[segments[:, 1]]
        keep = ((a[:, 0] >= xlo) & (a[:, 0] <= xhi) & (a[:, 1] >= ylo) & (a[:, 1] <= yhi)
                & (b[:, 0] >= xlo) & (b[:, 0] <= xhi) & (b[:, 1] >= ylo) & (b[:, 1] <= yhi))
        segments = segments[keep]
        if len(segments) == 0:
            return 0.0
    return _chained_length(points, segments)


def distance_field(grid: Grid, boundary: BoundaryPolyline) -> Field:
    """Per-node exact minimum distance to the boundary points (brute force)."""
    pts = boundary.points
    coords = grid.node_coords().reshape(-1, 2)
    out = np.empty(coords.shape[0])
    chunk = 4096
    for start in range(0, coords.shape[0], chunk):
        block = coords[start:start + chunk]
        d = np.linalg.norm(block[:, None, :] - pts[None, :, :], axis=2)
        out[start:start + chunk] = d.min(axis=1)
    return Field(grid, out.reshape(grid.nodes_shape))
