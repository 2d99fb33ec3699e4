"""Uniform node-centered grids on axis-aligned boxes, and bilinear sampling.

A grid covers the closed box ``[ox, ox+Lx] x [oy, oy+Ly]`` with ``nx`` by
``ny`` square cells of side ``h``.  Nodal data lives on the ``(ny+1, nx+1)``
lattice; fields may carry several components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadResolution, NonSquareCells, OutOfDomain

_MAX_CELLS = 4096          # desk scale; guards quadratic brute-force paths
_SQUARENESS_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Geometry of a uniform square-cell lattice over a box."""

    origin: tuple[float, float]
    extent: tuple[float, float]
    nx: int
    ny: int
    h: float

    @property
    def nodes_shape(self) -> tuple[int, int]:
        """(rows, cols) of the nodal lattice, rows indexed by y."""
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def node_xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx + 1)

    def node_ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny + 1)

    def node_coords(self) -> np.ndarray:
        """All node coordinates, shape (ny+1, nx+1, 2)."""
        xs = self.node_xs()
        ys = self.node_ys()
        out = np.empty((self.ny + 1, self.nx + 1, 2))
        out[..., 0] = xs[None, :]
        out[..., 1] = ys[:, None]
        return out

    def cell_centers(self) -> np.ndarray:
        """Cell-center coordinates, shape (ny, nx, 2)."""
        xs = self.origin[0] + self.h * (np.arange(self.nx) + 0.5)
        ys = self.origin[1] + self.h * (np.arange(self.ny) + 0.5)
        out = np.empty((self.ny, self.nx, 2))
        out[..., 0] = xs[None, :]
        out[..., 1] = ys[:, None]
        return out

    def interior_mask(self) -> np.ndarray:
        """Boolean (ny+1, nx+1) mask of nodes strictly inside the box."""
        m = np.zeros(self.nodes_shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from point(s) to the box boundary (positive inside)."""
        p = np.asarray(points, dtype=float)
        ox, oy = self.origin
        lx, ly = self.extent
        dx = np.minimum(p[..., 0] - ox, ox + lx - p[..., 0])
        dy = np.minimum(p[..., 1] - oy, oy + ly - p[..., 1])
        return np.minimum(dx, dy)


@dataclass
class Field:
    """Nodal data on a grid: ``values[c, j, i]`` is component c at node (i, j)."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None, :, :]
        if v.ndim != 3 or v.shape[1:] != self.grid.nodes_shape:
            raise BadResolution(
                f"field shape {v.shape} does not match nodal lattice "
                f"{self.grid.nodes_shape}"
            )
        if not np.isfinite(v).all():
            raise BadResolution("field contains non-finite entries")
        self.values = v

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def build_grid(origin, extent, nx: int) -> Grid:
    """Build a square-cell grid with nx cells along x.

    ny is chosen as round(nx * Ly / Lx); the result must tile the box with
    square cells to relative tolerance 1e-9, otherwise NonSquareCells.
    """
    ox, oy = float(origin[0]), float(origin[1])
    lx, ly = float(extent[0]), float(extent[1])
    if not (np.isfinite([ox, oy, lx, ly]).all() and lx > 0 and ly > 0):
        raise BadResolution(f"bad box: origin={origin} extent={extent}")
    if not isinstance(nx, (int, np.integer)):
        raise BadResolution(f"nx must be integral, got {nx!r}")
    nx = int(nx)
    if nx < 4 or nx > _MAX_CELLS:
        raise BadResolution(f"nx={nx} outside supported range [4, {_MAX_CELLS}]")
    ny = int(round(nx * ly / lx))
    if ny < 4 or ny > _MAX_CELLS:
        raise BadResolution(f"ny={ny} outside supported range [4, {_MAX_CELLS}]")
    h = lx / nx
    if abs(ny * h - ly) > _SQUARENESS_RTOL * max(lx, ly):
        raise NonSquareCells(
            f"box {lx} x {ly} with nx={nx} gives cells {h} x {ly / ny}"
        )
    return Grid(origin=(ox, oy), extent=(lx, ly), nx=nx, ny=ny, h=h)


def bilinear_sample(fld: Field, points) -> np.ndarray:
    """Sample a field at points by per-cell bilinear interpolation.

    points: shape (2,) or (N, 2).  Returns (ncomp,) or (N, ncomp).
    Points must lie in the closed box (tiny roundoff slack is tolerated);
    otherwise OutOfDomain.
    """
    g = fld.grid
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 2:
        raise OutOfDomain(f"points must have shape (..., 2), got {p.shape}")

    slack = 1e-12 * max(g.extent[0], g.extent[1], 1.0)
    lo = np.asarray(g.origin)
    hi = lo + np.asarray(g.extent)
    if (p < lo - slack).any() or (p > hi + slack).any():
        bad = p[((p < lo - slack) | (p > hi + slack)).any(axis=1)][0]
        raise OutOfDomain(f"point {tuple(bad)} outside box {tuple(lo)}..{tuple(hi)}")

    # local cell coordinates in [0, 1]; clamp to keep top/right edges valid
    tx = (p[:, 0] - lo[0]) / g.h
    ty = (p[:, 1] - lo[1]) / g.h
    ix = np.clip(np.floor(tx).astype(int), 0, g.nx - 1)
    iy = np.clip(np.floor(ty).astype(int), 0, g.ny - 1)
    fx = np.clip(tx - ix, 0.0, 1.0)
    fy = np.clip(ty - iy, 0.0, 1.0)

    v = fld.values
    v00 = v[:, iy, ix]
    v10 = v[:, iy, ix + 1]
    v01 = v[:, iy + 1, ix]
    v11 = v[:, iy + 1, ix + 1]
    out = (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    ).T  # (N, ncomp)
    return out[0] if single else out


def gradient_field(fld: Field) -> Field:
    """Nodal gradient by central differences (one-sided on the box edge).

    For a field with c components returns a field with 2c components ordered
    (d/dx comp0, d/dy comp0, d/dx comp1, ...).
    """
    g = fld.grid
    v = fld.values
    out = np.empty((2 * fld.ncomp,) + g.nodes_shape)
    for c in range(fld.ncomp):
        gx = np.gradient(v[c], g.h, axis=1)
        gy = np.gradient(v[c], g.h, axis=0)
        out[2 * c] = gx
        out[2 * c + 1] = gy
    return Field(g, out)
