"""Q1 finite-element assembly on square cells with Dirichlet elimination.

Stiffness uses cell-centered coefficient evaluation and exact integration of
the bilinear shape functions; the optional zero-order term and the mass matrix
are lumped nodewise (diagonal entries V(x_i) h^2 and b(x_i) h^2).  Boundary
nodes of the box are eliminated, so operators act on interior coefficient
vectors only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .coeffs import CoefficientField
from .errors import DimensionMismatch, NegativePotential
from .grid import Field, Grid

# Exact element integrals for bilinear shapes on a square, local node order
# SW, SE, NE, NW.  The xx/yy blocks are h-independent in 2D; the mixed block
# comes from the rank-one sign patterns of the shape gradients.
_KXX = np.array([
    [2, -2, -1, 1],
    [-2, 2, 1, -1],
    [-1, 1, 2, -2],
    [1, -1, -2, 2],
]) / 6.0
_KYY = np.array([
    [2, 1, -1, -2],
    [1, 2, -2, -1],
    [-1, -2, 2, 1],
    [-2, -1, 1, 2],
]) / 6.0
_SX = np.array([-1.0, 1.0, 1.0, -1.0])
_SY = np.array([-1.0, -1.0, 1.0, 1.0])
_KXY = (np.outer(_SX, _SY) + np.outer(_SY, _SX)) / 4.0


@dataclass
class SparseOperator:
    """Symmetric operator on interior nodes, stored compressed-row."""

    grid: Grid
    mat: sp.csr_matrix = field(repr=False)
    interior_ids: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.mat.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.mat.indices

    @property
    def values(self) -> np.ndarray:
        return self.mat.data

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"operator is {self.n}x{self.n}, vector has {x.shape}")
        return self.mat @ x

    def diagonal(self) -> np.ndarray:
        return self.mat.diagonal()

    def pack(self, nodal: np.ndarray) -> np.ndarray:
        """Interior coefficient vector from a (ny+1, nx+1) nodal array."""
        flat = np.asarray(nodal, dtype=float).reshape(-1)
        if flat.shape[0] != self.grid.n_nodes:
            raise DimensionMismatch("nodal array does not match the grid")
        return flat[self.interior_ids]

    def unpack(self, vec: np.ndarray) -> np.ndarray:
        """Nodal (ny+1, nx+1) array from an interior vector; zero on the box edge."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape[0] != self.n:
            raise DimensionMismatch(f"expected interior vector of length {self.n}")
        out = np.zeros(self.grid.n_nodes)
        out[self.interior_ids] = vec
        return out.reshape(self.grid.nodes_shape)


def _interior_ids(grid: Grid) -> np.ndarray:
    return np.flatnonzero(grid.interior_mask().reshape(-1))


def _cell_center_values(fld: Field) -> np.ndarray:
    """Bilinear value at cell centers = average of the 4 corner nodes."""
    v = fld.values[0]
    return 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])


def assemble_stiffness(grid: Grid, cf: CoefficientField,
                       potential: Field | None = None) -> SparseOperator:
    """Stiffness K for -div(A grad .) plus an optional lumped zero-order term.

    potential, if given, is a nodal field V >= 0 contributing V(x_i) h^2 to
    the diagonal (raises NegativePotential otherwise).
    """
    nx, ny, h = grid.nx, grid.ny, grid.h
    a = _cell_center_values(cf.a11).reshape(-1)
    c = _cell_center_values(cf.a12).reshape(-1)
    b = _cell_center_values(cf.a22).reshape(-1)

    ke = (a[:, None, None] * _KXX[None]
          + b[:, None, None] * _KYY[None]
          + c[:, None, None] * _KXY[None])

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    sw = (jj * (nx + 1) + ii).reshape(-1)
    enodes = np.stack([sw, sw + 1, sw + nx + 2, sw + nx + 1], axis=1)

    rows = np.repeat(enodes, 4, axis=1).reshape(-1)
    cols = np.tile(enodes, (1, 4)).reshape(-1)
    data = ke.transpose(0, 2, 1).reshape(-1)  # symmetric, order immaterial

    ids = _interior_ids(grid)
    remap = -np.ones(grid.n_nodes, dtype=int)
    remap[ids] = np.arange(ids.size)
    ri, ci = remap[rows], remap[cols]
    keep = (ri >= 0) & (ci >= 0)
    mat = sp.coo_matrix((data[keep], (ri[keep], ci[keep])),
                        shape=(ids.size, ids.size)).tocsr()

    if potential is not None:
        v = potential.values[0].reshape(-1)[ids]
        if (v < 0).any():
            raise NegativePotential(f"min potential {v.min()} < 0")
        mat = mat + sp.diags(v * h * h)

    mat.sum_duplicates()
    return SparseOperator(grid=grid, mat=mat.tocsr(), interior_ids=ids)


def assemble_mass(grid: Grid, cf: CoefficientField) -> SparseOperator:
    """Lumped mass: diagonal entries b(x_i) h^2 on interior nodes."""
    ids = _interior_ids(grid)
    bvals = cf.b.values[0].reshape(-1)[ids]
    mat = sp.diags(bvals * grid.h * grid.h).tocsr()
    return SparseOperator(grid=grid, mat=mat, interior_ids=ids)
