"""Lowest eigenpairs of K u = lambda M u with M diagonal.

The iterative path is blocked inverse iteration with Rayleigh-Ritz projection
and locking of converged pairs; inner solves go through a sparse LU factor by
default, with a diagonally preconditioned conjugate-gradient fallback for the
matrix-free-minded.  Systems with at most 400 unknowns are solved densely,
and that dense path doubles as the reference oracle for the iterative one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .errors import BadK, DimensionMismatch, NoConvergence
from .grid import Field
from .operator import SparseOperator

DENSE_LIMIT = 400
CLUSTER_RTOL = 1e-6
_MAX_OUTER = 250
# block growth when inverse iteration stalls on a slow spectral tail
_STALL_WINDOW = 5
_STALL_FACTOR = 0.25
_GROW_STEP = 2
_GROW_LIMIT = 9


@dataclass
class EigenBasis:
    """Lowest-k eigenpairs; vectors are M-orthonormal interior columns."""

    lambdas: np.ndarray
    vectors: np.ndarray = field(repr=False)
    residuals: np.ndarray
    lambda_next: float | None
    method: str

    @property
    def k(self) -> int:
        return self.lambdas.size


def eigenfunction_field(op: SparseOperator, basis: EigenBasis) -> Field:
    """Expand packed eigenvectors into a k-component nodal field."""
    nodal = np.stack([op.unpack(basis.vectors[:, j]) for j in range(basis.k)])
    return Field(op.grid, nodal)


def cluster_ranges(lambdas: np.ndarray, rtol: float = CLUSTER_RTOL) -> list[tuple[int, int]]:
    """Group ascending eigenvalues into clusters [start, end) by relative gap."""
    lam = np.asarray(lambdas, dtype=float)
    ranges: list[tuple[int, int]] = []
    start = 0
    for i in range(1, lam.size):
        if lam[i] - lam[i - 1] > rtol * max(abs(lam[i]), abs(lam[i - 1])):
            ranges.append((start, i))
            start = i
    ranges.append((start, lam.size))
    return ranges


def _fix_signs(vectors: np.ndarray, m_diag: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: integral of M u_1 nonnegative, then
    the largest-magnitude entry of each remaining column positive."""
    v = vectors.copy()
    if v.shape[1] >= 1 and float(np.sum(m_diag * v[:, 0])) < 0:
        v[:, 0] = -v[:, 0]
    for j in range(1, v.shape[1]):
        idx = int(np.argmax(np.abs(v[:, j])))
        if v[idx, j] < 0:
            v[:, j] = -v[:, j]
    return v


def _m_orthonormalize(y: np.ndarray, m_diag: np.ndarray) -> np.ndarray:
    """Whiten columns in the M inner product via a small symmetric eigensolve."""
    g = y.T @ (m_diag[:, None] * y)
    w, q = la.eigh(g)
    keep = w > w.max() * 1e-13
    return y @ (q[:, keep] / np.sqrt(w[keep]))


def _pcg(mat, b, x0, diag, rtol, maxit):
    """Jacobi-preconditioned CG; returns best iterate, no convergence guarantee."""
    x = x0.copy()
    r = b - mat @ x
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    bnorm = float(np.linalg.norm(b)) or 1.0
    for _ in range(maxit):
        if np.linalg.norm(r) <= rtol * bnorm:
            break
        ap = mat @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def _solve_dense(K: SparseOperator, M: SparseOperator, k: int):
    d = M.diagonal()
    s = 1.0 / np.sqrt(d)
    a = K.mat.toarray() * s[:, None] * s[None, :]
    a = 0.5 * (a + a.T)
    w, q = la.eigh(a)
    vectors = q[:, :k] * s[:, None]
    lam_next = float(w[k]) if k < w.size else None
    return w[:k].copy(), vectors, lam_next


def solve_lowest(K: SparseOperator, M: SparseOperator, k: int, tol: float = 1e-9,
                 seed: int = 0, x0: np.ndarray | None = None,
                 method: str = "auto", inner: str = "direct") -> EigenBasis:
    """Lowest k eigenpairs of (K, M), ascending, M-orthonormal basis.

    tol is the relative residual target ||K u - lambda M u|| <= tol lambda
    (vectors are returned with unit M-norm).  Degenerate clusters converge as
    a subspace; min(k+1, block) Ritz values are converged so callers can
    inspect the gap above index k via lambda_next.
    """
    n = K.n
    if M.n != n:
        raise DimensionMismatch(f"K is {n}x{n} but M is {M.n}x{M.n}")
    if not isinstance(k, (int, np.integer)) or k < 1 or 4 * k > n:
        raise BadK(f"need 1 <= k <= n/4, got k={k}, n={n}")
    if method not in ("auto", "dense", "iterative"):
        raise BadK(f"unknown method {method!r}")

    m_diag = M.diagonal()
    use_dense = method == "dense" or (method == "auto" and n <= DENSE_LIMIT)
    if use_dense:
        lam, vecs, lam_next = _solve_dense(K, M, k)
        vecs = _fix_signs(vecs, m_diag)
        res = _residual_norms(K, M, lam, vecs)
        return EigenBasis(lam, vecs, res, lam_next, "dense")

    block = min(n, k + 3)
    kconv = min(k + 1, block)
    rng = np.random.default_rng(seed)
    if x0 is not None:
        x = np.array(x0, dtype=float)
        if x.ndim != 2 or x.shape[0] != n:
            raise DimensionMismatch(f"x0 must be (n, m), got {x.shape}")
        if x.shape[1] < block:
            x = np.hstack([x, rng.standard_normal((n, block - x.shape[1]))])
        x = x[:, :block]
    else:
        x = rng.standard_normal((n, block))
    x = _m_orthonormalize(x, m_diag)

    if inner == "direct":
        lu = spla.splu(K.mat.tocsc())
        solve = lu.solve
    elif inner == "cg":
        kdiag = K.diagonal()

        def solve(b, _mat=K.mat, _d=kdiag):
            return _pcg(_mat, b, np.zeros_like(b), _d, rtol=1e-10, maxit=8 * int(np.sqrt(K.n)) + 200)
    else:
        raise BadK(f"unknown inner solver {inner!r}")

    lam = np.zeros(x.shape[1])
    n_locked = 0
    block_cap = min(n, k + _GROW_LIMIT)
    res_hist: list[float] = []
    last_grow = 0
    for it in range(_MAX_OUTER):
        y = x.copy()
        for j in range(n_locked, x.shape[1]):
            y[:, j] = solve(m_diag * x[:, j])
        y = _m_orthonormalize(y, m_diag)
        ah = y.T @ (K.mat @ y)
        ah = 0.5 * (ah + ah.T)
        w, q = la.eigh(ah)
        x = y @ q
        lam = w
        res = _residual_norms(K, M, lam[:kconv], x[:, :kconv])
        ok = res <= tol * np.abs(lam[:kconv])
        n_locked = int(np.argmin(ok)) if not ok.all() else kconv
        if ok.all():
            vecs = _fix_signs(x[:, :k], m_diag)
            lam_next = float(lam[k]) if k < lam.size else None
            return EigenBasis(lam[:k].copy(), vecs, _residual_norms(K, M, lam[:k], vecs),
                              lam_next, "iterative")
        # The Ritz residual of pair j contracts like lam_j / lam_{block+1}
        # per sweep, so spectra that stay dense past the block edge -- or a
        # degenerate cluster cut by it -- pin that ratio near 1 and stall
        # the solve.  When residuals stop contracting, widen the block to
        # push lam_{block+1} further out.
        res_hist.append(float(res.max()))
        stalled = (it - last_grow > _STALL_WINDOW
                   and res_hist[-1] > _STALL_FACTOR * res_hist[-1 - _STALL_WINDOW])
        if stalled and x.shape[1] < block_cap:
            extra = rng.standard_normal((n, min(_GROW_STEP, block_cap - x.shape[1])))
            x = _m_orthonormalize(np.hstack([x, extra]), m_diag)
            n_locked = 0  # whitening remixes columns; locks no longer aligned
            last_grow = it
    raise NoConvergence(
        f"eigensolver: {_MAX_OUTER} outer iterations without reaching tol={tol}"
    )


def _residual_norms(K: SparseOperator, M: SparseOperator, lam, vecs) -> np.ndarray:
    r = K.mat @ vecs - M.mat @ vecs * np.asarray(lam)[None, :]
    return np.linalg.norm(r, axis=0)


def residual_check(K: SparseOperator, M: SparseOperator, basis: EigenBasis) -> np.ndarray:
    """Relative residuals ||K u - lambda M u|| / (lambda ||u||_M), from scratch."""
    vecs = basis.vectors
    lam = basis.lambdas
    m_diag = M.diagonal()
    mnorm = np.sqrt(np.einsum("ij,i,ij->j", vecs, m_diag, vecs))
    raw = _residual_norms(K, M, lam, vecs)
    return raw / (np.abs(lam) * mnorm)
