"""Closed-form references used to cross-check the numerical pipeline.

Everything here is independent of the assembly/eigensolver code paths: the
Bessel zero comes from bisection on the power series, rectangle spectra from
the separated sine modes, and the penalized-ball optimum from balancing
j01^2 / R^2 against the volume term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParams
from .grid import Field, Grid


def _j0_series(x: float) -> float:
    """Bessel J0 via its power series; fine for the first-zero bracket."""
    term = 1.0
    total = 1.0
    m = 0
    q = 0.25 * x * x
    while abs(term) > 1e-17 * max(1.0, abs(total)):
        m += 1
        term *= -q / (m * m)
        total += term
        if m > 200:
            break
    return total


def bessel_j01(tol: float = 1e-10) -> float:
    """First positive zero of J0 by bisection on [2, 3]."""
    lo, hi = 2.0, 3.0
    flo = _j0_series(lo)
    if not (flo > 0 > _j0_series(hi)):
        raise BadParams("J0 bracket [2,3] failed; series evaluation broken")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _j0_series(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BallOptimum:
    """Optimal ball for lambda_1 + Lambda |Omega| in the plane."""

    radius: float
    objective: float
    lambda1: float
    volume: float


def optimal_ball(lam_penalty: float) -> BallOptimum:
    """Minimize j01^2 / R^2 + Lambda pi R^2 over the radius R."""
    if not (lam_penalty > 0 and math.isfinite(lam_penalty)):
        raise BadParams(f"penalty must be positive and finite, got {lam_penalty}")
    j0 = bessel_j01()
    r = (j0 * j0 / (lam_penalty * math.pi)) ** 0.25
    lam1 = (j0 / r) ** 2
    vol = math.pi * r * r
    return BallOptimum(radius=r, objective=lam1 + lam_penalty * vol,
                       lambda1=lam1, volume=vol)


def rectangle_eigenvalues(lx: float, ly: float, count: int) -> np.ndarray:
    """Smallest Dirichlet eigenvalues of an lx x ly rectangle, ascending.

    Multiplicities are kept: the result is the sorted multiset of
    pi^2 (m^2/lx^2 + n^2/ly^2), m, n >= 1.
    """
    if not (lx > 0 and ly > 0 and count >= 1):
        raise BadParams(f"need positive sides and count >= 1, got {lx}, {ly}, {count}")
    bound = max(8, int(count))
    while True:
        m = np.arange(1, bound + 1)
        vals = (math.pi**2) * (np.add.outer(m**2 / lx**2, m**2 / ly**2)).reshape(-1)
        vals.sort()
        # the list is complete up to the smallest omitted single-direction mode
        cutoff = (math.pi**2) * (bound + 1) ** 2 * min(1 / lx**2, 1 / ly**2)
        if vals.size >= count and vals[count - 1] < cutoff:
            return vals[:count].copy()
        bound *= 2


def halfplane_fixture(grid: Grid, lam_penalty: float, offset: float) -> tuple[Field, Field]:
    """Nodal one-phase half-plane solution and its positivity indicator.

    U(x) = sqrt(Lambda) (x2 - c)^+ and chi = 1 on {x2 > c}; the offset c must
    be strictly inside the box.
    """
    oy = grid.origin[1]
    ly = grid.extent[1]
    if not (oy < offset < oy + ly):
        raise BadParams(f"offset {offset} not strictly inside [{oy}, {oy + ly}]")
    if not (lam_penalty > 0 and math.isfinite(lam_penalty)):
        raise BadParams(f"penalty must be positive and finite, got {lam_penalty}")
    y = grid.node_coords()[..., 1]
    u = math.sqrt(lam_penalty) * np.maximum(y - offset, 0.0)
    chi = (y > offset).astype(float)
    return Field(grid, u), Field(grid, chi)
