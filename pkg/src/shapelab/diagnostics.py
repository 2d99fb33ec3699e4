"""Free-boundary diagnostics in frozen-coefficient charts.

All local quantities are measured through the affine chart F(xi) = x0 +
sqrt(A(x0)) xi, which turns the variable-coefficient problem into a
near-Laplacian one around x0: gradients transform with sqrt(A(x0)), so the
frozen squared gradient equals grad u . A(x0) grad u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.ndimage as ndi
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coeffs import CoefficientField, spd_sqrt
from .errors import (BadParams, DegenerateField, EmptyShape, OutOfChart,
                     OutOfDomain, QuadTooCoarse, TooFewSamples)
from .freeboundary import BoundaryPolyline, contour_length
from .grid import Field, bilinear_sample, gradient_field
from .operator import assemble_mass, assemble_stiffness

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


# --------------------------------------------------------------------------
# frozen charts


@dataclass(frozen=True)
class FrozenChart:
    """Affine chart x = x0 + sqrt(A(x0)) xi, valid for |xi| <= r_valid."""

    x0: tuple[float, float]
    sqrt_a: np.ndarray
    lam_a: float
    r_valid: float


def make_chart(cf: CoefficientField, x0) -> FrozenChart:
    x0 = (float(x0[0]), float(x0[1]))
    dist = float(cf.grid.boundary_distance(np.asarray(x0)))
    if dist <= 0:
        raise OutOfDomain(f"chart center {x0} not strictly inside the box")
    s = spd_sqrt(cf.matrix_at(np.asarray(x0)))
    return FrozenChart(x0=x0, sqrt_a=s, lam_a=cf.lambdaA, r_valid=dist / cf.lambdaA)


def chart_points(chart: FrozenChart, xi: np.ndarray, slack: float = 1e-12) -> np.ndarray:
    """Map chart coordinates to box coordinates, checking the validity radius."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    rad = np.linalg.norm(xi, axis=1)
    if rad.max(initial=0.0) > chart.r_valid * (1.0 + slack):
        raise OutOfChart(
            f"|xi| = {rad.max():.4g} exceeds r_valid = {chart.r_valid:.4g}"
        )
    return np.asarray(chart.x0) + xi @ chart.sqrt_a


def frozen_sample(u: Field, chart: FrozenChart, xi) -> np.ndarray:
    """Values of the frozen function U(F(xi)); shape like bilinear_sample."""
    xi_arr = np.asarray(xi, dtype=float)
    single = xi_arr.ndim == 1
    pts = chart_points(chart, xi_arr)
    out = bilinear_sample(u, pts)
    return out[0] if single else out


def frozen_gradient(u: Field, chart: FrozenChart, xi,
                    grad: Field | None = None) -> np.ndarray:
    """Chart gradient sqrt(A(x0)) grad U evaluated at F(xi), per component.

    The nodal gradient is central differences on the original grid; pass a
    precomputed gradient field to amortize it across calls.
    """
    if grad is None:
        grad = gradient_field(u)
    xi_arr = np.asarray(xi, dtype=float)
    single = xi_arr.ndim == 1
    pts = chart_points(chart, xi_arr)
    g = bilinear_sample(grad, pts).reshape(pts.shape[0], -1, 2)
    out = g @ chart.sqrt_a  # sqrt(A)^T grad, and sqrt(A) is symmetric
    return out[0] if single else out


# --------------------------------------------------------------------------
# Weiss energy


def weiss(u: Field, chi: Field, chart: FrozenChart, r: float, lam_penalty: float,
          quad: tuple[int, int] = (32, 128), grad: Field | None = None) -> float:
    """Weiss boundary-adjusted energy of the frozen pair at scale r.

    W(r) = r^-2 [ int_{B_r} |grad U_x0|^2 + Lambda |{chi o F > 1/2} cap B_r| ]
           - r^-3 int_{boundary B_r} |U_x0|^2.

    Volume terms use midpoint polar quadrature, the boundary term a periodic
    trapezoid rule in the angle.
    """
    nr, nth = int(quad[0]), int(quad[1])
    if nr < 16 or nth < 64:
        raise QuadTooCoarse(f"need quad >= (16, 64), got {(nr, nth)}")
    if not (r > 0 and math.isfinite(r)):
        raise BadParams(f"radius must be positive, got {r}")
    if grad is None:
        grad = gradient_field(u)

    dr = r / nr
    dth = 2.0 * math.pi / nth
    radii = (np.arange(nr) + 0.5) * dr
    ang = (np.arange(nth) + 0.5) * dth
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    xi = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    wgt = np.repeat(radii * dr * dth, nth)

    pts = chart_points(chart, xi)
    gz = bilinear_sample(grad, pts).reshape(len(xi), -1, 2) @ chart.sqrt_a
    grad_sq = np.einsum("ncd,ncd->n", gz, gz)
    ind = bilinear_sample(chi, pts)[:, 0] > 0.5
    j_r = float(np.sum(wgt * (grad_sq + lam_penalty * ind)))

    angb = np.arange(nth) * dth
    xib = r * np.stack([np.cos(angb), np.sin(angb)], axis=1)
    ub = bilinear_sample(u, chart_points(chart, xib))
    boundary = float(np.sum(np.sum(ub * ub, axis=1)) * r * dth)

    return j_r / r**2 - boundary / r**3


def fit_monotonicity_constant(radii, w_values, delta_a: float) -> tuple[float, float]:
    """(max_backward_drop, fitted_C) for the corrected Weiss monotonicity.

    fitted_C is the smallest C >= 0 making r -> W(r) + C r^deltaA
    non-decreasing across the sampled radii.
    """
    r = np.asarray(radii, dtype=float)
    w = np.asarray(w_values, dtype=float)
    if r.size != w.size or r.size < 1 or np.any(np.diff(r) <= 0):
        raise BadParams("need ascending radii matching the W samples")
    if r.size == 1:
        return 0.0, 0.0
    drops = np.maximum(w[:-1] - w[1:], 0.0)
    denom = r[1:] ** delta_a - r[:-1] ** delta_a
    return float(drops.max()), float(np.max(drops / denom, initial=0.0))


def weiss_monotonicity_audit(u: Field, chi: Field, chart: FrozenChart, radii,
                             lam_penalty: float, delta_a: float,
                             quad: tuple[int, int] = (32, 128),
                             grad: Field | None = None) -> dict:
    """Sample W over ascending radii and quantify backward drops."""
    if grad is None:
        grad = gradient_field(u)
    r = np.asarray(radii, dtype=float)
    w = np.array([weiss(u, chi, chart, float(ri), lam_penalty, quad, grad)
                  for ri in r])
    max_drop, fitted_c = fit_monotonicity_constant(r, w, delta_a)
    return {
        "radii": r.tolist(),
        "w_values": w.tolist(),
        "max_backward_drop": max_drop,
        "fitted_C": fitted_c,
        "deltaA": float(delta_a),
    }


# --------------------------------------------------------------------------
# density and classification


@dataclass
class DensityEstimate:
    theta0: float
    radii: np.ndarray
    values: np.ndarray
    slope: float


def default_probe_radii(h: float, r_valid: float, count: int = 8) -> np.ndarray:
    """Probe window [2h, min(r_valid/4, 16h)] used by the density fit."""
    lo = 2.0 * h
    hi = min(0.25 * r_valid, 16.0 * h)
    if hi <= lo:
        raise OutOfChart(f"probe window empty: r_valid={r_valid:.4g}, h={h:.4g}")
    return np.linspace(lo, hi, count)


def density_theta(chi: Field, chart: FrozenChart, radii=None,
                  quad: tuple[int, int] = (32, 128)) -> DensityEstimate:
    """Volume fraction of the positivity set in chart balls, extrapolated to 0.

    theta(r) is measured by midpoint polar quadrature of the indicator; the
    report value is the intercept of a linear least-squares fit in r.
    """
    nr, nth = int(quad[0]), int(quad[1])
    if nr < 16 or nth < 64:
        raise QuadTooCoarse(f"need quad >= (16, 64), got {(nr, nth)}")
    if radii is None:
        radii = default_probe_radii(chi.grid.h, chart.r_valid)
    r_arr = np.asarray(radii, dtype=float)

    dth = 2.0 * math.pi / nth
    ang = (np.arange(nth) + 0.5) * dth
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    vals = np.empty(r_arr.size)
    for idx, r in enumerate(r_arr):
        dr = r / nr
        rr = (np.arange(nr) + 0.5) * dr
        xi = (rr[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
        wgt = np.repeat(rr * dr * dth, nth)
        ind = bilinear_sample(chi, chart_points(chart, xi))[:, 0] > 0.5
        vals[idx] = float(np.sum(wgt * ind) / (math.pi * r * r))

    design = np.stack([np.ones_like(r_arr), r_arr], axis=1)
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    return DensityEstimate(theta0=float(coef[0]), radii=r_arr, values=vals,
                           slope=float(coef[1]))


def classify_point(theta0: float, delta_tol: float = 0.1) -> str:
    """Regular when the density sits within delta_tol of 1/2, else Singular."""
    if not (0.0 < delta_tol < 0.25):
        raise BadParams(f"delta_tol must lie in (0, 0.25), got {delta_tol}")
    return "Regular" if abs(theta0 - 0.5) <= delta_tol else "Singular"


# --------------------------------------------------------------------------
# blow-ups


_BAND_GAMMA = 1.5   # half-width of the masked strip, in grid cells over r
_BAND_CAP = 0.75    # never let the strip swallow the whole annulus


def blowup_audit(u: Field, chart: FrozenChart, radii, ref_resolution: int = 65) -> dict:
    """Homogeneity and component-alignment defects of rescalings.

    For each radius r (descending, min 2h) the rescaled field
    B_r(xi) = U_x0(r xi)/r is tabulated on a fixed polar reference grid over
    the annulus {1/4 <= |xi| <= 1}; the homogeneity defect integrates
    |xi . grad B - B|^2 against |B|^2 there, with the radial derivative taken
    by central differences along rays (a homogeneous cone is exactly linear
    on every ray through its vertex, so ray-wise differencing never crosses
    the kink).  A strip of half-width min(1.5 h/r, 0.75) about the estimated
    kink line is excluded from both integrals: cells straddling the zero set
    cannot represent the crease of the cone, and their O(h)-wide bilinear
    error otherwise drowns the genuine defect at r = O(h); the strip vanishes
    as h -> 0, so the estimator is consistent with the full-annulus integral.
    The kink axis is the angular argmax of the field magnitude at the largest
    radius.  The alignment defect is 1 - sigma_1^2 / sum sigma_j^2 of the
    component-by-sample matrix over the kept samples (zero for a single
    component).
    """
    r_arr = np.asarray(radii, dtype=float)
    h = u.grid.h
    if r_arr.size < 1 or np.any(np.diff(r_arr) >= 0):
        raise BadParams("radii must be strictly descending")
    if r_arr.min() < 2.0 * h * (1.0 - 1e-12):
        raise BadParams(f"min radius {r_arr.min():.4g} below 2h = {2 * h:.4g}")
    m = int(ref_resolution)
    if m < 17:
        raise BadParams(f"reference resolution too small: {m}")

    n_rho = m - 1
    n_theta = 4 * n_rho
    drho = 0.75 / n_rho
    rho = 0.25 + (np.arange(n_rho) + 0.5) * drho
    rho_ext = np.concatenate([[rho[0] - drho], rho, [rho[-1] + drho]])
    if r_arr.max() * rho_ext[-1] > chart.r_valid * (1.0 + 1e-12):
        raise OutOfChart(
            f"radius {r_arr.max():.4g} with lattice margin exceeds r_valid "
            f"{chart.r_valid:.4g}"
        )
    ang = (np.arange(n_theta) + 0.5) * (2.0 * math.pi / n_theta)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    xi = rho_ext[:, None, None] * dirs[None, :, :]
    w = rho[:, None]  # area weight rho drho dtheta, constants cancel

    out_h, out_align = [], []
    axis = None
    for r in r_arr:
        vals = frozen_sample(u, chart, (r * xi).reshape(-1, 2)) / r
        b = vals.reshape(rho_ext.size, n_theta, -1)
        core = b[1:-1]
        if axis is None:
            mag = np.sqrt((core**2).sum(axis=2))
            axis = dirs[int(np.argmax((w * mag).sum(axis=0)))]
        db = (b[2:] - b[:-2]) / (2.0 * drho)
        defect = rho[:, None, None] * db - core
        keep = np.abs(xi[1:-1] @ axis) >= min(_BAND_GAMMA * h / r, _BAND_CAP)
        den = float(np.sum(np.where(keep, w * (core**2).sum(axis=2), 0.0)))
        if math.sqrt(max(den, 0.0)) < 1e-12:
            raise DegenerateField(f"rescaled field vanishes at r = {r}")
        num = float(np.sum(np.where(keep, w * (defect**2).sum(axis=2), 0.0)))
        out_h.append(num / den)
        if b.shape[2] == 1:
            out_align.append(0.0)
        else:
            samples = core[keep].T
            svals = la.svdvals(samples)
            out_align.append(float(1.0 - svals[0] ** 2 / np.sum(svals**2)))
    return {"radii": r_arr.tolist(), "H": out_h, "alignment": out_align}


# --------------------------------------------------------------------------
# viscosity optimality


def _sqrt_spd_batch(mats: np.ndarray) -> np.ndarray:
    det = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    tr = mats[:, 0, 0] + mats[:, 1, 1]
    if np.any(det <= 0) or np.any(tr <= 0):
        raise BadParams("coefficient matrix not SPD at a probe point")
    s = np.sqrt(det)
    return (mats + s[:, None, None] * np.eye(2)[None]) / np.sqrt(tr + 2 * s)[:, None, None]


def optimality_residual(u: Field, boundary: BoundaryPolyline, cf: CoefficientField,
                        lam_penalty: float, d_in: float | None = None,
                        grad: Field | None = None) -> dict:
    """Mismatch of |sqrt(A) grad u_1| against g sqrt(Lambda) near the boundary.

    Probes sit a distance d_in inside each boundary point along the inward
    normal; g = (1 + sum_{i>=2} (u_i/u_1)^2)^(-1/2).  Points where u_1 is
    numerically zero are skipped and counted, not fatal.  The residual is
    invariant under U -> cU with Lambda -> c^2 Lambda.
    """
    h = u.grid.h
    d = 2.0 * h if d_in is None else float(d_in)
    if not h * (1 - 1e-12) <= d <= 4.0 * h * (1 + 1e-12):
        raise BadParams(f"d_in must lie in [h, 4h], got {d}")
    if boundary.points.shape[0] == 0:
        raise BadParams("empty boundary polyline")
    if grad is None:
        grad = gradient_field(u)

    keep = boundary.inside_d
    pts = boundary.points[keep]
    nrm = boundary.normals[keep]
    if pts.shape[0] == 0:
        raise TooFewSamples("no boundary points away from the box edge")
    probes = pts - d * nrm

    uvals = bilinear_sample(u, probes)
    u1 = uvals[:, 0]
    scale = float(np.abs(u.values[0]).max())
    ok = np.abs(u1) > 1e-12 * max(scale, 1e-300)
    n_skipped = int((~ok).sum())
    if not ok.any():
        raise TooFewSamples("u_1 vanishes at every probe point")

    quot_sq = np.zeros(ok.sum())
    for i in range(1, u.ncomp):
        quot_sq += (uvals[ok, i] / u1[ok]) ** 2
    g = 1.0 / np.sqrt(1.0 + quot_sq)

    gvals = bilinear_sample(grad, probes[ok]).reshape(-1, u.ncomp, 2)
    grad_u1 = gvals[:, 0, :]
    sq = _sqrt_spd_batch(cf.matrix_at(pts[ok]))
    frozen = np.einsum("nij,nj->ni", sq, grad_u1)
    speed = np.linalg.norm(frozen, axis=1)
    root = math.sqrt(lam_penalty)
    rho = np.abs(speed - g * root) / root

    return {
        "points": pts[ok],
        "rho": rho,
        "g": g,
        "n_skipped": n_skipped,
        "median_rho": float(np.median(rho)),
        "q25_rho": float(np.quantile(rho, 0.25)),
        "q75_rho": float(np.quantile(rho, 0.75)),
        "max_rho": float(rho.max()),
    }


# --------------------------------------------------------------------------
# non-degeneracy


def nondegeneracy_audit(u: Field, chi: Field, dist: Field,
                        boundary: BoundaryPolyline, cf: CoefficientField) -> dict:
    """Growth, domination, and density-band constants of the converged state.

    c_lower: min of u_1/dist over {chi = 1, 2h <= dist <= 8h}.
    C1: per component carrying u_1 mass, max of |U|/u_1.
    eta: min over boundary points and r in {4h, 8h, 16h} of
         sup_{B_{lambdaA r}} |U| / r (balls kept inside the box).
    density band: positivity fraction of node balls of radius 8h.
    """
    grid = u.grid
    h = grid.h
    chimask = chi.values[0] > 0.5
    if not chimask.any():
        raise EmptyShape("positivity indicator is empty")
    u1 = u.values[0]
    umag = np.sqrt((u.values**2).sum(axis=0))
    dvals = dist.values[0]

    band = chimask & (dvals >= 2 * h) & (dvals <= 8 * h)
    c_lower = float((u1[band] / dvals[band]).min()) if band.any() else math.nan

    labels, count = ndi.label(chimask, structure=_CROSS)
    u1_scale = max(float(np.abs(u1).max()), 1e-300)
    total_mass = float((u1**2).sum()) or 1.0
    c1_per = []
    for c in range(1, count + 1):
        mask = labels == c
        share = float((u1[mask] ** 2).sum()) / total_mass
        if share < 1e-6:
            continue
        pos = mask & (u1 > 1e-12 * u1_scale)
        if pos.any():
            c1_per.append(float((umag[pos] / u1[pos]).max()))
    c1 = max(c1_per) if c1_per else math.nan

    coords = grid.node_coords().reshape(-1, 2)
    umag_flat = umag.reshape(-1)
    chi_flat = chimask.reshape(-1)
    keep = boundary.inside_d
    pts = boundary.points[keep]
    eta = math.inf
    dens = []
    radii = (4 * h, 8 * h, 16 * h)
    for p in pts:
        d2 = ((coords - p) ** 2).sum(axis=1)
        wall = grid.boundary_distance(p)
        for r in radii:
            if wall <= cf.lambdaA * r + h:
                continue
            near = d2 <= (cf.lambdaA * r) ** 2
            if near.any():
                eta = min(eta, float(umag_flat[near].max()) / r)
        if wall > 8 * h + h:
            ball = d2 <= (8 * h) ** 2
            n_ball = int(ball.sum())
            if n_ball:
                dens.append(float(chi_flat[ball].sum()) / n_ball)

    return {
        "c_lower": c_lower,
        "C1": c1,
        "C1_per_component": c1_per,
        "eta": eta if math.isfinite(eta) else math.nan,
        "density_fractions": dens,
        "density_min": min(dens) if dens else math.nan,
        "density_max": max(dens) if dens else math.nan,
        "n_points": int(pts.shape[0]),
    }


# --------------------------------------------------------------------------
# perimeter / co-area


def perimeter_estimate(u: Field, t: float, window=None, n_levels: int = 16) -> dict:
    """Average perimeter of superlevel sets {|u| > s} for s in (0, t].

    per0 reports the smallest sampled level (the 0+ proxy), p_avg the mean
    over n_levels bin midpoints of (0, t] (a midpoint quadrature of the
    co-area average, which keeps indicator-valued fields honest: the level
    s = t itself is never sampled, where {|u| > t} would be empty); lengths
    come from marching squares restricted to the window.
    """
    if not (t > 0 and math.isfinite(t)):
        raise BadParams(f"level range t must be positive, got {t}")
    mag = Field(u.grid, np.sqrt((u.values**2).sum(axis=0)))
    levels = t * (np.arange(n_levels) + 0.5) / n_levels
    pers = np.array([contour_length(mag, float(s), window) for s in levels])
    return {
        "per0": float(pers[0]),
        "p_avg": float(pers.mean()),
        "levels": levels.tolist(),
        "per_values": pers.tolist(),
    }


# --------------------------------------------------------------------------
# quasi-minimality


def _rr_values(x_cols: np.ndarray, k_mat, m_diag: np.ndarray) -> np.ndarray:
    gk = x_cols.T @ (k_mat @ x_cols)
    gm = x_cols.T @ (m_diag[:, None] * x_cols)
    gm = 0.5 * (gm + gm.T)
    w = la.eigvalsh(gm)
    if w.min() <= 1e-12 * max(w.max(), 1e-300):
        raise DegenerateField("competitor system numerically rank deficient")
    return la.eigh(0.5 * (gk + gk.T), gm, eigvals_only=True)


def quasimin_audit(state, trials: int = 30, seed: int = 0) -> dict:
    """Objective margins of perturbation competitors against a converged state.

    Families cycle T (truncation in a ball), H (capped discrete A-harmonic
    replacement of u_1 in a ball), F (re-solved eigenvalues after flipping up
    to 5 interior indicator nodes).  T/H eigenvalue surrogates are
    Rayleigh-Ritz values of the competitor system; margins are relative to
    the matching evaluation of the unperturbed state, so an identity
    competitor scores exactly zero.
    """
    from .eigensolve import eigenfunction_field, solve_lowest
    from .optimizer import penalized_stiffness

    if trials < 10:
        raise BadParams(f"need at least 10 trials, got {trials}")
    grid = state.grid
    cf = state.cf
    lam_penalty = state.lam_penalty
    eps = state.eps
    solver_tol = state.solver_tol
    h = grid.h
    k = state.k
    base = assemble_stiffness(grid, cf)
    m_op = assemble_mass(grid, cf)
    m_diag = m_op.diagonal()
    u = eigenfunction_field(base, state.basis)
    chimask = state.phi.values[0] > 0.5
    if not chimask.any():
        raise EmptyShape("positivity indicator is empty")

    v0 = u.values * chimask[None]
    x0_cols = np.stack([base.pack(v0[c]) for c in range(k)], axis=1)

    def posvol(nodal: np.ndarray) -> float:
        return float(h * h * np.count_nonzero((np.abs(nodal) > 0).any(axis=0)))

    def surrogate_j(nodal: np.ndarray) -> float:
        cols = np.stack([base.pack(nodal[c]) for c in range(k)], axis=1)
        vals = _rr_values(cols, base.mat, m_diag)
        return float(vals.sum()) + lam_penalty * posvol(nodal)

    j_base_th = surrogate_j(v0)

    def resolved_j(mask: np.ndarray) -> float:
        phi = Field(grid, mask.astype(float))
        k_op = penalized_stiffness(grid, cf, phi, eps, base=base)
        basis = solve_lowest(k_op, m_op, k, tol=solver_tol, seed=seed)
        return float(basis.lambdas.sum()) + lam_penalty * h * h * float(mask.sum())

    j_base_f = resolved_j(chimask)

    rng = np.random.default_rng(seed)
    coords = grid.node_coords()
    lo = np.asarray(grid.origin)
    span = np.asarray(grid.extent)
    umax = float(np.sqrt((u.values**2).sum(axis=0)).max())
    interior = grid.interior_mask()
    int_ids = np.flatnonzero(interior.reshape(-1))

    margins, families = [], []
    for trial in range(int(trials)):
        fam = "THF"[trial % 3]
        if fam in ("T", "H"):
            rho = rng.uniform(4 * h, 0.25 * span.min())
            center = lo + rho + rng.random(2) * (span - 2 * rho)
            rad = np.hypot(coords[..., 0] - center[0], coords[..., 1] - center[1])
            if fam == "T":
                tval = rng.uniform(1e-3, 0.1) * umax
                comp = int(rng.integers(k))
                eta = np.clip(2.0 - 2.0 * rad / rho, 0.0, 1.0)
                v = v0[comp]
                vt = (eta * np.maximum(v - tval, 0.0)
                      - eta * np.maximum(-v - tval, 0.0)
                      + (1.0 - eta) * v)
                nodal = v0.copy()
                nodal[comp] = vt
            else:
                ball = (rad < rho) & interior
                ball_ids = np.flatnonzero(ball.reshape(-1))
                nodal = v0.copy()
                if ball_ids.size:
                    remap = -np.ones(grid.n_nodes, dtype=int)
                    remap[base.interior_ids] = np.arange(base.n)
                    rows = remap[ball_ids]
                    sub = base.mat[rows][:, rows].tocsc()
                    flat = v0[0].reshape(-1).copy()
                    rhs = -(base.mat[rows] @ base.pack(v0[0])) + sub @ flat[ball_ids]
                    harm = spla.spsolve(sub, rhs)
                    capped = np.minimum(flat[ball_ids], harm)
                    flat[ball_ids] = capped
                    nodal[0] = flat.reshape(grid.nodes_shape)
            margins.append((surrogate_j(nodal) - j_base_th) / j_base_th)
        else:
            nflips = int(rng.integers(1, 6))
            pick = rng.choice(int_ids, size=nflips, replace=False)
            mask = chimask.copy().reshape(-1)
            mask[pick] = ~mask[pick]
            margins.append((resolved_j(mask.reshape(grid.nodes_shape)) - j_base_f)
                           / j_base_f)
        families.append(fam)

    margins = np.asarray(margins)
    per_family = {f: float(margins[[i for i, g in enumerate(families) if g == f]].min())
                  for f in set(families)}
    return {
        "margins": margins.tolist(),
        "families": families,
        "min_margin": float(margins.min()) if margins.size else 0.0,
        "per_family_min": per_family,
        "n_trials": int(trials),
        "base_surrogate": j_base_th,
        "base_resolved": j_base_f,
    }


# --------------------------------------------------------------------------
# boundary Harnack


def harnack_quotient_audit(u: Field, chi: Field, point, r: float,
                           seed: int = 0, max_pairs: int = 2000,
                           min_samples: int = 30) -> dict:
    """Hoelder fit of the eigenfunction quotients u_i/u_1 near a point.

    Log-log least squares of |q(x) - q(y)| against |x - y| over random node
    pairs in {chi = 1} cap B_r(point).  A numerically constant quotient
    reports (alpha, seminorm) = (1.0, 0.0).
    """
    if u.ncomp < 2:
        raise BadParams("quotient audit needs at least two components")
    grid = u.grid
    coords = grid.node_coords()
    rad = np.hypot(coords[..., 0] - point[0], coords[..., 1] - point[1])
    u1 = u.values[0]
    scale = max(float(np.abs(u1).max()), 1e-300)
    sel = (chi.values[0] > 0.5) & (rad <= r) & (u1 > 1e-12 * scale)
    n = int(sel.sum())
    if n < min_samples:
        raise TooFewSamples(f"only {n} admissible nodes, need {min_samples}")

    xy = coords[sel]
    quot = np.stack([u.values[i][sel] / u1[sel] for i in range(1, u.ncomp)], axis=1)

    rng = np.random.default_rng(seed)
    ia = rng.integers(0, n, size=max_pairs)
    ib = rng.integers(0, n, size=max_pairs)
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    dists = np.linalg.norm(xy[ia] - xy[ib], axis=1)
    diffs = np.linalg.norm(quot[ia] - quot[ib], axis=1)
    qscale = float(np.abs(quot).max()) + 1.0
    good = (dists > 1e-14) & (diffs > 1e-13 * qscale)

    gmed = np.median(quot, axis=0)
    g = float(1.0 / math.sqrt(1.0 + float((gmed**2).sum())))
    if good.sum() < 10:
        return {"alpha": 1.0, "seminorm": 0.0, "g": g, "n_nodes": n,
                "n_pairs": int(good.sum()), "constant_quotient": True}

    design = np.stack([np.ones(int(good.sum())), np.log(dists[good])], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.log(diffs[good]), rcond=None)
    return {
        "alpha": float(coef[1]),
        "seminorm": float(math.exp(coef[0])),
        "g": g,
        "n_nodes": n,
        "n_pairs": int(good.sum()),
        "constant_quotient": False,
    }


# --------------------------------------------------------------------------
# probe refinement


def refine_boundary_points(u1: Field, boundary: BoundaryPolyline,
                           depths_h=(1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0)) -> BoundaryPolyline:
    """Snap boundary points to the apparent vertex of the u_1 growth cone.

    The first eigenfunction grows linearly with the distance to the free
    boundary; the marching-squares level point can sit up to a cell away from
    the effective zero of that linear profile, which contaminates small-scale
    diagnostics.  Sampling u_1 along the inward normal and extrapolating a
    quadratic fit to u_1 = 0 relocates each point; shifts are clamped to one
    cell.
    """
    grid = u1.grid
    h = grid.h
    depths = np.asarray(depths_h, dtype=float) * h
    pts = boundary.points.copy()
    nrm = boundary.normals
    for idx in range(pts.shape[0]):
        if not boundary.inside_d[idx]:
            continue
        probes = pts[idx][None, :] - depths[:, None] * nrm[idx][None, :]
        inb = grid.boundary_distance(probes) > 0
        if inb.sum() < 3:
            continue
        vals = bilinear_sample(u1, probes[inb])[:, 0]
        dd = depths[inb]
        design = np.stack([np.ones_like(dd), dd, dd * dd], axis=1)
        coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
        c0, slope = coef[0], coef[1]
        if slope <= 1e-12:
            continue
        shift = float(np.clip(-c0 / slope, -h, h))
        pts[idx] = pts[idx] - shift * nrm[idx]
    inside = grid.boundary_distance(pts) > 2.0 * grid.h
    return BoundaryPolyline(points=pts, normals=nrm.copy(), inside_d=inside,
                            segments=boundary.segments)
