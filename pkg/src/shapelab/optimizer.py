"""Relaxed shape optimization of eigenvalue sums with a volume penalty.

The open set is represented by a density phi in [0, 1] on grid nodes; outside
mass is suppressed by the fictitious-domain potential (1/eps)(1 - phi) b.  A
projected gradient descent with backtracking drives

    J(phi) = sum_i lambda_i(phi, eps) + Lambda h^2 sum_j phi_j

while eps is annealed geometrically from about 1/lambda_1(D) down to a wall
scale tied to the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .coeffs import CoefficientField
from .eigensolve import EigenBasis, solve_lowest
from .errors import (BadParams, ClusterSplit, EmptyShape, NoConvergence,
                     NoDescent, StaleBasis)
from .grid import Field, Grid
from .operator import SparseOperator, assemble_mass, assemble_stiffness

CLUSTER_GAP_RTOL = 1e-6
_BACKTRACK_MAX = 40
_DESCENT_SLACK = 1e-12
_PHASE_WINDOW = 5


@dataclass
class OptimizeOptions:
    k: int = 1
    lam_penalty: float = 1.0
    eps0: float | str = "auto"
    eps_min: float | str = "auto"
    eps_factor: float = 0.25
    step0: float | str = "auto"
    tol: float = 1e-5
    max_iters: int = 80
    seed: int = 0
    solver_tol: float = 1e-8


@dataclass
class ShapeState:
    """Density, penalization scale, and the eigenbasis that produced them."""

    phi: Field
    eps: float
    lam_penalty: float
    k: int
    basis: EigenBasis
    cf: CoefficientField
    solver_tol: float
    objective_history: list[tuple[int, float, float]] = dfield(default_factory=list)

    @property
    def grid(self) -> Grid:
        return self.phi.grid


@dataclass
class ComponentMap:
    """4-connected components of a thresholded density."""

    chi: Field
    labels: np.ndarray
    count: int
    eigen_content: np.ndarray | None = None


_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def build_phi0(grid: Grid, spec: dict | None) -> Field:
    """Initial density presets: constant, disk, annulus, two-disks.

    Radial presets ramp linearly from 1 to 0 over a band of two cells around
    the nominal interface, which gives the first descent steps a usable
    direction on both sides.
    """
    spec = dict(spec or {"preset": "constant"})
    preset = spec.pop("preset", "constant")
    xy = grid.node_coords()
    ramp = 2.0 * grid.h

    def disk_density(center, radius):
        r = np.hypot(xy[..., 0] - center[0], xy[..., 1] - center[1])
        return np.clip((radius - r) / ramp + 0.5, 0.0, 1.0)

    if preset == "constant":
        value = float(spec.pop("value", 1.0))
        if spec:
            raise BadParams(f"constant preset: unexpected {sorted(spec)}")
        if not 0.0 <= value <= 1.0:
            raise BadParams(f"constant preset value {value} outside [0, 1]")
        return Field(grid, np.full(grid.nodes_shape, value))
    if preset == "disk":
        try:
            center = tuple(float(v) for v in spec.pop("center"))
            radius = float(spec.pop("radius"))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadParams(f"disk preset needs center and radius: {exc}") from exc
        if spec:
            raise BadParams(f"disk preset: unexpected {sorted(spec)}")
        if radius <= 0:
            raise BadParams("disk radius must be positive")
        return Field(grid, disk_density(center, radius))
    if preset == "annulus":
        try:
            center = tuple(float(v) for v in spec.pop("center"))
            r_in = float(spec.pop("r_inner"))
            r_out = float(spec.pop("r_outer"))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadParams(f"annulus preset needs center, r_inner, r_outer: {exc}") from exc
        if spec:
            raise BadParams(f"annulus preset: unexpected {sorted(spec)}")
        if not 0 < r_in < r_out:
            raise BadParams("annulus needs 0 < r_inner < r_outer")
        r = np.hypot(xy[..., 0] - center[0], xy[..., 1] - center[1])
        outer = np.clip((r_out - r) / ramp + 0.5, 0.0, 1.0)
        inner = np.clip((r - r_in) / ramp + 0.5, 0.0, 1.0)
        return Field(grid, outer * inner)
    if preset == "two-disks":
        try:
            centers = [tuple(float(v) for v in c) for c in spec.pop("centers")]
            radii = [float(r) for r in spec.pop("radii")]
        except (KeyError, TypeError, ValueError) as exc:
            raise BadParams(f"two-disks preset needs centers and radii: {exc}") from exc
        if spec:
            raise BadParams(f"two-disks preset: unexpected {sorted(spec)}")
        if len(centers) != 2 or len(radii) != 2 or min(radii) <= 0:
            raise BadParams("two-disks preset needs two centers and two positive radii")
        d = np.maximum(disk_density(centers[0], radii[0]),
                       disk_density(centers[1], radii[1]))
        return Field(grid, d)
    raise BadParams(f"unknown phi0 preset {preset!r}")


def penalized_stiffness(grid: Grid, cf: CoefficientField, phi: Field, eps: float,
                        base: SparseOperator | None = None) -> SparseOperator:
    """K(phi) = K_stiff + (1/eps)(1 - phi) b lumped on the diagonal."""
    if base is None:
        base = assemble_stiffness(grid, cf)
    v = np.clip(1.0 - phi.values[0], 0.0, None) * cf.b.values[0] / eps
    vint = v.reshape(-1)[base.interior_ids]
    mat = (base.mat + sp.diags(vint * grid.h * grid.h)).tocsr()
    return SparseOperator(grid=grid, mat=mat, interior_ids=base.interior_ids)


def relaxed_volume(phi: Field) -> float:
    return float(phi.grid.h ** 2 * phi.values[0].sum())


def objective(state: ShapeState, check_basis: bool = True) -> float:
    """sum of the k eigenvalues plus Lambda times the relaxed volume.

    Raises StaleBasis when the stored eigenbasis no longer matches the
    current (phi, eps) operator within 10x the solver tolerance.
    """
    if check_basis:
        from .eigensolve import residual_check
        k_op = penalized_stiffness(state.grid, state.cf, state.phi, state.eps)
        m_op = assemble_mass(state.grid, state.cf)
        rel = residual_check(k_op, m_op, state.basis)
        if rel.max() > 10.0 * state.solver_tol:
            raise StaleBasis(
                f"basis residual {rel.max():.3e} exceeds 10 * tol = {10 * state.solver_tol:.3e}"
            )
    return float(state.basis.lambdas.sum()) + state.lam_penalty * relaxed_volume(state.phi)


def _check_cluster_at_k(basis: EigenBasis) -> None:
    if basis.lambda_next is None:
        return
    lam_k = basis.lambdas[-1]
    if basis.lambda_next - lam_k <= CLUSTER_GAP_RTOL * max(abs(lam_k), abs(basis.lambda_next)):
        raise ClusterSplit(
            f"eigenvalues {lam_k} and {basis.lambda_next} are degenerate across index k"
        )


def objective_gradient(state: ShapeState) -> Field:
    """Nodal gradient of the relaxed objective with respect to phi.

    Interior node j: -(1/eps) b(x_j) h^2 sum_i u_i(x_j)^2 + Lambda h^2;
    zero on the box edge.  The eigenvalue part is the trace derivative over
    the first k modes, which stays well defined when clusters sit strictly
    inside k; a cluster straddling k raises ClusterSplit.
    """
    _check_cluster_at_k(state.basis)
    grid = state.grid
    h2 = grid.h ** 2
    # embed sum of squared eigenfunctions onto the nodal lattice
    m_op = assemble_mass(grid, state.cf)
    usq = np.zeros(grid.n_nodes)
    usq[m_op.interior_ids] = (state.basis.vectors ** 2).sum(axis=1)
    usq = usq.reshape(grid.nodes_shape)
    g = -(state.cf.b.values[0] / state.eps) * h2 * usq + state.lam_penalty * h2
    mask = grid.interior_mask()
    g[~mask] = 0.0
    return Field(grid, g)


class _DensityFilter:
    """Hat-kernel smoothing between the descent control and the density.

    Descent acts on a control field rho; the physical density is the
    normalized convolution phi = W rho / W 1.  Without this, any fully
    snapped 0/1 interface is a strict fixed point of pointwise projected
    descent over a wide band of radii: the outermost inside node keeps
    u^2 > eps*Lambda (pinned at 1) while the first outside node has u already
    decayed below the waterline (pinned at 0), so neither growth nor erosion
    can ever move the boundary again.  The filter keeps a fractional ramp at
    the interface, whose nodes ride the u^2 = eps*Lambda balance and track
    the optimum.  The chain-rule gradient W(g / W1) spreads the interior pull
    across the rim, which removes the pinning without touching the public
    gradient contract.
    """

    def __init__(self, grid: Grid, cells: float = 2.5):
        span = np.arange(-int(math.ceil(cells)), int(math.ceil(cells)) + 1)
        dx, dy = np.meshgrid(span, span, indexing="xy")
        kern = np.maximum(0.0, cells - np.hypot(dx, dy))
        self.kernel = kern / kern.sum()
        self.denom = ndi.convolve(np.ones(grid.nodes_shape), self.kernel,
                                  mode="constant")

    def density(self, rho: np.ndarray) -> np.ndarray:
        return ndi.convolve(rho, self.kernel, mode="constant") / self.denom

    def pull_back(self, grad_phys: np.ndarray) -> np.ndarray:
        return ndi.convolve(grad_phys / self.denom, self.kernel, mode="constant")


def _eps_schedule(eps0: float, eps_min: float, factor: float) -> list[float]:
    if eps0 <= eps_min:
        return [eps_min]
    out = []
    e = eps0
    while e > eps_min * (1.0 + 1e-12):
        out.append(e)
        e *= factor
    out.append(eps_min)
    return out


def optimize(grid: Grid, cf: CoefficientField, opts: OptimizeOptions,
             phi0: Field | None = None) -> ShapeState:
    """Projected gradient descent with backtracking and eps continuation."""
    if opts.k < 1:
        raise BadParams(f"k must be >= 1, got {opts.k}")
    if not (opts.lam_penalty >= 0 and math.isfinite(opts.lam_penalty)):
        raise BadParams(f"Lambda must be finite and nonnegative, got {opts.lam_penalty}")
    if not 0.0 < opts.eps_factor < 1.0:
        raise BadParams(f"eps factor must lie in (0, 1), got {opts.eps_factor}")

    rho = (phi0.values[0] if phi0 is not None else np.ones(grid.nodes_shape)).copy()
    filt = _DensityFilter(grid)
    interior = grid.interior_mask()
    phi = Field(grid, filt.density(rho))
    base = assemble_stiffness(grid, cf)
    m_op = assemble_mass(grid, cf)

    if opts.eps0 == "auto":
        free = solve_lowest(base, m_op, 1, tol=1e-8, seed=opts.seed)
        eps0 = 1.0 / float(free.lambdas[0])
    else:
        eps0 = float(opts.eps0)
    # wall depth sqrt(eps_min) = h/2: at eps_min = h^2 the leakage past the
    # interface shifts the effective Dirichlet boundary by a full cell, which
    # costs several percent of objective and volume at working resolutions
    eps_min = grid.h ** 2 / 4.0 if opts.eps_min == "auto" else float(opts.eps_min)
    if not (eps0 > 0 and eps_min > 0):
        raise BadParams(f"eps values must be positive, got eps0={eps0}, eps_min={eps_min}")
    schedule = _eps_schedule(eps0, eps_min, opts.eps_factor)

    def solve_at(phi_f: Field, eps: float, warm: np.ndarray | None) -> EigenBasis:
        k_op = penalized_stiffness(grid, cf, phi_f, eps, base=base)
        return solve_lowest(k_op, m_op, opts.k, tol=opts.solver_tol,
                            seed=opts.seed, x0=warm)

    theta_grid = np.linspace(0.05, 0.95, 19)

    def threshold_scan(phi_f: Field, eps: float, warm, j_ref: float):
        """Best sharp indicator among level sets of the graded density.

        Gradient steps position the interface but cannot flip whole rings once
        the wall is opaque (see _DensityFilter); sweeping the threshold moves
        the boundary through node-by-node flips and picks the level whose
        indicator minimizes the true relaxed objective at this eps.
        """
        best = (j_ref, None, None)
        for th in theta_grid:
            chi = Field(grid, (phi_f.values[0] >= th).astype(float))
            b_chi = solve_at(chi, eps, warm)
            j_chi = (float(b_chi.lambdas.sum())
                     + opts.lam_penalty * relaxed_volume(chi))
            if j_chi < best[0]:
                best = (j_chi, chi, b_chi)
        return best

    history: list[tuple[int, float, float]] = []
    warm = None
    basis = None
    step = None  # carried across phases; backtracking rescales as eps tightens
    total = 0
    for phase, eps in enumerate(schedule):
        basis = solve_at(phi, eps, warm)
        warm = basis.vectors
        j_cur = float(basis.lambdas.sum()) + opts.lam_penalty * relaxed_volume(phi)
        history.append((total, j_cur, eps))
        converged = False
        drops: list[float] = []
        for _ in range(opts.max_iters):
            state = ShapeState(phi, eps, opts.lam_penalty, opts.k, basis, cf,
                               opts.solver_tol)
            g = filt.pull_back(objective_gradient(state).values[0])
            g[~interior] = 0.0
            gmax = float(np.abs(g).max())
            if gmax == 0.0:
                converged = True
                break
            if step is None:
                step = 0.5 / gmax if opts.step0 == "auto" else float(opts.step0)
            accepted = False
            for _half in range(_BACKTRACK_MAX):
                trial_rho = np.clip(rho - step * g, 0.0, 1.0)
                trial = Field(grid, filt.density(trial_rho))
                trial_basis = solve_at(trial, eps, warm)
                j_trial = (float(trial_basis.lambdas.sum())
                           + opts.lam_penalty * relaxed_volume(trial))
                if j_trial <= j_cur + _DESCENT_SLACK * max(1.0, abs(j_cur)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                raise NoDescent(
                    f"no decrease after {_BACKTRACK_MAX} halvings at eps={eps:.3e}"
                )
            drops.append(j_cur - j_trial)
            rho, phi, basis, warm = trial_rho, trial, trial_basis, trial_basis.vectors
            j_cur = j_trial
            total += 1
            history.append((total, j_cur, eps))
            step *= 1.4
            # phase convergence is judged on a trailing window of accepted
            # steps: a lone sub-tol drop right after an eps cut only means the
            # carried step was momentarily conservative, not that the phase is
            # done
            if (len(drops) >= _PHASE_WINDOW
                    and sum(drops[-_PHASE_WINDOW:]) <= opts.tol * max(1.0, abs(j_cur))):
                converged = True
                break
        if not converged and phase == len(schedule) - 1:
            raise NoConvergence(
                f"final phase did not reach tol={opts.tol} within {opts.max_iters} steps"
            )
        last = phase == len(schedule) - 1
        j_ref = math.inf if last else j_cur
        j_best, chi_f, chi_basis = threshold_scan(phi, eps, warm, j_ref)
        if last:
            # final thresholding: the published state is the best sharp set
            if chi_f is not None:
                record = j_best <= j_cur + _DESCENT_SLACK * max(1.0, abs(j_cur))
                phi, basis, j_cur = chi_f, chi_basis, j_best
                rho = chi_f.values[0].copy()
                warm = chi_basis.vectors
                if record:
                    total += 1
                    history.append((total, j_cur, eps))
        elif chi_f is not None:
            # re-seed the control from the best indicator so the next phase
            # starts from the re-filtered ramp around the corrected boundary
            rho = chi_f.values[0].copy()
            phi = Field(grid, filt.density(rho))
            warm = chi_basis.vectors

    state = ShapeState(phi, schedule[-1], opts.lam_penalty, opts.k, basis, cf,
                       opts.solver_tol, objective_history=history)
    return state


def threshold_components(phi: Field, level: float = 0.5, *,
                         basis: EigenBasis | None = None,
                         cf: CoefficientField | None = None) -> ComponentMap:
    """Label 4-connected components of {phi > level}.

    When the eigenbasis and coefficients are supplied, the per-component
    eigen-content (share of each mode's M-normalization) is attached.
    """
    chi = phi.values[0] > level
    if not chi.any():
        raise EmptyShape(f"no nodes above level {level}")
    labels, count = ndi.label(chi, structure=_CROSS)
    content = None
    if basis is not None and cf is not None:
        grid = phi.grid
        m_op = assemble_mass(grid, cf)
        nodal = np.zeros((basis.k, grid.n_nodes))
        w = m_op.diagonal()
        for i in range(basis.k):
            nodal[i, m_op.interior_ids] = w * basis.vectors[:, i] ** 2
        nodal = nodal.reshape(basis.k, *grid.nodes_shape)
        content = np.zeros((count, basis.k))
        for c in range(1, count + 1):
            mask = labels == c
            content[c - 1] = nodal[:, mask].sum(axis=1)
    return ComponentMap(chi=Field(phi.grid, chi.astype(float)), labels=labels,
                        count=int(count), eigen_content=content)


def components_audit(cmap: ComponentMap, k: int, grid: Grid) -> dict:
    """Count check against k plus the interior disjointness of dilations."""
    interior = grid.interior_mask()
    masks = [cmap.labels == c for c in range(1, cmap.count + 1)]
    dilated = [ndi.binary_dilation(m, structure=_CROSS) for m in masks]
    touching = []
    for a in range(len(dilated)):
        for b in range(a + 1, len(dilated)):
            if (dilated[a] & dilated[b] & interior).any():
                touching.append([a + 1, b + 1])
    areas = [float(m.sum() * grid.h ** 2) for m in masks]
    out = {
        "count": cmap.count,
        "count_ok": cmap.count <= k,
        "interior_disjoint": not touching,
        "touching_pairs": touching,
        "areas": areas,
    }
    if cmap.eigen_content is not None:
        out["eigen_content"] = cmap.eigen_content.tolist()
    return out
