"""Coefficient families for the divergence-form operator -b^-1 div(A grad u).

Four catalog kinds:

* ``identity``      A = Id, b = 1.
* ``drift``         A = exp(-Phi) Id, b = exp(-Phi) for a scalar potential Phi
                    drawn from {constant, linear, gaussian-bump}.
* ``weight``        A = Id, b = exp(-Phi).  Unlike ``drift``, the weight does
                    not cancel out of the local Rayleigh quotient, so it
                    genuinely reshapes the spectrum region by region.
* ``anisotropic``   A = R(theta) diag(ratio, 1/ratio) R(theta)^T, b = 1, with a
                    constant or linearly varying rotation angle.

Each family ships conservative regularity constants: ellipticity lambdaA
(eigenvalues of A lie in [lambdaA^-2, lambdaA^2]), Hoelder data (cA, deltaA)
for the entries, and the two-sided bound cb for b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParams, NotSPD, UnknownKind
from .grid import Field, Grid, bilinear_sample


@dataclass
class CoefficientField:
    """Nodal coefficient data plus declared regularity constants."""

    grid: Grid
    a11: Field
    a12: Field
    a22: Field
    b: Field
    lambdaA: float
    cA: float
    deltaA: float
    cb: float
    kind: str = "identity"

    def matrix_at(self, points) -> np.ndarray:
        """Bilinear A at point(s): shape (2, 2) or (N, 2, 2)."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        e11 = bilinear_sample(self.a11, p)[:, 0]
        e12 = bilinear_sample(self.a12, p)[:, 0]
        e22 = bilinear_sample(self.a22, p)[:, 0]
        out = np.empty((p.shape[0], 2, 2))
        out[:, 0, 0] = e11
        out[:, 0, 1] = e12
        out[:, 1, 0] = e12
        out[:, 1, 1] = e22
        return out[0] if single else out

    def b_at(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        out = bilinear_sample(self.b, np.atleast_2d(p))[:, 0]
        return out[0] if single else out


def _phi_callable(params: dict, grid: Grid):
    """Return (phi(x, y) vectorized, sup|phi| bound, sup|grad phi| bound)."""
    if not isinstance(params, dict) or "kind" not in params:
        raise BadParams("drift params must carry a phi spec with a 'kind'")
    kind = params["kind"]
    if kind == "constant":
        try:
            c = float(params["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadParams(f"constant phi needs a numeric 'value': {exc}") from exc
        if not math.isfinite(c):
            raise BadParams("constant phi value must be finite")
        return (lambda x, y: np.full_like(np.asarray(x, dtype=float), c),
                abs(c), 0.0)
    if kind == "linear":
        coeffs = params.get("coeffs")
        if (not isinstance(coeffs, (list, tuple)) or len(coeffs) != 3
                or not all(isinstance(v, (int, float)) for v in coeffs)):
            raise BadParams("linear phi needs 'coeffs': [a0, a1, a2]")
        a0, a1, a2 = (float(v) for v in coeffs)
        if not np.isfinite([a0, a1, a2]).all():
            raise BadParams("linear phi coefficients must be finite")
        ox, oy = grid.origin
        lx, ly = grid.extent
        corners = [(ox, oy), (ox + lx, oy), (ox, oy + ly), (ox + lx, oy + ly)]
        sup = max(abs(a0 + a1 * cx + a2 * cy) for cx, cy in corners)
        return (lambda x, y: a0 + a1 * np.asarray(x, dtype=float) + a2 * np.asarray(y, dtype=float),
                sup, math.hypot(a1, a2))
    if kind == "gaussian-bump":
        try:
            amp = float(params["amplitude"])
            cx, cy = (float(v) for v in params["center"])
            sigma = float(params["sigma"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadParams(f"gaussian-bump phi needs amplitude/center/sigma: {exc}") from exc
        if sigma <= 0 or not np.isfinite([amp, cx, cy, sigma]).all():
            raise BadParams("gaussian-bump phi needs finite params and sigma > 0")

        def phi(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            return amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma**2))

        # max |grad| of the bump is |amp| / (sigma sqrt(e))
        return phi, abs(amp), abs(amp) / (sigma * math.sqrt(math.e))
    raise UnknownKind(f"unknown phi kind {kind!r}")


def make_coefficients(grid: Grid, kind: str, params: dict | None = None) -> CoefficientField:
    """Instantiate a catalog coefficient family on a grid."""
    params = {} if params is None else params
    if not isinstance(params, dict):
        raise BadParams(f"params must be a dict, got {type(params).__name__}")
    xy = grid.node_coords()
    x, y = xy[..., 0], xy[..., 1]
    ones = np.ones(grid.nodes_shape)

    if kind == "identity":
        if params:
            raise BadParams(f"identity family takes no params, got {sorted(params)}")
        return CoefficientField(
            grid,
            a11=Field(grid, ones.copy()), a12=Field(grid, np.zeros_like(ones)),
            a22=Field(grid, ones.copy()), b=Field(grid, ones.copy()),
            lambdaA=1.0, cA=0.0, deltaA=1.0, cb=1.0, kind=kind,
        )

    if kind == "drift":
        extra = set(params) - {"phi"}
        if extra:
            raise BadParams(f"drift family takes only 'phi', got extra {sorted(extra)}")
        phi, sup_phi, lip_phi = _phi_callable(params.get("phi", {}), grid)
        w = np.exp(-phi(x, y))
        lam = math.exp(sup_phi / 2.0)
        # entries of exp(-Phi) Id inherit Lipschitz bound exp(sup|Phi|) Lip(Phi)
        c_a = math.exp(sup_phi) * lip_phi
        return CoefficientField(
            grid,
            a11=Field(grid, w.copy()), a12=Field(grid, np.zeros_like(w)),
            a22=Field(grid, w.copy()), b=Field(grid, w.copy()),
            lambdaA=lam, cA=c_a, deltaA=1.0, cb=math.exp(sup_phi), kind=kind,
        )

    if kind == "weight":
        extra = set(params) - {"phi"}
        if extra:
            raise BadParams(f"weight family takes only 'phi', got extra {sorted(extra)}")
        phi, sup_phi, _ = _phi_callable(params.get("phi", {}), grid)
        w = np.exp(-phi(x, y))
        return CoefficientField(
            grid,
            a11=Field(grid, ones.copy()), a12=Field(grid, np.zeros_like(ones)),
            a22=Field(grid, ones.copy()), b=Field(grid, w),
            lambdaA=1.0, cA=0.0, deltaA=1.0, cb=math.exp(sup_phi), kind=kind,
        )

    if kind == "anisotropic":
        extra = set(params) - {"ratio", "angle", "angle_field"}
        if extra:
            raise BadParams(f"anisotropic family: unexpected params {sorted(extra)}")
        try:
            ratio = float(params["ratio"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadParams(f"anisotropic family needs numeric 'ratio': {exc}") from exc
        if ratio <= 0 or not math.isfinite(ratio):
            raise BadParams(f"ratio must be positive and finite, got {ratio}")
        if "angle" in params and "angle_field" in params:
            raise BadParams("give either 'angle' or 'angle_field', not both")
        grad_theta = 0.0
        if "angle_field" in params:
            spec = params["angle_field"]
            if not isinstance(spec, dict) or spec.get("kind") != "linear":
                raise BadParams("angle_field supports only {'kind': 'linear', 'coeffs': [t0, t1, t2]}")
            coeffs = spec.get("coeffs")
            if not isinstance(coeffs, (list, tuple)) or len(coeffs) != 3:
                raise BadParams("angle_field 'coeffs' must be [t0, t1, t2]")
            t0, t1, t2 = (float(v) for v in coeffs)
            theta = t0 + t1 * x + t2 * y
            grad_theta = math.hypot(t1, t2)
        else:
            theta = float(params.get("angle", 0.0)) * np.ones_like(x)
        mean = 0.5 * (ratio + 1.0 / ratio)
        dev = 0.5 * (ratio - 1.0 / ratio)
        a11 = mean + dev * np.cos(2 * theta)
        a22 = mean - dev * np.cos(2 * theta)
        a12 = dev * np.sin(2 * theta)
        lam = math.sqrt(max(ratio, 1.0 / ratio))
        return CoefficientField(
            grid,
            a11=Field(grid, a11), a12=Field(grid, a12),
            a22=Field(grid, a22), b=Field(grid, ones.copy()),
            lambdaA=lam, cA=2.0 * abs(dev) * grad_theta, deltaA=1.0, cb=1.0,
            kind=kind,
        )

    raise UnknownKind(f"unknown coefficient kind {kind!r}")


def spd_sqrt(a: np.ndarray) -> np.ndarray:
    """Principal square root of a 2x2 SPD matrix, closed form.

    S = (A + sqrt(det A) Id) / sqrt(tr A + 2 sqrt(det A)).
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (2, 2) or not np.isfinite(a).all():
        raise NotSPD(f"need a finite 2x2 matrix, got shape {a.shape}")
    scale = max(abs(a).max(), 1e-300)
    if abs(a[0, 1] - a[1, 0]) > 1e-12 * scale:
        raise NotSPD(f"matrix not symmetric: a12={a[0, 1]}, a21={a[1, 0]}")
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    tr = a[0, 0] + a[1, 1]
    if det <= 0 or tr <= 0:
        raise NotSPD(f"matrix not positive definite: tr={tr}, det={det}")
    s = math.sqrt(det)
    return (a + s * np.eye(2)) / math.sqrt(tr + 2.0 * s)


def validate_coefficients(cf: CoefficientField, n_samples: int = 512,
                          seed: int = 0) -> dict:
    """Empirical check of the declared constants; reports, never raises.

    Eigenvalue bounds come from the nodal matrices; the Hoelder constant is
    estimated as the max quotient |a(x)-a(y)| / |x-y|^deltaA over random
    point pairs (entrywise, bilinear-sampled).
    """
    a11 = cf.a11.values[0]
    a12 = cf.a12.values[0]
    a22 = cf.a22.values[0]
    half_tr = 0.5 * (a11 + a22)
    rad = np.sqrt(0.25 * (a11 - a22) ** 2 + a12**2)
    min_eig = float((half_tr - rad).min())
    max_eig = float((half_tr + rad).max())
    emp_lambda = math.sqrt(max(max_eig, 1.0 / min_eig)) if min_eig > 0 else math.inf

    rng = np.random.default_rng(seed)
    lo = np.asarray(cf.grid.origin)
    span = np.asarray(cf.grid.extent)
    pts = lo + rng.random((2 * n_samples, 2)) * span
    xa, xb = pts[:n_samples], pts[n_samples:]
    dist = np.linalg.norm(xa - xb, axis=1)
    keep = dist > 1e-9
    quot = 0.0
    if keep.any():
        da = np.zeros(n_samples)
        for comp in (cf.a11, cf.a12, cf.a22):
            va = bilinear_sample(comp, xa)[:, 0]
            vb = bilinear_sample(comp, xb)[:, 0]
            da = np.maximum(da, np.abs(va - vb))
        quot = float((da[keep] / dist[keep] ** cf.deltaA).max())

    b = cf.b.values[0]
    b_min, b_max = float(b.min()), float(b.max())

    violations = []
    if min_eig <= 0:
        violations.append("A not positive definite at some node")
    else:
        if max_eig > cf.lambdaA**2 * (1 + 1e-9):
            violations.append("max eigenvalue exceeds declared lambdaA^2")
        if min_eig < (1 + 1e-9) ** -1 / cf.lambdaA**2:
            violations.append("min eigenvalue below declared lambdaA^-2")
    if quot > cf.cA * (1 + 1e-6) + 1e-12:
        violations.append("empirical Hoelder quotient exceeds declared cA")
    if b_min <= 0:
        violations.append("b not positive at some node")
    else:
        if b_max > cf.cb * (1 + 1e-9) or b_min < (1 + 1e-9) ** -1 / cf.cb:
            violations.append("b outside declared [1/cb, cb]")

    return {
        "kind": cf.kind,
        "min_eig": min_eig,
        "max_eig": max_eig,
        "lambdaA_declared": cf.lambdaA,
        "lambdaA_empirical": emp_lambda,
        "holder_quotient": quot,
        "cA_declared": cf.cA,
        "deltaA": cf.deltaA,
        "b_min": b_min,
        "b_max": b_max,
        "cb_declared": cf.cb,
        "n_samples": int(n_samples),
        "violations": violations,
    }
