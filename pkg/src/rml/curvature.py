"""Distributional scalar curvature for metrics with only first derivatives.

The scalar curvature is written as ``R = div_h V + F`` with ``V`` and ``F``
built from ``g`` and its first background derivatives, so the pairing with a
test function needs no second derivatives of ``g``:

    <<R - a, u>> = int (-V . grad(u rho) + F u rho) dmu_h - a int u dmu_g,

where ``rho = sqrt(det g / det h)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .analysis import gradient_power, tube_volume_codimension
from .errors import CodimensionError, SpecError
from .fields import bilipschitz_constants
from .geometry import (
    TensorField,
    christoffels,
    covariant_derivative,
    determinant,
    flat_background,
    gradient,
    integrate,
    inverse,
    tensor_norm_h,
)


@dataclass
class TestFunction:
    """Non-negative scalar field with its support and ``C^1`` norm."""

    __test__ = False  # not a pytest class

    values: np.ndarray
    support: np.ndarray
    c1_norm: float = field(init=False, default=float("nan"))
    grad_bound: float | None = field(init=False, default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("test function has non-finite values")
        if np.any(self.values < 0):
            raise ValueError("test function must be non-negative")
        if np.any(self.values[~self.support] != 0):
            raise ValueError("test function is non-zero outside its declared support")

    def measure(self, grid, background=None):
        bg = background or flat_background(grid)
        grad = tensor_norm_h(gradient(self.values, grid), bg)
        self.c1_norm = float(self.values.max() + grad.max())
        return self


def make_test_function(grid, values, background=None):
    values = np.asarray(values, dtype=float)
    tf = TestFunction(values, values != 0)
    return tf.measure(grid, background)


def smooth_bump(t):
    """``exp(1 - 1/(1 - t^2))`` for |t| < 1, else 0; peak value 1 at t = 0."""
    t2 = np.minimum(np.asarray(t, dtype=float) ** 2, 1.0)
    inside = t2 < 1
    return np.where(inside, np.exp(1.0 - 1.0 / np.where(inside, 1.0 - t2, 1.0)), 0.0)


def bump_test_function(grid, center, radius):
    return make_test_function(grid, smooth_bump(grid.distance(center) / radius))


def plateau_test_function(grid, center, inner, outer):
    """Equal to 1 within ``inner`` of ``center`` and 0 beyond ``outer``."""
    from .fields import smooth_step

    rho = grid.distance(center)
    return make_test_function(grid, 1.0 - smooth_step((rho - inner) / (outer - inner)))


def quintic_ramp(t):
    """``1 - (10 t^3 - 15 t^4 + 6 t^5)`` on [0, 1]: C^2 joins to 1 and 0."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def cutoff_family(mask, grid, eps):
    """Cutoff equal to 1 on ``Sigma(eps)`` and 0 outside ``Sigma(2 eps)``."""
    if eps < 4 * max(grid.spacing) * (1 - 1e-12):
        raise SpecError(f"cutoff radius {eps} is below four cells")
    dist = mask.distance(grid)
    tf = make_test_function(grid, quintic_ramp((dist - eps) / eps))
    tf.grad_bound = float(tensor_norm_h(gradient(tf.values, grid), flat_background(grid)).max())
    return tf


# ---------------------------------------------------------------------------
# divergence-form curvature fields


@dataclass
class DivergenceFormFields:
    psi: TensorField
    v: TensorField
    f: np.ndarray
    density: np.ndarray


def divergence_form_fields(g, background=None):
    bg = background or flat_background(g.grid)
    grid = g.grid
    ginv = inverse(g.data)
    A = covariant_derivative(g, bg).data  # [m, i, j]
    low = 0.5 * (np.einsum("ijl...->lij...", A) + np.einsum("jil...->lij...", A) - A)
    psi = np.einsum("kl...,lij...->kij...", ginv, low)
    V = np.einsum("ij...,kij...->k...", ginv, psi) - np.einsum("ik...,jji...->k...", ginv, psi)
    dginv = -np.einsum("ia...,jb...,kab...->kij...", ginv, ginv, A)  # nabla_k g^ij
    F = -np.einsum("kij...,kij...->...", dginv, psi) + np.einsum("kik...,jji...->...", dginv, psi)
    F = F + np.einsum(
        "ij...,ij...->...",
        ginv,
        np.einsum("kkl...,lij...->ij...", psi, psi) - np.einsum("kjl...,lik...->ij...", psi, psi),
    )
    if not bg.is_flat:
        ric_h = np.einsum("ac...,abcd...->bd...", bg.inverse, bg.riemann.data)
        F = F + np.einsum("ij...,ij...->...", ginv, ric_h)
    density = np.sqrt(determinant(g.data) / determinant(bg.metric.data))
    return DivergenceFormFields(TensorField(grid, psi, (2, 1)), TensorField(grid, V, (0, 1)), F, density)


def distributional_scalar_pairing(g, background, u, a=0.0, fields=None):
    """``<<R_g - a, u>>`` by cell-midpoint quadrature."""
    bg = background or flat_background(g.grid)
    ll = fields or divergence_form_fields(g, bg)
    grid = g.grid
    values = u.values if isinstance(u, TestFunction) else np.asarray(u, dtype=float)
    w = values * ll.density
    integrand = -np.einsum("k...,k...->...", ll.v.data, gradient(w, grid)) + ll.f * w
    return integrate(integrand, grid, bg) - a * integrate(w, grid, bg)


def classical_scalar_pairing(g, u, a=0.0, background=None):
    """``int (R_g - a) u dmu_g`` with the classical scalar curvature."""
    from .geometry import curvature_tensors

    bg = background or flat_background(g.grid)
    _, _, R = curvature_tensors(g)
    rho = np.sqrt(determinant(g.data) / determinant(bg.metric.data))
    values = u.values if isinstance(u, TestFunction) else np.asarray(u, dtype=float)
    return integrate((R - a) * values * rho, g.grid, bg)


# ---------------------------------------------------------------------------
# holonomy oracle


def holonomy_angle(g, center, radius, steps=2048):
    """Rotation angle of a vector parallel-transported once counter-clockwise
    around the coordinate circle of ``radius`` about ``center`` (2D only).

    Christoffel symbols come from the grid and are interpolated with periodic
    cubic splines; transport uses classical RK4 in the loop parameter.  By
    Gauss-Bonnet the angle equals the total Gauss curvature enclosed.
    """
    grid = g.grid
    if grid.n != 2:
        raise ValueError("holonomy is computed on surfaces only")
    gamma = christoffels(g).data
    coeffs = [ndimage.spline_filter(gamma[k, i, j], order=3, mode="grid-wrap")
              for k in range(2) for i in range(2) for j in range(2)]
    gcoeffs = [ndimage.spline_filter(g.data[i, j], order=3, mode="grid-wrap") for i in range(2) for j in range(2)]

    def at(theta, table):
        x = center[0] + radius * np.cos(theta)
        y = center[1] + radius * np.sin(theta)
        idx = [[x / grid.spacing[0]], [y / grid.spacing[1]]]
        vals = [ndimage.map_coordinates(c, idx, order=3, mode="grid-wrap", prefilter=False)[0] for c in table]
        return np.array(vals)

    def rhs(theta, v):
        G = at(theta, coeffs).reshape(2, 2, 2)
        cdot = radius * np.array([-np.sin(theta), np.cos(theta)])
        return -np.einsum("kij,i,j->k", G, cdot, v)

    h = 2 * np.pi / steps
    v0 = np.array([1.0, 0.0])
    v = v0.copy()
    th = 0.0
    for _ in range(steps):
        k1 = rhs(th, v)
        k2 = rhs(th + h / 2, v + h / 2 * k1)
        k3 = rhs(th + h / 2, v + h / 2 * k2)
        k4 = rhs(th + h, v + h * k3)
        v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        th += h
    gm = at(0.0, gcoeffs).reshape(2, 2)
    L = np.linalg.cholesky(gm).T  # orthonormal coordinates: w = L v
    w0, w1 = L @ v0, L @ v
    return float(np.arctan2(w0[0] * w1[1] - w0[1] * w1[0], w0 @ w1))


# ---------------------------------------------------------------------------
# removability


@dataclass
class RemovabilityReport:
    epsilons: np.ndarray
    terms: dict
    localized_pairing: np.ndarray
    fitted_rates: dict
    predicted_rates: dict
    total_pairing: float
    codimension: float
    delta_prime: float
    constant: float

    def decreasing(self, name):
        v = self.terms[name]
        return bool(np.all(np.diff(v[::-1]) <= 0)) if len(v) > 1 else True

    def rows(self):
        return [
            (e, *(self.terms[k][i] for k in ("I", "II", "III", "IV")), self.localized_pairing[i])
            for i, e in enumerate(self.epsilons)
        ]


def removability_experiment(g, mask, background, p, delta, u, a=0.0, eps_list=(), codimension=None):
    """Evaluate the four Hoelder-split error terms that control the
    contribution of the singular set to ``<<R_g - a, u>>``.

    For each ``eps`` with ``Sigma(eps)`` the eps-tube and ``eta`` the cutoff:

    * I   = C (int_{Sigma(eps)} |dg|^p)^(1/p) Vol(eps)^(1 - 1/p)
    * II  = C (int_{Sigma(2 eps)} |dg|^p)^(1/p) (int |d eta|^(p/(p-1)))^((p-1)/p)
    * III = C (int_{Sigma(eps)} |dg|^p)^(2/p) Vol(eps)^(1 - 2/p)
    * IV  = C Vol(eps)

    with ``C = |u|_{C^1} Lambda^(n/2)``.  The expected decay rates are
    ``d - 1 + delta/p``, ``d - 2 + delta/p``, ``d - 2 + 2 delta/p`` and ``d``
    for a singular set of codimension ``d``.  The experiment refuses sets with
    ``d < 2 - delta'/p`` where ``delta' = delta / 2``.
    """
    if p < 2:
        raise SpecError("the removability experiment needs p >= 2")
    grid = g.grid
    bg = background or flat_background(grid)
    eps = np.sort(np.asarray(eps_list, dtype=float))
    names = ("I", "II", "III", "IV")
    dprime = 0.5 * delta
    total = distributional_scalar_pairing(g, bg, u, a)
    if mask.is_empty:
        zeros = np.zeros(len(eps))
        return RemovabilityReport(
            eps, {k: zeros.copy() for k in names}, zeros.copy(), {k: 0.0 for k in names},
            {k: 0.0 for k in names}, total, float(grid.n), dprime, 0.0,
        )
    if codimension is None:
        codimension = tube_volume_codimension(mask, grid, eps).d0
    d = float(codimension)
    if d < 2 - dprime / p:
        raise CodimensionError(
            f"codimension {d:.3g} is below 2 - delta'/p = {2 - dprime / p:.3g}; the singular set is not removable here"
        )
    lo, hi = bilipschitz_constants(g, bg)
    Lam = max(1.0 / lo, hi)
    C = u.c1_norm * Lam ** (grid.n / 2)
    dist = mask.distance(grid)
    gp = gradient_power(g, bg, p)
    q = p / (p - 1)
    terms = {k: [] for k in names}
    local = []
    for e in eps:
        tube = dist < e
        vol = integrate(tube.astype(float), grid, bg)
        G1 = integrate(np.where(tube, gp, 0.0), grid, bg)
        G2 = integrate(np.where(dist < 2 * e, gp, 0.0), grid, bg)
        eta = cutoff_family(mask, grid, e)
        deta = tensor_norm_h(gradient(eta.values, grid), bg)
        terms["I"].append(C * G1 ** (1 / p) * vol ** (1 - 1 / p))
        terms["II"].append(C * G2 ** (1 / p) * integrate(deta**q, grid, bg) ** (1 / q))
        terms["III"].append(C * G1 ** (2 / p) * vol ** (1 - 2 / p))
        terms["IV"].append(C * vol)
        local.append(distributional_scalar_pairing(g, bg, u.values * eta.values, a))
    terms = {k: np.asarray(v) for k, v in terms.items()}
    predicted = {"I": d - 1 + delta / p, "II": d - 2 + delta / p, "III": d - 2 + 2 * delta / p, "IV": d}
    fitted = {}
    for k in names:
        if len(eps) > 1 and np.all(terms[k] > 0):
            fitted[k] = float(np.polyfit(np.log(eps), np.log(terms[k]), 1)[0])
        else:
            fitted[k] = float("nan")
    return RemovabilityReport(eps, terms, np.asarray(local), fitted, predicted, total, d, dprime, C)
