"""Scalar equations coupled to a stored flow.

Forward:   d/dt u = g^ij nabla(h)_i nabla(h)_j u   (= Laplacian_g u - X . du)
Conjugate: d/dt v = -Laplacian_g v - X . dv + R v,  solved backwards from T.

With ``d/dt dmu_g = -(R + div X) dmu_g`` the two are adjoint, so
``int u v dmu_{g(t)}`` is independent of t.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curvature import TestFunction
from .flow import deturck_vector
from .geometry import (
    curvature_tensors,
    determinant,
    diff,
    diff2,
    flat_background,
    gradient,
    integrate,
    inverse,
    relative_eigenvalues,
)


@dataclass
class ScalarEvolution:
    """Scalar fields at the stored times of a trajectory (ascending)."""

    times: list
    values: list
    direction: str = "forward"
    min_value: float = 0.0
    flagged: bool = False
    notes: list = field(default_factory=list)

    def at(self, t):
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.values[k]


def _values(u):
    return u.values if isinstance(u, TestFunction) else np.asarray(u, dtype=float)


def background_hessian_trace(u, ginv, grid, background):
    """``g^ij nabla(h)_i nabla(h)_j u`` with compact pure second differences."""
    n = grid.n
    out = np.zeros(grid.dims)
    for i in range(n):
        out += ginv[i, i] * diff2(u, grid, i, i)
        for j in range(i + 1, n):
            out += 2.0 * ginv[i, j] * diff2(u, grid, i, j)
    if not background.is_flat:
        gam = np.einsum("ij...,kij...->k...", ginv, background.christoffels.data)
        out -= sum(gam[k] * diff(u, grid, k) for k in range(n))
    return out


def _substeps(traj, k, cfl):
    g0, g1 = traj.states[k], traj.states[k + 1]
    lam = min(relative_eigenvalues(g0).min(), relative_eigenvalues(g1).min())
    grid = g0.grid
    dt_cfl = cfl * grid.min_spacing**2 * lam / (2 * grid.n)
    span = traj.times[k + 1] - traj.times[k]
    m = max(1, int(np.ceil(span / dt_cfl * (1 - 1e-12))))
    return m, span / m


def _density(g, bg):
    return np.sqrt(determinant(g.data) / determinant(bg.metric.data))


def solve_heat_under_flow(traj, u0, cfl=0.4):
    """Forward equation along the trajectory with Heun steps no larger than
    the parabolic CFL bound; metrics are interpolated linearly in time."""
    grid = traj.grid
    bg = traj.background or flat_background(grid)
    u = _values(u0).copy()
    scale = np.abs(u).max()
    values = [u.copy()]
    floor = float(u.min())
    lowest = floor

    def L(t, w):
        return background_hessian_trace(w, inverse(traj.state_at(t).data), grid, bg)

    for k in range(len(traj.times) - 1):
        m, dt = _substeps(traj, k, cfl)
        t = traj.times[k]
        for s in range(m):
            k1 = L(t, u)
            t_next = traj.times[k + 1] if s == m - 1 else t + dt
            k2 = L(t_next, u + dt * k1)
            u = u + 0.5 * dt * (k1 + k2)
            t = t_next
        values.append(u.copy())
        lowest = min(lowest, float(u.min()))
    ev = ScalarEvolution(list(traj.times), values, "forward", lowest)
    if lowest < floor - 1e-10 * scale:
        ev.flagged = True
        ev.notes.append(f"maximum principle violated: min {lowest:.3e} below initial {floor:.3e}")
    return ev


def solve_conjugate_heat(traj, u_final, cfl=0.4):
    """Conjugate equation from the last stored time back to the first.

    In ``s = T - t`` it reads ``d/ds v = g^ij nabla(h)^2_ij v + 2 X . dv - R v``
    with ``X`` and ``R`` evaluated on the interpolated metric at every stage.
    """
    grid = traj.grid
    bg = traj.background or flat_background(grid)
    v = _values(u_final).copy()
    scale = np.abs(v).max()
    out = [v.copy()]
    nonnegative = bool(v.min() >= 0)
    lowest = float(v.min())

    def L(t, w):
        g = traj.state_at(t)
        X = deturck_vector(g, bg).data
        _, _, R = curvature_tensors(g)
        dw = gradient(w, grid)
        adv = np.einsum("k...,k...->...", X, dw)
        return background_hessian_trace(w, inverse(g.data), grid, bg) + 2.0 * adv - R * w

    for k in range(len(traj.times) - 2, -1, -1):
        m, dt = _substeps(traj, k, cfl)
        t = traj.times[k + 1]
        for s in range(m):
            k1 = L(t, v)
            t_next = traj.times[k] if s == m - 1 else t - dt
            k2 = L(t_next, v + dt * k1)
            v = v + 0.5 * dt * (k1 + k2)
            t = t_next
        out.append(v.copy())
        lowest = min(lowest, float(v.min()))
    ev = ScalarEvolution(list(traj.times), out[::-1], "backward", lowest)
    if nonnegative and lowest < -1e-6 * scale:
        ev.flagged = True
        ev.notes.append(f"negative undershoot {lowest:.3e}")
    return ev


def weighted_integral(traj, fields, weight=None):
    """``int f dmu_{g(t)}`` at every stored time (``weight`` multiplies f)."""
    grid = traj.grid
    bg = traj.background or flat_background(grid)
    out = []
    for k, g in enumerate(traj.states):
        f = fields[k] if weight is None else fields[k] * weight[k]
        out.append(integrate(f * _density(g, bg), grid, bg))
    return np.asarray(out)


def duality_pairing(traj, u, v):
    """``int u v dmu_{g(t)}`` at the stored times."""
    return weighted_integral(traj, u.values, v.values)


def monotonicity_functional(traj, u, a=0.0):
    """``(t, int (R_{g(t)} - a) u dmu_{g(t)})`` at the stored times."""
    if len(u.times) != len(traj.times) or not np.allclose(u.times, traj.times, rtol=0, atol=1e-14):
        raise ValueError("scalar evolution is not aligned with the trajectory")
    R = [curvature_tensors(g)[2] - a for g in traj.states]
    return np.asarray(traj.times), weighted_integral(traj, R, u.values)


def dirichlet_energy(traj, ev):
    """``int |du|^2_{g(t)} dmu_{g(t)}`` at the stored times (measured, no bound asserted)."""
    grid = traj.grid
    fields = []
    for g, u in zip(traj.states, ev.values):
        du = gradient(u, grid)
        fields.append(np.einsum("ij...,i...,j...->...", inverse(g.data), du, du))
    return weighted_integral(traj, fields)


def hessian_spacetime_integral(traj):
    """Trapezoid rule in time of ``int |nabla(h)^2 g|^2 dmu_h`` over the step diagnostics."""
    t, e = traj.series("hessian_energy")
    if len(t) < 2:
        return 0.0
    return float(np.trapezoid(e, t))


def gradient_energy(g, background=None):
    """``int |nabla(h) g|^2 dmu_h`` for comparison with the space-time Hessian integral."""
    from .analysis import gradient_power

    bg = background or flat_background(g.grid)
    return integrate(gradient_power(g, bg, 2.0), g.grid, bg)


# ---------------------------------------------------------------------------
# Gaussian bound


@dataclass
class KernelReport:
    C: float
    per_source: list
    masses: np.ndarray
    samples: int
    residuals: np.ndarray


def _min_gaussian_constant(K, t, d2, n, iters=200):
    """Smallest C with ``K <= C t^{-n/2} exp(-d2 / (C t))`` per sample.

    ``C exp(-a/C)`` increases in C, so a vectorised bisection in log C suffices.
    """
    target = K * t ** (0.5 * n)
    a = d2 / t
    lo = np.full(K.shape, -40.0)
    hi = np.full(K.shape, 40.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        C = np.exp(mid)
        ok = C * np.exp(-a / C) >= target
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return np.exp(hi)


def heat_kernel_gaussian_check(traj, sources, times, threshold=1e-4):
    """Evolve normalised spikes and fit the Gaussian upper-bound constant.

    ``sources`` are grid index tuples, ``times`` must be stored trajectory
    times.  Samples below ``threshold * max K`` at a given time are skipped.
    """
    if min(times) <= traj.times[0]:
        raise ValueError("kernel sample times must lie after the initial time")
    grid = traj.grid
    bg = traj.background or flat_background(grid)
    g0 = traj.states[0]
    rho0 = _density(g0, bg)
    per_source, masses, resid = [], [], []
    count = 0
    for src in sources:
        u0 = np.zeros(grid.dims)
        u0[tuple(src)] = 1.0 / (grid.cell_volume * rho0[tuple(src)])
        ev = solve_heat_under_flow(traj, u0)
        y = tuple(i * h for i, h in zip(src, grid.spacing))
        d2 = grid.distance(y) ** 2
        best = 0.0
        for t in times:
            K = ev.at(t)
            g = traj.state_at(t)
            masses.append(integrate(K * _density(g, bg), grid, bg))
            sel = K >= threshold * K.max()
            Cs = _min_gaussian_constant(K[sel], t, d2[sel], grid.n)
            count += int(sel.sum())
            best = max(best, float(Cs.max()))
            resid.append(float(np.median(Cs)))
        per_source.append(best)
    return KernelReport(max(per_source), per_source, np.asarray(masses), count, np.asarray(resid))
