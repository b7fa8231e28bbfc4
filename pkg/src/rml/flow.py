"""Ricci-DeTurck flow relative to a background metric ``h``.

The evolution is ``d/dt g = -2 Ric(g) - L_X g`` written in the strictly
parabolic local-coordinate form (background Hessian, curvature coupling and
quadratic gradient terms), with ``X^k = g^ij (Gamma(h)^k_ij - Gamma(g)^k_ij)``.
Time stepping is Heun's method with CFL-limited, early-time graded steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateMetricError, GaugeBlowupError, StabilityError
from .geometry import (
    MetricField,
    TensorField,
    check_nondegenerate,
    christoffels,
    covariant_derivative,
    curvature_tensors,
    flat_background,
    flat_derivative_norms,
    gradient,
    integrate,
    inverse,
    relative_eigenvalues,
    second_covariant_derivative,
    tensor_norm_h,
)


@dataclass
class FlowConfig:
    """Time-stepping controls.

    ``early_time_refinement`` is the exponent ``delta/p`` of the graded step
    ``dt = grade_constant * t**(1 - delta/p)``; ``None`` disables grading.
    ``store_every`` keeps every k-th accepted state in addition to the
    snapshots (0 keeps only snapshots, the initial and the final state).
    """

    t_end: float = 0.1
    cfl: float = 0.4
    dt_min: float = 1e-12
    dt_max: float | None = None
    snapshot_times: tuple = ()
    early_time_refinement: float | None = 0.5
    grade_constant: float = 0.05
    store_every: int = 0
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not 0.0 < self.cfl < 1.0:
            raise ValueError(f"cfl must lie in (0, 1), got {self.cfl}")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.dt_min <= 0 or (self.dt_max is not None and self.dt_max < self.dt_min):
            raise ValueError("need 0 < dt_min <= dt_max")
        self.snapshot_times = tuple(sorted(float(s) for s in self.snapshot_times))
        if any(s < 0 or s > self.t_end for s in self.snapshot_times):
            raise ValueError("snapshot times must lie in [0, t_end]")


@dataclass(frozen=True)
class StepDiagnostics:
    t: float
    dt: float
    lambda_min: float
    lambda_max: float
    sup_grad: tuple
    hessian_energy: float

    @property
    def Lambda(self):
        return max(1.0 / self.lambda_min, self.lambda_max)

    def row(self):
        return (self.t, self.dt, self.lambda_min, self.lambda_max, *self.sup_grad)


DIAGNOSTIC_COLUMNS = ("t", "dt", "lambda_min", "lambda_max", "sup_d1", "sup_d2", "sup_d3", "sup_d4")


@dataclass
class FlowTrajectory:
    """Stored states ``(t, g)`` with strictly increasing times and the
    diagnostics of every accepted step (the initial state included)."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    background: object = None

    def append(self, t, g):
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must increase strictly")
        self.times.append(float(t))
        self.states.append(g)

    @property
    def grid(self):
        return self.states[0].grid

    def state_at(self, t):
        """Metric at time ``t`` by linear interpolation between stored states."""
        times = self.times
        if t <= times[0]:
            return self.states[0]
        if t >= times[-1]:
            return self.states[-1]
        k = int(np.searchsorted(times, t, side="right")) - 1
        t0, t1 = times[k], times[k + 1]
        if t == t0:
            return self.states[k]
        w = (t - t0) / (t1 - t0)
        data = (1 - w) * self.states[k].data + w * self.states[k + 1].data
        return MetricField(self.grid, data)

    def snapshot(self, t, rtol=1e-12):
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > rtol * max(1.0, abs(t)):
            raise KeyError(f"no stored state at t={t}")
        return self.states[k]

    def series(self, name):
        """``(t, values)`` arrays of one diagnostic; ``sup_d1``..``sup_d4``,
        ``lambda_min``, ``lambda_max``, ``Lambda``, ``hessian_energy`` or ``dt``."""
        t = np.array([d.t for d in self.diagnostics])
        if name.startswith("sup_d"):
            v = [d.sup_grad[int(name[5:]) - 1] for d in self.diagnostics]
        else:
            v = [getattr(d, name) for d in self.diagnostics]
        return t, np.asarray(v, dtype=float)


# ---------------------------------------------------------------------------
# right-hand side


def _bg(background, grid):
    return background if background is not None else flat_background(grid)


def deturck_vector(g, background=None):
    """``X^k = g^ij (Gamma(h)^k_ij - Gamma(g)^k_ij)``."""
    bg = _bg(background, g.grid)
    ginv = inverse(g.data)
    gamma = christoffels(g).data
    if not bg.is_flat:
        gamma = bg.christoffels.data - gamma
    else:
        gamma = -gamma
    return TensorField(g.grid, np.einsum("ij...,kij...->k...", ginv, gamma), (0, 1))


def lie_derivative(X, g):
    """``(L_X g)_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k``."""
    grid = g.grid
    dg = gradient(g.data, grid)
    dX = gradient(X.data, grid)  # [i, k] = d_i X^k
    out = np.einsum("k...,kij...->ij...", X.data, dg)
    t = np.einsum("kj...,ik...->ij...", g.data, dX)
    return TensorField(grid, out + t + np.swapaxes(t, 0, 1), (2, 0))


def _rhs(g, bg):
    ginv = inverse(g.data)
    A = covariant_derivative(g, bg).data  # [m, i, j] = nabla_m g_ij
    H = second_covariant_derivative(g, bg)
    out = np.einsum("pq...,pqij...->ij...", ginv, H)
    if not bg.is_flat:
        # h^pq R(h)_jkql, then contract with g^kl g_ip
        Rh = np.einsum("pq...,jkql...->jkpl...", bg.inverse, bg.riemann.data)
        c = np.einsum("kl...,ip...,jkpl...->ij...", ginv, g.data, Rh)
        out -= c + np.swapaxes(c, 0, 1)
    if not A.any():
        # the quadratic terms vanish identically for a spatially constant metric
        return 0.5 * (out + np.swapaxes(out, 0, 1))
    # A3[m,i,k] = A_mil g^lk, U[i,p,k] = g^pq A3_iqk, V[j,l,q] = g^kl A3_kjq;
    # einsum is much faster with rank-2 outputs, so one free index is looped
    n = g.grid.n
    A3 = np.stack([np.einsum("l...,mil...->mi...", ginv[:, k], A) for k in range(n)], axis=2)
    U = np.stack([np.einsum("q...,iqk...->ik...", ginv[p], A3) for p in range(n)], axis=1)
    V = np.stack([np.einsum("k...,kjq...->jq...", ginv[:, l], A3) for l in range(n)], axis=1)
    quad = np.einsum("ipk...,jpk...->ij...", U, A)
    # the fourth printed term is the transpose of the fifth
    t5 = np.einsum("iql...,lqj...->ij...", U, A)
    quad -= 2.0 * (t5 + np.swapaxes(t5, 0, 1))
    # second and third printed terms share V
    W = np.einsum("qil...->ilq...", A) - np.einsum("liq...->ilq...", A)
    quad += 2.0 * np.einsum("ilq...,jlq...->ij...", W, V)
    out += 0.5 * quad
    return 0.5 * (out + np.swapaxes(out, 0, 1))


def rdf_rhs(g, background=None):
    """Right-hand side of the Ricci-DeTurck flow, symmetrised in (i, j)."""
    return TensorField(g.grid, _rhs(g, _bg(background, g.grid)), (2, 0))


def ricci_flow_identity(g):
    """``-2 Ric(g) - L_X g`` on a flat background, assembled independently."""
    _, ric, _ = curvature_tensors(g)
    X = deturck_vector(g)
    return TensorField(g.grid, -2.0 * ric.data - lie_derivative(X, g).data, (2, 0))


# ---------------------------------------------------------------------------
# time stepping


def cfl_timestep(g, cfl, background=None):
    """``cfl * min(spacing)^2 * lambda_min(g) / (2 n)``."""
    lam = relative_eigenvalues(g, background).min()
    return cfl * g.grid.min_spacing**2 * lam / (2 * g.grid.n)


def _check_state(data, grid):
    if not np.all(np.isfinite(data)):
        raise StabilityError("non-finite metric after step")
    try:
        check_nondegenerate(data)
    except DegenerateMetricError as exc:
        raise StabilityError("metric lost positive-definiteness after step") from exc
    return MetricField(grid, data)


def step(g, dt, background=None):
    """One Heun (RK2) step; symmetry is re-imposed and definiteness checked."""
    bg = _bg(background, g.grid)
    k1 = _rhs(g, bg)
    mid = g.data + dt * k1
    if not np.all(np.isfinite(mid)):
        raise StabilityError("non-finite metric in predictor stage")
    try:
        k2 = _rhs(MetricField(g.grid, mid), bg)
    except DegenerateMetricError as exc:
        raise StabilityError("predictor stage degenerate") from exc
    data = g.data + 0.5 * dt * (k1 + k2)
    data = 0.5 * (data + np.swapaxes(data, 0, 1))
    return _check_state(data, g.grid)


def diagnose(g, t, dt, background=None, orders=4):
    bg = _bg(background, g.grid)
    ev = relative_eigenvalues(g, bg)
    if bg.is_flat:
        norms = flat_derivative_norms(g, g.grid, max(orders, 2))
        sups = [float(np.sqrt(q.max())) for q in norms[:orders]]
        h2 = norms[1]
    else:
        sups = []
        d = g
        for _ in range(orders):
            d = covariant_derivative(d, bg)
            sups.append(float(tensor_norm_h(d, bg).max()))
        h2 = tensor_norm_h(second_covariant_derivative(g, bg), bg) ** 2
    return StepDiagnostics(
        t=float(t),
        dt=float(dt),
        lambda_min=float(ev.min()),
        lambda_max=float(ev.max()),
        sup_grad=tuple(sups),
        hessian_energy=integrate(h2, g.grid, bg),
    )


def _graded_dt(t, cfg):
    if cfg.early_time_refinement is None:
        return np.inf
    return cfg.grade_constant * t ** (1.0 - cfg.early_time_refinement)


def evolve(g0, cfg, background=None, *, t0=0.0, diagnostics=True):
    """Integrate from ``t0`` to ``cfg.t_end``.

    Steps are ``clip(graded, dt_min, min(cfl bound, dt_max))`` and land exactly
    on snapshot times.  A failing step is retried with half the step; below
    ``dt_min`` a ``StabilityError`` carrying the partial trajectory is raised.
    """
    bg = _bg(background, g0.grid)
    traj = FlowTrajectory(background=bg)
    g = g0 if g0.symmetric else g0.symmetrized()
    t = float(t0)
    traj.append(t, g)
    if diagnostics:
        traj.diagnostics.append(diagnose(g, t, 0.0, bg))
    targets = [s for s in cfg.snapshot_times if s > t] + [cfg.t_end]
    steps = 0
    while t < cfg.t_end * (1 - 1e-14):
        if diagnostics:
            lam = traj.diagnostics[-1].lambda_min
            cap = cfg.cfl * g.grid.min_spacing**2 * lam / (2 * g.grid.n)
        else:
            cap = cfl_timestep(g, cfg.cfl, bg)
        if cfg.dt_max is not None:
            cap = min(cap, cfg.dt_max)
        dt = max(min(_graded_dt(t, cfg), cap), cfg.dt_min)
        while targets and targets[0] <= t:
            targets.pop(0)
        land = targets[0]
        if t + dt >= land * (1 - 1e-14):
            dt = land - t
        while True:
            try:
                g_new = step(g, dt, bg)
                break
            except StabilityError as exc:
                dt *= 0.5
                if dt < cfg.dt_min:
                    raise StabilityError(f"step failed at t={t:.6g}: {exc}", trajectory=traj) from exc
        t = land if dt == land - t else t + dt
        g = g_new
        steps += 1
        if diagnostics:
            traj.diagnostics.append(diagnose(g, t, dt, bg))
        at_target = bool(targets) and t == targets[0]
        if at_target or (cfg.store_every and steps % cfg.store_every == 0):
            traj.append(t, g)
        if steps >= cfg.max_steps:
            raise StabilityError("step budget exhausted", trajectory=traj)
    if traj.times[-1] < t:
        traj.append(t, g)
    return traj


# ---------------------------------------------------------------------------
# gauge pullback


@dataclass(frozen=True)
class GaugeMap:
    """``chi_t(x) = x + displacement(x)`` sampled at the grid nodes."""

    time: float
    displacement: np.ndarray


def _sample(field_data, grid, points):
    """Periodic cubic-spline evaluation of each component at ``points``."""
    idx = [points[a] / grid.spacing[a] for a in range(grid.n)]
    comps = field_data.reshape((-1,) + grid.dims)
    out = [ndimage.map_coordinates(c, idx, order=3, mode="grid-wrap") for c in comps]
    return np.asarray(out).reshape(field_data.shape[:-grid.n] + grid.dims)


def _pullback_metric(g, disp):
    if not disp.any():
        return g
    grid = g.grid
    x = np.asarray(grid.coords())
    chi = x + disp
    jac = np.eye(grid.n).reshape((grid.n, grid.n) + (1,) * grid.n) + gradient(disp, grid)  # [i, a]
    g_at = _sample(g.data, grid, chi)
    return MetricField(grid, np.einsum("ia...,jb...,ab...->ij...", jac, jac, g_at))


@dataclass
class PullbackReport:
    times: np.ndarray
    residual: np.ndarray
    unpulled_residual: np.ndarray
    maps: list


def pullback_to_ricci_flow(traj, background=None):
    """Integrate ``d/dt chi = X(chi)`` with ``chi_0 = id`` along the stored
    states and measure how well ``chi^* g`` solves the plain Ricci flow.

    Residuals ``|d/dt (chi^* g) + 2 Ric(chi^* g)|_inf`` use a three-point
    difference in time, so they are reported for interior stored states.
    """
    if len(traj.states) < 3:
        raise ValueError("pullback needs at least three stored states")
    grid = traj.grid
    bg = _bg(background, grid)
    half = 0.5 * min(grid.period)
    x = np.asarray(grid.coords())
    disp = np.zeros((grid.n,) + grid.dims)
    maps = [GaugeMap(traj.times[0], disp.copy())]
    X_prev = deturck_vector(traj.states[0], bg).data
    for k in range(1, len(traj.states)):
        dt = traj.times[k] - traj.times[k - 1]
        X_next = deturck_vector(traj.states[k], bg).data
        v1 = _sample(X_prev, grid, x + disp)
        pred = disp + dt * v1
        v2 = _sample(X_next, grid, x + pred)
        disp = disp + 0.5 * dt * (v1 + v2)
        if np.abs(disp).max() > half:
            raise GaugeBlowupError(f"gauge displacement exceeds half a period at t={traj.times[k]:.6g}")
        maps.append(GaugeMap(traj.times[k], disp.copy()))
        X_prev = X_next

    pulled = [_pullback_metric(g, m.displacement) for g, m in zip(traj.states, maps)]
    times = np.asarray(traj.times)
    res, raw = [], []
    for k in range(1, len(times) - 1):
        res.append(_rf_residual(pulled, times, k))
        raw.append(_rf_residual(traj.states, times, k))
    return PullbackReport(times[1:-1], np.asarray(res), np.asarray(raw), maps)


def _rf_residual(states, times, k):
    """``|d/dt g + 2 Ric(g)|_inf`` at stored state k (nonuniform central difference)."""
    h0, h1 = times[k] - times[k - 1], times[k + 1] - times[k]
    a = -h1 / (h0 * (h0 + h1))
    c = h0 / (h1 * (h0 + h1))
    # the weights sum to zero; differencing first keeps constant states exact
    g = states[k].data
    dg = a * (states[k - 1].data - g) + c * (states[k + 1].data - g)
    _, ric, _ = curvature_tensors(states[k])
    return float(np.abs(dg + 2.0 * ric.data).max())
