"""Rough initial metrics, singular-set masks and the chart-wise mollifier."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import SpecError
from .geometry import (
    MetricField,
    conformal_metric,
    covariant_derivative,
    identity_metric,
    relative_eigenvalues,
    tensor_norm_h,
)

KINDS = ("flat", "conformal_bump", "hoelder_cone", "morrey_family", "random_w1p", "angle_cone")


@dataclass
class InitialDataSpec:
    """Recipe for an initial metric.

    ``exponent`` is the Hoelder exponent delta/p of the profile, so the
    gradient blows up like ``rho ** (exponent - 1)`` at the singular set.
    ``radius`` is the saturation radius of the cone profile (``None`` keeps the
    pure power of the chordal distance) or the circle radius of a
    ``morrey_family`` crease.  ``beta`` is the angle factor of an ``angle_cone``.
    """

    kind: str = "flat"
    centers: tuple = ()
    amplitude: float = 0.0
    exponent: float = 0.5
    lambda_cap: float = 2.0
    seed: int = 0
    radius: float | None = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown initial data kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.exponent <= 1.0:
            raise SpecError(f"exponent must lie in (0, 1], got {self.exponent}")
        if self.lambda_cap <= 1.0:
            raise SpecError("lambda_cap must exceed 1")


@dataclass
class SingularSetMask:
    """Cells flagged as singular together with the exact geometry they sample.

    ``kind`` is one of ``empty``, ``points``, ``curve`` or ``cells``; for points
    and curves ``geometry`` holds the point coordinates (a dense polyline for a
    curve) and distances are measured to it rather than to the flagged cells.
    """

    cells: np.ndarray
    kind: str = "empty"
    geometry: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def is_empty(self):
        return self.kind == "empty" or not self.cells.any()

    @classmethod
    def empty(cls, grid):
        return cls(np.zeros(grid.dims, dtype=bool), "empty")

    @classmethod
    def from_points(cls, grid, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls._from_geometry(grid, pts, "points")

    @classmethod
    def from_segment(cls, grid, a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        m = max(2, int(np.ceil(8 * np.linalg.norm(b - a) / grid.min_spacing)) + 1)
        s = np.linspace(0.0, 1.0, m)[:, None]
        return cls._from_geometry(grid, a + s * (b - a), "curve")

    @classmethod
    def from_circle(cls, grid, center, radius):
        """Circle in the (x1, x2) plane; in 3D it sits at height ``center[2]``."""
        m = max(16, int(np.ceil(8 * 2 * np.pi * radius / grid.min_spacing)))
        th = 2 * np.pi * np.arange(m) / m
        pts = np.tile(np.asarray(center, float), (m, 1))
        pts[:, 0] += radius * np.cos(th)
        pts[:, 1] += radius * np.sin(th)
        return cls._from_geometry(grid, pts, "curve")

    @classmethod
    def from_cells(cls, cells):
        cells = np.asarray(cells, dtype=bool)
        return cls(cells, "cells" if cells.any() else "empty")

    @classmethod
    def _from_geometry(cls, grid, pts, kind):
        pts = np.mod(pts, np.asarray(grid.period))
        dist = _distance_to_points(grid, pts)
        cells = dist < 0.5 * np.sqrt(grid.n) * max(grid.spacing) * (1 + 1e-9)
        mask = cls(cells, kind, pts)
        mask._cache[grid] = dist
        return mask

    def distance(self, grid):
        """Periodic distance from every node to the singular set."""
        if grid in self._cache:
            return self._cache[grid]
        if self.is_empty:
            dist = np.full(grid.dims, np.inf)
        elif self.geometry is not None:
            dist = _distance_to_points(grid, self.geometry)
        else:
            dist = _distance_to_cells(grid, self.cells)
        self._cache[grid] = dist
        return dist


def _distance_to_points(grid, pts):
    dist = np.full(grid.dims, np.inf)
    for p in pts:
        np.minimum(dist, grid.distance(p), out=dist)
    return dist


def _distance_to_cells(grid, cells):
    tiled = np.tile(~cells, (3,) * grid.n)
    d = ndimage.distance_transform_edt(tiled, sampling=grid.spacing)
    core = tuple(slice(k, 2 * k) for k in grid.dims)
    return d[core]


@dataclass
class MollifierConfig:
    """Mollification at scale ``chart_radius / index``.

    The near chart is the ``chart_radius`` neighbourhood of the singular set,
    identified with the unit ball; ``overlap`` is the width of the partition of
    unity ramp at its rim.
    """

    index: int = 1
    chart_radius: float = 1.0
    overlap: float = 0.25

    def __post_init__(self):
        if int(self.index) < 1:
            raise SpecError("mollifier index must be >= 1")
        if not 0.0 < self.overlap < self.chart_radius:
            raise SpecError("need 0 < overlap < chart_radius")

    @property
    def scale(self):
        return self.chart_radius / self.index


# ---------------------------------------------------------------------------
# profiles


def chordal_distance_sq(grid, center):
    """Smooth periodic surrogate for squared distance; equals rho^2 (1 + O(rho^2))."""
    s = np.zeros(grid.dims)
    for x, c, L in zip(grid.coords(), center, grid.period):
        s += (L / np.pi) ** 2 * np.sin(np.pi * (x - c) / L) ** 2
    return s


def cone_profile(s, alpha, radius=None):
    """``rho^alpha`` near the apex, saturating at ``radius^alpha`` far away."""
    if radius is None or not np.isfinite(radius):
        return s ** (0.5 * alpha)
    return radius**alpha * (s / (radius**2 + s)) ** (0.5 * alpha)


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def _default_center(grid):
    return tuple(0.5 * L for L in grid.period)


def make_initial_metric(spec, grid):
    """Build ``(g0, mask)`` for an initial-data recipe on ``grid``.

    Raises ``SpecError`` when the metric would leave the bi-Lipschitz window
    ``[1/lambda_cap, lambda_cap]`` or degenerate.
    """
    n = grid.n
    centers = [tuple(c) for c in spec.centers] or [_default_center(grid)]
    A = spec.amplitude
    alpha = spec.exponent
    mask = SingularSetMask.empty(grid)

    if spec.kind == "flat":
        g = identity_metric(grid)
    elif spec.kind == "conformal_bump":
        phi = np.full(grid.dims, A)
        for x, c, L in zip(grid.coords(), centers[0], grid.period):
            phi = phi * np.sin(2 * np.pi * (x - c) / L)
        g = conformal_metric(grid, phi)
    elif spec.kind == "hoelder_cone":
        apexes = [grid.nearest_node(c) for c in centers]
        s = np.min([chordal_distance_sq(grid, a) for a in apexes], axis=0)
        f = cone_profile(s, alpha, spec.radius)
        if np.any(1.0 + A * f <= 0):
            raise SpecError("cone amplitude makes the metric degenerate")
        g = identity_metric(grid, 1.0) if A == 0 else _scaled_identity(grid, 1.0 + A * f)
        mask = SingularSetMask.from_points(grid, apexes)
    elif spec.kind == "morrey_family":
        R0 = spec.radius or 1.0
        c = grid.nearest_node(centers[0])
        x, L = grid.coords(), grid.period
        chord = [(L[a] / np.pi) ** 2 * np.sin(np.pi * (x[a] - c[a]) / L[a]) ** 2 for a in range(n)]
        # smooth squared distance to the circle of radius R0 in the (x1, x2) plane
        d2 = ((chord[0] + chord[1] - R0**2) / (2 * R0)) ** 2
        if n == 3:
            d2 = d2 + chord[2]
        f = cone_profile(d2, alpha, None)
        g = _scaled_identity(grid, 1.0 + A * f)
        mask = SingularSetMask.from_circle(grid, c, R0)
    elif spec.kind == "random_w1p":
        g = _random_metric(grid, A, alpha, spec.seed)
    elif spec.kind == "angle_cone":
        if n != 2:
            raise SpecError("angle_cone is only defined on 2-tori")
        apex = grid.cell_center(centers[0])
        s = chordal_distance_sq(grid, apex)
        g = conformal_metric(grid, 0.5 * (spec.beta - 1.0) * np.log(s))
        mask = SingularSetMask.from_points(grid, [apex])
    else:  # pragma: no cover - guarded in InitialDataSpec
        raise SpecError(spec.kind)

    lo, hi = bilipschitz_constants(g)
    lam = max(1.0 / lo, hi)
    if lo <= 0 or lam > spec.lambda_cap:
        raise SpecError(
            f"{spec.kind} with amplitude {A} has bi-Lipschitz constant {lam:.4g} "
            f"above lambda_cap={spec.lambda_cap}"
        )
    return g, mask


def _scaled_identity(grid, factor):
    eye = np.eye(grid.n).reshape((grid.n, grid.n) + (1,) * grid.n)
    return MetricField(grid, eye * factor)


def _random_metric(grid, amplitude, alpha, seed):
    """``delta + amplitude * S`` with S a random symmetric field of Hoelder-type
    spectrum ``|k|^-(n/2 + alpha)``, normalised to unit pointwise operator norm."""
    rng = np.random.default_rng(seed)
    n = grid.n
    k = np.meshgrid(*[np.fft.fftfreq(d, 1.0 / d) for d in grid.dims], indexing="ij")
    kk = np.sqrt(sum(ki * ki for ki in k))
    amp = np.where(kk > 0, np.maximum(kk, 1.0) ** -(0.5 * n + alpha), 0.0)
    S = np.zeros((n, n) + grid.dims)
    for i in range(n):
        for j in range(i, n):
            noise = rng.standard_normal(grid.dims)
            comp = np.real(np.fft.ifftn(np.fft.fftn(noise) * amp))
            S[i, j] = comp
            S[j, i] = comp
    ev = np.linalg.eigvalsh(np.moveaxis(S, (0, 1), (-2, -1)))
    S /= np.abs(ev).max()
    if abs(amplitude) >= 1:
        raise SpecError("random_w1p amplitude must be below 1")
    return MetricField(grid, np.eye(n).reshape((n, n) + (1,) * n) + amplitude * S)


def bilipschitz_constants(g, background=None):
    """Extreme eigenvalues of ``g`` relative to ``h`` over all cells."""
    if not np.all(np.isfinite(g.data)):
        raise ValueError("metric has non-finite entries")
    ev = relative_eigenvalues(g, background)
    return float(ev.min()), float(ev.max())


def lipschitz_constant(g, background=None):
    lo, hi = bilipschitz_constants(g, background)
    return max(1.0 / lo, hi)


# ---------------------------------------------------------------------------
# mollification


def mollifier_kernel(grid, radius):
    """Standard bump ``exp(-1/(1-|y|^2))`` at scale ``radius`` on the grid stencil,
    normalised so that the discrete weights sum to one."""
    half = [int(np.floor(radius / h)) for h in grid.spacing]
    axes = [np.arange(-m, m + 1) * h for m, h in zip(half, grid.spacing)]
    y = np.meshgrid(*axes, indexing="ij")
    r2 = sum(yi * yi for yi in y) / radius**2
    w = np.where(r2 < 1, np.exp(-1.0 / np.where(r2 < 1, 1.0 - r2, 1.0)), 0.0)
    if w.sum() == 0:
        w[tuple(half)] = 1.0
    return w / w.sum()


def partition_weight(mask, grid, cfg):
    """Near-chart partition function: 1 within ``chart_radius - overlap`` of the
    singular set, 0 beyond ``chart_radius``."""
    dist = mask.distance(grid)
    return 1.0 - smooth_step((dist - (cfg.chart_radius - cfg.overlap)) / cfg.overlap)


def mollify(g0, mask, cfg):
    """Smooth approximant ``g0 + phi * (eta_{1/i} * g0 - g0)``.

    ``phi`` is the near-chart partition function; the convolution runs with
    the discrete mass-one kernel of radius ``chart_radius / index``.
    """
    grid = g0.grid
    if mask.is_empty:
        return MetricField(grid, g0.data.copy())
    if cfg.chart_radius - cfg.overlap < 2 * max(grid.spacing):
        raise SpecError("chart radius too small to contain the singular set")
    if cfg.chart_radius >= 0.25 * min(grid.period):
        raise SpecError("chart radius must stay below a quarter period")
    w = mollifier_kernel(grid, cfg.scale)
    phi = partition_weight(mask, grid, cfg)
    # convolve differences so that constant components come back bit for bit
    offsets = np.argwhere(w > 0) - np.array(w.shape) // 2
    weights = w[w > 0]
    out = np.empty_like(g0.data)
    n = grid.n
    axes = tuple(range(n))
    for i in range(n):
        for j in range(i, n):
            comp = g0.data[i, j]
            delta = np.zeros_like(comp)
            for off, wk in zip(offsets, weights):
                delta += wk * (np.roll(comp, tuple(-off), axis=axes) - comp)
            out[i, j] = comp + phi * delta
            out[j, i] = out[i, j]
    return MetricField(grid, out)


def c0_distance(g, g0, background=None, region=None):
    d = tensor_norm_h(g.data - g0.data, background or _flat(g.grid))
    if region is not None:
        d = d[region]
    return float(d.max()) if d.size else 0.0


def w1p_distance(g, g0, p, background=None):
    """Discrete ``W^{1,p}`` distance ``(int |g - g0|^p + |nabla(g - g0)|^p)^(1/p)``."""
    bg = background or _flat(g.grid)
    diff = MetricField(g.grid, g.data - g0.data)
    d0 = tensor_norm_h(diff, bg)
    d1 = tensor_norm_h(covariant_derivative(diff, bg), bg)
    vol = g.grid.cell_volume
    return float((np.sum(d0**p + d1**p) * vol) ** (1.0 / p))


def _flat(grid):
    from .geometry import flat_background

    return flat_background(grid)
