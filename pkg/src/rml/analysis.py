"""Meters: Morrey functional, power-law fits, tube-volume codimension and
convergence of a flow back to its initial data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from .geometry import (
    covariant_derivative,
    flat_background,
    flat_derivative_norms,
    tensor_norm_h,
)

ZERO_FLOOR = np.finfo(float).tiny


@dataclass
class MorreyReport:
    """Scale-dependent averages ``sup_x avg_{B(x,r)} |nabla g|^p`` and the fitted
    law ``avg ~ L0 * r**(delta - p)``.

    The supremum runs over a finite set of centres and radii, so every report
    under-approximates the continuum functional (``under_approximation``).
    """

    p: float
    delta_fit: float
    L0_fit: float
    r0: float
    radii: np.ndarray
    averages: np.ndarray
    slope: float
    under_approximation: bool = True

    def constant(self, delta):
        """Smallest ``L`` with ``avg(r) <= L * r**(delta - p)`` on the table."""
        return float(np.max(self.averages * self.radii ** (self.p - delta)))

    def table(self):
        return list(zip(self.radii.tolist(), self.averages.tolist()))


def gradient_power(g, background, p):
    """Pointwise ``|nabla g|_h^p``."""
    if background.is_flat:
        return flat_derivative_norms(g, g.grid, 1)[0] ** (0.5 * p)
    return tensor_norm_h(covariant_derivative(g, background), background) ** p


def ball_averages(f, grid, radius, weights=None):
    """Average of ``f`` over every periodic ball ``|x - c| < radius`` (FFT).

    ``weights`` is the volume density for curved backgrounds.
    """
    offsets = grid.displacement(tuple(0.0 for _ in range(grid.n)))
    r2 = sum(d * d for d in offsets)
    disk = (r2 < radius * radius).astype(float)
    if weights is None:
        weights = np.ones(grid.dims)
    axes = tuple(range(grid.n))
    fd = np.fft.rfftn(disk)
    num = np.fft.irfftn(np.fft.rfftn(f * weights) * fd, s=grid.dims, axes=axes)
    den = np.fft.irfftn(np.fft.rfftn(weights) * fd, s=grid.dims, axes=axes)
    return np.maximum(num, 0.0) / den


def check_radii(grid, radii):
    lo, hi = 4 * max(grid.spacing), 0.25 * min(grid.period)
    bad = [r for r in radii if not lo * (1 - 1e-12) <= r <= hi * (1 + 1e-12)]
    if bad or not radii:
        raise SpecError(f"radii {bad or radii} outside the window [{lo:.4g}, {hi:.4g}]")


def dyadic_radii(grid, count=4, base=None):
    """``base * 2**k`` for k < count, starting at four cells and capped at a quarter period."""
    base = base or 4 * max(grid.spacing)
    hi = 0.25 * min(grid.period)
    return [base * 2**k for k in range(count) if base * 2**k <= hi]


def morrey_functional(g, background=None, p=2.0, radii=None, full_sweep=False):
    """Estimate the Morrey data ``(L0, delta)`` of ``|nabla g|^p``.

    Centres are every second grid node unless ``full_sweep``.
    """
    if p < 1:
        raise SpecError("Morrey exponent p must be >= 1")
    grid = g.grid
    bg = background or flat_background(grid)
    radii = list(radii) if radii is not None else dyadic_radii(grid)
    check_radii(grid, radii)
    f = gradient_power(g, bg, p)
    w = None if bg.is_flat else bg.volume_density
    stride = (slice(None),) * grid.n if full_sweep else (slice(None, None, 2),) * grid.n
    avgs = np.array([ball_averages(f, grid, r, w)[stride].max() for r in radii])
    radii = np.asarray(radii, dtype=float)
    if np.all(avgs <= ZERO_FLOOR) or len(radii) < 2:
        slope, L0 = 0.0, ZERO_FLOOR
        if avgs.max() > ZERO_FLOOR:
            L0 = float(avgs.max())
    else:
        slope, icpt = np.polyfit(np.log(radii), np.log(np.maximum(avgs, ZERO_FLOOR)), 1)
        L0 = float(np.exp(icpt))
    delta = float(np.clip(p + slope, np.nextafter(0.0, 1.0), p))
    return MorreyReport(p, delta, L0, float(radii.max()), radii, avgs, float(slope))


def fit_decay_exponent(t, values, window=(0.0, np.inf), min_samples=8):
    """Least-squares ``log v = slope * log t + intercept`` over ``window``.

    Returns ``(slope, intercept, r2)``.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = (t >= window[0]) & (t <= window[1]) & (t > 0)
    if sel.sum() < min_samples:
        raise ValueError(f"need at least {min_samples} samples in the window, got {int(sel.sum())}")
    if np.any(v[sel] <= 0):
        raise ValueError("values must be positive inside the fit window")
    x, y = np.log(t[sel]), np.log(v[sel])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def log_spaced_samples(t, values, window, count=33):
    """Thin a time series to the samples nearest ``count`` log-spaced times so
    that each decade carries the same weight in a fit."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = (t >= window[0]) & (t <= window[1]) & (t > 0)
    t, v = t[sel], v[sel]
    targets = np.log(np.geomspace(window[0], window[1], count))
    idx = np.unique([int(np.argmin(np.abs(np.log(t) - x))) for x in targets])
    return t[idx], v[idx]


@dataclass
class CodimReport:
    epsilons: np.ndarray
    volumes: np.ndarray
    d0: float
    b: float
    C: float


def tube_volume_codimension(mask, grid, epsilons):
    """Fit ``Vol(Sigma(eps)) ~ C eps^d0`` from tube volumes ``cell volume * #{dist < eps}``."""
    if mask.is_empty:
        raise SpecError("codimension of an empty singular set is undefined")
    eps = np.sort(np.asarray(epsilons, dtype=float))
    if eps[0] < 2 * max(grid.spacing) * (1 - 1e-12):
        raise SpecError("tube radii must be at least two cells")
    dist = mask.distance(grid)
    vols = np.array([grid.cell_volume * np.count_nonzero(dist < e) for e in eps])
    d0, _ = np.polyfit(np.log(eps), np.log(vols), 1)
    d0 = max(float(d0), 0.0)
    return CodimReport(eps, vols, d0, float(eps.max()), float(np.max(vols / eps**d0)))


@dataclass(frozen=True)
class ConvergenceRow:
    t: float
    c0_global: float
    c0_away: float
    c1_away: float
    c2_away: float


def convergence_meter(traj, g0, exclusion, margin, background=None):
    """Distances of every stored state to ``g0``: global C0, and C0/C1/C2 on the
    set further than ``margin`` from the exclusion mask."""
    grid = g0.grid
    bg = background or flat_background(grid)
    away = exclusion.distance(grid) > margin
    rows = []
    for t, g in zip(traj.times, traj.states):
        diff = g.data - g0.data
        c0 = tensor_norm_h(diff, bg)
        if bg.is_flat:
            d1sq, d2sq = flat_derivative_norms(diff, grid, 2)
            c1, c2 = np.sqrt(d1sq), np.sqrt(d2sq)
        else:
            d1 = covariant_derivative(type(g0)(grid, diff), bg)
            c1 = tensor_norm_h(d1, bg)
            c2 = tensor_norm_h(covariant_derivative(d1, bg), bg)

        def sup(a):
            return float(a[away].max()) if away.any() else 0.0

        rows.append(ConvergenceRow(t, float(c0.max()), sup(c0), sup(c1), sup(c2)))
    return rows
