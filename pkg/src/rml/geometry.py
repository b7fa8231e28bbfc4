"""Periodic grids and discrete tensor calculus.

Tensor components are stored *component axes first*, spatial axes last: a
covariant 2-tensor on an n-torus with ``dims`` cells per axis has shape
``(n, n, *dims)``.  Christoffel symbols are stored as ``[k, i, j]`` for
``Gamma^k_ij`` and a covariant derivative puts the new derivative index in
front, so ``nabla g`` is ``[m, i, j]`` for ``nabla_m g_ij``.

All derivatives are second-order central differences on the periodic grid.
Pure second derivatives use the compact three-point stencil, mixed ones the
four-corner stencil.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from math import factorial, prod

import numpy as np

from .errors import DegenerateMetricError, SpecError

PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    n: int
    dims: tuple
    spacing: tuple

    @property
    def period(self):
        return tuple(d * h for d, h in zip(self.dims, self.spacing))

    @property
    def size(self):
        return prod(self.dims)

    @property
    def cell_volume(self):
        return prod(self.spacing)

    @property
    def min_spacing(self):
        return min(self.spacing)

    def coords(self):
        """Node coordinates ``x_i = index * spacing`` as a list of n arrays."""
        axes = [np.arange(d) * h for d, h in zip(self.dims, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    def displacement(self, center):
        """Minimal-image displacement ``x - center`` per axis."""
        out = []
        for x, c, L in zip(self.coords(), center, self.period):
            d = (x - c + 0.5 * L) % L - 0.5 * L
            out.append(d)
        return out

    def distance(self, center):
        """Periodic Euclidean distance from every node to ``center``."""
        return np.sqrt(sum(d * d for d in self.displacement(center)))

    def nearest_node(self, point):
        return tuple((np.round(p / h) * h) % L for p, h, L in zip(point, self.spacing, self.period))

    def cell_center(self, point):
        """Snap ``point`` to the nearest cell centre, half a cell off the nodes."""
        out = []
        for p, h, L in zip(point, self.spacing, self.period):
            out.append(((np.floor(p / h) + 0.5) * h) % L)
        return tuple(out)


def build_grid(n, dims, spacing):
    if n not in (2, 3):
        raise SpecError(f"dimension must be 2 or 3, got {n}")
    dims = tuple(int(d) for d in np.broadcast_to(dims, (n,)))
    spacing = tuple(float(h) for h in np.broadcast_to(spacing, (n,)))
    if any(d < 8 for d in dims):
        raise SpecError(f"each axis needs at least 8 cells, got {dims}")
    if any(not np.isfinite(h) or h <= 0 for h in spacing):
        raise SpecError(f"spacing must be positive, got {spacing}")
    return Grid(n, dims, spacing)


def torus_grid(n, cells, period=2 * np.pi):
    """Cubic torus with ``cells`` per axis and side length ``period``."""
    return build_grid(n, (cells,) * n, (period / cells,) * n)


@dataclass
class TensorField:
    """Grid-sampled tensor.  ``valence`` is (covariant rank, contravariant rank);
    contravariant indices come first in ``data``."""

    grid: Grid
    data: np.ndarray
    valence: tuple = (0, 0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        rank = sum(self.valence)
        expected = (self.grid.n,) * rank + self.grid.dims
        if self.data.shape != expected:
            raise ValueError(f"tensor data shape {self.data.shape} != {expected}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("tensor field has non-finite entries")

    @property
    def rank(self):
        return sum(self.valence)


@dataclass
class MetricField(TensorField):
    valence: tuple = (2, 0)
    symmetric: bool = field(init=False, default=False)

    def __post_init__(self):
        super().__post_init__()
        if self.valence != (2, 0):
            raise ValueError("a metric is a covariant 2-tensor")
        self.symmetric = bool(np.array_equal(self.data, self.data.swapaxes(0, 1)))

    def symmetrized(self):
        """Copy with ``g_ji`` set to ``g_ij`` for ``i < j`` (upper triangle wins)."""
        d = self.data.copy()
        for i in range(self.grid.n):
            for j in range(i + 1, self.grid.n):
                d[j, i] = d[i, j]
        return MetricField(self.grid, d)


def identity_metric(grid, scale=1.0):
    eye = np.eye(grid.n).reshape((grid.n, grid.n) + (1,) * grid.n)
    return MetricField(grid, scale * np.broadcast_to(eye, (grid.n, grid.n) + grid.dims).copy())


def conformal_metric(grid, phi):
    """``exp(2 phi) * delta`` for a scalar field ``phi``."""
    eye = np.eye(grid.n).reshape((grid.n, grid.n) + (1,) * grid.n)
    return MetricField(grid, eye * np.exp(2.0 * phi))


# ---------------------------------------------------------------------------
# finite differences


def _axis(arr, grid, i):
    return arr.ndim - grid.n + i


def diff(arr, grid, i):
    """Periodic central difference along axis ``i``."""
    arr = np.asarray(arr, dtype=float)
    out = np.empty_like(arr)
    a = np.moveaxis(arr, _axis(arr, grid, i), 0)
    o = np.moveaxis(out, _axis(arr, grid, i), 0)
    np.subtract(a[2:], a[:-2], out=o[1:-1])
    np.subtract(a[1], a[-1], out=o[0])
    np.subtract(a[0], a[-2], out=o[-1])
    out *= 0.5 / grid.spacing[i]
    return out


def diff2(arr, grid, i, j):
    """Second difference: compact three-point stencil for i == j, the
    four-corner stencil (composition of central differences) otherwise."""
    if i != j:
        i, j = min(i, j), max(i, j)
        return diff(diff(arr, grid, i), grid, j)
    arr = np.asarray(arr, dtype=float)
    out = np.empty_like(arr)
    a = np.moveaxis(arr, _axis(arr, grid, i), 0)
    o = np.moveaxis(out, _axis(arr, grid, i), 0)
    np.add(a[2:], a[:-2], out=o[1:-1])
    np.add(a[1], a[-1], out=o[0])
    np.add(a[0], a[-2], out=o[-1])
    out -= 2.0 * arr
    out *= 1.0 / grid.spacing[i] ** 2
    return out


def gradient(arr, grid):
    """Stack of first differences, derivative index first."""
    return np.stack([diff(arr, grid, i) for i in range(grid.n)])


def hessian(arr, grid):
    """Second differences ``[a, b, ...]``; exactly symmetric in (a, b)."""
    n = grid.n
    out = np.empty((n, n) + arr.shape)
    for a in range(n):
        for b in range(a, n):
            out[a, b] = diff2(arr, grid, a, b)
            if b != a:
                out[b, a] = out[a, b]
    return out


# ---------------------------------------------------------------------------
# per-cell linear algebra


def _cells_last(a):
    return np.moveaxis(a, (0, 1), (-2, -1))


def _cells_first(a):
    return np.moveaxis(a, (-2, -1), (0, 1))


def determinant(g):
    """Per-cell determinant of a component-first ``(n, n, *dims)`` array."""
    g = np.asarray(g)
    if g.shape[0] == 2:
        return g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    if g.shape[0] == 3:
        return (
            g[0, 0] * (g[1, 1] * g[2, 2] - g[1, 2] * g[2, 1])
            - g[0, 1] * (g[1, 0] * g[2, 2] - g[1, 2] * g[2, 0])
            + g[0, 2] * (g[1, 0] * g[2, 1] - g[1, 1] * g[2, 0])
        )
    return np.linalg.det(_cells_last(g))


def _pivots(g):
    """Cholesky pivots ``D_k / D_{k-1}`` from leading principal minors."""
    g = np.asarray(g)
    if g.shape[0] == 2:
        return [g[0, 0], determinant(g) / g[0, 0]]
    if g.shape[0] == 3:
        d2 = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        return [g[0, 0], d2 / g[0, 0], determinant(g) / d2]
    chol = np.linalg.cholesky(_cells_last(g))
    return list(np.moveaxis(np.diagonal(chol, axis1=-2, axis2=-1) ** 2, -1, 0))


def check_nondegenerate(g):
    """Raise unless every cell of the symmetric array ``g`` is positive-definite
    with Cholesky pivots above ``PIVOT_TOL`` relative to its largest diagonal entry."""
    g = np.asarray(g)
    n = g.shape[0]
    scale = np.max([np.abs(g[i, i]) for i in range(n)], axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        try:
            piv = _pivots(g)
        except np.linalg.LinAlgError as exc:
            raise DegenerateMetricError("metric is not positive-definite") from exc
        for d in piv:
            if not np.all(d > PIVOT_TOL * scale):
                raise DegenerateMetricError("metric is not positive-definite")


def inverse(g, check=True):
    """Per-cell inverse (adjugate formula for n = 2, 3)."""
    g = np.asarray(g)
    if check:
        check_nondegenerate(g)
    n = g.shape[0]
    if n == 2:
        det = determinant(g)
        return np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det
    if n == 3:
        adj = np.empty_like(g)
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = g[r[0], c[0]] * g[r[1], c[1]] - g[r[0], c[1]] * g[r[1], c[0]]
                adj[i, j] = minor if (i + j) % 2 == 0 else -minor
        return adj / determinant(g)
    return _cells_first(np.linalg.inv(_cells_last(g)))


def symmetric_eigenvalues(m):
    """Ascending eigenvalues of symmetric per-cell matrices, shape ``dims + (n,)``.

    Closed forms for n = 2 (quadratic) and n = 3 (trigonometric); the 3x3
    formula is accurate to a few ulps relative to the spectral radius.
    """
    m = np.asarray(m)
    n = m.shape[0]
    if n == 2:
        mean = 0.5 * (m[0, 0] + m[1, 1])
        rad = np.hypot(0.5 * (m[0, 0] - m[1, 1]), m[0, 1])
        return np.stack([mean - rad, mean + rad], axis=-1)
    if n == 3:
        q = (m[0, 0] + m[1, 1] + m[2, 2]) / 3.0
        off = m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2
        p2 = sum((m[i, i] - q) ** 2 for i in range(3)) + 2 * off
        p = np.sqrt(p2 / 6.0)
        safe = np.where(p > 0, p, 1.0)
        B = (m - q * np.eye(3).reshape((3, 3) + (1,) * (m.ndim - 2))) / safe
        r = np.clip(0.5 * determinant(B), -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        e3 = q + 2 * p * np.cos(phi)
        e1 = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
        e2 = 3 * q - e1 - e3
        return np.sort(np.stack([e1, e2, e3], axis=-1), axis=-1)
    return np.linalg.eigvalsh(_cells_last(m))


def _data(t):
    return t.data if isinstance(t, TensorField) else np.asarray(t)


# ---------------------------------------------------------------------------
# background geometry


@dataclass
class BackgroundGeometry:
    metric: MetricField
    christoffels: TensorField
    riemann: TensorField
    curvature_bounds: tuple
    is_flat: bool = False

    def __post_init__(self):
        self.inverse = inverse(self.metric.data)
        self.volume_density = np.sqrt(determinant(self.metric.data))

    @property
    def grid(self):
        return self.metric.grid


def flat_background(grid):
    n = grid.n
    return BackgroundGeometry(
        metric=identity_metric(grid),
        christoffels=TensorField(grid, np.zeros((n,) * 3 + grid.dims), (2, 1)),
        riemann=TensorField(grid, np.zeros((n,) * 4 + grid.dims), (4, 0)),
        curvature_bounds=(0.0, 0.0, 0.0),
        is_flat=True,
    )


def background_from_metric(h, orders=2):
    """Background geometry of a smooth metric ``h`` with bounds ``k_0..k_orders``."""
    riemann, _, _ = curvature_tensors(h)
    bg = BackgroundGeometry(h, christoffels(h), riemann, (), is_flat=False)
    bounds = [float(tensor_norm_h(riemann, bg).max())]
    for k in range(1, orders + 1):
        bounds.append(float(tensor_norm_h(covariant_derivative(riemann, bg, k), bg).max()))
    bg.curvature_bounds = tuple(bounds)
    return bg


def relative_eigenvalues(g, background=None):
    """Eigenvalues of ``g`` relative to ``h`` per cell, shape ``dims + (n,)``."""
    g = _data(g)
    if background is None or background.is_flat:
        return symmetric_eigenvalues(g)
    m = _cells_last(g)
    L = np.linalg.cholesky(_cells_last(background.metric.data))
    Linv = np.linalg.inv(L)
    return np.linalg.eigvalsh(Linv @ m @ np.swapaxes(Linv, -1, -2))


# ---------------------------------------------------------------------------
# connection and curvature


def lower_christoffels(g, grid):
    """``Gamma_{l,ij} = (d_i g_jl + d_j g_il - d_l g_ij) / 2`` as ``[l, i, j]``."""
    dg = gradient(g, grid)
    return 0.5 * (np.einsum("ijl...->lij...", dg) + np.einsum("jil...->lij...", dg) - dg)


def christoffels(g):
    """Christoffel symbols ``[k, i, j]`` of a metric field."""
    check_nondegenerate(g.data)
    ginv = inverse(g.data, check=False)
    low = lower_christoffels(g.data, g.grid)
    return TensorField(g.grid, np.einsum("kl...,lij...->kij...", ginv, low), (2, 1))


def _letters(count, skip=""):
    pool = [c for c in string.ascii_lowercase if c not in skip]
    return pool[:count]


def _connection_terms(T, gamma):
    """``sum_a Gamma^p_{m i_a} T_{..p..}`` with the derivative index m first."""
    r = T.ndim - gamma.ndim + 3
    idx = _letters(r, skip="mpz")
    out = np.zeros((gamma.shape[0],) + T.shape)
    for a in range(r):
        src = idx.copy()
        src[a] = "p"
        spec = f"pm{idx[a]}...,{''.join(src)}...->m{''.join(idx)}..."
        out += np.einsum(spec, gamma, T)
    return out


def covariant_derivative(T, background, order=1):
    """``nabla^k T`` for a covariant tensor; the new indices come first.

    On a flat background this is the k-fold central difference.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if isinstance(T, TensorField) and T.valence[1] != 0:
        raise ValueError("covariant_derivative expects a covariant tensor")
    grid = T.grid if isinstance(T, TensorField) else background.grid
    data = _data(T)
    cov = T.valence[0] if isinstance(T, TensorField) else data.ndim - grid.n
    for _ in range(order):
        d = gradient(data, grid)
        if not background.is_flat:
            d = d - _connection_terms(data, background.christoffels.data)
        data = d
        cov += 1
    return TensorField(grid, data, (cov, 0))


def second_covariant_derivative(T, background):
    """``nabla_p nabla_q T`` using compact stencils for the pure second differences."""
    grid = background.grid
    data = _data(T)
    H = hessian(data, grid)
    if background.is_flat:
        return H
    gamma = background.christoffels.data
    conn = _connection_terms(data, gamma)
    first = gradient(data, grid) - conn
    return H - gradient(conn, grid) - _connection_terms(first, gamma)


def curvature_tensors(g):
    """Riemann ``R_abcd``, Ricci and scalar curvature of a metric field.

    Sign convention: ``R_abcd = K (g_ac g_bd - g_ad g_bc)`` on a space form and
    ``Ric_bd = g^ac R_abcd``.  Returns ``(riemann, ricci, scalar)`` with the
    scalar curvature as a plain array.
    """
    grid = g.grid
    check_nondegenerate(g.data)
    ginv = inverse(g.data, check=False)
    H = hessian(g.data, grid)
    # P_abcd = d_b d_c g_ad + d_a d_d g_bc
    P = np.einsum("bcad...->abcd...", H) + np.einsum("adbc...->abcd...", H)
    Q = np.einsum("bacd...->abcd...", P)
    low = lower_christoffels(g.data, grid)
    up = np.einsum("kl...,lij...->kij...", ginv, low)
    T = np.einsum("fbc...,fad...->abcd...", low, up)
    rm = 0.5 * (P - Q) + (T - np.einsum("abdc...->abcd...", T))
    ric = np.einsum("ac...,abcd...->bd...", ginv, rm)
    scalar = np.einsum("bd...,bd...->...", ginv, ric)
    return TensorField(grid, rm, (4, 0)), TensorField(grid, ric, (2, 0)), scalar


def tensor_norm_h(T, background):
    """Pointwise norm measured in ``h``: all indices contracted with h or h^-1."""
    data = _data(T)
    grid = background.grid
    if background.is_flat:
        rank = data.ndim - grid.n
        return np.sqrt(np.sum(data * data, axis=tuple(range(rank))))
    cov, contra = T.valence if isinstance(T, TensorField) else (data.ndim - grid.n, 0)
    other = data
    for a in range(cov + contra):
        mat = background.inverse if a >= contra else background.metric.data
        other = np.moveaxis(np.einsum("ab...,b...->a...", mat, np.moveaxis(other, a, 0)), 0, a)
    rank = cov + contra
    return np.sqrt(np.maximum(np.sum(data * other, axis=tuple(range(rank))), 0.0))


def _symmetric_stack(g):
    """Upper-triangle components of a symmetric 2-tensor and their multiplicities."""
    n = g.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    stack = np.stack([g[i, j] for i, j in pairs])
    w = np.array([1.0 if i == j else 2.0 for i, j in pairs])
    return stack, w.reshape((-1,) + (1,) * (g.ndim - 2))


def flat_derivative_norms(g, grid, orders=4):
    """Pointwise ``|d^k g|^2`` for k = 1..orders of a symmetric 2-tensor on a
    flat background, using each distinct (sorted) derivative multi-index once."""
    stack, w = _symmetric_stack(_data(g))
    w = w.ravel()
    keys, level = [()], stack[None]
    out = []
    for k in range(1, orders + 1):
        if k > 1 and not level.any():
            out.append(np.zeros(grid.dims))
            continue
        new_keys, parts = [], []
        for a in range(grid.n):
            rows = [r for r, idx in enumerate(keys) if not idx or idx[-1] <= a]
            parts.append(diff(level[rows], grid, a))
            new_keys += [keys[r] + (a,) for r in rows]
        level, keys = np.concatenate(parts), new_keys
        mult = np.array(
            [factorial(k) / prod(factorial(c) for c in np.bincount(idx, minlength=grid.n)) for idx in keys]
        )
        out.append(np.tensordot(np.outer(mult, w), level * level, axes=2))
    return out


def sup_norm(T, background):
    return float(tensor_norm_h(T, background).max())


def integrate(f, grid, background=None):
    """Cell-midpoint quadrature of a scalar field against ``dmu_h``."""
    if background is not None and not background.is_flat:
        f = f * background.volume_density
    return float(np.sum(f) * grid.cell_volume)
