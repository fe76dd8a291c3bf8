"""Uniform phase-space grids and the fiberwise Fourier transform pair.

Conventions on a fiber over q (n = chart dimension):

    F a(q, p)    = (2 pi)^-n  sum_X exp(-i p.X) a(q, X) sqrt(g(q)) dX^n
    F^-1 b(q, X) =            sum_p exp(+i p.X) b(q, p) dp^n / sqrt(g(q))

The momentum grid is cell-centred and symmetric about zero.  The fiber grid
is X_m = (m - count // 2) dX with dX dp = 2 pi / count, so it contains X = 0
and the two sums are exact inverses of each other.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .errors import SamplingError, ShapeError
from .geometry import MetricChart


@dataclass(frozen=True)
class UniformAxis:
    start: float
    step: float
    count: int

    @classmethod
    def cells(cls, lo, hi, count):
        """Cell-centred nodes lo + (k + 1/2) h on [lo, hi]."""
        h = (hi - lo) / count
        return cls(lo + 0.5 * h, h, int(count))

    @classmethod
    def symmetric(cls, half_width, count):
        return cls.cells(-half_width, half_width, count)

    @classmethod
    def reciprocal(cls, other: "UniformAxis"):
        """Zero-containing axis with step 2 pi / (count * other.step)."""
        step = 2 * np.pi / (other.count * other.step)
        return cls(-(other.count // 2) * step, step, other.count)

    @property
    def nodes(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    @property
    def lo(self):
        return self.start - 0.5 * self.step

    @property
    def hi(self):
        return self.start + (self.count - 0.5) * self.step

    @property
    def length(self):
        return self.count * self.step

    @property
    def is_symmetric(self):
        return abs(self.start + (self.start + (self.count - 1) * self.step)) <= 1e-12 * (1 + abs(self.start))

    def to_dict(self):
        return {"start": self.start, "step": self.step, "count": self.count}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["start"]), float(d["step"]), int(d["count"]))


def _axes(axes) -> tuple:
    return tuple(axes)


def mesh(axes: Sequence[UniformAxis]) -> np.ndarray:
    """Stack of node coordinates, shape (*counts, len(axes))."""
    grids = np.meshgrid(*[a.nodes for a in axes], indexing="ij")
    return np.stack(grids, axis=-1)


def _check_counts(axes, what):
    for a in axes:
        if a.count < 8:
            raise ShapeError(f"{what} axes need at least 8 nodes, got {a.count}")


@dataclass(frozen=True, eq=False)
class SymbolGrid:
    chart: MetricChart
    q_axes: tuple
    p_axes: tuple
    values: np.ndarray
    band_limit: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "q_axes", _axes(self.q_axes))
        object.__setattr__(self, "p_axes", _axes(self.p_axes))
        n = self.chart.dim
        if len(self.q_axes) != n or len(self.p_axes) != n:
            raise ShapeError("symbol grids need one q axis and one p axis per chart dimension")
        _check_counts(self.q_axes + self.p_axes, "symbol")
        if not all(a.is_symmetric for a in self.p_axes):
            raise ShapeError("momentum axes must be symmetric about 0")
        shape = tuple(a.count for a in self.q_axes + self.p_axes)
        vals = np.asarray(self.values)
        if vals.shape != shape:
            raise ShapeError(f"values have shape {vals.shape}, grid expects {shape}")
        object.__setattr__(self, "values", vals)

    def with_values(self, values):
        return SymbolGrid(self.chart, self.q_axes, self.p_axes, values, self.band_limit)

    def same_grid(self, other) -> bool:
        return (self.chart is other.chart and self.q_axes == other.q_axes
                and self.p_axes == other.p_axes)

    @property
    def cell(self) -> float:
        return float(np.prod([a.step for a in self.q_axes + self.p_axes]))

    def integral(self, hbar=None):
        """Riemann sum of the values over dq dp, divided by (2 pi hbar)^n if given."""
        total = self.values.sum() * self.cell
        if hbar is not None:
            total = total / (2 * np.pi * hbar) ** self.chart.dim
        return total

    def descriptor(self):
        return {
            "chart": self.chart.name,
            "q": [a.to_dict() for a in self.q_axes],
            "p": [a.to_dict() for a in self.p_axes],
            "band_limit": self.band_limit,
        }


@dataclass(frozen=True, eq=False)
class FiberFunctionGrid:
    chart: MetricChart
    q_axes: tuple
    X_axes: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_axes", _axes(self.q_axes))
        object.__setattr__(self, "X_axes", _axes(self.X_axes))
        shape = tuple(a.count for a in self.q_axes + self.X_axes)
        vals = np.asarray(self.values)
        if vals.shape != shape:
            raise ShapeError(f"values have shape {vals.shape}, grid expects {shape}")
        object.__setattr__(self, "values", vals)

    def with_values(self, values):
        return FiberFunctionGrid(self.chart, self.q_axes, self.X_axes, values)

    def same_grid(self, other) -> bool:
        return (self.chart is other.chart and self.q_axes == other.q_axes
                and self.X_axes == other.X_axes)

    def momentum_axes(self):
        out = []
        for a in self.X_axes:
            dp = 2 * np.pi / (a.count * a.step)
            out.append(UniformAxis.symmetric(0.5 * a.count * dp, a.count))
        return tuple(out)


@dataclass(frozen=True, eq=False)
class KernelGrid:
    """Kernel values k(x_i, x_j) on a product grid.

    ``values`` is an (N, N) dense array or scipy sparse array, with nodes in
    C order over ``x_axes``.  ``inadmissible`` counts node pairs that were
    zeroed because the inverse of Phi was not available there.
    """

    chart: MetricChart
    x_axes: tuple
    hbar: float
    values: object
    inadmissible: int = 0
    truncated: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x_axes", _axes(self.x_axes))
        N = self.size
        if self.values.shape != (N, N):
            raise ShapeError(f"kernel shape {self.values.shape} does not match {N} nodes")

    @property
    def size(self) -> int:
        return int(np.prod([a.count for a in self.x_axes]))

    @property
    def nodes(self) -> np.ndarray:
        return mesh(self.x_axes).reshape(-1, self.chart.dim)

    def dense(self) -> np.ndarray:
        v = self.values
        return v.toarray() if hasattr(v, "toarray") else np.asarray(v)

    def with_values(self, values, **kw):
        args = dict(inadmissible=self.inadmissible, truncated=self.truncated, meta=dict(self.meta))
        args.update(kw)
        return KernelGrid(self.chart, self.x_axes, self.hbar, values, **args)


def sample_symbol(chart: MetricChart, fn: Callable, q_axes, p_axes, band_limit=None) -> SymbolGrid:
    """Evaluate ``fn(q, p)`` on the grid; q and p have shape (*grid, n)."""
    q_axes, p_axes = _axes(q_axes), _axes(p_axes)
    n = chart.dim
    pts = mesh(q_axes + p_axes)
    vals = np.asarray(fn(pts[..., :n], pts[..., n:]))
    shape = pts.shape[:-1]
    vals = np.broadcast_to(vals, shape).copy()
    if not np.all(np.isfinite(vals)):
        raise SamplingError("symbol is not finite at every grid node")
    return SymbolGrid(chart, q_axes, p_axes, vals, band_limit)


def _fiber_sqrt_g(chart, q_axes):
    q = mesh(q_axes)
    return np.sqrt(np.linalg.det(chart.g(q)))


def _apply_fiber_matrices(values, mats, n):
    out = values
    for k, m in enumerate(mats):
        out = np.moveaxis(np.tensordot(out, m, axes=([n + k], [1])), -1, n + k)
    return out


def fiber_fourier(chart: MetricChart, f: FiberFunctionGrid) -> SymbolGrid:
    """X -> p transform with the (2 pi)^-n and sqrt(g(q)) factors."""
    if f.chart is not chart:
        raise ShapeError("fiber function belongs to another chart")
    n = chart.dim
    p_axes = f.momentum_axes()
    mats = []
    for xa, pa in zip(f.X_axes, p_axes):
        if abs(xa.step * pa.step * xa.count - 2 * np.pi) > 1e-12 * 2 * np.pi:
            raise ShapeError("fiber and momentum steps violate dX dp = 2 pi / count")
        mats.append(np.exp(-1j * np.outer(pa.nodes, xa.nodes)) * xa.step / (2 * np.pi))
    sg = _fiber_sqrt_g(chart, f.q_axes)
    vals = _apply_fiber_matrices(f.values, mats, n) * sg.reshape(sg.shape + (1,) * n)
    return SymbolGrid(chart, f.q_axes, p_axes, vals)


def fiber_fourier_inverse(chart: MetricChart, a: SymbolGrid) -> FiberFunctionGrid:
    """p -> X transform, exact inverse of ``fiber_fourier`` on the grid."""
    if a.chart is not chart:
        raise ShapeError("symbol belongs to another chart")
    n = chart.dim
    X_axes = tuple(UniformAxis.reciprocal(pa) for pa in a.p_axes)
    mats = [np.exp(1j * np.outer(xa.nodes, pa.nodes)) * pa.step for xa, pa in zip(X_axes, a.p_axes)]
    sg = _fiber_sqrt_g(chart, a.q_axes)
    vals = _apply_fiber_matrices(a.values, mats, n) / sg.reshape(sg.shape + (1,) * n)
    return FiberFunctionGrid(chart, a.q_axes, X_axes, vals)


def fiber_convolution(chart: MetricChart, f1: FiberFunctionGrid, f2: FiberFunctionGrid) -> FiberFunctionGrid:
    """(f1 * f2)(q, X) = sum_Y f1(q, Y) f2(q, X - Y) sqrt(g(q)) dY^n.

    Terms with X - Y off the grid are dropped, so the result is exact for
    fiber supports that fit in half the grid.
    """
    if not f1.same_grid(f2) or f1.chart is not chart:
        raise ShapeError("convolution needs identical grids")
    n = chart.dim
    axes = tuple(range(n, 2 * n))
    full = fftconvolve(f1.values, f2.values, mode="full", axes=axes)
    index = [slice(None)] * (2 * n)
    for k, xa in enumerate(f1.X_axes):
        c = xa.count // 2
        index[n + k] = slice(c, c + xa.count)
    out = full[tuple(index)]
    if np.isrealobj(f1.values) and np.isrealobj(f2.values):
        out = out.real
    sg = _fiber_sqrt_g(chart, f1.q_axes)
    weight = sg * np.prod([xa.step for xa in f1.X_axes])
    return f1.with_values(out * weight.reshape(weight.shape + (1,) * n))


def fiber_delta(chart: MetricChart, q_axes, X_axes) -> FiberFunctionGrid:
    """Discrete unit of ``fiber_convolution``: 1 / (sqrt(g) dX^n) at X = 0."""
    q_axes, X_axes = _axes(q_axes), _axes(X_axes)
    n = chart.dim
    vals = np.zeros(tuple(a.count for a in q_axes + X_axes))
    sg = _fiber_sqrt_g(chart, q_axes)
    zero = tuple(a.count // 2 for a in X_axes)
    vals[(Ellipsis,) + zero] = 1.0 / (sg * np.prod([a.step for a in X_axes]))
    return FiberFunctionGrid(chart, q_axes, X_axes, vals)


def node_weights(chart: MetricChart, x_axes) -> np.ndarray:
    """Quadrature weights sqrt(g(x_i)) * prod(dx) in C order over ``x_axes``."""
    x_axes = _axes(x_axes)
    x = mesh(x_axes).reshape(-1, chart.dim)
    return np.sqrt(np.linalg.det(chart.g(x))) * np.prod([a.step for a in x_axes])


def _trig_coefficients(values, axes):
    """Centred Fourier coefficients along ``axes`` for finufft mode ordering.

    An even-length axis loses its Nyquist mode, which has no symmetric
    counterpart among the interpolating modes.
    """
    c = np.fft.fftn(values, axes=axes) / np.prod([values.shape[k] for k in axes])
    for k in axes:
        m = values.shape[k]
        if m % 2 == 0:
            idx = [slice(None)] * c.ndim
            idx[k] = m // 2
            c[tuple(idx)] = 0.0
    return np.ascontiguousarray(np.fft.fftshift(c, axes=axes))


def _mode_shift(axis: UniformAxis):
    """Offset s with node_k = (k - count // 2) * step + s."""
    return axis.start + (axis.count // 2) * axis.step


def _low_rank_svd(mat, tol, start=8):
    """Truncated SVD keeping singular values above tol * s_max.

    A seeded randomized range finder doubles the sketch width until the
    residual is below the threshold; wide sketches fall back to a full SVD.
    """
    m, n = mat.shape
    rng = np.random.default_rng(12345)
    fro = np.linalg.norm(mat)
    if fro == 0:
        return np.zeros((m, 1), mat.dtype), np.zeros(1), np.zeros((1, n), mat.dtype)
    k = start
    while 4 * k < min(m, n):
        omega = rng.standard_normal((n, k))
        Q, _ = np.linalg.qr(mat @ omega)
        Q, _ = np.linalg.qr(mat @ (mat.conj().T @ Q))
        small = Q.conj().T @ mat
        resid = np.linalg.norm(mat - Q @ small)
        u, s, vh = np.linalg.svd(small, full_matrices=False)
        if s[-1] <= tol * s[0] and resid <= max(10 * tol, 1e-13) * fro:
            return Q @ u, s, vh
        k *= 2
    return np.linalg.svd(mat, full_matrices=False)


def _low_rank_split(tensor, tol):
    """SVD of the unfolding T[(a, c), (b, d)] of a 4-index tensor T[a, b, c, d].

    Returns factors U[r, a, c] and V[r, b, d] with T ~ sum_r U_r (x) V_r.
    """
    A, B, C, D = tensor.shape
    mat = tensor.transpose(0, 2, 1, 3).reshape(A * C, B * D)
    u, s, vh = _low_rank_svd(mat, tol)
    if s[0] == 0:
        keep = 1
    else:
        keep = max(1, int(np.sum(s > tol * s[0])))
    U = (u[:, :keep] * s[:keep]).T.reshape(keep, A, C)
    V = vh[:keep].reshape(keep, B, D)
    return U, V


class FiberEvaluator:
    """Evaluate F^-1 a(q, X) at scattered points.

    The symbol is trigonometrically interpolated in q and summed exactly over
    the momentum grid; both steps together are one type-2 NUFFT per factor.
    Two-dimensional symbols are first split into a short sum of products of
    (q1, p1) and (q2, p2) factors.  Points with q outside the symbol box or
    |X| beyond the unaliased range pi / dp are set to zero.
    """

    def __init__(self, a: SymbolGrid, eps=1e-14, rank_tol=1e-14):
        import finufft  # noqa: F401  (fail early if missing)

        self.chart = a.chart
        self.q_axes = a.q_axes
        self.p_axes = a.p_axes
        self.eps = eps
        n = a.chart.dim
        if n == 1:
            self.factors = [_trig_coefficients(np.asarray(a.values, dtype=complex), (0,))[None]]
        else:
            U, V = _low_rank_split(np.asarray(a.values, dtype=complex), rank_tol)
            self.factors = [_trig_coefficients(U, (1,)), _trig_coefficients(V, (1,))]
        self.rank = self.factors[0].shape[0]

    def _axis_eval(self, k, coef, q, X):
        import finufft

        qa, pa = self.q_axes[k], self.p_axes[k]
        tq = 2 * np.pi * (q - qa.start) / qa.length
        tq = np.mod(tq + np.pi, 2 * np.pi) - np.pi
        tp = pa.step * X
        out = finufft.nufft2d2(tq, tp, coef, eps=self.eps, isign=1)
        return out * (np.exp(1j * _mode_shift(pa) * X) * pa.step)

    def __call__(self, q, X, return_mask=False):
        q = np.asarray(q, dtype=float)
        X = np.asarray(X, dtype=float)
        shape = q.shape[:-1]
        n = self.chart.dim
        q = q.reshape(-1, n)
        X = X.reshape(-1, n)
        inside = np.ones(q.shape[0], dtype=bool)
        unaliased = np.ones(q.shape[0], dtype=bool)
        for k in range(n):
            qa, pa = self.q_axes[k], self.p_axes[k]
            inside &= (q[:, k] >= qa.lo) & (q[:, k] <= qa.hi)
            unaliased &= np.abs(X[:, k]) * pa.step < np.pi
        use = inside & unaliased
        vals = np.zeros(q.shape[0], dtype=complex)
        if np.any(use):
            qu, Xu = q[use], X[use]
            prod = None
            for k in range(n):
                part = self._axis_eval(k, self.factors[k], qu[:, k].copy(), Xu[:, k].copy())
                prod = part if prod is None else prod * part
            vals[use] = prod.sum(axis=0) / np.sqrt(np.linalg.det(self.chart.g(qu)))
        vals = vals.reshape(shape)
        if return_mask:
            return vals, (inside & ~unaliased).reshape(shape)
        return vals


class KernelInterpolator:
    """Trigonometric interpolation of a kernel between quantum-grid nodes.

    Kernel grids use odd node counts, so the interpolant reproduces the
    node values and the discrete identity exactly.
    """

    def __init__(self, k: KernelGrid, eps=1e-14, rank_tol=1e-13):
        self.chart = k.chart
        self.x_axes = k.x_axes
        self.eps = eps
        K = k.dense()
        n = k.chart.dim
        if n == 1:
            self.factors = [_trig_coefficients(K.astype(complex), (0, 1))[None]]
        else:
            c = [a.count for a in k.x_axes]
            # K[(i0, i1), (j0, j1)] -> U[r, i0, j0] V[r, i1, j1]
            U, V = _low_rank_split(K.reshape(c[0], c[1], c[0], c[1]), rank_tol)
            self.factors = [_trig_coefficients(U, (1, 2)), _trig_coefficients(V, (1, 2))]
        self.rank = self.factors[0].shape[0]

    def __call__(self, x, y):
        import finufft

        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = x.shape[:-1]
        n = self.chart.dim
        x = x.reshape(-1, n)
        y = y.reshape(-1, n)
        inside = np.ones(x.shape[0], dtype=bool)
        for k, a in enumerate(self.x_axes):
            inside &= (x[:, k] >= a.lo) & (x[:, k] <= a.hi) & (y[:, k] >= a.lo) & (y[:, k] <= a.hi)
        vals = np.zeros(x.shape[0], dtype=complex)
        if np.any(inside):
            prod = None
            for k, a in enumerate(self.x_axes):
                tx = 2 * np.pi * (x[inside, k] - a.start) / a.length
                ty = 2 * np.pi * (y[inside, k] - a.start) / a.length
                tx = np.mod(tx + np.pi, 2 * np.pi) - np.pi
                ty = np.mod(ty + np.pi, 2 * np.pi) - np.pi
                part = finufft.nufft2d2(tx, ty, self.factors[k], eps=self.eps, isign=1)
                prod = part if prod is None else prod * part
            vals[inside] = prod.sum(axis=0)
        return vals.reshape(shape)
