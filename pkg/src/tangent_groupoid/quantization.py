"""The (phi1, phi2) family of quantization maps and their inverses.

A symbol a(q, p) is sent to the kernel

    k(x, y) = (2 pi hbar)^-n |det(phi1 - phi2)|^-1 J(q, X)^e F^-1 a(q, X),

where (x, y) = (exp_q(hbar phi1 X), exp_q(hbar phi2 X)).  The prefactor makes
the constant symbol 1 quantize to the identity on L^2(M, dnu).  The exponent
e depends on where the J factor is placed (see ``J_EXPONENTS``); dequantize
uses -e, so the two maps are inverse to each other for every placement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import UndefinedRatioError, UnsupportedError, ShapeError
from .geometry import DEFAULT_STEPS, MetricChart, metric_norm, shoot
from .groupoid import phi_inverse_batch
from .transforms import (
    FiberEvaluator,
    KernelGrid,
    KernelInterpolator,
    SymbolGrid,
    UniformAxis,
    fiber_fourier_inverse,
    mesh,
    node_weights,
)

J_EXPONENTS = {"symmetric_split": -0.5, "quantize_only": -1.0, "dequantize_only": 0.0}


@dataclass(frozen=True, eq=False)
class QuantizationScheme:
    """Constant fiber endomorphisms phi1, phi2 and the J placement.

    Scalars stand for multiples of the identity.
    """

    phi1: object = 0.5
    phi2: object = -0.5
    j_placement: str = "symmetric_split"
    name: str = ""

    def __post_init__(self):
        if self.j_placement not in J_EXPONENTS:
            raise ValueError(f"unknown j_placement {self.j_placement!r}")
        d = np.asarray(self.phi1, dtype=float) - np.asarray(self.phi2, dtype=float)
        if np.ndim(d) == 0:
            singular = d == 0
        else:
            singular = abs(np.linalg.det(d)) < 1e-14
        if singular:
            raise ValueError("phi1 - phi2 must be invertible")

    def matrices(self, n):
        p1 = np.asarray(self.phi1, dtype=float)
        p2 = np.asarray(self.phi2, dtype=float)
        p1 = p1 * np.eye(n) if p1.ndim == 0 else p1
        p2 = p2 * np.eye(n) if p2.ndim == 0 else p2
        if p1.shape != (n, n) or p2.shape != (n, n):
            raise ShapeError(f"phi matrices must be {n} x {n}")
        return p1, p2

    @property
    def phi(self):
        return (self.phi1, self.phi2)

    @property
    def scalar(self) -> bool:
        return np.ndim(self.phi1) == 0 and np.ndim(self.phi2) == 0

    def _diff(self):
        return np.asarray(self.phi1, dtype=float) - np.asarray(self.phi2, dtype=float)

    @property
    def connes_type(self) -> bool:
        d = self._diff()
        target = 1.0 if d.ndim == 0 else np.eye(d.shape[0])
        return bool(np.allclose(d, target, rtol=0, atol=1e-14))

    @property
    def moyal(self) -> bool:
        p1 = np.asarray(self.phi1, dtype=float)
        p2 = np.asarray(self.phi2, dtype=float)
        e = 1.0 if p1.ndim == 0 else np.eye(p1.shape[0])
        return bool(np.allclose(p1, 0.5 * e, atol=1e-14) and np.allclose(p2, -0.5 * e, atol=1e-14))

    @property
    def exponent(self) -> float:
        return J_EXPONENTS[self.j_placement]

    def det_diff(self, n) -> float:
        p1, p2 = self.matrices(n)
        return abs(np.linalg.det(p1 - p2))

    def with_placement(self, j_placement):
        return QuantizationScheme(self.phi1, self.phi2, j_placement, self.name)

    @classmethod
    def named(cls, name, j_placement="symmetric_split"):
        table = {"moyal": (0.5, -0.5), "standard": (0.0, -1.0), "antistandard": (1.0, 0.0)}
        if name not in table:
            raise ValueError(f"unknown scheme {name!r}; choose from {sorted(table)}")
        return cls(*table[name], j_placement=j_placement, name=name)

    @classmethod
    def shifted(cls, t, j_placement="symmetric_split"):
        """phi1 = 1/2 + t, phi2 = -1/2 + t; t = 0 is Moyal, t = -1/2 standard."""
        return cls(0.5 + t, -0.5 + t, j_placement=j_placement, name=f"shift{t:+g}")

    @classmethod
    def from_descriptor(cls, d):
        if isinstance(d, str):
            return cls.named(d)
        placement = d.get("j_placement", "symmetric_split")
        if "name" in d and "phi1" not in d:
            return cls.named(d["name"], placement)
        return cls(d["phi1"], d["phi2"], placement, d.get("name", "custom"))

    def descriptor(self):
        def conv(v):
            return v.tolist() if isinstance(v, np.ndarray) else v
        return {"name": self.name or "custom", "phi1": conv(self.phi1), "phi2": conv(self.phi2),
                "j_placement": self.j_placement}


MOYAL = QuantizationScheme.named("moyal")
STANDARD = QuantizationScheme.named("standard")
ANTISTANDARD = QuantizationScheme.named("antistandard")


@dataclass(frozen=True, eq=False)
class OrderingFunction:
    """f(theta, tau) = exp(i theta . (1/2 - phi1) tau / hbar) for a Connes-type scheme.

    With ``dim == 1`` arguments are scalars or arrays of scalars; otherwise
    the last axis holds vector components.
    """

    scheme: QuantizationScheme
    hbar: float
    dim: int = 1

    def __call__(self, theta, tau):
        theta = np.asarray(theta, dtype=float)
        tau = np.asarray(tau, dtype=float)
        p1, _ = self.scheme.matrices(self.dim)
        m = 0.5 * np.eye(self.dim) - p1
        if self.dim == 1:
            phase = m[0, 0] * theta * tau
        else:
            phase = np.einsum("...i,ij,...j->...", theta, m, tau)
        return np.exp(1j * phase / self.hbar)

    def _sample(self, count=21, span=3.0):
        t = np.linspace(-span, span, count)
        if self.dim == 1:
            return np.meshgrid(t, t, indexing="ij")
        rng = np.random.default_rng(0)
        th = span * rng.uniform(-1, 1, (count * count, self.dim))
        ta = span * rng.uniform(-1, 1, (count * count, self.dim))
        return th, ta

    def _zero(self):
        return 0.0 if self.dim == 1 else np.zeros(self.dim)

    def semitracial(self, tol=1e-12) -> bool:
        return bool(abs(self(self._zero(), self._zero()) - 1.0) <= tol)

    def real(self, tol=1e-12) -> bool:
        th, ta = self._sample()
        return bool(np.max(np.abs(self(th, ta) - np.conj(self(-th, -ta)))) <= tol)

    def tracial(self, tol=1e-12) -> bool:
        th, ta = self._sample()
        return bool(np.max(np.abs(np.abs(self(th, ta)) - 1.0)) <= tol)


def ordering_of_scheme(scheme: QuantizationScheme, hbar: float, dim=1) -> OrderingFunction:
    if not scheme.connes_type:
        raise UnsupportedError("ordering functions are defined for Connes-type schemes only")
    return OrderingFunction(scheme, float(hbar), dim)


# ---------------------------------------------------------------------------
# grids for the quantum side


def symbol_band(a: SymbolGrid, tol=1e-13):
    """Effective momentum extent, q-bandwidth and fiber support of a symbol.

    Returns arrays (P, K, Xcut), one entry per axis: the largest |p| and |kappa|
    (angular frequency in q) carrying more than ``tol`` of the peak, and the
    largest |X| where |F^-1 a| exceeds ``tol`` of its peak.
    """
    n = a.chart.dim
    v = np.abs(a.values)
    peak = v.max()
    P = np.zeros(n)
    K = np.zeros(n)
    Xc = np.zeros(n)
    if peak == 0:
        return P, K, Xc
    for k in range(n):
        others = tuple(i for i in range(2 * n) if i != n + k)
        prof = v.max(axis=others)
        p = np.abs(a.p_axes[k].nodes)
        P[k] = p[prof > tol * peak].max() + 0.5 * a.p_axes[k].step
        c = np.abs(np.fft.fft(a.values, axis=k))
        others = tuple(i for i in range(2 * n) if i != k)
        prof = c.max(axis=others)
        kap = np.abs(2 * np.pi * np.fft.fftfreq(a.q_axes[k].count, a.q_axes[k].step))
        big = prof > tol * prof.max()
        K[k] = kap[big].max() if np.any(big) else 0.0
    b = np.abs(fiber_fourier_inverse(a.chart, a).values)
    bpeak = b.max()
    for k in range(n):
        others = tuple(i for i in range(2 * n) if i != n + k)
        prof = b.max(axis=others)
        xa = UniformAxis.reciprocal(a.p_axes[k])
        x = np.abs(xa.nodes)
        Xc[k] = x[prof > tol * bpeak].max() + xa.step
    return P, K, Xc


def quantum_axes(symbols: Sequence[SymbolGrid], hbar, scheme: QuantizationScheme = MOYAL,
                 tol=1e-13, oversample=1.0, min_count=9):
    """Uniform node grid resolving products of the quantized symbols.

    The x-spacing is chosen so that the y-integrand of a kernel product,
    with band 2P/(hbar |phi1 - phi2|) + K (|phi1| + |1 - phi1|) per axis, is
    sampled without aliasing.  Counts are odd, so trigonometric
    interpolation between nodes is unambiguous.
    """
    symbols = list(symbols)
    a0 = symbols[0]
    n = a0.chart.dim
    P = np.zeros(n)
    K = np.zeros(n)
    for a in symbols:
        if a.q_axes != a0.q_axes:
            raise ShapeError("symbols must share a q grid")
        Pa, Ka, _ = symbol_band(a, tol)
        P = np.maximum(P, Pa)
        K = np.maximum(K, Ka)
    p1, p2 = scheme.matrices(n)
    d = np.abs(np.diag(p1 - p2))
    r = np.diag(p1) / np.diag(p1 - p2)
    c = np.abs(r) + np.abs(1 - r)
    axes = []
    for k in range(n):
        band = 2 * P[k] / (hbar * d[k]) + K[k] * c[k]
        qa = a0.q_axes[k]
        count = max(min_count, int(np.ceil(oversample * qa.length * band / (2 * np.pi))))
        if count % 2 == 0:
            count += 1
        axes.append(UniformAxis.cells(qa.lo, qa.hi, count))
    return tuple(axes)


# ---------------------------------------------------------------------------
# node-pair geometry


@dataclass(frozen=True, eq=False)
class KernelGeometry:
    """(q, X, J) for the node pairs that can carry kernel mass."""

    chart: MetricChart
    x_axes: tuple
    hbar: float
    phi: tuple
    rows: np.ndarray
    cols: np.ndarray
    q: np.ndarray
    X: np.ndarray
    J: np.ndarray
    ok: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def size(self):
        return int(np.prod([a.count for a in self.x_axes]))

    @property
    def density(self):
        return self.rows.size / float(self.size) ** 2


def _axis_pairs(count, half):
    i = np.arange(count)[:, None]
    d = np.arange(-half, half + 1)[None, :]
    j = i - d
    ok = (j >= 0) & (j < count)
    ii = np.broadcast_to(i, j.shape)[ok]
    return ii, j[ok]


def kernel_geometry(chart: MetricChart, x_axes, hbar, scheme: QuantizationScheme = MOYAL,
                    X_cut=None, steps=DEFAULT_STEPS, margin=None) -> KernelGeometry:
    """Pull every relevant node pair back through Phi.

    Only pairs with |X| up to ``X_cut`` (per axis, padded by ``margin``) are
    kept.  Along cyclic chart axes the pull-back is translation invariant, so
    it is computed once per node offset and shifted.
    """
    n = chart.dim
    x_axes = tuple(x_axes)
    if not chart.flat and not scheme.moyal:
        raise UnsupportedError("curved charts support the symmetric (Moyal) scheme only")
    p1, p2 = scheme.matrices(n)
    d = np.abs(np.diag(p1 - p2))
    if margin is None:
        margin = 0.0 if chart.flat else 0.25
    per_axis = []
    for k, a in enumerate(x_axes):
        if X_cut is None or not np.isfinite(X_cut[k]):
            half = a.count - 1
        else:
            half = int(np.ceil(X_cut[k] * (1 + margin) * hbar * d[k] / a.step)) + 1
            half = min(half, a.count - 1)
        ii, jj = _axis_pairs(a.count, half)
        nodes = a.nodes
        if k in chart.cyclic_axes:
            off = ii - jj
            keys, inv = np.unique(off, return_inverse=True)
            mid = 0.5 * (a.lo + a.hi)
            rx = mid + 0.5 * keys * a.step
            ry = mid - 0.5 * keys * a.step
            shift = 0.5 * (nodes[ii] + nodes[jj]) - mid
        else:
            keys = np.arange(ii.size)
            inv = keys
            rx = nodes[ii]
            ry = nodes[jj]
            shift = np.zeros(ii.size)
        per_axis.append(dict(ii=ii, jj=jj, inv=inv, rx=rx, ry=ry, shift=shift, nkeys=keys.size))

    # representative configurations: product over axes of per-axis keys
    rep_shape = tuple(p["nkeys"] for p in per_axis)
    grids = np.meshgrid(*[np.arange(s) for s in rep_shape], indexing="ij")
    rx = np.stack([per_axis[k]["rx"][grids[k].ravel()] for k in range(n)], axis=-1)
    ry = np.stack([per_axis[k]["ry"][grids[k].ravel()] for k in range(n)], axis=-1)
    if scheme.moyal and chart.midpoint_fn is not None:
        rep_q, V, J = chart.midpoint_fn(rx, ry)
        rep_X = 2.0 * V / hbar
        ok = chart.contains(rep_q)
        if not np.isinf(chart.injectivity_floor):
            ok &= metric_norm(chart, np.where(ok[:, None], rep_q, rx), V) < chart.injectivity_floor
        J = np.where(ok, J, 1.0)
    else:
        inv_res = phi_inverse_batch(chart, rx, ry, hbar, phi=(p1, p2), steps=steps)
        gx = np.linalg.det(chart.g(rx))
        gy = np.linalg.det(chart.g(ry))
        gq = np.linalg.det(chart.g(np.where(inv_res.ok[:, None], inv_res.q, rx)))
        flat_det = hbar**n * abs(np.linalg.det(p1 - p2))
        J = np.sqrt(gx * gy) / gq * np.abs(np.linalg.det(inv_res.D)) / flat_det
        ok = inv_res.ok
        J = np.where(ok, J, 1.0)
        rep_q, rep_X = inv_res.q, inv_res.X

    # expand to all pairs
    sizes = [p["ii"].size for p in per_axis]
    full = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    full = [f.ravel() for f in full]
    rep_index = np.zeros(full[0].size, dtype=np.int64)
    row = np.zeros(full[0].size, dtype=np.int64)
    col = np.zeros(full[0].size, dtype=np.int64)
    shift = np.zeros((full[0].size, n))
    for k, p in enumerate(per_axis):
        rep_index = rep_index * rep_shape[k] + p["inv"][full[k]]
        row = row * x_axes[k].count + p["ii"][full[k]]
        col = col * x_axes[k].count + p["jj"][full[k]]
        shift[:, k] = p["shift"][full[k]]
    q = rep_q[rep_index] + shift
    X = rep_X[rep_index]
    return KernelGeometry(
        chart, x_axes, float(hbar), (p1, p2), row, col, q, X, J[rep_index], ok[rep_index],
        meta={"configurations": int(rx.shape[0]), "steps": steps},
    )


# ---------------------------------------------------------------------------
# quantize / dequantize


def _assemble(values, rows, cols, N, dense_threshold):
    if rows.size >= dense_threshold * N * N:
        out = np.zeros((N, N), dtype=complex)
        out[rows, cols] = values
        return out
    return sparse.csr_array((values, (rows, cols)), shape=(N, N))


def quantize(scheme: QuantizationScheme, chart: MetricChart, a: SymbolGrid, hbar: float,
             x_axes=None, geometry: Optional[KernelGeometry] = None, steps=DEFAULT_STEPS,
             band_tol=1e-13, dense_threshold=0.25, evaluator=None) -> KernelGrid:
    """Kernel of the operator quantizing ``a`` at ``hbar`` on L^2(M, dnu)."""
    if a.chart is not chart:
        raise ShapeError("symbol belongs to another chart")
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    n = chart.dim
    if geometry is None:
        if x_axes is None:
            x_axes = quantum_axes([a], hbar, scheme, tol=band_tol)
        _, _, Xc = symbol_band(a, band_tol)
        geometry = kernel_geometry(chart, x_axes, hbar, scheme, X_cut=Xc, steps=steps)
    elif x_axes is not None and tuple(x_axes) != geometry.x_axes:
        raise ShapeError("x_axes disagree with the supplied geometry")
    if geometry.hbar != hbar:
        raise ShapeError("geometry was computed for another hbar")
    ev = evaluator if evaluator is not None else FiberEvaluator(a)
    b, aliased = ev(geometry.q, geometry.X, return_mask=True)
    norm = (2 * np.pi * hbar) ** (-n) / scheme.det_diff(n)
    vals = norm * geometry.J ** scheme.exponent * b
    bad = ~geometry.ok
    vals[bad] = 0.0
    N = geometry.size
    K = _assemble(vals, geometry.rows, geometry.cols, N, dense_threshold)
    meta = {
        "symbol_q_axes": a.q_axes,
        "symbol_p_axes": a.p_axes,
        "scheme": scheme.descriptor(),
        "pairs": int(geometry.rows.size),
    }
    return KernelGrid(chart, geometry.x_axes, float(hbar), K,
                      inadmissible=int(bad.sum()), truncated=bool(np.any(aliased & geometry.ok)),
                      meta=meta)


def _lattice(k: KernelGrid, scheme, p_axes, hbar, lattice):
    n = k.chart.dim
    p1, p2 = scheme.matrices(n)
    d = np.abs(np.diag(p1 - p2))
    axes = []
    for i, pa in enumerate(p_axes):
        if lattice == "fine":
            step = k.x_axes[i].step / (hbar * d[i])
        elif lattice == "reciprocal":
            step = 2 * np.pi / (pa.count * pa.step)
        else:
            raise ValueError(f"unknown lattice {lattice!r}")
        half = int(np.floor(np.pi / (pa.step * step) * (1 - 1e-12)))
        axes.append(UniformAxis(-half * step, step, 2 * half + 1))
    return tuple(axes)


def dequantize(scheme: QuantizationScheme, chart: MetricChart, k: KernelGrid, hbar: float,
               q_axes=None, p_axes=None, lattice="fine", steps=DEFAULT_STEPS,
               interpolator=None, chunk=2_000_000) -> SymbolGrid:
    """Symbol of a kernel: a(q, p) = F[(2 pi hbar)^n |det(phi1-phi2)| J^-e k(Phi(q, X))](p).

    The kernel is interpolated to the points Phi(q, X) with X on a lattice
    whose spacing matches the quantum grid (``lattice="fine"``, exact for the
    discrete identity) or the reciprocal of the momentum grid
    (``"reciprocal"``, enough for kernels of band-limited symbols).
    """
    if k.chart is not chart:
        raise ShapeError("kernel belongs to another chart")
    if k.hbar != hbar:
        raise ShapeError("kernel was built for another hbar")
    if not chart.flat and not scheme.moyal:
        raise UnsupportedError("curved charts support the symmetric (Moyal) scheme only")
    n = chart.dim
    q_axes = tuple(q_axes if q_axes is not None else k.meta["symbol_q_axes"])
    p_axes = tuple(p_axes if p_axes is not None else k.meta["symbol_p_axes"])
    X_axes = _lattice(k, scheme, p_axes, hbar, lattice)
    p1, p2 = scheme.matrices(n)
    interp = interpolator if interpolator is not None else KernelInterpolator(k)

    qs = mesh(q_axes).reshape(-1, n)
    Xs = mesh(X_axes).reshape(-1, n)
    # geometry depends on the non-cyclic coordinates of q only
    cyc = [i for i in chart.cyclic_axes]
    qrep = qs.copy()
    for i in cyc:
        qrep[:, i] = q_axes[i].nodes[0]
    keys, first, inv = np.unique(qrep, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    F = np.empty((qs.shape[0], Xs.shape[0]), dtype=complex)
    per = max(1, chunk // max(1, Xs.shape[0]))
    for start in range(0, keys.shape[0], per):
        kq = keys[start:start + per]
        Q = np.repeat(kq[:, None, :], Xs.shape[0], axis=1)
        V1 = hbar * Xs @ p1.T
        V2 = hbar * Xs @ p2.T
        V = np.stack([np.broadcast_to(V1, Q.shape), np.broadcast_to(V2, Q.shape)])
        if chart.flat:
            xy = Q[None] + V
            J = np.ones(Q.shape[:2])
        else:
            shot = shoot(chart, np.broadcast_to(Q, V.shape), V, steps=steps, jacobian=True)
            xy = shot.x
            D = np.empty(Q.shape[:2] + (2 * n, 2 * n))
            D[..., :n, :n] = shot.dx_dq[0]
            D[..., n:, :n] = shot.dx_dq[1]
            D[..., :n, n:] = hbar * shot.dx_dv[0] @ p1
            D[..., n:, n:] = hbar * shot.dx_dv[1] @ p2
            gx = np.linalg.det(chart.g(xy[0]))
            gy = np.linalg.det(chart.g(xy[1]))
            gq = np.linalg.det(chart.g(Q))
            J = np.sqrt(gx * gy) / gq * np.abs(np.linalg.det(D)) / (hbar**n * scheme.det_diff(n))
            J = np.where(np.all(shot.inside, axis=0), J, np.nan)
        rows = np.flatnonzero((inv >= start) & (inv < start + kq.shape[0]))
        local = inv[rows] - start
        x = xy[0][local].copy()
        y = xy[1][local].copy()
        for i in cyc:
            delta = (qs[rows, i] - kq[local, i])[:, None]
            x[..., i] += delta
            y[..., i] += delta
        vals = interp(x, y)
        Jr = J[local]
        weight = np.where(np.isnan(Jr), 0.0, np.nan_to_num(Jr, nan=1.0) ** (-scheme.exponent))
        F[rows] = vals * weight
    F *= (2 * np.pi * hbar) ** n * scheme.det_diff(n)
    # Fourier sum to the momentum grid, one axis at a time
    F = F.reshape(tuple(a.count for a in q_axes) + tuple(a.count for a in X_axes))
    for i, (xa, pa) in enumerate(zip(X_axes, p_axes)):
        m = np.exp(-1j * np.outer(pa.nodes, xa.nodes)) * xa.step / (2 * np.pi)
        F = np.moveaxis(np.tensordot(F, m, axes=([n + i], [1])), -1, n + i)
    sg = np.sqrt(np.linalg.det(chart.g(mesh(q_axes))))
    F *= sg.reshape(sg.shape + (1,) * n)
    return SymbolGrid(chart, q_axes, p_axes, F)


def flat_closed_form_kernel(scheme: QuantizationScheme, a: SymbolGrid, hbar: float,
                            x_axes=None) -> KernelGrid:
    """Kernel from the affine chart (q + hbar phi1 X, q + hbar phi2 X), all node pairs.

    One-dimensional symbols are evaluated by direct trigonometric and momentum
    sums, independent of the NUFFT path used by ``quantize``.
    """
    chart = a.chart
    if not chart.flat:
        raise UnsupportedError("closed-form kernels need a flat chart")
    n = chart.dim
    if x_axes is None:
        x_axes = quantum_axes([a], hbar, scheme)
    x_axes = tuple(x_axes)
    p1, p2 = scheme.matrices(n)
    nodes = mesh(x_axes).reshape(-1, n)
    N = nodes.shape[0]
    x = np.repeat(nodes, N, axis=0)
    y = np.tile(nodes, (N, 1))
    X = (x - y) @ np.linalg.inv(p1 - p2).T / hbar
    q = x - hbar * X @ p1.T
    if n == 1:
        b = _direct_fiber_inverse(a, q[:, 0], X[:, 0])
    else:
        b = FiberEvaluator(a)(q, X)
    K = (2 * np.pi * hbar) ** (-n) / scheme.det_diff(n) * b
    meta = {"symbol_q_axes": a.q_axes, "symbol_p_axes": a.p_axes, "scheme": scheme.descriptor()}
    return KernelGrid(chart, x_axes, float(hbar), K.reshape(N, N), meta=meta)


def _direct_fiber_inverse(a: SymbolGrid, q, X, chunk=20000):
    qa, pa = a.q_axes[0], a.p_axes[0]
    M = qa.count
    coef = np.fft.fft(a.values, axis=0) / M
    freq = np.fft.fftfreq(M, 1.0 / M)
    if M % 2 == 0:
        coef[M // 2] = 0.0
    kap = 2 * np.pi * freq / qa.length
    p = pa.nodes
    out = np.zeros(q.size, dtype=complex)
    inside = (q >= qa.lo) & (q <= qa.hi) & (np.abs(X) * pa.step < np.pi)
    idx = np.flatnonzero(inside)
    for s in range(0, idx.size, chunk):
        j = idx[s:s + chunk]
        vals_p = np.exp(1j * np.outer(q[j] - qa.start, kap)) @ coef
        out[j] = np.sum(vals_p * np.exp(1j * np.outer(X[j], p)), axis=1) * pa.step
    sg = np.sqrt(np.linalg.det(a.chart.g(q[:, None])))
    return out / sg


def hs_norm(k: KernelGrid) -> float:
    w = node_weights(k.chart, k.x_axes)
    v = k.values
    if sparse.issparse(v):
        coo = v.tocoo()
        return float(np.sqrt(np.sum(np.abs(coo.data) ** 2 * w[coo.row] * w[coo.col])))
    return float(np.sqrt(np.einsum("ij,i,j->", np.abs(v) ** 2, w, w)))


def reality_defect(scheme: QuantizationScheme, chart: MetricChart, a: SymbolGrid, hbar: float,
                   kernel: Optional[KernelGrid] = None, **kw) -> float:
    """Relative Hilbert-Schmidt distance between Q(a) and its adjoint."""
    if np.iscomplexobj(a.values) and np.any(np.abs(a.values.imag) > 1e-14 * np.abs(a.values).max()):
        raise ValueError("reality_defect expects a real symbol")
    k = kernel if kernel is not None else quantize(scheme, chart, a, hbar, **kw)
    base = hs_norm(k)
    if base == 0:
        raise UndefinedRatioError("quantized symbol has zero kernel")
    adj = k.values.conj().T
    diff = k.with_values(k.values - adj)
    return hs_norm(diff) / base
