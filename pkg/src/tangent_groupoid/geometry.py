"""Chart-level Riemannian geometry.

Everything is vectorized over leading axes: a point is an array whose last
axis has length ``chart.dim``.  Metric derivatives come from the chart when
available and from central differences otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import (
    ConvergenceError,
    DomainError,
    GeodesicExcursionError,
    InjectivityError,
    ShapeError,
)

DEFAULT_STEPS = 64

MetricFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class MetricChart:
    """A single coordinate patch with a Riemannian metric.

    ``metric_grad_fn(q)[..., i, j, k]`` is d_k g_ij and
    ``metric_hess_fn(q)[..., i, j, k, m]`` is d_m d_k g_ij.
    ``cyclic_axes`` lists coordinates the metric does not depend on; the
    quantizer uses them to reuse geometry along translated node pairs.
    ``connection_fn(q)``, when given, returns closed-form (Gamma, dGamma) in
    the layouts of ``christoffel`` and ``christoffel_derivative``.
    ``midpoint_fn(x, y)``, when given, returns closed-form (q, V, J) with
    x = exp_q(V), y = exp_q(-V) and J the normalized Jacobian of
    (q, V) -> (x, y); the symmetric scheme then skips the Newton solve.
    """

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    metric_fn: MetricFn
    metric_grad_fn: Optional[MetricFn] = None
    metric_hess_fn: Optional[MetricFn] = None
    injectivity_floor: float = 1.0
    cyclic_axes: tuple = ()
    flat: bool = False
    params: dict = field(default_factory=dict)
    connection_fn: Optional[Callable] = None
    midpoint_fn: Optional[Callable] = None

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.dim not in (1, 2):
            raise ShapeError(f"chart dimension must be 1 or 2, got {self.dim}")
        if lower.shape != (self.dim,) or upper.shape != (self.dim,):
            raise ShapeError("domain bounds must have one entry per axis")
        if np.any(upper <= lower):
            raise ShapeError("empty chart domain")
        if not self.injectivity_floor > 0:
            raise ValueError("injectivity_floor must be positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cyclic_axes", tuple(int(a) for a in self.cyclic_axes))

    @property
    def scale(self) -> float:
        return float(np.max(self.upper - self.lower))

    def contains(self, q, atol=0.0) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.all((q >= self.lower - atol) & (q <= self.upper + atol), axis=-1)

    def require(self, q) -> np.ndarray:
        q = self._points(q)
        if not np.all(self.contains(q, atol=1e-12)):
            raise DomainError(f"point outside the domain of chart {self.name!r}")
        return q

    def _points(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.ndim == 0 and self.dim == 1:
            q = q.reshape(1)
        if q.shape[-1] != self.dim:
            raise ShapeError(f"expected trailing axis of length {self.dim}, got shape {q.shape}")
        return q

    # metric and its derivatives, no domain checks
    def g(self, q) -> np.ndarray:
        return np.asarray(self.metric_fn(q), dtype=float)

    def dg(self, q) -> np.ndarray:
        if self.metric_grad_fn is not None:
            return np.asarray(self.metric_grad_fn(q), dtype=float)
        step = 1e-6 * self.scale
        out = np.empty(q.shape[:-1] + (self.dim,) * 3)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = step
            out[..., k] = (self.g(q + e) - self.g(q - e)) / (2 * step)
        return out

    def d2g(self, q) -> np.ndarray:
        if self.metric_hess_fn is not None:
            return np.asarray(self.metric_hess_fn(q), dtype=float)
        n = self.dim
        out = np.empty(q.shape[:-1] + (n,) * 4)
        if self.metric_grad_fn is not None:
            step = 1e-5 * self.scale
            for m in range(n):
                e = np.zeros(n)
                e[m] = step
                out[..., m] = (self.dg(q + e) - self.dg(q - e)) / (2 * step)
            return out
        step = 1e-4 * self.scale
        g0 = self.g(q)
        for k in range(n):
            ek = np.zeros(n)
            ek[k] = step
            for m in range(k, n):
                em = np.zeros(n)
                em[m] = step
                if k == m:
                    val = (self.g(q + ek) - 2 * g0 + self.g(q - ek)) / step**2
                else:
                    val = (self.g(q + ek + em) - self.g(q + ek - em)
                           - self.g(q - ek + em) + self.g(q - ek - em)) / (4 * step**2)
                out[..., k, m] = val
                out[..., m, k] = val
        return out

    def validate(self, samples=64, seed=0):
        """Cholesky-check the metric at random points of the domain."""
        rng = np.random.default_rng(seed)
        q = self.lower + (self.upper - self.lower) * rng.random((samples, self.dim))
        g = self.g(q)
        if not np.allclose(g, np.swapaxes(g, -1, -2), rtol=1e-12, atol=1e-14):
            raise ValueError(f"metric of chart {self.name!r} is not symmetric")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"metric of chart {self.name!r} is not positive definite") from exc
        return True


@dataclass(frozen=True, eq=False)
class TangentPoint:
    q: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "X", np.atleast_1d(np.asarray(self.X, dtype=float)))
        if self.q.shape != self.X.shape:
            raise ShapeError("base point and tangent vector shapes differ")


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    base: TangentPoint
    s: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    integrator_steps: int

    @property
    def samples(self):
        return list(zip(self.s, self.positions, self.velocities))

    @property
    def endpoint(self):
        return self.positions[-1]

    @property
    def velocity(self):
        return self.velocities[-1]


@dataclass(frozen=True, eq=False)
class JacobiData:
    h: np.ndarray
    h_tilde: np.ndarray
    s: float


def christoffel_from(g, dg):
    n = g.shape[-1]
    ginv = np.linalg.inv(g)
    t = np.swapaxes(dg, -2, -1) + dg - np.moveaxis(dg, -1, -3)
    flat = t.reshape(t.shape[:-3] + (n, n * n))
    return 0.5 * (ginv @ flat).reshape(t.shape)


def _christoffel_and_derivative(chart, q, generic=False):
    if chart.connection_fn is not None and not generic:
        gamma, dgamma = chart.connection_fn(q)
        return np.asarray(gamma, dtype=float), np.asarray(dgamma, dtype=float)
    g = chart.g(q)
    dg = chart.dg(q)
    d2g = chart.d2g(q)
    n = g.shape[-1]
    lead = g.shape[:-2]
    ginv = np.linalg.inv(g)
    t = np.swapaxes(dg, -2, -1) + dg - np.moveaxis(dg, -1, -3)
    gamma = 0.5 * (ginv @ t.reshape(lead + (n, n * n))).reshape(lead + (n, n, n))
    # d_m t[l, i, j] from the metric Hessian
    dt = np.swapaxes(d2g, -3, -2) + d2g - np.moveaxis(d2g, -2, -4)
    # d_m ginv = -ginv (d_m g) ginv, stored as [..., m, k, l]
    dgm = np.moveaxis(dg, -1, -3)
    dginv = -(ginv[..., None, :, :] @ dgm @ ginv[..., None, :, :])
    tf = t.reshape(lead + (1, n, n * n))
    part1 = np.moveaxis((dginv @ tf).reshape(lead + (n, n, n, n)), -4, -1)
    part2 = (ginv @ dt.reshape(lead + (n, n * n * n))).reshape(lead + (n, n, n, n))
    return gamma, 0.5 * (part1 + part2)


def christoffel(chart: MetricChart, q) -> np.ndarray:
    """Levi-Civita symbols; ``out[..., k, i, j]`` is Gamma^k_ij."""
    q = chart.require(q)
    return _gamma(chart, q)


def _gamma(chart, q):
    if chart.connection_fn is not None:
        return np.asarray(chart.connection_fn(q)[0], dtype=float)
    return christoffel_from(chart.g(q), chart.dg(q))


def christoffel_derivative(chart: MetricChart, q) -> np.ndarray:
    """``out[..., k, i, j, m]`` is d_m Gamma^k_ij."""
    q = chart.require(q)
    return _christoffel_and_derivative(chart, q)[1]


def volume_density(chart: MetricChart, q):
    q = chart.require(q)
    return np.sqrt(np.linalg.det(chart.g(q)))


def metric_norm(chart: MetricChart, q, X):
    q = chart._points(q)
    X = chart._points(X)
    return np.sqrt(np.einsum("...i,...ij,...j->...", X, chart.g(q), X))


def _quad(gamma, v):
    """Gamma^k_ij v^i v^j for batched gamma[b, k, i, j]."""
    b, n = v.shape
    vv = (v[:, :, None] * v[:, None, :]).reshape(b, n * n, 1)
    return (gamma.reshape(b, n, n * n) @ vv)[..., 0]


class Shot(NamedTuple):
    x: np.ndarray
    v: np.ndarray
    dx_dq: Optional[np.ndarray]
    dx_dv: Optional[np.ndarray]
    inside: np.ndarray
    exit_parameter: np.ndarray


def shoot(chart: MetricChart, q, V, steps=DEFAULT_STEPS, jacobian=False, record=False):
    """Integrate the geodesic from ``q`` with velocity ``V`` over [0, 1].

    Batched RK4 with ``steps`` equal steps.  With ``jacobian`` the variational
    equations are integrated too and dx/dq, dx/dV are returned.  Paths that
    leave the domain are frozen at their last interior state and flagged.
    """
    q = np.asarray(q, dtype=float)
    V = np.asarray(V, dtype=float)
    q, V = np.broadcast_arrays(q, V)
    shape = q.shape[:-1]
    n = chart.dim
    x = q.reshape(-1, n).copy()
    v = V.reshape(-1, n).copy()
    b = x.shape[0]
    dt = 1.0 / steps
    inside = chart.contains(x, atol=1e-12)
    exit_at = np.full(b, np.nan)
    exit_at[~inside] = 0.0
    P = None
    if jacobian:
        P = np.zeros((b, 2 * n, 2 * n))
        P[:, np.arange(2 * n), np.arange(2 * n)] = 1.0
    trace = [(x.copy(), v.copy())] if record else None

    def rhs(x, v, P):
        if P is None:
            return v, -_quad(_gamma(chart, x), v), None
        gamma, dgamma = _christoffel_and_derivative(chart, x)
        acc = -_quad(gamma, v)
        # A[k, m] = d_m Gamma^k_ij v^i v^j, B[k, j] = 2 Gamma^k_ij v^i
        vv = (v[:, :, None] * v[:, None, :]).reshape(b, 1, n * n, 1)
        A = (np.swapaxes(dgamma.reshape(b, n, n * n, n), -2, -1) @ vv)[..., 0]
        B = 2.0 * (np.swapaxes(gamma, -2, -1) @ v[:, None, :, None])[..., 0]
        top = P[:, :n, :]
        bot = P[:, n:, :]
        dP = np.concatenate([bot, -A @ top - B @ bot], axis=1)
        return v, acc, dP

    for k in range(steps):
        k1 = rhs(x, v, P)
        k2 = rhs(x + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1],
                 None if P is None else P + 0.5 * dt * k1[2])
        k3 = rhs(x + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1],
                 None if P is None else P + 0.5 * dt * k2[2])
        k4 = rhs(x + dt * k3[0], v + dt * k3[1],
                 None if P is None else P + dt * k3[2])
        xn = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        vn = v + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        ok = inside & chart.contains(xn, atol=1e-12)
        newly_out = inside & ~ok
        exit_at[newly_out] = (k + 1) * dt
        inside = ok
        x = np.where(ok[:, None], xn, x)
        v = np.where(ok[:, None], vn, v)
        if P is not None:
            Pn = P + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            P = np.where(ok[:, None, None], Pn, P)
        if record:
            trace.append((x.copy(), v.copy()))

    dx_dq = dx_dv = None
    if P is not None:
        dx_dq = P[:, :n, :n].reshape(shape + (n, n))
        dx_dv = P[:, :n, n:].reshape(shape + (n, n))
    out = Shot(x.reshape(shape + (n,)), v.reshape(shape + (n,)), dx_dq, dx_dv,
               inside.reshape(shape), exit_at.reshape(shape))
    if record:
        return out, trace
    return out


def _steps_for(s, steps):
    if steps is not None:
        return int(steps)
    return max(1, int(np.ceil(DEFAULT_STEPS * abs(s))))


def geodesic_flow(chart: MetricChart, start: TangentPoint, s: float, steps=None) -> GeodesicPath:
    """Follow gamma_{q,X} from parameter 0 to ``s``.

    ``steps`` is the total number of RK4 steps; by default 64 per unit of
    affine parameter.
    """
    q = chart.require(start.q)
    X = chart._points(start.X)
    if q.ndim != 1:
        raise ShapeError("geodesic_flow integrates a single path")
    nsteps = _steps_for(s, steps)
    shot, trace = shoot(chart, q, s * X, steps=nsteps, record=True)
    if not shot.inside:
        raise GeodesicExcursionError(
            f"geodesic left the domain of {chart.name!r}",
            exit_parameter=float(shot.exit_parameter) * s,
        )
    params = np.linspace(0.0, s, nsteps + 1)
    positions = np.array([t[0][0] for t in trace])
    # the integrated velocity is d/dt of gamma_{q,sX}(t) = s * gamma'_{q,X}(st)
    if s == 0:
        velocities = np.repeat(X[None, :], nsteps + 1, axis=0)
    else:
        velocities = np.array([t[1][0] for t in trace]) / s
    return GeodesicPath(start, params, positions, velocities, nsteps)


def _check_injectivity(chart, q, V):
    if np.isinf(chart.injectivity_floor):
        return
    norms = metric_norm(chart, q, V)
    if np.any(norms >= chart.injectivity_floor):
        raise InjectivityError(
            f"|X|_g = {float(np.max(norms)):.6g} exceeds injectivity floor {chart.injectivity_floor}"
        )


def exp_map(chart: MetricChart, p: TangentPoint, steps=DEFAULT_STEPS) -> np.ndarray:
    q = chart.require(p.q)
    X = chart._points(p.X)
    _check_injectivity(chart, q, X)
    shot = shoot(chart, q, X, steps=steps)
    if not np.all(shot.inside):
        raise GeodesicExcursionError(
            f"geodesic left the domain of {chart.name!r}",
            exit_parameter=float(np.nanmin(shot.exit_parameter)),
        )
    return shot.x


def log_map(chart: MetricChart, q, x, steps=DEFAULT_STEPS, tol=1e-13, max_iter=50) -> np.ndarray:
    """Inverse of exp_q by Newton shooting started at ``x - q``."""
    q = chart.require(q)
    x = chart.require(x)
    q, x = np.broadcast_arrays(q, x)
    X = x - q
    _check_injectivity(chart, q, X * (2.0 / 3.0))
    scale = 1.0 + np.abs(x)
    for _ in range(max_iter):
        shot = shoot(chart, q, X, steps=steps, jacobian=True)
        if not np.all(shot.inside):
            raise ConvergenceError("Newton iterate left the chart domain")
        res = shot.x - x
        if np.all(np.abs(res) <= tol * scale):
            break
        X = X - np.linalg.solve(shot.dx_dv, res[..., None])[..., 0]
    else:
        raise ConvergenceError(f"log_map did not converge in {max_iter} iterations")
    _check_injectivity(chart, q, X)
    return X


def jacobi_fields(chart: MetricChart, p: TangentPoint, s: float, steps=DEFAULT_STEPS) -> JacobiData:
    """h = dx/dq and h_tilde = dx/dX for x = gamma_{q,X}(s)."""
    q = chart.require(p.q)
    X = chart._points(p.X)
    n = chart.dim
    if s == 0:
        eye = np.broadcast_to(np.eye(n), q.shape[:-1] + (n, n)).copy()
        return JacobiData(eye, np.zeros_like(eye), 0.0)
    _check_injectivity(chart, q, s * X)
    shot = shoot(chart, q, s * X, steps=steps, jacobian=True)
    if not np.all(shot.inside):
        raise GeodesicExcursionError("geodesic left the chart domain",
                                     exit_parameter=float(np.nanmin(shot.exit_parameter)) * s)
    return JacobiData(shot.dx_dq, s * shot.dx_dv, float(s))


def jacobian_from_blocks(chart, q, x, y, D, s):
    """J from the endpoints and the 2n x 2n Jacobian d(x, y)/d(q, X)."""
    n = chart.dim
    gx = np.linalg.det(chart.g(x))
    gy = np.linalg.det(chart.g(y))
    gq = np.linalg.det(chart.g(q))
    return (2.0 * abs(s)) ** (-n) * np.sqrt(gx * gy) / gq * np.abs(np.linalg.det(D))


def jacobian_J(chart: MetricChart, p: TangentPoint, s: float, steps=DEFAULT_STEPS):
    """Volume distortion of (q, X) -> (gamma(s), gamma(-s)) relative to the flat case.

    Normalized so that J = 1 identically on a flat chart.
    """
    q = chart.require(p.q)
    X = chart._points(p.X)
    if s == 0:
        return np.ones(q.shape[:-1]) if q.ndim > 1 else 1.0
    plus = jacobi_fields(chart, p, s, steps=steps)
    minus = jacobi_fields(chart, p, -s, steps=steps)
    xp = shoot(chart, q, s * X, steps=steps).x
    xm = shoot(chart, q, -s * X, steps=steps).x
    D = np.concatenate([
        np.concatenate([plus.h, plus.h_tilde], axis=-1),
        np.concatenate([minus.h, minus.h_tilde], axis=-1),
    ], axis=-2)
    J = jacobian_from_blocks(chart, q, xp, xm, D, s)
    return float(J) if np.ndim(J) == 0 else J
