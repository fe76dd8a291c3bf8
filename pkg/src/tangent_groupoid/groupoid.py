"""Tangent groupoid elements, the chart Phi and boundary diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import (
    ComposabilityError,
    ConvergenceError,
    DomainError,
    InjectivityError,
    PreconditionError,
)
from .geometry import DEFAULT_STEPS, MetricChart, TangentPoint, metric_norm, shoot

HBAR0 = 1.0
BASE_ATOL = 1e-12

MOYAL = (0.5, -0.5)
CONNES = (0.0, -1.0)


def _vec(a):
    return np.atleast_1d(np.asarray(a, dtype=float)).copy()


@dataclass(frozen=True, eq=False)
class Interior:
    x: np.ndarray
    y: np.ndarray
    hbar: float
    hbar0: float = HBAR0

    def __post_init__(self):
        object.__setattr__(self, "x", _vec(self.x))
        object.__setattr__(self, "y", _vec(self.y))
        object.__setattr__(self, "hbar", float(self.hbar))
        if not 0.0 < self.hbar <= self.hbar0:
            raise ValueError(f"interior elements need 0 < hbar <= {self.hbar0}, got {self.hbar}")
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have the same dimension")

    def __eq__(self, other):
        return (isinstance(other, Interior) and self.hbar == other.hbar
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Boundary:
    q: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _vec(self.q))
        object.__setattr__(self, "X", _vec(self.X))
        if self.q.shape != self.X.shape:
            raise ValueError("q and X must have the same dimension")

    @property
    def hbar(self):
        return 0.0

    @property
    def tangent(self):
        return TangentPoint(self.q, self.X)

    def __eq__(self, other):
        return (isinstance(other, Boundary) and np.array_equal(self.q, other.q)
                and np.array_equal(self.X, other.X))

    __hash__ = None


GroupoidElement = Union[Interior, Boundary]


def close(g: GroupoidElement, h: GroupoidElement, atol=BASE_ATOL) -> bool:
    """Equality up to ``atol`` in chart coordinates."""
    if isinstance(g, Interior) and isinstance(h, Interior):
        return (g.hbar == h.hbar and np.allclose(g.x, h.x, rtol=0, atol=atol)
                and np.allclose(g.y, h.y, rtol=0, atol=atol))
    if isinstance(g, Boundary) and isinstance(h, Boundary):
        return np.allclose(g.q, h.q, rtol=0, atol=atol) and np.allclose(g.X, h.X, rtol=0, atol=atol)
    return False


def composability(g: GroupoidElement, h: GroupoidElement, atol=BASE_ATOL) -> Optional[str]:
    """Return None if (g, h) is composable, else the failed condition."""
    if type(g) is not type(h):
        return "elements lie in different strata"
    if isinstance(g, Interior):
        if g.hbar != h.hbar:
            return f"hbar mismatch ({g.hbar} != {h.hbar})"
        if not np.allclose(g.y, h.x, rtol=0, atol=atol):
            return "source of the first element differs from range of the second"
        return None
    if not np.allclose(g.q, h.q, rtol=0, atol=atol):
        return "boundary base points differ"
    return None


@dataclass(frozen=True, eq=False)
class ComposablePair:
    g: GroupoidElement
    h: GroupoidElement

    def __post_init__(self):
        reason = composability(self.g, self.h)
        if reason is not None:
            raise ComposabilityError(reason)


def compose(g, h=None) -> GroupoidElement:
    """Product g.h; accepts a ComposablePair or two elements."""
    if h is None:
        if not isinstance(g, ComposablePair):
            raise TypeError("compose needs a ComposablePair or two elements")
        pair = g
    else:
        pair = ComposablePair(g, h)
    g, h = pair.g, pair.h
    if isinstance(g, Interior):
        return Interior(g.x, h.y, g.hbar, g.hbar0)
    return Boundary(g.q, g.X + h.X)


def inverse(g: GroupoidElement) -> GroupoidElement:
    if isinstance(g, Interior):
        return Interior(g.y, g.x, g.hbar, g.hbar0)
    return Boundary(g.q, -g.X)


def range_(g: GroupoidElement) -> GroupoidElement:
    if isinstance(g, Interior):
        return Interior(g.x, g.x, g.hbar, g.hbar0)
    return Boundary(g.q, np.zeros_like(g.X))


def source(g: GroupoidElement) -> GroupoidElement:
    if isinstance(g, Interior):
        return Interior(g.y, g.y, g.hbar, g.hbar0)
    return Boundary(g.q, np.zeros_like(g.X))


def is_unit(g: GroupoidElement) -> bool:
    if isinstance(g, Interior):
        return bool(np.array_equal(g.x, g.y))
    return bool(not np.any(g.X))


def _phi_matrices(phi, n):
    p1, p2 = phi
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    p1 = p1 * np.eye(n) if p1.ndim == 0 else p1
    p2 = p2 * np.eye(n) if p2.ndim == 0 else p2
    return p1, p2


def phi_chart(chart: MetricChart, p: TangentPoint, hbar: float, phi=MOYAL,
              steps=DEFAULT_STEPS, hbar0=HBAR0) -> GroupoidElement:
    """(q, X, hbar) -> (exp_q(hbar phi1 X), exp_q(hbar phi2 X), hbar); boundary at hbar = 0.

    The default identification is the symmetric one; ``phi=CONNES`` gives
    (q, exp_q(-hbar X)).
    """
    if hbar == 0:
        return Boundary(p.q, p.X)
    if not 0 < hbar <= hbar0:
        raise ValueError(f"hbar must lie in [0, {hbar0}]")
    q = chart.require(p.q)
    p1, p2 = _phi_matrices(phi, chart.dim)
    V = hbar * np.stack([p1 @ p.X, p2 @ p.X])
    if not np.isinf(chart.injectivity_floor):
        if np.any(metric_norm(chart, q, V) >= chart.injectivity_floor):
            raise InjectivityError("hbar*X exceeds the injectivity floor")
    shot = shoot(chart, q, V, steps=steps)
    if not np.all(shot.inside):
        raise DomainError("image of Phi leaves the chart domain")
    return Interior(shot.x[0], shot.x[1], hbar, hbar0)


class InverseResult(NamedTuple):
    q: np.ndarray
    X: np.ndarray
    D: np.ndarray
    ok: np.ndarray
    x: np.ndarray
    y: np.ndarray


def phi_inverse_batch(chart: MetricChart, x, y, hbar, phi=MOYAL, steps=DEFAULT_STEPS,
                      tol=1e-13, max_iter=30) -> InverseResult:
    """Newton solve of Phi(q, X, hbar) = (x, y) for many pairs at once.

    ``hbar`` is a scalar or one value per pair.  Returns the solution, the
    Jacobian d(x, y)/d(q, X) at the solution and a mask of pairs for which the
    solve stayed admissible and converged.
    """
    n = chart.dim
    x = np.asarray(x, dtype=float).reshape(-1, n)
    y = np.asarray(y, dtype=float).reshape(-1, n)
    p1, p2 = _phi_matrices(phi, n)
    dinv = np.linalg.inv(p1 - p2)
    b = x.shape[0]
    h = np.broadcast_to(np.asarray(hbar, dtype=float), (b,))[:, None]
    X = (x - y) @ dinv.T / h
    q = x - h * X @ p1.T
    ok = np.ones(b, dtype=bool)
    active = np.ones(b, dtype=bool)
    D = np.zeros((b, 2 * n, 2 * n))
    scale = 1.0 + np.maximum(np.abs(x), np.abs(y))
    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        qa, Xa = q[idx], X[idx]
        ha = h[idx]
        V = ha * np.stack([Xa @ p1.T, Xa @ p2.T])
        shot = shoot(chart, np.broadcast_to(qa, V.shape), V, steps=steps, jacobian=True)
        inside = np.all(shot.inside, axis=0) & chart.contains(qa)
        Da = np.empty((idx.size, 2 * n, 2 * n))
        Da[:, :n, :n] = shot.dx_dq[0]
        Da[:, n:, :n] = shot.dx_dq[1]
        Da[:, :n, n:] = ha[:, :, None] * shot.dx_dv[0] @ p1
        Da[:, n:, n:] = ha[:, :, None] * shot.dx_dv[1] @ p2
        D[idx] = Da
        res = np.concatenate([shot.x[0] - x[idx], shot.x[1] - y[idx]], axis=-1)
        sc = np.concatenate([scale[idx], scale[idx]], axis=-1)
        done = np.all(np.abs(res) <= tol * sc, axis=-1)
        bad = ~inside
        ok[idx[bad]] = False
        finished = done | bad
        active[idx[finished]] = False
        if it == max_iter:
            ok[idx[~finished]] = False
            break
        go = ~finished
        if not np.any(go):
            break
        try:
            delta = np.linalg.solve(Da[go], -res[go][..., None])[..., 0]
        except np.linalg.LinAlgError:
            ok[idx[go]] = False
            active[idx[go]] = False
            break
        q[idx[go]] += delta[:, :n]
        X[idx[go]] += delta[:, n:]
    if not np.isinf(chart.injectivity_floor):
        V = h * np.stack([X @ p1.T, X @ p2.T])
        inj = np.all(metric_norm(chart, np.broadcast_to(q, V.shape), V) < chart.injectivity_floor, axis=0)
        ok &= inj
    return InverseResult(q, X, D, ok, x, y)


def phi_inverse(chart: MetricChart, g: Interior, phi=MOYAL, steps=DEFAULT_STEPS) -> TangentPoint:
    """Recover (q, X) from an interior element."""
    if not isinstance(g, Interior):
        raise TypeError("phi_inverse needs an interior element")
    chart.require(g.x)
    chart.require(g.y)
    if not np.isinf(chart.injectivity_floor):
        sep = metric_norm(chart, 0.5 * (g.x + g.y), g.x - g.y)
        if sep >= 2 * chart.injectivity_floor:
            raise InjectivityError("x and y are too far apart for the tubular chart")
    res = phi_inverse_batch(chart, g.x, g.y, g.hbar, phi=phi, steps=steps)
    if not res.ok[0]:
        raise ConvergenceError("Newton solve for the inverse of Phi failed")
    return TangentPoint(res.q[0], res.X[0])


@dataclass(frozen=True)
class LimitReport:
    converged: bool
    limit: Optional[Boundary]
    order: Optional[float]
    message: str
    estimates: tuple = ()


def boundary_limit(chart: MetricChart, sequence: Sequence[Interior], phi=MOYAL,
                   tol=1e-6, steps=DEFAULT_STEPS) -> LimitReport:
    """Estimate the ħ -> 0 limit of a sequence of interior elements.

    Each term is pulled back through Phi and the resulting (q, X) sequence is
    extrapolated to hbar = 0 by repeated Richardson elimination (a Neville
    table).  The sequence counts as divergent when successive differences
    stop shrinking or the last two extrapolants disagree by more than ``tol``.
    The reported order is the empirical rate of the raw terms.
    """
    seq = list(sequence)
    if len(seq) < 3:
        raise PreconditionError("boundary_limit needs at least three terms")
    hb = np.array([g.hbar for g in seq])
    if np.any(np.diff(hb) >= 0):
        raise PreconditionError("hbar must be strictly decreasing")
    n = chart.dim
    xs = np.array([np.atleast_1d(g.x) for g in seq], dtype=float).reshape(-1, n)
    ys = np.array([np.atleast_1d(g.y) for g in seq], dtype=float).reshape(-1, n)
    if not (np.all(chart.contains(xs)) and np.all(chart.contains(ys))):
        raise DomainError("sequence leaves the chart domain")
    if not np.isinf(chart.injectivity_floor):
        sep = metric_norm(chart, 0.5 * (xs + ys), xs - ys)
        if np.any(sep >= 2 * chart.injectivity_floor):
            return LimitReport(False, None, None,
                               "divergent: x and y are too far apart for the tubular chart")
    res = phi_inverse_batch(chart, xs, ys, hb, phi=phi, steps=steps)
    if not np.all(res.ok):
        return LimitReport(False, None, None, "divergent: Newton solve for the inverse of Phi failed")
    a = np.concatenate([res.q, res.X], axis=1)
    diffs = np.linalg.norm(np.diff(a, axis=0), axis=1)
    scale = 1.0 + np.linalg.norm(a[-1])
    # terms constant up to Newton round-off
    if diffs[-1] <= max(1e-12, 1e-6 * tol) * scale:
        limit = a[-1]
        return LimitReport(True, Boundary(limit[:n], limit[n:]), None, "exact", tuple(map(tuple, a)))
    order = None
    if diffs[-2] > 0 and diffs[-1] > 0:
        order = float(np.log(diffs[-2] / diffs[-1]) / np.log(hb[-2] / hb[-1]))
    if diffs[-1] >= diffs[-2] or (order is not None and order <= 0.1):
        return LimitReport(False, None, order, "divergent: differences do not decrease",
                           tuple(map(tuple, a)))
    # Neville table for the polynomial extrapolation of the terms to hbar = 0
    table = [a[0]]
    diag = [a[0]]
    for i in range(1, len(a)):
        row = [a[i]]
        for j in range(1, i + 1):
            prev = row[j - 1]
            row.append(prev + (prev - table[j - 1]) * hb[i] / (hb[i - j] - hb[i]))
        table = row
        diag.append(row[-1])
    limit = diag[-1]
    err = float(np.linalg.norm(diag[-1] - diag[-2]))
    if err > tol * scale:
        return LimitReport(False, None, order,
                           f"divergent: extrapolation error {err:.3g} above tolerance",
                           tuple(map(tuple, a)))
    return LimitReport(True, Boundary(limit[:n], limit[n:]), order,
                       f"converged (extrapolation error {err:.3g})", tuple(map(tuple, a)))


class TriangleResult(NamedTuple):
    defect: float
    Z: np.ndarray
    s: np.ndarray
    note: str


TRANSPORT_NOTE = ("vectors at q', q and s compared by chart components; "
                  "no parallel transport applied")


def triangle(chart: MetricChart, q_prime, q, X, Y, hbar, steps=DEFAULT_STEPS,
             check_tol=1e-8) -> TriangleResult:
    """Composition defect X + Y - Z for Phi(q', X) . Phi(q, Y) = Phi(s, Z)."""
    q_prime, q, X, Y = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (q_prime, q, X, Y))
    a = phi_chart(chart, TangentPoint(q_prime, X), hbar, steps=steps)
    b = phi_chart(chart, TangentPoint(q, Y), hbar, steps=steps)
    if not np.allclose(a.y, b.x, rtol=0, atol=check_tol):
        raise PreconditionError(
            f"exp_q'(-hbar X/2) and exp_q(hbar Y/2) differ by {np.max(np.abs(a.y - b.x)):.3g}")
    tp = phi_inverse(chart, Interior(a.x, b.y, hbar), steps=steps)
    return TriangleResult(float(np.linalg.norm(X + Y - tp.X)), tp.X, tp.q, TRANSPORT_NOTE)


def triangle_defect(chart: MetricChart, q_prime, q, X, Y, hbar, steps=DEFAULT_STEPS) -> float:
    """Norm of X + Y - Z in chart components (see ``triangle`` for details)."""
    return triangle(chart, q_prime, q, X, Y, hbar, steps=steps).defect


def matching_pair(chart: MetricChart, q_prime, X, W, hbar, steps=DEFAULT_STEPS):
    """Build (q, Y) with exp_q(hbar Y/2) = exp_q'(-hbar X/2).

    ``W`` is a velocity at the shared point y; q is reached from y along
    -hbar W/2 and Y is read off the reversed geodesic.
    """
    q_prime = np.atleast_1d(np.asarray(q_prime, dtype=float))
    X = np.atleast_1d(np.asarray(X, dtype=float))
    W = np.atleast_1d(np.asarray(W, dtype=float))
    y = shoot(chart, q_prime, -0.5 * hbar * X, steps=steps).x
    back = shoot(chart, y, -0.5 * hbar * W, steps=steps)
    return back.x, -2.0 * back.v / hbar
