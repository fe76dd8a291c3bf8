"""Built-in chart catalogue."""
from __future__ import annotations

import numpy as np
from numpy.polynomial import polynomial as P

from .geometry import MetricChart


def euclidean(dim=1, half_width=10.0):
    lo = -half_width * np.ones(dim)

    def metric(q):
        q = np.asarray(q)
        return np.broadcast_to(np.eye(dim), q.shape[:-1] + (dim, dim)).copy()

    def grad(q):
        return np.zeros(np.shape(q)[:-1] + (dim,) * 3)

    def hess(q):
        return np.zeros(np.shape(q)[:-1] + (dim,) * 4)

    return MetricChart(
        name=f"euclidean-{dim}d", dim=dim, lower=lo, upper=-lo,
        metric_fn=metric, metric_grad_fn=grad, metric_hess_fn=hess,
        injectivity_floor=np.inf, cyclic_axes=tuple(range(dim)), flat=True,
        params={"half_width": half_width},
    )


def sphere_polar(radius=1.0, theta_margin=0.3, phi_range=(-np.pi, np.pi), injectivity_floor=1.0):
    """Round sphere in polar coordinates (theta, phi), g = R^2 diag(1, sin^2 theta)."""
    r2 = radius**2

    def metric(q):
        q = np.asarray(q)
        s = np.sin(q[..., 0])
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = r2
        out[..., 1, 1] = r2 * s * s
        return out

    def grad(q):
        q = np.asarray(q)
        out = np.zeros(q.shape[:-1] + (2, 2, 2))
        out[..., 1, 1, 0] = r2 * np.sin(2 * q[..., 0])
        return out

    def hess(q):
        q = np.asarray(q)
        out = np.zeros(q.shape[:-1] + (2, 2, 2, 2))
        out[..., 1, 1, 0, 0] = 2 * r2 * np.cos(2 * q[..., 0])
        return out

    def connection(q):
        th = np.asarray(q)[..., 0]
        s, c = np.sin(th), np.cos(th)
        gamma = np.zeros(th.shape + (2, 2, 2))
        gamma[..., 0, 1, 1] = -s * c
        gamma[..., 1, 0, 1] = gamma[..., 1, 1, 0] = c / s
        dgamma = np.zeros(th.shape + (2, 2, 2, 2))
        dgamma[..., 0, 1, 1, 0] = -np.cos(2 * th)
        dgamma[..., 1, 0, 1, 0] = dgamma[..., 1, 1, 0, 0] = -1.0 / (s * s)
        return gamma, dgamma

    def embed(q):
        th, ph = q[..., 0], q[..., 1]
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    def midpoint(x, y):
        # great-circle midpoint on the unit sphere; J = sin(2a) / (2a), a the half angle
        ux, uy = embed(np.asarray(x, dtype=float)), embed(np.asarray(y, dtype=float))
        s, d = ux + uy, ux - uy
        ns, nd = np.linalg.norm(s, axis=-1), np.linalg.norm(d, axis=-1)
        a = np.arctan2(nd, ns)
        m = s / ns[..., None]
        th = np.arccos(np.clip(m[..., 2], -1.0, 1.0))
        ph = np.arctan2(m[..., 1], m[..., 0])
        e = np.where(nd[..., None] > 0, d / np.where(nd > 0, nd, 1.0)[..., None], 0.0)
        e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
        e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], axis=-1)
        V = a[..., None] * np.stack([np.sum(e * e_th, axis=-1),
                                      np.sum(e * e_ph, axis=-1) / np.sin(th)], axis=-1)
        J = np.where(a > 0, np.sin(2 * a) / np.where(a > 0, 2 * a, 1.0), 1.0)
        return np.stack([th, ph], axis=-1), V, J

    return MetricChart(
        name="sphere-polar", dim=2,
        lower=[theta_margin, phi_range[0]], upper=[np.pi - theta_margin, phi_range[1]],
        metric_fn=metric, metric_grad_fn=grad, metric_hess_fn=hess, connection_fn=connection,
        midpoint_fn=midpoint,
        injectivity_floor=injectivity_floor * radius, cyclic_axes=(1,),
        params={"radius": radius, "theta_margin": theta_margin,
                "phi_range": list(phi_range), "injectivity_floor": injectivity_floor},
    )


def conformal_1d(coefficients=(0.0, 0.2, -0.05), half_width=5.0, injectivity_floor=np.inf):
    """g(q) = exp(2 lambda(q)) with lambda a polynomial in increasing-degree coefficients."""
    c = np.asarray(coefficients, dtype=float)
    c1 = P.polyder(c)
    c2 = P.polyder(c, 2)

    def metric(q):
        q = np.asarray(q)
        return np.exp(2 * P.polyval(q, c))[..., None]

    def grad(q):
        q = np.asarray(q)
        g = np.exp(2 * P.polyval(q, c))
        return (2 * P.polyval(q, c1) * g)[..., None, None]

    def hess(q):
        q = np.asarray(q)
        g = np.exp(2 * P.polyval(q, c))
        l1 = P.polyval(q, c1)
        return ((2 * P.polyval(q, c2) + 4 * l1 * l1) * g)[..., None, None, None]

    return MetricChart(
        name="conformal-1d", dim=1, lower=[-half_width], upper=[half_width],
        metric_fn=metric, metric_grad_fn=grad, metric_hess_fn=hess,
        injectivity_floor=injectivity_floor,
        params={"coefficients": c.tolist(), "half_width": half_width},
    )


CATALOGUE = {
    "euclidean-1d": lambda **kw: euclidean(1, **kw),
    "euclidean-2d": lambda **kw: euclidean(2, **kw),
    "sphere-polar": sphere_polar,
    "conformal-1d": conformal_1d,
}


def get_chart(name: str, **params) -> MetricChart:
    try:
        factory = CATALOGUE[name]
    except KeyError:
        raise KeyError(f"unknown chart {name!r}; choose from {sorted(CATALOGUE)}") from None
    chart = factory(**params)
    chart.validate()
    return chart
