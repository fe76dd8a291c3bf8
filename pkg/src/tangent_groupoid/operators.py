"""Discretized integral operators on L^2(M, dnu).

An operator is its kernel on a node grid plus the quadrature weights
w_i = sqrt(g(x_i)) dx^n, acting by (A f)_i = sum_j k_ij f_j w_j.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, svds

from .errors import ShapeError
from .transforms import KernelGrid, node_weights

NORM_KIND = "weighted-l2 operator norm"
DENSE_NORM_LIMIT = 1500


@dataclass(frozen=True, eq=False)
class KernelOperator:
    kernel: KernelGrid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.kernel.size,):
            raise ShapeError("one weight per node is required")
        if not np.all(w > 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_kernel(cls, k: KernelGrid) -> "KernelOperator":
        return cls(k, node_weights(k.chart, k.x_axes))

    @property
    def hbar(self):
        return self.kernel.hbar

    @property
    def values(self):
        return self.kernel.values

    @property
    def sparse(self):
        return sparse.issparse(self.kernel.values)

    def _like(self, values):
        return KernelOperator(self.kernel.with_values(values), self.weights)

    def _check(self, other):
        if not isinstance(other, KernelOperator):
            raise TypeError("expected a KernelOperator")
        if other.kernel.x_axes != self.kernel.x_axes or other.kernel.chart is not self.kernel.chart:
            raise ShapeError("operators live on different grids")
        if other.hbar != self.hbar:
            raise ShapeError(f"hbar mismatch ({self.hbar} != {other.hbar})")

    def __add__(self, other):
        self._check(other)
        return self._like(_sum(self.values, other.values))

    def __sub__(self, other):
        self._check(other)
        return self._like(_sum(self.values, -other.values))

    def __neg__(self):
        return self._like(-self.values)

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return self._like(self.values * c)

    __rmul__ = __mul__

    def matrix(self) -> np.ndarray:
        """Dense weighted matrix A_ij = k_ij w_j."""
        return self.kernel.dense() * self.weights[None, :]

    def matvec(self, f):
        return self.values @ (self.weights * f)


def _sum(a, b):
    if sparse.issparse(a) and sparse.issparse(b):
        return (a + b).tocsr()
    if sparse.issparse(a):
        a = a.toarray()
    if sparse.issparse(b):
        b = b.toarray()
    return a + b


def identity(chart, x_axes, hbar) -> KernelOperator:
    """Unit of the weighted kernel product: k_ij = delta_ij / w_j."""
    w = node_weights(chart, x_axes)
    k = KernelGrid(chart, tuple(x_axes), float(hbar), sparse.diags_array(1.0 / w).tocsr())
    return KernelOperator(k, w)


def op_product(A: KernelOperator, B: KernelOperator) -> KernelOperator:
    """(AB)(x, z) = sum_y a(x, y) b(y, z) w_y."""
    A._check(B)
    w = A.weights
    a, b = A.values, B.values
    if sparse.issparse(b):
        right = sparse.diags_array(w) @ b
    else:
        right = w[:, None] * b
    out = a @ right
    if sparse.issparse(out):
        out = out.tocsr()
        if out.nnz > 0.25 * out.shape[0] ** 2:
            out = out.toarray()
    return A._like(out)


def op_adjoint(A: KernelOperator) -> KernelOperator:
    v = A.values.conj().T
    if sparse.issparse(v):
        v = v.tocsr()
    return A._like(v)


def op_trace(A: KernelOperator) -> complex:
    return complex(np.sum(A.values.diagonal() * A.weights))


def commutator(A: KernelOperator, B: KernelOperator) -> KernelOperator:
    return op_product(A, B) - op_product(B, A)


def op_norm(A: KernelOperator, dense_limit=DENSE_NORM_LIMIT, tol=1e-12) -> float:
    """Largest singular value of D^1/2 K D^1/2, D = diag(w).

    This is the operator norm on the weighted l2 space; large operators use
    an iterative partial SVD with a fixed start vector.
    """
    s = np.sqrt(A.weights)
    N = s.size
    v = A.values
    if N <= dense_limit:
        dense = v.toarray() if sparse.issparse(v) else v
        return float(np.linalg.norm(s[:, None] * dense * s[None, :], 2))
    if sparse.issparse(v):
        S = sparse.diags_array(s)
        M = (S @ v @ S).tocsr()
        op = M
    else:
        M = s[:, None] * v * s[None, :]
        op = M
    if not np.any(M.data if sparse.issparse(M) else M):
        return 0.0
    v0 = np.cos(np.arange(N) * 0.7071) + 0.5
    sv = svds(op, k=1, v0=v0, tol=tol, return_singular_vectors=False, maxiter=20 * N)
    return float(sv[0])


def op_hs_norm(A: KernelOperator) -> float:
    w = A.weights
    v = A.values
    if sparse.issparse(v):
        coo = v.tocoo()
        return float(np.sqrt(np.sum(np.abs(coo.data) ** 2 * w[coo.row] * w[coo.col])))
    return float(np.sqrt(np.einsum("ij,i,j->", np.abs(v) ** 2, w, w)))


def rank_one(chart, x_axes, hbar, u, v) -> KernelOperator:
    """Kernel u(x) conj(v(y))."""
    w = node_weights(chart, x_axes)
    k = KernelGrid(chart, tuple(x_axes), float(hbar), np.outer(u, np.conj(v)))
    return KernelOperator(k, w)


def inner(chart, x_axes, u, v) -> complex:
    """<u, v> in L^2(dnu), conjugate-linear in the first slot."""
    w = node_weights(chart, x_axes)
    return complex(np.sum(np.conj(u) * v * w))
