import numpy as np
import pytest
from scipy import sparse

from tangent_groupoid import charts
from tangent_groupoid.errors import ShapeError
from tangent_groupoid.operators import (
    KernelOperator,
    commutator,
    identity,
    inner,
    op_adjoint,
    op_hs_norm,
    op_norm,
    op_product,
    op_trace,
    rank_one,
)
from tangent_groupoid.quantization import MOYAL, quantize
from tangent_groupoid.transforms import KernelGrid, UniformAxis, mesh, node_weights, sample_symbol

FLAT1 = charts.get_chart("euclidean-1d")
SPHERE = charts.get_chart("sphere-polar")
X1 = (UniformAxis.cells(-2, 2, 41),)
XS = (UniformAxis.cells(1.0, 2.0, 9), UniformAxis.cells(-0.5, 0.5, 7))


def random_operator(chart, x_axes, seed, hbar=0.1):
    rng = np.random.default_rng(seed)
    N = int(np.prod([a.count for a in x_axes]))
    k = KernelGrid(chart, x_axes, hbar, rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N)))
    return KernelOperator.from_kernel(k)


def test_identity_is_unit():
    for chart, axes in ((FLAT1, X1), (SPHERE, XS)):
        A = random_operator(chart, axes, 0)
        I = identity(chart, axes, 0.1)
        assert np.allclose(op_product(I, A).kernel.dense(), A.kernel.dense(), atol=1e-12)
        assert np.allclose(op_product(A, I).kernel.dense(), A.kernel.dense(), atol=1e-12)
        assert op_norm(I) == pytest.approx(1.0, abs=1e-12)


def test_rank_one_composition():
    x = mesh(X1)[:, 0]
    u, v, s, t = np.exp(-x**2), np.cos(x), x * np.exp(-x**2), np.ones_like(x)
    A = rank_one(FLAT1, X1, 0.1, u, v)
    B = rank_one(FLAT1, X1, 0.1, s, t)
    AB = op_product(A, B)
    expect = inner(FLAT1, X1, v, s) * np.outer(u, t)
    assert np.allclose(AB.kernel.dense(), expect, atol=1e-13)


def test_product_against_dense_oracle():
    A = random_operator(SPHERE, XS, 1)
    B = random_operator(SPHERE, XS, 2)
    w = node_weights(SPHERE, XS)
    ref = A.kernel.dense() @ np.diag(w) @ B.kernel.dense()
    assert np.allclose(op_product(A, B).kernel.dense(), ref, atol=1e-12)
    assert np.allclose(op_product(A, B).matrix(), A.matrix() @ B.matrix(), atol=1e-12)


def test_sparse_and_dense_products_agree():
    A = random_operator(FLAT1, X1, 3)
    band = sparse.diags_array([np.ones(40), 2 * np.ones(41), np.ones(40)], offsets=[-1, 0, 1]).tocsr()
    S = KernelOperator.from_kernel(A.kernel.with_values(band))
    D = KernelOperator.from_kernel(A.kernel.with_values(band.toarray()))
    assert np.allclose(op_product(A, S).kernel.dense(), op_product(A, D).kernel.dense(), atol=1e-12)
    assert np.allclose(op_product(S, S).kernel.dense(), op_product(D, D).kernel.dense(), atol=1e-12)
    assert op_norm(S) == pytest.approx(op_norm(D), rel=1e-12)
    assert op_hs_norm(S) == pytest.approx(op_hs_norm(D), rel=1e-12)


def test_adjoint():
    A = random_operator(SPHERE, XS, 4)
    f = np.random.default_rng(5).normal(size=A.weights.size)
    g = np.random.default_rng(6).normal(size=A.weights.size)
    lhs = inner(SPHERE, XS, g, A.matvec(f))
    rhs = inner(SPHERE, XS, op_adjoint(A).matvec(g), f)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_trace_cyclic_and_linear():
    A = random_operator(SPHERE, XS, 7)
    B = random_operator(SPHERE, XS, 8)
    assert op_trace(op_product(A, B)) == pytest.approx(op_trace(op_product(B, A)), rel=1e-12)
    assert op_trace(A + 2.0 * B) == pytest.approx(op_trace(A) + 2 * op_trace(B), rel=1e-12)
    assert abs(op_trace(commutator(A, B))) < 1e-10 * op_hs_norm(A) * op_hs_norm(B)


def test_trace_of_rank_one_is_inner_product():
    x = mesh(X1)[:, 0]
    u, v = np.exp(-x**2), np.sin(x) + 1j
    assert op_trace(rank_one(FLAT1, X1, 0.1, u, v)) == pytest.approx(inner(FLAT1, X1, v, u), rel=1e-14)


def test_moyal_trace_matches_phase_space_integral():
    Q = (UniformAxis.cells(-4, 4, 64),)
    P = (UniformAxis.symmetric(4, 64),)
    a = sample_symbol(FLAT1, lambda q, p: np.exp(-(q[..., 0] - 0.3) ** 2 / 0.3 - (p[..., 0] + 0.2) ** 2 / 0.4), Q, P)
    for hbar in (0.2, 0.05):
        A = KernelOperator.from_kernel(quantize(MOYAL, FLAT1, a, hbar))
        # (2 pi hbar)^-1 * pi * sqrt(0.3 * 0.4)
        ref = np.sqrt(0.12) / (2 * hbar)
        assert op_trace(A) == pytest.approx(ref, rel=1e-10)


def test_op_norm_against_svd():
    A = random_operator(SPHERE, XS, 9)
    s = np.sqrt(A.weights)
    ref = np.linalg.svd(s[:, None] * A.kernel.dense() * s[None, :], compute_uv=False)[0]
    assert op_norm(A) == pytest.approx(ref, rel=1e-12)
    assert op_norm(A, dense_limit=10) == pytest.approx(ref, rel=1e-9)


def test_op_norm_rank_one():
    x = mesh(X1)[:, 0]
    u, v = np.exp(-x**2), np.cos(x)
    A = rank_one(FLAT1, X1, 0.1, u, v)
    ref = np.sqrt(inner(FLAT1, X1, u, u).real * inner(FLAT1, X1, v, v).real)
    assert op_norm(A) == pytest.approx(ref, rel=1e-12)
    assert op_hs_norm(A) == pytest.approx(ref, rel=1e-12)
    assert op_norm(0.0 * A, dense_limit=1) == 0.0


def test_commutator_antisymmetric():
    A = random_operator(FLAT1, X1, 10)
    B = random_operator(FLAT1, X1, 11)
    C = commutator(A, B) + commutator(B, A)
    assert np.max(np.abs(C.kernel.dense())) < 1e-12 * op_hs_norm(A) * op_hs_norm(B)


def test_grid_and_hbar_mismatch():
    A = random_operator(FLAT1, X1, 0, hbar=0.1)
    with pytest.raises(ShapeError):
        op_product(A, random_operator(FLAT1, X1, 0, hbar=0.2))
    with pytest.raises(ShapeError):
        A + random_operator(FLAT1, (UniformAxis.cells(-2, 2, 43),), 0)
    with pytest.raises(ShapeError):
        KernelOperator(A.kernel, np.ones(3))
    with pytest.raises(ValueError):
        KernelOperator(A.kernel, -np.ones(41))
