import dataclasses

import numpy as np
import pytest

from tangent_groupoid import charts
from tangent_groupoid.errors import ShapeError, UndefinedRatioError, UnsupportedError
from tangent_groupoid.operators import identity
from tangent_groupoid.quantization import (
    ANTISTANDARD,
    MOYAL,
    STANDARD,
    QuantizationScheme,
    dequantize,
    flat_closed_form_kernel,
    hs_norm,
    kernel_geometry,
    ordering_of_scheme,
    quantize,
    quantum_axes,
    reality_defect,
    symbol_band,
)
from tangent_groupoid.transforms import UniformAxis, mesh, sample_symbol

FLAT1 = charts.get_chart("euclidean-1d")
FLAT2 = charts.get_chart("euclidean-2d")
SPHERE = charts.get_chart("sphere-polar")

Q1 = (UniformAxis.cells(-4, 4, 64),)
P1 = (UniformAxis.symmetric(4, 64),)


def window(q, p, wq=0.5, wp=0.5):
    return np.exp(-0.5 * (q / wq) ** 2 - 0.5 * (p / wp) ** 2)


def gaussian_symbol(chart=FLAT1, q_axes=Q1, p_axes=P1, q0=0.3, p0=-0.4):
    return sample_symbol(chart, lambda q, p: window(q[..., 0] - q0, p[..., 0] - p0), q_axes, p_axes)


def random_real_symbol(seed, chart=FLAT1, q_axes=Q1, p_axes=P1):
    rng = np.random.default_rng(seed)
    kq, kp = rng.uniform(-3, 3, (2, 3))
    c = rng.normal(size=3) + 1j * rng.normal(size=3)

    def fn(q, p):
        q, p = q[..., 0], p[..., 0]
        waves = np.exp(1j * (q[..., None] * kq + p[..., None] * kp)) @ c
        return np.real(waves) * window(q, p, 0.6, 0.6)

    return sample_symbol(chart, fn, q_axes, p_axes)


def test_scheme_constructors():
    assert MOYAL.moyal and MOYAL.connes_type
    assert STANDARD.connes_type and not STANDARD.moyal
    assert QuantizationScheme.shifted(0.0).moyal
    assert QuantizationScheme.shifted(-0.5).phi == (0.0, -1.0)
    d = ANTISTANDARD.with_placement("quantize_only").descriptor()
    back = QuantizationScheme.from_descriptor(d)
    assert back.phi == ANTISTANDARD.phi and back.j_placement == "quantize_only"
    with pytest.raises(ValueError):
        QuantizationScheme(0.3, 0.3)
    with pytest.raises(ValueError):
        QuantizationScheme(0.5, -0.5, j_placement="nowhere")
    assert not QuantizationScheme(1.0, -1.0).connes_type


def test_ordering_functions():
    f = ordering_of_scheme(MOYAL, 0.1)
    th, ta = np.meshgrid(np.linspace(-2, 2, 7), np.linspace(-2, 2, 7))
    assert np.all(f(th, ta) == 1)
    g = ordering_of_scheme(STANDARD, 0.1)
    assert np.allclose(g(th, ta), np.exp(1j * th * ta / (2 * 0.1)), atol=1e-15)
    for s in (MOYAL, STANDARD, ANTISTANDARD, QuantizationScheme.shifted(0.2)):
        o = ordering_of_scheme(s, 0.3)
        assert o(0.0, 0.0) == 1 and o.semitracial() and o.tracial()
        assert o.real() == s.moyal
    with pytest.raises(UnsupportedError):
        ordering_of_scheme(QuantizationScheme(1.0, -1.0), 0.1)


def test_ordering_function_vector_arguments():
    o = ordering_of_scheme(STANDARD, 0.2, dim=2)
    th = np.array([0.3, -0.1])
    ta = np.array([1.0, 2.0])
    assert o(th, ta) == pytest.approx(np.exp(1j * th @ ta / 0.4))


def test_quantum_axes_are_odd_and_refine():
    a = gaussian_symbol()
    coarse = quantum_axes([a], 0.2)
    fine = quantum_axes([a], 0.05)
    assert coarse[0].count % 2 == 1 and fine[0].count % 2 == 1
    assert fine[0].count > 3 * coarse[0].count
    assert coarse[0].lo == Q1[0].lo and coarse[0].hi == Q1[0].hi


def test_symbol_band_of_gaussian():
    P, K, Xc = symbol_band(gaussian_symbol(), 1e-13)
    # |p + 0.4| < 0.5 * sqrt(2 ln 1e13) ~ 3.87
    assert 3.5 < P[0] < 4.1
    # q-width 0.5: frequency cut ~ 2 * 3.87 / 0.5, X cut from the p-width similarly
    assert 10 < K[0] < 20 and 10 < Xc[0] < 30


def test_moyal_kernel_is_hermitian():
    a = gaussian_symbol()
    k = quantize(MOYAL, FLAT1, a, 0.1).dense()
    assert np.max(np.abs(k - k.conj().T)) < 1e-12 * np.max(np.abs(k))


def kohn_nirenberg_oracle(fn, x, y, hbar, P=4.0, count=4 * 64):
    # direct quadrature of (2 pi hbar)^-1 int a(x, p) exp(i p (x - y) / hbar) dp
    p = np.linspace(-P, P, count + 1)
    integrand = fn(x[:, None], p[None, :]) * np.exp(1j * p[None, :] * (x - y)[:, None] / hbar)
    return np.trapezoid(integrand, p, axis=1) / (2 * np.pi * hbar)


def test_standard_scheme_matches_ordering_oracle():
    fn = lambda q, p: q * p * window(q, p, 0.5, 0.6)
    a = sample_symbol(FLAT1, lambda q, p: fn(q[..., 0], p[..., 0]), Q1, P1)
    hbar = 0.2
    k = quantize(STANDARD, FLAT1, a, hbar)
    nodes = k.nodes[:, 0]
    K = k.dense()
    rng = np.random.default_rng(0)
    i = rng.integers(0, nodes.size, 60)
    j = np.clip(i + rng.integers(-6, 7, 60), 0, nodes.size - 1)
    ref = kohn_nirenberg_oracle(fn, nodes[i], nodes[j], hbar, count=4 * 64 * 8)
    assert np.max(np.abs(K[i, j] - ref)) < 1e-8 * np.max(np.abs(K))


def test_moyal_matches_weyl_oracle():
    fn = lambda q, p: window(q - 0.2, p + 0.3, 0.5, 0.5) * (1 + q)
    a = sample_symbol(FLAT1, lambda q, p: fn(q[..., 0], p[..., 0]), Q1, P1)
    hbar = 0.15
    k = quantize(MOYAL, FLAT1, a, hbar)
    x = k.nodes[:, 0]
    K = k.dense()
    i = np.arange(0, x.size, 7)
    j = np.clip(i + 3, 0, x.size - 1)
    p = np.linspace(-4, 4, 4 * 64 * 8 + 1)
    mid = 0.5 * (x[i] + x[j])
    ref = np.trapezoid(fn(mid[:, None], p) * np.exp(1j * p * (x[i] - x[j])[:, None] / hbar), p, axis=1) / (2 * np.pi * hbar)
    assert np.max(np.abs(K[i, j] - ref)) < 1e-8 * np.max(np.abs(K))


@pytest.mark.parametrize("scheme", [MOYAL, STANDARD, ANTISTANDARD])
def test_closed_form_agrees_with_quantize(scheme):
    for seed in range(3):
        a = random_real_symbol(seed)
        for hbar in (0.3, 0.1):
            k1 = quantize(scheme, FLAT1, a, hbar)
            k2 = flat_closed_form_kernel(scheme, a, hbar, x_axes=k1.x_axes)
            diff = k2.with_values(k2.dense() - k1.dense())
            assert hs_norm(diff) < 1e-9 * hs_norm(k2)


def test_translation_equivariance():
    hbar = 0.1
    a = gaussian_symbol(q0=0.0)
    x_axes = quantum_axes([a], hbar)
    s = 4 * x_axes[0].step
    b = gaussian_symbol(q0=s)
    K = flat_closed_form_kernel(MOYAL, a, hbar, x_axes).dense()
    L = flat_closed_form_kernel(MOYAL, b, hbar, x_axes).dense()
    # shifted symbol: L(x + s, y + s) = K(x, y) away from the box edges
    assert np.max(np.abs(L[4:, 4:] - K[:-4, :-4])) < 1e-10 * np.max(np.abs(K))


def test_momentum_shift_covariance():
    hbar = 0.1
    a = gaussian_symbol(p0=0.0)
    p_shift = 3 * P1[0].step
    b = gaussian_symbol(p0=p_shift)
    x_axes = quantum_axes([a, b], hbar)
    K = flat_closed_form_kernel(MOYAL, a, hbar, x_axes).dense()
    L = flat_closed_form_kernel(MOYAL, b, hbar, x_axes).dense()
    x = mesh(x_axes)[:, 0]
    phase = np.exp(1j * p_shift * (x[:, None] - x[None, :]) / hbar)
    assert np.max(np.abs(L - phase * K)) < 1e-10 * np.max(np.abs(K))


def test_dequantize_identity_is_one():
    a = gaussian_symbol()
    for hbar in (0.2, 0.05):
        x_axes = quantum_axes([a], hbar)
        I = identity(FLAT1, x_axes, hbar).kernel
        one = dequantize(MOYAL, FLAT1, I, hbar, q_axes=Q1, p_axes=P1)
        assert np.max(np.abs(one.values - 1)) < 1e-10


def test_dequantize_quantize_plateau():
    # close to 1 on a central region of phase space, decaying before the grid edges
    a = sample_symbol(FLAT1, lambda q, p: np.exp(-(q[..., 0] / 2.5) ** 8 - (p[..., 0] / 2.5) ** 8), Q1, P1)
    q, p = Q1[0].nodes, P1[0].nodes
    inner = (np.abs(q) < 0.8)[:, None] & (np.abs(p) < 0.8)[None, :]
    assert np.max(np.abs(a.values[inner] - 1)) < 3e-4
    for hbar in (0.1, 0.05):
        back = dequantize(MOYAL, FLAT1, quantize(MOYAL, FLAT1, a, hbar), hbar)
        assert np.max(np.abs(back.values - a.values)) < 1e-7


@pytest.mark.parametrize("scheme", [MOYAL, STANDARD])
def test_roundtrip_flat(scheme):
    a = random_real_symbol(5)
    for hbar in (0.2, 0.05):
        k = quantize(scheme, FLAT1, a, hbar)
        back = dequantize(scheme, FLAT1, k, hbar)
        assert np.max(np.abs(back.values - a.values)) < 1e-6 * np.max(np.abs(a.values))


def sphere_symbol():
    q_axes = (UniformAxis.cells(1.2, 1.94, 16), UniformAxis.cells(-0.37, 0.37, 16))
    p_axes = (UniformAxis.symmetric(4, 16), UniformAxis.symmetric(4, 16))
    th0 = 0.5 * (1.2 + 1.94)
    return sample_symbol(
        SPHERE,
        lambda q, p: np.exp(-0.5 * ((q[..., 0] - th0) / 0.07) ** 2 - 0.5 * (q[..., 1] / 0.07) ** 2
                            - 0.5 * (p[..., 0] / 0.9) ** 2 - 0.5 * ((p[..., 1] - 0.2) / 0.9) ** 2),
        q_axes, p_axes)


def test_roundtrip_sphere():
    a = sphere_symbol()
    hbar = 0.05
    k = quantize(MOYAL, SPHERE, a, hbar, steps=16)
    assert k.inadmissible == 0
    back = dequantize(MOYAL, SPHERE, k, hbar, steps=16)
    assert np.max(np.abs(back.values - a.values)) < 1e-4


def test_sphere_kernel_reality_and_placement():
    a = sphere_symbol()
    hbar = 0.1
    k = quantize(MOYAL, SPHERE, a, hbar, steps=16)
    assert reality_defect(MOYAL, SPHERE, a, hbar, kernel=k) < 1e-10
    k2 = quantize(MOYAL.with_placement("dequantize_only"), SPHERE, a, hbar, steps=16)
    # J != 1 on the sphere, so the placement matters
    assert hs_norm(k2.with_values(k2.dense() - k.dense())) > 1e-6 * hs_norm(k)


def test_reality_defects():
    a = random_real_symbol(7)
    assert reality_defect(MOYAL, FLAT1, a, 0.1) < 1e-10
    qp = sample_symbol(FLAT1, lambda q, p: q[..., 0] * p[..., 0] * window(q[..., 0], p[..., 0]), Q1, P1)
    assert reality_defect(STANDARD, FLAT1, qp, 0.1) > 1e-2
    one = sample_symbol(FLAT1, lambda q, p: 1.0, Q1, P1)
    for s in (MOYAL, STANDARD, ANTISTANDARD):
        assert reality_defect(s, FLAT1, one, 0.1) < 1e-12
    zero = one.with_values(np.zeros_like(one.values))
    with pytest.raises(UndefinedRatioError):
        reality_defect(MOYAL, FLAT1, zero, 0.1)
    with pytest.raises(ValueError):
        reality_defect(MOYAL, FLAT1, one.with_values(1j * one.values), 0.1)


def test_unsupported_paths():
    a = sphere_symbol()
    with pytest.raises(UnsupportedError):
        flat_closed_form_kernel(MOYAL, a, 0.1)
    k = quantize(MOYAL, SPHERE, a, 0.2, steps=16)
    with pytest.raises(UnsupportedError):
        dequantize(STANDARD, SPHERE, k, 0.2)
    with pytest.raises(ShapeError):
        dequantize(MOYAL, SPHERE, k, 0.1)


def test_geometry_reuse_and_sparsity():
    a = gaussian_symbol()
    hbar = 0.02
    x_axes = quantum_axes([a], hbar)
    geo = kernel_geometry(FLAT1, x_axes, hbar, MOYAL, X_cut=symbol_band(a)[2])
    assert geo.density < 0.25
    k = quantize(MOYAL, FLAT1, a, hbar, geometry=geo)
    assert hasattr(k.values, "tocsr")
    dense = flat_closed_form_kernel(MOYAL, a, hbar, x_axes).dense()
    assert np.max(np.abs(k.dense() - dense)) < 1e-11 * np.max(np.abs(dense))


def test_closed_form_midpoint_matches_newton():
    generic = dataclasses.replace(SPHERE, midpoint_fn=None)
    x_axes = (UniformAxis.cells(1.2, 1.94, 15), UniformAxis.cells(-0.37, 0.37, 15))
    hbar = 0.1
    a = kernel_geometry(SPHERE, x_axes, hbar, MOYAL, X_cut=[3.0, 3.0], steps=32)
    b = kernel_geometry(generic, x_axes, hbar, MOYAL, X_cut=[3.0, 3.0], steps=32)
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.ok, b.ok)
    assert np.max(np.abs(a.q - b.q)) < 1e-10
    assert np.max(np.abs(a.X - b.X)) < 1e-9
    assert np.max(np.abs(a.J - b.J)) < 1e-9
    assert np.min(a.J) < 0.999
