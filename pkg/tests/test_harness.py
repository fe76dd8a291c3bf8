import json
import math

import numpy as np
import pytest

from tangent_groupoid import charts
from tangent_groupoid.errors import ShapeError
from tangent_groupoid.harness import (
    DEFAULT_HBARS,
    ExperimentConfig,
    axiom_defects,
    canonical_pair,
    default_config,
    fit_rate,
    flat_moyal_experiment,
    poisson_bracket,
    random_pair,
    run_experiment,
    run_suite,
)
from tangent_groupoid.operators import KernelOperator, commutator, op_norm
from tangent_groupoid.quantization import MOYAL, quantize, quantum_axes
from tangent_groupoid.transforms import UniformAxis, sample_symbol

FLAT1 = charts.get_chart("euclidean-1d")
Q1 = (UniformAxis.cells(-4, 4, 64),)
P1 = (UniformAxis.symmetric(4, 64),)
WQ, WP = 0.5, 0.6


def pair():
    return canonical_pair(FLAT1, Q1, P1, [0.0], [WQ], [WP])


def test_canonical_pair_values():
    f1, f2 = pair()
    q = Q1[0].nodes[:, None]
    p = P1[0].nodes[None, :]
    W = np.exp(-0.5 * (q / WQ) ** 2 - 0.5 * (p / WP) ** 2)
    assert np.allclose(f1.values, q * W, atol=1e-15)
    assert np.allclose(f2.values, p * W, atol=1e-15)


def analytic_bracket():
    q = Q1[0].nodes[:, None]
    p = P1[0].nodes[None, :]
    W = np.exp(-0.5 * (q / WQ) ** 2 - 0.5 * (p / WP) ** 2)
    Wq, Wp = -q / WQ**2 * W, -p / WP**2 * W
    dq1, dp1 = W + q * Wq, q * Wp
    dq2, dp2 = p * Wq, W + p * Wp
    return dq1 * dp2 - dp1 * dq2


def test_poisson_bracket_windowed_pair_oracle():
    f1, f2 = pair()
    ref = analytic_bracket()
    assert np.max(np.abs(poisson_bracket(f1, f2).values - ref)) < 1e-10
    # second-order differences at step 0.125
    err = np.max(np.abs(poisson_bracket(f1, f2, method="central").values - ref))
    assert 1e-4 < err < 0.1
    # sign convention {q, p} = +1 at the window centre
    i, j = np.argmin(np.abs(Q1[0].nodes)), np.argmin(np.abs(P1[0].nodes))
    assert ref[i, j] > 0.9


def test_poisson_bracket_antisymmetric_and_bilinear():
    f1, f2 = pair()
    g1, g2 = random_pair(FLAT1, Q1, P1, [0.0], [WQ], [WP], seed=3)
    assert np.max(np.abs(poisson_bracket(f1, g1).values + poisson_bracket(g1, f1).values)) < 1e-12
    lhs = poisson_bracket(f1.with_values(2 * f1.values + g2.values), g1).values
    rhs = 2 * poisson_bracket(f1, g1).values + poisson_bracket(g2, g1).values
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_poisson_bracket_grid_mismatch():
    f1, _ = pair()
    other = sample_symbol(FLAT1, lambda q, p: q[..., 0], (UniformAxis.cells(-4, 4, 32),), P1)
    with pytest.raises(ShapeError):
        poisson_bracket(f1, other)


def test_opposite_bracket_sign_does_not_decay():
    f1, f2 = pair()
    pb = poisson_bracket(f1, f2)
    wrong = []
    right = []
    for hbar in (0.1, 0.025):
        x_axes = quantum_axes([f1, f2, pb], hbar)
        Q1_, Q2_, Qb = (KernelOperator.from_kernel(quantize(MOYAL, FLAT1, s, hbar, x_axes=x_axes))
                        for s in (f1, f2, pb))
        C = commutator(Q1_, Q2_)
        right.append(op_norm(C - Qb * (1j * hbar)) / hbar)
        wrong.append(op_norm(C + Qb * (1j * hbar)) / hbar)
    assert right[1] < 0.2 * right[0]
    # about 2 sup|{f1, f2}| once hbar is small
    assert min(wrong) > 1.0 and wrong[1] > 0.9 * wrong[0]


def test_fit_rate_quadratic():
    hb = np.array(DEFAULT_HBARS)
    fit = fit_rate(zip(hb, 3.0 * hb**2))
    assert fit.verdict == "fit" and fit.points == 8
    assert fit.slope == pytest.approx(2.0, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-10)
    assert fit.residual < 1e-10


def test_fit_rate_mixed_orders():
    hb = np.array(DEFAULT_HBARS)
    # c = c' = 1: the cubic term shifts the slope to about 1.022
    fit = fit_rate(zip(hb, hb + hb**3))
    assert 0.95 <= fit.slope <= 1.05


def test_fit_rate_exact_and_insufficient():
    assert fit_rate([(0.1, 0.0), (0.05, 0.0)]).verdict == "exact"
    assert fit_rate([(0.1, 1e-17), (0.05, 1e-18)], floor=1e-16).verdict == "exact"
    fit = fit_rate([(0.4, 1.0), (0.2, 0.5), (0.1, 0.0), (0.05, 0.0)])
    assert fit.verdict == "insufficient-data" and fit.points == 2
    with pytest.raises(ValueError):
        fit_rate([(0.1, -1.0)])


def test_zero_second_symbol_gives_zero_defects():
    f1, f2 = pair()
    zero = f2.with_values(np.zeros_like(f2.values))
    rec = axiom_defects(None, MOYAL, FLAT1, f1, zero, 0.1)
    assert rec.d2 == 0 and rec.d3 == 0 and rec.d5 == 0
    assert rec.norm_f1 > 0


def test_random_pair_is_real_under_moyal():
    g1, g2 = random_pair(FLAT1, Q1, P1, [0.0], [WQ], [WP], seed=1)
    rec = axiom_defects(None, MOYAL, FLAT1, g1, g2, 0.1)
    assert rec.d4 < 1e-10
    # Moyal trace of a product matches the phase-space integral
    assert rec.d5 < 1e-8 * max(1.0, abs(rec.classical))


def small_config(seed=0):
    exp = flat_moyal_experiment(hbar=[0.2, 0.1, 0.05, 0.025], schemes=("moyal",))
    exp["criteria"] = {"moyal": {"d4": {"max": 1e-10}}}
    return {"schema_version": 1, "seed": seed, "experiments": [exp]}


def test_run_suite_is_deterministic(tmp_path):
    a = run_suite(small_config(), out_dir=tmp_path / "a")
    b = run_suite(small_config(), out_dir=tmp_path / "b")
    for name in ("defects.csv", "rates.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert a.defects_csv() == b.defects_csv()
    assert a.passed
    head = a.defects_csv().splitlines()[0]
    assert head == "experiment,axiom,hbar,defect,norm_kind"
    assert a.rates_csv().splitlines()[0] == "experiment,axiom,slope,intercept,residual,verdict"
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["schema_version"] == 1
    assert report["experiments"][0]["provenance"]["hbar"] == [0.2, 0.1, 0.05, 0.025]


def test_empty_suite(tmp_path):
    res = run_suite({"schema_version": 1, "experiments": []}, out_dir=tmp_path)
    assert res.passed and res.reports == []
    assert res.defects_csv().strip() == "experiment,axiom,hbar,defect,norm_kind"
    assert (tmp_path / "report.json").exists()


def test_config_validation():
    base = flat_moyal_experiment()
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(dict(base, hbar=[0.1, 0.2]))
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(dict(base, hbar=[1.5, 0.2]))
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(dict(base, hbar=[0.1, 0.0]))
    cfg = ExperimentConfig.from_dict({"name": "x", "kind": "axioms"})
    assert cfg.hbar == DEFAULT_HBARS and len(cfg.hbar) == 8
    assert cfg.hbar[0] == 0.4 and cfg.hbar[-1] == 0.003125


def test_experiment_errors_are_recorded():
    rep = run_experiment({"name": "bad", "kind": "nonsense"})
    assert not rep.passed and "unknown experiment kind" in rep.error
    exp = dict(flat_moyal_experiment(hbar=[0.1]), symbols={"kind": "mystery"})
    rep = run_experiment(exp)
    assert not rep.passed and "mystery" in rep.error


def test_insufficient_data_fails_slope_criteria():
    exp = flat_moyal_experiment(hbar=[0.1, 0.05], schemes=("moyal",))
    rep = run_experiment(exp)
    slope_checks = [c for c in rep.checks if "slope" in c["criterion"]]
    assert slope_checks and not any(c["passed"] for c in slope_checks)
    assert all(c["detail"] == "insufficient-data" for c in slope_checks)


def test_default_config_shape():
    cfg = default_config()
    kinds = [e["kind"] for e in cfg["experiments"]]
    assert {"geometry", "groupoid", "axioms"} <= set(kinds)
    for e in cfg["experiments"]:
        ExperimentConfig.from_dict(e)
