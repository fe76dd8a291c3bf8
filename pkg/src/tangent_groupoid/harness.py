"""Experiment runner: axiom defects over hbar sweeps, rate fits and reports."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .charts import get_chart
from .errors import ShapeError, TangentGroupoidError
from .geometry import DEFAULT_STEPS, TangentPoint, exp_map, jacobian_J, log_map
from .groupoid import (
    Boundary,
    Interior,
    boundary_limit,
    close,
    compose,
    inverse,
    matching_pair,
    phi_chart,
    phi_inverse,
    range_,
    source,
    triangle,
)
from .operators import NORM_KIND, KernelOperator, commutator, op_norm, op_product, op_trace
from .quantization import (
    QuantizationScheme,
    kernel_geometry,
    quantize,
    quantum_axes,
    reality_defect,
    symbol_band,
)
from .transforms import FiberEvaluator, SymbolGrid, UniformAxis, sample_symbol

SCHEMA_VERSION = 1
DEFAULT_HBARS = tuple(0.4 * 0.5 ** k for k in range(8))
# flat axiom runs: hbar / (wq wp) from 0.1 down, where the leading-order rates show
FLAT_HBARS = tuple(0.025 * 0.5 ** k for k in range(6))
QUANTIFIER_NOTE = ("axioms are stated for all symbols; this run samples the listed symbol "
                   "pairs and hbar values only")
HS_KIND = "relative Hilbert-Schmidt"


# ---------------------------------------------------------------------------
# classical side


def _spectral_derivative(values, axis, step):
    m = values.shape[axis]
    k = 2 * np.pi * np.fft.fftfreq(m, step)
    if m % 2 == 0:
        k[m // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = m
    out = np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)
    return out.real if np.isrealobj(values) else out


def _central_derivative(values, axis, step):
    return np.gradient(values, step, axis=axis, edge_order=2)


def poisson_bracket(a1: SymbolGrid, a2: SymbolGrid, method="spectral") -> SymbolGrid:
    """{a1, a2} = sum_k (d_qk a1 d_pk a2 - d_pk a1 d_qk a2).

    With this sign {q, p} = 1, which is the convention under which
    [Q(f1), Q(f2)] ~ i hbar Q({f1, f2}) for the quantizers in this package.
    ``method`` is "spectral" (exact for band-limited grids) or "central".
    """
    if not a1.same_grid(a2):
        raise ShapeError("Poisson bracket needs symbols on the same grid")
    deriv = {"spectral": _spectral_derivative, "central": _central_derivative}[method]
    n = a1.chart.dim
    out = 0
    for k in range(n):
        hq = a1.q_axes[k].step
        hp = a1.p_axes[k].step
        out = out + (deriv(a1.values, k, hq) * deriv(a2.values, n + k, hp)
                     - deriv(a1.values, n + k, hp) * deriv(a2.values, k, hq))
    return a1.with_values(out)


def _window(q, p, center, wq, wp):
    e = 0.0
    for k in range(q.shape[-1]):
        e = e + ((q[..., k] - center[k]) / wq[k]) ** 2 + (p[..., k] / wp[k]) ** 2
    return np.exp(-0.5 * e)


def canonical_pair(chart, q_axes, p_axes, center, width_q, width_p, axis=0, shift=(0.0, 0.0)):
    """Gaussian-windowed coordinate functions (q_axis - c + s_q) W and (p_axis + s_p) W.

    With a nonzero ``shift`` the phase-space integral of the product is
    s_q s_p times the integral of W^2, so trace checks are not trivially zero.
    """
    c = np.asarray(center, dtype=float)
    wq = np.asarray(width_q, dtype=float)
    wp = np.asarray(width_p, dtype=float)
    sq, sp = (float(v) for v in shift)
    f1 = sample_symbol(chart, lambda q, p: (q[..., axis] - c[axis] + sq) * _window(q, p, c, wq, wp),
                       q_axes, p_axes)
    f2 = sample_symbol(chart, lambda q, p: (p[..., axis] + sp) * _window(q, p, c, wq, wp),
                       q_axes, p_axes)
    return f1, f2


def random_pair(chart, q_axes, p_axes, center, width_q, width_p, seed, modes=4, band=0.25):
    """Two real symbols: Gaussian window times a few random plane waves in (q, p).

    Plane-wave frequencies are drawn below ``band`` times the Nyquist
    frequency of each axis.
    """
    rng = np.random.default_rng(seed)
    n = chart.dim
    c = np.asarray(center, dtype=float)
    wq = np.asarray(width_q, dtype=float)
    wp = np.asarray(width_p, dtype=float)
    nyq_q = np.array([np.pi / a.step for a in q_axes])
    nyq_p = np.array([np.pi / a.step for a in p_axes])
    out = []
    for _ in range(2):
        kq = rng.uniform(-band, band, (modes, n)) * nyq_q
        kp = rng.uniform(-band, band, (modes, n)) * nyq_p
        coef = rng.normal(size=modes) + 1j * rng.normal(size=modes)

        def fn(q, p, kq=kq, kp=kp, coef=coef):
            phase = np.einsum("...k,mk->...m", q - c, kq) + np.einsum("...k,mk->...m", p, kp)
            return np.real(np.exp(1j * phase) @ coef) * _window(q, p, c, wq, wp)

        out.append(sample_symbol(chart, fn, q_axes, p_axes))
    return tuple(out)


# ---------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residual: float
    verdict: str
    points: int

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "residual": self.residual,
                "verdict": self.verdict, "points": self.points}


def fit_rate(points, floor=0.0) -> FitResult:
    """Least-squares slope of log(defect) against log(hbar).

    Defects at or below ``floor`` count as exact zeros and are left out.  All
    exact gives verdict "exact"; fewer than four usable points gives
    "insufficient-data".
    """
    pts = [(float(h), float(d)) for h, d in points]
    if any(d < 0 for _, d in pts):
        raise ValueError("defects must be nonnegative")
    use = [(h, d) for h, d in pts if d > floor]
    if not use:
        return FitResult(math.nan, math.nan, math.nan, "exact", 0)
    if len(use) < 4:
        return FitResult(math.nan, math.nan, math.nan, "insufficient-data", len(use))
    x = np.log([h for h, _ in use])
    y = np.log([d for _, d in use])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(res[0] / len(use))) if res.size else 0.0
    return FitResult(float(coef[0]), float(coef[1]), resid, "fit", len(use))


# ---------------------------------------------------------------------------
# configuration


def default_config():
    """The built-in suite: geometry, groupoid, flat and curved axiom runs."""
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "experiments": [
            {"name": "geometry-sphere", "kind": "geometry",
             "chart": {"name": "sphere-polar"}, "hbar": list(DEFAULT_HBARS)},
            {"name": "groupoid-sphere", "kind": "groupoid", "chart": {"name": "sphere-polar"}},
            flat_moyal_experiment(),
            flat_random_experiment(),
            sphere_moyal_experiment(),
        ],
    }


def flat_moyal_experiment(hbar=FLAT_HBARS, schemes=("moyal", "standard")):
    return {
        "name": "flat-canonical",
        "kind": "axioms",
        "chart": {"name": "euclidean-1d"},
        "grid": {"q": [[-4.0, 4.0, 64]], "p": [[4.0, 64]], "band_limit": 2.0 / 3.0},
        "symbols": {"kind": "canonical", "center": [0.0], "width_q": [0.5], "width_p": [0.5]},
        "hbar": list(hbar),
        "schemes": [{"name": s} for s in schemes],
        "criteria": {
            "moyal": {"d2": {"slope_min": 1.8, "slope_max": 2.2},
                      "d3": {"slope_min": 0.85, "slope_max": 1.15},
                      "d4": {"max": 1e-10}, "d5": {"max": 1e-6},
                      "d1": {"endpoint_rel": 0.05}},
            "standard": {"d2": {"slope_min": 0.85, "slope_max": 1.15}},
        },
    }


def flat_random_experiment(hbar=DEFAULT_HBARS, seed=11):
    """Seeded random band-limited pair; checks reality and traciality."""
    return {
        "name": "flat-random",
        "kind": "axioms",
        "chart": {"name": "euclidean-1d"},
        "grid": {"q": [[-4.0, 4.0, 64]], "p": [[4.0, 64]], "band_limit": 2.0 / 3.0},
        "symbols": {"kind": "random", "center": [0.0], "width_q": [0.5], "width_p": [0.5],
                    "seed": seed, "modes": 4, "band": 0.25},
        "hbar": list(hbar),
        "schemes": [{"name": "moyal"}],
        "criteria": {"moyal": {"d4": {"max": 1e-10}, "d5": {"max": 1e-6}}},
    }


def sphere_moyal_experiment(hbar=None):
    if hbar is None:
        hbar = [0.2 * 0.5 ** (k / 2) for k in range(5)]
    return {
        "name": "sphere-canonical",
        "kind": "axioms",
        "chart": {"name": "sphere-polar"},
        "grid": {"q": [[1.0, 2.141592653589793, 48], [-0.6, 0.6, 48]],
                 "p": [[4.0, 48], [4.0, 48]], "band_limit": 2.0 / 3.0},
        "symbols": {"kind": "canonical", "center": [1.5707963267948966, 0.0],
                    "width_q": [0.09, 0.095], "width_p": [0.6, 0.6], "shift": [0.09, 0.6]},
        "hbar": list(hbar),
        "steps": 16,
        "schemes": [{"name": "moyal", "j_placement": "symmetric_split"},
                    {"name": "moyal", "j_placement": "quantize_only"}],
        "criteria": {
            "moyal/symmetric_split": {"d2": {"slope_min": 1.5}, "d3": {"slope_min": 0.85},
                                      "d4": {"max": 1e-8}, "d5": {"slope_min": 1.8}},
        },
        "compare": [{"axiom": "d5", "scheme": "moyal/quantize_only",
                     "reference": "moyal/symmetric_split", "min_ratio": 10.0}],
    }


def _axis_list(spec, symmetric=False):
    out = []
    for item in spec:
        if symmetric:
            out.append(UniformAxis.symmetric(float(item[0]), int(item[1])))
        else:
            out.append(UniformAxis.cells(float(item[0]), float(item[1]), int(item[2])))
    return tuple(out)


def _scheme_label(s: QuantizationScheme):
    return f"{s.name or 'custom'}/{s.j_placement}"


@dataclass
class ExperimentConfig:
    """One experiment of a suite, parsed from its JSON descriptor."""

    name: str
    kind: str
    chart_name: str
    chart_params: dict = field(default_factory=dict)
    hbar: tuple = DEFAULT_HBARS
    raw: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, d, seed=0):
        hb = tuple(float(h) for h in d.get("hbar", DEFAULT_HBARS))
        if any(b >= a for a, b in zip(hb, hb[1:])):
            raise ValueError(f"experiment {d.get('name')!r}: hbar list must be strictly decreasing")
        hbar0 = float(d.get("hbar0", 1.0))
        if hb and (hb[-1] <= 0 or hb[0] > hbar0):
            raise ValueError(f"experiment {d.get('name')!r}: hbar values must lie in (0, {hbar0}]")
        chart = d.get("chart", {})
        return cls(name=d["name"], kind=d["kind"], chart_name=chart.get("name", "euclidean-1d"),
                   chart_params=dict(chart.get("params", {})), hbar=hb, raw=dict(d),
                   seed=int(d.get("seed", seed)))

    def chart(self):
        return get_chart(self.chart_name, **self.chart_params)

    def schemes(self):
        return [QuantizationScheme.from_descriptor(s) for s in self.raw.get("schemes", [{"name": "moyal"}])]

    def symbols(self, chart):
        g = self.raw["grid"]
        q_axes = _axis_list(g["q"])
        p_axes = _axis_list(g["p"], symmetric=True)
        sy = self.raw.get("symbols", {"kind": "canonical"})
        n = chart.dim
        center = sy.get("center", [0.5 * (a.lo + a.hi) for a in q_axes])
        wq = sy.get("width_q", [0.1 * a.length for a in q_axes])
        wp = sy.get("width_p", [0.1 * a.length for a in p_axes])
        if sy["kind"] == "canonical":
            f1, f2 = canonical_pair(chart, q_axes, p_axes, center, wq, wp, axis=sy.get("axis", 0),
                                    shift=sy.get("shift", (0.0, 0.0)))
        elif sy["kind"] == "random":
            f1, f2 = random_pair(chart, q_axes, p_axes, center, wq, wp,
                                 seed=int(sy.get("seed", self.seed)), modes=int(sy.get("modes", 4)),
                                 band=float(sy.get("band", 0.25)))
        elif sy["kind"] == "zero-second":
            f1, _ = canonical_pair(chart, q_axes, p_axes, center, wq, wp)
            f2 = f1.with_values(np.zeros_like(f1.values))
        else:
            raise ValueError(f"unknown symbol generator {sy['kind']!r}")
        bl = g.get("band_limit")
        f1 = SymbolGrid(chart, q_axes, p_axes, f1.values, bl)
        f2 = SymbolGrid(chart, q_axes, p_axes, f2.values, bl)
        if n != len(q_axes):
            raise ShapeError("grid dimension does not match the chart")
        return f1, f2


# ---------------------------------------------------------------------------
# axiom defects


@dataclass
class AxiomRecord:
    hbar: float
    d2: float
    d3: float
    d4: float
    d5: float
    norm_f1: float
    trace: complex = 0j
    classical: float = 0.0
    nodes: int = 0
    inadmissible: int = 0
    seconds: float = 0.0


def axiom_defects(config: Optional[ExperimentConfig], scheme: QuantizationScheme, chart, f1, f2,
                  hbar, bracket="spectral", x_axes=None, steps=DEFAULT_STEPS, geometry=None,
                  oversample=1.0, band_tol=1e-13) -> AxiomRecord:
    """Defects of axioms (2)-(5) at one hbar plus the norm of Q(f1).

    d2 and d3 use the weighted-l2 operator norm, d4 is the larger relative
    Hilbert-Schmidt reality defect of f1 and f2, d5 compares the trace of
    Q(f1) Q(f2) with the phase-space integral against dq dp / (2 pi hbar)^n.
    The continuity defect d1 needs neighbouring hbar values and is formed by
    ``run_experiment``.
    """
    if config is not None:
        bracket = config.raw.get("bracket", bracket)
        steps = int(config.raw.get("steps", steps))
        oversample = float(config.raw.get("oversample", oversample))
    t0 = time.perf_counter()
    n = chart.dim
    f12 = f1.with_values(f1.values * f2.values)
    pb = poisson_bracket(f1, f2, method=bracket)
    syms = [f1, f2, f12, pb]
    if x_axes is None:
        x_axes = quantum_axes([s for s in syms if np.any(s.values)], hbar, scheme,
                              tol=band_tol, oversample=oversample)
    if geometry is None:
        Xc = np.zeros(n)
        for s in syms:
            if np.any(s.values):
                Xc = np.maximum(Xc, symbol_band(s, band_tol)[2])
        geometry = kernel_geometry(chart, x_axes, hbar, scheme, X_cut=Xc, steps=steps)
    ops = [KernelOperator.from_kernel(quantize(scheme, chart, s, hbar, geometry=geometry))
           for s in syms]
    Q1, Q2, Q12, Qb = ops
    if np.any(f2.values):
        P12 = op_product(Q1, Q2)
        d2 = op_norm(P12 - op_product(Q2, Q1) - Qb * (1j * hbar)) / hbar
        d3 = op_norm(P12 - Q12)
        tr = op_trace(P12)
    else:
        d2 = d3 = 0.0
        tr = 0j
    classical = float(np.real(f12.integral(hbar)))
    d5 = abs(tr - classical)
    reals = []
    for s, Q in ((f1, Q1), (f2, Q2)):
        if np.any(s.values):
            reals.append(reality_defect(scheme, chart, s, hbar, kernel=Q.kernel))
    d4 = max(reals) if reals else 0.0
    inad = sum(op.kernel.inadmissible for op in ops)
    return AxiomRecord(float(hbar), float(d2), float(d3), float(d4), float(d5), op_norm(Q1),
                       tr, classical, geometry.size, inad, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ConvergenceReport:
    experiment: str
    kind: str
    rows: list = field(default_factory=list)  # dicts: experiment, axiom, hbar, defect, norm_kind
    rates: dict = field(default_factory=dict)  # (label, axiom) -> FitResult
    checks: list = field(default_factory=list)  # dicts: label, criterion, value, passed
    provenance: dict = field(default_factory=dict)
    error: Optional[str] = None
    seconds: float = 0.0
    timings: dict = field(default_factory=dict)  # label -> seconds per hbar, kept out of report.json

    @property
    def passed(self):
        return self.error is None and all(c["passed"] for c in self.checks)

    def rate(self, label, axiom):
        return self.rates.get((label, axiom))

    def values(self, label, axiom):
        return [(r["hbar"], r["defect"]) for r in self.rows
                if r["experiment"] == label and r["axiom"] == axiom]


def _row(label, axiom, hbar, defect, kind):
    return {"experiment": label, "axiom": axiom, "hbar": float(hbar), "defect": float(defect),
            "norm_kind": kind}


AXIOM_KINDS = {"d1": NORM_KIND, "d2": NORM_KIND, "d3": NORM_KIND, "d4": HS_KIND,
               "d5": "absolute trace difference"}


def _axiom_job(raw, seed, hbar):
    cfg = ExperimentConfig.from_dict(raw, seed)
    chart = cfg.chart()
    f1, f2 = cfg.symbols(chart)
    out = {}
    geoms = {}
    for scheme in cfg.schemes():
        key = (repr(scheme.phi1), repr(scheme.phi2))
        n = chart.dim
        band_tol = float(raw.get("band_tol", 1e-13))
        if key not in geoms:
            f12 = f1.with_values(f1.values * f2.values)
            pb = poisson_bracket(f1, f2, method=raw.get("bracket", "spectral"))
            syms = [s for s in (f1, f2, f12, pb) if np.any(s.values)]
            x_axes = quantum_axes(syms, hbar, scheme, tol=band_tol,
                                  oversample=float(raw.get("oversample", 1.0)))
            Xc = np.zeros(n)
            for s in syms:
                Xc = np.maximum(Xc, symbol_band(s, band_tol)[2])
            geoms[key] = kernel_geometry(chart, x_axes, hbar, scheme, X_cut=Xc,
                                         steps=int(raw.get("steps", DEFAULT_STEPS)))
        rec = axiom_defects(cfg, scheme, chart, f1, f2, hbar, geometry=geoms[key],
                            x_axes=geoms[key].x_axes, band_tol=band_tol)
        out[_scheme_label(scheme)] = rec
    return hbar, out


def _check(label, criterion, value, passed, detail=""):
    return {"label": label, "criterion": criterion, "value": value, "passed": bool(passed),
            "detail": detail}


def _apply_criteria(rep: ConvergenceReport, raw, label, recs, f1_sup):
    crit = raw.get("criteria", {})
    spec = crit.get(label) or crit.get(label.split("/")[0]) or {}
    for axiom, rule in sorted(spec.items()):
        if axiom == "d1":
            if "endpoint_rel" in rule:
                last = recs[-1]
                rel = abs(last.norm_f1 - f1_sup) / f1_sup
                rep.checks.append(_check(label, "d1 endpoint |‖Q(f1)‖ - sup|f1|| / sup|f1|", rel,
                                         rel <= rule["endpoint_rel"]))
            if "lipschitz" in rule:
                worst = max(abs(a.norm_f1 - b.norm_f1) / (a.hbar - b.hbar)
                            for a, b in zip(recs, recs[1:]))
                rep.checks.append(_check(label, "d1 Lipschitz ratio", worst, worst <= rule["lipschitz"]))
            continue
        vals = [getattr(r, axiom) for r in recs]
        if "max" in rule:
            worst = max(vals)
            rep.checks.append(_check(label, f"{axiom} max over hbar <= {rule['max']:g}", worst,
                                     worst <= rule["max"]))
        if "slope_min" in rule or "slope_max" in rule:
            fit = rep.rates[(label, axiom)]
            lo = rule.get("slope_min", -math.inf)
            hi = rule.get("slope_max", math.inf)
            if fit.verdict == "exact":
                ok, val = True, math.nan
            elif fit.verdict == "insufficient-data":
                ok, val = False, math.nan
            else:
                ok, val = lo <= fit.slope <= hi, fit.slope
            rep.checks.append(_check(label, f"{axiom} slope in [{lo:g}, {hi:g}]", val, ok, fit.verdict))


def run_experiment(raw, seed=0, workers=1) -> ConvergenceReport:
    cfg = ExperimentConfig.from_dict(raw, seed)
    t0 = time.perf_counter()
    rep = ConvergenceReport(cfg.name, cfg.kind)
    rep.provenance = {"chart": {"name": cfg.chart_name, "params": cfg.chart_params},
                      "seed": cfg.seed, "norm_kind": NORM_KIND, "quantifier_note": QUANTIFIER_NOTE}
    try:
        if cfg.kind == "axioms":
            _run_axioms(cfg, rep, workers)
        elif cfg.kind == "geometry":
            _run_geometry(cfg, rep)
        elif cfg.kind == "groupoid":
            _run_groupoid(cfg, rep)
        else:
            raise ValueError(f"unknown experiment kind {cfg.kind!r}")
    except (TangentGroupoidError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
    rep.seconds = time.perf_counter() - t0
    return rep


def _run_axioms(cfg: ExperimentConfig, rep: ConvergenceReport, workers):
    raw = cfg.raw
    chart = cfg.chart()
    f1, f2 = cfg.symbols(chart)
    rep.provenance.update({
        "grid": f1.descriptor(),
        "symbols": raw.get("symbols"),
        "schemes": [s.descriptor() for s in cfg.schemes()],
        "hbar": list(cfg.hbar),
        "bracket": raw.get("bracket", "spectral"),
        "geodesic_steps": int(raw.get("steps", DEFAULT_STEPS)),
    })
    if workers > 1 and len(cfg.hbar) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_axiom_job, [raw] * len(cfg.hbar), [cfg.seed] * len(cfg.hbar),
                                    cfg.hbar))
    else:
        results = [_axiom_job(raw, cfg.seed, h) for h in cfg.hbar]
    results.sort(key=lambda r: -r[0])
    labels = list(results[0][1].keys()) if results else []
    f1_sup = float(np.max(np.abs(f1.values)))
    floors = raw.get("exact_floor", {})
    for label in labels:
        recs = [res[label] for _, res in results]
        for i, r in enumerate(recs):
            nb = recs[i + 1] if i + 1 < len(recs) else recs[i - 1] if i > 0 else r
            rep.rows.append(_row(label, "d1", r.hbar, abs(r.norm_f1 - nb.norm_f1), NORM_KIND))
            for ax in ("d2", "d3", "d4", "d5"):
                rep.rows.append(_row(label, ax, r.hbar, getattr(r, ax), AXIOM_KINDS[ax]))
        for ax in ("d2", "d3", "d4", "d5"):
            rep.rates[(label, ax)] = fit_rate([(r.hbar, getattr(r, ax)) for r in recs],
                                              floor=float(floors.get(ax, 0.0)))
        rep.provenance.setdefault("runs", {})[label] = [
            {"hbar": r.hbar, "nodes": r.nodes, "inadmissible": r.inadmissible,
             "norm_f1": r.norm_f1, "trace": [r.trace.real, r.trace.imag],
             "classical": r.classical} for r in recs]
        rep.timings[label] = [round(r.seconds, 3) for r in recs]
        _apply_criteria(rep, raw, label, recs, f1_sup)
    for comp in raw.get("compare", []):
        a = {r.hbar: getattr(r, comp["axiom"]) for r in (res[comp["scheme"]] for _, res in results)}
        b = {r.hbar: getattr(r, comp["axiom"]) for r in (res[comp["reference"]] for _, res in results)}
        h = min(a)
        ratio = a[h] / b[h] if b[h] > 0 else math.inf
        rep.checks.append(_check(comp["scheme"], f"{comp['axiom']} at smallest hbar vs "
                                 f"{comp['reference']} ratio >= {comp['min_ratio']:g}",
                                 ratio, ratio >= comp["min_ratio"]))


def _random_tangent(rng, chart, count, radius):
    lo = chart.lower + 0.2 * (chart.upper - chart.lower)
    hi = chart.upper - 0.2 * (chart.upper - chart.lower)
    q = lo + (hi - lo) * rng.random((count, chart.dim))
    X = rng.normal(size=(count, chart.dim))
    X *= radius / np.maximum(1.0, np.linalg.norm(X, axis=-1, keepdims=True))
    return q, X


def _run_geometry(cfg: ExperimentConfig, rep: ConvergenceReport):
    raw = cfg.raw
    rng = np.random.default_rng(cfg.seed)
    chart = cfg.chart()
    hb = np.array(cfg.hbar)
    label = chart.name
    # J(q, X; hbar/2) - 1 = O(hbar^2)
    q, X = _random_tangent(rng, chart, int(raw.get("samples", 5)), 1.0)
    for i in range(q.shape[0]):
        lab = f"{label}/J#{i}"
        tp = TangentPoint(q[i], X[i])
        vals = [abs(jacobian_J(chart, tp, h / 2) - 1.0) for h in hb]
        for h, v in zip(hb, vals):
            rep.rows.append(_row(lab, "J-1", h, v, "absolute"))
        fit = fit_rate(list(zip(hb, vals)))
        rep.rates[(lab, "J-1")] = fit
        rep.checks.append(_check(lab, "J-1 slope >= 1.8", fit.slope, fit.verdict == "fit" and fit.slope >= 1.8))
    # exp/log roundtrip
    q, X = _random_tangent(rng, chart, 100, 0.5 * min(1.0, chart.injectivity_floor))
    x = exp_map(chart, TangentPoint(q, X))
    back = log_map(chart, q, x)
    err = float(np.max(np.abs(back - X)))
    rep.checks.append(_check(label, "exp/log roundtrip < 1e-9", err, err < 1e-9))
    # triangle defect
    tri_h = [0.2, 0.1, 0.05, 0.025]
    for i in range(int(raw.get("samples", 5))):
        lab = f"{label}/triangle#{i}"
        qp, Xs = _random_tangent(rng, chart, 1, 1.0)
        W = rng.normal(size=chart.dim)
        W /= max(1.0, np.linalg.norm(W))
        vals = []
        for h in tri_h:
            qq, Y = matching_pair(chart, qp[0], Xs[0], W, h)
            res = triangle(chart, qp[0], qq, Xs[0], Y, h)
            vals.append(res.defect)
            rep.rows.append(_row(lab, "triangle", h, res.defect, "chart-component euclidean"))
        fit = fit_rate(list(zip(tri_h, vals)))
        rep.rates[(lab, "triangle")] = fit
        rep.checks.append(_check(lab, "triangle slope >= 1.85", fit.slope,
                                 fit.verdict == "fit" and fit.slope >= 1.85, res.note))
    rep.provenance["triangle_note"] = res.note
    # J on a flat chart
    flat = get_chart("euclidean-2d")
    fq, fX = _random_tangent(rng, flat, 1000, 3.0)
    s = rng.uniform(0.01, 1.0, 1000)
    Jf = jacobian_J(flat, TangentPoint(fq, fX * s[:, None]), 0.5)
    err = float(np.max(np.abs(Jf - 1.0)))
    rep.checks.append(_check("euclidean-2d", "flat |J - 1| < 1e-9", err, err < 1e-9))


def _run_groupoid(cfg: ExperimentConfig, rep: ConvergenceReport):
    rng = np.random.default_rng(cfg.seed)
    chart = cfg.chart()
    n = chart.dim
    count = int(cfg.raw.get("samples", 1000))
    res = groupoid_axioms(chart, rng, count)
    for name, ok in res.items():
        rep.checks.append(_check(chart.name, name, float(ok), ok))
    worst = product_continuity(chart, rng, int(cfg.raw.get("sequences", 20)))
    rep.checks.append(_check(chart.name, "product continuity across hbar = 0 (tol 1e-6)", worst,
                             worst <= 1e-6))


def groupoid_axioms(chart, rng, count=1000):
    """Definition-level identities on random elements of both strata."""
    n = chart.dim
    lo = chart.lower + 0.2 * (chart.upper - chart.lower)
    hi = chart.upper - 0.2 * (chart.upper - chart.lower)

    def pt():
        return lo + (hi - lo) * rng.random(n)

    checks = {k: True for k in (
        "interior (i) r(gh) = r(g), s(gh) = s(h)", "interior (ii) associativity exact",
        "interior (iii) units r(g) g = g = g s(g)", "interior (iv) g g^-1 = r(g), g^-1 g = s(g)",
        "interior (v) units fixed by r, s",
        "boundary (i) r(gh) = r(g), s(gh) = s(h)", "boundary (ii) associativity 1e-12",
        "boundary (iii) units r(g) g = g = g s(g)", "boundary (iv) g g^-1 = r(g), g^-1 g = s(g)",
        "boundary (v) units fixed by r, s")}
    for _ in range(count):
        h = rng.uniform(1e-3, 1.0)
        a, b, c, d = pt(), pt(), pt(), pt()
        g, k, m = Interior(a, b, h), Interior(b, c, h), Interior(c, d, h)
        gk = compose(g, k)
        checks["interior (i) r(gh) = r(g), s(gh) = s(h)"] &= (range_(gk) == range_(g) and source(gk) == source(k))
        checks["interior (ii) associativity exact"] &= compose(gk, m) == compose(g, compose(k, m))
        checks["interior (iii) units r(g) g = g = g s(g)"] &= (compose(range_(g), g) == g and compose(g, source(g)) == g)
        checks["interior (iv) g g^-1 = r(g), g^-1 g = s(g)"] &= (
            compose(g, inverse(g)) == range_(g) and compose(inverse(g), g) == source(g))
        u = range_(g)
        checks["interior (v) units fixed by r, s"] &= (range_(u) == u and source(u) == u)
        q = pt()
        X1, X2, X3 = rng.normal(size=(3, n))
        B1, B2, B3 = Boundary(q, X1), Boundary(q, X2), Boundary(q, X3)
        B12 = compose(B1, B2)
        checks["boundary (i) r(gh) = r(g), s(gh) = s(h)"] &= (range_(B12) == range_(B1) and source(B12) == source(B2))
        checks["boundary (ii) associativity 1e-12"] &= close(compose(B12, B3), compose(B1, compose(B2, B3)))
        checks["boundary (iii) units r(g) g = g = g s(g)"] &= (close(compose(range_(B1), B1), B1)
                                                             and close(compose(B1, source(B1)), B1))
        checks["boundary (iv) g g^-1 = r(g), g^-1 g = s(g)"] &= (
            close(compose(B1, inverse(B1)), range_(B1)) and close(compose(inverse(B1), B1), source(B1)))
        ub = range_(B1)
        checks["boundary (v) units fixed by r, s"] &= (range_(ub) == ub and source(ub) == ub)
    return {k: bool(v) for k, v in checks.items()}


def continuity_sequences(chart, rng, count=20, terms=7, h0=0.2):
    """Composable interior sequences (x, y, h), (y, z, h) with boundary limits.

    Returns triples (first, second, composed) of element lists.
    """
    from .geometry import shoot

    n = chart.dim
    lo = chart.lower + 0.3 * (chart.upper - chart.lower)
    hi = chart.upper - 0.3 * (chart.upper - chart.lower)
    hs = h0 * 0.5 ** np.arange(terms)
    out = []
    for _ in range(count):
        s = lo + (hi - lo) * rng.random(n)
        A, B, c = rng.normal(size=(3, n)) * 0.5
        ys = s + hs[:, None] * c
        xs = shoot(chart, ys, hs[:, None] * A).x
        zs = shoot(chart, ys, -hs[:, None] * B).x
        G = [Interior(x, y, h) for x, y, h in zip(xs, ys, hs)]
        H = [Interior(y, z, h) for y, z, h in zip(ys, zs, hs)]
        C = [Interior(x, z, h) for x, z, h in zip(xs, zs, hs)]
        out.append((G, H, C))
    return out


def product_continuity(chart, rng, count=20):
    """Largest mismatch between lim(g_n h_n) and lim(g_n) lim(h_n)."""
    worst = 0.0
    for G, H, C in continuity_sequences(chart, rng, count):
        lg, lh, lc = (boundary_limit(chart, s) for s in (G, H, C))
        if not (lg.converged and lh.converged and lc.converged):
            return math.inf
        base = np.max(np.abs(lg.limit.q - lh.limit.q))
        prod = compose(lg.limit, Boundary(lg.limit.q, lh.limit.X)) if base <= 1e-6 else None
        if prod is None:
            return math.inf
        err = max(float(np.max(np.abs(lc.limit.q - prod.q))), float(np.max(np.abs(lc.limit.X - prod.X))), base)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# suite


@dataclass
class SuiteResult:
    reports: list
    config: dict

    @property
    def passed(self):
        return all(r.passed for r in self.reports)

    def defects_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "axiom", "hbar", "defect", "norm_kind"])
        rows = []
        for rep in self.reports:
            for r in rep.rows:
                rows.append((f"{rep.experiment}:{r['experiment']}", r["axiom"], r["hbar"], r["defect"],
                             r["norm_kind"]))
        rows.sort(key=lambda t: (t[0], t[1], -t[2]))
        for e, a, h, d, k in rows:
            w.writerow([e, a, repr(float(h)), repr(float(d)), k])
        return buf.getvalue()

    def rates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "axiom", "slope", "intercept", "residual", "verdict"])
        rows = []
        for rep in self.reports:
            for (label, ax), fit in rep.rates.items():
                rows.append((f"{rep.experiment}:{label}", ax, fit))
        rows.sort(key=lambda t: (t[0], t[1]))
        for e, a, fit in rows:
            w.writerow([e, a, repr(fit.slope), repr(fit.intercept), repr(fit.residual), fit.verdict])
        return buf.getvalue()

    def summary(self, timings=False) -> dict:
        exps = []
        for rep in self.reports:
            entry = {
                "name": rep.experiment, "kind": rep.kind, "passed": rep.passed, "error": rep.error,
                "checks": [{k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                            for k, v in c.items()} for c in rep.checks],
                "provenance": _jsonable(rep.provenance),
            }
            if timings:
                entry["seconds"] = round(rep.seconds, 3)
                entry["run_seconds"] = rep.timings
            exps.append(entry)
        return {"schema_version": SCHEMA_VERSION, "package_version": __version__,
                "passed": self.passed, "norm_kind": NORM_KIND,
                "quantifier_note": QUANTIFIER_NOTE, "experiments": exps}

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "defects.csv").write_text(self.defects_csv())
        (out / "rates.csv").write_text(self.rates_csv())
        (out / "report.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run_suite(config, out_dir=None, workers=1, only_kind=None) -> SuiteResult:
    """Run every experiment of ``config``; failures are recorded, not raised."""
    seed = int(config.get("seed", 0))
    reports = []
    for raw in config.get("experiments", []):
        if only_kind is not None and raw.get("kind") != only_kind:
            continue
        reports.append(run_experiment(raw, seed=seed, workers=workers))
    result = SuiteResult(reports, config)
    if out_dir is not None:
        result.write(out_dir)
    return result
