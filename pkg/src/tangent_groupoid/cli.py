"""Command line entry point: ``tangent-groupoid <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import SCHEMA_VERSION, default_config, run_suite


def load_config(path):
    if path is None:
        return default_config()
    cfg = json.loads(Path(path).read_text())
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"config schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    if not isinstance(cfg.get("experiments"), list):
        raise ValueError("config needs an 'experiments' list")
    return cfg


def _print_summary(result, stream):
    for rep in result.reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.experiment} ({rep.kind}, {rep.seconds:.1f}s)", file=stream)
        if rep.error:
            print(f"    error: {rep.error}", file=stream)
        for c in rep.checks:
            mark = "ok " if c["passed"] else "BAD"
            print(f"    {mark} {c['label']}: {c['criterion']} -> {c['value']:.4g}", file=stream)


def _run(args, kind):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    result = run_suite(cfg, out_dir=args.out, workers=args.workers, only_kind=kind)
    if not result.reports:
        print(f"no experiments of kind {kind!r} in the configuration", file=sys.stderr)
        return 0
    _print_summary(result, sys.stdout)
    return 0 if result.passed else 1


def _dump_kernel(args):
    from .charts import get_chart
    from .harness import canonical_pair
    from .operators import op_norm, KernelOperator
    from .quantization import QuantizationScheme, quantize
    from .transforms import UniformAxis

    chart = get_chart(args.chart)
    n = chart.dim
    lo = chart.lower + 0.25 * (chart.upper - chart.lower)
    hi = chart.upper - 0.25 * (chart.upper - chart.lower)
    lo = np.maximum(lo, -4.0)
    hi = np.minimum(hi, 4.0)
    q_axes = tuple(UniformAxis.cells(lo[k], hi[k], args.grid) for k in range(n))
    p_axes = tuple(UniformAxis.symmetric(4.0, args.grid) for _ in range(n))
    center = 0.5 * (lo + hi)
    f1, _ = canonical_pair(chart, q_axes, p_axes, center, 0.12 * (hi - lo), [0.6] * n)
    scheme = QuantizationScheme.named(args.scheme, args.j_placement)
    k = quantize(scheme, chart, f1, args.hbar)
    dense = k.dense()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, kernel=dense, nodes=k.nodes, hbar=k.hbar,
             grid=json.dumps([a.to_dict() for a in k.x_axes]), scheme=json.dumps(scheme.descriptor()))
    norm = op_norm(KernelOperator.from_kernel(k))
    print(f"wrote {out}: {dense.shape[0]} nodes, operator norm {norm:.6g}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tangent-groupoid",
                                description="Quantization axiom experiments on Riemannian charts.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("axioms", "run the axiom defect sweeps"),
                        ("geometry-check", "Jacobian, exp/log and triangle checks"),
                        ("groupoid-check", "groupoid identities and product continuity")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON experiment configuration (default: built-in suite)")
        s.add_argument("--out", help="directory for report.json, defects.csv, rates.csv")
        s.add_argument("--seed", type=int, help="override the configuration seed")
        s.add_argument("--workers", type=int, default=1, help="processes for hbar sweeps")
    d = sub.add_parser("dump-kernel", help="quantize a test symbol and save the kernel (.npz)")
    d.add_argument("--chart", default="euclidean-1d")
    d.add_argument("--scheme", default="moyal", choices=["moyal", "standard", "antistandard"])
    d.add_argument("--j-placement", default="symmetric_split",
                   choices=["symmetric_split", "quantize_only", "dequantize_only"])
    d.add_argument("--hbar", type=float, default=0.1)
    d.add_argument("--grid", type=int, default=32)
    d.add_argument("--out", default="kernel.npz")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "dump-kernel":
            return _dump_kernel(args)
        kind = {"axioms": "axioms", "geometry-check": "geometry", "groupoid-check": "groupoid"}[args.command]
        return _run(args, kind)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
