import json
import subprocess
import sys

import numpy as np

from tangent_groupoid.cli import build_parser, main
from tangent_groupoid.harness import flat_moyal_experiment


def write_config(path, experiments, version=1):
    path.write_text(json.dumps({"schema_version": version, "seed": 0, "experiments": experiments}))
    return path


def test_empty_experiment_list_exits_zero(tmp_path):
    cfg = write_config(tmp_path / "c.json", [])
    assert main(["axioms", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0


def test_bad_schema_version(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", [], version=7)
    assert main(["axioms", "--config", str(cfg)]) == 2
    assert "schema_version" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["geometry-check", "--config", str(tmp_path / "nope.json")]) == 2


def test_axioms_run_writes_outputs(tmp_path, capsys):
    exp = flat_moyal_experiment(hbar=[0.2, 0.1, 0.05, 0.025], schemes=("moyal",))
    exp["criteria"] = {"moyal": {"d4": {"max": 1e-10}, "d2": {"slope_min": 1.0}}}
    cfg = write_config(tmp_path / "c.json", [exp])
    out = tmp_path / "out"
    assert main(["axioms", "--config", str(cfg), "--out", str(out)]) == 0
    assert "PASS flat-canonical" in capsys.readouterr().out
    assert {p.name for p in out.iterdir()} == {"report.json", "defects.csv", "rates.csv"}
    rows = (out / "defects.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 * 5


def test_failed_criterion_exits_one(tmp_path):
    exp = flat_moyal_experiment(hbar=[0.2, 0.1, 0.05, 0.025], schemes=("moyal",))
    exp["criteria"] = {"moyal": {"d3": {"max": 1e-12}}}
    cfg = write_config(tmp_path / "c.json", [exp])
    assert main(["axioms", "--config", str(cfg)]) == 1


def test_seed_override_changes_random_symbols(tmp_path):
    exp = flat_moyal_experiment(hbar=[0.2, 0.1], schemes=("moyal",))
    exp["symbols"] = {"kind": "random", "center": [0.0], "width_q": [0.5], "width_p": [0.5]}
    exp["criteria"] = {}
    cfg = write_config(tmp_path / "c.json", [exp])
    main(["axioms", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["axioms", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    main(["axioms", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "1"])
    a, b, c = ((tmp_path / d / "defects.csv").read_text() for d in "abc")
    assert a == c and a != b


def test_dump_kernel(tmp_path, capsys):
    out = tmp_path / "k.npz"
    assert main(["dump-kernel", "--hbar", "0.2", "--grid", "16", "--out", str(out)]) == 0
    data = np.load(out)
    k = data["kernel"]
    assert k.shape[0] == k.shape[1] == data["nodes"].shape[0]
    assert float(data["hbar"]) == 0.2
    assert "operator norm" in capsys.readouterr().out


def test_parser_lists_commands():
    text = build_parser().format_help()
    for cmd in ("axioms", "geometry-check", "groupoid-check", "dump-kernel"):
        assert cmd in text


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path / "c.json", [])
    res = subprocess.run([sys.executable, "-m", "tangent_groupoid", "groupoid-check", "--config", str(cfg)],
                         capture_output=True, text=True)
    assert res.returncode == 0
