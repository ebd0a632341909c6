import csv
import json

import numpy as np
import pytest

from chaplygin import __version__
from chaplygin.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, main


def write_config(tmp_path, name="cfg.json", **doc):
    doc.setdefault("output_dir", str(tmp_path / "out"))
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# chaplygin ")
    return list(csv.reader(lines[1:]))


def test_verify_identity_inertia(tmp_path):
    cfg = write_config(tmp_path, n=3, experiment={"samples": 10})
    assert main(["verify", "--config", str(cfg)]) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert doc["pass"] is True and doc["version"] == __version__
    assert all(v < 1e-10 for v in doc["metrics"]["max_residuals"].values())
    assert {"config_sha256", "master_seed", "wall_clock_seconds", "tolerances"} <= set(doc)


def test_verify_random_inertia_names_failing_metrics(tmp_path, capsys):
    cfg = write_config(tmp_path, n=3, experiment={"dims": [3], "random_inertias": 2, "samples": 5})
    assert main(["verify", "--config", str(cfg)]) == EXIT_FAIL
    err = capsys.readouterr().err
    assert "theorem" in err
    doc = json.loads((tmp_path / "out" / "verify.json").read_text())
    res = doc["metrics"]["max_residuals"]
    assert res["e2"] < 1e-10 and res["dlogN_fd"] < 1e-6 and res["theorem_opposite"] < 1e-8


def test_simulate_schema_and_determinism(tmp_path):
    base = dict(n=3, inertia={"masses": [1.0, 2.0, 3.0]}, integrator={"h": 0.01, "path_count": 4},
                experiment={"T": 0.1, "snapshot_stride": 5})
    outputs = []
    for workers in ("1", "8"):
        cfg = write_config(tmp_path, f"w{workers}.json", output_dir=str(tmp_path / f"o{workers}"), **base)
        assert main(["simulate", "--config", str(cfg), "--workers", workers]) == EXIT_OK
        outputs.append((tmp_path / f"o{workers}" / "simulate.csv").read_bytes())
    rows = read_csv(tmp_path / "o1" / "simulate.csv")
    assert rows[0] == ["path_id", "t"] + [f"s_{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)] + \
        ["kappa_1", "kappa_2", "kappa_3"]
    assert len(rows) == 1 + 4 * 3
    assert outputs[0] == outputs[1]
    assert b"\r\n" not in outputs[0]
    # floats round-trip exactly
    assert float(rows[2][2]) == float(repr(float(rows[2][2])))


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path, n=3, integrator={"h": 0.01, "path_count": 2}, experiment={"T": 0.05})
    main(["simulate", "--config", str(cfg), "--seed", "1"])
    a = (tmp_path / "out" / "simulate.csv").read_bytes()
    main(["simulate", "--config", str(cfg), "--seed", "2"])
    b = (tmp_path / "out" / "simulate.csv").read_bytes()
    assert a != b
    summary = json.loads((tmp_path / "out" / "simulate.json").read_text())
    assert summary["master_seed"] == 2


def test_ham_check_n3(tmp_path):
    cfg = write_config(tmp_path, n=3, experiment={"random_inertias": 10})
    assert main(["ham-check", "--config", str(cfg)]) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "ham_check.csv")
    assert len(rows) == 12 and all(r[3] == "1" for r in rows[1:])


def test_ham_check_n4_expecting_satisfied_fails(tmp_path):
    cfg = write_config(tmp_path, n=4, inertia={"random": {"seed": 1}}, experiment={"expect": "satisfied"})
    assert main(["ham-check", "--config", str(cfg)]) == EXIT_FAIL
    cfg = write_config(tmp_path, n=4, inertia={"random": {"seed": 1}})
    assert main(["ham-check", "--config", str(cfg)]) == EXIT_OK


def test_drift_report_schema(tmp_path):
    cfg = write_config(tmp_path, n=3, experiment={"samples": 4})
    assert main(["drift-report", "--config", str(cfg)]) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "drift_report.csv")
    assert rows[0] == ["sample_id", "residual_theorem", "max_mech_horiz", "max_vel_horiz", "ham_residual"]
    assert len(rows) == 5


def test_generator_test_schema(tmp_path):
    cfg = write_config(tmp_path, n=3, inertia={"masses": [1.0, 2.0, 3.0]},
                       integrator={"h": 1e-3, "path_count": 5000}, experiment={"points": 1, "functions": 2})
    code = main(["generator-test", "--config", str(cfg)])
    assert code in (EXIT_OK, EXIT_FAIL)
    rows = read_csv(tmp_path / "out" / "generator_test.csv")
    assert rows[0] == ["f_id", "analytic", "mc", "stderr", "h", "paths"]
    assert [r[0] for r in rows[1:]] == ["p0_f0", "p0_f1"]


def test_sphere_test_requires_homogeneous(tmp_path):
    cfg = write_config(tmp_path, n=3, inertia={"masses": [1.0, 2.0, 3.0]})
    assert main(["sphere-test", "--config", str(cfg)]) == EXIT_CONFIG


def test_sphere_test_small(tmp_path):
    cfg = write_config(tmp_path, n=3, integrator={"h": 0.01, "path_count": 20000},
                       experiment={"T": 1.0, "grid": 10})
    assert main(["sphere-test", "--config", str(cfg)]) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "sphere_test.json").read_text())
    assert doc["metrics"]["predicted_rate"] == pytest.approx(0.5)


def test_matrix_inertia_file(tmp_path):
    (tmp_path / "G.json").write_text(json.dumps(np.eye(3).tolist()))
    cfg = write_config(tmp_path, n=3, inertia={"matrix": "G.json"}, experiment={"samples": 2})
    assert main(["drift-report", "--config", str(cfg)]) == EXIT_OK
    cfg = write_config(tmp_path, n=3, inertia={"matrix": "missing.json"})
    assert main(["drift-report", "--config", str(cfg)]) == EXIT_CONFIG


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 3,\n  "noise": }')
    assert main(["verify", "--config", str(bad)]) == EXIT_CONFIG
    assert "line 2 column 12" in capsys.readouterr().err
    cfg = write_config(tmp_path, n=3, integrator={"h": -1.0})
    assert main(["verify", "--config", str(cfg)]) == EXIT_CONFIG
    assert "integrator.h" in capsys.readouterr().err
    cfg = write_config(tmp_path, n=2)
    assert main(["verify", "--config", str(cfg)]) == EXIT_CONFIG
    cfg = write_config(tmp_path, n=3, experiment={"samplez": 3})
    assert main(["verify", "--config", str(cfg)]) == EXIT_CONFIG
    assert "experiment.samplez" in capsys.readouterr().err
    assert main(["verify", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert main(["frobnicate", "--config", str(cfg)]) == EXIT_CONFIG
    cfg = write_config(tmp_path, n=3)
    assert main(["verify", "--config", str(cfg), "--workers", "0"]) == EXIT_CONFIG


def test_step_rejection_exit_code(tmp_path):
    cfg = write_config(tmp_path, n=3, inertia={"masses": [0.3, 0.3, 0.3]},
                       integrator={"h": 0.5, "path_count": 50}, experiment={"T": 5.0})
    assert main(["simulate", "--config", str(cfg)]) == EXIT_NUMERIC
