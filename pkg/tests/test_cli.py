"""Command-line surface: exit codes, config validation, catalog listing,
reproducible report files."""

import json

import pytest

from equichk import cli


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=1))
    return p


def _suite_cfg(out_dir, mutation=None):
    entry = {
        "model": {"name": "linear_probe", "params": {"x": [1.0, 2.0]}, "seed": 21},
        "loss": {"name": "square", "params": {"target": 2.0}},
        "transform": {"name": "homogeneity_scaling", "params": {}},
        "checks": ["first_order", "second_action", "homogeneity", "sharpness"],
        "positions": 2,
        "seed": 11,
    }
    if mutation:
        entry["mutation"] = mutation
        entry["checks"] = ["first_order", "second_action", "second_quadratic"]
    return {
        "experiment": "check_suite",
        "output_dir": str(out_dir),
        "master_seed": 0,
        "plan": [entry],
    }


# ---------------------------------------------------------------------------
# version and catalog
# ---------------------------------------------------------------------------

def test_version(capsys):
    assert cli.main(["version"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("equichk ")


def test_catalog_text_lists_checks_with_anchors(capsys):
    assert cli.main(["catalog"]) == 0
    out = capsys.readouterr().out
    assert "check_first_order ⇠ Thm 1 (i)" in out
    assert "models:" in out and "transforms:" in out
    assert "homogeneous_relu_mlp" in out and "layer_rescaling" in out


def test_catalog_json_parses(capsys):
    assert cli.main(["catalog", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert set(data) == {"models", "losses", "transforms", "checks", "experiments"}
    assert data["checks"]["check_mirror"] == "Cor. 4"
    assert "sgf_drift" in data["experiments"]


def test_catalog_filter_plain_and_sectioned(capsys):
    cli.main(["catalog", "--filter", "mirror"])
    out = capsys.readouterr().out
    assert "mirror" in out and "check_mirror" in out
    assert "layer_rescaling" not in out

    cli.main(["catalog", "--filter", "transform=mirror"])
    out = capsys.readouterr().out
    assert "transforms:" in out and "mirror" in out
    assert "check_mirror" not in out  # checks section filtered away


# ---------------------------------------------------------------------------
# run: exit codes
# ---------------------------------------------------------------------------

def test_run_suite_green(tmp_path, capsys):
    cfg = _write(tmp_path, "suite.json", _suite_cfg(tmp_path / "out"))
    assert cli.main(["run", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] check_first_order (Thm 1 (i)):" in out
    assert "checks passed" in out
    for fname in ("reports.jsonl", "summary.csv", "manifest.json"):
        assert (tmp_path / "out" / fname).exists()


def test_run_mutated_suite_fails_with_exit_1(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.json",
                 _suite_cfg(tmp_path / "out", mutation={"callback": "dh_dlambda", "scale": 1.01}))
    assert cli.main(["run", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "[FAIL]" in out


def test_run_unknown_keys_exit_2(tmp_path, capsys):
    cfg = _suite_cfg(tmp_path / "out")
    cfg["plan"][0]["modle"] = {"name": "linear_probe"}  # typo key
    cfg["frobnicate"] = True
    path = _write(tmp_path, "typo.json", cfg)
    assert cli.main(["run", str(path)]) == 2
    err = capsys.readouterr().err
    assert "config error" in err
    assert "config.frobnicate" in err and "config.plan[0].modle" in err


def test_run_invalid_json_exit_2(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{ not json")
    assert cli.main(["run", str(p)]) == 2
    assert "config error" in capsys.readouterr().err


def test_run_missing_file_exit_2(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "absent.json")]) == 2


def test_run_unknown_experiment_exit_2(tmp_path, capsys):
    p = _write(tmp_path, "exp.json", {"experiment": "teleport", "plan": []})
    assert cli.main(["run", str(p)]) == 2
    assert "experiment" in capsys.readouterr().err


def test_run_runtime_fault_exit_3(tmp_path, capsys):
    # far from stationary after T=1: NotConverged maps to the fault exit code
    cfg = {
        "experiment": "stationary_spectrum",
        "output_dir": str(tmp_path / "out"),
        "model": {"name": "deep_linear", "params": {"widths": [1, 2, 1]}, "seed": 6},
        "loss": {"name": "square", "params": {"target": 0.3}},
        "transforms": [{"name": "layer_rescaling", "params": {"blocks": ["W1", "W2"]}}],
        "dynamics": {"T": 1.0, "dt": 0.05},
    }
    p = _write(tmp_path, "stat.json", cfg)
    assert cli.main(["run", str(p)]) == 3
    assert "runtime fault" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run: the other experiments end-to-end (kept small)
# ---------------------------------------------------------------------------

def test_run_flow_experiment(tmp_path, capsys):
    cfg = {
        "experiment": "flow",
        "output_dir": str(tmp_path / "out"),
        "model": {"name": "homogeneous_relu_mlp", "params": {"widths": [2, 3, 1]}, "seed": 3},
        "loss": {"name": "exponential", "params": {"label": 1}},
        "transforms": [{"name": "layer_rescaling", "params": {"blocks": ["W1", "W2"]}}],
        "dynamics": {"T": 1.0, "dt": 0.01},
        "theta0": "init",
    }
    p = _write(tmp_path, "flow.json", cfg)
    assert cli.main(["run", str(p)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] gf_charge_conservation (Cor. 2):" in out
    assert "[PASS] norm_growth" in out
    assert (tmp_path / "out" / "flow.csv").exists()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert "flow.csv" in manifest["files"]
    assert manifest["pass_counts"]["failed"] == 0


def test_run_sgf_drift_experiment(tmp_path, capsys):
    cfg = {
        "experiment": "sgf_drift",
        "output_dir": str(tmp_path / "out"),
        "model": {"name": "deep_linear", "params": {"widths": [1, 1, 1]}, "seed": 0},
        "loss": {"name": "square"},
        "dataset": {"samples": [{"x": [1.0], "target": [0.5]},
                                {"x": [2.0], "target": [1.55]}]},
        "transform": {"name": "layer_rescaling", "params": {"blocks": ["W1", "W2"]}},
        "noise": {"mode": "exact_sde", "sigma": 0.1, "seed": 7},
        "dynamics": {"T": 0.05, "dt": 0.001, "ensemble": 150},
        "theta0": [1.2, 0.6],
        "save_trajectories": 2,
    }
    p = _write(tmp_path, "sgf.json", cfg)
    assert cli.main(["run", str(p)]) == 0
    assert "[PASS] noether_drift (Cor. 2):" in capsys.readouterr().out
    assert (tmp_path / "out" / "trajectory_0001.csv").exists()
    assert (tmp_path / "out" / "ensemble.json").exists()


# ---------------------------------------------------------------------------
# reproducibility
# ---------------------------------------------------------------------------

def test_reports_byte_identical_across_runs(tmp_path, capsys):
    cfg = _write(tmp_path, "suite.json", _suite_cfg(tmp_path / "out"))
    assert cli.main(["run", str(cfg)]) == 0
    first = {f: (tmp_path / "out" / f).read_bytes() for f in ("reports.jsonl", "summary.csv")}
    assert cli.main(["run", str(cfg)]) == 0
    for f, blob in first.items():
        assert (tmp_path / "out" / f).read_bytes() == blob
    capsys.readouterr()


def test_thread_env_does_not_change_reports(tmp_path, capsys, monkeypatch):
    cfg = _write(tmp_path, "suite.json", _suite_cfg(tmp_path / "out"))
    monkeypatch.delenv("EQUICHK_THREADS", raising=False)
    cli.main(["run", str(cfg)])
    serial = (tmp_path / "out" / "reports.jsonl").read_bytes()
    monkeypatch.setenv("EQUICHK_THREADS", "4")
    cli.main(["run", str(cfg)])
    assert (tmp_path / "out" / "reports.jsonl").read_bytes() == serial
    capsys.readouterr()


def test_config_digest_ignores_key_order():
    a = {"experiment": "flow", "dynamics": {"T": 1.0, "dt": 0.01}}
    b = {"dynamics": {"dt": 0.01, "T": 1.0}, "experiment": "flow"}
    assert cli.config_digest(a) == cli.config_digest(b)
    assert cli.config_digest(a) != cli.config_digest({**a, "theta0": "init"})


def test_default_output_dir_beside_config(tmp_path, capsys):
    cfg = _suite_cfg(tmp_path / "unused")
    del cfg["output_dir"]
    path = _write(tmp_path, "myrun.json", cfg)
    assert cli.main(["run", str(path)]) == 0
    assert (tmp_path / "myrun_out" / "manifest.json").exists()
    capsys.readouterr()


def test_manifest_contents(tmp_path, capsys):
    cfg = _write(tmp_path, "suite.json", _suite_cfg(tmp_path / "out"))
    cli.main(["run", str(cfg)])
    capsys.readouterr()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["experiment"] == "check_suite"
    assert manifest["config_digest"] == cli.config_digest(json.loads(cfg.read_text()))
    assert manifest["pass_counts"]["total"] == manifest["pass_counts"]["passed"]
    assert manifest["files"] == sorted(manifest["files"])
    assert "manifest.json" in manifest["files"]
    assert manifest["started_at"].endswith("+00:00")
