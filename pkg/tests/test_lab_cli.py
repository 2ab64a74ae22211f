"""The ``lab`` command line: configuration, reports and exit codes."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from siolab.lab_cli import (
    ConfigError,
    bounded_verdict,
    config_from_dict,
    load_config,
    main,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_and_digest_stability():
    a = config_from_dict({})
    b = config_from_dict({})
    assert a.digest() == b.digest()
    assert a.kernel.label == "example"
    assert a.schedule.radii == (1.0, 2.0**-6, 2.0**-13, 2.0**-21)
    assert config_from_dict({}, seed=3).digest() != a.digest()


@pytest.mark.parametrize(
    "data",
    [
        {"d": 2},
        {"bogus": 1},
        {"kernel": {"label": "nope"}},
        {"kernel": {"phi": "flat"}},
        {"kernel": {"phi": "wiggly"}},
        {"treecode": {"eta": 0.01}},
        {"schedule": {"radii": [0.5, 0.1]}},
        {"quadrature": {"ball_tolerance": 0}},
    ],
)
def test_invalid_configurations(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_schedule_from_ratios():
    cfg = config_from_dict({"schedule": {"first_ratio": 64, "ratio_growth": 2, "depth": 3}})
    assert cfg.schedule.radii == (1.0, 2.0**-6, 2.0**-13, 2.0**-21)


def test_bounded_verdict_three_way():
    assert bounded_verdict("a", 1.0, 0.1, 2.0, "<=").status == "PASS"
    assert bounded_verdict("a", 3.0, 0.1, 2.0, "<=").status == "FAIL"
    assert bounded_verdict("a", 1.95, 0.1, 2.0, "<=").status == "INCONCLUSIVE"
    assert bounded_verdict("a", 3.0, 0.1, 2.0, ">=").status == "PASS"


def test_missing_and_malformed_config_exit_two(tmp_path):
    assert main(["moment", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2
    assert main(["moment", "--config", write(tmp_path, "d = [", "bad.toml"), "--out", str(tmp_path)]) == 2
    assert main(["nosuch", "--config", "x"]) == 2


def test_moment_report_is_byte_reproducible(tmp_path):
    cfg = str(CONFIGS / "example.toml")
    assert main(["moment", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["moment", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("moment.json", "moment_moment_matrix.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rep = json.loads((tmp_path / "a" / "moment.json").read_text())
    assert rep["status"] == "PASS"
    assert {"experiment", "config_digest", "config", "verdicts", "summary", "records"} <= set(rep)


def test_seed_override_changes_digest(tmp_path):
    cfg = str(CONFIGS / "example.toml")
    main(["moment", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["moment", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    da = json.loads((tmp_path / "a" / "moment.json").read_text())["config_digest"]
    db = json.loads((tmp_path / "b" / "moment.json").read_text())["config_digest"]
    assert da != db


def test_refusals_exit_two(tmp_path):
    out = str(tmp_path)
    assert main(["bounded", "--config", str(CONFIGS / "monomial.toml"), "--out", out]) == 2
    assert main(["unbounded", "--config", str(CONFIGS / "example.toml"), "--out", out]) == 2
    assert main(["pv", "--config", write(tmp_path, '[kernel]\nlabel = "zero"\n'), "--out", out]) == 2
    assert main(["bounded", "--config", str(CONFIGS / "infeasible.toml"), "--out", out]) == 2


def test_geometry_infeasible_schedule_fails(tmp_path):
    assert main(["geometry", "--config", str(CONFIGS / "infeasible.toml"), "--out", str(tmp_path)]) == 1
    rep = json.loads((tmp_path / "geometry.json").read_text())
    assert rep["status"] == "FAIL"
    assert rep["verdicts"][0]["name"] == "schedule_feasibility_level_1"


def test_reflectionless_on_monomial_kernel(tmp_path):
    assert main(["reflectionless", "--config", str(CONFIGS / "monomial.toml"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "reflectionless.json").read_text())
    assert rep["summary"]["moments_vanish"] is False
    assert rep["summary"]["max_discrepancy"] <= 2e-6


def test_quick_config_runs_every_vanishing_moment_command(tmp_path):
    cfg = str(CONFIGS / "quick.toml")
    for cmd in ("moment", "reflectionless", "bounded", "pv", "growth"):
        assert main([cmd, "--config", cfg, "--out", str(tmp_path)]) == 0, cmd


@pytest.mark.skipif(shutil.which("lab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(
        ["lab", "moment", "--config", str(CONFIGS / "example.toml"), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0
    assert "PASS" in res.stdout


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "siolab.lab_cli", "--help"], capture_output=True, text=True,
    )
    assert res.returncode == 0 and "moment" in res.stdout
