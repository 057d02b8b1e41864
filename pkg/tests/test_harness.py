import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from magwave.harness import ConfigError, parse_config
from magwave.harness.cli import main
from magwave.harness.experiments import fit_inverse, loglog_slope, run_go_decay

SMALL = """
geometry.h = 0.125
geometry.n1 = 4
time.T = 0.5
time.n_t = 40
probes.sigma = 5
stability.sigma = 5
probes.xi_max = 20
probes.k_max = 0
tolerances.green = 0.1
tolerances.gauge = 0.1
"""


def write_cfg(tmp_path, extra=""):
    p = tmp_path / "run.cfg"
    p.write_text(SMALL + extra)
    return p


@pytest.mark.parametrize(
    "text",
    [
        "geometry.nope = 1",
        "geometry.h = abc",
        "potentials.A2 = dipole",
        "potentials.A2.wobble = 1",
        "probes.sigma = 50",
        "geometry.shape = triangle",
        "recover.mass = 1.5",
        "just some words",
    ],
)
def test_bad_config_is_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("text", ["geometry.nope = 1", "probes.sigma = 50", "potentials.A1 = dipole"])
def test_config_errors_exit_with_status_2(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    assert main(["verify", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file_exits_with_status_2(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_defaults_parse_and_comments_are_ignored():
    cfg = parse_config("# comment only\n\nprobes.sigma = 8, 5, 6.5, 5  # trailing\n")
    assert cfg.sigmas() == [5.0, 6.5, 8.0]
    assert cfg["geometry.h"] == pytest.approx(1 / 32)


def test_preset_parameters_reach_the_potential():
    cfg = parse_config("potentials.A2.amplitude = 0.1")
    assert cfg.potential("A2").a2(0.0, 0.1, 0.0) == pytest.approx(
        parse_config("").potential("A2").a2(0.0, 0.1, 0.0) / 3
    )


def test_steps_follow_the_time_resolution_rule():
    cfg = parse_config("")
    for s in cfg.sigmas():
        dt = cfg["time.T"] / cfg.steps_for(s)
        assert dt <= 0.2 / s**2 + 1e-15
        assert dt <= cfg["time.dt_profile"] / s + 1e-15


def test_slope_helpers():
    assert loglog_slope([5.0], [1.0]) is None
    assert loglog_slope([1.0, 2.0, 4.0], [3.0, 1.5, 0.75]) == pytest.approx(-1.0)
    C, r = fit_inverse([5.0, 6.5, 8.0], [0.2, 2 / 13, 0.125])
    assert C == pytest.approx(1.0) and r == pytest.approx(0.0, abs=1e-12)


def test_single_sigma_has_no_slope():
    cfg = parse_config(SMALL + "time.T = 0.8\n")
    rows = run_go_decay(cfg)
    assert len(rows) == 1 and rows[0][-1] is None and rows[0][1] > 0


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_verify_passes_on_small_grid(tmp_path):
    out = tmp_path / "o"
    assert main(["verify", "--config", str(write_cfg(tmp_path)), "--out", str(out)]) == 0
    rows = read_csv(out / "verify.csv")
    names = [r["name"] for r in rows]
    assert names == ["fbg_parseval", "unitarity", "duhamel", "gauge_invariance", "green_identity", "transport", "telescope", "fourier_slice"]
    assert all(r["pass"] == "true" for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    digest = hashlib.sha256((out / "verify.csv").read_bytes()).hexdigest()
    assert manifest["files"]["verify.csv"] == digest
    assert manifest["command"] == "verify" and manifest["seed"] == 0


def test_gauge_that_touches_the_boundary_fails_verify(tmp_path):
    out = tmp_path / "o"
    assert main(["verify", "--config", str(write_cfg(tmp_path, "gauge.tilt = 0.5\n")), "--out", str(out)]) == 1
    rows = {r["name"]: r for r in read_csv(out / "verify.csv")}
    assert rows["gauge_invariance"]["pass"] == "false"


def test_verify_with_zero_potentials(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, "potentials.A2 = zero\n")
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    rows = {r["name"]: float(r["measured"]) for r in read_csv(out / "verify.csv")}
    assert rows["telescope"] == 0.0 and rows["fourier_slice"] == 0.0


def test_recover_identical_potentials_gives_zero_field(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, "potentials.A1 = bump\n")
    assert main(["recover", "--config", str(cfg), "--out", str(out)]) == 0
    field = np.fromfile(out / "beta23_reconstructed.bin", dtype="<f8")
    assert field.size > 0 and not field.any()
    hdr = (out / "beta23_reconstructed.hdr").read_text()
    assert "dims = 4 9 9" in hdr
    samples = read_csv(out / "samples.csv")
    assert samples and all(float(r["re"]) == 0 and float(r["im"]) == 0 for r in samples)


def test_recover_writes_consistent_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["recover", "--config", str(write_cfg(tmp_path)), "--out", str(out), "--seed", "3"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    summary = read_csv(out / "summary.csv")[0]
    assert summary["path"] == "oracle" and int(summary["retained"]) > 0


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "magwave", "verify", "--config", str(tmp_path / "absent.cfg")], capture_output=True, text=True)
    assert res.returncode == 2
    assert "config error" in res.stderr
