import csv
import hashlib
import json

import numpy as np
import pytest

from wittenlab import cli
from wittenlab.config import (ExperimentConfig, build_config, manifest_text, parse_manifest,
                              parse_t_grid, read_config_file)
from wittenlab.errors import ConfigError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(tmp_path, *argv):
    return cli.main(list(argv) + ["--out", str(tmp_path)])


def test_oscillator_example(tmp_path):
    assert run(tmp_path, "oscillator", "n=1", "k=0", "q=0", "t=1", "count=3") == 0
    rows = read_csv(tmp_path / "oscillator_q0.csv")
    assert rows[0] == ["eigenvalue", "multiplicity"]
    assert [(float(a), int(b)) for a, b in rows[1:]] == [(0, 1), (2, 1), (4, 1)]


def test_report_and_manifest(tmp_path):
    assert run(tmp_path, "oscillator", "n=2", "k=1", "q=0,1,2") == 0
    report = json.loads((tmp_path / "report.json").read_text())
    manifest = (tmp_path / "manifest").read_text()
    assert report["config_digest"] == hashlib.sha256(manifest.encode()).hexdigest()
    assert [c["name"] for c in report["checks"]] == [f"kernel_dimension_q{q}" for q in range(3)]
    assert report["passed"] and report["wall_time"] >= 0
    assert not list(tmp_path.glob("*.tmp")) and not list(tmp_path.glob(".*"))


def test_manifest_round_trip(tmp_path):
    assert run(tmp_path, "spectrum", "--manifold", "torus", "--field", "torus-tilted:0.25",
               "--grid", "17", "--q", "0", "--t", "2.5", "--format", "csv") == 0
    text = (tmp_path / "manifest").read_text()
    cfg = parse_manifest(text)
    assert manifest_text(cfg) == text
    assert cfg.grid == (17, 17) and cfg.field == "torus-tilted:0.25"
    assert not (tmp_path / "spectrum.json").exists()


def test_config_file_flags_and_overrides(tmp_path):
    conf = tmp_path / "exp.cfg"
    conf.write_text("# double well\nfield = circle-double-well  # tilt 0.3\nt = 3\nseed = 7\n",
                    encoding="utf-8")
    raw = read_config_file(conf)
    assert raw == {"field": "circle-double-well", "t": "3", "seed": "7"}
    args = cli.build_parser().parse_intermixed_args(["spectrum", "--config", str(conf), "--t", "4", "t=5"])
    cfg = cli.resolve_config(args)
    assert (cfg.field, cfg.t, cfg.seed) == ("circle-double-well", 5.0, 7)


def test_command_dependent_t_grid():
    assert build_config({}, "whs").t_grid == (5.0, 10.0, 20.0)
    assert build_config({}, "gap-sweep").t_grid == (4.0, 6.0, 8.0, 10.0, 12.0)


@pytest.mark.parametrize("text, expected", [
    ("4:12:2", (4.0, 6.0, 8.0, 10.0, 12.0)),
    ("0.1:0.3:0.1", (0.1, 0.2, 0.3)),
    ("5,10,20", (5.0, 10.0, 20.0)),
])
def test_parse_t_grid(text, expected):
    assert parse_t_grid(text) == pytest.approx(expected)


@pytest.mark.parametrize("argv", [
    ["spectrum", "bogus=1"],
    ["spectrum", "--t-grid", "5:1:1"],
    ["spectrum", "--grid", "64"],
    ["spectrum", "--manifold", "sphere"],
    ["spectrum", "--harmonic", "1,2"],
    ["spectrum", "--format", "png"],
    ["whs", "--scaling-convention", "sideways"],
    ["spectrum", "--q", "3"],
    ["spectrum", "--field", "nope"],
    ["oscillator", "n=1", "k=2"],
    ["morse-complex", "--harmonic", "0.5"],
])
def test_config_errors_exit_3(tmp_path, argv):
    assert run(tmp_path, *argv) == cli.EXIT_CONFIG


def test_unknown_key_in_file(tmp_path):
    conf = tmp_path / "bad.cfg"
    conf.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        build_config(read_config_file(conf))
    assert run(tmp_path, "spectrum", "--config", str(conf)) == cli.EXIT_CONFIG


def test_compute_error_exit_4(tmp_path):
    # alpha = 0 has a degenerate zero set
    assert run(tmp_path, "morse-complex", "--field", "trig:0,0,1") == cli.EXIT_COMPUTE


def test_io_error_exit_5(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["oscillator", "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_check_failure_exit_2(tmp_path):
    # at t = 0.5 the tunneling eigenvalue is not separated from the threshold
    assert run(tmp_path, "spectrum", "--field", "circle-double-well", "--t", "0.5", "--grid", "65") == cli.EXIT_CHECK
    report = json.loads((tmp_path / "report.json").read_text())
    assert not report["passed"]
    assert any(not c["passed"] and c["name"].startswith("gap_open") for c in report["checks"])


def test_novikov_spectrum(tmp_path):
    assert run(tmp_path, "spectrum", "--field", "trig:0,0,1", "--harmonic", "0.5", "--t", "10",
               "--q", "0") == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    assert float(rows[1][2]) == pytest.approx(25.0, abs=1e-6)


def test_gap_sweep_reproducible(tmp_path):
    argv = ["gap-sweep", "--field", "circle-double-well", "--t-grid", "4:12:2"]
    assert run(tmp_path / "a", *argv) == 0
    assert run(tmp_path / "b", *argv) == 0
    a = read_csv(tmp_path / "a" / "gap_sweep_q0.csv")
    b = read_csv(tmp_path / "b" / "gap_sweep_q0.csv")
    assert a[0] == ["t", "lambda_1", "lambda_2", "first_large"]
    assert len(a) == 6
    A, B = np.array(a[1:], dtype=float), np.array(b[1:], dtype=float)
    # the exact-kernel column is rounding noise; compare the meaningful ones
    np.testing.assert_allclose(A[:, [0, 2, 3]], B[:, [0, 2, 3]], rtol=1e-9)
    assert (tmp_path / "a" / "gap_sweep_q0.svg").read_bytes() == (tmp_path / "b" / "gap_sweep_q0.svg").read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert {c["name"] for c in report["checks"]} >= {"cluster_size_q0", "decay_fit_q0"}


def test_svg_is_self_contained(tmp_path):
    assert run(tmp_path, "whs", "--format", "svg,csv") == 0
    svg = (tmp_path / "whs.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg
    assert "href=\"http" not in svg and "<image" not in svg


@pytest.mark.slow
def test_morse_complex_torus(tmp_path):
    assert run(tmp_path, "morse-complex", "--manifold", "torus") == 0
    d = json.loads((tmp_path / "morse_complex.json").read_text())
    assert d["betti"] == [1, 2, 1]
    assert all(not np.any(m) for m in d["incidence"].values())


@pytest.mark.slow
def test_inequalities_command(tmp_path):
    assert run(tmp_path, "inequalities", "--field", "circle-double-well") == 0
    rows = read_csv(tmp_path / "inequalities.csv")
    assert rows[0] == ["N", "lhs", "rhs", "slack", "holds", "equality"]
    assert rows[-1][-1] == "True"


@pytest.mark.slow
def test_all_on_circle(tmp_path):
    assert run(tmp_path, "all", "--field", "circle-double-well", "--t-grid", "4:12:2") == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"spectrum.csv", "gap_sweep_q0.csv", "morse_complex.json", "inequalities.csv",
            "whs.csv", "report.json", "manifest"} <= names


def test_default_config_resolves():
    cfg = build_config({})
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.grid == (257,) and cfg.periods == pytest.approx((2 * np.pi,))
