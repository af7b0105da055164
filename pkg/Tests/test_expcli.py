import json
import math

import numpy as np
import pytest

from ballgrid import BallGrid
from errors import ConfigError, NumericalError
from expcli import (
    DYADIC_HEADER,
    SCAN_HEADER,
    emit_csv,
    emit_svg,
    main,
    parse_angle,
    parse_config,
    read_csv,
    run_experiment,
)
from geometry import ModelMetric
from monotone import MonotonicityTrace, dyadic_trace, phi_scan
from pairs import make_plane_pair

SCAN_CFG = """\
# half-plane pair on a coarse polar grid
[experiment]
kind = scan
plots = false

[grid]
n_r = 32
n_ang = 32
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_minimal_config_gets_defaults():
    config = parse_config("[experiment]\nkind = scan\n")
    assert config.kind == "scan"
    assert config.metric.n == 2
    assert config.grid.R == 1.0
    assert (config.grid.n_r, config.grid.n_ang) == (64, 64)
    assert config.pair.family == "plane"
    assert config.constants.k_max == 3


def test_unknown_key_reports_its_line():
    text = "[experiment]\nkind = scan\n\n[grid]\nR = 1.0\nshells = 12\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert [line for line, _ in info.value.errors] == [6]
    assert "line 6" in str(info.value)


def test_negative_radius_reports_its_line():
    text = "[experiment]\nkind = scan\n[grid]\nR = -1\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.errors[0][0] == 4


def test_unknown_section_and_stray_key():
    text = "kind = scan\n[experiments]\nkind = scan\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert [line for line, _ in info.value.errors] == [1, 2, 3]


def test_missing_kind_is_rejected():
    with pytest.raises(ConfigError, match="kind"):
        parse_config("[experiment]\nname = empty\n")


def test_dyadic_resolution_is_checked_before_running():
    text = "[experiment]\nkind = dyadic\n[constants]\nk_max = 3\n"
    with pytest.raises(ConfigError, match="insufficient resolution") as info:
        parse_config(text)
    assert info.value.errors[0][0] == 4


def test_pair_family_needs_matching_dimension():
    text = "[experiment]\nkind = scan\n[metric]\nn = 3\n[pair]\nfamily = sector\ntheta = pi/2\n"
    with pytest.raises(ConfigError, match="sector pairs need n = 2"):
        parse_config(text)


@pytest.mark.parametrize("text, expected", [
    ("pi", math.pi),
    ("pi/2", math.pi / 2),
    ("3*pi/2", 1.5 * math.pi),
    ("0.5pi", 0.5 * math.pi),
    ("-pi/4", -math.pi / 4),
    (1.25, 1.25),
])
def test_parse_angle(text, expected):
    assert parse_angle(text) == pytest.approx(expected)


def test_angle_keys_accept_pi_expressions():
    config = parse_config("[experiment]\nkind = fh\n[scan]\ntheta = pi/3\n")
    assert config.scan.theta == pytest.approx(math.pi / 3)


def test_scaled_config():
    config = parse_config("[experiment]\nkind = scan\n[grid]\nn_r = 32\nn_ang = 16\n")
    refined = config.scaled(2)
    assert (refined.grid.n_r, refined.grid.n_ang) == (64, 32)
    assert config.grid.n_r == 32
    with pytest.raises(ConfigError):
        config.scaled(0)


def test_empty_trace_csv_is_header_only(tmp_path):
    path = emit_csv(MonotonicityTrace.empty(), tmp_path / "empty.csv")
    assert path.read_text() == ",".join(SCAN_HEADER) + "\n"


def test_scan_csv_round_trip(tmp_path, polar_grid, flat2):
    pair = make_plane_pair(polar_grid, [1.0, 0.0])
    trace = phi_scan(flat2, pair, radii=polar_grid.shells[[8, 16, 32]])
    path = emit_csv(trace, tmp_path / "trace.csv")
    assert len(path.read_text().splitlines()) == 4
    columns = read_csv(path)
    assert np.array_equal(columns["r"], trace.radii)
    assert np.array_equal(columns["phi"], trace.phi)
    assert np.array_equal(columns["phi_F"], trace.phi_F)
    assert columns["verdict"] == ["pass", "pass", "pass"]


def test_dyadic_csv_header(tmp_path):
    grid = BallGrid(2, 1.0, 128, 32)
    trace = dyadic_trace(ModelMetric.euclidean(2), make_plane_pair(grid, [1.0, 0.0]), 2)
    path = emit_csv(trace, tmp_path / "dyadic.csv")
    columns = read_csv(path)
    assert list(columns) == DYADIC_HEADER
    assert columns["k"].tolist() == [0, 1, 2]


def test_outputs_are_deterministic(tmp_path, polar_grid, flat2):
    pair = make_plane_pair(polar_grid, [1.0, 0.0])
    first = phi_scan(flat2, pair)
    second = phi_scan(flat2, pair)
    a = emit_csv(first, tmp_path / "a.csv").read_bytes()
    b = emit_csv(second, tmp_path / "b.csv").read_bytes()
    assert a == b
    svg_a = emit_svg(first, tmp_path / "a.svg").read_bytes()
    svg_b = emit_svg(second, tmp_path / "b.svg").read_bytes()
    assert svg_a == svg_b


def test_run_experiment_writes_report(tmp_path):
    config = parse_config(SCAN_CFG)
    report = run_experiment(config, tmp_path / "out", name="plane")
    assert report.passed
    assert report.verdicts["monotone"]
    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert data["name"] == "plane"
    assert data["kind"] == "scan"
    assert (tmp_path / "out" / "trace.csv").exists()
    assert not (tmp_path / "out" / "trace.svg").exists()


def test_main_fh_passes(tmp_path):
    cfg = _write(tmp_path, "fh.cfg", "[experiment]\nkind = fh\n[scan]\ntheta = pi\n")
    assert main(["fh", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    report = json.loads((tmp_path / "out" / "fh" / "report.json").read_text())
    assert report["fitted"]["sum"] == pytest.approx(2.0)


def test_main_fh_table(tmp_path):
    cfg = _write(tmp_path, "table.cfg", "[experiment]\nkind = fh\n[scan]\nn_partitions = 10\n")
    assert main(["fh", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    lines = (tmp_path / "out" / "table" / "fh.csv").read_text().splitlines()
    assert lines[0] == "theta,alpha_plus,alpha_minus,sum"
    assert len(lines) >= 10


def test_main_kind_mismatch(tmp_path):
    cfg = _write(tmp_path, "fh.cfg", "[experiment]\nkind = fh\n[scan]\ntheta = pi\n")
    assert main(["scan", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


def test_main_invalid_config(tmp_path):
    cfg = _write(tmp_path, "bad.cfg", "[experiment]\nkind = scan\n[grid]\nn_ang = 31\n")
    assert main(["scan", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


def test_main_missing_config(tmp_path):
    assert main(["scan", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def test_main_failed_verdict(tmp_path):
    text = "[experiment]\nkind = hebey\n[metric]\nkind = space_form\nkappa = 1\n[constants]\nK = 0.1\n"
    cfg = _write(tmp_path, "hebey.cfg", text)
    assert main(["hebey", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 1


def test_main_nonconvergence(tmp_path):
    text = (
        "[experiment]\nkind = solve\n[grid]\nn_r = 16\nn_ang = 16\n"
        "[problem]\noffset = 1.0\nmax_sweeps = 1\n"
    )
    cfg = _write(tmp_path, "solve.cfg", text)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 4
    assert (tmp_path / "out" / "solve" / "report.json").exists()


def test_main_directory_of_configs(tmp_path):
    configs = tmp_path / "configs"
    configs.mkdir()
    _write(configs, "half.cfg", "[experiment]\nkind = fh\n[scan]\ntheta = pi\n")
    _write(configs, "quarter.cfg", "[experiment]\nkind = fh\n[scan]\ntheta = pi/2\n")
    assert main(["fh", "--config", str(configs), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "half" / "report.json").exists()
    assert (tmp_path / "out" / "quarter" / "report.json").exists()


def test_numerical_failures_have_their_own_exit_code():
    assert NumericalError.exit_code == 3
    assert ConfigError.exit_code == 2


def test_directory_runs_only_matching_kind(tmp_path):
    configs = tmp_path / "configs"
    configs.mkdir()
    _write(configs, "fh.cfg", "[experiment]\nkind = fh\n[scan]\ntheta = pi\n")
    _write(configs, "hebey.cfg", "[experiment]\nkind = hebey\n")
    assert main(["fh", "--config", str(configs), "--out", str(tmp_path / "out")]) == 0
    assert not (tmp_path / "out" / "hebey").exists()
    assert main(["solve", "--config", str(configs), "--out", str(tmp_path / "out")]) == 2
