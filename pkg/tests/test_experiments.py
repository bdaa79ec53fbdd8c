import json
from pathlib import Path

import numpy as np
import pytest

from rtescatter.errors import ConfigError
from rtescatter.experiments.cli import main
from rtescatter.experiments.config import load_config, parse_config, parse_override
from rtescatter.experiments.drivers import MEASUREMENT_HEADER, loglog_slope, validate_epsilons
from rtescatter.experiments.io import FLOAT_FORMAT_NOTE, read_csv, read_pgm, write_csv, write_json, write_pgm

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def load_json(path):
    return json.loads(Path(path).read_text())


# configuration


def test_defaults_parse():
    cfg = parse_config({})
    assert cfg.domain.radius == 1.0
    assert cfg.phantom.sigma.value == 0.5
    assert cfg.convergence.epsilons == [0.4, 0.2, 0.1, 0.05]


def test_unknown_keys_rejected_with_path():
    with pytest.raises(ConfigError, match="phantom.sigma.valu"):
        parse_config({"phantom": {"sigma": {"valu": 1.0}}})
    with pytest.raises(ConfigError, match="bogus"):
        parse_config({"bogus": 1})


def test_wrong_types_rejected():
    with pytest.raises(ConfigError):
        parse_config({"grid": {"n": "five"}})
    with pytest.raises(ConfigError):
        parse_config({"domain": {"radius": [1.0]}})


def test_overrides():
    assert parse_override("grid.n=9") == ("grid.n", 9)
    assert parse_override("phantom.kappa.kind=hg") == ("phantom.kappa.kind", "hg")
    assert parse_override("stability.deltas=[0.1, 0.2]") == ("stability.deltas", [0.1, 0.2])
    with pytest.raises(ConfigError):
        parse_override("no-equals-sign")
    cfg, raw = load_config(None, ["grid.n=3", "phantom.s.value=0.1"])
    assert cfg.grid.n == 3 and raw["phantom"]["s"]["value"] == 0.1


def test_bad_toml_is_config_error(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[grid\nn = 3\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_shipped_configs_parse():
    paths = sorted(CONFIGS.glob("*.toml"))
    assert paths
    for p in paths:
        cfg, _ = load_config(p)
        cfg.build_coefficients()


def test_supercritical_config_rejected():
    cfg = parse_config({"phantom": {"sigma": {"value": 0.1}, "s": {"value": 1.0}}})
    with pytest.raises(Exception, match="sigma"):
        cfg.build_coefficients()


def test_epsilon_validation():
    assert validate_epsilons([0.4, 0.2, 0.1]) == [0.4, 0.2, 0.1]
    for bad in ([0.1], [0.1, 0.2, 0.05], [0.4, 0.2, 0.0]):
        with pytest.raises(ConfigError):
            validate_epsilons(bad)


def test_loglog_slope():
    x = np.array([1e-3, 1e-2, 1e-1])
    assert loglog_slope(x, 3 * x**2) == pytest.approx(2.0)


# serialisation


def test_csv_round_trip(tmp_path, rng):
    vals = rng.normal(size=5) * 10.0 ** rng.integers(-300, 300, 5)
    vals = np.append(vals, [0.1, 1 / 3, 5e-324])
    path = tmp_path / "x.csv"
    write_csv(path, ["v", "flag"], [[v, True] for v in vals])
    assert path.read_text().splitlines()[0] == FLOAT_FORMAT_NOTE
    header, rows = read_csv(path)
    assert header == ["v", "flag"]
    back = np.array([float(r["v"]) for r in rows])
    np.testing.assert_array_equal(back, vals)
    write_csv(tmp_path / "y.csv", header, [[float(r["v"]), True] for r in rows])
    assert (tmp_path / "y.csv").read_bytes() == path.read_bytes()


def test_json_sorted_and_nan_null(tmp_path):
    write_json(tmp_path / "a.json", {"b": float("nan"), "a": np.float64(1.5), "c": np.arange(2)})
    text = (tmp_path / "a.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert load_json(tmp_path / "a.json") == {"a": 1.5, "b": None, "c": [0, 1]}


def test_pgm_round_trip(tmp_path):
    img = np.array([[0.0, 1.0, 2.0], [3.0, np.nan, 4.0]])
    info = write_pgm(tmp_path / "s.pgm", img)
    assert info == {"min": 0.0, "max": 4.0, "width": 3, "height": 2}
    assert (tmp_path / "s.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    pix = read_pgm(tmp_path / "s.pgm")
    assert pix[0, 0] == 0 and pix[1, 2] == 255 and pix[1, 1] == 0
    assert write_pgm(tmp_path / "c.pgm", np.ones((2, 2)))["min"] == 1.0
    assert np.all(read_pgm(tmp_path / "c.pgm") == 128)


# command line


def test_simulate_header_and_zero_kernel(tmp_path):
    code = run(tmp_path, "simulate", "--set", "phantom.s.value=0.0", "--set", "grid.n=2", "--epsilon", "0.1")
    assert code == 0
    header, rows = read_csv(tmp_path / "measurements.csv")
    assert header == MEASUREMENT_HEADER
    assert header[0] == "source_x" and header[-1] == "provenance"
    assert len(rows) == 8 * 4
    assert all(float(r["single_scatter"]) == 0.0 for r in rows)


def test_simulate_empty_grid(tmp_path):
    assert run(tmp_path, "simulate", "--set", "grid.n=0") == 0
    header, rows = read_csv(tmp_path / "measurements.csv")
    assert header == MEASUREMENT_HEADER and rows == []


def test_simulate_within_tail_bound(tmp_path):
    assert run(tmp_path, "simulate", "--config", str(CONFIGS / "constant.toml"), "--set", "grid.n=2", "--epsilon", "0.1") == 0
    assert load_json(tmp_path / "simulate.json")["deviation_within_tail_bound"] is True


def test_reconstruct_analytic(tmp_path):
    assert run(tmp_path, "reconstruct", "--config", str(CONFIGS / "constant.toml")) == 0
    summary = load_json(tmp_path / "summary.json")
    assert summary["max_rel_error"] <= 1e-10
    for name in ("k2_slice.pgm", "k2_truth_slice.pgm"):
        assert (tmp_path / name).read_bytes().startswith(b"P5")
    header, rows = read_csv(tmp_path / "points.csv")
    ok = [r for r in rows if r["status"] == "ok"]
    assert summary["status_counts"]["ok"] == len(ok)


def test_reconstruct_from_simulated_file(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--set", "grid.n=2", "--epsilon", "0.05", "--out", str(sim)]) == 0
    rec = tmp_path / "rec"
    code = main(["reconstruct", "--set", "grid.n=2", "--measurements", str(sim / "measurements.csv"), "--out", str(rec)])
    assert code == 0
    assert load_json(rec / "summary.json")["max_rel_error"] < 0.05


def test_missing_measurement_file_is_io_error(tmp_path, capsys):
    assert run(tmp_path, "reconstruct", "--measurements", str(tmp_path / "nope.csv")) == 4
    assert "nope.csv" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path):
    assert run(tmp_path, "reconstruct", "--set", "grid.bogus=1") == 2
    assert run(tmp_path, "reconstruct", "--config", str(tmp_path / "missing.toml")) in (2, 4)
    assert run(tmp_path, "reconstruct-mf") == 2
    assert run(tmp_path, "stability") == 2
    assert run(tmp_path, "convergence", "--set", "convergence.epsilons=[0.1]") == 2
    assert run(tmp_path, "reconstruct", "--set", "phantom.sigma.value=0.01") == 2


def test_numeric_failure_exit_3(tmp_path):
    # optical depth 40 across the ball drives every ballistic reading below the floor
    assert run(tmp_path, "reconstruct", "--set", "phantom.sigma.value=20.0", "--set", "grid.n=2") == 3
    assert load_json(tmp_path / "summary.json")["status_counts"]["underflow"] == 8


def test_reconstruct_mf_degenerate_matches_k2_squared(tmp_path):
    code = run(
        tmp_path, "reconstruct-mf", "--config", str(CONFIGS / "mf.toml"),
        "--set", "phantom.sigma_f.kind=\"constant\"", "--set", "phantom.sigma_f.value=0.5",
    )
    assert code == 0
    summary = load_json(tmp_path / "summary.json")
    assert summary["max_rel_error"] <= 1e-10
    assert summary["max_rel_diff_vs_k2_squared"] <= 1e-10


def test_baseline_cli(tmp_path):
    assert run(tmp_path, "baseline", "--set", "art.n_voxels=9", "--set", "art.chords_per_axis=10") == 0
    report = load_json(tmp_path / "baseline.json")
    assert abs(report["interior_mean"] - 0.5) < 0.05


def test_stability_reproducible(tmp_path):
    args = ["stability", "--config", str(CONFIGS / "stability.toml"), "--set", "grid.n=2",
            "--set", "art.n_voxels=5", "--set", "art.chords_per_axis=6"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("stability.csv", "stability.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main([*args, "--seed", "5", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "stability.csv").read_bytes() != (tmp_path / "a" / "stability.csv").read_bytes()


def test_timestamp_opt_in(tmp_path):
    assert run(tmp_path, "reconstruct", "--set", "grid.n=1") == 0
    assert "timestamp" not in load_json(tmp_path / "summary.json")["provenance"]
    assert run(tmp_path, "reconstruct", "--set", "grid.n=1", "--timestamp") == 0
    assert "timestamp" in load_json(tmp_path / "summary.json")["provenance"]
