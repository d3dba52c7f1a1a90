import csv
import json
import os

import numpy as np
import pytest

from fermi_twist import cli_io
from fermi_twist.cli_io import (ConfigError, ExperimentOutput, Table, config_from_dict, load_config, main,
                                render_critical_geometry, run)
from fermi_twist.core_map import MapParams
from fermi_twist.critical_sets import CriticalParams

P3 = MapParams(A=1.0, gamma=3.0)
CP = CriticalParams()
SMALL = {"experiment": "map-audit", "seed": 7, "y_grid": [1e3, 1e4], "n_samples": 200}


@pytest.mark.parametrize("patch,path", [
    ({"y_grid": []}, "y_grid"),
    ({"gamma_grid": [3.0, -1.0]}, "gamma_grid[1]"),
    ({"seed": -1}, "seed"),
    ({"seed": 1.5}, "seed"),
    ({"n_samples": 0}, "n_samples"),
    ({"map": {"A": "x"}}, "map.A"),
    ({"map": {"B": 1.0}}, "map.B"),
    ({"critical": {"K2_bar": 4.0}}, "critical"),
    ({"bogus": 1}, "bogus"),
    ({"experiment": "nope"}, "experiment"),
])
def test_config_errors_name_field(patch, path):
    with pytest.raises(ConfigError) as e:
        config_from_dict({**SMALL, **patch})
    assert e.value.path == path


def test_seed_mandatory():
    d = dict(SMALL)
    del d["seed"]
    with pytest.raises(ConfigError, match="seed"):
        config_from_dict(d)


def test_config_roundtrip(tmp_path):
    cfg = config_from_dict(SMALL)
    p = tmp_path / "c.json"
    p.write_text(cfg.canonical())
    again = load_config(p)
    assert again.canonical() == cfg.canonical() and again.digest() == cfg.digest()
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_rerun_byte_identical_csvs(tmp_path):
    cfg = config_from_dict(SMALL)
    s1, m1 = run(cfg, out_dir=str(tmp_path / "a"))
    s2, m2 = run(cfg, out_dir=str(tmp_path / "b"))
    assert s1 == s2 == 0
    csvs = [f for f in m1.files if f.endswith(".csv")]
    assert csvs
    for f in csvs:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert m1.files[f] == m2.files[f]


def test_rows_carry_digest_and_rfc4180(tmp_path):
    cfg = config_from_dict(SMALL)
    run(cfg, out_dir=str(tmp_path / "a"))
    raw = (tmp_path / "a" / "map_audit.csv").read_bytes()
    assert b"\r\n" in raw
    rows = list(csv.reader(open(tmp_path / "a" / "map_audit.csv", newline="")))
    assert rows[0][-1] == "digest"
    assert all(r[-1] == cfg.digest() for r in rows[1:])
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert set(man) >= {"config_digest", "code_version", "files", "wall_clock_s", "threads"}
    assert all(v for v in man["checks"].values())


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL))
    assert main(["map-audit", "--config", str(cfg_path), "--out", str(tmp_path / "ok")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**SMALL, "y_grid": []}))
    assert main(["map-audit", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "y_grid" in capsys.readouterr().err
    assert main(["map-audit", "--out", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x").exists()

    def failing(cfg):
        return ExperimentOutput({"t": Table(["a"], [[1.0]])}, {"forced": False})
    monkeypatch.setitem(cli_io.RUNNERS, "map-audit", failing)
    assert main(["map-audit", "--config", str(cfg_path), "--out", str(tmp_path / "f")]) == 1


def test_runtime_error_cleans_staging(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("boom")
    monkeypatch.setitem(cli_io.RUNNERS, "map-audit", boom)
    assert main(["map-audit", "--seed", "1", "--out", str(tmp_path / "r")]) == 2
    assert os.listdir(tmp_path) == []


def test_threads_env_fallback(tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL))
    monkeypatch.setenv("FT_THREADS", "3")
    assert main(["map-audit", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["threads"] == 3


def test_render_outside_c1_single_color():
    r = render_critical_geometry(P3, CP, (1e4, 1.01e4), x_window=(1.45, 1.7), width=60, height=40)
    assert len(np.unique(r.classes)) == 1
    assert len(set(line.split('fill="')[1] for line in r.svg.splitlines() if "fill=" in line)) == 1


def test_render_nested_strips():
    r = render_critical_geometry(P3, CP, (200.0, 2000.0), x_window=(-0.05, 0.05), width=200, height=120)
    assert 0 < r.counts["C2"] < r.counts["C1"] + r.counts["C2_hat"] + r.counts["C2"]
    # C1 strip widths shrink monotonically with height
    assert np.all(np.diff(r.c1_widths) <= 0) and r.c1_widths[0] > r.c1_widths[-1]
    with pytest.raises(ValueError):
        render_critical_geometry(P3, CP, (10.0, 20.0))


def test_critical_measure_sample_size(tmp_path):
    small = config_from_dict({"experiment": "critical-measure", "seed": 1, "y_grid": [1e3, 1e4], "n_samples": 100})
    with pytest.raises(ConfigError) as e:
        run(small, out_dir=str(tmp_path / "s"))
    assert e.value.path == "n_samples" and not (tmp_path / "s").exists()
    cfg = config_from_dict({"experiment": "critical-measure", "seed": 1, "y_grid": [100, 1000, 10000],
                            "gamma_grid": [3.0], "n_samples": 10 ** 5})
    status, man = run(cfg, out_dir=str(tmp_path / "ok"))
    assert status == 0 and "critical_geometry_gamma3.svg" in man.files
