import csv
import json
import struct

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from xadm.chart_geometry import decay_audit
from xadm.cli_report import F_COLUMNS, U_MAGIC, build_config, cli
from xadm.errors import ConfigError
from xadm.presets import get_preset, list_presets


@pytest.fixture
def runner():
    return CliRunner()


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_run_bundle_and_round_trip(runner, tmp_path):
    out = tmp_path / "a"
    r = runner.invoke(cli, ["run", "--chart", "euclidean", "--out", str(out)])
    assert r.exit_code == 0, r.output
    for name in ("F.csv", "mass.csv", "verdicts.json", "summary.json", "config.yaml", "skipped_levels.csv"):
        assert (out / name).exists(), name
    assert _header(out / "F.csv") == F_COLUMNS
    assert _header(out / "mass.csv") == ["r", "m_X_r", "abs_diff_from_limit"]
    out2 = tmp_path / "b"
    r = runner.invoke(cli, ["run", "--config", str(out / "config.yaml"), "--out", str(out2)])
    assert r.exit_code == 0, r.output
    for name in ("F.csv", "mass.csv", "verdicts.json", "summary.json"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes(), name


def test_exit_codes(runner, tmp_path):
    r = runner.invoke(cli, ["run", "--chart", "schwarzschild", "--m", "-1", "--out", str(tmp_path / "n")])
    assert r.exit_code == 4
    rep = json.loads((tmp_path / "n" / "verdicts.json").read_text())
    assert rep["all_passed"] is False
    assert runner.invoke(cli, ["run", "--chart", "nope", "--out", str(tmp_path / "x")]).exit_code == 2
    assert runner.invoke(cli, ["mass", "--chart", "schwarzschild", "--m", "1e9", "--out", str(tmp_path / "y")]).exit_code == 2
    assert runner.invoke(cli, ["run", "--chart", "euclidean", "--grid-n", "3", "--out", str(tmp_path / "z")]).exit_code == 2
    assert runner.invoke(cli, ["run", "--chart", "euclidean", "--param", "oops", "--out", str(tmp_path / "w")]).exit_code == 2


def test_config_errors_name_fields(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"chart": {"name": "euclidean"}, "solver": {"grid_n": 2}}))
    with pytest.raises(ConfigError, match="grid_n"):
        build_config(str(p), {})
    p.write_text(yaml.safe_dump({"chart": {"name": "euclidean"}, "bogus": 1}))
    with pytest.raises(ConfigError, match="bogus"):
        build_config(str(p), {})


def test_mass_command_with_charge(runner, tmp_path):
    out = tmp_path / "rn"
    r = runner.invoke(cli, ["mass", "--chart", "reissner_nordstrom", "--out", str(out)])
    assert r.exit_code == 0, r.output
    s = json.loads((out / "mass.json").read_text())
    assert s["m_X"] == pytest.approx(0.5, rel=1e-2)
    assert (out / "charge.csv").exists()


def test_potential_dump_header(runner, tmp_path):
    out = tmp_path / "p"
    r = runner.invoke(cli, ["potential", "--chart", "schwarzschild", "--out", str(out)])
    assert r.exit_code == 0, r.output
    raw = (out / "u.bin").read_bytes()
    assert raw[:8] == U_MAGIC
    (count,) = struct.unpack("<I", raw[8:12])
    rows = np.frombuffer(raw[12:], dtype="<f8").reshape(count, 3)
    meta = json.loads((out / "u.json").read_text())
    assert meta["layout"] == "radial" and meta["rows"] == count
    assert np.all(np.diff(rows[:, 0]) > 0)


def test_monotonicity_and_verify(runner, tmp_path):
    r = runner.invoke(cli, ["monotonicity", "--chart", "schwarzschild", "--out", str(tmp_path / "m")])
    assert r.exit_code == 0, r.output
    r = runner.invoke(cli, ["verify", "--chart", "euclidean_exterior", "--out", str(tmp_path / "v")])
    assert r.exit_code == 0, r.output
    names = [v["name"] for v in json.loads((tmp_path / "v" / "verdicts.json").read_text())["verdicts"]]
    assert "boundary_variant" in names


def test_list_presets(runner):
    r = runner.invoke(cli, ["list-presets", "--json"])
    assert r.exit_code == 0
    rows = json.loads(r.output)
    names = [row["name"] for row in rows]
    assert len(set(names)) == len(names) >= 5
    assert names == [row["name"] for row in list_presets()]


@pytest.mark.parametrize("name", [p["name"] for p in list_presets()])
def test_every_preset_audits(name):
    inst = get_preset(name)
    rep = decay_audit(inst.chart, inst.drift, np.geomspace(50, 5e3, 6))
    assert np.isfinite(rep.tau_used) and rep.tau_used > 0.5
