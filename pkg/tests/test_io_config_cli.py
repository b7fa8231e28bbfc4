import csv
import json
import struct

import numpy as np
import pytest

from rml import cli
from rml.config import parse_config
from rml.errors import ChecksumError, ConfigError, SnapshotError
from rml.fields import InitialDataSpec, make_initial_metric
from rml.geometry import TensorField, torus_grid
from rml.io import (
    VERSION,
    decode_snapshot,
    encode_snapshot,
    format_value,
    read_snapshot,
    snapshot_roundtrip,
    write_csv,
    write_snapshot,
)


def random_metric(n=2, cells=16, seed=5):
    grid = torus_grid(n, cells)
    g, _ = make_initial_metric(InitialDataSpec("random_w1p", amplitude=0.3, seed=seed), grid)
    return g


# --- snapshots ---------------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3])
def test_snapshot_roundtrip_is_bit_exact(n, tmp_path):
    g = random_metric(n, 16 if n == 2 else 8)
    path = tmp_path / "g.rdfs"
    write_snapshot(path, g, time=0.125)
    back, grid, t = read_snapshot(path)
    assert np.array_equal(back.data, g.data)
    assert grid == g.grid and t == 0.125
    assert back.symmetric


def test_snapshot_stores_upper_triangle_only():
    g = random_metric()
    blob = encode_snapshot(g)
    comps = 3
    assert len(blob) == 4 + 4 * 2 + 4 * 2 + 8 * 2 + 8 + 8 + 8 * comps * 16 * 16 + 4
    assert np.array_equal(snapshot_roundtrip(g).data, g.data)


def test_dense_payload_roundtrip():
    grid = torus_grid(2, 8)
    data = np.random.default_rng(0).normal(size=(2, 2, 2) + grid.dims)
    back, _, _ = decode_snapshot(encode_snapshot(TensorField(grid, data, (3, 0))))
    assert np.array_equal(back, data.reshape((8,) + grid.dims))


def test_snapshot_rejects_version_truncation_and_corruption():
    blob = bytearray(encode_snapshot(random_metric()))
    bumped = bytearray(blob)
    struct.pack_into("<I", bumped, 4, VERSION + 1)
    with pytest.raises(SnapshotError, match="version"):
        decode_snapshot(bytes(bumped))
    with pytest.raises(SnapshotError, match="truncated"):
        decode_snapshot(bytes(blob[:-20]))
    with pytest.raises(SnapshotError, match="magic"):
        decode_snapshot(b"XXXX" + bytes(blob[4:]))
    blob[100] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_snapshot(bytes(blob))


def test_missing_snapshot_file_is_a_snapshot_error(tmp_path):
    with pytest.raises(SnapshotError):
        read_snapshot(tmp_path / "absent.rdfs")


# --- csv ---------------------------------------------------------------------------


def test_csv_values_roundtrip_exactly(tmp_path):
    vals = [0.1, 1 / 3, 1e-300, -2.5e17, 7]
    write_csv(tmp_path / "a.csv", ("name", "v"), [(f"r{i}", v) for i, v in enumerate(vals)])
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["name", "v"]
    assert [float(r[1]) for r in rows[1:]] == [float(v) for v in vals]
    assert format_value(0.1) == "0.1"


# --- config ------------------------------------------------------------------------


def test_config_defaults():
    cfg = parse_config("")
    assert cfg.seed == 0 and cfg.grid.dims == (64, 64)
    assert cfg.flow.cfl == 0.4 and cfg.p == 2.0
    assert cfg.initial.kind == "flat"
    assert cfg.delta == pytest.approx(2.0 * 0.5)


def test_config_values_and_lists():
    text = """
[grid]
n = 3
cells = 16
[initial]
kind = conformal_bump
amplitude = 0.2   # inline comment
centers = 1.0, 2.0, 3.0; 0.5, 0.5, 0.5
[flow]
snapshot_times = 0.01, 0.02
dt_max = none
"""
    cfg = parse_config(text, command="evolve")
    assert cfg.grid.n == 3
    assert cfg.initial.amplitude == 0.2
    assert cfg.initial.centers == ((1.0, 2.0, 3.0), (0.5, 0.5, 0.5))
    assert cfg.flow.snapshot_times == (0.01, 0.02)
    assert cfg.command == "evolve"


def test_config_errors_name_field_and_line():
    with pytest.raises(ConfigError) as info:
        parse_config("[flow]\ncfl = 1.5\n")
    assert any("line 2" in e and "cfl" in e for e in info.value.errors)
    with pytest.raises(ConfigError) as info:
        parse_config("[flow]\nt_end = 0.1\nbogus = 1\n[nowhere]\nx = 1\n")
    msgs = info.value.errors
    assert any("line 3" in e and "bogus" in e for e in msgs)
    assert any("line 4" in e and "nowhere" in e for e in msgs)


def test_monotone_requires_p_at_least_two():
    with pytest.raises(ConfigError, match="p"):
        parse_config("[analysis]\np = 1\n", command="monotone")
    assert parse_config("[analysis]\np = 1\n", command="evolve").p == 1.0


def test_seed_override_propagates_to_initial_data():
    cfg = parse_config("[initial]\nkind = random_w1p\namplitude = 0.2\n").with_overrides(seed=11)
    assert cfg.seed == 11 and cfg.initial.seed == 11


# --- command line ------------------------------------------------------------------


FLAT = """
[grid]
cells = 16
[flow]
t_end = 0.02
snapshot_times = 0.01
"""

CONE = """
[grid]
cells = 64
[initial]
kind = hoelder_cone
amplitude = -0.25
radius = none
[curvature]
radius = 1.0
eps_list = 0.4, 0.8
[heat]
radius = 1.0
[flow]
t_end = 0.01
"""


def run_cli(tmp_path, command, text, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfgfile = tmp_path / f"{command}.cfg"
    cfgfile.write_text(text)
    out = tmp_path / f"out_{command}"
    code = cli.main([command, "--config", str(cfgfile), "--out", str(out), *extra])
    return code, out


def test_evolve_writes_snapshots_diagnostics_and_manifest(tmp_path):
    code, out = run_cli(tmp_path, "evolve", FLAT)
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    names = [e["path"] for e in manifest["outputs"]]
    assert "diagnostics.csv" in names and "summary.csv" in names
    assert any(n.endswith(".rdfs") for n in names)
    for e in manifest["outputs"]:
        assert (out / e["path"]).stat().st_size == e["bytes"]
    g, _, t = read_snapshot(out / sorted(n for n in names if n.endswith(".rdfs"))[-1])
    assert t == pytest.approx(0.02)


def test_manifest_is_deterministic(tmp_path):
    _, a = run_cli(tmp_path / "a", "evolve", FLAT)
    _, b = run_cli(tmp_path / "b", "evolve", FLAT)
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


@pytest.mark.parametrize("command", ["morrey", "rdist", "codim", "monotone", "mollify", "kernelcheck"])
def test_every_command_runs(tmp_path, command):
    text = CONE + "[mollify]\nindices = 2, 4\nchart_radius = 1.5\noverlap = 0.3\n"
    if command == "codim":
        text += "[analysis]\ncodim_epsilons = 0.4, 0.8\n"
    code, out = run_cli(tmp_path, command, text)
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["command"] == command
    assert manifest["outputs"]


def test_resume_continues_from_snapshot(tmp_path):
    code, out = run_cli(tmp_path, "evolve", FLAT)
    snap = sorted(out.glob("state_*.rdfs"))[1]
    _, _, t0 = read_snapshot(snap)
    text = FLAT + f"resume = {snap}\n"
    code, out2 = run_cli(tmp_path / "r", "evolve", text)
    assert code == 0
    first = read_snapshot(sorted(out2.glob("state_*.rdfs"))[0])[2]
    assert first == t0


def test_exit_codes(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "evolve", "[flow]\ncfl = 1.5\nbogus = 1\n")
    assert code == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "line 3" in err
    unstable = CONE.replace("t_end = 0.01", "t_end = 1.0\ndt_min = 0.05\nearly_time_refinement = none")
    code, _ = run_cli(tmp_path, "evolve", unstable.replace("-0.25", "0.5"))
    assert code == 3
    bad = tmp_path / "bad.rdfs"
    blob = bytearray(encode_snapshot(random_metric(cells=16)))
    blob[60] ^= 1
    bad.write_bytes(bytes(blob))
    code, _ = run_cli(tmp_path, "evolve", FLAT + f"resume = {bad}\n")
    assert code == 4


def test_thread_count_from_flag_and_environment(monkeypatch, tmp_path):
    monkeypatch.delenv(cli.THREADS_ENV, raising=False)
    assert cli._threads(None) is None
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    assert cli._threads(None) == 2
    assert cli._threads(1) == 1
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    code, _ = run_cli(tmp_path, "evolve", FLAT)
    assert code == 2
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    code, _ = run_cli(tmp_path, "evolve", FLAT)
    assert code == 0
