"""End-to-end command-line runs at smoke scale."""

import json

import pytest

import penflow
from penflow.cli import main
from penflow.output import (CONVERGENCE_HEADER, SPREAD_HEADER, STATS_HEADER)


def test_version(capsys):
    assert main(["version"]) == 0
    out = capsys.readouterr().out
    assert "penflow" in out and penflow.__version__ in out


def test_bad_flags_usage_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["converge", "--levels"])
    assert err.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["simulate"])
    assert err.value.code == 2


def test_check_mesh_missing_file(capsys):
    assert main(["check-mesh", "definitely_missing.msh"]) == 3
    err = capsys.readouterr().err
    assert err.startswith("error: file-not-found:")
    assert "definitely_missing.msh" in err


def test_check_mesh_fixture(capsys, cylinder_mesh_path):
    assert main(["check-mesh", str(cylinder_mesh_path)]) == 0
    out = capsys.readouterr().out
    assert "nodes: 298" in out
    assert "triangles: 502" in out
    assert "boundary tags: 1:" in out and "2:" in out


def test_check_mesh_garbage_file(tmp_path, capsys):
    bad = tmp_path / "broken.msh"
    bad.write_text("$MeshFormat\n3.0 0 8\n$EndMeshFormat\n")
    assert main(["check-mesh", str(bad)]) == 3
    assert "error: mesh-parse:" in capsys.readouterr().err


def test_converge_smoke(tmp_path, capsys):
    out = tmp_path / "conv"
    assert main(["converge", "--levels", "6,9", "--outdir", str(out)]) == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == CONVERGENCE_HEADER
    assert len(lines) == 1 + 4  # two levels for each of two members
    meta = json.loads((out / "run.json").read_text())
    assert meta["experiment"] == "converge"
    assert meta["deltas"] == [1e-3, -1e-3]
    assert meta["penalty_residual_max"] <= 1e-9
    assert [lv["m"] for lv in meta["levels"]] == [6, 9]
    assert (out / "ledger.csv").exists()
    assert "wrote convergence.csv" in capsys.readouterr().out


def test_cylinder_smoke(tmp_path, capsys):
    out = tmp_path / "cyl"
    assert main(["cylinder", "--T", "0.2", "--outdir", str(out)]) == 0
    stats = (out / "stats.csv").read_text().splitlines()
    assert stats[0] == STATS_HEADER
    labels = {line.split(",")[2] for line in stats[1:]}
    assert labels == {"1", "2", "mean", "ref"}
    spread = (out / "spread.csv").read_text().splitlines()
    assert spread[0] == SPREAD_HEADER
    meta = json.loads((out / "run.json").read_text())
    assert meta["T"] == 0.2 and meta["lc"] == 0.1
    assert meta["deltas"] == [0.1, -0.1]
    assert meta["ledger_holds"] == {"ensemble": True, "ref": True}
    assert "reference kinetic energy" in capsys.readouterr().out


def test_cylinder_unpackaged_lc(tmp_path, capsys):
    out = tmp_path / "cyl"
    assert main(["cylinder", "--T", "0.2", "--lc", "0.07",
                 "--outdir", str(out)]) == 2
    assert "no packaged mesh" in capsys.readouterr().err


def test_run_missing_config(capsys):
    assert main(["run", "nope.cfg"]) == 3
    assert "file-not-found" in capsys.readouterr().err


def test_run_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[time]\nwarp = 9\n")
    assert main(["run", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error: config:")
    assert "time.warp" in err and "line 2" in err


def test_run_converge_needs_levels(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[run]\nexperiment = converge\n"
                   "[perturbation]\nkind = multiplicative-ic\n"
                   "magnitudes = 0.001, -0.001\n")
    assert main(["run", str(cfg)]) == 2
    assert "mesh.levels" in capsys.readouterr().err


CUSTOM_CFG = """\
[run]
experiment = custom

[mesh]
m = 6

[time]
T = 0.05
dt0 = 0.01

[physics]
nu = 1.0
forcing = rotational

[perturbation]
kind = multiplicative-ic
magnitudes = 0.3, -0.3
"""


def test_run_custom_echoes_deltas(tmp_path, capsys):
    cfg = tmp_path / "custom.cfg"
    cfg.write_text(CUSTOM_CFG)
    out = tmp_path / "res"
    assert main(["run", str(cfg), "--outdir", str(out)]) == 0
    meta = json.loads((out / "run.json").read_text())
    assert meta["deltas"] == [0.3, -0.3]
    assert meta["m"] == 6 and meta["dt0"] == 0.01 and meta["eps"] == 0.01
    assert meta["accepted"] == 5 and meta["ledger_holds"] is True
    stats = (out / "stats.csv").read_text().splitlines()
    assert len(stats) == 1 + 6 * 3  # initial state plus 5 steps, 3 labels
    assert "accepted 5 steps" in capsys.readouterr().out


UNDERFLOW_CFG = """\
[run]
experiment = custom

[mesh]
m = 6

[time]
T = 0.5
dt0 = 0.01
dt_min = 0.01

[stability]
form = theoretical
constant = 1e12

[perturbation]
kind = multiplicative-ic
magnitudes = 0.5, -0.5
"""


def test_run_underflow_exit_3(tmp_path, capsys):
    cfg = tmp_path / "under.cfg"
    cfg.write_text(UNDERFLOW_CFG)
    assert main(["run", str(cfg), "--outdir", str(tmp_path / "o")]) == 3
    assert "error: timestep-underflow:" in capsys.readouterr().err
