"""Deterministic result writers.

All floating-point values are rendered with ``%.17g`` so files
round-trip exactly and identical runs produce byte-identical output
(files are written with LF newlines regardless of platform). The
run metadata JSON is the one artifact allowed to differ between
otherwise identical runs (it records wall-clock timing).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from penflow.fem import TaylorHoodSpace
from penflow.stepper import EnergyLedger

CONVERGENCE_HEADER = ("member,m,h,dt,eps,err_L2max,rate_L2,"
                      "err_H1int,rate_H1,err_tau_weighted")
STATS_HEADER = "t,dt,member_id,ke,enstrophy,angmom"
SPREAD_HEADER = "t,member_id,rel_err"
LEDGER_HEADER = "run,member,t,lhs,rhs,holds"


def g17(value: float) -> str:
    """Shortest exact decimal rendering used in every CSV."""
    return "%.17g" % value


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return g17(float(value))
    return str(value)


def _write_lines(path, header: str, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def write_convergence_csv(path, rows) -> None:
    """rows: ConvergenceRow sequence (member-major)."""
    _write_lines(path, CONVERGENCE_HEADER,
                 ((r.member, r.m, r.h, r.dt, r.eps, r.err_l2max, r.rate_l2,
                   r.err_h1int, r.rate_h1, r.err_tau) for r in rows))


def write_stats_csv(path, rows) -> None:
    """rows: (t, dt, label, FlowSample) tuples."""
    _write_lines(path, STATS_HEADER,
                 ((t, dt, label, s.ke, s.enstrophy, s.angmom)
                  for t, dt, label, s in rows))


def write_spread_csv(path, rows) -> None:
    """rows: (t, label, rel_err) tuples; NaN marks an undefined ratio."""
    _write_lines(path, SPREAD_HEADER, rows)


def write_ledger_csv(path, ledgers: dict[str, EnergyLedger]) -> None:
    """One row per (run label, member, accepted time); ``holds`` is 1/0."""
    def rows():
        for run_label, ledger in ledgers.items():
            for r in ledger.rows:
                yield (run_label, r.member + 1, r.t, r.lhs, r.rhs,
                       int(r.holds()))
    _write_lines(path, LEDGER_HEADER, rows())


def write_run_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_vtk(path, space: TaylorHoodSpace, velocity: np.ndarray,
              pressure: np.ndarray, title: str = "penflow snapshot") -> None:
    """Legacy ASCII VTK snapshot on the linear mesh.

    Vertex values only: quadratic velocity dofs are subsampled at the
    vertices, pressure is vertex-native. Fields are attached as POINT_DATA
    (a velocity vector and a pressure scalar).
    """
    mesh = space.mesh
    n = mesh.n_nodes
    if velocity.shape != (space.n_velocity,):
        raise ValueError("velocity coefficient vector has the wrong length")
    if pressure.shape != (space.n_pressure,):
        raise ValueError("pressure coefficient vector has the wrong length")
    vel = velocity.reshape(-1, 2)[:n]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(title.splitlines()[0][:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{g17(x)} {g17(y)} 0\n")
        T = mesh.n_triangles
        fh.write(f"CELLS {T} {4 * T}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {T}\n")
        fh.write("5\n" * T)
        fh.write(f"POINT_DATA {n}\n")
        fh.write("VECTORS velocity double\n")
        for u, v in vel:
            fh.write(f"{g17(u)} {g17(v)} 0\n")
        fh.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
        for p in pressure:
            fh.write(g17(p) + "\n")
