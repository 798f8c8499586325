"""Command-line entry point.

Subcommands: ``converge`` (manufactured-vortex refinement study),
``cylinder`` (offset-circle ensemble flow), ``run`` (config-file driven,
including custom unit-square ensembles), ``check-mesh``, ``version``.

Exit codes: 0 success, 2 usage or configuration errors, 3 runtime
failures. Failures print one machine-readable line to stderr:
``error: <category>: <message>`` with category one of config,
file-not-found, mesh-parse, timestep-underflow, singular-matrix.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from importlib.resources import files as _resource_files
from pathlib import Path

import numpy as np

import penflow
from penflow.assembly import assemble_static
from penflow.config import (ConfigError, SimulationConfig,
                            default_convergence_config,
                            default_cylinder_config, parse_config,
                            serialize_config)
from penflow.experiments import (offset_cylinder_forcing,
                                 run_convergence_study, run_cylinder_study,
                                 flow_statistics, predictability_horizon,
                                 solenoidal_patch)
from penflow.fem import build_space, interpolate
from penflow.linalg import SingularMatrixError
from penflow.mesh import (Mesh, MeshError, generate_unit_square, load_gmsh,
                          mesh_quality, parse_gmsh)
from penflow.output import (write_convergence_csv, write_ledger_csv,
                            write_run_json, write_spread_csv,
                            write_stats_csv, write_vtk)
from penflow.sampling import bump_initial, monte_carlo_draws
from penflow.stepper import (CflConfig, TimestepUnderflowError,
                             ensemble_mean, make_ensemble, run_adaptive)

FIXTURE_LC = (0.1, 0.05)


def _levels_arg(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip(), 10) for part in raw.split(","))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="penflow",
        description="Shared-matrix ensemble solver for incompressible "
                    "2D flow with penalty pressure coupling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("converge",
                       help="manufactured-vortex refinement study")
    p.add_argument("--levels", type=_levels_arg, default=None,
                   metavar="M1,M2,...",
                   help="mesh subdivisions per level (default profile set)")
    p.add_argument("--profile", choices=("ci", "full"), default="ci")
    p.add_argument("--mode", choices=("consistent", "ic_only"),
                   default="consistent",
                   help="how ensemble members differ (default: consistent)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--outdir", default="out")

    p = sub.add_parser("cylinder", help="offset-circle ensemble flow")
    p.add_argument("--profile", choices=("ci", "full"), default="ci")
    p.add_argument("--mesh", default=None, metavar="FILE",
                   help="external Gmsh mesh (default: packaged fixture)")
    p.add_argument("--lc", type=float, default=None,
                   help="mesh scale; selects the packaged fixture "
                        "(0.1 or 0.05) unless --mesh is given")
    p.add_argument("--T", type=float, default=None,
                   help="final time (default 10 for ci, 100 for full)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--outdir", default="out")
    p.add_argument("--snapshot-every", type=int, default=0, metavar="N",
                   help="write a VTK snapshot of the ensemble mean every "
                        "N accepted steps (0 = off)")

    p = sub.add_parser("run", help="run from a configuration file")
    p.add_argument("config", help="configuration file path")
    p.add_argument("--outdir", default=None,
                   help="override the configured output directory")

    p = sub.add_parser("check-mesh", help="parse a mesh and report quality")
    p.add_argument("mesh", help="Gmsh .msh file")

    sub.add_parser("version", help="print the package version")
    return parser


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------


def _common_metadata(cfg: SimulationConfig, elapsed: float) -> dict:
    return {
        "package": "penflow",
        "version": penflow.__version__,
        "experiment": cfg.experiment,
        "profile": cfg.profile,
        "threads": cfg.threads,
        "elapsed_seconds": elapsed,
        "config": serialize_config(cfg),
    }


def _run_converge(cfg: SimulationConfig) -> int:
    t0 = time.perf_counter()
    out = Path(cfg.outdir)
    result = run_convergence_study(
        levels=cfg.levels, T=cfg.T, nu=cfg.nu,
        deltas=cfg.perturbation.magnitudes, mode=cfg.mode,
        threads=cfg.threads)
    rows = result.rows()
    write_convergence_csv(out / "convergence.csv", rows)
    write_ledger_csv(out / "ledger.csv",
                     {f"m{lv.m}": lv.ledger for lv in result.levels})
    meta = _common_metadata(cfg, time.perf_counter() - t0)
    meta.update({
        "mode": result.mode,
        "deltas": list(result.deltas),
        "penalty_residual_max": max(lv.penalty_max for lv in result.levels),
        "levels": [{
            "m": lv.m, "h": lv.h, "dt": lv.dt, "eps": lv.eps,
            "accepted": lv.n_accepted, "halvings": lv.n_halvings,
            "ledger_holds": lv.ledger.holds(),
            "member_metrics": lv.member_metrics,
            "baseline_metrics": lv.baseline_metrics,
        } for lv in result.levels],
        "outputs": ["convergence.csv", "ledger.csv"],
    })
    write_run_json(out / "run.json", meta)
    for r in rows:
        rate = "" if r.rate_l2 is None else f"  rate_L2={r.rate_l2:.3f}"
        print(f"member {r.member}  m={r.m:4d}  errL2max={r.err_l2max:.6e}"
              f"{rate}")
    print(f"wrote convergence.csv ledger.csv run.json to {out}")
    return 0


def _fixture_mesh(lc: float) -> Mesh:
    name = f"offset_cylinder_lc{lc:g}.msh"
    res = _resource_files("penflow").joinpath("data").joinpath(name)
    if not res.is_file():
        raise ConfigError(
            f"no packaged mesh for lc = {lc:g} (available: "
            + ", ".join(f"{x:g}" for x in FIXTURE_LC) + ")")
    return parse_gmsh(res.read_text(), h_char=lc)


def _load_cylinder_mesh(cfg: SimulationConfig) -> Mesh:
    if cfg.mesh_file is not None:
        return load_gmsh(cfg.mesh_file, h_char=cfg.lc)
    return _fixture_mesh(cfg.lc)


def _snapshot_hook(outdir: Path, every: int):
    if every <= 0:
        return None

    def hook(state, dt_used, _result):
        if state.step_index % every != 0:
            return
        space = state.members[0].velocity.space
        mean = ensemble_mean(state)
        p_mean = np.mean([m.pressure.coefficients for m in state.members],
                         axis=0)
        write_vtk(outdir / f"snapshot_{state.step_index:06d}.vtk", space,
                  mean.coefficients, p_mean,
                  title=f"ensemble mean at t = {state.t:.6f}")

    return hook


def _run_cylinder(cfg: SimulationConfig) -> int:
    t0 = time.perf_counter()
    out = Path(cfg.outdir)
    mesh = _load_cylinder_mesh(cfg)
    result = run_cylinder_study(
        mesh, T=cfg.T, nu=cfg.nu, deltas=cfg.perturbation.magnitudes,
        dt0=cfg.dt0, eps=cfg.eps, cfl_form=cfg.cfl_form,
        cfl_constant=cfg.cfl_constant, dt_min=cfg.dt_min,
        threads=cfg.threads,
        on_ensemble_accept=_snapshot_hook(out, cfg.snapshot_every))
    write_stats_csv(out / "stats.csv", result.stats_rows)
    write_spread_csv(out / "spread.csv", result.spread_rows)
    write_ledger_csv(out / "ledger.csv", result.ledgers)

    horizon = predictability_horizon(result.spread_rows, "1", 1.0)
    runs = result.runs
    meta = _common_metadata(cfg, time.perf_counter() - t0)
    meta.update({
        "lc": cfg.lc, "nu": cfg.nu, "T": cfg.T,
        "dt0": result.dt0, "eps": result.eps,
        "deltas": list(cfg.perturbation.magnitudes),
        "accepted": {k: r.n_accepted for k, r in runs.items()},
        "halvings": {k: r.n_halvings for k, r in runs.items()},
        "penalty_residual_max": max(r.penalty_max for r in runs.values()),
        "ledger_holds": {k: led.holds()
                         for k, led in result.ledgers.items()},
        "horizon_member1": horizon,
        "outputs": ["stats.csv", "spread.csv", "ledger.csv"],
    })
    write_run_json(out / "run.json", meta)

    last = [r for r in result.stats_rows if r[2] == "ref"][-1]
    print(f"reference kinetic energy at t = {last[0]:.4f}: {last[3].ke:.6f}")
    if horizon is not None:
        print(f"member 1 relative deviation reached 1 at t = {horizon:.4f}")
    print(f"wrote stats.csv spread.csv ledger.csv run.json to {out}")
    return 0


def _custom_initials(cfg: SimulationConfig, space, deltas):
    base = interpolate(space, solenoidal_patch, "velocity").coefficients
    kind = cfg.perturbation.kind if cfg.perturbation else "multiplicative-ic"
    if kind == "multiplicative-ic":
        return [(1.0 + d) * base for d in deltas]
    if kind == "bump-ic":
        return [bump_initial(space, d).coefficients for d in deltas]
    return [base.copy() for _ in deltas]  # forcing-scale: shared start


def _custom_forcings(cfg: SimulationConfig, deltas):
    if cfg.forcing == "none":
        return None
    kind = cfg.perturbation.kind if cfg.perturbation else "multiplicative-ic"
    if kind == "forcing-scale":
        return [(lambda x, y, t, a=1.0 + d: tuple(
            a * c for c in offset_cylinder_forcing(x, y, t)))
            for d in deltas]
    return [offset_cylinder_forcing] * len(deltas)


def _run_custom(cfg: SimulationConfig) -> int:
    t0 = time.perf_counter()
    out = Path(cfg.outdir)
    m = cfg.mesh_m if cfg.mesh_m is not None else 16
    mesh = generate_unit_square(m)
    space = build_space(mesh)
    ops = assemble_static(space)
    h = 1.0 / m
    dt0 = cfg.dt0 if cfg.dt0 is not None else h / 10.0
    eps = cfg.eps if cfg.eps is not None else dt0

    if cfg.perturbation is not None:
        deltas = monte_carlo_draws(cfg.perturbation, cfg.members)
    else:
        deltas = np.zeros(cfg.members)
    ics = _custom_initials(cfg, space, deltas)
    forcings = _custom_forcings(cfg, deltas)

    state = make_ensemble(space, ics, t=0.0, dt=dt0, eps=eps)
    stats_rows = []

    def record(st, dt_used):
        for j, member in enumerate(st.members):
            stats_rows.append((st.t, dt_used, str(j + 1),
                               flow_statistics(member.velocity, cfg.nu, ops)))
        stats_rows.append((st.t, dt_used, "mean",
                           flow_statistics(ensemble_mean(st), cfg.nu, ops)))

    record(state, dt0)
    snapshot = _snapshot_hook(out, cfg.snapshot_every)

    def on_accept(st, dt_used, result):
        record(st, dt_used)
        if snapshot is not None:
            snapshot(st, dt_used, result)

    run = run_adaptive(state, space, ops, cfg.nu, cfg.T,
                       CflConfig(cfg.cfl_form, cfg.cfl_constant, h),
                       forcings=forcings, bcs=None, dt_min=cfg.dt_min,
                       on_accept=on_accept, threads=cfg.threads)

    write_stats_csv(out / "stats.csv", stats_rows)
    write_ledger_csv(out / "ledger.csv", {"custom": run.ledger})
    meta = _common_metadata(cfg, time.perf_counter() - t0)
    meta.update({
        "m": m, "dt0": dt0, "eps": eps, "deltas": [float(d) for d in deltas],
        "accepted": run.n_accepted, "halvings": run.n_halvings,
        "penalty_residual_max": run.penalty_max,
        "ledger_holds": run.ledger.holds(),
        "outputs": ["stats.csv", "ledger.csv"],
    })
    write_run_json(out / "run.json", meta)
    print(f"accepted {run.n_accepted} steps ({run.n_halvings} halvings), "
          f"final t = {run.state.t:.6f}")
    print(f"wrote stats.csv ledger.csv run.json to {out}")
    return 0


def _cmd_run(args) -> int:
    text = Path(args.config).read_text()
    cfg = parse_config(text)
    if args.outdir is not None:
        cfg = replace(cfg, outdir=args.outdir)
    if cfg.experiment == "converge":
        if cfg.perturbation is None or cfg.perturbation.magnitudes is None:
            raise ConfigError("config key perturbation.magnitudes: the "
                              "refinement study needs explicit magnitudes")
        if not cfg.levels:
            raise ConfigError("config key mesh.levels: required for the "
                              "refinement study")
        return _run_converge(cfg)
    if cfg.experiment == "cylinder":
        if cfg.perturbation is None or cfg.perturbation.magnitudes is None:
            raise ConfigError("config key perturbation.magnitudes: the "
                              "offset-circle study needs explicit magnitudes")
        if cfg.lc is None and cfg.mesh_file is None:
            raise ConfigError("config key mesh.lc: required (or give "
                              "mesh.file)")
        return _run_cylinder(cfg)
    return _run_custom(cfg)


def _cmd_check_mesh(args) -> int:
    mesh = load_gmsh(args.mesh)
    q = mesh_quality(mesh)
    print(f"nodes: {mesh.n_nodes}")
    print(f"triangles: {mesh.n_triangles}")
    print(f"edges: {mesh.n_edges}")
    print(f"boundary edges: {len(mesh.boundary_edges)}")
    tag_desc = ", ".join(
        f"{tag}: {np.count_nonzero(mesh.boundary_tags == tag)} edges"
        for tag in sorted(set(mesh.boundary_tags.tolist())))
    print(f"boundary tags: {tag_desc}")
    print(f"h_max: {q.h_max:.6g}")
    print(f"min angle: {q.min_angle_deg:.4g} deg")
    print(f"min area: {q.min_area:.6g}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "version":
            print(f"penflow {penflow.__version__}")
            return 0
        if args.command == "check-mesh":
            return _cmd_check_mesh(args)
        if args.command == "converge":
            cfg = default_convergence_config(
                profile=args.profile, levels=args.levels,
                threads=args.threads, mode=args.mode, outdir=args.outdir)
            return _run_converge(cfg)
        if args.command == "cylinder":
            base = default_cylinder_config(
                profile=args.profile, threads=args.threads,
                outdir=args.outdir, mesh_file=args.mesh)
            overrides = {}
            if args.lc is not None:
                overrides["lc"] = args.lc
            if args.T is not None:
                overrides["T"] = args.T
            if args.snapshot_every:
                overrides["snapshot_every"] = args.snapshot_every
            cfg = replace(base, **overrides) if overrides else base
            return _run_cylinder(cfg)
        return _cmd_run(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename else exc
        print(f"error: file-not-found: {name}", file=sys.stderr)
        return 3
    except MeshError as exc:
        print(f"error: mesh-parse: {exc}", file=sys.stderr)
        return 3
    except TimestepUnderflowError as exc:
        print(f"error: timestep-underflow: {exc}", file=sys.stderr)
        return 3
    except SingularMatrixError as exc:
        print(f"error: singular-matrix: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
