"""Benchmark-problem oracles: manufactured vortex algebra, error metrics,
flow statistics, and smoke-scale study runs."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penflow.assembly import assemble_static
from penflow.experiments import (DEFAULT_LEVELS, FULL_LEVELS,
                                 ErrorAccumulator, convergence_rate,
                                 error_metrics, flow_statistics,
                                 forcing_residual_fd, offset_cylinder_forcing,
                                 predictability_horizon, relative_spread,
                                 run_convergence_study, run_cylinder_study,
                                 solenoidal_patch, tau_weight,
                                 taylor_green_forcing, taylor_green_pressure,
                                 taylor_green_velocity,
                                 taylor_green_velocity_gradient)
from penflow.fem import interpolate
from penflow.linalg import quadratic_norm

RNG = np.random.default_rng(7121)


# ---------------------------------------------------------------------------
# Manufactured vortex formulas
# ---------------------------------------------------------------------------


def test_vortex_rest_at_t0():
    x = RNG.uniform(0, 1, 50)
    y = RNG.uniform(0, 1, 50)
    u, v = taylor_green_velocity(x, y, 0.0)
    assert np.all(u == 0.0) and np.all(v == 0.0)
    p = taylor_green_pressure(x, y, 0.0)
    assert np.all(p == 0.0)


def test_vortex_pressure_peak():
    # cos(0) = cos(0) = 1 and sin(pi/2)^2 = 1, so p(0,0,pi/2) = 1/2
    assert taylor_green_pressure(0.0, 0.0, math.pi / 2) == pytest.approx(
        0.5, abs=1e-15)


def test_vortex_divergence_free():
    x = RNG.uniform(0, 1, 200)
    y = RNG.uniform(0, 1, 200)
    for t in (0.3, 1.0, 2.7):
        ux, _, _, vy = taylor_green_velocity_gradient(x, y, t)
        assert np.max(np.abs(ux + vy)) <= 1e-14


def test_vortex_gradient_matches_fd():
    x = RNG.uniform(0.1, 0.9, 40)
    y = RNG.uniform(0.1, 0.9, 40)
    t, s = 0.8, 1e-6
    ux, uy, vx, vy = taylor_green_velocity_gradient(x, y, t)
    up, _ = taylor_green_velocity(x + s, y, t)
    um, _ = taylor_green_velocity(x - s, y, t)
    assert np.max(np.abs((up - um) / (2 * s) - ux)) <= 1e-8
    _, vp = taylor_green_velocity(x, y + s, t)
    _, vm = taylor_green_velocity(x, y - s, t)
    assert np.max(np.abs((vp - vm) / (2 * s) - vy)) <= 1e-8


def test_vortex_forcing_t0_limit():
    # at t=0 the quadratic terms vanish and the time derivative survives
    x = RNG.uniform(0, 1, 60)
    y = RNG.uniform(0, 1, 60)
    f1, f2 = taylor_green_forcing(x, y, 0.0, nu=0.37)
    assert np.allclose(f1, -np.cos(x) * np.sin(y), rtol=0, atol=1e-15)
    assert np.allclose(f2, np.sin(x) * np.cos(y), rtol=0, atol=1e-15)


def test_vortex_forcing_vanishes_at_origin():
    for t in np.linspace(0.0, 3.0, 13):
        f1, f2 = taylor_green_forcing(0.0, 0.0, t, nu=1.0)
        assert abs(f1) <= 1e-12 and abs(f2) <= 1e-12


@pytest.mark.parametrize("nu,amplitude", [(1.0, 1.0), (0.01, 1.0),
                                          (1.0, 1.001), (0.02, 0.999)])
def test_forcing_residual_fd(nu, amplitude):
    rng = np.random.default_rng(42)
    x = rng.uniform(0, 1, 200)
    y = rng.uniform(0, 1, 200)
    t = rng.uniform(0.0, 2.0, 200)
    worst = 0.0
    for ti in np.unique(np.round(t, 3))[:20]:
        r1, r2 = forcing_residual_fd(x, y, float(ti), nu, amplitude)
        worst = max(worst, float(np.max(np.abs(r1))),
                    float(np.max(np.abs(r2))))
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------


def test_tau_weight_ramp():
    assert tau_weight(0.5) == 0.5
    assert tau_weight(2.0) == 1.0
    assert tau_weight(1.0) == 1.0


def test_convergence_rate_halving():
    assert convergence_rate(4.0, 2.0, 2.0, 1.0) == pytest.approx(1.0)


@given(p=st.floats(-3, 3), ratio=st.floats(1.2, 8.0),
       err=st.floats(1e-8, 1e2))
@settings(max_examples=60, deadline=None)
def test_convergence_rate_recovers_order(p, ratio, err):
    h1, h2 = 1.0, 1.0 / ratio
    e2 = err * (h2 / h1) ** p
    if e2 <= 0:
        return
    assert convergence_rate(err, e2, h1, h2) == pytest.approx(p, abs=1e-9)


def test_convergence_rate_rejects_bad_input():
    with pytest.raises(ValueError):
        convergence_rate(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        convergence_rate(1.0, 1.0, 2.0, 2.0)


def test_error_metrics_zero_trajectory(square8):
    z = np.zeros(square8.n_velocity)
    out = error_metrics(square8, [0.0], [z])
    assert out == {"err_L2max": 0.0, "err_H1int": 0.0,
                   "err_tau_weighted": 0.0}


def test_error_metrics_validation(square8):
    z = np.zeros(square8.n_velocity)
    with pytest.raises(ValueError):
        error_metrics(square8, [0.0, 0.1], [z])
    with pytest.raises(ValueError):
        error_metrics(square8, [], [])


def test_error_accumulator_left_endpoint_rule(square8, ops8):
    # amplitude 0 makes the exact solution vanish, so the metrics reduce
    # to norms of the supplied trajectory, checkable with the assembled
    # mass and stiffness matrices (same quadrature on both paths).
    w = interpolate(square8,
                    lambda x, y: (np.sin(np.pi * x) * np.sin(np.pi * y),
                                  0.0 * x), "velocity").coefficients
    l2 = quadratic_norm(ops8.M, w)
    h1 = quadratic_norm(ops8.K, w)
    out = error_metrics(square8, [0.0, 0.25, 0.75], [w, 2 * w, 3 * w],
                        amplitude=0.0)
    assert out["err_L2max"] == pytest.approx(3 * l2, rel=1e-12)
    assert out["err_H1int"] == pytest.approx(0.25 * h1 + 0.5 * 2 * h1,
                                             rel=1e-12)
    assert out["err_tau_weighted"] == pytest.approx(0.75 * 3 * h1, rel=1e-12)


def test_error_accumulator_requires_start(square8):
    acc = ErrorAccumulator(square8)
    with pytest.raises(RuntimeError):
        acc.accept(0.1, 0.1, np.zeros(square8.n_velocity))


# ---------------------------------------------------------------------------
# Offset-circle forcing and generic fields
# ---------------------------------------------------------------------------


def test_cylinder_forcing_values():
    assert offset_cylinder_forcing(0.0, 0.0) == (0.0, 0.0)
    f1, f2 = offset_cylinder_forcing(0.5, 0.0)
    assert (f1, f2) == pytest.approx((0.0, 1.5), abs=1e-15)
    # vanishes on the outer circle
    th = np.linspace(0, 2 * np.pi, 17)
    g1, g2 = offset_cylinder_forcing(np.cos(th), np.sin(th))
    assert np.max(np.abs(g1)) <= 1e-14 and np.max(np.abs(g2)) <= 1e-14


def test_cylinder_forcing_divergence_free():
    x = RNG.uniform(-1, 1, 300)
    y = RNG.uniform(-1, 1, 300)
    s = 1e-5
    div = ((offset_cylinder_forcing(x + s, y)[0]
            - offset_cylinder_forcing(x - s, y)[0]) / (2 * s)
           + (offset_cylinder_forcing(x, y + s)[1]
              - offset_cylinder_forcing(x, y - s)[1]) / (2 * s))
    assert np.max(np.abs(div)) <= 1e-8


def test_cylinder_forcing_accepts_time_argument():
    assert offset_cylinder_forcing(0.5, 0.0, 3.7) == pytest.approx(
        (0.0, 1.5), abs=1e-15)


def test_solenoidal_patch_divergence_and_boundary():
    x = RNG.uniform(0.05, 0.95, 300)
    y = RNG.uniform(0.05, 0.95, 300)
    s = 1e-5
    div = ((solenoidal_patch(x + s, y)[0]
            - solenoidal_patch(x - s, y)[0]) / (2 * s)
           + (solenoidal_patch(x, y + s)[1]
              - solenoidal_patch(x, y - s)[1]) / (2 * s))
    assert np.max(np.abs(div)) <= 1e-8
    edge = np.linspace(0, 1, 21)
    zero = np.zeros_like(edge)
    for bx, by in ((zero, edge), (zero + 1, edge), (edge, zero),
                   (edge, zero + 1)):
        u, v = solenoidal_patch(bx, by)
        assert np.max(np.abs(u)) == 0.0 and np.max(np.abs(v)) == 0.0


# ---------------------------------------------------------------------------
# Flow statistics and spread
# ---------------------------------------------------------------------------


def test_flow_statistics_zero(square8, ops8):
    z = interpolate(square8, lambda x, y: (0.0 * x, 0.0 * y), "velocity")
    s = flow_statistics(z, nu=1.0, ops=ops8)
    assert s.ke == 0.0 and s.enstrophy == 0.0 and s.angmom == 0.0


def test_flow_statistics_rigid_rotation(square8, ops8):
    # u = (-y, x): curl = 2, so enstrophy = 0.5 nu * 4 * |domain|;
    # angular momentum integrand is x^2 + y^2 with integral 2/3.
    field = interpolate(square8, lambda x, y: (-y, x), "velocity")
    s = flow_statistics(field, nu=1.0 / 150.0, ops=ops8)
    assert s.enstrophy == pytest.approx(0.5 * (1 / 150) * 4.0, abs=1e-8)
    assert s.angmom == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert s.ke == pytest.approx(1.0 / 3.0, abs=1e-8)


def test_flow_statistics_uniform_stream(square8, ops8):
    field = interpolate(square8, lambda x, y: (1.0 + 0.0 * x, 0.0 * y),
                        "velocity")
    s = flow_statistics(field, nu=2.0, ops=ops8)
    assert s.ke == pytest.approx(0.5, abs=1e-8)
    assert s.enstrophy == pytest.approx(0.0, abs=1e-12)
    assert s.angmom == pytest.approx(0.5, abs=1e-8)


def test_flow_statistics_rejects_pressure(square8, ops8):
    p = interpolate(square8, lambda x, y: x, "pressure")
    with pytest.raises(ValueError):
        flow_statistics(p, nu=1.0, ops=ops8)


def test_relative_spread_scaling(square8, ops8):
    ref = interpolate(square8, lambda x, y: (x * y, x - y),
                      "velocity").coefficients
    assert relative_spread(1.1 * ref, ref, ops8.M) == pytest.approx(
        0.1, rel=1e-12)
    assert relative_spread(ref, ref, ops8.M) == 0.0
    assert math.isnan(relative_spread(ref, 0.0 * ref, ops8.M))


def test_predictability_horizon():
    rows = [(0.0, "1", float("nan")), (0.5, "1", 0.2), (1.0, "1", 0.6),
            (1.5, "1", 1.3), (1.5, "mean", 0.4)]
    assert predictability_horizon(rows, "1") == 1.5
    assert predictability_horizon(rows, "1", threshold=0.5) == 1.0
    assert predictability_horizon(rows, "mean") is None
    assert predictability_horizon(rows, "2") is None


# ---------------------------------------------------------------------------
# Study drivers at smoke scale
# ---------------------------------------------------------------------------


def test_default_levels():
    assert DEFAULT_LEVELS == (27, 41, 61)
    assert FULL_LEVELS == (27, 41, 61, 91, 137)


@pytest.fixture(scope="module")
def smoke_convergence():
    return run_convergence_study(levels=(6, 9), T=0.25, nu=1.0,
                                 deltas=(1e-3, -1e-3))


def test_convergence_smoke_structure(smoke_convergence):
    res = smoke_convergence
    assert [lv.m for lv in res.levels] == [6, 9]
    assert res.mode == "consistent"
    rows = res.rows()
    assert len(rows) == 4
    assert [r.member for r in rows] == [1, 1, 2, 2]
    assert rows[0].rate_l2 is None and rows[1].rate_l2 is not None
    assert rows[0].h == pytest.approx(1 / 6) and rows[0].dt == pytest.approx(
        1 / 60)
    for r in rows:
        assert r.err_l2max > 0 and r.err_h1int > 0 and r.err_tau > 0


def test_convergence_smoke_baseline_below_solver(smoke_convergence):
    # interpolating the exact solution can only do better than solving
    for lv in smoke_convergence.levels:
        for met, base in zip(lv.member_metrics, lv.baseline_metrics):
            assert base["err_L2max"] < met["err_L2max"]
            assert base["err_H1int"] < met["err_H1int"]
            assert base["err_tau_weighted"] < met["err_tau_weighted"]


def test_convergence_smoke_errors_shrink(smoke_convergence):
    coarse, fine = smoke_convergence.levels
    for j in range(2):
        assert fine.member_metrics[j]["err_L2max"] < \
            coarse.member_metrics[j]["err_L2max"]


def test_convergence_ic_only_degenerate():
    res = run_convergence_study(levels=(6,), T=0.1, nu=1.0,
                                deltas=(0.0, 0.0), mode="ic_only")
    a, b = res.levels[0].member_metrics
    assert a == b


def test_convergence_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        run_convergence_study(levels=(6,), T=0.1, mode="surprise")


@pytest.fixture(scope="module")
def smoke_cylinder(cylinder_mesh_path):
    from penflow.mesh import load_gmsh
    mesh = load_gmsh(cylinder_mesh_path, h_char=0.1)
    return run_cylinder_study(mesh, T=0.2, nu=1.0 / 150.0,
                              deltas=(0.1, -0.1))


def test_cylinder_smoke_labels_and_times(smoke_cylinder):
    res = smoke_cylinder
    assert res.dt0 == pytest.approx(0.01) and res.eps == pytest.approx(0.01)
    t0_labels = [r[2] for r in res.stats_rows if r[0] == 0.0]
    assert t0_labels == ["1", "2", "mean", "ref"]
    times = sorted({r[0] for r in res.stats_rows})
    assert times[0] == 0.0 and times[-1] == pytest.approx(0.2, rel=1e-9)
    # fixed dt0 should never need halving at this viscosity and horizon
    assert res.runs["ensemble"].n_halvings == 0
    assert res.runs["ref"].n_halvings == 0


def test_cylinder_smoke_spread_rows(smoke_cylinder):
    res = smoke_cylinder
    at0 = [r for r in res.spread_rows if r[0] == 0.0]
    assert len(at0) == 3 and all(math.isnan(r[2]) for r in at0)
    later = [r for r in res.spread_rows if r[0] > 0.0]
    assert later and all(np.isfinite(r[2]) and r[2] >= 0.0 for r in later)
    # mean deviation never exceeds the worst member at the same time
    by_t = {}
    for t, lab, rel in later:
        by_t.setdefault(t, {})[lab] = rel
    for t, row in by_t.items():
        members = [v for k, v in row.items() if k != "mean"]
        assert row["mean"] <= max(members) + 1e-15


def test_cylinder_smoke_ledgers_hold(smoke_cylinder):
    assert smoke_cylinder.ledgers["ensemble"].holds(rel_slack=1e-9)
    assert smoke_cylinder.ledgers["ref"].holds(rel_slack=1e-9)
