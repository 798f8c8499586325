"""Benchmark problems and their measurement machinery.

Two experiments drive the solver:

* a manufactured decaying-vortex problem on the unit square with a
  known closed-form solution, used for convergence-rate measurement;
* a forced rotational flow in the region between two internally tangent
  circles (outer radius 1 at the origin, inner radius 0.5 centered at
  (0.5, 0)), used for ensemble-spread and flow-statistics studies.

Manufactured forcing derivation note: with ``u = a*(-cos x sin y sin t,
sin x cos y sin t)`` and ``p = a/4*(cos 2x + cos 2y) sin^2 t``, each
velocity component satisfies ``Delta u = -2u``, and the convective and
pressure-gradient terms each contribute ``-1/2 sin(2x) sin^2 t`` (resp.
``sin 2y``) scaled by ``a^2`` and ``a``. Substituting into the momentum
equation gives the closed forms in :func:`taylor_green_forcing`; the
finite-difference residual check in the test suite gates the algebra.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from penflow.assembly import OperatorSet, assemble_static
from penflow.fem import (DiscreteField, TaylorHoodSpace, build_space,
                         interpolate, velocity_at_quadrature,
                         velocity_gradient_at_quadrature)
from penflow.linalg import quadratic_norm
from penflow.mesh import Mesh, generate_unit_square
from penflow.sampling import bump_initial
from penflow.stepper import (CflConfig, EnergyLedger, EnsembleState,
                             RunResult, ensemble_mean, make_ensemble,
                             run_adaptive)

DEFAULT_LEVELS = (27, 41, 61)
FULL_LEVELS = (27, 41, 61, 91, 137)


# ---------------------------------------------------------------------------
# Manufactured vortex on the unit square
# ---------------------------------------------------------------------------


def taylor_green_velocity(x, y, t, amplitude: float = 1.0):
    s = amplitude * np.sin(t)
    return (-np.cos(x) * np.sin(y) * s, np.sin(x) * np.cos(y) * s)


def taylor_green_velocity_gradient(x, y, t, amplitude: float = 1.0):
    """Returns (du/dx, du/dy, dv/dx, dv/dy)."""
    s = amplitude * np.sin(t)
    return (np.sin(x) * np.sin(y) * s, -np.cos(x) * np.cos(y) * s,
            np.cos(x) * np.cos(y) * s, -np.sin(x) * np.sin(y) * s)


def taylor_green_pressure(x, y, t, amplitude: float = 1.0):
    return amplitude * 0.25 * (np.cos(2 * x) + np.cos(2 * y)) * np.sin(t) ** 2


def taylor_green_forcing(x, y, t, nu: float, amplitude: float = 1.0):
    """Forcing that makes the scaled vortex an exact solution.

    The amplitude enters linearly through the time-derivative, viscous
    and pressure terms and quadratically through convection, hence the
    ``(a + a^2)/2`` weight on the sin(2x)/sin(2y) parts.
    """
    a = amplitude
    g = np.cos(t) + 2.0 * nu * np.sin(t)
    s2 = np.sin(t) ** 2
    mix = 0.5 * (a + a * a) * s2
    f1 = -a * np.cos(x) * np.sin(y) * g - mix * np.sin(2 * x)
    f2 = a * np.sin(x) * np.cos(y) * g - mix * np.sin(2 * y)
    return (f1, f2)


def forcing_residual_fd(x, y, t, nu: float, amplitude: float = 1.0,
                        step: float = 1e-4):
    """Momentum-equation residual of the closed-form forcing, evaluated
    with central finite differences on the exact solution.

    Returns the two residual components; both should vanish to O(step^2).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def u(xx, yy, tt):
        return np.stack(taylor_green_velocity(xx, yy, tt, amplitude))

    ut = (u(x, y, t + step) - u(x, y, t - step)) / (2 * step)
    ux = (u(x + step, y, t) - u(x - step, y, t)) / (2 * step)
    uy = (u(x, y + step, t) - u(x, y - step, t)) / (2 * step)
    lap = ((u(x + step, y, t) + u(x - step, y, t)
            + u(x, y + step, t) + u(x, y - step, t)
            - 4 * u(x, y, t)) / step ** 2)
    px = (taylor_green_pressure(x + step, y, t, amplitude)
          - taylor_green_pressure(x - step, y, t, amplitude)) / (2 * step)
    py = (taylor_green_pressure(x, y + step, t, amplitude)
          - taylor_green_pressure(x, y - step, t, amplitude)) / (2 * step)
    uu = u(x, y, t)
    conv = uu[0] * ux + uu[1] * uy
    f1, f2 = taylor_green_forcing(x, y, t, nu, amplitude)
    r1 = ut[0] + conv[0] - nu * lap[0] + px - f1
    r2 = ut[1] + conv[1] - nu * lap[1] + py - f2
    return r1, r2


# ---------------------------------------------------------------------------
# Error metrics against a known solution
# ---------------------------------------------------------------------------


def tau_weight(t: float) -> float:
    """Ramp weight min(t, 1) used for the weighted gradient error."""
    return min(t, 1.0)


class ErrorAccumulator:
    """Streaming trajectory-error metrics against an exact solution.

    Tracks ``max_t ||u - u_h||_{L2}``, the left-endpoint-rule integral
    of the gradient error (adaptive steps weighted by the dt actually
    used), and ``sup_t tau(t) ||grad(u - u_h)||``.
    """

    def __init__(self, space: TaylorHoodSpace, amplitude: float = 1.0,
                 velocity=taylor_green_velocity,
                 gradient=taylor_green_velocity_gradient):
        self.space = space
        self.amplitude = amplitude
        self._velocity = velocity
        self._gradient = gradient
        self._x = space.qpoints[..., 0]
        self._y = space.qpoints[..., 1]
        self.max_l2 = 0.0
        self.h1_integral = 0.0
        self.tau_sup = 0.0
        self._last_h1 = None

    def _errors_at(self, t: float, coeffs: np.ndarray) -> tuple[float, float]:
        w = self.space.wdet
        uh = velocity_at_quadrature(self.space, coeffs)
        ue, ve = self._velocity(self._x, self._y, t, self.amplitude)
        du = uh[..., 0] - ue
        dv = uh[..., 1] - ve
        l2 = math.sqrt(float((w * (du ** 2 + dv ** 2)).sum()))
        gh = velocity_gradient_at_quadrature(self.space, coeffs)
        uxe, uye, vxe, vye = self._gradient(self._x, self._y, t,
                                            self.amplitude)
        h1sq = (w * ((gh[..., 0, 0] - uxe) ** 2 + (gh[..., 0, 1] - uye) ** 2
                     + (gh[..., 1, 0] - vxe) ** 2
                     + (gh[..., 1, 1] - vye) ** 2)).sum()
        return l2, math.sqrt(float(h1sq))

    def start(self, t0: float, coeffs: np.ndarray) -> None:
        l2, h1 = self._errors_at(t0, coeffs)
        self.max_l2 = l2
        self.tau_sup = tau_weight(t0) * h1
        self._last_h1 = h1

    def accept(self, t_new: float, dt_used: float, coeffs: np.ndarray) -> None:
        if self._last_h1 is None:
            raise RuntimeError("call start() before accept()")
        self.h1_integral += dt_used * self._last_h1
        l2, h1 = self._errors_at(t_new, coeffs)
        self.max_l2 = max(self.max_l2, l2)
        self.tau_sup = max(self.tau_sup, tau_weight(t_new) * h1)
        self._last_h1 = h1

    def metrics(self) -> dict[str, float]:
        return {"err_L2max": self.max_l2, "err_H1int": self.h1_integral,
                "err_tau_weighted": self.tau_sup}


def error_metrics(space: TaylorHoodSpace, times, coefficient_list,
                  amplitude: float = 1.0) -> dict[str, float]:
    """Replay a stored trajectory through :class:`ErrorAccumulator`."""
    if len(times) != len(coefficient_list) or len(times) == 0:
        raise ValueError("need matching nonempty times and coefficients")
    acc = ErrorAccumulator(space, amplitude)
    acc.start(times[0], coefficient_list[0])
    for (t0, t1), coeffs in zip(zip(times, times[1:]), coefficient_list[1:]):
        acc.accept(t1, t1 - t0, coeffs)
    return acc.metrics()


def convergence_rate(err_coarse: float, err_fine: float, h_coarse: float,
                     h_fine: float) -> float:
    """Observed order  ln(e1/e2) / ln(h1/h2)."""
    if min(err_coarse, err_fine, h_coarse, h_fine) <= 0:
        raise ValueError("rates need positive errors and mesh sizes")
    if h_coarse == h_fine:
        raise ValueError("mesh sizes must differ")
    return math.log(err_coarse / err_fine) / math.log(h_coarse / h_fine)


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    member: int
    m: int
    h: float
    dt: float
    eps: float
    err_l2max: float
    err_h1int: float
    err_tau: float
    rate_l2: float | None = None
    rate_h1: float | None = None


@dataclass
class ConvergenceLevel:
    m: int
    h: float
    dt: float
    eps: float
    member_metrics: list[dict[str, float]]
    baseline_metrics: list[dict[str, float]]
    ledger: EnergyLedger
    penalty_max: float
    n_accepted: int
    n_halvings: int


@dataclass
class ConvergenceResult:
    levels: list[ConvergenceLevel]
    deltas: tuple[float, ...]
    mode: str

    def rows(self) -> list[ConvergenceRow]:
        """Member-major rows with rates between consecutive levels."""
        out: list[ConvergenceRow] = []
        for j in range(len(self.deltas)):
            prev = None
            for lv in self.levels:
                met = lv.member_metrics[j]
                rate_l2 = rate_h1 = None
                if prev is not None:
                    rate_l2 = convergence_rate(
                        prev.err_l2max, met["err_L2max"], prev.h, lv.h)
                    rate_h1 = convergence_rate(
                        prev.err_h1int, met["err_H1int"], prev.h, lv.h)
                row = ConvergenceRow(
                    member=j + 1, m=lv.m, h=lv.h, dt=lv.dt, eps=lv.eps,
                    err_l2max=met["err_L2max"], err_h1int=met["err_H1int"],
                    err_tau=met["err_tau_weighted"],
                    rate_l2=rate_l2, rate_h1=rate_h1)
                out.append(row)
                prev = row
        return out


def _convergence_level(m: int, T: float, nu: float, deltas, mode: str,
                       threads: int) -> ConvergenceLevel:
    mesh = generate_unit_square(m)
    space = build_space(mesh)
    ops = assemble_static(space)
    h = 1.0 / m
    dt = h / 10.0
    eps = dt

    if mode == "consistent":
        amplitudes = [1.0 + d for d in deltas]
    elif mode == "ic_only":
        amplitudes = [1.0 for _ in deltas]
    else:
        raise ValueError(f"unknown convergence mode {mode!r}")

    ics = []
    for d in deltas:
        base = interpolate(
            space, lambda x, y: taylor_green_velocity(x, y, 0.0), "velocity")
        ics.append((1.0 + d) * base.coefficients)
    state = make_ensemble(space, ics, t=0.0, dt=dt, eps=eps)

    forcings = [
        (lambda x, y, t, a=a: taylor_green_forcing(x, y, t, nu, amplitude=a))
        for a in amplitudes]
    bcs = [
        (lambda x, y, t, a=a: taylor_green_velocity(x, y, t, amplitude=a))
        for a in amplitudes]

    accs = [ErrorAccumulator(space, amplitude=a) for a in amplitudes]
    base_accs = [ErrorAccumulator(space, amplitude=a) for a in amplitudes]
    for acc, bacc, ic, a in zip(accs, base_accs, ics, amplitudes):
        acc.start(0.0, ic)
        interp = interpolate(
            space,
            lambda x, y, a=a: taylor_green_velocity(x, y, 0.0, amplitude=a),
            "velocity")
        bacc.start(0.0, interp.coefficients)

    def on_accept(new_state: EnsembleState, dt_used: float, _result) -> None:
        for j, member in enumerate(new_state.members):
            accs[j].accept(new_state.t, dt_used,
                           member.velocity.coefficients)
            interp = interpolate(
                space,
                lambda x, y, a=amplitudes[j]: taylor_green_velocity(
                    x, y, new_state.t, amplitude=a),
                "velocity")
            base_accs[j].accept(new_state.t, dt_used, interp.coefficients)

    run = run_adaptive(state, space, ops, nu, T,
                       CflConfig("theoretical", 1.0, h),
                       forcings=forcings, bcs=bcs,
                       on_accept=on_accept, threads=threads)

    return ConvergenceLevel(
        m=m, h=h, dt=dt, eps=eps,
        member_metrics=[acc.metrics() for acc in accs],
        baseline_metrics=[bacc.metrics() for bacc in base_accs],
        ledger=run.ledger, penalty_max=run.penalty_max,
        n_accepted=run.n_accepted, n_halvings=run.n_halvings)


def run_convergence_study(levels=DEFAULT_LEVELS, T: float = 1.0,
                          nu: float = 1.0, deltas=(1e-3, -1e-3),
                          mode: str = "consistent",
                          threads: int = 1) -> ConvergenceResult:
    """Manufactured-vortex refinement study.

    Per refinement level m: mesh 1/m, dt = h/10, eps = dt, ensemble of
    len(deltas) members. In the default "consistent" mode member j's
    problem data (initial condition, boundary values, forcing) all come
    from the vortex scaled by (1 + delta_j), so members genuinely differ
    while each retains a closed-form solution; "ic_only" perturbs only
    the (identically zero) initial condition, which reproduces the
    degenerate identical-member setup.

    Levels are independent and run as a parallel ordered map when
    ``threads > 1``.
    """
    levels = list(levels)
    if threads > 1 and len(levels) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            data = list(pool.map(
                lambda m: _convergence_level(m, T, nu, tuple(deltas), mode, 1),
                levels))
    else:
        data = [_convergence_level(m, T, nu, tuple(deltas), mode, threads)
                for m in levels]
    return ConvergenceResult(levels=data, deltas=tuple(deltas), mode=mode)


# ---------------------------------------------------------------------------
# Offset-circle flow
# ---------------------------------------------------------------------------


def offset_cylinder_forcing(x, y, t: float | None = None):
    """Divergence-free rotational body force ``4(1 - x^2 - y^2)(-y, x)``.

    Accepts and ignores a time argument so it can be passed wherever a
    time-dependent forcing is expected.
    """
    s = 4.0 * (1.0 - x ** 2 - y ** 2)
    return (-s * y, s * x)


def solenoidal_patch(x, y):
    """Divergence-free velocity supported inside the unit square;
    it and its gradient vanish on the boundary. Used as a generic
    initial condition for free-decay runs."""
    px = x * (1.0 - x)
    py = y * (1.0 - y)
    u = px ** 2 * 2.0 * py * (1.0 - 2.0 * y)
    v = -2.0 * px * (1.0 - 2.0 * x) * py ** 2
    return (u, v)


@dataclass(frozen=True)
class FlowSample:
    ke: float
    enstrophy: float
    angmom: float


def flow_statistics(field: DiscreteField, nu: float,
                    ops: OperatorSet) -> FlowSample:
    """Kinetic energy, enstrophy and |angular momentum| of a velocity.

    ke = 0.5 ||u||^2, enstrophy = 0.5 nu ||curl u||^2 with the scalar
    curl dv/dx - du/dy, angmom = | integral (x v - y u) |.
    """
    if field.kind != "velocity":
        raise ValueError("flow statistics need a velocity field")
    space = field.space
    u = field.coefficients
    ke = 0.5 * quadratic_norm(ops.M, u) ** 2
    gh = velocity_gradient_at_quadrature(space, u)
    curl = gh[..., 1, 0] - gh[..., 0, 1]
    ens = 0.5 * nu * float((space.wdet * curl ** 2).sum())
    uq = velocity_at_quadrature(space, u)
    x = space.qpoints[..., 0]
    y = space.qpoints[..., 1]
    am = float((space.wdet * (x * uq[..., 1] - y * uq[..., 0])).sum())
    return FlowSample(ke=ke, enstrophy=ens, angmom=abs(am))


def relative_spread(u: np.ndarray, ref: np.ndarray, M) -> float:
    """||u - ref|| / ||ref|| in the mass-matrix norm; NaN when the
    reference is zero (undefined, not an error)."""
    denom = quadratic_norm(M, ref)
    if denom == 0.0:
        return float("nan")
    return quadratic_norm(M, u - ref) / denom


@dataclass
class CylinderResult:
    stats_rows: list[tuple]    # (t, dt, label, FlowSample)
    spread_rows: list[tuple]   # (t, label, rel_err)
    ledgers: dict[str, EnergyLedger]
    runs: dict[str, RunResult]
    dt0: float
    eps: float


def _label_rank(label: str) -> tuple:
    if label.isdigit():
        return (0, int(label))
    return (1, {"mean": 0, "ref": 1}.get(label, 2))


def run_cylinder_study(mesh: Mesh, T: float, nu: float = 1.0 / 150.0,
                       deltas=(0.1, -0.1), dt0: float | None = None,
                       eps: float | None = None,
                       cfl_form: str = "experimental",
                       cfl_constant: float = 1200.0,
                       dt_min: float | None = None, threads: int = 1,
                       on_ensemble_accept=None) -> CylinderResult:
    """Forced flow between the offset circles.

    Runs an unperturbed single-member reference plus an ensemble whose
    members start from bump perturbations scaled by ``deltas``; records
    flow statistics for every member, the ensemble mean and the
    reference, and the relative L2 deviation of each member (and the
    mean) from the reference at matching times.
    """
    space = build_space(mesh)
    ops = assemble_static(space)
    h = mesh.h_char if mesh.h_char is not None else None
    if h is None:
        from penflow.mesh import mesh_quality
        h = mesh_quality(mesh).h_max
    if dt0 is None:
        dt0 = h / 10.0
    if eps is None:
        eps = dt0
    cfl = CflConfig(cfl_form, cfl_constant, h)
    forcing = offset_cylinder_forcing

    stats_rows: list[tuple] = []
    ref_fields: dict[float, np.ndarray] = {}

    def ref_accept(new_state, dt_used, _result):
        u = new_state.members[0].velocity.coefficients
        ref_fields[new_state.t] = u.copy()
        stats_rows.append((new_state.t, dt_used, "ref",
                           flow_statistics(new_state.members[0].velocity,
                                           nu, ops)))

    ref_state = make_ensemble(space, [np.zeros(space.n_velocity)],
                              t=0.0, dt=dt0, eps=eps)
    ref_fields[0.0] = np.zeros(space.n_velocity)
    stats_rows.append((0.0, dt0, "ref",
                       flow_statistics(ref_state.members[0].velocity, nu,
                                       ops)))
    ref_run = run_adaptive(ref_state, space, ops, nu, T, cfl,
                           forcings=[forcing], bcs=None, dt_min=dt_min,
                           on_accept=ref_accept, threads=threads)

    spread_rows: list[tuple] = []

    def lookup_ref(t: float) -> np.ndarray | None:
        hit = ref_fields.get(t)
        if hit is not None:
            return hit
        for tr, u in ref_fields.items():
            if abs(tr - t) <= 1e-12:
                return u
        return None

    def ensemble_record(state, dt_used):
        mean = ensemble_mean(state)
        for j, member in enumerate(state.members):
            stats_rows.append((state.t, dt_used, str(j + 1),
                               flow_statistics(member.velocity, nu, ops)))
        stats_rows.append((state.t, dt_used, "mean",
                           flow_statistics(mean, nu, ops)))
        ref = lookup_ref(state.t)
        if ref is not None:
            for j, member in enumerate(state.members):
                spread_rows.append((state.t, str(j + 1), relative_spread(
                    member.velocity.coefficients, ref, ops.M)))
            spread_rows.append((state.t, "mean", relative_spread(
                mean.coefficients, ref, ops.M)))

    ics = [bump_initial(space, d).coefficients for d in deltas]
    ens_state = make_ensemble(space, ics, t=0.0, dt=dt0, eps=eps)
    ensemble_record(ens_state, dt0)

    def ens_accept(new_state, dt_used, result):
        ensemble_record(new_state, dt_used)
        if on_ensemble_accept is not None:
            on_ensemble_accept(new_state, dt_used, result)

    ens_run = run_adaptive(ens_state, space, ops, nu, T, cfl,
                           forcings=[forcing] * len(deltas), bcs=None,
                           dt_min=dt_min, on_accept=ens_accept,
                           threads=threads)

    stats_rows.sort(key=lambda r: (r[0], _label_rank(r[2])))
    spread_rows.sort(key=lambda r: (r[0], _label_rank(r[1])))
    return CylinderResult(stats_rows=stats_rows, spread_rows=spread_rows,
                          ledgers={"ensemble": ens_run.ledger,
                                   "ref": ref_run.ledger},
                          runs={"ensemble": ens_run, "ref": ref_run},
                          dt0=dt0, eps=eps)


def predictability_horizon(spread_rows, label: str,
                           threshold: float = 1.0) -> float | None:
    """First time the labelled relative spread reaches the threshold."""
    for t, lab, rel in spread_rows:
        if lab == label and np.isfinite(rel) and rel >= threshold:
            return t
    return None
