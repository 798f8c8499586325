"""Shared-matrix ensemble time stepping with adaptive step control.

One backward-Euler step advances all J realizations at once: the
implicit convection is linearized around the ensemble mean, so the
coupled coefficient matrix is identical for every member and is
factorized exactly once per step. The deviation of each member from the
mean enters explicitly through a lagged fluctuation term on the
right-hand side.

After each trial step the fluctuation-gradient stability indicator is
evaluated; if it exceeds its threshold the step is discarded and
retried with half the timestep. The step size never grows back unless
explicitly enabled.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from penflow.assembly import (OperatorSet, StepMatrix, assemble_convection,
                              assemble_forcing, build_step_matrix,
                              constrain_rhs)
from penflow.fem import DiscreteField, TaylorHoodSpace
from penflow.linalg import (Factorization, discrete_dual_norm, factorize,
                            quadratic_norm, solve, solve_multi)


class TimestepUnderflowError(RuntimeError):
    """Adaptive halving pushed dt below the configured minimum."""


@dataclass(frozen=True)
class MemberState:
    velocity: DiscreteField
    pressure: DiscreteField


@dataclass(frozen=True)
class EnsembleState:
    """All realizations at one time level, plus stepping parameters.

    ``eps`` is the single penalty parameter shared by every member.
    """

    members: tuple[MemberState, ...]
    t: float
    dt: float
    eps: float
    step_index: int = 0

    @property
    def n_members(self) -> int:
        return len(self.members)

    def velocities(self) -> list[np.ndarray]:
        return [m.velocity.coefficients for m in self.members]


def make_ensemble(space: TaylorHoodSpace, velocities, t: float, dt: float,
                  eps: float) -> EnsembleState:
    """Wrap velocity coefficient vectors (zero initial pressure)."""
    members = tuple(
        MemberState(velocity=DiscreteField(space, "velocity",
                                           np.asarray(v, dtype=np.float64)),
                    pressure=DiscreteField(space, "pressure",
                                           np.zeros(space.n_pressure)))
        for v in velocities)
    if not members:
        raise ValueError("ensemble needs at least one member")
    return EnsembleState(members=members, t=t, dt=dt, eps=eps)


def ensemble_mean(state: EnsembleState) -> DiscreteField:
    space = state.members[0].velocity.space
    acc = np.zeros(space.n_velocity)
    for m in state.members:
        acc += m.velocity.coefficients
    return DiscreteField(space, "velocity", acc / state.n_members)


@dataclass(frozen=True)
class StepResult:
    state: EnsembleState
    step_matrix: StepMatrix
    forcing_loads: list[np.ndarray]
    penalty_residuals: list[float]


def _penalty_residual(ops: OperatorSet, u: np.ndarray, p: np.ndarray,
                      eps: float) -> float:
    """Relative residual of the discrete continuity identity
    ``eps*Mp p + B u = 0`` (scaled by the sizes of its two terms)."""
    lhs = eps * (ops.Mp @ p)
    rhs = ops.B @ u
    scale = np.linalg.norm(lhs) + np.linalg.norm(rhs)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(lhs + rhs) / scale)


def step(state: EnsembleState, space: TaylorHoodSpace, ops: OperatorSet,
         nu: float, forcings: Sequence[Callable] | None = None,
         bcs: Sequence[Callable | None] | None = None,
         pressure_fact: Factorization | None = None,
         threads: int = 1) -> StepResult:
    """Advance every member from t to t + dt with one shared matrix.

    ``forcings`` is one callable ``f(x, y, t) -> (fx, fy)`` per member
    (or None for no forcing); ``bcs`` one Dirichlet callable
    ``g(x, y, t) -> (gx, gy)`` per member (None entries mean
    homogeneous). Boundary data and forcing are evaluated at the new
    time level.

    The pressure is recovered from the velocity through its defining
    equation (pressure-mass solve) after the coupled solve, so the
    discrete continuity identity holds to machine precision regardless
    of the coupled system's conditioning. ``pressure_fact`` may carry a
    prefactorized pressure mass matrix; it is factorized here when
    absent.
    """
    J = state.n_members
    if forcings is not None and len(forcings) != J:
        raise ValueError("one forcing per member required")
    if bcs is not None and len(bcs) != J:
        raise ValueError("one boundary condition per member required")

    mean = ensemble_mean(state)
    sm = build_step_matrix(space, ops, mean, state.dt, nu, state.eps)
    fact = factorize(sm.matrix, created_at_step=state.step_index)
    if pressure_fact is None:
        pressure_fact = factorize(ops.Mp.tocsc())

    t_new = state.t + state.dt
    n_v, n_p = space.n_velocity, space.n_pressure
    constrained = sm.constrained
    bd_coords = space.velocity_dof_coords()[constrained]
    bd_comp = constrained % 2

    def member_rhs(j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        u_old = state.members[j].velocity
        fluct = DiscreteField(space, "velocity",
                              u_old.coefficients - mean.coefficients)
        rhs_v = (1.0 / state.dt) * (ops.M @ u_old.coefficients)
        rhs_v -= assemble_convection(space, fluct) @ u_old.coefficients
        if forcings is not None and forcings[j] is not None:
            load = assemble_forcing(space, forcings[j], t_new)
        else:
            load = np.zeros(n_v)
        rhs = np.concatenate([rhs_v + load, np.zeros(n_p)])
        if bcs is not None and bcs[j] is not None:
            gx, gy = bcs[j](bd_coords[:, 0], bd_coords[:, 1], t_new)
            values = np.where(bd_comp == 0,
                              np.broadcast_to(gx, constrained.shape),
                              np.broadcast_to(gy, constrained.shape))
        else:
            values = np.zeros(len(constrained))
        return constrain_rhs(rhs, sm.bc_cols, constrained, values), load, values

    if threads > 1 and J > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            prepared = list(pool.map(member_rhs, range(J)))
    else:
        prepared = [member_rhs(j) for j in range(J)]

    solutions = solve_multi(fact, [rhs for rhs, _, _ in prepared])

    new_members = []
    residuals = []
    for j, x in enumerate(solutions):
        u_new = x[:n_v]
        p_new = solve(pressure_fact, -(ops.B @ u_new) / state.eps)
        new_members.append(MemberState(
            velocity=DiscreteField(space, "velocity", u_new),
            pressure=DiscreteField(space, "pressure", p_new)))
        residuals.append(_penalty_residual(ops, u_new, p_new, state.eps))

    new_state = EnsembleState(members=tuple(new_members), t=t_new,
                              dt=state.dt, eps=state.eps,
                              step_index=state.step_index + 1)
    return StepResult(state=new_state, step_matrix=sm,
                      forcing_loads=[load for _, load, _ in prepared],
                      penalty_residuals=residuals)


# ---------------------------------------------------------------------------
# Stability indicator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CflConfig:
    """Fluctuation-gradient step-size condition.

    ``form`` selects the scaling: "theoretical" checks
    ``constant * dt / (nu * h) * |grad(u_j - mean)|^2 <= 1``;
    "experimental" checks ``dt / h * |grad(u_j - mean)|^2 <=
    constant * nu`` (the threshold reads constant / Re with Re = 1/nu).
    """

    form: str
    constant: float
    h: float

    def __post_init__(self):
        if self.form not in ("theoretical", "experimental"):
            raise ValueError(f"unknown stability indicator form {self.form!r}")
        if not self.constant > 0 or not self.h > 0:
            raise ValueError("stability constant and h must be positive")


@dataclass(frozen=True)
class CflReport:
    values: np.ndarray       # per-member indicator value
    threshold: float
    passed: bool


def cfl_indicator(state: EnsembleState, ops: OperatorSet, nu: float,
                  cfl: CflConfig) -> CflReport:
    """Evaluate the per-member stability indicator for the state's dt."""
    mean = ensemble_mean(state)
    grads_sq = np.array([
        quadratic_norm(ops.K, m.velocity.coefficients - mean.coefficients) ** 2
        for m in state.members])
    if cfl.form == "theoretical":
        values = cfl.constant * state.dt / (nu * cfl.h) * grads_sq
        threshold = 1.0
    else:
        values = state.dt / cfl.h * grads_sq
        threshold = cfl.constant * nu
    return CflReport(values=values, threshold=threshold,
                     passed=bool(values.max() <= threshold))


# ---------------------------------------------------------------------------
# Energy ledger
# ---------------------------------------------------------------------------


@dataclass
class LedgerRow:
    t: float
    member: int
    lhs: float
    rhs: float

    def holds(self, rel_slack: float = 1e-9) -> bool:
        return self.lhs <= self.rhs + rel_slack * max(1.0, abs(self.rhs),
                                                      abs(self.lhs))


class EnergyLedger:
    """Running per-member stability budget for the implicit scheme.

    After each accepted step the ledger updates, per member,

    ``lhs = 0.5|u^N|^2 + 0.25*sum|u^{n+1}-u^n|^2 + (nu*dt/4)|grad u^N|^2
    + sum (nu*dt_n/4)|grad u^{n+1}|^2 + sum dt_n*eps*|p^{n+1}|^2``

    ``rhs = sum (dt_n / 2nu)|f^{n+1}|_{-1}^2 + 0.5|u^0|^2
    + (nu*dt_0/4)|grad u^0|^2``

    where the divergence-projection term is evaluated through the exact
    discrete identity ``|P(div u)| = eps * |p|`` (the pressure equation),
    and the dual norm of the forcing uses a stiffness solve on the
    unconstrained dofs. The scheme guarantees lhs <= rhs for homogeneous
    Dirichlet data; the ledger records both sides so violations are
    observable rather than fatal.
    """

    def __init__(self, space: TaylorHoodSpace, ops: OperatorSet, nu: float,
                 eps: float):
        self.nu = nu
        self.eps = eps
        self.ops = ops
        free = np.flatnonzero(~space.dirichlet_mask)
        self._free = free
        K_ff = ops.K[free][:, free].tocsc()
        self._stiff_fact: Factorization = factorize(K_ff)
        self.rows: list[LedgerRow] = []
        self._started = False

    def start(self, state: EnsembleState) -> None:
        J = state.n_members
        self._inc = np.zeros(J)
        self._grad_sum = np.zeros(J)
        self._pen_sum = np.zeros(J)
        self._dual_sum = np.zeros(J)
        self._init = np.zeros(J)
        for j, m in enumerate(state.members):
            u0 = m.velocity.coefficients
            self._init[j] = (0.5 * quadratic_norm(self.ops.M, u0) ** 2
                             + 0.25 * self.nu * state.dt
                             * quadratic_norm(self.ops.K, u0) ** 2)
        self._started = True

    def update(self, prev: EnsembleState, new: EnsembleState, dt: float,
               forcing_loads: Sequence[np.ndarray]) -> None:
        if not self._started:
            raise RuntimeError("call start() before update()")
        for j, (m_old, m_new) in enumerate(zip(prev.members, new.members)):
            u_old = m_old.velocity.coefficients
            u_new = m_new.velocity.coefficients
            p_new = m_new.pressure.coefficients
            self._inc[j] += quadratic_norm(self.ops.M, u_new - u_old) ** 2
            grad_new_sq = quadratic_norm(self.ops.K, u_new) ** 2
            self._grad_sum[j] += dt * grad_new_sq
            self._pen_sum[j] += (dt * self.eps
                                 * quadratic_norm(self.ops.Mp, p_new) ** 2)
            dual = discrete_dual_norm(forcing_loads[j][self._free],
                                      self._stiff_fact)
            self._dual_sum[j] += dt / (2.0 * self.nu) * dual ** 2
            lhs = (0.5 * quadratic_norm(self.ops.M, u_new) ** 2
                   + 0.25 * self._inc[j]
                   + 0.25 * self.nu * dt * grad_new_sq
                   + 0.25 * self.nu * self._grad_sum[j]
                   + self._pen_sum[j])
            rhs = self._dual_sum[j] + self._init[j]
            self.rows.append(LedgerRow(t=new.t, member=j, lhs=lhs, rhs=rhs))

    def holds(self, rel_slack: float = 1e-9) -> bool:
        return all(r.holds(rel_slack) for r in self.rows)

    def violations(self, rel_slack: float = 1e-9) -> list[LedgerRow]:
        return [r for r in self.rows if not r.holds(rel_slack)]


def record_energy_ledger(states: Sequence[EnsembleState],
                         forcing_loads_seq: Sequence[Sequence[np.ndarray]],
                         space: TaylorHoodSpace, ops: OperatorSet,
                         nu: float) -> EnergyLedger:
    """Replay a stored trajectory through the ledger (test helper).

    ``states`` holds N+1 successive ensemble states;
    ``forcing_loads_seq[n]`` the per-member load vectors used for the
    step from states[n] to states[n+1].
    """
    if len(states) < 1:
        raise ValueError("need at least the initial state")
    if len(forcing_loads_seq) != len(states) - 1:
        raise ValueError("one forcing-load list per transition required")
    ledger = EnergyLedger(space, ops, nu=nu, eps=states[0].eps)
    ledger.start(states[0])
    for prev, new, loads in zip(states, states[1:], forcing_loads_seq):
        ledger.update(prev, new, new.t - prev.t, loads)
    return ledger


# ---------------------------------------------------------------------------
# Adaptive driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimestepEvent:
    step_index: int
    t_before: float
    dt: float
    cfl_max: float
    accepted: bool


@dataclass
class RunResult:
    state: EnsembleState
    events: list[TimestepEvent] = field(default_factory=list)
    ledger: EnergyLedger | None = None
    penalty_max: float = 0.0
    n_accepted: int = 0
    n_halvings: int = 0

    def accepted_times(self) -> list[float]:
        return [e.t_before + e.dt for e in self.events if e.accepted]


def run_adaptive(state: EnsembleState, space: TaylorHoodSpace,
                 ops: OperatorSet, nu: float, T: float, cfl: CflConfig,
                 forcings: Sequence[Callable] | None = None,
                 bcs: Sequence[Callable | None] | None = None,
                 dt_min: float | None = None,
                 allow_regrowth: bool = False,
                 track_energy: bool = True,
                 on_accept: Callable | None = None,
                 threads: int = 1) -> RunResult:
    """March the ensemble to time T with halve-on-violation control.

    Each trial step is checked a posteriori: if any member's
    fluctuation-gradient indicator exceeds the threshold, the computed
    step is discarded and repeated with dt/2. Below ``dt_min``
    (default: initial dt * 2**-20) the run aborts with
    :class:`TimestepUnderflowError`. ``on_accept(new_state, dt_used,
    step_result)`` runs after every accepted step.

    ``allow_regrowth`` keeps step-size regrowth available but off by
    default; when enabled, dt doubles back toward the initial dt after
    10 consecutive accepted steps.
    """
    if not T > state.t:
        raise ValueError("final time must exceed the state's current time")
    dt0 = state.dt
    if dt_min is None:
        dt_min = dt0 * 2.0 ** -20
    pressure_fact = factorize(ops.Mp.tocsc())

    result = RunResult(state=state)
    ledger = None
    if track_energy:
        ledger = EnergyLedger(space, ops, nu=nu, eps=state.eps)
        ledger.start(state)
        result.ledger = ledger

    streak = 0
    while state.t < T - 1e-12:
        if state.dt < dt_min:
            raise TimestepUnderflowError(
                f"dt {state.dt:.3e} fell below dt_min {dt_min:.3e} "
                f"at t = {state.t:.6f}")
        trial = step(state, space, ops, nu, forcings=forcings, bcs=bcs,
                     pressure_fact=pressure_fact, threads=threads)
        report = cfl_indicator(trial.state, ops, nu, cfl)
        result.events.append(TimestepEvent(
            step_index=state.step_index, t_before=state.t, dt=state.dt,
            cfl_max=float(report.values.max()), accepted=report.passed))
        if report.passed:
            if ledger is not None:
                ledger.update(state, trial.state, state.dt,
                              trial.forcing_loads)
            result.penalty_max = max(result.penalty_max,
                                     max(trial.penalty_residuals))
            state = trial.state
            result.n_accepted += 1
            streak += 1
            if on_accept is not None:
                on_accept(state, trial.step_matrix.dt, trial)
            if allow_regrowth and streak >= 10 and state.dt * 2 <= dt0:
                state = replace(state, dt=state.dt * 2)
                streak = 0
        else:
            state = replace(state, dt=state.dt / 2)
            result.n_halvings += 1
            streak = 0
    result.state = state
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"PENF"
_CKPT_VERSION = 1


def save_checkpoint(path, state: EnsembleState) -> None:
    """Binary dump: versioned header, dof counts, raw coefficients."""
    space = state.members[0].velocity.space
    header = struct.pack("<4sIIIIqddd",
                         _CKPT_MAGIC, _CKPT_VERSION, state.n_members,
                         space.n_velocity, space.n_pressure,
                         state.step_index, state.t, state.dt, state.eps)
    with open(path, "wb") as fh:
        fh.write(header)
        for m in state.members:
            fh.write(np.ascontiguousarray(m.velocity.coefficients).tobytes())
            fh.write(np.ascontiguousarray(m.pressure.coefficients).tobytes())


def load_checkpoint(path, space: TaylorHoodSpace) -> EnsembleState:
    header_size = struct.calcsize("<4sIIIIqddd")
    with open(path, "rb") as fh:
        raw = fh.read(header_size)
        if len(raw) != header_size:
            raise ValueError("checkpoint file truncated")
        magic, version, J, n_v, n_p, step_index, t, dt, eps = \
            struct.unpack("<4sIIIIqddd", raw)
        if magic != _CKPT_MAGIC:
            raise ValueError("not a penflow checkpoint")
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if n_v != space.n_velocity or n_p != space.n_pressure:
            raise ValueError("checkpoint dof counts do not match the space")
        members = []
        for _ in range(J):
            u = np.frombuffer(fh.read(8 * n_v), dtype=np.float64).copy()
            p = np.frombuffer(fh.read(8 * n_p), dtype=np.float64).copy()
            if len(u) != n_v or len(p) != n_p:
                raise ValueError("checkpoint file truncated")
            members.append(MemberState(
                velocity=DiscreteField(space, "velocity", u),
                pressure=DiscreteField(space, "pressure", p)))
    return EnsembleState(members=tuple(members), t=t, dt=dt, eps=eps,
                         step_index=step_index)
