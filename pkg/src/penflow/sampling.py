"""Initial-condition perturbations and ensemble statistics.

Random draws use a counter-based generator (Philox) keyed per member,
so member j's stream is identical no matter how many members exist or
in which order they are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from penflow.assembly import assemble_static
from penflow.fem import DiscreteField, TaylorHoodSpace, interpolate
from penflow.linalg import quadratic_norm

PERTURBATION_KINDS = ("multiplicative-ic", "bump-ic", "forcing-scale")
DISTRIBUTIONS = ("uniform", "normal")


@dataclass(frozen=True)
class PerturbationSpec:
    """How ensemble members are generated from shared data.

    Either ``magnitudes`` lists one deterministic amplitude per member,
    or ``distribution``/``scale`` describe random draws: "uniform" on
    [-scale, scale] or "normal" with standard deviation ``scale``.
    """

    kind: str = "multiplicative-ic"
    magnitudes: tuple[float, ...] | None = None
    distribution: str | None = None
    scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.magnitudes is None and self.distribution is None:
            raise ValueError("give either magnitudes or a distribution")
        if self.magnitudes is not None and self.distribution is not None:
            raise ValueError("magnitudes and distribution are exclusive")
        if self.distribution is not None:
            if self.distribution not in DISTRIBUTIONS:
                raise ValueError(
                    f"unknown distribution {self.distribution!r}")
            if self.scale is None or not self.scale >= 0:
                raise ValueError("distribution needs a nonnegative scale")
        if self.kind == "multiplicative-ic" and self.magnitudes is not None:
            for d in self.magnitudes:
                if abs(d) >= 1:
                    raise ValueError(
                        f"multiplicative perturbation needs |delta| < 1, "
                        f"got {d}")


def perturb_multiplicative(base: DiscreteField, delta: float) -> DiscreteField:
    """Scale a base field by (1 + delta), |delta| < 1."""
    if abs(delta) >= 1:
        raise ValueError(f"multiplicative perturbation needs |delta| < 1, "
                         f"got {delta}")
    return base.with_coefficients((1.0 + delta) * base.coefficients)


def bump_profile(x, y):
    """Scalar bump supported between the offset circles; vanishes on both
    boundary circles of the annular-crescent domain."""
    return (1.0 - x ** 2 - y ** 2) * (0.25 - (x - 0.5) ** 2 - y ** 2)


def bump_initial(space: TaylorHoodSpace, delta: float) -> DiscreteField:
    """Initial velocity with delta * bump applied to both components.

    The profile vanishes on the two exact circles, but boundary edge
    midpoints of the polygonal mesh sit O(h^2) off them, so the
    constrained dofs are zeroed explicitly to keep the discrete field
    no-slip.
    """
    field = interpolate(
        space, lambda x, y: (delta * bump_profile(x, y),
                             delta * bump_profile(x, y)), "velocity")
    field.coefficients[space.dirichlet_dofs()] = 0.0
    return field


def member_rng(seed: int, member: int) -> np.random.Generator:
    """Independent counter-based stream for one ensemble member."""
    key = (np.uint64(seed).item() << 64) | np.uint64(member).item()
    return np.random.Generator(np.random.Philox(key=key))


def monte_carlo_draws(spec: PerturbationSpec, n_members: int) -> np.ndarray:
    """Per-member amplitudes delta_j.

    Deterministic magnitudes are passed through (their count must match
    the ensemble size); otherwise one draw per member from
    ``spec.distribution``, each from its own keyed stream.
    """
    if n_members < 1:
        raise ValueError("ensemble size must be >= 1")
    if spec.magnitudes is not None:
        if len(spec.magnitudes) != n_members:
            raise ValueError(
                f"{len(spec.magnitudes)} magnitudes for {n_members} members")
        return np.asarray(spec.magnitudes, dtype=np.float64)
    draws = np.empty(n_members)
    for j in range(n_members):
        rng = member_rng(spec.seed, j)
        if spec.distribution == "uniform":
            draws[j] = rng.uniform(-spec.scale, spec.scale)
        else:
            draws[j] = rng.normal(0.0, spec.scale)
    return draws


@dataclass(frozen=True)
class EnsembleStats:
    mean: DiscreteField
    variance: np.ndarray   # per-dof sample variance (1/(J-1))
    spread: float          # max_j ||u_j - mean||_{L2}


def ensemble_statistics(fields: list[DiscreteField],
                        mass=None) -> EnsembleStats:
    """Mean field, per-dof sample variance and L2 spread.

    ``mass`` is the velocity mass matrix used for the L2 spread; when
    omitted it is assembled from the fields' space.
    """
    if not fields:
        raise ValueError("need at least one field")
    space = fields[0].space
    kind = fields[0].kind
    for f in fields[1:]:
        if f.space is not space or f.kind != kind:
            raise ValueError("fields must share one space and kind")
    stack = np.stack([f.coefficients for f in fields])
    mean = stack.mean(axis=0)
    J = len(fields)
    if J > 1:
        variance = stack.var(axis=0, ddof=1)
    else:
        variance = np.zeros_like(mean)
    if mass is None:
        mass = assemble_static(space).M
    spread = max(quadratic_norm(mass, f.coefficients - mean) for f in fields)
    return EnsembleStats(mean=DiscreteField(space, kind, mean),
                         variance=variance, spread=float(spread))
