"""Taylor-Hood (P2 velocity / P1 pressure) spaces on triangle meshes.

Scalar P2 nodes are numbered vertices first, then edge midpoints; the
velocity vector field interleaves the x and y components per scalar node
(dof ``2*k + c``). Pressure dofs coincide with mesh vertices. Coupled
systems order all velocity dofs first, then pressure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from penflow.mesh import Mesh, TRI_EDGES_LOCAL, boundary_scalar_nodes


@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric triangle rule in barycentric coordinates.

    Weights include the reference-triangle area, i.e. they sum to 1/2;
    an integral over a physical triangle is ``|detJ| * sum_q w_q f(x_q)``.
    """

    points: np.ndarray   # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)
    degree: int


def triangle_quadrature(degree: int) -> QuadratureRule:
    """Quadrature rule exact for polynomials up to ``degree`` (2 or 5)."""
    if degree <= 2:
        pts = np.array([[0.5, 0.5, 0.0],
                        [0.0, 0.5, 0.5],
                        [0.5, 0.0, 0.5]])
        w = np.full(3, 1.0 / 6.0)
        return QuadratureRule(pts, w, 2)
    if degree <= 5:
        s15 = np.sqrt(15.0)
        a = (6.0 + s15) / 21.0
        b = (6.0 - s15) / 21.0
        wa = (155.0 + s15) / 2400.0
        wb = (155.0 - s15) / 2400.0
        pts = [np.full(3, 1.0 / 3.0)]
        wts = [9.0 / 80.0]
        for val, wt in ((a, wa), (b, wb)):
            rest = 1.0 - 2.0 * val
            pts += [np.array([rest, val, val]),
                    np.array([val, rest, val]),
                    np.array([val, val, rest])]
            wts += [wt, wt, wt]
        return QuadratureRule(np.array(pts), np.array(wts), 5)
    raise ValueError(f"no rule of degree {degree} available (max 5)")


def _check_barycentric(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != 3:
        raise ValueError("barycentric points must have 3 components")
    if not np.allclose(points.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("barycentric coordinates must sum to 1")
    if (points < -1e-12).any() or (points > 1 + 1e-12).any():
        raise ValueError("barycentric coordinates must lie in [0, 1]")
    return points


def reference_basis(degree: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange basis values and reference gradients at barycentric points.

    Returns ``(values, grads)`` with shapes (npts, nb) and (npts, nb, 2);
    gradients are with respect to the reference coordinates (xi, eta)
    where ``lambda = (1 - xi - eta, xi, eta)``.

    P1 nodes: the 3 vertices. P2 nodes: 3 vertices then the midpoints of
    local edges (0,1), (1,2), (2,0).
    """
    pts = _check_barycentric(points)
    l0, l1, l2 = pts[:, 0], pts[:, 1], pts[:, 2]
    npts = len(pts)
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        vals = np.stack([l0, l1, l2], axis=1)
        grads = np.broadcast_to(dl, (npts, 3, 2)).copy()
        return vals, grads
    if degree == 2:
        lam = np.stack([l0, l1, l2], axis=1)
        vals = np.empty((npts, 6))
        grads = np.empty((npts, 6, 2))
        for i in range(3):
            vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
            grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * dl[i]
        for k, (a, b) in enumerate(TRI_EDGES_LOCAL):
            vals[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
            grads[:, 3 + k, :] = 4.0 * (lam[:, a][:, None] * dl[b]
                                        + lam[:, b][:, None] * dl[a])
        return vals, grads
    raise ValueError(f"unsupported polynomial degree {degree}")


@dataclass(frozen=True)
class TaylorHoodSpace:
    """P2/P1 pair on a mesh, with precomputed element tables.

    ``n_velocity = 2 * n_scalar`` interleaved velocity dofs come first in
    coupled systems, followed by ``n_pressure`` vertex dofs.
    """

    mesh: Mesh
    quadrature: QuadratureRule
    scalar_coords: np.ndarray          # (n_scalar, 2)
    element_scalar_nodes: np.ndarray   # (T, 6)
    dirichlet_scalar: np.ndarray       # (n_scalar,) bool
    phi_p2: np.ndarray                 # (nq, 6)
    phi_p1: np.ndarray                 # (nq, 3)
    grad_p2: np.ndarray                # (T, nq, 6, 2) physical
    grad_p1: np.ndarray                # (T, 3, 2) physical, constant in q
    wdet: np.ndarray                   # (T, nq) quadrature weights * |detJ|
    qpoints: np.ndarray                # (T, nq, 2) physical quad points

    @property
    def n_scalar(self) -> int:
        return self.scalar_coords.shape[0]

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_nodes

    @property
    def dirichlet_mask(self) -> np.ndarray:
        """Boolean mask over velocity dofs (both components of every
        boundary scalar node)."""
        return np.repeat(self.dirichlet_scalar, 2)

    def dirichlet_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.dirichlet_mask)

    def velocity_dof_coords(self) -> np.ndarray:
        """(n_velocity, 2) coordinates; rows 2k and 2k+1 repeat node k."""
        return np.repeat(self.scalar_coords, 2, axis=0)


def build_space(mesh: Mesh, quadrature_degree: int = 5) -> TaylorHoodSpace:
    quad = triangle_quadrature(quadrature_degree)
    phi_p2, dref_p2 = reference_basis(2, quad.points)
    phi_p1, dref_p1 = reference_basis(1, quad.points)

    scalar_coords = np.vstack([mesh.nodes, mesh.edge_midpoints()])
    element_scalar_nodes = np.hstack(
        [mesh.triangles, mesh.n_nodes + mesh.tri_edges])

    n_scalar = len(scalar_coords)
    dirichlet_scalar = np.zeros(n_scalar, dtype=bool)
    dirichlet_scalar[boundary_scalar_nodes(mesh)] = True

    p = mesh.nodes[mesh.triangles]          # (T, 3, 2)
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv_jt = np.empty_like(jac)             # J^{-T}
    inv_jt[:, 0, 0] = jac[:, 1, 1]
    inv_jt[:, 0, 1] = -jac[:, 1, 0]
    inv_jt[:, 1, 0] = -jac[:, 0, 1]
    inv_jt[:, 1, 1] = jac[:, 0, 0]
    inv_jt /= det[:, None, None]

    grad_p2 = np.einsum("eds,qis->eqid", inv_jt, dref_p2)
    grad_p1 = np.einsum("eds,is->eid", inv_jt, dref_p1[0])
    wdet = quad.weights[None, :] * np.abs(det)[:, None]
    qpoints = np.einsum("qv,evd->eqd", quad.points, p)

    return TaylorHoodSpace(
        mesh=mesh, quadrature=quad, scalar_coords=scalar_coords,
        element_scalar_nodes=element_scalar_nodes,
        dirichlet_scalar=dirichlet_scalar,
        phi_p2=phi_p2, phi_p1=phi_p1,
        grad_p2=grad_p2, grad_p1=grad_p1, wdet=wdet, qpoints=qpoints)


FieldKind = Literal["velocity", "pressure"]


@dataclass(frozen=True)
class DiscreteField:
    """Coefficient vector bound to a space.

    Velocity fields hold ``2 * n_scalar`` interleaved coefficients,
    pressure fields ``n_pressure`` vertex values.
    """

    space: TaylorHoodSpace
    kind: FieldKind
    coefficients: np.ndarray

    def __post_init__(self):
        expected = (self.space.n_velocity if self.kind == "velocity"
                    else self.space.n_pressure)
        if self.coefficients.shape != (expected,):
            raise ValueError(
                f"{self.kind} field needs {expected} coefficients, "
                f"got shape {self.coefficients.shape}")

    def with_coefficients(self, coeffs: np.ndarray) -> "DiscreteField":
        return DiscreteField(self.space, self.kind, coeffs)


def zero_field(space: TaylorHoodSpace, kind: FieldKind) -> DiscreteField:
    n = space.n_velocity if kind == "velocity" else space.n_pressure
    return DiscreteField(space, kind, np.zeros(n))


def interpolate(space: TaylorHoodSpace, f: Callable, kind: FieldKind
                ) -> DiscreteField:
    """Nodal interpolation of a vectorized callable.

    Velocity: ``f(x, y) -> (u, v)`` sampled at scalar nodes. Pressure:
    ``f(x, y) -> p`` sampled at vertices.
    """
    if kind == "velocity":
        x, y = space.scalar_coords[:, 0], space.scalar_coords[:, 1]
        u, v = f(x, y)
        coeffs = np.empty(space.n_velocity)
        coeffs[0::2] = np.broadcast_to(u, x.shape)
        coeffs[1::2] = np.broadcast_to(v, x.shape)
        return DiscreteField(space, "velocity", coeffs)
    if kind == "pressure":
        x, y = space.mesh.nodes[:, 0], space.mesh.nodes[:, 1]
        return DiscreteField(space, "pressure",
                             np.asarray(f(x, y), dtype=np.float64))
    raise ValueError(f"unknown field kind {kind!r}")


def _gather_velocity(space: TaylorHoodSpace, coeffs: np.ndarray) -> np.ndarray:
    """(T, 6, 2) per-element velocity coefficients."""
    return coeffs.reshape(-1, 2)[space.element_scalar_nodes]


def velocity_at_quadrature(space: TaylorHoodSpace, coeffs: np.ndarray
                           ) -> np.ndarray:
    """(T, nq, 2) velocity values at quadrature points."""
    return np.einsum("qi,eic->eqc", space.phi_p2,
                     _gather_velocity(space, coeffs))


def velocity_gradient_at_quadrature(space: TaylorHoodSpace, coeffs: np.ndarray
                                    ) -> np.ndarray:
    """(T, nq, 2, 2) gradients; entry [c, d] is d(u_c)/d(x_d)."""
    return np.einsum("eqid,eic->eqcd", space.grad_p2,
                     _gather_velocity(space, coeffs))


def pressure_at_quadrature(space: TaylorHoodSpace, coeffs: np.ndarray
                           ) -> np.ndarray:
    return np.einsum("qi,ei->eq", space.phi_p1,
                     coeffs[space.mesh.triangles])


def eval_field(field: DiscreteField, element: int, points
               ) -> tuple[np.ndarray, np.ndarray]:
    """Values and physical gradients at barycentric points of one element.

    Velocity: values (npts, 2), gradients (npts, 2, 2). Pressure:
    values (npts,), gradients (npts, 2).
    """
    space = field.space
    if not 0 <= element < space.mesh.n_triangles:
        raise ValueError(f"element index {element} out of range")
    pts = _check_barycentric(points)
    p = space.mesh.nodes[space.mesh.triangles[element]]
    jac = np.stack([p[1] - p[0], p[2] - p[0]], axis=1)
    inv_jt = np.linalg.inv(jac).T
    if field.kind == "velocity":
        vals, dref = reference_basis(2, pts)
        local = field.coefficients.reshape(-1, 2)[
            space.element_scalar_nodes[element]]
        values = vals @ local
        grads = np.einsum("qis,ds,ic->qcd", dref, inv_jt, local)
        return values, grads
    vals, dref = reference_basis(1, pts)
    local = field.coefficients[space.mesh.triangles[element]]
    values = vals @ local
    grads = np.einsum("qis,ds,i->qd", dref, inv_jt, local)
    return values, grads
