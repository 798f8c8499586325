"""Sparse operator assembly for the Taylor-Hood velocity/pressure pair.

All element loops are vectorized numpy contractions followed by a
COO-to-CSR scatter, which makes assembly deterministic: two calls with
identical inputs produce byte-identical CSR arrays.

Sign conventions for the coupled system (velocity dofs first, then
pressure)::

    [ M/dt + nu*K + N(mean)   -B^T   ] [u]   [rhs]
    [ B                      eps*Mp  ] [p] = [ 0 ]

where ``B`` is the positive divergence coupling ``B[q, v] =
(psi_q, div phi_v)``, so every solve satisfies ``B u + eps*Mp p = 0``
exactly (up to solver roundoff), boundary conditions included.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from penflow.fem import (DiscreteField, TaylorHoodSpace,
                         velocity_at_quadrature)


@dataclass(frozen=True)
class OperatorSet:
    """Static matrices of a space: velocity mass M and stiffness K
    (both 2n x 2n, interleaved components), divergence coupling B
    (n_pressure x 2n) and pressure mass Mp."""

    M: sp.csr_matrix
    K: sp.csr_matrix
    B: sp.csr_matrix
    Mp: sp.csr_matrix


def _scatter_scalar(space: TaylorHoodSpace, local: np.ndarray) -> sp.csr_matrix:
    """Sum (T, 6, 6) element blocks into an n_scalar x n_scalar CSR."""
    nodes = space.element_scalar_nodes
    rows = np.repeat(nodes, 6, axis=1).ravel()
    cols = np.tile(nodes, (1, 6)).ravel()
    n = space.n_scalar
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sort_indices()
    return mat


def _interleave(scalar_mat: sp.csr_matrix) -> sp.csr_matrix:
    """Apply the same scalar operator to both interleaved components."""
    mat = sp.kron(scalar_mat, sp.identity(2, format="csr"), format="csr")
    mat.sort_indices()
    return mat


def assemble_static(space: TaylorHoodSpace) -> OperatorSet:
    """Mass, stiffness, divergence and pressure-mass matrices."""
    w = space.wdet                      # (T, nq)
    phi2, phi1 = space.phi_p2, space.phi_p1

    mass_local = np.einsum("eq,qi,qj->eij", w, phi2, phi2)
    stiff_local = np.einsum("eq,eqid,eqjd->eij", w, space.grad_p2,
                            space.grad_p2)
    M = _interleave(_scatter_scalar(space, mass_local))
    K = _interleave(_scatter_scalar(space, stiff_local))

    # B[p, 2j+c] = integral psi_p * d(phi_j)/dx_c
    div_local = np.einsum("eq,qp,eqjd->epjd", w, phi1, space.grad_p2)
    prows = np.repeat(space.mesh.triangles, 12, axis=1).ravel()
    vnodes = space.element_scalar_nodes
    vcols = (2 * np.repeat(vnodes, 2, axis=1)
             + np.tile([0, 1], 6 * vnodes.shape[0]).reshape(vnodes.shape[0], 12))
    vcols = np.tile(vcols, (1, 3)).ravel()
    B = sp.coo_matrix((div_local.ravel(), (prows, vcols)),
                      shape=(space.n_pressure, space.n_velocity)).tocsr()
    B.sort_indices()

    pmass_local = np.einsum("eq,qi,qj->eij", w, phi1, phi1)
    tri = space.mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n_p = space.n_pressure
    Mp = sp.coo_matrix((pmass_local.ravel(), (rows, cols)),
                       shape=(n_p, n_p)).tocsr()
    Mp.sort_indices()
    return OperatorSet(M=M, K=K, B=B, Mp=Mp)


def assemble_convection(space: TaylorHoodSpace, wind: DiscreteField
                        ) -> sp.csr_matrix:
    """Skew-symmetrized convection matrix N(w) on velocity dofs.

    ``v2 @ N(w) @ v1`` equals the trilinear form
    ``0.5*(w . grad v1, v2) - 0.5*(w . grad v2, v1)`` for any velocity
    coefficient vectors ``v1, v2``, so N is antisymmetric by construction
    and ``v @ N(w) @ v = 0`` up to roundoff.
    """
    if wind.space is not space:
        raise ValueError("wind field belongs to a different space")
    if wind.kind != "velocity":
        raise ValueError("wind must be a velocity field")
    wq = velocity_at_quadrature(space, wind.coefficients)   # (T, nq, 2)
    conv = np.einsum("eqd,eqjd->eqj", wq, space.grad_p2)    # w . grad phi_j
    X = np.einsum("eq,qi,eqj->eij", space.wdet, space.phi_p2, conv)
    local = 0.5 * (X - X.transpose(0, 2, 1))
    return _interleave(_scatter_scalar(space, local))


def assemble_fluctuation_rhs(space: TaylorHoodSpace, fluct: DiscreteField,
                             u_old: DiscreteField) -> np.ndarray:
    """Vector with entry i equal to the skew-symmetrized trilinear form
    of (fluct, u_old, phi_i); the stepper subtracts it from the RHS."""
    if u_old.space is not space or u_old.kind != "velocity":
        raise ValueError("u_old must be a velocity field on the same space")
    return assemble_convection(space, fluct) @ u_old.coefficients


def assemble_forcing(space: TaylorHoodSpace, f, t: float) -> np.ndarray:
    """Load vector of a vectorized forcing ``f(x, y, t) -> (fx, fy)``."""
    x = space.qpoints[..., 0]
    y = space.qpoints[..., 1]
    fx, fy = f(x, y, t)
    fx = np.broadcast_to(fx, x.shape)
    fy = np.broadcast_to(fy, x.shape)
    loc_x = np.einsum("eq,qi,eq->ei", space.wdet, space.phi_p2, fx)
    loc_y = np.einsum("eq,qi,eq->ei", space.wdet, space.phi_p2, fy)
    load = np.zeros(space.n_velocity)
    np.add.at(load, 2 * space.element_scalar_nodes, loc_x)
    np.add.at(load, 2 * space.element_scalar_nodes + 1, loc_y)
    return load


def constrain_system(A: sp.csr_matrix, constrained: np.ndarray
                     ) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Symmetric row/column elimination of the given dof indices.

    Returns ``(A_c, bc_cols)`` where A_c has identity rows/columns at the
    constrained dofs and ``bc_cols = A[:, constrained]`` holds the
    original columns for the right-hand-side correction.
    """
    n = A.shape[0]
    bc_cols = A[:, constrained].tocsr()
    keep = np.ones(n)
    keep[constrained] = 0.0
    D = sp.diags(keep, format="csr")
    ones = np.zeros(n)
    ones[constrained] = 1.0
    A_c = (D @ A @ D + sp.diags(ones, format="csr")).tocsr()
    A_c.sort_indices()
    return A_c, bc_cols


def constrain_rhs(rhs: np.ndarray, bc_cols: sp.csr_matrix,
                  constrained: np.ndarray, values: np.ndarray) -> np.ndarray:
    """RHS counterpart of :func:`constrain_system`."""
    if len(values) != len(constrained):
        raise ValueError("one boundary value required per constrained dof")
    if np.isnan(values).any():
        raise ValueError("boundary values contain NaN")
    out = rhs - bc_cols @ values
    out[constrained] = values
    return out


def apply_dirichlet(A: sp.csr_matrix, rhs: np.ndarray,
                    constrained: np.ndarray, values: np.ndarray
                    ) -> tuple[sp.csr_matrix, np.ndarray]:
    """Eliminate Dirichlet dofs from a coupled system.

    The constrained system reproduces the prescribed values exactly at
    the constrained rows (identity rows) and keeps the remaining
    equations consistent with the full matrix acting on the
    prescribed-value-extended vector.
    """
    A_c, bc_cols = constrain_system(A, constrained)
    return A_c, constrain_rhs(rhs, bc_cols, constrained, values)


@dataclass(frozen=True)
class StepMatrix:
    """One timestep's coefficient matrix, shared by all ensemble members.

    ``matrix`` is the Dirichlet-constrained coupled operator;
    ``bc_cols`` are the original columns of the constrained dofs
    (for per-member RHS corrections); ``fingerprint`` hashes the inputs
    that determine the matrix (mean field, dt, nu, eps).
    """

    matrix: sp.csr_matrix
    bc_cols: sp.csr_matrix
    constrained: np.ndarray
    dt: float
    nu: float
    eps: float
    fingerprint: str


def step_fingerprint(mean: np.ndarray, dt: float, nu: float, eps: float) -> str:
    digest = hashlib.sha256()
    digest.update(np.asarray([dt, nu, eps], dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(mean, dtype=np.float64).tobytes())
    return digest.hexdigest()[:16]


def build_step_matrix(space: TaylorHoodSpace, ops: OperatorSet,
                      mean: DiscreteField, dt: float, nu: float,
                      eps: float) -> StepMatrix:
    """Constrained coupled matrix for one implicit step.

    The matrix depends on the ensemble only through the mean velocity,
    so it is factorized once per step and reused for every member.
    """
    for name, val in (("dt", dt), ("nu", nu), ("eps", eps)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    N = assemble_convection(space, mean)
    F = (1.0 / dt) * ops.M + nu * ops.K + N
    A = sp.bmat([[F, -ops.B.T], [ops.B, eps * ops.Mp]], format="csr")
    constrained = space.dirichlet_dofs()
    A_c, bc_cols = constrain_system(A, constrained)
    return StepMatrix(matrix=A_c, bc_cols=bc_cols, constrained=constrained,
                      dt=dt, nu=nu, eps=eps,
                      fingerprint=step_fingerprint(mean.coefficients,
                                                   dt, nu, eps))


def export_matrix_market(path, A: sp.spmatrix, comment: str = "") -> None:
    """Debug export of any assembled operator."""
    scipy.io.mmwrite(str(path), A, comment=comment)
