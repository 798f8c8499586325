"""Sparse direct solves with factorization reuse.

A coupled step matrix is factorized once per timestep and the factors
are reused for every ensemble member's right-hand side, which is where
the shared-matrix formulation saves its work. SuperLU (via
``scipy.sparse.linalg.splu``) does the factorization with a
fill-reducing column ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(RuntimeError):
    """Factorization hit a zero pivot; ``pivot`` is the offending
    row/column index when it can be identified, else -1."""

    def __init__(self, message: str, pivot: int = -1):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class Factorization:
    """LU factors of one coefficient matrix plus provenance metadata."""

    lu: spla.SuperLU
    shape: tuple[int, int]
    created_at_step: int | None = None


def _structural_pivot(A: sp.csr_matrix) -> int:
    """Index of the first structurally empty row or column, or -1."""
    csr = A.tocsr()
    row_counts = np.diff(csr.indptr)
    empty_rows = np.flatnonzero(row_counts == 0)
    if len(empty_rows):
        return int(empty_rows[0])
    csc = A.tocsc()
    col_counts = np.diff(csc.indptr)
    empty_cols = np.flatnonzero(col_counts == 0)
    if len(empty_cols):
        return int(empty_cols[0])
    return -1


def factorize(A: sp.spmatrix, created_at_step: int | None = None,
              permc_spec: str = "COLAMD") -> Factorization:
    """LU-factorize a square sparse matrix.

    Raises :class:`SingularMatrixError` (with a pivot index when one can
    be identified) instead of SuperLU's bare RuntimeError.
    """
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    try:
        lu = spla.splu(A.tocsc(), permc_spec=permc_spec)
    except RuntimeError as exc:
        pivot = _structural_pivot(A)
        raise SingularMatrixError(
            f"sparse LU failed ({exc}); pivot index {pivot}", pivot) from exc
    return Factorization(lu=lu, shape=A.shape, created_at_step=created_at_step)


def solve(fact: Factorization, rhs: np.ndarray) -> np.ndarray:
    if rhs.shape != (fact.shape[0],):
        raise ValueError(f"rhs length {rhs.shape} does not match matrix "
                         f"shape {fact.shape}")
    return fact.lu.solve(rhs)


def solve_multi(fact: Factorization, rhs_list: Sequence[np.ndarray]
                ) -> list[np.ndarray]:
    """Solve against many right-hand sides with the same factors.

    Each result is computed by an independent triangular solve, so the
    output for a given RHS does not depend on the rest of the list.
    """
    return [solve(fact, rhs) for rhs in rhs_list]


def discrete_dual_norm(f: np.ndarray, stiffness) -> float:
    """Dual norm sqrt(f^T K^{-1} f) of a load vector.

    ``stiffness`` is the SPD stiffness matrix restricted to
    unconstrained dofs, or an existing :class:`Factorization` of it
    (cheaper when called once per timestep).
    """
    fact = stiffness if isinstance(stiffness, Factorization) \
        else factorize(stiffness)
    z = solve(fact, f)
    return float(np.sqrt(max(f @ z, 0.0)))


def quadratic_norm(A: sp.spmatrix, x: np.ndarray) -> float:
    """sqrt(x^T A x) for an SPSD weight matrix."""
    return float(np.sqrt(max(x @ (A @ x), 0.0)))


def weighted_norms(ops, velocity: np.ndarray | None = None,
                   pressure: np.ndarray | None = None) -> dict[str, float]:
    """L2 and H1-seminorm of a velocity vector and L2 norm of a pressure
    vector, via the assembled mass/stiffness quadratic forms."""
    out = {"L2": 0.0, "H1_semi": 0.0, "pressure_L2": 0.0}
    if velocity is not None:
        out["L2"] = quadratic_norm(ops.M, velocity)
        out["H1_semi"] = quadratic_norm(ops.K, velocity)
    if pressure is not None:
        out["pressure_L2"] = quadratic_norm(ops.Mp, pressure)
    return out
