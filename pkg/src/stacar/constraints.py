"""Sum-to-zero constraint systems and conditioning by kriging.

Singular prior structures are never inverted; identifiability is restored
by hard linear constraints ``A x = 0`` whose rows span the null space of
each block's structure matrix.  ``condition_on_constraints`` projects a
vector onto the constraint surface using the precision matrix, which for a
Gaussian is exactly conditioning on ``A x = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SpecificationError
from .structures import INTERACTIONS, structured_slots

__all__ = [
    "ConstraintSet",
    "spatial_sum_constraints",
    "total_sum_constraint",
    "interaction_constraints",
    "condition_on_constraints",
    "constraint_residual",
]


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Rows of a homogeneous linear constraint system over one latent block."""

    rows: np.ndarray  # (n_rows, block_dim)

    def __post_init__(self):
        rows = self.rows
        if rows.ndim != 2:
            raise SpecificationError("constraint rows must form a 2-d array")
        if rows.shape[0] and not np.all(np.any(rows != 0.0, axis=1)):
            raise SpecificationError("constraint rows must be nonzero")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def independent_rank(self) -> int:
        if self.n_rows == 0:
            return 0
        return int(np.linalg.matrix_rank(self.rows))


def spatial_sum_constraints(components: list[set[int]], n_areas: int) -> ConstraintSet:
    """One sum-to-zero row per connected component of the study region."""
    rows = np.zeros((len(components), n_areas))
    for r, comp in enumerate(components):
        rows[r, sorted(comp)] = 1.0
    return ConstraintSet(rows=rows)


def total_sum_constraint(n: int) -> ConstraintSet:
    """A single all-ones row: the block sums to zero."""
    return ConstraintSet(rows=np.ones((1, n)))


def interaction_constraints(which: str, type_: str, S: int, T: int, K: int,
                            components: list[set[int]] | None = None) -> ConstraintSet:
    """Identifiability constraints for one interaction block.

    Type I gets a single global sum row.  Types II/III get one row per cell
    of the unstructured dimension, summing over the structured one.  Type IV
    gets both families (one row is redundant per spatial component; the
    redundancy is resolved numerically inside the projection, not by
    dropping a designated row).  Rows involving the structured spatial
    operand are emitted per connected component so disconnected regions
    stay identified.
    """
    if which not in INTERACTIONS:
        raise SpecificationError(f"unknown interaction {which!r}")
    if which == "space_time":
        n_left, n_right = S, T
    elif which == "space_age":
        n_left, n_right = S, K
    else:
        n_left, n_right = K, T
    # null vectors of the structured left operand: one per spatial component
    # for the graph, the single all-ones vector for a random walk
    spatial_left = which in ("space_time", "space_age")
    if spatial_left and components is not None:
        left_groups = components
    else:
        left_groups = [set(range(n_left))]
    dim = n_left * n_right

    left_structured, right_structured = structured_slots(which, type_)
    rows: list[np.ndarray] = []
    if type_ == "I":
        rows.append(np.ones(dim))
    if right_structured:
        # sum over the right (structured) index within each left cell
        for i in range(n_left):
            row = np.zeros(dim)
            row[i * n_right:(i + 1) * n_right] = 1.0
            rows.append(row)
    if left_structured:
        # sum over the left (structured) index within each right cell;
        # grouped per spatial component when the left operand is the graph
        for group in left_groups:
            idx = np.array(sorted(group))
            for j in range(n_right):
                row = np.zeros(dim)
                row[idx * n_right + j] = 1.0
                rows.append(row)
    return ConstraintSet(rows=np.array(rows))


def _solve_against(Q, B: np.ndarray) -> np.ndarray:
    """Solve Q X = B for dense B, accepting a matrix or factor-like Q."""
    if hasattr(Q, "solve"):
        return Q.solve(B)
    if sp.issparse(Q):
        from .sampling import PrecisionFactor

        return PrecisionFactor(Q).solve(B)
    return np.linalg.solve(np.asarray(Q), B)


def condition_on_constraints(Q, A: ConstraintSet | np.ndarray, x: np.ndarray) -> np.ndarray:
    """Project x onto {A x = 0} by kriging with precision Q.

    Returns ``x - Q^{-1} A' (A Q^{-1} A')^{-1} A x``.  For x drawn from
    N(m, Q^{-1}) this realizes the conditional distribution given A x = 0.
    Redundant constraint rows are handled by a rank-revealing eigendecomposition
    of ``A Q^{-1} A'`` rather than by dropping designated rows.
    """
    rows = A.rows if isinstance(A, ConstraintSet) else np.atleast_2d(np.asarray(A, dtype=float))
    if rows.shape[0] == 0:
        return np.array(x, dtype=float, copy=True)
    x = np.asarray(x, dtype=float)
    V = _solve_against(Q, rows.T)  # (n, m)
    S_mat = rows @ V
    S_mat = 0.5 * (S_mat + S_mat.T)
    w, U = np.linalg.eigh(S_mat)
    keep = w > max(w.max(), 0.0) * 1e-12
    if not np.any(keep):
        return np.array(x, copy=True)
    y = U.T @ (rows @ x)
    coef = np.zeros_like(y)
    coef[keep] = y[keep] / w[keep]
    return x - V @ (U @ coef)


def constraint_residual(A: ConstraintSet | np.ndarray, x: np.ndarray) -> float:
    rows = A.rows if isinstance(A, ConstraintSet) else np.atleast_2d(np.asarray(A, dtype=float))
    if rows.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(rows @ x)))
