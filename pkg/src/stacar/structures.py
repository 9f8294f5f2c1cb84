"""Prior structure matrices: random walks, Leroux mixtures, Kronecker products.

Conventions
-----------
Interaction blocks are stored as flat vectors whose layout must match the
Kronecker operand order, otherwise constraints address the wrong cells:

* space-time: index ``i * T + j`` (area-major), structure ``A_space (x) B_time``
* space-age:  index ``i * K + k`` (area-major), structure ``A_space (x) B_age``
* time-age:   index ``k * T + j`` (age-major),  structure ``A_age   (x) B_time``

For each interaction the four types select which operands are structured:

===========  ==================  =================  =================
interaction  left operand        right operand      structured when
===========  ==================  =================  =================
space_time   spatial (S x S)     temporal (T x T)   III/IV left, II/IV right
space_age    spatial (S x S)     age (K x K)        III/IV left, II/IV right
time_age     age (K x K)         temporal (T x T)   II/IV left, III/IV right
===========  ==================  =================  =================

The structured operand is always the canonical one for its dimension
(the graph structure for space, a first-order random walk for time and
age), independent of which structure the main effect uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SpecificationError

__all__ = [
    "StructureMatrix",
    "INTERACTIONS",
    "INTERACTION_TYPES",
    "identity_structure",
    "rw1_structure",
    "leroux_precision",
    "structured_slots",
    "interaction_structure",
    "interaction_rank_deficiency",
    "structure_to_coordinate_text",
]

INTERACTIONS = ("space_time", "space_age", "time_age")
INTERACTION_TYPES = ("I", "II", "III", "IV")

# (left_structured, right_structured) per interaction type; the time_age
# table is transposed relative to the space_* ones because its left operand
# is the age structure.
_SLOTS = {
    "space_time": {"I": (False, False), "II": (False, True), "III": (True, False), "IV": (True, True)},
    "space_age": {"I": (False, False), "II": (False, True), "III": (True, False), "IV": (True, True)},
    "time_age": {"I": (False, False), "II": (True, False), "III": (False, True), "IV": (True, True)},
}


@dataclass(frozen=True, eq=False)
class StructureMatrix:
    """Sparse symmetric non-negative-definite prior structure matrix.

    ``rank_deficiency`` is the declared null-space dimension; tests verify
    it against the numerical rank for every constructor in this module.
    """

    matrix: sp.csr_matrix
    rank_deficiency: int

    def __post_init__(self):
        m = self.matrix
        if m.shape[0] != m.shape[1]:
            raise SpecificationError("structure matrix must be square")
        if self.rank_deficiency < 0 or self.rank_deficiency > m.shape[0]:
            raise SpecificationError("rank deficiency outside [0, dim]")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_identity(self) -> bool:
        diff = self.matrix - sp.identity(self.dim, format="csr")
        return diff.nnz == 0 or np.max(np.abs(diff.data)) == 0.0

    def as_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def identity_structure(n: int) -> StructureMatrix:
    """Unstructured (iid) prior structure: the identity, full rank."""
    if n < 1:
        raise SpecificationError(f"identity structure needs n >= 1, got {n}")
    return StructureMatrix(matrix=sp.identity(n, format="csr"), rank_deficiency=0)


def rw1_structure(n: int) -> StructureMatrix:
    """First-order random walk structure.

    Tridiagonal with diagonal (1, 2, ..., 2, 1) and off-diagonal -1; it is
    the path-graph intrinsic autoregression, with the all-ones null space
    (rank deficiency one).
    """
    if n < 2:
        raise SpecificationError(f"random walk structure needs n >= 2, got {n}")
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = np.full(n - 1, -1.0)
    matrix = sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr")
    return StructureMatrix(matrix=matrix, rank_deficiency=1)


def leroux_precision(R: StructureMatrix, lam: float, tau: float) -> sp.csr_matrix:
    """Leroux mixture precision tau * (lam * R + (1 - lam) * I).

    Interpolates between an iid prior (lam = 0) and the intrinsic
    autoregression (lam = 1); strictly positive definite whenever lam < 1.
    """
    if not 0.0 <= lam <= 1.0:
        raise SpecificationError(f"mixing parameter must be in [0, 1], got {lam}")
    if not tau > 0.0:
        raise SpecificationError(f"precision must be positive, got {tau}")
    mixed = lam * R.matrix + (1.0 - lam) * sp.identity(R.dim, format="csr")
    return (tau * mixed).tocsr()


def structured_slots(which: str, type_: str) -> tuple[bool, bool]:
    """Which Kronecker operands are structured for (interaction, type)."""
    _check_kind(which, type_)
    return _SLOTS[which][type_]


def _check_kind(which: str, type_: str) -> None:
    if which not in INTERACTIONS:
        raise SpecificationError(f"unknown interaction {which!r}")
    if type_ not in INTERACTION_TYPES:
        raise SpecificationError(f"unknown interaction type {type_!r}")


def _check_operand(slot_structured: bool, operand: StructureMatrix, side: str,
                   which: str, type_: str) -> None:
    if slot_structured and operand.rank_deficiency == 0:
        raise SpecificationError(
            f"{which} type {type_}: {side} operand must be structured "
            "(singular), got a full-rank matrix"
        )
    if not slot_structured and not operand.is_identity:
        raise SpecificationError(
            f"{which} type {type_}: {side} operand must be the identity"
        )


def interaction_structure(which: str, type_: str, left: StructureMatrix,
                          right: StructureMatrix) -> StructureMatrix:
    """Kronecker-product interaction structure ``left (x) right``.

    Operands must match the structured/unstructured pattern for the given
    interaction type (see module docstring); the declared rank deficiency
    follows from the operand null-space dimensions.
    """
    left_structured, right_structured = structured_slots(which, type_)
    _check_operand(left_structured, left, "left", which, type_)
    _check_operand(right_structured, right, "right", which, type_)
    matrix = sp.kron(left.matrix, right.matrix, format="csr")
    deficiency = _kron_deficiency(left.dim, left.rank_deficiency,
                                  right.dim, right.rank_deficiency)
    return StructureMatrix(matrix=matrix, rank_deficiency=deficiency)


def _kron_deficiency(n_left: int, d_left: int, n_right: int, d_right: int) -> int:
    # null(A (x) B) = null(A) (x) R^nB  +  R^nA (x) null(B), overlap d_A * d_B
    return n_left * d_right + d_left * n_right - d_left * d_right


def interaction_rank_deficiency(which: str, type_: str, S: int, T: int, K: int,
                                spatial_components: int = 1) -> int:
    """Rank deficiency of an interaction structure from its dimensions alone.

    Type I is full rank; Type II/III lose one dimension per copy of the
    unstructured operand; Type IV loses both families minus their overlap.
    A disconnected spatial graph multiplies the spatial operand's deficiency
    by its component count.
    """
    _check_kind(which, type_)
    if which == "space_time":
        dims = (S, T)
        defs_structured = (spatial_components, 1)
    elif which == "space_age":
        dims = (S, K)
        defs_structured = (spatial_components, 1)
    else:
        dims = (K, T)
        defs_structured = (1, 1)
    left_structured, right_structured = _SLOTS[which][type_]
    d_left = defs_structured[0] if left_structured else 0
    d_right = defs_structured[1] if right_structured else 0
    return _kron_deficiency(dims[0], d_left, dims[1], d_right)


def structure_to_coordinate_text(sm: StructureMatrix) -> str:
    """Render as ``row col value`` lines (upper and lower entries included)."""
    coo = sm.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}" for i in order]
    return "\n".join(lines) + ("\n" if lines else "")
