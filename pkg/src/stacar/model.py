"""Model evaluation: the linear predictor, Poisson likelihood, latent
Gaussian priors, and hyperpriors.

Counts are modelled as O_ijk ~ Poisson(E_ijk * exp(eta_ijk)) with

    eta_ijk = intercept + spatial_i + time_j + age_k
              + space_time_{i,j} + space_age_{i,k} + time_age_{j,k}

over whichever blocks the specification includes.  The spatial block has a
Leroux mixture precision; every other block has precision tau times a fixed
structure matrix.  Hyperparameters are handled internally on the
(log tau, logit lambda) scale and reported on the (sigma, lambda) scale
with sigma = tau**(-1/2).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import orth as sla_orth
from scipy.special import gammaln, expit

from .adjacency import SpatialGraph, connected_components, icar_structure
from .constraints import ConstraintSet, interaction_constraints, \
    spatial_sum_constraints, total_sum_constraint
from .data import Dataset
from .errors import ImpossibleCellError, InputError, SpecificationError
from .modelspec import ModelSpec
from .structures import StructureMatrix, identity_structure, interaction_structure, \
    rw1_structure, leroux_precision, structured_slots

__all__ = [
    "LatentState",
    "Hyperparameters",
    "ModelStructure",
    "linear_predictor",
    "predictor_array",
    "poisson_loglik",
    "pc_rate",
    "pc_sigma_logpdf",
    "log_hyperprior",
    "PRIOR_FAMILIES",
]

PRIOR_FAMILIES = ("pc", "noninformative")

#: tail condition for the penalized-complexity prior: P(sigma > 1) = 0.01
PC_U = 1.0
PC_TAIL = 0.01


@dataclass(frozen=True)
class LatentState:
    """Values of all latent blocks; absent blocks are None."""

    intercept: float = 0.0
    spatial: np.ndarray | None = None
    time: np.ndarray | None = None
    age: np.ndarray | None = None
    space_time: np.ndarray | None = None
    space_age: np.ndarray | None = None
    time_age: np.ndarray | None = None

    def block(self, name: str):
        if name == "intercept":
            return self.intercept
        return getattr(self, name)


@dataclass(frozen=True)
class Hyperparameters:
    """Precision (tau) per block plus the spatial mixing parameter."""

    tau_spatial: float = 1.0
    lambda_spatial: float = 0.5
    tau_time: float | None = None
    tau_age: float | None = None
    tau_space_time: float | None = None
    tau_space_age: float | None = None
    tau_time_age: float | None = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name.startswith("tau_") and not value > 0.0:
                raise SpecificationError(f"{f.name} must be positive, got {value}")
        if not 0.0 <= self.lambda_spatial <= 1.0:
            raise SpecificationError("lambda_spatial must lie in [0, 1]")

    def tau(self, block: str) -> float:
        value = getattr(self, f"tau_{block}")
        if value is None:
            raise SpecificationError(f"no precision set for block {block!r}")
        return value

    def with_tau(self, block: str, value: float) -> "Hyperparameters":
        return replace(self, **{f"tau_{block}": value})


def pc_rate(u: float = PC_U, tail: float = PC_TAIL) -> float:
    """Exponential rate for sigma implied by P(sigma > u) = tail."""
    if not (u > 0.0 and 0.0 < tail < 1.0):
        raise SpecificationError("need u > 0 and tail in (0, 1)")
    return -np.log(tail) / u


def pc_sigma_logpdf(sigma: float, rate: float) -> float:
    """Log density of the exponential penalized-complexity prior on sigma."""
    if sigma <= 0.0:
        return -np.inf
    return float(np.log(rate) - rate * sigma)


def _log_tau_prior(tau: float, family: str) -> float:
    # density on the internal log-tau scale; sigma = exp(-log(tau)/2), so the
    # Jacobian |d sigma / d log tau| = sigma / 2
    sigma = tau ** -0.5
    log_jac = np.log(sigma / 2.0)
    if family == "pc":
        return pc_sigma_logpdf(sigma, pc_rate()) + log_jac
    return log_jac  # flat on sigma in (0, inf)


def _log_lambda_prior(lam: float) -> float:
    # uniform on [0, 1] carried to the logit scale: density lambda*(1-lambda)
    if not 0.0 < lam < 1.0:
        return -np.inf
    return float(np.log(lam) + np.log1p(-lam))


def log_hyperprior(h: Hyperparameters, prior_family: str) -> float:
    """Joint log hyperprior on the internal (log tau, logit lambda) scale.

    The PC family places an exponential on each sigma calibrated by the tail
    condition P(sigma > 1) = 0.01; the non-informative family is flat on
    sigma and on lambda.  Either way the intercept's prior is flat and
    contributes nothing.
    """
    if prior_family not in PRIOR_FAMILIES:
        raise SpecificationError(f"unknown prior family {prior_family!r}")
    total = _log_lambda_prior(h.lambda_spatial)
    for f in fields(h):
        if not f.name.startswith("tau_"):
            continue
        value = getattr(h, f.name)
        if value is not None:
            total += _log_tau_prior(value, prior_family)
    return float(total)


def linear_predictor(spec: ModelSpec, x: LatentState, i: int, j: int, k: int) -> float:
    """The log relative risk at cell (i, j, k).

    Interaction entries are addressed with the same flat layout the
    structure matrices use; the main-effect lengths supply the strides
    (a spec never includes an interaction without its main effects).
    """
    eta = x.intercept
    if x.spatial is None:
        raise SpecificationError("latent state lacks the spatial block")
    eta += x.spatial[i]
    for name, needed in (("time", spec.time), ("age", spec.age),
                         ("space_time", spec.space_time),
                         ("space_age", spec.space_age),
                         ("time_age", spec.time_age)):
        if needed is None:
            continue
        block = x.block(name)
        if block is None:
            raise SpecificationError(f"spec includes {name} but the state lacks it")
        if name == "time":
            eta += block[j]
        elif name == "age":
            eta += block[k]
        elif name == "space_time":
            eta += block[i * len(x.time) + j]
        elif name == "space_age":
            eta += block[i * len(x.age) + k]
        else:
            eta += block[k * len(x.time) + j]
    return float(eta)


def predictor_array(spec: ModelSpec, x: LatentState, S: int, T: int, K: int) -> np.ndarray:
    """Vectorized linear predictor over the whole lattice, shape (S, T, K)."""
    eta = np.full((S, T, K), x.intercept, dtype=float)
    eta += np.asarray(x.spatial)[:, None, None]
    if spec.time is not None:
        eta += np.asarray(x.time)[None, :, None]
    if spec.age is not None:
        eta += np.asarray(x.age)[None, None, :]
    if spec.space_time is not None:
        eta += np.asarray(x.space_time).reshape(S, T)[:, :, None]
    if spec.space_age is not None:
        eta += np.asarray(x.space_age).reshape(S, K)[:, None, :]
    if spec.time_age is not None:
        eta += np.asarray(x.time_age).reshape(K, T).T[None, :, :]
    return eta


def poisson_loglik(d: Dataset, expected: np.ndarray, spec: ModelSpec,
                   x: LatentState) -> tuple[float, np.ndarray]:
    """Poisson log likelihood, total and per cell.

    Cells with zero expected count must have zero observed count; they
    contribute exactly zero.  The log-factorial terms are included so the
    pointwise values are proper log densities, comparable across models.
    """
    expected = np.asarray(expected, dtype=float)
    if expected.shape != d.shape:
        raise InputError(f"expected counts must have shape {d.shape}")
    if np.any(expected < 0.0):
        raise InputError("expected counts must be non-negative")
    impossible = (d.observed > 0) & (expected == 0.0)
    if np.any(impossible):
        i, j, k = np.argwhere(impossible)[0]
        raise ImpossibleCellError(
            f"cell ({d.area_ids[i]}, {d.period_labels[j]}, {d.age_labels[k]}) "
            "has a positive count but zero expected value"
        )
    S, T, K = d.shape
    eta = predictor_array(spec, x, S, T, K)
    live = expected > 0.0
    log_e = np.where(live, np.log(np.where(live, expected, 1.0)), 0.0)
    obs = d.observed.astype(float)
    pointwise = np.where(
        live,
        obs * (log_e + eta) - expected * np.exp(eta) - gammaln(obs + 1.0),
        0.0,
    )
    return float(pointwise.sum()), pointwise


_HYPER_BLOCKS = ("spatial", "time", "age", "space_time", "space_age", "time_age")


class ModelStructure:
    """Everything a fit needs that is fixed by (spec, graph, T, K):
    block layout, structure matrices, constraints, and the design matrix.
    """

    def __init__(self, spec: ModelSpec, graph: SpatialGraph, T: int, K: int):
        if spec.time is not None and T < 2:
            raise SpecificationError("temporal effect needs at least 2 periods")
        if spec.age is not None and K < 2:
            raise SpecificationError("age effect needs at least 2 groups")
        self.spec = spec
        self.graph = graph
        self.S, self.T, self.K = graph.n_areas, T, K
        self.components = connected_components(graph)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.spatial_structure = icar_structure(graph)

        S = self.S
        self.block_names: tuple[str, ...] = spec.present_blocks()
        self.structures: dict[str, StructureMatrix] = {}
        self.constraints: dict[str, ConstraintSet] = {}
        sizes = {"intercept": 1, "spatial": S}
        self.structures["spatial"] = self.spatial_structure
        self.constraints["spatial"] = spatial_sum_constraints(self.components, S)
        if spec.time is not None:
            sizes["time"] = T
            self.structures["time"] = (identity_structure(T) if spec.time == "iid"
                                       else rw1_structure(T))
            self.constraints["time"] = total_sum_constraint(T)
        if spec.age is not None:
            sizes["age"] = K
            self.structures["age"] = (identity_structure(K) if spec.age == "iid"
                                      else rw1_structure(K))
            self.constraints["age"] = total_sum_constraint(K)
        for name, type_ in (("space_time", spec.space_time),
                            ("space_age", spec.space_age),
                            ("time_age", spec.time_age)):
            if type_ is None:
                continue
            self.structures[name] = self._interaction(name, type_)
            self.constraints[name] = interaction_constraints(
                name, type_, S, T, K, components=self.components)
            sizes[name] = self.structures[name].dim
        self.sizes = sizes
        self.offsets: dict[str, int] = {}
        offset = 0
        for name in self.block_names:
            self.offsets[name] = offset
            offset += sizes[name]
        self.n_latent = offset
        # orthonormal bases of each block's constraint row space; redundant
        # rows (Type IV) drop out here so downstream Gram matrices stay
        # nonsingular, without changing the constraint surface
        self._constraints_orth: dict[str, np.ndarray] = {}
        for name in self.block_names:
            if name == "intercept":
                continue
            rows = self.constraints[name].rows
            self._constraints_orth[name] = sla_orth(rows.T).T
        self.n_constraints = {
            name: basis.shape[0] for name, basis in self._constraints_orth.items()
        }
        # Leroux mixture eigenvalues; the zero modes (one per component) are
        # removed by the spatial constraints, so only the positive spectrum
        # enters the constrained normalizing constant.
        spectrum = np.linalg.eigvalsh(self.spatial_structure.as_dense())
        self._spatial_spectrum = spectrum[len(self.components):]
        self._design = self._build_design()

    def _interaction(self, name: str, type_: str) -> StructureMatrix:
        left_structured, right_structured = structured_slots(name, type_)
        if name == "space_time":
            n_left, n_right = self.S, self.T
            make_left, make_right = (lambda: self.spatial_structure), (lambda: rw1_structure(self.T))
        elif name == "space_age":
            n_left, n_right = self.S, self.K
            make_left, make_right = (lambda: self.spatial_structure), (lambda: rw1_structure(self.K))
        else:
            n_left, n_right = self.K, self.T
            make_left, make_right = (lambda: rw1_structure(self.K)), (lambda: rw1_structure(self.T))
        left = make_left() if left_structured else identity_structure(n_left)
        right = make_right() if right_structured else identity_structure(n_right)
        return interaction_structure(name, type_, left, right)

    def _build_design(self) -> sp.csr_matrix:
        S, T, K = self.S, self.T, self.K
        n_cells = S * T * K
        i, j, k = np.meshgrid(np.arange(S), np.arange(T), np.arange(K), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        local = {
            "intercept": np.zeros(n_cells, dtype=np.int64),
            "spatial": i,
            "time": j,
            "age": k,
            "space_time": i * T + j,
            "space_age": i * K + k,
            "time_age": k * T + j,
        }
        self._block_cols = {name: local[name] for name in self.block_names}
        cols = [self.offsets[name] + self._block_cols[name]
                for name in self.block_names]
        rows = np.tile(np.arange(n_cells), len(cols))
        col = np.concatenate(cols)
        data = np.ones(col.size)
        return sp.csr_matrix((data, (rows, col)), shape=(n_cells, self.n_latent))

    def block_column_index(self, name: str) -> np.ndarray:
        """Per-cell index into one block's entries; every cell touches each
        present block exactly once, so a block's design slice is a pure
        indicator and weighted cross products reduce to bincounts."""
        return self._block_cols[name]

    @property
    def design(self) -> sp.csr_matrix:
        """Sparse 0/1 map from the packed latent vector to per-cell predictors."""
        return self._design

    def cell_index(self, i: int, j: int, k: int) -> int:
        return (i * self.T + j) * self.K + k

    # --- packing -------------------------------------------------------

    def pack(self, x: LatentState) -> np.ndarray:
        vec = np.zeros(self.n_latent)
        for name in self.block_names:
            off, size = self.offsets[name], self.sizes[name]
            if name == "intercept":
                vec[off] = x.intercept
                continue
            block = x.block(name)
            if block is None:
                raise SpecificationError(f"state lacks block {name!r}")
            vec[off:off + size] = block
        return vec

    def unpack(self, vec: np.ndarray) -> LatentState:
        values = {}
        for name in self.block_names:
            off, size = self.offsets[name], self.sizes[name]
            if name == "intercept":
                values["intercept"] = float(vec[off])
            else:
                values[name] = np.array(vec[off:off + size])
        return LatentState(**values)

    def block_slice(self, name: str) -> slice:
        off = self.offsets[name]
        return slice(off, off + self.sizes[name])

    # --- constraints ---------------------------------------------------

    def joint_constraints(self) -> np.ndarray:
        """All block constraint rows embedded over the packed latent vector."""
        rows = []
        for name in self.block_names:
            if name == "intercept":
                continue
            block_rows = self.constraints[name].rows
            for r in block_rows:
                full = np.zeros(self.n_latent)
                full[self.block_slice(name)] = r
                rows.append(full)
        return np.array(rows) if rows else np.zeros((0, self.n_latent))

    def block_constraints_orth(self, name: str) -> np.ndarray:
        """Orthonormal basis of one block's constraint row space."""
        return self._constraints_orth[name]

    def joint_constraints_orth(self) -> np.ndarray:
        """Orthonormal, redundancy-free constraint rows over the full vector.

        Blocks do not overlap, so embedding each block's orthonormal basis
        yields orthonormal joint rows.
        """
        rows = []
        for name in self.block_names:
            if name == "intercept":
                continue
            for r in self._constraints_orth[name]:
                full = np.zeros(self.n_latent)
                full[self.block_slice(name)] = r
                rows.append(full)
        return np.array(rows) if rows else np.zeros((0, self.n_latent))

    # --- hyperparameters -----------------------------------------------

    def hyper_block_names(self) -> tuple[str, ...]:
        return tuple(b for b in self.block_names if b != "intercept")

    def internal_names(self) -> tuple[str, ...]:
        names = ["log_tau_spatial", "logit_lambda_spatial"]
        names += [f"log_tau_{b}" for b in self.hyper_block_names() if b != "spatial"]
        return tuple(names)

    def hyper_to_internal(self, h: Hyperparameters) -> np.ndarray:
        lam = min(max(h.lambda_spatial, 1e-12), 1.0 - 1e-12)
        theta = [np.log(h.tau_spatial), np.log(lam / (1.0 - lam))]
        theta += [np.log(h.tau(b)) for b in self.hyper_block_names() if b != "spatial"]
        return np.array(theta)

    def hyper_from_internal(self, theta: np.ndarray) -> Hyperparameters:
        values = {"tau_spatial": float(np.exp(theta[0])),
                  "lambda_spatial": float(expit(theta[1]))}
        for pos, block in enumerate(b for b in self.hyper_block_names() if b != "spatial"):
            values[f"tau_{block}"] = float(np.exp(theta[2 + pos]))
        return Hyperparameters(**values)

    # --- priors ---------------------------------------------------------

    def block_precision(self, name: str, h: Hyperparameters) -> sp.csr_matrix:
        if name == "spatial":
            return leroux_precision(self.structures["spatial"], h.lambda_spatial,
                                    h.tau_spatial)
        return (h.tau(name) * self.structures[name].matrix).tocsr()

    def prior_precision(self, h: Hyperparameters) -> sp.csr_matrix:
        """Block-diagonal joint prior precision (zero row for the intercept)."""
        parts = []
        for name in self.block_names:
            if name == "intercept":
                parts.append(sp.csr_matrix((1, 1)))
            else:
                parts.append(self.block_precision(name, h))
        return sp.block_diag(parts, format="csr")

    def prior_quad(self, h: Hyperparameters, vec: np.ndarray) -> float:
        """Sum of the quadratic forms x_b' Q_b x_b over latent blocks."""
        return self.prior_quad_from_parts(h, self.prior_quad_parts(vec))

    def prior_quad_parts(self, vec: np.ndarray) -> dict[str, tuple[float, float]]:
        """Hyperparameter-free pieces (x'Rx, x'x) of each block's quadratic
        form, so the form can be re-evaluated cheaply as tau (or lambda)
        moves with the latent state held fixed."""
        parts = {}
        for name in self.block_names:
            if name == "intercept":
                continue
            xb = vec[self.block_slice(name)]
            parts[name] = (float(xb @ (self.structures[name].matrix @ xb)),
                           float(xb @ xb))
        return parts

    def prior_quad_from_parts(self, h: Hyperparameters,
                              parts: dict[str, tuple[float, float]]) -> float:
        lam = h.lambda_spatial
        x_r_x, x_x = parts["spatial"]
        total = h.tau_spatial * (lam * x_r_x + (1.0 - lam) * x_x)
        for name, (x_r_x, _) in parts.items():
            if name != "spatial":
                total += h.tau(name) * x_r_x
        return float(total)

    def prior_logdet(self, h: Hyperparameters) -> float:
        """Hyperparameter-dependent part of the constrained prior normalizers.

        Each block conditioned on its (independent) constraint rows keeps
        ``size - rank(constraints)`` free dimensions, each contributing
        ``log tau``; the Leroux block additionally contributes the mixture
        spectrum over the non-null modes of the spatial structure.
        """
        total = (self.sizes["spatial"] - self.n_constraints["spatial"]) \
            * np.log(h.tau_spatial)
        lam = h.lambda_spatial
        total += float(np.sum(np.log(lam * self._spatial_spectrum + (1.0 - lam))))
        for name in self.hyper_block_names():
            if name == "spatial":
                continue
            free = self.sizes[name] - self.n_constraints[name]
            total += free * np.log(h.tau(name))
        return float(total)
