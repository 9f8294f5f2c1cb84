"""Factorization of sparse symmetric positive-definite precisions, and
zero-mean Gaussian sampling from them.

Small systems use a dense Cholesky factorization.  Larger sparse systems use
SuperLU in symmetric mode (diagonal pivoting with a fill-reducing symmetric
permutation), which for an SPD matrix yields ``P Q P' = L D L'`` and so
supports solves, log-determinants and square-root solves just like a sparse
Cholesky.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular

from .errors import NotPositiveDefiniteError

__all__ = ["PrecisionFactor", "sample_gmrf", "DENSE_CUTOFF"]

DENSE_CUTOFF = 700


class PrecisionFactor:
    """Cholesky-style factorization of a symmetric positive-definite matrix.

    Parameters
    ----------
    Q : sparse or dense symmetric positive-definite matrix
    jitter : float
        Added to the diagonal before factorizing.  Used to make nearly
        singular intrinsic precisions factorizable; downstream constraint
        projections remove the inflated directions exactly.
    dense_cutoff : int
        Dimensions up to this run the dense path.
    """

    def __init__(self, Q, jitter: float = 0.0, dense_cutoff: int = DENSE_CUTOFF):
        if sp.issparse(Q):
            Q = Q.tocsc()
            n = Q.shape[0]
        else:
            Q = np.asarray(Q, dtype=float)
            n = Q.shape[0]
        if Q.shape[0] != Q.shape[1]:
            raise NotPositiveDefiniteError("matrix must be square")
        self.dim = n
        if jitter:
            Q = Q + jitter * (sp.identity(n, format="csc") if sp.issparse(Q) else np.eye(n))
        self._dense = n <= dense_cutoff or not sp.issparse(Q)
        if self._dense:
            dense = Q.toarray() if sp.issparse(Q) else Q
            try:
                self._chol = sla.cholesky(dense, lower=True)
            except sla.LinAlgError as exc:
                raise NotPositiveDefiniteError(str(exc)) from exc
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        else:
            try:
                lu = splu(Q, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                          options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise NotPositiveDefiniteError(str(exc)) from exc
            diag_u = lu.U.diagonal()
            if np.any(diag_u <= 0.0) or not np.array_equal(lu.perm_r, lu.perm_c):
                raise NotPositiveDefiniteError("symmetric factorization failed")
            self._lu = lu
            self._perm = lu.perm_c
            self._sqrt_d = np.sqrt(diag_u)
            self._lt = sp.csr_matrix(lu.L.T)
            self._logdet = float(np.sum(np.log(diag_u)))

    def logdet(self) -> float:
        return self._logdet

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self._dense:
            return sla.cho_solve((self._chol, True), b)
        if b.ndim == 1:
            return self._lu.solve(b)
        return np.column_stack([self._lu.solve(b[:, i]) for i in range(b.shape[1])])

    def sqrt_solve(self, z: np.ndarray) -> np.ndarray:
        """Map standard normal z to a draw with covariance Q^{-1}.

        Solves ``L' x = z`` for the dense factor Q = L L', or the permuted
        equivalent for the sparse L D L' factor; columns of a 2-d z give
        independent draws.
        """
        z = np.asarray(z, dtype=float)
        if self._dense:
            return sla.solve_triangular(self._chol.T, z, lower=False)
        scaled = (z.T / self._sqrt_d).T
        y = spsolve_triangular(self._lt, scaled, lower=False)
        return y[self._perm] if y.ndim == 1 else y[self._perm, :]

    def sample(self, rng: np.random.Generator, n_draws: int = 1) -> np.ndarray:
        """Draws from N(0, Q^{-1}) as an (n_draws, dim) array."""
        z = rng.standard_normal((self.dim, n_draws))
        return self.sqrt_solve(z).T


def sample_gmrf(Q, rng_seed: int, n_draws: int = 1, jitter: float = 0.0) -> np.ndarray:
    """Draw from N(0, Q^{-1}) for a positive-definite precision Q.

    Deterministic for a fixed seed.  Returns a vector for ``n_draws == 1``,
    otherwise an (n_draws, dim) array.
    """
    factor = PrecisionFactor(Q, jitter=jitter)
    draws = factor.sample(np.random.default_rng(rng_seed), n_draws)
    return draws[0] if n_draws == 1 else draws
