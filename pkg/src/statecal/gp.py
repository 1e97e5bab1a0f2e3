"""Gaussian correlation, nugget regularization and GP conditioning.

The correlation between scaled inputs ``x`` and ``x'`` is
``rho ** (4 * sum_k (x_k - x'_k)**2)`` with ``0 < rho < 1``.  Correlation
matrices built on closely spaced designs are badly conditioned, so a nugget
is added to cap the condition number at ``exp(a)`` (``a = 20`` by default).
The symmetric eigendecomposition supplies the sampling root; Cholesky
factors are used for determinants and linear solves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

__all__ = [
    "NUGGET_LOG_THRESHOLD",
    "CorrParams",
    "CorrMatrix",
    "as_points",
    "sq_distances",
    "corr_matrix",
    "cross_corr",
    "nugget",
    "regularize",
    "chol_logdet",
    "spectral_root",
    "condition_number",
    "Factorization",
    "factor",
    "factorize",
    "regularized_root",
    "conditional",
]

NUGGET_LOG_THRESHOLD = 20.0
_EIG_FLOOR = 1e-300


@dataclass(frozen=True)
class CorrParams:
    """Correlation parameter, precision and constant mean of a link-scale GP."""

    rho: float
    lam: float
    mu: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.lam > 0.0:
            raise ValueError(f"precision must be positive, got {self.lam}")
        if not np.isfinite(self.mu):
            raise ValueError(f"mean must be finite, got {self.mu}")


@dataclass(frozen=True, eq=False)
class CorrMatrix:
    """A correlation matrix together with the nugget added to its diagonal.

    ``values`` always holds the un-inflated matrix (unit diagonal); the
    matrix actually used downstream is ``values + delta * I``.
    """

    values: np.ndarray
    delta: float = 0.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def regularized(self) -> np.ndarray:
        if self.delta == 0.0:
            return self.values
        return self.values + self.delta * np.eye(self.n)


def as_points(X) -> np.ndarray:
    """Coerce input locations to an ``(n, d)`` float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    elif X.ndim != 2:
        raise ValueError(f"points must be 1-D or 2-D, got shape {X.shape}")
    return X


def sq_distances(X1, X2) -> np.ndarray:
    """Matrix of squared Euclidean distances between two point sets."""
    A = as_points(X1)
    B = as_points(X2)
    if A.shape[1] != B.shape[1]:
        raise ValueError("point sets have different dimensions")
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _check_rho(rho):
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")


def cross_corr(X1, X2, rho: float) -> np.ndarray:
    """Correlations ``rho ** (4 * |x - x'|**2)`` between two point sets."""
    _check_rho(rho)
    return np.exp(4.0 * np.log(rho) * sq_distances(X1, X2))


def corr_matrix(X, rho: float) -> CorrMatrix:
    """Correlation matrix of a design (no nugget)."""
    R = cross_corr(X, X, rho)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return CorrMatrix(R, 0.0)


def _eigh(A, vectors=False):
    # numpy's driver has far less call overhead than scipy's on small matrices
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise LinAlgError("eigendecomposition failed: matrix has non-finite entries")
    try:
        return np.linalg.eigh(A) if vectors else np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise LinAlgError(f"eigendecomposition failed: {exc}") from exc


def _is_symmetric(A) -> bool:
    return A.ndim == 2 and A.shape[0] == A.shape[1] and float(np.max(np.abs(A - A.T), initial=0.0)) <= 1e-12


def condition_number(A) -> float:
    """Spectral condition number of a symmetric matrix.

    A non-positive smallest eigenvalue (round-off) is clamped to 1e-300.
    """
    ev = _eigh(A)
    return float(ev[-1] / max(ev[0], _EIG_FLOOR))


def nugget(A, a: float = NUGGET_LOG_THRESHOLD) -> float:
    """Nugget ``max{lam_max (kappa - e^a) / (kappa (e^a - 1)), 0}``.

    Evaluated as ``(lam_max - e^a lam_min) / (e^a - 1)``, which equals the
    expression above for ``lam_min > 0`` and stays finite when round-off
    pushes the smallest eigenvalue to or below zero.  Either way the
    inflated matrix has condition number exactly ``e^a``.
    """
    A = np.asarray(A, dtype=float)
    if not _is_symmetric(A):
        raise LinAlgError("nugget requires a symmetric matrix")
    ev = _eigh(A)
    return _nugget_from_eigs(ev[0], ev[-1], a)


def _nugget_from_eigs(lam_min, lam_max, a):
    ea = np.exp(a)
    if lam_min > 0.0 and lam_max <= ea * lam_min:
        return 0.0
    return float(max((lam_max - ea * lam_min) / (ea - 1.0), 0.0))


def regularize(R: CorrMatrix, a: float = NUGGET_LOG_THRESHOLD) -> CorrMatrix:
    """Inflate the diagonal so that the condition number is at most ``e^a``.

    The nugget is computed on the currently regularized matrix and added
    to any nugget already present, so the operation is idempotent.
    """
    extra = nugget(R.regularized, a)
    if extra == 0.0:
        return R
    return CorrMatrix(R.values, R.delta + extra)


def _cholesky(A):
    try:
        return cholesky(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise LinAlgError(
            "Cholesky factorization failed; regularize the matrix first"
        ) from exc


def chol_logdet(R: CorrMatrix) -> float:
    """``log |R + delta I|^{-1/2}``, computed as ``-sum(log(diag(L)))``."""
    L = _cholesky(R.regularized)
    return float(-np.sum(np.log(np.diag(L))))


def spectral_root(R: CorrMatrix) -> np.ndarray:
    """``S = U diag(sqrt(ev))`` with ``S S^T = R + delta I``."""
    ev, U = _eigh(R.regularized, vectors=True)
    return U * np.sqrt(np.clip(ev, 0.0, None))


@dataclass(frozen=True, eq=False)
class Factorization:
    """Everything the sampler needs from one regularized correlation matrix."""

    R: CorrMatrix
    chol: np.ndarray  # lower Cholesky factor of R + delta I
    whiten: np.ndarray  # chol^{-1}
    root: np.ndarray  # spectral root, or None
    logdet: float  # log |R + delta I|^{-1/2}

    def quad_form(self, r) -> float:
        """``r^T (R + delta I)^{-1} r``."""
        v = self.whiten @ r
        return float(v @ v)

    def solve(self, B) -> np.ndarray:
        """``(R + delta I)^{-1} B`` through two triangular solves."""
        Y = solve_triangular(self.chol, B, lower=True, check_finite=False)
        return solve_triangular(self.chol.T, Y, lower=False, check_finite=False)

    def with_root(self) -> "Factorization":
        if self.root is not None:
            return self
        return Factorization(self.R, self.chol, self.whiten, spectral_root(self.R), self.logdet)


def factor(R: CorrMatrix, with_root: bool = True) -> Factorization:
    """Factor an already regularized correlation matrix."""
    A = R.regularized
    L = _cholesky(A)
    W = solve_triangular(L, np.eye(R.n), lower=True, check_finite=False)
    S = spectral_root(R) if with_root else None
    return Factorization(R, L, W, S, float(-np.sum(np.log(np.diag(L)))))


def regularized_root(X, rho: float, a: float = NUGGET_LOG_THRESHOLD):
    """Regularized correlation matrix of ``X`` and its spectral root.

    Adding ``delta I`` shifts the eigenvalues and leaves the eigenvectors
    unchanged, so the root comes from the eigendecomposition of ``R``.  The
    nugget itself goes through :func:`regularize` so that it is bit-for-bit
    the same as on the path without a root.
    """
    R = regularize(corr_matrix(X, rho), a)
    ev, U = _eigh(R.values, vectors=True)
    return R, U * np.sqrt(np.clip(ev + R.delta, 0.0, None))


def factorize(X, rho: float, a: float = NUGGET_LOG_THRESHOLD,
              with_root: bool = True) -> Factorization:
    """Build, regularize and factor the correlation matrix of ``X``."""
    if with_root:
        R, S = regularized_root(X, rho, a)
        f = factor(R, with_root=False)
        return Factorization(R, f.chol, f.whiten, S, f.logdet)
    return factor(regularize(corr_matrix(X, rho), a), with_root)


def conditional(z_obs, X_obs, X_new, params: CorrParams,
                a: float = NUGGET_LOG_THRESHOLD, fact: Factorization | None = None):
    """Conditional distribution of the link-scale GP at new inputs.

    Parameters
    ----------
    z_obs : array_like, shape (n,)
        Link-scale values at ``X_obs``.
    X_obs, X_new : array_like
        Scaled input locations.
    params : CorrParams
    fact : Factorization, optional
        Precomputed factorization of the observed-point correlation matrix
        for ``params.rho``.

    Returns
    -------
    mean : numpy.ndarray, shape (m,)
    cov : numpy.ndarray, shape (m, m)
        ``lam^{-1} (R** - R*^T (R + delta I)^{-1} R*)``.
    """
    z_obs = np.asarray(z_obs, dtype=float)
    X_obs = as_points(X_obs)
    X_new = as_points(X_new)
    if z_obs.shape != (X_obs.shape[0],):
        raise ValueError("z_obs length does not match X_obs")
    if fact is None:
        fact = factorize(X_obs, params.rho, a, with_root=False)
    Rs = cross_corr(X_obs, X_new, params.rho)
    Rss = corr_matrix(X_new, params.rho).values
    A = fact.solve(np.column_stack([z_obs - params.mu, Rs]))
    if not np.all(np.isfinite(A)):
        raise AssertionError("singular correlation matrix after regularization")
    mean = params.mu + Rs.T @ A[:, 0]
    cov = (Rss - Rs.T @ A[:, 1:]) / params.lam
    return mean, 0.5 * (cov + cov.T)
