"""Dense subspace kernels: SVD helpers, nullspaces, truncation, principal
angles, basis alignment and Cadzow-style structured low-rank approximation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import DimensionError, HankelMatrix, rank_threshold

ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.Vt


def svd(M) -> SvdFactors:
    U, S, Vt = np.linalg.svd(np.asarray(M, float), full_matrices=False)
    return SvdFactors(U, S, Vt)


def nullspace(M, target_nullity: Optional[int] = None) -> np.ndarray:
    """Orthonormal basis ``N`` (as columns) with ``M @ N ~ 0``.

    With ``target_nullity`` the trailing right singular vectors are taken
    regardless of the noise floor.
    """
    M = np.atleast_2d(np.asarray(M, float))
    if M.size == 0:
        raise DimensionError("nullspace of an empty matrix")
    rows, cols = M.shape
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    if target_nullity is None:
        rank = int(np.sum(s > rank_threshold(s, M.shape)))
        nullity = cols - rank
    else:
        if target_nullity < 0 or target_nullity > cols:
            raise DimensionError(f"target nullity {target_nullity} exceeds column count {cols}")
        nullity = int(target_nullity)
    return Vt[cols - nullity:].T.copy()


def tsvd(M, r: int) -> np.ndarray:
    """Best rank-``r`` approximation in Frobenius norm."""
    M = np.asarray(M, float)
    if r < 0 or r > min(M.shape):
        raise DimensionError(f"truncation rank {r} exceeds min dimension {min(M.shape)}")
    if r == 0:
        return np.zeros_like(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return (U[:, :r] * s[:r]) @ Vt[:r]


@dataclass(frozen=True)
class PrincipalAngles:
    angles: np.ndarray

    @property
    def sin_frobenius(self) -> float:
        return float(np.sqrt(np.sum(np.sin(self.angles) ** 2)))

    @property
    def max_angle(self) -> float:
        return float(self.angles.max()) if self.angles.size else 0.0


def orth(A) -> np.ndarray:
    """Orthonormal basis of ``im(A)`` truncated to its numerical rank."""
    A = np.atleast_2d(np.asarray(A, float))
    if A.shape[1] == 0:
        return A.copy()
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    return U[:, :int(np.sum(s > rank_threshold(s, A.shape)))]


def principal_angles(A, B) -> PrincipalAngles:
    """Principal angles between ``im(A)`` and ``im(B)``, ascending.

    Cosines come from the singular values of ``Q_A^T Q_B``. Angles whose
    cosine exceeds ``1/sqrt(2)`` are recomputed from sines, since arccos
    loses all precision near zero.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"bases live in different spaces: {A.shape[0]} vs {B.shape[0]} rows")
    Qa, Qb = orth(A), orth(B)
    if Qa.shape[1] != Qb.shape[1]:
        raise DimensionError(f"subspace dimensions differ: {Qa.shape[1]} vs {Qb.shape[1]}")
    k = Qa.shape[1]
    if k == 0:
        return PrincipalAngles(np.zeros(0))
    M = Qa.T @ Qb
    from_cos = np.arccos(np.clip(np.linalg.svd(M, compute_uv=False), 0.0, 1.0))
    if from_cos[0] < np.pi / 4:
        sin = np.sort(np.linalg.svd(Qb - Qa @ M, compute_uv=False))
        from_sin = np.arcsin(np.clip(sin, 0.0, 1.0))
        angles = np.where(from_cos < np.pi / 4, from_sin, from_cos)
    else:
        angles = from_cos
    return PrincipalAngles(np.sort(angles))


def _check_orthonormal(X: np.ndarray, name: str) -> None:
    err = np.abs(X.T @ X - np.eye(X.shape[1])).max() if X.shape[1] else 0.0
    if err > ORTHO_TOL:
        raise ValueError(f"{name} is not orthonormal (max |X^T X - I| = {err:.2e})")


def aligned_basis(U_hat, U) -> np.ndarray:
    """Basis of ``im(U)`` closest to the fixed basis ``U_hat``.

    With ``U^T U_hat = Y diag(cos) Z^T`` the principal bases are ``U Y`` and
    ``U_hat Z``; writing ``U_hat = (U_hat Z) G`` gives ``G = Z^T`` and the
    returned basis is ``U Y G``.
    """
    U_hat = np.asarray(U_hat, float)
    U = np.asarray(U, float)
    if U_hat.shape != U.shape:
        raise DimensionError(f"shape mismatch {U_hat.shape} vs {U.shape}")
    _check_orthonormal(U_hat, "U_hat")
    _check_orthonormal(U, "U")
    Y, _, Zt = np.linalg.svd(U.T @ U_hat)
    return U @ Y @ Zt


@dataclass(frozen=True)
class SlraResult:
    H_hat: np.ndarray
    iterations: int
    converged: bool
    rank_slack: int


def hankelize(M, q: int, depth: int) -> np.ndarray:
    """Project onto block-Hankel matrices by averaging entries of each sample."""
    return _kernels.hankel(_kernels.hankel_average(M, q, depth), depth)


def cadzow_slra(H: HankelMatrix, r: int, max_iter: int = 500, tol: float = 1e-10, m: Optional[int] = None) -> SlraResult:
    """Alternate rank-``r`` truncation and Hankel re-structuring.

    Stops once an iteration changes the matrix by at most ``tol * ||H||_F``.
    Passing ``m`` holds the first ``m`` variables of every sample (the
    inputs) at their measured values.
    """
    depth = H.depth
    data = np.asarray(H.data, float)
    q = data.shape[0] // depth
    if r <= 0:
        return SlraResult(np.zeros_like(data), 0, True, 0)
    # read samples off the first column and last block row; averaging would
    # perturb the held inputs by an ulp
    samples0 = np.vstack([data[:, 0].reshape(depth, q), data[q * (depth - 1):, 1:].T]) if m else None
    norm = np.linalg.norm(data)
    X = data
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Y = tsvd(X, r)
        series = _kernels.hankel_average(Y, q, depth)
        if m:
            series[:, :m] = samples0[:, :m]
        X_new = _kernels.hankel(series, depth)
        change = np.linalg.norm(X_new - X)
        X = X_new
        if change <= tol * max(norm, 1.0):
            converged = True
            break
    s = np.linalg.svd(X, compute_uv=False)
    rank = int(np.sum(s > rank_threshold(s, X.shape)))
    return SlraResult(X, it, converged, max(0, rank - r))


@dataclass(frozen=True)
class MirskyReport:
    lhs: float
    rhs: float
    holds: bool


def mirsky_check(M, M_hat) -> MirskyReport:
    M = np.asarray(M, float)
    M_hat = np.asarray(M_hat, float)
    if M.shape != M_hat.shape:
        raise DimensionError(f"shape mismatch {M.shape} vs {M_hat.shape}")
    s = np.linalg.svd(M, compute_uv=False)
    s_hat = np.linalg.svd(M_hat, compute_uv=False)
    rho = int(np.sum(s_hat > rank_threshold(s_hat, M_hat.shape))) if s_hat.size else 0
    lhs = float(np.sqrt(np.sum((s_hat[:rho] - s[:rho]) ** 2)))
    rhs = float(np.linalg.norm(M_hat - M))
    return MirskyReport(lhs, rhs, lhs <= rhs + 1e-12)


def wedin_check(M, M_hat, r: int) -> MirskyReport:
    """Trailing right-singular subspaces of a rank-``r`` ``M`` and of ``M_hat``.

    lhs is ``|sin Theta|_F`` between the two, rhs ``sqrt(2) |M_hat - M|_F / s_r(M_hat)``.
    """
    M = np.asarray(M, float)
    M_hat = np.asarray(M_hat, float)
    if M.shape != M_hat.shape:
        raise DimensionError(f"shape mismatch {M.shape} vs {M_hat.shape}")
    cols = M.shape[1]
    if not 0 < r < cols:
        raise DimensionError(f"rank {r} must lie strictly between 0 and {cols}")
    _, _, Vt = np.linalg.svd(M, full_matrices=True)
    _, s_hat, Vt_hat = np.linalg.svd(M_hat, full_matrices=True)
    if r > s_hat.size or s_hat[r - 1] <= 0:
        return MirskyReport(np.nan, np.inf, True)
    lhs = principal_angles(Vt[r:].T, Vt_hat[r:].T).sin_frobenius
    rhs = float(np.sqrt(2.0) * np.linalg.norm(M_hat - M) / s_hat[r - 1])
    return MirskyReport(lhs, rhs, lhs <= rhs + 1e-12)


def basis_alignment_check(U_hat, U) -> MirskyReport:
    """``|U_hat - aligned_basis(U_hat, U)|_F <= 2 sqrt(r) |sin Theta|_F``."""
    U_hat = np.asarray(U_hat, float)
    lhs = float(np.linalg.norm(U_hat - aligned_basis(U_hat, U)))
    rhs = 2.0 * np.sqrt(U_hat.shape[1]) * principal_angles(U, U_hat).sin_frobenius
    return MirskyReport(lhs, rhs, lhs <= rhs + 1e-12)
