"""Small linear algebra layer: stability tests and Lyapunov solvers.

Both Lyapunov solvers work on a Schur form, so they stay O(n^3) and never
build the n^2 x n^2 Kronecker system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, InstabilityError, NumericalError

STABILITY_MARGIN = 1e-12


def as_matrix(M, name="matrix") -> np.ndarray:
    """Return ``M`` as a 2-D float array, promoting scalars and vectors."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(-1, 1)
    elif M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericalError(f"{name} has non-finite entries")
    return M


def _square(M, name):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def sym(M: np.ndarray) -> np.ndarray:
    """Symmetric part of ``M``."""
    return 0.5 * (M + M.T)


def min_eig(M: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetric part of ``M``."""
    return float(np.linalg.eigvalsh(sym(M))[0])


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix."""
    M = _square(M, "M")
    w, V = np.linalg.eigh(sym(M))
    if w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise DimensionError("matrix is not positive semidefinite")
    w = np.clip(w, 0.0, None)
    return sym((V * np.sqrt(w)) @ V.T)


def spectral_radius(M) -> float:
    M = _square(M, "M")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def max_real_eig(M) -> float:
    M = _square(M, "M")
    return float(np.max(np.linalg.eigvals(M).real))


def is_schur(M, margin: float = STABILITY_MARGIN) -> bool:
    """True when every eigenvalue lies strictly inside the unit disc."""
    return spectral_radius(M) < 1.0 - margin


def is_hurwitz(M, margin: float = STABILITY_MARGIN) -> bool:
    """True when every eigenvalue has strictly negative real part."""
    return max_real_eig(M) < -margin


@dataclass(frozen=True)
class StabilityReport:
    """Eigenvalue summary of a closed-loop matrix."""

    spectral_radius: float
    max_real_eig: float
    is_schur: bool
    is_hurwitz: bool


def stability_report(M) -> StabilityReport:
    M = _square(M, "M")
    eig = np.linalg.eigvals(M)
    rho = float(np.max(np.abs(eig)))
    alpha = float(np.max(eig.real))
    return StabilityReport(rho, alpha, rho < 1.0 - STABILITY_MARGIN, alpha < -STABILITY_MARGIN)


def solve_dlyap(A, Q, check: bool = True) -> np.ndarray:
    """Solve ``A^T X A - X + Q = 0``.

    Parameters
    ----------
    A : (n, n) array_like
        Schur stable matrix.
    Q : (n, n) array_like
        Symmetric right-hand side.
    check : bool
        Raise :class:`InstabilityError` when ``rho(A) >= 1 - 1e-12``.

    Returns
    -------
    X : ndarray
        Symmetric solution, ``sum_t (A^T)^t Q A^t`` when A is stable.

    Notes
    -----
    With the complex Schur form ``A = U T U^H`` the equation becomes
    ``T^H Y T - Y + U^H Q U = 0`` and can be solved one column at a time
    with lower triangular systems.
    """
    A = _square(A, "A")
    Q = _square(Q, "Q")
    n = A.shape[0]
    if Q.shape != (n, n):
        raise DimensionError(f"Q has shape {Q.shape}, expected {(n, n)}")
    if check and not is_schur(A):
        raise InstabilityError(f"A is not Schur stable (rho={spectral_radius(A):.6g})")
    T, U = sla.schur(A.astype(complex), output="complex")
    C = U.conj().T @ Q @ U
    Th = T.conj().T
    Y = np.zeros((n, n), dtype=complex)
    eye = np.eye(n)
    for j in range(n):
        rhs = -C[:, j] - Th @ (Y[:, :j] @ T[:j, j])
        Y[:, j] = sla.solve_triangular(T[j, j] * Th - eye, rhs, lower=True)
    X = (U @ Y @ U.conj().T).real
    if not np.all(np.isfinite(X)):
        raise NumericalError("discrete Lyapunov solve produced non-finite values")
    return sym(X)


def solve_clyap(A, Q, check: bool = True) -> np.ndarray:
    """Solve ``A^T X + X A + Q = 0`` for Hurwitz ``A``.

    Uses the Bartels-Stewart solver from SciPy and symmetrizes the result.
    """
    A = _square(A, "A")
    Q = _square(Q, "Q")
    n = A.shape[0]
    if Q.shape != (n, n):
        raise DimensionError(f"Q has shape {Q.shape}, expected {(n, n)}")
    if check and not is_hurwitz(A):
        raise InstabilityError(f"A is not Hurwitz (max Re={max_real_eig(A):.6g})")
    try:
        X = sla.solve_continuous_lyapunov(A.T, -Q)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"continuous Lyapunov solve failed: {exc}") from exc
    if not np.all(np.isfinite(X)):
        raise NumericalError("continuous Lyapunov solve produced non-finite values")
    return sym(X)
