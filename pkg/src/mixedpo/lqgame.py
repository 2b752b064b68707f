"""Zero-sum linear-quadratic dynamic game.

The system is ``x+ = A x + B u + D w`` with ``u = -K x`` and ``w = -L x``.
The controller minimizes and the disturbance maximizes
``E sum_t x^T Q x + u^T Ru u - w^T Rv w`` with ``x0`` of covariance
``Sigma0``. With ``Rv = gamma^2 I`` the controller's problem after the
disturbance plays its best response is the discrete mixed design problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, InfeasibleError, InstabilityError
from .matlin import as_matrix, is_schur, min_eig, solve_dlyap, spectral_radius, sym
from .plant import Plant
from .riccati import _optimal_recursion, _solve_dare_general


@dataclass(frozen=True)
class GameSpec:
    """Data of the zero-sum game."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    Ru: np.ndarray
    Rv: np.ndarray
    Sigma0: np.ndarray | None = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        B = as_matrix(self.B, "B")
        D = as_matrix(self.D, "D")
        Q = as_matrix(self.Q, "Q")
        Ru = as_matrix(self.Ru, "Ru")
        Rv = as_matrix(self.Rv, "Rv")
        S0 = np.eye(n) if self.Sigma0 is None else as_matrix(self.Sigma0, "Sigma0")
        if A.shape != (n, n) or B.shape[0] != n or D.shape[0] != n or Q.shape != (n, n):
            raise DimensionError("inconsistent game dimensions")
        if Ru.shape != (B.shape[1],) * 2 or Rv.shape != (D.shape[1],) * 2 or S0.shape != (n, n):
            raise DimensionError("inconsistent weight dimensions")
        if min_eig(Ru) <= 0 or min_eig(Rv) <= 0:
            raise DomainError("Ru and Rv must be positive definite")
        if min_eig(S0) < -1e-12 or min_eig(Q) < -1e-10 * max(1.0, np.abs(Q).max()):
            raise DomainError("Q and Sigma0 must be positive semidefinite")
        for name, val in (("A", A), ("B", B), ("D", D), ("Q", sym(Q)),
                          ("Ru", sym(Ru)), ("Rv", sym(Rv)), ("Sigma0", sym(S0))):
            object.__setattr__(self, name, val)

    @classmethod
    def from_plant(cls, plant: Plant, Sigma0=None) -> "GameSpec":
        """Game with ``Rv = gamma^2 I`` built from a discrete plant."""
        Rv = plant.gamma**2 * np.eye(plant.n_dist)
        return cls(plant.A, plant.B, plant.D, plant.Q, plant.R, Rv, Sigma0)

    @property
    def n_states(self):
        return self.A.shape[0]

    def closed_loop(self, K, L):
        return self.A - self.B @ K - self.D @ L

    def check(self, K, L):
        K = as_matrix(K, "K")
        L = as_matrix(L, "L")
        if K.shape != (self.B.shape[1], self.n_states):
            raise DimensionError(f"K has shape {K.shape}")
        if L.shape != (self.D.shape[1], self.n_states):
            raise DimensionError(f"L has shape {L.shape}")
        return K, L


@dataclass(frozen=True)
class NashSolution:
    K_star: np.ndarray
    L_star: np.ndarray
    P_star: np.ndarray
    value_matrix_certified: bool
    residual: float


def game_value(spec: GameSpec, K, L):
    """Value matrix and cost of the pair ``(K, L)``.

    Returns
    -------
    P : ndarray
        Solution of ``P = Q + K^T Ru K - L^T Rv L + Acl^T P Acl``.
    cost : float
        ``tr(P Sigma0)``.

    Raises
    ------
    InstabilityError
        ``A - B K - D L`` is not Schur stable.
    """
    K, L = spec.check(K, L)
    Acl = spec.closed_loop(K, L)
    if not is_schur(Acl):
        raise InstabilityError(f"A - B K - D L is not stable (rho={spectral_radius(Acl):.6g})")
    W = sym(spec.Q + K.T @ spec.Ru @ K - L.T @ spec.Rv @ L)
    P = solve_dlyap(Acl, W)
    return P, float(np.trace(P @ spec.Sigma0))


def state_correlation(spec: GameSpec, K, L) -> np.ndarray:
    """``Sigma_{K,L} = sum_t Acl^t Sigma0 (Acl^T)^t``."""
    K, L = spec.check(K, L)
    return solve_dlyap(spec.closed_loop(K, L).T, spec.Sigma0)


def gradients(spec: GameSpec, K, L):
    """Exact policy gradients ``(grad_K C, grad_L C)``."""
    K, L = spec.check(K, L)
    P, _ = game_value(spec, K, L)
    Sig = state_correlation(spec, K, L)
    A, B, D = spec.A, spec.B, spec.D
    gK = 2 * ((spec.Ru + B.T @ P @ B) @ K - B.T @ P @ (A - D @ L)) @ Sig
    gL = 2 * ((-spec.Rv + D.T @ P @ D) @ L - D.T @ P @ (A - B @ K)) @ Sig
    return gK, gL


def best_response_L(spec: GameSpec, K, tol: float = 1e-12):
    """Maximizing disturbance gain for a fixed controller.

    Returns
    -------
    L : ndarray
        ``(-Rv + D^T P D)^{-1} D^T P (A - B K)`` at the stabilizing ``P``.
    P : ndarray
        Value matrix of ``(K, L(K))``.

    Raises
    ------
    InstabilityError
        ``A - B K`` is not stable.
    InfeasibleError
        The inner maximization is unbounded (``Rv - D^T P D`` loses
        definiteness).
    """
    K = as_matrix(K, "K")
    Acl = spec.A - spec.B @ K
    W = sym(spec.Q + K.T @ spec.Ru @ K)
    cert = _solve_dare_general(Acl, W, spec.D, spec.Rv, tol, 500, "newton", None, False)
    if not cert.feasible:
        raise InfeasibleError("no stabilizing best response", margin=cert.brl_margin)
    P, D = cert.P, spec.D
    L = np.linalg.solve(-spec.Rv + D.T @ P @ D, D.T @ P @ Acl)
    return L, P


def solve_gare(spec: GameSpec, tol: float = 1e-12, max_iter: int = 100_000) -> NashSolution:
    """Nash equilibrium of the game by fixed-point iteration from ``P = Q``.

    The controller gain comes from the same value iteration used for the
    mixed design problem. The disturbance gain is its best response.

    Raises
    ------
    InfeasibleError
        No saddle point with a stabilizing value matrix exists.
    """
    A, B, D, Q, Ru, Rv = spec.A, spec.B, spec.D, spec.Q, spec.Ru, spec.Rv
    P, K, _ = _optimal_recursion(A, B, Q, Ru, D, Rv, Q, tol, max_iter)
    L = np.linalg.solve(-Rv + D.T @ P @ D, D.T @ P @ (A - B @ K))
    BD = np.hstack([B, D])
    Rblk = np.block([[Ru, np.zeros((B.shape[1], D.shape[1]))],
                     [np.zeros((D.shape[1], B.shape[1])), -Rv]])
    gain = np.linalg.solve(Rblk + BD.T @ P @ BD, BD.T @ P @ A)
    resid = Q + A.T @ P @ A - A.T @ P @ BD @ gain - P
    certified = (
        min_eig(Rv - D.T @ P @ D) > 0
        and min_eig(P) >= -1e-9 * max(1.0, np.linalg.norm(P))
        and is_schur(spec.closed_loop(K, L))
    )
    if not certified:
        raise InfeasibleError("game Riccati limit is not a certified saddle point")
    return NashSolution(K, L, P, True, float(np.linalg.norm(resid)))


def closed_form_gains(spec: GameSpec, P):
    """Saddle-point gains written directly in terms of the value matrix."""
    A, B, D, Ru, Rv = spec.A, spec.B, spec.D, spec.Ru, spec.Rv
    BtP, DtP = B.T @ P, D.T @ P
    Sv = Rv - DtP @ D
    Su = Ru + BtP @ B
    K = np.linalg.solve(
        Su + BtP @ D @ np.linalg.solve(Sv, DtP @ B),
        BtP @ A + BtP @ D @ np.linalg.solve(Sv, DtP @ A),
    )
    L = np.linalg.solve(
        -Sv - DtP @ B @ np.linalg.solve(Su, BtP @ D),
        DtP @ A - DtP @ B @ np.linalg.solve(Su, BtP @ A),
    )
    return K, L
