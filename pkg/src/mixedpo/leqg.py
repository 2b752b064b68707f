"""Risk-sensitive (LEQG) control as an instance of the mixed design.

For noise covariance ``W`` and risk parameter ``beta > 0`` the LEQG cost of
a gain equals the log-det mixed cost with ``gamma = beta^{-1/2}`` and
``D = W^{1/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasibleError
from .matlin import as_matrix, sym
from .plant import Plant
from .polgrad import cost
from .riccati import solve_dare_policy, solve_optimal_modified_riccati

EIG_FLOOR = 1e-14


def _sqrt_pd(W):
    w, V = np.linalg.eigh(sym(as_matrix(W, "W")))
    if w[0] < EIG_FLOOR:
        raise DomainError("W must be positive definite")
    return sym((V * np.sqrt(w)) @ V.T)


@dataclass(frozen=True)
class LeqgProblem:
    """Discrete LEQG problem ``(A, B, Q, R, W, beta)``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    W: np.ndarray
    beta: float

    def __post_init__(self):
        if not float(self.beta) > 0:
            raise DomainError("beta must be positive")
        for name in ("Q", "W"):
            M = as_matrix(getattr(self, name), name)
            if not np.allclose(M, M.T, atol=1e-10):
                raise DomainError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M)[0] < EIG_FLOOR:
                raise DomainError(f"{name} must be positive definite")


def leqg_to_mixed(problem: LeqgProblem) -> Plant:
    """Plant with ``gamma = beta^{-1/2}`` and ``D = W^{1/2}``."""
    return Plant(
        problem.A, problem.B, problem.Q, problem.R,
        _sqrt_pd(problem.W), 1.0 / np.sqrt(problem.beta),
    )


def leqg_cost(problem: LeqgProblem, K, cert=None) -> float:
    """``-beta^{-1} log det(I - beta P_K W)`` for a feasible gain.

    Raises
    ------
    InfeasibleError
        The policy Riccati equation has no stabilizing solution, so the
        risk-sensitive cost is infinite.
    """
    plant = leqg_to_mixed(problem)
    if cert is None:
        cert = solve_dare_policy(plant, K)
        if not cert.feasible:
            raise InfeasibleError("gain is outside the feasible set", margin=cert.brl_margin)
    return cost(plant, K, "J2_logdet", "discrete", cert)


def leqg_optimal(problem: LeqgProblem, tol: float = 1e-12):
    """Optimal LEQG gain and cost.

    Returns
    -------
    K_star : ndarray
    J_star : float

    Raises
    ------
    InfeasibleError
        ``beta`` is too large for any gain to keep the cost finite. The
        exception carries the BRL margin of the last converged iterate.
    """
    plant = leqg_to_mixed(problem)
    try:
        _, K = solve_optimal_modified_riccati(plant, tol=tol)
    except InfeasibleError as exc:
        raise InfeasibleError(
            f"no gain has finite LEQG cost at beta={problem.beta}: {exc}",
            margin=exc.margin, iterations=exc.iterations,
        ) from exc
    return K, leqg_cost(problem, K)
