"""Plant data for the mixed design problem."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .matlin import as_matrix, min_eig, sym

TIME_DOMAINS = ("discrete", "continuous")


def check_time_domain(time_domain: str) -> str:
    if time_domain not in TIME_DOMAINS:
        raise ValueError(f"time_domain must be one of {TIME_DOMAINS}, got {time_domain!r}")
    return time_domain


@dataclass(frozen=True)
class Plant:
    """Linear plant with quadratic weights and a disturbance channel.

    The closed loop under ``u = -K x`` is ``x+ = (A - B K) x + D w`` (or its
    continuous analogue) with performance output
    ``z = (Q + K^T R K)^{1/2} x``.

    Parameters
    ----------
    A : (n, n) array_like
    B : (n, m) array_like
    Q : (n, n) array_like
        State weight ``C^T C``, positive semidefinite.
    R : (m, m) array_like
        Input weight ``E^T E``, positive definite.
    D : (n, k) array_like
        Disturbance input matrix.
    gamma : float
        Attenuation level, strictly positive.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    D: np.ndarray
    gamma: float

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        Q = as_matrix(self.Q, "Q")
        R = as_matrix(self.R, "R")
        D = as_matrix(self.D, "D")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        if Q.shape != (n, n):
            raise DimensionError(f"Q has shape {Q.shape}, expected {(n, n)}")
        m = B.shape[1]
        if R.shape != (m, m):
            raise DimensionError(f"R has shape {R.shape}, expected {(m, m)}")
        if D.shape[0] != n:
            raise DimensionError(f"D has {D.shape[0]} rows, expected {n}")
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise DomainError("Q must be symmetric")
        if not np.allclose(R, R.T, atol=1e-10):
            raise DomainError("R must be symmetric")
        if min_eig(Q) < -1e-10 * max(1.0, np.abs(Q).max()):
            raise DomainError("Q must be positive semidefinite")
        if min_eig(R) <= 0:
            raise DomainError("R must be positive definite")
        gamma = float(self.gamma)
        if not np.isfinite(gamma) or gamma <= 0:
            raise DomainError(f"gamma must be a positive finite number, got {self.gamma}")
        for name, val in (("A", A), ("B", B), ("Q", sym(Q)), ("R", sym(R)), ("D", D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def from_output_matrices(cls, A, B, C, E, D, gamma, atol: float = 1e-10) -> "Plant":
        """Build a plant from output matrices ``C`` and ``E``.

        The weights are ``Q = C^T C`` and ``R = E^T E``. The cross term
        ``E^T C`` must vanish.
        """
        C = as_matrix(C, "C")
        E = as_matrix(E, "E")
        if C.shape[0] != E.shape[0]:
            raise DimensionError("C and E must have the same number of rows")
        if np.abs(E.T @ C).max(initial=0.0) > atol:
            raise DomainError("E^T C must be zero")
        return cls(A, B, C.T @ C, E.T @ E, D, gamma)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_dist(self) -> int:
        return self.D.shape[1]

    @property
    def DDt(self) -> np.ndarray:
        return self.D @ self.D.T

    def with_gamma(self, gamma: float) -> "Plant":
        return dataclasses.replace(self, gamma=gamma)

    def check_gain(self, K) -> np.ndarray:
        """Validate the shape of a gain and return it as a float array."""
        K = as_matrix(K, "K")
        if K.shape != (self.n_inputs, self.n_states):
            raise DimensionError(f"K has shape {K.shape}, expected {(self.n_inputs, self.n_states)}")
        return K

    def closed_loop(self, K) -> np.ndarray:
        return self.A - self.B @ self.check_gain(K)

    def weight(self, K) -> np.ndarray:
        """``Q + K^T R K``."""
        K = self.check_gain(K)
        return sym(self.Q + K.T @ self.R @ K)
