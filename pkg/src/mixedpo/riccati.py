"""Riccati solvers for policy evaluation and for the optimal gain.

For a fixed gain ``K`` the discrete policy Riccati equation is

    P = Q + K^T R K + (A - B K)^T Pt (A - B K),
    Pt = P + P D (gamma^2 I - D^T P D)^{-1} D^T P,

and the continuous one is

    (A - B K)^T P + P (A - B K) + Q + K^T R K + gamma^{-2} P D D^T P = 0.

``K`` satisfies the bounded real lemma condition (``K`` is in the feasible
set) when a stabilizing solution ``P >= 0`` exists. Internally the
attenuation term ``gamma^2 I`` is a general positive definite matrix ``Rv``
so that the game module can reuse the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import InfeasibleError, InstabilityError, NonConvergenceError, NumericalError
from .matlin import (
    is_hurwitz,
    is_schur,
    max_real_eig,
    min_eig,
    solve_clyap,
    solve_dlyap,
    spectral_radius,
    sym,
)
from .plant import Plant, check_time_domain

DIVERGENCE_CAP = 1e12
MARGIN_FLOOR = 1e-12
DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class RiccatiCertificate:
    """Solution of a policy Riccati equation together with BRL diagnostics.

    Attributes
    ----------
    P : ndarray
        The computed solution.
    P_tilde : ndarray or None
        ``P + P D (gamma^2 I - D^T P D)^{-1} D^T P`` (discrete only).
    residual : float
        Frobenius norm of the Riccati residual at ``P``.
    brl_margin : float
        Discrete: ``lambda_min(gamma^2 I - D^T P D)``. Continuous: minus
        the spectral abscissa of ``A - B K + gamma^{-2} D D^T P``. Positive
        for a strictly feasible gain.
    closedloop_radius : float
        Discrete: spectral radius of ``(I - gamma^{-2} D D^T P)^{-1}(A - B K)``.
        Continuous: spectral abscissa of ``A - B K + gamma^{-2} D D^T P``.
    psd_margin : float
        ``lambda_min(P)``.
    feasible : bool
        All BRL conditions hold.
    iterations : int
    method : str
    time_domain : str
    """

    P: np.ndarray
    P_tilde: np.ndarray | None
    residual: float
    brl_margin: float
    closedloop_radius: float
    psd_margin: float
    feasible: bool
    iterations: int
    method: str
    time_domain: str
    history: list = field(default_factory=list, repr=False, compare=False)


def _converged(P_new, P_old, tol):
    return np.linalg.norm(P_new - P_old) <= tol * max(1.0, np.linalg.norm(P_new))


def _attenuation_gap(P, D, Rv):
    """``Rv - D^T P D`` and its smallest eigenvalue."""
    S = sym(Rv - D.T @ P @ D)
    return S, min_eig(S)


def _tilde(P, D, Rv):
    S, margin = _attenuation_gap(P, D, Rv)
    if margin < MARGIN_FLOOR:
        raise InfeasibleError("Rv - D^T P D is not positive definite", margin=margin)
    PD = P @ D
    return sym(P + PD @ np.linalg.solve(S, PD.T)), margin


def tilde_p(P, D, gamma: float) -> np.ndarray:
    """Return ``P + P D (gamma^2 I - D^T P D)^{-1} D^T P``.

    Raises
    ------
    InfeasibleError
        If ``gamma^2 I - D^T P D`` is not positive definite.
    """
    P = np.asarray(P, dtype=float)
    D = np.asarray(D, dtype=float)
    Rv = gamma**2 * np.eye(D.shape[1])
    return _tilde(P, D, Rv)[0]


def _abar_discrete(Acl, P, D, Rv):
    n = Acl.shape[0]
    G = D @ np.linalg.solve(Rv, D.T)
    return np.linalg.solve(np.eye(n) - G @ P, Acl)


def _discrete_certificate(Acl, W, D, Rv, P, iterations, method, history):
    n = Acl.shape[0]
    S, margin = _attenuation_gap(P, D, Rv)
    if margin > 0:
        Pt = sym(P + P @ D @ np.linalg.solve(S, D.T @ P))
        residual = float(np.linalg.norm(W + Acl.T @ Pt @ Acl - P))
        radius = spectral_radius(_abar_discrete(Acl, P, D, Rv))
    else:
        Pt = None
        residual = float("nan")
        radius = float("inf")
    psd = min_eig(P) if n else 0.0
    feasible = (
        margin > 0
        and radius < 1.0 - 1e-12
        and psd >= -1e-9 * max(1.0, np.linalg.norm(P))
    )
    return RiccatiCertificate(
        P=P, P_tilde=Pt, residual=residual, brl_margin=margin,
        closedloop_radius=radius, psd_margin=psd, feasible=bool(feasible),
        iterations=iterations, method=method, time_domain="discrete", history=history,
    )


def iterate_dare_policy(Acl, W, D, Rv, P0=None):
    """Yield the fixed-point iterates ``P^{t+1} = W + Acl^T Pt^t Acl``.

    The generator stops by raising :class:`InfeasibleError` when
    ``Rv - D^T P^t D`` loses positive definiteness or the iterates blow up.
    """
    n = Acl.shape[0]
    P = np.zeros((n, n)) if P0 is None else sym(np.asarray(P0, dtype=float))
    while True:
        Pt, _ = _tilde(P, D, Rv)
        P = sym(W + Acl.T @ Pt @ Acl)
        if not np.all(np.isfinite(P)) or np.linalg.norm(P) > DIVERGENCE_CAP:
            raise InfeasibleError("policy Riccati iterates diverged")
        yield P


def _dare_recursion(Acl, W, D, Rv, tol, max_iter, P0, keep_history):
    n = Acl.shape[0]
    P = np.zeros((n, n)) if P0 is None else sym(np.asarray(P0, dtype=float))
    history = [P] if keep_history else []
    it = 0
    try:
        for P_new in iterate_dare_policy(Acl, W, D, Rv, P):
            it += 1
            if keep_history:
                history.append(P_new)
            done = _converged(P_new, P, tol)
            P = P_new
            if done:
                return P, it, history
            if it >= max_iter:
                break
    except InfeasibleError as exc:
        exc.iterations = it
        if exc.margin is None:
            exc.margin = _attenuation_gap(P, D, Rv)[1]
        raise
    raise NonConvergenceError(
        f"policy Riccati recursion did not converge in {max_iter} iterations",
        iterations=it,
    )


def _dare_newton(Acl, W, D, Rv, tol, max_iter, P0, keep_history):
    """Newton iteration on ``P = W + Acl^T Pt(P) Acl``.

    From ``P = 0`` the iterates increase monotonically towards the minimal
    (stabilizing) solution because the right-hand side is matrix convex.
    """
    n = Acl.shape[0]
    P = np.zeros((n, n)) if P0 is None else sym(np.asarray(P0, dtype=float))
    history = [P] if keep_history else []
    for it in range(1, max_iter + 1):
        try:
            Pt, margin = _tilde(P, D, Rv)
        except InfeasibleError as exc:
            exc.iterations = it - 1
            raise
        Abar = _abar_discrete(Acl, P, D, Rv)
        if not is_schur(Abar):
            raise InfeasibleError(
                "Newton linearization is not stable", margin=margin, iterations=it - 1
            )
        F = W + Acl.T @ Pt @ Acl
        P_new = solve_dlyap(Abar, sym(F - Abar.T @ P @ Abar), check=False)
        if not np.all(np.isfinite(P_new)) or np.linalg.norm(P_new) > DIVERGENCE_CAP:
            raise InfeasibleError("policy Riccati iterates diverged", iterations=it)
        if keep_history:
            history.append(P_new)
        done = _converged(P_new, P, tol)
        P = P_new
        if done:
            return P, it, history
    raise NonConvergenceError(
        f"Newton policy evaluation did not converge in {max_iter} iterations",
        iterations=max_iter,
    )


def _solve_dare_general(Acl, W, D, Rv, tol, max_iter, method, P0, keep_history):
    if not is_schur(Acl):
        raise InstabilityError(
            f"closed loop is not Schur stable (rho={spectral_radius(Acl):.6g})"
        )
    if method == "recursion":
        P, it, hist = _dare_recursion(Acl, W, D, Rv, tol, max_iter, P0, keep_history)
    elif method == "newton":
        try:
            P, it, hist = _dare_newton(Acl, W, D, Rv, tol, max_iter, P0, keep_history)
        except (InfeasibleError, NonConvergenceError, NumericalError):
            if P0 is None:
                raise
            # a warm start may sit outside the Newton basin; retry from zero
            P, it, hist = _dare_newton(Acl, W, D, Rv, tol, max_iter, None, keep_history)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _discrete_certificate(Acl, W, D, Rv, P, it, method, hist)


def solve_dare_policy(
    plant: Plant,
    K,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    method: str = "newton",
    P0=None,
    keep_history: bool = False,
) -> RiccatiCertificate:
    """Evaluate a gain through the discrete policy Riccati equation.

    Parameters
    ----------
    plant : Plant
    K : (m, n) array_like
        Gain with ``A - B K`` Schur stable.
    tol : float
        Stop when ``||P^{t+1} - P^t||_F <= tol * max(1, ||P^{t+1}||_F)``.
    max_iter : int, optional
        Defaults to 100000 for ``"recursion"`` and 500 for ``"newton"``.
    method : {"newton", "recursion"}
        ``"recursion"`` is the plain fixed-point iteration from ``P0``
        (zero by default). ``"newton"`` solves one Lyapunov equation per
        step and converges quadratically to the same stabilizing solution.
    P0 : array_like, optional
        Starting point. For Newton a failed warm start falls back to zero.
    keep_history : bool
        Store every iterate in ``certificate.history``.

    Returns
    -------
    RiccatiCertificate

    Raises
    ------
    InstabilityError
        ``A - B K`` is not Schur stable.
    InfeasibleError
        ``gamma^2 I - D^T P D`` lost definiteness or the iterates diverged.
    NonConvergenceError
        The iteration budget ran out.
    """
    K = plant.check_gain(K)
    if max_iter is None:
        max_iter = 100_000 if method == "recursion" else 500
    Rv = plant.gamma**2 * np.eye(plant.n_dist)
    return _solve_dare_general(
        plant.closed_loop(K), plant.weight(K), plant.D, Rv, tol, max_iter, method, P0, keep_history
    )


def _continuous_certificate(Acl, W, M, P, iterations, method, history):
    Ahat = Acl + M @ P
    alpha = max_real_eig(Ahat)
    residual = float(np.linalg.norm(Acl.T @ P + P @ Acl + W + P @ M @ P))
    psd = min_eig(P)
    feasible = alpha < -1e-12 and psd >= -1e-9 * max(1.0, np.linalg.norm(P))
    return RiccatiCertificate(
        P=P, P_tilde=None, residual=residual, brl_margin=-alpha,
        closedloop_radius=alpha, psd_margin=psd, feasible=bool(feasible),
        iterations=iterations, method=method, time_domain="continuous", history=history,
    )


def _solve_care_general(Acl, W, M, tol, max_iter, P0, keep_history):
    """Newton iteration for ``Acl^T P + P Acl + W + P M P = 0`` with ``M >= 0``.

    Each step linearizes the quadratic term at the previous iterate, which
    gives ``Ahat^T P + P Ahat + W - P_prev M P_prev = 0`` with
    ``Ahat = Acl + M P_prev``.
    """
    if not is_hurwitz(Acl):
        raise InstabilityError(
            f"closed loop is not Hurwitz (max Re={max_real_eig(Acl):.6g})"
        )
    n = Acl.shape[0]
    P = np.zeros((n, n)) if P0 is None else sym(np.asarray(P0, dtype=float))
    history = [P] if keep_history else []
    for it in range(1, max_iter + 1):
        Ahat = Acl + M @ P
        if not is_hurwitz(Ahat):
            raise InfeasibleError(
                "Newton linearization is not Hurwitz", margin=-max_real_eig(Ahat), iterations=it - 1
            )
        P_new = solve_clyap(Ahat, sym(W - P @ M @ P), check=False)
        if not np.all(np.isfinite(P_new)) or np.linalg.norm(P_new) > DIVERGENCE_CAP:
            raise InfeasibleError("continuous policy Riccati iterates diverged", iterations=it)
        if keep_history:
            history.append(P_new)
        done = _converged(P_new, P, tol)
        P = P_new
        if done:
            return _continuous_certificate(Acl, W, M, P, it, "newton", history)
    raise NonConvergenceError(
        f"continuous policy evaluation did not converge in {max_iter} iterations",
        iterations=max_iter,
    )


def solve_care_policy(
    plant: Plant,
    K,
    tol: float = DEFAULT_TOL,
    max_iter: int = 500,
    P0=None,
    keep_history: bool = False,
) -> RiccatiCertificate:
    """Evaluate a gain through the continuous policy Riccati equation.

    Starting from ``P = 0`` the Newton iterates increase monotonically to the
    stabilizing solution whenever it exists. ``K`` is feasible iff the
    limit makes ``A - B K + gamma^{-2} D D^T P`` Hurwitz.

    Raises
    ------
    InstabilityError
        ``A - B K`` is not Hurwitz.
    InfeasibleError
        A linearization lost stability or the iterates diverged.
    NonConvergenceError
        The iteration budget ran out.
    """
    K = plant.check_gain(K)
    M = plant.DDt / plant.gamma**2
    Acl = plant.closed_loop(K)
    W = plant.weight(K)
    try:
        return _solve_care_general(Acl, W, M, tol, max_iter, P0, keep_history)
    except (InfeasibleError, NonConvergenceError, NumericalError):
        if P0 is None:
            raise
        return _solve_care_general(Acl, W, M, tol, max_iter, None, keep_history)


def solve_policy(plant: Plant, K, time_domain: str = "discrete", **kwargs) -> RiccatiCertificate:
    """Dispatch to :func:`solve_dare_policy` or :func:`solve_care_policy`."""
    check_time_domain(time_domain)
    if time_domain == "discrete":
        return solve_dare_policy(plant, K, **kwargs)
    kwargs.pop("method", None)
    return solve_care_policy(plant, K, **kwargs)


def _optimal_recursion(A, B, Q, R, D, Rv, P0, tol, max_iter):
    """Value iteration for the optimal gain with a general ``Rv``.

    Returns ``(P, K, iterations)``. On failure the raised
    :class:`InfeasibleError` carries the BRL margin of the last iterate that
    still satisfied the attenuation condition.
    """
    n = A.shape[0]
    P = np.zeros((n, n)) if P0 is None else sym(np.asarray(P0, dtype=float))
    last_margin = None
    for it in range(1, max_iter + 1):
        try:
            Pt, last_margin = _tilde(P, D, Rv)
        except InfeasibleError as exc:
            exc.iterations = it - 1
            exc.margin = last_margin
            raise
        K = np.linalg.solve(R + B.T @ Pt @ B, B.T @ Pt @ A)
        Acl = A - B @ K
        P_new = sym(Q + K.T @ R @ K + Acl.T @ Pt @ Acl)
        if not np.all(np.isfinite(P_new)) or np.linalg.norm(P_new) > DIVERGENCE_CAP:
            raise InfeasibleError("optimal Riccati recursion diverged", margin=last_margin, iterations=it)
        done = _converged(P_new, P, tol)
        P = P_new
        if done:
            Pt, _ = _tilde(P, D, Rv)
            K = np.linalg.solve(R + B.T @ Pt @ B, B.T @ Pt @ A)
            return P, K, it
    raise NonConvergenceError(
        f"optimal Riccati recursion did not converge in {max_iter} iterations",
        iterations=max_iter,
    )


def solve_optimal_modified_riccati(
    plant: Plant,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    P0=None,
):
    """Compute the optimal gain of a discrete plant by value iteration.

    Runs ``Pt^t = tilde_p(P^t)``, ``K^{t+1} = (R + B^T Pt^t B)^{-1} B^T Pt^t A``
    and ``P^{t+1} = Q + K^T R K + (A - B K)^T Pt^t (A - B K)`` from ``P^0 = 0``.

    Returns
    -------
    P_star, K_star : ndarray
        The stabilizing solution and the optimal gain. ``K_star`` is checked
        to be feasible.

    Raises
    ------
    InfeasibleError
        No feasible gain exists at this attenuation level (the iteration
        loses definiteness or diverges), or the limit fails the BRL check.
    """
    Rv = plant.gamma**2 * np.eye(plant.n_dist)
    P, K, _ = _optimal_recursion(plant.A, plant.B, plant.Q, plant.R, plant.D, Rv, P0, tol, max_iter)
    if not is_schur(plant.closed_loop(K)):
        raise InfeasibleError("optimal recursion converged to a destabilizing gain")
    cert = _discrete_certificate(plant.closed_loop(K), plant.weight(K), plant.D, Rv, P, 0, "optimal", [])
    if not cert.feasible:
        raise InfeasibleError("optimal recursion limit fails the BRL check", margin=cert.brl_margin)
    return P, K


def solve_optimal_care(plant: Plant):
    """Optimal gain of a continuous plant from the Hamiltonian stable subspace.

    Solves ``A^T P + P A + Q - P (B R^{-1} B^T - gamma^{-2} D D^T) P = 0``
    and returns ``(P, K)`` with ``K = R^{-1} B^T P``.

    Raises
    ------
    InfeasibleError
        The Hamiltonian has imaginary-axis eigenvalues, the stable subspace
        is not a graph, or the resulting gain fails the BRL check.
    """
    n = plant.n_states
    A = plant.A
    S = plant.B @ np.linalg.solve(plant.R, plant.B.T) - plant.DDt / plant.gamma**2
    H = np.block([[A, -S], [-plant.Q, -A.T]])
    eig = np.linalg.eigvals(H)
    scale = max(1.0, np.abs(eig).max())
    if np.min(np.abs(eig.real)) <= 1e-9 * scale:
        raise InfeasibleError("Hamiltonian has eigenvalues on the imaginary axis")
    T, Z, sdim = sla.schur(H, sort="lhp")
    if sdim != n:
        raise InfeasibleError("Hamiltonian stable subspace has the wrong dimension")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise InfeasibleError("stable subspace is not a graph")
    P = sym(np.linalg.solve(U11.T, U21.T).T)
    if min_eig(P) < -1e-9 * max(1.0, np.linalg.norm(P)):
        raise InfeasibleError("Riccati solution is not positive semidefinite")
    K = np.linalg.solve(plant.R, plant.B.T @ P)
    Acl = plant.closed_loop(K)
    if not is_hurwitz(Acl):
        raise InfeasibleError("optimal gain is not stabilizing")
    cert = _continuous_certificate(Acl, plant.weight(K), plant.DDt / plant.gamma**2, P, 0, "hamiltonian", [])
    if not cert.feasible:
        raise InfeasibleError("optimal gain fails the BRL check")
    return P, K


def solve_optimal(plant: Plant, time_domain: str = "discrete", **kwargs):
    """Return ``(P_star, K_star)`` for either time domain."""
    check_time_domain(time_domain)
    if time_domain == "discrete":
        return solve_optimal_modified_riccati(plant, **kwargs)
    return solve_optimal_care(plant)
