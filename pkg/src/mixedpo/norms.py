"""H-infinity and H2 norms of the closed loop and feasible-set membership.

The closed-loop map from ``w`` to ``z`` under ``u = -K x`` has state matrix
``A - B K``, input ``D`` and output ``(Q + K^T R K)^{1/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BracketOverflow,
    DomainError,
    InfeasibleError,
    InstabilityError,
    NonConvergenceError,
    NumericalError,
)
from .matlin import is_hurwitz, is_schur, solve_clyap, solve_dlyap
from .plant import Plant, check_time_domain
from .riccati import RiccatiCertificate, solve_optimal, solve_policy

GAMMA_CAP = 1e9
_CHUNK = 512


@dataclass(frozen=True)
class HinfResult:
    """Outcome of an H-infinity norm computation.

    ``method`` is ``"bisection"`` or ``"frequency_grid"``; ``witness_freq`` is
    the maximizing frequency of a grid sweep.
    """

    value: float
    method: str
    witness_freq: float | None = None
    iterations: int = 0


@dataclass(frozen=True)
class MembershipCertificate:
    """Whether a gain lies in the feasible set.

    ``reason`` is one of ``"ok"``, ``"unstable"`` or ``"hinf_violation"``.
    ``riccati`` is present whenever the policy Riccati equation converged.
    """

    in_set: bool
    stabilizing: bool
    reason: str
    riccati: RiccatiCertificate | None = None


def _require_stable(plant: Plant, K, time_domain):
    Acl = plant.closed_loop(K)
    ok = is_schur(Acl) if time_domain == "discrete" else is_hurwitz(Acl)
    if not ok:
        raise InstabilityError("closed loop is not stable")
    return Acl


def _gain_curve(Acl, W, D, points):
    """Largest singular value of ``W^{1/2} (s I - Acl)^{-1} D`` at each point."""
    n = Acl.shape[0]
    out = np.empty(len(points))
    eye = np.eye(n)
    for start in range(0, len(points), _CHUNK):
        s = points[start:start + _CHUNK]
        M = s[:, None, None] * eye - Acl
        G = np.linalg.solve(M, np.broadcast_to(D.astype(complex), (len(s),) + D.shape))
        H = np.conj(np.swapaxes(G, 1, 2)) @ W @ G
        H = 0.5 * (H + np.conj(np.swapaxes(H, 1, 2)))
        out[start:start + _CHUNK] = np.linalg.eigvalsh(H)[:, -1]
    return np.sqrt(np.clip(out, 0.0, None))


def hinf_grid(
    plant: Plant,
    K,
    time_domain: str = "discrete",
    n_points: int = 4096,
    refine: bool | None = None,
) -> HinfResult:
    """Frequency-sweep estimate of the closed-loop H-infinity norm.

    Discrete: ``theta`` uniform on ``[0, 2 pi)``. Continuous: ``omega = 0``
    plus ``n_points - 1`` log-spaced values in ``[1e-4, 1e4]``. With
    ``refine`` (default for continuous only) a second sweep of ``n_points``
    covers one decade (or one grid cell in the discrete case) on each side
    of the current peak.

    The result is always a lower bound on the true norm.
    """
    check_time_domain(time_domain)
    if n_points < 2:
        raise DomainError("n_points must be at least 2")
    K = plant.check_gain(K)
    Acl = _require_stable(plant, K, time_domain)
    W = plant.weight(K)
    D = plant.D
    if refine is None:
        refine = time_domain == "continuous"
    if time_domain == "discrete":
        freqs = 2 * np.pi * np.arange(n_points) / n_points
        points = np.exp(1j * freqs)
    else:
        freqs = np.concatenate([[0.0], np.logspace(-4, 4, n_points - 1)])
        points = 1j * freqs
    gains = _gain_curve(Acl, W, D, points)
    k = int(np.argmax(gains))
    best, peak = float(gains[k]), float(freqs[k])
    if refine:
        if time_domain == "discrete":
            step = 2 * np.pi / n_points
            f2 = np.linspace(peak - step, peak + step, n_points)
            p2 = np.exp(1j * f2)
        else:
            centre = max(peak, 1e-4)
            f2 = np.logspace(np.log10(centre) - 1, np.log10(centre) + 1, n_points)
            p2 = 1j * f2
        g2 = _gain_curve(Acl, W, D, p2)
        k2 = int(np.argmax(g2))
        if g2[k2] > best:
            best, peak = float(g2[k2]), float(f2[k2])
    return HinfResult(best, "frequency_grid", peak, 0)


def _brl_feasible(plant: Plant, K, time_domain) -> bool:
    try:
        return solve_policy(plant, K, time_domain).feasible
    except (InfeasibleError, NonConvergenceError, NumericalError):
        return False


def hinf_bisect(
    plant: Plant,
    K,
    time_domain: str = "discrete",
    tol: float = 1e-6,
    grid_points: int = 512,
) -> HinfResult:
    """Closed-loop H-infinity norm by bisection on the bounded real lemma.

    A level ``gamma`` is above the norm iff the policy Riccati equation at
    ``gamma`` has a stabilizing solution. The lower bracket comes from a
    coarse frequency sweep and the upper bracket from doubling.

    Raises
    ------
    InstabilityError
        The closed loop is not stable.
    BracketOverflow
        The upper bracket exceeded ``1e9``.
    """
    check_time_domain(time_domain)
    K = plant.check_gain(K)
    _require_stable(plant, K, time_domain)
    if not np.any(plant.weight(K)) or not np.any(plant.D):
        return HinfResult(0.0, "bisection", None, 0)
    lo = hinf_grid(plant, K, time_domain, n_points=grid_points).value
    if lo > GAMMA_CAP:
        raise BracketOverflow("H-infinity norm exceeds 1e9")
    hi = max(2.0 * lo, 1e-8)
    it = 0
    while not _brl_feasible(plant.with_gamma(hi), K, time_domain):
        lo = hi
        hi *= 2.0
        it += 1
        if hi > GAMMA_CAP:
            raise BracketOverflow("upper bracket for the H-infinity norm exceeded 1e9")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _brl_feasible(plant.with_gamma(mid), K, time_domain):
            hi = mid
        else:
            lo = mid
        it += 1
    return HinfResult(0.5 * (lo + hi), "bisection", None, it)


def hinf_norm(plant: Plant, K, time_domain: str = "discrete", method: str = "bisection", **kwargs) -> float:
    """Convenience wrapper returning the norm as a float."""
    if method == "bisection":
        return hinf_bisect(plant, K, time_domain, **kwargs).value
    if method == "grid":
        return hinf_grid(plant, K, time_domain, **kwargs).value
    raise ValueError(f"unknown method {method!r}")


def h2_norm(plant: Plant, K, time_domain: str = "discrete") -> float:
    """Closed-loop H2 norm ``sqrt(tr(D^T X D))``.

    ``X`` is the observability Gramian of the closed loop with output
    weight ``Q + K^T R K``.
    """
    check_time_domain(time_domain)
    K = plant.check_gain(K)
    Acl = _require_stable(plant, K, time_domain)
    W = plant.weight(K)
    X = solve_dlyap(Acl, W) if time_domain == "discrete" else solve_clyap(Acl, W)
    return float(np.sqrt(max(np.trace(plant.D.T @ X @ plant.D), 0.0)))


def membership(plant: Plant, K, time_domain: str = "discrete", **kwargs) -> MembershipCertificate:
    """Decide whether ``K`` stabilizes the plant and meets ``||T(K)|| < gamma``."""
    check_time_domain(time_domain)
    K = plant.check_gain(K)
    try:
        cert = solve_policy(plant, K, time_domain, **kwargs)
    except InstabilityError:
        return MembershipCertificate(False, False, "unstable", None)
    except (InfeasibleError, NonConvergenceError, NumericalError):
        return MembershipCertificate(False, True, "hinf_violation", None)
    if cert.feasible:
        return MembershipCertificate(True, True, "ok", cert)
    return MembershipCertificate(False, True, "hinf_violation", cert)


def attenuation_feasible(plant: Plant, time_domain: str = "discrete") -> bool:
    """True when some gain achieves ``||T(K)|| < plant.gamma``."""
    try:
        solve_optimal(plant, time_domain)
    except (InfeasibleError, NonConvergenceError, NumericalError):
        return False
    return True


def optimal_attenuation(
    plant: Plant,
    time_domain: str = "continuous",
    tol: float = 1e-6,
    hi: float | None = None,
) -> float:
    """Smallest attenuation level achievable by state feedback.

    Bisection on ``gamma`` using :func:`attenuation_feasible`. The
    ``gamma`` stored in ``plant`` is ignored.
    """
    check_time_domain(time_domain)
    lo = 0.0
    hi = 1.0 if hi is None else float(hi)
    while not attenuation_feasible(plant.with_gamma(hi), time_domain):
        lo = hi
        hi *= 2.0
        if hi > GAMMA_CAP:
            raise BracketOverflow("no feasible attenuation level below 1e9")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid > 0 and attenuation_feasible(plant.with_gamma(mid), time_domain):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
