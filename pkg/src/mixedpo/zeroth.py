"""Zeroth-order (model-free) estimation and the nested natural-gradient loops.

Gradients are formed with the one-point smoothing estimator

    grad_hat = (1/m) sum_i (d / r^2) C(L + U_i) U_i,

where ``U_i`` is uniform on the Frobenius sphere of radius ``r`` and ``d`` is
the number of entries of the perturbed gain. Every trajectory draws from its
own Philox stream derived from ``(seed, *key)`` and its index ``i``, so results do not depend on
evaluation order.

Three modes are available:

``"sampled"``
    costs and state correlations come from finite-horizon rollouts.
``"exact_cost"``
    rollouts are replaced by the model-based ``C(K, L)`` and
    ``Sigma_{K,L}``; the directions are still sampled.
``"exact_grad"``
    the estimator is replaced by the analytic gradient and ``Sigma_{K,L}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, EstimationError, InfeasibleError, InstabilityError
from .lqgame import GameSpec, best_response_L, game_value, gradients, state_correlation
from .matlin import as_matrix, min_eig, sym

MODES = ("sampled", "exact_cost", "exact_grad")
VARIANTS = ("PG", "NPG")
SIGMA_REG = 1e-8

# key prefixes that keep the stream families of the nested loops apart
_OUTER_DIRECTION = 0
_INNER = 1
_OUTER_ROLLOUT = 2


@dataclass(frozen=True)
class RolloutConfig:
    """Sampling parameters.

    Attributes
    ----------
    m_traj : int
        Number of perturbations (and trajectories) per estimate.
    horizon : int
        Rollout length.
    radius : float
        Smoothing radius ``r``.
    seed : int
    init_cov : ndarray, optional
        Covariance of ``x0``; the game's ``Sigma0`` when omitted.
    """

    m_traj: int = 200
    horizon: int = 100
    radius: float = 0.05
    seed: int = 0
    init_cov: np.ndarray | None = None

    def __post_init__(self):
        if self.m_traj < 1 or self.horizon < 1:
            raise DomainError("m_traj and horizon must be at least 1")
        if not self.radius > 0:
            raise DomainError("radius must be positive")


@dataclass(frozen=True)
class GradSigmaEstimate:
    grad_hat: np.ndarray
    sigma_hat: np.ndarray
    n_samples: int
    costs: np.ndarray = field(repr=False, default=None)
    directions: np.ndarray = field(repr=False, default=None)


def stream_key(seed: int, key=()) -> np.ndarray:
    """128-bit Philox key derived from ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return ss.generate_state(2, np.uint64)


def stream(seed: int, key=(), index: int | None = None, philox_key=None) -> np.random.Generator:
    """Independent generator for ``(seed, *key)`` and trajectory ``index``.

    Trajectories share the Philox key of their estimate and differ in a high
    counter word, so each one reads a disjoint block of the counter space.
    """
    if philox_key is None:
        philox_key = stream_key(seed, key)
    counter = [0, 0, 0 if index is None else int(index) + 1, 0]
    return np.random.Generator(np.random.Philox(key=philox_key, counter=counter))


def sample_sphere(shape, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Matrix drawn uniformly from the Frobenius sphere of the given radius."""
    Z = rng.standard_normal(shape)
    return radius * Z / np.linalg.norm(Z)


def _init_chol(spec, cfg):
    cov = spec.Sigma0 if cfg.init_cov is None else as_matrix(cfg.init_cov, "init_cov")
    return np.linalg.cholesky(sym(cov))


def simulate(spec: GameSpec, K, L, horizon: int, seed=0, init_cov=None):
    """Roll out ``x_{t+1} = (A - B K - D L) x_t`` from ``x0 ~ N(0, init_cov)``.

    ``seed`` may be an integer or a :class:`numpy.random.Generator`.

    Returns
    -------
    costs : ndarray, shape (horizon,)
        ``c_t = x_t^T (Q + K^T Ru K - L^T Rv L) x_t`` for ``t = 0 .. horizon-1``.
    states : ndarray, shape (horizon, n)
    """
    K, L = spec.check(K, L)
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    cov = spec.Sigma0 if init_cov is None else as_matrix(init_cov, "init_cov")
    x = np.linalg.cholesky(sym(cov)) @ rng.standard_normal(spec.n_states)
    Acl = spec.closed_loop(K, L)
    W = spec.Q + K.T @ spec.Ru @ K - L.T @ spec.Rv @ L
    states = np.empty((horizon, spec.n_states))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            states[t] = x
            x = Acl @ x
        costs = np.einsum("ti,ij,tj->t", states, W, states)
    return costs, states


def _batch_rollout(spec, Ks, Ls, x0, horizon):
    """Total cost and summed ``x x^T`` for a batch of gain pairs."""
    Acl = spec.A - spec.B @ Ks - spec.D @ Ls
    W = spec.Q + np.swapaxes(Ks, 1, 2) @ spec.Ru @ Ks - np.swapaxes(Ls, 1, 2) @ spec.Rv @ Ls
    n = spec.n_states
    x = x0
    total = np.zeros(len(x0))
    sigma = np.zeros((len(x0), n, n))
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(horizon):
            total += np.einsum("bi,bij,bj->b", x, W, x)
            sigma += x[:, :, None] * x[:, None, :]
            x = np.einsum("bij,bj->bi", Acl, x)
    return total, sigma


def exact_oracle(spec: GameSpec, K, L):
    """Model-based ``(C(K, L), Sigma_{K,L})``."""
    _, c = game_value(spec, K, L)
    return c, state_correlation(spec, K, L)


def _one_point(costs, directions, radius):
    d = directions[0].size
    return (d / radius**2) * np.mean(costs[:, None, None] * directions, axis=0)


def est(
    spec: GameSpec,
    K,
    L,
    cfg: RolloutConfig,
    mode: str = "sampled",
    key=(),
    directions=None,
    oracle: Callable | None = None,
) -> GradSigmaEstimate:
    """Zeroth-order estimate of ``grad_L C(K, L)`` and of ``Sigma_{K,L}``.

    Parameters
    ----------
    spec : GameSpec
    K, L : array_like
    cfg : RolloutConfig
    mode : {"sampled", "exact_cost"}
    key : tuple of int
        Stream prefix; trajectory ``i`` uses the stream ``(cfg.seed, *key)``, index ``i``.
    directions : sequence of ndarray, optional
        Use these perturbations instead of sampling them.
    oracle : callable, optional
        ``oracle(K, L_hat) -> (cost, sigma)`` replacing the rollout.
    """
    K, L = spec.check(K, L)
    if mode not in ("sampled", "exact_cost"):
        raise ValueError("est supports the 'sampled' and 'exact_cost' modes")
    m = cfg.m_traj if directions is None else len(directions)
    pk = stream_key(cfg.seed, key)
    rngs = [stream(cfg.seed, index=i, philox_key=pk) for i in range(m)]
    if directions is None:
        U = np.stack([sample_sphere(L.shape, cfg.radius, r) for r in rngs])
    else:
        U = np.stack([as_matrix(u, "direction").reshape(L.shape) for u in directions])
    if oracle is None and mode == "exact_cost":
        oracle = lambda K_, L_: exact_oracle(spec, K_, L_)
    if oracle is not None:
        costs = np.empty(m)
        sig = np.zeros((spec.n_states, spec.n_states))
        for i in range(m):
            try:
                c, s = oracle(K, L + U[i])
            except InstabilityError as exc:
                raise EstimationError("perturbed pair is not stabilizing") from exc
            costs[i] = c
            sig = sig + np.asarray(s)
        sig = sig / m
    else:
        chol = _init_chol(spec, cfg)
        x0 = np.stack([chol @ r.standard_normal(spec.n_states) for r in rngs])
        Ks = np.broadcast_to(K, (m,) + K.shape)
        costs, sigmas = _batch_rollout(spec, Ks, L + U, x0, cfg.horizon)
        sig = sigmas.mean(axis=0)
    return GradSigmaEstimate(_one_point(costs, U, cfg.radius), sym(sig), m, costs, U)


def _regularized_inverse(sigma):
    if not np.all(np.isfinite(sigma)):
        raise EstimationError("state correlation estimate is not finite")
    n = sigma.shape[0]
    S = sym(sigma) + SIGMA_REG * np.trace(sigma) / n * np.eye(n)
    if min_eig(S) <= 0:
        raise EstimationError("state correlation estimate is singular")
    return np.linalg.inv(S)


def inner_ng(
    spec: GameSpec,
    K,
    L0,
    cfg: RolloutConfig,
    n_iter: int,
    alpha: float,
    variant: str = "NPG",
    mode: str = "sampled",
    key=(_INNER,),
) -> np.ndarray:
    """Gradient ascent on ``L`` for a fixed ``K``.

    PG: ``L <- L + alpha g``. NPG: ``L <- L + alpha g Sigma^{-1}`` with the
    correlation regularized by ``1e-8 tr(Sigma)/n``.

    Raises
    ------
    EstimationError
        The correlation estimate is unusable.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    K, L = spec.check(K, L0)
    L = L.copy()
    for tau in range(n_iter):
        if mode == "exact_grad":
            try:
                g = gradients(spec, K, L)[1]
                sigma = state_correlation(spec, K, L)
            except InstabilityError as exc:
                raise EstimationError("inner iterate is not stabilizing") from exc
        else:
            e = est(spec, K, L, cfg, mode, key=tuple(key) + (tau,))
            g, sigma = e.grad_hat, e.sigma_hat
        if variant == "NPG":
            g = g @ _regularized_inverse(sigma)
        L = L + alpha * g
    return L


@dataclass(frozen=True)
class ModelFreeStep:
    iteration: int
    K: np.ndarray
    L_hat: np.ndarray | None
    cost: float
    distance: float | None
    feasible: bool


@dataclass
class ModelFreeTrace:
    """Outer-loop record. ``status`` is ``"completed"`` or ``"left_feasible_set"``."""

    steps: list = field(default_factory=list)
    status: str = "completed"

    @property
    def final(self):
        return self.steps[-1] if self.steps else None


def _monitor(spec, K):
    """Exact ``C(K, L(K))`` or ``None`` when ``K`` is not game feasible."""
    try:
        L, P = best_response_L(spec, K)
    except (InfeasibleError, InstabilityError):
        return None
    return float(np.trace(P @ spec.Sigma0))


def outer_ng(
    spec: GameSpec,
    K0,
    cfg: RolloutConfig,
    n_outer: int,
    n_inner: int,
    eta: float,
    alpha: float,
    variant: str = "NPG",
    mode: str = "sampled",
    L0=None,
    K_ref=None,
) -> ModelFreeTrace:
    """Nested zeroth-order descent on ``K``.

    Each outer step perturbs ``K`` on the sphere, solves the inner problem
    with :func:`inner_ng` from ``L0`` for every perturbation, estimates the
    gradient and correlation from the resulting pairs, and takes
    ``K <- K - eta g`` (PG) or ``K <- K - eta g Sigma^{-1}`` (NPG).

    The trace stores the exact ``C(K_t, L(K_t))`` and, when ``K_ref`` is
    given, ``||K_t - K_ref||_F``.

    Raises
    ------
    InfeasibleError
        ``K0`` is not game feasible.
    EstimationError
        Propagated from the estimators.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    K = as_matrix(K0, "K0").copy()
    L_start = np.zeros((spec.D.shape[1], spec.n_states)) if L0 is None else as_matrix(L0, "L0")
    spec.check(K, L_start)
    if _monitor(spec, K) is None:
        raise InfeasibleError("K0 is not in the game feasible set")
    K_ref = None if K_ref is None else as_matrix(K_ref, "K_ref")
    trace = ModelFreeTrace()
    for t in range(n_outer + 1):
        c = _monitor(spec, K)
        dist = None if K_ref is None else float(np.linalg.norm(K - K_ref))
        if c is None:
            trace.steps.append(ModelFreeStep(t, K.copy(), None, float("nan"), dist, False))
            trace.status = "left_feasible_set"
            return trace
        if t == n_outer:
            trace.steps.append(ModelFreeStep(t, K.copy(), None, c, dist, True))
            break
        if mode == "exact_grad":
            L_hat = inner_ng(spec, K, L_start, cfg, n_inner, alpha, variant, mode)
            try:
                g = gradients(spec, K, L_hat)[0]
                sigma = state_correlation(spec, K, L_hat)
            except InstabilityError as exc:
                raise EstimationError("inner loop returned a destabilizing gain") from exc
        else:
            g, sigma, L_hat = _outer_estimate(spec, K, L_start, cfg, n_inner, alpha, variant, mode, t)
        trace.steps.append(ModelFreeStep(t, K.copy(), L_hat, c, dist, True))
        if variant == "NPG":
            g = g @ _regularized_inverse(sigma)
        K = K - eta * g
    return trace


def _outer_estimate(spec, K, L_start, cfg, n_inner, alpha, variant, mode, t):
    m = cfg.m_traj
    pk = stream_key(cfg.seed, (_OUTER_DIRECTION, t))
    V = np.stack([
        sample_sphere(K.shape, cfg.radius, stream(cfg.seed, index=i, philox_key=pk))
        for i in range(m)
    ])
    Ls = np.stack([
        inner_ng(spec, K + V[i], L_start, cfg, n_inner, alpha, variant, mode, key=(_INNER, t, i))
        for i in range(m)
    ])
    if mode == "exact_cost":
        costs = np.empty(m)
        sigma = np.zeros((spec.n_states, spec.n_states))
        for i in range(m):
            try:
                c, s = exact_oracle(spec, K + V[i], Ls[i])
            except InstabilityError as exc:
                raise EstimationError("perturbed pair is not stabilizing") from exc
            costs[i] = c
            sigma += s
        sigma /= m
    else:
        chol = _init_chol(spec, cfg)
        pk = stream_key(cfg.seed, (_OUTER_ROLLOUT, t))
        x0 = np.stack([
            chol @ stream(cfg.seed, index=i, philox_key=pk).standard_normal(spec.n_states)
            for i in range(m)
        ])
        costs, sigmas = _batch_rollout(spec, K + V, Ls, x0, cfg.horizon)
        sigma = sigmas.mean(axis=0)
    return _one_point(costs, V, cfg.radius), sym(sigma), Ls.mean(axis=0)
