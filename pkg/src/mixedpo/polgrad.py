"""Policy gradient, natural policy gradient and Gauss-Newton iterations.

All three methods keep every iterate inside the feasible set when the
stepsize obeys the rules in :func:`theorem_stepsize` (NPG and GN). Plain
policy gradient has no such guarantee and is run with optional
feasibility backtracking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    FeasibilityViolation,
    InfeasibleError,
    InstabilityError,
    NonConvergenceError,
    NumericalError,
    SearchFailure,
)
from .matlin import solve_clyap, solve_dlyap, sym
from .norms import hinf_bisect, hinf_grid, membership
from .plant import Plant, check_time_domain
from .riccati import RiccatiCertificate, solve_policy

COST_FORMS = ("J1_trace", "J2_logdet", "J3_trace_inv")
ALGORITHMS = ("PG", "NPG", "GN")
_ALIASES = {"GaussNewton": "GN", "gauss_newton": "GN"}


def default_cost_form(time_domain: str) -> str:
    return "J2_logdet" if time_domain == "discrete" else "J1_trace"


def _check_cost_form(cost_form, time_domain):
    if cost_form is None:
        return default_cost_form(time_domain)
    if cost_form not in COST_FORMS:
        raise ValueError(f"cost_form must be one of {COST_FORMS}")
    if time_domain == "continuous" and cost_form != "J1_trace":
        raise ValueError("continuous plants only support the J1_trace cost")
    return cost_form


def _evaluate(plant, K, time_domain, cert, P0=None):
    if cert is not None:
        return cert
    cert = solve_policy(plant, K, time_domain, P0=P0)
    if not cert.feasible:
        raise InfeasibleError("gain is outside the feasible set", margin=cert.brl_margin)
    return cert


def cost(
    plant: Plant,
    K,
    cost_form: str | None = None,
    time_domain: str = "discrete",
    cert: RiccatiCertificate | None = None,
) -> float:
    """Mixed design cost of a feasible gain.

    ``J1_trace``: ``tr(P D D^T)``.
    ``J2_logdet``: ``-gamma^2 log det(I - gamma^{-2} P D D^T)``.
    ``J3_trace_inv``: ``tr(D^T Pt D)``.

    All three coincide with the squared H2 norm as ``gamma -> inf``.
    """
    check_time_domain(time_domain)
    cost_form = _check_cost_form(cost_form, time_domain)
    K = plant.check_gain(K)
    cert = _evaluate(plant, K, time_domain, cert)
    P, D, g2 = cert.P, plant.D, plant.gamma**2
    if cost_form == "J1_trace":
        return float(np.trace(D.T @ P @ D))
    if cost_form == "J2_logdet":
        sign, logdet = np.linalg.slogdet(np.eye(plant.n_dist) - D.T @ P @ D / g2)
        if sign <= 0:
            raise InfeasibleError("log-det argument is not positive definite")
        return float(-g2 * logdet)
    return float(np.trace(D.T @ cert.P_tilde @ D))


@dataclass(frozen=True)
class GradientBundle:
    """Everything needed for one update at a gain ``K``.

    Attributes
    ----------
    E_K : ndarray
        Discrete: ``(R + B^T Pt B) K - B^T Pt A``. Continuous: ``R K - B^T P``.
    weight : ndarray
        The state-correlation matrix multiplying ``E_K`` in the gradient
        (``Delta_K`` for discrete plants, ``Lambda_K`` for continuous ones).
    grad : ndarray
        ``2 E_K weight``.
    cost : float
    cert : RiccatiCertificate
    """

    E_K: np.ndarray
    weight: np.ndarray
    grad: np.ndarray
    cost: float
    cert: RiccatiCertificate

    @property
    def P(self):
        return self.cert.P

    @property
    def Delta_K(self):
        return self.weight

    @property
    def Lambda_K(self):
        return self.weight


def gradient_bundle(
    plant: Plant,
    K,
    time_domain: str = "discrete",
    cost_form: str | None = None,
    cert: RiccatiCertificate | None = None,
    P0=None,
) -> GradientBundle:
    """Compute ``E_K``, the correlation matrix and the gradient at ``K``.

    Raises
    ------
    InstabilityError, InfeasibleError
        ``K`` is not in the feasible set.
    """
    check_time_domain(time_domain)
    cost_form = _check_cost_form(cost_form, time_domain)
    K = plant.check_gain(K)
    cert = _evaluate(plant, K, time_domain, cert, P0)
    P, D, g2 = cert.P, plant.D, plant.gamma**2
    A, B, R = plant.A, plant.B, plant.R
    n = plant.n_states
    Acl = A - B @ K
    J = cost(plant, K, cost_form, time_domain, cert)
    if time_domain == "continuous":
        E = R @ K - B.T @ P
        Ahat = Acl + plant.DDt @ P / g2
        Lam = solve_clyap(Ahat.T, plant.DDt)
        return GradientBundle(E, Lam, 2 * E @ Lam, J, cert)
    Pt = cert.P_tilde
    E = (R + B.T @ Pt @ B) @ K - B.T @ Pt @ A
    N = np.eye(n) - plant.DDt @ P / g2
    Abar = np.linalg.solve(N, Acl)
    if cost_form == "J1_trace":
        G = plant.DDt
    elif cost_form == "J2_logdet":
        G = D @ np.linalg.solve(np.eye(plant.n_dist) - D.T @ P @ D / g2, D.T)
    else:
        Ninv_D = np.linalg.solve(N, D)
        G = Ninv_D @ Ninv_D.T
    Delta = solve_dlyap(Abar.T, sym(G))
    return GradientBundle(E, Delta, 2 * E @ Delta, J, cert)


def theorem_stepsize(plant: Plant, kind: str, time_domain: str = "discrete", cert=None, K=None) -> float:
    """Largest stepsize covered by the feasibility and convergence guarantee.

    NPG: ``1 / (2 ||R + B^T Pt B||)`` (discrete, at the current iterate) or
    ``1 / (2 ||R||)`` (continuous). GN: ``1/2``. Plain PG has no such rule.
    """
    check_time_domain(time_domain)
    if kind == "GN":
        return 0.5
    if kind != "NPG":
        raise ValueError("no theorem stepsize exists for plain policy gradient")
    if time_domain == "continuous":
        return 1.0 / (2.0 * np.linalg.norm(plant.R, 2))
    if cert is None:
        cert = _evaluate(plant, plant.check_gain(K), time_domain, None)
    H = plant.R + plant.B.T @ cert.P_tilde @ plant.B
    return 1.0 / (2.0 * np.linalg.norm(H, 2))


def direction(plant: Plant, kind: str, bundle: GradientBundle, K, time_domain: str = "discrete"):
    """Search direction ``d`` with update ``K - eta d``."""
    if kind == "PG":
        return bundle.grad
    if kind == "NPG":
        return 2 * bundle.E_K
    if kind == "GN":
        if time_domain == "continuous":
            return 2 * np.linalg.solve(plant.R, bundle.E_K)
        H = plant.R + plant.B.T @ bundle.cert.P_tilde @ plant.B
        return 2 * np.linalg.solve(H, bundle.E_K)
    raise ValueError(f"kind must be one of {ALGORITHMS}")


@dataclass
class OptimizerConfig:
    """Settings for :func:`run_optimizer`.

    Attributes
    ----------
    kind : {"PG", "NPG", "GN"}
    stepsize : float or "theorem"
        ``"theorem"`` recomputes the guaranteed stepsize at every iterate
        (or once at ``K0`` when ``freeze_stepsize`` is set).
    cost_form : str, optional
        Defaults to ``J2_logdet`` (discrete) or ``J1_trace`` (continuous).
    tol : float
        With ``stop_rule="stationarity"`` stop when ``||E_K||_F^2 <= tol``
        (NPG, GN) or ``||grad||_F^2 <= tol`` (PG). With
        ``stop_rule="cost_gap"`` stop when ``J(K) - cost_ref <= tol``.
    max_iter : int
        Maximum number of recorded iterates. Zero gives an empty trace.
    backtracking : bool
        PG only: halve the stepsize until the candidate is feasible.
    hinf_every : int
        Record the H-infinity norm every this many iterations (0 disables).
    """

    kind: str = "NPG"
    stepsize: float | str = "theorem"
    cost_form: str | None = None
    tol: float = 1e-12
    max_iter: int = 10_000
    stop_rule: str = "stationarity"
    cost_ref: float | None = None
    freeze_stepsize: bool = False
    backtracking: bool = False
    max_backtracks: int = 60
    hinf_every: int = 0

    def __post_init__(self):
        self.kind = _ALIASES.get(self.kind, self.kind)
        if self.kind not in ALGORITHMS:
            raise ValueError(f"kind must be one of {ALGORITHMS}")
        if isinstance(self.stepsize, str):
            if self.stepsize != "theorem":
                raise ValueError("stepsize must be a positive number or 'theorem'")
            if self.kind == "PG":
                raise ValueError("plain policy gradient needs an explicit stepsize")
        elif not self.stepsize > 0:
            raise DomainError("stepsize must be positive")
        if self.stop_rule not in ("stationarity", "cost_gap"):
            raise ValueError("stop_rule must be 'stationarity' or 'cost_gap'")
        if self.stop_rule == "cost_gap" and self.cost_ref is None:
            raise ValueError("cost_gap stopping needs cost_ref")
        if self.max_iter < 0:
            raise DomainError("max_iter must be non-negative")


def step(
    plant: Plant,
    K,
    config: OptimizerConfig,
    time_domain: str = "discrete",
    bundle: GradientBundle | None = None,
    check: bool = True,
) -> np.ndarray:
    """Apply one update and return the new gain.

    Raises
    ------
    FeasibilityViolation
        ``check`` is set and the candidate leaves the feasible set. The
        candidate is attached to the exception.
    """
    K = plant.check_gain(K)
    if bundle is None:
        bundle = gradient_bundle(plant, K, time_domain, config.cost_form)
    eta = config.stepsize
    if eta == "theorem":
        eta = theorem_stepsize(plant, config.kind, time_domain, bundle.cert)
    K_new = K - eta * direction(plant, config.kind, bundle, K, time_domain)
    if check and not membership(plant, K_new, time_domain).in_set:
        raise FeasibilityViolation("update left the feasible set", candidate=K_new)
    return K_new


@dataclass(frozen=True)
class TraceStep:
    """One recorded iterate.

    ``grad_norm_sq`` is ``||E_K||_F^2`` (``||R K - B^T P||_F^2`` for
    continuous plants) and ``full_grad_norm_sq`` is ``||grad J||_F^2``.
    """

    iteration: int
    K: np.ndarray
    P: np.ndarray
    cost: float
    grad_norm_sq: float
    full_grad_norm_sq: float
    hinf: float | None
    brl_margin: float
    in_set: bool
    eta: float
    elapsed: float


@dataclass
class IterationTrace:
    """Recorded iterates of an optimizer run.

    ``status`` is ``"converged"``, ``"max_iter"``, ``"feasibility_violation"``
    or ``"not-run"`` (when ``max_iter`` is zero).
    """

    steps: list = field(default_factory=list)
    status: str = "not-run"
    event: str | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def final(self) -> TraceStep | None:
        return self.steps[-1] if self.steps else None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])


def run_optimizer(
    plant: Plant,
    K0,
    config: OptimizerConfig,
    time_domain: str = "discrete",
) -> IterationTrace:
    """Iterate ``K_{n+1} = K_n - eta d(K_n)`` from a feasible ``K0``.

    Every recorded iterate carries its cost, gradient norm, BRL margin and
    (optionally) its H-infinity norm.

    Raises
    ------
    InfeasibleError
        ``K0`` is not in the feasible set.
    """
    check_time_domain(time_domain)
    K = plant.check_gain(K0)
    trace = IterationTrace()
    if config.max_iter == 0:
        return trace
    start = membership(plant, K, time_domain)
    if not start.in_set:
        raise InfeasibleError(f"initial gain is not feasible ({start.reason})")
    bundle = gradient_bundle(plant, K, time_domain, config.cost_form, cert=start.riccati)
    frozen_eta = None
    if config.stepsize == "theorem" and config.freeze_stepsize:
        frozen_eta = theorem_stepsize(plant, config.kind, time_domain, bundle.cert)
    t0 = time.perf_counter()
    for n in range(config.max_iter):
        if frozen_eta is not None:
            eta = frozen_eta
        elif config.stepsize == "theorem":
            eta = theorem_stepsize(plant, config.kind, time_domain, bundle.cert)
        else:
            eta = float(config.stepsize)
        d = direction(plant, config.kind, bundle, K, time_domain)
        hinf = None
        if config.hinf_every and n % config.hinf_every == 0:
            hinf = hinf_bisect(plant, K, time_domain).value
        trace.steps.append(TraceStep(
            iteration=n,
            K=K.copy(),
            P=bundle.P.copy(),
            cost=bundle.cost,
            grad_norm_sq=float(np.sum(bundle.E_K**2)),
            full_grad_norm_sq=float(np.sum(bundle.grad**2)),
            hinf=hinf,
            brl_margin=bundle.cert.brl_margin,
            in_set=True,
            eta=eta,
            elapsed=time.perf_counter() - t0,
        ))
        if config.stop_rule == "stationarity":
            last = trace.steps[-1]
            done = (last.full_grad_norm_sq if config.kind == "PG" else last.grad_norm_sq) <= config.tol
        else:
            done = bundle.cost - config.cost_ref <= config.tol
        if done:
            trace.status = "converged"
            return trace
        if n == config.max_iter - 1:
            break
        backtracks = config.max_backtracks if (config.kind == "PG" and config.backtracking) else 0
        for attempt in range(backtracks + 1):
            K_new = K - eta * d
            try:
                bundle = gradient_bundle(plant, K_new, time_domain, config.cost_form, P0=bundle.P)
                break
            except (InstabilityError, InfeasibleError, NonConvergenceError, NumericalError):
                eta *= 0.5
        else:
            trace.status = "feasibility_violation"
            trace.event = f"iterate {n + 1} left the feasible set"
            return trace
        K = K_new
    trace.status = "max_iter"
    return trace


def find_feasible_init(
    plant: Plant,
    box_half_width: float,
    time_domain: str = "discrete",
    seed: int | None = 0,
    max_tries: int = 100_000,
    gamma_slack: float | None = None,
):
    """Draw gains uniformly from ``[-w, w]^{m x n}`` until one is feasible.

    With ``gamma_slack`` set, any stabilizing draw is accepted and the
    attenuation level is reset to ``(1 + gamma_slack) ||T(K0)||``.

    Returns
    -------
    K0 : ndarray
    plant : Plant
        The input plant, or a copy with the new ``gamma``.

    Raises
    ------
    SearchFailure
        No feasible gain within ``max_tries`` draws.
    """
    check_time_domain(time_domain)
    rng = np.random.default_rng(seed)
    shape = (plant.n_inputs, plant.n_states)
    for _ in range(max_tries):
        K = rng.uniform(-box_half_width, box_half_width, size=shape)
        if gamma_slack is None:
            if membership(plant, K, time_domain).in_set:
                return K, plant
            continue
        try:
            lower = hinf_grid(plant, K, time_domain, n_points=256).value
        except InstabilityError:
            continue
        tol = max(1e-12, 0.1 * gamma_slack * lower)
        norm = hinf_bisect(plant, K, time_domain, tol=tol).value + tol
        new = plant.with_gamma((1.0 + gamma_slack) * norm)
        if membership(new, K, time_domain).in_set:
            return K, new
    raise SearchFailure(f"no feasible gain found in {max_tries} draws")
