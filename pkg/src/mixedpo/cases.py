"""Built-in benchmark instances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lqgame import GameSpec
from .plant import Plant

_A13 = np.array([[1.0, 0.0, -10.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
_B13 = np.array([[1.0, -10.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])

NONCONVEX_K1 = np.array([[1.0, 0.0, -1.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
NONCONVEX_K2 = np.array([[1.0, -2.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Case:
    """A named benchmark.

    Attributes
    ----------
    name : str
    time_domain : str
    A, B, Q, R, D : ndarray
    gamma : float or None
        ``None`` means the level is derived from the initial gain as
        ``(1 + gamma_slack) ||T(K0)||``.
    init_box : float
        Half-width of the box used to search for an initial gain.
    gamma_slack : float or None
    gains : dict
        Named gains that belong to the benchmark.
    """

    name: str
    time_domain: str
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    D: np.ndarray
    gamma: float | None
    init_box: float
    gamma_slack: float | None = None
    gains: dict = field(default_factory=dict)
    description: str = ""

    def plant(self, gamma: float | None = None) -> Plant:
        g = self.gamma if gamma is None else gamma
        if g is None:
            raise ValueError(f"{self.name} derives gamma from the initial gain; pass it explicitly")
        return Plant(self.A, self.B, self.Q, self.R, self.D, g)


def _case1():
    Q = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
    R = np.array([[5.0, -3.0, 0.0], [-3.0, 5.0, -2.0], [0.0, -2.0, 5.0]])
    return Case(
        "case1", "discrete", _A13, _B13, Q, R, np.eye(3), None, 0.25, 1e-5,
        description="3-state discrete benchmark, gamma set just above ||T(K0)||",
    )


def _case2():
    C = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0]])
    E = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    B = np.array([[1.0, 0.0], [0.0, 0.0]])
    p = Plant.from_output_matrices(np.diag([2.0, 0.0]), B, C, E, B, 10.0)
    return Case(
        "case2", "discrete", p.A, p.B, p.Q, p.R, p.D, 10.0, 3.0,
        description="2-state discrete benchmark with a continuum of stationary points",
    )


def _case3():
    C = np.vstack([np.zeros((3, 3)), [[1.0, 0.0, 2.0]]])
    E = np.vstack([np.eye(3), np.zeros((1, 3))])
    p = Plant.from_output_matrices(_A13, _B13, C, E, 0.5 * np.eye(3), 5.0)
    return Case(
        "case3", "continuous", p.A, p.B, p.Q, p.R, p.D, 5.0, 1.0,
        description="3-state continuous benchmark",
    )


def _nonconvex_discrete():
    I = np.eye(3)
    K1, K2 = NONCONVEX_K1, NONCONVEX_K2
    return Case(
        "nonconvex_discrete", "discrete", I, I, I, I, 0.1 * I, 1.0, 1.0,
        gains={"K1": K1, "K2": K2, "K3": 0.5 * (K1 + K2)},
        description="K1 and K2 are feasible, their midpoint is not",
    )


def _nonconvex_continuous():
    I = np.eye(3)
    K1, K2 = NONCONVEX_K1 + I, NONCONVEX_K2 + I
    return Case(
        "nonconvex_continuous", "continuous", I, I, I, I, 0.1 * I, 1.0, 1.0,
        gains={"K1": K1, "K2": K2, "K3": 0.5 * (K1 + K2)},
        description="continuous counterpart of nonconvex_discrete",
    )


def _nocoercivity():
    return Case(
        "nocoercivity_1d", "discrete",
        np.array([[2.75]]), np.array([[2.0]]), np.array([[1.0]]), np.array([[1.0]]),
        np.array([[0.1]]), 0.2101, 0.5,
        gains={"K": np.array([[1.2573]])},
        description="scalar plant whose cost stays finite at the feasible-set boundary",
    )


CASES = {
    c.name: c
    for c in (_case1(), _case2(), _case3(), _nonconvex_discrete(), _nonconvex_continuous(), _nocoercivity())
}

BUILTIN_NAMES = tuple(CASES) + ("custom",)


def get_case(name: str) -> Case:
    try:
        return CASES[name]
    except KeyError:
        raise KeyError(f"unknown case {name!r}; choose from {sorted(BUILTIN_NAMES)}") from None


def game_2state() -> GameSpec:
    """Small stable zero-sum game used by the model-free tests."""
    return GameSpec(
        A=np.array([[0.6, 0.3], [-0.3, 0.5]]),
        B=np.array([[1.0], [0.5]]),
        D=np.array([[0.3], [1.0]]),
        Q=np.eye(2),
        Ru=np.eye(1),
        Rv=9.0 * np.eye(1),
    )
