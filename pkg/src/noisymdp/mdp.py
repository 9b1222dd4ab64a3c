"""Finite-MDP representation and ground-truth solvers.

Tabular models with N states and M actions.  Value iteration and optimal
policy extraction serve as oracles for the inference stack; rollout
evaluation estimates the discounted return of an arbitrary policy.

Actions and states are 0-indexed throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12

SERIALIZATION_VERSION = 1


class ValueIterationError(RuntimeError):
    """Raised when value iteration fails to reach the requested tolerance.

    Carries the last iterate and its Bellman residual so callers can inspect
    how far the solve got.
    """

    def __init__(self, last_iterate: np.ndarray, residual: float, max_iters: int):
        self.last_iterate = last_iterate
        self.residual = residual
        super().__init__(
            f"value iteration did not converge in {max_iters} iterations "
            f"(residual {residual:.3e})"
        )


def _check_stochastic(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0.0) or np.any(rows > 1.0):
        raise ValueError(f"{what}: entries must lie in [0, 1]")
    sums = rows.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{what}: rows must sum to 1 (worst deviation {worst:.3e})")


@dataclass(frozen=True)
class TransitionModel:
    """Per-action row-stochastic transition matrices.

    kernels has shape (M, N, N); kernels[a, x, x'] = p(x' | x, a).  Inputs
    failing the row-sum check are rejected rather than renormalized.
    """

    kernels: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=float)
        if k.ndim != 3 or k.shape[1] != k.shape[2]:
            raise ValueError("kernels must have shape (M, N, N)")
        _check_stochastic(k, "TransitionModel")
        object.__setattr__(self, "kernels", k)

    @property
    def num_actions(self) -> int:
        return self.kernels.shape[0]

    @property
    def num_states(self) -> int:
        return self.kernels.shape[1]

    def to_json(self) -> str:
        doc = {
            "version": SERIALIZATION_VERSION,
            "N": self.num_states,
            "M": self.num_actions,
            "kernels": self.kernels.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TransitionModel":
        doc = json.loads(text)
        if doc.get("version") != SERIALIZATION_VERSION:
            raise ValueError(f"unsupported TransitionModel version: {doc.get('version')}")
        kernels = np.asarray(doc["kernels"], dtype=float)
        if kernels.shape != (doc["M"], doc["N"], doc["N"]):
            raise ValueError("kernel shape does not match declared N, M")
        return cls(kernels)


@dataclass(frozen=True)
class RMatrix:
    """Rows of transition probabilities (or basis features) for one state.

    Row i is p(. | x, action_labels[i]) in tabular mode, or the feature
    vector of the successor state in basis mode.
    """

    state: object
    rows: np.ndarray
    action_labels: tuple

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.shape[0] < 1:
            raise ValueError("RMatrix needs at least one legal action")
        if rows.shape[0] != len(self.action_labels):
            raise ValueError("row count must match number of action labels")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "action_labels", tuple(self.action_labels))

    @property
    def num_actions(self) -> int:
        return self.rows.shape[0]


SUM_ZERO_TOL = 1e-9


@dataclass(frozen=True)
class ValueFunction:
    """A value function, tabular (length N) or in basis coefficients (length K)."""

    values: np.ndarray
    mode: str = "tabular"
    sum_zero: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if self.mode not in ("tabular", "basis"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if not np.all(np.isfinite(v)):
            raise ValueError("value function entries must be finite")
        if self.sum_zero:
            if self.mode != "tabular":
                raise ValueError("sum-zero flag only applies to tabular mode")
            if abs(float(v.sum())) > SUM_ZERO_TOL:
                raise ValueError("sum-zero value function does not sum to zero")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RewardFunction:
    """State-only reward r(x)."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).ravel()
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        object.__setattr__(self, "r", r)


def bellman_update(model: TransitionModel, reward: RewardFunction, beta: float,
                   v: np.ndarray) -> np.ndarray:
    """One application of the Bellman operator T."""
    # kernels @ v has shape (M, N): continuation value per (action, state)
    cont = model.kernels @ np.asarray(v, dtype=float)
    return reward.r + beta * cont.max(axis=0)


def value_iteration(model: TransitionModel, reward: RewardFunction, beta: float,
                    tol: float = 1e-10, max_iters: int = 100_000) -> ValueFunction:
    """Solve the fixed point V = T(V) by successive approximation from V0 = 0.

    Returns V with ||T(V) - V||_inf <= tol.  T is a beta-contraction, so the
    iteration converges from any start; non-convergence within max_iters
    raises ValueIterationError carrying the last iterate.
    """
    if not (0.0 < beta < 1.0):
        raise ValueError("beta must lie in (0, 1)")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    v = np.zeros(model.num_states)
    residual = np.inf
    for _ in range(max_iters):
        v_next = bellman_update(model, reward, beta, v)
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual <= tol:
            return ValueFunction(v, mode="tabular")
    raise ValueIterationError(v, residual, max_iters)


def transition_matrix(model: TransitionModel, state: int,
                      legal_actions: Sequence[int] | None = None) -> RMatrix:
    """R_x: the matrix whose row i is p(. | x, i), restricted to legal actions.

    Rows appear in ascending action order.
    """
    if legal_actions is None:
        labels = list(range(model.num_actions))
    else:
        labels = sorted(set(int(a) for a in legal_actions))
        if not labels:
            raise ValueError("legal action set must be non-empty")
        if labels[0] < 0 or labels[-1] >= model.num_actions:
            raise ValueError("legal action out of range")
    rows = model.kernels[labels, state, :]
    return RMatrix(state=state, rows=rows, action_labels=labels)


def optimal_policy(v: ValueFunction, model: TransitionModel, state: int,
                   legal_actions: Sequence[int] | None = None) -> int:
    """argmax_a (R_x v)(a); ties broken by lowest action index."""
    if v.mode != "tabular":
        raise ValueError("optimal_policy requires a tabular value function")
    if len(v) != model.num_states:
        raise ValueError("value function length must equal the number of states")
    rm = transition_matrix(model, state, legal_actions)
    scores = rm.rows @ v.values
    return int(rm.action_labels[int(np.argmax(scores))])


@dataclass(frozen=True)
class RolloutEstimate:
    """Monte Carlo estimate of a discounted return, with its truncation bound."""

    estimate: float
    std_error: float
    truncation_bound: float


def evaluate_policy(model: TransitionModel, reward: RewardFunction, beta: float,
                    policy: Callable[[int], int], start_state: int,
                    num_rollouts: int, horizon: int,
                    rng_seed: int = 0) -> RolloutEstimate:
    """Estimate C_mu(x1), the expected discounted reward sum under `policy`.

    The infinite sum is truncated at `horizon`; the reported bound
    beta^horizon * ||r||_inf / (1 - beta) covers the neglected tail.
    Reproducible given rng_seed.
    """
    if not (0.0 < beta < 1.0):
        raise ValueError("beta must lie in (0, 1)")
    rng = np.random.Generator(np.random.Philox(key=np.uint64([rng_seed, 0])))
    r = reward.r
    returns = np.empty(num_rollouts)
    # Discounting matches the value-iteration fixed point: the start state's
    # reward enters undiscounted, each transition multiplies by beta.
    discounts = beta ** np.arange(horizon)
    n = model.num_states
    for k in range(num_rollouts):
        x = start_state
        rewards = np.empty(horizon)
        for t in range(horizon):
            rewards[t] = r[x]
            a = policy(x)
            x = int(rng.choice(n, p=model.kernels[a, x]))
        returns[k] = float(discounts @ rewards)
    bound = float(beta ** horizon * np.max(np.abs(r)) / (1.0 - beta))
    se = float(returns.std(ddof=1) / np.sqrt(num_rollouts)) if num_rollouts > 1 else 0.0
    return RolloutEstimate(float(returns.mean()), se, bound)
