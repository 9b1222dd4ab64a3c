"""The noisy action-generation model and its likelihood.

An action is the argmax of (R v)(a) + eps(a) with eps ~ N(0, I); the noise
covariance is fixed to the identity throughout (multiplicative scale is
carried by the sampler's working parameter instead).  The choice probability
is an orthant integral, estimated by Monte Carlo or, for small action sets,
deterministic quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from noisymdp.mdp import RMatrix, ValueFunction


@dataclass(frozen=True)
class Observation:
    """One (state, action) pair with its legal-action context.

    `action` is the row index of the chosen action within `legal_actions`;
    `r_matrix` has one row per legal action, in the same order.
    """

    state: object
    action: int
    legal_actions: tuple
    r_matrix: np.ndarray

    def __post_init__(self):
        rm = np.atleast_2d(np.asarray(self.r_matrix, dtype=float))
        labels = tuple(self.legal_actions)
        if rm.shape[0] != len(labels):
            raise ValueError("r_matrix row count must equal |legal_actions|")
        if not 0 <= self.action < len(labels):
            raise ValueError("action must index into the legal-action set")
        object.__setattr__(self, "r_matrix", rm)
        object.__setattr__(self, "legal_actions", labels)

    @property
    def num_actions(self) -> int:
        return self.r_matrix.shape[0]


@dataclass
class Dataset:
    """Ordered sequence of observations with a shared mode and column dimension."""

    observations: list
    mode: str
    dim: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("tabular", "basis"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        for obs in self.observations:
            if obs.r_matrix.shape[1] != self.dim:
                raise ValueError("observation column dimension inconsistent with dataset")

    def __len__(self) -> int:
        return len(self.observations)

    def dims(self) -> list[int]:
        """Per-observation legal-action counts M_t."""
        return [obs.num_actions for obs in self.observations]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            header = {"mode": self.mode, "dim": self.dim, **self.metadata}
            fh.write(json.dumps(header) + "\n")
            for t, obs in enumerate(self.observations):
                line = {
                    "t": t,
                    "state": obs.state,
                    "legal_actions": list(obs.legal_actions),
                    "action": obs.action,
                    "R": obs.r_matrix.tolist(),
                }
                fh.write(json.dumps(line) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            observations = []
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                rec = json.loads(raw)
                observations.append(Observation(
                    state=rec["state"],
                    action=rec["action"],
                    legal_actions=tuple(
                        tuple(a) if isinstance(a, list) else a
                        for a in rec["legal_actions"]
                    ),
                    r_matrix=np.asarray(rec["R"], dtype=float),
                ))
        mode = header.pop("mode")
        dim = header.pop("dim")
        return cls(observations, mode=mode, dim=dim, metadata=header)


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, ValueFunction) else np.asarray(v, dtype=float)


def _rows(obs_context) -> np.ndarray:
    if isinstance(obs_context, RMatrix):
        return obs_context.rows
    if isinstance(obs_context, Observation):
        return obs_context.r_matrix
    return np.atleast_2d(np.asarray(obs_context, dtype=float))


def sample_action(v, obs_context, rng: np.random.Generator):
    """Draw eps ~ N(0, I) and return (argmax of Rv + eps, eps).

    The noise vector is returned so invariance properties can be asserted
    per-draw under common random numbers.  Ties break to the lowest index.
    """
    rows = _rows(obs_context)
    vv = _values(v)
    if rows.shape[1] != vv.shape[0]:
        raise ValueError("value-function dimension does not match R matrix columns")
    eps = rng.standard_normal(rows.shape[0])
    action = int(np.argmax(rows @ vv + eps))
    return action, eps


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    std_error: float


QUADRATURE_MAX_ACTIONS = 3


def choice_probability(v, obs_context, action: int, method: str = "montecarlo",
                       n: int = 10_000,
                       rng: np.random.Generator | None = None) -> ProbabilityEstimate:
    """P(action maximizes Rv + eps) for eps ~ N(0, I).

    Monte Carlo gives an unbiased estimate with its standard error;
    quadrature (M <= 3 only) reduces the orthant integral to one dimension.
    """
    rows = _rows(obs_context)
    vv = _values(v)
    mu = rows @ vv
    m = mu.shape[0]
    if not 0 <= action < m:
        raise ValueError("action out of range")
    if method == "montecarlo":
        if n <= 0:
            raise ValueError("montecarlo estimate needs n >= 1")
        if rng is None:
            raise ValueError("montecarlo estimate needs an rng")
        eps = rng.standard_normal((n, m))
        hits = np.argmax(mu[None, :] + eps, axis=1) == action
        p = float(hits.mean())
        se = math.sqrt(max(p * (1.0 - p), 1.0 / n) / n)
        return ProbabilityEstimate(p, se)
    if method == "quadrature":
        if m > QUADRATURE_MAX_ACTIONS:
            raise ValueError(f"quadrature limited to M <= {QUADRATURE_MAX_ACTIONS}")
        others = np.delete(mu, action)

        def integrand(x):
            return (math.exp(-0.5 * (x - mu[action]) ** 2) / math.sqrt(2.0 * math.pi)
                    * float(np.prod(ndtr(x - others))))

        value, abserr = integrate.quad(integrand, -np.inf, np.inf, limit=200)
        return ProbabilityEstimate(float(value), float(abserr))
    raise ValueError(f"unknown method: {method!r}")


def transform_params(v, z1: float, z2: float, mode: str | None = None):
    """Scale/translate a value function: sqrt(z1) (v + z2 1) in tabular mode.

    Basis mode supports scaling only; requesting a translation there is an
    error because the basis likelihood is not translation invariant.
    """
    if z1 <= 0.0:
        raise ValueError("z1 must be positive")
    if mode is None:
        mode = v.mode if isinstance(v, ValueFunction) else "tabular"
    vv = _values(v)
    s = math.sqrt(z1)
    if mode == "tabular":
        out = s * (vv + z2)
    elif mode == "basis":
        if z2 != 0.0:
            raise ValueError("translation is not permitted in basis mode")
        out = s * vv
    else:
        raise ValueError(f"unknown mode: {mode!r}")
    if isinstance(v, ValueFunction):
        return ValueFunction(out, mode=mode)
    return out


@dataclass(frozen=True)
class LogLikelihoodEstimate:
    value: float
    std_error: float
    underflow: bool  # some per-observation estimate was exactly zero


def log_likelihood_mc(v, dataset: Dataset, n: int,
                      rng: np.random.Generator) -> LogLikelihoodEstimate:
    """Sum over observations of log Monte Carlo choice probabilities.

    Validation only; never used inside the sampler.  A zero estimate for any
    observation yields -inf with the underflow flag set.
    """
    mode = v.mode if isinstance(v, ValueFunction) else dataset.mode
    if mode != dataset.mode:
        raise ValueError("value-function mode does not match dataset mode")
    total = 0.0
    var = 0.0
    underflow = False
    for obs in dataset.observations:
        est = choice_probability(v, obs, obs.action, method="montecarlo", n=n, rng=rng)
        if est.value == 0.0:
            underflow = True
            total = -math.inf
            continue
        total += math.log(est.value)
        var += (est.std_error / est.value) ** 2  # delta method on log p
    return LogLikelihoodEstimate(total, math.sqrt(var), underflow)
