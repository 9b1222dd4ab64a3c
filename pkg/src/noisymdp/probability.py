"""Random-variate primitives used by the sampler.

Truncated univariate Gaussians, the sum-zero structured Gaussian prior,
inverse gamma draws and standard-normal CDF utilities.  All sampling takes an
explicit numpy Generator; RngStream defines the reproducibility contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from noisymdp.mdp import ValueFunction

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Switch from inverse-CDF to exponential-proposal rejection when the nearest
# truncation point is this many sd from the mean (the inverse CDF loses
# resolution once Phi saturates).
TAIL_SWITCH = 4.0


@dataclass(frozen=True)
class RngStream:
    """Seed plus stream id; identical pairs reproduce identical draws.

    Backed by the counter-based Philox generator, so chains and rollouts get
    independent streams by construction.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=np.uint64([self.seed, self.stream])))

    def child(self, index: int) -> "RngStream":
        """Derived stream for parallel work (e.g. one per chain)."""
        return RngStream(self.seed, self.stream * 65_537 + index + 1)


def std_normal_cdf(x: float) -> float:
    return float(ndtr(x))


def std_normal_logpdf(x: float) -> float:
    return -0.5 * x * x - LOG_SQRT_2PI


def _tail_reject(a: float, b: float, rng: np.random.Generator) -> float:
    # Robert (1995) exponential-proposal rejection for N(0,1) on [a, b], a > 0.
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential(1.0 / alpha)
        if z > b:
            continue
        if rng.random() <= math.exp(-0.5 * (z - alpha) ** 2):
            return z


def sample_truncated_normal(mean: float, sd: float, lower: float, upper: float,
                            rng: np.random.Generator) -> float:
    """One draw from N(mean, sd^2) restricted to [lower, upper].

    Either bound may be infinite.  Inverse-CDF in the body of the
    distribution, exponential-proposal rejection in far tails.
    """
    if sd <= 0.0:
        raise ValueError("sd must be positive")
    if not lower < upper:
        raise ValueError("truncation interval must satisfy lower < upper")
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    if a >= TAIL_SWITCH:
        x = _tail_reject(a, b, rng)
    elif b <= -TAIL_SWITCH:
        x = -_tail_reject(-b, -a, rng)
    else:
        lo = ndtr(a)
        hi = ndtr(b)
        x = float(ndtri(rng.uniform(lo, hi)))
        x = min(max(x, a), b)
    return mean + sd * x


@dataclass(frozen=True)
class SumZeroGaussianPrior:
    """N(0, kappa I_N) conditioned on the components summing to zero.

    On the first N-1 coordinates the implied covariance is
    kappa I - kappa/N 11^T, which is positive definite for finite kappa.
    kappa may be math.inf as a flat-prior sentinel; no draw exists then.
    """

    dimension: int
    kappa: float

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("sum-zero prior needs dimension >= 2")
        if not self.kappa > 0.0:
            raise ValueError("kappa must be positive")

    @property
    def is_proper(self) -> bool:
        return math.isfinite(self.kappa)


def sample_sum_zero_gaussian(prior: SumZeroGaussianPrior,
                             rng: np.random.Generator) -> ValueFunction:
    """Draw U ~ N(0, kappa I) and remove its mean so components sum to zero."""
    if not prior.is_proper:
        raise ValueError("cannot sample from the flat (kappa = inf) prior")
    u = rng.normal(0.0, math.sqrt(prior.kappa), size=prior.dimension)
    v = u - u.mean()
    v -= v.mean()  # second pass kills residual rounding
    return ValueFunction(v, mode="tabular", sum_zero=True)


@dataclass(frozen=True)
class InverseGammaParams:
    """Shape/scale of an IG(a, b) working-parameter prior; a = b = 0 is improper."""

    a: float
    b: float

    def __post_init__(self):
        if self.a < 0.0 or self.b < 0.0:
            raise ValueError("inverse gamma parameters must be non-negative")

    @property
    def improper(self) -> bool:
        return not (self.a > 0.0 and self.b > 0.0)


def sample_inverse_gamma(params: InverseGammaParams, rng: np.random.Generator) -> float:
    """Draw from IG(a, b), density proportional to x^(-a-1) exp(-b/x)."""
    if params.improper:
        raise ValueError("cannot sample from an improper inverse gamma prior")
    return float(params.b / rng.gamma(params.a))


def log_density_inverse_gamma(x: float, params: InverseGammaParams) -> float:
    """Normalized IG(a, b) log density (requires proper parameters)."""
    if params.improper:
        raise ValueError("improper inverse gamma has no normalized density")
    if x <= 0.0:
        return -math.inf
    a, b = params.a, params.b
    return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x
