"""DA and PX-DA Gibbs samplers for the noisy-MDP choice model.

The chain alternates two blocks: (1) the latent utility vectors, one per
observation, drawn from truncated Gaussians (exactly by rejection, or via an
independent Metropolis-Hastings kernel with a Newton-refined Gaussian
proposal) and then pushed through a random scale/translation of the group
Lambda = R+ x R; (2) a closed-form conjugate draw of the value function and
the working parameters after a change of variable u = sqrt(z1) (v + z2 1).

Tabular mode uses the sum-zero prior and supports scale and translation
moves; basis mode is unconstrained and supports scaling only.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.special import log_ndtr, ndtr, ndtri

from noisymdp.choice import Dataset
from noisymdp.mdp import ValueFunction
from noisymdp.probability import (
    InverseGammaParams,
    RngStream,
    sample_inverse_gamma,
    sample_truncated_normal,
)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class RankDeficiencyError(RuntimeError):
    """Stacked design matrix has rank-deficient normal equations."""


# ---------------------------------------------------------------------------
# Transformation group
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformParams:
    """Scale z1 > 0 and translation z2 of the augmented-data group."""

    z1: float
    z2: float = 0.0

    def __post_init__(self):
        if not self.z1 > 0.0:
            raise ValueError("z1 must be positive")


def group_phi(z: TransformParams, y: np.ndarray) -> np.ndarray:
    """The group action y -> y/z1 - z2 1 (abstract parameterization)."""
    return np.asarray(y, dtype=float) / z.z1 - z.z2


def compose(z_tilde: TransformParams, z: TransformParams) -> TransformParams:
    """Group composition: phi_{z_tilde} o phi_z = phi_{compose(z_tilde, z)}."""
    return TransformParams(z_tilde.z1 * z.z1, z_tilde.z2 + z.z2 / z_tilde.z1)


def invert(z: TransformParams) -> TransformParams:
    return TransformParams(1.0 / z.z1, -z.z1 * z.z2)


def log_jacobian(z: TransformParams, dims: Sequence[int]) -> float:
    """log of the Jacobian determinant for augmented data of sizes M_t.

    The executable transform scales utilities by sqrt(z1) (see
    apply_transform), hence the exponent -(sum M_t)/2.
    """
    return -0.5 * float(sum(dims)) * math.log(z.z1)


@dataclass
class AugmentedData:
    """Latent utility vectors w_1..w_T, one per observation."""

    w: list

    def __post_init__(self):
        self.w = [np.asarray(w_t, dtype=float).ravel() for w_t in self.w]

    def satisfies_truncation(self, actions: Sequence[int]) -> bool:
        """Each w_t must be maximized at the observed action's index."""
        for w_t, a_t in zip(self.w, actions):
            if w_t[a_t] < np.max(w_t):
                return False
        return True


def apply_transform(w: AugmentedData, z: TransformParams,
                    direction: str = "forward") -> AugmentedData:
    """Operational transform of the latent utilities.

    forward: w_t -> w_t / sqrt(z1) - z2 1 (undo a scale/translation);
    inverse: w_t -> sqrt(z1) (w_t + z2 1), the form used at the end of the
    sampler's first step.  Scale acts as sqrt(z1) on utilities, matching a
    z1-fold scaling of the noise covariance.
    """
    s = math.sqrt(z.z1)
    if direction == "forward":
        return AugmentedData([w_t / s - z.z2 for w_t in w.w])
    if direction == "inverse":
        return AugmentedData([s * (w_t + z.z2) for w_t in w.w])
    raise ValueError(f"unknown direction: {direction!r}")


# ---------------------------------------------------------------------------
# Configuration and chain state
# ---------------------------------------------------------------------------

MOVES = ("none", "scale", "translate", "scale+translate")


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "tabular"
    moves: str = "scale+translate"
    kappa: float = 2500.0
    ig: InverseGammaParams = field(default_factory=lambda: InverseGammaParams(1.0, 1.0))
    iterations: int = 10_000
    burn_in: int = 2_500
    thinning: int = 1
    step1: str = "mh"
    mh_newton_iters: int = 20
    mh_newton_tol: float = 1e-9
    seed: int = 0
    init_v: tuple | None = None  # optional starting value function

    def __post_init__(self):
        if self.mode not in ("tabular", "basis"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.moves not in MOVES:
            raise ValueError(f"unknown moves: {self.moves!r}")
        if self.has_translate and self.mode != "tabular":
            raise ValueError("translation moves are only valid in tabular mode")
        if self.ig.improper and not self.has_scale:
            raise ValueError("an improper inverse gamma prior requires the scale move")
        if not self.kappa > 0.0:
            raise ValueError("kappa must be positive (may be inf)")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.step1 not in ("exact", "mh"):
            raise ValueError(f"unknown step1 kind: {self.step1!r}")

    @property
    def has_scale(self) -> bool:
        return "scale" in self.moves

    @property
    def has_translate(self) -> bool:
        return "translate" in self.moves

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "moves": self.moves,
            "kappa": self.kappa,
            "ig_a": self.ig.a,
            "ig_b": self.ig.b,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thinning": self.thinning,
            "step1": self.step1,
            "mh_newton_iters": self.mh_newton_iters,
            "mh_newton_tol": self.mh_newton_tol,
            "seed": self.seed,
            "init_v": list(self.init_v) if self.init_v is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerConfig":
        return cls(
            mode=doc["mode"],
            moves=doc["moves"],
            kappa=float(doc["kappa"]),
            ig=InverseGammaParams(float(doc["ig_a"]), float(doc["ig_b"])),
            iterations=int(doc["iterations"]),
            burn_in=int(doc["burn_in"]),
            thinning=int(doc["thinning"]),
            step1=doc["step1"],
            mh_newton_iters=int(doc["mh_newton_iters"]),
            mh_newton_tol=float(doc["mh_newton_tol"]),
            seed=int(doc["seed"]),
            init_v=tuple(doc["init_v"]) if doc.get("init_v") is not None else None,
        )


@dataclass
class ChainState:
    v: ValueFunction
    w: AugmentedData
    iteration: int = 0


# ---------------------------------------------------------------------------
# Step 1: latent utilities
# ---------------------------------------------------------------------------

def _log_pu(x: float, mu_chosen: float, mu_others: np.ndarray) -> float:
    # unnormalized log marginal of the winning utility:
    # log N(x; mu_chosen, 1) + sum_j log Phi(x - mu_j), constants dropped
    d = x - mu_chosen
    return -0.5 * d * d + float(np.sum(log_ndtr(x - mu_others)))


def mh_proposal_params(mu: np.ndarray, chosen: int,
                       newton_iters: int = 20, newton_tol: float = 1e-9):
    """Gaussian approximation (m, s^2) to the winning-utility marginal.

    Merges competitor CDF factors into the Gaussian whenever the competitor
    mean exceeds the running mean (processing competitors in descending
    order), then refines by Newton-Raphson on the log density.  Returns
    (m, s2, fell_back); fell_back marks a diverged refinement, in which case
    the pre-refinement values are returned.
    """
    mu = np.asarray(mu, dtype=float)
    mu_others = np.delete(mu, chosen)
    m = float(mu[chosen])
    prec = 1.0
    if mu_others.size:
        for mu_i in -np.sort(-mu_others):
            if mu_i <= m:
                break  # sorted descending: remaining factors merge to 1
            m = (m * prec + mu_i) / (prec + 1.0)
            prec += 1.0
    m0, s20 = m, 1.0 / prec
    if mu_others.size == 0:
        return m0, s20, False
    x = m0
    converged = False
    for _ in range(newton_iters):
        t = x - mu_others
        ratio = np.exp(-0.5 * t * t - LOG_SQRT_2PI - log_ndtr(t))  # phi/Phi
        grad = -(x - mu[chosen]) + float(ratio.sum())
        curv = -1.0 + float(np.sum(-t * ratio - ratio * ratio))
        if not (math.isfinite(grad) and curv < 0.0):
            return m0, s20, True
        x -= grad / curv
        if not math.isfinite(x):
            return m0, s20, True
        if abs(grad) < newton_tol:
            converged = True
            break
    if not converged:
        # final curvature is still usable; report the last iterate
        pass
    t = x - mu_others
    ratio = np.exp(-0.5 * t * t - LOG_SQRT_2PI - log_ndtr(t))
    curv = -1.0 + float(np.sum(-t * ratio - ratio * ratio))
    if curv >= 0.0 or not math.isfinite(curv):
        return m0, s20, True
    return float(x), -1.0 / curv, False


def _sample_upper_truncated(mu: np.ndarray, upper: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Vectorized draws from N(mu_j, 1) truncated to (-inf, upper]."""
    b = upper - mu
    out = np.empty_like(b)
    body = b > -4.0
    if np.any(body):
        bb = b[body]
        out[body] = np.minimum(ndtri(rng.uniform(0.0, ndtr(bb))), bb)
    for idx in np.flatnonzero(~body):
        out[idx] = sample_truncated_normal(0.0, 1.0, -np.inf, float(b[idx]), rng)
    return mu + out


def exact_step_w(mu: np.ndarray, chosen: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection draw from the truncated Gaussian of one observation.

    Samples the winning utility from its exact marginal by accepting
    N(mu_chosen, 1) proposals with probability prod_j Phi(x - mu_j); practical
    for small action sets only.
    """
    mu = np.asarray(mu, dtype=float)
    mu_others = np.delete(mu, chosen)
    while True:
        x = rng.normal(mu[chosen], 1.0)
        if math.log(rng.random()) <= float(np.sum(log_ndtr(x - mu_others))):
            break
    w = np.empty(mu.shape[0])
    w[chosen] = x
    if mu_others.size:
        others = _sample_upper_truncated(mu_others, x, rng)
        w[np.arange(mu.shape[0]) != chosen] = others
    return w


# Defensive mixture for the independence proposal: a small wide component
# bounds the importance ratio p/q, so the chain cannot wedge on a current
# point that sits in the target's Gaussian tail (where the narrow Newton
# proposal is far lighter than the target).
DEFENSIVE_WEIGHT = 0.05
DEFENSIVE_SCALE = 5.0


def _log_q_mixture(x, m, s2):
    """Log density of the defensive two-component Gaussian proposal."""
    d2 = (x - m) ** 2
    narrow = -0.5 * d2 / s2 - 0.5 * np.log(s2)
    s2w = s2 * DEFENSIVE_SCALE ** 2
    wide = -0.5 * d2 / s2w - 0.5 * np.log(s2w)
    return np.logaddexp(math.log1p(-DEFENSIVE_WEIGHT) + narrow,
                        math.log(DEFENSIVE_WEIGHT) + wide)


def mh_step_w(w_t: np.ndarray, mu: np.ndarray, chosen: int,
              rng: np.random.Generator, config: SamplerConfig):
    """One independent-MH update of an observation's utility vector.

    Proposes the winning utility from the Gaussian approximation (with a
    defensive wide component), accepts in log space, then refreshes the
    losing utilities from their exact truncated conditionals.  Returns
    (new w_t, accepted).
    """
    mu = np.asarray(mu, dtype=float)
    m_count = mu.shape[0]
    mu_others = np.delete(mu, chosen)
    if mu_others.size == 0:
        # single action: the target is exactly N(mu, 1), draw it directly
        return np.array([mu[chosen] + rng.standard_normal()]), True
    m, s2, _ = mh_proposal_params(mu, chosen, config.mh_newton_iters, config.mh_newton_tol)
    wc = float(w_t[chosen])
    sd = math.sqrt(s2)
    if rng.random() < DEFENSIVE_WEIGHT:
        sd *= DEFENSIVE_SCALE
    prop = m + sd * rng.standard_normal()
    log_alpha = (_log_pu(prop, mu[chosen], mu_others)
                 - _log_pu(wc, mu[chosen], mu_others)
                 + float(_log_q_mixture(wc, m, s2))
                 - float(_log_q_mixture(prop, m, s2)))
    accepted = log_alpha >= 0.0 or math.log(rng.random()) < log_alpha
    wc_new = prop if accepted else wc
    w = np.empty(m_count)
    w[chosen] = wc_new
    if mu_others.size:
        w[np.arange(m_count) != chosen] = _sample_upper_truncated(mu_others, wc_new, rng)
    return w, accepted


@dataclass
class Step1Result:
    w_prime: AugmentedData
    z1: float
    z2: float
    accepted: np.ndarray  # per-observation MH acceptance flags


class _Step1Workspace:
    """Flat index structures for updating all observations in one sweep."""

    def __init__(self, dataset: Dataset):
        dims = dataset.dims()
        self.num_obs = len(dims)
        offsets = np.concatenate([[0], np.cumsum(dims)]).astype(np.intp)
        self.offsets = offsets
        self.chosen_flat = np.array(
            [offsets[t] + obs.action for t, obs in enumerate(dataset.observations)],
            dtype=np.intp)
        others, seg = [], []
        for t, obs in enumerate(dataset.observations):
            for j in range(dims[t]):
                if j != obs.action:
                    others.append(offsets[t] + j)
                    seg.append(t)
        self.others_flat = np.asarray(others, dtype=np.intp)
        self.seg = np.asarray(seg, dtype=np.intp)
        self.r_stack = np.vstack([obs.r_matrix for obs in dataset.observations])
        max_m = max(dims)
        pad = np.full((self.num_obs, max(max_m - 1, 1)), -1, dtype=np.intp)
        fill = np.zeros(self.num_obs, dtype=np.intp)
        for flat_idx, t in zip(others, seg):
            pad[t, fill[t]] = flat_idx
            fill[t] += 1
        self.others_pad = pad


def _get_workspace(dataset: Dataset) -> _Step1Workspace:
    ws = dataset.__dict__.get("_step1_workspace")
    if ws is None:
        ws = _Step1Workspace(dataset)
        dataset.__dict__["_step1_workspace"] = ws
    return ws


def _batch_proposal_params(mu_flat, ws: _Step1Workspace, newton_iters: int,
                           newton_tol: float):
    """Vectorized mh_proposal_params over all observations at once."""
    mu_c = mu_flat[ws.chosen_flat]
    mu_oth = mu_flat[ws.others_flat]
    seg = ws.seg
    num = ws.num_obs

    # factor-merging initialization on descending competitor means
    oth_pad = np.where(ws.others_pad >= 0,
                       mu_flat[np.clip(ws.others_pad, 0, None)], -np.inf)
    oth_sorted = -np.sort(-oth_pad, axis=1)
    m = mu_c.astype(float).copy()
    prec = np.ones(num)
    for i in range(oth_sorted.shape[1]):
        col = oth_sorted[:, i]
        merge = col > m
        if not merge.any():
            break
        m = np.where(merge, (m * prec + col) / (prec + 1.0), m)
        prec = prec + merge
    m0, s20 = m, 1.0 / prec

    # Newton refinement of the mode, frozen per-row on divergence
    x = m0.copy()
    fallback = np.zeros(num, dtype=bool)
    converged = np.zeros(num, dtype=bool)
    curv = -np.ones(num)
    for _ in range(newton_iters):
        active = ~(fallback | converged)
        if not active.any():
            break
        t_flat = x[seg] - mu_oth
        ratio = np.exp(-0.5 * t_flat * t_flat - LOG_SQRT_2PI - log_ndtr(t_flat))
        grad = -(x - mu_c) + np.bincount(seg, weights=ratio, minlength=num)
        curv = -1.0 + np.bincount(seg, weights=-t_flat * ratio - ratio * ratio,
                                  minlength=num)
        bad = active & (~np.isfinite(grad) | (curv >= 0.0))
        fallback |= bad
        upd = active & ~bad
        x = np.where(upd, x - grad / np.where(curv < 0.0, curv, -1.0), x)
        nonfin = upd & ~np.isfinite(x)
        fallback |= nonfin
        x = np.where(nonfin, m0, x)
        converged |= upd & (np.abs(grad) < newton_tol)
    t_flat = x[seg] - mu_oth
    ratio = np.exp(-0.5 * t_flat * t_flat - LOG_SQRT_2PI - log_ndtr(t_flat))
    curv = -1.0 + np.bincount(seg, weights=-t_flat * ratio - ratio * ratio,
                              minlength=num)
    usable = ~fallback & np.isfinite(curv) & (curv < 0.0)
    m_fin = np.where(usable, x, m0)
    s2_fin = np.where(usable, -1.0 / np.where(curv < 0.0, curv, -1.0), s20)
    return m_fin, s2_fin, mu_c, mu_oth


def _batch_log_pu(x, mu_c, mu_oth, seg, num):
    d = x - mu_c
    tails = np.bincount(seg, weights=log_ndtr(x[seg] - mu_oth), minlength=num)
    return -0.5 * d * d + tails


def _batch_refresh_losers(wc, mu_oth, seg, rng):
    """Truncated draws w_j ~ N(mu_j, 1) on (-inf, w_chosen] for all losers."""
    b = wc[seg] - mu_oth
    out = np.empty_like(b)
    body = b > -4.0
    if body.any():
        bb = b[body]
        out[body] = np.minimum(ndtri(rng.uniform(0.0, ndtr(bb))), bb)
    for idx in np.flatnonzero(~body):
        out[idx] = sample_truncated_normal(0.0, 1.0, -np.inf, float(b[idx]), rng)
    return mu_oth + out


def _mh_step1_batch(state: ChainState, dataset: Dataset, config: SamplerConfig,
                    rng: np.random.Generator):
    """One independent-MH sweep over every observation, vectorized.

    Distributionally identical to looping mh_step_w over observations; only
    the order in which random numbers are consumed differs.
    """
    ws = _get_workspace(dataset)
    num = ws.num_obs
    mu_flat = ws.r_stack @ state.v.values
    m, s2, mu_c, mu_oth = _batch_proposal_params(
        mu_flat, ws, config.mh_newton_iters, config.mh_newton_tol)
    wc = np.array([state.w.w[t][obs.action]
                   for t, obs in enumerate(dataset.observations)])
    has_comp = np.bincount(ws.seg, minlength=num) > 0
    sd = np.sqrt(s2)
    wide = (rng.random(num) < DEFENSIVE_WEIGHT) & has_comp
    sd = np.where(wide, sd * DEFENSIVE_SCALE, sd)
    prop = m + sd * rng.standard_normal(num)
    log_alpha = (_batch_log_pu(prop, mu_c, mu_oth, ws.seg, num)
                 - _batch_log_pu(wc, mu_c, mu_oth, ws.seg, num)
                 + _log_q_mixture(wc, m, s2)
                 - _log_q_mixture(prop, m, s2))
    accepted = (log_alpha >= 0.0) | (np.log(rng.random(num)) < log_alpha)
    # single-action observations are exact Gibbs draws from N(mu, 1)
    accepted |= ~has_comp
    wc_new = np.where(accepted, prop, wc)
    w_flat = np.empty(ws.offsets[-1])
    w_flat[ws.chosen_flat] = wc_new
    if ws.others_flat.size:
        w_flat[ws.others_flat] = _batch_refresh_losers(wc_new, mu_oth, ws.seg, rng)
    w_new = [w_flat[ws.offsets[t]:ws.offsets[t + 1]] for t in range(num)]
    return w_new, accepted


def step1(state: ChainState, dataset: Dataset, config: SamplerConfig,
          rng: np.random.Generator) -> Step1Result:
    """Sample working parameters and latent utilities; return transformed w'.

    Improper working priors are not drawn from: the scale (translation)
    defaults to 1 (0) in that case, per the improper-prior rule.
    """
    z1 = 1.0
    z2 = 0.0
    if config.has_scale and not config.ig.improper:
        z1 = sample_inverse_gamma(config.ig, rng)
    if config.has_translate and math.isfinite(config.kappa):
        z2 = rng.normal(0.0, math.sqrt(config.kappa / dataset.dim))
    if config.step1 == "mh" and len(dataset):
        w_new, accepted = _mh_step1_batch(state, dataset, config, rng)
    else:
        v = state.v.values
        w_new = []
        accepted = np.zeros(len(dataset), dtype=bool)
        for t, obs in enumerate(dataset.observations):
            mu = obs.r_matrix @ v
            w_t = exact_step_w(mu, obs.action, rng)
            accepted[t] = True
            w_new.append(w_t)
    w_prime = apply_transform(AugmentedData(w_new), TransformParams(z1, z2), "inverse")
    return Step1Result(w_prime, z1, z2, accepted)


# ---------------------------------------------------------------------------
# Step 2: conjugate update of (v, z1, z2)
# ---------------------------------------------------------------------------

def _design(dataset: Dataset, config: SamplerConfig):
    """Stacked design matrix and prior covariance for the u parameterization.

    Returns (X, prior_cov, prior_prec).  In tabular mode without a
    translation move the free parameters are the first N-1 components of v,
    reached through the sum-zero embedding B = [I; -1^T].
    """
    r_stack = (np.vstack([obs.r_matrix for obs in dataset.observations])
               if len(dataset) else np.zeros((0, dataset.dim)))
    n_dim = dataset.dim
    kappa = config.kappa
    finite = math.isfinite(kappa)
    if config.mode == "tabular" and not config.has_translate:
        p = n_dim - 1
        b_embed = np.vstack([np.eye(p), -np.ones((1, p))])
        x = r_stack @ b_embed
        prior_cov = kappa * (np.eye(p) - np.ones((p, p)) / n_dim) if finite else None
        prior_prec = (np.eye(p) + np.ones((p, p))) / kappa if finite else np.zeros((p, p))
    else:
        p = n_dim
        x = r_stack
        prior_cov = kappa * np.eye(p) if finite else None
        prior_prec = (np.eye(p) / kappa) if finite else np.zeros((p, p))
    return x, prior_cov, prior_prec


def _step2_cache(dataset: Dataset, config: SamplerConfig) -> dict:
    """Design matrix and factorizations that are constant along a chain."""
    key = (config.mode, config.moves, config.kappa)
    caches = dataset.__dict__.setdefault("_step2_caches", {})
    cache = caches.get(key)
    if cache is not None:
        return cache
    x, prior_cov, prior_prec = _design(dataset, config)
    p = x.shape[1]
    cache = {"x": x, "prior_cov": prior_cov, "prior_prec": prior_prec, "p": p}
    if len(dataset) == 0:
        if prior_cov is not None:
            cache["chol_prior"] = cholesky(prior_cov, lower=True)
    else:
        gram = x.T @ x
        try:
            cache["gram_f"] = cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(
                f"normal equations are rank deficient (p={p}): {exc}") from exc
        if math.isfinite(config.kappa):
            gram_inv = cho_solve(cache["gram_f"], np.eye(p))
            cache["h_f"] = cho_factor(prior_cov + gram_inv)
        prec_post = prior_prec + gram
        try:
            cache["post_f"] = cho_factor(prec_post)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(
                "posterior precision not positive definite") from exc
        cache["upper"] = cholesky(prec_post, lower=False)
    caches[key] = cache
    return cache


def step2(w_prime: AugmentedData, dataset: Dataset, config: SamplerConfig,
          rng: np.random.Generator):
    """Joint conjugate draw of (v, z1, z2) and recovery of the utilities.

    Works in u = sqrt(z1)(v + z2 1) (tabular with translation) or the
    equivalent free parameterization, where the prior is N(0, kappa z1 I) and
    the likelihood Gaussian with covariance z1 I.  Returns (v, z1, z2, w).
    """
    w_tilde = (np.concatenate([w_t for w_t in w_prime.w])
               if w_prime.w else np.zeros(0))
    n_obs = w_tilde.shape[0]
    cache = _step2_cache(dataset, config)
    x, p = cache["x"], cache["p"]

    if n_obs == 0:
        if not math.isfinite(config.kappa):
            raise ValueError("prior-only sampling requires finite kappa")
        if config.has_scale:
            z1 = sample_inverse_gamma(config.ig, rng)
        else:
            z1 = 1.0
        theta = math.sqrt(z1) * (cache["chol_prior"] @ rng.standard_normal(p))
    else:
        xtw = x.T @ w_tilde
        u_ls = cho_solve(cache["gram_f"], xtw)
        ssr = float(w_tilde @ w_tilde - xtw @ u_ls)
        if math.isfinite(config.kappa):
            h = float(u_ls @ cho_solve(cache["h_f"], u_ls))
        else:
            h = 0.0
        if config.has_scale:
            post = InverseGammaParams(config.ig.a + 0.5 * n_obs,
                                      config.ig.b + 0.5 * ssr + 0.5 * h)
            z1 = sample_inverse_gamma(post, rng)
        else:
            z1 = 1.0
        mean = cho_solve(cache["post_f"], xtw)
        # theta | z1 ~ N(mean, z1 * prec_post^-1); draw via the upper factor
        noise = np.linalg.solve(cache["upper"], rng.standard_normal(p))
        theta = mean + math.sqrt(z1) * noise

    s = math.sqrt(z1)
    if config.mode == "tabular" and config.has_translate:
        z2 = float(theta.mean()) / s
        v_vals = (theta - theta.mean()) / s
        v_vals = v_vals - v_vals.mean()
        v = ValueFunction(v_vals, mode="tabular", sum_zero=True)
    elif config.mode == "tabular":
        z2 = 0.0
        v_free = theta / s
        v_vals = np.concatenate([v_free, [-v_free.sum()]])
        v_vals = v_vals - v_vals.mean()
        v = ValueFunction(v_vals, mode="tabular", sum_zero=True)
    else:
        z2 = 0.0
        v = ValueFunction(theta / s, mode="basis")
    w = apply_transform(w_prime, TransformParams(z1, z2), "forward")
    return v, z1, z2, w


def pxda_iteration(state: ChainState, dataset: Dataset, config: SamplerConfig,
                   rng: np.random.Generator):
    """One full sweep: step 1 then step 2.  Returns (new state, acceptance flags).

    With moves="none" this is exactly the standard DA iteration.
    """
    res = step1(state, dataset, config, rng)
    v, _, _, w = step2(res.w_prime, dataset, config, rng)
    return ChainState(v, w, state.iteration + 1), res.accepted


# ---------------------------------------------------------------------------
# Chain driver and stored draws
# ---------------------------------------------------------------------------

@dataclass
class PosteriorSamples:
    """Thinned post-burn-in value-function draws with chain metadata."""

    draws: np.ndarray  # (L, dim)
    iters: np.ndarray  # iteration number of each stored draw
    mode: str
    acceptance: np.ndarray  # per-observation MH acceptance rates
    config: dict
    wall_time: float = 0.0
    divergence_warning: bool = False

    def __len__(self) -> int:
        return self.draws.shape[0]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def save(self, path) -> None:
        # floats carry 17 significant digits so files round-trip exactly
        def fmt(x):
            return format(float(x), ".17g")

        with open(path, "w") as fh:
            head = {"config": self.config, "mode": self.mode,
                    "wall_time": self.wall_time,
                    "divergence_warning": self.divergence_warning}
            fh.write(json.dumps(head) + "\n")
            for it, v in zip(self.iters, self.draws):
                fh.write('{"iter":%d,"v":[%s]}\n' % (it, ",".join(fmt(x) for x in v)))
            tail = {"acceptance": [float(fmt(a)) for a in self.acceptance]}
            fh.write(json.dumps(tail) + "\n")

    @classmethod
    def load(cls, path) -> "PosteriorSamples":
        with open(path) as fh:
            head = json.loads(fh.readline())
            iters, draws, acceptance = [], [], []
            for raw in fh:
                rec = json.loads(raw)
                if "acceptance" in rec:
                    acceptance = rec["acceptance"]
                else:
                    iters.append(rec["iter"])
                    draws.append(rec["v"])
        return cls(
            draws=np.asarray(draws, dtype=float),
            iters=np.asarray(iters, dtype=int),
            mode=head["mode"],
            acceptance=np.asarray(acceptance, dtype=float),
            config=head["config"],
            wall_time=float(head.get("wall_time", 0.0)),
            divergence_warning=bool(head.get("divergence_warning", False)),
        )


def initial_state(dataset: Dataset, config: SamplerConfig) -> ChainState:
    """Feasible starting point: v from config (default 0), w(a_t)=1 else 0."""
    if config.init_v is not None:
        v0 = np.asarray(config.init_v, dtype=float)
        if config.mode == "tabular":
            v = ValueFunction(v0 - v0.mean(), mode="tabular", sum_zero=True)
        else:
            v = ValueFunction(v0, mode="basis")
    elif config.mode == "tabular":
        v = ValueFunction(np.zeros(dataset.dim), mode="tabular", sum_zero=True)
    else:
        v = ValueFunction(np.zeros(dataset.dim), mode="basis")
    w0 = []
    for obs in dataset.observations:
        w_t = np.zeros(obs.num_actions)
        w_t[obs.action] = 1.0
        w0.append(w_t)
    return ChainState(v, AugmentedData(w0), 0)


DIVERGENCE_RATIO = 1e6


def run_chain(dataset: Dataset, config: SamplerConfig) -> PosteriorSamples:
    """Run the configured sampler and collect thinned post-burn-in draws."""
    if dataset.mode != config.mode:
        raise ValueError("dataset mode does not match sampler mode")
    rng = RngStream(config.seed).generator()
    state = initial_state(dataset, config)
    acc_total = np.zeros(len(dataset))
    draws, iters = [], []
    norms = []
    t0 = time.perf_counter()
    for it in range(1, config.iterations + 1):
        state, accepted = pxda_iteration(state, dataset, config, rng)
        acc_total += accepted
        if it > config.burn_in and (it - config.burn_in - 1) % config.thinning == 0:
            draws.append(state.v.values.copy())
            iters.append(it)
            norms.append(float(np.linalg.norm(state.v.values)))
    wall = time.perf_counter() - t0
    norms_arr = np.asarray(norms)
    diverged = bool(
        norms_arr.size >= 10
        and np.max(norms_arr) > DIVERGENCE_RATIO * max(np.median(norms_arr), 1e-300)
    )
    if diverged:
        warnings.warn("value-function norm diverged across the chain; the data "
                      "may be degenerate for this prior", RuntimeWarning)
    rate = acc_total / config.iterations
    return PosteriorSamples(
        draws=np.asarray(draws),
        iters=np.asarray(iters, dtype=int),
        mode=config.mode,
        acceptance=rate,
        config=config.to_dict(),
        wall_time=wall,
        divergence_warning=diverged,
    )


# ---------------------------------------------------------------------------
# Empirical stationarity check of the transformation kernel Q
# ---------------------------------------------------------------------------

@dataclass
class StationarityReport:
    mean_abs: np.ndarray
    var_err: np.ndarray
    ks_stat: np.ndarray
    ks_pvalue: np.ndarray
    num_samples: int

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ks_pvalue > 0.001))


def stationary_check_Q(dims: Sequence[int], config: SamplerConfig,
                       rng: np.random.Generator,
                       num_samples: int = 100_000) -> StationarityReport:
    """Apply the marginalized move kernel Q to exact f_Y draws and compare.

    f_Y is taken to be standard normal on the stacked dimension q, for which
    the move's second-stage density is available in closed form; reversibility
    of Q implies the output marginals are again f_Y.
    """
    from scipy import stats

    q = int(sum(dims))
    n_prior = q  # plays the role of N in the translation prior variance
    kappa = config.kappa
    a, b = config.ig.a, config.ig.b
    y = rng.standard_normal((num_samples, q))

    # stage one: z ~ f_Z (omitted when improper), y_mid = phi_z^{-1}(y)
    if config.has_scale and not config.ig.improper:
        z1 = b / rng.gamma(a, size=num_samples)
    else:
        z1 = np.ones(num_samples)
    if config.has_translate and math.isfinite(kappa):
        z2 = rng.normal(0.0, math.sqrt(kappa / n_prior), size=num_samples)
    else:
        z2 = np.zeros(num_samples)
    y_mid = np.sqrt(z1)[:, None] * (y + z2[:, None])

    # stage two: (z1', z2') from f_Y(phi_z(y_mid)) J_z(y_mid) f_Z(z)
    if config.moves == "none":
        y_out = y_mid
    else:
        sq_norm = np.einsum("ij,ij->i", y_mid, y_mid)
        row_sum = y_mid.sum(axis=1)
        if config.has_translate:
            denom = q + (n_prior / kappa if math.isfinite(kappa) else 0.0)
            c = sq_norm - row_sum ** 2 / denom
        else:
            c = sq_norm
        if config.has_scale:
            shape = a + 0.5 * q
            scale = b + 0.5 * c
            z1_new = scale / rng.gamma(shape, size=num_samples)
        else:
            z1_new = np.ones(num_samples)
        s = np.sqrt(z1_new)
        if config.has_translate:
            z2_new = (row_sum / (denom * s)
                      + rng.standard_normal(num_samples) / math.sqrt(denom))
        else:
            z2_new = np.zeros(num_samples)
        y_out = y_mid / s[:, None] - z2_new[:, None]

    mean_abs = np.abs(y_out.mean(axis=0))
    var_err = np.abs(y_out.var(axis=0) - 1.0)
    ks_stat = np.empty(q)
    ks_p = np.empty(q)
    for i in range(q):
        res = stats.kstest(y_out[:, i], "norm")
        ks_stat[i] = res.statistic
        ks_p[i] = res.pvalue
    return StationarityReport(mean_abs, var_err, ks_stat, ks_p, num_samples)
