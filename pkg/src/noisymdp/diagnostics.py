"""Chain-quality measurement: autocorrelation, asymptotic variance, ESS.

Exports are plain CSV data files for external plotting; nothing here renders
images.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

ACF_WINDOW_CUTOFF = 0.05  # default sigma^2 window: first lag with acf below this


@dataclass(frozen=True)
class AcfReport:
    component: int
    lags: np.ndarray
    acf: np.ndarray
    std_errors: np.ndarray


@dataclass(frozen=True)
class ChainSummary:
    mean: np.ndarray
    std: np.ndarray
    ess: np.ndarray
    acceptance_mean: float
    acceptance_min: float


def _autocovariances(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased (1/n) autocovariance estimates c_0..c_max_lag via FFT."""
    x = series - series.mean()
    n = x.shape[0]
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1].real / n
    return acov


def autocorrelation(series, max_lag: int, component: int = 0) -> AcfReport:
    """ACF estimate with biased normalization; acf(0) = 1 exactly.

    Standard errors follow Bartlett's formula under the hypothesis that
    correlation has died out beyond each lag.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.shape[0]
    if n <= 2 * max_lag:
        raise ValueError("series length must exceed 2 * max_lag")
    acov = _autocovariances(x, max_lag)
    if acov[0] <= 0.0:
        raise ValueError("constant series has no autocorrelation")
    acf = acov / acov[0]
    acf[0] = 1.0
    cums = np.concatenate([[0.0], np.cumsum(acf[1:] ** 2)])
    se = np.sqrt((1.0 + 2.0 * cums) / n)
    se[0] = 0.0
    return AcfReport(component, np.arange(max_lag + 1), acf, se)


def asymptotic_variance(series, window: int) -> float:
    """Truncated-window estimate c_0 + 2 sum_{i<=window} c_i of sigma^2(h).

    The truncated estimator can dip negative for adversarial windows; such
    results are flagged with a warning, never clipped.
    """
    x = np.asarray(series, dtype=float).ravel()
    if window >= x.shape[0] / 2:
        raise ValueError("window must be below half the series length")
    acov = _autocovariances(x, window)
    if acov[0] <= 0.0:
        raise ValueError("constant series has no asymptotic variance")
    out = float(acov[0] + 2.0 * acov[1:].sum())
    if out < 0.0:
        warnings.warn("truncated asymptotic-variance estimate is negative",
                      RuntimeWarning)
    return out


def default_window(series, max_lag: int | None = None) -> int:
    """First lag where the ACF falls below the cutoff."""
    x = np.asarray(series, dtype=float).ravel()
    if max_lag is None:
        max_lag = max(1, x.shape[0] // 2 - 1)
    acov = _autocovariances(x, max_lag)
    acf = acov / acov[0]
    below = np.flatnonzero(acf[1:] < ACF_WINDOW_CUTOFF)
    return int(below[0] + 1) if below.size else max_lag


def effective_sample_size(series) -> float:
    """ESS = n c_0 / sigma^2 with the default window; clamped into (0, n]."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.shape[0]
    window = default_window(x, min(n // 2 - 1, 1000))
    sigma2 = asymptotic_variance(x, window)
    c0 = float(x.var())
    if sigma2 <= 0.0:
        return float(n)
    return float(min(n * c0 / sigma2, n))


def summarize(draws: np.ndarray, acceptance: np.ndarray) -> ChainSummary:
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    ess = np.array([effective_sample_size(draws[:, i]) for i in range(draws.shape[1])])
    return ChainSummary(
        mean=draws.mean(axis=0),
        std=draws.std(axis=0, ddof=1),
        ess=ess,
        acceptance_mean=float(np.mean(acceptance)) if len(acceptance) else 1.0,
        acceptance_min=float(np.min(acceptance)) if len(acceptance) else 1.0,
    )


@dataclass(frozen=True)
class ComparisonReport:
    labels: tuple
    lags: np.ndarray
    acf: np.ndarray  # (num_chains, num_lags)
    std_errors: np.ndarray
    best: np.ndarray  # per-lag index of the lowest-ACF chain


def compare_chains(reports, labels) -> ComparisonReport:
    """Per-lag ordering table for chains measured on the same component."""
    if len(reports) != len(labels) or not reports:
        raise ValueError("need one label per report")
    lags = reports[0].lags
    for rep in reports[1:]:
        if not np.array_equal(rep.lags, lags):
            raise ValueError("reports must share the same lags")
    acf = np.vstack([rep.acf for rep in reports])
    se = np.vstack([rep.std_errors for rep in reports])
    return ComparisonReport(tuple(labels), lags, acf, se, np.argmin(acf, axis=0))


def acf_to_csv(report: AcfReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("lag,acf,se\n")
        for lag, a, s in zip(report.lags, report.acf, report.std_errors):
            fh.write(f"{lag},{float(a)!r},{float(s)!r}\n")


def trace_to_csv(draws: np.ndarray, path) -> None:
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    with open(path, "w") as fh:
        fh.write("iter," + ",".join(f"v{i + 1}" for i in range(draws.shape[1])) + "\n")
        for i, row in enumerate(draws):
            fh.write(str(i) + "," + ",".join(repr(float(x)) for x in row) + "\n")
