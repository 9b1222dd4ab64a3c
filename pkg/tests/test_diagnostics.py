import numpy as np
import pytest

from noisymdp.diagnostics import (
    acf_to_csv,
    asymptotic_variance,
    autocorrelation,
    compare_chains,
    default_window,
    effective_sample_size,
    summarize,
    trace_to_csv,
)


def ar1(phi, n, seed, sigma=1.0):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = rng.normal() * sigma / np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + sigma * rng.normal()
    return x


class TestAutocorrelation:
    def test_lag_zero_is_one(self):
        x = np.random.default_rng(0).normal(size=500)
        rep = autocorrelation(x, 20)
        assert rep.acf[0] == 1.0
        assert rep.std_errors[0] == 0.0
        assert rep.lags.tolist() == list(range(21))

    def test_ar1_closed_form(self):
        # ACF of a stationary AR(1) is phi^k
        phi = 0.6
        x = ar1(phi, 200_000, seed=1)
        rep = autocorrelation(x, 10)
        for k in range(1, 11):
            assert rep.acf[k] == pytest.approx(phi ** k, abs=0.02)

    def test_white_noise_bartlett_se(self):
        # for iid data the lag-1 Bartlett se is 1/sqrt(n)
        n = 10_000
        x = np.random.default_rng(2).normal(size=n)
        rep = autocorrelation(x, 5)
        assert rep.std_errors[1] == pytest.approx(1.0 / np.sqrt(n), rel=1e-3)
        # and the estimated acf stays within a few se of zero
        assert np.all(np.abs(rep.acf[1:]) < 5.0 * rep.std_errors[1:])

    def test_se_monotone_under_positive_correlation(self):
        x = ar1(0.8, 50_000, seed=3)
        rep = autocorrelation(x, 20)
        assert np.all(np.diff(rep.std_errors[1:]) >= 0)

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError):
            autocorrelation(np.ones(100), 5)

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            autocorrelation(np.arange(20.0), 10)

    def test_component_recorded(self):
        x = np.random.default_rng(4).normal(size=200)
        assert autocorrelation(x, 5, component=3).component == 3


class TestAsymptoticVariance:
    def test_white_noise_matches_variance(self):
        x = np.random.default_rng(5).normal(size=100_000)
        got = asymptotic_variance(x, 5)
        assert got == pytest.approx(1.0, abs=0.05)

    def test_ar1_closed_form(self):
        # sigma^2 = var(x) (1 + phi) / (1 - phi) for AR(1)
        phi = 0.5
        x = ar1(phi, 400_000, seed=6)
        expected = x.var() * (1 + phi) / (1 - phi)
        got = asymptotic_variance(x, 60)
        assert got == pytest.approx(expected, rel=0.05)

    def test_negative_estimate_warns_not_clipped(self):
        # a pure alternating series makes the truncated estimator negative
        x = np.tile([1.0, -1.0], 500)
        with pytest.warns(RuntimeWarning):
            got = asymptotic_variance(x, 1)
        assert got < 0.0

    def test_window_too_large_rejected(self):
        with pytest.raises(ValueError):
            asymptotic_variance(np.random.default_rng(7).normal(size=100), 50)

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError):
            asymptotic_variance(np.zeros(100), 5)


class TestDefaultWindow:
    def test_white_noise_small_window(self):
        x = np.random.default_rng(8).normal(size=20_000)
        assert default_window(x, 100) <= 3

    def test_ar1_window_tracks_decay(self):
        # phi^k < 0.05 first at k = ceil(log 0.05 / log phi) = 29 for phi 0.9
        x = ar1(0.9, 300_000, seed=9)
        got = default_window(x, 200)
        assert 20 <= got <= 40

    def test_never_exceeds_max_lag(self):
        x = ar1(0.999, 5_000, seed=10)
        assert default_window(x, 50) == 50


class TestEffectiveSampleSize:
    def test_iid_close_to_n(self):
        n = 20_000
        x = np.random.default_rng(11).normal(size=n)
        ess = effective_sample_size(x)
        assert 0.8 * n <= ess <= n

    def test_clamped_to_n(self):
        x = np.tile([1.0, -1.0], 2_000) + 0.01 * np.random.default_rng(12).normal(size=4_000)
        # negative correlation pushes the raw ratio above n; must be clamped
        assert effective_sample_size(x) <= 4_000

    def test_correlated_chain_shrinks(self):
        n = 50_000
        x = ar1(0.9, n, seed=13)
        ess = effective_sample_size(x)
        # AR(1) ESS factor is (1 - phi) / (1 + phi) = 1/19
        assert ess < 0.15 * n
        assert ess > 0.01 * n


class TestSummarize:
    def test_fields(self):
        rng = np.random.default_rng(14)
        draws = rng.normal(size=(5_000, 3)) + [1.0, -2.0, 0.0]
        acc = np.array([0.9, 0.7])
        s = summarize(draws, acc)
        np.testing.assert_allclose(s.mean, [1.0, -2.0, 0.0], atol=0.06)
        np.testing.assert_allclose(s.std, 1.0, atol=0.05)
        assert s.ess.shape == (3,)
        assert s.acceptance_mean == pytest.approx(0.8)
        assert s.acceptance_min == pytest.approx(0.7)

    def test_empty_acceptance(self):
        draws = np.random.default_rng(15).normal(size=(1_000, 1))
        s = summarize(draws, np.zeros(0))
        assert s.acceptance_mean == 1.0 and s.acceptance_min == 1.0


class TestCompareChains:
    def test_best_index_per_lag(self):
        rng = np.random.default_rng(16)
        slow = autocorrelation(ar1(0.9, 30_000, seed=17), 20)
        fast = autocorrelation(ar1(0.2, 30_000, seed=18), 20)
        rep = compare_chains([slow, fast], ["slow", "fast"])
        assert rep.labels == ("slow", "fast")
        assert rep.acf.shape == (2, 21)
        # the low-correlation chain wins at every positive lag
        assert np.all(rep.best[1:6] == 1)

    def test_label_mismatch(self):
        x = autocorrelation(np.random.default_rng(19).normal(size=500), 5)
        with pytest.raises(ValueError):
            compare_chains([x], [])
        with pytest.raises(ValueError):
            compare_chains([], [])

    def test_lag_mismatch(self):
        rng = np.random.default_rng(20)
        a = autocorrelation(rng.normal(size=500), 5)
        b = autocorrelation(rng.normal(size=500), 6)
        with pytest.raises(ValueError):
            compare_chains([a, b], ["a", "b"])


class TestCsvExports:
    def test_acf_csv_round_trip(self, tmp_path):
        x = ar1(0.5, 5_000, seed=21)
        rep = autocorrelation(x, 10)
        path = tmp_path / "acf.csv"
        acf_to_csv(rep, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "lag,acf,se"
        assert len(lines) == 12
        data = np.array([[float(f) for f in ln.split(",")] for ln in lines[1:]])
        # repr serialization round-trips exactly
        np.testing.assert_array_equal(data[:, 1], rep.acf)
        np.testing.assert_array_equal(data[:, 2], rep.std_errors)

    def test_trace_csv_format(self, tmp_path):
        draws = np.random.default_rng(22).normal(size=(7, 2))
        path = tmp_path / "trace.csv"
        trace_to_csv(draws, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "iter,v1,v2"
        assert len(lines) == 8
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert float(first[1]) == draws[0, 0]
