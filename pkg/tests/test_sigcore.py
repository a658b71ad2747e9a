import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal as sps

from blastdose.errors import RejectedInput
from blastdose.sigcore import (
    SampledSignal, autocorr_peak, bandpass, cwt_haar, find_peaks, moving_median,
    pca_fit, pca_project,
)


def _sine(freq, rate=500.0, seconds=40.0, amp=1.0):
    t = np.arange(int(rate * seconds)) / rate
    return SampledSignal(amp * np.sin(2 * np.pi * freq * t), rate)


def _steady_amplitude(x, rate, skip_s=10.0):
    core = x[int(skip_s * rate):-int(skip_s * rate)]
    return np.sqrt(2 * np.mean(core ** 2))


class TestBandpass:
    def test_dc_removed(self):
        sig = SampledSignal(np.full(20000, 3.0), 500.0)
        out = bandpass(sig, 0.1, 10, 3).samples
        assert np.max(np.abs(out[5000:-5000])) < 1e-3 * 3.0

    def test_passband_1hz(self):
        # analytic oracle: |H(1 Hz)|^2 for the 3rd-order design, applied twice
        sos = sps.butter(3, [0.1, 10], btype="band", fs=500, output="sos")
        _, h = sps.sosfreqz(sos, worN=[1.0], fs=500)
        expected = abs(h[0]) ** 2
        out = bandpass(_sine(1.0), 0.1, 10, 3).samples
        amp = _steady_amplitude(out, 500)
        assert amp == pytest.approx(expected, rel=5e-3)
        assert abs(amp - 1.0) < 0.02

    def test_stopband_50hz(self):
        out = bandpass(_sine(50.0), 0.1, 10, 3).samples
        assert _steady_amplitude(out, 500) < 0.01

    @pytest.mark.parametrize("lo,hi", [(0, 10), (10, 5), (1, 250), (-1, 3)])
    def test_bad_edges(self, lo, hi):
        with pytest.raises(RejectedInput):
            bandpass(_sine(1.0, seconds=2), lo, hi, 3)

    def test_linear(self):
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal((2, 5000))
        f = lambda v: bandpass(SampledSignal(v, 500.0), 0.1, 10, 3).samples
        lhs = f(2.5 * x - 0.7 * y)
        rhs = 2.5 * f(x) - 0.7 * f(y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))


class TestMovingMedian:
    def test_constant(self):
        out = moving_median(SampledSignal(np.full(50, 4.2), 10.0), 1.1).samples
        assert np.all(out == 4.2)

    def test_spike_removed(self):
        x = np.zeros(200)
        x[100:102] = 50.0
        out = moving_median(SampledSignal(x, 10.0), 0.9).samples
        assert np.all(out == 0.0)

    def test_alternating_vs_bruteforce(self):
        x = np.array([i % 2 for i in range(31)], dtype=float)
        out = moving_median(SampledSignal(x, 1.0), 3.0).samples
        for i in range(1, len(x) - 1):
            window = sorted(x[i - 1:i + 2])
            assert out[i] == window[1]

    def test_truncated_boundaries(self):
        x = np.array([5.0, 1.0, 2.0, 9.0, 3.0])
        out = moving_median(SampledSignal(x, 1.0), 3.0).samples
        assert out[0] == np.median([5.0, 1.0])
        assert out[-1] == np.median([9.0, 3.0])

    def test_empty_rejected(self):
        with pytest.raises(RejectedInput):
            moving_median(SampledSignal(np.array([]), 1.0), 1.0)


def _haar_oracle(x, scale, i):
    if i < scale or i + scale > len(x):
        return 0.0
    x = np.asarray(x, float)
    return float(sum(x[i:i + scale]) - sum(x[i - scale:i])) / np.sqrt(2 * scale)


class TestCwtHaar:
    def test_constant_zero(self):
        assert np.allclose(cwt_haar(np.full(400, 7.0), 80), 0.0, atol=1e-9)

    def test_step_max_at_edge(self):
        x = np.zeros(500)
        x[237:] = 1.0
        c = cwt_haar(x, 40)
        assert int(np.argmax(np.abs(c))) == 237

    def test_ramp_interior_constant(self):
        s = 0.37
        x = s * np.arange(300)
        c = cwt_haar(x, 20)
        for i in (50, 150, 250):
            assert c[i] == pytest.approx(_haar_oracle(x, 20, i), rel=1e-9)
        assert c[50] == pytest.approx(c[250], rel=1e-9)

    def test_matches_oracle_random(self):
        x = np.random.default_rng(0).standard_normal(200)
        c = cwt_haar(x, 13)
        for i in range(200):
            assert c[i] == pytest.approx(_haar_oracle(x, 13, i), abs=1e-9)

    @pytest.mark.parametrize("scale", [1, 200, 500])
    def test_bad_scale(self, scale):
        with pytest.raises(RejectedInput):
            cwt_haar(np.zeros(200), scale)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-1e3, 1e3), st.integers(0, 10_000))
    def test_mean_invariance(self, offset, seed):
        x = np.random.default_rng(seed).standard_normal(300)
        assert np.allclose(cwt_haar(x + offset, 25), cwt_haar(x, 25), atol=1e-7)


def _local_max_oracle(x):
    return [i for i in range(1, len(x) - 1) if x[i - 1] < x[i] > x[i + 1]]


class TestFindPeaks:
    def test_monotone_empty(self):
        assert len(find_peaks(np.arange(50.0), 1, 0.0, 0.0)) == 0

    def test_triangle(self):
        x = np.concatenate([np.zeros(5), np.linspace(0, 1, 6), np.linspace(1, 0, 6)[1:], np.zeros(5)])
        pk = find_peaks(x, 3, 0.5, 0.5)
        assert list(pk.indices) == [10]
        assert pk.heights[0] == 1.0

    def test_height_filter_vs_scan(self):
        t = np.arange(200)
        x = np.exp(-0.5 * ((t - 50) / 5) ** 2) + 0.4 * np.exp(-0.5 * ((t - 140) / 5) ** 2)
        pk = find_peaks(x, 1, 0.5, 0.0)
        oracle = [i for i in _local_max_oracle(x) if x[i] >= 0.5]
        assert list(pk.indices) == oracle == [50]

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-100, 100), st.integers(0, 10_000))
    def test_shift_invariance(self, c, seed):
        x = np.cumsum(np.random.default_rng(seed).standard_normal(300))
        a = find_peaks(x, 2, 0.5, 0.3)
        b = find_peaks(x + c, 2, 0.5 + c, 0.3)
        assert np.array_equal(a.indices, b.indices)

    def test_min_width_validated(self):
        with pytest.raises(RejectedInput):
            find_peaks(np.zeros(10), 0)


class TestAutocorrPeak:
    def test_sine_period(self):
        P = 50
        x = np.sin(2 * np.pi * np.arange(2000) / P)
        lag, h, prom = autocorr_peak(x, 35, 85)
        assert abs(lag - P) <= 1
        assert h > 0.95

    def test_white_noise_low(self):
        heights = [autocorr_peak(np.random.default_rng(s).standard_normal(500), 35, 85)[1]
                   for s in range(1000)]
        assert np.mean(np.array(heights) < 0.2) > 0.99

    def test_constant_zero(self):
        assert autocorr_peak(np.ones(300), 35, 85) == (0, 0.0, 0.0)


class TestPca:
    def test_line(self):
        t = np.linspace(-3, 3, 40)[:, None]
        X = t * np.array([1.0, 2.0, -0.5]) + np.array([3.0, 0.0, 1.0])
        p = pca_fit(X, 1)
        assert p.explained_variance_fraction == pytest.approx(1.0, abs=1e-9)

    def test_isotropic_full(self):
        X = np.random.default_rng(1).standard_normal((500, 5))
        assert pca_fit(X, 5).explained_variance_fraction == pytest.approx(1.0)

    def test_integer_matrix_vs_direct_eigensolve(self):
        X = np.array([[2, 0, 1], [1, 3, 0], [0, 1, 4], [3, 2, 2]], dtype=float)
        # oracle: covariance built by explicit sums, eigenvalues via characteristic polynomial
        mu = [sum(X[:, j]) / 4 for j in range(3)]
        C = np.array([[sum((X[k, a] - mu[a]) * (X[k, b] - mu[b]) for k in range(4)) / 3
                       for b in range(3)] for a in range(3)])
        roots = np.sort(np.roots(np.poly(C)).real)[::-1]
        p = pca_fit(X, 3)
        assert np.allclose(p.eigenvalues, roots, atol=1e-9)
        assert p.explained_variance_fraction == pytest.approx(1.0)

    def test_orthonormal_and_sign(self):
        X = np.random.default_rng(2).standard_normal((100, 6)) @ np.random.default_rng(3).standard_normal((6, 6))
        p = pca_fit(X, 4)
        assert np.allclose(p.components @ p.components.T, np.eye(4), atol=1e-9)
        lead = p.components[np.arange(4), np.argmax(np.abs(p.components), axis=1)]
        assert np.all(lead > 0)

    def test_fraction_monotone(self):
        X = np.random.default_rng(4).standard_normal((80, 7))
        fr = [pca_fit(X, k).explained_variance_fraction for k in range(1, 8)]
        assert all(a <= b + 1e-12 for a, b in zip(fr, fr[1:]))

    def test_rank_deficient_succeeds(self):
        X = np.random.default_rng(5).standard_normal((30, 2)) @ np.ones((2, 5))
        p = pca_fit(X, 4)
        assert np.allclose(p.components @ p.components.T, np.eye(4), atol=1e-9)

    def test_project(self):
        X = np.random.default_rng(6).standard_normal((60, 4))
        p = pca_fit(X, 3)
        assert np.allclose(pca_project(p, p.mean), 0.0)
        assert np.allclose(pca_project(p, p.mean + p.components[0]), [1, 0, 0], atol=1e-12)
        v = np.random.default_rng(7).standard_normal(4)
        brute = [sum(p.components[r, j] * (v[j] - p.mean[j]) for j in range(4)) for r in range(3)]
        assert np.allclose(pca_project(p, v), brute, atol=1e-12)
        with pytest.raises(RejectedInput):
            pca_project(p, np.zeros(5))

    def test_full_reconstruction(self):
        X = np.random.default_rng(8).standard_normal((50, 6))
        p = pca_fit(X, 6)
        Z = pca_project(p, X)
        rec = Z @ p.components + p.mean
        assert np.linalg.norm(rec - X) / np.linalg.norm(X) < 1e-9

    def test_too_few_vectors(self):
        with pytest.raises(RejectedInput):
            pca_fit(np.zeros((3, 5)), 3)
