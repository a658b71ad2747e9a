import numpy as np
import pytest

from blastdose.eogfeat import (
    align_to, artifact_mask, detect_blinks, detect_saccades, extract_eog_features,
)
from blastdose.errors import RejectedInput
from blastdose.sigcore import SampledSignal, bandpass

FS = 500.0


def blink_train(seed=0, n=100, amp=1.0, noise=0.05, sigma=0.06, period=4.0):
    rng = np.random.default_rng(seed)
    t = np.arange(0, period * n + period, 1 / FS)
    times = period / 2 + period * np.arange(n)
    x = np.zeros_like(t)
    for b in times:
        i = slice(int((b - 0.5) * FS), int((b + 0.5) * FS))
        x[i] += amp * np.exp(-0.5 * ((t[i] - b) / sigma) ** 2)
    x += noise * rng.standard_normal(len(t))
    return SampledSignal(x, FS), times


def match(found, truth, tol=0.1):
    found, truth = np.asarray(found), np.asarray(truth)
    if len(found) == 0:
        return 0.0, 0.0
    recall = np.mean([np.min(np.abs(found - x)) < tol for x in truth])
    precision = np.mean([np.min(np.abs(truth - x)) < tol for x in found])
    return recall, precision


class TestArtifactMask:
    def test_stationary_noise(self):
        x = np.random.default_rng(0).standard_normal(int(900 * FS))
        sig = bandpass(SampledSignal(x, FS), 0.1, 10.0)
        assert artifact_mask(sig).mean() < 0.10

    def test_burst_masked(self):
        rng = np.random.default_rng(1)
        x = 0.1 * rng.standard_normal(int(600 * FS))
        lo, hi = int(300 * FS), int(302 * FS)
        x[lo:hi] *= 10
        m = artifact_mask(SampledSignal(x, FS))
        assert m[lo:hi].all()

    def test_zero(self):
        assert not artifact_mask(SampledSignal(np.zeros(int(60 * FS)), FS)).any()

    def test_short(self):
        assert not artifact_mask(SampledSignal(np.ones(100), FS)).any()

    def test_blinks_not_masked(self):
        sig, _ = blink_train(n=120)
        assert artifact_mask(sig).mean() < 0.02


class TestBlinks:
    def test_flat(self):
        assert detect_blinks(SampledSignal(np.zeros(5000), FS)) == []

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_oracle(self, seed):
        sig, times = blink_train(seed)
        b = detect_blinks(sig, artifact_mask(sig))
        r, p = match([e.peak_time for e in b], times)
        assert r >= 0.95 and p >= 0.95
        # full width at half maximum of a Gaussian pulse
        assert np.median([e.duration_ms for e in b]) == pytest.approx(2.3548 * 60, rel=0.05)

    def test_masked_pulse_excluded(self):
        sig, times = blink_train(3, n=30)
        mask = np.zeros(len(sig), dtype=bool)
        target = times[10]
        mask[int((target - 0.05) * FS):int((target + 0.05) * FS)] = True
        b = detect_blinks(sig, mask)
        bt = np.array([e.peak_time for e in b])
        assert np.all(np.abs(bt - target) > 0.5)
        assert len(b) >= 27

    def test_no_leakage_into_mask(self):
        sig, times = blink_train(4, n=60)
        rng = np.random.default_rng(5)
        mask = np.zeros(len(sig), dtype=bool)
        for c in rng.choice(len(sig), 15, replace=False):
            mask[c:c + int(1.5 * FS)] = True
        for e in detect_blinks(sig, mask):
            k = int(round(e.peak_time * FS))
            half = int(e.duration_ms / 2e3 * FS)
            assert not mask[k - half:k + half + 1].any()

    def test_amplitude_invariance(self):
        sig, _ = blink_train(6, n=40, noise=0.0)
        a = detect_blinks(sig)
        b = detect_blinks(sig.with_samples(2 * sig.samples))
        assert len(a) == len(b) > 0
        assert np.allclose([e.duration_ms for e in a], [e.duration_ms for e in b])
        assert np.allclose([e.peak_time for e in a], [e.peak_time for e in b])

    def test_downward_blinks(self):
        sig, times = blink_train(7, n=50)
        b = detect_blinks(sig.with_samples(-sig.samples))
        assert match([e.peak_time for e in b], times)[0] >= 0.95


def _step_pair(step_sd=4.0, v_flat=False, seed=0, step_at=57.0, T=60.0):
    rng = np.random.default_rng(seed)
    n = int(T * FS)
    noise_sd = 0.1
    t = np.arange(n) / FS
    u = (t >= step_at).astype(float)
    p = 1 - step_at / T
    # size the step so it is step_sd times the std of the final signal
    a = step_sd * noise_sd / np.sqrt(max(1 - step_sd ** 2 * p * (1 - p), 1e-9))
    h = a * u + noise_sd * rng.standard_normal(n)
    v = (0 if v_flat else a) * u + noise_sd * rng.standard_normal(n)
    return SampledSignal(v, FS), SampledSignal(h, FS)


class TestSaccades:
    def test_step_detected(self):
        v, h = _step_pair()
        s = detect_saccades(v, h)
        assert len(s) == 1
        assert abs(s[0].onset_time - 57.0) <= 0.02
        assert s[0].vh_correlation > 0.6

    def test_flat_vertical_rejected(self):
        v, h = _step_pair(v_flat=True)
        assert detect_saccades(v, h) == []

    def test_small_step_rejected(self):
        v, h = _step_pair(step_sd=0.1)
        assert detect_saccades(v, h) == []

    def test_scale_invariance(self):
        v, h = _step_pair(seed=3)
        a = detect_saccades(v, h)
        b = detect_saccades(v.with_samples(5 * v.samples), h.with_samples(5 * h.samples))
        assert [s.onset_time for s in a] == [s.onset_time for s in b]

    def test_mismatched_ranges(self):
        v, h = _step_pair()
        with pytest.raises(RejectedInput):
            detect_saccades(v, SampledSignal(h.samples[: len(h) // 2], FS))

    def test_masked_window_skipped(self):
        v, h = _step_pair()
        m = np.zeros(len(v), dtype=bool)
        m[int(56.9 * FS):int(57.1 * FS)] = True
        assert detect_saccades(v, h, [m]) == []

    def test_align_interpolates(self):
        v = SampledSignal(np.zeros(1000), FS)
        h = SampledSignal(np.arange(250, dtype=float), 125.0)
        out = align_to(v, h)
        assert out.samples[4] == pytest.approx(1.0)


def test_extract_features_end_to_end():
    sig, times = blink_train(8, n=80)
    blinks, sacc = extract_eog_features(sig)
    assert sacc is None
    assert match(blinks.timestamps, times)[0] >= 0.9
