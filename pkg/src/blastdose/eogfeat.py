"""Blink and saccade detection from 500 Hz EOG."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import peak_widths

from .changescore import FeatureStream
from .errors import RejectedInput
from .sigcore import SampledSignal, bandpass, cwt_haar, moving_mean, moving_median

EOG_RATE_HZ = 500.0
BLINK_SCALE = 80
BLINK_MIN_WIDTH_S = 0.2
BLINK_MAX_SEPARATION_S = 0.2
BLINK_PERCENTILE = 95.0
THRESHOLD_BLOCK_S = 300.0
MASK_RATIO = 2.5
MASK_MEDIAN_S = 300.0
# 1 s smoothing lets ordinary blinks (every few seconds) exceed the ratio
POWER_SMOOTHING_S = 10.0
SACCADE_SMOOTH_S = 0.05
SACCADE_WINDOW_S = 0.1
SACCADE_REFRACTORY_S = 0.1
SACCADE_MIN_AMPLITUDE = 0.25
SACCADE_MIN_CORR = 0.6


@dataclass
class BlinkEvent:
    peak_time: float
    duration_ms: float


@dataclass
class SaccadeEvent:
    onset_time: float
    amplitude: float
    vh_correlation: float


def artifact_mask(eog: SampledSignal, smoothing_s: float = POWER_SMOOTHING_S,
                  median_s: float = MASK_MEDIAN_S, ratio: float = MASK_RATIO) -> np.ndarray:
    """True where smoothed power exceeds ``ratio`` times its 5-minute moving median.

    The moving median is taken on power decimated to 1 Hz and interpolated back.
    """
    x = np.asarray(eog.samples, dtype=float)
    rate = eog.sample_rate_hz
    n = len(x)
    if n < rate:
        return np.zeros(n, dtype=bool)
    power = moving_mean(x * x, max(1, int(round(smoothing_s * rate))))
    step = max(1, int(round(rate)))
    idx = np.arange(0, n, step)
    med = moving_median(SampledSignal(power[idx], rate / step), median_s).samples
    med_full = np.interp(np.arange(n), idx, med)
    return power > ratio * med_full


def _block_thresholds(c, rate, block_s, pct):
    n = len(c)
    blk = max(1, int(round(block_s * rate)))
    pos = np.full(n, np.inf)
    neg = np.full(n, np.inf)
    for s in range(0, n, blk):
        seg = c[s:s + blk]
        if np.any(seg > 0):
            pos[s:s + blk] = np.percentile(seg[seg > 0], pct)
        if np.any(seg < 0):
            neg[s:s + blk] = np.percentile(-seg[seg < 0], pct)
    return pos, neg


def _lobes(y, thr, min_width):
    """Centers of runs above ``thr`` whose same-sign support spans at least ``min_width`` samples.

    Widths are taken over the positive support rather than at half
    prominence, which noise ripples on the lobe crest make unstable.
    """
    above = y > thr
    if not above.any():
        return np.zeros(0, dtype=int)
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    positive = np.concatenate([[0], (y > 0).astype(np.int8), [0]])
    pe = np.diff(positive)
    sup_start, sup_stop = np.flatnonzero(pe == 1), np.flatnonzero(pe == -1)
    out = []
    for a, b in zip(starts, stops):
        # centroid of the excess over threshold; the crest argmax jitters with noise
        excess = y[a:b] - thr[a:b]
        k = a + int(round(float(np.dot(np.arange(b - a), excess) / excess.sum())))
        j = np.searchsorted(sup_start, k, side="right") - 1
        if sup_stop[j] - sup_start[j] >= min_width:
            out.append(k)
    return np.asarray(out, dtype=int)


def _interval_masked(mask, lo, hi):
    lo = max(int(np.floor(lo)), 0)
    hi = min(int(np.ceil(hi)), len(mask) - 1)
    return hi >= lo and bool(mask[lo:hi + 1].any())


def detect_blinks(veog: SampledSignal, mask=None, raw: SampledSignal | None = None,
                  scale: int = BLINK_SCALE, block_s: float = THRESHOLD_BLOCK_S) -> list:
    """Blinks as adjacent opposite-sign Haar CWT peaks closer than 200 ms.

    ``veog`` is the 0.1-10 Hz signal used for detection; ``raw`` (0.1-25 Hz,
    defaults to ``veog``) is used for duration at half the peak amplitude.
    """
    x = np.asarray(veog.samples, dtype=float)
    rate = veog.sample_rate_hz
    n = len(x)
    mask = np.zeros(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if len(mask) != n:
        raise RejectedInput("mask length differs from signal")
    if n <= 2 * scale or np.ptp(x) == 0:
        return []
    r = x if raw is None else np.asarray(raw.samples, dtype=float)
    c = cwt_haar(x, scale)
    pos_thr, neg_thr = _block_thresholds(c, rate, block_s, BLINK_PERCENTILE)
    min_w = BLINK_MIN_WIDTH_S * rate
    pi = _lobes(c, pos_thr, min_w)
    ni = _lobes(-c, neg_thr, min_w)
    peaks = sorted([(int(i), 1) for i in pi] + [(int(i), -1) for i in ni])
    max_sep = BLINK_MAX_SEPARATION_S * rate
    out = []
    j = 0
    while j < len(peaks) - 1:
        (a, sa), (b, sb) = peaks[j], peaks[j + 1]
        if sa == sb or b - a >= max_sep:
            j += 1
            continue
        j += 2
        # rising edge first means an upward deflection
        polarity = 1.0 if sa > 0 else -1.0
        lo, hi = a, b + 1
        seg = polarity * r[lo:hi]
        k = lo + int(np.argmax(seg))
        wlen = int(4 * scale) | 1
        # local window: peak_widths never looks beyond wlen // 2 either side
        off = max(k - wlen, 0)
        y = polarity * r[off:k + wlen + 1]
        with warnings.catch_warnings():
            # zero-prominence crests are rejected just below
            warnings.filterwarnings("ignore", message="some peaks have")
            w, _, left, right = peak_widths(y, [k - off], rel_height=0.5, wlen=wlen)
        if not w[0] > 0:
            continue
        if _interval_masked(mask, min(a, left[0] + off), max(b, right[0] + off)):
            continue
        dur = float(w[0] / rate * 1e3)
        if 0 < dur < 2000:
            out.append(BlinkEvent(veog.start_time + k / rate, dur))
    return out


def align_to(target: SampledSignal, other: SampledSignal) -> SampledSignal:
    """Linear interpolation of ``other`` onto ``target`` sample times."""
    tt, to = target.times, other.times
    tol = 1.0 / min(target.sample_rate_hz, other.sample_rate_hz)
    if len(to) == 0 or to[0] > tt[0] + tol or to[-1] < tt[-1] - tol:
        raise RejectedInput("channels cover different time ranges")
    return target.with_samples(np.interp(tt, to, other.samples))


def detect_saccades(veog: SampledSignal, heog: SampledSignal, masks=None) -> list:
    """Horizontal saccades confirmed by a correlated vertical channel.

    Candidates are changes of the 50 ms smoothed horizontal signal across
    +/-50 ms exceeding its global standard deviation, separated by at least
    100 ms. Each is refined to the nearby peak velocity and accepted when the
    100 ms window around it shows enough amplitude and V/H correlation.
    """
    h_sig = align_to(veog, heog) if (len(heog) != len(veog) or heog.start_time != veog.start_time
                                     or heog.sample_rate_hz != veog.sample_rate_hz) else heog
    v = np.asarray(veog.samples, dtype=float)
    h = np.asarray(h_sig.samples, dtype=float)
    rate = veog.sample_rate_hz
    n = len(v)
    mask = np.zeros(n, dtype=bool)
    for m in masks or ():
        m = np.asarray(m, dtype=bool)
        if len(m) != n:
            raise RejectedInput("mask length differs from signal")
        mask |= m
    sd = float(np.std(h))
    half = int(round(SACCADE_WINDOW_S * rate / 2))
    if sd == 0 or n <= 4 * half:
        return []
    hs = moving_mean(h, max(1, int(round(SACCADE_SMOOTH_S * rate))))
    change = np.zeros(n)
    change[half:n - half] = np.abs(hs[2 * half:] - hs[:n - 2 * half])
    above = change > sd
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    # box smoothing turns a step into a constant-velocity ramp; a second pass centers the maximum
    vel = moving_mean(np.abs(np.diff(hs, prepend=hs[0])), max(1, int(round(SACCADE_SMOOTH_S * rate))))
    refractory = SACCADE_REFRACTORY_S * rate
    out, last = [], -np.inf
    for s0, s1 in zip(starts, stops):
        cand = s0 + int(np.argmax(change[s0:s1]))
        lo, hi = max(cand - half, 1), min(cand + half + 1, n)
        t = lo + int(np.argmax(vel[lo:hi]))
        if t - last < refractory:
            continue
        a, b = t - half, t + half
        if a < 0 or b >= n or mask[a:b + 1].any():
            continue
        amp = float(abs(hs[b] - hs[a]))
        vw, hw = v[a:b + 1], h[a:b + 1]
        if np.std(vw) == 0 or np.std(hw) == 0:
            continue
        corr = float(np.corrcoef(vw, hw)[0, 1])
        if amp >= SACCADE_MIN_AMPLITUDE * sd and corr > SACCADE_MIN_CORR:
            out.append(SaccadeEvent(veog.start_time + t / rate, amp, corr))
            last = t
    return out


def blink_stream(blinks) -> FeatureStream:
    return FeatureStream("blink_duration", [b.peak_time for b in blinks], [b.duration_ms for b in blinks])


def saccade_stream(saccades) -> FeatureStream:
    return FeatureStream("saccade_amplitude", [s.onset_time for s in saccades], [s.amplitude for s in saccades])


def extract_eog_features(veog: SampledSignal, heog: SampledSignal | None = None):
    """Filter, mask and detect; returns ``(blink_stream, saccade_stream or None)``."""
    v10 = bandpass(veog, 0.1, 10.0)
    v25 = bandpass(veog, 0.1, 25.0)
    vmask = artifact_mask(v10)
    blinks = detect_blinks(v10, vmask, raw=v25)
    sacc = None
    if heog is not None:
        h10 = bandpass(align_to(veog, heog), 0.1, 10.0)
        sacc = saccade_stream(detect_saccades(v10, h10, [vmask, artifact_mask(h10)]))
    return blink_stream(blinks), sacc
