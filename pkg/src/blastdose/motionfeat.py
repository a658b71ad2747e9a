"""Gait and low-movement bout segmentation with TDE and path-length frame features."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .changescore import FeatureStream
from .errors import RejectedInput
from .sigcore import SampledSignal, autocorr_peak

ACCEL_RATE_HZ = 100.0
VAR_WINDOW_S = 10.0
VAR_HOP_S = 1.0
GAIT_VAR = 0.03
LM_VAR_RANGE = (0.001, 0.01)
GAIT_MERGE_GAP_S = 15.0
LM_MIN_S = 30.0
FRAME_S = 5.0
DELAYS_SAMPLES = (3, 7, 15, 31, 61)
N_DELAYS = 7
TDE_DIM = N_DELAYS * 3
PERIOD_LAGS_S = (0.35, 0.85)
PERIOD_MIN_HEIGHT = 0.2
PERIOD_MIN_PROMINENCE = 0.2
MIN_FRAMES = 25


class FrameKind(str, enum.Enum):
    GAIT = "Gait"
    LOW_MOVEMENT = "LowMovement"


@dataclass
class AccelFrame:
    samples: np.ndarray
    start_time: float
    kind: FrameKind
    rate_hz: float = ACCEL_RATE_HZ


@dataclass
class BoutSegmentation:
    gait_bouts: list
    lm_bouts: list
    variance_times: np.ndarray = field(repr=False)
    variance_series: np.ndarray = field(repr=False)


def _intervals(flags, centers, half, t0, t1):
    """Contiguous runs of flagged window centers as [start, stop] time intervals."""
    edges = np.diff(np.concatenate([[0], flags.astype(np.int8), [0]]))
    out = []
    for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        lo = t0 if a == 0 else centers[a] - half
        hi = t1 if b == len(flags) else centers[b - 1] + half
        out.append([float(lo), float(hi)])
    return out


def _subtract(intervals, cut):
    out = []
    for lo, hi in intervals:
        pieces = [[lo, hi]]
        for c0, c1 in cut:
            nxt = []
            for a, b in pieces:
                if c1 <= a or c0 >= b:
                    nxt.append([a, b])
                    continue
                if c0 > a:
                    nxt.append([a, c0])
                if c1 < b:
                    nxt.append([c1, b])
            pieces = nxt
        out.extend(pieces)
    return out


def segment_bouts(accel: SampledSignal, window_s: float = VAR_WINDOW_S, hop_s: float = VAR_HOP_S) -> BoutSegmentation:
    """Variance-of-magnitude bout segmentation.

    Each sliding-window variance is attributed to the window center and holds
    over +/- hop/2 around it; runs touching either end extend to the signal edge.
    """
    x = np.asarray(accel.samples, dtype=float)
    if x.ndim != 2 or x.shape[1] != 3:
        raise RejectedInput("accelerometry must be (n, 3)")
    rate = accel.sample_rate_hz
    w = int(round(window_s * rate))
    hop = max(1, int(round(hop_s * rate)))
    n = len(x)
    if n < w:
        raise RejectedInput(f"need at least {window_s} s of accelerometry")
    mag = np.sqrt((x * x).sum(axis=1))
    mag = mag - mag.mean()
    c1 = np.concatenate([[0.0], np.cumsum(mag)])
    c2 = np.concatenate([[0.0], np.cumsum(mag * mag)])
    starts = np.arange(0, n - w + 1, hop)
    s1 = c1[starts + w] - c1[starts]
    s2 = c2[starts + w] - c2[starts]
    var = np.maximum(s2 / w - (s1 / w) ** 2, 0.0)
    centers = accel.start_time + (starts + w / 2) / rate
    t0, t1 = accel.start_time, accel.start_time + n / rate
    half = hop / rate / 2
    gait = _intervals(var > GAIT_VAR, centers, half, t0, t1)
    merged = []
    for iv in gait:
        if merged and iv[0] - merged[-1][1] <= GAIT_MERGE_GAP_S:
            merged[-1][1] = iv[1]
        else:
            merged.append(iv)
    lo, hi = LM_VAR_RANGE
    lm = _intervals((var > lo) & (var < hi), centers, half, t0, t1)
    lm = [iv for iv in _subtract(lm, merged) if iv[1] - iv[0] >= LM_MIN_S]
    return BoutSegmentation([tuple(b) for b in merged], [tuple(b) for b in lm], centers - accel.start_time, var)


def frames_in(accel: SampledSignal, bouts, kind: FrameKind, frame_s: float = FRAME_S) -> list:
    """Contiguous whole frames from the start of each bout."""
    rate = accel.sample_rate_hz
    flen = int(round(frame_s * rate))
    out = []
    for lo, hi in bouts:
        a = int(np.ceil((lo - accel.start_time) * rate - 1e-9))
        b = int(np.floor((hi - accel.start_time) * rate + 1e-9))
        for s in range(max(a, 0), min(b, len(accel)) - flen + 1, flen):
            out.append(AccelFrame(accel.samples[s:s + flen], accel.start_time + s / rate, kind, rate))
    return out


def first_pc(samples: np.ndarray) -> np.ndarray:
    x = samples - samples.mean(axis=0)
    _, vecs = np.linalg.eigh(x.T @ x)
    return x @ vecs[:, -1]


def periodicity_gate(frame: AccelFrame) -> bool:
    """Autocorrelation of the first principal component peaks at a step-like lag."""
    pc = first_pc(np.asarray(frame.samples, dtype=float))
    lo = int(round(PERIOD_LAGS_S[0] * frame.rate_hz))
    hi = int(round(PERIOD_LAGS_S[1] * frame.rate_hz))
    _, height, prom = autocorr_peak(pc, lo, hi)
    return height >= PERIOD_MIN_HEIGHT and prom >= PERIOD_MIN_PROMINENCE


def _embed(frames: np.ndarray, d: int) -> np.ndarray:
    """(F, T, 21) delay vectors, axis-major, over time points where all delays fit."""
    n = frames.shape[1]
    m = n - (N_DELAYS - 1) * d
    if m < 2:
        raise RejectedInput(f"frame of {n} samples too short for delay {d}")
    cols = [frames[:, k * d:k * d + m, a] for a in range(3) for k in range(N_DELAYS)]
    return np.stack(cols, axis=2)


def _correlation(E: np.ndarray) -> np.ndarray:
    E = E - E.mean(axis=1, keepdims=True)
    cov = np.matmul(E.transpose(0, 2, 1), E)
    sd = np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    scale = np.where(sd > 1e-12 * max(1.0, float(sd.max(initial=0.0))), sd, np.inf)
    corr = cov / scale[:, :, None] / scale[:, None, :]
    idx = np.arange(E.shape[2])
    corr[:, idx, idx] = 1.0
    return corr


def tde_features_batch(frames: np.ndarray, delays=DELAYS_SAMPLES) -> np.ndarray:
    """(F, 500, 3) frames -> (F, 105) eigenvalues, descending within each 21-block.

    Zero-variance channels get unit diagonal and zero off-diagonal correlation.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    if len(frames) == 0:
        return np.zeros((0, TDE_DIM * len(delays)))
    blocks = []
    for d in delays:
        ev = np.linalg.eigvalsh(_correlation(_embed(frames, d)))
        blocks.append(np.clip(ev[:, ::-1], 0.0, None))
    return np.concatenate(blocks, axis=1)


def tde_features(frame: AccelFrame) -> np.ndarray:
    return tde_features_batch(np.asarray(frame.samples)[None])[0]


def path_length(frame) -> float:
    """Summed Euclidean step length of the 3-axis trajectory."""
    x = np.asarray(frame.samples if isinstance(frame, AccelFrame) else frame, dtype=float)
    if len(x) < 2:
        return 0.0
    return float(np.sqrt((np.diff(x, axis=0) ** 2).sum(axis=1)).sum())


@dataclass
class MotionFeatures:
    gait: FeatureStream
    balance: FeatureStream
    segmentation: BoutSegmentation
    gait_frames_total: int
    gait_frames_passed: int

    @property
    def gait_included(self) -> bool:
        return len(self.gait) >= MIN_FRAMES

    @property
    def balance_included(self) -> bool:
        return len(self.balance) >= MIN_FRAMES


def extract_session_features(accel: SampledSignal) -> MotionFeatures:
    seg = segment_bouts(accel)
    gf = frames_in(accel, seg.gait_bouts, FrameKind.GAIT)
    passed = [f for f in gf if periodicity_gate(f)]
    lf = frames_in(accel, seg.lm_bouts, FrameKind.LOW_MOVEMENT)
    raw = tde_features_batch(np.stack([f.samples for f in passed])) if passed else np.zeros((0, TDE_DIM * 5))
    gait = FeatureStream("gait_tde", [f.start_time for f in passed], raw)
    lm_sorted = sorted(lf, key=lambda f: f.start_time)
    balance = FeatureStream("path_length", [f.start_time for f in lm_sorted],
                            [path_length(f) for f in lm_sorted])
    return MotionFeatures(gait, balance, seg, len(gf), len(passed))
