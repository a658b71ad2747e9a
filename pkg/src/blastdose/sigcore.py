"""Signal primitives shared by the dosimetry, EOG and accelerometry stages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from .errors import RejectedInput


@dataclass
class SampledSignal:
    """Uniformly sampled series; ``samples`` is (n,) or (n, channels)."""

    samples: np.ndarray
    sample_rate_hz: float
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not self.sample_rate_hz > 0:
            raise RejectedInput(f"sample rate must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.sample_rate_hz

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "SampledSignal":
        return SampledSignal(samples, self.sample_rate_hz, self.start_time)


@dataclass
class PeakList:
    indices: np.ndarray
    heights: np.ndarray
    prominences: np.ndarray
    widths_at_half_height: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass
class PcaProjector:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_fraction: float
    eigenvalues: np.ndarray | None = None

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_fraction": float(self.explained_variance_fraction),
            "eigenvalues": None if self.eigenvalues is None else np.asarray(self.eigenvalues).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        ev = d.get("eigenvalues")
        return cls(np.asarray(d["mean"]), np.asarray(d["components"]),
                   float(d["explained_variance_fraction"]), None if ev is None else np.asarray(ev))


def bandpass(sig: SampledSignal, lo_hz: float, hi_hz: float, order: int = 3) -> SampledSignal:
    """Zero-phase Butterworth bandpass (forward-backward, so the effective order doubles)."""
    nyq = sig.sample_rate_hz / 2
    if not 0 < lo_hz < hi_hz < nyq:
        raise RejectedInput(f"band edges must satisfy 0 < {lo_hz} < {hi_hz} < {nyq}")
    sos = sps.butter(order, [lo_hz, hi_hz], btype="band", fs=sig.sample_rate_hz, output="sos")
    return sig.with_samples(sps.sosfiltfilt(sos, sig.samples, axis=0))


def _window_samples(window_s, rate):
    return max(1, int(round(window_s * rate)))


def moving_median(sig: SampledSignal, window_s: float) -> SampledSignal:
    """Centered moving median; the window is truncated at both ends."""
    if window_s <= 0:
        raise RejectedInput("window_s must be positive")
    x = sig.samples
    if x.size == 0:
        raise RejectedInput("empty signal")
    w = min(_window_samples(window_s, sig.sample_rate_hz), 2 * len(x) + 1)
    half = w // 2
    padded = np.concatenate([np.full(half, np.nan), x, np.full(w - 1 - half, np.nan)])
    out = np.empty(len(x))
    # chunked to bound the (n, w) view's working memory
    step = max(1, 4_000_000 // w)
    for start in range(0, len(x), step):
        stop = min(len(x), start + step)
        view = sliding_window_view(padded[start:stop + w - 1], w)
        out[start:stop] = np.nanmedian(view, axis=1)
    return sig.with_samples(out)


def moving_mean(x: np.ndarray, w: int) -> np.ndarray:
    """Centered moving average with boundary truncation (mean of available samples)."""
    x = np.asarray(x, dtype=float)
    w = max(1, int(w))
    c = np.concatenate([[0.0], np.cumsum(x)])
    n = len(x)
    half = w // 2
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) - half + w, 0, n)
    return (c[hi] - c[lo]) / (hi - lo)


def cwt_haar(sig: SampledSignal | np.ndarray, scale: int) -> np.ndarray:
    """Haar wavelet coefficients at a single integer scale.

    The wavelet is -1 on the ``scale`` samples before index i and +1 on the
    ``scale`` samples from i onward, normalized by 1/sqrt(2*scale).
    Coefficients whose support leaves the signal are zero.
    """
    x = sig.samples if isinstance(sig, SampledSignal) else np.asarray(sig, dtype=float)
    n = len(x)
    if not (2 <= scale < n):
        raise RejectedInput(f"scale {scale} out of range for length {n}")
    x = x - x.mean()
    c = np.concatenate([[0.0], np.cumsum(x)])
    out = np.zeros(n)
    i = np.arange(scale, n - scale + 1)
    out[i] = (c[i + scale] - 2 * c[i] + c[i - scale]) / np.sqrt(2 * scale)
    return out


def find_peaks(x, min_width: int = 1, min_height: float | None = None,
               min_prominence: float | None = None) -> PeakList:
    """Local maxima passing width, height and prominence thresholds.

    Prominence is measured against the higher of the two bounding valleys and
    width at half prominence (scipy's definitions).
    """
    if min_width < 1:
        raise RejectedInput("min_width must be >= 1")
    x = np.asarray(x, dtype=float)
    idx, props = sps.find_peaks(x, height=min_height, prominence=min_prominence if min_prominence is not None else 0,
                                width=min_width)
    return PeakList(idx.astype(int), x[idx], props["prominences"], props["widths"])


def autocorr(x) -> np.ndarray:
    """Biased autocorrelation normalized so lag 0 equals 1 (zeros for constant input)."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom <= 1e-300:
        return np.zeros(len(x))
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    r = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return r / denom


def autocorr_peak(x, lag_lo: int, lag_hi: int):
    """Highest autocorrelation local maximum with lag in [lag_lo, lag_hi].

    Returns ``(lag, height, prominence)``; ``(0, 0.0, 0.0)`` when there is none.
    """
    x = np.asarray(x, dtype=float)
    if not 0 < lag_lo < lag_hi < len(x):
        raise RejectedInput(f"need 0 < {lag_lo} < {lag_hi} < {len(x)}")
    r = autocorr(x)
    if not r.any():
        return 0, 0.0, 0.0
    idx, props = sps.find_peaks(r, prominence=0)
    keep = (idx >= lag_lo) & (idx <= lag_hi)
    if not keep.any():
        return 0, 0.0, 0.0
    idx, prom = idx[keep], props["prominences"][keep]
    best = int(np.argmax(r[idx]))
    return int(idx[best]), float(r[idx[best]]), float(prom[best])


def pca_fit(vectors, n_components: int) -> PcaProjector:
    """PCA by eigendecomposition of the sample covariance.

    Components are sorted by descending eigenvalue and signed so that each
    row's largest-magnitude entry is positive.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2:
        raise RejectedInput("vectors must form a 2-d array")
    n, d = X.shape
    if n < n_components + 1:
        raise RejectedInput(f"need at least {n_components + 1} vectors, got {n}")
    if not 1 <= n_components <= d:
        raise RejectedInput(f"n_components must be in [1, {d}]")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, ddof=1).reshape(d, d)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T[:n_components].copy()
    lead = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(n_components), lead])[:, None]
    total = evals.sum()
    frac = 1.0 if total <= 0 else float(min(1.0, evals[:n_components].sum() / total))
    return PcaProjector(mean, comps, frac, evals)


def pca_project(proj: PcaProjector, v) -> np.ndarray:
    """Project one vector (or rows of a matrix) onto the fitted components."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != proj.mean.shape[0]:
        raise RejectedInput(f"dimension {v.shape[-1]} != projector dimension {proj.mean.shape[0]}")
    return (v - proj.mean) @ proj.components.T
